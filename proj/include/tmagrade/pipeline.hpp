#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tmagrade/config.hpp"
#include "tmagrade/metrics.hpp"

namespace tma {

/// Run directory layout: <root>/<name>/{config,weights,stats,predictions,reports,cache}.
struct RunPaths {
    std::filesystem::path dir;

    std::filesystem::path config() const { return dir / "config" / "config.yaml"; }
    std::filesystem::path stats() const { return dir / "stats" / "cohort_stats.txt"; }
    std::filesystem::path weights(const std::string& tag) const { return dir / "weights" / (tag + ".tmaw"); }
    std::filesystem::path cache(const std::string& id, const std::string& kind) const;
    std::filesystem::path probability(const std::string& id) const { return dir / "predictions" / (id + ".slm"); }
    std::filesystem::path grade_map(const std::string& id) const { return dir / "predictions" / (id + "_grade.png"); }
    std::filesystem::path report(const std::string& file) const { return dir / "reports" / file; }
};

/// Creates the run directory tree and writes the resolved config snapshot.
RunPaths open_run(const RunConfig& config);

/// Runs fn(i) for i in [0, n) on `jobs` threads; the first exception is rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

void write_geometry(const std::filesystem::path& path, const GeometryRecord& g);
GeometryRecord read_geometry(const std::filesystem::path& path);

/// Generates the synthetic dataset and returns its manifest path.
std::filesystem::path run_synth(const RunConfig& config);

/// Canvases, fused targets, full-resolution references and geometry into
/// cache/; training-cohort statistics into stats/.
void run_preprocess(const RunConfig& config);

struct TrainOptions {
    std::optional<int> epochs;
    std::optional<std::string> init;  // "random" or a weights path
    bool resume = false;               // continue from weights/checkpoint.tmaw
};

/// Writes weights/{init,last,best,checkpoint}.tmaw and reports/train_log.csv.
TrainResult run_train(const RunConfig& config, const TrainOptions& options = {});

/// Probability maps of the evaluated cohort into predictions/.
void run_predict(const RunConfig& config);

/// Grade maps (raw values through the inverse mapping) and reports/gleason.csv.
void run_postprocess(const RunConfig& config);

/// reports/{metrics,confusion,dice_per_case}.csv.
EvalReport run_evaluate(const RunConfig& config);

/// synth (if enabled) → preprocess → train (network mode) → predict → postprocess → evaluate.
EvalReport run_pipeline(RunConfig config);

}  // namespace tma
