#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "tmagrade/ingestion.hpp"
#include "tmagrade/postprocess.hpp"
#include "tmagrade/preprocess.hpp"
#include "tmagrade/segnet.hpp"
#include "tmagrade/synthdata.hpp"

namespace tma {

enum class PredictorMode { Network, Perfect };
enum class EvalCohort { Train, Validation, Test, All };

/// Every knob of a run. Serialized as YAML with one mapping per section:
///
///   run:         name, root, seed, jobs
///   data:        manifest, class_mapping ("raw:code,...")
///   synth:       enabled, output, height, width, block, annotators, jitter,
///                noise_sigma, tissue_radius, shape_count, train, validation, test
///   preprocess:  downsample_factor, canvas_height, canvas_width, spline_order
///   network:     encoder_filters, decoder_filters, elu_alpha, bn_epsilon, bn_momentum
///   train:       learning_rate, beta1, beta2, epsilon, batch_size, epochs,
///                max_steps, augment, init ("random" or a weights path)
///   predict:     mode (network | perfect), weights (best | last)
///   postprocess: median_window, filter (median | mode), min_secondary_fraction
///   evaluate:    cohort (train | validation | test | all), quadratic_kappa
///
/// Unknown sections or keys are errors. Environment variables named
/// TMAGRADE_<SECTION>_<KEY> (upper case) override file values.
struct RunConfig {
    std::string name = "default";
    std::filesystem::path root = "runs";
    std::uint64_t seed = 0;
    int jobs = 1;

    std::filesystem::path manifest;
    ClassMapping mapping = ClassMapping::default_mapping();

    bool synth_enabled = false;
    std::filesystem::path synth_output = "data/synth";
    SynthDatasetSpec synth;

    PreprocessConfig preprocess;
    UNetConfig network;
    TrainConfig train;
    std::string init = "random";

    PredictorMode predictor = PredictorMode::Network;
    std::string predict_weights = "best";

    int median_window = 55;
    FilterMode filter = FilterMode::Median;
    double min_secondary_fraction = 0.05;

    EvalCohort eval_cohort = EvalCohort::Test;
    bool quadratic_kappa = false;

    std::filesystem::path run_dir() const { return root / name; }
    void validate() const;
};

/// Parses YAML text, then applies overrides (section_key in lower case → scalar text).
RunConfig parse_run_config(const std::string& yaml_text, const std::map<std::string, std::string>& overrides = {});
/// Reads the file and applies TMAGRADE_* environment overrides.
RunConfig load_run_config(const std::filesystem::path& path);
/// Collects TMAGRADE_<SECTION>_<KEY> variables from the environment.
std::map<std::string, std::string> environment_overrides();
/// Fully resolved YAML; parse_run_config(to_yaml(c)) reproduces c.
std::string to_yaml(const RunConfig& config);

std::string to_string(EvalCohort c);
std::string to_string(PredictorMode m);

}  // namespace tma
