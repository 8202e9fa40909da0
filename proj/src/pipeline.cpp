#include "tmagrade/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "tmagrade/fusion.hpp"
#include "tmagrade/image_io.hpp"
#include "tmagrade/tensor_io.hpp"

namespace tma {
namespace fs = std::filesystem;

namespace {

std::filesystem::path manifest_path(const RunConfig& c) {
    if (c.synth_enabled) return c.synth_output / "manifest.csv";
    if (c.manifest.empty()) throw Error("config: data.manifest is not set");
    return c.manifest;
}

bool in_cohort(const CaseRecord& r, EvalCohort c) {
    switch (c) {
        case EvalCohort::All: return true;
        case EvalCohort::Train: return r.cohort == Cohort::Train;
        case EvalCohort::Validation: return r.cohort == Cohort::Validation;
        case EvalCohort::Test: return r.cohort == Cohort::Test;
    }
    return false;
}

std::vector<CaseRecord> eval_records(const RunConfig& c) {
    const auto m = parse_manifest(manifest_path(c), false);
    std::vector<CaseRecord> out;
    for (const auto& r : m.records)
        if (in_cohort(r, c.eval_cohort)) out.push_back(r);
    if (out.empty()) throw Error("cohort '" + to_string(c.eval_cohort) + "' has no cases");
    return out;
}

// Argmax of the fused votes without materializing six float channels at raw size.
GradeLabelMap fused_reference(std::span<const GradeLabelMap> maps) {
    GradeLabelMap out(maps[0].height, maps[0].width);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::array<int, kNumClasses> votes{};
        for (const auto& m : maps) {
            if (m.data[i] >= kNumClasses) throw Error("label code outside 0..5");
            ++votes[m.data[i]];
        }
        int best = 0;
        for (int c = 1; c < kNumClasses; ++c)
            if (votes[c] > votes[best]) best = c;
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

std::ofstream open_text(const fs::path& p, std::ios::openmode mode = std::ios::trunc) {
    std::ofstream out(p, std::ios::binary | mode);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    return out;
}

TrainingCase load_training_case(const RunPaths& paths, const std::string& id, const CohortStats& stats) {
    TrainingCase tc;
    tc.case_id = id;
    const auto geom = read_geometry(paths.cache(id, "geom"));
    tc.image = normalize_zscore(read_tensor(paths.cache(id, "canvas")), stats, geom);
    tc.target = read_tensor(paths.cache(id, "target"));
    tc.reference = argmax_labels(tc.target);
    return tc;
}

}  // namespace

std::filesystem::path RunPaths::cache(const std::string& id, const std::string& kind) const {
    if (kind == "geom") return dir / "cache" / (id + ".geom");
    if (kind == "reference") return dir / "cache" / (id + ".reference.png");
    return dir / "cache" / (id + "." + kind + ".slm");
}

RunPaths open_run(const RunConfig& config) {
    RunPaths p{config.run_dir()};
    for (const char* sub : {"config", "weights", "stats", "predictions", "reports", "cache"})
        fs::create_directories(p.dir / sub);
    auto out = open_text(p.config());
    out << to_yaml(config);
    return p;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        });
    pool.clear();
    if (error) std::rethrow_exception(error);
}

void write_geometry(const fs::path& path, const GeometryRecord& g) {
    auto out = open_text(path);
    for (const auto& [name, a] : {std::pair{"rows", g.rows}, std::pair{"cols", g.cols}})
        out << name << ' ' << a.raw << ' ' << a.resampled << ' ' << a.canvas << ' ' << a.shift << '\n';
}

GeometryRecord read_geometry(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("missing geometry record '" + path.string() + "'");
    GeometryRecord g;
    std::string name;
    for (auto* a : {&g.rows, &g.cols}) {
        if (!(in >> name >> a->raw >> a->resampled >> a->canvas >> a->shift))
            throw Error("malformed geometry record '" + path.string() + "'");
    }
    return g;
}

std::filesystem::path run_synth(const RunConfig& config) {
    auto spec = config.synth;
    spec.base.seed = config.seed;
    write_synth_dataset(config.synth_output, spec, config.mapping, config.min_secondary_fraction);
    return config.synth_output / "manifest.csv";
}

void run_preprocess(const RunConfig& config) {
    const auto paths = open_run(config);
    const auto manifest = parse_manifest(manifest_path(config));
    const auto& recs = manifest.records;
    std::vector<MomentAccumulator> moments(recs.size());
    parallel_for(recs.size(), config.jobs, [&](std::size_t i) {
        const auto& rec = recs[i];
        const auto loaded = load_case(rec, manifest.base_dir);
        std::vector<GradeLabelMap> raw;
        for (const auto& m : loaded.masks) raw.push_back(apply_class_mapping(m, config.mapping));
        const auto prepared = prepare_image(loaded.image, config.preprocess);
        std::vector<GradeLabelMap> canvas_labels;
        for (const auto& m : raw) canvas_labels.push_back(prepare_labels(m, prepared.geometry));
        write_tensor(paths.cache(rec.case_id, "canvas"), prepared.canvas);
        write_tensor(paths.cache(rec.case_id, "target"), fuse_annotations(canvas_labels));
        write_geometry(paths.cache(rec.case_id, "geom"), prepared.geometry);
        write_png_gray(paths.cache(rec.case_id, "reference"), fused_reference(raw));
        if (rec.cohort == Cohort::Train) moments[i].add(prepared.canvas, prepared.geometry);
    });
    MomentAccumulator total;
    for (const auto& m : moments) total.merge(m);
    if (total.count() == 0) throw Error("training cohort is empty; cannot compute normalization statistics");
    total.finish().save(paths.stats());
}

TrainResult run_train(const RunConfig& config, const TrainOptions& options) {
    RunConfig cfg = config;
    if (options.epochs) cfg.train.epochs = *options.epochs;
    if (options.init) cfg.init = *options.init;
    cfg.validate();
    const auto paths = open_run(cfg);
    const auto stats = CohortStats::load(paths.stats());
    const auto manifest = parse_manifest(manifest_path(cfg), false);

    std::vector<TrainingCase> train, val;
    for (const auto& r : manifest.records) {
        if (r.cohort == Cohort::Train) train.push_back(load_training_case(paths, r.case_id, stats));
        if (r.cohort == Cohort::Validation) val.push_back(load_training_case(paths, r.case_id, stats));
    }
    if (train.empty()) throw Error("training cohort is empty");

    UNetParams<float> init;
    std::optional<AdamState<float>> resume_state;
    int start_epoch = 0;
    if (options.resume) {
        auto wf = load_weights<float>(paths.weights("checkpoint"), cfg.network);
        if (!wf.adam) throw Error("checkpoint has no optimizer state");
        init = std::move(wf.params);
        resume_state = std::move(wf.adam);
        start_epoch = wf.epoch;
    } else if (cfg.init == "random") {
        init = init_params<float>(cfg.network, cfg.seed);
    } else {
        init = load_weights<float>(cfg.init, cfg.network).params;
    }
    if (!options.resume) save_weights(paths.weights("init"), init);

    const auto log_path = paths.report("train_log.csv");
    if (!options.resume || !fs::exists(log_path)) {
        auto out = open_text(log_path);
        out << "epoch,steps,train_loss,validation_dice\r\n";
    }
    const auto on_epoch = [&](const EpochLog& log, const TrainResult& r) {
        save_weights(paths.weights("checkpoint"), r.params, &r.adam, log.epoch);
        auto out = open_text(log_path, std::ios::app);
        out << log.epoch << ',' << log.steps << ',' << format_fixed6(log.train_loss) << ','
            << format_fixed6(log.validation_dice) << "\r\n";
    };
    auto result = train_network(std::move(init), train, val, cfg.train, resume_state ? &*resume_state : nullptr,
                                start_epoch, on_epoch);
    // No step taken means no optimizer moments to store.
    const AdamState<float>* adam = result.adam.m.empty() ? nullptr : &result.adam;
    save_weights(paths.weights("last"), result.params, adam, result.epochs_completed);
    save_weights(paths.weights("best"), result.best_params);
    return result;
}

void run_predict(const RunConfig& config) {
    const auto paths = open_run(config);
    const auto recs = eval_records(config);
    if (config.predictor == PredictorMode::Perfect) {
        parallel_for(recs.size(), config.jobs, [&](std::size_t i) {
            const auto& id = recs[i].case_id;
            write_tensor(paths.probability(id), read_tensor(paths.cache(id, "target")));
        });
        return;
    }
    const auto stats = CohortStats::load(paths.stats());
    const auto params = load_weights<float>(paths.weights(config.predict_weights), config.network).params;
    // One network per worker; each worker takes every jobs-th case.
    const auto jobs = static_cast<std::size_t>(std::min<std::size_t>(recs.size(), config.jobs));
    parallel_for(jobs, config.jobs, [&](std::size_t w) {
        UNet<float> net(params);
        for (std::size_t i = w; i < recs.size(); i += jobs) {
            const auto& id = recs[i].case_id;
            const auto geom = read_geometry(paths.cache(id, "geom"));
            write_tensor(paths.probability(id), predict(net, read_tensor(paths.cache(id, "canvas")), stats, geom));
        }
    });
}

void run_postprocess(const RunConfig& config) {
    const auto paths = open_run(config);
    const auto recs = eval_records(config);
    const auto inverse = config.mapping.inverse();
    std::vector<std::string> rows(recs.size());
    parallel_for(recs.size(), config.jobs, [&](std::size_t i) {
        const auto& id = recs[i].case_id;
        const auto geom = read_geometry(paths.cache(id, "geom"));
        auto labels = argmax_labels(read_tensor(paths.probability(id)));
        labels = median_filter_labels(labels, config.median_window, config.filter);
        const auto full = restore_full_resolution(labels, geom);
        RawMask raw(full.height, full.width);
        for (std::size_t p = 0; p < full.size(); ++p) raw.data[p] = inverse[full.data[p]];
        write_png_gray(paths.grade_map(id), raw);
        rows[i] = gleason_csv_row(id, derive_gleason_score(compute_grade_areas(full), config.min_secondary_fraction));
    });
    auto out = open_text(paths.report("gleason.csv"));
    out << gleason_csv_header() << "\r\n";
    for (const auto& r : rows) out << r << "\r\n";
}

EvalReport run_evaluate(const RunConfig& config) {
    const auto paths = open_run(config);
    const auto recs = eval_records(config);
    std::vector<ConfusionMatrix> cms(recs.size());
    std::vector<double> dice(recs.size());
    parallel_for(recs.size(), config.jobs, [&](std::size_t i) {
        const auto& id = recs[i].case_id;
        const auto pred = apply_class_mapping(read_png_gray(paths.grade_map(id)), config.mapping);
        const auto ref = read_png_gray(paths.cache(id, "reference"));
        try {
            cms[i] = build_confusion(pred, ref);
            dice[i] = mean_dice(pred, ref);
        } catch (const Error& e) {
            throw Error("case '" + id + "': " + e.what());
        }
    });
    Evaluator ev;
    for (std::size_t i = 0; i < recs.size(); ++i) ev.add_result(recs[i].case_id, cms[i], dice[i]);
    const auto report = ev.report();
    write_metrics_csv(paths.report("metrics.csv"), report, config.quadratic_kappa);
    write_confusion_csv(paths.report("confusion.csv"), report.confusion);
    write_dice_csv(paths.report("dice_per_case.csv"),
                   dice_distribution_report(std::span<const std::pair<std::string, double>>(report.case_dice)));
    return report;
}

EvalReport run_pipeline(RunConfig config) {
    if (config.synth_enabled) run_synth(config);
    run_preprocess(config);
    if (config.predictor == PredictorMode::Network) run_train(config);
    run_predict(config);
    run_postprocess(config);
    return run_evaluate(config);
}

}  // namespace tma
