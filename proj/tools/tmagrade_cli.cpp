// tmagrade command line: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tmagrade/pipeline.hpp"

namespace {

struct Globals {
    std::string config_path;
    int jobs = 0;
    std::vector<std::string> sets;
};

tma::RunConfig resolve_config(const Globals& g) {
    std::string text;
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path, std::ios::binary);
        if (!in) throw tma::Error("cannot open config '" + g.config_path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    auto overrides = tma::environment_overrides();
    for (const auto& s : g.sets) {
        const auto eq = s.find('=');
        const auto dot = s.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw CLI::ValidationError("--set", "expected section.key=value, got '" + s + "'");
        overrides[s.substr(0, dot) + "_" + s.substr(dot + 1, eq - dot - 1)] = s.substr(eq + 1);
    }
    auto config = tma::parse_run_config(text, overrides);
    if (g.jobs > 0) config.jobs = g.jobs;
    return config;
}

void print_report(const tma::EvalReport& r) {
    std::printf("score           %.6f\n", r.score);
    std::printf("kappa           %.6f\n", r.kappa);
    std::printf("f1_macro        %.6f\n", r.f1_macro);
    std::printf("f1_micro        %.6f\n", r.f1_micro);
    std::printf("mean_dice       %.6f\n", r.cohort_mean_dice);
    std::printf("dice_above_0.6  %.6f\n", r.fraction_above_0_6);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gleason grading of prostate tissue microarray cores"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("-c,--config", g.config_path, "YAML run configuration")->check(CLI::ExistingFile);
    app.add_option("-j,--jobs", g.jobs, "worker threads (overrides run.jobs)")->check(CLI::PositiveNumber);
    app.add_option("--set", g.sets, "override a config value, e.g. --set train.epochs=5");

    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
    auto* pre = app.add_subcommand("preprocess", "resample, fuse annotations and compute cohort statistics");
    auto* train = app.add_subcommand("train", "train the segmentation network");
    tma::TrainOptions topt;
    int epochs = -1;
    std::string init;
    train->add_option("--epochs", epochs, "total epochs (overrides train.epochs)")->check(CLI::NonNegativeNumber);
    train->add_option("--init", init, "'random' or a weights file");
    train->add_flag("--resume", topt.resume, "continue from weights/checkpoint.tmaw");
    auto* predict = app.add_subcommand("predict", "write probability maps for the evaluated cohort");
    std::string weights;
    predict->add_option("--weights", weights, "weights to use")->check(CLI::IsMember({"best", "last"}));
    auto* post = app.add_subcommand("postprocess", "filter, restore resolution and grade each case");
    auto* eval = app.add_subcommand("evaluate", "score predictions against the fused references");
    auto* pipe = app.add_subcommand("pipeline", "run every stage in order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        auto config = resolve_config(g);
        if (!weights.empty()) config.predict_weights = weights;
        if (*synth) {
            std::cout << tma::run_synth(config).string() << "\n";
        } else if (*pre) {
            tma::run_preprocess(config);
        } else if (*train) {
            if (epochs >= 0) topt.epochs = epochs;
            if (!init.empty()) topt.init = init;
            const auto r = tma::run_train(config, topt);
            for (const auto& e : r.log)
                std::printf("epoch %d  steps %lld  loss %.6f  val_dice %.6f\n", e.epoch,
                            static_cast<long long>(e.steps), e.train_loss, e.validation_dice);
        } else if (*predict) {
            tma::run_predict(config);
        } else if (*post) {
            tma::run_postprocess(config);
        } else if (*eval) {
            print_report(tma::run_evaluate(config));
        } else if (*pipe) {
            print_report(tma::run_pipeline(config));
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "tmagrade: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "tmagrade: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
