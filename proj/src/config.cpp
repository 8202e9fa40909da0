#include "tmagrade/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

extern char** environ;

namespace tma {
namespace {

const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s = {
        {"run", {"name", "root", "seed", "jobs"}},
        {"data", {"manifest", "class_mapping"}},
        {"synth",
         {"enabled", "output", "height", "width", "block", "annotators", "jitter", "noise_sigma", "tissue_radius",
          "shape_count", "train", "validation", "test"}},
        {"preprocess", {"downsample_factor", "canvas_height", "canvas_width", "spline_order"}},
        {"network", {"encoder_filters", "decoder_filters", "elu_alpha", "bn_epsilon", "bn_momentum"}},
        {"train",
         {"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "epochs", "max_steps", "augment", "init"}},
        {"predict", {"mode", "weights"}},
        {"postprocess", {"median_window", "filter", "min_secondary_fraction"}},
        {"evaluate", {"cohort", "quadratic_kappa"}},
    };
    return s;
}

template <class V>
void read(const YAML::Node& section, const char* key, V& out, const std::string& where) {
    const auto n = section[key];
    if (!n) return;
    try {
        out = n.as<V>();
    } catch (const YAML::Exception&) {
        throw Error("config: bad value for " + where + "." + key);
    }
}

void read_path(const YAML::Node& section, const char* key, std::filesystem::path& out, const std::string& where) {
    std::string s = out.string();
    read(section, key, s, where);
    out = s;
}

std::string cohort_name(EvalCohort c) {
    switch (c) {
        case EvalCohort::Train: return "train";
        case EvalCohort::Validation: return "validation";
        case EvalCohort::Test: return "test";
        case EvalCohort::All: return "all";
    }
    return "test";
}

std::string lower(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

}  // namespace

std::string to_string(EvalCohort c) { return cohort_name(c); }
std::string to_string(PredictorMode m) { return m == PredictorMode::Perfect ? "perfect" : "network"; }

void RunConfig::validate() const {
    if (name.empty() || name.find('/') != std::string::npos) throw Error("config: run.name must be a plain name");
    if (jobs < 1) throw Error("config: run.jobs must be >= 1");
    preprocess.validate();
    network.validate();
    train.validate();
    if (synth_enabled) synth.base.validate();
    if (median_window < 1 || median_window % 2 == 0) throw Error("config: postprocess.median_window must be odd");
    if (!(min_secondary_fraction >= 0.0 && min_secondary_fraction <= 1.0))
        throw Error("config: postprocess.min_secondary_fraction must be in [0, 1]");
    if (predict_weights != "best" && predict_weights != "last")
        throw Error("config: predict.weights must be 'best' or 'last'");
}

RunConfig parse_run_config(const std::string& yaml_text, const std::map<std::string, std::string>& overrides) {
    YAML::Node root;
    try {
        root = yaml_text.empty() ? YAML::Node(YAML::NodeType::Map) : YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw Error(std::string("config: ") + e.what());
    }
    if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    if (!root.IsMap()) throw Error("config: top level must be a mapping");

    const auto& sch = schema();
    for (const auto& kv : root) {
        const auto sec = kv.first.as<std::string>();
        const auto it = sch.find(sec);
        if (it == sch.end()) throw Error("config: unknown section '" + sec + "'");
        if (!kv.second.IsMap()) throw Error("config: section '" + sec + "' must be a mapping");
        for (const auto& entry : kv.second) {
            const auto key = entry.first.as<std::string>();
            if (!it->second.count(key)) throw Error("config: unknown key '" + sec + "." + key + "'");
        }
    }
    for (const auto& [flat, value] : overrides) {
        bool applied = false;
        for (const auto& [sec, keys] : sch) {
            if (flat.rfind(sec + "_", 0) != 0) continue;
            const auto key = flat.substr(sec.size() + 1);
            if (!keys.count(key)) continue;
            YAML::Node parsed;
            try {
                parsed = YAML::Load(value);
            } catch (const YAML::Exception&) {
                parsed = YAML::Node(value);
            }
            root[sec][key] = parsed;
            applied = true;
        }
        if (!applied) throw Error("config: override '" + flat + "' does not name a known key");
    }

    RunConfig c;
    const auto run = root["run"], data = root["data"], synth = root["synth"], pre = root["preprocess"],
               net = root["network"], tr = root["train"], pred = root["predict"], post = root["postprocess"],
               ev = root["evaluate"];
    if (run) {
        read(run, "name", c.name, "run");
        read_path(run, "root", c.root, "run");
        read(run, "seed", c.seed, "run");
        read(run, "jobs", c.jobs, "run");
    }
    if (data) {
        read_path(data, "manifest", c.manifest, "data");
        if (data["class_mapping"]) c.mapping = ClassMapping::parse(data["class_mapping"].as<std::string>());
    }
    c.synth.base.seed = c.seed;
    if (synth) {
        read(synth, "enabled", c.synth_enabled, "synth");
        read_path(synth, "output", c.synth_output, "synth");
        auto& b = c.synth.base;
        read(synth, "height", b.height, "synth");
        read(synth, "width", b.width, "synth");
        read(synth, "block", b.block, "synth");
        read(synth, "annotators", b.annotators, "synth");
        read(synth, "jitter", b.jitter, "synth");
        read(synth, "noise_sigma", b.noise_sigma, "synth");
        read(synth, "tissue_radius", b.tissue_radius, "synth");
        read(synth, "shape_count", b.shape_count, "synth");
        read(synth, "train", c.synth.train, "synth");
        read(synth, "validation", c.synth.validation, "synth");
        read(synth, "test", c.synth.test, "synth");
    }
    if (pre) {
        read(pre, "downsample_factor", c.preprocess.downsample_factor, "preprocess");
        read(pre, "canvas_height", c.preprocess.canvas_height, "preprocess");
        read(pre, "canvas_width", c.preprocess.canvas_width, "preprocess");
        read(pre, "spline_order", c.preprocess.spline_order, "preprocess");
    }
    if (net) {
        read(net, "encoder_filters", c.network.encoder_filters, "network");
        read(net, "decoder_filters", c.network.decoder_filters, "network");
        read(net, "elu_alpha", c.network.elu_alpha, "network");
        read(net, "bn_epsilon", c.network.bn_epsilon, "network");
        read(net, "bn_momentum", c.network.bn_momentum, "network");
    }
    c.train.seed = c.seed;
    if (tr) {
        read(tr, "learning_rate", c.train.learning_rate, "train");
        read(tr, "beta1", c.train.beta1, "train");
        read(tr, "beta2", c.train.beta2, "train");
        read(tr, "epsilon", c.train.epsilon, "train");
        read(tr, "batch_size", c.train.batch_size, "train");
        read(tr, "epochs", c.train.epochs, "train");
        read(tr, "max_steps", c.train.max_steps, "train");
        read(tr, "augment", c.train.augment, "train");
        read(tr, "init", c.init, "train");
    }
    if (pred) {
        std::string mode = to_string(c.predictor);
        read(pred, "mode", mode, "predict");
        if (mode == "network")
            c.predictor = PredictorMode::Network;
        else if (mode == "perfect")
            c.predictor = PredictorMode::Perfect;
        else
            throw Error("config: predict.mode must be 'network' or 'perfect'");
        read(pred, "weights", c.predict_weights, "predict");
    }
    if (post) {
        read(post, "median_window", c.median_window, "postprocess");
        std::string f = c.filter == FilterMode::Median ? "median" : "mode";
        read(post, "filter", f, "postprocess");
        if (f == "median")
            c.filter = FilterMode::Median;
        else if (f == "mode")
            c.filter = FilterMode::Mode;
        else
            throw Error("config: postprocess.filter must be 'median' or 'mode'");
        read(post, "min_secondary_fraction", c.min_secondary_fraction, "postprocess");
    }
    if (ev) {
        std::string co = cohort_name(c.eval_cohort);
        read(ev, "cohort", co, "evaluate");
        if (co == "all")
            c.eval_cohort = EvalCohort::All;
        else
            switch (parse_cohort(co)) {
                case Cohort::Train: c.eval_cohort = EvalCohort::Train; break;
                case Cohort::Validation: c.eval_cohort = EvalCohort::Validation; break;
                case Cohort::Test: c.eval_cohort = EvalCohort::Test; break;
            }
        read(ev, "quadratic_kappa", c.quadratic_kappa, "evaluate");
    }
    c.validate();
    return c;
}

std::map<std::string, std::string> environment_overrides() {
    std::map<std::string, std::string> out;
    const std::string prefix = "TMAGRADE_";
    for (char** e = environ; e && *e; ++e) {
        const std::string kv = *e;
        if (kv.rfind(prefix, 0) != 0) continue;
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        out[lower(kv.substr(prefix.size(), eq - prefix.size()))] = kv.substr(eq + 1);
    }
    return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), environment_overrides());
}

std::string to_yaml(const RunConfig& c) {
    YAML::Emitter e;
    e.SetDoublePrecision(17);
    e << YAML::BeginMap;
    e << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "name" << YAML::Value << c.name;
    e << YAML::Key << "root" << YAML::Value << c.root.string();
    e << YAML::Key << "seed" << YAML::Value << c.seed;
    e << YAML::Key << "jobs" << YAML::Value << c.jobs;
    e << YAML::EndMap;
    e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "manifest" << YAML::Value << c.manifest.string();
    e << YAML::Key << "class_mapping" << YAML::Value << c.mapping.to_string();
    e << YAML::EndMap;
    const auto& b = c.synth.base;
    e << YAML::Key << "synth" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "enabled" << YAML::Value << c.synth_enabled;
    e << YAML::Key << "output" << YAML::Value << c.synth_output.string();
    e << YAML::Key << "height" << YAML::Value << b.height;
    e << YAML::Key << "width" << YAML::Value << b.width;
    e << YAML::Key << "block" << YAML::Value << b.block;
    e << YAML::Key << "annotators" << YAML::Value << b.annotators;
    e << YAML::Key << "jitter" << YAML::Value << b.jitter;
    e << YAML::Key << "noise_sigma" << YAML::Value << b.noise_sigma;
    e << YAML::Key << "tissue_radius" << YAML::Value << b.tissue_radius;
    e << YAML::Key << "shape_count" << YAML::Value << b.shape_count;
    e << YAML::Key << "train" << YAML::Value << c.synth.train;
    e << YAML::Key << "validation" << YAML::Value << c.synth.validation;
    e << YAML::Key << "test" << YAML::Value << c.synth.test;
    e << YAML::EndMap;
    e << YAML::Key << "preprocess" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "downsample_factor" << YAML::Value << c.preprocess.downsample_factor;
    e << YAML::Key << "canvas_height" << YAML::Value << c.preprocess.canvas_height;
    e << YAML::Key << "canvas_width" << YAML::Value << c.preprocess.canvas_width;
    e << YAML::Key << "spline_order" << YAML::Value << c.preprocess.spline_order;
    e << YAML::EndMap;
    e << YAML::Key << "network" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "encoder_filters" << YAML::Value << YAML::Flow << c.network.encoder_filters;
    e << YAML::Key << "decoder_filters" << YAML::Value << YAML::Flow << c.network.decoder_filters;
    e << YAML::Key << "elu_alpha" << YAML::Value << c.network.elu_alpha;
    e << YAML::Key << "bn_epsilon" << YAML::Value << c.network.bn_epsilon;
    e << YAML::Key << "bn_momentum" << YAML::Value << c.network.bn_momentum;
    e << YAML::EndMap;
    e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "learning_rate" << YAML::Value << c.train.learning_rate;
    e << YAML::Key << "beta1" << YAML::Value << c.train.beta1;
    e << YAML::Key << "beta2" << YAML::Value << c.train.beta2;
    e << YAML::Key << "epsilon" << YAML::Value << c.train.epsilon;
    e << YAML::Key << "batch_size" << YAML::Value << c.train.batch_size;
    e << YAML::Key << "epochs" << YAML::Value << c.train.epochs;
    e << YAML::Key << "max_steps" << YAML::Value << c.train.max_steps;
    e << YAML::Key << "augment" << YAML::Value << c.train.augment;
    e << YAML::Key << "init" << YAML::Value << c.init;
    e << YAML::EndMap;
    e << YAML::Key << "predict" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "mode" << YAML::Value << to_string(c.predictor);
    e << YAML::Key << "weights" << YAML::Value << c.predict_weights;
    e << YAML::EndMap;
    e << YAML::Key << "postprocess" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "median_window" << YAML::Value << c.median_window;
    e << YAML::Key << "filter" << YAML::Value << (c.filter == FilterMode::Median ? "median" : "mode");
    e << YAML::Key << "min_secondary_fraction" << YAML::Value << c.min_secondary_fraction;
    e << YAML::EndMap;
    e << YAML::Key << "evaluate" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "cohort" << YAML::Value << cohort_name(c.eval_cohort);
    e << YAML::Key << "quadratic_kappa" << YAML::Value << c.quadratic_kappa;
    e << YAML::EndMap;
    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

}  // namespace tma
