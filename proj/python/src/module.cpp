#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "tmagrade/fusion.hpp"
#include "tmagrade/metrics.hpp"
#include "tmagrade/pipeline.hpp"
#include "tmagrade/postprocess.hpp"
#include "tmagrade/preprocess.hpp"
#include "tmagrade/segnet.hpp"
#include "tmagrade/synthdata.hpp"

namespace py = pybind11;
using namespace tma;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

GradeLabelMap to_labels(const U8Array& a) {
    if (a.ndim() != 2) throw py::value_error("label map must be 2-D");
    GradeLabelMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(m.data.data(), a.data(), m.size());
    return m;
}

U8Array from_labels(const GradeLabelMap& m) {
    U8Array out({m.height, m.width});
    std::memcpy(out.mutable_data(), m.data.data(), m.size());
    return out;
}

ImageF to_image(const F32Array& a) {
    if (a.ndim() != 3) throw py::value_error("image must be H x W x C");
    ImageF im(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
    std::memcpy(im.data.data(), a.data(), im.data.size() * sizeof(float));
    return im;
}

F32Array from_image(const ImageF& im) {
    F32Array out({im.height, im.width, im.channels});
    std::memcpy(out.mutable_data(), im.data.data(), im.data.size() * sizeof(float));
    return out;
}

py::dict axis_dict(const AxisGeometry& a) {
    py::dict d;
    d["raw"] = a.raw;
    d["resampled"] = a.resampled;
    d["canvas"] = a.canvas;
    d["shift"] = a.shift;
    return d;
}

AxisGeometry axis_from(const py::dict& d) {
    return {d["raw"].cast<int>(), d["resampled"].cast<int>(), d["canvas"].cast<int>(), d["shift"].cast<int>()};
}

py::dict geometry_dict(const GeometryRecord& g) {
    py::dict d;
    d["rows"] = axis_dict(g.rows);
    d["cols"] = axis_dict(g.cols);
    return d;
}

GeometryRecord geometry_from(const py::dict& d) {
    return {axis_from(d["rows"].cast<py::dict>()), axis_from(d["cols"].cast<py::dict>())};
}

py::dict gleason_dict(const GleasonReport& r) {
    py::dict d;
    d["primary"] = r.primary ? py::cast(*r.primary) : py::none();
    d["secondary"] = r.secondary ? py::cast(*r.secondary) : py::none();
    d["score"] = r.score();
    d["label"] = r.label();
    d["areas"] = r.areas.counts;
    d["ignored"] = r.areas.ignored;
    return d;
}

py::dict report_dict(const EvalReport& r) {
    py::dict d;
    d["score"] = r.score;
    d["kappa"] = r.kappa;
    d["kappa_quadratic"] = r.kappa_quadratic;
    d["f1_macro"] = r.f1_macro;
    d["f1_micro"] = r.f1_micro;
    d["cohort_mean_dice"] = r.cohort_mean_dice;
    d["fraction_above_0_6"] = r.fraction_above_0_6;
    d["class_dice"] = r.class_dice;
    d["class_accuracy"] = r.class_accuracy;
    d["case_dice"] = r.case_dice;
    py::array_t<std::int64_t> cm({kNumScoredClasses, kNumScoredClasses + 1});
    auto v = cm.mutable_unchecked<2>();
    for (int i = 0; i < kNumScoredClasses; ++i) {
        for (int j = 0; j < kNumScoredClasses; ++j) v(i, j) = r.confusion.counts[i][j];
        v(i, kNumScoredClasses) = r.confusion.unassigned[i];
    }
    d["confusion"] = cm;
    return d;
}

FilterMode filter_mode(const std::string& s) {
    if (s == "median") return FilterMode::Median;
    if (s == "mode") return FilterMode::Mode;
    throw py::value_error("mode must be 'median' or 'mode'");
}

UNetConfig net_config(const std::vector<int>& enc, const std::vector<int>& dec) {
    UNetConfig c;
    c.encoder_filters = enc;
    c.decoder_filters = dec;
    c.validate();
    return c;
}

}  // namespace

PYBIND11_MODULE(_tmagrade, m) {
    m.doc() = "Gleason grading of prostate tissue microarray cores";

    py::register_exception<Error>(m, "TmaError", PyExc_ValueError);

    m.attr("NUM_CLASSES") = kNumClasses;
    m.attr("IGNORED") = static_cast<int>(kIgnoredCode);

    // ---- fusion and postprocessing
    m.def(
        "fuse_annotations",
        [](const std::vector<U8Array>& maps) {
            std::vector<GradeLabelMap> ms;
            for (const auto& a : maps) ms.push_back(to_labels(a));
            return from_image(fuse_annotations(ms));
        },
        py::arg("maps"), "Per-pixel vote fractions, H x W x 6 float32.");
    m.def("one_hot", [](const U8Array& labels) { return from_image(encode_one_hot(to_labels(labels))); });
    m.def("argmax_labels", [](const F32Array& prob) { return from_labels(argmax_labels(to_image(prob))); });
    m.def(
        "median_filter",
        [](const U8Array& labels, int window, const std::string& mode) {
            const auto l = to_labels(labels);
            const auto f = filter_mode(mode);
            py::gil_scoped_release nogil;
            auto out = median_filter_labels(l, window, f);
            py::gil_scoped_acquire gil;
            return from_labels(out);
        },
        py::arg("labels"), py::arg("window") = 55, py::arg("mode") = "median");
    m.def(
        "gleason_score",
        [](const U8Array& labels, double min_secondary_fraction) {
            return gleason_dict(derive_gleason_score(compute_grade_areas(to_labels(labels)), min_secondary_fraction));
        },
        py::arg("labels"), py::arg("min_secondary_fraction") = 0.05);

    // ---- metrics
    m.def("dice", [](const U8Array& p, const U8Array& r, int cls) { return dice_coefficient(to_labels(p), to_labels(r), cls); },
          py::arg("pred"), py::arg("ref"), py::arg("cls"));
    m.def("mean_dice", [](const U8Array& p, const U8Array& r) { return mean_dice(to_labels(p), to_labels(r)); },
          py::arg("pred"), py::arg("ref"));
    m.def("challenge_score", &challenge_score, py::arg("kappa"), py::arg("f1_macro"), py::arg("f1_micro"));
    m.def(
        "evaluate",
        [](const std::vector<std::pair<U8Array, U8Array>>& pairs) {
            Evaluator ev;
            for (std::size_t i = 0; i < pairs.size(); ++i)
                ev.add("case" + std::to_string(i), to_labels(pairs[i].first), to_labels(pairs[i].second));
            return report_dict(ev.report());
        },
        py::arg("pairs"), "Cohort report over (prediction, reference) label map pairs.");

    // ---- preprocessing geometry
    m.def(
        "resample",
        [](const F32Array& image, double factor, int order) {
            auto r = resample_bspline(to_image(image), factor, order);
            return py::make_tuple(from_image(r.image), geometry_dict(r.geometry));
        },
        py::arg("image"), py::arg("factor") = 10.0, py::arg("order") = 3);
    m.def(
        "prepare_image",
        [](const F32Array& image, double factor, int canvas, int order) {
            PreprocessConfig cfg;
            cfg.downsample_factor = factor;
            cfg.canvas_height = cfg.canvas_width = canvas;
            cfg.spline_order = order;
            const auto im = to_image(image);
            PreparedImage p;
            {
                py::gil_scoped_release nogil;
                p = prepare_image(im, cfg);
            }
            return py::make_tuple(from_image(p.canvas), geometry_dict(p.geometry));
        },
        py::arg("image"), py::arg("factor") = 10.0, py::arg("canvas") = 448, py::arg("order") = 3);
    m.def(
        "plan_geometry",
        [](int h, int w, double factor, int canvas) {
            PreprocessConfig cfg;
            cfg.downsample_factor = factor;
            cfg.canvas_height = cfg.canvas_width = canvas;
            return geometry_dict(plan_geometry(h, w, cfg));
        },
        py::arg("height"), py::arg("width"), py::arg("factor") = 10.0, py::arg("canvas") = 448);
    m.def("prepare_labels",
          [](const U8Array& raw, const py::dict& g) { return from_labels(prepare_labels(to_labels(raw), geometry_from(g))); });
    m.def("restore_full_resolution", [](const U8Array& labels, const py::dict& g) {
        return from_labels(restore_full_resolution(to_labels(labels), geometry_from(g)));
    });

    // ---- synthetic data
    m.def(
        "synth_case",
        [](int height, int width, std::uint64_t seed, int jitter, int annotators, int block, int shape_count) {
            SynthSpec s;
            s.height = height;
            s.width = width;
            s.seed = seed;
            s.jitter = jitter;
            s.annotators = annotators;
            s.block = block;
            s.shape_count = shape_count;
            const auto c = generate_case(s);
            py::dict d;
            d["image"] = from_image(c.image);
            py::list ann;
            for (const auto& a : c.annotations) ann.append(from_labels(a));
            d["annotations"] = ann;
            d["truth"] = from_labels(c.truth);
            d["report"] = gleason_dict(c.report);
            return d;
        },
        py::arg("height") = 256, py::arg("width") = 256, py::arg("seed") = 0, py::arg("jitter") = 0,
        py::arg("annotators") = 6, py::arg("block") = 1, py::arg("shape_count") = 3);

    // ---- network
    py::class_<UNet<float>>(m, "UNet")
        .def(py::init([](const std::vector<int>& enc, const std::vector<int>& dec, std::uint64_t seed) {
                 return UNet<float>(init_params<float>(net_config(enc, dec), seed));
             }),
             py::arg("encoder_filters") = std::vector<int>{64, 128, 256, 512},
             py::arg("decoder_filters") = std::vector<int>{256, 128, 64}, py::arg("seed") = 0)
        .def_static(
            "load",
            [](const std::filesystem::path& path, const std::vector<int>& enc, const std::vector<int>& dec) {
                return UNet<float>(load_weights<float>(path, net_config(enc, dec)).params);
            },
            py::arg("path"), py::arg("encoder_filters") = std::vector<int>{64, 128, 256, 512},
            py::arg("decoder_filters") = std::vector<int>{256, 128, 64})
        .def("save", [](const UNet<float>& n, const std::filesystem::path& path) { save_weights(path, n.params()); })
        .def(
            "predict",
            [](UNet<float>& n, const F32Array& image) {
                const auto im = to_image(image);
                SoftLabelMap p;
                {
                    py::gil_scoped_release nogil;
                    p = predict_normalized(n, im);
                }
                return from_image(p);
            },
            py::arg("normalized_image"), "Softmax probabilities of a normalized H x W x 3 image.")
        .def_property_readonly("parameter_count", [](const UNet<float>& n) { return n.params().trainable_count(); })
        .def_property_readonly("trace", [](const UNet<float>& n) {
            py::list out;
            for (const auto& s : n.trace()) out.append(py::make_tuple(s.stage, s.height, s.width, s.channels));
            return out;
        });

    // ---- pipeline
    m.def(
        "run_pipeline",
        [](const std::filesystem::path& config_path) {
            const auto cfg = load_run_config(config_path);
            EvalReport r;
            {
                py::gil_scoped_release nogil;
                r = run_pipeline(cfg);
            }
            return report_dict(r);
        },
        py::arg("config_path"), "Runs every stage for a YAML run configuration and returns the metrics.");
}
