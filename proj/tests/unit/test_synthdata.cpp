#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "tmagrade/fusion.hpp"
#include "tmagrade/image_io.hpp"
#include "tmagrade/synthdata.hpp"

using namespace tma;
using tma::testing::TempDir;

namespace {

SynthShape ellipse(double cy, double cx, double ry, double rx, std::uint8_t grade) {
    return {SynthShape::Kind::Ellipse, cy, cx, ry, rx, grade};
}

SynthShape rect(double cy, double cx, double ry, double rx, std::uint8_t grade) {
    return {SynthShape::Kind::Rectangle, cy, cx, ry, rx, grade};
}

double disagreement(const SynthCase& c) {
    std::int64_t diff = 0;
    for (const auto& a : c.annotations)
        for (std::size_t i = 0; i < a.size(); ++i) diff += a.data[i] != c.truth.data[i];
    return static_cast<double>(diff) / (c.annotations.size() * c.truth.size());
}

}  // namespace

TEST_CASE("without jitter every annotator reproduces the truth") {
    SynthSpec spec;
    spec.height = spec.width = 96;
    spec.seed = 3;
    const auto c = generate_case(spec);
    REQUIRE(c.annotations.size() == 6);
    for (const auto& a : c.annotations) CHECK(a == c.truth);
    const auto fused = fuse_annotations(c.annotations);
    CHECK(fused == encode_one_hot(c.truth));
    CHECK(c.image.channels == 3);
    for (float v : c.image.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 255.0f);
        REQUIRE(v == std::round(v));
    }
}

TEST_CASE("planted areas give the expected Gleason score") {
    // Tissue disc radius 0.49·400 = 196 ≈ 120 700 px. A g3 ellipse of ~30% of
    // it and a g4 square of ~10%.
    SynthSpec spec;
    spec.height = spec.width = 400;
    spec.tissue_radius = 0.49;
    const double disc = M_PI * 196.0 * 196.0;
    const double re = std::sqrt(0.30 * disc / M_PI);
    const double half = std::sqrt(0.10 * disc) / 2.0;
    spec.shapes = {ellipse(199.5, 140.0, re, re, 2), rect(199.5, 310.0, half, half, 3)};
    const auto c = generate_case(spec);
    const auto& a = c.report.areas;
    CHECK(a.counts[2] == doctest::Approx(0.30 * disc).epsilon(0.01));
    CHECK(a.counts[3] == doctest::Approx(0.10 * disc).epsilon(0.02));
    CHECK(c.report.label() == "3+4=7");
    CHECK(rasterize_truth(spec, spec.shapes) == c.truth);
}

TEST_CASE("block rasterization is constant on blocks") {
    SynthSpec spec;
    spec.height = spec.width = 120;
    spec.block = 4;
    spec.seed = 8;
    const auto c = generate_case(spec);
    for (int y = 0; y < 120; ++y)
        for (int x = 0; x < 120; ++x) REQUIRE(c.truth.at(y, x) == c.truth.at(y / 4 * 4, x / 4 * 4));
}

TEST_CASE("same seed, same case") {
    SynthSpec spec;
    spec.height = spec.width = 64;
    spec.jitter = 2;
    spec.seed = 77;
    const auto a = generate_case(spec);
    const auto b = generate_case(spec);
    CHECK(a.image == b.image);
    CHECK(a.annotations == b.annotations);
    spec.seed = 78;
    CHECK_FALSE(generate_case(spec).image == a.image);
}

TEST_CASE("annotator disagreement grows with jitter") {
    SynthSpec spec;
    spec.height = spec.width = 128;
    spec.shapes = {ellipse(50, 50, 20, 25, 2), rect(85, 80, 15, 18, 3)};
    double prev = -1.0;
    for (int j : {0, 1, 3, 6}) {
        spec.jitter = j;
        double mean = 0.0;
        for (std::uint64_t s = 0; s < 8; ++s) {
            spec.seed = s;
            mean += disagreement(generate_case(spec));
        }
        CHECK(mean > prev);
        prev = mean;
    }
}

TEST_CASE("random shapes stay inside the tissue and do not overlap") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        SynthSpec spec;
        spec.seed = seed;
        spec.shape_count = 4;
        const auto shapes = draw_shapes(spec);
        CHECK(shapes.size() >= 1);
        spec.shapes = shapes;
        CHECK_NOTHROW(spec.validate());
    }
}

TEST_CASE("invalid specs") {
    SynthSpec spec;
    spec.shapes = {ellipse(100, 100, 30, 30, 2), ellipse(120, 120, 30, 30, 3)};
    CHECK_THROWS_WITH(spec.validate(), doctest::Contains("overlaps"));
    spec.shapes = {ellipse(100, 100, 30, 30, 2), ellipse(120, 120, 30, 30, 2)};
    CHECK_NOTHROW(spec.validate());
    spec.shapes = {ellipse(10, 10, 30, 30, 2)};
    CHECK_THROWS_WITH(spec.validate(), doctest::Contains("leaves the image"));
    spec.shapes = {ellipse(100, 100, 10, 10, 5)};
    CHECK_THROWS_AS(spec.validate(), Error);
    spec.shapes.clear();
    spec.block = 3;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec.block = 1;
    spec.annotators = 7;
    CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("dataset writer round trips through the loader") {
    TempDir dir("synth");
    SynthDatasetSpec ds;
    ds.base.height = ds.base.width = 64;
    ds.base.annotators = 3;
    ds.base.jitter = 1;
    ds.base.seed = 4;
    ds.train = 2;
    ds.validation = 1;
    ds.test = 1;
    const auto written = write_synth_dataset(dir.path(), ds);
    const auto manifest = parse_manifest(dir / "manifest.csv");
    REQUIRE(manifest.records.size() == 4);
    CHECK(manifest.records == written.records);
    CHECK(manifest.cohort_counts().at(Cohort::Train) == 2);
    CHECK(manifest.records[3].cohort == Cohort::Test);

    SynthSpec cs = ds.base;
    cs.seed = derive_seed(ds.base.seed, 2);
    const auto expected = generate_case(cs);
    const auto loaded = load_case(manifest.records[2], manifest.base_dir);
    CHECK(loaded.image == expected.image);
    REQUIRE(loaded.masks.size() == 3);
    const auto mapping = ClassMapping::default_mapping();
    for (int a = 0; a < 3; ++a) CHECK(apply_class_mapping(loaded.masks[a], mapping) == expected.annotations[a]);
    CHECK(apply_class_mapping(read_png_gray(dir / "truth" / "case002.png"), mapping) == expected.truth);
    CHECK(std::filesystem::exists(dir / "truth_reports.csv"));
}
