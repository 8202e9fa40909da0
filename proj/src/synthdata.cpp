#include "tmagrade/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "tmagrade/image_io.hpp"

namespace tma {
namespace {

constexpr std::array<std::array<double, 3>, kNumClasses> kPalette = {{
    {232, 176, 204},  // benign
    {206, 130, 190},  // lower than 3
    {160, 88, 176},   // grade 3
    {112, 56, 150},   // grade 4
    {70, 30, 118},    // grade 5
    {244, 242, 240},  // background
}};

bool inside(const SynthShape& s, double y, double x) {
    const double dy = (y - s.center_y) / s.radius_y;
    const double dx = (x - s.center_x) / s.radius_x;
    if (s.kind == SynthShape::Kind::Ellipse) return dy * dy + dx * dx <= 1.0;
    return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
}

bool boxes_overlap(const SynthShape& a, const SynthShape& b) {
    return std::abs(a.center_y - b.center_y) < a.radius_y + b.radius_y &&
           std::abs(a.center_x - b.center_x) < a.radius_x + b.radius_x;
}

// Shape membership sampled at the centre of each block, replicated over the block.
Grid<std::uint8_t> shape_mask(const SynthSpec& spec, const SynthShape& s) {
    Grid<std::uint8_t> m(spec.height, spec.width, 0);
    const int b = spec.block;
    for (int cy = 0; cy < spec.height / b; ++cy)
        for (int cx = 0; cx < spec.width / b; ++cx) {
            const double y = (cy + 0.5) * b - 0.5;
            const double x = (cx + 0.5) * b - 0.5;
            if (!inside(s, y, x)) continue;
            for (int yy = cy * b; yy < (cy + 1) * b; ++yy)
                for (int xx = cx * b; xx < (cx + 1) * b; ++xx) m.at(yy, xx) = 1;
        }
    return m;
}

Grid<std::uint8_t> tissue_mask(const SynthSpec& spec) {
    SynthShape disc;
    disc.center_y = (spec.height - 1) / 2.0;
    disc.center_x = (spec.width - 1) / 2.0;
    disc.radius_y = disc.radius_x = spec.tissue_radius * std::min(spec.height, spec.width);
    return shape_mask(spec, disc);
}

// Square structuring element of half-size r; dilation when grow, erosion otherwise.
Grid<std::uint8_t> morph(const Grid<std::uint8_t>& m, int r, bool grow) {
    if (r == 0) return m;
    auto pass = [&](const Grid<std::uint8_t>& in, bool vertical) {
        Grid<std::uint8_t> out(in.height, in.width);
        for (int y = 0; y < in.height; ++y)
            for (int x = 0; x < in.width; ++x) {
                std::uint8_t acc = grow ? 0 : 1;
                for (int d = -r; d <= r; ++d) {
                    const int yy = vertical ? std::clamp(y + d, 0, in.height - 1) : y;
                    const int xx = vertical ? x : std::clamp(x + d, 0, in.width - 1);
                    acc = grow ? std::max(acc, in.at(yy, xx)) : std::min(acc, in.at(yy, xx));
                }
                out.at(y, x) = acc;
            }
        return out;
    };
    return pass(pass(m, false), true);
}

GradeLabelMap paint(const SynthSpec& spec, const Grid<std::uint8_t>& tissue,
                    const std::vector<SynthShape>& shapes, const std::vector<Grid<std::uint8_t>>& masks) {
    GradeLabelMap out(spec.height, spec.width);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = tissue.data[i] ? 0 : kIgnoredCode;
    for (std::size_t s = 0; s < shapes.size(); ++s)
        for (std::size_t i = 0; i < out.size(); ++i)
            if (masks[s].data[i]) out.data[i] = shapes[s].grade;
    return out;
}

ImageF render(const GradeLabelMap& truth, double sigma, std::uint64_t seed) {
    ImageF img(truth.height, truth.width, 3);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int y = 0; y < truth.height; ++y)
        for (int x = 0; x < truth.width; ++x) {
            const int g = truth.at(y, x);
            // Grade-specific stripe texture: period shrinks with grade.
            const double period = 4.0 + 2.0 * (kNumClasses - g);
            const double tex = g == kIgnoredCode ? 0.0 : 10.0 * std::sin(2.0 * M_PI * (x + 0.5 * y) / period);
            for (int c = 0; c < 3; ++c) {
                const double v = kPalette[g][c] + tex + sigma * noise(rng);
                img.at(y, x, c) = static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
            }
        }
    return img;
}

}  // namespace

void SynthSpec::validate() const {
    if (height < 8 || width < 8) throw Error("synth: image must be at least 8x8");
    if (block < 1 || height % block || width % block) throw Error("synth: block must divide the image size");
    if (annotators < 1 || annotators > 6) throw Error("synth: annotator count must be in 1..6");
    if (jitter < 0) throw Error("synth: jitter must be non-negative");
    if (noise_sigma < 0.0) throw Error("synth: noise_sigma must be non-negative");
    if (!(tissue_radius > 0.0 && tissue_radius <= 0.5)) throw Error("synth: tissue_radius must be in (0, 0.5]");
    if (shape_count < 0) throw Error("synth: shape_count must be non-negative");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& s = shapes[i];
        if (s.grade > 4) throw Error("synth: shape " + std::to_string(i) + " has grade code outside 0..4");
        if (!(s.radius_y > 0.0 && s.radius_x > 0.0)) throw Error("synth: shape " + std::to_string(i) + " has no extent");
        if (s.center_y - s.radius_y < 0.0 || s.center_y + s.radius_y > height - 1 || s.center_x - s.radius_x < 0.0 ||
            s.center_x + s.radius_x > width - 1)
            throw Error("synth: shape " + std::to_string(i) + " leaves the image");
    }
    // Conflicts are checked on the raster the labels come from.
    SynthSpec bare = *this;
    bare.shapes.clear();
    GradeLabelMap owner(height, width, 255);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto m = shape_mask(bare, shapes[i]);
        for (std::size_t p = 0; p < m.size(); ++p) {
            if (!m.data[p]) continue;
            if (owner.data[p] != 255 && owner.data[p] != shapes[i].grade)
                throw Error("synth: shape " + std::to_string(i) + " overlaps a shape of a different grade");
            owner.data[p] = shapes[i].grade;
        }
    }
}

std::vector<SynthShape> draw_shapes(const SynthSpec& spec) {
    std::mt19937_64 rng(derive_seed(spec.seed, 0x5ea9e5));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // Cancer grades dominate so most cases carry a Gleason score.
    std::discrete_distribution<int> grade({1, 1, 3, 3, 2});
    const double side = std::min(spec.height, spec.width);
    const double cy0 = (spec.height - 1) / 2.0, cx0 = (spec.width - 1) / 2.0;
    const double tissue = spec.tissue_radius * side;
    std::vector<SynthShape> out;
    for (int n = 0; n < spec.shape_count; ++n) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            SynthShape s;
            s.kind = unit(rng) < 0.5 ? SynthShape::Kind::Ellipse : SynthShape::Kind::Rectangle;
            s.radius_y = side * (0.07 + 0.13 * unit(rng));
            s.radius_x = side * (0.07 + 0.13 * unit(rng));
            const double a = 2.0 * M_PI * unit(rng);
            const double r = (tissue - std::max(s.radius_y, s.radius_x)) * std::sqrt(unit(rng));
            if (r < 0.0) continue;
            s.center_y = cy0 + r * std::sin(a);
            s.center_x = cx0 + r * std::cos(a);
            s.grade = static_cast<std::uint8_t>(grade(rng));
            const bool clash = std::any_of(out.begin(), out.end(), [&](const auto& o) { return boxes_overlap(o, s); });
            if (clash) continue;
            out.push_back(s);
            break;
        }
    }
    return out;
}

GradeLabelMap rasterize_truth(const SynthSpec& spec, const std::vector<SynthShape>& shapes) {
    std::vector<Grid<std::uint8_t>> masks;
    for (const auto& s : shapes) masks.push_back(shape_mask(spec, s));
    return paint(spec, tissue_mask(spec), shapes, masks);
}

SynthCase generate_case(const SynthSpec& spec, double min_secondary_fraction) {
    SynthCase out;
    out.shapes = spec.shapes.empty() ? draw_shapes(spec) : spec.shapes;
    {
        SynthSpec checked = spec;
        checked.shapes = out.shapes;
        checked.validate();
    }
    const auto tissue = tissue_mask(spec);
    std::vector<Grid<std::uint8_t>> masks;
    for (const auto& s : out.shapes) masks.push_back(shape_mask(spec, s));
    out.truth = paint(spec, tissue, out.shapes, masks);
    out.report = derive_gleason_score(compute_grade_areas(out.truth), min_secondary_fraction);
    out.image = render(out.truth, spec.noise_sigma, derive_seed(spec.seed, 1));

    std::mt19937_64 rng(derive_seed(spec.seed, 2));
    std::uniform_int_distribution<int> radius(-spec.jitter, spec.jitter);
    for (int a = 0; a < spec.annotators; ++a) {
        if (spec.jitter == 0) {
            out.annotations.push_back(out.truth);
            continue;
        }
        std::vector<Grid<std::uint8_t>> jittered;
        for (const auto& m : masks) {
            const int r = radius(rng);
            jittered.push_back(morph(m, std::abs(r), r > 0));
        }
        out.annotations.push_back(paint(spec, tissue, out.shapes, jittered));
    }
    return out;
}

DatasetManifest write_synth_dataset(const std::filesystem::path& dir, const SynthDatasetSpec& spec,
                                    const ClassMapping& mapping, double min_secondary_fraction) {
    spec.base.validate();
    if (spec.train < 0 || spec.validation < 0 || spec.test < 0 || spec.train + spec.validation + spec.test == 0)
        throw Error("synth: cohort sizes must be non-negative with at least one case");
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    fs::create_directories(dir / "truth");

    DatasetManifest manifest;
    manifest.base_dir = dir;
    std::ofstream reports(dir / "truth_reports.csv", std::ios::binary);
    if (!reports) throw Error("cannot write '" + (dir / "truth_reports.csv").string() + "'");
    reports << gleason_csv_header() << "\r\n";

    const int total = spec.train + spec.validation + spec.test;
    for (int i = 0; i < total; ++i) {
        SynthSpec cs = spec.base;
        cs.seed = derive_seed(spec.base.seed, static_cast<std::uint64_t>(i));
        const auto c = generate_case(cs, min_secondary_fraction);
        char id[32];
        std::snprintf(id, sizeof id, "case%03d", i);

        CaseRecord rec;
        rec.case_id = id;
        rec.cohort = i < spec.train ? Cohort::Train : i < spec.train + spec.validation ? Cohort::Validation : Cohort::Test;
        rec.image_path = fs::path("images") / (rec.case_id + ".png");
        ImageU8 rgb(c.image.height, c.image.width, 3);
        for (std::size_t p = 0; p < rgb.data.size(); ++p) rgb.data[p] = static_cast<std::uint8_t>(c.image.data[p]);
        write_png_rgb(dir / rec.image_path, rgb);
        for (std::size_t a = 0; a < c.annotations.size(); ++a) {
            auto p = fs::path("masks") / (rec.case_id + "_a" + std::to_string(a + 1) + ".png");
            write_png_gray(dir / p, invert_class_mapping(c.annotations[a], mapping));
            rec.annotation_paths.push_back(p);
        }
        write_png_gray(dir / "truth" / (rec.case_id + ".png"), invert_class_mapping(c.truth, mapping));
        reports << gleason_csv_row(rec.case_id, c.report) << "\r\n";
        manifest.records.push_back(std::move(rec));
    }
    write_manifest(manifest, dir / "manifest.csv");
    return manifest;
}

}  // namespace tma
