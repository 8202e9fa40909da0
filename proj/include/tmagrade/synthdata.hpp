#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tmagrade/ingestion.hpp"
#include "tmagrade/postprocess.hpp"
#include "tmagrade/types.hpp"

namespace tma {

struct SynthShape {
    enum class Kind : std::uint8_t { Ellipse, Rectangle };
    Kind kind = Kind::Ellipse;
    double center_y = 0.0;
    double center_x = 0.0;
    double radius_y = 0.0;  // semi-axis, or half side for rectangles
    double radius_x = 0.0;
    std::uint8_t grade = 0;  // 0..4
};

struct SynthSpec {
    int height = 256;
    int width = 256;
    /// Labels are rasterized on a grid of block×block cells. Matching the
    /// downsample factor makes nearest-neighbour down/up sampling exact.
    int block = 1;
    int annotators = 6;
    int jitter = 0;  // maximum dilate/erode radius per annotator and shape
    double noise_sigma = 6.0;
    double tissue_radius = 0.46;  // fraction of min(height, width); outside is "ignored"
    int shape_count = 3;          // used when `shapes` is empty
    std::vector<SynthShape> shapes;
    std::uint64_t seed = 0;

    /// Throws on bad sizes, shapes outside the image, grades outside 0..4 or
    /// overlapping shapes of different grades.
    void validate() const;
};

struct SynthCase {
    ImageF image;  // integer intensities in [0, 255]
    std::vector<GradeLabelMap> annotations;
    GradeLabelMap truth;
    GleasonReport report;
    std::vector<SynthShape> shapes;
};

/// Random non-overlapping shapes inside the tissue disc, deterministic given the seed.
std::vector<SynthShape> draw_shapes(const SynthSpec& spec);

/// Uses spec.shapes, or draw_shapes(spec) when empty.
SynthCase generate_case(const SynthSpec& spec, double min_secondary_fraction = 0.05);

/// Truth label map for the given shapes (tissue disc benign, background ignored).
GradeLabelMap rasterize_truth(const SynthSpec& spec, const std::vector<SynthShape>& shapes);

struct SynthDatasetSpec {
    SynthSpec base;  // per-case seed derived from base.seed and the case index
    int train = 12;
    int validation = 4;
    int test = 4;
};

/// Writes images/, masks/ (raw values through the inverse mapping), truth/,
/// truth_reports.csv and manifest.csv under `dir`. Returns the manifest.
DatasetManifest write_synth_dataset(const std::filesystem::path& dir, const SynthDatasetSpec& spec,
                                    const ClassMapping& mapping = ClassMapping::default_mapping(),
                                    double min_secondary_fraction = 0.05);

}  // namespace tma
