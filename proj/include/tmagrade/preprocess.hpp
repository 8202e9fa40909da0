#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>

#include "tmagrade/types.hpp"

namespace tma {

struct PreprocessConfig {
    double downsample_factor = 10.0;
    int canvas_height = 448;
    int canvas_width = 448;
    int spline_order = 3;

    /// Throws if factor <= 1, canvas not divisible by 8 or order outside 0..5.
    void validate() const;
};

/// Bookkeeping for one axis of the raw → resampled → canvas chain.
///
/// Canvas index i corresponds to resampled index i + shift. A positive shift
/// is a leading crop, a negative shift a leading pad.
struct AxisGeometry {
    int raw = 0;
    int resampled = 0;
    int canvas = 0;
    int shift = 0;

    int valid_begin() const;  // first canvas index backed by resampled data
    int valid_end() const;

    bool operator==(const AxisGeometry&) const = default;
};

struct GeometryRecord {
    AxisGeometry rows;
    AxisGeometry cols;

    bool operator==(const GeometryRecord&) const = default;
};

/// round(extent / factor); throws when the result is below 8.
int resampled_extent(int raw_extent, double factor);

/// Centre crop / symmetric pad plan for one axis (extra pad pixel goes trailing).
AxisGeometry plan_axis(int raw, int resampled, int canvas);
GeometryRecord plan_geometry(int raw_height, int raw_width, const PreprocessConfig& config);

template <class T>
struct Resampled {
    Image<T> image;
    GeometryRecord geometry;  // raw and resampled sizes filled; canvas fields unset
};

/// Separable interpolating B-spline resampling onto an explicit output grid.
///
/// Output pixel j samples input coordinate (j + 0.5)·n/m − 0.5. The signal is
/// extended past each border by point reflection, which keeps polynomials of
/// degree ≤ 1 exact up to the border.
template <class T>
Image<T> resample_bspline_to(const Image<T>& image, int out_height, int out_width, int order);

template <class T>
Resampled<T> resample_bspline(const Image<T>& image, double factor, int order);

/// Nearest-neighbour resampling under the same pixel-centre convention.
template <class T>
Grid<T> resample_nearest(const Grid<T>& grid, int out_height, int out_width);

/// Source index of output index j when resampling n → m by nearest neighbour.
inline int nearest_source(int j, int out_extent, int in_extent) {
    return static_cast<int>((static_cast<std::int64_t>(2 * j + 1) * in_extent) / (2 * static_cast<std::int64_t>(out_extent)));
}

template <class T>
struct Fitted {
    Image<T> image;
    AxisGeometry rows;
    AxisGeometry cols;
};

template <class T>
Fitted<T> fit_canvas(const Image<T>& image, int canvas_height, int canvas_width, T fill = T{});

/// Grid version of fit_canvas driven by an existing geometry record.
template <class T>
Grid<T> fit_canvas_grid(const Grid<T>& grid, const GeometryRecord& geometry, T fill);

/// Inverse of fit_canvas: canvas-sized grid back to the resampled size, uncovered pixels get `fill`.
template <class T>
Grid<T> unfit_canvas_grid(const Grid<T>& canvas, const GeometryRecord& geometry, T fill);

/// Full image preprocessing: resample, then fit into the canvas.
struct PreparedImage {
    ImageF canvas;
    GeometryRecord geometry;
};
PreparedImage prepare_image(const ImageF& raw, const PreprocessConfig& config);

/// Raw-resolution label map onto the canvas (nearest neighbour, pad with "ignored").
GradeLabelMap prepare_labels(const GradeLabelMap& raw, const GeometryRecord& geometry);

struct CohortStats {
    std::array<double, 3> mean{};
    std::array<double, 3> std{};

    void save(const std::filesystem::path& path) const;
    static CohortStats load(const std::filesystem::path& path);
    static CohortStats parse(const std::string& text);
    std::string to_string() const;
};

/// Streaming per-channel population moments; partial accumulators merge associatively.
class MomentAccumulator {
public:
    void add(const ImageF& image);
    void add(const ImageF& image, const GeometryRecord& geometry);  // valid canvas region only
    void merge(const MomentAccumulator& other);
    std::int64_t count() const { return count_; }
    /// Throws on an empty accumulator or a zero-variance channel.
    CohortStats finish() const;

private:
    void add_region(const ImageF& image, int y0, int y1, int x0, int x1);

    std::int64_t count_ = 0;
    std::array<double, 3> mean_{};
    std::array<double, 3> m2_{};
};

CohortStats compute_cohort_stats(std::span<const ImageF> images);
CohortStats compute_cohort_stats(std::span<const ImageF> images, std::span<const GeometryRecord> geometry);

ImageF normalize_zscore(const ImageF& image, const CohortStats& stats);
/// Normalizes the valid region only; padding stays exactly zero.
ImageF normalize_zscore(const ImageF& image, const CohortStats& stats, const GeometryRecord& geometry);
ImageF denormalize_zscore(const ImageF& image, const CohortStats& stats);

struct AugmentParams {
    bool flip_vertical = false;
    bool flip_horizontal = false;
    int rotate_quarter_turns = 0;  // counter-clockwise, 0..3
    double stretch_y = 1.0;
    double stretch_x = 1.0;

    bool is_identity() const;
    bool operator==(const AugmentParams&) const = default;
};

/// Flips with probability 0.5 per axis, rotation uniform over quarter turns,
/// per-axis stretch uniform in [0.9, 1.1].
AugmentParams draw_augment(std::uint64_t seed);

struct AugmentedCase {
    ImageF image;
    SoftLabelMap target;
};

/// Image resampled bilinearly, target by nearest neighbour and renormalized per pixel.
AugmentedCase apply_augment(const AugmentParams& params, const ImageF& image, const SoftLabelMap& target);
AugmentedCase augment_case(const ImageF& image, const SoftLabelMap& target, std::uint64_t seed);

}  // namespace tma
