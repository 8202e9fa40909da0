#include "tmagrade/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace tma {

void PreprocessConfig::validate() const {
    if (!(downsample_factor > 1.0)) throw Error("downsample_factor must be > 1");
    if (canvas_height <= 0 || canvas_width <= 0 || canvas_height % 8 != 0 || canvas_width % 8 != 0)
        throw Error("canvas dimensions must be positive multiples of 8");
    if (spline_order < 0 || spline_order > 5) throw Error("spline_order must be in 0..5");
}

int AxisGeometry::valid_begin() const { return std::max(0, -shift); }
int AxisGeometry::valid_end() const { return std::min(canvas, resampled - shift); }

int resampled_extent(int raw_extent, double factor) {
    if (!(factor > 1.0)) throw Error("resample factor must be > 1");
    const int out = static_cast<int>(std::lround(raw_extent / factor));
    if (out < 8)
        throw Error("degenerate resample: extent " + std::to_string(raw_extent) + " / " + std::to_string(factor) +
                    " gives " + std::to_string(out) + " pixels (< 8)");
    return out;
}

AxisGeometry plan_axis(int raw, int resampled, int canvas) {
    AxisGeometry a;
    a.raw = raw;
    a.resampled = resampled;
    a.canvas = canvas;
    a.shift = resampled >= canvas ? (resampled - canvas) / 2 : -((canvas - resampled) / 2);
    return a;
}

GeometryRecord plan_geometry(int raw_height, int raw_width, const PreprocessConfig& config) {
    config.validate();
    GeometryRecord g;
    g.rows = plan_axis(raw_height, resampled_extent(raw_height, config.downsample_factor), config.canvas_height);
    g.cols = plan_axis(raw_width, resampled_extent(raw_width, config.downsample_factor), config.canvas_width);
    return g;
}

namespace {

// Centred B-spline basis functions of degree 0..5.
double bspline_weight(int order, double x) {
    const double a = std::abs(x);
    switch (order) {
        case 0:
            return a < 0.5 ? 1.0 : 0.0;
        case 1:
            return a < 1.0 ? 1.0 - a : 0.0;
        case 2:
            if (a < 0.5) return 0.75 - a * a;
            if (a < 1.5) return 0.5 * (a - 1.5) * (a - 1.5);
            return 0.0;
        case 3:
            if (a < 1.0) return 2.0 / 3.0 - a * a + 0.5 * a * a * a;
            if (a < 2.0) {
                const double t = 2.0 - a;
                return t * t * t / 6.0;
            }
            return 0.0;
        case 4: {
            const double a2 = a * a;
            if (a < 0.5) return a2 * a2 / 4.0 - 5.0 * a2 / 8.0 + 115.0 / 192.0;
            if (a < 1.5) return (55.0 + 20.0 * a - 120.0 * a2 + 80.0 * a2 * a - 16.0 * a2 * a2) / 96.0;
            if (a < 2.5) {
                const double t = 2.5 - a;
                return t * t * t * t / 24.0;
            }
            return 0.0;
        }
        case 5: {
            const double a2 = a * a;
            const double a4 = a2 * a2;
            if (a < 1.0) return 11.0 / 20.0 - a2 / 2.0 + a4 / 4.0 - a4 * a / 12.0;
            if (a < 2.0)
                return 17.0 / 40.0 + 5.0 * a / 8.0 - 7.0 * a2 / 4.0 + 5.0 * a2 * a / 4.0 - 3.0 * a4 / 8.0 +
                       a4 * a / 24.0;
            if (a < 3.0) {
                const double t = 3.0 - a;
                return t * t * t * t * t / 120.0;
            }
            return 0.0;
        }
        default:
            throw Error("spline order must be in 0..5");
    }
}

std::vector<double> prefilter_poles(int order) {
    switch (order) {
        case 2: return {std::sqrt(8.0) - 3.0};
        case 3: return {std::sqrt(3.0) - 2.0};
        case 4:
            return {std::sqrt(664.0 - std::sqrt(438976.0)) + std::sqrt(304.0) - 19.0,
                    std::sqrt(664.0 + std::sqrt(438976.0)) - std::sqrt(304.0) - 19.0};
        case 5:
            return {std::sqrt(135.0 / 2.0 - std::sqrt(17745.0 / 4.0)) + std::sqrt(105.0 / 4.0) - 13.0 / 2.0,
                    std::sqrt(135.0 / 2.0 + std::sqrt(17745.0 / 4.0)) - std::sqrt(105.0 / 4.0) - 13.0 / 2.0};
        default: return {};
    }
}

double causal_init(const std::vector<double>& c, double z) {
    const std::size_t n = c.size();
    const auto horizon = static_cast<std::size_t>(std::ceil(std::log(1e-16) / std::log(std::abs(z))));
    if (horizon < n) {
        double zn = z;
        double sum = c[0];
        for (std::size_t k = 1; k < horizon; ++k) {
            sum += zn * c[k];
            zn *= z;
        }
        return sum;
    }
    double zn = z;
    const double iz = 1.0 / z;
    double z2n = std::pow(z, static_cast<double>(n - 1));
    double sum = c[0] + z2n * c[n - 1];
    z2n *= z2n * iz;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        sum += (zn + z2n) * c[k];
        zn *= z;
        z2n *= iz;
    }
    return sum / (1.0 - zn * zn);
}

// In-place conversion of samples to interpolating B-spline coefficients (mirror boundaries).
void prefilter(std::vector<double>& c, const std::vector<double>& poles) {
    const std::size_t n = c.size();
    if (poles.empty() || n < 2) return;
    double gain = 1.0;
    for (double z : poles) gain *= (1.0 - z) * (1.0 - 1.0 / z);
    for (double& v : c) v *= gain;
    for (double z : poles) {
        c[0] = causal_init(c, z);
        for (std::size_t k = 1; k < n; ++k) c[k] += z * c[k - 1];
        c[n - 1] = (z / (z * z - 1.0)) * (z * c[n - 2] + c[n - 1]);
        for (std::size_t k = n - 1; k-- > 0;) c[k] = z * (c[k + 1] - c[k]);
    }
}

// Point-reflected extension: linear signals stay linear past the border.
double extended_sample(const double* line, int n, int i) {
    if (n == 1) return line[0];
    double sign = 1.0;
    double offset = 0.0;
    while (i < 0 || i >= n) {
        if (i < 0) {
            offset += sign * 2.0 * line[0];
            sign = -sign;
            i = -i;
        } else {
            offset += sign * 2.0 * line[n - 1];
            sign = -sign;
            i = 2 * (n - 1) - i;
        }
    }
    return offset + sign * line[i];
}

struct SampleKernel {
    int first = 0;  // first coefficient index (extended coordinates)
    std::vector<double> weights;
};

// Precomputed taps for resampling a line of length n to m outputs.
class LineResampler {
public:
    LineResampler(int n, int m, int order) : n_(n), m_(m), order_(order), poles_(prefilter_poles(order)) {
        margin_ = order <= 1 ? 2 : 40;
        const double scale = static_cast<double>(n) / m;
        kernels_.resize(m);
        for (int j = 0; j < m; ++j) {
            const double x = (j + 0.5) * scale - 0.5 + margin_;
            SampleKernel& k = kernels_[j];
            if (order == 0) {
                k.first = static_cast<int>(std::floor(x + 0.5));
                k.weights = {1.0};
                continue;
            }
            const int first = order % 2 == 1 ? static_cast<int>(std::floor(x)) - (order - 1) / 2
                                             : static_cast<int>(std::floor(x + 0.5)) - order / 2;
            k.first = first;
            k.weights.resize(order + 1);
            for (int t = 0; t <= order; ++t) k.weights[t] = bspline_weight(order, x - (first + t));
        }
        buffer_.resize(static_cast<std::size_t>(n) + 2 * margin_);
    }

    // `in` has n samples with stride `in_stride`; writes m samples with stride `out_stride`.
    template <class In, class Out>
    void run(const In* in, std::ptrdiff_t in_stride, Out* out, std::ptrdiff_t out_stride) {
        line_.resize(n_);
        for (int i = 0; i < n_; ++i) line_[i] = static_cast<double>(in[i * in_stride]);
        for (int i = 0; i < static_cast<int>(buffer_.size()); ++i)
            buffer_[i] = extended_sample(line_.data(), n_, i - margin_);
        prefilter(buffer_, poles_);
        for (int j = 0; j < m_; ++j) {
            const SampleKernel& k = kernels_[j];
            double acc = 0.0;
            for (std::size_t t = 0; t < k.weights.size(); ++t) acc += k.weights[t] * buffer_[k.first + t];
            out[j * out_stride] = static_cast<Out>(acc);
        }
    }

private:
    int n_;
    int m_;
    int order_;
    int margin_;
    std::vector<double> poles_;
    std::vector<SampleKernel> kernels_;
    std::vector<double> line_;
    std::vector<double> buffer_;
};

}  // namespace

template <class T>
Image<T> resample_bspline_to(const Image<T>& image, int out_height, int out_width, int order) {
    if (order < 0 || order > 5) throw Error("spline order must be in 0..5");
    if (image.height < 1 || image.width < 1) throw Error("resample of an empty image");
    if (out_height < 1 || out_width < 1) throw Error("resample to an empty grid");
    const int c = image.channels;
    // Rows first (width), into a double buffer, then columns.
    Image<double> tmp(image.height, out_width, c);
    {
        LineResampler rs(image.width, out_width, order);
        for (int y = 0; y < image.height; ++y)
            for (int ch = 0; ch < c; ++ch) rs.run(image.pixel(y, 0) + ch, c, tmp.pixel(y, 0) + ch, c);
    }
    Image<T> out(out_height, out_width, c);
    LineResampler rs(image.height, out_height, order);
    const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(out_width) * c;
    for (int x = 0; x < out_width; ++x)
        for (int ch = 0; ch < c; ++ch) rs.run(tmp.pixel(0, x) + ch, stride, out.pixel(0, x) + ch, stride);
    return out;
}

template <class T>
Resampled<T> resample_bspline(const Image<T>& image, double factor, int order) {
    if (image.height < 2 || image.width < 2) throw Error("resample input must be at least 2x2");
    Resampled<T> r;
    const int h = resampled_extent(image.height, factor);
    const int w = resampled_extent(image.width, factor);
    r.image = resample_bspline_to(image, h, w, order);
    r.geometry.rows = AxisGeometry{image.height, h, 0, 0};
    r.geometry.cols = AxisGeometry{image.width, w, 0, 0};
    return r;
}

template <class T>
Grid<T> resample_nearest(const Grid<T>& grid, int out_height, int out_width) {
    Grid<T> out(out_height, out_width);
    std::vector<int> src_x(out_width);
    for (int x = 0; x < out_width; ++x) src_x[x] = nearest_source(x, out_width, grid.width);
    for (int y = 0; y < out_height; ++y) {
        const int sy = nearest_source(y, out_height, grid.height);
        const T* row = grid.data.data() + static_cast<std::size_t>(sy) * grid.width;
        T* dst = out.data.data() + static_cast<std::size_t>(y) * out_width;
        for (int x = 0; x < out_width; ++x) dst[x] = row[src_x[x]];
    }
    return out;
}

template <class T>
Fitted<T> fit_canvas(const Image<T>& image, int canvas_height, int canvas_width, T fill) {
    Fitted<T> f;
    f.rows = plan_axis(image.height, image.height, canvas_height);
    f.cols = plan_axis(image.width, image.width, canvas_width);
    f.image = Image<T>(canvas_height, canvas_width, image.channels, fill);
    const int c = image.channels;
    for (int y = f.rows.valid_begin(); y < f.rows.valid_end(); ++y) {
        const int x0 = f.cols.valid_begin();
        const int x1 = f.cols.valid_end();
        if (x1 <= x0) break;
        std::copy_n(image.pixel(y + f.rows.shift, x0 + f.cols.shift), static_cast<std::size_t>(x1 - x0) * c,
                    f.image.pixel(y, x0));
    }
    return f;
}

template <class T>
Grid<T> fit_canvas_grid(const Grid<T>& grid, const GeometryRecord& g, T fill) {
    if (grid.height != g.rows.resampled || grid.width != g.cols.resampled)
        throw Error("fit_canvas_grid: grid does not match geometry record");
    Grid<T> out(g.rows.canvas, g.cols.canvas, fill);
    for (int y = g.rows.valid_begin(); y < g.rows.valid_end(); ++y)
        for (int x = g.cols.valid_begin(); x < g.cols.valid_end(); ++x)
            out.at(y, x) = grid.at(y + g.rows.shift, x + g.cols.shift);
    return out;
}

template <class T>
Grid<T> unfit_canvas_grid(const Grid<T>& canvas, const GeometryRecord& g, T fill) {
    if (canvas.height != g.rows.canvas || canvas.width != g.cols.canvas)
        throw Error("geometry/label size mismatch: labels are " + std::to_string(canvas.height) + "x" +
                    std::to_string(canvas.width) + ", record expects canvas " + std::to_string(g.rows.canvas) + "x" +
                    std::to_string(g.cols.canvas));
    Grid<T> out(g.rows.resampled, g.cols.resampled, fill);
    for (int y = g.rows.valid_begin(); y < g.rows.valid_end(); ++y)
        for (int x = g.cols.valid_begin(); x < g.cols.valid_end(); ++x)
            out.at(y + g.rows.shift, x + g.cols.shift) = canvas.at(y, x);
    return out;
}

PreparedImage prepare_image(const ImageF& raw, const PreprocessConfig& config) {
    config.validate();
    auto r = resample_bspline(raw, config.downsample_factor, config.spline_order);
    auto f = fit_canvas(r.image, config.canvas_height, config.canvas_width, 0.0f);
    PreparedImage out;
    out.canvas = std::move(f.image);
    out.geometry.rows = plan_axis(raw.height, r.image.height, config.canvas_height);
    out.geometry.cols = plan_axis(raw.width, r.image.width, config.canvas_width);
    return out;
}

GradeLabelMap prepare_labels(const GradeLabelMap& raw, const GeometryRecord& g) {
    if (raw.height != g.rows.raw || raw.width != g.cols.raw)
        throw Error("prepare_labels: label map does not match geometry record raw size");
    return fit_canvas_grid(resample_nearest(raw, g.rows.resampled, g.cols.resampled), g, kIgnoredCode);
}

// ---- cohort statistics -------------------------------------------------------

void MomentAccumulator::add_region(const ImageF& image, int y0, int y1, int x0, int x1) {
    if (image.channels != 3) throw Error("cohort statistics need 3-channel images");
    // Per-region two-pass moments, then a pairwise merge keeps the reduction stable.
    MomentAccumulator part;
    const std::int64_t n = static_cast<std::int64_t>(std::max(0, y1 - y0)) * std::max(0, x1 - x0);
    if (n == 0) return;
    part.count_ = n;
    for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) s += image.at(y, x, c);
        const double mean = s / static_cast<double>(n);
        double m2 = 0.0;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                const double d = image.at(y, x, c) - mean;
                m2 += d * d;
            }
        part.mean_[c] = mean;
        part.m2_[c] = m2;
    }
    merge(part);
}

void MomentAccumulator::add(const ImageF& image) { add_region(image, 0, image.height, 0, image.width); }

void MomentAccumulator::add(const ImageF& image, const GeometryRecord& g) {
    if (image.height != g.rows.canvas || image.width != g.cols.canvas)
        throw Error("cohort statistics: image does not match its geometry record");
    add_region(image, g.rows.valid_begin(), g.rows.valid_end(), g.cols.valid_begin(), g.cols.valid_end());
}

void MomentAccumulator::merge(const MomentAccumulator& o) {
    if (o.count_ == 0) return;
    if (count_ == 0) {
        *this = o;
        return;
    }
    const double na = static_cast<double>(count_);
    const double nb = static_cast<double>(o.count_);
    const double n = na + nb;
    for (int c = 0; c < 3; ++c) {
        const double delta = o.mean_[c] - mean_[c];
        mean_[c] += delta * nb / n;
        m2_[c] += o.m2_[c] + delta * delta * na * nb / n;
    }
    count_ += o.count_;
}

CohortStats MomentAccumulator::finish() const {
    if (count_ == 0) throw Error("cohort statistics: no pixels");
    CohortStats s;
    static const char* names[3] = {"r", "g", "b"};
    for (int c = 0; c < 3; ++c) {
        s.mean[c] = mean_[c];
        s.std[c] = std::sqrt(m2_[c] / static_cast<double>(count_));
        if (!(s.std[c] > 0.0))
            throw Error(std::string("cohort statistics: zero standard deviation on channel ") + names[c]);
    }
    return s;
}

CohortStats compute_cohort_stats(std::span<const ImageF> images) {
    MomentAccumulator acc;
    for (const auto& im : images) acc.add(im);
    return acc.finish();
}

CohortStats compute_cohort_stats(std::span<const ImageF> images, std::span<const GeometryRecord> geometry) {
    if (images.size() != geometry.size()) throw Error("cohort statistics: image/geometry count mismatch");
    MomentAccumulator acc;
    for (std::size_t i = 0; i < images.size(); ++i) acc.add(images[i], geometry[i]);
    return acc.finish();
}

std::string CohortStats::to_string() const {
    static const char* names[3] = {"r", "g", "b"};
    std::string out;
    char buf[64];
    for (int c = 0; c < 3; ++c) {
        std::snprintf(buf, sizeof buf, "mean_%s=%.17g\n", names[c], mean[c]);
        out += buf;
    }
    for (int c = 0; c < 3; ++c) {
        std::snprintf(buf, sizeof buf, "std_%s=%.17g\n", names[c], std[c]);
        out += buf;
    }
    return out;
}

CohortStats CohortStats::parse(const std::string& text) {
    std::map<std::string, double> kv;
    std::istringstream in(text);
    std::string item;
    // Entries may be separated by newlines or commas.
    while (std::getline(in, item, '\n')) {
        std::istringstream parts(item);
        std::string entry;
        while (std::getline(parts, entry, ',')) {
            const auto eq = entry.find('=');
            if (eq == std::string::npos) continue;
            auto key = entry.substr(0, eq);
            key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
            try {
                kv[key] = std::stod(entry.substr(eq + 1));
            } catch (const std::logic_error&) {
                throw Error("stats: bad value for '" + key + "'");
            }
        }
    }
    CohortStats s;
    static const char* names[3] = {"r", "g", "b"};
    for (int c = 0; c < 3; ++c) {
        const std::string mk = std::string("mean_") + names[c];
        const std::string sk = std::string("std_") + names[c];
        if (!kv.count(mk) || !kv.count(sk)) throw Error("stats: missing " + mk + " or " + sk);
        s.mean[c] = kv[mk];
        s.std[c] = kv[sk];
        if (!(s.std[c] > 0.0)) throw Error("stats: " + sk + " must be > 0");
    }
    return s;
}

void CohortStats::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write stats '" + path.string() + "'");
    out << to_string();
}

CohortStats CohortStats::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("missing stats file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

ImageF normalize_zscore(const ImageF& image, const CohortStats& stats) {
    ImageF out = image;
    const int c = image.channels;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const int ch = static_cast<int>(i % c);
        out.data[i] = static_cast<float>((image.data[i] - stats.mean[ch]) / stats.std[ch]);
    }
    return out;
}

ImageF normalize_zscore(const ImageF& image, const CohortStats& stats, const GeometryRecord& g) {
    ImageF out(image.height, image.width, image.channels, 0.0f);
    for (int y = g.rows.valid_begin(); y < g.rows.valid_end(); ++y)
        for (int x = g.cols.valid_begin(); x < g.cols.valid_end(); ++x)
            for (int ch = 0; ch < image.channels; ++ch)
                out.at(y, x, ch) = static_cast<float>((image.at(y, x, ch) - stats.mean[ch]) / stats.std[ch]);
    return out;
}

ImageF denormalize_zscore(const ImageF& image, const CohortStats& stats) {
    ImageF out = image;
    const int c = image.channels;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const int ch = static_cast<int>(i % c);
        out.data[i] = static_cast<float>(image.data[i] * stats.std[ch] + stats.mean[ch]);
    }
    return out;
}

// ---- augmentation ------------------------------------------------------------

bool AugmentParams::is_identity() const {
    return !flip_vertical && !flip_horizontal && rotate_quarter_turns == 0 && stretch_y == 1.0 && stretch_x == 1.0;
}

AugmentParams draw_augment(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> quarter(0, 3);
    std::uniform_real_distribution<double> stretch(0.9, 1.1);
    AugmentParams p;
    p.flip_vertical = coin(rng) == 1;
    p.flip_horizontal = coin(rng) == 1;
    p.rotate_quarter_turns = quarter(rng);
    p.stretch_y = stretch(rng);
    p.stretch_x = stretch(rng);
    return p;
}

namespace {

template <class T>
Image<T> flip(const Image<T>& in, bool vertical, bool horizontal) {
    if (!vertical && !horizontal) return in;
    Image<T> out(in.height, in.width, in.channels);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            const int sy = vertical ? in.height - 1 - y : y;
            const int sx = horizontal ? in.width - 1 - x : x;
            std::copy_n(in.pixel(sy, sx), in.channels, out.pixel(y, x));
        }
    return out;
}

// Counter-clockwise quarter turns.
template <class T>
Image<T> rotate(const Image<T>& in, int turns) {
    turns = ((turns % 4) + 4) % 4;
    if (turns == 0) return in;
    const bool swap = turns % 2 == 1;
    Image<T> out(swap ? in.width : in.height, swap ? in.height : in.width, in.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            int sy = 0;
            int sx = 0;
            switch (turns) {
                case 1: sy = x; sx = in.width - 1 - y; break;
                case 2: sy = in.height - 1 - y; sx = in.width - 1 - x; break;
                case 3: sy = in.height - 1 - x; sx = y; break;
            }
            std::copy_n(in.pixel(sy, sx), in.channels, out.pixel(y, x));
        }
    return out;
}

template <class T>
Image<T> nearest_image(const Image<T>& in, int h, int w) {
    Image<T> out(h, w, in.channels);
    for (int y = 0; y < h; ++y) {
        const int sy = nearest_source(y, h, in.height);
        for (int x = 0; x < w; ++x)
            std::copy_n(in.pixel(sy, nearest_source(x, w, in.width)), in.channels, out.pixel(y, x));
    }
    return out;
}

}  // namespace

AugmentedCase apply_augment(const AugmentParams& p, const ImageF& image, const SoftLabelMap& target) {
    if (image.height != target.height || image.width != target.width)
        throw Error("augment: image and target sizes differ");
    if (p.is_identity()) return {image, target};

    ImageF im = rotate(flip(image, p.flip_vertical, p.flip_horizontal), p.rotate_quarter_turns);
    SoftLabelMap tg = rotate(flip(target, p.flip_vertical, p.flip_horizontal), p.rotate_quarter_turns);

    if (p.stretch_y != 1.0 || p.stretch_x != 1.0) {
        const int h = std::max(2, static_cast<int>(std::lround(im.height * p.stretch_y)));
        const int w = std::max(2, static_cast<int>(std::lround(im.width * p.stretch_x)));
        im = resample_bspline_to(im, h, w, 1);
        tg = nearest_image(tg, h, w);
    }

    AugmentedCase out;
    out.image = fit_canvas(im, image.height, image.width, 0.0f).image;
    // Pixels uncovered by the stretch are "ignored".
    std::vector<float> ignored(target.channels, 0.0f);
    if (target.channels > kIgnoredCode) ignored[kIgnoredCode] = 1.0f;
    auto fitted = fit_canvas(tg, image.height, image.width, 0.0f);
    out.target = std::move(fitted.image);
    for (int y = 0; y < out.target.height; ++y)
        for (int x = 0; x < out.target.width; ++x) {
            float* px = out.target.pixel(y, x);
            const bool inside = y >= fitted.rows.valid_begin() && y < fitted.rows.valid_end() &&
                                x >= fitted.cols.valid_begin() && x < fitted.cols.valid_end();
            if (!inside) {
                std::copy(ignored.begin(), ignored.end(), px);
                continue;
            }
            float s = 0.0f;
            for (int c = 0; c < out.target.channels; ++c) s += px[c];
            if (s > 0.0f && s != 1.0f)
                for (int c = 0; c < out.target.channels; ++c) px[c] /= s;
        }
    return out;
}

AugmentedCase augment_case(const ImageF& image, const SoftLabelMap& target, std::uint64_t seed) {
    return apply_augment(draw_augment(seed), image, target);
}

template Image<float> resample_bspline_to(const Image<float>&, int, int, int);
template Image<double> resample_bspline_to(const Image<double>&, int, int, int);
template Resampled<float> resample_bspline(const Image<float>&, double, int);
template Resampled<double> resample_bspline(const Image<double>&, double, int);
template Grid<std::uint8_t> resample_nearest(const Grid<std::uint8_t>&, int, int);
template Grid<std::int32_t> resample_nearest(const Grid<std::int32_t>&, int, int);
template Fitted<float> fit_canvas(const Image<float>&, int, int, float);
template Fitted<double> fit_canvas(const Image<double>&, int, int, double);
template Grid<std::uint8_t> fit_canvas_grid(const Grid<std::uint8_t>&, const GeometryRecord&, std::uint8_t);
template Grid<std::int32_t> fit_canvas_grid(const Grid<std::int32_t>&, const GeometryRecord&, std::int32_t);
template Grid<std::uint8_t> unfit_canvas_grid(const Grid<std::uint8_t>&, const GeometryRecord&, std::uint8_t);
template Grid<std::int32_t> unfit_canvas_grid(const Grid<std::int32_t>&, const GeometryRecord&, std::int32_t);

}  // namespace tma
