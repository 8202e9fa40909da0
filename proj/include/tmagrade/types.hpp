#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tma {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Six-class pixel coding shared by every module.
///
/// Codes 1..4 are ordinal by malignancy. `Ignored` never enters a metric or
/// a Gleason score.
enum class GradeClass : std::uint8_t {
    Benign = 0,
    LowGrade = 1,  // Gleason grade lower than 3
    Grade3 = 2,
    Grade4 = 3,
    Grade5 = 4,
    Ignored = 5,
};

inline constexpr int kNumClasses = 6;
inline constexpr int kNumScoredClasses = 5;
inline constexpr std::uint8_t kIgnoredCode = 5;

/// Stream seed derived from a base seed and an index (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Dense row-major 2-D grid of scalar values (label maps, raw masks).
template <class T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, T fill = T{})
        : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

    std::size_t size() const { return data.size(); }
    T& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

    bool operator==(const Grid&) const = default;
};

/// Interleaved H×W×C tensor (HWC order).
template <class T>
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<T> data;

    Image() = default;
    Image(int h, int w, int c, T fill = T{})
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), fill) {}

    std::size_t pixels() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    T& at(int y, int x, int c) { return data[index(y, x, c)]; }
    const T& at(int y, int x, int c) const { return data[index(y, x, c)]; }
    T* pixel(int y, int x) { return data.data() + index(y, x, 0); }
    const T* pixel(int y, int x) const { return data.data() + index(y, x, 0); }

    bool operator==(const Image&) const = default;
};

using GradeLabelMap = Grid<std::uint8_t>;
using RawMask = Grid<std::uint8_t>;
using ImageF = Image<float>;
using ImageU8 = Image<std::uint8_t>;

/// H×W×6 per-pixel class probabilities.
using SoftLabelMap = Image<float>;

}  // namespace tma
