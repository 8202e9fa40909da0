#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "tmagrade/types.hpp"

namespace tma::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("tmagrade-" + tag + "-" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline GradeLabelMap random_labels(std::mt19937_64& rng, int h, int w, int max_code = 5) {
    std::uniform_int_distribution<int> d(0, max_code);
    GradeLabelMap m(h, w);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(d(rng));
    return m;
}

inline ImageF random_image(std::mt19937_64& rng, int h, int w, int c, float lo = 0.0f, float hi = 255.0f) {
    std::uniform_real_distribution<float> d(lo, hi);
    ImageF im(h, w, c);
    for (auto& v : im.data) v = d(rng);
    return im;
}

}  // namespace tma::testing
