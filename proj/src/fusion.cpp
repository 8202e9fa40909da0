#include "tmagrade/fusion.hpp"

#include <array>

namespace tma {

SoftLabelMap encode_one_hot(const GradeLabelMap& labels) {
    SoftLabelMap out(labels.height, labels.width, kNumClasses, 0.0f);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int code = labels.data[i];
        if (code >= kNumClasses)
            throw Error("encode_one_hot: label " + std::to_string(code) + " at (" +
                        std::to_string(i / labels.width) + ", " + std::to_string(i % labels.width) +
                        ") is outside 0..5");
        out.data[i * kNumClasses + code] = 1.0f;
    }
    return out;
}

SoftLabelMap fuse_annotations(std::span<const GradeLabelMap> maps) {
    if (maps.empty()) throw Error("fuse_annotations: no annotation maps");
    const int h = maps[0].height;
    const int w = maps[0].width;
    for (const auto& m : maps)
        if (m.height != h || m.width != w)
            throw Error("fuse_annotations: dimension mismatch (" + std::to_string(m.height) + "x" +
                        std::to_string(m.width) + " vs " + std::to_string(h) + "x" + std::to_string(w) + ")");
    const int k = static_cast<int>(maps.size());
    if (k > 6) throw Error("fuse_annotations: at most 6 annotators are supported");
    std::array<float, 7> fraction{};  // fraction[n] == float(n / k)
    for (int n = 0; n <= k; ++n) fraction[n] = static_cast<float>(static_cast<double>(n) / k);

    SoftLabelMap out(h, w, kNumClasses, 0.0f);
    const std::size_t npix = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < npix; ++i) {
        std::array<int, kNumClasses> votes{};
        for (const auto& m : maps) {
            const int code = m.data[i];
            if (code >= kNumClasses)
                throw Error("fuse_annotations: label " + std::to_string(code) + " outside 0..5");
            ++votes[code];
        }
        float* px = out.data.data() + i * kNumClasses;
        for (int c = 0; c < kNumClasses; ++c) px[c] = fraction[votes[c]];
    }
    return out;
}

}  // namespace tma
