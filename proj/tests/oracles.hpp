#pragma once

#include <algorithm>
#include <array>
#include <vector>

#include "tmagrade/types.hpp"

namespace tma::testing {

// Per-window sort oracle with the same ignored substitution and edge replication.
inline GradeLabelMap naive_median(const GradeLabelMap& in, int window) {
    const int r = window / 2;
    GradeLabelMap out(in.height, in.width);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            std::vector<int> vals;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx)
                    vals.push_back(in.at(std::clamp(y + dy, 0, in.height - 1), std::clamp(x + dx, 0, in.width - 1)));
            std::array<int, 6> count{};
            for (int v : vals) ++count[v];
            int modal = -1;
            for (int c = 0; c < 5; ++c)
                if (count[c] > 0 && (modal < 0 || count[c] > count[modal])) modal = c;
            if (modal < 0) {
                out.at(y, x) = 5;
                continue;
            }
            for (int& v : vals)
                if (v == 5) v = modal;
            std::sort(vals.begin(), vals.end());
            out.at(y, x) = static_cast<std::uint8_t>(vals[vals.size() / 2]);
        }
    return out;
}

}  // namespace tma::testing
