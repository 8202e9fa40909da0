#include "tmagrade/postprocess.hpp"

#include <algorithm>
#include <sstream>
#include <vector>

namespace tma {

GradeLabelMap argmax_labels(const SoftLabelMap& prob) {
    if (prob.channels != kNumClasses) throw Error("argmax_labels: expected 6 channels");
    GradeLabelMap out(prob.height, prob.width);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float* px = prob.data.data() + i * kNumClasses;
        int best = 0;
        for (int c = 1; c < kNumClasses; ++c)
            if (px[c] > px[best]) best = c;
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

namespace {

using Hist = std::array<std::int32_t, kNumClasses>;

std::uint8_t window_decision(const Hist& h, int median_rank, FilterMode mode) {
    int modal = -1;
    for (int c = 0; c < kNumScoredClasses; ++c)
        if (h[c] > 0 && (modal < 0 || h[c] > h[modal])) modal = c;
    if (modal < 0) return kIgnoredCode;
    if (mode == FilterMode::Mode) return static_cast<std::uint8_t>(modal);
    int cum = 0;
    for (int c = 0; c < kNumScoredClasses; ++c) {
        cum += h[c] + (c == modal ? h[kIgnoredCode] : 0);
        if (cum > median_rank) return static_cast<std::uint8_t>(c);
    }
    return static_cast<std::uint8_t>(kNumScoredClasses - 1);
}

}  // namespace

GradeLabelMap median_filter_labels(const GradeLabelMap& labels, int window, FilterMode mode) {
    if (window < 1 || window % 2 == 0) throw Error("median filter window must be odd and >= 1, got " + std::to_string(window));
    for (auto v : labels.data)
        if (v >= kNumClasses) throw Error("median filter: label outside 0..5");
    const int h = labels.height, w = labels.width;
    GradeLabelMap out(h, w);
    if (h == 0 || w == 0) return out;
    if (window == 1) return labels;
    const int r = window / 2;
    const int pw = w + 2 * r;
    const auto src = [&](int y, int x) {
        return labels.at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1));
    };
    const int median_rank = (window * window - 1) / 2;

    // Column histograms over padded columns for rows [y - r, y + r].
    std::vector<Hist> cols(pw, Hist{});
    for (int px = 0; px < pw; ++px)
        for (int dy = -r; dy <= r; ++dy) ++cols[px][src(dy, px - r)];

    for (int y = 0; y < h; ++y) {
        Hist acc{};
        for (int px = 0; px < window; ++px)
            for (int c = 0; c < kNumClasses; ++c) acc[c] += cols[px][c];
        for (int x = 0; x < w; ++x) {
            if (x > 0) {
                const Hist& add = cols[x + 2 * r];
                const Hist& sub = cols[x - 1];
                for (int c = 0; c < kNumClasses; ++c) acc[c] += add[c] - sub[c];
            }
            out.at(y, x) = window_decision(acc, median_rank, mode);
        }
        if (y + 1 < h)
            for (int px = 0; px < pw; ++px) {
                --cols[px][src(y - r, px - r)];
                ++cols[px][src(y + r + 1, px - r)];
            }
    }
    return out;
}

GradeLabelMap restore_full_resolution(const GradeLabelMap& labels, const GeometryRecord& geometry) {
    const auto resampled = unfit_canvas_grid(labels, geometry, kIgnoredCode);
    return resample_nearest(resampled, geometry.rows.raw, geometry.cols.raw);
}

std::int64_t GradeAreas::total() const {
    std::int64_t s = 0;
    for (auto c : counts) s += c;
    return s;
}

std::int64_t GradeAreas::cancer_area() const {
    return counts[static_cast<int>(GradeClass::Grade3)] + counts[static_cast<int>(GradeClass::Grade4)] +
           counts[static_cast<int>(GradeClass::Grade5)];
}

GradeAreas compute_grade_areas(const GradeLabelMap& labels) {
    std::array<std::int64_t, 256> hist{};
    for (auto v : labels.data) ++hist[v];
    GradeAreas a;
    for (int c = 0; c < kNumScoredClasses; ++c) a.counts[c] = hist[c];
    a.ignored = hist[kIgnoredCode];
    for (int v = kNumClasses; v < 256; ++v)
        if (hist[v]) throw Error("compute_grade_areas: label " + std::to_string(v) + " outside 0..5");
    return a;
}

std::string GleasonReport::label() const {
    if (benign()) return "benign";
    return std::to_string(*primary) + "+" + std::to_string(*secondary) + "=" + std::to_string(score());
}

GleasonReport derive_gleason_score(const GradeAreas& areas, double min_secondary_fraction) {
    GleasonReport rep;
    rep.areas = areas;
    struct Candidate {
        int grade;
        std::int64_t area;
    };
    std::vector<Candidate> cands;
    for (int grade = 3; grade <= 5; ++grade) {
        const std::int64_t a = areas.counts[grade - 1];  // grade 3 is code 2
        if (a > 0) cands.push_back({grade, a});
    }
    if (cands.empty()) return rep;
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        return a.area != b.area ? a.area > b.area : a.grade > b.grade;
    });
    rep.primary = cands[0].grade;
    rep.secondary = cands[0].grade;
    if (cands.size() > 1) {
        const double cancer = static_cast<double>(areas.cancer_area());
        if (static_cast<double>(cands[1].area) >= min_secondary_fraction * cancer) rep.secondary = cands[1].grade;
    }
    return rep;
}

std::string gleason_csv_header() {
    return "case_id,primary,secondary,score,area_benign,area_lt3,area_g3,area_g4,area_g5,area_ignored";
}

std::string gleason_csv_row(const std::string& case_id, const GleasonReport& r) {
    std::ostringstream out;
    out << case_id << ',';
    if (r.benign())
        out << ",,benign";
    else
        out << *r.primary << ',' << *r.secondary << ',' << r.score();
    for (auto c : r.areas.counts) out << ',' << c;
    out << ',' << r.areas.ignored;
    return out.str();
}

GleasonReport parse_gleason_csv_row(const std::string& row, std::string* case_id) {
    std::vector<std::string> f;
    std::string cur;
    for (char ch : row) {
        if (ch == ',') {
            f.push_back(cur);
            cur.clear();
        } else if (ch != '\r' && ch != '\n') {
            cur.push_back(ch);
        }
    }
    f.push_back(cur);
    if (f.size() != 10) throw Error("gleason report row: expected 10 fields, found " + std::to_string(f.size()));
    GleasonReport r;
    if (case_id) *case_id = f[0];
    try {
        if (f[3] != "benign") {
            r.primary = std::stoi(f[1]);
            r.secondary = std::stoi(f[2]);
            if (r.score() != std::stoi(f[3])) throw Error("gleason report row: score does not match its patterns");
        }
        for (int c = 0; c < kNumScoredClasses; ++c) r.areas.counts[c] = std::stoll(f[4 + c]);
        r.areas.ignored = std::stoll(f[9]);
    } catch (const std::logic_error&) {
        throw Error("gleason report row: malformed number in '" + row + "'");
    }
    return r;
}

}  // namespace tma
