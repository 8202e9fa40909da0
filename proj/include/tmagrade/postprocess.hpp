#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "tmagrade/preprocess.hpp"
#include "tmagrade/types.hpp"

namespace tma {

/// Per-pixel argmax over the six channels; ties go to the lowest class code.
GradeLabelMap argmax_labels(const SoftLabelMap& prob);

enum class FilterMode { Median, Mode };

/// Sliding-window filter over class codes with edge replication, O(1) amortized
/// per pixel through column histograms.
///
/// Inside each window the "ignored" votes are first reassigned to the window's
/// most frequent non-ignored code (lowest code on ties); the output is then the
/// ordinal median of codes 0..4 (or that modal code in Mode). A window without
/// any non-ignored pixel yields "ignored".
GradeLabelMap median_filter_labels(const GradeLabelMap& labels, int window = 55,
                                   FilterMode mode = FilterMode::Median);

/// Canvas labels back to the raw image size: un-crop (pad with "ignored"),
/// un-pad, then nearest-neighbour upsampling.
GradeLabelMap restore_full_resolution(const GradeLabelMap& labels, const GeometryRecord& geometry);

struct GradeAreas {
    std::array<std::int64_t, kNumScoredClasses> counts{};  // codes 0..4
    std::int64_t ignored = 0;

    std::int64_t total() const;
    std::int64_t cancer_area() const;  // grades 3, 4, 5
    bool operator==(const GradeAreas&) const = default;
};

GradeAreas compute_grade_areas(const GradeLabelMap& labels);

struct GleasonReport {
    std::optional<int> primary;    // 3, 4 or 5
    std::optional<int> secondary;
    GradeAreas areas;

    bool benign() const { return !primary.has_value(); }
    int score() const { return benign() ? 0 : *primary + *secondary; }
    /// "3+4=7" or "benign".
    std::string label() const;
    bool same_grading(const GleasonReport& o) const { return primary == o.primary && secondary == o.secondary; }
};

/// Grades 3..5 ranked by area (equal areas favour the higher grade). The second
/// pattern counts only if its area is at least `min_secondary_fraction` of the
/// cancer area; otherwise the primary pattern is doubled.
GleasonReport derive_gleason_score(const GradeAreas& areas, double min_secondary_fraction = 0.05);

/// `case_id,primary,secondary,score,area_benign,area_lt3,area_g3,area_g4,area_g5,area_ignored`
std::string gleason_csv_header();
std::string gleason_csv_row(const std::string& case_id, const GleasonReport& report);
/// Inverse of gleason_csv_row; returns the case id through `case_id`.
GleasonReport parse_gleason_csv_row(const std::string& row, std::string* case_id = nullptr);

}  // namespace tma
