#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tmagrade/types.hpp"

namespace tma {

/// 5×5 counts over non-ignored reference pixels; rows = reference, columns = prediction.
///
/// A prediction of "ignored" on a scored reference pixel has no column. It is kept
/// in `unassigned` (per reference class), counts toward the row total and is a
/// false negative for F1.
struct ConfusionMatrix {
    std::array<std::array<std::int64_t, kNumScoredClasses>, kNumScoredClasses> counts{};
    std::array<std::int64_t, kNumScoredClasses> unassigned{};

    std::int64_t total() const;
    std::int64_t trace() const;
    std::int64_t row_sum(int c) const;  // includes unassigned
    std::int64_t col_sum(int c) const;
    void merge(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;
};

/// 2|P∩R| / (|P| + |R|) with pixels whose reference is "ignored" removed from both
/// sets; both sets empty gives 1.
double dice_coefficient(const GradeLabelMap& pred, const GradeLabelMap& ref, int cls);

/// Unweighted mean of per-class Dice over the classes present in the reference.
/// Throws when the reference is entirely "ignored".
double mean_dice(const GradeLabelMap& pred, const GradeLabelMap& ref);

ConfusionMatrix build_confusion(const GradeLabelMap& pred, const GradeLabelMap& ref);

enum class KappaWeighting { None, Quadratic };

/// (p_o − p_e) / (1 − p_e); p_e == 1 gives 1. Throws on an empty matrix.
double cohens_kappa(const ConfusionMatrix& cm, KappaWeighting weighting = KappaWeighting::None);

struct F1Scores {
    double macro = 0.0;
    double micro = 0.0;
    std::array<double, kNumScoredClasses> per_class{};  // 1 for classes absent from prediction and reference
};

/// Macro averages the classes present in the reference; micro is trace / total.
F1Scores f1_macro_micro(const ConfusionMatrix& cm);

inline double challenge_score(double kappa, double f1_macro, double f1_micro) {
    return kappa + (f1_macro + f1_micro) / 2.0;
}

/// Results reported for the reference model on the hidden challenge test set.
/// Recorded for comparison only; they need the original data to reproduce.
namespace reference_results {
inline constexpr double kChallengeScore = 0.778;
inline constexpr double kMeanDiceRandomInit = 0.749;
inline constexpr double kMeanDicePretrained = 0.756;
inline constexpr std::array<double, 4> kClassAccuracy = {0.8832, 0.6657, 0.4693, 0.2290};  // benign, G3, G4, G5
}  // namespace reference_results

struct DiceDistribution {
    std::vector<std::pair<std::string, double>> rows;
    double mean = 0.0;
    double fraction_above_0_6 = 0.0;  // strictly greater than 0.6
};

DiceDistribution dice_distribution_report(std::span<const std::pair<std::string, double>> cases);
DiceDistribution dice_distribution_report(std::span<const double> values);

struct EvalReport {
    ConfusionMatrix confusion;
    std::array<double, kNumScoredClasses> class_dice{};      // pooled over the cohort
    std::array<double, kNumScoredClasses> class_accuracy{};  // row-normalized diagonal (NaN for absent rows)
    std::vector<std::pair<std::string, double>> case_dice;   // per-case mean Dice
    double cohort_mean_dice = 0.0;
    double fraction_above_0_6 = 0.0;
    double kappa = 0.0;
    double kappa_quadratic = 0.0;
    double f1_macro = 0.0;
    double f1_micro = 0.0;
    double score = 0.0;
};

/// Accumulates per-case results; order of add() calls does not change the report
/// beyond the order of `case_dice`, which is sorted by case id.
class Evaluator {
public:
    void add(const std::string& case_id, const GradeLabelMap& pred, const GradeLabelMap& ref);
    void add_result(const std::string& case_id, const ConfusionMatrix& cm, double case_mean_dice);
    EvalReport report() const;

private:
    ConfusionMatrix cm_;
    std::vector<std::pair<std::string, double>> dice_;
};

// CSV outputs, six decimals.
std::string format_fixed6(double v);
void write_metrics_csv(const std::filesystem::path& path, const EvalReport& report, bool quadratic_kappa = false);
void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm);
void write_dice_csv(const std::filesystem::path& path, const DiceDistribution& dist);
/// metric name → value pairs as written by write_metrics_csv.
std::vector<std::pair<std::string, double>> read_metrics_csv(const std::filesystem::path& path);
ConfusionMatrix read_confusion_csv(const std::filesystem::path& path);

}  // namespace tma
