#include "tmagrade/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace tma {
namespace {

void check_same_shape(const GradeLabelMap& a, const GradeLabelMap& b, const char* what) {
    if (a.height != b.height || a.width != b.width)
        throw Error(std::string(what) + ": shape mismatch (" + std::to_string(a.height) + "x" + std::to_string(a.width) +
                    " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
}

const char* kClassNames[kNumScoredClasses] = {"benign", "lt3", "g3", "g4", "g5"};

}  // namespace

std::int64_t ConfusionMatrix::total() const {
    std::int64_t s = 0;
    for (int r = 0; r < kNumScoredClasses; ++r) s += row_sum(r);
    return s;
}

std::int64_t ConfusionMatrix::trace() const {
    std::int64_t s = 0;
    for (int c = 0; c < kNumScoredClasses; ++c) s += counts[c][c];
    return s;
}

std::int64_t ConfusionMatrix::row_sum(int r) const {
    std::int64_t s = unassigned[r];
    for (int c = 0; c < kNumScoredClasses; ++c) s += counts[r][c];
    return s;
}

std::int64_t ConfusionMatrix::col_sum(int c) const {
    std::int64_t s = 0;
    for (int r = 0; r < kNumScoredClasses; ++r) s += counts[r][c];
    return s;
}

void ConfusionMatrix::merge(const ConfusionMatrix& o) {
    for (int r = 0; r < kNumScoredClasses; ++r) {
        unassigned[r] += o.unassigned[r];
        for (int c = 0; c < kNumScoredClasses; ++c) counts[r][c] += o.counts[r][c];
    }
}

double dice_coefficient(const GradeLabelMap& pred, const GradeLabelMap& ref, int cls) {
    check_same_shape(pred, ref, "dice_coefficient");
    std::int64_t p = 0, r = 0, both = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (ref.data[i] == kIgnoredCode) continue;
        const bool in_p = pred.data[i] == cls;
        const bool in_r = ref.data[i] == cls;
        p += in_p;
        r += in_r;
        both += in_p && in_r;
    }
    if (p + r == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + r);
}

double mean_dice(const GradeLabelMap& pred, const GradeLabelMap& ref) {
    check_same_shape(pred, ref, "mean_dice");
    std::array<std::int64_t, kNumScoredClasses> p{}, r{}, both{};
    bool any = false;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const int rc = ref.data[i];
        if (rc == kIgnoredCode) continue;
        any = true;
        const int pc = pred.data[i];
        ++r[rc];
        if (pc < kNumScoredClasses) ++p[pc];
        if (pc == rc) ++both[rc];
    }
    if (!any) throw Error("mean_dice: reference is entirely ignored");
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < kNumScoredClasses; ++c) {
        if (r[c] == 0) continue;
        sum += 2.0 * static_cast<double>(both[c]) / static_cast<double>(p[c] + r[c]);
        ++n;
    }
    return sum / n;
}

ConfusionMatrix build_confusion(const GradeLabelMap& pred, const GradeLabelMap& ref) {
    check_same_shape(pred, ref, "build_confusion");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const int rc = ref.data[i];
        if (rc >= kNumScoredClasses) continue;
        const int pc = pred.data[i];
        if (pc < kNumScoredClasses)
            ++cm.counts[rc][pc];
        else
            ++cm.unassigned[rc];
    }
    return cm;
}

double cohens_kappa(const ConfusionMatrix& cm, KappaWeighting weighting) {
    const double total = static_cast<double>(cm.total());
    if (total <= 0.0) throw Error("cohens_kappa: empty confusion matrix");
    if (weighting == KappaWeighting::None) {
        const double po = static_cast<double>(cm.trace()) / total;
        double pe = 0.0;
        for (int c = 0; c < kNumScoredClasses; ++c)
            pe += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
        pe /= total * total;
        if (pe >= 1.0) return 1.0;
        return (po - pe) / (1.0 - pe);
    }
    // Quadratic weights w_ij = (i − j)² / (K − 1)²; unassigned predictions are excluded here.
    const int k = kNumScoredClasses;
    double n = 0.0;
    for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) n += static_cast<double>(cm.counts[r][c]);
    if (n <= 0.0) throw Error("cohens_kappa: empty confusion matrix");
    double observed = 0.0, expected = 0.0;
    for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) {
            const double w = static_cast<double>((r - c) * (r - c)) / ((k - 1) * (k - 1));
            double row = 0.0, col = 0.0;
            for (int q = 0; q < k; ++q) {
                row += static_cast<double>(cm.counts[r][q]);
                col += static_cast<double>(cm.counts[q][c]);
            }
            observed += w * static_cast<double>(cm.counts[r][c]) / n;
            expected += w * row * col / (n * n);
        }
    if (expected <= 0.0) return 1.0;
    return 1.0 - observed / expected;
}

F1Scores f1_macro_micro(const ConfusionMatrix& cm) {
    if (cm.total() <= 0) throw Error("f1_macro_micro: empty confusion matrix");
    F1Scores out;
    double macro_sum = 0.0;
    int macro_n = 0;
    for (int c = 0; c < kNumScoredClasses; ++c) {
        const std::int64_t tp = cm.counts[c][c];
        const std::int64_t fp = cm.col_sum(c) - tp;
        const std::int64_t fn = cm.row_sum(c) - tp;
        const std::int64_t denom = 2 * tp + fp + fn;
        out.per_class[c] = denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
        if (cm.row_sum(c) > 0) {
            macro_sum += out.per_class[c];
            ++macro_n;
        }
    }
    out.macro = macro_sum / macro_n;
    // Pooled F1 of single-label pixels is accuracy; unassigned pixels count as errors.
    out.micro = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    return out;
}

DiceDistribution dice_distribution_report(std::span<const std::pair<std::string, double>> cases) {
    if (cases.empty()) throw Error("dice_distribution_report: no cases");
    DiceDistribution d;
    d.rows.assign(cases.begin(), cases.end());
    double sum = 0.0;
    int above = 0;
    for (const auto& [id, v] : cases) {
        sum += v;
        above += v > 0.6;
    }
    d.mean = sum / static_cast<double>(cases.size());
    d.fraction_above_0_6 = static_cast<double>(above) / static_cast<double>(cases.size());
    return d;
}

DiceDistribution dice_distribution_report(std::span<const double> values) {
    std::vector<std::pair<std::string, double>> rows;
    for (std::size_t i = 0; i < values.size(); ++i) rows.emplace_back("case" + std::to_string(i), values[i]);
    return dice_distribution_report(std::span<const std::pair<std::string, double>>(rows));
}

void Evaluator::add(const std::string& case_id, const GradeLabelMap& pred, const GradeLabelMap& ref) {
    add_result(case_id, build_confusion(pred, ref), mean_dice(pred, ref));
}

void Evaluator::add_result(const std::string& case_id, const ConfusionMatrix& cm, double case_mean_dice) {
    cm_.merge(cm);
    dice_.emplace_back(case_id, case_mean_dice);
}

EvalReport Evaluator::report() const {
    EvalReport r;
    r.confusion = cm_;
    r.case_dice = dice_;
    std::sort(r.case_dice.begin(), r.case_dice.end());
    const auto dist = dice_distribution_report(std::span<const std::pair<std::string, double>>(r.case_dice));
    r.cohort_mean_dice = dist.mean;
    r.fraction_above_0_6 = dist.fraction_above_0_6;
    r.kappa = cohens_kappa(cm_);
    r.kappa_quadratic = cm_.total() > std::accumulate(cm_.unassigned.begin(), cm_.unassigned.end(), std::int64_t{0})
                            ? cohens_kappa(cm_, KappaWeighting::Quadratic)
                            : std::numeric_limits<double>::quiet_NaN();
    const auto f1 = f1_macro_micro(cm_);
    r.f1_macro = f1.macro;
    r.f1_micro = f1.micro;
    r.class_dice = f1.per_class;  // pooled Dice of a class equals its F1
    for (int c = 0; c < kNumScoredClasses; ++c) {
        const auto row = cm_.row_sum(c);
        r.class_accuracy[c] = row > 0 ? static_cast<double>(cm_.counts[c][c]) / static_cast<double>(row)
                                      : std::numeric_limits<double>::quiet_NaN();
    }
    r.score = challenge_score(r.kappa, r.f1_macro, r.f1_micro);
    return r;
}

std::string format_fixed6(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string s = buf;
    if (s == "-0.000000") s = "0.000000";
    return s;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    return out;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const EvalReport& r, bool quadratic_kappa) {
    auto out = open_csv(path);
    out << "metric,value\r\n";
    const auto row = [&out](const std::string& k, double v) { out << k << ',' << format_fixed6(v) << "\r\n"; };
    row("score", r.score);
    row("kappa", r.kappa);
    if (quadratic_kappa) row("kappa_quadratic", r.kappa_quadratic);
    row("f1_macro", r.f1_macro);
    row("f1_micro", r.f1_micro);
    row("cohort_mean_dice", r.cohort_mean_dice);
    row("dice_fraction_above_0_6", r.fraction_above_0_6);
    for (int c = 0; c < kNumScoredClasses; ++c) row(std::string("dice_") + kClassNames[c], r.class_dice[c]);
    for (int c = 0; c < kNumScoredClasses; ++c) row(std::string("accuracy_") + kClassNames[c], r.class_accuracy[c]);
    row("evaluated_pixels", static_cast<double>(r.confusion.total()));
    row("cases", static_cast<double>(r.case_dice.size()));
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm) {
    auto out = open_csv(path);
    out << "reference";
    for (auto* n : kClassNames) out << ",pred_" << n;
    out << ",pred_unassigned\r\n";
    for (int r = 0; r < kNumScoredClasses; ++r) {
        out << kClassNames[r];
        for (int c = 0; c < kNumScoredClasses; ++c) out << ',' << cm.counts[r][c];
        out << ',' << cm.unassigned[r] << "\r\n";
    }
}

void write_dice_csv(const std::filesystem::path& path, const DiceDistribution& d) {
    auto out = open_csv(path);
    out << "case_id,mean_dice\r\n";
    for (const auto& [id, v] : d.rows) out << id << ',' << format_fixed6(v) << "\r\n";
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        rows.push_back(std::move(f));
    }
    return rows;
}

}  // namespace

std::vector<std::pair<std::string, double>> read_metrics_csv(const std::filesystem::path& path) {
    const auto rows = read_csv(path);
    if (rows.empty() || rows[0] != std::vector<std::string>{"metric", "value"})
        throw Error("'" + path.string() + "' is not a metrics CSV");
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 2) throw Error("metrics CSV: malformed row");
        out.emplace_back(rows[i][0], rows[i][1] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(rows[i][1]));
    }
    return out;
}

ConfusionMatrix read_confusion_csv(const std::filesystem::path& path) {
    const auto rows = read_csv(path);
    if (rows.size() != kNumScoredClasses + 1) throw Error("confusion CSV: expected 6 rows");
    ConfusionMatrix cm;
    for (int r = 0; r < kNumScoredClasses; ++r) {
        const auto& f = rows[r + 1];
        if (f.size() != kNumScoredClasses + 2) throw Error("confusion CSV: malformed row");
        for (int c = 0; c < kNumScoredClasses; ++c) cm.counts[r][c] = std::stoll(f[c + 1]);
        cm.unassigned[r] = std::stoll(f[kNumScoredClasses + 1]);
    }
    return cm;
}

}  // namespace tma
