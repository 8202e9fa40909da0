#include <doctest.h>

#include <cmath>
#include <set>

#include "support.hpp"
#include "tmagrade/metrics.hpp"

using namespace tma;
using tma::testing::TempDir;

namespace {

GradeLabelMap from(std::initializer_list<int> v) {
    GradeLabelMap m(1, static_cast<int>(v.size()));
    std::size_t i = 0;
    for (int x : v) m.data[i++] = static_cast<std::uint8_t>(x);
    return m;
}

double set_dice(const GradeLabelMap& p, const GradeLabelMap& r, int c) {
    std::set<std::size_t> ps, rs;
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (r.data[i] == 5) continue;
        if (p.data[i] == c) ps.insert(i);
        if (r.data[i] == c) rs.insert(i);
    }
    if (ps.empty() && rs.empty()) return 1.0;
    std::size_t both = 0;
    for (auto i : ps) both += rs.count(i);
    return 2.0 * both / static_cast<double>(ps.size() + rs.size());
}

}  // namespace

TEST_CASE("Dice coefficient") {
    const auto a = from({1, 1, 0, 0});
    CHECK(dice_coefficient(a, a, 1) == 1.0);
    CHECK(dice_coefficient(from({1, 1, 0, 0}), from({0, 0, 1, 1}), 1) == 0.0);
    // |P| = 3, |R| = 3, overlap 2.
    CHECK(dice_coefficient(from({2, 2, 2, 0}), from({0, 2, 2, 2}), 2) == doctest::Approx(4.0 / 6.0));
    // Ignored reference pixels drop out of both sets.
    CHECK(dice_coefficient(from({2, 2}), from({2, 5}), 2) == 1.0);
    CHECK(dice_coefficient(from({0}), from({0}), 4) == 1.0);
    CHECK_THROWS_AS(dice_coefficient(GradeLabelMap(2, 2), GradeLabelMap(2, 3), 0), Error);
}

TEST_CASE("mean Dice over reference-present classes") {
    std::mt19937_64 rng(1);
    const auto m = tma::testing::random_labels(rng, 16, 16);
    CHECK(mean_dice(m, m) == 1.0);
    const auto ref = from({0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
    const auto pred = from({0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 1});
    CHECK(dice_coefficient(pred, ref, 0) == doctest::Approx(0.8));
    CHECK(dice_coefficient(pred, ref, 1) == doctest::Approx(0.6));
    CHECK(mean_dice(pred, ref) == doctest::Approx(0.7));
    for (int t = 0; t < 50; ++t) {
        const auto p = tma::testing::random_labels(rng, 16, 16);
        const auto r = tma::testing::random_labels(rng, 16, 16);
        double sum = 0.0;
        int n = 0;
        for (int c = 0; c < 5; ++c)
            if (std::count(r.data.begin(), r.data.end(), c)) {
                sum += set_dice(p, r, c);
                ++n;
            }
        REQUIRE(mean_dice(p, r) == doctest::Approx(sum / n).epsilon(1e-12));
    }
    CHECK_THROWS_WITH(mean_dice(from({1, 2}), from({5, 5})), doctest::Contains("ignored"));
}

TEST_CASE("kappa and F1 worked example") {
    // A = 0, B = 1; pred [A,A,B,B] vs ref [A,B,B,B].
    const auto cm = build_confusion(from({0, 0, 1, 1}), from({0, 1, 1, 1}));
    CHECK(cm.total() == 4);
    CHECK(cohens_kappa(cm) == doctest::Approx(0.5).epsilon(1e-12));
    const auto f1 = f1_macro_micro(cm);
    CHECK(f1.micro == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(f1.per_class[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(f1.per_class[1] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(f1.macro == doctest::Approx(0.7333333333).epsilon(1e-9));
    CHECK(challenge_score(cohens_kappa(cm), f1.macro, f1.micro) == doctest::Approx(1.2416667).epsilon(1e-6));
    CHECK(challenge_score(1, 1, 1) == 2.0);
}

TEST_CASE("confusion matrix") {
    std::mt19937_64 rng(2);
    const auto m = tma::testing::random_labels(rng, 16, 16, 4);
    const auto d = build_confusion(m, m);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c)
            if (r != c) REQUIRE(d.counts[r][c] == 0);
    CHECK(cohens_kappa(d) == 1.0);
    CHECK(f1_macro_micro(d).macro == 1.0);
    CHECK(f1_macro_micro(d).micro == 1.0);

    const auto ref = tma::testing::random_labels(rng, 16, 16);
    const auto cm = build_confusion(m, ref);
    CHECK(cm.total() == static_cast<std::int64_t>(std::count_if(ref.data.begin(), ref.data.end(), [](auto v) { return v != 5; })));
    CHECK_THROWS_AS(cohens_kappa(ConfusionMatrix{}), Error);
    CHECK_THROWS_AS(f1_macro_micro(ConfusionMatrix{}), Error);
}

TEST_CASE("single-class perfect agreement gives kappa 1") {
    const auto cm = build_confusion(GradeLabelMap(4, 4, 2), GradeLabelMap(4, 4, 2));
    CHECK(cohens_kappa(cm) == 1.0);
}

TEST_CASE("kappa is relabeling invariant, bounded by p_o, and near zero for independent labels") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
        const auto p = tma::testing::random_labels(rng, 16, 16, 4);
        const auto r = tma::testing::random_labels(rng, 16, 16, 4);
        const auto cm = build_confusion(p, r);
        std::array<int, 5> perm{0, 1, 2, 3, 4};
        std::shuffle(perm.begin(), perm.end(), rng);
        ConfusionMatrix pm;
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) pm.counts[perm[i]][perm[j]] = cm.counts[i][j];
        REQUIRE(cohens_kappa(pm) == doctest::Approx(cohens_kappa(cm)).epsilon(1e-12));
        REQUIRE(cohens_kappa(cm) <= static_cast<double>(cm.trace()) / cm.total() + 1e-15);
        REQUIRE(f1_macro_micro(cm).micro == static_cast<double>(cm.trace()) / cm.total());
        REQUIRE(dice_coefficient(p, r, 2) == dice_coefficient(r, p, 2));
    }
    const auto p = tma::testing::random_labels(rng, 300, 300, 4);
    const auto r = tma::testing::random_labels(rng, 300, 300, 4);
    CHECK(std::abs(cohens_kappa(build_confusion(p, r))) < 0.05);
}

TEST_CASE("quadratic kappa") {
    const auto cm = build_confusion(from({0, 1, 2, 3, 4}), from({0, 1, 2, 3, 4}));
    CHECK(cohens_kappa(cm, KappaWeighting::Quadratic) == 1.0);
    // Near misses cost less than far misses.
    const auto near = build_confusion(from({0, 1, 2, 3, 4, 0, 1}), from({0, 1, 2, 3, 4, 1, 2}));
    const auto far = build_confusion(from({0, 1, 2, 3, 4, 0, 0}), from({0, 1, 2, 3, 4, 4, 3}));
    CHECK(cohens_kappa(near, KappaWeighting::Quadratic) > cohens_kappa(far, KappaWeighting::Quadratic));
}

TEST_CASE("dice distribution summary") {
    auto d = dice_distribution_report(std::vector<double>{1.0, 1.0});
    CHECK(d.mean == 1.0);
    CHECK(d.fraction_above_0_6 == 1.0);
    d = dice_distribution_report(std::vector<double>{0.5, 0.7});
    CHECK(d.mean == doctest::Approx(0.6));
    CHECK(d.fraction_above_0_6 == 0.5);
    CHECK_THROWS_AS(dice_distribution_report(std::vector<double>{}), Error);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(23);
    for (auto& x : v) x = u(rng);
    d = dice_distribution_report(v);
    double s = 0.0;
    int above = 0;
    for (double x : v) {
        s += x;
        above += x > 0.6;
    }
    CHECK(d.mean == doctest::Approx(s / 23).epsilon(1e-15));
    CHECK(d.fraction_above_0_6 == above / 23.0);
    CHECK(d.rows.size() == 23);
}

TEST_CASE("evaluator report and CSV files") {
    TempDir dir("metrics");
    std::mt19937_64 rng(5);
    Evaluator ev;
    std::vector<std::pair<GradeLabelMap, GradeLabelMap>> cases;
    for (int i = 0; i < 6; ++i) {
        cases.emplace_back(tma::testing::random_labels(rng, 16, 16), tma::testing::random_labels(rng, 16, 16, 4));
        ev.add("c" + std::to_string(5 - i), cases.back().first, cases.back().second);
    }
    const auto r = ev.report();
    CHECK(r.case_dice.front().first == "c0");
    CHECK(r.score == doctest::Approx(r.kappa + (r.f1_macro + r.f1_micro) / 2));
    for (double v : r.class_dice) CHECK((v >= 0.0 && v <= 1.0));
    CHECK((r.kappa >= -1.0 && r.kappa <= 1.0));
    CHECK((r.score >= -1.0 && r.score <= 2.0));

    write_metrics_csv(dir / "metrics.csv", r);
    write_confusion_csv(dir / "confusion.csv", r.confusion);
    const auto back = read_metrics_csv(dir / "metrics.csv");
    CHECK(back[0].first == "score");
    CHECK(back[0].second == doctest::Approx(r.score).epsilon(1e-6));
    CHECK(read_confusion_csv(dir / "confusion.csv") == r.confusion);
    CHECK(format_fixed6(1.0 / 3.0) == "0.333333");
    CHECK(format_fixed6(-0.0) == "0.000000");
}

TEST_CASE("pixels predicted as ignored count against the reference class") {
    const auto cm = build_confusion(from({0, 5, 1}), from({0, 0, 1}));
    CHECK(cm.total() == 3);
    CHECK(cm.unassigned[0] == 1);
    const auto f1 = f1_macro_micro(cm);
    CHECK(f1.micro == doctest::Approx(2.0 / 3.0));
    CHECK(f1.per_class[0] == doctest::Approx(2.0 / 3.0));
}
