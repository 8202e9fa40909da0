// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "tmagrade/fusion.hpp"
#include "tmagrade/metrics.hpp"
#include "tmagrade/pipeline.hpp"
#include "tmagrade/postprocess.hpp"
#include "tmagrade/preprocess.hpp"
#include "tmagrade/segnet.hpp"
#include "tmagrade/synthdata.hpp"

using namespace tma;
using Clock = std::chrono::steady_clock;

namespace {

struct Failure {
    std::string what;
};

void expect(bool ok, const std::string& what) {
    if (!ok) throw Failure{what};
}

void expect_near(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol)) {
        std::ostringstream s;
        s.precision(17);
        s << what << ": got " << got << ", expected " << want << " +/- " << tol;
        throw Failure{s.str()};
    }
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- 1: metrics against loop oracles ----------------------------------------

std::string metric_oracles() {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> pred_code(0, 4), ref_code(0, 5);
    const auto t0 = Clock::now();
    for (int trial = 0; trial < 200; ++trial) {
        GradeLabelMap p(16, 16), r(16, 16);
        for (auto& v : p.data) v = static_cast<std::uint8_t>(pred_code(rng));
        for (auto& v : r.data) v = static_cast<std::uint8_t>(ref_code(rng));
        // Some trials exercise absent classes.
        if (trial % 4 == 1)
            for (auto& v : r.data) v = v == 3 ? 5 : v;
        if (trial % 4 == 2)
            for (auto& v : p.data) v = v == 1 ? 0 : v;

        double m[5][5] = {};
        double n = 0;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                if (r.at(y, x) == 5) continue;
                m[r.at(y, x)][p.at(y, x)] += 1;
                n += 1;
            }
        const auto cm = build_confusion(p, r);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) expect(cm.counts[i][j] == m[i][j], "confusion cell");

        double dice_sum = 0;
        int present = 0;
        double tp_sum = 0, fp_sum = 0, fn_sum = 0, f1_sum = 0;
        for (int c = 0; c < 5; ++c) {
            double inter = 0, ps = 0, rs = 0;
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x) {
                    if (r.at(y, x) == 5) continue;
                    inter += p.at(y, x) == c && r.at(y, x) == c;
                    ps += p.at(y, x) == c;
                    rs += r.at(y, x) == c;
                }
            const double dice = ps + rs == 0 ? 1.0 : 2 * inter / (ps + rs);
            expect_near(dice_coefficient(p, r, c), dice, 1e-12, "dice class " + std::to_string(c));
            const double fp = ps - inter, fn = rs - inter;
            const double f1 = 2 * inter + fp + fn == 0 ? 1.0 : 2 * inter / (2 * inter + fp + fn);
            const auto f = f1_macro_micro(cm);
            expect_near(f.per_class[c], f1, 1e-12, "per-class F1");
            tp_sum += inter;
            fp_sum += fp;
            fn_sum += fn;
            if (rs > 0) {
                dice_sum += dice;
                f1_sum += f1;
                ++present;
            }
        }
        expect_near(mean_dice(p, r), dice_sum / present, 1e-12, "mean dice");
        const auto f = f1_macro_micro(cm);
        expect_near(f.macro, f1_sum / present, 1e-12, "macro F1");
        expect_near(f.micro, 2 * tp_sum / (2 * tp_sum + fp_sum + fn_sum), 1e-12, "micro F1");

        double po = 0, pe = 0;
        for (int i = 0; i < 5; ++i) {
            po += m[i][i] / n;
            double row = 0, col = 0;
            for (int j = 0; j < 5; ++j) {
                row += m[i][j];
                col += m[j][i];
            }
            pe += (row / n) * (col / n);
        }
        expect_near(cohens_kappa(cm), (po - pe) / (1 - pe), 1e-12, "kappa");
    }
    const double s = seconds_since(t0);
    expect(s < 5.0, "runtime " + std::to_string(s) + " s exceeds 5 s");
    return "200 pairs, " + std::to_string(s) + " s";
}

// ---- 2: challenge score -------------------------------------------------------

std::string score_formula() {
    expect(challenge_score(1.0, 1.0, 1.0) == 2.0, "challenge_score(1,1,1) != 2");
    GradeLabelMap p(1, 4), r(1, 4);
    p.data = {0, 0, 1, 1};
    r.data = {0, 1, 1, 1};
    const auto cm = build_confusion(p, r);
    const double kappa = cohens_kappa(cm);
    const auto f = f1_macro_micro(cm);
    expect_near(kappa, 0.5, 1e-12, "kappa");
    const double score = challenge_score(kappa, f.macro, f.micro);
    expect_near(score, 1.24167, 1e-5, "worked example");
    char buf[64];
    std::snprintf(buf, sizeof buf, "score %.7f", score);
    return buf;
}

// ---- 3: median filter -----------------------------------------------------------

std::string median_filter() {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = tma::testing::random_labels(rng, 64, 64, trial % 2 ? 5 : 4);
        for (int w : {3, 7, 15})
            expect(median_filter_labels(m, w) == tma::testing::naive_median(m, w),
                   "mismatch on map " + std::to_string(trial) + " window " + std::to_string(w));
    }
    const auto big = tma::testing::random_labels(rng, 448, 448);
    const auto t0 = Clock::now();
    const auto out = median_filter_labels(big, 55);
    const double s = seconds_since(t0);
    expect(out.height == 448 && out.width == 448, "output size");
    expect(s < 2.0, "448x448 window 55 took " + std::to_string(s) + " s");
    return "150 oracle comparisons, 448x448/55 in " + std::to_string(s) + " s";
}

// ---- 4: fusion -----------------------------------------------------------------------

std::string fusion() {
    std::mt19937_64 rng(4);
    for (int k = 1; k <= 6; ++k)
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<GradeLabelMap> maps;
            for (int a = 0; a < k; ++a) maps.push_back(tma::testing::random_labels(rng, 24, 20));
            const auto f = fuse_annotations(maps);
            expect(f.channels == 6 && f.height == 24 && f.width == 20, "fused shape");
            std::array<double, 6> mean{}, expected{};
            for (std::size_t p = 0; p < f.pixels(); ++p) {
                float sum = 0.0f;
                for (int c = 0; c < 6; ++c) {
                    int count = 0;
                    for (const auto& m : maps) count += m.data[p] == c;
                    expect(f.data[p * 6 + c] == static_cast<float>(static_cast<double>(count) / k),
                           "channel value differs from count/k");
                    sum += f.data[p * 6 + c];
                    mean[c] += f.data[p * 6 + c];
                    expected[c] += static_cast<double>(count) / k;
                }
                expect(sum == 1.0f, "channel sum not exactly 1");
            }
            for (int c = 0; c < 6; ++c) expect_near(mean[c], expected[c], 1e-4, "channel mean");
        }
    return "k = 1..6, 60 annotator sets";
}

// ---- 5: gradient check ---------------------------------------------------------------

std::string gradient_check() {
    UNetConfig cfg;
    cfg.encoder_filters = {8, 8, 8, 8};
    cfg.decoder_filters = {8, 8, 8};
    const auto t0 = Clock::now();
    const auto res = tma::testing::gradient_check(cfg, 2, 16, 150, 3e-5, 5);
    const double s = seconds_since(t0);
    std::ostringstream out;
    for (auto [role, n] : res.checked) {
        expect(n >= 100, "only " + std::to_string(n) + " coordinates of one parameter kind");
        const double worst = res.worst.at(role);
        expect(worst < 1e-4, "relative error " + std::to_string(worst) + " at " + res.worst_where.at(role));
        static const std::map<ParamRole, const char*> names = {{ParamRole::ConvWeight, "conv weight"},
                                                                {ParamRole::ConvBias, "conv bias"},
                                                                {ParamRole::BnScale, "bn scale"},
                                                                {ParamRole::BnShift, "bn shift"}};
        out << names.at(role) << " " << n << " coords max " << worst << "; ";
    }
    expect(s < 60.0, "runtime " + std::to_string(s) + " s");
    out << s << " s";
    return out.str();
}

// ---- 6: shape contract ----------------------------------------------------------------

std::string shape_contract() {
    UNet<float> net(init_params<float>(UNetConfig{}, 6));
    std::mt19937_64 rng(6);
    const auto im = tma::testing::random_image(rng, 448, 448, 3, -2.0f, 2.0f);
    const auto t0 = Clock::now();
    const auto p = predict_normalized(net, im);
    const double s = seconds_since(t0);
    expect(p.height == 448 && p.width == 448 && p.channels == 6, "output is not 448x448x6");
    for (std::size_t i = 0; i < p.pixels(); ++i) {
        double sum = 0.0;
        for (int c = 0; c < 6; ++c) sum += p.data[i * 6 + c];
        expect(std::abs(sum - 1.0) <= 1e-5, "softmax sum off by " + std::to_string(sum - 1.0));
    }
    const int trace[] = {448, 224, 112, 56, 112, 224, 448};
    expect(net.trace().size() == 7, "trace length");
    std::string t;
    for (int i = 0; i < 7; ++i) {
        expect(net.trace()[i].height == trace[i] && net.trace()[i].width == trace[i], "trace stage " + net.trace()[i].stage);
        t += (i ? "->" : "") + std::to_string(net.trace()[i].height);
    }
    return t + ", forward " + std::to_string(s) + " s";
}

// ---- 7: toy overfit --------------------------------------------------------------------

std::string toy_overfit() {
    std::vector<TrainingCase> cases;
    for (int i = 0; i < 4; ++i) {
        SynthSpec spec;
        spec.height = spec.width = 64;
        spec.annotators = 1;
        spec.shape_count = 2;
        spec.seed = derive_seed(7, i);
        const auto c = generate_case(spec);
        ImageF im = c.image;
        for (auto& v : im.data) v = (v - 160.0f) / 60.0f;
        cases.push_back({"toy" + std::to_string(i), std::move(im), encode_one_hot(c.truth), c.truth});
    }
    UNetConfig net;
    net.encoder_filters = {16, 32, 64, 128};
    net.decoder_filters = {64, 32, 16};
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 300;
    cfg.max_steps = 300;
    cfg.learning_rate = 3e-3;
    cfg.seed = 7;
    const auto t0 = Clock::now();
    const auto a = train_network(init_params<float>(net, 7), cases, {}, cfg);
    const double s = seconds_since(t0);
    const auto b = train_network(init_params<float>(net, 7), cases, {}, cfg);
    expect(a.adam.step <= 300, "more than 300 steps");
    expect(a.params == b.params && a.step_losses == b.step_losses, "two same-seed runs differ");

    UNet<float> model(a.params);
    double loss = 0.0, dice = 0.0;
    for (const auto& c : cases) {
        const auto p = predict_normalized(model, c.image);
        loss += loss_xent(p, c.target) / cases.size();
        dice += mean_dice(argmax_labels(p), c.reference) / cases.size();
    }
    const double last = a.step_losses.back();
    expect(last < 0.05, "final training loss " + std::to_string(last));
    expect(dice > 0.95, "training mean Dice " + std::to_string(dice));
    expect(s < 600.0, "runtime " + std::to_string(s) + " s");
    char buf[160];
    std::snprintf(buf, sizeof buf, "%lld steps, loss %.4f (infer %.4f), Dice %.4f, %.1f s",
                  static_cast<long long>(a.adam.step), last, loss, dice, s);
    return buf;
}

// ---- 8: synthetic truth recovery ---------------------------------------------------------

std::map<std::string, std::string> read_reports(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    std::map<std::string, std::string> out;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string id;
        const auto r = parse_gleason_csv_row(line, &id);
        out[id] = r.label() + " " + gleason_csv_row(id, r);
    }
    return out;
}

std::string truth_recovery() {
    tma::testing::TempDir dir("acceptance");
    RunConfig c = parse_run_config(
        "run: {name: perfect, seed: 8}\n"
        "synth: {enabled: true, height: 256, width: 256, block: 2, annotators: 6, jitter: 0,"
        " train: 12, validation: 4, test: 4}\n"
        "preprocess: {downsample_factor: 2, canvas_height: 128, canvas_width: 128}\n"
        "predict: {mode: perfect}\n"
        "postprocess: {median_window: 1}\n"
        "evaluate: {cohort: all}\n");
    c.root = dir.path() / "runs";
    c.synth_output = dir.path() / "data";
    const auto report = run_pipeline(c);
    expect(report.score == 2.0, "cohort score " + std::to_string(report.score));
    const auto truth = read_reports(dir.path() / "data" / "truth_reports.csv");
    const auto got = read_reports(dir.path() / "runs" / "perfect" / "reports" / "gleason.csv");
    expect(truth.size() == 20, "expected 20 truth reports");
    int match = 0, cancer = 0;
    for (const auto& [id, t] : truth) {
        const auto it = got.find(id);
        match += it != got.end() && it->second == t;
        cancer += t.rfind("benign", 0) != 0;
    }
    expect(match == 20, std::to_string(match) + "/20 reports match");
    return "score 2, 20/20 reports (" + std::to_string(cancer) + " graded cancers)";
}

// ---- 9: geometry invertibility ----------------------------------------------------------

std::string geometry() {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> extent(430, 5632);
    PreprocessConfig cfg;
    int passes = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int h = extent(rng), w = extent(rng);
        const auto g = plan_geometry(h, w, cfg);
        // The canvas coordinate is written in base-5 digits, one restore per digit.
        const int canvas_cells = cfg.canvas_height * cfg.canvas_width;
        std::vector<std::int32_t> decoded(static_cast<std::size_t>(h) * w, 0);
        std::vector<char> outside(decoded.size(), 0);
        std::int64_t place = 1;
        for (int digit = 0; place < canvas_cells; ++digit, place *= 5) {
            GradeLabelMap labels(cfg.canvas_height, cfg.canvas_width);
            for (int i = 0; i < canvas_cells; ++i) labels.data[i] = static_cast<std::uint8_t>((i / place) % 5);
            const auto full = restore_full_resolution(labels, g);
            expect(full.height == h && full.width == w, "restored size differs from raw size");
            for (std::size_t p = 0; p < full.size(); ++p) {
                if (full.data[p] == kIgnoredCode)
                    outside[p] = 1;
                else
                    decoded[p] += static_cast<std::int32_t>(full.data[p] * place);
            }
            ++passes;
        }
        for (int y = 0; y < h; ++y) {
            const int cy = static_cast<int>((2LL * y + 1) * g.rows.resampled / (2LL * h)) - g.rows.shift;
            for (int x = 0; x < w; ++x) {
                const int cx = static_cast<int>((2LL * x + 1) * g.cols.resampled / (2LL * w)) - g.cols.shift;
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                const bool in = cy >= 0 && cy < cfg.canvas_height && cx >= 0 && cx < cfg.canvas_width;
                expect(in != static_cast<bool>(outside[p]), "coverage mismatch");
                if (in) expect(decoded[p] == static_cast<std::int64_t>(cy) * cfg.canvas_width + cx, "coordinate mismatch");
            }
        }
        // Forward direction: raw labels onto the canvas and back.
        GradeLabelMap raw(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) raw.at(y, x) = static_cast<std::uint8_t>((y * 7 + x * 3) % 5);
        const auto back = restore_full_resolution(prepare_labels(raw, g), g);
        expect(back.height == h && back.width == w, "round-trip size");
        for (int y = 0; y < h; y += 7)
            for (int x = 0; x < w; x += 5) {
                const int cy = static_cast<int>((2LL * y + 1) * g.rows.resampled / (2LL * h)) - g.rows.shift;
                const int cx = static_cast<int>((2LL * x + 1) * g.cols.resampled / (2LL * w)) - g.cols.shift;
                int want = kIgnoredCode;
                if (cy >= 0 && cy < cfg.canvas_height && cx >= 0 && cx < cfg.canvas_width) {
                    const int ry = static_cast<int>((2LL * (cy + g.rows.shift) + 1) * h / (2LL * g.rows.resampled));
                    const int rx = static_cast<int>((2LL * (cx + g.cols.shift) + 1) * w / (2LL * g.cols.resampled));
                    want = raw.at(ry, rx);
                }
                expect(back.at(y, x) == want, "label round trip mismatch");
            }
    }
    return "50 raw sizes, " + std::to_string(passes) + " coordinate-digit restores";
}

// ---- 10: weights persistence -------------------------------------------------------------

std::string weights() {
    tma::testing::TempDir dir("acceptance-weights");
    const UNetConfig cfg;
    auto p = init_params<float>(cfg, 10);
    std::mt19937_64 rng(10);
    std::normal_distribution<float> d(0.0f, 1.0f);
    for (auto& t : p.tensors)
        for (auto& v : t.data) v += d(rng);
    const auto path = dir / "model.tmaw";
    save_weights(path, p);
    expect(load_weights<float>(path, cfg).params == p, "float round trip not bit-exact");
    auto pd = init_params<double>(cfg, 11);
    save_weights(dir / "model64.tmaw", pd);
    expect(load_weights<double>(dir / "model64.tmaw", cfg).params == pd, "double round trip not bit-exact");

    const auto rejects = [&](const std::filesystem::path& f, const UNetConfig& c, const std::string& needle) {
        try {
            load_weights<float>(f, c);
        } catch (const Error& e) {
            expect(std::string(e.what()).find(needle) != std::string::npos,
                   "diagnostic '" + std::string(e.what()) + "' lacks '" + needle + "'");
            return;
        }
        throw Failure{"accepted a bad file (" + needle + ")"};
    };
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream(dir / "trunc.tmaw", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    rejects(dir / "trunc.tmaw", cfg, "truncated");
    auto bad = bytes;
    bad[0] = 'Z';
    std::ofstream(dir / "magic.tmaw", std::ios::binary) << bad;
    rejects(dir / "magic.tmaw", cfg, "magic");
    // Corrupt the first tensor's name.
    bad = bytes;
    bad[16] = 'X';
    std::ofstream(dir / "name.tmaw", std::ios::binary) << bad;
    rejects(dir / "name.tmaw", cfg, "layer 0");

    UNetConfig five = cfg;
    five.num_classes = 5;
    rejects(path, five, "head.weight");
    UNetConfig narrow = cfg;
    narrow.encoder_filters = {32, 128, 256, 512};
    rejects(path, narrow, "enc1.conv1.weight");
    return "bit-exact f32/f64; truncation, magic, name and shape mismatches rejected";
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<std::string()>>> criteria = {
        {"metric oracle suite", metric_oracles},
        {"score formula", score_formula},
        {"median filter", median_filter},
        {"fusion", fusion},
        {"gradient check", gradient_check},
        {"shape contract", shape_contract},
        {"toy overfit", toy_overfit},
        {"synthetic truth recovery", truth_recovery},
        {"geometry invertibility", geometry},
        {"weight persistence", weights},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto& [name, fn] = criteria[i];
        try {
            const auto detail = fn();
            std::printf("PASS %2zu %-26s %s\n", i + 1, name.c_str(), detail.c_str());
        } catch (const Failure& f) {
            ++failed;
            std::printf("FAIL %2zu %-26s %s\n", i + 1, name.c_str(), f.what.c_str());
        } catch (const std::exception& e) {
            ++failed;
            std::printf("FAIL %2zu %-26s exception: %s\n", i + 1, name.c_str(), e.what());
        }
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
    return failed ? 1 : 0;
}
