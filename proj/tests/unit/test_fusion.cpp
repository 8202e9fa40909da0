#include <doctest.h>

#include <algorithm>

#include "support.hpp"
#include "tmagrade/fusion.hpp"
#include "tmagrade/postprocess.hpp"
#include "tmagrade/tensor_io.hpp"

using namespace tma;

TEST_CASE("one-hot encoding") {
    const auto e = encode_one_hot(GradeLabelMap(4, 5, 0));
    for (std::size_t p = 0; p < 20; ++p)
        for (int c = 0; c < 6; ++c) REQUIRE(e.data[p * 6 + c] == (c == 0 ? 1.0f : 0.0f));
    const auto one = encode_one_hot(GradeLabelMap(1, 1, 3));
    CHECK(one.data == std::vector<float>{0, 0, 0, 1, 0, 0});
    std::mt19937_64 rng(1);
    const auto m = tma::testing::random_labels(rng, 8, 8);
    CHECK(argmax_labels(encode_one_hot(m)) == m);
    CHECK_THROWS_AS(encode_one_hot(GradeLabelMap(2, 2, 6)), Error);
}

TEST_CASE("four grade-3 and two grade-4 votes") {
    std::vector<GradeLabelMap> maps;
    for (int i = 0; i < 4; ++i) maps.emplace_back(1, 1, 2);
    for (int i = 0; i < 2; ++i) maps.emplace_back(1, 1, 3);
    const auto f = fuse_annotations(maps);
    CHECK(f.data == std::vector<float>{0, 0, 2.0f / 3.0f, 1.0f / 3.0f, 0, 0});
}

TEST_CASE("agreement and a single annotator reduce to one-hot") {
    std::mt19937_64 rng(2);
    const auto m = tma::testing::random_labels(rng, 9, 7);
    CHECK(fuse_annotations(std::vector<GradeLabelMap>(5, m)) == encode_one_hot(m));
    CHECK(fuse_annotations(std::vector<GradeLabelMap>{m}) == encode_one_hot(m));
}

TEST_CASE("fusion errors") {
    CHECK_THROWS_AS(fuse_annotations(std::vector<GradeLabelMap>{}), Error);
    CHECK_THROWS_AS(fuse_annotations(std::vector<GradeLabelMap>{GradeLabelMap(2, 2), GradeLabelMap(2, 3)}), Error);
}

TEST_CASE("fused values are counts over k, sums are exactly one, order does not matter") {
    std::mt19937_64 rng(3);
    for (int k = 1; k <= 6; ++k)
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<GradeLabelMap> maps;
            for (int a = 0; a < k; ++a) maps.push_back(tma::testing::random_labels(rng, 12, 10));
            const auto f = fuse_annotations(maps);
            std::array<double, 6> channel_mean{};
            for (std::size_t p = 0; p < f.pixels(); ++p) {
                float sum = 0.0f;
                for (int c = 0; c < 6; ++c) {
                    const int count = static_cast<int>(std::count_if(
                        maps.begin(), maps.end(), [&](const auto& m) { return m.data[p] == c; }));
                    REQUIRE(f.data[p * 6 + c] == static_cast<float>(static_cast<double>(count) / k));
                    sum += f.data[p * 6 + c];
                    channel_mean[c] += f.data[p * 6 + c];
                }
                REQUIRE(sum == 1.0f);
            }
            // Marginals equal the fraction of (pixel, annotator) pairs per class.
            for (int c = 0; c < 6; ++c) {
                std::size_t pairs = 0;
                for (const auto& m : maps) pairs += static_cast<std::size_t>(std::count(m.data.begin(), m.data.end(), c));
                CHECK(channel_mean[c] / f.pixels() ==
                      doctest::Approx(static_cast<double>(pairs) / (f.pixels() * k)).epsilon(1e-6));
            }
            auto shuffled = maps;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            REQUIRE(fuse_annotations(shuffled) == f);
        }
}

TEST_CASE("soft label tensor cache round trip") {
    tma::testing::TempDir dir("slm");
    std::mt19937_64 rng(4);
    std::vector<GradeLabelMap> maps;
    for (int a = 0; a < 3; ++a) maps.push_back(tma::testing::random_labels(rng, 13, 11));
    const auto f = fuse_annotations(maps);
    write_tensor(dir / "t.slm", f);
    CHECK(std::filesystem::file_size(dir / "t.slm") == 24 + f.data.size() * 4);
    CHECK(read_tensor(dir / "t.slm") == f);
    std::filesystem::resize_file(dir / "t.slm", 30);
    CHECK_THROWS_AS(read_tensor(dir / "t.slm"), Error);
}
