#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "ghostnoise/tensor.hpp"
#include "test_util.hpp"

using namespace ghostnoise;

TEST_CASE("Tensor4 construction enforces the invariants") {
    CHECK_THROWS_AS(Tensor4(0, 1, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(Tensor4(1, 1, 1, 1, {1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(
        Tensor4(1, 1, 1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}),
        std::invalid_argument);
    CHECK_THROWS_AS(
        Tensor4(1, 1, 1, 2, {1.0, std::numeric_limits<double>::infinity()}),
        std::invalid_argument);
    const Tensor4 x(2, 3, 4, 5);
    CHECK(x.size() == 2 * 3 * 4 * 5);
    CHECK(x(1, 2, 3, 4) == 0.0);
}

TEST_CASE("channel_stats hand examples") {
    SUBCASE("two scalars") {
        const Tensor4 x(2, 1, 1, 1, {1.0, 3.0});
        const ChannelStats s = channel_stats(x);
        CHECK(s.mean[0] == doctest::Approx(2.0).epsilon(1e-15));
        // ((1-2)^2 + (3-2)^2) / 2 = 1
        CHECK(s.var[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("constant tensor has exact stats") {
        std::vector<double> data(3 * 2 * 2 * 2, 5.0);
        const Tensor4 x(3, 2, 2, 2, data);
        const ChannelStats s = channel_stats(x);
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(s.mean[c] == 5.0);
            CHECK(s.var[c] == 0.0);
        }
    }
}

TEST_CASE("channel_stats matches the brute-force oracle") {
    RngStream rng(101);
    const Tensor4 x = testutil::random_uniform_tensor(64, 8, 4, 4, rng);
    const ChannelStats s = channel_stats(x);
    const testutil::OracleStats o = testutil::brute_channel_stats(x);
    for (std::size_t c = 0; c < 8; ++c) {
        CHECK(std::abs(s.mean[c] - o.mean[c]) < 1e-12);
        CHECK(std::abs(s.var[c] - o.var[c]) < 1e-12);
    }
}

TEST_CASE("spatial_stats hand example and oracle") {
    const Tensor4 x(1, 1, 1, 2, {2.0, 4.0});
    const PerSampleChannelStats s = spatial_stats(x);
    CHECK(s.mean_at(0, 0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(s.var_at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));

    RngStream rng(102);
    const Tensor4 y = testutil::random_tensor(8, 2, 3, 3, rng);
    const PerSampleChannelStats sy = spatial_stats(y);
    const testutil::OracleStats o = testutil::brute_spatial_stats(y);
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(std::abs(sy.mean[i] - o.mean[i]) < 1e-12);
        CHECK(std::abs(sy.var[i] - o.var[i]) < 1e-12);
    }
}

TEST_CASE("spatial variance is zero when height = width = 1") {
    RngStream rng(103);
    const Tensor4 x = testutil::random_tensor(5, 4, 1, 1, rng);
    const PerSampleChannelStats s = spatial_stats(x);
    for (double v : s.var) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("channel and spatial stats coincide for a single sample") {
    RngStream rng(104);
    const Tensor4 x = testutil::random_tensor(1, 3, 4, 5, rng);
    const ChannelStats cs = channel_stats(x);
    const PerSampleChannelStats ss = spatial_stats(x);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(cs.mean[c] == ss.mean_at(0, c));
        CHECK(cs.var[c] == ss.var_at(0, c));
    }
}

TEST_CASE("channel_stats is permutation invariant over samples") {
    RngStream rng(105);
    const Tensor4 x = testutil::random_tensor(16, 4, 2, 2, rng);
    std::vector<std::size_t> perm(16);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        perm[i] = i;
    }
    for (std::size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.uniform_below(i)]);
    }
    const ChannelStats a = channel_stats(x);
    const ChannelStats b = channel_stats(gather_samples(x, perm));
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(std::abs(a.mean[c] - b.mean[c]) < 1e-12);
        CHECK(std::abs(a.var[c] - b.var[c]) < 1e-12);
    }
}

TEST_CASE("normalizing by own stats restandardizes the tensor") {
    // eps ~ 0: any epsilon far below the variance floor leaves sqrt(var)
    // unchanged in double precision.
    RngStream rng(106);
    const Tensor4 x = testutil::random_tensor(32, 4, 2, 2, rng, 1.0, 2.0);
    const ChannelStats s = channel_stats(x);
    Tensor4 y(32, 4, 2, 2);
    for (std::size_t b = 0; b < 32; ++b) {
        for (std::size_t c = 0; c < 4; ++c) {
            for (std::size_t h = 0; h < 2; ++h) {
                for (std::size_t w = 0; w < 2; ++w) {
                    y(b, c, h, w) =
                        (x(b, c, h, w) - s.mean[c]) / std::sqrt(s.var[c]);
                }
            }
        }
    }
    const ChannelStats t = channel_stats(y);
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(std::abs(t.mean[c]) < 1e-10);
        CHECK(std::abs(t.var[c] - 1.0) < 1e-10);
    }
}

TEST_CASE("gather_samples") {
    const Tensor4 x(3, 1, 1, 2, {0.0, 1.0, 10.0, 11.0, 20.0, 21.0});
    SUBCASE("duplicates") {
        const std::vector<std::size_t> idx{0, 0};
        const Tensor4 g = gather_samples(x, idx);
        CHECK(g.samples() == 2);
        CHECK(g(0, 0, 0, 0) == 0.0);
        CHECK(g(1, 0, 0, 1) == 1.0);
    }
    SUBCASE("reversal") {
        const std::vector<std::size_t> idx{2, 1, 0};
        const Tensor4 g = gather_samples(x, idx);
        CHECK(g(0, 0, 0, 0) == 20.0);
        CHECK(g(2, 0, 0, 0) == 0.0);
    }
    SUBCASE("rejects empty and out-of-range") {
        const std::vector<std::size_t> empty;
        CHECK_THROWS_AS((void)gather_samples(x, empty), std::invalid_argument);
        const std::vector<std::size_t> bad{3};
        CHECK_THROWS_AS((void)gather_samples(x, bad), std::out_of_range);
    }
}

TEST_CASE("pooled stats equal the stats of the gathered tensor") {
    RngStream rng(107);
    const Tensor4 x = testutil::random_tensor(10, 3, 2, 2, rng);
    const PerSampleChannelStats per = spatial_stats(x);
    const std::vector<std::size_t> idx{3, 3, 7, 0, 9};
    const ChannelStats pooled = pooled_stats(per, idx);
    const ChannelStats direct = channel_stats(gather_samples(x, idx));
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(pooled.mean[c] == direct.mean[c]);
        CHECK(pooled.var[c] == direct.var[c]);
    }
}
