#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "ghostnoise/normalization.hpp"
#include "test_util.hpp"

using namespace ghostnoise;

namespace {

// Tiny-but-positive epsilon: vanishes under the variance in double precision,
// so the eps->0 examples hold exactly.
constexpr double kTinyEps = 1e-300;

Tensor4 tensor_with_ghost_var_floor(std::size_t b, std::size_t c,
                                    std::size_t h, std::size_t w,
                                    std::size_t ghost, RngStream& rng) {
    for (;;) {
        Tensor4 x = testutil::random_tensor(b, c, h, w, rng, 0.5, 1.0);
        const PerSampleChannelStats per = spatial_stats(x);
        bool ok = true;
        std::vector<std::size_t> idx(ghost);
        for (std::size_t g = 0; g < b / ghost && ok; ++g) {
            std::iota(idx.begin(), idx.end(), g * ghost);
            for (std::size_t ch = 0; ch < c; ++ch) {
                ok = ok && pool_channel(per, ch, idx).var() >= 0.1;
            }
        }
        if (ok) {
            return x;
        }
    }
}

}  // namespace

TEST_CASE("batch_norm_train basics") {
    SUBCASE("standardized input passes through") {
        RngStream rng(1);
        Tensor4 x = testutil::random_tensor(16, 3, 2, 2, rng);
        // standardize exactly first
        const auto [x_hat, stats0] = batch_norm_train(x, kTinyEps);
        const auto [y, stats1] = batch_norm_train(x_hat, kTinyEps);
        for (std::size_t i = 0; i < y.size(); ++i) {
            CHECK(std::abs(y.values()[i] - x_hat.values()[i]) < 1e-8);
        }
    }
    SUBCASE("constant channel maps to zero") {
        const Tensor4 x(4, 1, 1, 1, {3.0, 3.0, 3.0, 3.0});
        const auto [y, stats] = batch_norm_train(x, 1e-5);
        for (double v : y.values()) {
            CHECK(v == 0.0);
        }
    }
    SUBCASE("output statistics are standard") {
        RngStream rng(2);
        const Tensor4 x = testutil::random_tensor(16, 4, 2, 2, rng, 2.0, 3.0);
        const auto [y, stats] = batch_norm_train(x, 1e-10);
        const ChannelStats out = channel_stats(y);
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(std::abs(out.mean[c]) < 1e-8);
            CHECK(std::abs(out.var[c] - 1.0) < 1e-8);
        }
    }
}

TEST_CASE("batch_norm_infer") {
    RngStream rng(3);
    const Tensor4 x = testutil::random_tensor(8, 2, 2, 2, rng);
    SUBCASE("rejects uninitialized running stats") {
        RunningStats empty;
        CHECK_THROWS_AS((void)batch_norm_infer(x, empty, 1e-5),
                        std::invalid_argument);
    }
    SUBCASE("identity statistics divide by sqrt(1 + eps)") {
        RunningStats running;
        running.mean.assign(2, 0.0);
        running.var.assign(2, 1.0);
        running.update_count = 1;
        const double eps = 1e-3;
        const Tensor4 y = batch_norm_infer(x, running, eps);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(y.values()[i] ==
                  doctest::Approx(x.values()[i] / std::sqrt(1.0 + eps))
                      .epsilon(1e-14));
        }
    }
    SUBCASE("single sample processes like any batch member") {
        RunningStats running;
        running.mean.assign(2, 0.25);
        running.var.assign(2, 2.0);
        running.update_count = 5;
        const Tensor4 full = batch_norm_infer(x, running, 1e-5);
        const std::vector<std::size_t> third{3};
        const Tensor4 one =
            batch_norm_infer(gather_samples(x, third), running, 1e-5);
        for (std::size_t i = 0; i < one.size(); ++i) {
            CHECK(one.values()[i] == full.sample(3)[i]);
        }
    }
    SUBCASE("running stats equal to batch stats reproduce train mode") {
        const auto [train_out, stats] = batch_norm_train(x, 1e-5);
        RunningStats running;
        running.mean = stats.mean;
        running.var = stats.var;
        running.update_count = 1;
        const Tensor4 infer_out = batch_norm_infer(x, running, 1e-5);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(std::abs(infer_out.values()[i] - train_out.values()[i]) <
                  1e-10);
        }
    }
}

TEST_CASE("update_running") {
    ChannelStats batch;
    batch.mean = {1.0, -2.0};
    batch.var = {0.5, 2.0};
    SUBCASE("first update copies") {
        RunningStats r = update_running(RunningStats{}, batch, 0.9);
        CHECK(r.mean == batch.mean);
        CHECK(r.var == batch.var);
        CHECK(r.update_count == 1);
    }
    SUBCASE("ema arithmetic") {
        RunningStats r;
        r.mean = {0.0, 0.0};
        r.var = {1.0, 1.0};
        r.update_count = 1;
        ChannelStats b2;
        b2.mean = {1.0, 1.0};
        b2.var = {1.0, 1.0};
        r = update_running(std::move(r), b2, 0.9);
        CHECK(r.mean[0] == doctest::Approx(0.1).epsilon(1e-14));
        CHECK(r.update_count == 2);
    }
    SUBCASE("repeated identical stats converge geometrically") {
        RunningStats r = update_running(RunningStats{}, batch, 0.9);
        for (int i = 0; i < 200; ++i) {
            r = update_running(std::move(r), batch, 0.9);
        }
        CHECK(r.mean[0] == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(r.var[1] == doctest::Approx(2.0).epsilon(1e-9));
    }
}

TEST_CASE("ghost_batch_norm hand example") {
    const Tensor4 x(4, 1, 1, 1, {1.0, 3.0, 5.0, 7.0});
    const Tensor4 y = ghost_batch_norm(x, 2, kTinyEps);
    CHECK(y(0, 0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(y(1, 0, 0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y(2, 0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(y(3, 0, 0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ghost_batch_norm with N = B reduces to batch norm") {
    RngStream rng(4);
    const Tensor4 x = testutil::random_tensor(12, 3, 2, 2, rng);
    const Tensor4 g = ghost_batch_norm(x, 12, 1e-5);
    const Tensor4 b = batch_norm_train(x, 1e-5).first;
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(std::abs(g.values()[i] - b.values()[i]) < 1e-12);
    }
}

TEST_CASE("ghost_batch_norm rejects non-divisor ghost sizes") {
    RngStream rng(5);
    const Tensor4 x = testutil::random_tensor(10, 2, 1, 1, rng);
    CHECK_THROWS_AS((void)ghost_batch_norm(x, 3, 1e-5),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)ghost_batch_norm(x, 0, 1e-5),
                    std::invalid_argument);
}

TEST_CASE("ghost batch norm output bound over random trials") {
    // Fully-connected case: |output| <= sqrt(N) whenever the statistics
    // cover exactly the N ghost samples.
    RngStream rng(6);
    for (int trial = 0; trial < 1000; ++trial) {
        const Tensor4 x = testutil::random_tensor(32, 2, 1, 1, rng, 0.0, 2.0);
        for (std::size_t n : {2, 4, 8, 16}) {
            const Tensor4 y = ghost_batch_norm(x, n, 1e-10);
            for (double v : y.values()) {
                CHECK(std::abs(v) <= std::sqrt(double(n)) + 1e-6);
            }
        }
    }
}

TEST_CASE("exclusive_batch_norm hand examples") {
    SUBCASE("leave-one-out statistics") {
        const Tensor4 x(3, 1, 1, 1, {1.0, 3.0, 5.0});
        const Tensor4 y = exclusive_batch_norm(x, 3, kTinyEps);
        // sample 0: stats over {3, 5}: mean 4, var 1
        CHECK(y(0, 0, 0, 0) == doctest::Approx(-3.0).epsilon(1e-12));
        // sample 1: stats over {1, 5}: mean 3, var 4
        CHECK(y(1, 0, 0, 0) == doctest::Approx(0.0).epsilon(1e-12));
        // sample 2: stats over {1, 3}: mean 2, var 1
        CHECK(y(2, 0, 0, 0) == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("unbounded output witness") {
        const Tensor4 x(3, 1, 1, 1, {2.0, 5.0, 5.0});
        const Tensor4 y = exclusive_batch_norm(x, 3, 1e-3);
        CHECK(std::abs(y(0, 0, 0, 0)) ==
              doctest::Approx(94.8683).epsilon(1e-4));
        CHECK(std::abs(y(0, 0, 0, 0)) >= 90.0);
    }
    SUBCASE("identical samples map to zero") {
        std::vector<double> data(6, 1.7);
        const Tensor4 x(6, 1, 1, 1, data);
        const Tensor4 y = exclusive_batch_norm(x, 3, 1e-3);
        for (double v : y.values()) {
            CHECK(v == 0.0);
        }
    }
}

TEST_CASE("exclusive_batch_norm exceeds any fixed bound") {
    // Two equal samples plus one distinct, separation scaled to the target.
    const double eps = 1e-3;
    for (const double target : {10.0, 100.0, 1000.0}) {
        const double a = 1.0 + 1.1 * target * std::sqrt(eps);
        const Tensor4 x(3, 1, 1, 1, {a, 1.0, 1.0});
        const Tensor4 y = exclusive_batch_norm(x, 3, eps);
        CHECK(std::abs(y(0, 0, 0, 0)) > target);
    }
}

TEST_CASE("exclusive_batch_norm rejects ghost sizes below two") {
    RngStream rng(7);
    const Tensor4 x = testutil::random_tensor(4, 1, 1, 1, rng);
    CHECK_THROWS_AS((void)exclusive_batch_norm(x, 1, 1e-5),
                    std::invalid_argument);
}

TEST_CASE("layer_norm") {
    RngStream rng(8);
    SUBCASE("per-sample independence") {
        const Tensor4 x = testutil::random_tensor(8, 3, 2, 2, rng);
        const Tensor4 y = layer_norm(x, 1e-5);
        const std::vector<std::size_t> fifth{5};
        const Tensor4 alone = layer_norm(gather_samples(x, fifth), 1e-5);
        for (std::size_t i = 0; i < alone.size(); ++i) {
            CHECK(alone.values()[i] == y.sample(5)[i]);
        }
    }
    SUBCASE("constant sample maps to zero") {
        std::vector<double> data(2 * 3, 4.0);
        for (std::size_t i = 3; i < 6; ++i) {
            data[i] = double(i);  // second sample varies
        }
        const Tensor4 x(2, 3, 1, 1, data);
        const Tensor4 y = layer_norm(x, 1e-5);
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(y(0, c, 0, 0) == 0.0);
        }
    }
    SUBCASE("per-sample statistics are standard") {
        const Tensor4 x = testutil::random_tensor(4, 3, 2, 2, rng, 1.0, 2.0);
        const Tensor4 y = layer_norm(x, 1e-10);
        for (std::size_t b = 0; b < 4; ++b) {
            const auto row = y.sample(b);
            double m = 0.0;
            for (std::size_t i = 0; i < row.size(); ++i) {
                m += row[i];
            }
            m /= double(row.size());
            double v = 0.0;
            for (std::size_t i = 0; i < row.size(); ++i) {
                v += (row[i] - m) * (row[i] - m);
            }
            v /= double(row.size());
            CHECK(std::abs(m) < 1e-8);
            CHECK(std::abs(v - 1.0) < 1e-8);
        }
    }
}

TEST_CASE("double-normalization decomposition residuals") {
    RngStream rng(9);
    SUBCASE("random tensors satisfy all three identities") {
        for (int trial = 0; trial < 200; ++trial) {
            const Tensor4 x = tensor_with_ghost_var_floor(32, 4, 2, 2, 8, rng);
            const DecompositionResiduals r =
                gbn_decomposition_residuals(x, 8, 1e-10);
            CHECK(r.equivalence < 1e-6);
            CHECK(r.mu < 1e-6);
            CHECK(r.sigma < 1e-6);
        }
    }
    SUBCASE("pre-standardized input gives tiny residuals") {
        const Tensor4 raw = tensor_with_ghost_var_floor(32, 4, 2, 2, 8, rng);
        const Tensor4 x = batch_norm_train(raw, 1e-10).first;
        const DecompositionResiduals r =
            gbn_decomposition_residuals(x, 8, 1e-10);
        CHECK(r.equivalence < 1e-8);
        CHECK(r.mu < 1e-8);
        CHECK(r.sigma < 1e-8);
    }
    SUBCASE("N = B: hatted stats are 0 and 1") {
        const Tensor4 x = tensor_with_ghost_var_floor(32, 4, 2, 2, 32, rng);
        const auto [x_hat, stats] = batch_norm_train(x, 1e-10);
        const ChannelStats hat = channel_stats(x_hat);
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(std::abs(hat.mean[c]) < 1e-8);
            CHECK(std::abs(hat.var[c] - 1.0) < 1e-8);
        }
    }
    SUBCASE("variance floor is enforced") {
        std::vector<double> data(8, 0.0);
        data[0] = 1e-3;
        const Tensor4 x(8, 1, 1, 1, data);
        CHECK_THROWS_AS((void)gbn_decomposition_residuals(x, 4, 1e-10),
                        std::invalid_argument);
    }
    SUBCASE("eps above the cap is rejected") {
        RngStream rng2(10);
        const Tensor4 x = tensor_with_ghost_var_floor(8, 1, 1, 1, 4, rng2);
        CHECK_THROWS_AS((void)gbn_decomposition_residuals(x, 4, 1e-3),
                        std::invalid_argument);
    }
}

TEST_CASE("ghost batch norm restandardizes every ghost batch") {
    RngStream rng(11);
    const Tensor4 x = tensor_with_ghost_var_floor(32, 4, 2, 2, 8, rng);
    const Tensor4 y = ghost_batch_norm(x, 8, 1e-10);
    const PerSampleChannelStats per = spatial_stats(y);
    std::vector<std::size_t> idx(8);
    for (std::size_t g = 0; g < 4; ++g) {
        std::iota(idx.begin(), idx.end(), g * 8);
        for (std::size_t c = 0; c < 4; ++c) {
            const PooledChannel p = pool_channel(per, c, idx);
            CHECK(std::abs(p.mean) < 1e-6);
            CHECK(std::abs(p.var() - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("NormConfig validation") {
    NormConfig ok;
    ok.validate();
    NormConfig bad_eps;
    bad_eps.eps = 0.0;
    CHECK_THROWS_AS(bad_eps.validate(), std::invalid_argument);
    NormConfig bad_decay;
    bad_decay.ema_decay = 1.0;
    CHECK_THROWS_AS(bad_decay.validate(), std::invalid_argument);
}
