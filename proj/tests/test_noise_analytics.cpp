#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "ghostnoise/noise_analytics.hpp"
#include "test_util.hpp"

using namespace ghostnoise;

TEST_CASE("shift noise variance formula") {
    SUBCASE("reduces to 1/N in the fully-connected case") {
        for (std::size_t n : {2, 8, 32}) {
            ConvNoiseModel m{n, 1, 1.0, 0.0};
            CHECK(shift_noise_variance(m) ==
                  doctest::Approx(1.0 / double(n)).epsilon(1e-15));
        }
    }
    SUBCASE("plug-in value") {
        ConvNoiseModel m{8, 16, 0.75, 0.25};
        CHECK(shift_noise_variance(m) ==
              doctest::Approx(0.25 / 128.0 + 0.75 / 8.0).epsilon(1e-15));
        CHECK(shift_noise_variance(m) ==
              doctest::Approx(0.095703125).epsilon(1e-12));
    }
    SUBCASE("vanishes for huge ghost batches") {
        ConvNoiseModel m{1u << 30, 16, 0.75, 0.25};
        CHECK(shift_noise_variance(m) < 1e-9);
    }
}

TEST_CASE("scale noise moments formula") {
    SUBCASE("fully-connected case is chi-squared") {
        ConvNoiseModel m{32, 1, 1.0, 0.0};
        const ScaleNoiseMoments sm = scale_noise_moments(m);
        CHECK(sm.mean == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(sm.variance == doctest::Approx(2.0 / 32.0).epsilon(1e-15));
    }
    SUBCASE("plug-in value") {
        ConvNoiseModel m{8, 16, 0.75, 0.25};
        const ScaleNoiseMoments sm = scale_noise_moments(m);
        CHECK(sm.mean == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(sm.variance ==
              doctest::Approx(2.0 * 0.0625 / 128.0 + 2.0 * 0.5625 / 8.0)
                  .epsilon(1e-15));
        CHECK(sm.variance == doctest::Approx(0.1416015625).epsilon(1e-12));
    }
    SUBCASE("degenerate model") {
        ConvNoiseModel m{8, 16, 0.0, 0.0};
        const ScaleNoiseMoments sm = scale_noise_moments(m);
        CHECK(sm.mean == 0.0);
        CHECK(sm.variance == 0.0);
    }
}

TEST_CASE("sample_conv_model") {
    SUBCASE("zero intra-sample variance means spatially constant slices") {
        ConvNoiseModel m{4, 16, 1.0, 0.0};
        RngStream rng(1);
        const Tensor4 x = sample_conv_model(m, 32, 4, 4, rng);
        for (std::size_t b = 0; b < 32; ++b) {
            const auto row = x.sample(b);
            for (std::size_t i = 1; i < row.size(); ++i) {
                CHECK(row[i] == row[0]);
            }
        }
    }
    SUBCASE("zero inter-sample variance pins the sample means near zero") {
        ConvNoiseModel m{4, 16, 0.0, 0.64};
        RngStream rng(2);
        const Tensor4 x = sample_conv_model(m, 20000, 16, 1, rng);
        const ChannelStats stats = channel_stats(x);
        CHECK(std::abs(stats.mean[0]) < 0.01);
        CHECK(std::abs(stats.var[0] - 0.64) / 0.64 < 0.05);
        const PerSampleChannelStats per = spatial_stats(x);
        // per-sample means fluctuate only through the spatial noise
        const auto mv = testutil::brute_moments(per.mean);
        CHECK(std::abs(mv.var - 0.64 / 16.0) / (0.64 / 16.0) < 0.05);
    }
    SUBCASE("round-trip: estimation recovers the generative parameters") {
        // The biased spatial variance leaks sigma_I^2/I of the intra-sample
        // variance into the inter-sample estimate, so recovery tightens with
        // the spatial size.
        ConvNoiseModel m{4, 64, 0.7, 0.3};
        RngStream rng(3);
        const Tensor4 x = sample_conv_model(m, 10000, 8, 8, rng);
        const VarianceDecomposition d = variance_decomposition(x);
        CHECK(std::abs(d.inter_sample[0] - 0.7) / 0.7 < 0.05);
        CHECK(std::abs(d.intra_sample[0] - 0.3) / 0.3 < 0.05);
    }
    SUBCASE("spatial factorization must match") {
        ConvNoiseModel m{4, 16, 0.5, 0.5};
        RngStream rng(4);
        CHECK_THROWS_AS((void)sample_conv_model(m, 8, 3, 3, rng),
                        std::invalid_argument);
    }
}

TEST_CASE("variance_decomposition") {
    SUBCASE("spatially constant input puts everything between samples") {
        RngStream rng(5);
        Tensor4 x(6, 2, 2, 2);
        for (std::size_t b = 0; b < 6; ++b) {
            for (std::size_t c = 0; c < 2; ++c) {
                const double v = rng.normal();
                for (std::size_t h = 0; h < 2; ++h) {
                    for (std::size_t w = 0; w < 2; ++w) {
                        x(b, c, h, w) = v;
                    }
                }
            }
        }
        const VarianceDecomposition d = variance_decomposition(x);
        const ChannelStats stats = channel_stats(x);
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(d.intra_sample[c] == 0.0);
            CHECK(d.inter_sample[c] == stats.var[c]);
        }
    }
    SUBCASE("identical samples put everything inside samples") {
        RngStream rng(6);
        std::vector<double> row(2 * 2 * 2);
        for (double& v : row) {
            v = rng.normal();
        }
        std::vector<double> data;
        for (int b = 0; b < 5; ++b) {
            data.insert(data.end(), row.begin(), row.end());
        }
        const Tensor4 x(5, 2, 2, 2, std::move(data));
        const VarianceDecomposition d = variance_decomposition(x);
        const ChannelStats stats = channel_stats(x);
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(d.inter_sample[c] == 0.0);
            CHECK(d.intra_sample[c] == stats.var[c]);
        }
    }
    SUBCASE("parts sum to the total channel variance") {
        RngStream rng(7);
        for (int trial = 0; trial < 100; ++trial) {
            const Tensor4 x = testutil::random_tensor(12, 3, 3, 3, rng, 1.0,
                                                      2.0);
            const VarianceDecomposition d = variance_decomposition(x);
            const ChannelStats stats = channel_stats(x);
            for (std::size_t c = 0; c < 3; ++c) {
                CHECK(std::abs(d.inter_sample[c] + d.intra_sample[c] -
                               stats.var[c]) < 1e-10);
            }
        }
    }
    SUBCASE("needs at least two samples") {
        const Tensor4 x(1, 1, 2, 2, {1.0, 2.0, 3.0, 4.0});
        CHECK_THROWS_AS((void)variance_decomposition(x),
                        std::invalid_argument);
    }
}

TEST_CASE("ks_statistic") {
    const auto std_normal_cdf = [](double v) {
        return normal_cdf(v, 0.0, 1.0);
    };
    SUBCASE("rejects empty input") {
        CHECK_THROWS_AS((void)ks_statistic({}, std_normal_cdf),
                        std::invalid_argument);
    }
    SUBCASE("point mass at the median scores one half") {
        std::vector<double> xs(1000, 0.0);
        CHECK(ks_statistic(xs, std_normal_cdf) ==
              doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("one-sigma mean offset scores above 0.3") {
        RngStream rng(8);
        std::vector<double> xs(100000);
        for (double& x : xs) {
            x = rng.normal(1.0, 1.0);
        }
        CHECK(ks_statistic(xs, std_normal_cdf) > 0.3);
    }
    SUBCASE("self-consistency at the one-percent level") {
        RngStream rng(9);
        const std::size_t n = 100000;
        const double threshold = 1.63 / std::sqrt(double(n));
        int below = 0;
        const int trials = 40;
        for (int t = 0; t < trials; ++t) {
            std::vector<double> xs(n);
            for (double& x : xs) {
                x = rng.normal();
            }
            if (ks_statistic(xs, std_normal_cdf) < threshold) {
                ++below;
            }
        }
        CHECK(below >= trials * 95 / 100);
    }
}

TEST_CASE("distribution functions") {
    CHECK(normal_cdf(0.0, 0.0, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(normal_cdf(1.96, 0.0, 1.0) ==
          doctest::Approx(0.9750021).epsilon(1e-6));
    // chi^2(2) is exponential with mean 2
    CHECK(chi_squared_cdf(2.0, 2.0) ==
          doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
    // chi^2(1) at 1.0 equals P(|Z| < 1)
    CHECK(chi_squared_cdf(1.0, 1.0) ==
          doctest::Approx(0.6826895).epsilon(1e-6));
    CHECK(chi_squared_cdf(0.0, 5.0) == 0.0);
    // large-dof numerical stability
    CHECK(chi_squared_cdf(256.0, 256.0) ==
          doctest::Approx(0.5117545).epsilon(1e-5));
}

TEST_CASE("noise trace accumulation") {
    NoiseDraw draw;
    draw.batch = 4;
    draw.channels = 3;
    draw.shift.assign(12, 0.0);
    draw.scale.assign(12, 1.0);

    SUBCASE("two appends double the length") {
        NoiseTrace trace("layer1", 1);
        record_noise(trace, draw);
        record_noise(trace, draw);
        CHECK(trace.shift_samples().size() == 24);
        CHECK(trace.scale_samples().size() == 24);
    }
    SUBCASE("degenerate draws record the identity noise") {
        NoiseTrace trace("layer1", 1);
        record_noise(trace, draw);
        for (double v : trace.shift_samples()) {
            CHECK(v == 0.0);
        }
        for (double v : trace.scale_samples()) {
            CHECK(v == 1.0);
        }
    }
    SUBCASE("reservoir caps the stored samples but counts everything") {
        NoiseTrace trace("layer1", 2, 42, 30);
        for (int i = 0; i < 10; ++i) {
            record_noise(trace, draw);
        }
        CHECK(trace.shift_samples().size() == 30);
        CHECK(trace.seen(NoiseKind::shift) == 120);
    }
}

TEST_CASE("trace serialization round-trips") {
    RngStream rng(10);
    NoiseTrace trace("layer2", 7);
    NoiseDraw draw;
    draw.batch = 8;
    draw.channels = 2;
    draw.shift.resize(16);
    draw.scale.resize(16);
    for (std::size_t i = 0; i < 16; ++i) {
        draw.shift[i] = rng.normal();
        draw.scale[i] = std::exp(rng.normal());
    }
    record_noise(trace, draw);

    SUBCASE("json") {
        for (const NoiseKind kind : {NoiseKind::shift, NoiseKind::scale}) {
            const TraceDocument doc = trace_document(trace, kind);
            const TraceDocument back =
                trace_document_from_json(trace_document_to_json(doc));
            CHECK(back == doc);
        }
    }
    SUBCASE("csv") {
        const TraceDocument doc = trace_document(trace, NoiseKind::scale);
        std::stringstream ss;
        write_trace_csv(ss, doc);
        const std::vector<TraceDocument> back = read_trace_csv(ss);
        REQUIRE(back.size() == 1);
        CHECK(back[0] == doc);
    }
}

TEST_CASE("effective ghost size fit recovers the generator parameter") {
    RngStream rng(11);
    const std::size_t grid_data[] = {8, 16, 32, 64, 128};
    const std::span<const std::size_t> grid(grid_data);

    std::vector<double> shifts(20000);
    for (double& v : shifts) {
        v = rng.normal(0.0, std::sqrt(1.0 / 32.0));
    }
    CHECK(fit_effective_n(shifts, grid, NoiseKind::shift) == 32);

    std::vector<double> scales(20000);
    for (double& v : scales) {
        v = std::sqrt(rng.chi_squared(32.0) / 32.0);
    }
    CHECK(fit_effective_n(scales, grid, NoiseKind::scale) == 32);
}
