#include "ghostnoise/verify.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

#include "ghostnoise/ghost_noise.hpp"
#include "ghostnoise/noise_analytics.hpp"
#include "ghostnoise/normalization.hpp"
#include "ghostnoise/rng.hpp"
#include "ghostnoise/tensor.hpp"
#include "json.hpp"

namespace ghostnoise {

namespace {

constexpr double kEps = 1e-10;

Tensor4 random_tensor(std::size_t b, std::size_t c, std::size_t h,
                      std::size_t w, RngStream& rng) {
    std::vector<double> data(b * c * h * w);
    for (double& v : data) {
        v = rng.normal(0.5, 1.0);
    }
    return Tensor4(b, c, h, w, std::move(data));
}

// Random tensor whose every ghost-batch channel variance clears the 0.1
// floor required by the decomposition identities.
Tensor4 random_tensor_with_floor(std::size_t b, std::size_t c, std::size_t h,
                                 std::size_t w, std::size_t ghost,
                                 RngStream& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        Tensor4 x = random_tensor(b, c, h, w, rng);
        const PerSampleChannelStats per = spatial_stats(x);
        bool ok = true;
        std::vector<std::size_t> idx(ghost);
        for (std::size_t g = 0; g < b / ghost && ok; ++g) {
            std::iota(idx.begin(), idx.end(), g * ghost);
            for (std::size_t ch = 0; ch < c; ++ch) {
                if (pool_channel(per, ch, idx).var() < 0.1) {
                    ok = false;
                    break;
                }
            }
        }
        if (ok) {
            return x;
        }
    }
    throw std::runtime_error(
        "random_tensor_with_floor: variance floor unreachable");
}

// The deliberately broken double-normalization route: eps is added to the
// standard deviation instead of the variance.
Tensor4 faulty_ghost_batch_norm(const Tensor4& x, std::size_t ghost,
                                double eps) {
    const PerSampleChannelStats per = spatial_stats(x);
    Tensor4 out(x.samples(), x.channels(), x.height(), x.width());
    const std::size_t hw = x.spatial_size();
    std::vector<std::size_t> idx(ghost);
    for (std::size_t g = 0; g < x.samples() / ghost; ++g) {
        std::iota(idx.begin(), idx.end(), g * ghost);
        for (std::size_t c = 0; c < x.channels(); ++c) {
            const PooledChannel p = pool_channel(per, c, idx);
            const double denom = std::sqrt(p.var()) + std::sqrt(eps);
            for (std::size_t n = 0; n < ghost; ++n) {
                const std::size_t b = g * ghost + n;
                for (std::size_t i = 0; i < hw; ++i) {
                    const std::size_t off = c * hw + i;
                    out.sample(b)[off] =
                        (x.sample(b)[off] - p.mean) / denom;
                }
            }
        }
    }
    return out;
}

}  // namespace

std::vector<InvariantResult> run_verification(const VerifyOptions& options) {
    std::vector<InvariantResult> results;
    const std::size_t trials = std::max<std::size_t>(1, options.trials);
    RngStream root(options.seed);

    // Double-normalization equivalence and the deviation-statistics identity.
    {
        RngStream rng = root.fork(1);
        InvariantResult equiv{"double_norm_equivalence", trials, 0.0, 1e-6,
                              false};
        InvariantResult mu{"deviation_identity_mu", trials, 0.0, 1e-6, false};
        InvariantResult sigma{"deviation_identity_sigma", trials, 0.0, 1e-6,
                              false};
        for (std::size_t t = 0; t < trials; ++t) {
            const Tensor4 x = random_tensor_with_floor(32, 4, 2, 2, 8, rng);
            if (options.inject_eps_fault) {
                const Tensor4 direct = ghost_batch_norm(x, 8, kEps);
                const Tensor4 x_hat = batch_norm_train(x, kEps).first;
                const Tensor4 doubled = faulty_ghost_batch_norm(x_hat, 8, kEps);
                for (std::size_t i = 0; i < direct.size(); ++i) {
                    equiv.worst = std::max(
                        equiv.worst, std::abs(direct.values()[i] -
                                              doubled.values()[i]));
                }
            } else {
                const DecompositionResiduals res =
                    gbn_decomposition_residuals(x, 8, kEps);
                equiv.worst = std::max(equiv.worst, res.equivalence);
                mu.worst = std::max(mu.worst, res.mu);
                sigma.worst = std::max(sigma.worst, res.sigma);
            }
        }
        equiv.pass = equiv.worst < equiv.threshold;
        mu.pass = mu.worst < mu.threshold;
        sigma.pass = sigma.worst < sigma.threshold;
        results.push_back(equiv);
        results.push_back(mu);
        results.push_back(sigma);
    }

    // Ghost batch norm output bound: |output| <= sqrt(N). The bound holds in
    // the fully-connected setting (height = width = 1); spatial positions
    // enter the statistics count, so a spatial tensor is bounded by
    // sqrt(N*H*W) instead.
    {
        RngStream rng = root.fork(2);
        InvariantResult r{"gbn_output_bound", trials, 0.0, 1e-6, false};
        const std::size_t ghosts[] = {2, 4, 8, 16};
        for (std::size_t t = 0; t < trials; ++t) {
            const Tensor4 x = random_tensor(32, 4, 1, 1, rng);
            for (std::size_t n : ghosts) {
                const Tensor4 y = ghost_batch_norm(x, n, kEps);
                double max_abs = 0.0;
                for (double v : y.values()) {
                    max_abs = std::max(max_abs, std::abs(v));
                }
                r.worst = std::max(
                    r.worst, max_abs - std::sqrt(static_cast<double>(n)));
            }
        }
        r.pass = r.worst <= r.threshold;
        results.push_back(r);
    }

    // Ghost batch norm post-statistics: every ghost batch of the output is
    // standardized per channel.
    {
        RngStream rng = root.fork(3);
        InvariantResult r{"gbn_post_stats", trials, 0.0, 1e-6, false};
        for (std::size_t t = 0; t < trials; ++t) {
            const Tensor4 x = random_tensor_with_floor(32, 4, 2, 2, 8, rng);
            const Tensor4 y = ghost_batch_norm(x, 8, kEps);
            const PerSampleChannelStats per = spatial_stats(y);
            std::vector<std::size_t> idx(8);
            for (std::size_t g = 0; g < 4; ++g) {
                std::iota(idx.begin(), idx.end(), g * 8);
                for (std::size_t c = 0; c < 4; ++c) {
                    const PooledChannel p = pool_channel(per, c, idx);
                    r.worst = std::max(r.worst, std::abs(p.mean));
                    r.worst = std::max(r.worst, std::abs(p.var() - 1.0));
                }
            }
        }
        r.pass = r.worst < r.threshold;
        results.push_back(r);
    }

    // Exclusive batch norm unboundedness witness: {2, 5, 5} with eps = 1e-3.
    {
        InvariantResult r{"xbn_unbounded_witness", 1, 0.0, 90.0, false};
        const Tensor4 x(3, 1, 1, 1, {2.0, 5.0, 5.0});
        const Tensor4 y = exclusive_batch_norm(x, 3, 1e-3);
        for (double v : y.values()) {
            r.worst = std::max(r.worst, std::abs(v));
        }
        r.pass = r.worst >= r.threshold;
        results.push_back(r);
    }

    // Stop-gradient contract: with the draw held constant the Jacobian of the
    // injection is diagonal with entries 1/scale.
    {
        RngStream rng = root.fork(4);
        InvariantResult r{"gni_stop_gradient_jacobian", trials, 0.0, 1e-6,
                          false};
        for (std::size_t t = 0; t < trials; ++t) {
            Tensor4 x = random_tensor(8, 3, 2, 2, rng);
            GhostNoiseConfig cfg;
            cfg.ghost_size = 4;
            const NoiseDraw draw = make_noise_draw(x, cfg, rng);
            const double h = 1e-6;
            for (std::size_t probe = 0; probe < 4; ++probe) {
                const std::size_t b = rng.uniform_below(8);
                const std::size_t c = rng.uniform_below(3);
                const std::size_t i =
                    (b * 3 + c) * 4 + rng.uniform_below(4);
                const double saved = x.values()[i];
                x.values()[i] = saved + h;
                const double up = apply_noise(x, draw).values()[i];
                x.values()[i] = saved - h;
                const double dn = apply_noise(x, draw).values()[i];
                x.values()[i] = saved;
                const double fd = (up - dn) / (2.0 * h);
                const double expected = 1.0 / draw.scale[b * 3 + c];
                r.worst = std::max(
                    r.worst, std::abs(fd - expected) / std::abs(expected));
            }
        }
        r.pass = r.worst < r.threshold;
        results.push_back(r);
    }

    // Variance decomposition identity.
    {
        RngStream rng = root.fork(5);
        InvariantResult r{"variance_decomposition_identity", trials, 0.0,
                          1e-10, false};
        for (std::size_t t = 0; t < trials; ++t) {
            const Tensor4 x = random_tensor(16, 3, 4, 4, rng);
            const VarianceDecomposition d = variance_decomposition(x);
            const ChannelStats stats = channel_stats(x);
            for (std::size_t c = 0; c < stats.channels(); ++c) {
                r.worst = std::max(
                    r.worst, std::abs(d.inter_sample[c] + d.intra_sample[c] -
                                      stats.var[c]));
            }
        }
        r.pass = r.worst < r.threshold;
        results.push_back(r);
    }

    // Degenerate batch: identical samples make every injection the identity.
    {
        RngStream rng = root.fork(6);
        InvariantResult r{"gni_degenerate_identity", trials, 0.0, 0.0, true};
        for (std::size_t t = 0; t < trials; ++t) {
            std::vector<double> row(3 * 2 * 2);
            for (double& v : row) {
                v = rng.normal(0.0, 2.0);
            }
            std::vector<double> data;
            for (int b = 0; b < 6; ++b) {
                data.insert(data.end(), row.begin(), row.end());
            }
            const Tensor4 x(6, 3, 2, 2, std::move(data));
            for (const NoiseMode mode :
                 {NoiseMode::full, NoiseMode::shift_only,
                  NoiseMode::scale_only}) {
                GhostNoiseConfig cfg;
                cfg.ghost_size = 1 + t % 9;
                cfg.mode = mode;
                const Tensor4 y = gni(x, cfg, rng);
                for (std::size_t i = 0; i < x.size(); ++i) {
                    r.worst = std::max(r.worst, std::abs(y.values()[i] -
                                                         x.values()[i]));
                }
            }
        }
        r.pass = r.worst == 0.0;
        results.push_back(r);
    }

    // Mode composition: shift-only followed by scale-only on one draw equals
    // full mode bit for bit.
    {
        RngStream rng = root.fork(7);
        InvariantResult r{"gni_mode_composition", trials, 0.0, 0.0, true};
        for (std::size_t t = 0; t < trials; ++t) {
            const Tensor4 x = random_tensor(8, 2, 2, 2, rng);
            GhostNoiseConfig cfg;
            cfg.ghost_size = 4;
            const NoiseDraw full = make_noise_draw(x, cfg, rng);
            NoiseDraw shift_only = full;
            std::fill(shift_only.scale.begin(), shift_only.scale.end(), 1.0);
            NoiseDraw scale_only = full;
            std::fill(scale_only.shift.begin(), scale_only.shift.end(), 0.0);
            const Tensor4 composed =
                apply_noise(apply_noise(x, shift_only), scale_only);
            const Tensor4 direct = apply_noise(x, full);
            for (std::size_t i = 0; i < x.size(); ++i) {
                r.worst = std::max(r.worst, std::abs(composed.values()[i] -
                                                     direct.values()[i]));
            }
        }
        r.pass = r.worst == 0.0;
        results.push_back(r);
    }

    // Permutation equivariance of batch normalization.
    {
        RngStream rng = root.fork(8);
        InvariantResult r{"bn_permutation_equivariance", trials, 0.0, 1e-10,
                          false};
        for (std::size_t t = 0; t < trials; ++t) {
            const Tensor4 x = random_tensor(12, 3, 2, 2, rng);
            std::vector<std::size_t> perm(12);
            std::iota(perm.begin(), perm.end(), 0);
            for (std::size_t i = perm.size(); i > 1; --i) {
                std::swap(perm[i - 1], perm[rng.uniform_below(i)]);
            }
            const Tensor4 y = batch_norm_train(x, kEps).first;
            const Tensor4 yp =
                batch_norm_train(gather_samples(x, perm), kEps).first;
            for (std::size_t b = 0; b < 12; ++b) {
                const auto orig = y.sample(perm[b]);
                const auto perm_out = yp.sample(b);
                for (std::size_t i = 0; i < orig.size(); ++i) {
                    r.worst = std::max(r.worst,
                                       std::abs(orig[i] - perm_out[i]));
                }
            }
        }
        r.pass = r.worst < r.threshold;
        results.push_back(r);
    }

    return results;
}

void write_verify_csv(std::ostream& os,
                      std::span<const InvariantResult> results) {
    os << "invariant,trials,worst,threshold,pass\n";
    char buf[40];
    for (const InvariantResult& r : results) {
        std::snprintf(buf, sizeof buf, "%.9g", r.worst);
        os << r.name << ',' << r.trials << ',' << buf << ',';
        std::snprintf(buf, sizeof buf, "%.9g", r.threshold);
        os << buf << ',' << (r.pass ? 1 : 0) << '\n';
    }
}

std::string verify_to_json(std::span<const InvariantResult> results,
                           std::uint64_t seed) {
    nlohmann::json arr = nlohmann::json::array();
    for (const InvariantResult& r : results) {
        arr.push_back({{"invariant", r.name},
                       {"trials", r.trials},
                       {"worst", r.worst},
                       {"threshold", r.threshold},
                       {"pass", r.pass}});
    }
    return nlohmann::json{{"seed", seed}, {"invariants", std::move(arr)}}
        .dump(2);
}

bool all_pass(std::span<const InvariantResult> results) {
    for (const InvariantResult& r : results) {
        if (!r.pass) {
            return false;
        }
    }
    return true;
}

}  // namespace ghostnoise
