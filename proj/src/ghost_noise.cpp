#include "ghostnoise/ghost_noise.hpp"

#include <cmath>
#include <stdexcept>

namespace ghostnoise {

namespace {

void check_dropout_p(double p) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw std::invalid_argument("dropout: p must be in [0, 1)");
    }
}

GhostStats draw_ghost_stats_from(const PerSampleChannelStats& per,
                                 std::size_t ghost_size, RngStream& rng) {
    GhostStats out;
    out.batch = per.batch;
    out.channels = per.channels;
    out.ghost_size = ghost_size;
    out.mean.resize(per.batch * per.channels);
    out.var.resize(per.batch * per.channels);
    out.indices.resize(per.batch * ghost_size);
    std::vector<std::size_t> idx(ghost_size);
    for (std::size_t b = 0; b < per.batch; ++b) {
        for (std::size_t n = 0; n < ghost_size; ++n) {
            idx[n] = rng.uniform_below(per.batch);
            out.indices[b * ghost_size + n] = idx[n];
        }
        for (std::size_t c = 0; c < per.channels; ++c) {
            const PooledChannel p = pool_channel(per, c, idx);
            out.mean[b * per.channels + c] = p.mean;
            out.var[b * per.channels + c] = p.var();
        }
    }
    return out;
}

}  // namespace

void GhostNoiseConfig::validate() const {
    if (ghost_size == 0) {
        throw std::invalid_argument("GhostNoiseConfig: ghost_size must be >= 1");
    }
    if (!(eps > 0.0)) {
        throw std::invalid_argument("GhostNoiseConfig: eps must be positive");
    }
}

GhostStats draw_ghost_stats(const Tensor4& x, std::size_t ghost_size,
                            RngStream& rng) {
    if (ghost_size == 0) {
        throw std::invalid_argument("draw_ghost_stats: ghost_size must be >= 1");
    }
    return draw_ghost_stats_from(spatial_stats(x), ghost_size, rng);
}

NoiseDraw make_noise_draw(const Tensor4& x, const GhostNoiseConfig& cfg,
                          RngStream& rng) {
    cfg.validate();
    const PerSampleChannelStats per = spatial_stats(x);
    // Batch statistics through the same pooling path as the ghost statistics:
    // when all samples are identical both sides come out bitwise equal, so the
    // injected noise vanishes exactly.
    std::vector<double> mu(per.channels);
    std::vector<double> var(per.channels);
    for (std::size_t c = 0; c < per.channels; ++c) {
        const PooledChannel p = pool_channel(per, c);
        mu[c] = p.mean;
        var[c] = p.var();
    }
    const GhostStats ghost = draw_ghost_stats_from(per, cfg.ghost_size, rng);

    NoiseDraw draw;
    draw.batch = per.batch;
    draw.channels = per.channels;
    draw.ghost_size = cfg.ghost_size;
    draw.ghost_indices = ghost.indices;
    draw.shift.resize(per.batch * per.channels);
    draw.scale.resize(per.batch * per.channels);
    for (std::size_t b = 0; b < per.batch; ++b) {
        for (std::size_t c = 0; c < per.channels; ++c) {
            const std::size_t i = b * per.channels + c;
            const double shift = ghost.mean[i] - mu[c];
            const double scale =
                std::sqrt((ghost.var[i] + cfg.eps) / (var[c] + cfg.eps));
            draw.shift[i] = cfg.mode == NoiseMode::scale_only ? 0.0 : shift;
            draw.scale[i] = cfg.mode == NoiseMode::shift_only ? 1.0 : scale;
        }
    }
    return draw;
}

Tensor4 apply_noise(const Tensor4& x, const NoiseDraw& draw) {
    if (draw.batch != x.samples() || draw.channels != x.channels()) {
        throw std::invalid_argument("apply_noise: draw shape mismatch");
    }
    const std::size_t hw = x.spatial_size();
    std::vector<double> out(x.size());
    const double* src = x.values().data();
    for (std::size_t b = 0; b < x.samples(); ++b) {
        for (std::size_t c = 0; c < x.channels(); ++c) {
            const std::size_t i = b * x.channels() + c;
            const double shift = draw.shift[i];
            const double scale = draw.scale[i];
            const std::size_t base = i * hw;
            for (std::size_t s = 0; s < hw; ++s) {
                out[base + s] = (src[base + s] - shift) / scale;
            }
        }
    }
    return Tensor4::unchecked(x.samples(), x.channels(), x.height(), x.width(),
                              std::move(out));
}

Tensor4 gni(const Tensor4& x, const GhostNoiseConfig& cfg, RngStream& rng) {
    return apply_noise(x, make_noise_draw(x, cfg, rng));
}

Tensor4 agni(const Tensor4& x_hat, std::size_t ghost_size, RngStream& rng,
             AgniGranularity granularity) {
    if (ghost_size == 0) {
        throw std::invalid_argument("agni: ghost_size must be >= 1");
    }
    const double n = static_cast<double>(ghost_size);
    const std::size_t b_count = x_hat.samples();
    const std::size_t c_count = x_hat.channels();
    const std::size_t hw = x_hat.spatial_size();

    const std::size_t draws =
        granularity == AgniGranularity::per_channel ? c_count
                                                    : b_count * c_count;
    std::vector<double> shift(draws);
    std::vector<double> inv_scale(draws);
    for (std::size_t i = 0; i < draws; ++i) {
        shift[i] = rng.normal(0.0, std::sqrt(1.0 / n));
        inv_scale[i] = 1.0 / std::sqrt(rng.chi_squared(n) / n);
    }

    std::vector<double> out(x_hat.size());
    const double* src = x_hat.values().data();
    for (std::size_t b = 0; b < b_count; ++b) {
        for (std::size_t c = 0; c < c_count; ++c) {
            const std::size_t d =
                granularity == AgniGranularity::per_channel ? c
                                                            : b * c_count + c;
            const std::size_t base = (b * c_count + c) * hw;
            for (std::size_t s = 0; s < hw; ++s) {
                out[base + s] = (src[base + s] - shift[d]) * inv_scale[d];
            }
        }
    }
    return Tensor4::unchecked(b_count, c_count, x_hat.height(), x_hat.width(),
                              std::move(out));
}

Tensor4 gaussian_dropout(const Tensor4& x, double p, RngStream& rng,
                         Granularity granularity) {
    check_dropout_p(p);
    const double stddev = std::sqrt(p / (1.0 - p));
    std::vector<double> out(x.size());
    const double* src = x.values().data();
    const std::size_t hw = x.spatial_size();
    const std::size_t slices = x.samples() * x.channels();
    for (std::size_t i = 0; i < slices; ++i) {
        double t = 0.0;
        if (granularity == Granularity::channelwise) {
            t = rng.normal(1.0, stddev);
        }
        for (std::size_t s = 0; s < hw; ++s) {
            if (granularity == Granularity::elementwise) {
                t = rng.normal(1.0, stddev);
            }
            out[i * hw + s] = src[i * hw + s] * t;
        }
    }
    return Tensor4::unchecked(x.samples(), x.channels(), x.height(), x.width(),
                              std::move(out));
}

Tensor4 bernoulli_dropout(const Tensor4& x, double p, RngStream& rng,
                          Granularity granularity) {
    check_dropout_p(p);
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> out(x.size());
    const double* src = x.values().data();
    const std::size_t hw = x.spatial_size();
    const std::size_t slices = x.samples() * x.channels();
    for (std::size_t i = 0; i < slices; ++i) {
        double factor = 0.0;
        if (granularity == Granularity::channelwise) {
            factor = rng.bernoulli(p) ? 0.0 : keep_scale;
        }
        for (std::size_t s = 0; s < hw; ++s) {
            if (granularity == Granularity::elementwise) {
                factor = rng.bernoulli(p) ? 0.0 : keep_scale;
            }
            out[i * hw + s] = src[i * hw + s] * factor;
        }
    }
    return Tensor4::unchecked(x.samples(), x.channels(), x.height(), x.width(),
                              std::move(out));
}

Tensor4 eagn(const Tensor4& x, double sigma, RngStream& rng) {
    if (sigma < 0.0) {
        throw std::invalid_argument("eagn: sigma must be >= 0");
    }
    std::vector<double> out(x.size());
    const double* src = x.values().data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = src[i] + rng.normal(0.0, sigma);
    }
    return Tensor4::unchecked(x.samples(), x.channels(), x.height(), x.width(),
                              std::move(out));
}

Tensor4 apply_injector(const Tensor4& x, const Injector& injector, Mode mode,
                       RngStream& rng) {
    if (mode == Mode::eval) {
        return x;
    }
    return std::visit(
        [&](const auto& inj) -> Tensor4 {
            using T = std::decay_t<decltype(inj)>;
            if constexpr (std::is_same_v<T, NoInjector>) {
                return x;
            } else if constexpr (std::is_same_v<T, GniInjector>) {
                return gni(x, inj.cfg, rng);
            } else if constexpr (std::is_same_v<T, AgniInjector>) {
                return agni(x, inj.ghost_size, rng, inj.granularity);
            } else if constexpr (std::is_same_v<T, GaussianDropoutInjector>) {
                return gaussian_dropout(x, inj.p, rng, inj.granularity);
            } else if constexpr (std::is_same_v<T, BernoulliDropoutInjector>) {
                return bernoulli_dropout(x, inj.p, rng, inj.granularity);
            } else {
                static_assert(std::is_same_v<T, EagnInjector>);
                return eagn(x, inj.sigma, rng);
            }
        },
        injector);
}

}  // namespace ghostnoise
