#include "ghostnoise/normalization.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ghostnoise {

namespace {

void check_eps(double eps) {
    if (!(eps > 0.0)) {
        throw std::invalid_argument("normalization: eps must be positive");
    }
}

void check_ghost_divides(const Tensor4& x, std::size_t ghost_size) {
    if (ghost_size == 0 || x.samples() % ghost_size != 0) {
        throw std::invalid_argument(
            "ghost batch size " + std::to_string(ghost_size) +
            " must divide the sample count " + std::to_string(x.samples()));
    }
}

// Normalizes samples [first, first+count) in place with per-channel stats.
void normalize_range(Tensor4& out, const Tensor4& x, std::size_t first,
                     std::size_t count, const std::vector<double>& mean,
                     const std::vector<double>& inv_std) {
    const std::size_t hw = x.spatial_size();
    const std::size_t c_count = x.channels();
    for (std::size_t b = first; b < first + count; ++b) {
        const double* src = x.sample(b).data();
        double* dst = out.sample(b).data();
        for (std::size_t c = 0; c < c_count; ++c) {
            const double m = mean[c];
            const double r = inv_std[c];
            for (std::size_t i = 0; i < hw; ++i) {
                dst[c * hw + i] = (src[c * hw + i] - m) * r;
            }
        }
    }
}

std::vector<double> inv_std_of(const std::vector<double>& var, double eps) {
    std::vector<double> r(var.size());
    for (std::size_t c = 0; c < var.size(); ++c) {
        r[c] = 1.0 / std::sqrt(var[c] + eps);
    }
    return r;
}

}  // namespace

void NormConfig::validate() const {
    check_eps(eps);
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) {
        throw std::invalid_argument("NormConfig: ema_decay must be in (0, 1)");
    }
}

std::pair<Tensor4, ChannelStats> batch_norm_train(const Tensor4& x,
                                                  double eps) {
    check_eps(eps);
    ChannelStats stats = channel_stats(x);
    Tensor4 out(x.samples(), x.channels(), x.height(), x.width());
    normalize_range(out, x, 0, x.samples(), stats.mean,
                    inv_std_of(stats.var, eps));
    return {std::move(out), std::move(stats)};
}

Tensor4 batch_norm_infer(const Tensor4& x, const RunningStats& running,
                         double eps) {
    check_eps(eps);
    if (!running.initialized()) {
        throw std::invalid_argument(
            "batch_norm_infer: running statistics are uninitialized");
    }
    if (running.mean.size() != x.channels()) {
        throw std::invalid_argument("batch_norm_infer: channel mismatch");
    }
    Tensor4 out(x.samples(), x.channels(), x.height(), x.width());
    normalize_range(out, x, 0, x.samples(), running.mean,
                    inv_std_of(running.var, eps));
    return out;
}

RunningStats update_running(RunningStats running, const ChannelStats& batch,
                            double decay) {
    if (!(decay > 0.0 && decay < 1.0)) {
        throw std::invalid_argument("update_running: decay must be in (0, 1)");
    }
    if (running.update_count == 0) {
        running.mean = batch.mean;
        running.var = batch.var;
        running.update_count = 1;
        return running;
    }
    if (running.mean.size() != batch.mean.size()) {
        throw std::invalid_argument("update_running: channel mismatch");
    }
    for (std::size_t c = 0; c < batch.mean.size(); ++c) {
        running.mean[c] = decay * running.mean[c] + (1.0 - decay) * batch.mean[c];
        running.var[c] = decay * running.var[c] + (1.0 - decay) * batch.var[c];
    }
    ++running.update_count;
    return running;
}

Tensor4 ghost_batch_norm(const Tensor4& x, std::size_t ghost_size,
                         double eps) {
    check_eps(eps);
    check_ghost_divides(x, ghost_size);
    const PerSampleChannelStats per = spatial_stats(x);
    const std::size_t groups = x.samples() / ghost_size;
    Tensor4 out(x.samples(), x.channels(), x.height(), x.width());
    std::vector<std::size_t> idx(ghost_size);
    std::vector<double> mean(x.channels());
    std::vector<double> inv_std(x.channels());
    for (std::size_t g = 0; g < groups; ++g) {
        std::iota(idx.begin(), idx.end(), g * ghost_size);
        for (std::size_t c = 0; c < x.channels(); ++c) {
            const PooledChannel p = pool_channel(per, c, idx);
            mean[c] = p.mean;
            inv_std[c] = 1.0 / std::sqrt(p.var() + eps);
        }
        normalize_range(out, x, g * ghost_size, ghost_size, mean, inv_std);
    }
    return out;
}

Tensor4 exclusive_batch_norm(const Tensor4& x, std::size_t ghost_size,
                             double eps) {
    check_eps(eps);
    if (ghost_size < 2) {
        throw std::invalid_argument(
            "exclusive_batch_norm: ghost size must be >= 2 "
            "(leave-one-out statistics are undefined otherwise)");
    }
    check_ghost_divides(x, ghost_size);
    const PerSampleChannelStats per = spatial_stats(x);
    const std::size_t groups = x.samples() / ghost_size;
    const std::size_t hw = x.spatial_size();
    Tensor4 out(x.samples(), x.channels(), x.height(), x.width());
    std::vector<std::size_t> others(ghost_size - 1);
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t base = g * ghost_size;
        for (std::size_t k = 0; k < ghost_size; ++k) {
            std::size_t j = 0;
            for (std::size_t n = 0; n < ghost_size; ++n) {
                if (n != k) {
                    others[j++] = base + n;
                }
            }
            const double* src = x.sample(base + k).data();
            double* dst = out.sample(base + k).data();
            for (std::size_t c = 0; c < x.channels(); ++c) {
                const PooledChannel p = pool_channel(per, c, others);
                const double r = 1.0 / std::sqrt(p.var() + eps);
                for (std::size_t i = 0; i < hw; ++i) {
                    dst[c * hw + i] = (src[c * hw + i] - p.mean) * r;
                }
            }
        }
    }
    return out;
}

Tensor4 layer_norm(const Tensor4& x, double eps) {
    check_eps(eps);
    Tensor4 out(x.samples(), x.channels(), x.height(), x.width());
    const std::size_t row = x.channels() * x.spatial_size();
    for (std::size_t b = 0; b < x.samples(); ++b) {
        const double* src = x.sample(b).data();
        double* dst = out.sample(b).data();
        double m = 0.0;
        for (std::size_t i = 0; i < row; ++i) {
            m += (src[i] - m) / static_cast<double>(i + 1);
        }
        double v = 0.0;
        for (std::size_t i = 0; i < row; ++i) {
            const double d = src[i] - m;
            v += (d * d - v) / static_cast<double>(i + 1);
        }
        const double r = 1.0 / std::sqrt(v + eps);
        for (std::size_t i = 0; i < row; ++i) {
            dst[i] = (src[i] - m) * r;
        }
    }
    return out;
}

DecompositionResiduals gbn_decomposition_residuals(const Tensor4& x,
                                                   std::size_t ghost_size,
                                                   double eps) {
    check_eps(eps);
    if (eps > 1e-10) {
        throw std::invalid_argument(
            "gbn_decomposition_residuals: eps must be <= 1e-10");
    }
    check_ghost_divides(x, ghost_size);

    const PerSampleChannelStats per_x = spatial_stats(x);
    const std::size_t groups = x.samples() / ghost_size;
    std::vector<std::size_t> idx(ghost_size);
    for (std::size_t g = 0; g < groups; ++g) {
        std::iota(idx.begin(), idx.end(), g * ghost_size);
        for (std::size_t c = 0; c < x.channels(); ++c) {
            if (pool_channel(per_x, c, idx).var() < 0.1) {
                throw std::invalid_argument(
                    "gbn_decomposition_residuals: ghost-batch channel "
                    "variance below the 0.1 floor");
            }
        }
    }

    const Tensor4 direct = ghost_batch_norm(x, ghost_size, eps);
    auto [x_hat, stats] = batch_norm_train(x, eps);
    const Tensor4 doubled = ghost_batch_norm(x_hat, ghost_size, eps);

    DecompositionResiduals res;
    for (std::size_t i = 0; i < direct.size(); ++i) {
        res.equivalence = std::max(
            res.equivalence,
            std::abs(direct.values()[i] - doubled.values()[i]));
    }

    const PerSampleChannelStats per_hat = spatial_stats(x_hat);
    for (std::size_t g = 0; g < groups; ++g) {
        std::iota(idx.begin(), idx.end(), g * ghost_size);
        for (std::size_t c = 0; c < x.channels(); ++c) {
            const PooledChannel raw = pool_channel(per_x, c, idx);
            const PooledChannel hat = pool_channel(per_hat, c, idx);
            const double sigma = std::sqrt(stats.var[c] + eps);
            res.mu = std::max(
                res.mu,
                std::abs(raw.mean - (stats.mean[c] + sigma * hat.mean)));
            res.sigma = std::max(
                res.sigma,
                std::abs(std::sqrt(raw.var()) - sigma * std::sqrt(hat.var())));
        }
    }
    return res;
}

}  // namespace ghostnoise
