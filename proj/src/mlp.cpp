#include "ghostnoise/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ghostnoise {

namespace {

// Running mean/variance over selected rows, vectorized across columns. The
// per-column arithmetic matches pool_channel exactly (same incremental-mean
// updates in the same order), so matrix-side statistics are bitwise equal to
// the Tensor4 path.
void row_mean_var(const Matrix& z, const std::size_t* idx, std::size_t count,
                  double* mean, double* var) {
    const std::size_t c_count = z.cols;
    std::fill(mean, mean + c_count, 0.0);
    for (std::size_t n = 0; n < count; ++n) {
        const double* r = z.row(idx[n]);
        const double k = static_cast<double>(n + 1);
        for (std::size_t c = 0; c < c_count; ++c) {
            mean[c] += (r[c] - mean[c]) / k;
        }
    }
    std::fill(var, var + c_count, 0.0);
    for (std::size_t n = 0; n < count; ++n) {
        const double* r = z.row(idx[n]);
        const double k = static_cast<double>(n + 1);
        for (std::size_t c = 0; c < c_count; ++c) {
            const double d = r[c] - mean[c];
            var[c] += (d * d - var[c]) / k;
        }
    }
}

void row_mean_var_all(const Matrix& z, double* mean, double* var) {
    const std::size_t c_count = z.cols;
    std::fill(mean, mean + c_count, 0.0);
    for (std::size_t n = 0; n < z.rows; ++n) {
        const double* r = z.row(n);
        const double k = static_cast<double>(n + 1);
        for (std::size_t c = 0; c < c_count; ++c) {
            mean[c] += (r[c] - mean[c]) / k;
        }
    }
    std::fill(var, var + c_count, 0.0);
    for (std::size_t n = 0; n < z.rows; ++n) {
        const double* r = z.row(n);
        const double k = static_cast<double>(n + 1);
        for (std::size_t c = 0; c < c_count; ++c) {
            const double d = r[c] - mean[c];
            var[c] += (d * d - var[c]) / k;
        }
    }
}

void colsum(const Matrix& m, std::vector<double>& out) {
    out.assign(m.cols, 0.0);
    for (std::size_t b = 0; b < m.rows; ++b) {
        const double* r = m.row(b);
        for (std::size_t c = 0; c < m.cols; ++c) {
            out[c] += r[c];
        }
    }
}

void validate_injector(const Injector& injector) {
    std::visit(
        [](const auto& inj) {
            using T = std::decay_t<decltype(inj)>;
            if constexpr (std::is_same_v<T, GniInjector>) {
                inj.cfg.validate();
            } else if constexpr (std::is_same_v<T, AgniInjector>) {
                if (inj.ghost_size == 0) {
                    throw std::invalid_argument(
                        "AgniInjector: ghost_size must be >= 1");
                }
            } else if constexpr (std::is_same_v<T, GaussianDropoutInjector> ||
                                 std::is_same_v<T, BernoulliDropoutInjector>) {
                if (!(inj.p >= 0.0 && inj.p < 1.0)) {
                    throw std::invalid_argument("dropout: p must be in [0, 1)");
                }
            } else if constexpr (std::is_same_v<T, EagnInjector>) {
                if (inj.sigma < 0.0) {
                    throw std::invalid_argument("eagn: sigma must be >= 0");
                }
            }
        },
        injector);
}

bool injector_is_post_affine(const Injector& injector) {
    if (const auto* e = std::get_if<EagnInjector>(&injector)) {
        return e->post_affine;
    }
    return false;
}

// Draws the injector noise for a (B x C) activation matrix. The realization
// is frozen into the cache: backward and replayed forwards treat it as a
// constant.
LayerDraw draw_layer_noise(const Injector& injector, const Matrix& z,
                           RngStream& rng) {
    const std::size_t b_count = z.rows;
    const std::size_t c_count = z.cols;
    return std::visit(
        [&](const auto& inj) -> LayerDraw {
            using T = std::decay_t<decltype(inj)>;
            if constexpr (std::is_same_v<T, NoInjector>) {
                return NoDraw{};
            } else if constexpr (std::is_same_v<T, GniInjector>) {
                const GhostNoiseConfig& cfg = inj.cfg;
                AffineDraw d;
                d.shift.resize(b_count * c_count);
                d.scale.resize(b_count * c_count);
                std::vector<double> mu(c_count), bvar(c_count);
                row_mean_var_all(z, mu.data(), bvar.data());
                std::vector<std::size_t> idx(cfg.ghost_size);
                std::vector<double> gm(c_count), gv(c_count);
                for (std::size_t b = 0; b < b_count; ++b) {
                    for (std::size_t n = 0; n < cfg.ghost_size; ++n) {
                        idx[n] = rng.uniform_below(b_count);
                    }
                    row_mean_var(z, idx.data(), idx.size(), gm.data(),
                                 gv.data());
                    for (std::size_t c = 0; c < c_count; ++c) {
                        const std::size_t i = b * c_count + c;
                        const double shift = gm[c] - mu[c];
                        const double scale = std::sqrt((gv[c] + cfg.eps) /
                                                       (bvar[c] + cfg.eps));
                        d.shift[i] =
                            cfg.mode == NoiseMode::scale_only ? 0.0 : shift;
                        d.scale[i] =
                            cfg.mode == NoiseMode::shift_only ? 1.0 : scale;
                    }
                }
                return d;
            } else if constexpr (std::is_same_v<T, AgniInjector>) {
                AffineDraw d;
                d.per_channel =
                    inj.granularity == AgniGranularity::per_channel;
                const std::size_t draws =
                    d.per_channel ? c_count : b_count * c_count;
                d.shift.resize(draws);
                d.scale.resize(draws);
                const double n = static_cast<double>(inj.ghost_size);
                for (std::size_t i = 0; i < draws; ++i) {
                    d.shift[i] = rng.normal(0.0, std::sqrt(1.0 / n));
                    d.scale[i] = std::sqrt(rng.chi_squared(n) / n);
                }
                return d;
            } else if constexpr (std::is_same_v<T, GaussianDropoutInjector>) {
                FactorDraw d;
                d.factor.resize(b_count * c_count);
                const double stddev = std::sqrt(inj.p / (1.0 - inj.p));
                for (double& f : d.factor) {
                    f = rng.normal(1.0, stddev);
                }
                return d;
            } else if constexpr (std::is_same_v<T, BernoulliDropoutInjector>) {
                FactorDraw d;
                d.factor.resize(b_count * c_count);
                const double keep = 1.0 / (1.0 - inj.p);
                for (double& f : d.factor) {
                    f = rng.bernoulli(inj.p) ? 0.0 : keep;
                }
                return d;
            } else {
                static_assert(std::is_same_v<T, EagnInjector>);
                AdditiveDraw d;
                d.eta.resize(b_count * c_count);
                for (double& e : d.eta) {
                    e = rng.normal(0.0, inj.sigma);
                }
                return d;
            }
        },
        injector);
}

Matrix apply_layer_draw(const Matrix& x, const LayerDraw& draw) {
    Matrix out(x.rows, x.cols);
    std::visit(
        [&](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, NoDraw>) {
                out = x;
            } else if constexpr (std::is_same_v<T, AffineDraw>) {
                for (std::size_t b = 0; b < x.rows; ++b) {
                    for (std::size_t c = 0; c < x.cols; ++c) {
                        const std::size_t i =
                            d.per_channel ? c : b * x.cols + c;
                        out(b, c) = (x(b, c) - d.shift[i]) / d.scale[i];
                    }
                }
            } else if constexpr (std::is_same_v<T, FactorDraw>) {
                for (std::size_t i = 0; i < x.size(); ++i) {
                    out.data[i] = x.data[i] * d.factor[i];
                }
            } else {
                static_assert(std::is_same_v<T, AdditiveDraw>);
                for (std::size_t i = 0; i < x.size(); ++i) {
                    out.data[i] = x.data[i] + d.eta[i];
                }
            }
        },
        draw);
    return out;
}

// d(input) of the frozen-draw injector: the same constant-coefficient map as
// the forward pass.
void backprop_layer_draw(Matrix& grad, const LayerDraw& draw) {
    std::visit(
        [&](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, AffineDraw>) {
                for (std::size_t b = 0; b < grad.rows; ++b) {
                    for (std::size_t c = 0; c < grad.cols; ++c) {
                        const std::size_t i =
                            d.per_channel ? c : b * grad.cols + c;
                        grad(b, c) /= d.scale[i];
                    }
                }
            } else if constexpr (std::is_same_v<T, FactorDraw>) {
                for (std::size_t i = 0; i < grad.size(); ++i) {
                    grad.data[i] *= d.factor[i];
                }
            }
            // NoDraw and AdditiveDraw pass gradients through unchanged.
        },
        draw);
}

void norm_forward(const LayerSpec& ls, const RunningStats& running, Mode mode,
                  bool batch_stats_for_eval, LayerCache& lc) {
    const Matrix& z = lc.pre_norm;
    const std::size_t b_count = z.rows;
    const std::size_t c_count = z.cols;

    if (ls.norm == NormKind::none) {
        lc.normalized = z;
        return;
    }

    if (ls.norm == NormKind::layer_norm) {
        lc.normalized = Matrix(b_count, c_count);
        lc.inv_std.resize(b_count);
        for (std::size_t b = 0; b < b_count; ++b) {
            const double* src = z.row(b);
            double* dst = lc.normalized.row(b);
            double m = 0.0;
            for (std::size_t c = 0; c < c_count; ++c) {
                m += (src[c] - m) / static_cast<double>(c + 1);
            }
            double v = 0.0;
            for (std::size_t c = 0; c < c_count; ++c) {
                const double d = src[c] - m;
                v += (d * d - v) / static_cast<double>(c + 1);
            }
            const double r = 1.0 / std::sqrt(v + ls.norm_eps);
            lc.inv_std[b] = r;
            for (std::size_t c = 0; c < c_count; ++c) {
                dst[c] = (src[c] - m) * r;
            }
        }
        return;
    }

    // Batch-statistic family.
    const bool use_batch_stats = mode == Mode::train || batch_stats_for_eval;
    if (!use_batch_stats) {
        if (!running.initialized()) {
            throw std::invalid_argument(
                "mlp_forward: eval mode requires initialized running "
                "statistics");
        }
        lc.normalized = Matrix(b_count, c_count);
        lc.inv_std.resize(c_count);
        for (std::size_t c = 0; c < c_count; ++c) {
            lc.inv_std[c] = 1.0 / std::sqrt(running.var[c] + ls.norm_eps);
        }
        for (std::size_t b = 0; b < b_count; ++b) {
            const double* src = z.row(b);
            double* dst = lc.normalized.row(b);
            for (std::size_t c = 0; c < c_count; ++c) {
                dst[c] = (src[c] - running.mean[c]) * lc.inv_std[c];
            }
        }
        return;
    }

    // Full-batch statistics always feed the running averages, whichever
    // normalizer is active.
    lc.batch_stats.mean.resize(c_count);
    lc.batch_stats.var.resize(c_count);
    row_mean_var_all(z, lc.batch_stats.mean.data(), lc.batch_stats.var.data());
    lc.has_batch_stats = true;

    if (ls.norm == NormKind::batch_norm) {
        lc.normalized = Matrix(b_count, c_count);
        lc.inv_std.resize(c_count);
        for (std::size_t c = 0; c < c_count; ++c) {
            lc.inv_std[c] =
                1.0 / std::sqrt(lc.batch_stats.var[c] + ls.norm_eps);
        }
        for (std::size_t b = 0; b < b_count; ++b) {
            const double* src = z.row(b);
            double* dst = lc.normalized.row(b);
            for (std::size_t c = 0; c < c_count; ++c) {
                dst[c] = (src[c] - lc.batch_stats.mean[c]) * lc.inv_std[c];
            }
        }
        return;
    }

    const std::size_t ghost = ls.ghost_size;
    if (ghost == 0 || b_count % ghost != 0) {
        throw std::invalid_argument(
            "mlp_forward: ghost size " + std::to_string(ghost) +
            " must divide the batch size " + std::to_string(b_count));
    }
    const std::size_t groups = b_count / ghost;

    if (ls.norm == NormKind::ghost_batch_norm) {
        lc.normalized = Matrix(b_count, c_count);
        lc.inv_std.resize(groups * c_count);
        std::vector<std::size_t> idx(ghost);
        std::vector<double> mean(c_count), var(c_count);
        for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t n = 0; n < ghost; ++n) {
                idx[n] = g * ghost + n;
            }
            row_mean_var(z, idx.data(), ghost, mean.data(), var.data());
            for (std::size_t c = 0; c < c_count; ++c) {
                lc.inv_std[g * c_count + c] =
                    1.0 / std::sqrt(var[c] + ls.norm_eps);
            }
            for (std::size_t n = 0; n < ghost; ++n) {
                const std::size_t b = g * ghost + n;
                const double* src = z.row(b);
                double* dst = lc.normalized.row(b);
                for (std::size_t c = 0; c < c_count; ++c) {
                    dst[c] = (src[c] - mean[c]) * lc.inv_std[g * c_count + c];
                }
            }
        }
        return;
    }

    // Exclusive (leave-one-out) batch norm.
    if (ghost < 2) {
        throw std::invalid_argument(
            "mlp_forward: exclusive batch norm needs ghost size >= 2");
    }
    lc.normalized = Matrix(b_count, c_count);
    lc.inv_std.resize(b_count * c_count);
    lc.norm_mean.resize(b_count * c_count);
    std::vector<std::size_t> others(ghost - 1);
    std::vector<double> mean(c_count), var(c_count);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t k = 0; k < ghost; ++k) {
            std::size_t j = 0;
            for (std::size_t n = 0; n < ghost; ++n) {
                if (n != k) {
                    others[j++] = g * ghost + n;
                }
            }
            row_mean_var(z, others.data(), others.size(), mean.data(),
                         var.data());
            const std::size_t b = g * ghost + k;
            const double* src = z.row(b);
            double* dst = lc.normalized.row(b);
            for (std::size_t c = 0; c < c_count; ++c) {
                const double r = 1.0 / std::sqrt(var[c] + ls.norm_eps);
                lc.inv_std[b * c_count + c] = r;
                lc.norm_mean[b * c_count + c] = mean[c];
                dst[c] = (src[c] - mean[c]) * r;
            }
        }
    }
}

// dz from dn for the batch-statistic normalizers (train mode).
Matrix norm_backward(const LayerSpec& ls, const LayerCache& lc,
                     const Matrix& dn) {
    const std::size_t b_count = dn.rows;
    const std::size_t c_count = dn.cols;

    if (ls.norm == NormKind::none) {
        return dn;
    }

    if (ls.norm == NormKind::layer_norm) {
        Matrix dz(b_count, c_count);
        for (std::size_t b = 0; b < b_count; ++b) {
            const double* g = dn.row(b);
            const double* n = lc.normalized.row(b);
            double* out = dz.row(b);
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < c_count; ++c) {
                s1 += g[c];
                s2 += g[c] * n[c];
            }
            const double inv = 1.0 / static_cast<double>(c_count);
            const double r = lc.inv_std[b];
            for (std::size_t c = 0; c < c_count; ++c) {
                out[c] = r * (g[c] - s1 * inv - n[c] * s2 * inv);
            }
        }
        return dz;
    }

    if (ls.norm == NormKind::batch_norm) {
        Matrix dz(b_count, c_count);
        std::vector<double> s1(c_count, 0.0), s2(c_count, 0.0);
        for (std::size_t b = 0; b < b_count; ++b) {
            const double* g = dn.row(b);
            const double* n = lc.normalized.row(b);
            for (std::size_t c = 0; c < c_count; ++c) {
                s1[c] += g[c];
                s2[c] += g[c] * n[c];
            }
        }
        const double inv = 1.0 / static_cast<double>(b_count);
        for (std::size_t b = 0; b < b_count; ++b) {
            const double* g = dn.row(b);
            const double* n = lc.normalized.row(b);
            double* out = dz.row(b);
            for (std::size_t c = 0; c < c_count; ++c) {
                out[c] =
                    lc.inv_std[c] * (g[c] - s1[c] * inv - n[c] * s2[c] * inv);
            }
        }
        return dz;
    }

    if (ls.norm == NormKind::ghost_batch_norm) {
        Matrix dz(b_count, c_count);
        const std::size_t ghost = ls.ghost_size;
        const std::size_t groups = b_count / ghost;
        std::vector<double> s1(c_count), s2(c_count);
        for (std::size_t g = 0; g < groups; ++g) {
            std::fill(s1.begin(), s1.end(), 0.0);
            std::fill(s2.begin(), s2.end(), 0.0);
            for (std::size_t n = 0; n < ghost; ++n) {
                const std::size_t b = g * ghost + n;
                const double* gb = dn.row(b);
                const double* nb = lc.normalized.row(b);
                for (std::size_t c = 0; c < c_count; ++c) {
                    s1[c] += gb[c];
                    s2[c] += gb[c] * nb[c];
                }
            }
            const double inv = 1.0 / static_cast<double>(ghost);
            for (std::size_t n = 0; n < ghost; ++n) {
                const std::size_t b = g * ghost + n;
                const double* gb = dn.row(b);
                const double* nb = lc.normalized.row(b);
                double* out = dz.row(b);
                for (std::size_t c = 0; c < c_count; ++c) {
                    const double r = lc.inv_std[g * c_count + c];
                    out[c] = r * (gb[c] - s1[c] * inv - nb[c] * s2[c] * inv);
                }
            }
        }
        return dz;
    }

    // Exclusive batch norm. For sample j and channel c within a ghost batch,
    //   dz_j = dn_j r_j - [ (P - p_j) + x_j (Q - q_j) - (T - q_j mu_j) ]/(N-1)
    // with p_k = dn_k r_k, q_k = dn_k r_k^3 (x_k - mu_k), T = sum q_k mu_k.
    // The own-sample path is dn_j r_j because sample j is excluded from its
    // own statistics.
    Matrix dz(b_count, c_count);
    const std::size_t ghost = ls.ghost_size;
    const std::size_t groups = b_count / ghost;
    const double inv = 1.0 / static_cast<double>(ghost - 1);
    std::vector<double> p(ghost), q(ghost), t(ghost);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t c = 0; c < c_count; ++c) {
            double sp = 0.0, sq = 0.0, st = 0.0;
            for (std::size_t n = 0; n < ghost; ++n) {
                const std::size_t b = g * ghost + n;
                const std::size_t i = b * c_count + c;
                const double r = lc.inv_std[i];
                const double centered =
                    lc.pre_norm(b, c) - lc.norm_mean[i];
                p[n] = dn(b, c) * r;
                q[n] = dn(b, c) * r * r * r * centered;
                t[n] = q[n] * lc.norm_mean[i];
                sp += p[n];
                sq += q[n];
                st += t[n];
            }
            for (std::size_t n = 0; n < ghost; ++n) {
                const std::size_t b = g * ghost + n;
                const std::size_t i = b * c_count + c;
                const double x = lc.pre_norm(b, c);
                dz(b, c) = dn(b, c) * lc.inv_std[i] -
                           ((sp - p[n]) + x * (sq - q[n]) - (st - t[n])) * inv;
            }
        }
    }
    return dz;
}

}  // namespace

void MlpSpec::validate() const {
    if (input_dim == 0) {
        throw std::invalid_argument("MlpSpec: input_dim must be >= 1");
    }
    if (classes < 2) {
        throw std::invalid_argument("MlpSpec: need at least two classes");
    }
    for (std::size_t w : hidden_widths) {
        if (w == 0) {
            throw std::invalid_argument("MlpSpec: hidden widths must be >= 1");
        }
    }
    if (!layers.empty() && layers.size() != hidden_widths.size()) {
        throw std::invalid_argument(
            "MlpSpec: layers must match hidden_widths (or be empty)");
    }
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) {
        throw std::invalid_argument("MlpSpec: ema_decay must be in (0, 1)");
    }
    for (const LayerSpec& ls : layers) {
        if (!(ls.norm_eps > 0.0)) {
            throw std::invalid_argument("LayerSpec: norm_eps must be positive");
        }
        if (ls.norm == NormKind::ghost_batch_norm && ls.ghost_size == 0) {
            throw std::invalid_argument(
                "LayerSpec: ghost_batch_norm needs ghost_size >= 1");
        }
        if (ls.norm == NormKind::exclusive_batch_norm && ls.ghost_size < 2) {
            throw std::invalid_argument(
                "LayerSpec: exclusive_batch_norm needs ghost_size >= 2");
        }
        validate_injector(ls.injector);
    }
}

bool MlpSpec::has_batch_stat_layer() const {
    for (const LayerSpec& ls : layers) {
        if (ls.norm == NormKind::batch_norm ||
            ls.norm == NormKind::ghost_batch_norm ||
            ls.norm == NormKind::exclusive_batch_norm) {
            return true;
        }
    }
    return false;
}

MlpParams zeros_like(const MlpParams& p) {
    MlpParams z;
    z.hidden.reserve(p.hidden.size());
    for (const LayerParams& lp : p.hidden) {
        LayerParams out;
        out.w = Matrix(lp.w.rows, lp.w.cols);
        out.bias.assign(lp.bias.size(), 0.0);
        out.gain.assign(lp.gain.size(), 0.0);
        out.offset.assign(lp.offset.size(), 0.0);
        z.hidden.push_back(std::move(out));
    }
    z.out_w = Matrix(p.out_w.rows, p.out_w.cols);
    z.out_bias.assign(p.out_bias.size(), 0.0);
    return z;
}

void visit_param_buffers(
    MlpParams& p,
    const std::function<void(std::vector<double>&, bool)>& fn) {
    for (LayerParams& lp : p.hidden) {
        fn(lp.w.data, true);
        fn(lp.bias, false);
        fn(lp.gain, false);
        fn(lp.offset, false);
    }
    fn(p.out_w.data, true);
    fn(p.out_bias, false);
}

void visit_param_buffers(
    const MlpParams& p,
    const std::function<void(const std::vector<double>&, bool)>& fn) {
    for (const LayerParams& lp : p.hidden) {
        fn(lp.w.data, true);
        fn(lp.bias, false);
        fn(lp.gain, false);
        fn(lp.offset, false);
    }
    fn(p.out_w.data, true);
    fn(p.out_bias, false);
}

std::size_t param_count(const MlpParams& p) {
    std::size_t n = 0;
    visit_param_buffers(
        p, [&](const std::vector<double>& buf, bool) { n += buf.size(); });
    return n;
}

MlpModel make_mlp(const MlpSpec& spec, RngStream& rng) {
    spec.validate();
    MlpModel model;
    model.spec = spec;
    if (model.spec.layers.empty()) {
        model.spec.layers.assign(spec.hidden_widths.size(), LayerSpec{});
    }
    std::size_t fan_in = spec.input_dim;
    for (std::size_t width : spec.hidden_widths) {
        LayerParams lp;
        lp.w = Matrix(fan_in, width);
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : lp.w.data) {
            v = rng.normal(0.0, stddev);
        }
        lp.bias.assign(width, 0.0);
        lp.gain.assign(width, 1.0);
        lp.offset.assign(width, 0.0);
        model.params.hidden.push_back(std::move(lp));
        fan_in = width;
    }
    model.params.out_w = Matrix(fan_in, spec.classes);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : model.params.out_w.data) {
        v = rng.normal(0.0, stddev);
    }
    model.params.out_bias.assign(spec.classes, 0.0);
    model.running.resize(spec.hidden_widths.size());
    return model;
}

ForwardResult mlp_forward(const MlpModel& model, const Matrix& x, Mode mode,
                          RngStream& rng, const ForwardCache* replay,
                          bool batch_stats_for_eval) {
    if (x.cols != model.spec.input_dim) {
        throw std::invalid_argument(
            "mlp_forward: input has " + std::to_string(x.cols) +
            " features, expected " + std::to_string(model.spec.input_dim));
    }
    if (replay && replay->layers.size() != model.spec.layers.size()) {
        throw std::invalid_argument("mlp_forward: replay cache shape mismatch");
    }

    ForwardCache cache;
    cache.mode = mode;
    cache.batch_stats_for_eval = batch_stats_for_eval;
    cache.input = x;
    cache.layers.resize(model.spec.layers.size());

    const Matrix* h = &cache.input;
    for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
        const LayerSpec& ls = model.spec.layers[l];
        const LayerParams& lp = model.params.hidden[l];
        LayerCache& lc = cache.layers[l];
        lc.input = *h;

        matmul(lc.input, lp.w, lc.pre_norm);
        for (std::size_t b = 0; b < lc.pre_norm.rows; ++b) {
            double* r = lc.pre_norm.row(b);
            for (std::size_t c = 0; c < lc.pre_norm.cols; ++c) {
                r[c] += lp.bias[c];
            }
        }

        norm_forward(ls, model.running[l], mode, batch_stats_for_eval, lc);

        const bool inject = mode == Mode::train &&
                            !std::holds_alternative<NoInjector>(ls.injector);
        if (inject) {
            lc.draw_post_affine = injector_is_post_affine(ls.injector);
            if (replay) {
                lc.draw = replay->layers[l].draw;
            } else {
                lc.draw = draw_layer_noise(ls.injector, lc.normalized, rng);
            }
        }

        if (inject && !lc.draw_post_affine) {
            lc.post_injector = apply_layer_draw(lc.normalized, lc.draw);
        } else {
            lc.post_injector = lc.normalized;
        }

        Matrix affine(lc.post_injector.rows, lc.post_injector.cols);
        for (std::size_t b = 0; b < affine.rows; ++b) {
            const double* src = lc.post_injector.row(b);
            double* dst = affine.row(b);
            for (std::size_t c = 0; c < affine.cols; ++c) {
                dst[c] = lp.gain[c] * src[c] + lp.offset[c];
            }
        }

        if (inject && lc.draw_post_affine) {
            lc.pre_relu = apply_layer_draw(affine, lc.draw);
        } else {
            lc.pre_relu = std::move(affine);
        }

        Matrix activated(lc.pre_relu.rows, lc.pre_relu.cols);
        for (std::size_t i = 0; i < activated.size(); ++i) {
            const double v = lc.pre_relu.data[i];
            activated.data[i] = v > 0.0 ? v : 0.0;
        }
        if (l + 1 < model.spec.layers.size()) {
            cache.layers[l + 1].input = std::move(activated);
            h = &cache.layers[l + 1].input;
        } else {
            cache.final_hidden = std::move(activated);
            h = &cache.final_hidden;
        }
    }

    matmul(*h, model.params.out_w, cache.logits);
    for (std::size_t b = 0; b < cache.logits.rows; ++b) {
        double* r = cache.logits.row(b);
        for (std::size_t c = 0; c < cache.logits.cols; ++c) {
            r[c] += model.params.out_bias[c];
        }
    }

    return {cache.logits, std::move(cache)};
}

ForwardResult forward(const MlpModel& model, const Tensor4& x, Mode mode,
                      RngStream& rng) {
    if (x.height() != 1 || x.width() != 1) {
        throw std::invalid_argument("forward: expected height = width = 1");
    }
    Matrix m(x.samples(), x.channels(), x.values());
    return mlp_forward(model, m, mode, rng);
}

double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                             Matrix* dlogits) {
    if (labels.size() != logits.rows) {
        throw std::invalid_argument("softmax_cross_entropy: label count");
    }
    const std::size_t k_count = logits.cols;
    if (dlogits) {
        *dlogits = Matrix(logits.rows, k_count);
    }
    double loss = 0.0;
    const double inv_batch = 1.0 / static_cast<double>(logits.rows);
    for (std::size_t b = 0; b < logits.rows; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= k_count) {
            throw std::invalid_argument("softmax_cross_entropy: bad label");
        }
        const double* r = logits.row(b);
        double m = r[0];
        for (std::size_t k = 1; k < k_count; ++k) {
            m = std::max(m, r[k]);
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) {
            sum += std::exp(r[k] - m);
        }
        const double lse = m + std::log(sum);
        loss += lse - r[y];
        if (dlogits) {
            double* d = dlogits->row(b);
            for (std::size_t k = 0; k < k_count; ++k) {
                const double p = std::exp(r[k] - lse);
                d[k] = (p - (static_cast<int>(k) == y ? 1.0 : 0.0)) * inv_batch;
            }
        }
    }
    return loss * inv_batch;
}

double accuracy(const Matrix& logits, std::span<const int> labels) {
    if (labels.size() != logits.rows) {
        throw std::invalid_argument("accuracy: label count mismatch");
    }
    std::size_t hits = 0;
    for (std::size_t b = 0; b < logits.rows; ++b) {
        const double* r = logits.row(b);
        std::size_t best = 0;
        for (std::size_t k = 1; k < logits.cols; ++k) {
            if (r[k] > r[best]) {
                best = k;
            }
        }
        if (static_cast<int>(best) == labels[b]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(logits.rows);
}

BackwardResult backward(const MlpModel& model, const ForwardCache& cache,
                        std::span<const int> labels) {
    if (cache.mode != Mode::train) {
        throw std::invalid_argument("backward: needs a train-mode cache");
    }
    BackwardResult res;
    res.grads = zeros_like(model.params);

    Matrix dlogits;
    res.loss = softmax_cross_entropy(cache.logits, labels, &dlogits);

    matmul_tn(cache.final_hidden, dlogits, res.grads.out_w);
    colsum(dlogits, res.grads.out_bias);
    Matrix dh;
    matmul_nt(dlogits, model.params.out_w, dh);

    for (std::size_t l = model.spec.layers.size(); l-- > 0;) {
        const LayerSpec& ls = model.spec.layers[l];
        const LayerParams& lp = model.params.hidden[l];
        const LayerCache& lc = cache.layers[l];
        LayerParams& lg = res.grads.hidden[l];

        // ReLU
        for (std::size_t i = 0; i < dh.size(); ++i) {
            if (!(lc.pre_relu.data[i] > 0.0)) {
                dh.data[i] = 0.0;
            }
        }
        // A post-affine additive draw back-propagates unchanged.

        // gain/offset
        for (std::size_t b = 0; b < dh.rows; ++b) {
            const double* g = dh.row(b);
            const double* j = lc.post_injector.row(b);
            for (std::size_t c = 0; c < dh.cols; ++c) {
                lg.gain[c] += g[c] * j[c];
                lg.offset[c] += g[c];
            }
        }
        for (std::size_t b = 0; b < dh.rows; ++b) {
            double* g = dh.row(b);
            for (std::size_t c = 0; c < dh.cols; ++c) {
                g[c] *= lp.gain[c];
            }
        }

        if (!lc.draw_post_affine) {
            backprop_layer_draw(dh, lc.draw);
        }

        Matrix dz = norm_backward(ls, lc, dh);

        matmul_tn(lc.input, dz, lg.w);
        colsum(dz, lg.bias);
        matmul_nt(dz, lp.w, dh);
    }

    res.input_grad = std::move(dh);
    return res;
}

void sgd_step(MlpParams& params, const MlpParams& grads, MlpParams& velocity,
              double lr, double momentum, double weight_decay) {
    if (params.hidden.size() != grads.hidden.size() ||
        params.hidden.size() != velocity.hidden.size()) {
        throw std::invalid_argument("sgd_step: layer count mismatch");
    }
    auto apply = [&](std::vector<double>& w, const std::vector<double>& g,
                     std::vector<double>& v, bool decay) {
        if (w.size() != g.size() || w.size() != v.size()) {
            throw std::invalid_argument("sgd_step: buffer shape mismatch");
        }
        const double wd = decay ? weight_decay : 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = momentum * v[i] + (g[i] + wd * w[i]);
            w[i] -= lr * v[i];
        }
    };
    for (std::size_t l = 0; l < params.hidden.size(); ++l) {
        apply(params.hidden[l].w.data, grads.hidden[l].w.data,
              velocity.hidden[l].w.data, true);
        apply(params.hidden[l].bias, grads.hidden[l].bias,
              velocity.hidden[l].bias, false);
        apply(params.hidden[l].gain, grads.hidden[l].gain,
              velocity.hidden[l].gain, false);
        apply(params.hidden[l].offset, grads.hidden[l].offset,
              velocity.hidden[l].offset, false);
    }
    apply(params.out_w.data, grads.out_w.data, velocity.out_w.data, true);
    apply(params.out_bias, grads.out_bias, velocity.out_bias, false);
}

double cosine_lr(std::size_t step, std::size_t total_steps,
                 std::size_t warmup_steps, double base_lr) {
    if (step >= total_steps) {
        throw std::invalid_argument("cosine_lr: step must be < total_steps");
    }
    if (warmup_steps >= total_steps) {
        throw std::invalid_argument(
            "cosine_lr: warmup_steps must be < total_steps");
    }
    if (step < warmup_steps) {
        return base_lr * static_cast<double>(step) /
               static_cast<double>(warmup_steps);
    }
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace ghostnoise
