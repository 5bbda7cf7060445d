#include "ghostnoise/dist.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "ghostnoise/ghost_noise.hpp"
#include "ghostnoise/rng.hpp"
#include "json.hpp"

namespace ghostnoise {

namespace {

struct MeanVar {
    double mean = 0.0;
    double var = 0.0;  // biased
};

MeanVar sample_moments(std::span<const double> xs) {
    MeanVar mv;
    double m = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        m += (xs[i] - m) / static_cast<double>(i + 1);
    }
    double v = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double d = xs[i] - m;
        v += (d * d - v) / static_cast<double>(i + 1);
    }
    mv.mean = m;
    mv.var = v;
    return mv;
}

double two_sample_ks(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j]) {
            ++i;
        } else {
            ++j;
        }
        d = std::max(d, std::abs(static_cast<double>(i) / na -
                                 static_cast<double>(j) / nb));
    }
    return d;
}

Histogram make_histogram(const std::string& name,
                         std::span<const double> xs, std::size_t bins) {
    Histogram h;
    h.name = name;
    h.counts.assign(bins, 0);
    if (xs.empty()) {
        return h;
    }
    h.lo = *std::min_element(xs.begin(), xs.end());
    h.hi = *std::max_element(xs.begin(), xs.end());
    const double width = h.hi > h.lo ? (h.hi - h.lo) : 1.0;
    for (double x : xs) {
        std::size_t b = static_cast<std::size_t>(
            (x - h.lo) / width * static_cast<double>(bins));
        if (b >= bins) {
            b = bins - 1;
        }
        ++h.counts[b];
    }
    return h;
}

double rel_error(double empirical, double analytical) {
    if (analytical == 0.0) {
        return std::abs(empirical);
    }
    return std::abs(empirical - analytical) / std::abs(analytical);
}

}  // namespace

DistReport run_dist_check(const DistConfig& cfg) {
    cfg.model.validate();
    if (cfg.draws == 0 || cfg.batch == 0) {
        throw std::invalid_argument("dist: draws and batch must be >= 1");
    }

    RngStream rng(cfg.seed);
    RngStream data_rng = rng.fork(1);
    RngStream ghost_rng = rng.fork(2);
    RngStream ref_rng = rng.fork(3);

    const std::size_t n_ghost = cfg.model.ghost_size;
    const std::size_t spatial = cfg.model.spatial_size;

    std::vector<double> shifts(cfg.draws);
    std::vector<double> s2(cfg.draws);
    std::vector<std::size_t> idx(n_ghost);
    for (std::size_t d = 0; d < cfg.draws; ++d) {
        // Fresh batch per draw so finite-batch artifacts wash out.
        const Tensor4 x =
            sample_conv_model(cfg.model, cfg.batch, spatial, 1, data_rng);
        const PerSampleChannelStats per = spatial_stats(x);
        const PooledChannel batch = pool_channel(per, 0);
        for (std::size_t n = 0; n < n_ghost; ++n) {
            idx[n] = ghost_rng.uniform_below(cfg.batch);
        }
        const PooledChannel ghost = pool_channel(per, 0, idx);
        // The laws describe the ghost statistics of the batch-standardized
        // data, which has mean exactly 0 and variance exactly 1 over the
        // batch: shift = (m - mu)/sigma, and the squared scale is the ghost
        // second moment about mu divided by sigma^2.
        const double raw_shift = ghost.mean - batch.mean;
        shifts[d] = raw_shift / std::sqrt(batch.var());
        s2[d] = (ghost.var() + raw_shift * raw_shift) / batch.var();
    }

    const double ana_shift_var = shift_noise_variance(cfg.model);
    const ScaleNoiseMoments ana_s2 = scale_noise_moments(cfg.model);

    const MeanVar shift_mv = sample_moments(shifts);
    const MeanVar s2_mv = sample_moments(s2);

    const double shift_ks =
        ks_statistic(shifts, [&](double v) {
            return normal_cdf(v, 0.0, std::sqrt(ana_shift_var));
        });

    // Squared-scale KS: exact chi-squared CDF in the fully-connected case,
    // otherwise a two-sample comparison against the exact mixture sampler.
    double s2_ks;
    const bool fully_connected =
        spatial == 1 && cfg.model.intra_sample_var == 0.0;
    if (fully_connected) {
        const double n = static_cast<double>(n_ghost);
        const double sb2 = cfg.model.inter_sample_var;
        s2_ks = ks_statistic(s2, [&](double v) {
            return chi_squared_cdf(v * n / sb2, n);
        });
    } else {
        std::vector<double> ref(cfg.draws);
        const double n = static_cast<double>(n_ghost);
        const double ni = n * static_cast<double>(spatial);
        for (double& v : ref) {
            v = ref_rng.gamma(ni / 2.0,
                              2.0 * cfg.model.intra_sample_var / ni) +
                ref_rng.gamma(n / 2.0, 2.0 * cfg.model.inter_sample_var / n);
        }
        s2_ks = two_sample_ks(s2, std::move(ref));
    }

    DistReport report;
    report.seed = cfg.seed;
    report.shift_mean = shift_mv.mean;
    report.shift_mean_se =
        std::sqrt(shift_mv.var / static_cast<double>(cfg.draws));

    DistRow shift_row;
    shift_row.quantity = "shift_var";
    shift_row.analytical = ana_shift_var;
    shift_row.empirical = shift_mv.var;
    shift_row.rel_error = rel_error(shift_mv.var, ana_shift_var);
    shift_row.ks = shift_ks;
    shift_row.pass = shift_row.rel_error <= cfg.thresholds.shift_var_rtol &&
                     shift_ks <= cfg.thresholds.ks_max;
    report.rows.push_back(shift_row);

    DistRow mean_row;
    mean_row.quantity = "s2_mean";
    mean_row.analytical = ana_s2.mean;
    mean_row.empirical = s2_mv.mean;
    mean_row.rel_error = rel_error(s2_mv.mean, ana_s2.mean);
    mean_row.ks = s2_ks;
    mean_row.pass = mean_row.rel_error <= cfg.thresholds.s2_mean_rtol;
    report.rows.push_back(mean_row);

    DistRow var_row;
    var_row.quantity = "s2_var";
    var_row.analytical = ana_s2.variance;
    var_row.empirical = s2_mv.var;
    var_row.rel_error = rel_error(s2_mv.var, ana_s2.variance);
    var_row.ks = s2_ks;
    var_row.pass = var_row.rel_error <= cfg.thresholds.s2_var_rtol;
    report.rows.push_back(var_row);

    report.histograms.push_back(make_histogram("shift", shifts, cfg.bins));
    report.histograms.push_back(make_histogram("s2", s2, cfg.bins));

    report.pass = true;
    for (const DistRow& r : report.rows) {
        report.pass = report.pass && r.pass;
    }
    return report;
}

void write_dist_csv(std::ostream& os, const DistReport& report) {
    os << "quantity,analytical,empirical,rel_error,ks,pass\n";
    char buf[40];
    for (const DistRow& r : report.rows) {
        os << r.quantity << ',';
        std::snprintf(buf, sizeof buf, "%.9g", r.analytical);
        os << buf << ',';
        std::snprintf(buf, sizeof buf, "%.9g", r.empirical);
        os << buf << ',';
        std::snprintf(buf, sizeof buf, "%.9g", r.rel_error);
        os << buf << ',';
        std::snprintf(buf, sizeof buf, "%.9g", r.ks);
        os << buf << ',' << (r.pass ? 1 : 0) << '\n';
    }
}

void write_histograms_csv(std::ostream& os, const DistReport& report) {
    os << "name,bin,lo,hi,count\n";
    char buf[40];
    for (const Histogram& h : report.histograms) {
        const double width =
            h.counts.empty() ? 0.0
                             : (h.hi - h.lo) /
                                   static_cast<double>(h.counts.size());
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            os << h.name << ',' << b << ',';
            std::snprintf(buf, sizeof buf, "%.9g",
                          h.lo + width * static_cast<double>(b));
            os << buf << ',';
            std::snprintf(buf, sizeof buf, "%.9g",
                          h.lo + width * static_cast<double>(b + 1));
            os << buf << ',' << h.counts[b] << '\n';
        }
    }
}

std::string dist_to_json(const DistReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const DistRow& r : report.rows) {
        rows.push_back({{"quantity", r.quantity},
                        {"analytical", r.analytical},
                        {"empirical", r.empirical},
                        {"rel_error", r.rel_error},
                        {"ks", r.ks},
                        {"pass", r.pass}});
    }
    nlohmann::json hists = nlohmann::json::array();
    for (const Histogram& h : report.histograms) {
        hists.push_back({{"name", h.name},
                         {"lo", h.lo},
                         {"hi", h.hi},
                         {"counts", h.counts}});
    }
    return nlohmann::json{{"seed", report.seed},
                          {"shift_mean", report.shift_mean},
                          {"shift_mean_se", report.shift_mean_se},
                          {"pass", report.pass},
                          {"rows", std::move(rows)},
                          {"histograms", std::move(hists)}}
        .dump(2);
}

}  // namespace ghostnoise
