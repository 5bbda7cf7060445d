#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ghostnoise/noise_analytics.hpp"

namespace ghostnoise {

struct DistThresholds {
    double shift_var_rtol = 0.05;
    double s2_mean_rtol = 0.02;
    double s2_var_rtol = 0.10;
    double ks_max = 0.02;
};

/// Configuration of one distribution probe. The fully-connected case is the
/// model with spatial_size = 1, inter_sample_var = 1, intra_sample_var = 0.
struct DistConfig {
    ConvNoiseModel model;
    std::size_t draws = 100000;
    std::size_t batch = 256;
    std::uint64_t seed = 1;
    std::size_t bins = 50;
    DistThresholds thresholds;
};

struct DistRow {
    std::string quantity;
    double analytical = 0.0;
    double empirical = 0.0;
    double rel_error = 0.0;
    double ks = 0.0;  // negative = not applicable to this row
    bool pass = false;
};

struct Histogram {
    std::string name;
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::uint64_t> counts;
};

struct DistReport {
    std::vector<DistRow> rows;
    std::vector<Histogram> histograms;
    double shift_mean = 0.0;      // extra moments for the mean-zero check
    double shift_mean_se = 0.0;
    bool pass = false;
    std::uint64_t seed = 0;
};

/// Monte-Carlo comparison of ghost-noise draws against the analytical shift
/// and squared-scale laws. Each draw resamples a fresh batch from the
/// generative model, draws one ghost batch from it, and records the shift
/// noise m - mu and the ghost second moment about the batch mean (the
/// quantity the chi-squared mixture law describes exactly).
DistReport run_dist_check(const DistConfig& cfg);

void write_dist_csv(std::ostream& os, const DistReport& report);
void write_histograms_csv(std::ostream& os, const DistReport& report);
std::string dist_to_json(const DistReport& report);

}  // namespace ghostnoise
