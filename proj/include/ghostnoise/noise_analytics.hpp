#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ghostnoise/ghost_noise.hpp"
#include "ghostnoise/rng.hpp"
#include "ghostnoise/tensor.hpp"

namespace ghostnoise {

/// Two-level Gaussian model of one channel of convolutional activations:
/// per-sample means are Normal(0, inter_sample_var) and each of the
/// spatial_size locations is Normal(mean, intra_sample_var). For channels
/// that follow batch normalization the two variances sum to 1.
struct ConvNoiseModel {
    std::size_t ghost_size = 1;    // N
    std::size_t spatial_size = 1;  // I = H * W
    double inter_sample_var = 1.0;  // sigma_B^2
    double intra_sample_var = 0.0;  // sigma_I^2

    void validate() const;
};

/// Variance of the ghost-batch mean: sigma_I^2/(N*I) + sigma_B^2/N.
/// With sigma_I^2 = 0 this reduces to the fully-connected law 1/N
/// (for unit inter-sample variance).
double shift_noise_variance(const ConvNoiseModel& model);

/// Moments of the squared scale noise, modeled as the independent mixture
/// (sigma_I^2/(N*I)) chi^2(N*I) + (sigma_B^2/N) chi^2(N):
/// mean = sigma_I^2 + sigma_B^2, variance = 2 sigma_I^4/(N*I) + 2 sigma_B^4/N.
struct ScaleNoiseMoments {
    double mean = 0.0;
    double variance = 0.0;
};

ScaleNoiseMoments scale_noise_moments(const ConvNoiseModel& model);

/// Draws a synthetic single-channel batch from the generative model.
/// height * width must equal the model's spatial_size.
Tensor4 sample_conv_model(const ConvNoiseModel& model, std::size_t batch,
                          std::size_t height, std::size_t width,
                          RngStream& rng);

/// Per-channel split of the total (biased) channel variance into the
/// inter-sample part (variance of the per-sample spatial means) and the
/// intra-sample part (mean of the per-sample spatial variances). The two sum
/// to the total channel variance.
struct VarianceDecomposition {
    std::vector<double> inter_sample;  // sigma_B^2 per channel
    std::vector<double> intra_sample;  // sigma_I^2 per channel
};

VarianceDecomposition variance_decomposition(const Tensor4& x);  // needs B >= 2

/// Kolmogorov-Smirnov statistic of the samples against a reference CDF:
/// D = max over sorted x_i of max(|i/n - F(x_i)|, |(i-1)/n - F(x_i)|).
double ks_statistic(std::vector<double> samples,
                    const std::function<double(double)>& cdf);

double normal_cdf(double x, double mean, double stddev);

/// Regularized lower incomplete gamma based chi-squared CDF.
double chi_squared_cdf(double x, double dof);

enum class NoiseKind { shift, scale };

/// Accumulates flattened shift/scale noise realizations for one layer and
/// epoch. Bounded by reservoir sampling at `capacity` values per kind so long
/// measurement runs stay in memory.
class NoiseTrace {
public:
    static constexpr std::size_t kDefaultCapacity = 100000;

    NoiseTrace(std::string layer, int epoch,
               std::uint64_t reservoir_seed = 0,
               std::size_t capacity = kDefaultCapacity);

    void add(std::span<const double> shift_values,
             std::span<const double> scale_values);
    void add(const NoiseDraw& draw);

    const std::string& layer() const { return layer_; }
    int epoch() const { return epoch_; }
    const std::vector<double>& shift_samples() const { return shift_.values; }
    const std::vector<double>& scale_samples() const { return scale_.values; }
    std::size_t seen(NoiseKind kind) const;

private:
    struct Reservoir {
        std::vector<double> values;
        std::size_t seen = 0;
    };

    void feed(Reservoir& r, std::span<const double> values);

    std::string layer_;
    int epoch_;
    std::size_t capacity_;
    RngStream rng_;
    Reservoir shift_;
    Reservoir scale_;
};

/// Appends the draw's shift and scale values to the trace.
void record_noise(NoiseTrace& trace, const NoiseDraw& draw);

/// One serialized trace: a single (layer, epoch, kind) sample list.
struct TraceDocument {
    std::string layer;
    int epoch = 0;
    NoiseKind kind = NoiseKind::shift;
    std::vector<double> values;

    bool operator==(const TraceDocument&) const = default;
};

TraceDocument trace_document(const NoiseTrace& trace, NoiseKind kind);
std::string trace_document_to_json(const TraceDocument& doc);
TraceDocument trace_document_from_json(const std::string& text);
void write_trace_csv(std::ostream& os, const TraceDocument& doc);
std::vector<TraceDocument> read_trace_csv(std::istream& is);

/// Grid search for the ghost-batch-size parameter whose fully-connected law
/// best matches the samples (smallest KS distance). Shift samples are
/// compared against Normal(0, 1/N); scale samples are squared and compared
/// against chi^2(N)/N.
std::size_t fit_effective_n(std::span<const double> samples,
                            std::span<const std::size_t> grid,
                            NoiseKind kind);

}  // namespace ghostnoise
