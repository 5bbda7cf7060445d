#pragma once

#include <cstddef>
#include <variant>
#include <vector>

#include "ghostnoise/rng.hpp"
#include "ghostnoise/tensor.hpp"

namespace ghostnoise {

enum class NoiseMode { full, shift_only, scale_only };
enum class Sampling { empirical, analytical };

/// Granularity for dropout-style injectors.
enum class Granularity { elementwise, channelwise };

/// Granularity of the analytical draws: one (shift, scale) pair per channel
/// shared across the batch, or an independent pair per (sample, channel).
enum class AgniGranularity { per_channel, per_sample_channel };

enum class Mode { train, eval };

struct GhostNoiseConfig {
    std::size_t ghost_size = 1;  // unconstrained by the batch size
    double eps = 1e-3;
    NoiseMode mode = NoiseMode::full;
    Sampling sampling = Sampling::empirical;

    void validate() const;
};

/// Raw resampled statistics: one ghost batch drawn with replacement for each
/// output sample. mean/var are B x C row-major; indices holds B consecutive
/// groups of ghost_size sample indices in draw order.
struct GhostStats {
    std::size_t batch = 0;
    std::size_t channels = 0;
    std::size_t ghost_size = 0;
    std::vector<double> mean;
    std::vector<double> var;
    std::vector<std::size_t> indices;
};

/// A realized noise draw: shift = m - mu and
/// scale = sqrt((s^2 + eps) / (sigma^2 + eps)), both B x C row-major.
/// The draw is a constant under differentiation.
struct NoiseDraw {
    std::size_t batch = 0;
    std::size_t channels = 0;
    std::size_t ghost_size = 0;
    std::vector<double> shift;
    std::vector<double> scale;
    std::vector<std::size_t> ghost_indices;
};

/// For each output sample independently, draws `ghost_size` indices uniformly
/// with replacement from [0, B) and computes the biased channel statistics of
/// that ghost batch (over the gathered samples and all spatial positions).
/// Gradients never flow through this computation.
GhostStats draw_ghost_stats(const Tensor4& x, std::size_t ghost_size,
                            RngStream& rng);

/// Draws ghost statistics and converts them into shift/scale noise per the
/// configured mode (shift_only forces scale to 1, scale_only forces shift
/// to 0).
NoiseDraw make_noise_draw(const Tensor4& x, const GhostNoiseConfig& cfg,
                          RngStream& rng);

/// output[b,c,h,w] = (x[b,c,h,w] - shift[b,c]) / scale[b,c].
Tensor4 apply_noise(const Tensor4& x, const NoiseDraw& draw);

/// Ghost noise injection: draw + apply in one step (training behavior; at
/// inference the injector is the identity, see apply_injector).
Tensor4 gni(const Tensor4& x, const GhostNoiseConfig& cfg, RngStream& rng);

/// Analytical ghost noise on (approximately) standardized inputs: draws
/// shift ~ Normal(0, 1/N) and squared scale v ~ chi^2(N)/N, and returns
/// (x - shift) / sqrt(v).
Tensor4 agni(const Tensor4& x_hat, std::size_t ghost_size, RngStream& rng,
             AgniGranularity granularity = AgniGranularity::per_sample_channel);

/// Multiplies by t ~ Normal(1, p/(1-p)), the Gaussian relaxation of dropout.
Tensor4 gaussian_dropout(const Tensor4& x, double p, RngStream& rng,
                         Granularity granularity = Granularity::elementwise);

/// Inverted Bernoulli dropout: zeroes units with probability p and scales
/// survivors by 1/(1-p), so inference is the identity.
Tensor4 bernoulli_dropout(const Tensor4& x, double p, RngStream& rng,
                          Granularity granularity = Granularity::elementwise);

/// Elementwise additive Gaussian noise of fixed standard deviation.
Tensor4 eagn(const Tensor4& x, double sigma, RngStream& rng);

// ---------------------------------------------------------------------------
// Injector configuration, shared with the training harness.

struct NoInjector {};

struct GniInjector {
    GhostNoiseConfig cfg;
};

struct AgniInjector {
    std::size_t ghost_size = 1;
    AgniGranularity granularity = AgniGranularity::per_sample_channel;
};

struct GaussianDropoutInjector {
    double p = 0.0;
    Granularity granularity = Granularity::elementwise;
};

struct BernoulliDropoutInjector {
    double p = 0.0;
    Granularity granularity = Granularity::elementwise;
};

struct EagnInjector {
    double sigma = 0.0;
    bool post_affine = false;  // placement relative to the learned gain/bias
};

using Injector = std::variant<NoInjector, GniInjector, AgniInjector,
                              GaussianDropoutInjector,
                              BernoulliDropoutInjector, EagnInjector>;

/// Applies the configured injector in train mode; in eval mode every injector
/// is the identity.
Tensor4 apply_injector(const Tensor4& x, const Injector& injector, Mode mode,
                       RngStream& rng);

}  // namespace ghostnoise
