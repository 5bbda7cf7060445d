#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "ghostnoise/tensor.hpp"

namespace ghostnoise {

struct NormConfig {
    double eps = 1e-5;
    std::size_t ghost_size = 0;  // 0 = full batch
    double ema_decay = 0.9;

    void validate() const;
};

/// Exponential-moving-average population statistics for inference.
struct RunningStats {
    std::vector<double> mean;
    std::vector<double> var;
    long update_count = 0;

    bool initialized() const { return update_count > 0; }
};

/// Normalizes each channel by the batch mean and biased variance:
/// (x - mean) / sqrt(var + eps). Returns the batch statistics so callers can
/// fold them into running stats.
std::pair<Tensor4, ChannelStats> batch_norm_train(const Tensor4& x,
                                                  double eps);

/// Normalizes with population statistics; samples are independent.
/// Rejects uninitialized running stats.
Tensor4 batch_norm_infer(const Tensor4& x, const RunningStats& running,
                         double eps);

/// new = decay * old + (1 - decay) * batch, per channel. The first update
/// copies the batch statistics so the average starts unbiased.
RunningStats update_running(RunningStats running, const ChannelStats& batch,
                            double decay);

/// Splits the batch into contiguous ghost batches of `ghost_size` samples and
/// batch-normalizes each with its own statistics. ghost_size must divide the
/// sample count.
Tensor4 ghost_batch_norm(const Tensor4& x, std::size_t ghost_size, double eps);

/// Leave-one-out normalization: within each ghost batch, sample k is
/// normalized by the mean/variance of the other N-1 samples, with divisor
/// (N-1)*H*W. Requires ghost_size >= 2 and ghost_size | samples. The
/// unbounded output range is intentional and surfaced, not clamped.
Tensor4 exclusive_batch_norm(const Tensor4& x, std::size_t ghost_size,
                             double eps);

/// Normalizes each sample by the mean/variance of its own (C, H, W) slice.
Tensor4 layer_norm(const Tensor4& x, double eps);

/// Residuals of the double-normalization decomposition:
///   equivalence: max |GBN(x) - GBN(BN(x))|
///   mu:          max |mu_g - (mu + sigma * mu_hat_g)|
///   sigma:       max |sigma_g - sigma * sigma_hat_g|
/// where hatted statistics are computed on BN(x). Requires eps <= 1e-10 and
/// every ghost-batch channel variance >= 0.1; the floor keeps the finite-eps
/// distortion of the exact identity below 1e-6.
struct DecompositionResiduals {
    double equivalence = 0.0;
    double mu = 0.0;
    double sigma = 0.0;
};

DecompositionResiduals gbn_decomposition_residuals(const Tensor4& x,
                                                   std::size_t ghost_size,
                                                   double eps);

}  // namespace ghostnoise
