#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ghostnoise {

/// Dense rank-4 activation tensor, row-major over (sample, channel, height,
/// width). Fully-connected activations use height = width = 1. Immutable use
/// after construction is safe to share across threads.
class Tensor4 {
public:
    /// Zero-filled tensor. All dimensions must be >= 1.
    Tensor4(std::size_t samples, std::size_t channels, std::size_t height,
            std::size_t width);

    /// Adopts `data` (length must equal samples*channels*height*width).
    /// Rejects non-finite elements.
    Tensor4(std::size_t samples, std::size_t channels, std::size_t height,
            std::size_t width, std::vector<double> data);

    /// Same as the adopting constructor but skips the finiteness scan.
    /// For internal hot paths that may legitimately carry overflowed values
    /// (e.g. divergence detection happens at the loss, not per layer).
    static Tensor4 unchecked(std::size_t samples, std::size_t channels,
                             std::size_t height, std::size_t width,
                             std::vector<double> data);

    std::size_t samples() const { return samples_; }
    std::size_t channels() const { return channels_; }
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t spatial_size() const { return height_ * width_; }
    std::size_t size() const { return data_.size(); }

    double operator()(std::size_t b, std::size_t c, std::size_t h,
                      std::size_t w) const {
        return data_[((b * channels_ + c) * height_ + h) * width_ + w];
    }
    double& operator()(std::size_t b, std::size_t c, std::size_t h,
                       std::size_t w) {
        return data_[((b * channels_ + c) * height_ + h) * width_ + w];
    }

    /// Contiguous (channel, height, width) row of one sample.
    std::span<const double> sample(std::size_t b) const;
    std::span<double> sample(std::size_t b);

    const std::vector<double>& values() const { return data_; }
    std::vector<double>& values() { return data_; }

private:
    struct Unchecked {};
    Tensor4(Unchecked, std::size_t samples, std::size_t channels,
            std::size_t height, std::size_t width, std::vector<double> data);

    std::size_t samples_, channels_, height_, width_;
    std::vector<double> data_;
};

/// Per-channel mean and biased variance (divisor = element count).
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> var;

    std::size_t channels() const { return mean.size(); }
};

/// Spatial mean/variance of each (sample, channel) slice; B x C row-major.
struct PerSampleChannelStats {
    std::size_t batch = 0;
    std::size_t channels = 0;
    std::vector<double> mean;
    std::vector<double> var;

    double mean_at(std::size_t b, std::size_t c) const {
        return mean[b * channels + c];
    }
    double var_at(std::size_t b, std::size_t c) const {
        return var[b * channels + c];
    }
};

/// Mean and biased variance per channel over (sample, spatial) axes.
ChannelStats channel_stats(const Tensor4& x);

/// Mean and biased variance over (height, width) for every (sample, channel).
PerSampleChannelStats spatial_stats(const Tensor4& x);

/// Copies the selected samples (duplicates allowed) into a new tensor in the
/// given order. Rejects empty index lists and out-of-range indices.
Tensor4 gather_samples(const Tensor4& x, std::span<const std::size_t> indices);

/// Per-channel stats pooled over a multiset of samples, given their spatial
/// moments. Equivalent to channel_stats of the gathered tensor. The pooled
/// variance decomposes as between-sample plus mean within-sample variance;
/// both parts are exposed for the variance decomposition estimator.
struct PooledChannel {
    double mean = 0.0;
    double between = 0.0;  // biased variance of the per-sample spatial means
    double within = 0.0;   // mean of the per-sample spatial variances
    double var() const { return within + between; }
};

PooledChannel pool_channel(const PerSampleChannelStats& per, std::size_t c,
                           std::span<const std::size_t> indices);
PooledChannel pool_channel(const PerSampleChannelStats& per, std::size_t c);

ChannelStats pooled_stats(const PerSampleChannelStats& per,
                          std::span<const std::size_t> indices);

}  // namespace ghostnoise
