#include "ghostnoise/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ghostnoise {

namespace {

void check_dims(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
    if (b == 0 || c == 0 || h == 0 || w == 0) {
        throw std::invalid_argument("Tensor4: all dimensions must be >= 1");
    }
}

// Incremental (running) mean. Exact fixed point on repeated values: feeding
// the same number k times yields exactly that number, which the degenerate
// cases (constant channels, duplicated samples) rely on.
class RunningMean {
public:
    void add(double x) {
        ++n_;
        m_ += (x - m_) / static_cast<double>(n_);
    }
    double value() const { return m_; }

private:
    double m_ = 0.0;
    std::size_t n_ = 0;
};

}  // namespace

Tensor4::Tensor4(std::size_t samples, std::size_t channels, std::size_t height,
                 std::size_t width)
    : samples_(samples), channels_(channels), height_(height), width_(width) {
    check_dims(samples, channels, height, width);
    data_.assign(samples * channels * height * width, 0.0);
}

Tensor4::Tensor4(std::size_t samples, std::size_t channels, std::size_t height,
                 std::size_t width, std::vector<double> data)
    : Tensor4(Unchecked{}, samples, channels, height, width, std::move(data)) {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("Tensor4: non-finite element");
        }
    }
}

Tensor4::Tensor4(Unchecked, std::size_t samples, std::size_t channels,
                 std::size_t height, std::size_t width,
                 std::vector<double> data)
    : samples_(samples),
      channels_(channels),
      height_(height),
      width_(width),
      data_(std::move(data)) {
    check_dims(samples, channels, height, width);
    if (data_.size() != samples * channels * height * width) {
        throw std::invalid_argument(
            "Tensor4: data length does not match dimensions");
    }
}

Tensor4 Tensor4::unchecked(std::size_t samples, std::size_t channels,
                           std::size_t height, std::size_t width,
                           std::vector<double> data) {
    return Tensor4(Unchecked{}, samples, channels, height, width,
                   std::move(data));
}

std::span<const double> Tensor4::sample(std::size_t b) const {
    const std::size_t row = channels_ * height_ * width_;
    return {data_.data() + b * row, row};
}

std::span<double> Tensor4::sample(std::size_t b) {
    const std::size_t row = channels_ * height_ * width_;
    return {data_.data() + b * row, row};
}

PerSampleChannelStats spatial_stats(const Tensor4& x) {
    PerSampleChannelStats out;
    out.batch = x.samples();
    out.channels = x.channels();
    out.mean.resize(out.batch * out.channels);
    out.var.resize(out.batch * out.channels);
    const std::size_t hw = x.spatial_size();
    const double* p = x.values().data();
    for (std::size_t b = 0; b < out.batch; ++b) {
        for (std::size_t c = 0; c < out.channels; ++c, p += hw) {
            RunningMean mean;
            for (std::size_t i = 0; i < hw; ++i) {
                mean.add(p[i]);
            }
            const double m = mean.value();
            RunningMean var;
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = p[i] - m;
                var.add(d * d);
            }
            out.mean[b * out.channels + c] = m;
            out.var[b * out.channels + c] = var.value();
        }
    }
    return out;
}

namespace {

template <typename IndexRange>
PooledChannel pool_channel_impl(const PerSampleChannelStats& per,
                                std::size_t c, const IndexRange& indices) {
    const std::size_t stride = per.channels;
    RunningMean mean;
    for (std::size_t b : indices) {
        mean.add(per.mean[b * stride + c]);
    }
    const double m = mean.value();
    RunningMean between;
    RunningMean within;
    for (std::size_t b : indices) {
        const double d = per.mean[b * stride + c] - m;
        between.add(d * d);
        within.add(per.var[b * stride + c]);
    }
    return {m, between.value(), within.value()};
}

struct AllSamples {
    std::size_t count;
    struct Iter {
        std::size_t i;
        std::size_t operator*() const { return i; }
        Iter& operator++() { ++i; return *this; }
        bool operator!=(const Iter& o) const { return i != o.i; }
    };
    Iter begin() const { return {0}; }
    Iter end() const { return {count}; }
};

}  // namespace

PooledChannel pool_channel(const PerSampleChannelStats& per, std::size_t c,
                           std::span<const std::size_t> indices) {
    if (indices.empty()) {
        throw std::invalid_argument("pool_channel: empty sample selection");
    }
    return pool_channel_impl(per, c, indices);
}

PooledChannel pool_channel(const PerSampleChannelStats& per, std::size_t c) {
    if (per.batch == 0) {
        throw std::invalid_argument("pool_channel: no samples");
    }
    return pool_channel_impl(per, c, AllSamples{per.batch});
}

ChannelStats pooled_stats(const PerSampleChannelStats& per,
                          std::span<const std::size_t> indices) {
    ChannelStats out;
    out.mean.resize(per.channels);
    out.var.resize(per.channels);
    for (std::size_t c = 0; c < per.channels; ++c) {
        const PooledChannel p = pool_channel(per, c, indices);
        out.mean[c] = p.mean;
        out.var[c] = p.var();
    }
    return out;
}

ChannelStats channel_stats(const Tensor4& x) {
    const PerSampleChannelStats per = spatial_stats(x);
    ChannelStats out;
    out.mean.resize(per.channels);
    out.var.resize(per.channels);
    for (std::size_t c = 0; c < per.channels; ++c) {
        const PooledChannel p = pool_channel(per, c);
        out.mean[c] = p.mean;
        out.var[c] = p.var();
    }
    return out;
}

Tensor4 gather_samples(const Tensor4& x,
                       std::span<const std::size_t> indices) {
    if (indices.empty()) {
        throw std::invalid_argument(
            "gather_samples: index list must be non-empty");
    }
    for (std::size_t i : indices) {
        if (i >= x.samples()) {
            throw std::out_of_range("gather_samples: sample index " +
                                    std::to_string(i) + " out of range [0, " +
                                    std::to_string(x.samples()) + ")");
        }
    }
    const std::size_t row = x.channels() * x.spatial_size();
    std::vector<double> data(indices.size() * row);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = x.sample(indices[i]);
        std::copy(src.begin(), src.end(), data.begin() + i * row);
    }
    return Tensor4::unchecked(indices.size(), x.channels(), x.height(),
                              x.width(), std::move(data));
}

}  // namespace ghostnoise
