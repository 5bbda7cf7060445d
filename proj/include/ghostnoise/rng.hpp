#pragma once

#include <cstdint>

namespace ghostnoise {

/// Counter-based random stream (SplitMix64). A stream is identified by
/// (seed, stream id): equal pairs replay the same sequence bit for bit,
/// distinct stream ids yield statistically independent sequences. Parallel
/// work forks child streams instead of sharing one generator.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64();

    /// Uniform in [0, n), unbiased (rejection sampling). n must be >= 1.
    std::uint64_t uniform_below(std::uint64_t n);

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform01();

    double normal();
    double normal(double mean, double stddev);

    /// Gamma(shape, scale) via the Marsaglia-Tsang squeeze method; O(1) for
    /// any shape, including non-integer and large values.
    double gamma(double shape, double scale);

    double chi_squared(double dof);

    bool bernoulli(double p);

    /// Derive an independent child stream, deterministic in (*this, key).
    RngStream fork(std::uint64_t key) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t draws() const { return counter_; }

    /// Generator name, recorded in run metadata.
    static constexpr const char* algorithm() { return "splitmix64"; }

private:
    double open_unit();  // uniform in (0, 1], safe under log()

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t base_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace ghostnoise
