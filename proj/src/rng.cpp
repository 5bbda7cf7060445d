#include "ghostnoise/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ghostnoise {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// SplitMix64 finalizer; bijective on 64-bit values.
std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), base_(mix(mix(seed + kGolden) + stream)) {}

std::uint64_t RngStream::next_u64() {
    ++counter_;
    return mix(base_ + counter_ * kGolden);
}

std::uint64_t RngStream::uniform_below(std::uint64_t n) {
    if (n == 0) {
        throw std::invalid_argument("uniform_below: n must be positive");
    }
    const std::uint64_t reject_below = (-n) % n;  // 2^64 mod n
    std::uint64_t x = next_u64();
    while (x < reject_below) {
        x = next_u64();
    }
    return x % n;
}

double RngStream::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::open_unit() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; the second variate is cached and replayed on the next call.
    const double u1 = open_unit();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

double RngStream::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

double RngStream::gamma(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0)) {
        throw std::invalid_argument("gamma: shape and scale must be positive");
    }
    if (shape < 1.0) {
        const double boosted = gamma(shape + 1.0, scale);
        return boosted * std::pow(open_unit(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x;
        double v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = open_unit();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) {
            return d * v * scale;
        }
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
            return d * v * scale;
        }
    }
}

double RngStream::chi_squared(double dof) {
    if (!(dof > 0.0)) {
        throw std::invalid_argument("chi_squared: dof must be positive");
    }
    return gamma(0.5 * dof, 2.0);
}

bool RngStream::bernoulli(double p) {
    if (p < 0.0 || p > 1.0) {
        throw std::invalid_argument("bernoulli: p must be in [0, 1]");
    }
    return uniform01() < p;
}

RngStream RngStream::fork(std::uint64_t key) const {
    return RngStream(seed_, mix(stream_ + kGolden) + key);
}

}  // namespace ghostnoise
