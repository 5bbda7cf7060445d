#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ghostnoise {

struct VerifyOptions {
    std::size_t trials = 1000;
    std::uint64_t seed = 20240901;
    /// Test-only fault: pulls eps out of the square root in the
    /// double-normalization route, which must make the equivalence
    /// invariant fail. Used to check that the verifier can actually fail.
    bool inject_eps_fault = false;
};

struct InvariantResult {
    std::string name;
    std::size_t trials = 0;
    double worst = 0.0;      // worst-case residual or measured value
    double threshold = 0.0;  // the bound it is compared against
    bool pass = false;
};

/// Runs every registered algebraic invariant with the configured trial count.
std::vector<InvariantResult> run_verification(const VerifyOptions& options);

void write_verify_csv(std::ostream& os,
                      std::span<const InvariantResult> results);
std::string verify_to_json(std::span<const InvariantResult> results,
                           std::uint64_t seed);
bool all_pass(std::span<const InvariantResult> results);

}  // namespace ghostnoise
