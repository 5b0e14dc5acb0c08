#pragma once

// Executable property checks over randomized ratio instances. Each check
// reports pass / fail / skipped together with the worst observed error and
// the tolerance it was held to.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "holderpo/holder_core.hpp"

namespace holderpo {

enum class CheckStatus { kPass, kFail, kSkipped };

std::string_view to_string(CheckStatus status);

struct CheckResult {
  std::string name;
  std::string claim;  // the property the check exercises
  CheckStatus status = CheckStatus::kSkipped;
  double worst_error = 0.0;
  double tolerance = 0.0;
  std::size_t evaluated = 0;  // instances on which the hypothesis held
  std::string detail;         // skip reason or first failing case
};

struct VerifyReport {
  std::uint64_t seed = 0;
  std::size_t instance_count = 0;
  std::string digest;  // FNV-1a over the generated instance data, hex
  std::vector<CheckResult> checks;

  bool all_passed() const;
  std::string to_json() const;
  std::string to_text() const;
};

using WeightDerivativeFn =
    std::function<double(const RatioSequence&, const HolderOrder&, std::size_t)>;

struct VerifyOptions {
  // Run only these checks (all when empty). Unknown names throw DomainError.
  std::vector<std::string> only;
  // Generate constant-ratio instances instead of random ones.
  bool uniform_instances = false;
  // Replacement for weight_p_derivative, for harness sensitivity tests.
  WeightDerivativeFn weight_derivative;
};

// Names of all checks in report order.
const std::vector<std::string>& check_names();

// Deterministic in (seed, instance_count, options). Failures are report
// entries; only invalid arguments throw.
VerifyReport check_all(std::uint64_t seed, std::size_t instance_count,
                       const VerifyOptions& options = {});

}  // namespace holderpo
