#pragma once

// Hölder (power) mean of importance ratios, the induced gradient weights
// W_t(p) = r_t^p / sum_k r_k^p, and their p-derivatives. Every power is
// evaluated in log-space with a max shift so |p| in the tens is safe.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace holderpo {

// Strictly positive, finite token ratios for one rollout. The natural logs are
// kept alongside so sequences built from log-ratios never round-trip through exp.
class RatioSequence {
 public:
  explicit RatioSequence(std::vector<double> ratios);
  static RatioSequence from_logs(std::vector<double> log_ratios);

  std::span<const double> ratios() const { return ratios_; }
  std::span<const double> log_ratios() const { return logs_; }
  std::size_t size() const { return ratios_.size(); }

 private:
  RatioSequence() = default;

  std::vector<double> ratios_;
  std::vector<double> logs_;
};

// Per-token log-ratios with a validity mask; masked entries are ignored.
class LogRatioSequence {
 public:
  LogRatioSequence(std::vector<double> log_ratios, std::vector<std::uint8_t> mask);
  // All positions valid.
  explicit LogRatioSequence(std::vector<double> log_ratios);

  std::span<const double> log_ratios() const { return logs_; }
  std::span<const std::uint8_t> mask() const { return mask_; }
  std::size_t valid_count() const { return valid_; }
  // Log-ratios at valid positions, in order.
  std::vector<double> valid_log_ratios() const;
  RatioSequence to_ratio_sequence() const;

 private:
  std::vector<double> logs_;
  std::vector<std::uint8_t> mask_;
  std::size_t valid_ = 0;
};

inline constexpr double kDefaultZeroThreshold = 1e-6;

// Order p of the mean. |p| < zero_threshold selects the geometric branch.
struct HolderOrder {
  double p = 0.0;
  double zero_threshold = kDefaultZeroThreshold;

  HolderOrder() = default;
  explicit HolderOrder(double order, double threshold = kDefaultZeroThreshold);

  bool is_geometric() const;
};

// Non-negative weights summing to one (within 1e-10).
class WeightDistribution {
 public:
  explicit WeightDistribution(std::vector<double> weights);

  std::span<const double> weights() const { return weights_; }
  double operator[](std::size_t i) const { return weights_[i]; }
  std::size_t size() const { return weights_.size(); }

 private:
  std::vector<double> weights_;
};

enum class LimitDirection { kPositive, kNegative };

// Log-space primitives shared by the objectives.
double log_sum_exp(std::span<const double> values);
double log_holder_mean(std::span<const double> log_ratios, const HolderOrder& order);
// softmax(p * log_ratios); uniform on the geometric branch.
std::vector<double> softmax_weights(std::span<const double> log_ratios, const HolderOrder& order);

double holder_mean(const RatioSequence& ratios, const HolderOrder& order);
double holder_mean_masked(const LogRatioSequence& logs, const HolderOrder& order);

WeightDistribution gradient_weights(const RatioSequence& ratios, const HolderOrder& order);

// mu(p) = sum_t W_t(p) log r_t.
double weighted_log_mean(const RatioSequence& ratios, const HolderOrder& order);

// dW_t/dp = W_t (log r_t - mu(p)).
double weight_p_derivative(const RatioSequence& ratios, const HolderOrder& order,
                           std::size_t token_index);

// dmu/dp = Var_W(log r) >= 0.
double mu_p_derivative(const RatioSequence& ratios, const HolderOrder& order);

double shannon_entropy(const WeightDistribution& weights);

// dH/dp = -p Var_W(log r).
double entropy_p_derivative(const RatioSequence& ratios, const HolderOrder& order);

// Herfindahl-Hirschman index, sum_t W_t^2.
double hhi(const WeightDistribution& weights);

// p -> +inf (resp. -inf) limit: uniform over the argmax (argmin) ratio set.
WeightDistribution limit_weights(const RatioSequence& ratios, LimitDirection direction,
                                 double tie_rel_tolerance = 1e-12);

}  // namespace holderpo
