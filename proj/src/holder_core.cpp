#include "holderpo/holder_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "holderpo/errors.hpp"

namespace holderpo {

namespace {

double mean_of(std::span<const double> values) {
  return std::accumulate(values.begin(), values.end(), 0.0) /
         static_cast<double>(values.size());
}

void require_non_empty(std::span<const double> values) {
  if (values.empty()) throw DomainError("ratio sequence is empty");
}

}  // namespace

RatioSequence::RatioSequence(std::vector<double> ratios) : ratios_(std::move(ratios)) {
  if (ratios_.empty()) throw DomainError("ratio sequence is empty");
  logs_.reserve(ratios_.size());
  for (std::size_t t = 0; t < ratios_.size(); ++t) {
    const double r = ratios_[t];
    if (!std::isfinite(r) || !(r > 0.0)) {
      throw DomainError("ratio at index " + std::to_string(t) +
                        " must be strictly positive and finite");
    }
    logs_.push_back(std::log(r));
  }
}

RatioSequence RatioSequence::from_logs(std::vector<double> log_ratios) {
  if (log_ratios.empty()) throw DomainError("ratio sequence is empty");
  RatioSequence seq;
  seq.ratios_.reserve(log_ratios.size());
  for (std::size_t t = 0; t < log_ratios.size(); ++t) {
    const double d = log_ratios[t];
    const double r = std::exp(d);
    if (!std::isfinite(d) || !std::isfinite(r) || !(r > 0.0)) {
      throw DomainError("log-ratio at index " + std::to_string(t) +
                        " does not map to a positive finite ratio");
    }
    seq.ratios_.push_back(r);
  }
  seq.logs_ = std::move(log_ratios);
  return seq;
}

LogRatioSequence::LogRatioSequence(std::vector<double> log_ratios,
                                   std::vector<std::uint8_t> mask)
    : logs_(std::move(log_ratios)), mask_(std::move(mask)) {
  if (logs_.size() != mask_.size()) {
    throw DomainError("log-ratio and mask lengths differ");
  }
  for (std::size_t t = 0; t < logs_.size(); ++t) {
    if (!mask_[t]) continue;
    if (!std::isfinite(logs_[t])) {
      throw DomainError("log-ratio at valid index " + std::to_string(t) + " is not finite");
    }
    ++valid_;
  }
  if (valid_ == 0) throw DomainError("mask has no valid entries");
}

LogRatioSequence::LogRatioSequence(std::vector<double> log_ratios)
    : LogRatioSequence(log_ratios, std::vector<std::uint8_t>(log_ratios.size(), 1)) {}

std::vector<double> LogRatioSequence::valid_log_ratios() const {
  std::vector<double> out;
  out.reserve(valid_);
  for (std::size_t t = 0; t < logs_.size(); ++t) {
    if (mask_[t]) out.push_back(logs_[t]);
  }
  return out;
}

RatioSequence LogRatioSequence::to_ratio_sequence() const {
  return RatioSequence::from_logs(valid_log_ratios());
}

HolderOrder::HolderOrder(double order, double threshold) : p(order), zero_threshold(threshold) {
  if (!std::isfinite(p)) throw DomainError("Hölder order p must be finite");
  if (!(zero_threshold > 0.0) || !std::isfinite(zero_threshold)) {
    throw DomainError("zero_threshold must be positive");
  }
}

bool HolderOrder::is_geometric() const { return std::abs(p) < zero_threshold; }

WeightDistribution::WeightDistribution(std::vector<double> weights) : weights_(std::move(weights)) {
  if (weights_.empty()) throw DomainError("weight distribution is empty");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-10) throw DomainError("weights must sum to one");
}

double log_sum_exp(std::span<const double> values) {
  require_non_empty(values);
  const double m = *std::max_element(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

double log_holder_mean(std::span<const double> log_ratios, const HolderOrder& order) {
  require_non_empty(log_ratios);
  if (order.is_geometric()) return mean_of(log_ratios);

  const double p = order.p;
  const auto n = static_cast<double>(log_ratios.size());
  double max_abs = 0.0;
  for (double d : log_ratios) max_abs = std::max(max_abs, std::abs(p * d));

  // Close to p = 0 the shifted form cancels catastrophically; expm1/log1p keeps
  // full relative precision there.
  if (max_abs < 0.5) {
    double s = 0.0;
    for (double d : log_ratios) s += std::expm1(p * d);
    return std::log1p(s / n) / p;
  }

  double m = -INFINITY;
  for (double d : log_ratios) m = std::max(m, p * d);
  double acc = 0.0;
  for (double d : log_ratios) acc += std::exp(p * d - m);
  return (m + std::log(acc) - std::log(n)) / p;
}

std::vector<double> softmax_weights(std::span<const double> log_ratios, const HolderOrder& order) {
  require_non_empty(log_ratios);
  const std::size_t n = log_ratios.size();
  if (order.is_geometric()) return std::vector<double>(n, 1.0 / static_cast<double>(n));

  std::vector<double> w(n);
  double m = -INFINITY;
  for (double d : log_ratios) m = std::max(m, order.p * d);
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    w[t] = std::exp(order.p * log_ratios[t] - m);
    total += w[t];
  }
  for (double& x : w) x /= total;
  return w;
}

double holder_mean(const RatioSequence& ratios, const HolderOrder& order) {
  return std::exp(log_holder_mean(ratios.log_ratios(), order));
}

double holder_mean_masked(const LogRatioSequence& logs, const HolderOrder& order) {
  const auto valid = logs.valid_log_ratios();
  return std::exp(log_holder_mean(valid, order));
}

WeightDistribution gradient_weights(const RatioSequence& ratios, const HolderOrder& order) {
  return WeightDistribution(softmax_weights(ratios.log_ratios(), order));
}

double weighted_log_mean(const RatioSequence& ratios, const HolderOrder& order) {
  const auto logs = ratios.log_ratios();
  const auto w = softmax_weights(logs, order);
  double mu = 0.0;
  for (std::size_t t = 0; t < logs.size(); ++t) mu += w[t] * logs[t];
  // Rounding can push the convex combination a hair outside the hull.
  const auto [lo, hi] = std::minmax_element(logs.begin(), logs.end());
  return std::clamp(mu, *lo, *hi);
}

double weight_p_derivative(const RatioSequence& ratios, const HolderOrder& order,
                           std::size_t token_index) {
  if (token_index >= ratios.size()) {
    throw DomainError("token index " + std::to_string(token_index) + " out of range");
  }
  const auto logs = ratios.log_ratios();
  const auto w = softmax_weights(logs, order);
  double mu = 0.0;
  for (std::size_t t = 0; t < logs.size(); ++t) mu += w[t] * logs[t];
  return w[token_index] * (logs[token_index] - mu);
}

double mu_p_derivative(const RatioSequence& ratios, const HolderOrder& order) {
  const auto logs = ratios.log_ratios();
  const auto w = softmax_weights(logs, order);
  double mu = 0.0;
  for (std::size_t t = 0; t < logs.size(); ++t) mu += w[t] * logs[t];
  double var = 0.0;
  for (std::size_t t = 0; t < logs.size(); ++t) {
    const double dev = logs[t] - mu;
    var += w[t] * dev * dev;
  }
  return var;
}

double shannon_entropy(const WeightDistribution& weights) {
  double h = 0.0;
  for (double w : weights.weights()) {
    if (w > 0.0) h -= w * std::log(w);
  }
  return h;
}

double entropy_p_derivative(const RatioSequence& ratios, const HolderOrder& order) {
  if (order.is_geometric()) return 0.0;
  return -order.p * mu_p_derivative(ratios, order);
}

double hhi(const WeightDistribution& weights) {
  double s = 0.0;
  for (double w : weights.weights()) s += w * w;
  return s;
}

WeightDistribution limit_weights(const RatioSequence& ratios, LimitDirection direction,
                                 double tie_rel_tolerance) {
  const auto r = ratios.ratios();
  const double extreme = direction == LimitDirection::kPositive
                             ? *std::max_element(r.begin(), r.end())
                             : *std::min_element(r.begin(), r.end());
  const double tol = tie_rel_tolerance * std::abs(extreme);
  std::vector<double> w(r.size(), 0.0);
  std::size_t count = 0;
  for (std::size_t t = 0; t < r.size(); ++t) {
    if (std::abs(r[t] - extreme) <= tol) {
      w[t] = 1.0;
      ++count;
    }
  }
  for (double& x : w) x /= static_cast<double>(count);
  return WeightDistribution(std::move(w));
}

}  // namespace holderpo
