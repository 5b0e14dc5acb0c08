#include "holderpo/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <string>

#include "holderpo/errors.hpp"

namespace holderpo {

namespace {

// Shortest round-trip decimal form, so CSV output is stable across runs.
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  for (int prec = 1; prec < 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return s;
}

}  // namespace

Envelope ratio_envelopes(const GroupBatch& batch) {
  return ratio_envelopes(std::span<const GroupBatch>(&batch, 1));
}

Envelope ratio_envelopes(std::span<const GroupBatch> batches) {
  Envelope env{-INFINITY, INFINITY};
  bool any = false;
  for (const auto& group : batches) {
    for (const auto& r : group.rollouts) {
      r.validate();
      for (std::size_t t = 0; t < r.length(); ++t) {
        if (!r.mask[t]) continue;
        const double d = r.new_logprobs[t] - r.old_logprobs[t];
        env.max = std::max(env.max, d);
        env.min = std::min(env.min, d);
        any = true;
      }
    }
  }
  if (!any) throw DomainError("envelope of an empty batch");
  return env;
}

std::vector<WeightProfileRow> weight_profile(const RatioSequence& ratios,
                                             std::span<const double> p_grid) {
  std::vector<WeightProfileRow> rows;
  rows.reserve(p_grid.size());
  for (double p : p_grid) {
    const auto w = gradient_weights(ratios, HolderOrder(p));
    rows.push_back({p, shannon_entropy(w), hhi(w)});
  }
  return rows;
}

std::vector<VCurveRow> v_curve(std::span<const GroupBatch> samples, std::span<const double> p_grid) {
  std::vector<VCurveRow> rows;
  rows.reserve(p_grid.size());
  for (double p : p_grid) rows.push_back({p, variance_bound_term(samples, HolderOrder(p))});
  return rows;
}

double tail_mean(std::span<const UpdateMetrics> updates, double UpdateMetrics::*field,
                 double fraction) {
  if (updates.empty()) throw DomainError("no updates to summarise");
  const auto n = updates.size();
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * n)));
  double acc = 0.0;
  for (std::size_t i = n - k; i < n; ++i) acc += updates[i].*field;
  return acc / static_cast<double>(k);
}

double tail_mean_gap(std::span<const UpdateMetrics> updates, double fraction) {
  return tail_mean(updates, &UpdateMetrics::log_ratio_max, fraction) -
         tail_mean(updates, &UpdateMetrics::log_ratio_min, fraction);
}

double median(std::vector<double> values) {
  if (values.empty()) throw DomainError("median of an empty set");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void write_metrics_csv(std::ostream& os, std::span<const UpdateMetrics> updates) {
  os << kMetricsCsvHeader << '\n';
  for (const auto& m : updates) {
    os << m.step << ',' << m.round << ',' << fmt(m.p_value) << ',' << fmt(m.objective) << ','
       << fmt(m.grad_norm) << ',' << fmt(m.policy_entropy) << ',' << fmt(m.log_ratio_max) << ','
       << fmt(m.log_ratio_min) << ',' << fmt(m.clip_fraction) << ',' << fmt(m.mean_reward) << ','
       << fmt(m.v_of_p) << '\n';
  }
}

void write_weight_profile_csv(std::ostream& os, std::span<const WeightProfileRow> rows) {
  os << "p,entropy,hhi\n";
  for (const auto& r : rows) os << fmt(r.p) << ',' << fmt(r.entropy) << ',' << fmt(r.hhi) << '\n';
}

void write_v_curve_csv(std::ostream& os, std::span<const VCurveRow> rows) {
  os << "p,v\n";
  for (const auto& r : rows) os << fmt(r.p) << ',' << fmt(r.v) << '\n';
}

}  // namespace holderpo
