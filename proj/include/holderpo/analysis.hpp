#pragma once

// Training diagnostics: token log-ratio envelopes, weight-distribution
// profiles over p, and V(p) curves. Tables are written as CSV with a fixed
// header row.

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "holderpo/objectives.hpp"

namespace holderpo {

struct UpdateMetrics {
  long step = 0;
  long round = 0;
  double p_value = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double policy_entropy = 0.0;  // mean per-position softmax entropy, nats
  double log_ratio_max = 0.0;
  double log_ratio_min = 0.0;
  double clip_fraction = 0.0;
  double mean_reward = 0.0;
  double v_of_p = 0.0;

  double envelope_gap() const { return log_ratio_max - log_ratio_min; }
};

// Column order of the metrics CSV export.
inline constexpr const char* kMetricsCsvHeader =
    "step,round,p_value,objective,grad_norm,policy_entropy,log_ratio_max,log_ratio_min,"
    "clip_fraction,mean_reward,v_of_p";

struct Envelope {
  double max = 0.0;
  double min = 0.0;
};

// (max, min) of log r over all valid tokens.
Envelope ratio_envelopes(const GroupBatch& batch);
Envelope ratio_envelopes(std::span<const GroupBatch> batches);

struct WeightProfileRow {
  double p = 0.0;
  double entropy = 0.0;
  double hhi = 0.0;
};

std::vector<WeightProfileRow> weight_profile(const RatioSequence& ratios,
                                             std::span<const double> p_grid);

struct VCurveRow {
  double p = 0.0;
  double v = 0.0;
};

std::vector<VCurveRow> v_curve(std::span<const GroupBatch> samples, std::span<const double> p_grid);

// Mean of a metric over the trailing `fraction` of updates (at least one).
double tail_mean(std::span<const UpdateMetrics> updates, double UpdateMetrics::*field,
                 double fraction = 0.2);
double tail_mean_gap(std::span<const UpdateMetrics> updates, double fraction = 0.2);

double median(std::vector<double> values);

void write_metrics_csv(std::ostream& os, std::span<const UpdateMetrics> updates);
void write_weight_profile_csv(std::ostream& os, std::span<const WeightProfileRow> rows);
void write_v_curve_csv(std::ostream& os, std::span<const VCurveRow> rows);

}  // namespace holderpo
