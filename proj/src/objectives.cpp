#include "holderpo/objectives.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <string>

#include "holderpo/errors.hpp"

namespace holderpo {

namespace {

constexpr double kDegenerateStd = 1e-8;

struct SequenceTerms {
  std::vector<std::size_t> positions;  // valid positions
  std::vector<double> coef;            // d(aggregate)/d(log pi_t), zero for clipped tokens
  double aggregate = 1.0;              // rho (or C/D under token clipping)
  double objective = 0.0;              // this sequence's surrogate term
  bool zeroed = false;                 // sequence indicator I_i == 0
  std::size_t tokens_zeroed = 0;
};

SequenceTerms sequence_terms(const RolloutRecord& rollout, double advantage,
                             const HolderOrder& order, ClipRegime regime,
                             const ClipConfig& clip) {
  SequenceTerms terms;
  std::vector<double> logs;
  for (std::size_t t = 0; t < rollout.length(); ++t) {
    if (!rollout.mask[t]) continue;
    terms.positions.push_back(t);
    logs.push_back(rollout.new_logprobs[t] - rollout.old_logprobs[t]);
  }

  if (regime == ClipRegime::kToken) {
    // C (A >= 0) aggregates min(r, 1+eps); D (A < 0) aggregates max(r, 1-eps).
    const bool upper = advantage >= 0.0;
    std::vector<double> clipped(logs.size());
    std::vector<std::uint8_t> active(logs.size(), 1);
    for (std::size_t k = 0; k < logs.size(); ++k) {
      if (upper) {
        clipped[k] = std::min(logs[k], clip.log_upper());
        if (advantage > 0.0 && logs[k] > clip.log_upper()) active[k] = 0;
      } else {
        clipped[k] = std::max(logs[k], clip.log_lower());
        if (logs[k] < clip.log_lower()) active[k] = 0;
      }
    }
    const double log_h = log_holder_mean(clipped, order);
    terms.aggregate = std::exp(log_h);
    const auto w = softmax_weights(clipped, order);
    terms.coef.resize(logs.size());
    for (std::size_t k = 0; k < logs.size(); ++k) {
      terms.coef[k] = active[k] ? terms.aggregate * w[k] : 0.0;
      if (!active[k]) ++terms.tokens_zeroed;
    }
    terms.objective = advantage == 0.0 ? 0.0 : terms.aggregate * advantage;
    return terms;
  }

  const double log_rho = log_holder_mean(logs, order);
  terms.aggregate = std::exp(log_rho);
  const auto w = softmax_weights(logs, order);
  terms.coef.resize(logs.size());
  for (std::size_t k = 0; k < logs.size(); ++k) terms.coef[k] = terms.aggregate * w[k];

  if (regime == ClipRegime::kNone) {
    terms.objective = terms.aggregate * advantage;
    return terms;
  }

  const double clipped_rho =
      std::clamp(terms.aggregate, 1.0 - clip.epsilon, 1.0 + clip.epsilon);
  terms.objective = std::min(terms.aggregate * advantage, clipped_rho * advantage);
  terms.zeroed = (advantage > 0.0 && log_rho > clip.log_upper()) ||
                 (advantage < 0.0 && log_rho < clip.log_lower());
  if (terms.zeroed) std::fill(terms.coef.begin(), terms.coef.end(), 0.0);
  return terms;
}

void check_batch(const GroupBatch& batch) {
  batch.validate();
  if (batch.advantages.size() != batch.rollouts.size()) {
    throw DomainError("advantages not populated for every rollout");
  }
}

double batch_objective(const GroupBatch& batch, const HolderOrder& order, ClipRegime regime,
                       const ClipConfig& clip) {
  check_batch(batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += sequence_terms(batch.rollouts[i], batch.advantages[i], order, regime, clip).objective;
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace

ClipConfig::ClipConfig(double eps) : epsilon(eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("clip epsilon must lie in (0, 1)");
}

double ClipConfig::log_upper() const { return std::log1p(epsilon); }
double ClipConfig::log_lower() const { return std::log1p(-epsilon); }

std::string_view to_string(ClipRegime regime) {
  switch (regime) {
    case ClipRegime::kNone: return "none";
    case ClipRegime::kToken: return "token";
    case ClipRegime::kSequence: return "sequence";
  }
  return "none";
}

ClipRegime parse_clip_regime(std::string_view name) {
  if (name == "none") return ClipRegime::kNone;
  if (name == "token") return ClipRegime::kToken;
  if (name == "sequence") return ClipRegime::kSequence;
  throw DomainError("unknown clipping regime '" + std::string(name) + "'");
}

std::string_view to_string(StdMode mode) {
  return mode == StdMode::kPopulation ? "population" : "sample";
}

StdMode parse_std_mode(std::string_view name) {
  if (name == "population") return StdMode::kPopulation;
  if (name == "sample") return StdMode::kSample;
  throw DomainError("unknown std mode '" + std::string(name) + "'");
}

void RolloutRecord::validate() const {
  const std::size_t n = token_ids.size();
  if (old_logprobs.size() != n || new_logprobs.size() != n || mask.size() != n) {
    throw DomainError("rollout vectors have mismatched lengths");
  }
  std::size_t valid = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (!mask[t]) continue;
    ++valid;
    if (!(old_logprobs[t] <= 0.0) || !(new_logprobs[t] <= 0.0) ||
        !std::isfinite(old_logprobs[t]) || !std::isfinite(new_logprobs[t])) {
      throw DomainError("log-probability at position " + std::to_string(t) +
                        " is not a finite value <= 0");
    }
  }
  if (valid == 0) throw DomainError("rollout has no valid tokens");
}

LogRatioSequence RolloutRecord::log_ratios() const {
  validate();
  std::vector<double> d(length());
  for (std::size_t t = 0; t < length(); ++t) d[t] = new_logprobs[t] - old_logprobs[t];
  return LogRatioSequence(std::move(d), mask);
}

void GroupBatch::validate() const {
  if (rollouts.empty()) throw DomainError("group batch is empty");
  for (const auto& r : rollouts) r.validate();
}

ScoreMatrix::ScoreMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

ScoreMatrix::ScoreMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw DomainError("score matrix data has wrong size");
}

std::vector<double> advantage_estimates(std::span<const double> rewards, StdMode mode) {
  const std::size_t g = rewards.size();
  if (g < 2) throw DomainError("advantage estimation needs a group of at least 2");
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(g);
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double denom = mode == StdMode::kPopulation ? static_cast<double>(g)
                                                    : static_cast<double>(g - 1);
  const double sd = std::sqrt(ss / denom);
  std::vector<double> adv(g, 0.0);
  if (sd < kDegenerateStd) return adv;
  for (std::size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

void assign_advantages(GroupBatch& batch, StdMode mode) {
  std::vector<double> rewards;
  rewards.reserve(batch.size());
  for (const auto& r : batch.rollouts) rewards.push_back(r.reward);
  batch.advantages = advantage_estimates(rewards, mode);
}

double surrogate_unclipped(const GroupBatch& batch, const HolderOrder& order) {
  return batch_objective(batch, order, ClipRegime::kNone, ClipConfig{});
}

double surrogate_seq_clip(const GroupBatch& batch, const HolderOrder& order,
                          const ClipConfig& clip) {
  return batch_objective(batch, order, ClipRegime::kSequence, clip);
}

double surrogate_token_clip(const GroupBatch& batch, const HolderOrder& order,
                            const ClipConfig& clip) {
  return batch_objective(batch, order, ClipRegime::kToken, clip);
}

double surrogate(const GroupBatch& batch, const HolderOrder& order, ClipRegime regime,
                 const ClipConfig& clip) {
  return batch_objective(batch, order, regime, clip);
}

double loss_holder_po(const LogRatioSequence& logs, double advantage, const HolderOrder& order,
                      const ClipConfig& clip) {
  const double rho = holder_mean_masked(logs, order);
  const double rho_clip = std::clamp(rho, 1.0 - clip.epsilon, 1.0 + clip.epsilon);
  const double loss_unclip = -advantage * rho;
  const double loss_clip = -advantage * rho_clip;
  return std::max(loss_unclip, loss_clip);
}

std::vector<double> grad_rho_power_form(const RatioSequence& ratios,
                                        const ScoreMatrix& score_grads,
                                        const HolderOrder& order) {
  if (score_grads.rows() != ratios.size()) {
    throw DomainError("score matrix rows must equal the sequence length");
  }
  const auto logs = ratios.log_ratios();
  const double log_rho = log_holder_mean(logs, order);
  const double log_n = std::log(static_cast<double>(ratios.size()));
  const double p = order.is_geometric() ? 0.0 : order.p;
  std::vector<double> out(score_grads.cols(), 0.0);
  for (std::size_t t = 0; t < ratios.size(); ++t) {
    const double c = std::exp((1.0 - p) * log_rho + p * logs[t] - log_n);
    const auto g = score_grads.row(t);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += c * g[j];
  }
  return out;
}

std::vector<double> grad_rho(const RatioSequence& ratios, const ScoreMatrix& score_grads,
                             const HolderOrder& order) {
  if (score_grads.rows() != ratios.size()) {
    throw DomainError("score matrix rows must equal the sequence length");
  }
  const auto logs = ratios.log_ratios();
  const double rho = std::exp(log_holder_mean(logs, order));
  const auto w = softmax_weights(logs, order);
  std::vector<double> out(score_grads.cols(), 0.0);
  for (std::size_t t = 0; t < ratios.size(); ++t) {
    const double c = rho * w[t];
    const auto g = score_grads.row(t);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += c * g[j];
  }
#ifndef NDEBUG
  {
    const auto alt = grad_rho_power_form(ratios, score_grads, order);
    double diff = 0.0, scale = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) {
      diff = std::max(diff, std::abs(out[j] - alt[j]));
      scale = std::max(scale, std::abs(out[j]));
    }
    assert(diff <= 1e-10 * std::max(scale, 1e-300) || diff <= 1e-300);
  }
#endif
  return out;
}

std::vector<double> sequence_gradient(const RolloutRecord& rollout, double advantage,
                                      const ScoreModel& model, const HolderOrder& order,
                                      ClipRegime regime, const ClipConfig& clip) {
  rollout.validate();
  std::vector<double> out(model.dimension(), 0.0);
  if (advantage == 0.0) return out;
  const auto terms = sequence_terms(rollout, advantage, order, regime, clip);
  for (std::size_t k = 0; k < terms.positions.size(); ++k) {
    if (terms.coef[k] == 0.0) continue;
    model.add_score(rollout, terms.positions[k], advantage * terms.coef[k], out);
  }
  return out;
}

GradientEstimate grad_estimator(std::span<const GroupBatch> minibatch, const ScoreModel& model,
                                const HolderOrder& order, ClipRegime regime,
                                const ClipConfig& clip) {
  if (minibatch.empty()) throw DomainError("minibatch holds no groups");
  GradientEstimate est;
  est.vector.assign(model.dimension(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(minibatch.size());
  std::size_t sequences = 0, sequences_zeroed = 0, tokens = 0, tokens_zeroed = 0;

  for (const auto& group : minibatch) {
    check_batch(group);
    const double scale = inv_b / static_cast<double>(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      const auto& rollout = group.rollouts[i];
      const double adv = group.advantages[i];
      const auto terms = sequence_terms(rollout, adv, order, regime, clip);
      ++sequences;
      tokens += terms.positions.size();
      if (terms.zeroed) ++sequences_zeroed;
      tokens_zeroed += terms.tokens_zeroed;
      if (adv == 0.0 || terms.zeroed) continue;
      est.max_contribution_scale =
          std::max(est.max_contribution_scale, std::abs(adv) * terms.aggregate);
      for (std::size_t k = 0; k < terms.positions.size(); ++k) {
        if (terms.coef[k] == 0.0) continue;
        model.add_score(rollout, terms.positions[k], scale * adv * terms.coef[k], est.vector);
      }
    }
  }

  if (regime == ClipRegime::kSequence && sequences > 0) {
    est.clip_fraction = static_cast<double>(sequences_zeroed) / static_cast<double>(sequences);
  } else if (regime == ClipRegime::kToken && tokens > 0) {
    est.clip_fraction = static_cast<double>(tokens_zeroed) / static_cast<double>(tokens);
  }
  return est;
}

GradientEstimate grad_estimator_unclipped(std::span<const GroupBatch> minibatch,
                                          const ScoreModel& model, const HolderOrder& order) {
  return grad_estimator(minibatch, model, order, ClipRegime::kNone, ClipConfig{});
}

GradientEstimate grad_estimator_seq_clip(std::span<const GroupBatch> minibatch,
                                         const ScoreModel& model, const HolderOrder& order,
                                         const ClipConfig& clip) {
  return grad_estimator(minibatch, model, order, ClipRegime::kSequence, clip);
}

GradientEstimate grad_estimator_token_clip(std::span<const GroupBatch> minibatch,
                                           const ScoreModel& model, const HolderOrder& order,
                                           const ClipConfig& clip) {
  return grad_estimator(minibatch, model, order, ClipRegime::kToken, clip);
}

double variance_bound_term(std::span<const GroupBatch> batches, const HolderOrder& order) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& group : batches) {
    check_batch(group);
    for (std::size_t i = 0; i < group.size(); ++i) {
      const auto valid = group.rollouts[i].log_ratios().valid_log_ratios();
      const double a = group.advantages[i];
      total += a * a * std::exp(2.0 * log_holder_mean(valid, order));
      ++count;
    }
  }
  if (count == 0) throw DomainError("variance bound needs at least one rollout");
  return total / static_cast<double>(count);
}

double second_moment_orthogonal(double advantage, double grad_norm_bound,
                                const RatioSequence& ratios, const HolderOrder& order) {
  if (!(grad_norm_bound > 0.0)) throw DomainError("gradient norm bound M must be positive");
  const double rho = holder_mean(ratios, order);
  const double h = hhi(gradient_weights(ratios, order));
  return advantage * advantage * grad_norm_bound * grad_norm_bound * rho * rho * h;
}

}  // namespace holderpo
