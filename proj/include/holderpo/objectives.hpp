#pragma once

// Group-relative advantages and the three Hölder-aggregated surrogates:
// unclipped, token-level clipped, and sequence-level clipped, together with
// their mini-batch gradient estimators.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "holderpo/holder_core.hpp"

namespace holderpo {

// PPO clip half-width, 0 < epsilon < 1.
struct ClipConfig {
  double epsilon = 0.2;

  ClipConfig() = default;
  explicit ClipConfig(double eps);

  double log_upper() const;  // log(1 + epsilon)
  double log_lower() const;  // log(1 - epsilon)
};

enum class ClipRegime { kNone, kToken, kSequence };

std::string_view to_string(ClipRegime regime);
ClipRegime parse_clip_regime(std::string_view name);

enum class StdMode { kPopulation, kSample };

std::string_view to_string(StdMode mode);
StdMode parse_std_mode(std::string_view name);

struct RolloutRecord {
  std::vector<int> token_ids;
  std::vector<double> old_logprobs;
  std::vector<double> new_logprobs;
  double reward = 0.0;
  std::vector<std::uint8_t> mask;

  // Lengths agree, log-probabilities are <= 0, at least one valid position.
  void validate() const;
  std::size_t length() const { return token_ids.size(); }
  // new - old at every position, with the validity mask.
  LogRatioSequence log_ratios() const;
};

struct GroupBatch {
  std::vector<RolloutRecord> rollouts;
  std::vector<double> advantages;

  std::size_t size() const { return rollouts.size(); }
  void validate() const;
};

struct GradientEstimate {
  std::vector<double> vector;
  // Share of sequences (sequence regime) or valid tokens (token regime) whose
  // clip indicator is zero.
  double clip_fraction = 0.0;
  // max over contributing sequences of |A_i| * rho_i (or H_i); with score
  // norms <= M the estimate norm is at most M times this.
  double max_contribution_scale = 0.0;
};

// Supplies score-function gradients grad_theta log pi(y_t | context).
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  virtual std::size_t dimension() const = 0;
  // out += coef * grad log pi(rollout.token_ids[position] | position)
  virtual void add_score(const RolloutRecord& rollout, std::size_t position, double coef,
                         std::span<double> out) const = 0;
};

// Dense n x d matrix of per-token score gradients, row-major.
class ScoreMatrix {
 public:
  ScoreMatrix(std::size_t rows, std::size_t cols);
  ScoreMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

// (reward - mean) / std within the group. A group whose std is below 1e-8
// gets all-zero advantages.
std::vector<double> advantage_estimates(std::span<const double> rewards,
                                        StdMode mode = StdMode::kPopulation);

// Fills batch.advantages from the rollout rewards. Requires G >= 2.
void assign_advantages(GroupBatch& batch, StdMode mode = StdMode::kPopulation);

double surrogate_unclipped(const GroupBatch& batch, const HolderOrder& order);
double surrogate_seq_clip(const GroupBatch& batch, const HolderOrder& order, const ClipConfig& clip);
double surrogate_token_clip(const GroupBatch& batch, const HolderOrder& order,
                            const ClipConfig& clip);
double surrogate(const GroupBatch& batch, const HolderOrder& order, ClipRegime regime,
                 const ClipConfig& clip);

// Per-sequence loss as minimised by SGD: max(-A rho, -A clip(rho)).
double loss_holder_po(const LogRatioSequence& logs, double advantage, const HolderOrder& order,
                      const ClipConfig& clip);

// grad rho = rho * sum_t W_t g_t.
std::vector<double> grad_rho(const RatioSequence& ratios, const ScoreMatrix& score_grads,
                             const HolderOrder& order);
// grad rho = rho^(1-p) / n * sum_t r_t^p g_t (evaluated in log-space).
std::vector<double> grad_rho_power_form(const RatioSequence& ratios,
                                        const ScoreMatrix& score_grads, const HolderOrder& order);

GradientEstimate grad_estimator_unclipped(std::span<const GroupBatch> minibatch,
                                          const ScoreModel& model, const HolderOrder& order);
GradientEstimate grad_estimator_seq_clip(std::span<const GroupBatch> minibatch,
                                         const ScoreModel& model, const HolderOrder& order,
                                         const ClipConfig& clip);
GradientEstimate grad_estimator_token_clip(std::span<const GroupBatch> minibatch,
                                           const ScoreModel& model, const HolderOrder& order,
                                           const ClipConfig& clip);
GradientEstimate grad_estimator(std::span<const GroupBatch> minibatch, const ScoreModel& model,
                                const HolderOrder& order, ClipRegime regime,
                                const ClipConfig& clip);

// Per-sequence estimator contribution A_i * I_i * grad(rho_i or H_i), before
// the 1/(B G) averaging. Exposed for per-sequence variance checks.
std::vector<double> sequence_gradient(const RolloutRecord& rollout, double advantage,
                                      const ScoreModel& model, const HolderOrder& order,
                                      ClipRegime regime, const ClipConfig& clip);

// V(p) = mean over all rollouts of A^2 rho_p^2.
double variance_bound_term(std::span<const GroupBatch> batches, const HolderOrder& order);

// A^2 M^2 rho^2 HHI(W): second moment under exactly orthogonal token scores
// of common norm M.
double second_moment_orthogonal(double advantage, double grad_norm_bound,
                                const RatioSequence& ratios, const HolderOrder& order);

}  // namespace holderpo
