#pragma once

// Desk-scale stand-in for LLM post-training: a position-conditioned tabular
// softmax policy over a small vocabulary, binary-reward sparse/dense tasks,
// and a GRPO-style round/update loop driven by a p-schedule.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "holderpo/analysis.hpp"
#include "holderpo/objectives.hpp"
#include "holderpo/rng.hpp"
#include "holderpo/schedule.hpp"

namespace holderpo {

// Logits of shape L positions x V tokens; pi(v | pos) = softmax of row pos.
// Probabilities are cached and refreshed on every mutation.
class PolicyParams final : public ScoreModel {
 public:
  PolicyParams(std::size_t length, std::size_t vocab);
  PolicyParams(std::size_t length, std::size_t vocab, std::vector<double> logits);

  std::size_t length() const { return length_; }
  std::size_t vocab() const { return vocab_; }
  std::span<const double> logits() const { return logits_; }
  double logit(std::size_t pos, std::size_t token) const { return logits_[pos * vocab_ + token]; }

  void set_logit(std::size_t pos, std::size_t token, double value);
  // logits += step * direction
  void add_scaled(std::span<const double> direction, double step);

  double prob(std::size_t pos, std::size_t token) const { return probs_[pos * vocab_ + token]; }
  double log_prob(std::size_t pos, std::size_t token) const {
    return log_probs_[pos * vocab_ + token];
  }
  std::span<const double> row_probs(std::size_t pos) const {
    return {probs_.data() + pos * vocab_, vocab_};
  }

  // Mean over positions of the softmax entropy (nats).
  double mean_entropy() const;

  std::size_t dimension() const override { return logits_.size(); }
  // Row `pos` receives coef * (onehot(token) - pi(. | pos)).
  void add_score(const RolloutRecord& rollout, std::size_t position, double coef,
                 std::span<double> out) const override;

  bool operator==(const PolicyParams& other) const { return logits_ == other.logits_; }

 private:
  void refresh();

  std::size_t length_;
  std::size_t vocab_;
  std::vector<double> logits_;
  std::vector<double> probs_;
  std::vector<double> log_probs_;
};

enum class TaskKind { kSparse, kDense };

struct TaskSpec {
  TaskKind kind = TaskKind::kSparse;
  std::size_t length = 8;
  std::size_t vocab = 16;
  // sparse: reward 1 iff token at key_position equals key_token
  std::size_t key_position = 0;
  std::size_t key_token = 0;
  // dense: reward 1 iff Hamming distance to target_sequence <= dense_threshold
  std::vector<std::size_t> target_sequence;
  std::size_t dense_threshold = 0;
  // Initial-policy logit bonus on the rewarded token(s); models a base policy
  // that already puts some mass on the right answer.
  double prior_bias = 0.0;

  void validate() const;
  double reward(std::span<const int> tokens) const;
};

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

TaskSpec default_sparse_task();
TaskSpec default_dense_task();

// Zero logits plus prior_bias on the task's rewarded tokens.
PolicyParams initial_policy(const TaskSpec& task);

// Exact probability that a sampled sequence earns reward 1.
double expected_success(const PolicyParams& policy, const TaskSpec& task);

struct TrainConfig {
  std::size_t group_size = 8;
  std::size_t rollouts_per_round = 256;
  std::size_t minibatch_groups = 8;
  std::size_t updates_per_round = 8;
  double learning_rate = 3.0;
  double clip_epsilon = 0.2;
  ScheduleSpec schedule = ScheduleSpec::constant(1.0);
  ClipRegime clipping_regime = ClipRegime::kSequence;
  StdMode std_mode = StdMode::kPopulation;
  std::uint64_t seed = 0;
  std::size_t total_rounds = 4;

  void validate() const;
  std::size_t total_updates() const { return total_rounds * updates_per_round; }
  // Copy whose schedule spans exactly the run's update steps [0, total_updates - 1].
  TrainConfig resolved() const;
};

// Ratios above this (log-space) abort training.
inline constexpr double kDivergenceRho = 1e6;

// Throws DivergenceError if any sequence's mean ratio under `order` exceeds
// kDivergenceRho. train() calls this before every update.
void check_divergence(std::span<const GroupBatch> batches, const HolderOrder& order, long step);

GroupBatch sample_group(const PolicyParams& policy_old, const TaskSpec& task, std::size_t group_size,
                        const CounterRng& stream, StdMode std_mode = StdMode::kPopulation);

GroupBatch refresh_logprobs(const GroupBatch& batch, const PolicyParams& policy_new);
void refresh_logprobs_in_place(GroupBatch& batch, const PolicyParams& policy_new);

struct RunLog {
  TrainConfig config;
  TaskSpec task;
  std::vector<UpdateMetrics> updates;
  PolicyParams initial_policy{1, 1};
  PolicyParams final_policy{1, 1};
  double initial_success = 0.0;
  double final_success = 0.0;
};

// Observer invoked after each update with the metrics just recorded and the
// parameter delta norm of that update.
using UpdateObserver = std::function<void(const UpdateMetrics&, double delta_norm,
                                          double delta_bound)>;

// Runs total_rounds of {snapshot, sample, updates_per_round ascent steps}.
// Deterministic given config.seed. Throws DivergenceError when any sequence
// ratio exceeds kDivergenceRho.
RunLog train(const TrainConfig& config, const TaskSpec& task,
             const UpdateObserver& observer = nullptr);

}  // namespace holderpo
