#include "holderpo/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "holderpo/errors.hpp"

namespace holderpo {

namespace {

double vector_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

// ---------------------------------------------------------------- policy

PolicyParams::PolicyParams(std::size_t length, std::size_t vocab)
    : PolicyParams(length, vocab, std::vector<double>(length * vocab, 0.0)) {}

PolicyParams::PolicyParams(std::size_t length, std::size_t vocab, std::vector<double> logits)
    : length_(length), vocab_(vocab), logits_(std::move(logits)) {
  if (length_ == 0 || vocab_ == 0) throw DomainError("policy needs L >= 1 and V >= 1");
  if (logits_.size() != length_ * vocab_) throw DomainError("logit table has wrong size");
  refresh();
}

void PolicyParams::set_logit(std::size_t pos, std::size_t token, double value) {
  if (pos >= length_ || token >= vocab_) throw DomainError("logit index out of range");
  logits_[pos * vocab_ + token] = value;
  refresh();
}

void PolicyParams::add_scaled(std::span<const double> direction, double step) {
  if (direction.size() != logits_.size()) throw DomainError("update has wrong dimension");
  for (std::size_t j = 0; j < logits_.size(); ++j) logits_[j] += step * direction[j];
  refresh();
}

void PolicyParams::refresh() {
  probs_.resize(logits_.size());
  log_probs_.resize(logits_.size());
  for (std::size_t pos = 0; pos < length_; ++pos) {
    const double* row = logits_.data() + pos * vocab_;
    for (std::size_t v = 0; v < vocab_; ++v) {
      if (!std::isfinite(row[v])) throw DomainError("policy logits must be finite");
    }
    const double lse = log_sum_exp(std::span<const double>(row, vocab_));
    for (std::size_t v = 0; v < vocab_; ++v) {
      log_probs_[pos * vocab_ + v] = row[v] - lse;
      probs_[pos * vocab_ + v] = std::exp(row[v] - lse);
    }
  }
}

double PolicyParams::mean_entropy() const {
  double total = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    if (probs_[i] > 0.0) total -= probs_[i] * log_probs_[i];
  }
  return total / static_cast<double>(length_);
}

void PolicyParams::add_score(const RolloutRecord& rollout, std::size_t position, double coef,
                             std::span<double> out) const {
  const auto token = static_cast<std::size_t>(rollout.token_ids[position]);
  double* row = out.data() + position * vocab_;
  const double* pi = probs_.data() + position * vocab_;
  for (std::size_t v = 0; v < vocab_; ++v) row[v] -= coef * pi[v];
  row[token] += coef;
}

// ---------------------------------------------------------------- tasks

std::string_view to_string(TaskKind kind) { return kind == TaskKind::kSparse ? "sparse" : "dense"; }

TaskKind parse_task_kind(std::string_view name) {
  if (name == "sparse") return TaskKind::kSparse;
  if (name == "dense") return TaskKind::kDense;
  throw DomainError("unknown task kind '" + std::string(name) + "'");
}

void TaskSpec::validate() const {
  if (length == 0 || vocab < 2) throw DomainError("task needs length >= 1 and vocab >= 2");
  if (!std::isfinite(prior_bias)) throw DomainError("prior_bias must be finite");
  if (kind == TaskKind::kSparse) {
    if (key_position >= length) throw DomainError("key_position must be < length");
    if (key_token >= vocab) throw DomainError("key_token must be < vocab");
  } else {
    if (target_sequence.size() != length) {
      throw DomainError("target_sequence length must equal task length");
    }
    for (auto tok : target_sequence) {
      if (tok >= vocab) throw DomainError("target_sequence token out of vocabulary");
    }
    if (dense_threshold > length) throw DomainError("dense_threshold must be <= length");
  }
}

double TaskSpec::reward(std::span<const int> tokens) const {
  if (tokens.size() != length) throw DomainError("sequence length does not match task");
  if (kind == TaskKind::kSparse) {
    return static_cast<std::size_t>(tokens[key_position]) == key_token ? 1.0 : 0.0;
  }
  std::size_t distance = 0;
  for (std::size_t t = 0; t < length; ++t) {
    if (static_cast<std::size_t>(tokens[t]) != target_sequence[t]) ++distance;
  }
  return distance <= dense_threshold ? 1.0 : 0.0;
}

TaskSpec default_sparse_task() {
  TaskSpec task;
  task.kind = TaskKind::kSparse;
  task.length = 8;
  task.vocab = 16;
  task.key_position = 5;
  task.key_token = 11;
  task.prior_bias = 0.0;
  return task;
}

TaskSpec default_dense_task() {
  TaskSpec task;
  task.kind = TaskKind::kDense;
  task.length = 8;
  task.vocab = 16;
  task.target_sequence = {3, 14, 7, 0, 9, 12, 5, 10};
  task.dense_threshold = 2;
  task.prior_bias = 2.5;
  return task;
}

PolicyParams initial_policy(const TaskSpec& task) {
  task.validate();
  PolicyParams policy(task.length, task.vocab);
  if (task.prior_bias == 0.0) return policy;
  std::vector<double> logits(task.length * task.vocab, 0.0);
  if (task.kind == TaskKind::kSparse) {
    logits[task.key_position * task.vocab + task.key_token] = task.prior_bias;
  } else {
    for (std::size_t t = 0; t < task.length; ++t) {
      logits[t * task.vocab + task.target_sequence[t]] = task.prior_bias;
    }
  }
  return PolicyParams(task.length, task.vocab, std::move(logits));
}

double expected_success(const PolicyParams& policy, const TaskSpec& task) {
  task.validate();
  if (policy.length() != task.length || policy.vocab() != task.vocab) {
    throw DomainError("policy shape does not match task");
  }
  if (task.kind == TaskKind::kSparse) return policy.prob(task.key_position, task.key_token);

  // Distribution of the number of mismatches, one position at a time.
  std::vector<double> dist(task.length + 1, 0.0);
  dist[0] = 1.0;
  for (std::size_t t = 0; t < task.length; ++t) {
    const double hit = policy.prob(t, task.target_sequence[t]);
    for (std::size_t k = t + 1; k > 0; --k) dist[k] = dist[k] * hit + dist[k - 1] * (1.0 - hit);
    dist[0] *= hit;
  }
  double success = 0.0;
  for (std::size_t k = 0; k <= task.dense_threshold; ++k) success += dist[k];
  return success;
}

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (group_size < 2) throw DomainError("group_size must be >= 2");
  if (minibatch_groups < 1) throw DomainError("minibatch_groups must be >= 1");
  if (updates_per_round < 1) throw DomainError("updates_per_round must be >= 1");
  if (total_rounds < 1) throw DomainError("total_rounds must be >= 1");
  if (rollouts_per_round == 0 || rollouts_per_round % (group_size * minibatch_groups) != 0) {
    throw DomainError("rollouts_per_round must be a positive multiple of group_size * minibatch_groups");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw DomainError("learning_rate must be finite and >= 0");
  }
  ClipConfig check(clip_epsilon);
  (void)check;
  schedule.validate();
}

TrainConfig TrainConfig::resolved() const {
  TrainConfig out = *this;
  out.schedule.total_steps = std::max<long>(1, static_cast<long>(total_updates()) - 1);
  return out;
}

// ---------------------------------------------------------------- sampling

GroupBatch sample_group(const PolicyParams& policy_old, const TaskSpec& task, std::size_t group_size,
                        const CounterRng& stream, StdMode std_mode) {
  task.validate();
  if (policy_old.length() != task.length || policy_old.vocab() != task.vocab) {
    throw DomainError("policy shape does not match task");
  }
  GroupBatch batch;
  batch.rollouts.resize(group_size);
  for (std::size_t i = 0; i < group_size; ++i) {
    CounterRng rng = stream.substream(i);
    RolloutRecord& r = batch.rollouts[i];
    r.token_ids.resize(task.length);
    r.old_logprobs.resize(task.length);
    r.mask.assign(task.length, 1);
    for (std::size_t t = 0; t < task.length; ++t) {
      const auto probs = policy_old.row_probs(t);
      const double u = rng.uniform();
      double cdf = 0.0;
      std::size_t tok = task.vocab - 1;
      for (std::size_t v = 0; v < task.vocab; ++v) {
        cdf += probs[v];
        if (u < cdf) {
          tok = v;
          break;
        }
      }
      // Skip zero-probability tail tokens picked through rounding of the cdf.
      while (probs[tok] == 0.0 && tok > 0) --tok;
      r.token_ids[t] = static_cast<int>(tok);
      r.old_logprobs[t] = policy_old.log_prob(t, tok);
    }
    r.new_logprobs = r.old_logprobs;
    r.reward = task.reward(r.token_ids);
  }
  assign_advantages(batch, std_mode);
  return batch;
}

void refresh_logprobs_in_place(GroupBatch& batch, const PolicyParams& policy_new) {
  for (auto& r : batch.rollouts) {
    r.new_logprobs.resize(r.length());
    for (std::size_t t = 0; t < r.length(); ++t) {
      const int tok = r.token_ids[t];
      if (t >= policy_new.length() || tok < 0 || static_cast<std::size_t>(tok) >= policy_new.vocab()) {
        throw DomainError("rollout token outside the policy's table");
      }
      r.new_logprobs[t] = policy_new.log_prob(t, static_cast<std::size_t>(tok));
    }
  }
}

GroupBatch refresh_logprobs(const GroupBatch& batch, const PolicyParams& policy_new) {
  GroupBatch out = batch;
  refresh_logprobs_in_place(out, policy_new);
  return out;
}

// ---------------------------------------------------------------- training

void check_divergence(std::span<const GroupBatch> batches, const HolderOrder& order, long step) {
  const double log_divergence = std::log(kDivergenceRho);
  for (const auto& g : batches) {
    for (const auto& r : g.rollouts) {
      const double log_rho = log_holder_mean(r.log_ratios().valid_log_ratios(), order);
      if (log_rho > log_divergence) {
        std::ostringstream os;
        os << "sequence ratio exp(" << log_rho << ") exceeds " << kDivergenceRho
           << " at update " << step << " (p = " << order.p << ")";
        throw DivergenceError(os.str(), step, log_rho);
      }
    }
  }
}

RunLog train(const TrainConfig& config_in, const TaskSpec& task, const UpdateObserver& observer) {
  config_in.validate();
  task.validate();
  const TrainConfig config = config_in.resolved();

  RunLog log;
  log.config = config;
  log.task = task;
  log.initial_policy = initial_policy(task);
  log.initial_success = expected_success(log.initial_policy, task);

  PolicyParams policy = log.initial_policy;
  const ClipConfig clip(config.clip_epsilon);
  const std::size_t groups_per_round = config.rollouts_per_round / config.group_size;
  const std::size_t minibatches = groups_per_round / config.minibatch_groups;
  const CounterRng root(config.seed, 0);
  log.updates.reserve(config.total_updates());

  long step = 0;
  for (std::size_t round = 0; round < config.total_rounds; ++round) {
    const PolicyParams policy_old = policy;
    const CounterRng round_stream = root.substream(round);

    std::vector<GroupBatch> groups;
    groups.reserve(groups_per_round);
    double reward_sum = 0.0;
    for (std::size_t g = 0; g < groups_per_round; ++g) {
      groups.push_back(sample_group(policy_old, task, config.group_size, round_stream.substream(g),
                                    config.std_mode));
      for (const auto& r : groups.back().rollouts) reward_sum += r.reward;
    }
    const double mean_reward = reward_sum / static_cast<double>(config.rollouts_per_round);

    for (std::size_t u = 0; u < config.updates_per_round; ++u, ++step) {
      const std::size_t mb = u % minibatches;
      const auto first = groups.begin() + static_cast<long>(mb * config.minibatch_groups);
      std::span<GroupBatch> minibatch(&*first, config.minibatch_groups);
      for (auto& g : minibatch) refresh_logprobs_in_place(g, policy);

      const double p = p_at(config.schedule, step);
      const HolderOrder order(p);

      check_divergence(minibatch, order, step);

      const auto est = grad_estimator(minibatch, policy, order, config.clipping_regime, clip);
      const auto env = ratio_envelopes(std::span<const GroupBatch>(minibatch));

      UpdateMetrics m;
      m.step = step;
      m.round = static_cast<long>(round);
      m.p_value = p;
      double objective = 0.0;
      for (const auto& g : minibatch) objective += surrogate(g, order, config.clipping_regime, clip);
      m.objective = objective / static_cast<double>(minibatch.size());
      m.grad_norm = vector_norm(est.vector);
      m.policy_entropy = policy.mean_entropy();
      m.log_ratio_max = env.max;
      m.log_ratio_min = env.min;
      m.clip_fraction = est.clip_fraction;
      m.mean_reward = mean_reward;
      m.v_of_p = variance_bound_term(std::span<const GroupBatch>(minibatch), order);
      log.updates.push_back(m);

      policy.add_scaled(est.vector, config.learning_rate);

      if (observer) {
        const double delta = config.learning_rate * m.grad_norm;
        const double bound = config.learning_rate * est.max_contribution_scale * std::sqrt(2.0);
        observer(m, delta, bound);
      }
    }
  }

  log.final_policy = policy;
  log.final_success = expected_success(policy, task);
  return log;
}

}  // namespace holderpo
