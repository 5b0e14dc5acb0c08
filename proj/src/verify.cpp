#include "holderpo/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "holderpo/errors.hpp"
#include "holderpo/objectives.hpp"
#include "holderpo/rng.hpp"
#include "holderpo/sim.hpp"

namespace holderpo {

namespace {

constexpr double kSlack = 1e-12;
constexpr double kFdStep = 1e-5;
constexpr double kLimitP = 40.0;
constexpr double kKinkMargin = 1e-3;
// Threshold for analytic derivatives, so grid points at +-1e-7 use the power branch.
constexpr double kProbeThreshold = 1e-9;

const std::vector<double> kGrid = {-5, -3, -2, -1, -0.5, -1e-7, 0, 1e-7, 0.5, 1, 2, 3, 5};

std::vector<double> grid_with_limits() {
  std::vector<double> g = kGrid;
  g.insert(g.begin(), -kLimitP);
  g.push_back(kLimitP);
  return g;
}

struct Instance {
  std::vector<double> logs;
  double range = 0.0;  // max - min log-ratio
  RatioSequence ratios() const { return RatioSequence::from_logs(logs); }
  bool uniform() const { return range == 0.0; }
};

struct Context {
  std::vector<Instance> instances;
  std::uint64_t seed = 0;
  const VerifyOptions* options = nullptr;
  std::size_t check_index = 0;

  // Independent randomness per (check, instance), unaffected by --only.
  CounterRng aux(std::size_t instance) const {
    return CounterRng(seed, 0x5A17).substream(check_index).substream(instance);
  }
  bool uniform_mode() const { return options->uniform_instances; }
};

// Tracks the worst error of one check against its tolerance.
class Tally {
 public:
  explicit Tally(double tolerance) : tol_(tolerance) {}

  void observe(double err, const std::string& where) {
    if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
    if (err > worst_) worst_ = err;
    if (err > tol_ && first_failure_.empty()) first_failure_ = where;
  }
  void count() { ++evaluated_; }

  CheckResult finish(std::string skip_reason) const {
    CheckResult r;
    r.tolerance = tol_;
    r.worst_error = worst_;
    r.evaluated = evaluated_;
    if (!first_failure_.empty()) {
      r.status = CheckStatus::kFail;
      r.detail = "first failure: " + first_failure_;
    } else if (evaluated_ == 0) {
      r.status = CheckStatus::kSkipped;
      r.detail = std::move(skip_reason);
    } else {
      r.status = CheckStatus::kPass;
    }
    return r;
  }

 private:
  double tol_;
  double worst_ = 0.0;
  std::size_t evaluated_ = 0;
  std::string first_failure_;
};

std::string where(std::size_t instance, double p) {
  std::ostringstream os;
  os << "instance " << instance << ", p=" << p;
  return os.str();
}

double rel_err(double got, double want, double floor = 0.0) {
  const double scale = std::max(std::abs(want), floor);
  if (scale == 0.0) return std::abs(got - want) == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(got - want) / scale;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double diff_norm(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double uniform_in(CounterRng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

// Score gradients looked up by token id: token_ids[t] names a row of the table.
class TableScoreModel final : public ScoreModel {
 public:
  explicit TableScoreModel(std::size_t dim) : dim_(dim) {}

  int add_row(std::span<const double> row) {
    data_.insert(data_.end(), row.begin(), row.end());
    return static_cast<int>(data_.size() / dim_ - 1);
  }
  int add_random_row(CounterRng& rng) {
    std::vector<double> row(dim_);
    for (auto& x : row) x = uniform_in(rng, -1.0, 1.0);
    return add_row(row);
  }
  std::span<const double> row(int id) const {
    return {data_.data() + static_cast<std::size_t>(id) * dim_, dim_};
  }

  std::size_t dimension() const override { return dim_; }
  void add_score(const RolloutRecord& rollout, std::size_t position, double coef,
                 std::span<double> out) const override {
    const auto g = row(rollout.token_ids[position]);
    for (std::size_t j = 0; j < dim_; ++j) out[j] += coef * g[j];
  }

 private:
  std::size_t dim_;
  std::vector<double> data_;
};

// A rollout with the given log-ratios; old log-probs are drawn so new ones stay <= 0.
RolloutRecord make_rollout(std::span<const double> logs, CounterRng& rng, TableScoreModel* model) {
  RolloutRecord r;
  const std::size_t n = logs.size();
  r.token_ids.resize(n);
  r.old_logprobs.resize(n);
  r.new_logprobs.resize(n);
  r.mask.assign(n, 1);
  for (std::size_t t = 0; t < n; ++t) {
    r.old_logprobs[t] = -2.1 - 2.0 * rng.uniform();
    r.new_logprobs[t] = r.old_logprobs[t] + logs[t];
    r.token_ids[t] = model ? model->add_random_row(rng) : 0;
  }
  return r;
}

// Fresh log-ratios; in uniform mode they repeat the instance's constant value.
std::vector<double> random_logs(CounterRng& rng, std::size_t n, const Instance& inst) {
  std::vector<double> logs(n);
  if (inst.uniform()) {
    std::fill(logs.begin(), logs.end(), inst.logs.front());
  } else {
    for (auto& x : logs) x = uniform_in(rng, -2.0, 2.0);
  }
  return logs;
}

// Binary rewards with both outcomes present, so advantages are non-degenerate.
void assign_mixed_rewards(GroupBatch& batch, CounterRng& rng) {
  for (auto& r : batch.rollouts) r.reward = rng.uniform() < 0.5 ? 1.0 : 0.0;
  batch.rollouts[0].reward = 1.0;
  batch.rollouts[1].reward = 0.0;
  assign_advantages(batch);
}

// Group whose first rollout carries the instance's log-ratios.
GroupBatch make_sample(const Instance& inst, CounterRng& rng, TableScoreModel* model) {
  GroupBatch batch;
  const std::size_t g = 4;
  batch.rollouts.push_back(make_rollout(inst.logs, rng, model));
  for (std::size_t i = 1; i < g; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 16));
    const auto logs = random_logs(rng, n, inst);
    batch.rollouts.push_back(make_rollout(logs, rng, model));
  }
  assign_mixed_rewards(batch, rng);
  return batch;
}

// Log-ratios equal up to the rounding of new - old.
bool sample_is_uniform(const GroupBatch& batch) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : batch.rollouts) {
    for (std::size_t t = 0; t < r.length(); ++t) {
      lo = std::min(lo, r.new_logprobs[t] - r.old_logprobs[t]);
      hi = std::max(hi, r.new_logprobs[t] - r.old_logprobs[t]);
    }
  }
  return hi - lo < 1e-12;
}

// Increase of `next` over `prev`, relative to |prev|; positive means a drop was violated.
double rise(double prev, double next) {
  return std::max(0.0, (next - prev) / std::max(std::abs(prev), 1e-300));
}

double drop(double prev, double next) { return rise(next, prev); }

// ------------------------------------------------------------------ checks

CheckResult check_special_means(const Context& ctx) {
  Tally tally(1e-12);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& inst = ctx.instances[i];
    const auto r = inst.ratios();
    long double sum = 0, inv = 0, lsum = 0;
    for (double x : r.ratios()) {
      sum += x;
      inv += 1.0L / x;
    }
    for (double l : inst.logs) lsum += l;
    const auto n = static_cast<long double>(inst.logs.size());
    const double arith = static_cast<double>(sum / n);
    const double harm = static_cast<double>(n / inv);
    const double geo = static_cast<double>(std::exp(lsum / n));
    tally.observe(rel_err(holder_mean(r, HolderOrder(1.0)), arith), where(i, 1));
    tally.observe(rel_err(holder_mean(r, HolderOrder(-1.0)), harm), where(i, -1));
    tally.observe(rel_err(holder_mean(r, HolderOrder(0.0)), geo), where(i, 0));
    tally.count();
  }
  return tally.finish("no instances");
}

CheckResult check_mean_monotone(const Context& ctx) {
  Tally tally(kSlack);
  const auto grid = grid_with_limits();
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& inst = ctx.instances[i];
    if (inst.uniform()) continue;
    const auto r = inst.ratios();
    double prev = holder_mean(r, HolderOrder(grid[0]));
    for (std::size_t k = 1; k < grid.size(); ++k) {
      const double cur = holder_mean(r, HolderOrder(grid[k]));
      tally.observe(drop(prev, cur), where(i, grid[k]));
      prev = cur;
    }
    tally.count();
  }
  return tally.finish("every instance has identical ratios; monotonicity needs distinct ratios");
}

CheckResult check_geometric_limit(const Context& ctx) {
  Tally tally(1e-5);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto r = ctx.instances[i].ratios();
    const double geo = holder_mean(r, HolderOrder(0.0));
    // Threshold below |p| so the power branch is the one exercised.
    for (double p : {-1e-7, 1e-7}) {
      tally.observe(rel_err(holder_mean(r, HolderOrder(p, 1e-9)), geo), where(i, p));
    }
    tally.count();
  }
  return tally.finish("no instances");
}

CheckResult check_weight_normalization(const Context& ctx) {
  Tally tally(1e-10);
  const auto grid = grid_with_limits();
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto r = ctx.instances[i].ratios();
    for (double p : grid) {
      const HolderOrder order(p);
      const auto w = gradient_weights(r, order);
      double s = 0.0;
      for (double x : w.weights()) s += x;
      tally.observe(std::abs(s - 1.0), where(i, p));
      double ds = 0.0;
      for (std::size_t t = 0; t < r.size(); ++t) ds += weight_p_derivative(r, order, t);
      tally.observe(std::abs(ds), where(i, p));
    }
    tally.count();
  }
  return tally.finish("no instances");
}

CheckResult check_weight_derivative_fd(const Context& ctx) {
  Tally tally(1e-6);
  const auto& override_fn = ctx.options->weight_derivative;
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& inst = ctx.instances[i];
    const auto r = inst.ratios();
    const std::size_t stride = std::max<std::size_t>(1, r.size() / 16);
    for (double p : kGrid) {
      const HolderOrder order(p, kProbeThreshold);
      const auto w0 = gradient_weights(r, order);
      const auto wp = gradient_weights(r, HolderOrder(p + kFdStep));
      const auto wm = gradient_weights(r, HolderOrder(p - kFdStep));
      for (std::size_t t = 0; t < r.size(); t += stride) {
        const double fd = (wp[t] - wm[t]) / (2.0 * kFdStep);
        const double an = override_fn ? override_fn(r, order, t) : weight_p_derivative(r, order, t);
        const double floor = 1e-3 * w0[t] * std::max(1.0, inst.range);
        tally.observe(rel_err(an, fd, floor), where(i, p));
      }
    }
    tally.count();
  }
  return tally.finish("no instances");
}

CheckResult check_mu_derivative_fd(const Context& ctx) {
  Tally tally(1e-6);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& inst = ctx.instances[i];
    const auto r = inst.ratios();
    for (double p : kGrid) {
      const HolderOrder order(p, kProbeThreshold);
      const double an = mu_p_derivative(r, order);
      const double fd = (weighted_log_mean(r, HolderOrder(p + kFdStep)) -
                         weighted_log_mean(r, HolderOrder(p - kFdStep))) /
                        (2.0 * kFdStep);
      tally.observe(rel_err(an, fd, 1e-3 * std::max(1.0, inst.range * inst.range)), where(i, p));
      // Non-negative always, positive once two ratios differ.
      if (an < 0.0 || (!inst.uniform() && !(an > 0.0))) {
        tally.observe(std::numeric_limits<double>::infinity(), where(i, p) + " (sign)");
      }
    }
    tally.count();
  }
  return tally.finish("no instances");
}

CheckResult check_entropy_derivative_fd(const Context& ctx) {
  Tally tally(1e-6);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& inst = ctx.instances[i];
    const auto r = inst.ratios();
    for (double p : kGrid) {
      const double an = entropy_p_derivative(r, HolderOrder(p, kProbeThreshold));
      const double fd = (shannon_entropy(gradient_weights(r, HolderOrder(p + kFdStep))) -
                         shannon_entropy(gradient_weights(r, HolderOrder(p - kFdStep)))) /
                        (2.0 * kFdStep);
      tally.observe(rel_err(an, fd, 1e-3 * std::max(1.0, inst.range * inst.range)), where(i, p));
    }
    tally.count();
  }
  return tally.finish("no instances");
}

CheckResult check_entropy_monotone(const Context& ctx) {
  Tally tally(kSlack);
  std::vector<double> side;
  for (double p : grid_with_limits()) {
    if (p > 0) side.push_back(p);
  }
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& inst = ctx.instances[i];
    if (inst.uniform()) continue;
    const auto r = inst.ratios();
    const double h0 = shannon_entropy(gradient_weights(r, HolderOrder(0.0)));
    const double ln_n = std::log(static_cast<double>(r.size()));
    tally.observe(rel_err(h0, ln_n), where(i, 0));
    for (double sign : {1.0, -1.0}) {
      double prev = h0;
      for (double a : side) {
        const double h = shannon_entropy(gradient_weights(r, HolderOrder(sign * a)));
        tally.observe(rise(prev, h), where(i, sign * a));
        prev = h;
      }
    }
    tally.count();
  }
  return tally.finish("every instance has identical ratios; monotonicity needs distinct ratios");
}

CheckResult check_hhi_profile(const Context& ctx) {
  Tally tally(1e-3);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& inst = ctx.instances[i];
    if (inst.uniform()) continue;
    const auto r = inst.ratios();
    const double n = static_cast<double>(r.size());
    const double h0 = hhi(gradient_weights(r, HolderOrder(0.0)));
    if (rel_err(h0, 1.0 / n) > 1e-12) tally.observe(1.0, where(i, 0) + " (not 1/n)");
    for (double p : grid_with_limits()) {
      const double h = hhi(gradient_weights(r, HolderOrder(p)));
      if (h < h0 * (1.0 - kSlack)) tally.observe(1.0, where(i, p) + " (below 1/n)");
    }
    // With a singleton extreme set separated by >= 0.5 in log-space, HHI -> 1.
    std::vector<double> sorted = inst.logs;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.back() - sorted[sorted.size() - 2] >= 0.5) {
      tally.observe(1.0 - hhi(gradient_weights(r, HolderOrder(kLimitP))), where(i, kLimitP));
    }
    if (sorted[1] - sorted.front() >= 0.5) {
      tally.observe(1.0 - hhi(gradient_weights(r, HolderOrder(-kLimitP))), where(i, -kLimitP));
    }
    tally.count();
  }
  return tally.finish("every instance has identical ratios; concentration needs distinct ratios");
}

CheckResult check_limit_concentration(const Context& ctx) {
  Tally tally(1e-3);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& inst = ctx.instances[i];
    if (inst.uniform()) continue;
    auto rng = ctx.aux(i);
    for (double sign : {1.0, -1.0}) {
      // Work with s * logs so both directions reduce to the argmax case.
      std::vector<double> logs = inst.logs;
      const auto top = static_cast<std::size_t>(
          sign > 0 ? std::max_element(logs.begin(), logs.end()) - logs.begin()
                   : std::min_element(logs.begin(), logs.end()) - logs.begin());
      double second = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < logs.size(); ++t) {
        if (t != top) second = std::max(second, sign * logs[t]);
      }
      if (sign * logs[top] - second < 0.5) {
        // Stretch the extreme token so the separation hypothesis holds.
        logs[top] = sign * (second + 0.5 + 0.5 * rng.uniform());
      }
      const auto r = RatioSequence::from_logs(logs);
      const auto w = gradient_weights(r, HolderOrder(sign * kLimitP));
      const auto lim =
          limit_weights(r, sign > 0 ? LimitDirection::kPositive : LimitDirection::kNegative);
      double mass = 0.0, l1 = 0.0;
      for (std::size_t t = 0; t < r.size(); ++t) {
        if (lim[t] > 0.0) mass += w[t];
        l1 += std::abs(w[t] - lim[t]);
      }
      tally.observe(std::max(1.0 - mass, 0.5 * l1), where(i, sign * kLimitP));
    }
    tally.count();
  }
  return tally.finish("every instance has identical ratios; there is no extreme set to isolate");
}

CheckResult check_weight_rise_fall(const Context& ctx) {
  Tally tally(kSlack);
  std::vector<double> base = grid_with_limits();
  for (double p = -10.0; p <= 10.0; p += 0.25) base.push_back(p);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& inst = ctx.instances[i];
    if (inst.uniform()) continue;
    const auto r = inst.ratios();
    const double lmax = *std::max_element(inst.logs.begin(), inst.logs.end());
    const double lmin = *std::min_element(inst.logs.begin(), inst.logs.end());
    const std::size_t stride = std::max<std::size_t>(1, r.size() / 8);
    bool any = false;
    for (std::size_t t = 0; t < r.size(); t += stride) {
      const double target = inst.logs[t];
      if (target == lmax) continue;
      std::vector<double> grid = base;
      double lo = -std::numeric_limits<double>::infinity(), hi = lo;
      if (target > lmin) {
        // mu(p) is increasing from lmin to lmax, so the crossing can be bracketed.
        lo = -1.0;
        hi = 1.0;
        while (weighted_log_mean(r, HolderOrder(lo)) >= target && lo > -1e9) lo *= 2.0;
        while (weighted_log_mean(r, HolderOrder(hi)) <= target && hi < 1e9) hi *= 2.0;
        if (weighted_log_mean(r, HolderOrder(lo)) >= target ||
            weighted_log_mean(r, HolderOrder(hi)) <= target) {
          continue;
        }
        for (int it = 0; it < 200 && hi - lo > 1e-10 * std::max(1.0, std::abs(lo)); ++it) {
          const double mid = 0.5 * (lo + hi);
          (weighted_log_mean(r, HolderOrder(mid)) < target ? lo : hi) = mid;
        }
        grid.push_back(lo);
        grid.push_back(hi);
      }
      std::sort(grid.begin(), grid.end());
      grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
      double prev = gradient_weights(r, HolderOrder(grid[0]))[t];
      for (std::size_t k = 1; k < grid.size(); ++k) {
        const double cur = gradient_weights(r, HolderOrder(grid[k]))[t];
        const double scale = std::max(prev, cur);
        if (grid[k] <= lo) {
          tally.observe(std::max(0.0, prev - cur) / scale, where(i, grid[k]) + " (rise)");
        } else if (grid[k - 1] >= hi) {
          // Strict fall, unless both values have underflowed to zero.
          if (scale > 0.0) tally.observe(std::max(0.0, cur - prev) / scale, where(i, grid[k]) + " (fall)");
        }
        prev = cur;
      }
      any = true;
    }
    if (any) tally.count();
  }
  return tally.finish("every instance has identical ratios; no non-maximal token exists");
}

CheckResult check_variance_bound_monotone(const Context& ctx) {
  Tally tally(kSlack);
  const auto grid = grid_with_limits();
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    auto rng = ctx.aux(i);
    const auto batch = make_sample(ctx.instances[i], rng, nullptr);
    if (sample_is_uniform(batch)) continue;
    const std::span<const GroupBatch> sample(&batch, 1);
    double prev = variance_bound_term(sample, HolderOrder(grid[0]));
    for (std::size_t k = 1; k < grid.size(); ++k) {
      const double cur = variance_bound_term(sample, HolderOrder(grid[k]));
      tally.observe(drop(prev, cur), where(i, grid[k]));
      prev = cur;
    }
    tally.count();
  }
  return tally.finish("all sampled ratios identical; V(p) is flat");
}

CheckResult check_clip_pessimism(const Context& ctx) {
  Tally tally(kSlack);
  const ClipConfig clip(0.2);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    auto rng = ctx.aux(i);
    TableScoreModel model(6);
    const auto batch = make_sample(ctx.instances[i], rng, &model);
    for (double p : kGrid) {
      const HolderOrder order(p);
      for (std::size_t s = 0; s < batch.size(); ++s) {
        GroupBatch one;
        one.rollouts = {batch.rollouts[s]};
        one.advantages = {batch.advantages[s]};
        const double unclipped = surrogate_unclipped(one, order);
        const double clipped = surrogate_seq_clip(one, order, clip);
        tally.observe(std::max(0.0, clipped - unclipped) / std::max(std::abs(unclipped), 1e-300),
                      where(i, p) + " (objective)");
        const auto gu = sequence_gradient(batch.rollouts[s], batch.advantages[s], model, order,
                                          ClipRegime::kNone, clip);
        const auto gc = sequence_gradient(batch.rollouts[s], batch.advantages[s], model, order,
                                          ClipRegime::kSequence, clip);
        const double nu = norm(gu), nc = norm(gc);
        tally.observe(std::max(0.0, nc * nc - nu * nu) / std::max(nu * nu, 1e-300),
                      where(i, p) + " (gradient)");
      }
    }
    tally.count();
  }
  return tally.finish("no instances");
}

// n orthonormal vectors in R^(n+2), scaled to norm m.
ScoreMatrix orthogonal_scores(std::size_t n, double m, CounterRng& rng) {
  const std::size_t d = n + 2;
  ScoreMatrix s(n, d);
  for (std::size_t a = 0; a < n; ++a) {
    auto v = s.row(a);
    for (auto& x : v) x = uniform_in(rng, -1.0, 1.0);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t b = 0; b < a; ++b) {
        const auto u = s.row(b);
        const double dot = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
        for (std::size_t j = 0; j < d; ++j) v[j] -= dot * u[j];
      }
      const double len = norm(v);
      for (auto& x : v) x /= len;
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (auto& x : s.row(a)) x *= m;
  }
  return s;
}

CheckResult check_orthogonal_factorization(const Context& ctx) {
  Tally tally(1e-10);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    auto rng = ctx.aux(i);
    const auto r = ctx.instances[i].ratios();
    const double m = uniform_in(rng, 0.5, 2.0);
    const double adv = uniform_in(rng, -2.0, 2.0);
    const auto scores = orthogonal_scores(r.size(), m, rng);
    for (double p : grid_with_limits()) {
      const HolderOrder order(p);
      const auto g = grad_rho(r, scores, order);
      const double explicit_sq = adv * adv * norm(g) * norm(g);
      tally.observe(rel_err(second_moment_orthogonal(adv, m, r, order), explicit_sq), where(i, p));
    }
    tally.count();
  }
  return tally.finish("no instances");
}

CheckResult check_variance_minimizer_nonpositive(const Context& ctx) {
  Tally tally(kSlack);
  std::vector<double> grid;
  for (int k = -1000; k <= 1000; ++k) grid.push_back(k * 0.01);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& inst = ctx.instances[i];
    if (inst.uniform()) continue;
    const auto r = inst.ratios();
    double best = std::numeric_limits<double>::infinity(), p_star = 0.0, prev = 0.0;
    for (double p : grid) {
      const double v = second_moment_orthogonal(1.0, 1.0, r, HolderOrder(p));
      if (v < best) {
        best = v;
        p_star = p;
      }
      if (p > 0.0) tally.observe(drop(prev, v), where(i, p) + " (increasing on p > 0)");
      prev = v;
    }
    tally.observe(std::max(0.0, p_star), where(i, p_star) + " (minimiser)");
    tally.count();
  }
  return tally.finish("every instance has identical ratios; the second moment is flat");
}

// W_star(p_high) / W_star(p_stat) against R^(p_high - p_stat) * S(p_stat) / (R^p_high + S(p_high)).
double amplification_shortfall(const RatioSequence& r, std::size_t star, double p_stat,
                               double p_high) {
  const double ratio = gradient_weights(r, HolderOrder(p_high))[star] /
                       gradient_weights(r, HolderOrder(p_stat))[star];
  const double big_r = r.ratios()[star];
  double s_stat = 0.0, s_high = 0.0;
  for (std::size_t t = 0; t < r.size(); ++t) {
    if (t == star) continue;
    s_stat += std::pow(r.ratios()[t], p_stat);
    s_high += std::pow(r.ratios()[t], p_high);
  }
  const double c = s_stat / (std::pow(big_r, p_high) + s_high);
  const double bound = c * std::pow(big_r, p_high - p_stat);
  return std::max(0.0, (bound - ratio) / bound);
}

CheckResult check_amplification_bound(const Context& ctx) {
  Tally tally(kSlack);
  {
    // One star token of ratio 4 among 100 unit ratios.
    std::vector<double> ratios(101, 1.0);
    ratios[0] = 4.0;
    const RatioSequence r(ratios);
    for (double p : {0.0, 2.0}) {
      const double closed = std::pow(4.0, p) / (std::pow(4.0, p) + 100.0);
      tally.observe(rel_err(gradient_weights(r, HolderOrder(p))[0], closed), "star example, closed form");
    }
    tally.observe(amplification_shortfall(r, 0, 0.0, 2.0), "star example, bound");
    tally.count();
  }
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& inst = ctx.instances[i];
    if (inst.uniform()) continue;
    const auto r = inst.ratios();
    const auto star = static_cast<std::size_t>(
        std::max_element(inst.logs.begin(), inst.logs.end()) - inst.logs.begin());
    for (double p_stat : {-1.0, 0.0, 1.0}) {
      for (double p_high : {0.5, 1.0, 2.0, 3.0}) {
        if (p_high > p_stat) tally.observe(amplification_shortfall(r, star, p_stat, p_high), where(i, p_high));
      }
    }
    tally.count();
  }
  return tally.finish("no instances");
}

CheckResult check_variance_contraction(const Context& ctx) {
  Tally tally(kSlack);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    auto rng = ctx.aux(i);
    const auto batch = make_sample(ctx.instances[i], rng, nullptr);
    if (sample_is_uniform(batch)) continue;
    const std::span<const GroupBatch> sample(&batch, 1);
    for (double p_stat : {0.0, 1.0, 2.0}) {
      const double v_stat = variance_bound_term(sample, HolderOrder(p_stat));
      for (double p_low : grid_with_limits()) {
        if (p_low >= p_stat - 1e-3) continue;
        const double v_low = variance_bound_term(sample, HolderOrder(p_low));
        // Strict: V(p_low) must sit below V(p_stat) by more than the slack.
        tally.observe(v_low < v_stat ? 0.0 : rise(v_stat, v_low) + 2 * kSlack, where(i, p_low));
      }
    }
    tally.count();
  }
  return tally.finish("all sampled ratios identical; V(p) is flat");
}

CheckResult check_grad_rho_forms(const Context& ctx) {
  Tally tally(1e-10);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    auto rng = ctx.aux(i);
    const auto r = ctx.instances[i].ratios();
    ScoreMatrix scores(r.size(), 5);
    for (std::size_t a = 0; a < r.size(); ++a) {
      for (auto& x : scores.row(a)) x = uniform_in(rng, -1.0, 1.0);
    }
    for (double p : grid_with_limits()) {
      const HolderOrder order(p);
      const auto a = grad_rho(r, scores, order);
      const auto b = grad_rho_power_form(r, scores, order);
      tally.observe(diff_norm(a, b) / std::max(norm(a), 1e-300), where(i, p));
    }
    tally.count();
  }
  return tally.finish("no instances");
}

// Tokens sampled position-wise from the policy's rows.
RolloutRecord sample_rollout(const PolicyParams& policy, CounterRng& rng) {
  RolloutRecord r;
  const std::size_t len = policy.length();
  r.token_ids.resize(len);
  r.old_logprobs.resize(len);
  r.mask.assign(len, 1);
  for (std::size_t t = 0; t < len; ++t) {
    const auto row = policy.row_probs(t);
    const double u = rng.uniform();
    double cdf = 0.0;
    std::size_t tok = policy.vocab() - 1;
    for (std::size_t v = 0; v < policy.vocab(); ++v) {
      cdf += row[v];
      if (u < cdf) {
        tok = v;
        break;
      }
    }
    r.token_ids[t] = static_cast<int>(tok);
    r.old_logprobs[t] = policy.log_prob(t, tok);
  }
  r.new_logprobs = r.old_logprobs;
  return r;
}

PolicyParams random_policy(CounterRng& rng, std::size_t len, std::size_t vocab, double scale) {
  std::vector<double> logits(len * vocab);
  for (auto& x : logits) x = uniform_in(rng, -scale, scale);
  return PolicyParams(len, vocab, std::move(logits));
}

PolicyParams perturbed(const PolicyParams& base, CounterRng& rng, double scale) {
  std::vector<double> logits(base.logits().begin(), base.logits().end());
  for (auto& x : logits) x += uniform_in(rng, -scale, scale);
  return PolicyParams(base.length(), base.vocab(), std::move(logits));
}

CheckResult check_grad_rho_policy_fd(const Context& ctx) {
  Tally tally(1e-4);
  const ClipConfig clip(0.2);
  const double h = 1e-6;
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    auto rng = ctx.aux(i);
    const auto len = static_cast<std::size_t>(rng.uniform_int(2, 6));
    const auto vocab = static_cast<std::size_t>(rng.uniform_int(3, 6));
    const auto old_policy = random_policy(rng, len, vocab, 1.0);
    const auto rollout = sample_rollout(old_policy, rng);
    PolicyParams policy = ctx.uniform_mode() ? old_policy : perturbed(old_policy, rng, 0.5);

    auto rho_at = [&](const PolicyParams& pol, const HolderOrder& order) {
      GroupBatch g;
      g.rollouts = {rollout};
      refresh_logprobs_in_place(g, pol);
      return holder_mean_masked(g.rollouts[0].log_ratios(), order);
    };
    for (double p : kGrid) {
      const HolderOrder order(p);
      GroupBatch g;
      g.rollouts = {rollout};
      refresh_logprobs_in_place(g, policy);
      const auto an = sequence_gradient(g.rollouts[0], 1.0, policy, order, ClipRegime::kNone, clip);
      std::vector<double> fd(an.size());
      for (std::size_t j = 0; j < an.size(); ++j) {
        PolicyParams up = policy, down = policy;
        const std::size_t pos = j / vocab, tok = j % vocab;
        up.set_logit(pos, tok, policy.logit(pos, tok) + h);
        down.set_logit(pos, tok, policy.logit(pos, tok) - h);
        fd[j] = (rho_at(up, order) - rho_at(down, order)) / (2.0 * h);
      }
      tally.observe(diff_norm(an, fd) / std::max(norm(fd), 1e-12), where(i, p));
    }
    tally.count();
  }
  return tally.finish("no instances");
}

// True when some sequence (or token, for the token regime) sits within the
// kink margin of a clip boundary, where the objective is not differentiable.
bool near_kink(std::span<const GroupBatch> groups, const HolderOrder& order, ClipRegime regime,
               const ClipConfig& clip) {
  auto close = [&](double x) {
    return std::abs(x - (1.0 + clip.epsilon)) < kKinkMargin ||
           std::abs(x - (1.0 - clip.epsilon)) < kKinkMargin;
  };
  for (const auto& g : groups) {
    for (const auto& r : g.rollouts) {
      if (regime == ClipRegime::kSequence && close(holder_mean_masked(r.log_ratios(), order))) {
        return true;
      }
      if (regime == ClipRegime::kToken) {
        for (std::size_t t = 0; t < r.length(); ++t) {
          if (close(std::exp(r.new_logprobs[t] - r.old_logprobs[t]))) return true;
        }
      }
    }
  }
  return false;
}

CheckResult check_estimator_fd(const Context& ctx) {
  Tally tally(1e-4);
  const ClipConfig clip(0.2);
  const double h = 1e-6;
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    auto rng = ctx.aux(i);
    const auto len = static_cast<std::size_t>(rng.uniform_int(2, 5));
    const auto vocab = static_cast<std::size_t>(rng.uniform_int(3, 5));
    const auto old_policy = random_policy(rng, len, vocab, 1.0);
    std::vector<GroupBatch> groups(2);
    for (auto& g : groups) {
      for (int k = 0; k < 4; ++k) g.rollouts.push_back(sample_rollout(old_policy, rng));
      assign_mixed_rewards(g, rng);
    }
    const PolicyParams policy = ctx.uniform_mode() ? old_policy : perturbed(old_policy, rng, 0.3);
    for (auto& g : groups) refresh_logprobs_in_place(g, policy);

    auto objective = [&](const PolicyParams& pol, const HolderOrder& order, ClipRegime regime) {
      double total = 0.0;
      for (auto g : groups) {
        refresh_logprobs_in_place(g, pol);
        total += surrogate(g, order, regime, clip);
      }
      return total / static_cast<double>(groups.size());
    };

    bool any = false;
    for (ClipRegime regime : {ClipRegime::kNone, ClipRegime::kToken, ClipRegime::kSequence}) {
      for (double p : kGrid) {
        const HolderOrder order(p);
        if (near_kink(groups, order, regime, clip)) {
          ++rejected;
          continue;
        }
        const auto an = grad_estimator(groups, policy, order, regime, clip).vector;
        std::vector<double> fd(an.size());
        for (std::size_t j = 0; j < an.size(); ++j) {
          PolicyParams up = policy, down = policy;
          const std::size_t pos = j / vocab, tok = j % vocab;
          up.set_logit(pos, tok, policy.logit(pos, tok) + h);
          down.set_logit(pos, tok, policy.logit(pos, tok) - h);
          fd[j] = (objective(up, order, regime) - objective(down, order, regime)) / (2.0 * h);
        }
        tally.observe(diff_norm(an, fd) / std::max(norm(fd), 1e-6),
                      where(i, p) + " (" + std::string(to_string(regime)) + ")");
        any = true;
      }
    }
    if (any) tally.count();
  }
  auto result = tally.finish("every evaluation point was within the clip kink margin");
  if (rejected > 0 && result.status != CheckStatus::kFail) {
    result.detail = std::to_string(rejected) + " evaluation points skipped near clip boundaries";
  }
  return result;
}

CheckResult check_special_case_objectives(const Context& ctx) {
  Tally tally(1e-10);
  const ClipConfig clip(0.2);
  const double eps = clip.epsilon;
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    auto rng = ctx.aux(i);
    GroupBatch batch;
    const auto g = static_cast<std::size_t>(rng.uniform_int(2, 8));
    batch.rollouts.push_back(make_rollout(ctx.instances[i].logs, rng, nullptr));
    while (batch.size() < g) {
      const auto n = static_cast<std::size_t>(rng.uniform_int(2, 12));
      batch.rollouts.push_back(make_rollout(random_logs(rng, n, ctx.instances[i]), rng, nullptr));
    }
    assign_mixed_rewards(batch, rng);

    // Token-level PPO objective averaged per sequence, then over the group.
    double grpo = 0.0, gspo = 0.0, scale = 0.0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& r = batch.rollouts[s];
      const double a = batch.advantages[s];
      double per_seq = 0.0, log_sum = 0.0;
      for (std::size_t t = 0; t < r.length(); ++t) {
        const double ratio = std::exp(r.new_logprobs[t] - r.old_logprobs[t]);
        per_seq += std::min(ratio * a, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * a);
        log_sum += r.new_logprobs[t] - r.old_logprobs[t];
      }
      grpo += per_seq / static_cast<double>(r.length());
      const double seq_ratio = std::exp(log_sum / static_cast<double>(r.length()));
      gspo += std::min(seq_ratio * a, std::clamp(seq_ratio, 1.0 - eps, 1.0 + eps) * a);
      scale += std::abs(a);
    }
    const double gn = static_cast<double>(batch.size());
    grpo /= gn;
    gspo /= gn;
    scale /= gn;
    tally.observe(rel_err(surrogate_token_clip(batch, HolderOrder(1.0), clip), grpo, scale),
                  where(i, 1) + " (token clip)");
    tally.observe(rel_err(surrogate_seq_clip(batch, HolderOrder(0.0), clip), gspo, scale),
                  where(i, 0) + " (sequence clip)");
    tally.count();
  }
  return tally.finish("no instances");
}

CheckResult check_trust_region_p_invariance(const Context& ctx) {
  Tally tally(1e-12);
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    auto rng = ctx.aux(i);
    TableScoreModel model(5);
    GroupBatch batch = make_sample(ctx.instances[i], rng, &model);
    for (auto& r : batch.rollouts) r.new_logprobs = r.old_logprobs;

    std::vector<double> reinforce(model.dimension(), 0.0);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& r = batch.rollouts[s];
      const double c = batch.advantages[s] / static_cast<double>(r.length() * batch.size());
      for (std::size_t t = 0; t < r.length(); ++t) {
        const auto g = model.row(r.token_ids[t]);
        for (std::size_t j = 0; j < g.size(); ++j) reinforce[j] += c * g[j];
      }
    }
    const std::span<const GroupBatch> mb(&batch, 1);
    for (double p : grid_with_limits()) {
      const auto est = grad_estimator_unclipped(mb, model, HolderOrder(p)).vector;
      tally.observe(diff_norm(est, reinforce) / std::max(norm(reinforce), 1e-300), where(i, p));
    }
    tally.count();
  }
  return tally.finish("no instances");
}

struct CheckDef {
  const char* name;
  const char* claim;
  CheckResult (*run)(const Context&);
};

const std::vector<CheckDef>& registry() {
  static const std::vector<CheckDef> defs = {
      {"special_means", "order 1, 0, -1 give the arithmetic, geometric and harmonic means",
       check_special_means},
      {"holder_mean_monotone", "the power mean is strictly increasing in p for distinct ratios",
       check_mean_monotone},
      {"geometric_limit", "the power mean converges to the geometric mean as p -> 0",
       check_geometric_limit},
      {"weight_normalization", "weights sum to one and their p-derivatives sum to zero",
       check_weight_normalization},
      {"weight_derivative_fd", "dW_t/dp = W_t (log r_t - mu(p)) matches finite differences",
       check_weight_derivative_fd},
      {"mu_derivative_fd", "dmu/dp = Var_W(log r) >= 0 matches finite differences",
       check_mu_derivative_fd},
      {"entropy_derivative_fd", "dH/dp = -p Var_W(log r) matches finite differences",
       check_entropy_derivative_fd},
      {"entropy_monotone", "weight entropy peaks at p = 0 with value ln n and falls in |p|",
       check_entropy_monotone},
      {"hhi_profile", "HHI is 1/n at p = 0, never below it, and tends to 1 for a lone extreme",
       check_hhi_profile},
      {"limit_concentration", "at p = +-40 the weights sit on the argmax / argmin set",
       check_limit_concentration},
      {"weight_rise_fall",
       "a non-maximal token's weight rises until mu(p) reaches its log-ratio, then falls",
       check_weight_rise_fall},
      {"variance_bound_monotone", "V(p) = E[A^2 rho_p^2] is strictly increasing in p",
       check_variance_bound_monotone},
      {"clip_pessimism",
       "sequence clipping never raises the objective or the squared gradient norm",
       check_clip_pessimism},
      {"orthogonal_factorization",
       "with orthogonal scores of norm M the second moment is A^2 M^2 rho^2 HHI",
       check_orthogonal_factorization},
      {"variance_minimizer_nonpositive",
       "the orthogonal second moment is increasing on p > 0 and minimised at some p <= 0",
       check_variance_minimizer_nonpositive},
      {"amplification_bound",
       "raising p amplifies a dominant token's weight by at least C R^(p_high - p_stat)",
       check_amplification_bound},
      {"variance_contraction", "lowering p strictly contracts V(p)", check_variance_contraction},
      {"grad_rho_forms", "the weighted and power forms of grad rho agree", check_grad_rho_forms},
      {"grad_rho_policy_fd", "grad rho of a tabular policy matches finite differences",
       check_grad_rho_policy_fd},
      {"estimator_fd",
       "unclipped, token-clipped and sequence-clipped estimators match finite differences",
       check_estimator_fd},
      {"special_case_objectives",
       "token clipping at p = 1 is GRPO and sequence clipping at p = 0 is GSPO",
       check_special_case_objectives},
      {"trust_region_p_invariance",
       "with all ratios 1 the unclipped gradient is REINFORCE for every p",
       check_trust_region_p_invariance},
  };
  return defs;
}

std::string fnv1a_hex(const std::vector<Instance>& instances) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t k = 0; k < len; ++k) {
      h ^= bytes[k];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& inst : instances) {
    const std::uint64_t n = inst.logs.size();
    feed(&n, sizeof n);
    feed(inst.logs.data(), inst.logs.size() * sizeof(double));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Instance> generate_instances(std::uint64_t seed, std::size_t count, bool uniform) {
  std::vector<Instance> out;
  out.reserve(count);
  const CounterRng root(seed, 0x1257);
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = root.substream(i);
    Instance inst;
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 64));
    inst.logs.resize(n);
    if (uniform) {
      std::fill(inst.logs.begin(), inst.logs.end(), uniform_in(rng, -2.0, 2.0));
    } else {
      for (auto& x : inst.logs) x = uniform_in(rng, -2.0, 2.0);
    }
    const auto [lo, hi] = std::minmax_element(inst.logs.begin(), inst.logs.end());
    inst.range = *hi - *lo;
    out.push_back(std::move(inst));
  }
  return out;
}

std::string format_error(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::string_view to_string(CheckStatus status) {
  switch (status) {
    case CheckStatus::kPass: return "pass";
    case CheckStatus::kFail: return "fail";
    case CheckStatus::kSkipped: return "skipped";
  }
  return "fail";
}

bool VerifyReport::all_passed() const {
  return std::none_of(checks.begin(), checks.end(),
                      [](const CheckResult& c) { return c.status == CheckStatus::kFail; });
}

std::string VerifyReport::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["instance_count"] = instance_count;
  j["instance_digest"] = digest;
  j["all_passed"] = all_passed();
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : checks) {
    nlohmann::ordered_json e;
    e["name"] = c.name;
    e["claim"] = c.claim;
    e["status"] = to_string(c.status);
    e["worst_error"] = c.worst_error;
    e["tolerance"] = c.tolerance;
    e["evaluated"] = c.evaluated;
    e["detail"] = c.detail;
    j["checks"].push_back(std::move(e));
  }
  return j.dump(2);
}

std::string VerifyReport::to_text() const {
  std::ostringstream os;
  os << "seed " << seed << ", " << instance_count << " instances, digest " << digest << '\n';
  for (const auto& c : checks) {
    std::string status(to_string(c.status));
    for (auto& ch : status) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    os << status << std::string(8 - status.size(), ' ') << c.name << "  worst "
       << format_error(c.worst_error) << " (tol " << format_error(c.tolerance) << ", n "
       << c.evaluated << ")";
    if (!c.detail.empty()) os << "  " << c.detail;
    os << "\n        " << c.claim << '\n';
  }
  os << (all_passed() ? "all checks passed" : "VERIFICATION FAILED") << '\n';
  return os.str();
}

const std::vector<std::string>& check_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& d : registry()) out.emplace_back(d.name);
    return out;
  }();
  return names;
}

VerifyReport check_all(std::uint64_t seed, std::size_t instance_count, const VerifyOptions& options) {
  if (instance_count < 1) throw DomainError("instance_count must be >= 1");
  for (const auto& name : options.only) {
    const auto& names = check_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw DomainError("unknown check '" + name + "'");
    }
  }

  Context ctx;
  ctx.seed = seed;
  ctx.options = &options;
  ctx.instances = generate_instances(seed, instance_count, options.uniform_instances);

  VerifyReport report;
  report.seed = seed;
  report.instance_count = instance_count;
  report.digest = fnv1a_hex(ctx.instances);

  const auto& defs = registry();
  for (std::size_t k = 0; k < defs.size(); ++k) {
    if (!options.only.empty() &&
        std::find(options.only.begin(), options.only.end(), defs[k].name) == options.only.end()) {
      continue;
    }
    ctx.check_index = k;
    CheckResult r;
    try {
      r = defs[k].run(ctx);
    } catch (const std::exception& e) {
      r.status = CheckStatus::kFail;
      r.worst_error = std::numeric_limits<double>::infinity();
      r.detail = std::string("exception: ") + e.what();
    }
    r.name = defs[k].name;
    r.claim = defs[k].claim;
    report.checks.push_back(std::move(r));
  }
  return report;
}

}  // namespace holderpo
