// Acceptance gate: one line per criterion, exit status 0 only if all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "holderpo/analysis.hpp"
#include "holderpo/cli.hpp"
#include "holderpo/config.hpp"
#include "holderpo/errors.hpp"
#include "holderpo/holder_core.hpp"
#include "holderpo/sim.hpp"
#include "holderpo/verify.hpp"
#include "oracles.hpp"

using namespace holderpo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  std::string info;  // shown when the criterion passes

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// Runs the named verifier checks and requires each to pass at a tolerance no
// looser than `max_tol`.
void require_checks(Outcome& out, const std::vector<std::string>& names, double max_tol,
                    std::size_t instances = 100) {
  VerifyOptions opt;
  opt.only = names;
  const auto report = check_all(0, instances, opt);
  for (const auto& c : report.checks) {
    out.require(c.status == CheckStatus::kPass,
                c.name + " " + std::string(to_string(c.status)) + " " + c.detail);
    out.require(c.tolerance <= max_tol, c.name + " tolerance " + fmt(c.tolerance) + " too loose");
    out.require(c.evaluated >= std::min<std::size_t>(instances, 100),
                c.name + " evaluated only " + std::to_string(c.evaluated));
    out.info += (out.info.empty() ? "" : ", ") + c.name + " " + fmt(c.worst_error);
  }
}

Outcome criterion1() {
  Outcome out;
  require_checks(out, {"special_means"}, 1e-12);

  // Arithmetic / geometric / harmonic means in extended precision.
  std::mt19937_64 gen(101);
  std::uniform_real_distribution<double> ld(-2.0, 2.0);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> r(2 + i % 63);
    for (auto& x : r) x = std::exp(ld(gen));
    long double s = 0, inv = 0, logs = 0;
    for (double x : r) {
      s += x;
      inv += 1.0L / x;
      logs += std::log(static_cast<long double>(x));
    }
    const long double n = r.size();
    const RatioSequence seq(r);
    const double ref[3] = {static_cast<double>(s / n), static_cast<double>(std::exp(logs / n)),
                           static_cast<double>(n / inv)};
    const double got[3] = {holder_mean(seq, HolderOrder(1)), holder_mean(seq, HolderOrder(0)),
                           holder_mean(seq, HolderOrder(-1))};
    for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(got[k] - ref[k]) / ref[k]);
  }
  out.require(worst <= 1e-12, "special means rel err " + fmt(worst));

  // Token clip at p=1 vs the token-level objective; sequence clip at p=0 vs
  // the geometric-ratio sequence objective.
  std::mt19937_64 bgen(202);
  const ClipConfig clip(0.2);
  double worst_tok = 0, worst_seq = 0;
  for (int i = 0; i < 100; ++i) {
    const auto b = testing::random_batch(bgen);
    worst_tok = std::max(worst_tok, std::abs(surrogate_token_clip(b, HolderOrder(1), clip) -
                                             testing::grpo_oracle(b, 0.2)));
    worst_seq = std::max(worst_seq, std::abs(surrogate_seq_clip(b, HolderOrder(0), clip) -
                                             testing::gspo_oracle(b, 0.2)));
  }
  out.require(worst_tok <= 1e-10, "token-level objective err " + fmt(worst_tok));
  out.require(worst_seq <= 1e-10, "sequence-level objective err " + fmt(worst_seq));
  require_checks(out, {"special_case_objectives"}, 1e-10);
  out.info = "means " + fmt(worst) + ", token " + fmt(worst_tok) + ", sequence " + fmt(worst_seq);
  return out;
}

Outcome criterion2() {
  Outcome out;
  require_checks(out, {"weight_derivative_fd", "mu_derivative_fd", "entropy_derivative_fd"}, 1e-6);
  require_checks(out, {"grad_rho_forms"}, 1e-6);
  require_checks(out, {"grad_rho_policy_fd"}, 1e-4);
  return out;
}

Outcome criterion3() {
  Outcome out;
  require_checks(out, {"entropy_monotone", "weight_rise_fall"}, 1e-12);
  require_checks(out, {"limit_concentration"}, 1e-3);
  return out;
}

Outcome criterion4() {
  Outcome out;
  require_checks(out, {"variance_bound_monotone", "clip_pessimism", "variance_minimizer_nonpositive"},
                 1e-12);
  require_checks(out, {"orthogonal_factorization"}, 1e-10);
  return out;
}

Outcome criterion5() {
  Outcome out;
  require_checks(out, {"amplification_bound", "variance_contraction"}, 1e-12);
  // Closed form for n = 101, one ratio R = 4 among ones: W(p) = R^p / (R^p + n - 1).
  const double n = 101, big = 4, p_high = 2;
  const auto w = [&](double p) { return std::pow(big, p) / (std::pow(big, p) + n - 1); };
  const double s_stat = n - 1, s_high = n - 1;  // sum of the other tokens' r^p
  const double c = s_stat / (std::pow(big, p_high) + s_high);
  const double lhs = w(p_high) / w(0.0), rhs = c * std::pow(big, p_high);
  std::vector<double> raw(101, 1.0);
  raw[0] = big;
  const RatioSequence r(raw);
  const double lib = gradient_weights(r, HolderOrder(p_high))[0] / gradient_weights(r, HolderOrder(0))[0];
  out.require(std::abs(lib - lhs) <= 1e-12 * lhs, "library amplification " + fmt(lib) + " vs " + fmt(lhs));
  out.require(lhs >= rhs, "amplification " + fmt(lhs) + " < bound " + fmt(rhs));
  out.info += ", amplification " + fmt(lhs) + " >= " + fmt(rhs);
  return out;
}

struct SeedStats {
  std::vector<double> success, gap, entropy;
  bool diverged = false;
};

SeedStats run_seeds(RunConfig config, const ScheduleSpec& schedule) {
  SeedStats s;
  config.train.schedule = schedule;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    config.train.seed = seed;
    try {
      const auto log = train(config.train, config.task);
      s.success.push_back(log.final_success);
      s.gap.push_back(tail_mean_gap(log.updates));
      s.entropy.push_back(tail_mean(log.updates, &UpdateMetrics::policy_entropy));
    } catch (const DivergenceError&) {
      s.diverged = true;
    }
  }
  return s;
}

double med(const std::vector<double>& v) { return v.empty() ? NAN : median(v); }

RunConfig shipped(const char* name) {
  return load_config((fs::path(HOLDERPO_CONFIG_DIR) / name).string());
}

Outcome criterion6() {
  Outcome out;
  const RunConfig sparse = shipped("sparse.json"), dense = shipped("dense.json");
  const std::vector<double> statics = {-2, -1, 0, 1, 2, 3};
  std::map<double, SeedStats> sp, de;
  for (double p : statics) {
    sp[p] = run_seeds(sparse, ScheduleSpec::constant(p));
    de[p] = run_seeds(dense, ScheduleSpec::constant(p));
  }
  const auto lin = parse_schedule_label("linear_2_-2");
  const auto sp_lin = run_seeds(sparse, lin), de_lin = run_seeds(dense, lin);
  for (const auto* m : {&sp, &de}) {
    for (const auto& [p, s] : *m) out.require(!s.diverged, "run diverged at p=" + fmt(p));
  }
  out.require(!sp_lin.diverged && !de_lin.diverged, "schedule run diverged");
  if (!out.pass) return out;

  const double a = med(sp[2].success) - med(sp[-2].success);
  const double b = med(de[-1].success) - med(de[3].success);
  const double gap = med(sp[2].gap) - med(sp[-2].gap);
  const double ent = med(sp[-2].entropy) - med(sp[2].entropy);
  double best = -1;
  for (double p : statics) best = std::max(best, 0.5 * (med(sp[p].success) + med(de[p].success)));
  const double combined = 0.5 * (med(sp_lin.success) + med(de_lin.success));

  out.require(a > 0, "(a) sparse p=2 minus p=-2 success " + fmt(a));
  out.require(b > 0, "(b) dense p=-1 minus p=3 success " + fmt(b));
  out.require(gap > 0, "(c) sparse envelope gap p=2 minus p=-2 " + fmt(gap));
  out.require(ent > 0, "(c) sparse entropy p=-2 minus p=2 " + fmt(ent));
  out.require(combined >= best - 0.02,
              "(d) schedule combined " + fmt(combined) + " < best static " + fmt(best) + " - 0.02");
  const std::string summary = "a=" + fmt(a) + " b=" + fmt(b) + " gap=" + fmt(gap) + " ent=" + fmt(ent) +
                              " sched=" + fmt(combined) + " best=" + fmt(best) +
                              " | dense gap=" + fmt(med(de[2].gap) - med(de[-2].gap)) +
                              " ent=" + fmt(med(de[-2].entropy) - med(de[2].entropy));
  out.info = summary;
  if (!out.pass) out.detail += " | " + summary;
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome criterion7() {
  Outcome out;
  const auto root = fs::temp_directory_path() / "holderpo_acceptance";
  fs::remove_all(root);
  std::ostringstream sink;
  for (const char* name : {"sparse.json", "dense.json"}) {
    const auto cfg = (fs::path(HOLDERPO_CONFIG_DIR) / name).string();
    for (const char* run : {"a", "b"}) {
      const int code = run_cli({"train", "--config", cfg, "--out-dir", (root / name / run).string()}, sink, sink);
      out.require(code == kExitOk, std::string(name) + " train exit " + std::to_string(code));
    }
    for (const char* f : {"metrics.ndjson", "metrics.csv", "final_policy.json"}) {
      out.require(slurp(root / name / "a" / f) == slurp(root / name / "b" / f),
                  std::string(name) + " " + f + " differs between reruns");
    }
  }
  // Default configs across seeds and orders: the divergence guard must stay quiet.
  std::size_t runs = 0;
  for (const char* name : {"sparse.json", "dense.json"}) {
    auto config = shipped(name);
    out.require(config.train.clipping_regime == ClipRegime::kSequence, "default regime is not sequence");
    for (const auto& label : {"static_-2", "static_-1", "static_0", "static_1", "static_2", "static_3",
                              "linear_2_-2"}) {
      config.train.schedule = parse_schedule_label(label);
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        config.train.seed = seed;
        try {
          train(config.train, config.task);
        } catch (const DivergenceError& e) {
          out.require(false, std::string(name) + " " + label + " diverged: " + e.what());
        }
        ++runs;
      }
    }
  }
  fs::remove_all(root);
  out.info = "reruns identical; " + std::to_string(runs) + " default runs without divergence";
  return out;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* title;
    double limit_seconds;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria = {
      {1, "special-case recovery", 5, criterion1},
      {2, "derivative identities", 10, criterion2},
      {3, "deformation properties", 5, criterion3},
      {4, "variance structure", 10, criterion4},
      {5, "amplification and contraction", 1, criterion5},
      {6, "qualitative training trends", 300, criterion6},
      {7, "determinism and stability", 300, criterion7},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.require(secs < c.limit_seconds, "runtime " + fmt(secs) + " s over " + fmt(c.limit_seconds) + " s");
    if (!o.pass) ++failed;
    std::printf("criterion %d [%s] %s (%.2f s / %.0f s) %s\n", c.id, c.title, o.pass ? "PASS" : "FAIL", secs,
                c.limit_seconds, (o.pass ? o.info : o.detail).c_str());
    std::fflush(stdout);
  }
  std::printf("%s: %d of %zu criteria passed\n", failed ? "FAILED" : "OK",
              static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
