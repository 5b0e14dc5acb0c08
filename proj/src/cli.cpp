#include "holderpo/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "holderpo/analysis.hpp"
#include "holderpo/config.hpp"
#include "holderpo/errors.hpp"
#include "holderpo/holder_core.hpp"
#include "holderpo/sim.hpp"
#include "holderpo/verify.hpp"

namespace holderpo {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// ------------------------------------------------------------------ helpers

std::vector<double> parse_number_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end != token.c_str() + token.size() || !std::isfinite(v)) {
      throw DomainError("malformed " + what + " value '" + token + "'");
    }
    out.push_back(v);
    token.clear();
  };
  for (char c : text) {
    if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      token += c;
    }
  }
  flush();
  if (out.empty()) throw DomainError("no " + what + " values given");
  return out;
}

// "2,8" inline, or "@path" naming a file of comma/whitespace separated values.
std::vector<double> read_ratios(const std::string& arg) {
  if (!arg.empty() && arg[0] == '@') {
    std::ifstream in(arg.substr(1));
    if (!in) throw DomainError("cannot open ratio file '" + arg.substr(1) + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_number_list(buf.str(), "ratio");
  }
  return parse_number_list(arg, "ratio");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

std::string csv_preamble(const ojson& config) {
  std::string s = "# holderpo " + version_string() + "\n";
  s += "# config " + config.dump() + "\n";
  return s;
}

ojson metrics_record(const UpdateMetrics& m) {
  ojson j;
  j["type"] = "update";
  j["step"] = m.step;
  j["round"] = m.round;
  j["p_value"] = m.p_value;
  j["objective"] = m.objective;
  j["grad_norm"] = m.grad_norm;
  j["policy_entropy"] = m.policy_entropy;
  j["log_ratio_max"] = m.log_ratio_max;
  j["log_ratio_min"] = m.log_ratio_min;
  j["clip_fraction"] = m.clip_fraction;
  j["mean_reward"] = m.mean_reward;
  j["v_of_p"] = m.v_of_p;
  return j;
}

// ------------------------------------------------------------------ runs

struct RunOutcome {
  RunConfig config;
  std::vector<UpdateMetrics> updates;
  std::optional<PolicyParams> initial;
  std::optional<PolicyParams> final_policy;
  double initial_reward = 0.0;
  double final_reward = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
  std::string message;
  double wall_time = 0.0;
};

RunOutcome execute(const RunConfig& config) {
  RunOutcome out;
  out.config = config;
  out.initial = initial_policy(config.task);
  out.initial_reward = expected_success(*out.initial, config.task);
  const auto start = std::chrono::steady_clock::now();
  try {
    auto log = train(config.train, config.task,
                     [&](const UpdateMetrics& m, double, double) { out.updates.push_back(m); });
    out.final_policy = log.final_policy;
    out.final_reward = log.final_success;
  } catch (const DivergenceError& e) {
    out.diverged = true;
    out.message = e.what();
  }
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

ojson run_metadata(const RunConfig& config) {
  const auto resolved = config.train.resolved();
  ojson j;
  j["version"] = version_string();
  j["config"] = config_to_json(config);
  j["resolved"] = {{"total_updates", resolved.total_updates()},
                   {"schedule_total_steps", resolved.schedule.total_steps},
                   {"schedule_label", resolved.schedule.label()}};
  j["schedule_convention"] = schedule_convention();
  return j;
}

double final_p(const RunOutcome& run) {
  if (!run.updates.empty()) return run.updates.back().p_value;
  return run.config.train.schedule.end_value();
}

// Weight profile of final vs initial policy along the final policy's modal sequence.
std::vector<WeightProfileRow> policy_weight_profile(const RunOutcome& run) {
  const auto& fin = *run.final_policy;
  const auto& ini = *run.initial;
  std::vector<double> logs(fin.length());
  for (std::size_t t = 0; t < fin.length(); ++t) {
    const auto row = fin.row_probs(t);
    const auto tok = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    logs[t] = fin.log_prob(t, tok) - ini.log_prob(t, tok);
  }
  std::vector<double> grid;
  for (int k = -10; k <= 10; ++k) grid.push_back(0.5 * k);
  return weight_profile(RatioSequence::from_logs(logs), grid);
}

// V(p) of groups drawn from the initial policy, re-scored under the final one.
std::vector<VCurveRow> policy_v_curve(const RunOutcome& run) {
  const CounterRng stream(run.config.train.seed, 0xC0FFEE);
  std::vector<GroupBatch> groups;
  for (std::size_t g = 0; g < 4; ++g) {
    auto batch = sample_group(*run.initial, run.config.task, run.config.train.group_size,
                              stream.substream(g), run.config.train.std_mode);
    refresh_logprobs_in_place(batch, *run.final_policy);
    groups.push_back(std::move(batch));
  }
  std::vector<double> grid;
  for (int k = -10; k <= 10; ++k) grid.push_back(0.5 * k);
  return v_curve(groups, grid);
}

void write_run_dir(const fs::path& dir, const RunOutcome& run) {
  fs::create_directories(dir);
  const auto meta = run_metadata(run.config);
  write_text(dir / "metadata.json", meta.dump(2) + "\n");

  std::string ndjson;
  ojson header;
  header["type"] = "header";
  header["version"] = version_string();
  header["config"] = meta["config"];
  header["schedule_convention"] = schedule_convention();
  ndjson += header.dump() + "\n";
  for (const auto& m : run.updates) ndjson += metrics_record(m).dump() + "\n";
  write_text(dir / "metrics.ndjson", ndjson);

  ojson summary;
  summary["version"] = version_string();
  summary["config"] = meta["config"];
  summary["status"] = run.diverged ? "diverged" : "ok";
  summary["initial_reward"] = run.initial_reward;
  summary["final_reward"] = run.diverged ? ojson(nullptr) : ojson(run.final_reward);
  summary["final_p"] = final_p(run);
  summary["updates_completed"] = run.updates.size();
  summary["wall_time_seconds"] = run.wall_time;
  if (run.diverged) summary["message"] = run.message;
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  const std::string preamble = csv_preamble(meta["config"]);
  std::ostringstream metrics_csv;
  metrics_csv << preamble;
  write_metrics_csv(metrics_csv, run.updates);
  write_text(dir / "metrics.csv", metrics_csv.str());

  if (run.final_policy) {
    std::ostringstream wp, vc;
    wp << preamble;
    write_weight_profile_csv(wp, policy_weight_profile(run));
    write_text(dir / "weight_profile.csv", wp.str());
    vc << preamble;
    write_v_curve_csv(vc, policy_v_curve(run));
    write_text(dir / "v_curve.csv", vc.str());

    ojson policy;
    policy["version"] = version_string();
    policy["config"] = meta["config"];
    policy["length"] = run.final_policy->length();
    policy["vocab"] = run.final_policy->vocab();
    policy["logits"] = std::vector<double>(run.final_policy->logits().begin(),
                                           run.final_policy->logits().end());
    write_text(dir / "final_policy.json", policy.dump() + "\n");
  }
}

std::string format_cell(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  // Shortest representation that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    std::ostringstream t;
    t.precision(prec);
    t << v;
    if (std::strtod(t.str().c_str(), nullptr) == v) return t.str();
  }
  return os.str();
}

// ------------------------------------------------------------------ commands

int cmd_mean(const std::string& ratios_arg, const std::vector<double>& ps, std::ostream& out) {
  const RatioSequence ratios(read_ratios(ratios_arg));
  ojson results = ojson::array();
  for (double p : ps) {
    const HolderOrder order(p);
    const auto w = gradient_weights(ratios, order);
    ojson j;
    j["p"] = p;
    j["rho"] = holder_mean(ratios, order);
    j["weights"] = std::vector<double>(w.weights().begin(), w.weights().end());
    j["entropy"] = shannon_entropy(w);
    j["hhi"] = hhi(w);
    results.push_back(std::move(j));
  }
  out << (ps.size() == 1 ? results[0].dump() : results.dump()) << '\n';
  return kExitOk;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& out_dir, std::ostream& out, std::ostream& err) {
  RunConfig config = load_config(config_path);
  if (seed) config.train.seed = *seed;
  const auto run = execute(config);
  write_run_dir(out_dir, run);
  if (run.diverged) {
    err << "error: run diverged: " << run.message << '\n';
    return kExitDiverged;
  }
  out << "final_reward " << format_cell(run.final_reward) << " (initial "
      << format_cell(run.initial_reward) << "), " << run.updates.size() << " updates, written to "
      << out_dir << '\n';
  return kExitOk;
}

struct SweepEntry {
  std::string label;
  ScheduleSpec schedule;
  std::uint64_t seed = 0;
  RunOutcome outcome;
  std::string error;
};

int cmd_sweep(const std::string& config_path, const std::vector<double>& ps,
              const std::vector<std::string>& schedules, std::optional<std::uint64_t> seed,
              std::size_t seeds, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const RunConfig base = load_config(config_path);
  if (seeds < 1) throw DomainError("--seeds must be >= 1");
  const std::uint64_t first_seed = seed ? *seed : base.train.seed;

  std::vector<ScheduleSpec> specs;
  for (double p : ps) specs.push_back(ScheduleSpec::constant(p));
  for (const auto& label : schedules) specs.push_back(parse_schedule_label(label));
  if (specs.empty()) throw DomainError("sweep needs at least one --p value or --schedule");

  std::vector<SweepEntry> entries;
  for (const auto& spec : specs) {
    for (std::size_t k = 0; k < seeds; ++k) {
      SweepEntry e;
      e.schedule = spec;
      e.label = spec.label();
      e.seed = first_seed + k;
      entries.push_back(std::move(e));
    }
  }

  // Each job owns its slot; output order is fixed by the entry list.
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < entries.size(); i = next++) {
      auto& e = entries[i];
      try {
        RunConfig c = base;
        c.train.schedule = e.schedule;
        c.train.seed = e.seed;
        e.outcome = execute(c);
        write_run_dir(fs::path(out_dir) / e.label / ("seed_" + std::to_string(e.seed)), e.outcome);
      } catch (const std::exception& ex) {
        e.error = ex.what();
      }
    }
  };
  const unsigned n_threads = std::min<unsigned>(worker_threads_from_env(),
                                                static_cast<unsigned>(entries.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (const auto& e : entries) {
    if (!e.error.empty()) throw std::runtime_error(e.label + " seed " + std::to_string(e.seed) + ": " + e.error);
  }

  const std::string preamble = csv_preamble(config_to_json(base));
  std::ostringstream cmp;
  cmp << preamble
      << "label,seed,p_start,p_end,status,initial_reward,final_reward,tail_envelope_gap,"
         "tail_policy_entropy\n";
  bool any_diverged = false;
  for (const auto& e : entries) {
    const auto& o = e.outcome;
    any_diverged |= o.diverged;
    const bool has_tail = !o.updates.empty();
    cmp << e.label << ',' << e.seed << ',' << format_cell(e.schedule.start_value()) << ','
        << format_cell(e.schedule.end_value()) << ',' << (o.diverged ? "diverged" : "ok") << ','
        << format_cell(o.initial_reward) << ',' << format_cell(o.final_reward) << ','
        << (has_tail ? format_cell(tail_mean_gap(o.updates)) : "") << ','
        << (has_tail ? format_cell(tail_mean(o.updates, &UpdateMetrics::policy_entropy)) : "")
        << '\n';
  }
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "comparison.csv", cmp.str());

  std::ostringstream med;
  med << preamble
      << "label,seeds,median_final_reward,median_tail_envelope_gap,median_tail_policy_entropy\n";
  for (std::size_t s = 0; s < specs.size(); ++s) {
    std::vector<double> reward, gap, entropy;
    for (std::size_t k = 0; k < seeds; ++k) {
      const auto& o = entries[s * seeds + k].outcome;
      if (o.diverged || o.updates.empty()) continue;
      reward.push_back(o.final_reward);
      gap.push_back(tail_mean_gap(o.updates));
      entropy.push_back(tail_mean(o.updates, &UpdateMetrics::policy_entropy));
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    med << specs[s].label() << ',' << reward.size() << ','
        << format_cell(reward.empty() ? nan : median(reward)) << ','
        << format_cell(gap.empty() ? nan : median(gap)) << ','
        << format_cell(entropy.empty() ? nan : median(entropy)) << '\n';
  }
  write_text(fs::path(out_dir) / "median.csv", med.str());
  out << med.str().substr(preamble.size());

  if (any_diverged) {
    err << "error: at least one sweep run diverged; see comparison.csv\n";
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_verify(std::uint64_t seed, std::size_t instances, const std::vector<std::string>& only,
               bool json_out, const std::string& out_dir, std::ostream& out) {
  VerifyOptions options;
  options.only = only;
  const auto report = check_all(seed, instances, options);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    ojson wrapped = ojson::parse(report.to_json());
    wrapped["version"] = version_string();
    write_text(fs::path(out_dir) / "verify_report.json", wrapped.dump(2) + "\n");
    write_text(fs::path(out_dir) / "verify_report.txt", report.to_text());
  }
  out << (json_out ? report.to_json() + "\n" : report.to_text());
  return report.all_passed() ? kExitOk : kExitVerifyFailed;
}

}  // namespace

std::string version_string() { return HOLDERPO_VERSION; }

unsigned worker_threads_from_env() {
  const char* v = std::getenv("HOLDERPO_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) return 1;
  return static_cast<unsigned>(std::min<long>(n, 64));
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Power-mean policy optimisation toolkit", "holderpo"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  std::string ratios;
  std::vector<std::string> p_text;
  auto* mean = app.add_subcommand("mean", "Power mean, weights, entropy and HHI of a ratio sequence");
  mean->add_option("--ratios", ratios, "Comma-separated ratios, or @file")->required();
  mean->add_option("--p", p_text, "Order(s) p, comma-separated or repeated")
      ->required()
      ->allow_extra_args(false);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  auto* train_cmd = app.add_subcommand("train", "Run one training job");
  train_cmd->add_option("--config", config_path, "JSON config file")->required();
  train_cmd->add_option("--seed", seed, "Override the config seed");
  train_cmd->add_option("--out-dir", out_dir, "Run directory")->required();

  std::vector<std::string> schedules;
  std::size_t seeds = 5;
  auto* sweep = app.add_subcommand("sweep", "Static-p sweep plus optional schedules over seeds");
  sweep->add_option("--config", config_path, "JSON config file")->required();
  sweep->add_option("--p", p_text, "Static orders, comma-separated or repeated")
      ->allow_extra_args(false);
  sweep->add_option("--schedule", schedules, "Schedule label, e.g. linear_2_-2")
      ->allow_extra_args(false);
  sweep->add_option("--seed", seed, "First seed (default: config seed)");
  sweep->add_option("--seeds", seeds, "Number of consecutive seeds");
  sweep->add_option("--out-dir", out_dir, "Output directory")->required();

  std::uint64_t verify_seed = 0;
  std::size_t instances = 100;
  std::vector<std::string> only;
  bool json_out = false;
  auto* verify = app.add_subcommand("verify", "Run the property-check suite");
  verify->add_option("--seed", verify_seed, "Instance seed");
  verify->add_option("--instances", instances, "Number of random instances")
      ->check(CLI::PositiveNumber);
  verify->add_option("--only", only, "Run only the named checks")->delimiter(',');
  verify->add_flag("--json", json_out, "Print the JSON report");
  verify->add_option("--out-dir", out_dir, "Also write verify_report.{json,txt} here");

  // CLI11 wants argv order reversed for its vector overload.
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (dynamic_cast<const CLI::CallForHelp*>(&e) || dynamic_cast<const CLI::CallForAllHelp*>(&e)
                  ? app.help()
                  : version_string() + "\n");
      if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
          sub && dynamic_cast<const CLI::CallForHelp*>(&e)) {
        out << sub->help();
      }
      return kExitOk;
    }
    err << "error: " << e.what() << '\n' << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    std::vector<double> ps;
    for (const auto& t : p_text) {
      const auto v = parse_number_list(t, "p");
      ps.insert(ps.end(), v.begin(), v.end());
    }
    if (mean->parsed()) return cmd_mean(ratios, ps, out);
    if (train_cmd->parsed()) return cmd_train(config_path, seed, out_dir, out, err);
    if (sweep->parsed()) {
      return cmd_sweep(config_path, ps, schedules, seed, seeds, out_dir, out, err);
    }
    if (verify->parsed()) return cmd_verify(verify_seed, instances, only, json_out, out_dir, out);
  } catch (const ConfigError& e) {
    err << "error: invalid config: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace holderpo
