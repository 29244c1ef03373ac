// SPDX-License-Identifier: Apache-2.0
//
// isac-crlb: multi-target sensing bounds and precoder design for massive MIMO ISAC
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

// isac: run campaigns, self-validation, timing benchmarks and single-trial replays.
//
// Exit codes: 0 ok, 1 validation/audit failure, 2 config error, 3 conic backend
// unusable.

#include "isac/config.hpp"
#include "isac/validation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

enum Exit { kOk = 0, kValidation = 1, kConfig = 2, kBackend = 3 };

struct Options {
  std::string config;
  std::string out = "results";
  std::optional<std::uint64_t> seed;
  std::string schemes;
  std::optional<int> trials;
  std::optional<int> jobs;
  int trial = 0;
  std::optional<int> point;
  bool verbose = false;
};

isac::CampaignConfig load(const Options& o) {
  isac::CampaignConfig cfg =
      o.config.empty() ? isac::parse_config_string("") : isac::parse_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.trials) {
    if (*o.trials < 1) throw isac::ConfigError("--trials must be >= 1");
    cfg.trials = *o.trials;
  }
  if (o.jobs) {
    if (*o.jobs < 0) throw isac::ConfigError("--jobs must be >= 0");
    cfg.jobs = *o.jobs;
  }
  if (!o.schemes.empty()) {
    cfg.schemes.clear();
    std::stringstream ss(o.schemes);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto s = isac::scheme_from_string(item);
      if (!s) throw isac::ConfigError("--schemes: unknown scheme '" + item + "'");
      cfg.schemes.push_back(*s);
    }
    if (cfg.schemes.empty()) throw isac::ConfigError("--schemes: empty list");
  }
  cfg.solver.verbose = false;
  return cfg;
}

void print_summary(const isac::ResultsTable& t) {
  std::printf("%-18s %9s %12s %12s %6s %6s %6s\n", "scheme", isac::to_string(t.config.sweep),
              "rmse_deg", "solve_s", "infeas", "sing", "fail");
  for (const auto& r : t.summary) {
    std::printf("%-18s %9d %12.5g %12.4g %6d %6d %6d\n", isac::to_string(r.scheme), r.sweep_value,
                r.rmse_degrees, r.mean_solve_seconds, r.infeasible, r.singular, r.failed);
  }
}

int cmd_run(const Options& o) {
  const isac::CampaignConfig cfg = load(o);
  const isac::ResultsTable t = isac::run_campaign(cfg);
  isac::emit_results(t, o.out);
  print_summary(t);
  std::printf("wrote %s (config hash %s)\n", o.out.c_str(), isac::config_hash(cfg).c_str());
  if (t.audit_failures() > 0) {
    std::fprintf(stderr, "%d trials failed the feasibility/CRLB audit\n", t.audit_failures());
    return kValidation;
  }
  return kOk;
}

int cmd_validate(const Options& o) {
  const int jobs = o.jobs.value_or(1);
  bool ok = true;
  for (const auto& c : isac::validation::run_all(jobs)) {
    std::printf("%s %-34s %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    ok = ok && c.passed;
  }
  if (!o.config.empty()) {
    isac::CampaignConfig cfg = load(o);
    cfg.trials = std::min(cfg.trials, o.trials.value_or(5));
    const isac::ResultsTable t = isac::run_campaign(cfg);
    const bool audit = t.audit_failures() == 0;
    std::printf("%s %-34s %d audit failures over %zu records\n", audit ? "PASS" : "FAIL",
                "campaign audit", t.audit_failures(), t.trials.size());
    ok = ok && audit;
  }
  return ok ? kOk : kValidation;
}

int cmd_bench(const Options& o) {
  isac::CampaignConfig cfg = load(o);
  if (o.config.empty()) {
    cfg.system.num_antennas = 32;
    cfg.sweep_values = {1, 3, 5};
    cfg.schemes = {isac::Scheme::PowerAllocation, isac::Scheme::SensingPrecoding,
                   isac::Scheme::JointSDR};
  }
  if (!o.trials) cfg.trials = std::min(cfg.trials, 20);
  cfg.jobs = 1;  // timings are per solve, keep the machine otherwise idle
  const isac::ResultsTable t = isac::run_campaign(cfg);
  std::printf("%-18s %9s %14s %14s\n", "scheme", isac::to_string(cfg.sweep), "solve_s",
              "build_s");
  for (const auto& r : t.summary)
    std::printf("%-18s %9d %14.6f %14.6f\n", isac::to_string(r.scheme), r.sweep_value,
                r.mean_solve_seconds, r.mean_build_seconds);
  return kOk;
}

int cmd_replay(const Options& o) {
  const isac::CampaignConfig cfg = load(o);
  const int point = o.point.value_or(cfg.sweep_values.front());
  if (o.trial < 0) throw isac::ConfigError("--trial must be >= 0");
  const std::uint64_t seed = isac::trial_seed(cfg.seed, o.trial);
  const isac::Scenario sc = isac::generate_scenario(cfg.placement_used(), cfg.system_at(point), seed);
  nlohmann::json j;
  j["trial"] = o.trial;
  j["seed"] = seed;
  j[isac::to_string(cfg.sweep)] = point;
  std::vector<std::vector<double>> ues;
  for (const auto& p : sc.ue_positions) ues.push_back({p.x, p.y});
  j["scenario"]["ue_positions_m"] = ues;
  std::vector<double> doas;
  for (double d : sc.target_doas) doas.push_back(isac::rad2deg(d));
  j["scenario"]["target_doas_deg"] = doas;
  j["scenario"]["target_distances_m"] = sc.target_distances;
  for (const auto& r : isac::run_instance(cfg, point, o.trial)) {
    nlohmann::json e;
    e["status"] = r.status;
    e["objective"] = r.objective;
    e["crlb_trace"] = r.crlb_trace;
    e["min_sinr_margin"] = r.min_sinr_margin;
    e["power_used"] = r.power_used;
    e["iterations"] = r.iterations;
    e["audit_ok"] = r.audit_ok;
    e["solve_seconds"] = r.solve_seconds;
    j["results"][isac::to_string(r.scheme)] = e;
  }
  std::cout << j.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-target ISAC precoder design and CRLB campaigns"};
  app.set_version_flag("--version", ISAC_VERSION);
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "YAML campaign file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the master seed");
    sub->add_option("--schemes", o.schemes,
                    "Comma-separated: joint_sdr,sensing_precoding,orthogonal,power_allocation");
    sub->add_option("--trials", o.trials, "Override the number of trials");
    sub->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");
  };
  CLI::App* run = app.add_subcommand("run", "Run a campaign and write CSV/JSON results");
  common(run);
  run->add_option("--out", o.out, "Output directory");
  CLI::App* validate = app.add_subcommand("validate", "Run the built-in oracle/invariant checks");
  common(validate);
  CLI::App* bench = app.add_subcommand("bench", "Time the solvers per scheme");
  common(bench);
  CLI::App* replay = app.add_subcommand("replay", "Re-run one trial and print it as JSON");
  common(replay);
  replay->add_option("--trial", o.trial, "Trial index");
  replay->add_option("--point", o.point, "Sweep value (default: first)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (!isac::validation::conic_backend_ok()) {
    std::fprintf(stderr, "conic solver self-test failed\n");
    return kBackend;
  }
  try {
    if (*run) return cmd_run(o);
    if (*validate) return cmd_validate(o);
    if (*bench) return cmd_bench(o);
    if (*replay) return cmd_replay(o);
  } catch (const isac::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const isac::CampaignAborted& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kConfig;
  } catch (const isac::OutputError& e) {
    std::fprintf(stderr, "output error: %s\n", e.what());
    return kValidation;
  } catch (const isac::InvalidArgument& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kConfig;
  }
  return kOk;
}
