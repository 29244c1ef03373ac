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

#pragma once

// Monte Carlo campaigns: sweep the number of targets or antennas, draw paired
// instances, solve every scheme on the same channels and audit each answer.

#include "isac/channel_model.hpp"
#include "isac/fisher_crlb.hpp"
#include "isac/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace isac {

enum class SweepVariable { Targets, Antennas };

inline const char* to_string(SweepVariable v) {
  return v == SweepVariable::Targets ? "targets" : "antennas";
}

// Counts, powers and geometry live in `system` and `placement`; quantities users
// give in dB or degrees are kept in those units here and converted by
// system_at() / placement_used(), so a config file round-trips exactly.
struct CampaignConfig {
  std::string name = "campaign";
  SystemParams system;
  double sinr_db = 10.0;
  double carrier_hz = 1.9e9;
  double noise_figure_db = 7.0;
  double rcs_variance_db = 0.0;
  double angular_spread_deg = 10.0;
  PlacementConfig placement;
  double min_separation_deg = 0.1;
  std::vector<double> target_doas_deg;  // deterministic placement; empty = spread
  SweepVariable sweep = SweepVariable::Targets;
  std::vector<int> sweep_values{1, 2, 3, 4, 5, 6, 7};
  int trials = 200;
  std::uint64_t seed = 1;
  std::vector<Scheme> schemes{Scheme::JointSDR, Scheme::SensingPrecoding, Scheme::Orthogonal,
                              Scheme::PowerAllocation};
  double eta = 0.5;
  double omega = -1.0;  // < 0: K sigma^2 / P_max
  conic::Settings solver;
  int jobs = 1;         // worker threads, 0 = hardware concurrency
  double max_failure_fraction = 0.5;

  void validate() const {
    detail::require(trials >= 1, "campaign: trials must be >= 1");
    detail::require(!schemes.empty(), "campaign: scheme list is empty");
    detail::require(!sweep_values.empty(), "campaign: sweep has no values");
    detail::require(eta > 0.0 && eta < 1.0, "campaign: eta must lie in (0, 1)");
    detail::require(jobs >= 0, "campaign: jobs must be >= 0");
    detail::require(carrier_hz > 0.0, "campaign: carrier must be > 0");
    detail::require(system.bandwidth > 0.0, "campaign: bandwidth must be > 0");
    detail::require(min_separation_deg >= 0.0, "campaign: min separation must be >= 0");
    for (int v : sweep_values) {
      detail::require(v >= 1, "campaign: sweep values must be >= 1");
      system_at(v).validate();
    }
  }

  // System parameters at one sweep point.
  SystemParams system_at(int value) const {
    SystemParams s = system;
    if (sweep == SweepVariable::Targets) s.num_targets = value;
    else s.num_antennas = value;
    s.wavelength = kSpeedOfLight / carrier_hz;
    s.noise_power = thermal_noise_power(s.bandwidth, noise_figure_db);
    s.sinr_thresholds = RVector::Constant(std::max(0, s.num_users), db2lin(sinr_db));
    s.rcs_variance = db2lin(rcs_variance_db);
    s.angular_spread = deg2rad(angular_spread_deg);
    return s;
  }

  PlacementConfig placement_used() const {
    PlacementConfig p = placement;
    p.min_separation = deg2rad(min_separation_deg);
    p.target_doas.clear();
    for (double d : target_doas_deg) p.target_doas.push_back(deg2rad(d));
    return p;
  }
};

// Seed of trial `trial`; shared by every scheme and sweep point (paired draws).
inline std::uint64_t trial_seed(std::uint64_t master, int trial) {
  return detail::mix_seed(master, static_cast<std::uint64_t>(trial) + 1000);
}

struct TrialResult {
  int sweep_value = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::SensingPrecoding;
  std::string status;          // optimal, infeasible, numerical_failure, singular, scenario_error
  double objective = std::numeric_limits<double>::infinity();
  double crlb_trace = std::numeric_limits<double>::infinity();  // audited, rad^2
  double min_sinr_margin = std::numeric_limits<double>::quiet_NaN();  // min_k SINR_k / gamma_k - 1
  double power_used = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool audit_ok = true;
  std::string audit_message;
  double solve_seconds = 0.0;
  double build_seconds = 0.0;

  bool optimal() const { return status == "optimal"; }
  // Trace entering the RMSE; +inf unless the trial produced a usable bound.
  double usable_trace() const {
    return optimal() ? crlb_trace : std::numeric_limits<double>::infinity();
  }
};

struct AuditTolerances {
  double crlb_rel = 1e-4;
  double sinr_rel = 1e-6;
  double power_rel = 1e-6;
};

struct SummaryRow {
  Scheme scheme = Scheme::SensingPrecoding;
  int sweep_value = 0;
  double rmse_degrees = std::numeric_limits<double>::quiet_NaN();
  int used = 0;
  int infeasible = 0;
  int singular = 0;
  int failed = 0;  // numerical failures and scenario errors
  double mean_solve_seconds = 0.0;
  double mean_build_seconds = 0.0;
};

struct ResultsTable {
  CampaignConfig config;
  std::vector<TrialResult> trials;  // ordered by (sweep value, trial, scheme)
  std::vector<SummaryRow> summary;  // ordered by (sweep value, scheme)

  int audit_failures() const {
    return static_cast<int>(std::count_if(trials.begin(), trials.end(),
                                          [](const TrialResult& t) { return !t.audit_ok; }));
  }

  const SummaryRow* find(Scheme s, int value) const {
    for (const auto& r : summary)
      if (r.scheme == s && r.sweep_value == value) return &r;
    return nullptr;
  }
};

class CampaignAborted : public Error {
 public:
  using Error::Error;
};

/// Solves one scheme on one drawn instance and audits the answer: the CRLB is
/// recomputed from the returned variables, SINRs from the channels, and the power
/// budget from the returned powers/covariances.
inline TrialResult run_trial(const ProblemSpec& spec, const AuditTolerances& tol = {},
                             const conic::Settings& settings = {}) {
  TrialResult r;
  r.scheme = spec.scheme;
  const PrecodingSolution sol = solve_precoding(spec, settings);
  r.solve_seconds = sol.solve_seconds;
  r.build_seconds = sol.build_seconds;
  r.iterations = sol.iterations;
  if (!sol.optimal()) {
    r.status = to_string(sol.status);
    return r;
  }
  r.objective = sol.objective;
  r.power_used = sol.power_used();
  r.crlb_trace = audited_crlb_trace(spec, sol);
  if (!std::isfinite(r.crlb_trace)) {
    r.status = "singular";
    return r;
  }
  r.status = "optimal";

  std::string msg;
  const double rel = std::abs(r.crlb_trace - r.objective) / std::abs(r.crlb_trace);
  if (!(rel < tol.crlb_rel)) msg += "crlb mismatch " + std::to_string(rel) + "; ";
  if (spec.num_users() > 0) {
    const RVector gamma = spec.effective_thresholds();
    const RVector s = achieved_sinr(spec, sol);
    r.min_sinr_margin = (s.array() / gamma.array()).minCoeff() - 1.0;
    if (!(r.min_sinr_margin >= -tol.sinr_rel)) msg += "sinr below target; ";
  }
  if (!(r.power_used <= spec.max_power * (1.0 + tol.power_rel))) msg += "power budget exceeded; ";
  r.audit_ok = msg.empty();
  r.audit_message = msg;
  return r;
}

/// Draws one instance and runs every requested scheme on the same channels.
inline std::vector<TrialResult> run_instance(const CampaignConfig& cfg, int sweep_value,
                                             int trial, const AuditTolerances& tol = {}) {
  const std::uint64_t seed = trial_seed(cfg.seed, trial);
  std::vector<TrialResult> out;
  auto stamp = [&](TrialResult r) {
    r.sweep_value = sweep_value;
    r.trial = trial;
    r.seed = seed;
    return r;
  };
  Scenario scenario;
  ChannelSet channels;
  try {
    scenario = generate_scenario(cfg.placement_used(), cfg.system_at(sweep_value), seed);
    channels = generate_channels(scenario, seed);
  } catch (const Error& e) {
    for (Scheme s : cfg.schemes) {
      TrialResult r;
      r.scheme = s;
      r.status = "scenario_error";
      r.audit_message = e.what();
      out.push_back(stamp(r));
    }
    return out;
  }
  for (Scheme s : cfg.schemes) {
    TrialResult r;
    try {
      const ProblemSpec spec = make_problem_spec(s, scenario, channels, cfg.eta, cfg.omega);
      r = run_trial(spec, tol, cfg.solver);
    } catch (const DegenerateProjection& e) {
      r.scheme = s;
      r.status = "singular";
      r.audit_message = e.what();
    } catch (const SingularFisher& e) {
      r.scheme = s;
      r.status = "singular";
      r.audit_message = e.what();
    }
    out.push_back(stamp(r));
  }
  return out;
}

/// Per-(scheme, sweep value) aggregation; depends only on the trial records.
inline std::vector<SummaryRow> summarize(const CampaignConfig& cfg,
                                         const std::vector<TrialResult>& trials) {
  std::vector<SummaryRow> rows;
  for (int v : cfg.sweep_values) {
    for (Scheme s : cfg.schemes) {
      SummaryRow row;
      row.scheme = s;
      row.sweep_value = v;
      std::vector<double> traces;
      int n = 0;
      for (const auto& t : trials) {
        if (t.scheme != s || t.sweep_value != v) continue;
        ++n;
        row.mean_solve_seconds += t.solve_seconds;
        row.mean_build_seconds += t.build_seconds;
        if (t.status == "infeasible") ++row.infeasible;
        else if (t.status == "singular") ++row.singular;
        else if (!t.optimal()) ++row.failed;
        traces.push_back(t.usable_trace());
      }
      if (n > 0) {
        row.mean_solve_seconds /= n;
        row.mean_build_seconds /= n;
      }
      const int T = cfg.system_at(v).num_targets;
      const bool any = std::any_of(traces.begin(), traces.end(),
                                   [](double x) { return std::isfinite(x); });
      if (any) {
        const RmseSummary rs = rmse_summary(traces, T);
        row.rmse_degrees = rs.rmse_degrees;
        row.used = rs.used;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

/// Runs the campaign on a pool of `cfg.jobs` threads. Every instance draws its
/// randomness from (master seed, trial index), so the records do not depend on
/// scheduling. Throws CampaignAborted when more than max_failure_fraction of the
/// trials of any (scheme, sweep value) fail to produce a bound.
inline ResultsTable run_campaign(const CampaignConfig& cfg, const AuditTolerances& tol = {}) {
  cfg.validate();
  const int points = static_cast<int>(cfg.sweep_values.size());
  const int jobs_total = points * cfg.trials;
  std::vector<std::vector<TrialResult>> slots(static_cast<std::size_t>(jobs_total));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto worker = [&] {
    for (;;) {
      const int j = next.fetch_add(1);
      if (j >= jobs_total) return;
      try {
        slots[static_cast<std::size_t>(j)] =
            run_instance(cfg, cfg.sweep_values[static_cast<std::size_t>(j / cfg.trials)],
                         j % cfg.trials, tol);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(jobs_total);
      }
    }
  };
  int threads = cfg.jobs == 0 ? static_cast<int>(std::thread::hardware_concurrency()) : cfg.jobs;
  threads = std::clamp(threads, 1, std::max(1, jobs_total));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  ResultsTable table;
  table.config = cfg;
  for (auto& s : slots)
    for (auto& r : s) table.trials.push_back(std::move(r));
  table.summary = summarize(cfg, table.trials);

  for (const auto& row : table.summary) {
    const int bad = row.infeasible + row.singular + row.failed;
    if (bad > cfg.max_failure_fraction * cfg.trials) {
      throw CampaignAborted(std::string("campaign: ") + std::to_string(bad) + " of " +
                            std::to_string(cfg.trials) + " trials failed for " +
                            to_string(row.scheme) + " at " + to_string(cfg.sweep) + "=" +
                            std::to_string(row.sweep_value));
    }
  }
  return table;
}

struct GridOracleResult {
  bool feasible = false;
  RVector ue_powers;
  RVector sensing_powers;
  double trace = std::numeric_limits<double>::infinity();
  long long points = 0;
};

/// Exhaustive search over power grids for the power-allocation scheme on tiny
/// instances, using the same fixed directions as the solver. Grid points are
/// multiples of `step` (absolute, watts) with total power <= P_max.
inline GridOracleResult grid_oracle_power_allocation(const ProblemSpec& spec, double step) {
  spec.validate();
  const int K = spec.num_users();
  const int T = spec.num_targets();
  detail::require(K <= 1 && T <= 1 && spec.array.num_antennas <= 4,
                  "grid oracle: limited to K <= 1, T <= 1, M <= 4");
  detail::require(step > 0.0, "grid oracle: step must be > 0");
  detail::require(spec.ue_directions.cols() == K && spec.sensing_directions.cols() == T,
                  "grid oracle: fixed directions missing");
  const int n = static_cast<int>(std::floor(spec.max_power / step + 1e-9));
  const int dims = K + T;
  const double count = std::pow(static_cast<double>(n + 1), dims);
  detail::require(count <= 1e7, "grid oracle: more than 1e7 grid points");

  const FisherModel model(spec.array, spec.doas, spec.alphas, spec.noise_power, spec.num_symbols);
  GridOracleResult best;
  const int n_ue = K > 0 ? n : 0;
  const int n_s = T > 0 ? n : 0;
  for (int i = 0; i <= n_ue; ++i) {
    for (int l = 0; l <= n_s; ++l) {
      if (i + l > n) continue;
      ++best.points;
      const double p = i * step;
      const double q = l * step;
      CMatrix R = CMatrix::Zero(spec.array.num_antennas, spec.array.num_antennas);
      if (K > 0) R += p * spec.ue_directions.col(0) * spec.ue_directions.col(0).adjoint();
      if (T > 0) R += q * spec.sensing_directions.col(0) * spec.sensing_directions.col(0).adjoint();
      if (K > 0) {
        const CVector c = spec.H.col(0);
        const double signal = p * std::norm((c.adjoint() * spec.ue_directions.col(0))(0, 0));
        const double interference =
            T > 0 ? q * std::norm((c.adjoint() * spec.sensing_directions.col(0))(0, 0)) : 0.0;
        if (signal < spec.thresholds(0) * (interference + spec.noise_power)) continue;
      }
      best.feasible = true;
      const double tr = crlb_trace_or_inf(model, R);
      if (tr < best.trace) {
        best.trace = tr;
        best.ue_powers = RVector::Constant(K, p);
        best.sensing_powers = RVector::Constant(T, q);
      }
    }
  }
  return best;
}

}  // namespace isac
