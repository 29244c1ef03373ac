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

// YAML campaign files and result emission (CSV + JSON manifest).
//
// Schema (every key optional; angles in degrees, powers in watts):
//
//   name: fig1a
//   seed: 1
//   trials: 200
//   jobs: 1
//   schemes: [joint_sdr, sensing_precoding, orthogonal, power_allocation]
//   sweep: {variable: targets, values: [1, 2, 3, 4, 5, 6, 7]}
//   system:
//     antennas: 64          users: 8            targets: 3
//     symbols: 100          max_power: 10       sinr_db: 10
//     carrier_hz: 1.9e9     bandwidth_hz: 20e6  noise_figure_db: 7
//     rcs_variance_db: 0    element_spacing: 0.5
//     angular_spread_deg: 10                    correlation: local_scattering
//   placement:
//     mode: separated       # separated | colocated | deterministic
//     ue_center: [140, -100]   target_center: [170, 30]   region_side: 75
//     target_distance: 150     target_doas_deg: []
//     min_separation_deg: 0.1  min_distance: 10
//   orthogonal: {eta: 0.5}
//   rzf: {omega: auto}
//   solver: {tolerance: 1e-8, max_iterations: 200}

#include "isac/experiments.hpp"

#include <yaml-cpp/yaml.h>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef ISAC_VERSION
#define ISAC_VERSION "unknown"
#endif

namespace isac {

class ConfigError : public Error {
 public:
  using Error::Error;
};

class OutputError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string where(const YAML::Node& n) {
  const YAML::Mark m = n.Mark();
  if (m.line < 0) return "";
  return "line " + std::to_string(m.line + 1) + ": ";
}

inline void check_keys(const YAML::Node& map, const std::set<std::string>& allowed,
                       const std::string& section) {
  if (!map) return;
  if (!map.IsMap()) throw ConfigError(where(map) + section + " must be a mapping");
  for (const auto& kv : map) {
    const std::string key = kv.first.as<std::string>();
    if (!allowed.count(key))
      throw ConfigError(where(kv.first) + "unknown key '" + key + "' in " + section);
  }
}

template <class T>
T get(const YAML::Node& map, const char* key, T fallback) {
  const YAML::Node n = map[key];
  if (!n) return fallback;
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where(n) + "bad value for '" + key + "'");
  }
}

inline Point2 get_point(const YAML::Node& map, const char* key, Point2 fallback) {
  const YAML::Node n = map[key];
  if (!n) return fallback;
  if (!n.IsSequence() || n.size() != 2)
    throw ConfigError(where(n) + "'" + key + "' must be [x, y]");
  return {n[0].as<double>(), n[1].as<double>()};
}

inline Placement placement_from_string(const std::string& s, const YAML::Node& n) {
  if (s == "separated") return Placement::RandomSeparated;
  if (s == "colocated") return Placement::CoLocated;
  if (s == "deterministic") return Placement::DeterministicTarget;
  throw ConfigError(where(n) + "unknown placement mode '" + s + "'");
}

inline const char* to_string(Placement p) {
  switch (p) {
    case Placement::RandomSeparated: return "separated";
    case Placement::CoLocated: return "colocated";
    case Placement::DeterministicTarget: return "deterministic";
  }
  return "separated";
}

// Shortest text that parses back to the same double.
inline std::string num(double v) {
  char buf[32];
  for (int p = 6; p <= 17; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Builds a campaign from YAML text. Missing keys keep their defaults; unknown
/// keys and out-of-range values raise ConfigError with the offending line.
inline CampaignConfig parse_config_string(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("yaml: ") + e.what());
  }
  CampaignConfig cfg;
  if (!root || root.IsNull()) return cfg;
  using detail::get;
  detail::check_keys(root, {"name", "seed", "trials", "jobs", "schemes", "sweep", "system",
                            "placement", "orthogonal", "rzf", "solver"},
                     "top level");

  cfg.name = get<std::string>(root, "name", cfg.name);
  cfg.seed = get<std::uint64_t>(root, "seed", cfg.seed);
  cfg.trials = get<int>(root, "trials", cfg.trials);
  if (cfg.trials < 1) throw ConfigError(detail::where(root["trials"]) + "trials must be >= 1");
  cfg.jobs = get<int>(root, "jobs", cfg.jobs);
  if (cfg.jobs < 0) throw ConfigError(detail::where(root["jobs"]) + "jobs must be >= 0");

  if (const YAML::Node s = root["schemes"]) {
    if (!s.IsSequence() || s.size() == 0)
      throw ConfigError(detail::where(s) + "schemes must be a non-empty list");
    cfg.schemes.clear();
    for (const auto& e : s) {
      const auto sc = scheme_from_string(e.as<std::string>());
      if (!sc) throw ConfigError(detail::where(e) + "unknown scheme '" + e.as<std::string>() + "'");
      cfg.schemes.push_back(*sc);
    }
  }

  if (const YAML::Node sw = root["sweep"]) {
    detail::check_keys(sw, {"variable", "values"}, "sweep");
    const std::string var = get<std::string>(sw, "variable", "targets");
    if (var == "targets") cfg.sweep = SweepVariable::Targets;
    else if (var == "antennas") cfg.sweep = SweepVariable::Antennas;
    else throw ConfigError(detail::where(sw["variable"]) + "sweep variable must be targets or antennas");
    if (const YAML::Node v = sw["values"]) {
      if (!v.IsSequence() || v.size() == 0)
        throw ConfigError(detail::where(v) + "sweep values must be a non-empty list");
      cfg.sweep_values = v.as<std::vector<int>>();
      for (int x : cfg.sweep_values)
        if (x < 1) throw ConfigError(detail::where(v) + "sweep values must be >= 1");
    }
  }

  SystemParams& sys = cfg.system;
  if (const YAML::Node s = root["system"]) {
    detail::check_keys(s, {"antennas", "users", "targets", "symbols", "max_power", "sinr_db",
                           "carrier_hz", "bandwidth_hz", "noise_figure_db", "rcs_variance_db",
                           "element_spacing", "angular_spread_deg", "correlation"},
                       "system");
    sys.num_antennas = get<int>(s, "antennas", sys.num_antennas);
    sys.num_users = get<int>(s, "users", sys.num_users);
    sys.num_targets = get<int>(s, "targets", sys.num_targets);
    sys.num_symbols = get<int>(s, "symbols", sys.num_symbols);
    sys.max_power = get<double>(s, "max_power", sys.max_power);
    cfg.sinr_db = get<double>(s, "sinr_db", cfg.sinr_db);
    cfg.carrier_hz = get<double>(s, "carrier_hz", cfg.carrier_hz);
    sys.bandwidth = get<double>(s, "bandwidth_hz", sys.bandwidth);
    cfg.noise_figure_db = get<double>(s, "noise_figure_db", cfg.noise_figure_db);
    cfg.rcs_variance_db = get<double>(s, "rcs_variance_db", cfg.rcs_variance_db);
    sys.element_spacing = get<double>(s, "element_spacing", sys.element_spacing);
    cfg.angular_spread_deg = get<double>(s, "angular_spread_deg", cfg.angular_spread_deg);
    const std::string corr = get<std::string>(s, "correlation", "local_scattering");
    if (corr == "local_scattering") sys.correlation = Correlation::LocalScattering;
    else if (corr == "uncorrelated") sys.correlation = Correlation::Uncorrelated;
    else throw ConfigError(detail::where(s["correlation"]) + "correlation must be local_scattering or uncorrelated");
    for (const char* key : {"antennas", "users", "targets", "symbols"}) {
      if (s[key] && s[key].as<int>() < (std::string(key) == "users" ? 0 : 1))
        throw ConfigError(detail::where(s[key]) + "'" + key + "' out of range");
    }
    for (const char* key : {"max_power", "carrier_hz", "bandwidth_hz", "element_spacing"}) {
      if (s[key] && !(s[key].as<double>() > 0.0))
        throw ConfigError(detail::where(s[key]) + "'" + key + "' must be > 0");
    }
  }
  sys.sinr_thresholds = RVector::Constant(std::max(0, sys.num_users), db2lin(cfg.sinr_db));

  PlacementConfig& pl = cfg.placement;
  if (const YAML::Node p = root["placement"]) {
    detail::check_keys(p, {"mode", "ue_center", "target_center", "region_side", "target_distance",
                           "target_doas_deg", "min_separation_deg", "min_distance"},
                       "placement");
    if (p["mode"]) pl.mode = detail::placement_from_string(p["mode"].as<std::string>(), p["mode"]);
    pl.ue_region_center = detail::get_point(p, "ue_center", pl.ue_region_center);
    pl.target_region_center = detail::get_point(p, "target_center", pl.target_region_center);
    pl.region_side = get<double>(p, "region_side", pl.region_side);
    pl.target_distance = get<double>(p, "target_distance", pl.target_distance);
    cfg.target_doas_deg = get<std::vector<double>>(p, "target_doas_deg", {});
    cfg.min_separation_deg = get<double>(p, "min_separation_deg", cfg.min_separation_deg);
    pl.min_distance = get<double>(p, "min_distance", pl.min_distance);
  }

  if (const YAML::Node o = root["orthogonal"]) {
    detail::check_keys(o, {"eta"}, "orthogonal");
    cfg.eta = get<double>(o, "eta", cfg.eta);
  }
  if (const YAML::Node r = root["rzf"]) {
    detail::check_keys(r, {"omega"}, "rzf");
    const YAML::Node om = r["omega"];
    if (om && om.as<std::string>() != "auto") {
      cfg.omega = get<double>(r, "omega", cfg.omega);
      if (cfg.omega < 0.0) throw ConfigError(detail::where(om) + "omega must be >= 0 or auto");
    }
  }
  if (const YAML::Node s = root["solver"]) {
    detail::check_keys(s, {"tolerance", "max_iterations"}, "solver");
    const double tol = get<double>(s, "tolerance", cfg.solver.gap_tol);
    if (!(tol > 0.0)) throw ConfigError(detail::where(s["tolerance"]) + "tolerance must be > 0");
    cfg.solver.gap_tol = cfg.solver.feasibility_tol = cfg.solver.infeasibility_tol = tol;
    cfg.solver.max_iterations = get<int>(s, "max_iterations", cfg.solver.max_iterations);
  }

  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline CampaignConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_string(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Canonical YAML for a campaign; parse_config_string(serialize_config(c)) gives c back.
inline std::string serialize_config(const CampaignConfig& c) {
  using detail::num;
  const SystemParams& s = c.system;
  const PlacementConfig& p = c.placement;
  std::ostringstream o;
  o << "name: \"" << c.name << "\"\n";
  o << "seed: " << c.seed << "\n";
  o << "trials: " << c.trials << "\n";
  o << "jobs: " << c.jobs << "\n";
  o << "schemes: [";
  for (std::size_t i = 0; i < c.schemes.size(); ++i) o << (i ? ", " : "") << to_string(c.schemes[i]);
  o << "]\n";
  o << "sweep:\n  variable: " << to_string(c.sweep) << "\n  values: [";
  for (std::size_t i = 0; i < c.sweep_values.size(); ++i) o << (i ? ", " : "") << c.sweep_values[i];
  o << "]\n";
  o << "system:\n"
    << "  antennas: " << s.num_antennas << "\n"
    << "  users: " << s.num_users << "\n"
    << "  targets: " << s.num_targets << "\n"
    << "  symbols: " << s.num_symbols << "\n"
    << "  max_power: " << num(s.max_power) << "\n"
    << "  sinr_db: " << num(c.sinr_db) << "\n"
    << "  carrier_hz: " << num(c.carrier_hz) << "\n"
    << "  bandwidth_hz: " << num(s.bandwidth) << "\n"
    << "  noise_figure_db: " << num(c.noise_figure_db) << "\n"
    << "  rcs_variance_db: " << num(c.rcs_variance_db) << "\n"
    << "  element_spacing: " << num(s.element_spacing) << "\n"
    << "  angular_spread_deg: " << num(c.angular_spread_deg) << "\n"
    << "  correlation: "
    << (s.correlation == Correlation::LocalScattering ? "local_scattering" : "uncorrelated") << "\n";
  o << "placement:\n"
    << "  mode: " << detail::to_string(p.mode) << "\n"
    << "  ue_center: [" << num(p.ue_region_center.x) << ", " << num(p.ue_region_center.y) << "]\n"
    << "  target_center: [" << num(p.target_region_center.x) << ", "
    << num(p.target_region_center.y) << "]\n"
    << "  region_side: " << num(p.region_side) << "\n"
    << "  target_distance: " << num(p.target_distance) << "\n"
    << "  target_doas_deg: [";
  for (std::size_t i = 0; i < c.target_doas_deg.size(); ++i)
    o << (i ? ", " : "") << num(c.target_doas_deg[i]);
  o << "]\n"
    << "  min_separation_deg: " << num(c.min_separation_deg) << "\n"
    << "  min_distance: " << num(p.min_distance) << "\n";
  o << "orthogonal:\n  eta: " << num(c.eta) << "\n";
  o << "rzf:\n  omega: " << (c.omega < 0.0 ? std::string("auto") : num(c.omega)) << "\n";
  o << "solver:\n  tolerance: " << num(c.solver.gap_tol)
    << "\n  max_iterations: " << c.solver.max_iterations << "\n";
  return o.str();
}

/// Hash of the canonical config, excluding the worker count (which never
/// changes results).
inline std::string config_hash(const CampaignConfig& c) {
  CampaignConfig k = c;
  k.jobs = 1;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(detail::fnv1a(serialize_config(k))));
  return buf;
}

inline std::string trials_csv(const ResultsTable& t) {
  using detail::num;
  std::ostringstream o;
  o << "sweep_variable,sweep_value,trial,seed,scheme,status,objective,crlb_trace,"
       "min_sinr_margin,power_used,iterations,audit_ok\n";
  for (const auto& r : t.trials) {
    o << to_string(t.config.sweep) << ',' << r.sweep_value << ',' << r.trial << ',' << r.seed << ','
      << to_string(r.scheme) << ',' << r.status << ',' << num(r.objective) << ','
      << num(r.crlb_trace) << ',' << num(r.min_sinr_margin) << ',' << num(r.power_used) << ','
      << r.iterations << ',' << (r.audit_ok ? 1 : 0) << '\n';
  }
  return o.str();
}

inline std::string summary_csv(const ResultsTable& t) {
  using detail::num;
  std::ostringstream o;
  o << "scheme,sweep_variable,sweep_value,rmse_deg,mean_solve_seconds,infeasible,singular,failed,"
       "used,mean_build_seconds\n";
  for (const auto& r : t.summary) {
    o << to_string(r.scheme) << ',' << to_string(t.config.sweep) << ',' << r.sweep_value << ','
      << num(r.rmse_degrees) << ',' << num(r.mean_solve_seconds) << ',' << r.infeasible << ','
      << r.singular << ',' << r.failed << ',' << r.used << ',' << num(r.mean_build_seconds) << '\n';
  }
  return o.str();
}

inline std::string timing_csv(const ResultsTable& t) {
  using detail::num;
  std::ostringstream o;
  o << "sweep_value,trial,scheme,solve_seconds,build_seconds\n";
  for (const auto& r : t.trials)
    o << r.sweep_value << ',' << r.trial << ',' << to_string(r.scheme) << ','
      << num(r.solve_seconds) << ',' << num(r.build_seconds) << '\n';
  return o.str();
}

inline nlohmann::json manifest(const ResultsTable& t) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["code_version"] = ISAC_VERSION;
  j["name"] = t.config.name;
  j["config_hash"] = config_hash(t.config);
  j["master_seed"] = t.config.seed;
  j["trials"] = t.config.trials;
  j["sweep_variable"] = to_string(t.config.sweep);
  j["sweep_values"] = t.config.sweep_values;
  std::vector<std::string> schemes;
  for (Scheme s : t.config.schemes) schemes.emplace_back(to_string(s));
  j["schemes"] = schemes;
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < t.config.trials; ++i) seeds.push_back(trial_seed(t.config.seed, i));
  j["trial_seeds"] = seeds;
  j["audit_failures"] = t.audit_failures();
  j["files"] = {"trials.csv", "summary.csv", "timing.csv", "config.yaml"};
  return j;
}

namespace detail {
inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw OutputError("cannot write " + p.string());
  out << content;
  if (!out) throw OutputError("write failed for " + p.string());
}
}  // namespace detail

/// Writes trials.csv, summary.csv, timing.csv, config.yaml and manifest.json.
/// Only trials.csv is guaranteed byte-identical between runs; the others carry
/// timings.
inline void emit_results(const ResultsTable& t, const std::filesystem::path& dir) {
  if (t.trials.empty()) throw OutputError("emit_results: empty results table");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw OutputError("cannot create " + dir.string() + ": " + ec.message());
  detail::write_file(dir / "trials.csv", trials_csv(t));
  detail::write_file(dir / "summary.csv", summary_csv(t));
  detail::write_file(dir / "timing.csv", timing_csv(t));
  detail::write_file(dir / "config.yaml", serialize_config(t.config));
  detail::write_file(dir / "manifest.json", manifest(t).dump(2) + "\n");
}

}  // namespace isac
