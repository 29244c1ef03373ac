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

#include "isac/array_geometry.hpp"

#include <algorithm>
#include <random>
#include <vector>

namespace isac {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  double norm() const { return std::hypot(x, y); }
  double bearing() const { return std::atan2(y, x); }  // from the array normal (+x axis)
  bool operator==(const Point2&) const = default;
};

enum class Correlation { LocalScattering, Uncorrelated };

// Thermal noise power in watts: -174 dBm/Hz + 10 log10(B) + noise figure.
inline double thermal_noise_power(double bandwidth_hz, double noise_figure_db) {
  detail::require(bandwidth_hz > 0.0, "thermal_noise_power: bandwidth must be > 0");
  const double dbm = -174.0 + 10.0 * std::log10(bandwidth_hz) + noise_figure_db;
  return std::pow(10.0, (dbm - 30.0) / 10.0);
}

// Link-budget and array constants shared by every module.
struct SystemParams {
  int num_antennas = 64;
  int num_users = 8;
  int num_targets = 3;
  int num_symbols = 100;
  double max_power = 10.0;  // W
  double noise_power = thermal_noise_power(20e6, 7.0);  // W
  double wavelength = kSpeedOfLight / 1.9e9;  // m
  double bandwidth = 20e6;  // Hz
  RVector sinr_thresholds = RVector::Constant(8, 10.0);  // linear, one per UE
  double element_spacing = 0.5;
  double rcs_variance = 1.0;  // linear
  double angular_spread = deg2rad(10.0);  // local-scattering std. dev., rad
  Correlation correlation = Correlation::LocalScattering;

  ArrayConfig array() const { return {num_antennas, element_spacing}; }

  void validate() const {
    array().validate();
    detail::require(num_users >= 0, "SystemParams: num_users must be >= 0");
    detail::require(num_targets >= 1, "SystemParams: num_targets must be >= 1");
    detail::require(num_symbols >= 1, "SystemParams: num_symbols must be >= 1");
    detail::require(max_power > 0.0, "SystemParams: max_power must be > 0");
    detail::require(noise_power > 0.0, "SystemParams: noise_power must be > 0");
    detail::require(wavelength > 0.0, "SystemParams: wavelength must be > 0");
    detail::require(rcs_variance >= 0.0, "SystemParams: rcs_variance must be >= 0");
    detail::require(angular_spread >= 0.0, "SystemParams: angular_spread must be >= 0");
    detail::require(sinr_thresholds.size() == num_users,
                    "SystemParams: need one SINR threshold per UE");
    for (int k = 0; k < num_users; ++k)
      detail::require(sinr_thresholds(k) > 0.0, "SystemParams: SINR thresholds must be > 0");
  }
};

enum class Placement { DeterministicTarget, RandomSeparated, CoLocated };

// Geometry of the drop. The BS sits at the origin with its array normal along +x;
// the 500 m x 500 m area spans x in [0, 500], y in [-250, 250].
struct PlacementConfig {
  Placement mode = Placement::RandomSeparated;
  double area_x_min = 0.0;
  double area_x_max = 500.0;
  double area_y_min = -250.0;
  double area_y_max = 250.0;
  Point2 ue_region_center{140.0, -100.0};
  Point2 target_region_center{170.0, 30.0};
  double region_side = 75.0;
  double target_distance = 150.0;      // deterministic mode
  std::vector<double> target_doas;     // deterministic mode, radians; empty -> spread over +-60 deg
  double min_separation = deg2rad(0.1);
  double min_distance = 10.0;
  int max_redraws = 10000;             // per placed point
};

struct Scenario {
  std::vector<Point2> ue_positions;
  std::vector<double> target_doas;       // rad
  std::vector<double> target_distances;  // m
  SystemParams system;

  int num_users() const { return static_cast<int>(ue_positions.size()); }
  int num_targets() const { return static_cast<int>(target_doas.size()); }

  void validate(double min_separation = deg2rad(0.1)) const;
  bool operator==(const Scenario& other) const;
};

// Realized channels for one trial. Column k of H is conj(h_k), the convention the
// RZF precoder is written in; h_k^T x is then H.col(k).adjoint() * x.
struct ChannelSet {
  CMatrix H;                 // M x K
  RVector ue_gain;           // large-scale gain beta_k
  CVector alpha;             // T complex reflection coefficients
  RVector alpha_variance;    // T variances (radar equation x RCS variance)

  CVector h(int k) const { return H.col(k).conjugate(); }
};

namespace detail {

inline double min_pairwise_separation(const std::vector<double>& angles) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < angles.size(); ++i)
    for (std::size_t j = i + 1; j < angles.size(); ++j)
      best = std::min(best, std::abs(angles[i] - angles[j]));
  return best;
}

inline bool separated_from(double angle, const std::vector<double>& others, double min_sep) {
  return std::all_of(others.begin(), others.end(),
                     [&](double o) { return std::abs(angle - o) >= min_sep; });
}

inline Complex complex_normal(std::mt19937_64& rng, double variance) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double s = std::sqrt(variance / 2.0);
  const double re = n(rng);
  const double im = n(rng);
  return {s * re, s * im};
}

}  // namespace detail

inline void Scenario::validate(double min_separation) const {
  system.validate();
  detail::require(num_users() == system.num_users, "Scenario: UE count mismatch");
  detail::require(num_targets() == system.num_targets, "Scenario: target count mismatch");
  detail::require(target_distances.size() == target_doas.size(),
                  "Scenario: one distance per target required");
  for (double d : target_distances) detail::require(d > 0.0, "Scenario: distances must be > 0");
  for (const auto& p : ue_positions) detail::require(p.norm() > 0.0, "Scenario: UE at the BS");
  detail::require(detail::min_pairwise_separation(target_doas) >= min_separation,
                  "Scenario: targets closer than the minimum angular separation");
  std::vector<double> ue_angles;
  for (const auto& p : ue_positions) ue_angles.push_back(p.bearing());
  detail::require(detail::min_pairwise_separation(ue_angles) >= min_separation,
                  "Scenario: UEs closer than the minimum angular separation");
}

inline bool Scenario::operator==(const Scenario& o) const {
  return ue_positions == o.ue_positions && target_doas == o.target_doas &&
         target_distances == o.target_distances &&
         system.num_antennas == o.system.num_antennas &&
         system.num_users == o.system.num_users && system.num_targets == o.system.num_targets &&
         system.num_symbols == o.system.num_symbols && system.max_power == o.system.max_power &&
         system.noise_power == o.system.noise_power && system.wavelength == o.system.wavelength &&
         system.bandwidth == o.system.bandwidth &&
         system.sinr_thresholds == o.system.sinr_thresholds &&
         system.element_spacing == o.system.element_spacing &&
         system.rcs_variance == o.system.rcs_variance &&
         system.angular_spread == o.system.angular_spread &&
         system.correlation == o.system.correlation;
}

/// Draws UE and target positions. Points are placed one at a time and each is
/// re-drawn until it respects the angular separation to the points before it, so
/// the first T targets of a drop do not depend on how many targets follow.
inline Scenario generate_scenario(const PlacementConfig& placement, const SystemParams& system,
                                  std::uint64_t seed) {
  system.validate();
  detail::require(system.num_users >= 1, "generate_scenario: need at least one UE");
  detail::require(placement.region_side > 0.0, "generate_scenario: region_side must be > 0");
  detail::require(placement.max_redraws >= 1, "generate_scenario: max_redraws must be >= 1");

  Scenario s;
  s.system = system;

  auto draw_point = [&](std::mt19937_64& rng, bool in_area, const Point2& center) {
    if (in_area) {
      std::uniform_real_distribution<double> ux(placement.area_x_min, placement.area_x_max);
      std::uniform_real_distribution<double> uy(placement.area_y_min, placement.area_y_max);
      const double x = ux(rng);
      return Point2{x, uy(rng)};
    }
    const double h = placement.region_side / 2.0;
    std::uniform_real_distribution<double> ux(center.x - h, center.x + h);
    std::uniform_real_distribution<double> uy(center.y - h, center.y + h);
    const double x = ux(rng);
    return Point2{x, uy(rng)};
  };

  auto place = [&](std::mt19937_64& rng, int count, bool in_area, const Point2& center,
                   const char* what) {
    std::vector<Point2> points;
    std::vector<double> angles;
    for (int i = 0; i < count; ++i) {
      int attempts = 0;
      for (;;) {
        if (++attempts > placement.max_redraws)
          throw ScenarioGenerationError(std::string("generate_scenario: could not place ") +
                                        what + " within the redraw budget");
        const Point2 p = draw_point(rng, in_area, center);
        if (p.norm() < placement.min_distance) continue;
        if (!detail::separated_from(p.bearing(), angles, placement.min_separation)) continue;
        points.push_back(p);
        angles.push_back(p.bearing());
        break;
      }
    }
    return points;
  };

  std::mt19937_64 ue_rng(detail::mix_seed(seed, 1));
  std::mt19937_64 target_rng(detail::mix_seed(seed, 2));

  const Point2 colocated = placement.target_region_center;
  switch (placement.mode) {
    case Placement::DeterministicTarget: {
      s.ue_positions = place(ue_rng, system.num_users, true, {}, "UEs");
      std::vector<double> doas = placement.target_doas;
      if (doas.empty()) {
        for (int t = 0; t < system.num_targets; ++t) {
          const double frac =
              system.num_targets == 1 ? 0.5 : static_cast<double>(t) / (system.num_targets - 1);
          doas.push_back(deg2rad(-60.0 + 120.0 * frac));
        }
      }
      if (static_cast<int>(doas.size()) < system.num_targets)
        throw ScenarioGenerationError("generate_scenario: fewer target DoAs than targets");
      doas.resize(system.num_targets);
      if (detail::min_pairwise_separation(doas) < placement.min_separation)
        throw ScenarioGenerationError("generate_scenario: configured target DoAs too close");
      s.target_doas = doas;
      s.target_distances.assign(doas.size(), placement.target_distance);
      break;
    }
    case Placement::RandomSeparated:
    case Placement::CoLocated: {
      const Point2 ue_center =
          placement.mode == Placement::CoLocated ? colocated : placement.ue_region_center;
      s.ue_positions = place(ue_rng, system.num_users, false, ue_center, "UEs");
      const auto targets =
          place(target_rng, system.num_targets, false, placement.target_region_center, "targets");
      for (const auto& p : targets) {
        s.target_doas.push_back(p.bearing());
        s.target_distances.push_back(p.norm());
      }
      break;
    }
  }
  return s;
}

/// 3GPP UMi street-canyon style path loss without shadowing, as a linear gain:
/// PL_dB(d) = 35.3 + 37.6 log10(d / 1 m).
inline double umi_pathloss(double distance) {
  if (!(distance > 0.0) || !std::isfinite(distance))
    throw InvalidArgument("umi_pathloss: distance must be > 0");
  const double pl_db = 35.3 + 37.6 * std::log10(distance);
  return std::pow(10.0, -pl_db / 10.0);
}

/// Local-scattering spatial correlation for a UE at bearing `theta`, Gaussian
/// angular deviations with standard deviation `spread`. Unit diagonal, so tr(R) = M.
inline CMatrix local_scattering_covariance(const ArrayConfig& cfg, double theta, double spread) {
  cfg.validate();
  const int M = cfg.num_antennas;
  CVector first_row(M);
  if (spread <= 0.0) {
    const double k = 2.0 * kPi * cfg.element_spacing * std::sin(theta);
    for (int d = 0; d < M; ++d) first_row(d) = std::polar(1.0, k * d);
  } else {
    // Composite Simpson rule over +-6 standard deviations.
    const int intervals = 600;
    const double lo = -6.0 * spread;
    const double step = 12.0 * spread / intervals;
    RVector weights(intervals + 1);
    RVector phases(intervals + 1);
    double total = 0.0;
    for (int i = 0; i <= intervals; ++i) {
      const double delta = lo + i * step;
      const double simpson = (i == 0 || i == intervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      weights(i) = simpson * std::exp(-0.5 * delta * delta / (spread * spread));
      phases(i) = 2.0 * kPi * cfg.element_spacing * std::sin(theta + delta);
      total += weights(i);
    }
    for (int d = 0; d < M; ++d) {
      Complex acc{0.0, 0.0};
      for (int i = 0; i <= intervals; ++i) acc += weights(i) * std::polar(1.0, phases(i) * d);
      first_row(d) = acc / total;
    }
  }
  CMatrix R(M, M);
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < M; ++n)
      R(m, n) = m >= n ? first_row(m - n) : std::conj(first_row(n - m));
  // Normalize so tr(R) = M exactly.
  R *= static_cast<double>(M) / R.trace().real();
  return R;
}

/// Correlated Rayleigh UE channels h_k ~ CN(0, beta_k R_k); returns the UE part of
/// a ChannelSet (H, ue_gain).
inline ChannelSet generate_ue_channels(const Scenario& scenario, std::uint64_t seed) {
  const SystemParams& sys = scenario.system;
  sys.validate();
  const int M = sys.num_antennas;
  const int K = scenario.num_users();
  std::mt19937_64 rng(detail::mix_seed(seed, 3));

  ChannelSet out;
  out.H.resize(M, K);
  out.ue_gain.resize(K);
  for (int k = 0; k < K; ++k) {
    const Point2& p = scenario.ue_positions[static_cast<std::size_t>(k)];
    const double beta = umi_pathloss(p.norm());
    out.ue_gain(k) = beta;
    CVector z(M);
    for (int m = 0; m < M; ++m) z(m) = detail::complex_normal(rng, 1.0);
    CVector h;
    if (sys.correlation == Correlation::Uncorrelated) {
      h = std::sqrt(beta) * z;
    } else {
      const CMatrix R = local_scattering_covariance(sys.array(), p.bearing(), sys.angular_spread);
      Eigen::SelfAdjointEigenSolver<CMatrix> es(R);
      const RVector lambda = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
      h = std::sqrt(beta) * (es.eigenvectors() * (lambda.asDiagonal() * (es.eigenvectors().adjoint() * z)));
    }
    out.H.col(k) = h.conjugate();
  }
  return out;
}

/// Two-way radar equation times the RCS variance: rcs_var lambda^2 / ((4 pi)^3 d^4).
inline double target_rcs_variance(double distance, double wavelength, double rcs_var) {
  if (!(distance > 0.0) || !(wavelength > 0.0) || !(rcs_var > 0.0))
    throw InvalidArgument("target_rcs_variance: inputs must be > 0");
  const double four_pi = 4.0 * kPi;
  return rcs_var * wavelength * wavelength / (four_pi * four_pi * four_pi * std::pow(distance, 4));
}

/// Swerling-I reflection coefficients alpha_t ~ CN(0, variance_t), drawn in order.
inline CVector draw_rcs(const RVector& variances, std::uint64_t seed) {
  for (int t = 0; t < variances.size(); ++t)
    detail::require(variances(t) >= 0.0, "draw_rcs: variances must be >= 0");
  std::mt19937_64 rng(detail::mix_seed(seed, 4));
  CVector alpha(variances.size());
  for (int t = 0; t < variances.size(); ++t) alpha(t) = detail::complex_normal(rng, variances(t));
  return alpha;
}

/// UE channels and target reflection coefficients for one trial.
inline ChannelSet generate_channels(const Scenario& scenario, std::uint64_t seed) {
  ChannelSet out = generate_ue_channels(scenario, seed);
  const int T = scenario.num_targets();
  out.alpha_variance.resize(T);
  for (int t = 0; t < T; ++t) {
    const double d = scenario.target_distances[static_cast<std::size_t>(t)];
    out.alpha_variance(t) = scenario.system.rcs_variance > 0.0
                                ? target_rcs_variance(d, scenario.system.wavelength,
                                                      scenario.system.rcs_variance)
                                : 0.0;
  }
  out.alpha = draw_rcs(out.alpha_variance, seed);
  return out;
}

}  // namespace isac
