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

// Self-checks behind `isac validate`: Fisher decomposition, steering
// derivatives, the brute-force power grid and per-instance scheme ordering.

#include "isac/experiments.hpp"

#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace isac::validation {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline CMatrix random_psd(int M, int rank, std::mt19937_64& rng) {
  CMatrix G(M, rank);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < rank; ++j) G(i, j) = isac::detail::complex_normal(rng, 1.0);
  return G * G.adjoint();
}

inline std::vector<double> random_doas(int T, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-deg2rad(70.0), deg2rad(70.0));
  std::vector<double> d;
  while (static_cast<int>(d.size()) < T) {
    const double x = u(rng);
    if (isac::detail::separated_from(x, d, deg2rad(1.0))) d.push_back(x);
  }
  return d;
}

inline CVector random_alphas(int T, std::mt19937_64& rng) {
  CVector a(T);
  for (int t = 0; t < T; ++t) a(t) = isac::detail::complex_normal(rng, 1.0);
  return a;
}

inline double rel(const RMatrix& a, const RMatrix& b) {
  const double n = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  return n > 0.0 ? (a - b).cwiseAbs().maxCoeff() / n : 0.0;
}

inline std::string fmt(double v) {
  std::ostringstream o;
  o << v;
  return o.str();
}

}  // namespace detail

/// Fisher blocks of a sum of beams equal the power-weighted sum of per-beam
/// coefficient matrices.
inline Check fisher_decomposition(int instances = 100, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  const ArrayConfig array{16, 0.5};
  double worst = 0.0;
  for (int n = 0; n < instances; ++n) {
    const auto doas = detail::random_doas(3, rng);
    const FisherModel model(array, doas, detail::random_alphas(3, rng), 1.0, 100);
    std::uniform_real_distribution<double> up(0.1, 2.0);
    CMatrix total = CMatrix::Zero(16, 16);
    FisherBlocks sum = FisherBlocks::zero(3);
    for (int k = 0; k < 5; ++k) {
      const CMatrix V = detail::random_psd(16, k == 4 ? 3 : 1, rng);
      const double p = up(rng);
      total += p * V;
      const CoefficientMatrices c = coefficient_matrices(V, model);
      sum += p * FisherBlocks{c.A, c.B, c.C};
    }
    worst = std::max(worst, detail::rel(sum.full(), model.blocks(total).full()));
  }
  return {"fisher decomposition", worst < 1e-10, "max rel err " + detail::fmt(worst)};
}

/// Steering derivative against central differences, and the Schur-complement
/// CRLB against inversion of the full Fisher matrix.
inline Check derivatives(int instances = 100, std::uint64_t seed = 12) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-deg2rad(80.0), deg2rad(80.0));
  const ArrayConfig array{16, 0.5};
  double worst_fd = 0.0;
  double worst_schur = 0.0;
  for (int n = 0; n < instances; ++n) {
    const double phi = u(rng);
    const double h = 1e-6;
    const CVector fd =
        (steering_vector(phi + h, array) - steering_vector(phi - h, array)) / (2.0 * h);
    const CVector d = steering_derivative(phi, array);
    worst_fd = std::max(worst_fd, (fd - d).norm() / d.norm());

    const FisherModel model(array, {phi}, detail::random_alphas(1, rng), 1.0, 100);
    const FisherBlocks b = model.blocks(detail::random_psd(16, 2, rng));
    const RMatrix full_inv = b.full().inverse();
    const double schur = doa_crlb(b).trace;
    worst_schur = std::max(worst_schur, std::abs(schur - full_inv(0, 0)) / full_inv(0, 0));
  }
  return {"steering derivative / schur crlb", worst_fd < 1e-5 && worst_schur < 1e-10,
          "fd " + detail::fmt(worst_fd) + ", schur " + detail::fmt(worst_schur)};
}

/// Power allocation on tiny instances against exhaustive search.
inline Check grid_oracle(int instances = 10, std::uint64_t seed = 13) {
  CampaignConfig cfg;
  cfg.system.num_antennas = 4;
  cfg.system.num_users = 1;
  double worst = 0.0;
  int compared = 0;
  std::string failure;
  for (int n = 0; n < instances; ++n) {
    SystemParams sys = cfg.system_at(1);
    const std::uint64_t s = trial_seed(seed, n);
    const Scenario sc = generate_scenario(cfg.placement_used(), sys, s);
    const ChannelSet ch = generate_channels(sc, s);
    ProblemSpec spec;
    try {
      spec = make_problem_spec(Scheme::PowerAllocation, sc, ch);
    } catch (const DegenerateProjection&) {
      continue;
    }
    const PrecodingSolution sol = solve_precoding(spec);
    const GridOracleResult oracle = grid_oracle_power_allocation(spec, 0.005 * spec.max_power);
    if (sol.optimal() != oracle.feasible) {
      failure = "feasibility disagrees on instance " + std::to_string(n);
      break;
    }
    if (!sol.optimal()) continue;
    ++compared;
    worst = std::max(worst, std::abs(oracle.trace - sol.objective) / sol.objective);
  }
  const bool ok = failure.empty() && worst < 0.01;
  return {"grid oracle", ok,
          failure.empty() ? "max rel gap " + detail::fmt(worst) + " over " +
                                std::to_string(compared) + " instances"
                          : failure};
}

/// obj(joint) <= obj(sensing) <= obj(power allocation) on paired instances.
inline Check scheme_ordering(int instances = 10, std::uint64_t seed = 14, int jobs = 1) {
  CampaignConfig cfg;
  cfg.system.num_antennas = 32;
  cfg.sweep_values = {3};
  cfg.trials = instances;
  cfg.seed = seed;
  cfg.jobs = jobs;
  cfg.schemes = {Scheme::JointSDR, Scheme::SensingPrecoding, Scheme::PowerAllocation};
  const ResultsTable t = run_campaign(cfg);
  int violations = 0;
  int compared = 0;
  for (int n = 0; n < instances; ++n) {
    const TrialResult& j = t.trials[static_cast<std::size_t>(3 * n)];
    const TrialResult& s = t.trials[static_cast<std::size_t>(3 * n + 1)];
    const TrialResult& p = t.trials[static_cast<std::size_t>(3 * n + 2)];
    if (!j.optimal() || !s.optimal() || !p.optimal()) continue;
    ++compared;
    if (j.objective > s.objective * (1.0 + 1e-6) || s.objective > p.objective * (1.0 + 1e-6))
      ++violations;
  }
  const bool ok = violations == 0 && compared > 0 && t.audit_failures() == 0;
  return {"scheme ordering", ok,
          std::to_string(violations) + " violations, " + std::to_string(t.audit_failures()) +
              " audit failures over " + std::to_string(compared) + " instances"};
}

/// Solves a small SDP with a known optimum; false means the conic backend is
/// not usable on this machine.
inline bool conic_backend_ok() {
  // min tr(C X) s.t. tr(X) = 1, X PSD has value lambda_min(C).
  RMatrix C(3, 3);
  C << 2, -1, 0, -1, 2, -1, 0, -1, 2;
  conic::Problem p;
  const int b = p.add_block(3);
  conic::Coefficient obj;
  obj.matrix = conic::SparseSym::from_dense(C);
  p.objective_blocks.emplace_back(b, obj);
  conic::Constraint c;
  conic::Coefficient id;
  id.identity = 1.0;
  c.blocks.emplace_back(b, id);
  c.rhs = 1.0;
  p.add_constraint(c);
  try {
    const conic::Result r = conic::solve(p);
    return r.status == conic::Status::Optimal &&
           std::abs(r.primal_objective - (2.0 - std::sqrt(2.0))) < 1e-6;
  } catch (const std::exception&) {
    return false;
  }
}

inline std::vector<Check> run_all(int jobs = 1) {
  return {fisher_decomposition(), derivatives(), grid_oracle(), scheme_ordering(10, 14, jobs)};
}

}  // namespace isac::validation
