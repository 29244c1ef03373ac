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

#include "isac/experiments.hpp"

#include <gtest/gtest.h>

namespace {

using namespace isac;

struct Instance {
  Scenario scenario;
  ChannelSet channels;
};

Instance draw(int M, int K, int T, std::uint64_t seed, double rcs_db = 0.0) {
  CampaignConfig cfg;
  cfg.system.num_antennas = M;
  cfg.system.num_users = K;
  cfg.rcs_variance_db = rcs_db;
  const SystemParams sys = cfg.system_at(T);
  Instance in;
  in.scenario = generate_scenario(cfg.placement_used(), sys, seed);
  in.channels = generate_channels(in.scenario, seed);
  return in;
}

ProblemSpec spec_for(Scheme s, const Instance& in) {
  return make_problem_spec(s, in.scenario, in.channels);
}

// Drops every UE: sensing only.
ProblemSpec without_users(ProblemSpec spec) {
  const int M = spec.array.num_antennas;
  spec.H = CMatrix(M, 0);
  spec.thresholds = RVector(0);
  spec.ue_directions = CMatrix(M, 0);
  return spec;
}

void expect_certified(const ProblemSpec& spec, const PrecodingSolution& sol) {
  ASSERT_TRUE(sol.optimal()) << to_string(spec.scheme) << ": " << sol.message;
  for (const auto& R : sol.ue_covariances)
    EXPECT_GE(detail::min_eigenvalue(R), -1e-7 * std::abs(R.trace().real()));
  if (sol.sensing_covariance.size() > 0)
    EXPECT_GE(detail::min_eigenvalue(sol.sensing_covariance),
              -1e-7 * std::max(1e-30, std::abs(sol.sensing_covariance.trace().real())));
  for (int k = 0; k < sol.ue_powers.size(); ++k) EXPECT_GE(sol.ue_powers(k), -1e-9 * spec.max_power);

  const RVector s = achieved_sinr(spec, sol);
  const RVector g = spec.effective_thresholds();
  for (int k = 0; k < spec.num_users(); ++k) EXPECT_GE(s(k), g(k) * (1.0 - 1e-6)) << "UE " << k;
  EXPECT_LE(sol.power_used(), spec.max_power * (1.0 + 1e-6));

  const double audited = audited_crlb_trace(spec, sol);
  EXPECT_NEAR(sol.objective, audited, 1e-4 * audited);
  if (spec.scheme != Scheme::Orthogonal) {
    const FisherModel model(spec.array, spec.doas, spec.alphas, spec.noise_power, spec.num_symbols);
    const RMatrix Jphi = doa_information(model.blocks(sol.illuminating_covariance()));
    EXPECT_GE(detail::min_eigenvalue(RMatrix(Jphi - sol.D)), -1e-7 * Jphi.trace());
  }
}

TEST(OrthogonalThreshold, ClosedForms) {
  EXPECT_DOUBLE_EQ(orthogonal_sinr_threshold(10.0, 1.0), 10.0);
  EXPECT_NEAR(orthogonal_sinr_threshold(10.0, 0.5), 120.0, 1e-12);
  EXPECT_NEAR(orthogonal_sinr_threshold(3.0, 0.25), 255.0, 1e-10);
  EXPECT_THROW(orthogonal_sinr_threshold(10.0, 0.0), InvalidArgument);
  EXPECT_THROW(orthogonal_sinr_threshold(10.0, 1.5), InvalidArgument);
}

TEST(SchemeNames, RoundTrip) {
  for (Scheme s : {Scheme::JointSDR, Scheme::SensingPrecoding, Scheme::Orthogonal,
                   Scheme::PowerAllocation})
    EXPECT_EQ(scheme_from_string(to_string(s)), s);
  EXPECT_FALSE(scheme_from_string("zf").has_value());
}

TEST(Optimizer, EverySchemeCertifiesAndOrders) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    // 16 antennas cannot carry the default target in half the frame
    const Instance in = draw(16, 4, 2, seed);
    auto mk = [&](Scheme sc) {
      ProblemSpec spec = spec_for(sc, in);
      spec.thresholds.setConstant(3.0);
      return spec;
    };
    const ProblemSpec js = mk(Scheme::JointSDR);
    const ProblemSpec ss = mk(Scheme::SensingPrecoding);
    const ProblemSpec os = mk(Scheme::Orthogonal);
    const ProblemSpec ps = mk(Scheme::PowerAllocation);
    const PrecodingSolution j = solve_precoding(js);
    const PrecodingSolution s = solve_precoding(ss);
    const PrecodingSolution o = solve_precoding(os);
    const PrecodingSolution p = solve_precoding(ps);
    expect_certified(js, j);
    expect_certified(ss, s);
    expect_certified(os, o);
    expect_certified(ps, p);
    EXPECT_LE(j.objective, s.objective * (1.0 + 1e-6)) << "seed " << seed;
    EXPECT_LE(s.objective, p.objective * (1.0 + 1e-6)) << "seed " << seed;
    EXPECT_LE(s.objective, o.objective * (1.0 + 1e-6)) << "seed " << seed;
  }
}

TEST(Optimizer, MorePowerNeverHurts) {
  const Instance in = draw(16, 4, 2, 11);
  for (Scheme sc : {Scheme::JointSDR, Scheme::SensingPrecoding, Scheme::PowerAllocation}) {
    ProblemSpec spec = spec_for(sc, in);
    const double base = solve_precoding(spec).objective;
    spec.max_power *= 10.0;
    const double more = solve_precoding(spec).objective;
    if (sc == Scheme::JointSDR) EXPECT_LT(more, base);
    else EXPECT_LE(more, base * (1.0 + 1e-6));
  }
}

TEST(Optimizer, StricterSinrNeverHelps) {
  for (std::uint64_t seed : {21u, 22u, 23u, 24u, 25u}) {
    const Instance in = draw(16, 4, 2, seed);
    for (Scheme sc : {Scheme::JointSDR, Scheme::SensingPrecoding, Scheme::PowerAllocation}) {
      ProblemSpec spec = spec_for(sc, in);
      const PrecodingSolution a = solve_precoding(spec);
      spec.thresholds *= 2.0;
      const PrecodingSolution b = solve_precoding(spec);
      if (!a.optimal() || !b.optimal()) continue;
      EXPECT_GE(b.objective, a.objective * (1.0 - 1e-6)) << to_string(sc) << " seed " << seed;
    }
  }
}

TEST(Optimizer, VanishingSinrTargetsMatchSensingOnly) {
  const Instance in = draw(16, 4, 2, 31);
  ProblemSpec spec = spec_for(Scheme::JointSDR, in);
  spec.thresholds.setConstant(1e-12);
  const PrecodingSolution loose = solve_precoding(spec);
  const PrecodingSolution alone = solve_precoding(without_users(spec));
  ASSERT_TRUE(loose.optimal());
  ASSERT_TRUE(alone.optimal());
  EXPECT_NEAR(loose.objective, alone.objective, 1e-4 * alone.objective);
}

TEST(Optimizer, OrthogonalWithoutUsersTradesTimeForPower) {
  // half the symbols at twice the average power: same bound as sharing,
  // half of what the same symbols would give at the original power
  const Instance in = draw(16, 4, 3, 41);
  const ProblemSpec shared = without_users(spec_for(Scheme::SensingPrecoding, in));
  ProblemSpec split = shared;
  split.scheme = Scheme::Orthogonal;
  split.eta = 0.5;
  ProblemSpec short_frame = shared;
  short_frame.num_symbols = shared.num_symbols / 2;
  const PrecodingSolution a = solve_precoding(shared);
  const PrecodingSolution b = solve_precoding(split);
  const PrecodingSolution c = solve_precoding(short_frame);
  ASSERT_TRUE(a.optimal());
  ASSERT_TRUE(b.optimal());
  ASSERT_TRUE(c.optimal());
  EXPECT_NEAR(b.objective, a.objective, 1e-5 * a.objective);
  EXPECT_NEAR(c.objective, 2.0 * a.objective, 1e-5 * c.objective);
}

TEST(Optimizer, PowerAllocationBeamsDoNotInterfere) {
  const Instance in = draw(16, 4, 3, 51);
  const ProblemSpec spec = spec_for(Scheme::PowerAllocation, in);
  const PrecodingSolution sol = solve_precoding(spec);
  ASSERT_TRUE(sol.optimal());
  for (int k = 0; k < spec.num_users(); ++k) {
    const CVector hc = spec.H.col(k);
    double leak = 0.0;
    for (int t = 0; t < sol.sensing_powers.size(); ++t)
      leak += sol.sensing_powers(t) * std::norm(hc.dot(sol.sensing_directions.col(t)));
    const double signal = sol.ue_powers(k) * std::norm(hc.dot(sol.ue_directions.col(k)));
    EXPECT_LT(leak, 1e-15 * signal);
  }
}

TEST(Optimizer, TinyInstanceAgainstGrid) {
  for (std::uint64_t seed : {61u, 62u, 63u}) {
    const Instance in = draw(4, 1, 1, seed);
    ProblemSpec spec;
    try {
      spec = spec_for(Scheme::PowerAllocation, in);
    } catch (const DegenerateProjection&) {
      continue;
    }
    const PrecodingSolution pa = solve_precoding(spec);
    const GridOracleResult grid = grid_oracle_power_allocation(spec, 0.005 * spec.max_power);
    ASSERT_EQ(pa.optimal(), grid.feasible);
    if (!pa.optimal()) continue;
    EXPECT_GE(grid.trace, pa.objective * (1.0 - 1e-6));
    EXPECT_LE(pa.objective, grid.trace * 1.01);
    const PrecodingSolution joint = solve_precoding(spec_for(Scheme::JointSDR, in));
    ASSERT_TRUE(joint.optimal());
    EXPECT_LE(joint.objective, grid.trace * (1.0 + 1e-6));
  }
}

TEST(Optimizer, UnreachableSinrIsInfeasible) {
  const Instance in = draw(16, 4, 2, 71);
  for (Scheme sc : {Scheme::JointSDR, Scheme::SensingPrecoding, Scheme::Orthogonal,
                    Scheme::PowerAllocation}) {
    ProblemSpec spec = spec_for(sc, in);
    spec.thresholds.setConstant(1e9);
    const PrecodingSolution sol = solve_precoding(spec);
    EXPECT_EQ(sol.status, SolveStatus::Infeasible) << to_string(sc);
    EXPECT_TRUE(std::isinf(sol.objective));
  }
}

TEST(Optimizer, InvalidSpecRejected) {
  const Instance in = draw(16, 4, 2, 81);
  ProblemSpec spec = spec_for(Scheme::Orthogonal, in);
  spec.eta = 1.0;
  EXPECT_THROW(solve_precoding(spec), InvalidArgument);
  spec = spec_for(Scheme::SensingPrecoding, in);
  spec.max_power = 0.0;
  EXPECT_THROW(solve_precoding(spec), InvalidArgument);
}

}  // namespace
