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

#include "isac/fisher_crlb.hpp"
#include "isac/channel_model.hpp"

#include <gtest/gtest.h>

#include <random>
#include <vector>

namespace {

using namespace isac;

CMatrix random_psd(int M, int rank, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  CMatrix G(M, rank);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < rank; ++j) G(i, j) = Complex(n(rng), n(rng));
  return G * G.adjoint();
}

CVector random_alphas(int T, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  CVector a(T);
  for (int t = 0; t < T; ++t) a(t) = Complex(n(rng), n(rng));
  return a;
}

double rel(const RMatrix& a, const RMatrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
}

// Brute force: G(theta) = sum_t alpha_t a_t a_t^T, parameters
// [phi_1..phi_T, Re a_1, Im a_1, ..., Re a_T, Im a_T],
// J_ij = (2N / sigma^2) Re tr(dG_i R dG_j^H).
RMatrix brute_fisher(const ArrayConfig& cfg, const std::vector<double>& phis, const CVector& alpha,
                     const CMatrix& R, double sigma2, int N) {
  const int T = static_cast<int>(phis.size());
  const int M = cfg.num_antennas;
  std::vector<CMatrix> dG;
  for (int t = 0; t < T; ++t) {
    CVector a(M), d(M);
    const double u = kPi * 2.0 * cfg.element_spacing;
    for (int m = 0; m < M; ++m) {
      a(m) = std::exp(Complex(0.0, u * m * std::sin(phis[t])));
      d(m) = Complex(0.0, u * m * std::cos(phis[t])) * a(m);
    }
    dG.push_back(alpha(t) * (d * a.transpose() + a * d.transpose()));
  }
  for (int t = 0; t < T; ++t) {
    CVector a(M);
    for (int m = 0; m < M; ++m)
      a(m) = std::exp(Complex(0.0, 2.0 * kPi * cfg.element_spacing * m * std::sin(phis[t])));
    dG.push_back(a * a.transpose());
    dG.push_back(kJ * a * a.transpose());
  }
  const int n = 3 * T;
  RMatrix J(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) J(i, j) = (2.0 * N / sigma2) * (dG[i] * R * dG[j].adjoint()).trace().real();
  return J;
}

TEST(Steering, ScalarLoopOracle) {
  const ArrayConfig cfg{16, 0.5};
  const CVector a = steering_vector(0.7, cfg);
  for (int m = 0; m < 16; ++m) {
    const double ph = kPi * m * std::sin(0.7);
    EXPECT_NEAR(a(m).real(), std::cos(ph), 1e-14);
    EXPECT_NEAR(a(m).imag(), std::sin(ph), 1e-14);
  }
  EXPECT_NEAR(a.squaredNorm(), 16.0, 1e-12);
}

TEST(Steering, DerivativeMatchesFiniteDifference) {
  const ArrayConfig cfg{16, 0.5};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.4, 1.4);
  for (int i = 0; i < 50; ++i) {
    const double phi = u(rng);
    const double h = 1e-6;
    const CVector fd = (steering_vector(phi + h, cfg) - steering_vector(phi - h, cfg)) / (2 * h);
    const CVector d = steering_derivative(phi, cfg);
    EXPECT_LT((fd - d).norm(), 1e-6 * d.norm()) << "phi " << phi;
  }
}

TEST(Steering, OuterProductInvariants) {
  const ArrayConfig cfg{12, 0.5};
  const double phi = -0.3;
  const SteeringResponse r = steering_outer(phi, cfg);
  EXPECT_LT((r.A - r.A.transpose()).norm(), 1e-13);
  EXPECT_GT((r.A - r.A.adjoint()).norm(), 1e-3);  // symmetric, not Hermitian
  Eigen::JacobiSVD<CMatrix> svd(r.A);
  EXPECT_NEAR(svd.singularValues()(0), 12.0, 1e-10);
  EXPECT_LT(svd.singularValues()(1), 1e-10);
  const double h = 1e-6;
  const CMatrix fd = (steering_outer(phi + h, cfg).A - steering_outer(phi - h, cfg).A) / (2 * h);
  EXPECT_LT((fd - r.A_dot).norm(), 1e-5 * r.A_dot.norm());
}

TEST(Steering, RejectsBadInput) {
  EXPECT_THROW(steering_vector(0.1, ArrayConfig{1, 0.5}), InvalidArgument);
  EXPECT_THROW(steering_vector(0.1, ArrayConfig{8, 0.0}), InvalidArgument);
  EXPECT_THROW(steering_vector(std::nan(""), ArrayConfig{8, 0.5}), InvalidArgument);
}

TEST(Fisher, MatchesBruteForceTrace) {
  std::mt19937_64 rng(5);
  const ArrayConfig cfg{10, 0.5};
  for (int T : {1, 2, 3}) {
    std::vector<double> phis;
    for (int t = 0; t < T; ++t) phis.push_back(-0.6 + 0.5 * t + 0.01 * t * t);
    const CVector alpha = random_alphas(T, rng);
    const CMatrix R = random_psd(10, 3, rng);
    const FisherModel model(cfg, phis, alpha, 0.7, 40);
    const RMatrix J = model.blocks(R).full();
    EXPECT_LT(rel(J, brute_fisher(cfg, phis, alpha, R, 0.7, 40)), 1e-11) << "T=" << T;
  }
}

TEST(Fisher, IdentityCovarianceSingleTarget) {
  const ArrayConfig cfg{16, 0.5};
  const double phi = 0.4;
  const FisherModel model(cfg, {phi}, CVector::Ones(1), 1.0, 1);
  const FisherBlocks b = model.blocks(CMatrix::Identity(16, 16));
  const double expected = 2.0 * steering_outer(phi, cfg).A_dot.squaredNorm();
  EXPECT_NEAR(b.phiphi(0, 0), expected, 1e-10 * expected);
}

TEST(Fisher, AlphaLayoutIsRealImagInterleaved) {
  // d/d(Re a) = A, d/d(Im a) = jA: the 2x2 block is [[t, 0], [0, t]] with t real
  // for a Hermitian covariance, and J_phi,Im a = -Im of the Re-column partner.
  std::mt19937_64 rng(6);
  const ArrayConfig cfg{8, 0.5};
  const CVector alpha = random_alphas(2, rng);
  const CMatrix R = random_psd(8, 8, rng);
  const FisherModel model(cfg, {0.2, -0.5}, alpha, 1.0, 10);
  const FisherBlocks b = model.blocks(R);
  const RMatrix J = brute_fisher(cfg, {0.2, -0.5}, alpha, R, 1.0, 10);
  EXPECT_LT(rel(b.phialpha, J.topRightCorner(2, 4)), 1e-12);
  EXPECT_LT(rel(b.alphaalpha, J.bottomRightCorner(4, 4)), 1e-12);
  for (int t = 0; t < 2; ++t) {
    EXPECT_NEAR(b.alphaalpha(2 * t, 2 * t), b.alphaalpha(2 * t + 1, 2 * t + 1),
                1e-12 * b.alphaalpha(2 * t, 2 * t));
    EXPECT_NEAR(b.alphaalpha(2 * t, 2 * t + 1), 0.0, 1e-12 * b.alphaalpha(2 * t, 2 * t));
  }
}

TEST(Fisher, AffineAssembly) {
  std::mt19937_64 rng(7);
  const ArrayConfig cfg{16, 0.5};
  const FisherModel model(cfg, {-0.3, 0.1, 0.8}, random_alphas(3, rng), 2.0, 100);
  std::uniform_real_distribution<double> up(0.0, 3.0);
  CMatrix total = CMatrix::Zero(16, 16);
  FisherBlocks sum = FisherBlocks::zero(3);
  for (int k = 0; k < 4; ++k) {
    CMatrix V = random_psd(16, 1, rng);
    V /= V.trace().real();
    const double p = up(rng);
    total += p * V;
    const CoefficientMatrices c = coefficient_matrices(V, model);
    sum += p * FisherBlocks{c.A, c.B, c.C};
  }
  const CMatrix Rs = random_psd(16, 4, rng);
  total += Rs;
  const CoefficientMatrices cs = coefficient_matrices(Rs, model);
  sum += FisherBlocks{cs.A, cs.B, cs.C};
  EXPECT_LT(rel(sum.full(), model.blocks(total).full()), 1e-10);
}

TEST(Fisher, FullMatrixIsPsd) {
  std::mt19937_64 rng(8);
  const ArrayConfig cfg{16, 0.5};
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int n = 0; n < 100; ++n) {
    std::vector<double> phis{u(rng), u(rng), u(rng)};
    const FisherModel model(cfg, phis, random_alphas(3, rng), 1.0, 100);
    const RMatrix J = model.blocks(random_psd(16, 1 + n % 5, rng)).full();
    EXPECT_LT((J - J.transpose()).cwiseAbs().maxCoeff(), 1e-9 * J.cwiseAbs().maxCoeff());
    EXPECT_GE(detail::min_eigenvalue(J), -1e-9 * J.trace());
  }
}

TEST(Crlb, SchurMatchesFullInverse) {
  std::mt19937_64 rng(9);
  const ArrayConfig cfg{16, 0.5};
  for (int n = 0; n < 20; ++n) {
    const FisherModel model(cfg, {0.05 * n - 0.5}, random_alphas(1, rng), 1.0, 100);
    const FisherBlocks b = model.blocks(random_psd(16, 2, rng));
    const double full = b.full().inverse()(0, 0);
    EXPECT_NEAR(doa_crlb(b).trace, full, 1e-10 * full);
  }
  // T = 3: the Schur block inverse equals the DoA block of the full inverse.
  const FisherModel model(cfg, {-0.4, 0.0, 0.6}, random_alphas(3, rng), 1.0, 100);
  const FisherBlocks b = model.blocks(random_psd(16, 6, rng));
  EXPECT_LT(rel(doa_crlb(b).crlb, b.full().inverse().topLeftCorner(3, 3)), 1e-9);
}

TEST(Crlb, TenfoldSymbolsDividesByTen) {
  std::mt19937_64 rng(10);
  const ArrayConfig cfg{16, 0.5};
  const std::vector<double> phis{-0.2, 0.3, 0.9};
  for (int rank : {1, 2, 5}) {
    const CVector alpha = random_alphas(3, rng);
    const CMatrix R = random_psd(16, rank, rng);
    const CrlbResult a = doa_crlb(R, phis, alpha, 1.0, 100, cfg);
    const CrlbResult b = doa_crlb(R, phis, alpha, 1.0, 1000, cfg);
    EXPECT_LT(rel(b.crlb * 10.0, a.crlb), 1e-12);
    EXPECT_NEAR(b.trace * 10.0, a.trace, 1e-12 * a.trace);
    // sigma^2 scales the bound linearly.
    const CrlbResult c = doa_crlb(R, phis, alpha, 4.0, 100, cfg);
    EXPECT_LT(rel(c.crlb, 4.0 * a.crlb), 1e-12);
    // same bound as inverting the scaled blocks directly
    const CrlbResult d = doa_crlb(fisher_blocks(R, phis, alpha, 1.0, 100, cfg));
    EXPECT_LT(rel(d.crlb, a.crlb), 1e-8);
  }
}

TEST(Crlb, MoreIlluminationNeverHurts) {
  std::mt19937_64 rng(11);
  const ArrayConfig cfg{16, 0.5};
  for (int n = 0; n < 20; ++n) {
    const FisherModel model(cfg, {-0.7, 0.1, 0.4}, random_alphas(3, rng), 1.0, 100);
    const CMatrix R = random_psd(16, 4, rng);
    const double before = doa_crlb(model.blocks(R)).trace;
    const double after = doa_crlb(model.blocks(R + random_psd(16, 1, rng))).trace;
    EXPECT_LE(after, before * (1.0 + 1e-12));
  }
}

TEST(Crlb, NoIlluminationIsSingular) {
  const ArrayConfig cfg{8, 0.5};
  const FisherModel model(cfg, {0.3}, CVector::Ones(1), 1.0, 100);
  EXPECT_THROW(doa_crlb(model.blocks(CMatrix::Zero(8, 8))), SingularFisher);
  EXPECT_TRUE(std::isinf(crlb_trace_or_inf(model.blocks(CMatrix::Zero(8, 8)))));
}

TEST(Rmse, UnitConversionAndOrder) {
  const double one = deg2rad(1.0) * deg2rad(1.0);
  std::vector<double> single{one};
  EXPECT_NEAR(rmse_degrees(single, 1), 1.0, 1e-12);
  // Mean of trace/T over trials, then square root.
  std::vector<double> mixed{2.0e-4, 6.0e-4, 1.0e-4};
  const double expected = 180.0 / kPi * std::sqrt((2.0e-4 / 2 + 6.0e-4 / 2 + 1.0e-4 / 2) / 3.0);
  EXPECT_NEAR(rmse_degrees(mixed, 2), expected, 1e-12 * expected);
  std::vector<double> with_inf{one, std::numeric_limits<double>::infinity()};
  const RmseSummary s = rmse_summary(with_inf, 1);
  EXPECT_EQ(s.used, 1);
  EXPECT_EQ(s.excluded, 1);
  std::vector<double> none;
  EXPECT_THROW(rmse_degrees(none, 1), InvalidArgument);
}

}  // namespace
