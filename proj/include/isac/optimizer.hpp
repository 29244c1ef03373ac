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

// Precoder design problems. All four minimize tr(D^{-1}) subject to per-UE SINR
// constraints, a power budget and the Schur-complement LMI
//
//   [ J_pp - D   J_pa ]
//   [ J_pa^T     J_aa ]  PSD,
//
// written as SDPs for isac::conic. tr(D^{-1}) uses the epigraph
// min tr(U) s.t. [[U, I], [I, D]] PSD.
//
// Covariances only enter the problems through X^H R X with X = [E | H] and
// through tr(R), so each covariance is optimized inside span(X), which has
// dimension at most 2T + K, instead of the full M-dimensional space. Complex
// Hermitian blocks are lifted to real symmetric [[Re R, -Im R], [Im R, Re R]].

#include "isac/channel_model.hpp"
#include "isac/conic/sdp.hpp"
#include "isac/fisher_crlb.hpp"
#include "isac/precoding.hpp"

#include <chrono>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace isac {

enum class Scheme { JointSDR, SensingPrecoding, Orthogonal, PowerAllocation };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::JointSDR: return "joint_sdr";
    case Scheme::SensingPrecoding: return "sensing_precoding";
    case Scheme::Orthogonal: return "orthogonal";
    case Scheme::PowerAllocation: return "power_allocation";
  }
  return "unknown";
}

inline std::optional<Scheme> scheme_from_string(std::string_view name) {
  for (Scheme s : {Scheme::JointSDR, Scheme::SensingPrecoding, Scheme::Orthogonal,
                   Scheme::PowerAllocation})
    if (name == to_string(s)) return s;
  return std::nullopt;
}

enum class SolveStatus { Optimal, Infeasible, NumericalFailure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

/// (gamma + 1)^(1/eta) - 1: the SINR a UE needs when it only owns a fraction
/// eta of the channel uses but must keep the same rate.
inline double orthogonal_sinr_threshold(double gamma_thr, double eta) {
  detail::require(eta > 0.0 && eta <= 1.0, "orthogonal_sinr_threshold: eta must be in (0, 1]");
  detail::require(gamma_thr >= 0.0, "orthogonal_sinr_threshold: gamma must be >= 0");
  if (eta == 1.0) return gamma_thr;
  return std::pow(gamma_thr + 1.0, 1.0 / eta) - 1.0;
}

struct ProblemSpec {
  Scheme scheme = Scheme::SensingPrecoding;
  ArrayConfig array;
  CMatrix H;                 // M x K, column k = conj(h_k)
  std::vector<double> doas;  // rad
  CVector alphas;
  RVector thresholds;        // K linear SINR targets
  double max_power = 10.0;
  double noise_power = 1.0;
  int num_symbols = 100;
  double eta = 0.5;          // communication share, orthogonal scheme only
  double omega = -1.0;       // RZF regularization; < 0 selects K sigma^2 / P_max
  CMatrix ue_directions;     // M x K, fixed-direction schemes
  CMatrix sensing_directions;  // M x T, power allocation

  int num_users() const { return static_cast<int>(H.cols()); }
  int num_targets() const { return static_cast<int>(doas.size()); }
  double regularization() const {
    return omega >= 0.0 ? omega : num_users() * noise_power / max_power;
  }
  // SINR targets the solver must meet (orthogonal thresholds are mapped).
  RVector effective_thresholds() const {
    if (scheme != Scheme::Orthogonal) return thresholds;
    RVector out(thresholds.size());
    for (int k = 0; k < thresholds.size(); ++k)
      out(k) = orthogonal_sinr_threshold(thresholds(k), eta);
    return out;
  }

  void validate() const {
    array.validate();
    const int M = array.num_antennas;
    const int K = num_users();
    const int T = num_targets();
    detail::require(H.rows() == M || K == 0, "ProblemSpec: H must have M rows");
    detail::require(T >= 1, "ProblemSpec: need at least one target");
    detail::require(alphas.size() == T, "ProblemSpec: one alpha per target");
    detail::require(thresholds.size() == K, "ProblemSpec: one SINR threshold per UE");
    for (int k = 0; k < K; ++k)
      detail::require(thresholds(k) > 0.0 && std::isfinite(thresholds(k)),
                      "ProblemSpec: SINR thresholds must be > 0");
    detail::require(max_power > 0.0 && std::isfinite(max_power), "ProblemSpec: P_max must be > 0");
    detail::require(noise_power > 0.0, "ProblemSpec: noise power must be > 0");
    detail::require(num_symbols >= 1, "ProblemSpec: N must be >= 1");
    if (scheme == Scheme::Orthogonal)
      detail::require(eta > 0.0 && eta < 1.0, "ProblemSpec: eta must be in (0, 1)");
    if (scheme != Scheme::JointSDR)
      detail::require(ue_directions.rows() == M && ue_directions.cols() == K,
                      "ProblemSpec: fixed UE directions must be M x K");
    if (scheme == Scheme::PowerAllocation)
      detail::require(sensing_directions.rows() == M && sensing_directions.cols() == T,
                      "ProblemSpec: sensing directions must be M x T");
  }
};

/// Problem spec for one scheme on one channel draw. Fixed directions are RZF for
/// the UEs and nullspace ZF beams for the targets (power allocation only); the
/// latter throws DegenerateProjection when a target hides in the UE span.
inline ProblemSpec make_problem_spec(Scheme scheme, const Scenario& scenario,
                                     const ChannelSet& channels, double eta = 0.5,
                                     double omega = -1.0) {
  const SystemParams& sys = scenario.system;
  ProblemSpec spec;
  spec.scheme = scheme;
  spec.array = sys.array();
  spec.H = channels.H;
  spec.doas = scenario.target_doas;
  spec.alphas = channels.alpha;
  spec.thresholds = sys.sinr_thresholds;
  spec.max_power = sys.max_power;
  spec.noise_power = sys.noise_power;
  spec.num_symbols = sys.num_symbols;
  spec.eta = eta;
  spec.omega = omega;
  if (scheme != Scheme::JointSDR) spec.ue_directions = rzf_precoders(spec.H, spec.regularization());
  if (scheme == Scheme::PowerAllocation) {
    spec.sensing_directions.resize(spec.array.num_antennas, spec.num_targets());
    for (int t = 0; t < spec.num_targets(); ++t)
      spec.sensing_directions.col(t) =
          zf_sensing_beam(spec.H, spec.doas[static_cast<std::size_t>(t)], spec.array);
  }
  return spec;
}

struct PrecodingSolution {
  Scheme scheme = Scheme::SensingPrecoding;
  SolveStatus status = SolveStatus::NumericalFailure;
  std::string message;
  std::vector<CMatrix> ue_covariances;  // joint SDR
  CMatrix ue_directions;                // fixed-direction schemes
  RVector ue_powers;
  CMatrix sensing_covariance;           // joint SDR (zero), sensing precoding, orthogonal
  CMatrix sensing_directions;           // power allocation
  RVector sensing_powers;
  RMatrix D;
  double objective = std::numeric_limits<double>::infinity();  // tr(D^-1), see below
  double eta = 1.0;      // orthogonal: objective already carries 1/(1 - eta)
  int iterations = 0;
  double solve_seconds = 0.0;  // conic solve only
  double build_seconds = 0.0;  // problem construction and pre-checks

  bool optimal() const { return status == SolveStatus::Optimal; }

  void clear_variables() {
    ue_covariances.clear();
    ue_directions.resize(0, 0);
    ue_powers.resize(0);
    sensing_covariance.resize(0, 0);
    sensing_directions.resize(0, 0);
    sensing_powers.resize(0);
    D.resize(0, 0);
    objective = std::numeric_limits<double>::infinity();
  }

  // Covariance the targets are illuminated with while the DoAs are estimated.
  CMatrix illuminating_covariance() const {
    CMatrix R = sensing_covariance;
    if (scheme == Scheme::Orthogonal) return R;
    for (const auto& Rk : ue_covariances) R += Rk;
    for (int k = 0; k < ue_powers.size(); ++k)
      R += ue_powers(k) * ue_directions.col(k) * ue_directions.col(k).adjoint();
    for (int t = 0; t < sensing_powers.size(); ++t)
      R += sensing_powers(t) * sensing_directions.col(t) * sensing_directions.col(t).adjoint();
    return detail::hermitian_part(R);
  }

  // Left-hand side of the power budget.
  double power_used() const {
    double ue = ue_powers.sum();
    for (const auto& Rk : ue_covariances) ue += Rk.trace().real();
    const double sensing = sensing_covariance.trace().real() + sensing_powers.sum();
    if (scheme == Scheme::Orthogonal) return eta * ue + (1.0 - eta) * sensing;
    return ue + sensing;
  }
};

/// SINR of every UE under a solution, evaluated from the channel directly.
inline RVector achieved_sinr(const ProblemSpec& spec, const PrecodingSolution& sol) {
  const int K = spec.num_users();
  RVector out(K);
  if (spec.scheme == Scheme::JointSDR) {
    for (int k = 0; k < K; ++k) {
      const CVector c = spec.H.col(k);
      double signal = 0.0;
      double interference = 0.0;
      for (int i = 0; i < K; ++i) {
        const double q = (c.adjoint() * sol.ue_covariances[static_cast<std::size_t>(i)] * c)(0, 0).real();
        if (i == k) signal = q;
        else interference += q;
      }
      interference += (c.adjoint() * sol.sensing_covariance * c)(0, 0).real();
      out(k) = signal / (interference + spec.noise_power);
    }
    return out;
  }
  PrecoderSet pre;
  pre.ue_directions = sol.ue_directions;
  pre.ue_powers = sol.ue_powers;
  if (spec.scheme == Scheme::PowerAllocation) {
    pre.sensing = SensingBeams{sol.sensing_powers, sol.sensing_directions};
  } else if (spec.scheme == Scheme::Orthogonal) {
    const int M = spec.array.num_antennas;
    pre.sensing = CMatrix(CMatrix::Zero(M, M));
  } else {
    pre.sensing = sol.sensing_covariance;
  }
  for (int k = 0; k < K; ++k) out(k) = sinr(k, spec.H, pre, spec.noise_power);
  return out;
}

/// tr(CRLB) recomputed from the returned variables (not from D); orthogonal is
/// inflated by 1/(1 - eta) like its objective.
inline double audited_crlb_trace(const ProblemSpec& spec, const PrecodingSolution& sol) {
  const FisherModel model(spec.array, spec.doas, spec.alphas, spec.noise_power, spec.num_symbols);
  double tr = crlb_trace_or_inf(model, sol.illuminating_covariance());
  if (spec.scheme == Scheme::Orthogonal) tr /= (1.0 - spec.eta);
  return tr;
}

namespace detail {

inline RMatrix lift(const CMatrix& A) {
  const auto p = A.rows();
  const auto q = A.cols();
  RMatrix L(2 * p, 2 * q);
  L.topLeftCorner(p, q) = A.real();
  L.topRightCorner(p, q) = -A.imag();
  L.bottomLeftCorner(p, q) = A.imag();
  L.bottomRightCorner(p, q) = A.real();
  return L;
}

inline CMatrix unlift(const RMatrix& Y) {
  const auto n = Y.rows() / 2;
  CMatrix R(n, n);
  R.real() = 0.5 * (Y.topLeftCorner(n, n) + Y.bottomRightCorner(n, n));
  R.imag() = 0.5 * (Y.bottomLeftCorner(n, n) - Y.topRightCorner(n, n));
  return hermitian_part(R);
}

// Orthonormal coordinates Q for span(X). A covariance R = Q Rh Q^H is carried as
// the lifted Rh; functionals tr(S X^H R X) become (1/2) <lift(N S N), V^T Y V>
// with V = lift(Q^H X N^{-1}) and N the column norms of X.
struct Subspace {
  CMatrix Q;
  RVector norms;
  RMatrix basis;

  int rank() const { return static_cast<int>(Q.cols()); }
  int columns() const { return static_cast<int>(norms.size()); }

  conic::Coefficient coefficient(const CMatrix& S, double scale) const {
    const CMatrix Sn = norms.asDiagonal() * S * norms.asDiagonal();
    conic::Coefficient c;
    c.matrix = conic::SparseSym::from_dense(0.5 * scale * lift(Sn));
    return c;
  }
  // Same functional for the rank-one S = e_col e_col^T.
  conic::Coefficient diagonal_coefficient(int col, double scale) const {
    conic::Coefficient c;
    const double v = 0.5 * scale * norms(col) * norms(col);
    c.matrix.add(col, col, v);
    c.matrix.add(columns() + col, columns() + col, v);
    return c;
  }
  CMatrix recover(const RMatrix& Y) const { return Q * unlift(Y) * Q.adjoint(); }
};

inline Subspace make_subspace(const CMatrix& X) {
  Subspace s;
  s.norms = X.colwise().norm().transpose();
  CMatrix Xn = X;
  for (int c = 0; c < X.cols(); ++c) {
    if (!(s.norms(c) > 0.0)) s.norms(c) = 1.0;
    Xn.col(c) /= s.norms(c);
  }
  Eigen::ColPivHouseholderQR<CMatrix> qr(Xn);
  qr.setThreshold(1e-10);
  const auto r = qr.rank();
  s.Q = CMatrix(qr.householderQ()).leftCols(r);
  s.basis = lift(s.Q.adjoint() * Xn);
  return s;
}

// F_ab(R) = tr(S_ab E^H R E) for every upper-triangle entry (a, b) of the full
// 3T x 3T Fisher matrix, with E the FisherModel projection basis. Found by
// probing the real-linear map Phi -> J with single-entry matrices.
inline std::vector<CMatrix> fisher_functionals(const FisherModel& model) {
  const int T = model.num_targets();
  const int n = 3 * T;
  const int q = 2 * T;
  std::vector<CMatrix> W(static_cast<std::size_t>(n * n), CMatrix::Zero(q, q));
  CMatrix probe = CMatrix::Zero(q, q);
  for (int u = 0; u < q; ++u) {
    for (int v = 0; v < q; ++v) {
      probe(u, v) = 1.0;
      const RMatrix J1 = model.from_projection(probe).full();
      probe(u, v) = kJ;
      const RMatrix J2 = model.from_projection(probe).full();
      probe(u, v) = 0.0;
      for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b)
          W[static_cast<std::size_t>(a * n + b)](u, v) = Complex(J1(a, b), -J2(a, b));
    }
  }
  std::vector<CMatrix> S(W.size());
  for (int a = 0; a < n; ++a)
    for (int b = a; b < n; ++b) {
      const auto i = static_cast<std::size_t>(a * n + b);
      S[i] = 0.5 * (W[i].transpose() + W[i].conjugate());
    }
  return S;
}

// Schur LMI and epigraph. With F_ref the Fisher matrix at a reference covariance
// (default P_max I / M), K = F_ref,pa F_ref,aa^{-1} and L L^T the reference
// Schur complement F_ref,pp - K F_ref,pa^T, the LMI is imposed on the congruence
//   S = G (J - [D 0; 0 0]) G^T,  G = diag(L^{-1}, Delta_a) [[I, -K], [0, I]],
// Delta_a = diag(F_ref,aa)^{-1/2}. The D block only sees L^{-1}, so the solver
// works with Dt = L^{-1} D L^{-T} and S stays near identity close to the
// reference, which keeps closely spaced targets from cancelling.
// Epigraph: min tr(C U) s.t. [[U, I], [I, Dt]] PSD, C = L^{-1} L^{-T}.
class SchurAssembly {
 public:
  SchurAssembly(conic::Problem& prob, const FisherModel& model, double max_power,
                const CMatrix* reference = nullptr)
      : prob_(prob), model_(model), P_(max_power) {
    T_ = model.num_targets();
    n_ = 3 * T_;
    const int M = model.num_antennas();
    RMatrix ref;
    if (reference) ref = model.blocks(*reference).full();
    if (!reference || !congruence(ref)) {
      ref = model.blocks(CMatrix::Identity(M, M) * (max_power / M)).full();
      if (!congruence(ref)) {
        // Diagonal scaling only.
        G_ = RMatrix::Zero(n_, n_);
        for (int a = 0; a < n_; ++a) {
          if (!(ref(a, a) > 0.0) || !std::isfinite(ref(a, a)))
            throw SingularFisher("optimizer: DoA information vanishes for every covariance");
          G_(a, a) = 1.0 / std::sqrt(ref(a, a));
        }
      }
    }
    Linv_ = G_.topLeftCorner(T_, T_);
    const RMatrix C = Linv_ * Linv_.transpose();
    s_obj_ = C.trace() / T_;
    functionals_ = fisher_functionals(model);

    schur_block_ = prob_.add_block(n_);
    epi_block_ = prob_.add_block(2 * T_);
    for (int a = 0; a < n_; ++a)
      for (int b = a; b < n_; ++b) {
        conic::Constraint c;
        conic::Coefficient s;
        s.matrix.add(a, b, a == b ? 1.0 : 0.5);
        c.blocks.emplace_back(schur_block_, std::move(s));
        if (b < T_) {
          conic::Coefficient w;
          w.matrix.add(T_ + a, T_ + b, a == b ? 1.0 : 0.5);
          c.blocks.emplace_back(epi_block_, std::move(w));
        }
        rows_.push_back(std::move(c));
      }
    for (int a = 0; a < T_; ++a)
      for (int b = 0; b < T_; ++b) {
        conic::Constraint c;
        conic::Coefficient w;
        w.matrix.add(a, T_ + b, 0.5);
        c.blocks.emplace_back(epi_block_, std::move(w));
        c.rhs = a == b ? 1.0 : 0.0;
        prob_.add_constraint(std::move(c));
      }
    conic::Coefficient obj;
    for (int a = 0; a < T_; ++a)
      for (int b = a; b < T_; ++b) obj.matrix.add(a, b, C(a, b) / s_obj_);
    prob_.objective_blocks.emplace_back(epi_block_, std::move(obj));
  }

  // Fisher information of P_max * (covariance in `block`).
  void add_covariance(int block, const Subspace& sub) {
    const int q = 2 * T_;
    const int c = sub.columns();
    CMatrix S = CMatrix::Zero(c, c);
    std::size_t row = 0;
    for (int a = 0; a < n_; ++a)
      for (int b = a; b < n_; ++b, ++row) {
        CMatrix acc = CMatrix::Zero(q, q);
        for (int i = 0; i < n_; ++i) {
          if (G_(a, i) == 0.0) continue;
          for (int j = 0; j < n_; ++j) {
            if (G_(b, j) == 0.0) continue;
            acc += (G_(a, i) * G_(b, j)) *
                   functionals_[static_cast<std::size_t>(std::min(i, j) * n_ + std::max(i, j))];
          }
        }
        S.topLeftCorner(q, q) = acc;
        auto coef = sub.coefficient(S, -P_);
        if (!coef.matrix.empty()) rows_[row].blocks.emplace_back(block, std::move(coef));
      }
  }

  // Fisher information of P_max * x_j * v v^H for nonnegative variable j.
  void add_beam(int j, const CVector& v, double weight = 1.0) {
    const RMatrix F = G_ * model_.blocks(v * v.adjoint()).full() * G_.transpose();
    std::size_t row = 0;
    for (int a = 0; a < n_; ++a)
      for (int b = a; b < n_; ++b, ++row) {
        const double val = -weight * P_ * F(a, b);
        if (val != 0.0) rows_[row].nonneg.emplace_back(j, val);
      }
  }

  void finish() {
    for (auto& r : rows_) prob_.add_constraint(std::move(r));
    rows_.clear();
  }

  // D in physical units.
  RMatrix recover_D(const conic::Result& res) const {
    const RMatrix Dt = res.X[static_cast<std::size_t>(epi_block_)].bottomRightCorner(T_, T_);
    const RMatrix L = Linv_.triangularView<Eigen::Lower>().solve(RMatrix::Identity(T_, T_));
    RMatrix D = L * Dt * L.transpose();
    return 0.5 * (D + D.transpose());
  }

 private:
  conic::Problem& prob_;
  const FisherModel& model_;
  double P_;
  int T_ = 0;
  int n_ = 0;
  bool congruence(const RMatrix& ref) {
    const RMatrix Jaa = 0.5 * (ref.bottomRightCorner(2 * T_, 2 * T_) +
                               ref.bottomRightCorner(2 * T_, 2 * T_).transpose());
    Eigen::LLT<RMatrix> llt(Jaa);
    if (llt.info() != Eigen::Success || !Jaa.allFinite()) return false;
    const RMatrix Kf = llt.solve(ref.topRightCorner(T_, 2 * T_).transpose()).transpose();
    const RMatrix schur = ref.topLeftCorner(T_, T_) - Kf * ref.topRightCorner(T_, 2 * T_).transpose();
    const RVector da = Jaa.diagonal();
    Eigen::LLT<RMatrix> ls(0.5 * (schur + schur.transpose()));
    if (ls.info() != Eigen::Success || !schur.allFinite()) return false;
    const RVector ld = ls.matrixL().toDenseMatrix().diagonal();
    if (!(ld.minCoeff() > 1e-9 * ld.maxCoeff()) || !(da.minCoeff() > 1e-12 * da.maxCoeff()))
      return false;
    const RMatrix Linv = ls.matrixL().solve(RMatrix::Identity(T_, T_));
    G_ = RMatrix::Zero(n_, n_);
    G_.topLeftCorner(T_, T_) = Linv;
    G_.topRightCorner(T_, 2 * T_) = -Linv * Kf;
    G_.bottomRightCorner(2 * T_, 2 * T_) = da.cwiseSqrt().cwiseInverse().asDiagonal();
    return true;
  }

  RMatrix G_;
  RMatrix Linv_;
  double s_obj_ = 1.0;
  std::vector<CMatrix> functionals_;
  std::vector<conic::Constraint> rows_;
  int schur_block_ = -1;
  int epi_block_ = -1;
};

inline double trace_inverse(const RMatrix& D) {
  Eigen::SelfAdjointEigenSolver<RMatrix> es(0.5 * (D + D.transpose()));
  const RVector ev = es.eigenvalues();
  if (!(ev(0) > 0.0)) return std::numeric_limits<double>::infinity();
  return ev.cwiseInverse().sum();
}

// Channel gains g(k, i) = |h_k^T v_i|^2.
inline RMatrix link_gains(const CMatrix& H, const CMatrix& V) {
  return (H.adjoint() * V).cwiseAbs2();
}

// Minimum powers meeting the SINR targets with fixed directions and only
// inter-UE interference; nullopt when no nonnegative solution exists.
inline std::optional<RVector> min_power_fixed(const RMatrix& g, const RVector& gamma,
                                              double sigma2) {
  const int K = static_cast<int>(gamma.size());
  if (K == 0) return RVector(0);
  RMatrix F = RMatrix::Zero(K, K);
  RVector u(K);
  for (int k = 0; k < K; ++k) {
    if (!(g(k, k) > 0.0)) return std::nullopt;
    u(k) = gamma(k) * sigma2 / g(k, k);
    for (int i = 0; i < K; ++i)
      if (i != k) F(k, i) = gamma(k) * g(k, i) / g(k, k);
  }
  Eigen::EigenSolver<RMatrix> es(F, false);
  if (es.info() != Eigen::Success) return std::nullopt;
  if (es.eigenvalues().cwiseAbs().maxCoeff() >= 1.0) return std::nullopt;
  RMatrix I_F = RMatrix::Identity(K, K) - F;
  RVector p = I_F.partialPivLu().solve(u);
  if (!(p.minCoeff() > 0.0) || !p.allFinite()) return std::nullopt;
  return p;
}

inline SolveStatus map_status(conic::Status s) {
  switch (s) {
    case conic::Status::Optimal:
    case conic::Status::Inaccurate: return SolveStatus::Optimal;
    case conic::Status::PrimalInfeasible: return SolveStatus::Infeasible;
    default: return SolveStatus::NumericalFailure;
  }
}

using Clock = std::chrono::steady_clock;
inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Subspace [E | H] (or [E] when the covariance does not couple into SINRs).
inline Subspace covariance_subspace(const FisherModel& model, const CMatrix& H, bool with_ues) {
  const CMatrix& E = model.projection_basis();
  if (!with_ues || H.cols() == 0) return make_subspace(E);
  CMatrix X(E.rows(), E.cols() + H.cols());
  X << E, H;
  return make_subspace(X);
}

// Minimum total power of the SINR-constrained SDR (no sensing objective), in
// units of P_max.
inline std::optional<double> joint_min_power(const ProblemSpec& spec, const Subspace& sub,
                                             int first_ue_column, const conic::Settings& settings) {
  const int K = spec.num_users();
  conic::Problem prob;
  std::vector<int> blocks;
  for (int k = 0; k < K; ++k) blocks.push_back(prob.add_block(2 * sub.rank(), sub.basis));
  const int slack = prob.add_nonneg(K);
  for (int k = 0; k < K; ++k) {
    const double gk = std::max(1.0, spec.thresholds(k));
    const double g = spec.max_power / (gk * spec.noise_power);
    conic::Constraint c;
    for (int i = 0; i < K; ++i)
      c.blocks.emplace_back(blocks[static_cast<std::size_t>(i)],
                            sub.diagonal_coefficient(first_ue_column + k,
                                                     i == k ? g : -spec.thresholds(k) * g));
    c.nonneg.emplace_back(slack + k, -1.0);
    c.rhs = spec.thresholds(k) / gk;
    prob.add_constraint(std::move(c));
  }
  for (int k = 0; k < K; ++k) {
    conic::Coefficient tr;
    tr.identity = 0.5;
    prob.objective_blocks.emplace_back(blocks[static_cast<std::size_t>(k)], std::move(tr));
  }
  const auto res = conic::solve(prob, settings);
  if (map_status(res.status) != SolveStatus::Optimal) return std::nullopt;
  return res.primal_objective;
}

// Illuminating covariance of a failed attempt plus a little isotropic power, used
// to precondition a second attempt.
inline CMatrix retry_reference(const PrecodingSolution& sol, double max_power, int M) {
  CMatrix R = sol.illuminating_covariance();
  R.diagonal().array() += 1e-3 * max_power / M;
  return R;
}

inline PrecodingSolution solve_joint(const ProblemSpec& spec, const conic::Settings& settings) {
  const auto t0 = Clock::now();
  PrecodingSolution sol;
  sol.scheme = spec.scheme;
  const int K = spec.num_users();
  const int T = spec.num_targets();
  const int M = spec.array.num_antennas;
  const FisherModel model(spec.array, spec.doas, spec.alphas, spec.noise_power, spec.num_symbols);
  const Subspace sub = covariance_subspace(model, spec.H, true);
  const int ue_col = 2 * T;

  // Feasibility: RZF directions with optimal powers are a feasible point; when
  // they fail, fall back to the minimum-power relaxation.
  if (K > 0) {
    bool feasible = false;
    try {
      const CMatrix V = rzf_precoders(spec.H, spec.regularization());
      const auto p = min_power_fixed(link_gains(spec.H, V), spec.thresholds, spec.noise_power);
      feasible = p && p->sum() <= spec.max_power;
    } catch (const SingularSystem&) {
    }
    if (!feasible) {
      const auto pmin = joint_min_power(spec, sub, ue_col, settings);
      if (!pmin || *pmin > 1.0) {
        sol.status = SolveStatus::Infeasible;
        sol.message = "SINR targets exceed the power budget";
        sol.build_seconds = seconds_since(t0);
        return sol;
      }
    }
  }

  // Any sensing covariance can be folded into a UE covariance without changing
  // the Fisher information or the power, and that only removes interference, so
  // a separate R_s block is carried only when there are no UEs.
  const int nblocks = std::max(K, 1);
  std::optional<CMatrix> reference;
  for (int pass = 0; pass < 2; ++pass) {
    conic::Problem prob;
    std::optional<SchurAssembly> schur;
    try {
      schur.emplace(prob, model, spec.max_power, reference ? &*reference : nullptr);
    } catch (const SingularFisher& e) {
      sol.message = e.what();
      break;
    }
    std::vector<int> blocks;
    for (int i = 0; i < nblocks; ++i) {
      blocks.push_back(prob.add_block(2 * sub.rank(), sub.basis));
      schur->add_covariance(blocks.back(), sub);
    }
    const int slack = prob.add_nonneg(K + 1);
    for (int k = 0; k < K; ++k) {
      const double gk = std::max(1.0, spec.thresholds(k));
      const double g = spec.max_power / (gk * spec.noise_power);
      conic::Constraint c;
      for (int i = 0; i < K; ++i)
        c.blocks.emplace_back(blocks[static_cast<std::size_t>(i)],
                              sub.diagonal_coefficient(ue_col + k, i == k ? g : -spec.thresholds(k) * g));
      c.nonneg.emplace_back(slack + k, -1.0);
      c.rhs = spec.thresholds(k) / gk;
      prob.add_constraint(std::move(c));
    }
    {
      conic::Constraint c;
      for (int b : blocks) {
        conic::Coefficient tr;
        tr.identity = 0.5;
        c.blocks.emplace_back(b, std::move(tr));
      }
      c.nonneg.emplace_back(slack + K, 1.0);
      c.rhs = 1.0;
      prob.add_constraint(std::move(c));
    }
    schur->finish();

    const auto res = conic::solve(prob, settings);
    sol.solve_seconds += res.seconds;
    sol.iterations += res.iterations;
    sol.status = map_status(res.status);
    sol.message = conic::to_string(res.status);
    if (res.X.empty()) break;

    sol.ue_covariances.clear();
    sol.sensing_covariance = CMatrix::Zero(M, M);
    for (int i = 0; i < nblocks; ++i) {
      CMatrix R = spec.max_power * sub.recover(res.X[static_cast<std::size_t>(blocks[static_cast<std::size_t>(i)])]);
      if (K == 0) sol.sensing_covariance = R;
      else sol.ue_covariances.push_back(std::move(R));
    }
    if (sol.optimal()) {
      sol.D = schur->recover_D(res);
      sol.objective = trace_inverse(sol.D);
      break;
    }
    reference = retry_reference(sol, spec.max_power, M);
  }
  sol.build_seconds = std::max(0.0, seconds_since(t0) - sol.solve_seconds);
  if (!sol.optimal()) sol.clear_variables();
  return sol;
}

inline PrecodingSolution solve_fixed(const ProblemSpec& spec, const conic::Settings& settings) {
  const auto t0 = Clock::now();
  PrecodingSolution sol;
  sol.scheme = spec.scheme;
  const int K = spec.num_users();
  const int T = spec.num_targets();
  const int M = spec.array.num_antennas;
  const bool orthogonal = spec.scheme == Scheme::Orthogonal;
  const bool beams = spec.scheme == Scheme::PowerAllocation;
  const double eta = orthogonal ? spec.eta : 1.0;
  sol.eta = eta;
  const RVector gamma = spec.effective_thresholds();
  const RMatrix g = link_gains(spec.H, spec.ue_directions);

  // Minimum-power check with the sensing part switched off.
  const auto pmin = min_power_fixed(g, gamma, spec.noise_power);
  if (!pmin || eta * pmin->sum() > spec.max_power) {
    sol.status = SolveStatus::Infeasible;
    sol.message = "SINR targets exceed the power budget";
    sol.build_seconds = seconds_since(t0);
    return sol;
  }

  // Beams only reach a narrow set of covariances, so precondition at one of them:
  // minimum UE powers and the rest spread over the sensing beams.
  std::optional<CMatrix> reference;
  if (beams) {
    const double rest = std::max(spec.max_power - pmin->sum(), 1e-3 * spec.max_power);
    CMatrix R = CMatrix::Zero(M, M);
    for (int k = 0; k < K; ++k)
      R += (*pmin)(k) * spec.ue_directions.col(k) * spec.ue_directions.col(k).adjoint();
    for (int t = 0; t < T; ++t)
      R += (rest / T) * spec.sensing_directions.col(t) * spec.sensing_directions.col(t).adjoint();
    reference = std::move(R);
  }

  const FisherModel model(spec.array, spec.doas, spec.alphas, spec.noise_power, spec.num_symbols);
  const std::optional<Subspace> sub =
      beams ? std::nullopt : std::optional<Subspace>(covariance_subspace(model, spec.H, !orthogonal));
  const RMatrix gbar = beams ? link_gains(spec.H, spec.sensing_directions) : RMatrix();
  const int ue_col = 2 * T;

  for (int pass = 0; pass < 2; ++pass) {
    conic::Problem prob;
    std::optional<SchurAssembly> schur;
    try {
      schur.emplace(prob, model, spec.max_power, reference ? &*reference : nullptr);
    } catch (const SingularFisher& e) {
      sol.message = e.what();
      break;
    }

    const int pw = prob.add_nonneg(K);
    const int pbar = beams ? prob.add_nonneg(T) : -1;
    const int slack = prob.add_nonneg(K + 1);
    int rs_block = -1;
    if (!beams) {
      rs_block = prob.add_block(2 * sub->rank(), sub->basis);
      schur->add_covariance(rs_block, *sub);
    }
    if (!orthogonal)
      for (int k = 0; k < K; ++k) schur->add_beam(pw + k, spec.ue_directions.col(k));
    if (beams)
      for (int t = 0; t < T; ++t) schur->add_beam(pbar + t, spec.sensing_directions.col(t));

    for (int k = 0; k < K; ++k) {
      // P (g_kk p_k - gamma sum_i g_ki p_i - gamma ...) / (max(1, gamma) sigma^2) - s_k = gamma / max(1, gamma)
      const double gk = std::max(1.0, gamma(k));
      const double scale = spec.max_power / (gk * spec.noise_power);
      conic::Constraint c;
      for (int i = 0; i < K; ++i) {
        const double v = i == k ? g(k, k) : -gamma(k) * g(k, i);
        if (v != 0.0) c.nonneg.emplace_back(pw + i, scale * v);
      }
      if (beams) {
        for (int t = 0; t < T; ++t)
          if (gbar(k, t) != 0.0) c.nonneg.emplace_back(pbar + t, -scale * gamma(k) * gbar(k, t));
      } else if (!orthogonal) {
        c.blocks.emplace_back(rs_block, sub->diagonal_coefficient(ue_col + k, -scale * gamma(k)));
      }
      c.nonneg.emplace_back(slack + k, -1.0);
      c.rhs = gamma(k) / gk;
      prob.add_constraint(std::move(c));
    }
    {
      conic::Constraint c;
      for (int k = 0; k < K; ++k) c.nonneg.emplace_back(pw + k, eta);
      if (beams)
        for (int t = 0; t < T; ++t) c.nonneg.emplace_back(pbar + t, 1.0);
      if (rs_block >= 0) {
        conic::Coefficient tr;
        tr.identity = 0.5 * (1.0 - (orthogonal ? eta : 0.0));
        c.blocks.emplace_back(rs_block, std::move(tr));
      }
      c.nonneg.emplace_back(slack + K, 1.0);
      c.rhs = 1.0;
      prob.add_constraint(std::move(c));
    }
    schur->finish();

    const auto res = conic::solve(prob, settings);
    sol.solve_seconds += res.seconds;
    sol.iterations += res.iterations;
    sol.status = map_status(res.status);
    sol.message = conic::to_string(res.status);
    if (res.X.empty()) break;

    sol.ue_directions = spec.ue_directions;
    sol.ue_powers = spec.max_power * res.x.segment(pw, K).cwiseMax(0.0);
    if (beams) {
      sol.sensing_directions = spec.sensing_directions;
      sol.sensing_powers = spec.max_power * res.x.segment(pbar, T).cwiseMax(0.0);
      sol.sensing_covariance = CMatrix::Zero(M, M);
    } else {
      sol.sensing_covariance =
          spec.max_power * sub->recover(res.X[static_cast<std::size_t>(rs_block)]);
    }
    if (sol.optimal()) {
      sol.D = schur->recover_D(res);
      sol.objective = trace_inverse(sol.D) / (orthogonal ? (1.0 - eta) : 1.0);
      break;
    }
    // Second pass: precondition at the best iterate of the first.
    reference = retry_reference(sol, spec.max_power, M);
  }
  sol.build_seconds = std::max(0.0, seconds_since(t0) - sol.solve_seconds);
  if (!sol.optimal()) sol.clear_variables();
  return sol;
}

}  // namespace detail

/// Solves the scheme named in `spec`. Never throws for infeasible or degenerate
/// instances; the status says what happened.
inline PrecodingSolution solve_precoding(const ProblemSpec& spec,
                                         const conic::Settings& settings = {}) {
  spec.validate();
  if (spec.scheme == Scheme::JointSDR) return detail::solve_joint(spec, settings);
  return detail::solve_fixed(spec, settings);
}

/// Joint SDR: rank constraints on the UE covariances dropped, so the value is a
/// lower bound for every other scheme.
inline PrecodingSolution solve_joint_sdr(ProblemSpec spec, const conic::Settings& settings = {}) {
  spec.scheme = Scheme::JointSDR;
  return solve_precoding(spec, settings);
}

/// RZF directions fixed; UE powers and the sensing covariance optimized.
inline PrecodingSolution solve_sensing_precoding(ProblemSpec spec,
                                                 const conic::Settings& settings = {}) {
  spec.scheme = Scheme::SensingPrecoding;
  return solve_precoding(spec, settings);
}

/// Time division: UEs get a fraction eta of the channel uses, sensing the rest.
inline PrecodingSolution solve_orthogonal(ProblemSpec spec, const conic::Settings& settings = {}) {
  spec.scheme = Scheme::Orthogonal;
  return solve_precoding(spec, settings);
}

/// Powers only: RZF for UEs and nullspace beams for targets.
inline PrecodingSolution solve_power_allocation(ProblemSpec spec,
                                                const conic::Settings& settings = {}) {
  spec.scheme = Scheme::PowerAllocation;
  return solve_precoding(spec, settings);
}

}  // namespace isac
