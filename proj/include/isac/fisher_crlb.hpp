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

#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace isac {

// Fisher information for xi = [phi_1..phi_T, Re a_1, Im a_1, ..., Re a_T, Im a_T].
struct FisherBlocks {
  RMatrix phiphi;      // T x T
  RMatrix phialpha;    // T x 2T
  RMatrix alphaalpha;  // 2T x 2T

  int num_targets() const { return static_cast<int>(phiphi.rows()); }

  RMatrix full() const {
    const int T = num_targets();
    RMatrix J(3 * T, 3 * T);
    J.topLeftCorner(T, T) = phiphi;
    J.topRightCorner(T, 2 * T) = phialpha;
    J.bottomLeftCorner(2 * T, T) = phialpha.transpose();
    J.bottomRightCorner(2 * T, 2 * T) = alphaalpha;
    return J;
  }

  FisherBlocks& operator+=(const FisherBlocks& o) {
    phiphi += o.phiphi;
    phialpha += o.phialpha;
    alphaalpha += o.alphaalpha;
    return *this;
  }
  friend FisherBlocks operator*(double s, FisherBlocks b) {
    b.phiphi *= s;
    b.phialpha *= s;
    b.alphaalpha *= s;
    return b;
  }
  friend FisherBlocks operator+(FisherBlocks a, const FisherBlocks& b) { return a += b; }

  static FisherBlocks zero(int T) {
    return {RMatrix::Zero(T, T), RMatrix::Zero(T, 2 * T), RMatrix::Zero(2 * T, 2 * T)};
  }
};

// Fisher blocks contributed by one unit-power beam covariance; the blocks of
// sum_i p_i V_i are sum_i p_i (A_i, B_i, C_i).
struct CoefficientMatrices {
  RMatrix A;  // T x T
  RMatrix B;  // T x 2T
  RMatrix C;  // 2T x 2T
};

struct TransmitCovariance {
  CMatrix total;                 // R_sc
  std::vector<CMatrix> ue_parts; // per-UE covariances (may be empty)
  CMatrix sensing;               // R_s
};

namespace detail {
inline void require_psd(const CMatrix& m, const char* what) {
  require(m.rows() == m.cols(), std::string(what) + ": matrix must be square");
  if (!is_psd(m)) throw InvalidArgument(std::string(what) + ": matrix is not PSD");
}
}  // namespace detail

/// Transmit covariance from per-UE covariances plus the sensing covariance.
inline TransmitCovariance transmit_covariance(const std::vector<CMatrix>& ue_parts,
                                              const CMatrix& sensing) {
  detail::require_psd(sensing, "transmit_covariance");
  TransmitCovariance out;
  out.sensing = detail::hermitian_part(sensing);
  out.total = out.sensing;
  for (const auto& part : ue_parts) {
    detail::require(part.rows() == sensing.rows(), "transmit_covariance: size mismatch");
    detail::require_psd(part, "transmit_covariance");
    out.ue_parts.push_back(detail::hermitian_part(part));
    out.total += out.ue_parts.back();
  }
  out.total = detail::hermitian_part(out.total);
  return out;
}

/// Same, with UE precoders given as (power, unit direction) pairs: w_k = sqrt(p_k) v_k.
inline TransmitCovariance transmit_covariance(const std::vector<std::pair<double, CVector>>& ue_beams,
                                              const CMatrix& sensing) {
  std::vector<CMatrix> parts;
  parts.reserve(ue_beams.size());
  for (const auto& [p, v] : ue_beams) {
    detail::require(p >= 0.0, "transmit_covariance: powers must be >= 0");
    parts.push_back(p * v * v.adjoint());
  }
  return transmit_covariance(parts, sensing);
}

// Precomputed steering data for a fixed target set. Every Fisher entry is a real
// linear functional of R through the projection Phi = E^H R E, where
// E = [conj(a_1), conj(a_dot_1), ..., conj(a_T), conj(a_dot_T)] (M x 2T).
class FisherModel {
 public:
  FisherModel(const ArrayConfig& array, std::vector<double> doas, CVector alphas,
              double noise_power, int num_symbols)
      : array_(array), doas_(std::move(doas)), alphas_(std::move(alphas)) {
    array_.validate();
    const int T = static_cast<int>(doas_.size());
    detail::require(T >= 1, "FisherModel: need at least one target");
    detail::require(alphas_.size() == T, "FisherModel: one alpha per target required");
    detail::require(noise_power > 0.0, "FisherModel: noise power must be > 0");
    detail::require(num_symbols >= 1, "FisherModel: num_symbols must be >= 1");
    scale_ = 2.0 * num_symbols / noise_power;

    const int M = array_.num_antennas;
    CMatrix S(M, 2 * T);  // [a_1..a_T | a_dot_1..a_dot_T]
    basis_.resize(M, 2 * T);
    for (int t = 0; t < T; ++t) {
      S.col(t) = steering_vector(doas_[static_cast<std::size_t>(t)], array_);
      S.col(T + t) = steering_derivative(doas_[static_cast<std::size_t>(t)], array_);
      basis_.col(2 * t) = S.col(t).conjugate();
      basis_.col(2 * t + 1) = S.col(T + t).conjugate();
    }
    const CMatrix G = S.adjoint() * S;
    g_aa_ = G.topLeftCorner(T, T);
    g_ad_ = G.topRightCorner(T, T);
    g_da_ = G.bottomLeftCorner(T, T);
    g_dd_ = G.bottomRightCorner(T, T);
  }

  int num_targets() const { return static_cast<int>(doas_.size()); }
  int num_antennas() const { return array_.num_antennas; }
  const ArrayConfig& array() const { return array_; }
  const std::vector<double>& doas() const { return doas_; }
  const CVector& alphas() const { return alphas_; }
  double scale() const { return scale_; }  // 2N / sigma^2
  const CMatrix& projection_basis() const { return basis_; }

  FisherBlocks blocks(const CMatrix& R) const {
    detail::require(R.rows() == num_antennas() && R.cols() == num_antennas(),
                    "FisherModel::blocks: covariance size mismatch");
    return from_projection(basis_.adjoint() * R * basis_);
  }

  // Blocks without the 2N / sigma^2 factor.
  FisherBlocks unit_blocks(const CMatrix& R) const {
    detail::require(R.rows() == num_antennas() && R.cols() == num_antennas(),
                    "FisherModel::unit_blocks: covariance size mismatch");
    return from_projection(basis_.adjoint() * R * basis_, 1.0);
  }

  // Real-linear in phi; phi(2p + x, 2l + y) stands for x_p^T R conj(y_l) with
  // x, y in {a, a_dot}.
  FisherBlocks from_projection(const CMatrix& phi) const { return from_projection(phi, scale_); }

 private:
  FisherBlocks from_projection(const CMatrix& phi, double scale) const {
    const int T = num_targets();
    FisherBlocks out = FisherBlocks::zero(T);
    for (int l = 0; l < T; ++l) {
      const Complex al = std::conj(alphas_(l));
      for (int p = 0; p < T; ++p) {
        const Complex q_aa = phi(2 * p, 2 * l);
        const Complex q_ad = phi(2 * p, 2 * l + 1);
        const Complex q_da = phi(2 * p + 1, 2 * l);
        const Complex q_dd = phi(2 * p + 1, 2 * l + 1);
        // tr(A_dot_p R A_dot_l^H), tr(A_p R A_dot_l^H), tr(A_p R A_l^H)
        const Complex t_dd = g_dd_(l, p) * q_aa + g_ad_(l, p) * q_ad + g_da_(l, p) * q_da +
                             g_aa_(l, p) * q_dd;
        const Complex t_ad = g_da_(l, p) * q_aa + g_aa_(l, p) * q_ad;
        const Complex t_aa = g_aa_(l, p) * q_aa;

        out.phiphi(l, p) = scale * std::real(al * alphas_(p) * t_dd);
        const Complex z = al * t_ad;
        out.phialpha(l, 2 * p) = scale * z.real();
        out.phialpha(l, 2 * p + 1) = -scale * z.imag();  // Re(j z)
        // Re([1, j]^H [1, j] t) = [[Re t, -Im t], [Im t, Re t]]
        out.alphaalpha(2 * l, 2 * p) = scale * t_aa.real();
        out.alphaalpha(2 * l, 2 * p + 1) = -scale * t_aa.imag();
        out.alphaalpha(2 * l + 1, 2 * p) = scale * t_aa.imag();
        out.alphaalpha(2 * l + 1, 2 * p + 1) = scale * t_aa.real();
      }
    }
    return out;
  }

  ArrayConfig array_;
  std::vector<double> doas_;
  CVector alphas_;
  double scale_ = 0.0;
  CMatrix basis_;
  CMatrix g_aa_, g_ad_, g_da_, g_dd_;  // g_xy(l, p) = x_l^H y_p
};

/// Fisher blocks of the transmit covariance R_sc for targets at `phis` with
/// reflection coefficients `alphas`.
inline FisherBlocks fisher_blocks(const CMatrix& R_sc, const std::vector<double>& phis,
                                  const CVector& alphas, double sigma2, int N,
                                  const ArrayConfig& cfg) {
  return FisherModel(cfg, phis, alphas, sigma2, N).blocks(R_sc);
}

/// Per-beam coefficient matrices (A, B, C) for a PSD beam covariance V.
inline CoefficientMatrices coefficient_matrices(const CMatrix& V, const FisherModel& model) {
  detail::require_psd(V, "coefficient_matrices");
  FisherBlocks b = model.blocks(V);
  return {std::move(b.phiphi), std::move(b.phialpha), std::move(b.alphaalpha)};
}

inline CoefficientMatrices coefficient_matrices(const CMatrix& V, const std::vector<double>& phis,
                                                const CVector& alphas, double sigma2, int N,
                                                const ArrayConfig& cfg) {
  return coefficient_matrices(V, FisherModel(cfg, phis, alphas, sigma2, N));
}

struct CrlbResult {
  RMatrix crlb;  // T x T, rad^2
  double trace = 0.0;
};

/// Equivalent DoA information J_phi = J_pp - J_pa J_aa^{-1} J_pa^T.
/// Throws SingularFisher when J_aa cannot be factored.
inline RMatrix doa_information(const FisherBlocks& b) {
  const RMatrix Jaa = 0.5 * (b.alphaalpha + b.alphaalpha.transpose());
  Eigen::LLT<RMatrix> llt(Jaa);
  if (llt.info() != Eigen::Success) throw SingularFisher("doa_information: J_aa not invertible");
  // Reject J_aa with a tiny pivot relative to its scale.
  const double jaa_scale = Jaa.diagonal().cwiseAbs().maxCoeff();
  const double min_pivot = llt.matrixL().toDenseMatrix().diagonal().minCoeff();
  if (!(jaa_scale > 0.0) || min_pivot * min_pivot < 1e-14 * jaa_scale)
    throw SingularFisher("doa_information: J_aa numerically singular");
  RMatrix Jphi = b.phiphi - b.phialpha * llt.solve(b.phialpha.transpose());
  return 0.5 * (Jphi + Jphi.transpose());
}

/// DoA CRLB J_phi^{-1} and its trace.
inline CrlbResult doa_crlb(const FisherBlocks& b) {
  const RMatrix Jphi = doa_information(b);
  Eigen::SelfAdjointEigenSolver<RMatrix> es(Jphi);
  const RVector ev = es.eigenvalues();
  const double norm = ev.cwiseAbs().maxCoeff();
  if (!(norm > 0.0) || ev(0) < 1e-10 * norm)
    throw SingularFisher("doa_crlb: DoA Fisher information is singular");
  CrlbResult r;
  r.crlb = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  r.crlb = 0.5 * (r.crlb + r.crlb.transpose());
  r.trace = r.crlb.trace();
  return r;
}

// Trace of the CRLB, +inf when the DoAs are unobservable.
inline double crlb_trace_or_inf(const FisherBlocks& b) {
  try {
    return doa_crlb(b).trace;
  } catch (const SingularFisher&) {
    return std::numeric_limits<double>::infinity();
  }
}

/// CRLB of the transmit covariance R under `model`. The inverse is taken at
/// unit scale and 2N / sigma^2 divided out last, so the bound scales exactly
/// as 1/N.
inline CrlbResult doa_crlb(const FisherModel& model, const CMatrix& R) {
  CrlbResult r = doa_crlb(model.unit_blocks(R));
  r.crlb /= model.scale();
  r.trace /= model.scale();
  return r;
}

inline CrlbResult doa_crlb(const CMatrix& R_sc, const std::vector<double>& phis, const CVector& alphas,
                           double sigma2, int N, const ArrayConfig& cfg) {
  return doa_crlb(FisherModel(cfg, phis, alphas, sigma2, N), R_sc);
}

inline double crlb_trace_or_inf(const FisherModel& model, const CMatrix& R) {
  try {
    return doa_crlb(model, R).trace;
  } catch (const SingularFisher&) {
    return std::numeric_limits<double>::infinity();
  }
}

struct RmseSummary {
  double rmse_degrees = 0.0;
  int used = 0;
  int excluded = 0;  // non-finite traces
};

/// RMSE in degrees: (180/pi) sqrt(mean_trials(trace / T)); non-finite traces are
/// excluded and counted.
inline RmseSummary rmse_summary(std::span<const double> crlb_traces, int num_targets) {
  detail::require(num_targets >= 1, "rmse_degrees: num_targets must be >= 1");
  RmseSummary s;
  double acc = 0.0;
  for (double t : crlb_traces) {
    if (!std::isfinite(t)) {
      ++s.excluded;
      continue;
    }
    detail::require(t >= 0.0, "rmse_degrees: traces must be >= 0");
    acc += t / num_targets;
    ++s.used;
  }
  if (s.used == 0) throw InvalidArgument("rmse_degrees: no finite traces");
  s.rmse_degrees = rad2deg(std::sqrt(acc / s.used));
  return s;
}

inline double rmse_degrees(std::span<const double> crlb_traces, int num_targets) {
  return rmse_summary(crlb_traces, num_targets).rmse_degrees;
}

}  // namespace isac
