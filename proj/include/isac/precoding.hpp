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

#include <variant>
#include <vector>

namespace isac {

// Sensing streams with individual unit-norm directions (columns) and powers.
struct SensingBeams {
  RVector powers;
  CMatrix directions;  // M x Tbar

  int count() const { return static_cast<int>(powers.size()); }
  CMatrix covariance(int M) const {
    CMatrix R = CMatrix::Zero(M, M);
    for (int t = 0; t < count(); ++t) R += powers(t) * directions.col(t) * directions.col(t).adjoint();
    return R;
  }
};

struct PrecoderSet {
  CMatrix ue_directions;  // M x K, unit-norm columns v_k
  RVector ue_powers;      // K
  std::variant<CMatrix, SensingBeams> sensing;  // covariance R_s or explicit beams

  double total_power() const {
    double p = ue_powers.sum();
    if (const auto* R = std::get_if<CMatrix>(&sensing)) p += R->trace().real();
    else p += std::get<SensingBeams>(sensing).powers.sum();
    return p;
  }
};

/// Unit-norm RZF directions: normalized columns of H (H^H H + omega I)^{-1}, with
/// H the M x K matrix of conjugated channels.
inline CMatrix rzf_precoders(const CMatrix& H, double omega) {
  detail::require(omega >= 0.0 && std::isfinite(omega), "rzf_precoders: omega must be >= 0");
  const int K = static_cast<int>(H.cols());
  if (K == 0) return CMatrix(H.rows(), 0);
  CMatrix gram = H.adjoint() * H;
  gram.diagonal().array() += omega;
  Eigen::LDLT<CMatrix> ldlt(gram);
  const RVector d = ldlt.vectorD().real();
  const double scale = gram.diagonal().real().cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(scale > 0.0) || d.minCoeff() <= 1e-13 * scale)
    throw SingularSystem("rzf_precoders: channel Gram matrix is singular");
  CMatrix V = H * ldlt.solve(CMatrix::Identity(K, K));
  for (int k = 0; k < K; ++k) {
    const double n = V.col(k).norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw SingularSystem("rzf_precoders: zero precoder");
    V.col(k) /= n;
  }
  return V;
}

/// Sensing beam towards `phi` with zero leakage into every UE: a(phi) projected
/// onto the orthogonal complement of span{conj(h_k)} = span(H), then normalized.
/// With that projector h_k^T v = 0 holds exactly.
inline CVector zf_sensing_beam(const CMatrix& H, double phi, const ArrayConfig& cfg) {
  const CVector a = steering_vector(phi, cfg);
  detail::require(H.rows() == 0 || H.rows() == a.size(), "zf_sensing_beam: size mismatch");
  CVector v = a;
  if (H.cols() > 0) {
    Eigen::ColPivHouseholderQR<CMatrix> qr(H);
    qr.setThreshold(1e-12);
    const int rank = static_cast<int>(qr.rank());
    const CMatrix Q = CMatrix(qr.householderQ()).leftCols(rank);
    v = a - Q * (Q.adjoint() * a);
    // One re-projection pass removes the residual left by rounding.
    v -= Q * (Q.adjoint() * v);
  }
  const double n = v.norm();
  if (n < 1e-9 * a.norm())
    throw DegenerateProjection("zf_sensing_beam: steering vector lies in the UE channel span");
  return v / n;
}

/// SINR of UE k: p_k |h_k^T v_k|^2 / (sum_{i != k} p_i |h_k^T v_i|^2 + sensing + sigma^2).
inline double sinr(int k, const CMatrix& H, const PrecoderSet& pre, double sigma2) {
  detail::require(k >= 0 && k < H.cols(), "sinr: UE index out of range");
  const CVector hc = H.col(k);  // conj(h_k); h_k^T x = hc^H x
  const int K = static_cast<int>(pre.ue_directions.cols());
  double signal = 0.0;
  double interference = 0.0;
  for (int i = 0; i < K; ++i) {
    const double g = std::norm(hc.dot(pre.ue_directions.col(i)));
    if (i == k) signal = pre.ue_powers(i) * g;
    else interference += pre.ue_powers(i) * g;
  }
  if (const auto* R = std::get_if<CMatrix>(&pre.sensing)) {
    interference += std::max(0.0, (hc.adjoint() * (*R) * hc)(0, 0).real());
  } else {
    const auto& beams = std::get<SensingBeams>(pre.sensing);
    for (int t = 0; t < beams.count(); ++t)
      interference += beams.powers(t) * std::norm(hc.dot(beams.directions.col(t)));
  }
  return signal / (interference + sigma2);
}

/// Eigen-beams of an optimized sensing covariance. Keeps eigenpairs above
/// energy_tol * tr(R_s); the phase of each direction is normalized so its
/// largest-magnitude entry is real and positive.
inline SensingBeams extract_sensing_beams(const CMatrix& R_s, double energy_tol) {
  detail::require(R_s.rows() == R_s.cols(), "extract_sensing_beams: matrix must be square");
  detail::require(energy_tol >= 0.0, "extract_sensing_beams: energy_tol must be >= 0");
  const int M = static_cast<int>(R_s.rows());
  const CMatrix Rh = detail::hermitian_part(R_s);
  const double tr = Rh.trace().real();
  SensingBeams out;
  out.directions.resize(M, 0);
  out.powers.resize(0);
  if (!(tr > 0.0)) return out;
  Eigen::SelfAdjointEigenSolver<CMatrix> es(Rh);
  std::vector<int> keep;
  for (int i = M - 1; i >= 0; --i) {
    const double lambda = es.eigenvalues()(i);
    if (lambda > energy_tol * tr && lambda > 0.0) keep.push_back(i);
  }
  out.directions.resize(M, static_cast<Eigen::Index>(keep.size()));
  out.powers.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    CVector v = es.eigenvectors().col(keep[j]);
    Eigen::Index idx = 0;
    v.cwiseAbs().maxCoeff(&idx);
    v *= std::polar(1.0, -std::arg(v(idx)));
    out.directions.col(static_cast<Eigen::Index>(j)) = v;
    out.powers(static_cast<Eigen::Index>(j)) = es.eigenvalues()(keep[j]);
  }
  return out;
}

}  // namespace isac
