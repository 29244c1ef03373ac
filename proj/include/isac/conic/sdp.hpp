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

// Primal-dual interior-point solver for block-diagonal semidefinite programs in
// standard primal form
//
//   minimize    sum_b <C_b, X_b> + c^T x
//   subject to  sum_b <A_ib, X_b> + a_i^T x = b_i,   i = 1..m
//               X_b PSD,  x >= 0
//
// with dual  maximize b^T y  s.t.  sum_i y_i A_ib + Z_b = C_b,  A^T y + z = c.
//
// Each PSD block may carry a basis V_b (n_b x r_b). Coefficients on such a block
// are V_b S V_b^T + tau I with S sparse symmetric r_b x r_b, which keeps the
// Schur-complement assembly at O(r^2) per constraint pair instead of O(n^3).
// Search direction: HKM, Mehrotra predictor-corrector, infeasible start.

#include "isac/common.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

namespace isac::conic {

// Sparse symmetric matrix stored as its upper triangle (row <= col).
class SparseSym {
 public:
  struct Entry {
    int row;
    int col;
    double value;
  };

  void add(int r, int c, double v) {
    if (v == 0.0) return;
    if (r > c) std::swap(r, c);
    for (auto& e : entries_) {
      if (e.row == r && e.col == c) {
        e.value += v;
        return;
      }
    }
    entries_.push_back({r, c, v});
  }

  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }

  // <S, Y> for square Y (not necessarily symmetric).
  double dot(const RMatrix& Y) const {
    double s = 0.0;
    for (const auto& e : entries_) {
      if (e.row == e.col) s += e.value * Y(e.row, e.col);
      else s += e.value * (Y(e.row, e.col) + Y(e.col, e.row));
    }
    return s;
  }

  // tr(S G) for square G.
  double trace_product(const RMatrix& G) const {
    double s = 0.0;
    for (const auto& e : entries_) {
      if (e.row == e.col) s += e.value * G(e.row, e.row);
      else s += e.value * (G(e.col, e.row) + G(e.row, e.col));
    }
    return s;
  }

  void add_to(RMatrix& dense, double scale) const {
    for (const auto& e : entries_) {
      dense(e.row, e.col) += scale * e.value;
      if (e.row != e.col) dense(e.col, e.row) += scale * e.value;
    }
  }

  RMatrix dense(int n) const {
    RMatrix d = RMatrix::Zero(n, n);
    add_to(d, 1.0);
    return d;
  }

  static SparseSym from_dense(const RMatrix& d, double drop_tol = 0.0) {
    SparseSym s;
    const double cutoff = drop_tol * (d.size() > 0 ? d.cwiseAbs().maxCoeff() : 0.0);
    for (int c = 0; c < d.cols(); ++c)
      for (int r = 0; r <= c; ++r) {
        const double v = 0.5 * (d(r, c) + d(c, r));
        if (std::abs(v) > cutoff && v != 0.0) s.entries_.push_back({r, c, v});
      }
    return s;
  }

 private:
  std::vector<Entry> entries_;
};

// Coefficient of one constraint (or the objective) on one PSD block:
// V S V^T + identity * I, or S + identity * I when the block has no basis.
struct Coefficient {
  SparseSym matrix;
  double identity = 0.0;
};

struct Block {
  int size = 0;
  RMatrix basis;  // size x r, or empty for the identity basis

  bool has_basis() const { return basis.size() > 0; }
  int rank() const { return has_basis() ? static_cast<int>(basis.cols()) : size; }
};

struct Constraint {
  std::vector<std::pair<int, Coefficient>> blocks;
  std::vector<std::pair<int, double>> nonneg;
  double rhs = 0.0;
};

struct Problem {
  std::vector<Block> blocks;
  int num_nonneg = 0;
  std::vector<Constraint> constraints;
  std::vector<std::pair<int, Coefficient>> objective_blocks;
  std::vector<std::pair<int, double>> objective_nonneg;

  int add_block(int size, RMatrix basis = {}) {
    blocks.push_back({size, std::move(basis)});
    return static_cast<int>(blocks.size()) - 1;
  }
  int add_nonneg(int count = 1) {
    const int first = num_nonneg;
    num_nonneg += count;
    return first;
  }
  int add_constraint(Constraint c) {
    constraints.push_back(std::move(c));
    return static_cast<int>(constraints.size()) - 1;
  }
};

// Inaccurate: stalled or ran out of iterations, but the best iterate meets
// relaxed_tol on every residual.
enum class Status {
  Optimal,
  Inaccurate,
  PrimalInfeasible,
  DualInfeasible,
  MaxIterations,
  NumericalFailure
};

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Inaccurate: return "inaccurate";
    case Status::PrimalInfeasible: return "primal_infeasible";
    case Status::DualInfeasible: return "dual_infeasible";
    case Status::MaxIterations: return "max_iterations";
    case Status::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

struct Settings {
  double feasibility_tol = 1e-8;
  double gap_tol = 1e-8;
  double infeasibility_tol = 1e-8;
  double relaxed_tol = 1e-6;
  int max_iterations = 200;
  bool verbose = false;
};

struct Result {
  Status status = Status::NumericalFailure;
  std::vector<RMatrix> X;
  std::vector<RMatrix> Z;
  RVector x;
  RVector z;
  RVector y;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  double primal_infeasibility = 0.0;
  double dual_infeasibility = 0.0;
  double relative_gap = 0.0;
  int iterations = 0;
  double seconds = 0.0;
};

namespace detail {

struct BlockData {
  int n = 0;
  int r = 0;
  bool has_basis = false;
  const RMatrix* V = nullptr;
  std::vector<int> rows;                  // constraints touching this block
  std::vector<const Coefficient*> coefs;  // aligned with rows
  std::vector<std::vector<int>> support;  // indices touched by each coefficient
  std::vector<RMatrix> compact;           // coefficient restricted to its support
  RMatrix C;                              // dense objective block
};

class Solver {
 public:
  Solver(const Problem& p, const Settings& s) : p_(p), s_(s) {
    m_ = static_cast<int>(p.constraints.size());
    nb_ = static_cast<int>(p.blocks.size());
    nl_ = p.num_nonneg;
    blocks_.resize(nb_);
    for (int b = 0; b < nb_; ++b) {
      auto& bd = blocks_[b];
      const Block& blk = p.blocks[b];
      if (blk.size <= 0) throw InvalidArgument("sdp: block size must be positive");
      bd.n = blk.size;
      bd.has_basis = blk.has_basis();
      if (bd.has_basis && blk.basis.rows() != blk.size)
        throw InvalidArgument("sdp: basis row count must equal block size");
      bd.r = blk.rank();
      bd.V = bd.has_basis ? &blk.basis : nullptr;
      bd.C = RMatrix::Zero(bd.n, bd.n);
    }
    b_.resize(m_);
    Alp_ = RMatrix::Zero(m_, nl_);
    clp_ = RVector::Zero(nl_);
    for (int i = 0; i < m_; ++i) {
      const auto& con = p.constraints[i];
      b_(i) = con.rhs;
      for (const auto& [blk, coef] : con.blocks) {
        check_block(blk);
        check_coef(blocks_[blk], coef);
        add_row(blocks_[blk], i, coef);
      }
      for (const auto& [j, v] : con.nonneg) {
        check_nonneg(j);
        Alp_(i, j) += v;
      }
    }
    for (const auto& [blk, coef] : p.objective_blocks) {
      check_block(blk);
      check_coef(blocks_[blk], coef);
      blocks_[blk].C += expand(blocks_[blk], coef);
    }
    for (const auto& [j, v] : p.objective_nonneg) {
      check_nonneg(j);
      clp_(j) += v;
    }
    nu_ = nl_;
    for (const auto& bd : blocks_) nu_ += bd.n;
  }

  Result run() {
    const auto t0 = std::chrono::steady_clock::now();
    Result res;
    if (nu_ == 0) throw InvalidArgument("sdp: problem has no variables");
    initialize();

    const double bnorm = b_.norm();
    double cnorm2 = clp_.squaredNorm();
    for (const auto& bd : blocks_) cnorm2 += bd.C.squaredNorm();
    const double cnorm = std::sqrt(cnorm2);

    double prev_pinf = std::numeric_limits<double>::infinity();
    int stall = 0;
    for (int iter = 0; iter <= s_.max_iterations; ++iter) {
      res.iterations = iter;
      // Inverse of Z per block.
      for (int b = 0; b < nb_; ++b) {
        Eigen::LLT<RMatrix> llt(Z_[b]);
        if (llt.info() != Eigen::Success) return fallback(res, Status::NumericalFailure, t0);
        Zinv_[b] = llt.solve(RMatrix::Identity(blocks_[b].n, blocks_[b].n));
        Zinv_[b] = 0.5 * (Zinv_[b] + Zinv_[b].transpose());
      }

      // Residuals.
      RVector rp = b_ - apply_A(X_) - Alp_ * x_;
      std::vector<RMatrix> Rd(nb_);
      double dinf2 = 0.0;
      for (int b = 0; b < nb_; ++b) {
        Rd[b] = blocks_[b].C - apply_At(b, y_) - Z_[b];
        Rd[b] = 0.5 * (Rd[b] + Rd[b].transpose());
        dinf2 += Rd[b].squaredNorm();
      }
      RVector rd = clp_ - Alp_.transpose() * y_ - z_;
      dinf2 += rd.squaredNorm();

      double pobj = clp_.dot(x_);
      double xz = x_.dot(z_);
      for (int b = 0; b < nb_; ++b) {
        pobj += blocks_[b].C.cwiseProduct(X_[b]).sum();
        xz += X_[b].cwiseProduct(Z_[b]).sum();
      }
      const double dobj = b_.dot(y_);
      const double mu = xz / nu_;
      res.primal_objective = pobj;
      res.dual_objective = dobj;
      res.primal_infeasibility = rp.norm() / (1.0 + bnorm);
      res.dual_infeasibility = std::sqrt(dinf2) / (1.0 + cnorm);
      res.relative_gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
      const double comp_gap = xz / (1.0 + std::abs(pobj) + std::abs(dobj));

      if (s_.verbose) {
        std::fprintf(stderr, "%3d pobj % .10e dobj % .10e pinf %.2e dinf %.2e gap %.2e mu %.2e\n",
                     iter, pobj, dobj, res.primal_infeasibility, res.dual_infeasibility,
                     res.relative_gap, mu);
      }

      const double err = std::max({res.primal_infeasibility, res.dual_infeasibility,
                                   res.relative_gap, comp_gap});
      if (err < best_err_) {
        best_err_ = err;
        best_ = res;
        bX_ = X_;
        bZ_ = Z_;
        bx_ = x_;
        bz_ = z_;
        by_ = y_;
        best_iter_ = iter;
      }

      if (res.primal_infeasibility < s_.feasibility_tol &&
          res.dual_infeasibility < s_.feasibility_tol && res.relative_gap < s_.gap_tol &&
          comp_gap < s_.gap_tol)
        return finish(res, Status::Optimal, t0);

      // Farkas certificate for primal infeasibility: b^T y > 0 with A^T y + Z ~ 0.
      if (dobj > 0.0) {
        double ray2 = 0.0;
        for (int b = 0; b < nb_; ++b) ray2 += (blocks_[b].C - Rd[b]).squaredNorm();
        ray2 += (clp_ - rd).squaredNorm();
        if (std::sqrt(ray2) / dobj < s_.infeasibility_tol)
          return finish(res, Status::PrimalInfeasible, t0);
      }
      if (pobj < 0.0) {
        const double ray = (apply_A(X_) + Alp_ * x_).norm();
        if (ray / -pobj < s_.infeasibility_tol) return finish(res, Status::DualInfeasible, t0);
      }
      if (iter == s_.max_iterations) break;
      if (best_err_ < s_.relaxed_tol && iter - best_iter_ > 15) break;

      // Stall detection: no progress for several iterations.
      if (res.primal_infeasibility > 0.5 * prev_pinf && mu < 1e-14 * (1.0 + std::abs(pobj))) {
        if (++stall > 5) break;
      }
      prev_pinf = res.primal_infeasibility;

      // Schur complement.
      RMatrix Msys = RMatrix::Zero(m_, m_);
      for (int b = 0; b < nb_; ++b) add_schur(b, Msys);
      const RVector dlp = x_.cwiseQuotient(z_);
      Msys.noalias() += Alp_ * dlp.asDiagonal() * Alp_.transpose();
      Msys = 0.5 * (Msys + Msys.transpose());
      if (!factorize(Msys)) return fallback(res, Status::NumericalFailure, t0);

      // Predictor.
      std::vector<RMatrix> XRdZ(nb_);
      for (int b = 0; b < nb_; ++b) XRdZ[b] = X_[b] * Rd[b] * Zinv_[b];
      std::vector<RMatrix> H(nb_);
      for (int b = 0; b < nb_; ++b) H[b] = -X_[b] - XRdZ[b];
      RVector hlp = -x_ - x_.cwiseProduct(rd).cwiseQuotient(z_);
      RVector dy = solve_schur(rp - apply_A(H) - Alp_ * hlp);
      std::vector<RMatrix> dX(nb_), dZ(nb_);
      RVector dx, dz;
      directions(dy, Rd, rd, /*sigma_mu=*/0.0, nullptr, nullptr, nullptr, nullptr, dX, dZ, dx,
                 dz);
      refine(rp, Rd, rd, 0.0, nullptr, nullptr, nullptr, nullptr, dy, dX, dZ, dx, dz);
      double ap = std::min(1.0, max_step(X_, dX, x_, dx));
      double ad = std::min(1.0, max_step(Z_, dZ, z_, dz));
      double xz_aff = 0.0;
      for (int b = 0; b < nb_; ++b)
        xz_aff += (X_[b] + ap * dX[b]).cwiseProduct(Z_[b] + ad * dZ[b]).sum();
      xz_aff += (x_ + ap * dx).dot(z_ + ad * dz);
      const double mu_aff = xz_aff / nu_;
      double sigma = std::pow(std::max(0.0, mu_aff / mu), 3);
      sigma = std::clamp(sigma, 0.0, 1.0);
      const double step_factor = 0.9 + 0.09 * std::min(ap, ad);

      // Corrector.
      const double smu = sigma * mu;
      std::vector<RMatrix> dXa = dX, dZa = dZ;
      RVector dxa = dx, dza = dz;
      for (int b = 0; b < nb_; ++b)
        H[b] = smu * Zinv_[b] - X_[b] - dXa[b] * dZa[b] * Zinv_[b] - XRdZ[b];
      hlp = RVector::Constant(nl_, smu).cwiseQuotient(z_) - x_ -
            dxa.cwiseProduct(dza).cwiseQuotient(z_) - x_.cwiseProduct(rd).cwiseQuotient(z_);
      dy = solve_schur(rp - apply_A(H) - Alp_ * hlp);
      directions(dy, Rd, rd, smu, &dXa, &dZa, &dxa, &dza, dX, dZ, dx, dz);
      refine(rp, Rd, rd, smu, &dXa, &dZa, &dxa, &dza, dy, dX, dZ, dx, dz);
      ap = std::min(1.0, step_factor * max_step(X_, dX, x_, dx));
      ad = std::min(1.0, step_factor * max_step(Z_, dZ, z_, dz));

      ap = safe_step(X_, dX, x_, dx, ap);
      ad = safe_step(Z_, dZ, z_, dz, ad);
      for (int b = 0; b < nb_; ++b) {
        X_[b] += ap * dX[b];
        X_[b] = 0.5 * (X_[b] + X_[b].transpose());
        Z_[b] += ad * dZ[b];
        Z_[b] = 0.5 * (Z_[b] + Z_[b].transpose());
      }
      x_ += ap * dx;
      z_ += ad * dz;
      y_ += ad * dy;
      if (!(ap > 0.0) && !(ad > 0.0)) break;
    }
    return fallback(res, Status::MaxIterations, t0);
  }

 private:
  void check_block(int blk) const {
    if (blk < 0 || blk >= nb_) throw InvalidArgument("sdp: block index out of range");
  }
  void check_nonneg(int j) const {
    if (j < 0 || j >= nl_) throw InvalidArgument("sdp: nonnegative index out of range");
  }
  static void add_row(BlockData& bd, int row, const Coefficient& c) {
    std::vector<int> idx;
    for (const auto& e : c.matrix.entries()) {
      idx.push_back(e.row);
      idx.push_back(e.col);
    }
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    RMatrix sub = RMatrix::Zero(static_cast<Eigen::Index>(idx.size()),
                                static_cast<Eigen::Index>(idx.size()));
    auto pos = [&](int k) {
      return static_cast<int>(std::lower_bound(idx.begin(), idx.end(), k) - idx.begin());
    };
    for (const auto& e : c.matrix.entries()) {
      const int r = pos(e.row);
      const int q = pos(e.col);
      sub(r, q) += e.value;
      if (r != q) sub(q, r) += e.value;
    }
    bd.rows.push_back(row);
    bd.coefs.push_back(&c);
    bd.support.push_back(std::move(idx));
    bd.compact.push_back(std::move(sub));
  }

  static void check_coef(const BlockData& bd, const Coefficient& c) {
    for (const auto& e : c.matrix.entries())
      if (e.row < 0 || e.col >= bd.r) throw InvalidArgument("sdp: coefficient index out of range");
  }

  // Dense n x n form of a coefficient.
  static RMatrix expand(const BlockData& bd, const Coefficient& c) {
    RMatrix out;
    if (bd.has_basis) {
      const RMatrix S = c.matrix.dense(bd.r);
      out = (*bd.V) * S * bd.V->transpose();
    } else {
      out = c.matrix.dense(bd.n);
    }
    out.diagonal().array() += c.identity;
    return out;
  }

  static double frobenius(const BlockData& bd, const Coefficient& c) {
    if (!bd.has_basis) {
      RMatrix d = c.matrix.dense(bd.n);
      d.diagonal().array() += c.identity;
      return d.norm();
    }
    const RMatrix S = c.matrix.dense(bd.r);
    const RMatrix G = bd.V->transpose() * (*bd.V);
    const RMatrix SG = S * G;
    const double v = (SG * SG).trace() + 2.0 * c.identity * SG.trace() +
                     c.identity * c.identity * bd.n;
    return std::sqrt(std::max(0.0, v));
  }

  void initialize() {
    X_.resize(nb_);
    Z_.resize(nb_);
    Zinv_.resize(nb_);
    // Scaled-identity start in the spirit of SDPT3.
    for (int b = 0; b < nb_; ++b) {
      const auto& bd = blocks_[b];
      double xi = std::max(10.0, std::sqrt(static_cast<double>(bd.n)));
      double eta = xi;
      for (std::size_t k = 0; k < bd.rows.size(); ++k) {
        const double fn = frobenius(bd, *bd.coefs[k]);
        xi = std::max(xi, bd.n * (1.0 + std::abs(b_(bd.rows[k]))) / (1.0 + fn));
        eta = std::max(eta, (1.0 + fn) / std::sqrt(static_cast<double>(bd.n)));
      }
      eta = std::max(eta, (1.0 + bd.C.norm()) / std::sqrt(static_cast<double>(bd.n)));
      X_[b] = xi * RMatrix::Identity(bd.n, bd.n);
      Z_[b] = eta * RMatrix::Identity(bd.n, bd.n);
    }
    x_ = RVector::Constant(nl_, 1.0);
    z_ = RVector::Constant(nl_, 1.0);
    for (int j = 0; j < nl_; ++j) {
      double xi = 10.0;
      double eta = 10.0;
      for (int i = 0; i < m_; ++i) {
        const double a = std::abs(Alp_(i, j));
        if (a == 0.0) continue;
        xi = std::max(xi, (1.0 + std::abs(b_(i))) / (1.0 + a));
        eta = std::max(eta, 1.0 + a);
      }
      eta = std::max(eta, 1.0 + std::abs(clp_(j)));
      x_(j) = xi;
      z_(j) = eta;
    }
    y_ = RVector::Zero(m_);
  }

  // A(Y) over all blocks.
  RVector apply_A(const std::vector<RMatrix>& Y) const {
    RVector out = RVector::Zero(m_);
    for (int b = 0; b < nb_; ++b) {
      const auto& bd = blocks_[b];
      if (bd.rows.empty()) continue;
      RMatrix proj;
      const RMatrix* P = &Y[b];
      if (bd.has_basis) {
        proj = bd.V->transpose() * Y[b] * (*bd.V);
        P = &proj;
      }
      const double tr = Y[b].trace();
      for (std::size_t k = 0; k < bd.rows.size(); ++k)
        out(bd.rows[k]) += bd.coefs[k]->matrix.dot(*P) + bd.coefs[k]->identity * tr;
    }
    return out;
  }

  // sum_i y_i A_ib.
  RMatrix apply_At(int b, const RVector& y) const {
    const auto& bd = blocks_[b];
    RMatrix S = RMatrix::Zero(bd.r, bd.r);
    double tau = 0.0;
    for (std::size_t k = 0; k < bd.rows.size(); ++k) {
      const double yi = y(bd.rows[k]);
      if (yi == 0.0) continue;
      bd.coefs[k]->matrix.add_to(S, yi);
      tau += yi * bd.coefs[k]->identity;
    }
    RMatrix out = bd.has_basis ? RMatrix((*bd.V) * S * bd.V->transpose()) : S;
    out.diagonal().array() += tau;
    return out;
  }

  // M_ij += tr(A_i X A_j Z^{-1}) for the constraints touching block b.
  void add_schur(int b, RMatrix& Msys) const {
    const auto& bd = blocks_[b];
    const int nr = static_cast<int>(bd.rows.size());
    if (nr == 0) return;
    const RMatrix& X = X_[b];
    const RMatrix& Zi = Zinv_[b];
    RMatrix P, Q, W;
    if (bd.has_basis) {
      const RMatrix XV = X * (*bd.V);
      const RMatrix ZV = Zi * (*bd.V);
      P = bd.V->transpose() * XV;
      Q = bd.V->transpose() * ZV;
      W = XV.transpose() * ZV;  // V^T X Z^{-1} V
    } else {
      P = X;
      Q = Zi;
      W = X * Zi;
    }
    const double trXZ = X.cwiseProduct(Zi).sum();
    const int r = bd.r;
    RMatrix G(r, r);
    RMatrix PS;
    std::vector<double> sw(nr);
    for (int k = 0; k < nr; ++k) sw[k] = bd.coefs[k]->matrix.dot(W);
    for (int jk = 0; jk < nr; ++jk) {
      const Coefficient& cj = *bd.coefs[jk];
      const int j = bd.rows[jk];
      const auto& idx = bd.support[jk];
      const int s = static_cast<int>(idx.size());
      if (s > 0) {
        // G = P S_j Q using only the rows/columns S_j touches.
        PS.resize(r, s);
        for (int c = 0; c < s; ++c) PS.col(c) = P.col(idx[c]);
        PS = PS * bd.compact[jk];
        G.setZero();
        for (int c = 0; c < s; ++c) G.noalias() += PS.col(c) * Q.row(idx[c]);
      }
      for (int ik = 0; ik <= jk; ++ik) {
        const Coefficient& ci = *bd.coefs[ik];
        const int i = bd.rows[ik];
        double v = 0.0;
        if (!ci.matrix.empty() && s > 0) v += ci.matrix.trace_product(G);
        v += cj.identity * sw[ik] + ci.identity * sw[jk] + ci.identity * cj.identity * trXZ;
        Msys(i, j) += v;
        if (i != j) Msys(j, i) += v;
      }
    }
  }

  bool factorize(const RMatrix& Msys) {
    llt_.compute(Msys);
    use_ldlt_ = false;
    if (llt_.info() == Eigen::Success) return true;
    // shifted factor; refine() corrects against the unshifted operator
    const double d = std::max(1e-300, Msys.diagonal().cwiseAbs().maxCoeff());
    for (double shift : {1e-13, 1e-10, 1e-8}) {
      RMatrix reg = Msys;
      reg.diagonal().array() += shift * d;
      llt_.compute(reg);
      if (llt_.info() == Eigen::Success) return true;
    }
    ldlt_.compute(Msys);
    use_ldlt_ = true;
    return ldlt_.info() == Eigen::Success;
  }

  RVector solve_schur(const RVector& rhs) const {
    if (m_ == 0) return RVector::Zero(0);
    return use_ldlt_ ? RVector(ldlt_.solve(rhs)) : RVector(llt_.solve(rhs));
  }

  // Iterative refinement: the assembled Schur matrix loses accuracy near the
  // solution, so correct dy against the operator residual rp - A(dX).
  void refine(const RVector& rp, const std::vector<RMatrix>& Rd, const RVector& rd, double smu,
              const std::vector<RMatrix>* dXa, const std::vector<RMatrix>* dZa,
              const RVector* dxa, const RVector* dza, RVector& dy, std::vector<RMatrix>& dX,
              std::vector<RMatrix>& dZ, RVector& dx, RVector& dz) const {
    if (m_ == 0) return;
    RVector r = rp - apply_A(dX) - Alp_ * dx;
    double rn = r.norm();
    std::vector<RMatrix> tX(nb_), tZ(nb_);
    RVector tx, tz;
    for (int pass = 0; pass < 8 && rn > 1e-15 * (1.0 + rp.norm()); ++pass) {
      const RVector ty = dy + solve_schur(r);
      directions(ty, Rd, rd, smu, dXa, dZa, dxa, dza, tX, tZ, tx, tz);
      const RVector tr = rp - apply_A(tX) - Alp_ * tx;
      const double tn = tr.norm();
      if (!(tn < 0.5 * rn)) break;
      dy = ty;
      std::swap(dX, tX);
      std::swap(dZ, tZ);
      std::swap(dx, tx);
      std::swap(dz, tz);
      r = tr;
      rn = tn;
    }
  }

  // Recovers (dX, dZ, dx, dz) from dy. With second-order terms when provided.
  void directions(const RVector& dy, const std::vector<RMatrix>& Rd, const RVector& rd, double smu,
                  const std::vector<RMatrix>* dXa, const std::vector<RMatrix>* dZa,
                  const RVector* dxa, const RVector* dza, std::vector<RMatrix>& dX,
                  std::vector<RMatrix>& dZ, RVector& dx, RVector& dz) const {
    for (int b = 0; b < nb_; ++b) {
      dZ[b] = Rd[b] - apply_At(b, dy);
      dZ[b] = 0.5 * (dZ[b] + dZ[b].transpose());
      RMatrix rc = -X_[b] - X_[b] * dZ[b] * Zinv_[b];
      if (smu != 0.0) rc += smu * Zinv_[b];
      if (dXa != nullptr) rc -= (*dXa)[b] * (*dZa)[b] * Zinv_[b];
      dX[b] = 0.5 * (rc + rc.transpose());
    }
    dz = rd - Alp_.transpose() * dy;
    dx = -x_ - x_.cwiseProduct(dz).cwiseQuotient(z_);
    if (smu != 0.0) dx += RVector::Constant(nl_, smu).cwiseQuotient(z_);
    if (dxa != nullptr) dx -= dxa->cwiseProduct(*dza).cwiseQuotient(z_);
  }

  // Largest alpha with X + alpha dX PSD and x + alpha dx >= 0.
  double max_step(const std::vector<RMatrix>& X, const std::vector<RMatrix>& dX, const RVector& x,
                  const RVector& dx) const {
    double alpha = std::numeric_limits<double>::infinity();
    for (int b = 0; b < nb_; ++b) {
      Eigen::LLT<RMatrix> llt(X[b]);
      if (llt.info() != Eigen::Success) return 0.0;
      const RMatrix LdX = llt.matrixL().solve(dX[b]);
      RMatrix T = llt.matrixL().solve(LdX.transpose());
      T = 0.5 * (T + T.transpose());
      Eigen::SelfAdjointEigenSolver<RMatrix> es(T, Eigen::EigenvaluesOnly);
      const double lmin = es.eigenvalues()(0);
      if (lmin < 0.0) alpha = std::min(alpha, -1.0 / lmin);
    }
    for (int j = 0; j < nl_; ++j)
      if (dx(j) < 0.0) alpha = std::min(alpha, -x(j) / dx(j));
    return alpha;
  }

  // Shrinks alpha until every block of V + alpha dV factors (rounding can put
  // the nominal step right on the boundary).
  double safe_step(const std::vector<RMatrix>& V, const std::vector<RMatrix>& dV, const RVector& v,
                   const RVector& dv, double alpha) const {
    for (int tries = 0; tries < 30 && alpha > 0.0; ++tries, alpha *= 0.8) {
      bool ok = nl_ == 0 || (v + alpha * dv).minCoeff() > 0.0;
      for (int b = 0; ok && b < nb_; ++b) {
        Eigen::LLT<RMatrix> llt(V[b] + alpha * dV[b]);
        ok = llt.info() == Eigen::Success;
      }
      if (ok) return alpha;
    }
    return 0.0;
  }

  Result& finish(Result& res, Status st, std::chrono::steady_clock::time_point t0) {
    res.status = st;
    res.X = X_;
    res.Z = Z_;
    res.x = x_;
    res.z = z_;
    res.y = y_;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
  }

  // Returns the best iterate seen; it counts as a solution when it is within
  // relaxed_tol.
  Result& fallback(Result& res, Status st, std::chrono::steady_clock::time_point t0) {
    if (!std::isfinite(best_err_)) return finish(res, st, t0);
    if (best_err_ < s_.relaxed_tol) st = Status::Inaccurate;
    const int iterations = res.iterations;
    res = best_;
    res.iterations = iterations;
    X_ = bX_;
    Z_ = bZ_;
    x_ = bx_;
    z_ = bz_;
    y_ = by_;
    return finish(res, st, t0);
  }

  const Problem& p_;
  Settings s_;
  double best_err_ = std::numeric_limits<double>::infinity();
  int best_iter_ = 0;
  Result best_;
  std::vector<RMatrix> bX_, bZ_;
  RVector bx_, bz_, by_;
  int m_ = 0;
  int nb_ = 0;
  int nl_ = 0;
  int nu_ = 0;
  std::vector<BlockData> blocks_;
  RVector b_;
  RMatrix Alp_;
  RVector clp_;
  std::vector<RMatrix> X_, Z_, Zinv_;
  RVector x_, z_, y_;
  Eigen::LLT<RMatrix> llt_;
  Eigen::LDLT<RMatrix> ldlt_;
  bool use_ldlt_ = false;
};

}  // namespace detail

inline Result solve(const Problem& problem, const Settings& settings = {}) {
  detail::Solver solver(problem, settings);
  return solver.run();
}

}  // namespace isac::conic
