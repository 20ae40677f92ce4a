#pragma once

#include "mlr/assembly.hpp"
#include "mlr/errors.hpp"
#include "mlr/full_solver.hpp"
#include "mlr/recovery.hpp"

#include <Eigen/Dense>

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace mlr {

constexpr int kDefaultBasisCount = 10;
constexpr int kMaxBasisCount = 30;

/// How the basis vectors are stored.
///  kRecurrence: the recurrence vectors themselves, rescaled to the norm of U_1.
///  kOrthonormal: each new vector is orthogonalized against the previous ones
///  before the recurrence continues. The span is the same, but the raw vectors
///  turn nearly parallel after a handful of steps and lose it in floating point.
enum class BasisKind { kRecurrence, kOrthonormal };

/// Reduced basis U_B = [U_1 .. U_s]. For kRecurrence, raw column i equals
/// columns.col(i) / scale[i].
struct BasisMatrix {
    Eigen::MatrixXd columns;
    Eigen::VectorXd scale;
    BasisKind kind = BasisKind::kRecurrence;

    Eigen::Index size() const noexcept { return columns.cols(); }
    Eigen::VectorXd raw(Eigen::Index i) const {
        if (kind != BasisKind::kRecurrence) throw ValidationError("raw recurrence vectors are not kept by an orthonormal basis");
        return columns.col(i) / scale[i];
    }
};

/// Static condensation of the DOFs that exist only in the modified
/// structure. The initial matrix carries a unit diagonal there, so a basis
/// vector taken straight from the initial factor pins them at zero. Instead
/// every vector is extended by v_a = -K_aa^-1 K_ao v_o, and the load on
/// added DOFs enters through the particular part u_p = K_aa^-1 F_a.
class AddedDofCondenser {
public:
    AddedDofCondenser() = default;

    AddedDofCondenser(const SparseMatrix& K, std::span<const Eigen::Index> added) : n_(K.rows()) {
        dofs_.assign(added.begin(), added.end());
        std::sort(dofs_.begin(), dofs_.end());
        if (std::adjacent_find(dofs_.begin(), dofs_.end()) != dofs_.end()) throw ValidationError("added DOF listed twice");
        if (dofs_.empty()) return;
        if (dofs_.front() < 0 || dofs_.back() >= n_) throw ValidationError("added DOF out of range");
        std::vector<Eigen::Index> slot(static_cast<std::size_t>(n_), -1);
        for (std::size_t k = 0; k < dofs_.size(); ++k) slot[static_cast<std::size_t>(dofs_[k])] = static_cast<Eigen::Index>(k);
        const auto na = static_cast<Eigen::Index>(dofs_.size());
        Triplets aa, ao;
        for (Eigen::Index c = 0; c < K.outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(K, c); it; ++it) {
                const Eigen::Index r = slot[static_cast<std::size_t>(it.row())];
                if (r < 0) continue;
                const Eigen::Index cc = slot[static_cast<std::size_t>(it.col())];
                if (cc >= 0) aa.emplace_back(r, cc, it.value());
                else ao.emplace_back(r, it.col(), it.value());
            }
        SparseMatrix Kaa(na, na);
        Kaa.setFromTriplets(aa.begin(), aa.end());
        K_ao_.resize(na, n_);
        K_ao_.setFromTriplets(ao.begin(), ao.end());
        K_aa_.compute(Kaa);
        if (K_aa_.info() != Eigen::Success) throw StructuralError("stiffness of the added nodes is not positive definite");
    }

    bool empty() const noexcept { return dofs_.empty(); }
    const std::vector<Eigen::Index>& dofs() const noexcept { return dofs_; }

    /// Zeroes the added entries of v.
    void restrict(Eigen::VectorXd& v) const {
        for (Eigen::Index d : dofs_) v[d] = 0.0;
    }

    /// Overwrites the added entries of v with -K_aa^-1 K_ao v_o.
    void extend(Eigen::VectorXd& v) const {
        if (empty()) return;
        restrict(v);
        const Eigen::VectorXd va = K_aa_.solve(Eigen::VectorXd(-(K_ao_ * v)));
        for (std::size_t k = 0; k < dofs_.size(); ++k) v[dofs_[k]] = va[static_cast<Eigen::Index>(k)];
    }

    /// u_p: K_aa^-1 F_a on the added DOFs, zero elsewhere.
    Eigen::VectorXd particular(const Eigen::VectorXd& F) const {
        Eigen::VectorXd u = Eigen::VectorXd::Zero(n_);
        const Eigen::VectorXd ua = added_solve(F);
        for (std::size_t k = 0; k < dofs_.size(); ++k) u[dofs_[k]] = ua[static_cast<Eigen::Index>(k)];
        return u;
    }

    /// F_o - K_oa K_aa^-1 F_a on the retained DOFs, zero on the added ones.
    Eigen::VectorXd condensed_load(const Eigen::VectorXd& F) const {
        Eigen::VectorXd f = F;
        if (empty()) return f;
        f -= K_ao_.transpose() * added_solve(F);
        restrict(f);
        return f;
    }

private:
    Eigen::VectorXd added_solve(const Eigen::VectorXd& F) const {
        if (empty()) return {};
        Eigen::VectorXd Fa(static_cast<Eigen::Index>(dofs_.size()));
        for (std::size_t k = 0; k < dofs_.size(); ++k) Fa[static_cast<Eigen::Index>(k)] = F[dofs_[k]];
        return K_aa_.solve(Fa);
    }

    Eigen::Index n_ = 0;
    std::vector<Eigen::Index> dofs_;
    SparseMatrix K_ao_;  ///< added rows, retained columns
    Eigen::SimplicialLDLT<SparseMatrix> K_aa_;
};

/// U_1 = K0^-1 F and U_{i+1} = -K0^-1 dK U_i, one solve with the initial
/// factor per vector. With a non-empty condenser the recurrence runs on the
/// retained DOFs and each vector is extended to the added ones. An orthonormal
/// basis stops early when the next vector lies in the span already built; the
/// solution is then exact in that span.
inline BasisMatrix build_basis(const CholeskyFactor& factor, const SparseMatrix& dK, const Eigen::VectorXd& F, int s,
                               const AddedDofCondenser& added = {}, BasisKind kind = BasisKind::kRecurrence) {
    if (s < 1) throw ValidationError("basis count must be >= 1");
    if (s > factor.size()) throw ValidationError("basis count exceeds the number of DOFs");
    if (dK.rows() != factor.size() || F.size() != factor.size()) throw ValidationError("basis inputs have inconsistent sizes");
    BasisMatrix B;
    B.kind = kind;
    B.columns.resize(factor.size(), s);
    B.scale = Eigen::VectorXd::Ones(s);
    Eigen::VectorXd u = factor.solve(added.condensed_load(F));
    added.extend(u);
    const double target = u.norm();
    if (kind == BasisKind::kOrthonormal && target > 0.0) u /= target;
    B.columns.col(0) = u;
    for (int i = 1; i < s; ++i) {
        Eigen::VectorXd w = dK * u;
        added.restrict(w);
        u = -factor.solve(w);
        added.extend(u);
        if (kind == BasisKind::kOrthonormal) {
            const double before = u.norm();
            // two passes of classical Gram-Schmidt
            for (int pass = 0; pass < 2; ++pass) u -= B.columns.leftCols(i) * (B.columns.leftCols(i).transpose() * u).eval();
            const double after = u.norm();
            if (!(after > 1e-13 * before)) {
                B.columns.conservativeResize(Eigen::NoChange, i);
                B.scale.conservativeResize(i);
                break;
            }
            u /= after;
            B.columns.col(i) = u;
            continue;
        }
        const double norm = u.norm();
        double step = 1.0;
        if (norm > 0.0 && target > 0.0) step = target / norm;
        u *= step;
        B.scale[i] = B.scale[i - 1] * step;
        B.columns.col(i) = u;
    }
    return B;
}

struct ReducedSystem {
    Eigen::MatrixXd K_R;
    Eigen::VectorXd F_R;
    Eigen::VectorXd y;  ///< coefficients of the scaled columns
    Eigen::Index rank = 0;
};

/// K_R = U_B^T K U_B, F_R = U_B^T F. Dependent directions (eigenvalues below
/// 1e-12 of the largest) are dropped and the system is solved in the rest.
inline ReducedSystem reduce_and_solve(const BasisMatrix& basis, const SparseMatrix& K, const Eigen::VectorXd& F) {
    const Eigen::MatrixXd& U = basis.columns;
    if (U.rows() != K.rows() || F.size() != K.rows()) throw ValidationError("reduced system inputs have inconsistent sizes");
    ReducedSystem r;
    const Eigen::MatrixXd KU = K * U;
    r.K_R = U.transpose() * KU;
    r.K_R = 0.5 * (r.K_R + r.K_R.transpose()).eval();
    r.F_R = U.transpose() * F;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r.K_R);
    const Eigen::VectorXd& lambda = eig.eigenvalues();
    const double top = lambda.cwiseAbs().maxCoeff();
    r.y = Eigen::VectorXd::Zero(U.cols());
    if (top == 0.0) {
        // U_B = 0 only when F = 0; the zero solution is then exact
        if (r.F_R.norm() != 0.0) throw StructuralError("reduced stiffness has rank 0");
        return r;
    }
    const double cut = 1e-12 * top;
    for (Eigen::Index k = 0; k < lambda.size(); ++k)
        if (lambda[k] > cut) ++r.rank;
    if (r.rank == U.cols()) {
        r.y = r.K_R.ldlt().solve(r.F_R);
        return r;
    }
    const Eigen::MatrixXd& Q = eig.eigenvectors();
    for (Eigen::Index k = 0; k < lambda.size(); ++k)
        if (lambda[k] > cut) r.y += Q.col(k) * (Q.col(k).dot(r.F_R) / lambda[k]);
    return r;
}

inline Eigen::VectorXd combine(const BasisMatrix& basis, const Eigen::VectorXd& y) {
    if (y.size() != basis.size()) throw ValidationError("coefficient count does not match the basis");
    return basis.columns * y;
}

struct CaResult {
    Eigen::VectorXd U;
    Eigen::VectorXd particular;  ///< load response of the added DOFs alone; zero without added DOFs
    BasisMatrix basis;
    ReducedSystem reduced;
    double galerkin_residual = 0.0;  ///< |U_B^T (F - K U)| / |U_B^T F|
};

/// Approximate solution of K U = F from the initial factor and dK = K - K0.
/// `added` lists DOFs present only in the modified structure; they are
/// condensed out of the recurrence (see AddedDofCondenser).
inline CaResult ca_solve(const CholeskyFactor& factor0, const SparseMatrix& dK, const SparseMatrix& K,
                         const Eigen::VectorXd& F, int s, std::span<const Eigen::Index> added = {},
                         BasisKind kind = BasisKind::kOrthonormal) {
    CaResult out;
    const AddedDofCondenser cond(K, added);
    out.particular = cond.particular(F);
    out.basis = build_basis(factor0, dK, F, s, cond, kind);
    out.reduced = reduce_and_solve(out.basis, K, F);
    out.U = out.particular + combine(out.basis, out.reduced.y);
    const Eigen::VectorXd g = out.basis.columns.transpose() * (F - K * out.U);
    const double fr = out.reduced.F_R.norm();
    out.galerkin_residual = fr > 0.0 ? g.norm() / fr : g.norm();
    return out;
}

/// Strain and stress from U_B K_R^-1 F_R, checked against the combined U.
inline FieldSolution ca_recover(const CaResult& ca, const DofMap& dofs, const NodalShapes& shapes, const MaterialModel& material) {
    const Eigen::VectorXd coeff = ca.reduced.rank == ca.basis.size() ? Eigen::VectorXd(ca.reduced.K_R.ldlt().solve(ca.reduced.F_R))
                                                                      : ca.reduced.y;
    Eigen::VectorXd U = ca.basis.columns * coeff;
    if (ca.particular.size() == U.size()) U += ca.particular;
    const double scale = std::max(ca.U.norm(), 1e-300);
    if ((U - ca.U).norm() > 1e-8 * scale) throw NumericalError("reduced-system recovery disagrees with the combined displacement");
    return recover_fields(U, dofs, shapes, material);
}

}  // namespace mlr
