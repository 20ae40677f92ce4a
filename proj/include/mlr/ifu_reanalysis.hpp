#pragma once

#include "mlr/assembly.hpp"
#include "mlr/errors.hpp"
#include "mlr/full_solver.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace mlr {

/// delta = F - K_m U*.
inline Eigen::VectorXd residual(const SparseMatrix& K_m, const Eigen::VectorXd& F, const Eigen::VectorXd& U0) {
    if (K_m.rows() != F.size() || F.size() != U0.size()) throw ValidationError("residual inputs have inconsistent sizes");
    return F - K_m * U0;
}

/// Row sums of |dK| plus |delta|.
inline Eigen::VectorXd measurement(const SparseMatrix& dK, const Eigen::VectorXd& delta) {
    if (dK.rows() != delta.size()) throw ValidationError("measurement inputs have inconsistent sizes");
    Eigen::VectorXd m = delta.cwiseAbs();
    for (Eigen::Index c = 0; c < dK.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(dK, c); it; ++it) m[it.row()] += std::abs(it.value());
    return m;
}

inline Eigen::VectorXd measurement(const SparseMatrix& K_m, const SparseMatrix& K0, const Eigen::VectorXd& delta) {
    return measurement(SparseMatrix(K_m - K0), delta);
}

/// Relative cut-off used for the unbalanced set.
inline double unbalanced_tolerance(const Eigen::VectorXd& meas, double relative = 1e-12) {
    return meas.size() ? relative * meas.cwiseAbs().maxCoeff() : 0.0;
}

/// Ascending indices with |meas| > tol.
inline std::vector<Eigen::Index> unbalanced_set(const Eigen::VectorXd& meas, double tol) {
    if (tol < 0.0) throw ValidationError("tolerance must be >= 0");
    std::vector<Eigen::Index> out;
    for (Eigen::Index i = 0; i < meas.size(); ++i)
        if (std::abs(meas[i]) > tol) out.push_back(i);
    return out;
}

/// Initial factor with the unbalanced DOFs constrained. In factor order,
/// L L^T + V V^T equals K0 with those rows and columns replaced by identity.
struct ConstrainedFactor {
    SparseMatrix L;                  ///< factor order
    SparseMatrix V;                  ///< n x n_d, factor order rows; column i belongs to S[i]
    std::vector<Eigen::Index> S;     ///< original DOF indices, ascending
    std::vector<Eigen::Index> S_hat; ///< factor indices of S, same order
    std::vector<char> in_set;        ///< factor-order membership
};

/// Processes S in descending factor order: each column becomes a V column
/// (rows already constrained and its own diagonal removed), then its row and
/// column are cleared and the diagonal set to one. L0 is not modified.
inline ConstrainedFactor constrain_factor(const CholeskyFactor& f0, const std::vector<Eigen::Index>& S) {
    const Eigen::Index n = f0.size();
    ConstrainedFactor cf;
    cf.S = S;
    cf.in_set.assign(static_cast<std::size_t>(n), 0);
    for (Eigen::Index s : S) {
        if (s < 0 || s >= n) throw ValidationError("unbalanced DOF index out of range");
        const Eigen::Index sh = f0.perm()[static_cast<std::size_t>(s)];
        cf.S_hat.push_back(sh);
        cf.in_set[static_cast<std::size_t>(sh)] = 1;
    }
    const SparseMatrix& L0 = f0.lower();
    std::vector<std::size_t> order(S.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cf.S_hat[a] > cf.S_hat[b]; });
    Triplets vt;
    for (std::size_t i : order) {
        const Eigen::Index sh = cf.S_hat[i];
        for (SparseMatrix::InnerIterator it(L0, sh); it; ++it) {
            // rows of larger constrained DOFs are already cleared; the own diagonal is dropped
            if (it.row() == sh || cf.in_set[static_cast<std::size_t>(it.row())]) continue;
            vt.emplace_back(it.row(), static_cast<Eigen::Index>(i), it.value());
        }
    }
    cf.V.resize(n, static_cast<Eigen::Index>(S.size()));
    cf.V.setFromTriplets(vt.begin(), vt.end());
    cf.L = L0;
    cf.L.prune([&](Eigen::Index r, Eigen::Index c, double) {
        return r == c || (!cf.in_set[static_cast<std::size_t>(r)] && !cf.in_set[static_cast<std::size_t>(c)]);
    });
    for (Eigen::Index sh : cf.S_hat) cf.L.coeffRef(sh, sh) = 1.0;
    cf.L.makeCompressed();
    return cf;
}

/// Sign convention of the constraint right-hand sides. kExact uses
/// -K_m(:, s) off the set, which makes U* + B y solve the modified system;
/// kLiteral keeps +K_m(:, s) and is retained for comparison only.
enum class RhsConvention { kExact, kLiteral };

/// n x n_d constraint columns in original order: K_m(:, S[i]) with rows S
/// zeroed (negated for kExact) and a one at (S[i], i).
inline SparseMatrix constraint_rhs(const SparseMatrix& K_m, const std::vector<Eigen::Index>& S,
                                   RhsConvention conv = RhsConvention::kExact) {
    std::vector<char> in_set(static_cast<std::size_t>(K_m.rows()), 0);
    for (Eigen::Index s : S) in_set[static_cast<std::size_t>(s)] = 1;
    const double sign = conv == RhsConvention::kExact ? -1.0 : 1.0;
    Triplets t;
    for (std::size_t i = 0; i < S.size(); ++i) {
        for (SparseMatrix::InnerIterator it(K_m, S[i]); it; ++it)
            if (!in_set[static_cast<std::size_t>(it.row())]) t.emplace_back(it.row(), static_cast<Eigen::Index>(i), sign * it.value());
        t.emplace_back(S[i], static_cast<Eigen::Index>(i), 1.0);
    }
    SparseMatrix R(K_m.rows(), static_cast<Eigen::Index>(S.size()));
    R.setFromTriplets(t.begin(), t.end());
    return R;
}

namespace detail {

using RowBlock = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Forward substitution L Z = B for sparse right-hand sides, computed only on
/// the rows reachable from B's pattern.
struct ReachSolve {
    std::vector<Eigen::Index> rows;  ///< ascending factor rows carried in Z
    std::vector<Eigen::Index> slot;  ///< factor row -> row of Z, or -1
    RowBlock Z;
};

inline ReachSolve forward_reach(const SparseMatrix& L, const std::vector<const SparseMatrix*>& rhs) {
    const Eigen::Index n = L.rows();
    Eigen::Index m = 0;
    for (const SparseMatrix* B : rhs) m += B->cols();
    std::vector<char> mark(static_cast<std::size_t>(n), 0);
    // first nonzero row of every right-hand side column
    std::vector<Eigen::Index> first(static_cast<std::size_t>(m), n);
    Eigen::Index col0 = 0;
    for (const SparseMatrix* B : rhs) {
        for (Eigen::Index c = 0; c < B->outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(*B, c); it; ++it) {
                mark[static_cast<std::size_t>(it.row())] = 1;
                auto& f = first[static_cast<std::size_t>(col0 + c)];
                f = std::min(f, it.row());
            }
        col0 += B->cols();
    }
    // entries below the diagonal point to later rows, so one ascending sweep closes the reach
    for (Eigen::Index j = 0; j < n; ++j) {
        if (!mark[static_cast<std::size_t>(j)]) continue;
        for (SparseMatrix::InnerIterator it(L, j); it; ++it) mark[static_cast<std::size_t>(it.row())] = 1;
    }
    ReachSolve rs;
    rs.slot.assign(static_cast<std::size_t>(n), -1);
    for (Eigen::Index j = 0; j < n; ++j)
        if (mark[static_cast<std::size_t>(j)]) {
            rs.slot[static_cast<std::size_t>(j)] = static_cast<Eigen::Index>(rs.rows.size());
            rs.rows.push_back(j);
        }
    // Columns sorted by first row: row j of the solution is zero in every column
    // that starts below j, so each update only touches a leading block.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    for (Eigen::Index c = 0; c < m; ++c) order[static_cast<std::size_t>(c)] = c;
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return first[static_cast<std::size_t>(a)] < first[static_cast<std::size_t>(b)];
    });
    std::vector<Eigen::Index> pos(static_cast<std::size_t>(m));
    for (Eigen::Index k = 0; k < m; ++k) pos[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = k;
    RowBlock Y = RowBlock::Zero(static_cast<Eigen::Index>(rs.rows.size()), m);
    col0 = 0;
    for (const SparseMatrix* B : rhs) {
        for (Eigen::Index c = 0; c < B->outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(*B, c); it; ++it)
                Y(rs.slot[static_cast<std::size_t>(it.row())], pos[static_cast<std::size_t>(col0 + c)]) += it.value();
        col0 += B->cols();
    }
    Eigen::Index active = 0;
    for (Eigen::Index j : rs.rows) {
        while (active < m && first[static_cast<std::size_t>(order[static_cast<std::size_t>(active)])] <= j) ++active;
        if (active == 0) continue;
        const Eigen::Index sj = rs.slot[static_cast<std::size_t>(j)];
        double diag = 0.0;
        for (SparseMatrix::InnerIterator d(L, j); d; ++d)
            if (d.row() == j) diag = d.value();
        auto yj = Y.row(sj).head(active);
        yj /= diag;
        for (SparseMatrix::InnerIterator it(L, j); it; ++it) {
            if (it.row() <= j) continue;
            Y.row(rs.slot[static_cast<std::size_t>(it.row())]).head(active) -= it.value() * yj;
        }
    }
    rs.Z.resize(Y.rows(), m);
    for (Eigen::Index c = 0; c < m; ++c) rs.Z.col(c) = Y.col(pos[static_cast<std::size_t>(c)]);
    return rs;
}

inline SparseMatrix to_factor_rows(const SparseMatrix& R, const CholeskyFactor& f) {
    Triplets t;
    t.reserve(static_cast<std::size_t>(R.nonZeros()));
    for (Eigen::Index c = 0; c < R.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(R, c); it; ++it) t.emplace_back(f.perm()[static_cast<std::size_t>(it.row())], c, it.value());
    SparseMatrix out(R.rows(), R.cols());
    out.setFromTriplets(t.begin(), t.end());
    return out;
}

/// Applies (L L^T + V V^T) to a factor-order block.
inline Eigen::MatrixXd apply_constrained(const ConstrainedFactor& cf, const Eigen::MatrixXd& X) {
    const Eigen::MatrixXd LtX = cf.L.transpose() * X;
    return cf.L * LtX + cf.V * (cf.V.transpose() * X);
}

/// Pieces shared by the explicit and projected evaluations: Z = L^-1 R,
/// W = L^-1 V, M = W^T Z and the factor of C = I + W^T W.
struct SmwPieces {
    ReachSolve reach;
    Eigen::Index nd = 0;
    Eigen::MatrixXd M;
    Eigen::LLT<Eigen::MatrixXd> C;
};

inline SmwPieces smw_pieces(const ConstrainedFactor& cf, const SparseMatrix& R_hat) {
    SmwPieces p;
    p.nd = R_hat.cols();
    p.reach = forward_reach(cf.L, {&R_hat, &cf.V});
    const auto Z = p.reach.Z.leftCols(p.nd);
    const auto W = p.reach.Z.rightCols(p.nd);
    Eigen::MatrixXd C = Eigen::MatrixXd::Identity(p.nd, p.nd);
    C.selfadjointView<Eigen::Lower>().rankUpdate(W.transpose());
    p.C.compute(C);
    if (p.C.info() != Eigen::Success) throw NumericalError("capacitance matrix of the factor update is not positive definite");
    p.M.noalias() = W.transpose() * Z;
    return p;
}

/// Backward solve L^T x = t for a factor-order vector given on reach rows.
inline Eigen::VectorXd backward_from_reach(const ConstrainedFactor& cf, const ReachSolve& rs, const Eigen::VectorXd& t_reach) {
    Eigen::VectorXd t = Eigen::VectorXd::Zero(cf.L.rows());
    for (std::size_t k = 0; k < rs.rows.size(); ++k) t[rs.rows[k]] = t_reach[static_cast<Eigen::Index>(k)];
    cf.L.transpose().triangularView<Eigen::Upper>().solveInPlace(t);
    return t;
}

}  // namespace detail

/// Solves (L L^T + V V^T) B = R with the Sherman-Morrison-Woodbury identity.
/// R is in original order; B is returned in original order.
inline Eigen::MatrixXd fundamental_solutions(const CholeskyFactor& f0, const ConstrainedFactor& cf, const SparseMatrix& R) {
    const SparseMatrix R_hat = detail::to_factor_rows(R, f0);
    const detail::SmwPieces p = detail::smw_pieces(cf, R_hat);
    const auto Z = p.reach.Z.leftCols(p.nd);
    const auto W = p.reach.Z.rightCols(p.nd);
    const Eigen::MatrixXd T = Z - W * p.C.solve(p.M);
    Eigen::MatrixXd B(f0.size(), p.nd);
    for (Eigen::Index i = 0; i < p.nd; ++i) B.col(i) = f0.to_original_order(detail::backward_from_reach(cf, p.reach, T.col(i)));
    return B;
}

namespace detail {

/// Solves the reduced unbalanced system; tiny pivots relative to the
/// modified diagonal mean the modified structure is singular.
inline Eigen::VectorXd solve_reduced(const Eigen::MatrixXd& K_R, const Eigen::VectorXd& rhs, double scale) {
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(K_R);
    const double smallest = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(lu.rcond() > 1e-14) || !(smallest > 1e-12 * scale))
        throw StructuralError("reduced unbalanced system is singular; the modified structure is not supported");
    return lu.solve(rhs);
}

}  // namespace detail

enum class IfuMode { kProjected, kExplicit };

struct IfuOptions {
    IfuMode mode = IfuMode::kProjected;
    RhsConvention rhs = RhsConvention::kExact;
    double tolerance = 1e-12;      ///< relative to max(measurement)
    bool allow_fallback = true;    ///< refactorize when the exactness check fails
};

struct IfuResult {
    Eigen::VectorXd U;
    std::vector<Eigen::Index> S;
    Eigen::MatrixXd K_R;
    Eigen::VectorXd y;
    double constraint_residual = 0.0;  ///< |(L L^T + V V^T) dU - R y| / |R y|
    double residual = 0.0;             ///< |K_m U - F| / |F|
    bool fallback = false;
    std::string diagnostic;

    std::size_t n_d() const noexcept { return S.size(); }
};

/// Exact reanalysis of K_m U = F from the factor of K0 and its solution U0.
/// dK = K_m - K0 selects the unbalanced DOFs together with the residual.
inline IfuResult ifu_solve(const CholeskyFactor& f0, const SparseMatrix& dK, const SparseMatrix& K_m,
                           const Eigen::VectorXd& F, const Eigen::VectorXd& U0, const IfuOptions& opt = {}) {
    IfuResult out;
    const Eigen::VectorXd delta = residual(K_m, F, U0);
    const Eigen::VectorXd meas = measurement(dK, delta);
    // round-off in delta stays below the load scale and must not count as a change
    const double floor = F.size() ? opt.tolerance * F.cwiseAbs().maxCoeff() : 0.0;
    out.S = unbalanced_set(meas, std::max(unbalanced_tolerance(meas, opt.tolerance), floor));
    if (out.S.empty()) {
        if (dK.nonZeros() && SparseMatrix(dK.cwiseAbs()).sum() > 0.0) throw NumericalError("stiffness changed but no DOF is unbalanced");
        out.U = U0;
        out.residual = relative_residual(K_m, out.U, F);
        return out;
    }
    const Eigen::Index nd = static_cast<Eigen::Index>(out.S.size());
    const ConstrainedFactor cf = constrain_factor(f0, out.S);
    const SparseMatrix R = constraint_rhs(K_m, out.S, opt.rhs);
    const SparseMatrix R_hat = detail::to_factor_rows(R, f0);
    Eigen::VectorXd delta_u(nd);
    double diag_scale = 0.0;
    for (Eigen::Index i = 0; i < nd; ++i) {
        const Eigen::Index s = out.S[static_cast<std::size_t>(i)];
        delta_u[i] = delta[s];
        diag_scale = std::max(diag_scale, std::abs(K_m.coeff(s, s)));
    }

    Eigen::VectorXd dU_hat;
    if (opt.mode == IfuMode::kExplicit || opt.rhs == RhsConvention::kLiteral) {
        const Eigen::MatrixXd B = fundamental_solutions(f0, cf, R);
        const Eigen::MatrixXd KB = K_m * B;
        out.K_R.resize(nd, nd);
        for (Eigen::Index i = 0; i < nd; ++i) out.K_R.row(i) = KB.row(out.S[static_cast<std::size_t>(i)]);
        out.y = detail::solve_reduced(out.K_R, delta_u, diag_scale);
        const Eigen::VectorXd dU = B * out.y;
        dU_hat = f0.to_factor_order(dU);
        const Eigen::MatrixXd Bh = [&] {
            Eigen::MatrixXd X(B.rows(), B.cols());
            for (Eigen::Index c = 0; c < B.cols(); ++c) X.col(c) = f0.to_factor_order(B.col(c));
            return X;
        }();
        const Eigen::MatrixXd res = detail::apply_constrained(cf, Bh) - Eigen::MatrixXd(R_hat);
        out.constraint_residual = res.norm() / Eigen::MatrixXd(R_hat).norm();
        out.U = U0 + dU;
    } else {
        const detail::SmwPieces p = detail::smw_pieces(cf, R_hat);
        const auto Z = p.reach.Z.leftCols(nd);
        const auto W = p.reach.Z.rightCols(nd);
        // R^T (L L^T + V V^T)^-1 R through the projected pieces
        Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(nd, nd);
        Q.selfadjointView<Eigen::Lower>().rankUpdate(Z.transpose());
        Q = Q.selfadjointView<Eigen::Lower>();
        Q.noalias() -= p.M.transpose() * p.C.solve(p.M);
        out.K_R = -Q;
        for (Eigen::Index i = 0; i < nd; ++i) {
            out.K_R(i, i) += 1.0;
            for (Eigen::Index j = 0; j < nd; ++j) out.K_R(i, j) += K_m.coeff(out.S[static_cast<std::size_t>(i)], out.S[static_cast<std::size_t>(j)]);
        }
        out.K_R = 0.5 * (out.K_R + out.K_R.transpose()).eval();
        out.y = detail::solve_reduced(out.K_R, delta_u, diag_scale);
        const Eigen::VectorXd zy = Z * out.y;
        const Eigen::VectorXd t = zy - W * p.C.solve(Eigen::VectorXd(W.transpose() * zy));
        dU_hat = detail::backward_from_reach(cf, p.reach, t);
        const Eigen::VectorXd Ry = R_hat * out.y;
        const Eigen::VectorXd res = detail::apply_constrained(cf, dU_hat) - Ry;
        out.constraint_residual = res.norm() / std::max(Ry.norm(), 1e-300);
        out.U = U0 + f0.to_original_order(dU_hat);
    }
    out.residual = relative_residual(K_m, out.U, F);
    if (opt.allow_fallback && !(out.residual <= 1e-9 && out.constraint_residual <= 1e-9)) {
        std::string why = "IFU exactness check failed (residual " + std::to_string(out.residual) + ", constraint residual " +
                          std::to_string(out.constraint_residual) + "); refactorized";
        out.U = factorize(K_m).solve(F);
        out.residual = relative_residual(K_m, out.U, F);
        out.fallback = true;
        out.diagnostic = why;
    }
    return out;
}

}  // namespace mlr
