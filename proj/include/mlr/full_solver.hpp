#pragma once

#include "mlr/assembly.hpp"
#include "mlr/errors.hpp"
#include "mlr/model.hpp"

#include <Eigen/Core>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mlr {

/// Sparse Cholesky factor P K P^T = L L^T with an AMD fill-reducing ordering.
/// perm()[i] is the factor row/column holding original DOF i, so code that
/// addresses original DOF indices maps through perm() first.
class CholeskyFactor {
public:
    CholeskyFactor() = default;
    CholeskyFactor(SparseMatrix lower, std::vector<int> perm) : L_(std::move(lower)), perm_(std::move(perm)) {
        inverse_.assign(perm_.size(), 0);
        for (std::size_t i = 0; i < perm_.size(); ++i) inverse_[static_cast<std::size_t>(perm_[i])] = static_cast<int>(i);
    }

    Eigen::Index size() const noexcept { return L_.rows(); }
    const SparseMatrix& lower() const noexcept { return L_; }
    /// original DOF -> factor index
    const std::vector<int>& perm() const noexcept { return perm_; }
    /// factor index -> original DOF
    const std::vector<int>& inverse_perm() const noexcept { return inverse_; }

    Eigen::VectorXd to_factor_order(const Eigen::VectorXd& x) const {
        Eigen::VectorXd y(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) y[perm_[static_cast<std::size_t>(i)]] = x[i];
        return y;
    }

    Eigen::VectorXd to_original_order(const Eigen::VectorXd& y) const {
        Eigen::VectorXd x(y.size());
        for (Eigen::Index i = 0; i < y.size(); ++i) x[i] = y[perm_[static_cast<std::size_t>(i)]];
        return x;
    }

    /// Solves K x = b.
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
        if (b.size() != size()) throw ValidationError("right-hand side size does not match the factor");
        Eigen::VectorXd y = to_factor_order(b);
        L_.triangularView<Eigen::Lower>().solveInPlace(y);
        L_.transpose().triangularView<Eigen::Upper>().solveInPlace(y);
        return to_original_order(y);
    }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& B) const {
        Eigen::MatrixXd X(B.rows(), B.cols());
        for (Eigen::Index c = 0; c < B.cols(); ++c) X.col(c) = solve(Eigen::VectorXd(B.col(c)));
        return X;
    }

    /// L L^T mapped back to the original DOF order.
    SparseMatrix reconstruct() const {
        const SparseMatrix LLt = L_ * SparseMatrix(L_.transpose());
        Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> P(static_cast<Eigen::Index>(perm_.size()));
        for (std::size_t i = 0; i < perm_.size(); ++i) P.indices()[static_cast<Eigen::Index>(i)] = perm_[i];
        const SparseMatrix left = P.transpose() * LLt;
        return left * P;
    }

private:
    SparseMatrix L_;
    std::vector<int> perm_;
    std::vector<int> inverse_;
};

namespace detail {

/// Describes a near-null vector of a singular stiffness: rigid modes are
/// tried first, otherwise a few steps of shifted inverse iteration.
inline std::string describe_null_vector(const SparseMatrix& K, const DofMap* dofs) {
    const Eigen::Index n = K.rows();
    const double knorm = K.norm();
    std::ostringstream msg;
    if (dofs && dofs->size() == n) {
        const int dim = dofs->dim();
        auto mode = [&](int kind) {
            Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
            for (std::size_t p = 0; p < dofs->node_count(); ++p) {
                const Eigen::Vector3d x = dofs->coords(p);
                Eigen::Vector3d v = Eigen::Vector3d::Zero();
                if (kind < dim) v[kind] = 1.0;
                else if (kind == dim) v = Eigen::Vector3d(-x.y(), x.x(), 0.0);  // rotation about z
                else if (kind == dim + 1) v = Eigen::Vector3d(0.0, -x.z(), x.y());
                else v = Eigen::Vector3d(x.z(), 0.0, -x.x());
                for (int a = 0; a < dim; ++a) u[static_cast<Eigen::Index>(p) * dim + a] = v[a];
            }
            return u;
        };
        const char* names2[] = {"translation x", "translation y", "rotation z"};
        const char* names3[] = {"translation x", "translation y", "translation z", "rotation z", "rotation x", "rotation y"};
        const int modes = dim == 2 ? 3 : 6;
        for (int k = 0; k < modes; ++k) {
            const Eigen::VectorXd u = mode(k);
            if (u.norm() == 0.0) continue;
            if ((K * u).norm() <= 1e-8 * knorm * u.norm()) {
                msg << "rigid-body mode (" << (dim == 2 ? names2[k] : names3[k]) << ") is unconstrained";
                return msg.str();
            }
        }
    }
    // shifted inverse iteration on K + eps I
    const double shift = 1e-10 * K.diagonal().cwiseAbs().maxCoeff();
    SparseMatrix Ks = K;
    for (Eigen::Index i = 0; i < n; ++i) Ks.coeffRef(i, i) += shift;
    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt(Ks);
    if (ldlt.info() != Eigen::Success) return "stiffness is not positive semi-definite";
    Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(n, 1.0, 2.0);
    for (int it = 0; it < 4; ++it) {
        v = ldlt.solve(v);
        v /= v.norm();
    }
    Eigen::Index worst = 0;
    v.cwiseAbs().maxCoeff(&worst);
    msg << "near-null vector with Rayleigh quotient " << v.dot(K * v) << "; largest component at DOF " << worst;
    if (dofs && dofs->size() == n)
        msg << " (node " << dofs->node_id(static_cast<std::size_t>(worst / dofs->dim())) << ", axis " << worst % dofs->dim() << ")";
    return msg.str();
}

}  // namespace detail

/// Factorizes a boundary-condition-applied stiffness. Throws RigidBodyError
/// when K is not numerically positive definite.
inline CholeskyFactor factorize(const SparseMatrix& K, const DofMap* dofs = nullptr) {
    if (K.rows() != K.cols()) throw ValidationError("stiffness must be square");
    Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt;
    llt.compute(K);
    bool ok = llt.info() == Eigen::Success;
    SparseMatrix L;
    std::vector<int> perm(static_cast<std::size_t>(K.rows()));
    if (ok) {
        L = llt.matrixL();
        const auto& P = llt.permutationP();
        for (Eigen::Index i = 0; i < K.rows(); ++i) perm[static_cast<std::size_t>(i)] = P.size() ? P.indices()[i] : static_cast<int>(i);
        // tiny pivots relative to the permuted diagonal signal a singular matrix
        const Eigen::VectorXd kdiag = K.diagonal();
        for (Eigen::Index i = 0; i < K.rows() && ok; ++i) {
            const Eigen::Index j = perm[static_cast<std::size_t>(i)];
            const double pivot = L.coeff(j, j) * L.coeff(j, j);
            if (!(pivot > 1e-13 * std::abs(kdiag[i]))) ok = false;
        }
    }
    if (!ok) throw RigidBodyError("stiffness is singular: " + detail::describe_null_vector(K, dofs));
    return CholeskyFactor(std::move(L), std::move(perm));
}

inline CholeskyFactor factorize(const StiffnessSystem& sys) {
    if (!sys.bcs_applied) throw ValidationError("boundary conditions must be applied before factorization");
    return factorize(sys.K, &sys.dofs);
}

/// Factor of a matrix moved to a larger DOF space by embed_matrix: the new
/// DOFs are appended to the factor order with unit pivots.
inline CholeskyFactor embed_factor(const CholeskyFactor& f, const DofMap& from, const DofMap& to) {
    if (from == to) return f;
    const auto map = dof_embedding(from, to);
    const Eigen::Index n = to.size();
    const Eigen::Index n0 = f.size();
    std::vector<int> perm(static_cast<std::size_t>(n), -1);
    for (std::size_t i = 0; i < map.size(); ++i) perm[static_cast<std::size_t>(map[i])] = f.perm()[i];
    int next = static_cast<int>(n0);
    for (auto& p : perm)
        if (p < 0) p = next++;
    Triplets trip;
    trip.reserve(static_cast<std::size_t>(f.lower().nonZeros() + n - n0));
    for (Eigen::Index c = 0; c < f.lower().outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(f.lower(), c); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
    for (Eigen::Index d = n0; d < n; ++d) trip.emplace_back(d, d, 1.0);
    SparseMatrix L(n, n);
    L.setFromTriplets(trip.begin(), trip.end());
    return CholeskyFactor(std::move(L), std::move(perm));
}

inline Eigen::VectorXd solve(const CholeskyFactor& factor, const Eigen::VectorXd& F) { return factor.solve(F); }

/// Relative residual |K u - F| / |F| (absolute when F = 0).
inline double relative_residual(const SparseMatrix& K, const Eigen::VectorXd& u, const Eigen::VectorXd& F) {
    const double r = (K * u - F).norm();
    const double f = F.norm();
    return f > 0.0 ? r / f : r;
}

}  // namespace mlr
