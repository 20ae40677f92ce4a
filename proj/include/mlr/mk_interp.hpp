#pragma once

#include "mlr/errors.hpp"
#include "mlr/model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <sstream>
#include <vector>

namespace mlr {

/// Gaussian correlation exp(-theta * |xi - xj|^2).
inline double correlation(const Eigen::Vector3d& xi, const Eigen::Vector3d& xj, double theta) {
    return std::exp(-theta * (xi - xj).squaredNorm());
}

/// Polynomial basis of the Kriging trend. Linear is the working basis;
/// constant exists for degenerate supports and tests.
enum class Basis { kConstant, kLinear };

/// Number of terms of the linear polynomial basis [1 x y (z)].
constexpr int basis_size(int dim) noexcept { return dim + 1; }

constexpr int basis_size(int dim, Basis basis) noexcept { return basis == Basis::kLinear ? dim + 1 : 1; }

/// Local nodal spacing d_c at a point: mean distance from the point's nearest
/// node to that node's dim+1 nearest neighbours (fewer if the cloud is tiny).
inline double local_spacing(const Eigen::Vector3d& point, const NodeCloud& cloud) {
    if (cloud.size() < 2) throw ValidationError("local spacing needs at least two nodes");
    const auto& index = cloud.index();
    const std::size_t nearest = index.nearest(point, 1).front();
    const auto neighbours = index.nearest(cloud.position(nearest), static_cast<std::size_t>(cloud.dim()) + 2);
    double sum = 0.0;
    int count = 0;
    for (std::size_t idx : neighbours) {
        if (idx == nearest) continue;
        if (count == cloud.dim() + 1) break;
        sum += (cloud.position(idx) - cloud.position(nearest)).norm();
        ++count;
    }
    return sum / count;
}

/// Nodes inside the closed support ball around an evaluation point.
struct SupportSelection {
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    int dim = 2;
    double spacing = 0.0;                ///< d_c
    double radius = 0.0;                 ///< d_m = alpha * d_c (times 1.5 after a growth retry)
    std::vector<std::size_t> nodes;      ///< cloud indices, ascending (= ascending node id)
    std::vector<Eigen::Vector3d> coords;  ///< positions of the support nodes

    std::size_t size() const noexcept { return nodes.size(); }
};

inline SupportSelection select_support(const Eigen::Vector3d& point, const NodeCloud& cloud, double alpha) {
    if (!(alpha > 0.0)) throw ValidationError("alpha must be > 0");
    SupportSelection sel;
    sel.point = point;
    sel.dim = cloud.dim();
    sel.spacing = local_spacing(point, cloud);
    sel.radius = alpha * sel.spacing;
    const std::size_t needed = static_cast<std::size_t>(basis_size(cloud.dim()));
    // closed ball; the relative slack makes exact ties deterministic under rounding
    sel.nodes = cloud.index().within(point, sel.radius * (1.0 + 1e-12));
    if (sel.nodes.size() < needed) {
        sel.radius *= 1.5;
        sel.nodes = cloud.index().within(point, sel.radius * (1.0 + 1e-12));
    }
    if (sel.nodes.size() < needed) {
        std::ostringstream msg;
        msg << "support deficiency at (" << point.transpose() << "): " << sel.nodes.size() << " nodes within radius "
            << sel.radius << ", need " << needed;
        throw SupportDeficiencyError(msg.str());
    }
    sel.coords.reserve(sel.nodes.size());
    for (std::size_t idx : sel.nodes) sel.coords.push_back(cloud.position(idx));
    return sel;
}

/// Moving-Kriging system for one support. Coordinates are shifted so the
/// selection point is the origin; the interpolant is translation invariant
/// because the basis contains all linear terms.
struct KrigingSystem {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    int dim = 2;
    double theta = 1.0;
    Basis basis = Basis::kLinear;
    Eigen::MatrixXd local;  ///< n x dim node coordinates relative to center
    Eigen::MatrixXd R;      ///< n x n correlation matrix
    Eigen::MatrixXd P;      ///< n x m polynomial matrix
    Eigen::MatrixXd Sa;     ///< m x n
    Eigen::MatrixXd Sb;     ///< n x n
    double rcond = 0.0;     ///< reciprocal condition estimate of R
    bool jittered = false;

    Eigen::Index size() const noexcept { return R.rows(); }
};

inline KrigingSystem build_system(const SupportSelection& sel, double theta, Basis basis = Basis::kLinear) {
    const Eigen::Index n = static_cast<Eigen::Index>(sel.size());
    const int m = basis_size(sel.dim, basis);
    if (n < m) throw SupportDeficiencyError("support has fewer nodes than basis terms");
    KrigingSystem sys;
    sys.basis = basis;
    sys.center = sel.point;
    sys.dim = sel.dim;
    sys.theta = theta;
    sys.local.resize(n, sel.dim);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int a = 0; a < sel.dim; ++a) sys.local(i, a) = sel.coords[static_cast<std::size_t>(i)][a] - sel.point[a];

    sys.R.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        sys.R(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = std::exp(-theta * (sys.local.row(i) - sys.local.row(j)).squaredNorm());
            sys.R(i, j) = v;
            sys.R(j, i) = v;
        }
    }
    sys.P.resize(n, m);
    sys.P.col(0).setOnes();
    if (m > 1) sys.P.rightCols(sel.dim) = sys.local;

    Eigen::LLT<Eigen::MatrixXd> llt(sys.R);
    sys.rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    if (llt.info() != Eigen::Success || !(sys.rcond > 1e-15)) {
        const double jitter = 1e-12 * sys.R.trace() / static_cast<double>(n);
        Eigen::MatrixXd shifted = sys.R;
        shifted.diagonal().array() += jitter;
        llt.compute(shifted);
        sys.jittered = true;
        if (llt.info() != Eigen::Success) {
            std::ostringstream msg;
            msg << "correlation matrix is numerically singular at (" << sel.point.transpose()
                << "), rcond estimate " << sys.rcond;
            throw ConditioningError(msg.str(), sys.rcond);
        }
        sys.rcond = llt.rcond();
    }

    const Eigen::MatrixXd RinvP = llt.solve(sys.P);
    const Eigen::MatrixXd moment = sys.P.transpose() * RinvP;
    Eigen::LLT<Eigen::MatrixXd> moment_llt(moment);
    if (moment_llt.info() != Eigen::Success || !(moment_llt.rcond() > 1e-12)) {
        std::ostringstream msg;
        msg << "polynomial moment matrix is rank deficient at (" << sel.point.transpose() << "); " << n
            << " support nodes do not span the linear basis";
        throw RankDeficiencyError(msg.str());
    }
    sys.Sa = moment_llt.solve(RinvP.transpose());
    Eigen::MatrixXd rhs = -sys.P * sys.Sa;
    rhs.diagonal().array() += 1.0;
    sys.Sb = llt.solve(rhs);

    auto relative = [](double num, double den) { return num == 0.0 ? 0.0 : num / den; };
    const double res_a = relative((moment * sys.Sa - RinvP.transpose()).norm(), moment.norm() * sys.Sa.norm());
    const double res_b = relative((sys.R * sys.Sb - rhs).norm(), sys.R.norm() * sys.Sb.norm() + rhs.norm());
    if (!(res_a <= 1e-10) || !(res_b <= 1e-10)) {
        std::ostringstream msg;
        msg << "Kriging system residual check failed at (" << sel.point.transpose() << "): " << res_a << ", " << res_b;
        throw ConditioningError(msg.str(), sys.rcond);
    }
    return sys;
}

/// Shape function values and first derivatives at one point.
struct ShapeEval {
    Eigen::VectorXd values;  ///< n
    Eigen::MatrixXd grads;   ///< n x dim
};

inline ShapeEval shape_functions(const KrigingSystem& sys, const Eigen::Vector3d& point) {
    const Eigen::Index n = sys.size();
    const int m = basis_size(sys.dim, sys.basis);
    Eigen::VectorXd x(sys.dim);
    for (int a = 0; a < sys.dim; ++a) x[a] = point[a] - sys.center[a];

    Eigen::VectorXd p(m);
    p[0] = 1.0;
    if (m > 1) p.tail(sys.dim) = x;
    Eigen::VectorXd r(n);
    Eigen::MatrixXd dr(n, sys.dim);
    for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::VectorXd diff = x - sys.local.row(k).transpose();
        r[k] = std::exp(-sys.theta * diff.squaredNorm());
        dr.row(k) = (-2.0 * sys.theta * r[k]) * diff.transpose();
    }
    ShapeEval eval;
    eval.values = sys.Sa.transpose() * p + sys.Sb.transpose() * r;
    // dp/dx_i picks row i+1 of Sa
    eval.grads = sys.Sb.transpose() * dr;
    if (m > 1) eval.grads += sys.Sa.bottomRows(sys.dim).transpose();
    return eval;
}

/// Support selection plus shape evaluation at the selection point.
struct PointShape {
    std::vector<std::size_t> nodes;  ///< cloud indices
    Eigen::VectorXd values;
    Eigen::MatrixXd grads;
};

inline PointShape evaluate_point(const Eigen::Vector3d& point, const NodeCloud& cloud, const AnalysisParams& params) {
    SupportSelection sel = select_support(point, cloud, params.alpha);
    const KrigingSystem sys = build_system(sel, params.theta);
    ShapeEval eval = shape_functions(sys, point);
    return PointShape{std::move(sel.nodes), std::move(eval.values), std::move(eval.grads)};
}

}  // namespace mlr
