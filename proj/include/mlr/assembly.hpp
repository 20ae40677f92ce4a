#pragma once

#include "mlr/errors.hpp"
#include "mlr/mk_interp.hpp"
#include "mlr/model.hpp"
#include "mlr/parallel.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mlr {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

struct GaussPoint {
    Eigen::Vector3d x = Eigen::Vector3d::Zero();
    double weight = 0.0;  ///< Gauss weight times the cell Jacobian
    std::size_t cell = 0;
};

/// 2-point Gauss-Legendre rule per axis mapped into one cell.
inline std::vector<GaussPoint> cell_gauss_points(const BackgroundGrid& grid, std::size_t cell) {
    const double g = 0.5 / std::sqrt(3.0);
    const Eigen::Vector3d lo = grid.cell_lower(cell);
    const int per_axis_z = grid.dim == 3 ? 2 : 1;
    const double w = grid.cell_measure() / (grid.dim == 3 ? 8.0 : 4.0);
    std::vector<GaussPoint> out;
    out.reserve(grid.dim == 3 ? 8 : 4);
    for (int k = 0; k < per_axis_z; ++k)
        for (int j = 0; j < 2; ++j)
            for (int i = 0; i < 2; ++i) {
                const std::array<int, 3> s{i, j, k};
                GaussPoint gp;
                gp.x = lo;
                for (int a = 0; a < grid.dim; ++a) gp.x[a] += grid.cell_size[a] * (0.5 + (s[a] == 0 ? -g : g));
                gp.weight = w;
                gp.cell = cell;
                out.push_back(gp);
            }
    return out;
}

/// Quadrature points of every cell, cell-major.
inline std::vector<GaussPoint> gauss_points(const BackgroundGrid& grid) {
    grid.validate();
    std::vector<GaussPoint> out;
    out.reserve(grid.cell_count() * (grid.dim == 3 ? 8 : 4));
    for (std::size_t c = 0; c < grid.cell_count(); ++c) {
        auto pts = cell_gauss_points(grid, c);
        out.insert(out.end(), pts.begin(), pts.end());
    }
    return out;
}

constexpr int strain_size(int dim) noexcept { return dim == 2 ? 3 : 6; }

/// Isotropic constitutive matrix: plane stress (3x3) or 3D solid (6x6,
/// Voigt order xx, yy, zz, yz, zx, xy).
inline Eigen::MatrixXd constitutive(const MaterialModel& mat) {
    const double E = mat.young_modulus;
    const double nu = mat.poisson_ratio;
    if (mat.mode == MaterialMode::kPlaneStress) {
        Eigen::MatrixXd D(3, 3);
        D << 1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, 0.5 * (1.0 - nu);
        return D * (E / (1.0 - nu * nu));
    }
    const double lambda = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    const double mu = E / (2.0 * (1.0 + nu));
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(6, 6);
    D.topLeftCorner(3, 3).setConstant(lambda);
    for (int i = 0; i < 3; ++i) D(i, i) = lambda + 2.0 * mu;
    for (int i = 3; i < 6; ++i) D(i, i) = mu;
    return D;
}

/// Strain-displacement matrix for the support nodes of one point: one
/// 3x2 (2D) or 6x3 (3D) block per node, laid out node-major.
inline Eigen::MatrixXd strain_displacement(const Eigen::MatrixXd& grads, int dim) {
    const Eigen::Index n = grads.rows();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(strain_size(dim), n * dim);
    for (Eigen::Index I = 0; I < n; ++I) {
        const Eigen::Index c = I * dim;
        const double gx = grads(I, 0), gy = grads(I, 1);
        if (dim == 2) {
            B(0, c) = gx;
            B(1, c + 1) = gy;
            B(2, c) = gy;
            B(2, c + 1) = gx;
        } else {
            const double gz = grads(I, 2);
            B(0, c) = gx;
            B(1, c + 1) = gy;
            B(2, c + 2) = gz;
            B(3, c + 1) = gz;
            B(3, c + 2) = gy;
            B(4, c) = gz;
            B(4, c + 2) = gx;
            B(5, c) = gy;
            B(5, c + 1) = gx;
        }
    }
    return B;
}

/// Domain membership of a quadrature point: its nearest node must lie within
/// coverage * d_c. Points in holes left by removed nodes fail this test.
inline bool in_domain(const Eigen::Vector3d& x, const NodeCloud& cloud, const AnalysisParams& params) {
    const std::size_t nearest = cloud.index().nearest(x, 1).front();
    const double dist = (cloud.position(nearest) - x).norm();
    return dist <= params.coverage * local_spacing(x, cloud) * (1.0 + 1e-9);
}

/// Shape data of one quadrature point in one configuration.
struct GaussEval {
    bool included = false;
    std::vector<std::size_t> nodes;  ///< cloud indices of the support
    Eigen::MatrixXd grads;           ///< n x dim
};

namespace detail {

[[noreturn]] inline void rethrow_at(const std::string& where) {
    try {
        throw;
    } catch (const SupportDeficiencyError& e) {
        throw SupportDeficiencyError(where + ": " + e.what());
    } catch (const RankDeficiencyError& e) {
        throw RankDeficiencyError(where + ": " + e.what());
    } catch (const ConditioningError& e) {
        throw ConditioningError(where + ": " + e.what(), e.rcond());
    }
}

inline std::string describe(const GaussPoint& gp) {
    std::ostringstream s;
    s << "Gauss point (" << gp.x.transpose() << ") in cell " << gp.cell;
    return s.str();
}

}  // namespace detail

inline GaussEval evaluate_gauss(const GaussPoint& gp, const NodeCloud& cloud, const AnalysisParams& params) {
    GaussEval out;
    try {
        out.included = in_domain(gp.x, cloud, params);
        if (!out.included) return out;
        PointShape shape = evaluate_point(gp.x, cloud, params);
        out.nodes = std::move(shape.nodes);
        out.grads = std::move(shape.grads);
    } catch (const NumericalError&) {
        detail::rethrow_at(detail::describe(gp));
    }
    return out;
}

/// Element-like contribution w * B^T D B of one quadrature point.
inline Eigen::MatrixXd gauss_stiffness(const GaussEval& ev, double weight, const Eigen::MatrixXd& D, int dim) {
    const Eigen::MatrixXd B = strain_displacement(ev.grads, dim);
    return weight * (B.transpose() * (D * B));
}

/// Scatters sign * ke into triplets; positions maps cloud index -> DofMap node position.
inline void scatter(const GaussEval& ev, const Eigen::MatrixXd& ke, const std::vector<std::size_t>& positions, int dim,
                    double sign, Triplets& out) {
    const Eigen::Index n = static_cast<Eigen::Index>(ev.nodes.size());
    std::vector<Eigen::Index> dofs(static_cast<std::size_t>(n * dim));
    for (Eigen::Index I = 0; I < n; ++I)
        for (int a = 0; a < dim; ++a)
            dofs[static_cast<std::size_t>(I * dim + a)] = static_cast<Eigen::Index>(positions[ev.nodes[static_cast<std::size_t>(I)]]) * dim + a;
    for (Eigen::Index c = 0; c < ke.cols(); ++c)
        for (Eigen::Index r = 0; r < ke.rows(); ++r)
            out.emplace_back(dofs[static_cast<std::size_t>(r)], dofs[static_cast<std::size_t>(c)], sign * ke(r, c));
}

/// Sums per-item triplets into an n x n sparse matrix. Items are processed in
/// fixed-size blocks; each worker folds its blocks in order.
template <typename Emit>
SparseMatrix accumulate_sparse(Eigen::Index n, std::size_t count, Emit&& emit) {
    constexpr std::size_t kBlock = 128;
    const std::size_t blocks = (count + kBlock - 1) / kBlock;
    const std::size_t workers = std::max<std::size_t>(1, std::min(worker_count(), blocks));
    std::vector<SparseMatrix> partial(workers, SparseMatrix(n, n));
    const std::size_t per_worker = (blocks + workers - 1) / std::max<std::size_t>(workers, 1);
    parallel_for(workers, [&](std::size_t wb, std::size_t we) {
        for (std::size_t w = wb; w < we; ++w) {
            Triplets trip;
            for (std::size_t b = w * per_worker; b < std::min(blocks, (w + 1) * per_worker); ++b) {
                trip.clear();
                for (std::size_t k = b * kBlock; k < std::min(count, (b + 1) * kBlock); ++k) emit(k, trip);
                SparseMatrix part(n, n);
                part.setFromTriplets(trip.begin(), trip.end());
                partial[w] += part;
            }
        }
    });
    SparseMatrix K(n, n);
    for (auto& p : partial) K += p;
    K.makeCompressed();
    return K;
}

/// Unit diagonal on DOFs of union nodes that are absent from the cloud.
inline void absent_unit_diagonal(const NodeCloud& cloud, const DofMap& dofs, Triplets& out) {
    for (std::size_t pos = 0; pos < dofs.node_count(); ++pos) {
        if (cloud.contains(dofs.node_id(pos))) continue;
        for (int a = 0; a < dofs.dim(); ++a) {
            const Eigen::Index d = static_cast<Eigen::Index>(pos) * dofs.dim() + a;
            out.emplace_back(d, d, 1.0);
        }
    }
}

/// Raw global stiffness (no boundary conditions) of a model on a DOF space.
inline SparseMatrix assemble_stiffness(const Model& model, const DofMap& dofs) {
    model.validate();
    const auto gps = gauss_points(model.grid);
    const auto positions = dofs.positions_of(model.cloud);
    const Eigen::MatrixXd D = constitutive(model.material);
    const int dim = model.cloud.dim();
    SparseMatrix K = accumulate_sparse(dofs.size(), gps.size(), [&](std::size_t k, Triplets& trip) {
        const GaussEval ev = evaluate_gauss(gps[k], model.cloud, model.params);
        if (!ev.included) return;
        scatter(ev, gauss_stiffness(ev, gps[k].weight, D, dim), positions, dim, 1.0, trip);
    });
    Triplets diag;
    absent_unit_diagonal(model.cloud, dofs, diag);
    if (!diag.empty()) {
        SparseMatrix I(dofs.size(), dofs.size());
        I.setFromTriplets(diag.begin(), diag.end());
        K += I;
    }
    return K;
}

/// Consistent nodal forces: point loads plus edge tractions integrated against
/// the shape functions, 2-point Gauss on pieces no longer than a background cell.
inline Eigen::VectorXd assemble_load(const Model& model, const DofMap& dofs) {
    const int dim = model.cloud.dim();
    Eigen::VectorXd F = Eigen::VectorXd::Zero(dofs.size());
    for (const auto& p : model.bc.point_loads) {
        if (!model.cloud.contains(p.node)) throw ValidationError("point load on missing node " + std::to_string(p.node));
        F[dofs.dof(p.node, p.axis)] += p.value;
    }
    const double g = 0.5 / std::sqrt(3.0);
    const double piece = model.grid.cell_size.head(dim).minCoeff();
    for (const auto& t : model.bc.tractions) {
        const double length = (t.to - t.from).norm();
        const int pieces = std::max(1, static_cast<int>(std::ceil(length / piece - 1e-9)));
        const double h = 1.0 / pieces;
        for (int k = 0; k < pieces; ++k)
            for (double s : {0.5 - g, 0.5 + g}) {
                const Eigen::Vector3d x = t.from + (k + s) * h * (t.to - t.from);
                const PointShape shape = evaluate_point(x, model.cloud, model.params);
                for (std::size_t I = 0; I < shape.nodes.size(); ++I) {
                    const NodeId id = model.cloud.node(shape.nodes[I]).id;
                    for (int a = 0; a < dim; ++a)
                        F[dofs.dof(id, a)] += 0.5 * h * length * shape.values[static_cast<Eigen::Index>(I)] * t.q[a];
                }
            }
    }
    return F;
}

/// Sorted DOF indices fixed by the boundary conditions.
inline std::vector<Eigen::Index> constrained_dofs(const BoundaryConditions& bc, const DofMap& dofs) {
    std::vector<Eigen::Index> out;
    out.reserve(bc.fixed.size());
    for (const auto& f : bc.fixed) out.push_back(dofs.dof(f.node, f.axis));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Row/column elimination with unit diagonal.
inline SparseMatrix eliminate(const SparseMatrix& K, const std::vector<Eigen::Index>& constrained) {
    std::vector<char> mask(static_cast<std::size_t>(K.rows()), 0);
    for (Eigen::Index d : constrained) mask[static_cast<std::size_t>(d)] = 1;
    SparseMatrix out = K;
    out.prune([&](Eigen::Index r, Eigen::Index c, double) { return !mask[static_cast<std::size_t>(r)] && !mask[static_cast<std::size_t>(c)]; });
    Triplets diag;
    for (Eigen::Index d : constrained) diag.emplace_back(d, d, 1.0);
    SparseMatrix I(K.rows(), K.cols());
    I.setFromTriplets(diag.begin(), diag.end());
    out += I;
    out.makeCompressed();
    return out;
}

/// Global stiffness, load and DOF bookkeeping of one configuration.
struct StiffnessSystem {
    SparseMatrix K;
    Eigen::VectorXd F;
    DofMap dofs;
    std::vector<Eigen::Index> constrained;  ///< empty until apply_bcs
    bool bcs_applied = false;
};

inline StiffnessSystem assemble_system(const Model& model, const DofMap& dofs) {
    StiffnessSystem sys;
    sys.K = assemble_stiffness(model, dofs);
    sys.F = assemble_load(model, dofs);
    sys.dofs = dofs;
    return sys;
}

inline StiffnessSystem assemble_system(const Model& model) { return assemble_system(model, DofMap::for_cloud(model.cloud)); }

inline StiffnessSystem apply_bcs(const StiffnessSystem& raw, const BoundaryConditions& bc) {
    StiffnessSystem sys;
    sys.dofs = raw.dofs;
    sys.constrained = constrained_dofs(bc, raw.dofs);
    sys.K = eliminate(raw.K, sys.constrained);
    sys.F = raw.F;
    for (Eigen::Index d : sys.constrained) sys.F[d] = 0.0;
    sys.bcs_applied = true;
    return sys;
}

/// Original-to-target DOF index map between two DOF spaces; every node of
/// `from` must exist in `to`.
inline std::vector<Eigen::Index> dof_embedding(const DofMap& from, const DofMap& to) {
    if (from.dim() != to.dim()) throw ValidationError("DOF maps have different dimensions");
    std::vector<Eigen::Index> map(static_cast<std::size_t>(from.size()));
    for (std::size_t p = 0; p < from.node_count(); ++p)
        for (int a = 0; a < from.dim(); ++a) map[p * static_cast<std::size_t>(from.dim()) + static_cast<std::size_t>(a)] = to.dof(from.node_id(p), a);
    return map;
}

/// Moves a matrix to a larger DOF space; the new DOFs get a unit diagonal.
inline SparseMatrix embed_matrix(const SparseMatrix& K, const DofMap& from, const DofMap& to) {
    if (from == to) return K;
    const auto map = dof_embedding(from, to);
    std::vector<char> covered(static_cast<std::size_t>(to.size()), 0);
    for (Eigen::Index d : map) covered[static_cast<std::size_t>(d)] = 1;
    Triplets trip;
    trip.reserve(static_cast<std::size_t>(K.nonZeros()) + covered.size());
    for (Eigen::Index c = 0; c < K.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(K, c); it; ++it)
            trip.emplace_back(map[static_cast<std::size_t>(it.row())], map[static_cast<std::size_t>(it.col())], it.value());
    for (std::size_t d = 0; d < covered.size(); ++d)
        if (!covered[d]) trip.emplace_back(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d), 1.0);
    SparseMatrix out(to.size(), to.size());
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

/// Moves a vector to a larger DOF space, zero-filling new DOFs.
inline Eigen::VectorXd embed_vector(const Eigen::VectorXd& v, const DofMap& from, const DofMap& to) {
    if (from == to) return v;
    const auto map = dof_embedding(from, to);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(to.size());
    for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] = v[static_cast<Eigen::Index>(i)];
    return out;
}

/// Cells with at least one quadrature point inside the domain.
inline std::vector<std::size_t> active_cells(const Model& model) {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < model.grid.cell_count(); ++c) {
        for (const auto& gp : cell_gauss_points(model.grid, c)) {
            if (in_domain(gp.x, model.cloud, model.params)) {
                out.push_back(c);
                break;
            }
        }
    }
    return out;
}

}  // namespace mlr
