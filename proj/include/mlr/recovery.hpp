#pragma once

#include "mlr/assembly.hpp"
#include "mlr/errors.hpp"
#include "mlr/mk_interp.hpp"
#include "mlr/model.hpp"
#include "mlr/parallel.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <vector>

namespace mlr {

/// Shape data evaluated at every node of a cloud, reusable across solutions.
struct NodalShapes {
    int dim = 2;
    std::vector<NodeId> node_ids;
    std::vector<PointShape> shapes;
};

inline NodalShapes nodal_shapes(const NodeCloud& cloud, const AnalysisParams& params) {
    NodalShapes out;
    out.dim = cloud.dim();
    out.node_ids.reserve(cloud.size());
    for (const auto& n : cloud.nodes()) out.node_ids.push_back(n.id);
    out.shapes.resize(cloud.size());
    parallel_for(cloud.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) out.shapes[i] = evaluate_point(cloud.position(i), cloud, params);
    });
    return out;
}

/// Displacements and nodal fields of one configuration. U, strain and stress
/// are in cloud order; shear strains are engineering strains.
struct FieldSolution {
    int dim = 2;
    std::vector<NodeId> node_ids;
    Eigen::VectorXd U;       ///< node-major, dim per node
    Eigen::MatrixXd strain;  ///< nodes x (3 | 6)
    Eigen::MatrixXd stress;
    Eigen::VectorXd vm_strain;
    Eigen::VectorXd vm_stress;
};

/// Von Mises equivalent stress: plane stress (sx, sy, txy) or 3D Voigt.
inline double von_mises_stress(const Eigen::VectorXd& s) {
    if (s.size() == 3) return std::sqrt(std::max(0.0, s[0] * s[0] - s[0] * s[1] + s[1] * s[1] + 3.0 * s[2] * s[2]));
    if (s.size() != 6) throw ValidationError("stress vector must have 3 or 6 components");
    const double d = (s[0] - s[1]) * (s[0] - s[1]) + (s[1] - s[2]) * (s[1] - s[2]) + (s[2] - s[0]) * (s[2] - s[0]);
    return std::sqrt(0.5 * d + 3.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5]));
}

/// Von Mises equivalent strain (incompressible deviatoric form). In 2D the
/// out-of-plane normal strain is taken as zero.
inline double von_mises_strain(const Eigen::VectorXd& e) {
    Eigen::Matrix<double, 6, 1> v = Eigen::Matrix<double, 6, 1>::Zero();
    if (e.size() == 3) {
        v[0] = e[0];
        v[1] = e[1];
        v[5] = e[2];
    } else if (e.size() == 6) {
        v = e;
    } else {
        throw ValidationError("strain vector must have 3 or 6 components");
    }
    const double d = (v[0] - v[1]) * (v[0] - v[1]) + (v[1] - v[2]) * (v[1] - v[2]) + (v[2] - v[0]) * (v[2] - v[0]);
    return (2.0 / 3.0) * std::sqrt(0.5 * d + 0.75 * (v[3] * v[3] + v[4] * v[4] + v[5] * v[5]));
}

/// Strain = sum_I B_I(x_node) U_I over the node's support; stress = D strain.
/// U lives on `dofs`, which must contain every node of the shapes.
inline FieldSolution recover_fields(const Eigen::VectorXd& U, const DofMap& dofs, const NodalShapes& shapes,
                                    const MaterialModel& material) {
    if (U.size() != dofs.size()) throw ValidationError("displacement size does not match the DOF map");
    const int dim = shapes.dim;
    const int ns = strain_size(dim);
    const std::size_t n = shapes.node_ids.size();
    const Eigen::MatrixXd D = constitutive(material);
    FieldSolution out;
    out.dim = dim;
    out.node_ids = shapes.node_ids;
    out.U.resize(static_cast<Eigen::Index>(n) * dim);
    std::vector<Eigen::Index> base(n);
    for (std::size_t i = 0; i < n; ++i) {
        base[i] = dofs.dof(shapes.node_ids[i], 0);
        out.U.segment(static_cast<Eigen::Index>(i) * dim, dim) = U.segment(base[i], dim);
    }
    out.strain.resize(static_cast<Eigen::Index>(n), ns);
    out.stress.resize(static_cast<Eigen::Index>(n), ns);
    out.vm_strain.resize(static_cast<Eigen::Index>(n));
    out.vm_stress.resize(static_cast<Eigen::Index>(n));
    parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const PointShape& ps = shapes.shapes[i];
            Eigen::VectorXd ue(static_cast<Eigen::Index>(ps.nodes.size()) * dim);
            for (std::size_t I = 0; I < ps.nodes.size(); ++I)
                ue.segment(static_cast<Eigen::Index>(I) * dim, dim) = U.segment(base[ps.nodes[I]], dim);
            const Eigen::VectorXd eps = strain_displacement(ps.grads, dim) * ue;
            const Eigen::VectorXd sig = D * eps;
            const auto r = static_cast<Eigen::Index>(i);
            out.strain.row(r) = eps.transpose();
            out.stress.row(r) = sig.transpose();
            out.vm_strain[r] = von_mises_strain(eps);
            out.vm_stress[r] = von_mises_stress(sig);
        }
    });
    return out;
}

inline FieldSolution recover_fields(const Eigen::VectorXd& U, const DofMap& dofs, const NodeCloud& cloud,
                                    const MaterialModel& material, const AnalysisParams& params) {
    return recover_fields(U, dofs, nodal_shapes(cloud, params), material);
}

/// Percentage errors of displacement, von Mises strain and von Mises stress.
struct ErrorMetrics {
    double e_u = 0.0;
    double e_strain = 0.0;
    double e_stress = 0.0;
};

/// ||c - r|| / ||r|| * 100. A zero reference gives 0 when the candidate is
/// also zero and NaN otherwise.
inline double relative_error_percent(const Eigen::VectorXd& c, const Eigen::VectorXd& r) {
    if (c.size() != r.size()) throw ValidationError("solutions have different sizes");
    const double den = r.norm();
    const double num = (c - r).norm();
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
    return 100.0 * num / den;
}

inline ErrorMetrics error_metrics(const FieldSolution& candidate, const FieldSolution& reference) {
    if (candidate.node_ids != reference.node_ids) throw ValidationError("solutions are on different clouds");
    return {relative_error_percent(candidate.U, reference.U), relative_error_percent(candidate.vm_strain, reference.vm_strain),
            relative_error_percent(candidate.vm_stress, reference.vm_stress)};
}

}  // namespace mlr
