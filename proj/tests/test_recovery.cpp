#include "mlr/recovery.hpp"
#include "mlr/reanalysis.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mlr;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

/// Nodal displacements of the linear field u(x) = A x on a DOF map.
Eigen::VectorXd linear_field(const DofMap& dofs, const Eigen::Matrix3d& A) {
    Eigen::VectorXd U(dofs.size());
    for (std::size_t p = 0; p < dofs.node_count(); ++p) {
        const Eigen::Vector3d u = A * dofs.coords(p);
        for (int a = 0; a < dofs.dim(); ++a) U[static_cast<Eigen::Index>(p) * dofs.dim() + a] = u[a];
    }
    return U;
}

}  // namespace

TEST(VonMises, StressDefinitions) {
    EXPECT_DOUBLE_EQ(von_mises_stress(vec({7, 0, 0})), 7.0);
    EXPECT_DOUBLE_EQ(von_mises_stress(vec({7, 0, 0, 0, 0, 0})), 7.0);
    EXPECT_NEAR(von_mises_stress(vec({0, 0, 2})), std::sqrt(3.0) * 2.0, 1e-15);
    EXPECT_NEAR(von_mises_stress(vec({0, 0, 0, 0, 0, 2})), std::sqrt(3.0) * 2.0, 1e-15);
    EXPECT_NEAR(von_mises_stress(vec({-4, -4, -4, 0, 0, 0})), 0.0, 1e-15);
    EXPECT_THROW(von_mises_stress(vec({1, 2})), ValidationError);
}

TEST(VonMises, StrainDefinitions) {
    // incompressible uniaxial stretch
    EXPECT_NEAR(von_mises_strain(vec({0.01, -0.005, -0.005, 0, 0, 0})), 0.01, 1e-15);
    // pure engineering shear gamma: equivalent strain gamma / sqrt(3)
    EXPECT_NEAR(von_mises_strain(vec({0, 0, 0, 0, 0, 0.03})), 0.03 / std::sqrt(3.0), 1e-15);
    EXPECT_NEAR(von_mises_strain(vec({0, 0, 0.03})), 0.03 / std::sqrt(3.0), 1e-15);
    EXPECT_NEAR(von_mises_strain(vec({0.2, 0.2, 0.2, 0, 0, 0})), 0.0, 1e-15);
}

TEST(RecoverFields, RigidTranslationHasNoStrain) {
    const Model m = fixtures::lattice_model(2, {6, 5, 1}, 1.0, 0.2, 3);
    const DofMap dofs = DofMap::for_cloud(m.cloud);
    Eigen::VectorXd U(dofs.size());
    for (Eigen::Index i = 0; i < U.size(); ++i) U[i] = i % 2 ? -0.7 : 1.3;
    const FieldSolution f = recover_fields(U, dofs, m.cloud, m.material, m.params);
    EXPECT_LE(f.strain.cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE(f.vm_stress.maxCoeff(), 1e-7);
}

TEST(RecoverFields, UniaxialFieldGivesExactStress) {
    for (int dim : {2, 3}) {
        Model m = fixtures::lattice_model(dim, {5, 4, 4}, 1.0, 0.2, 17);
        const double E = m.material.young_modulus, nu = m.material.poisson_ratio, s0 = 2.5;
        Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
        A(0, 0) = s0 / E;
        A(1, 1) = -nu * s0 / E;
        if (dim == 3) A(2, 2) = -nu * s0 / E;
        const DofMap dofs = DofMap::for_cloud(m.cloud);
        const FieldSolution f = recover_fields(linear_field(dofs, A), dofs, m.cloud, m.material, m.params);
        for (Eigen::Index i = 0; i < f.stress.rows(); ++i) {
            EXPECT_NEAR(f.stress(i, 0), s0, 1e-6 * s0);
            for (Eigen::Index c = 1; c < f.stress.cols(); ++c) EXPECT_NEAR(f.stress(i, c), 0.0, 1e-6 * s0);
            EXPECT_NEAR(f.vm_stress[i], s0, 1e-6 * s0);
        }
        // stress = D strain per node
        const Eigen::MatrixXd D = constitutive(m.material);
        EXPECT_LE((f.stress - f.strain * D.transpose()).cwiseAbs().maxCoeff(), 1e-12 * s0);
    }
}

TEST(RecoverFields, LinearInDisplacement) {
    const Model m = fixtures::lattice_model(2, {7, 5, 1}, 0.5, 0.15, 9);
    const DofMap dofs = DofMap::for_cloud(m.cloud);
    const NodalShapes shapes = nodal_shapes(m.cloud, m.params);
    const Eigen::VectorXd U1 = Eigen::VectorXd::LinSpaced(dofs.size(), -1, 1);
    const Eigen::VectorXd U2 = Eigen::VectorXd::LinSpaced(dofs.size(), 0, 3).array().sin();
    const FieldSolution a = recover_fields(U1, dofs, shapes, m.material);
    const FieldSolution b = recover_fields(U2, dofs, shapes, m.material);
    const FieldSolution c = recover_fields(2.0 * U1 - 0.5 * U2, dofs, shapes, m.material);
    const double scale = c.strain.cwiseAbs().maxCoeff();
    EXPECT_LE((c.strain - (2.0 * a.strain - 0.5 * b.strain)).cwiseAbs().maxCoeff(), 1e-12 * scale);
}

TEST(ErrorMetrics, IdenticalIsZeroAndScalingIsExact) {
    Model m = fixtures::loaded_plate(2, {9, 5, 1}, 1.0);
    const Baseline base = solve_baseline(m);
    const NodalShapes shapes = nodal_shapes(m.cloud, m.params);
    const FieldSolution ref = recover_fields(base.U, base.sys.dofs, shapes, m.material);
    const ErrorMetrics same = error_metrics(ref, ref);
    EXPECT_EQ(same.e_u, 0.0);
    EXPECT_EQ(same.e_strain, 0.0);
    EXPECT_EQ(same.e_stress, 0.0);
    const FieldSolution scaled = recover_fields(1.01 * base.U, base.sys.dofs, shapes, m.material);
    const ErrorMetrics e = error_metrics(scaled, ref);
    EXPECT_NEAR(e.e_u, 1.0, 1e-10);
    EXPECT_NEAR(e.e_strain, 1.0, 1e-10);
    EXPECT_NEAR(e.e_stress, 1.0, 1e-10);
}

TEST(ErrorMetrics, ZeroReferenceIsUndefined) {
    EXPECT_EQ(relative_error_percent(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)), 0.0);
    EXPECT_TRUE(std::isnan(relative_error_percent(Eigen::VectorXd::Ones(3), Eigen::VectorXd::Zero(3))));
}
