#include "mlr/ca_reanalysis.hpp"
#include "mlr/reanalysis.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mlr;

namespace {

Eigen::MatrixXd random_spd(int n, std::mt19937& rng) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd A(n, n);
    for (auto& x : A.reshaped()) x = g(rng);
    return A * A.transpose() + n * Eigen::MatrixXd::Identity(n, n);
}

/// Symmetric perturbation confined to a few rows and columns.
Eigen::MatrixXd local_perturbation(int n, std::mt19937& rng, double size) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) P(i, j) = size * g(rng);
    P = 0.5 * (P + P.transpose()).eval();
    P.topLeftCorner(3, 3) += size * Eigen::MatrixXd::Identity(3, 3) * 3.0;
    return P;
}

SparseMatrix sp(const Eigen::MatrixXd& A) { return A.sparseView(); }

/// K0 with DOFs `added` replaced by a unit diagonal, as on the union DOF space.
Eigen::MatrixXd without(const Eigen::MatrixXd& K, const std::vector<int>& added) {
    Eigen::MatrixXd K0 = K;
    for (int a : added) {
        K0.row(a).setZero();
        K0.col(a).setZero();
        K0(a, a) = 1.0;
    }
    return K0;
}

}  // namespace

TEST(BuildBasis, ZeroDeltaGivesZeroHigherVectors) {
    std::mt19937 rng(1);
    const Eigen::MatrixXd K = random_spd(10, rng);
    const CholeskyFactor f = factorize(sp(K));
    const Eigen::VectorXd F = Eigen::VectorXd::LinSpaced(10, 1, 2);
    const BasisMatrix B = build_basis(f, SparseMatrix(10, 10), F, 4);
    EXPECT_LE((B.columns.col(0) - K.ldlt().solve(F)).norm(), 1e-12 * F.norm());
    for (int i = 1; i < 4; ++i) EXPECT_EQ(B.columns.col(i).norm(), 0.0);
    const BasisMatrix one = build_basis(f, SparseMatrix(10, 10), F, 1);
    EXPECT_EQ(one.size(), 1);
    EXPECT_THROW(build_basis(f, SparseMatrix(10, 10), F, 11), ValidationError);
    EXPECT_THROW(build_basis(f, SparseMatrix(10, 10), F, 0), ValidationError);
}

TEST(BuildBasis, MatchesDenseRecurrence) {
    std::mt19937 rng(2);
    const Eigen::MatrixXd K0 = random_spd(20, rng);
    const Eigen::MatrixXd dK = local_perturbation(20, rng, 2.0);
    const Eigen::VectorXd F = Eigen::VectorXd::LinSpaced(20, -1, 1);
    const BasisMatrix B = build_basis(factorize(sp(K0)), sp(dK), F, 6);
    const Eigen::MatrixXd ref = oracle::ca_basis(K0, dK, F, 6);
    for (int i = 0; i < 6; ++i) EXPECT_LE((B.raw(i) - ref.col(i)).norm(), 1e-10 * ref.col(i).norm()) << "column " << i;
    // scaled columns share the first column's norm
    for (int i = 1; i < 6; ++i) EXPECT_NEAR(B.columns.col(i).norm(), B.columns.col(0).norm(), 1e-12 * B.columns.col(0).norm());
}

TEST(BuildBasis, OrthonormalSpansTheRecurrence) {
    std::mt19937 rng(3);
    const Eigen::MatrixXd K0 = random_spd(12, rng);
    const Eigen::MatrixXd dK = local_perturbation(12, rng, 4.0);
    const Eigen::VectorXd F = Eigen::VectorXd::LinSpaced(12, -1, 3);
    const BasisMatrix Q = build_basis(factorize(sp(K0)), sp(dK), F, 4, {}, BasisKind::kOrthonormal);
    ASSERT_EQ(Q.size(), 4);
    EXPECT_LE((Q.columns.transpose() * Q.columns - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-13);
    const Eigen::MatrixXd ref = oracle::ca_basis(K0, dK, F, 4);
    for (int i = 0; i < 4; ++i) {
        const Eigen::VectorXd v = ref.col(i);
        EXPECT_LE((v - Q.columns * (Q.columns.transpose() * v)).norm(), 1e-10 * v.norm()) << "column " << i;
    }
    EXPECT_THROW(Q.raw(0), ValidationError);
}

TEST(BuildBasis, OrthonormalStopsOnInvariantSpan) {
    std::mt19937 rng(4);
    const Eigen::MatrixXd K = random_spd(8, rng);
    const BasisMatrix Q = build_basis(factorize(sp(K)), SparseMatrix(8, 8), Eigen::VectorXd::Ones(8), 5, {}, BasisKind::kOrthonormal);
    EXPECT_EQ(Q.size(), 1);
    EXPECT_NEAR(Q.columns.col(0).norm(), 1.0, 1e-14);
}

TEST(BuildBasis, AddedDofsMatchCondensedRecurrence) {
    std::mt19937 rng(12);
    const Eigen::MatrixXd K = random_spd(16, rng) + local_perturbation(16, rng, 1.0);
    const std::vector<int> added{3, 9, 10};
    const Eigen::MatrixXd K0 = without(K, added);
    Eigen::VectorXd F = Eigen::VectorXd::LinSpaced(16, 1, -1);
    F[9] = 0.5;  // load on an added DOF
    const std::vector<Eigen::Index> idx(added.begin(), added.end());
    const AddedDofCondenser cond(sp(K), idx);
    const BasisMatrix B = build_basis(factorize(sp(K0)), sp(K - K0), F, 5, cond);
    const Eigen::MatrixXd ref = oracle::ca_condensed_basis(K0, K, F, added, 5);
    for (int i = 0; i < 5; ++i) EXPECT_LE((B.raw(i) - ref.col(i)).norm(), 1e-9 * ref.col(i).norm()) << "column " << i;
}

TEST(CaSolve, AddedDofsFullBasisIsExact) {
    std::mt19937 rng(13);
    const Eigen::MatrixXd K = random_spd(12, rng);
    const std::vector<int> added{0, 5, 6, 11};
    const Eigen::MatrixXd K0 = without(K, added);
    Eigen::VectorXd F = Eigen::VectorXd::LinSpaced(12, -2, 1);
    F[5] = 1.5;
    const std::vector<Eigen::Index> idx(added.begin(), added.end());
    const CaResult ca = ca_solve(factorize(sp(K0)), sp(K - K0), sp(K), F, 8, idx);
    const Eigen::VectorXd exact = K.ldlt().solve(F);
    EXPECT_LE((ca.U - exact).norm(), 1e-8 * exact.norm());
    EXPECT_LE(ca.galerkin_residual, 1e-9);
    EXPECT_THROW(ca_solve(factorize(sp(K0)), sp(K - K0), sp(K), F, 3, std::vector<Eigen::Index>{4, 4}), ValidationError);
}

TEST(ReduceAndSolve, ExactForUnchangedSystem) {
    std::mt19937 rng(3);
    const Eigen::MatrixXd K = random_spd(8, rng);
    const Eigen::VectorXd F = Eigen::VectorXd::LinSpaced(8, 1, 3);
    const BasisMatrix B = build_basis(factorize(sp(K)), SparseMatrix(8, 8), F, 1);
    const ReducedSystem r = reduce_and_solve(B, sp(K), F);
    ASSERT_EQ(r.y.size(), 1);
    EXPECT_NEAR(r.y[0], 1.0, 1e-12);
}

TEST(ReduceAndSolve, TwoColumnHandCase) {
    // 4 DOFs, orthonormal basis e1, e2: K_R is the leading 2x2 block of K
    Eigen::MatrixXd K(4, 4);
    K << 4, 1, 0, 0, 1, 3, 1, 0, 0, 1, 2, 0, 0, 0, 0, 1;
    BasisMatrix B;
    B.columns = Eigen::MatrixXd::Zero(4, 2);
    B.columns(0, 0) = 1.0;
    B.columns(1, 1) = 1.0;
    B.scale = Eigen::VectorXd::Ones(2);
    Eigen::VectorXd F(4);
    F << 5, 4, 9, 9;
    const ReducedSystem r = reduce_and_solve(B, sp(K), F);
    // [4 1; 1 3] y = [5; 4] -> y = (1, 1)
    EXPECT_NEAR(r.y[0], 1.0, 1e-14);
    EXPECT_NEAR(r.y[1], 1.0, 1e-14);
    EXPECT_EQ(r.rank, 2);
}

TEST(ReduceAndSolve, DuplicateColumnsAreTruncated) {
    std::mt19937 rng(4);
    const Eigen::MatrixXd K0 = random_spd(12, rng);
    const Eigen::MatrixXd dK = local_perturbation(12, rng, 1.0);
    const Eigen::VectorXd F = Eigen::VectorXd::LinSpaced(12, 2, -1);
    const BasisMatrix B = build_basis(factorize(sp(K0)), sp(dK), F, 3);
    BasisMatrix dup;
    dup.columns.resize(12, 5);
    dup.columns << B.columns, B.columns.col(1), B.columns.col(0);
    dup.scale = Eigen::VectorXd::Ones(5);
    const SparseMatrix K = sp(K0 + dK);
    const ReducedSystem a = reduce_and_solve(B, K, F);
    const ReducedSystem b = reduce_and_solve(dup, K, F);
    EXPECT_EQ(b.rank, 3);
    const Eigen::VectorXd ua = combine(B, a.y), ub = combine(dup, b.y);
    EXPECT_LE((ua - ub).norm(), 1e-9 * ua.norm());
}

TEST(Combine, UnitAndZeroCoefficients) {
    BasisMatrix B;
    B.columns = Eigen::MatrixXd::Random(6, 3);
    B.scale = Eigen::VectorXd::Ones(3);
    EXPECT_EQ(combine(B, Eigen::Vector3d(1, 0, 0)), B.columns.col(0));
    EXPECT_EQ(combine(B, Eigen::Vector3d::Zero()).norm(), 0.0);
    EXPECT_THROW(combine(B, Eigen::Vector2d(1, 0)), ValidationError);
}

TEST(CaSolve, FullBasisIsExactOnSmallSystems) {
    std::mt19937 rng(5);
    for (int n : {4, 7, 12}) {
        const Eigen::MatrixXd K0 = random_spd(n, rng);
        const Eigen::MatrixXd dK = local_perturbation(n, rng, 0.3 * n);
        const Eigen::VectorXd F = Eigen::VectorXd::LinSpaced(n, 1, -2);
        const Eigen::MatrixXd K = K0 + dK;
        const CaResult ca = ca_solve(factorize(sp(K0)), sp(dK), sp(K), F, n);
        const Eigen::VectorXd exact = K.ldlt().solve(F);
        EXPECT_LE((ca.U - exact).norm(), 1e-8 * exact.norm()) << "n=" << n;
    }
}

TEST(CaSolve, FullBasisIsExactForDenseChanges) {
    // an unrelated SPD matrix as the modified system: every direction changes
    std::mt19937 rng(9);
    for (int n : {8, 10, 12}) {
        const Eigen::MatrixXd K0 = random_spd(n, rng), K = random_spd(n, rng);
        const Eigen::VectorXd F = Eigen::VectorXd::LinSpaced(n, 2, -1);
        const Eigen::VectorXd exact = K.ldlt().solve(F);
        const CaResult ca = ca_solve(factorize(sp(K0)), sp(K - K0), sp(K), F, n);
        EXPECT_LE((ca.U - exact).norm(), 1e-10 * exact.norm()) << "n=" << n;
    }
}

TEST(CaSolve, GalerkinResidualVanishes) {
    std::mt19937 rng(6);
    const Eigen::MatrixXd K0 = random_spd(30, rng);
    const Eigen::MatrixXd dK = local_perturbation(30, rng, 5.0);
    const Eigen::VectorXd F = Eigen::VectorXd::LinSpaced(30, 1, 2);
    const CaResult ca = ca_solve(factorize(sp(K0)), sp(dK), sp(K0 + dK), F, 4);
    EXPECT_LE(ca.galerkin_residual, 1e-9);
}

TEST(CaSolve, MeshlessUnchangedSystemReproducesBaseline) {
    const Model m = fixtures::loaded_plate(2, {13, 5, 1}, 1.0);
    const Baseline base = solve_baseline(m);
    const ReanalysisProblem p = prepare_reanalysis(base, Modification{}, UpdateStrategy::kLocal);
    for (int s : {1, 3, 10}) {
        const MethodRun r = run_ca(p, s);
        EXPECT_LE((r.U - p.U0).norm(), 1e-10 * p.U0.norm()) << "s=" << s;
    }
}

TEST(CaSolve, MeshlessHoleConvergesWithBasisCount) {
    const Model m = fixtures::loaded_plate(2, {21, 9, 1}, 1.0);
    const Baseline base = solve_baseline(m);
    const Modification mod = fixtures::hole(m, Eigen::Vector3d(10, 4, 0), 2.1);
    const ReanalysisProblem p = prepare_reanalysis(base, mod, UpdateStrategy::kLocal);
    const MethodRun full = run_full(p);
    const NodalShapes shapes = nodal_shapes(p.mm.model.cloud, m.params);
    const FieldSolution ref = recover_fields(full.U, p.mm.dofs, shapes, m.material);
    const FieldSolution s3 = recover_fields(run_ca(p, 3).U, p.mm.dofs, shapes, m.material);
    const FieldSolution s10 = recover_fields(run_ca(p, 10).U, p.mm.dofs, shapes, m.material);
    const ErrorMetrics e3 = error_metrics(s3, ref), e10 = error_metrics(s10, ref);
    EXPECT_LT(e10.e_u, 1.0);
    EXPECT_LT(e10.e_u, e3.e_u);
    EXPECT_LT(e10.e_strain, 5.0);
    EXPECT_LT(e10.e_stress, 5.0);
}

TEST(CaSolve, MeshlessAddedNodesConverge) {
    // a notch cut from the plate in the initial design and filled again
    const Model full_plate = fixtures::loaded_plate(2, {17, 7, 1}, 1.0, 0.1, 4);
    const Modification notch = fixtures::hole(full_plate, Eigen::Vector3d(8, 0, 0), 1.6);
    ASSERT_GE(notch.removed.size(), 4u);
    Model m = apply_modification(full_plate, notch).model;
    Modification refill;
    for (NodeId id : notch.removed) refill.added.push_back(full_plate.cloud.node(*full_plate.cloud.index_of(id)));
    const Baseline base = solve_baseline(m);
    const ReanalysisProblem p = prepare_reanalysis(base, refill, UpdateStrategy::kLocal);
    ASSERT_EQ(p.added.size(), 2 * refill.added.size());
    const MethodRun full = run_full(p);
    const NodalShapes shapes = nodal_shapes(p.mm.model.cloud, p.mm.model.params);
    const FieldSolution ref = recover_fields(full.U, p.mm.dofs, shapes, m.material);
    const ErrorMetrics e3 = error_metrics(recover_fields(run_ca(p, 3).U, p.mm.dofs, shapes, m.material), ref);
    const ErrorMetrics e10 = error_metrics(recover_fields(run_ca(p, 10).U, p.mm.dofs, shapes, m.material), ref);
    EXPECT_LT(e10.e_u, 0.1);
    EXPECT_LT(e10.e_u, e3.e_u);
    EXPECT_LT(e10.e_stress, 1.0);
}

TEST(CaRecover, ZeroLoadGivesZeroFields) {
    Model m = fixtures::lattice_model(2, {6, 4, 1}, 1.0);
    fixtures::clamp_plane_x(m, 0.0);
    const Baseline base = solve_baseline(m);
    const ReanalysisProblem p = prepare_reanalysis(base, fixtures::hole(m, Eigen::Vector3d(3, 2, 0), 0.5), UpdateStrategy::kLocal);
    const CaResult ca = ca_solve(p.factor0, p.dK, p.K, p.F, 3);
    const FieldSolution f = ca_recover(ca, p.mm.dofs, nodal_shapes(p.mm.model.cloud, m.params), m.material);
    EXPECT_EQ(f.strain.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(f.stress.cwiseAbs().maxCoeff(), 0.0);
}
