#pragma once

// End-to-end drivers: baseline solve, modified-system preparation on the
// union DOF space, and the three solution routes (full, CA, IFU).

#include "mlr/assembly.hpp"
#include "mlr/ca_reanalysis.hpp"
#include "mlr/full_solver.hpp"
#include "mlr/ifu_reanalysis.hpp"
#include "mlr/local_update.hpp"
#include "mlr/model.hpp"
#include "mlr/recovery.hpp"

#include <chrono>
#include <string>

namespace mlr {

/// Seconds elapsed while running f.
template <typename F>
double timed(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Baseline {
    Model model;
    SparseMatrix K_raw;   ///< without boundary conditions
    StiffnessSystem sys;  ///< boundary conditions applied
    CholeskyFactor factor;
    Eigen::VectorXd U;
    double residual = 0.0;
};

inline Baseline solve_baseline(const Model& model) {
    Baseline b;
    b.model = model;
    const StiffnessSystem raw = assemble_system(model);
    b.K_raw = raw.K;
    b.sys = apply_bcs(raw, model.bc);
    b.factor = factorize(b.sys);
    b.U = b.factor.solve(b.sys.F);
    b.residual = relative_residual(b.sys.K, b.U, b.sys.F);
    return b;
}

/// Initial and modified systems on the shared union DOF space.
struct ReanalysisProblem {
    ModifiedModel mm;
    SparseMatrix K0;  ///< initial, boundary conditions applied
    CholeskyFactor factor0;
    Eigen::VectorXd U0;
    StiffnessUpdate update;  ///< raw modified stiffness and raw delta
    SparseMatrix K;          ///< modified, boundary conditions applied
    SparseMatrix dK;         ///< K - K0
    Eigen::VectorXd F;       ///< modified load, boundary conditions applied
    std::vector<Eigen::Index> constrained;
    std::vector<Eigen::Index> added;  ///< DOFs of nodes absent from the initial model
    double update_seconds = 0.0;
};

inline std::vector<Eigen::Index> added_dofs(const DofMap& dofs) {
    std::vector<Eigen::Index> out;
    for (std::size_t p = 0; p < dofs.node_count(); ++p)
        if (!dofs.node_in_initial(p))
            for (int a = 0; a < dofs.dim(); ++a) out.push_back(static_cast<Eigen::Index>(p) * dofs.dim() + a);
    return out;
}

/// Builds the modified system. The stiffness update runs locally unless the
/// strategy is global or the local path is refused.
inline ReanalysisProblem prepare_reanalysis(const Baseline& base, const Modification& mod, UpdateStrategy strategy) {
    ReanalysisProblem p;
    p.mm = apply_modification(base.model, mod);
    const DofMap& dofs = p.mm.dofs;
    p.K0 = embed_matrix(base.sys.K, base.sys.dofs, dofs);
    p.factor0 = embed_factor(base.factor, base.sys.dofs, dofs);
    p.U0 = embed_vector(base.U, base.sys.dofs, dofs);
    const SparseMatrix K0_raw = embed_matrix(base.K_raw, base.sys.dofs, dofs);
    p.update_seconds = timed([&] { p.update = update_stiffness(base.model, K0_raw, p.mm, strategy); });
    p.constrained = constrained_dofs(p.mm.model.bc, dofs);
    p.added = added_dofs(dofs);
    p.K = eliminate(p.update.K, p.constrained);
    p.dK = p.K - p.K0;
    p.dK.prune(0.0);
    p.F = assemble_load(p.mm.model, dofs);
    for (Eigen::Index d : p.constrained) p.F[d] = 0.0;
    return p;
}

enum class Method { kFull, kCa, kIfu };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::kFull: return "full";
        case Method::kCa: return "ca";
        case Method::kIfu: return "ifu";
    }
    return "?";
}

struct MethodRun {
    Method method = Method::kFull;
    Eigen::VectorXd U;  ///< union DOF space
    double seconds = 0.0;
    int basis = 0;        ///< CA basis count
    std::size_t n_d = 0;  ///< IFU unbalanced DOFs
    double residual = 0.0;
    std::string diagnostic;
};

inline MethodRun run_full(const ReanalysisProblem& p) {
    MethodRun r;
    r.method = Method::kFull;
    r.seconds = timed([&] { r.U = factorize(p.K, &p.mm.dofs).solve(p.F); });
    r.residual = relative_residual(p.K, r.U, p.F);
    return r;
}

inline MethodRun run_ca(const ReanalysisProblem& p, int s) {
    MethodRun r;
    r.method = Method::kCa;
    r.basis = s;
    CaResult ca;
    r.seconds = timed([&] { ca = ca_solve(p.factor0, p.dK, p.K, p.F, s, p.added); });
    r.U = ca.U;
    r.residual = relative_residual(p.K, r.U, p.F);
    if (ca.reduced.rank < s) r.diagnostic = "basis truncated to rank " + std::to_string(ca.reduced.rank);
    return r;
}

inline MethodRun run_ifu(const ReanalysisProblem& p, const IfuOptions& opt = {}) {
    MethodRun r;
    r.method = Method::kIfu;
    IfuResult ifu;
    r.seconds = timed([&] { ifu = ifu_solve(p.factor0, p.dK, p.K, p.F, p.U0, opt); });
    r.U = ifu.U;
    r.n_d = ifu.n_d();
    r.residual = ifu.residual;
    r.diagnostic = ifu.diagnostic;
    return r;
}

}  // namespace mlr
