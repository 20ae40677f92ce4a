#pragma once

#include "mlr/assembly.hpp"
#include "mlr/errors.hpp"
#include "mlr/model.hpp"
#include "mlr/parallel.hpp"

#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mlr {

/// Sorted union of added and removed node ids.
inline std::vector<NodeId> changed_nodes(const Modification& mod) {
    std::vector<NodeId> out(mod.removed.begin(), mod.removed.end());
    for (const auto& n : mod.added) out.push_back(n.id);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// A quadrature point evaluated in both configurations.
struct AffectedPoint {
    GaussPoint gp;
    GaussEval initial;
    GaussEval modified;
};

struct InfluenceDomain {
    std::vector<NodeId> changed;
    std::vector<std::size_t> seed_cells;
    std::vector<std::size_t> ring_cells;
    int ring_width = 0;
    std::vector<AffectedPoint> affected;  ///< points whose shape data differ between configurations
    std::vector<NodeId> influence_node_ids;
    std::size_t ring_gauss_count = 0;     ///< points evaluated while building the domain
    std::size_t total_gauss_count = 0;
    std::string diagnostic;               ///< set when the ring had to be widened
};

namespace detail {

inline std::vector<NodeId> support_ids(const GaussEval& ev, const NodeCloud& cloud) {
    std::vector<NodeId> ids;
    ids.reserve(ev.nodes.size());
    for (std::size_t k : ev.nodes) ids.push_back(cloud.node(k).id);
    return ids;
}

/// Domain membership and support node ids of a quadrature point, without the
/// Kriging solve. Two configurations give the same shape data exactly when
/// their keys agree.
struct SupportKey {
    bool included = false;
    std::vector<NodeId> ids;
    bool operator==(const SupportKey&) const = default;
};

inline SupportKey support_key(const GaussPoint& gp, const NodeCloud& cloud, const AnalysisParams& params) {
    SupportKey key;
    try {
        key.included = in_domain(gp.x, cloud, params);
        if (!key.included) return key;
        const SupportSelection sel = select_support(gp.x, cloud, params.alpha);
        key.ids.reserve(sel.nodes.size());
        for (std::size_t k : sel.nodes) key.ids.push_back(cloud.node(k).id);
    } catch (const NumericalError&) {
        rethrow_at(describe(gp));
    }
    return key;
}

inline bool inside_grid(const Eigen::Vector3d& x, const BackgroundGrid& grid) {
    for (int a = 0; a < grid.dim; ++a) {
        const double lo = grid.origin[a];
        const double hi = lo + grid.cell_size[a] * grid.counts[a];
        const double tol = 1e-9 * grid.cell_size[a];
        if (x[a] < lo - tol || x[a] > hi + tol) return false;
    }
    return true;
}

struct CellEval {
    std::vector<AffectedPoint> points;
    std::vector<char> differs;
};

}  // namespace detail

/// Collects the quadrature points whose support changes. Starts from a ring of
/// ceil(d_m / min cell edge) cells around the seed cells and widens it while
/// the outermost layer still contains changed points.
inline InfluenceDomain build_influence_domain(const std::vector<NodeId>& changed, const NodeCloud& initial,
                                              const NodeCloud& modified, const BackgroundGrid& grid,
                                              const AnalysisParams& params) {
    grid.validate();
    InfluenceDomain dom;
    dom.changed = changed;
    std::sort(dom.changed.begin(), dom.changed.end());
    dom.total_gauss_count = grid.cell_count() * (grid.dim == 3 ? 8u : 4u);
    if (changed.empty()) return dom;

    std::set<std::size_t> seeds;
    double spacing = 0.0;
    for (NodeId id : dom.changed) {
        const NodeCloud& owner = initial.contains(id) ? initial : modified;
        if (!owner.contains(id)) throw ValidationError("changed node " + std::to_string(id) + " is in neither configuration");
        const Eigen::Vector3d x = owner.position(*owner.index_of(id));
        if (!detail::inside_grid(x, grid)) throw ValidationError("changed node " + std::to_string(id) + " lies outside the background grid");
        for (std::size_t c : grid.cells_containing(x)) seeds.insert(c);
        if (initial.size() >= 2) spacing = std::max(spacing, local_spacing(x, initial));
        if (modified.size() >= 2) spacing = std::max(spacing, local_spacing(x, modified));
    }
    dom.seed_cells.assign(seeds.begin(), seeds.end());
    const double d_m = params.alpha * spacing;
    dom.ring_width = std::max(1, static_cast<int>(std::ceil(d_m / grid.min_edge() - 1e-9)));

    std::vector<std::array<int, 3>> seed_coords;
    for (std::size_t c : dom.seed_cells) seed_coords.push_back(grid.cell_coords(c));

    std::map<std::size_t, detail::CellEval> evaluated;
    const int initial_width = dom.ring_width;
    for (;;) {
        const int w = dom.ring_width;
        std::map<std::size_t, int> ring;  // cell -> Chebyshev distance to the nearest seed
        for (const auto& s : seed_coords) {
            const int kz = grid.dim == 3 ? w : 0;
            for (int dk = -kz; dk <= kz; ++dk)
                for (int dj = -w; dj <= w; ++dj)
                    for (int di = -w; di <= w; ++di) {
                        const std::array<int, 3> c{s[0] + di, s[1] + dj, s[2] + dk};
                        bool valid = true;
                        for (int a = 0; a < grid.dim; ++a) valid = valid && c[a] >= 0 && c[a] < grid.counts[a];
                        if (!valid) continue;
                        const int d = std::max({std::abs(di), std::abs(dj), std::abs(dk)});
                        const std::size_t idx = grid.cell_index(c);
                        auto it = ring.find(idx);
                        if (it == ring.end()) ring.emplace(idx, d);
                        else it->second = std::min(it->second, d);
                    }
        }

        std::vector<std::size_t> fresh;
        for (const auto& [cell, d] : ring)
            if (!evaluated.count(cell)) fresh.push_back(cell);
        std::vector<detail::CellEval> results(fresh.size());
        parallel_for(fresh.size(), [&](std::size_t b, std::size_t e) {
            for (std::size_t k = b; k < e; ++k) {
                auto& out = results[k];
                for (const auto& gp : cell_gauss_points(grid, fresh[k])) {
                    // shape functions are evaluated only where the support keys differ
                    const bool differs = detail::support_key(gp, initial, params) != detail::support_key(gp, modified, params);
                    AffectedPoint p{gp, {}, {}};
                    if (differs) {
                        p.initial = evaluate_gauss(gp, initial, params);
                        p.modified = evaluate_gauss(gp, modified, params);
                    }
                    out.differs.push_back(differs);
                    out.points.push_back(std::move(p));
                }
            }
        });
        for (std::size_t k = 0; k < fresh.size(); ++k) evaluated.emplace(fresh[k], std::move(results[k]));

        bool shell_changed = false;
        for (const auto& [cell, d] : ring) {
            if (d != w) continue;
            const auto& ce = evaluated.at(cell);
            shell_changed = shell_changed || std::any_of(ce.differs.begin(), ce.differs.end(), [](char c) { return c != 0; });
        }
        if (shell_changed && ring.size() < grid.cell_count()) {
            ++dom.ring_width;
            continue;
        }

        dom.ring_cells.clear();
        for (const auto& [cell, d] : ring) dom.ring_cells.push_back(cell);
        break;
    }
    if (dom.ring_width != initial_width)
        dom.diagnostic = "influence ring widened from " + std::to_string(initial_width) + " to " + std::to_string(dom.ring_width) + " cells";

    std::set<NodeId> influence(dom.changed.begin(), dom.changed.end());
    for (std::size_t cell : dom.ring_cells) {
        auto& ce = evaluated.at(cell);
        dom.ring_gauss_count += ce.points.size();
        for (std::size_t k = 0; k < ce.points.size(); ++k) {
            if (!ce.differs[k]) continue;
            for (NodeId id : detail::support_ids(ce.points[k].initial, initial)) influence.insert(id);
            for (NodeId id : detail::support_ids(ce.points[k].modified, modified)) influence.insert(id);
            dom.affected.push_back(std::move(ce.points[k]));
        }
    }
    dom.influence_node_ids.assign(influence.begin(), influence.end());
    return dom;
}

/// Difference K_m - K_m* on the union DOF space (no boundary conditions).
struct StiffnessDelta {
    SparseMatrix dK;
    std::vector<Eigen::Index> touched_dofs;  ///< DOFs with a nonzero row
    bool local = true;                        ///< false when produced by global reassembly
    std::string diagnostic;
};

namespace detail {

inline std::vector<Eigen::Index> nonzero_rows(const SparseMatrix& A) {
    std::vector<char> mark(static_cast<std::size_t>(A.rows()), 0);
    for (Eigen::Index c = 0; c < A.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(A, c); it; ++it)
            if (it.value() != 0.0) mark[static_cast<std::size_t>(it.row())] = 1;
    std::vector<Eigen::Index> out;
    for (std::size_t i = 0; i < mark.size(); ++i)
        if (mark[i]) out.push_back(static_cast<Eigen::Index>(i));
    return out;
}

}  // namespace detail

/// Re-integrates only the affected quadrature points: sum over them of the
/// modified minus the initial contribution, plus the unit-diagonal swap of
/// DOFs that appear or disappear.
inline StiffnessDelta compute_delta(const InfluenceDomain& dom, const NodeCloud& initial, const NodeCloud& modified,
                                    const MaterialModel& material, const DofMap& dofs) {
    const int dim = initial.dim();
    const Eigen::MatrixXd D = constitutive(material);
    const auto pos_i = dofs.positions_of(initial);
    const auto pos_m = dofs.positions_of(modified);
    StiffnessDelta out;
    out.dK = accumulate_sparse(dofs.size(), dom.affected.size(), [&](std::size_t k, Triplets& trip) {
        const AffectedPoint& p = dom.affected[k];
        if (p.modified.included) scatter(p.modified, gauss_stiffness(p.modified, p.gp.weight, D, dim), pos_m, dim, 1.0, trip);
        if (p.initial.included) scatter(p.initial, gauss_stiffness(p.initial, p.gp.weight, D, dim), pos_i, dim, -1.0, trip);
    });
    Triplets diag;
    for (std::size_t pos = 0; pos < dofs.node_count(); ++pos) {
        const bool in_i = dofs.node_in_initial(pos), in_m = dofs.node_in_modified(pos);
        if (in_i == in_m) continue;
        for (int a = 0; a < dim; ++a) {
            const Eigen::Index d = static_cast<Eigen::Index>(pos) * dim + a;
            diag.emplace_back(d, d, in_i ? 1.0 : -1.0);
        }
    }
    if (!diag.empty()) {
        SparseMatrix S(dofs.size(), dofs.size());
        S.setFromTriplets(diag.begin(), diag.end());
        out.dK += S;
    }
    out.dK.makeCompressed();
    out.touched_dofs = detail::nonzero_rows(out.dK);
    out.diagnostic = dom.diagnostic;
    return out;
}

/// Full reassembly of the modified model on the union DOF space, returned
/// without boundary conditions.
inline StiffnessSystem global_update(const Model& modified, const DofMap& dofs) { return assemble_system(modified, dofs); }

/// Modified raw stiffness together with its delta from the initial one.
struct StiffnessUpdate {
    SparseMatrix K;  ///< raw modified stiffness, K_m* + dK
    StiffnessDelta delta;
    InfluenceDomain domain;  ///< empty when the global path ran
};

enum class UpdateStrategy { kLocal, kGlobal };

/// Updates the raw initial stiffness K0 (assembled on `dofs`) to the
/// modified configuration. The local path is refused when the material
/// changes or no nodes change; those cases reassemble globally.
inline StiffnessUpdate update_stiffness(const Model& initial, const SparseMatrix& K0, const ModifiedModel& mm,
                                        UpdateStrategy strategy) {
    StiffnessUpdate out;
    std::string refusal;
    if (strategy == UpdateStrategy::kLocal) {
        if (!(initial.material == mm.model.material)) refusal = "material changed; local update unavailable";
        else if (!(initial.params == mm.model.params) || !(initial.grid == mm.model.grid))
            refusal = "discretization parameters changed; local update unavailable";
    }
    if (strategy == UpdateStrategy::kLocal && refusal.empty()) {
        std::vector<NodeId> changed;
        for (std::size_t p = 0; p < mm.dofs.node_count(); ++p)
            if (mm.dofs.node_in_initial(p) != mm.dofs.node_in_modified(p)) changed.push_back(mm.dofs.node_id(p));
        out.domain = build_influence_domain(changed, initial.cloud, mm.model.cloud, initial.grid, initial.params);
        out.delta = compute_delta(out.domain, initial.cloud, mm.model.cloud, mm.model.material, mm.dofs);
        out.K = K0 + out.delta.dK;
        return out;
    }
    out.K = assemble_stiffness(mm.model, mm.dofs);
    out.delta.dK = out.K - K0;
    out.delta.dK.prune(0.0);
    out.delta.touched_dofs = detail::nonzero_rows(out.delta.dK);
    out.delta.local = false;
    out.delta.diagnostic = refusal;
    return out;
}

}  // namespace mlr
