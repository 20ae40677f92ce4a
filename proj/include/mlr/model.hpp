#pragma once

#include "mlr/errors.hpp"
#include "mlr/spatial_index.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace mlr {

using NodeId = std::int64_t;

struct Node {
    NodeId id = 0;
    Eigen::Vector3d x = Eigen::Vector3d::Zero();  ///< z = 0 for 2D clouds

    friend bool operator==(const Node& a, const Node& b) { return a.id == b.id && a.x == b.x; }
};

/// Scattered field nodes. Nodes are kept sorted by id; ids are unique and no
/// two nodes share a position. Immutable after construction.
class NodeCloud {
public:
    NodeCloud() = default;

    NodeCloud(int dim, std::vector<Node> nodes) : dim_(dim), nodes_(std::move(nodes)) {
        if (dim_ != 2 && dim_ != 3) throw ValidationError("dimension must be 2 or 3");
        std::sort(nodes_.begin(), nodes_.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            auto& n = nodes_[i];
            if (dim_ == 2) n.x.z() = 0.0;
            if (!n.x.allFinite()) throw ValidationError("node " + std::to_string(n.id) + " has non-finite coordinates");
            if (i > 0 && nodes_[i - 1].id == n.id) throw ValidationError("duplicate node id " + std::to_string(n.id));
            lookup_.emplace(n.id, i);
        }
        std::vector<std::size_t> order(nodes_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        auto lex = [&](std::size_t a, std::size_t b) {
            const auto& p = nodes_[a].x;
            const auto& q = nodes_[b].x;
            return std::tie(p[0], p[1], p[2]) < std::tie(q[0], q[1], q[2]);
        };
        std::sort(order.begin(), order.end(), lex);
        for (std::size_t i = 1; i < order.size(); ++i) {
            if (nodes_[order[i - 1]].x == nodes_[order[i]].x)
                throw ValidationError("nodes " + std::to_string(nodes_[order[i - 1]].id) + " and " +
                                      std::to_string(nodes_[order[i]].id) + " coincide");
        }
        index_ = std::make_shared<const SpatialIndex>(positions(), dim_);
    }

    int dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool empty() const noexcept { return nodes_.empty(); }
    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    const Node& node(std::size_t i) const { return nodes_[i]; }
    const Eigen::Vector3d& position(std::size_t i) const { return nodes_[i].x; }

    std::optional<std::size_t> index_of(NodeId id) const {
        auto it = lookup_.find(id);
        if (it == lookup_.end()) return std::nullopt;
        return it->second;
    }
    bool contains(NodeId id) const { return lookup_.count(id) != 0; }

    std::vector<Eigen::Vector3d> positions() const {
        std::vector<Eigen::Vector3d> out;
        out.reserve(nodes_.size());
        for (const auto& n : nodes_) out.push_back(n.x);
        return out;
    }

    const SpatialIndex& index() const {
        static const SpatialIndex empty_index;
        return index_ ? *index_ : empty_index;
    }

    friend bool operator==(const NodeCloud& a, const NodeCloud& b) { return a.dim_ == b.dim_ && a.nodes_ == b.nodes_; }

private:
    int dim_ = 2;
    std::vector<Node> nodes_;
    std::unordered_map<NodeId, std::size_t> lookup_;
    std::shared_ptr<const SpatialIndex> index_;
};

/// Axis-aligned quadrature cells, independent of the nodes.
struct BackgroundGrid {
    int dim = 2;
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    Eigen::Vector3d cell_size = Eigen::Vector3d::Ones();
    std::array<int, 3> counts{1, 1, 1};

    void validate() const {
        if (dim != 2 && dim != 3) throw ValidationError("grid dimension must be 2 or 3");
        for (int a = 0; a < dim; ++a) {
            if (!(cell_size[a] > 0.0) || !std::isfinite(cell_size[a])) throw ValidationError("grid cell_size must be > 0");
            if (counts[a] < 1) throw ValidationError("grid counts must be >= 1");
            if (!std::isfinite(origin[a])) throw ValidationError("grid origin must be finite");
        }
    }

    std::size_t cell_count() const {
        std::size_t n = 1;
        for (int a = 0; a < dim; ++a) n *= static_cast<std::size_t>(counts[a]);
        return n;
    }

    std::array<int, 3> cell_coords(std::size_t cell) const {
        std::array<int, 3> c{0, 0, 0};
        c[0] = static_cast<int>(cell % static_cast<std::size_t>(counts[0]));
        const std::size_t rest = cell / static_cast<std::size_t>(counts[0]);
        if (dim > 1) c[1] = static_cast<int>(rest % static_cast<std::size_t>(counts[1]));
        if (dim > 2) c[2] = static_cast<int>(rest / static_cast<std::size_t>(counts[1]));
        return c;
    }

    std::size_t cell_index(const std::array<int, 3>& c) const {
        std::size_t idx = static_cast<std::size_t>(c[0]);
        idx += static_cast<std::size_t>(counts[0]) * static_cast<std::size_t>(c[1]);
        if (dim > 2) idx += static_cast<std::size_t>(counts[0]) * static_cast<std::size_t>(counts[1]) * static_cast<std::size_t>(c[2]);
        return idx;
    }

    Eigen::Vector3d cell_lower(std::size_t cell) const {
        const auto c = cell_coords(cell);
        Eigen::Vector3d lo = origin;
        for (int a = 0; a < dim; ++a) lo[a] += c[a] * cell_size[a];
        return lo;
    }

    double cell_measure() const {
        double m = 1.0;
        for (int a = 0; a < dim; ++a) m *= cell_size[a];
        return m;
    }

    double min_edge() const {
        double m = cell_size[0];
        for (int a = 1; a < dim; ++a) m = std::min(m, cell_size[a]);
        return m;
    }

    /// Cells whose closed box contains x (up to 2^dim when x sits on shared faces/corners).
    std::vector<std::size_t> cells_containing(const Eigen::Vector3d& x) const {
        std::array<std::vector<int>, 3> per_axis;
        for (int a = 0; a < 3; ++a) {
            if (a >= dim) {
                per_axis[a] = {0};
                continue;
            }
            const double t = (x[a] - origin[a]) / cell_size[a];
            const double tol = 1e-9;
            const int base = static_cast<int>(std::floor(t));
            for (int c : {base - 1, base, base + 1}) {
                if (c < 0 || c >= counts[a]) continue;
                if (t >= c - tol && t <= c + 1 + tol) per_axis[a].push_back(c);
            }
        }
        std::vector<std::size_t> out;
        for (int k : per_axis[2])
            for (int j : per_axis[1])
                for (int i : per_axis[0]) out.push_back(cell_index({i, j, k}));
        std::sort(out.begin(), out.end());
        return out;
    }

    friend bool operator==(const BackgroundGrid& a, const BackgroundGrid& b) {
        if (a.dim != b.dim) return false;
        for (int i = 0; i < a.dim; ++i)
            if (a.origin[i] != b.origin[i] || a.cell_size[i] != b.cell_size[i] || a.counts[i] != b.counts[i]) return false;
        return true;
    }
};

enum class MaterialMode { kPlaneStress, kSolid3d };

struct MaterialModel {
    double young_modulus = 1.0;
    double poisson_ratio = 0.0;
    MaterialMode mode = MaterialMode::kPlaneStress;

    void validate(int dim) const {
        if (!(young_modulus > 0.0) || !std::isfinite(young_modulus)) throw ValidationError("Young's modulus must be > 0");
        if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5)) throw ValidationError("Poisson ratio must satisfy 0 <= nu < 0.5");
        if ((mode == MaterialMode::kPlaneStress) != (dim == 2))
            throw ValidationError("material mode does not match model dimension");
    }

    friend bool operator==(const MaterialModel&, const MaterialModel&) = default;
};

struct FixedDof {
    NodeId node = 0;
    int axis = 0;
    friend bool operator==(const FixedDof&, const FixedDof&) = default;
};

struct PointLoad {
    NodeId node = 0;
    int axis = 0;
    double value = 0.0;
    friend bool operator==(const PointLoad&, const PointLoad&) = default;
};

/// Constant line load q (force per length) along the straight segment from -> to.
struct EdgeTraction {
    Eigen::Vector3d from = Eigen::Vector3d::Zero();
    Eigen::Vector3d to = Eigen::Vector3d::Zero();
    Eigen::Vector3d q = Eigen::Vector3d::Zero();
    friend bool operator==(const EdgeTraction& a, const EdgeTraction& b) {
        return a.from == b.from && a.to == b.to && a.q == b.q;
    }
};

struct BoundaryConditions {
    std::vector<FixedDof> fixed;
    std::vector<PointLoad> point_loads;
    std::vector<EdgeTraction> tractions;

    void validate(const NodeCloud& cloud) const {
        const int dim = cloud.dim();
        std::set<std::pair<NodeId, int>> fixed_set;
        for (const auto& f : fixed) {
            if (!cloud.contains(f.node)) throw ValidationError("fixed DOF references missing node " + std::to_string(f.node));
            if (f.axis < 0 || f.axis >= dim) throw ValidationError("fixed DOF axis out of range");
            fixed_set.emplace(f.node, f.axis);
        }
        for (const auto& p : point_loads) {
            if (!cloud.contains(p.node)) throw ValidationError("point load references missing node " + std::to_string(p.node));
            if (p.axis < 0 || p.axis >= dim) throw ValidationError("point load axis out of range");
            if (!std::isfinite(p.value)) throw ValidationError("point load must be finite");
            if (fixed_set.count({p.node, p.axis}))
                throw ValidationError("DOF (" + std::to_string(p.node) + "," + std::to_string(p.axis) + ") is both fixed and loaded");
        }
        for (const auto& t : tractions) {
            if (!t.from.allFinite() || !t.to.allFinite() || !t.q.allFinite()) throw ValidationError("traction must be finite");
            if ((t.to - t.from).norm() <= 0.0) throw ValidationError("traction segment has zero length");
        }
    }

    bool references(NodeId id) const {
        return std::any_of(fixed.begin(), fixed.end(), [&](const FixedDof& f) { return f.node == id; }) ||
               std::any_of(point_loads.begin(), point_loads.end(), [&](const PointLoad& p) { return p.node == id; });
    }

    friend bool operator==(const BoundaryConditions&, const BoundaryConditions&) = default;
};

/// Numerical parameters of the moving-Kriging discretization.
struct AnalysisParams {
    double alpha = 3.0;  ///< support radius scale, d_m = alpha * d_c
    double theta = 1.0;  ///< Gaussian correlation parameter, 1/length^2
    /// A Gauss point belongs to the domain when its nearest node lies within
    /// coverage * d_c. Removing nodes therefore removes material.
    double coverage = 1.0;

    void validate() const {
        if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha must be > 0");
        if (!(theta > 0.0) || !std::isfinite(theta)) throw ValidationError("theta must be > 0");
        if (!(coverage > 0.0) || !std::isfinite(coverage)) throw ValidationError("coverage must be > 0");
    }

    friend bool operator==(const AnalysisParams&, const AnalysisParams&) = default;
};

struct Model {
    NodeCloud cloud;
    BackgroundGrid grid;
    MaterialModel material;
    BoundaryConditions bc;
    AnalysisParams params;
    std::map<std::string, std::string> units;  ///< recorded verbatim, never interpreted

    void validate() const {
        grid.validate();
        if (grid.dim != cloud.dim()) throw ValidationError("grid and node cloud dimensions differ");
        material.validate(cloud.dim());
        bc.validate(cloud);
        params.validate();
    }

    friend bool operator==(const Model&, const Model&) = default;
};

struct Modification {
    std::vector<Node> added;
    std::vector<NodeId> removed;
    std::optional<MaterialModel> material;
    std::optional<BoundaryConditions> bc;

    bool changes_nodes() const { return !added.empty() || !removed.empty(); }
    bool empty() const { return !changes_nodes() && !material && !bc; }

    friend bool operator==(const Modification&, const Modification&) = default;
};

/// How the number of DOFs changes under a modification.
enum class DofChange { kConstant, kDecreased, kIncreased, kMixed };

/// Fixed DOF index space over the union of the initial and modified node sets,
/// ordered by node id then axis. Both stiffness matrices of a reanalysis live
/// on this space; DOFs absent from a configuration are decoupled.
class DofMap {
public:
    DofMap() = default;

    static DofMap for_cloud(const NodeCloud& cloud) { return for_union(cloud, cloud); }

    static DofMap for_union(const NodeCloud& initial, const NodeCloud& modified) {
        if (initial.dim() != modified.dim()) throw ValidationError("clouds have different dimensions");
        DofMap map;
        map.dim_ = initial.dim();
        const auto& a = initial.nodes();
        const auto& b = modified.nodes();
        std::size_t i = 0, j = 0;
        while (i < a.size() || j < b.size()) {
            const bool take_a = j >= b.size() || (i < a.size() && a[i].id <= b[j].id);
            const bool take_b = i >= a.size() || (j < b.size() && b[j].id <= a[i].id);
            const Node& n = take_a ? a[i] : b[j];
            if (take_a && take_b && a[i].x != b[j].x)
                throw ValidationError("node " + std::to_string(n.id) + " moved between configurations");
            map.ids_.push_back(n.id);
            map.coords_.push_back(n.x);
            map.in_initial_.push_back(take_a);
            map.in_modified_.push_back(take_b);
            if (take_a) ++i;
            if (take_b) ++j;
        }
        for (std::size_t k = 0; k < map.ids_.size(); ++k) map.lookup_.emplace(map.ids_[k], k);
        return map;
    }

    int dim() const noexcept { return dim_; }
    std::size_t node_count() const noexcept { return ids_.size(); }
    Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(ids_.size()) * dim_; }
    NodeId node_id(std::size_t pos) const { return ids_[pos]; }
    const std::vector<NodeId>& node_ids() const noexcept { return ids_; }
    const Eigen::Vector3d& coords(std::size_t pos) const { return coords_[pos]; }
    bool node_in_initial(std::size_t pos) const { return in_initial_[pos]; }
    bool node_in_modified(std::size_t pos) const { return in_modified_[pos]; }

    std::optional<std::size_t> position(NodeId id) const {
        auto it = lookup_.find(id);
        if (it == lookup_.end()) return std::nullopt;
        return it->second;
    }

    Eigen::Index dof(NodeId id, int axis) const {
        auto pos = position(id);
        if (!pos) throw ValidationError("node " + std::to_string(id) + " is not in the DOF map");
        return static_cast<Eigen::Index>(*pos) * dim_ + axis;
    }

    /// Per-DOF membership masks.
    std::vector<bool> active_initial() const { return expand(in_initial_); }
    std::vector<bool> active_modified() const { return expand(in_modified_); }

    /// Union position of every node of cloud, in cloud order.
    std::vector<std::size_t> positions_of(const NodeCloud& cloud) const {
        std::vector<std::size_t> out;
        out.reserve(cloud.size());
        for (const auto& n : cloud.nodes()) {
            auto pos = position(n.id);
            if (!pos) throw ValidationError("node " + std::to_string(n.id) + " is not in the DOF map");
            out.push_back(*pos);
        }
        return out;
    }

    friend bool operator==(const DofMap& a, const DofMap& b) {
        return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.coords_ == b.coords_ && a.in_initial_ == b.in_initial_ &&
               a.in_modified_ == b.in_modified_;
    }

private:
    std::vector<bool> expand(const std::vector<bool>& per_node) const {
        std::vector<bool> out;
        out.reserve(per_node.size() * static_cast<std::size_t>(dim_));
        for (bool b : per_node)
            for (int a = 0; a < dim_; ++a) out.push_back(b);
        return out;
    }

    int dim_ = 2;
    std::vector<NodeId> ids_;
    std::vector<Eigen::Vector3d> coords_;
    std::vector<bool> in_initial_;
    std::vector<bool> in_modified_;
    std::unordered_map<NodeId, std::size_t> lookup_;
};

struct ModifiedModel {
    Model model;
    DofMap dofs;
    DofChange change = DofChange::kConstant;
};

/// Builds the modified model ((initial + added) - removed, new material/BCs)
/// and the union DOF map shared by both configurations.
inline ModifiedModel apply_modification(const Model& initial, const Modification& mod) {
    const NodeCloud& cloud = initial.cloud;
    std::set<NodeId> removed;
    for (NodeId id : mod.removed) {
        if (!cloud.contains(id)) throw ValidationError("removed node " + std::to_string(id) + " does not exist");
        if (!removed.insert(id).second) throw ValidationError("node " + std::to_string(id) + " removed twice");
    }
    std::set<NodeId> added;
    for (const auto& n : mod.added) {
        if (cloud.contains(n.id)) throw ValidationError("added node id " + std::to_string(n.id) + " is not fresh");
        if (!added.insert(n.id).second) throw ValidationError("node " + std::to_string(n.id) + " added twice");
    }
    if (!mod.bc) {
        for (NodeId id : removed)
            if (initial.bc.references(id))
                throw ValidationError("removed node " + std::to_string(id) + " carries a load or fixed DOF; supply new boundary conditions");
    }

    std::vector<Node> nodes;
    nodes.reserve(cloud.size() + mod.added.size());
    for (const auto& n : cloud.nodes())
        if (!removed.count(n.id)) nodes.push_back(n);
    for (const auto& n : mod.added) nodes.push_back(n);

    ModifiedModel out;
    out.model = initial;
    out.model.cloud = NodeCloud(cloud.dim(), std::move(nodes));
    if (mod.material) out.model.material = *mod.material;
    if (mod.bc) out.model.bc = *mod.bc;
    out.model.validate();
    out.dofs = DofMap::for_union(initial.cloud, out.model.cloud);

    if (added.empty() && removed.empty()) out.change = DofChange::kConstant;
    else if (added.empty()) out.change = DofChange::kDecreased;
    else if (removed.empty()) out.change = DofChange::kIncreased;
    else out.change = DofChange::kMixed;
    return out;
}

}  // namespace mlr
