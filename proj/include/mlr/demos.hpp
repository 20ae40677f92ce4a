#pragma once

// Bundled desk-scale models: a unit patch, a Timoshenko cantilever, a
// lightened plate, a bracket whose fillet grows, a 3D L-frame with an added
// rib, and the plate families used for timing sweeps.

#include "mlr/errors.hpp"
#include "mlr/model.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mlr::demos {

/// A model plus an optional design modification.
struct Demo {
    std::string name;
    Model model;
    std::optional<Modification> modification;
};

/// Lattice membership test on integer coordinates.
using LatticeRegion = std::function<bool(int, int, int)>;

/// Nodes of the lattice points accepted by `inside`, ids 1-based in x-fastest
/// order. Each coordinate of a node whose two axis neighbours are both inside
/// is jittered uniformly by up to +-jitter * pitch, so boundary nodes stay on
/// their boundary planes.
inline std::vector<Node> lattice(int dim, std::array<int, 3> n, double pitch, const LatticeRegion& inside,
                                 double jitter = 0.0, unsigned seed = 1,
                                 const Eigen::Vector3d& origin = Eigen::Vector3d::Zero()) {
    if (dim == 2) n[2] = 1;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-jitter, jitter);
    std::vector<Node> nodes;
    NodeId id = 1;
    for (int k = 0; k < n[2]; ++k)
        for (int j = 0; j < n[1]; ++j)
            for (int i = 0; i < n[0]; ++i) {
                if (!inside(i, j, k)) continue;
                Eigen::Vector3d x = origin + pitch * Eigen::Vector3d(i, j, k);
                const std::array<int, 3> ijk{i, j, k};
                for (int a = 0; a < dim && jitter > 0.0; ++a) {
                    std::array<int, 3> lo = ijk, hi = ijk;
                    --lo[a];
                    ++hi[a];
                    const bool interior = lo[a] >= 0 && hi[a] < n[a] && inside(lo[0], lo[1], lo[2]) && inside(hi[0], hi[1], hi[2]);
                    const double shift = pitch * u(rng);
                    if (interior) x[a] += shift;
                }
                nodes.push_back({id++, x});
            }
    return nodes;
}

inline BackgroundGrid box_grid(int dim, const Eigen::Vector3d& origin, const Eigen::Vector3d& extent, double cell) {
    BackgroundGrid g;
    g.dim = dim;
    g.origin = origin;
    g.cell_size = Eigen::Vector3d::Constant(cell);
    for (int a = 0; a < 3; ++a) g.counts[a] = a < dim ? std::max(1, static_cast<int>(std::lround(extent[a] / cell))) : 1;
    return g;
}

/// Id of the node closest to p.
inline NodeId nearest_id(const NodeCloud& cloud, const Eigen::Vector3d& p) {
    return cloud.node(cloud.index().nearest(p, 1).front()).id;
}

// ---------------------------------------------------------------------------
// Unit patch

constexpr double kPatchStress = 1.0;

/// 3x3 nodes on the unit square under equal and opposite unit tractions on
/// x = 0 and x = 1, restrained only against rigid motion. Every support covers
/// the whole patch and the background grid is 16 x 16, so the Galerkin
/// solution is the uniform stress state up to quadrature error.
inline Demo unit_patch() {
    Demo d;
    d.name = "unit_patch";
    Model& m = d.model;
    m.cloud = NodeCloud(2, lattice(2, {3, 3, 1}, 0.5, [](int, int, int) { return true; }));
    m.grid = box_grid(2, Eigen::Vector3d::Zero(), Eigen::Vector3d(1, 1, 0), 1.0 / 16.0);
    m.material = {1000.0, 0.3, MaterialMode::kPlaneStress};
    m.params.alpha = 3.0;
    m.params.theta = 4.0;
    m.bc.fixed = {{1, 0}, {1, 1}, {7, 0}};
    m.bc.tractions = {{Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(1, 1, 0), Eigen::Vector3d(kPatchStress, 0, 0)},
                      {Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(0, 1, 0), Eigen::Vector3d(-kPatchStress, 0, 0)}};
    m.units = {{"length", "m"}, {"force", "N"}, {"stress", "Pa"}};
    return d;
}

// ---------------------------------------------------------------------------
// Timoshenko cantilever

struct BeamData {
    double length = 48.0;
    double depth = 12.0;
    double load = 1000.0;  ///< total end shear, downward
    double young = 3.0e7;
    double poisson = 0.3;

    double inertia() const { return depth * depth * depth / 12.0; }

    /// Closed-form magnitude of the plane-stress tip deflection on the axis.
    double tip_deflection() const {
        return load / (6.0 * young * inertia()) *
               ((4.0 + 5.0 * poisson) * depth * depth * length / 4.0 + 2.0 * length * length * length);
    }

    /// Bending stress sigma_xx at (x, y), y measured from the axis.
    double bending_stress(double x, double y) const { return load * (length - x) * y / inertia(); }
};

/// 33 x 9 node cantilever clamped at x = 0, with the parabolic end shear
/// applied as eight piecewise-constant traction segments.
inline Demo cantilever(const BeamData& beam = {}) {
    Demo d;
    d.name = "cantilever";
    Model& m = d.model;
    const std::array<int, 3> n{33, 9, 1};
    const double pitch = beam.length / (n[0] - 1);
    if (std::abs(pitch * (n[1] - 1) - beam.depth) > 1e-9 * beam.depth)
        throw ValidationError("cantilever demo needs depth = length / 4");
    const Eigen::Vector3d origin(0, -beam.depth / 2, 0);
    m.cloud = NodeCloud(2, lattice(2, n, pitch, [](int, int, int) { return true; }, 0.0, 1, origin));
    m.grid = box_grid(2, origin, Eigen::Vector3d(beam.length, beam.depth, 0), pitch);
    m.material = {beam.young, beam.poisson, MaterialMode::kPlaneStress};
    m.params.theta = 1.0 / (pitch * pitch);
    for (const auto& nd : m.cloud.nodes())
        if (std::abs(nd.x.x()) < 1e-12) m.bc.fixed.insert(m.bc.fixed.end(), {{nd.id, 0}, {nd.id, 1}});
    const int segments = 8;
    const double I = beam.inertia(), c = beam.depth / 2;
    auto primitive = [&](double y) { return beam.load / (2 * I) * (c * c * y - y * y * y / 3); };
    for (int k = 0; k < segments; ++k) {
        const double a = -c + beam.depth * k / segments, b = -c + beam.depth * (k + 1) / segments;
        const double mean = (primitive(b) - primitive(a)) / (b - a);
        m.bc.tractions.push_back({Eigen::Vector3d(beam.length, a, 0), Eigen::Vector3d(beam.length, b, 0), Eigen::Vector3d(0, -mean, 0)});
    }
    m.units = {{"length", "in"}, {"force", "lbf"}, {"stress", "psi"}};
    return d;
}

/// Node on the beam axis at the free end.
inline NodeId cantilever_tip(const Model& m, const BeamData& beam = {}) {
    return nearest_id(m.cloud, Eigen::Vector3d(beam.length, 0, 0));
}

// ---------------------------------------------------------------------------
// Plate lightening

/// Nodes removed by tapering a clamped plate towards its loaded end: the
/// half-height shrinks linearly from h/2 at x = 0.1 L to `end_half` at x = L.
inline Modification taper(const Model& m, double length, double height, double end_half) {
    Modification mod;
    const double x0 = 0.1 * length, mid = height / 2;
    for (const auto& nd : m.cloud.nodes()) {
        const double x = nd.x.x(), y = nd.x.y();
        const double half = x <= x0 ? mid : mid - (mid - end_half) * (x - x0) / (length - x0);
        if (std::abs(y - mid) > half + 1e-9) mod.removed.push_back(nd.id);
    }
    return mod;
}

/// End half-height that removes about `fraction` of a plate's area.
inline double taper_end_half(double height, double fraction) { return height / 2 - fraction * height / 0.9; }

/// Plate of 100 x 50 mm clamped on x = 0 with a vertical 1000 mN load at the
/// middle of the free edge, on a perturbed 51 x 26 lattice.
inline Model plate_model(std::array<int, 2> n = {51, 26}, double pitch = 2.0, double jitter = 0.15, unsigned seed = 11) {
    Model m;
    m.cloud = NodeCloud(2, lattice(2, {n[0], n[1], 1}, pitch, [](int, int, int) { return true; }, jitter, seed));
    const double L = pitch * (n[0] - 1), D = pitch * (n[1] - 1);
    m.grid = box_grid(2, Eigen::Vector3d::Zero(), Eigen::Vector3d(L, D, 0), pitch);
    m.material = {2.0e8, 0.3, MaterialMode::kPlaneStress};
    m.params.theta = 1.0 / (pitch * pitch);
    m.params.coverage = 0.65;
    for (const auto& nd : m.cloud.nodes())
        if (std::abs(nd.x.x()) < 1e-12) m.bc.fixed.insert(m.bc.fixed.end(), {{nd.id, 0}, {nd.id, 1}});
    m.bc.point_loads = {{nearest_id(m.cloud, Eigen::Vector3d(L, D / 2, 0)), 1, -1000.0}};
    m.units = {{"length", "mm"}, {"force", "mN"}, {"stress", "mN/mm^2"}};
    return m;
}

/// Plate whose modified design keeps a taper, about a third of the nodes removed.
inline Demo plate() {
    Demo d;
    d.name = "plate";
    d.model = plate_model();
    d.modification = taper(d.model, 100.0, 50.0, taper_end_half(50.0, 0.34));
    return d;
}

// ---------------------------------------------------------------------------
// Support bracket

struct BracketData {
    double pitch = 0.8;
    int arm_width = 12;   ///< vertical arm width in pitches
    int height = 38;      ///< total height in pitches
    int corner = 25;      ///< height of the inner corner in pitches
    int length = 50;      ///< horizontal reach in pitches
    double fillet0 = 2.5;
    double fillet1 = 7.5;
};

/// True when lattice point (i, j) lies in the fillet of radius r at the inner corner.
inline bool in_fillet(const BracketData& b, int i, int j, double r) {
    const double x = i * b.pitch, y = j * b.pitch, cx = b.arm_width * b.pitch, cy = b.corner * b.pitch;
    if (!(x > cx && x <= cx + r && y >= cy - r && y < cy)) return false;
    return std::hypot(x - (cx + r), y - (cy - r)) >= r - 1e-9;
}

/// L-shaped bracket clamped at its base and loaded at the free end of the
/// horizontal arm. The modified design enlarges the inner fillet, adding nodes.
inline Demo bracket(const BracketData& b = {}) {
    Demo d;
    d.name = "bracket";
    auto body = [b](int i, int j) { return (i <= b.arm_width && j <= b.height) || (j >= b.corner && i <= b.length); };
    const std::array<int, 3> n{b.length + 1, b.height + 1, 1};
    Model& m = d.model;
    m.cloud = NodeCloud(2, lattice(2, n, b.pitch, [&](int i, int j, int) { return body(i, j) || in_fillet(b, i, j, b.fillet0); },
                                   0.15, 5));
    m.grid = box_grid(2, Eigen::Vector3d::Zero(), Eigen::Vector3d(b.length * b.pitch, b.height * b.pitch, 0), b.pitch);
    m.material = {2.0e8, 0.3, MaterialMode::kPlaneStress};
    m.params.theta = 1.0 / (b.pitch * b.pitch);
    m.params.coverage = 0.65;
    for (const auto& nd : m.cloud.nodes())
        if (std::abs(nd.x.y()) < 1e-12) m.bc.fixed.insert(m.bc.fixed.end(), {{nd.id, 0}, {nd.id, 1}});
    const double mid = 0.5 * (b.corner + b.height) * b.pitch;
    m.bc.point_loads = {{nearest_id(m.cloud, Eigen::Vector3d(b.length * b.pitch, mid, 0)), 1, -1000.0}};
    m.units = {{"length", "mm"}, {"force", "mN"}, {"stress", "mN/mm^2"}};

    Modification mod;
    NodeId next = m.cloud.nodes().back().id + 1;
    for (int j = 0; j < n[1]; ++j)
        for (int i = 0; i < n[0]; ++i)
            if (!body(i, j) && !in_fillet(b, i, j, b.fillet0) && in_fillet(b, i, j, b.fillet1))
                mod.added.push_back({next++, b.pitch * Eigen::Vector3d(i, j, 0)});
    d.modification = mod;
    return d;
}

// ---------------------------------------------------------------------------
// 3D L-frame

/// Solid L-frame: a column on a fixed base carrying an arm whose far top edge
/// takes a uniform line load of 100 mN/mm. The modification adds a triangular
/// rib in the mid-width plane of the inner corner.
inline Demo l_frame() {
    Demo d;
    d.name = "l_frame";
    const int column = 4, arm = 16, width = 4, top = 16, arm_depth = 4, rib = 6;
    auto body = [=](int i, int, int k) { return i <= column || k >= top - arm_depth; };
    const std::array<int, 3> n{arm + 1, width + 1, top + 1};
    Model& m = d.model;
    m.cloud = NodeCloud(3, lattice(3, n, 1.0, body, 0.1, 9));
    m.grid = box_grid(3, Eigen::Vector3d::Zero(), Eigen::Vector3d(arm, width, top), 1.0);
    m.material = {2.0e8, 0.3, MaterialMode::kSolid3d};
    m.params.theta = 1.0;
    m.params.coverage = 0.65;
    for (const auto& nd : m.cloud.nodes())
        if (std::abs(nd.x.z()) < 1e-12)
            for (int a = 0; a < 3; ++a) m.bc.fixed.push_back({nd.id, a});
    m.bc.tractions = {{Eigen::Vector3d(arm, 0, top), Eigen::Vector3d(arm, width, top), Eigen::Vector3d(0, 0, -100.0)}};
    m.units = {{"length", "mm"}, {"force", "mN"}, {"stress", "mN/mm^2"}};

    Modification mod;
    NodeId next = m.cloud.nodes().back().id + 1;
    const int corner = top - arm_depth, j = width / 2;
    for (int k = 0; k < n[2]; ++k)
        for (int i = 0; i < n[0]; ++i)
            if (!body(i, j, k) && (i - column) + (corner - k) <= rib)
                mod.added.push_back({next++, Eigen::Vector3d(i, j, k)});
    d.modification = mod;
    return d;
}

/// Every bundled demo, in a stable order.
inline std::vector<Demo> all() { return {unit_patch(), cantilever(), plate(), bracket(), l_frame()}; }

// ---------------------------------------------------------------------------
// Timing families

enum class FamilyChange { kSmall, kLarge };

/// Plates of growing size with a modification of fixed relative size.
struct BenchFamily {
    std::string name;
    std::vector<std::array<int, 2>> sizes;  ///< lattice node counts per axis
    FamilyChange change = FamilyChange::kSmall;
    double fraction = 0.015;                ///< target share of removed nodes
    int basis = 10;                         ///< CA basis vectors
    int repeats = 3;                        ///< timed runs after one warm-up; the median is kept
};

/// Unit-pitch plate of the family at one size with its modification: a
/// central hole for small changes, a taper for large ones.
inline Demo bench_point(const BenchFamily& fam, std::array<int, 2> size) {
    Demo d;
    d.name = fam.name + "_" + std::to_string(size[0]) + "x" + std::to_string(size[1]);
    d.model = plate_model(size, 1.0, 0.15, 7);
    const double L = size[0] - 1.0, D = size[1] - 1.0;
    if (fam.change == FamilyChange::kLarge) {
        d.modification = taper(d.model, L, D, taper_end_half(D, fam.fraction));
    } else {
        const double r = std::sqrt(fam.fraction * size[0] * size[1] / M_PI);
        Modification mod;
        const Eigen::Vector3d c(L / 2, D / 2, 0);
        for (const auto& nd : d.model.cloud.nodes())
            if ((nd.x - c).norm() < r) mod.removed.push_back(nd.id);
        d.modification = mod;
    }
    return d;
}

inline BenchFamily small_family() {
    return {"small", {{16, 8}, {24, 12}, {32, 16}, {46, 23}, {64, 32}}, FamilyChange::kSmall, 0.015, 10, 3};
}

inline BenchFamily large_family() {
    return {"large", {{16, 8}, {24, 12}, {32, 16}, {46, 23}}, FamilyChange::kLarge, 0.30, 10, 3};
}

}  // namespace mlr::demos
