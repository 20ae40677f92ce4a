#pragma once

// Model builders shared by the unit tests and the acceptance binary.

#include "mlr/model.hpp"

#include <random>
#include <vector>

namespace mlr::fixtures {

/// Nodes on an nx x ny (x nz) lattice with the given pitch; ids are 1-based,
/// x fastest. Optional uniform jitter in [-jitter, jitter] * pitch per axis;
/// boundary nodes stay on their boundary plane.
inline std::vector<Node> lattice_nodes(int dim, std::array<int, 3> n, double pitch, double jitter = 0.0,
                                       unsigned seed = 1, Eigen::Vector3d origin = Eigen::Vector3d::Zero()) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-jitter, jitter);
    if (dim == 2) n[2] = 1;
    std::vector<Node> nodes;
    NodeId id = 1;
    for (int k = 0; k < n[2]; ++k)
        for (int j = 0; j < n[1]; ++j)
            for (int i = 0; i < n[0]; ++i) {
                Eigen::Vector3d x = origin + pitch * Eigen::Vector3d(i, j, dim == 3 ? k : 0);
                if (jitter > 0.0) {
                    const std::array<int, 3> ijk{i, j, k};
                    for (int a = 0; a < dim; ++a) {
                        const double shift = pitch * u(rng);
                        if (ijk[a] > 0 && ijk[a] < n[a] - 1) x[a] += shift;
                    }
                }
                nodes.push_back({id++, x});
            }
    return nodes;
}

/// Background grid with one cell per lattice interval.
inline BackgroundGrid lattice_grid(int dim, std::array<int, 3> n, double pitch,
                                   Eigen::Vector3d origin = Eigen::Vector3d::Zero()) {
    BackgroundGrid g;
    g.dim = dim;
    g.origin = origin;
    g.cell_size = Eigen::Vector3d::Constant(pitch);
    g.counts = {std::max(1, n[0] - 1), std::max(1, n[1] - 1), dim == 3 ? std::max(1, n[2] - 1) : 1};
    return g;
}

inline Model lattice_model(int dim, std::array<int, 3> n, double pitch, double jitter = 0.0, unsigned seed = 1) {
    Model m;
    m.cloud = NodeCloud(dim, lattice_nodes(dim, n, pitch, jitter, seed));
    m.grid = lattice_grid(dim, n, pitch);
    m.material.young_modulus = 1000.0;
    m.material.poisson_ratio = 0.3;
    m.material.mode = dim == 2 ? MaterialMode::kPlaneStress : MaterialMode::kSolid3d;
    m.params.theta = 1.0 / (pitch * pitch);
    return m;
}

/// Lattice node id at integer coordinates (i, j, k).
inline NodeId lattice_id(std::array<int, 3> n, int i, int j, int k = 0) {
    return static_cast<NodeId>(i + n[0] * (j + n[1] * k) + 1);
}

/// Clamps every node with x == x0 in all directions.
inline void clamp_plane_x(Model& m, double x0) {
    for (const auto& nd : m.cloud.nodes())
        if (std::abs(nd.x.x() - x0) < 1e-12)
            for (int a = 0; a < m.cloud.dim(); ++a) m.bc.fixed.push_back({nd.id, a});
}


/// Lattice plate clamped at x = 0 with a downward point load at the middle of
/// the far edge.
inline Model loaded_plate(int dim, std::array<int, 3> n, double pitch, double jitter = 0.0, unsigned seed = 1) {
    Model m = lattice_model(dim, n, pitch, jitter, seed);
    clamp_plane_x(m, 0.0);
    const int kz = dim == 3 ? n[2] / 2 : 0;
    m.bc.point_loads = {{lattice_id(n, n[0] - 1, n[1] / 2, kz), 1, -1.0}};
    return m;
}

/// Removes every node strictly inside the ball of radius r around c.
inline Modification hole(const Model& m, const Eigen::Vector3d& c, double r) {
    Modification mod;
    for (const auto& nd : m.cloud.nodes())
        if ((nd.x - c).norm() < r) mod.removed.push_back(nd.id);
    return mod;
}

}  // namespace mlr::fixtures
