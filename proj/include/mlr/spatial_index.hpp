#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

namespace mlr {

/// Uniform bucket grid over a static point set. Supports k-nearest and
/// closed-ball queries; results are deterministic (ties broken by index).
class SpatialIndex {
public:
    SpatialIndex() = default;

    SpatialIndex(std::vector<Eigen::Vector3d> points, int dim) : pts_(std::move(points)), dim_(dim) {
        if (pts_.empty()) return;
        lo_ = pts_.front();
        Eigen::Vector3d hi = lo_;
        for (const auto& p : pts_) {
            lo_ = lo_.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        const Eigen::Vector3d extent = hi - lo_;
        double volume = 1.0;
        int spanned = 0;
        for (int a = 0; a < dim_; ++a) {
            if (extent[a] > 0.0) {
                volume *= extent[a];
                ++spanned;
            }
        }
        const double n = static_cast<double>(pts_.size());
        bucket_ = spanned > 0 ? std::pow(volume / n, 1.0 / spanned) : 1.0;
        if (!(bucket_ > 0.0) || !std::isfinite(bucket_)) bucket_ = std::max(extent.maxCoeff(), 1.0);
        std::size_t total = 1;
        for (int a = 0; a < 3; ++a) {
            counts_[a] = a < dim_ ? static_cast<long>(std::floor(extent[a] / bucket_)) + 1 : 1;
            total *= static_cast<std::size_t>(counts_[a]);
        }
        start_.assign(total + 1, 0);
        std::vector<std::size_t> cell_of(pts_.size());
        for (std::size_t i = 0; i < pts_.size(); ++i) {
            cell_of[i] = linear(clamped_cell(pts_[i]));
            ++start_[cell_of[i] + 1];
        }
        for (std::size_t c = 0; c < total; ++c) start_[c + 1] += start_[c];
        items_.resize(pts_.size());
        std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
        for (std::size_t i = 0; i < pts_.size(); ++i) items_[fill[cell_of[i]]++] = i;
    }

    std::size_t size() const noexcept { return pts_.size(); }
    const Eigen::Vector3d& point(std::size_t i) const { return pts_[i]; }

    /// Indices of the k nearest points, ordered by (distance, index).
    std::vector<std::size_t> nearest(const Eigen::Vector3d& q, std::size_t k) const {
        k = std::min(k, pts_.size());
        std::vector<std::pair<double, std::size_t>> found;
        if (k == 0) return {};
        const std::array<long, 3> c = raw_cell(q);
        long r = 0;
        for (int a = 0; a < dim_; ++a) r = std::max({r, -c[a], c[a] - (counts_[a] - 1)});
        const long r_max = max_ring(c);
        for (; r <= r_max; ++r) {
            visit_ring(c, r, [&](std::size_t idx) {
                found.emplace_back((pts_[idx] - q).squaredNorm(), idx);
            });
            if (found.size() >= k) {
                std::nth_element(found.begin(), found.begin() + static_cast<long>(k) - 1, found.end());
                const double reach = static_cast<double>(r) * bucket_;
                if (found[k - 1].first <= reach * reach) break;
            }
        }
        std::sort(found.begin(), found.end());
        found.resize(k);
        std::vector<std::size_t> out;
        out.reserve(k);
        for (const auto& f : found) out.push_back(f.second);
        return out;
    }

    /// Indices of all points with |p - q| <= radius (ascending index order).
    std::vector<std::size_t> within(const Eigen::Vector3d& q, double radius) const {
        std::vector<std::size_t> out;
        if (pts_.empty()) return out;
        std::array<long, 3> from{0, 0, 0}, to{0, 0, 0};
        for (int a = 0; a < dim_; ++a) {
            from[a] = std::max(0L, static_cast<long>(std::floor((q[a] - radius - lo_[a]) / bucket_)));
            to[a] = std::min(counts_[a] - 1, static_cast<long>(std::floor((q[a] + radius - lo_[a]) / bucket_)));
            if (from[a] > to[a]) return out;
        }
        const double r2 = radius * radius;
        for (long k = from[2]; k <= to[2]; ++k)
            for (long j = from[1]; j <= to[1]; ++j)
                for (long i = from[0]; i <= to[0]; ++i) {
                    const std::size_t cell = linear({i, j, k});
                    for (std::size_t s = start_[cell]; s < start_[cell + 1]; ++s) {
                        const std::size_t idx = items_[s];
                        if ((pts_[idx] - q).squaredNorm() <= r2) out.push_back(idx);
                    }
                }
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    std::array<long, 3> raw_cell(const Eigen::Vector3d& p) const {
        std::array<long, 3> c{0, 0, 0};
        for (int a = 0; a < dim_; ++a) c[a] = static_cast<long>(std::floor((p[a] - lo_[a]) / bucket_));
        return c;
    }

    std::array<long, 3> clamped_cell(const Eigen::Vector3d& p) const {
        auto c = raw_cell(p);
        for (int a = 0; a < 3; ++a) c[a] = std::clamp(c[a], 0L, counts_[a] - 1);
        return c;
    }

    std::size_t linear(const std::array<long, 3>& c) const {
        return static_cast<std::size_t>(c[0] + counts_[0] * (c[1] + counts_[1] * c[2]));
    }

    long max_ring(const std::array<long, 3>& c) const {
        long r = 0;
        for (int a = 0; a < dim_; ++a) r = std::max({r, std::abs(c[a]), std::abs(c[a] - (counts_[a] - 1))});
        return r;
    }

    template <typename Fn>
    void visit_ring(const std::array<long, 3>& c, long r, Fn&& fn) const {
        std::array<long, 3> from{0, 0, 0}, to{0, 0, 0};
        for (int a = 0; a < dim_; ++a) {
            from[a] = std::max(0L, c[a] - r);
            to[a] = std::min(counts_[a] - 1, c[a] + r);
            if (from[a] > to[a]) return;
        }
        for (long k = from[2]; k <= to[2]; ++k)
            for (long j = from[1]; j <= to[1]; ++j)
                for (long i = from[0]; i <= to[0]; ++i) {
                    long cheb = std::abs(i - c[0]);
                    if (dim_ > 1) cheb = std::max(cheb, std::abs(j - c[1]));
                    if (dim_ > 2) cheb = std::max(cheb, std::abs(k - c[2]));
                    if (cheb != r) continue;
                    const std::size_t cell = linear({i, j, k});
                    for (std::size_t s = start_[cell]; s < start_[cell + 1]; ++s) fn(items_[s]);
                }
    }

    std::vector<Eigen::Vector3d> pts_;
    int dim_ = 2;
    Eigen::Vector3d lo_ = Eigen::Vector3d::Zero();
    double bucket_ = 1.0;
    std::array<long, 3> counts_{1, 1, 1};
    std::vector<std::size_t> start_;
    std::vector<std::size_t> items_;
};

}  // namespace mlr
