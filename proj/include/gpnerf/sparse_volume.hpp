#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <unordered_map>
#include <vector>

#include "gpnerf/geometry.hpp"

namespace gpnerf {

struct GridSpec {
    Vec3 origin = Vec3::Zero();
    double voxel_size = 0.025;
    std::array<int, 3> resolution = {1, 1, 1};

    void validate() const {
        if (!(voxel_size > 0.0)) throw InconsistentDims("grid: voxel size must be positive");
        for (int a = 0; a < 3; ++a)
            if (resolution[a] < 1) throw InconsistentDims("grid: resolution must be >= 1");
    }

    bool in_bounds(int ix, int iy, int iz) const {
        return ix >= 0 && iy >= 0 && iz >= 0 && ix < resolution[0] && iy < resolution[1] &&
               iz < resolution[2];
    }

    std::int64_t linear(int ix, int iy, int iz) const {
        return (static_cast<std::int64_t>(iz) * resolution[1] + iy) * resolution[0] + ix;
    }

    std::array<int, 3> delinearize(std::int64_t idx) const {
        const int ix = static_cast<int>(idx % resolution[0]);
        const std::int64_t rest = idx / resolution[0];
        const int iy = static_cast<int>(rest % resolution[1]);
        const int iz = static_cast<int>(rest / resolution[1]);
        return {ix, iy, iz};
    }

    // floor convention: a point exactly on a voxel's min corner belongs to it
    std::array<int, 3> index_of(const Vec3& p) const {
        const Vec3 g = (p - origin) / voxel_size;
        return {static_cast<int>(std::floor(g.x())), static_cast<int>(std::floor(g.y())),
                static_cast<int>(std::floor(g.z()))};
    }

    Vec3 voxel_center(int ix, int iy, int iz) const {
        return origin + voxel_size * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
    }

    // tight bounds over the given positions plus a margin measured in voxels
    static GridSpec fit(const std::vector<Vec3>& positions, double voxel_size, int margin_voxels) {
        if (positions.empty()) throw EmptyVolume("grid fit: no positions");
        GridSpec grid;
        grid.voxel_size = voxel_size;
        const Aabb box = Aabb::of_points(positions);
        grid.origin = box.min - Vec3::Constant(margin_voxels * voxel_size);
        const Vec3 span = box.max - grid.origin;
        for (int a = 0; a < 3; ++a)
            grid.resolution[a] =
                static_cast<int>(std::ceil(span[a] / voxel_size)) + margin_voxels + 1;
        grid.validate();
        return grid;
    }
};

// Densification kernel: 27 nonnegative weights addressed by neighbor offset
// (dx, dy, dz) in {-1,0,1}^3, row-major with x fastest.
using DensifyKernel = std::array<double, 27>;

inline DensifyKernel uniform_box_kernel() {
    DensifyKernel k;
    k.fill(1.0);
    return k;
}

inline int kernel_index(int dx, int dy, int dz) { return (dz + 1) * 9 + (dy + 1) * 3 + (dx + 1); }

// Sparse voxel grid with one d-vector per occupied voxel. Immutable once
// built; occupied indices are kept sorted so iteration order is stable.
struct SparseFeatureVolume {
    GridSpec grid;
    std::vector<std::int64_t> indices;  // sorted linear indices of occupied voxels
    Eigen::MatrixXd features;           // indices.size() x d

    int dim() const { return static_cast<int>(features.cols()); }
    std::size_t occupied_count() const { return indices.size(); }
    bool empty() const { return indices.empty(); }

    int row_of(std::int64_t linear_index) const {
        auto it = lookup_.find(linear_index);
        return it == lookup_.end() ? -1 : it->second;
    }

    void rebuild_lookup() {
        lookup_.clear();
        lookup_.reserve(indices.size() * 2);
        for (std::size_t i = 0; i < indices.size(); ++i)
            lookup_.emplace(indices[i], static_cast<int>(i));
    }

private:
    std::unordered_map<std::int64_t, int> lookup_;
};

// Scatter vertex features into voxels; vertices landing in one voxel are
// averaged. Positions outside the grid raise OutOfGrid with their indices.
inline SparseFeatureVolume voxelize(const std::vector<Vec3>& positions,
                                    const Eigen::MatrixXd& features, const GridSpec& grid) {
    grid.validate();
    if (static_cast<Eigen::Index>(positions.size()) != features.rows())
        throw DimensionMismatch("voxelize: position and feature counts differ");
    std::vector<std::size_t> offenders;
    std::unordered_map<std::int64_t, int> hit_count;
    for (std::size_t l = 0; l < positions.size(); ++l) {
        const auto idx = grid.index_of(positions[l]);
        if (!grid.in_bounds(idx[0], idx[1], idx[2])) {
            offenders.push_back(l);
            continue;
        }
        hit_count[grid.linear(idx[0], idx[1], idx[2])]++;
    }
    if (!offenders.empty())
        throw OutOfGrid("voxelize: vertices outside the grid", std::move(offenders));

    SparseFeatureVolume vol;
    vol.grid = grid;
    vol.indices.reserve(hit_count.size());
    for (const auto& [lin, n] : hit_count) vol.indices.push_back(lin);
    std::sort(vol.indices.begin(), vol.indices.end());
    vol.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vol.indices.size()), features.cols());
    vol.rebuild_lookup();
    for (std::size_t l = 0; l < positions.size(); ++l) {
        const auto idx = grid.index_of(positions[l]);
        const int row = vol.row_of(grid.linear(idx[0], idx[1], idx[2]));
        vol.features.row(row) += features.row(static_cast<Eigen::Index>(l));
    }
    for (std::size_t i = 0; i < vol.indices.size(); ++i)
        vol.features.row(static_cast<Eigen::Index>(i)) /= hit_count[vol.indices[i]];
    return vol;
}

// One dilation-with-averaging round: every voxel in the 3^3 neighborhood of
// an occupied voxel becomes occupied; its feature is the kernel-weighted
// average over the occupied neighbors, renormalized by the occupied mass.
inline SparseFeatureVolume densify_once(const SparseFeatureVolume& volume, const DensifyKernel& kernel) {
    bool any_positive = false;
    for (double w : kernel) {
        if (w < 0.0) throw Error("densify: kernel weights must be nonnegative");
        if (w > 0.0) any_positive = true;
    }
    if (!any_positive) throw Error("densify: kernel needs at least one positive weight");

    const GridSpec& grid = volume.grid;
    std::vector<std::int64_t> out_indices;
    out_indices.reserve(volume.indices.size() * 8);
    for (std::int64_t lin : volume.indices) {
        const auto idx = grid.delinearize(lin);
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int ix = idx[0] + dx, iy = idx[1] + dy, iz = idx[2] + dz;
                    if (grid.in_bounds(ix, iy, iz)) out_indices.push_back(grid.linear(ix, iy, iz));
                }
    }
    std::sort(out_indices.begin(), out_indices.end());
    out_indices.erase(std::unique(out_indices.begin(), out_indices.end()), out_indices.end());

    SparseFeatureVolume out;
    out.grid = grid;
    out.indices = std::move(out_indices);
    out.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out.indices.size()), volume.features.cols());
    out.rebuild_lookup();
    for (std::size_t i = 0; i < out.indices.size(); ++i) {
        const auto idx = grid.delinearize(out.indices[i]);
        double mass = 0.0;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int ix = idx[0] + dx, iy = idx[1] + dy, iz = idx[2] + dz;
                    if (!grid.in_bounds(ix, iy, iz)) continue;
                    const int row = volume.row_of(grid.linear(ix, iy, iz));
                    if (row < 0) continue;
                    const double w = kernel[kernel_index(dx, dy, dz)];
                    if (w <= 0.0) continue;
                    out.features.row(static_cast<Eigen::Index>(i)) += w * volume.features.row(row);
                    mass += w;
                }
        if (mass > 0.0) out.features.row(static_cast<Eigen::Index>(i)) /= mass;
    }
    return out;
}

inline SparseFeatureVolume densify(const SparseFeatureVolume& volume, int rounds,
                                   const DensifyKernel& kernel) {
    if (rounds < 0) throw InvalidInterval("densify: rounds must be >= 0");
    SparseFeatureVolume out = volume;
    for (int r = 0; r < rounds; ++r) out = densify_once(out, kernel);
    return out;
}

inline bool query_occupancy(const SparseFeatureVolume& volume, const Vec3& point) {
    const auto idx = volume.grid.index_of(point);
    if (!volume.grid.in_bounds(idx[0], idx[1], idx[2])) return false;
    return volume.row_of(volume.grid.linear(idx[0], idx[1], idx[2])) >= 0;
}

// Trilinear interpolation over the lattice of voxel centers. Unoccupied
// lattice nodes get zero weight and the rest is renormalized; with no
// occupied node the result is the zero vector. `out` holds dim() doubles.
inline void sample_feature_into(const SparseFeatureVolume& volume, const Vec3& point, double* out) {
    const GridSpec& grid = volume.grid;
    const int d = volume.dim();
    for (int c = 0; c < d; ++c) out[c] = 0.0;
    const Vec3 g = (point - grid.origin) / grid.voxel_size - Vec3::Constant(0.5);
    const int ix = static_cast<int>(std::floor(g.x()));
    const int iy = static_cast<int>(std::floor(g.y()));
    const int iz = static_cast<int>(std::floor(g.z()));
    const double fx = g.x() - ix, fy = g.y() - iy, fz = g.z() - iz;
    double mass = 0.0;
    for (int cz = 0; cz <= 1; ++cz)
        for (int cy = 0; cy <= 1; ++cy)
            for (int cx = 0; cx <= 1; ++cx) {
                const int nx = ix + cx, ny = iy + cy, nz = iz + cz;
                if (!grid.in_bounds(nx, ny, nz)) continue;
                const int row = volume.row_of(grid.linear(nx, ny, nz));
                if (row < 0) continue;
                const double w = (cx ? fx : 1.0 - fx) * (cy ? fy : 1.0 - fy) * (cz ? fz : 1.0 - fz);
                if (w <= 0.0) continue;
                const auto feat = volume.features.row(row);
                for (int c = 0; c < d; ++c) out[c] += w * feat[c];
                mass += w;
            }
    if (mass > 0.0)
        for (int c = 0; c < d; ++c) out[c] /= mass;
    else
        for (int c = 0; c < d; ++c) out[c] = 0.0;
}

inline Eigen::VectorXd sample_feature(const SparseFeatureVolume& volume, const Vec3& point) {
    Eigen::VectorXd out(volume.dim());
    sample_feature_into(volume, point, out.data());
    return out;
}

// World-space bounds of the occupied set, padded by one voxel per side.
inline Aabb occupied_aabb(const SparseFeatureVolume& volume) {
    if (volume.empty()) throw EmptyVolume("occupied_aabb: volume has no occupied voxel");
    std::array<int, 3> lo = {INT32_MAX, INT32_MAX, INT32_MAX};
    std::array<int, 3> hi = {INT32_MIN, INT32_MIN, INT32_MIN};
    for (std::int64_t lin : volume.indices) {
        const auto idx = volume.grid.delinearize(lin);
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], idx[a]);
            hi[a] = std::max(hi[a], idx[a]);
        }
    }
    Aabb box;
    const double s = volume.grid.voxel_size;
    for (int a = 0; a < 3; ++a) {
        box.min[a] = volume.grid.origin[a] + (lo[a] - 1) * s;
        box.max[a] = volume.grid.origin[a] + (hi[a] + 2) * s;
    }
    return box;
}

// Point-cloud export: with density samples, the points whose sigma is
// strictly positive; without, the occupied voxel centers.
inline std::vector<Vec3> export_occupied_points(
    const SparseFeatureVolume& volume,
    const std::optional<std::vector<std::pair<Vec3, double>>>& density_samples = std::nullopt) {
    std::vector<Vec3> points;
    if (density_samples) {
        points.reserve(density_samples->size());
        for (const auto& [p, sigma] : *density_samples)
            if (sigma > 0.0) points.push_back(p);
        return points;
    }
    points.reserve(volume.indices.size());
    for (std::int64_t lin : volume.indices) {
        const auto idx = volume.grid.delinearize(lin);
        points.push_back(volume.grid.voxel_center(idx[0], idx[1], idx[2]));
    }
    return points;
}

// Debug dump, one "x y z" line per point.
inline void dump_points_ascii(std::ostream& os, const std::vector<Vec3>& points) {
    for (const Vec3& p : points) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

}  // namespace gpnerf
