#pragma once

// Multi-scale static initialization from sensor trajectories and LiDAR
// points.
//
// The inner region (trajectory boxes plus margins) is gridded at the base
// edge; four shells at 2x, 4x, 8x and 16x the inner extent surround it with
// voxels 2, 4, 8 and 16 times larger. Inner cells without points are
// dropped, cells with points are split once, and voxels containing points
// start nearly opaque.

#include "salf/scene.hpp"

#include <iostream>
#include <random>
#include <unordered_set>
#include <vector>

namespace salf {

struct InitConfig {
    double base_edge = 1.0;
    double margin_up = 10.0;
    double margin_down = 5.0;
    double margin_lateral = 40.0;
    /// Extra levels below the point-voxel children available to densification.
    int extra_levels = 2;
    double a_occupied = 2.0;
    double a_empty = 0.1;
    double b = 0.2;
    uint64_t seed = 0;
    DensityMode mode = DensityMode::sdf;

    void validate() const {
        if (!(base_edge > 0.0)) throw std::invalid_argument("InitConfig: base_edge must be > 0");
        if (margin_up < 0.0 || margin_down < 0.0 || margin_lateral < 0.0)
            throw std::invalid_argument("InitConfig: margins must be >= 0");
        if (extra_levels < 0) throw std::invalid_argument("InitConfig: extra_levels must be >= 0");
        if (!(a_occupied > 0.0) || !(a_empty > 0.0) || !(b > 0.0))
            throw std::invalid_argument("InitConfig: a and b must be > 0");
    }
};

inline constexpr int kShellCount = 4;

namespace detail {

inline double snap_down(double v, double step) { return std::floor(v / step + 1e-9) * step; }
inline double snap_up(double v, double step) { return std::ceil(v / step - 1e-9) * step; }

inline Aabb snap_out(const Aabb& box, double step) {
    Aabb out;
    for (int k = 0; k < 3; ++k) {
        out.min[k] = snap_down(box.min[k], step);
        out.max[k] = snap_up(box.max[k], step);
    }
    return out;
}

inline Aabb scale_about_center(const Aabb& box, double factor) {
    const Vec3 c = box.center();
    const Vec3 h = 0.5 * factor * box.extent();
    return {c - h, c + h};
}

/// Positive-volume overlap between a cell and a box.
inline bool overlaps(const Vec3& cmin, double edge, const Aabb& box) {
    for (int k = 0; k < 3; ++k)
        if (cmin[k] >= box.max[k] || cmin[k] + edge <= box.min[k]) return false;
    return true;
}

}  // namespace detail

/// Inner region before snapping: the union of trajectory boxes with z-up margins.
inline Aabb expanded_inner_region(const std::vector<Aabb>& trajectory_boxes, const InitConfig& cfg) {
    if (trajectory_boxes.empty()) throw std::invalid_argument("init_multiscale: at least one trajectory pose is required");
    Aabb inner;
    for (const auto& b : trajectory_boxes) inner.merge(b);
    inner.min -= Vec3(cfg.margin_lateral, cfg.margin_lateral, cfg.margin_down);
    inner.max += Vec3(cfg.margin_lateral, cfg.margin_lateral, cfg.margin_up);
    return inner;
}

/// Region k (0 = inner, k = 1..4 shells) after snapping. Region k is snapped
/// outward to the grid of region k + 1, so each shell is tiled exactly by
/// its own voxel size; the outermost region snaps to its own edge.
inline std::array<Aabb, kShellCount + 1> multiscale_regions(const Aabb& inner_raw, double base_edge) {
    std::array<Aabb, kShellCount + 1> regions;
    for (int k = 0; k <= kShellCount; ++k) {
        const double step = std::ldexp(base_edge, std::min(k + 1, kShellCount));
        regions[k] = detail::snap_out(detail::scale_about_center(inner_raw, std::ldexp(1.0, k)), step);
    }
    for (int k = 1; k <= kShellCount; ++k) regions[k].merge(regions[k - 1]);
    return regions;
}

inline Scene init_multiscale(const std::vector<Aabb>& trajectory_boxes, const std::vector<Vec3>& points,
                             const InitConfig& cfg, std::ostream* warnings = &std::cerr) {
    cfg.validate();
    const auto regions = multiscale_regions(expanded_inner_region(trajectory_boxes, cfg), cfg.base_edge);
    const Aabb& outer = regions[kShellCount];

    SceneBounds bounds;
    bounds.aabb_min = outer.min;
    bounds.aabb_max = outer.max;
    bounds.base_edge = std::ldexp(cfg.base_edge, kShellCount);
    // Shells at levels 0..3, inner cells at 4, point children at 5.
    bounds.max_levels = kShellCount + 2 + cfg.extra_levels;

    // Keys of every occupied cell, per level.
    std::unordered_set<VoxelKey, VoxelKeyHash> occupied;
    for (const Vec3& p : points) {
        if (!outer.contains(p)) continue;
        for (int level = 0; level <= kShellCount + 1; ++level) {
            const double e = bounds.edge_at(level);
            VoxelKey key{level, {}};
            for (int k = 0; k < 3; ++k) key.ijk[k] = static_cast<int32_t>(std::floor((p[k] - outer.min[k]) / e));
            occupied.insert(key);
        }
    }
    const bool prune_inner = !points.empty();
    if (!prune_inner && warnings)
        *warnings << "init_multiscale: empty point cloud, keeping the inner region dense\n";

    Scene scene;
    scene.mode = cfg.mode;
    scene.inner_region = regions[0];
    scene.static_voxels = SparseVoxelSet(bounds);
    std::mt19937_64 rng(cfg.seed);

    auto add = [&](int level, const std::array<int32_t, 3>& ijk) {
        const bool has_point = occupied.count({level, ijk}) > 0;
        scene.static_voxels.add(level, ijk,
                                random_field_params(rng, has_point ? cfg.a_occupied : cfg.a_empty, cfg.b));
    };

    // Depth-first refinement: a cell splits while it is coarser than the
    // finest region it overlaps.
    auto refine = [&](auto&& self, int level, const std::array<int32_t, 3>& ijk) -> void {
        const double edge = bounds.edge_at(level);
        Vec3 cmin;
        for (int k = 0; k < 3; ++k) cmin[k] = outer.min[k] + ijk[k] * edge;
        int finest = kShellCount;
        for (int k = kShellCount - 1; k >= 0; --k)
            if (detail::overlaps(cmin, edge, regions[k])) finest = k;
        const int required_level = kShellCount - finest;
        if (level < required_level) {
            for (int c = 0; c < 8; ++c)
                self(self, level + 1,
                     {2 * ijk[0] + (c & 1), 2 * ijk[1] + ((c >> 1) & 1), 2 * ijk[2] + ((c >> 2) & 1)});
            return;
        }
        if (finest > 0) {
            add(level, ijk);
            return;
        }
        if (prune_inner && !occupied.count({level, ijk})) return;
        if (!prune_inner) {
            add(level, ijk);
            return;
        }
        for (int c = 0; c < 8; ++c)
            add(level + 1, {2 * ijk[0] + (c & 1), 2 * ijk[1] + ((c >> 1) & 1), 2 * ijk[2] + ((c >> 2) & 1)});
    };

    const auto dims = bounds.base_dims();
    for (int32_t z = 0; z < dims[2]; ++z)
        for (int32_t y = 0; y < dims[1]; ++y)
            for (int32_t x = 0; x < dims[0]; ++x) refine(refine, 0, {x, y, z});
    return scene;
}

}  // namespace salf
