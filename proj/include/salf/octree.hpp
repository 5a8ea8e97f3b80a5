#pragma once

// Linear octree buffer over a sparse voxel set, point queries and ordered ray
// marching.
//
// The buffer is a flat array of nodes rooted at index 0. Each node is one of
//   (-1, -1)        empty region
//   (offset, 0)     internal node; its 8 children sit at [offset, offset + 8)
//   (voxel_id, 1)   leaf holding a voxel index
// Child order follows compute_child_index: x + 2 (y + 2 z).

#include "salf/common.hpp"
#include "salf/scene.hpp"

#include <sstream>
#include <vector>

namespace salf {

/// Step taken past every exit point while marching.
inline constexpr double kMarchEpsilon = 1e-4;
/// Voxels thinner than this could be stepped over by the epsilon advance.
inline constexpr double kMinVoxelEdge = 64.0 * kMarchEpsilon;

struct OctreeNode {
    int32_t id_or_offset = -1;
    int8_t is_leaf = -1;

    bool empty() const { return is_leaf == -1; }
    bool leaf() const { return is_leaf == 1; }
    bool internal() const { return is_leaf == 0; }
};

struct OctreeBuffer {
    std::vector<OctreeNode> nodes;
    Vec3 root_min = Vec3::Zero();
    double root_edge = 1.0;
    /// Tree depth at which level-0 voxels sit.
    int level0_depth = 0;

    Vec3 root_max() const { return root_min + Vec3::Constant(root_edge); }
};

inline int compute_child_index(const Vec3& p_local) {
    const int ox = p_local.x() >= 0.5 ? 1 : 0;
    const int oy = p_local.y() >= 0.5 ? 1 : 0;
    const int oz = p_local.z() >= 0.5 ? 1 : 0;
    return ox + 2 * (oy + 2 * oz);
}

namespace detail {

struct BuildItem {
    int32_t voxel;
    int depth;
    std::array<int64_t, 3> cell;
};

inline void build_node(OctreeBuffer& buf, std::size_t node_index, int depth, const std::array<int64_t, 3>& cell,
                       std::vector<BuildItem>& items) {
    if (items.empty()) {
        buf.nodes[node_index] = {-1, -1};
        return;
    }
    for (const auto& it : items) {
        if (it.depth == depth) {
            if (items.size() != 1)
                throw std::invalid_argument("build_octree: overlapping or duplicate voxels at the same cell");
            buf.nodes[node_index] = {it.voxel, 1};
            return;
        }
    }

    std::array<std::vector<BuildItem>, 8> children;
    for (const auto& it : items) {
        const int shift = it.depth - (depth + 1);
        int child = 0;
        for (int k = 0; k < 3; ++k) {
            const int64_t c = it.cell[k] >> shift;
            if ((c >> 1) != cell[k]) throw std::logic_error("build_octree: voxel routed to the wrong node");
            child += static_cast<int>(c & 1) << k;
        }
        children[child].push_back(it);
    }
    items.clear();
    items.shrink_to_fit();

    const std::size_t offset = buf.nodes.size();
    if (offset > static_cast<std::size_t>(std::numeric_limits<int32_t>::max() - 8))
        throw std::length_error("build_octree: buffer exceeds 32-bit offsets");
    buf.nodes[node_index] = {static_cast<int32_t>(offset), 0};
    buf.nodes.resize(offset + 8);
    for (int c = 0; c < 8; ++c) {
        const std::array<int64_t, 3> child_cell{2 * cell[0] + (c & 1), 2 * cell[1] + ((c >> 1) & 1),
                                                2 * cell[2] + ((c >> 2) & 1)};
        build_node(buf, offset + c, depth + 1, child_cell, children[c]);
    }
}

}  // namespace detail

/// Builds the depth-first linear buffer. The root is the smallest
/// power-of-two multiple of the base edge covering the level-0 grid, so every
/// grid level nests exactly inside the octants.
inline OctreeBuffer build_octree(const SparseVoxelSet& voxels, const SceneBounds& bounds) {
    bounds.validate();
    OctreeBuffer buf;
    const auto dims = bounds.base_dims();
    const int32_t max_dim = std::max({dims[0], dims[1], dims[2]});
    int m = 0;
    while ((int64_t{1} << m) < max_dim) ++m;
    buf.root_min = bounds.aabb_min;
    buf.root_edge = std::ldexp(bounds.base_edge, m);
    buf.level0_depth = m;
    buf.nodes.resize(1);

    std::vector<detail::BuildItem> items;
    items.reserve(voxels.size());
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        const auto& g = voxels.geom(i);
        if (!bounds.in_grid(g.level, g.ijk)) throw std::out_of_range("build_octree: voxel outside bounds");
        if (bounds.edge_at(g.level) < kMinVoxelEdge)
            throw std::invalid_argument("build_octree: voxel edge below the marching minimum");
        items.push_back({static_cast<int32_t>(i), m + g.level, {g.ijk[0], g.ijk[1], g.ijk[2]}});
    }
    detail::build_node(buf, 0, 0, {0, 0, 0}, items);
    return buf;
}

inline OctreeBuffer build_octree(const SparseVoxelSet& voxels) { return build_octree(voxels, voxels.bounds()); }

struct OctreeHit {
    int32_t voxel = -1;  ///< -1 for an empty node
    Vec3 node_min = Vec3::Zero();
    double node_edge = 0.0;

    bool empty() const { return voxel < 0; }
    Vec3 node_max() const { return node_min + Vec3::Constant(node_edge); }
};

namespace detail {

/// Descent without the containment check; points marginally outside the root
/// are treated as lying on its boundary.
inline OctreeHit query_unchecked(const OctreeBuffer& buf, const Vec3& p) {
    Vec3 node_min = buf.root_min;
    double edge = buf.root_edge;
    std::size_t idx = 0;
    while (true) {
        const OctreeNode& node = buf.nodes[idx];
        if (node.empty()) return {-1, node_min, edge};
        if (node.leaf()) return {node.id_or_offset, node_min, edge};
        const Vec3 local = (p - node_min) / edge;
        const int child = compute_child_index(local);
        edge *= 0.5;
        node_min += Vec3((child & 1) * edge, ((child >> 1) & 1) * edge, ((child >> 2) & 1) * edge);
        idx = static_cast<std::size_t>(node.id_or_offset) + child;
    }
}

}  // namespace detail

inline OctreeHit query(const OctreeBuffer& buf, const Vec3& p) {
    const Vec3 lo = buf.root_min;
    const Vec3 hi = buf.root_max();
    if ((p.array() < lo.array()).any() || (p.array() > hi.array()).any())
        throw std::out_of_range("octree query: point outside the root cube");
    return detail::query_unchecked(buf, p);
}

/// Distance from a point inside a box to where the ray leaves it.
inline double ray_box_exit(const Vec3& pos, const Vec3& dir, const Vec3& box_min, const Vec3& box_max) {
    const double tol = 1e-9 * std::max(1.0, (box_max - box_min).maxCoeff());
    if ((pos.array() < box_min.array() - tol).any() || (pos.array() > box_max.array() + tol).any())
        throw std::out_of_range("ray_box_exit: position outside the box");
    double t = kInf;
    for (int k = 0; k < 3; ++k) {
        if (dir[k] > 0.0) t = std::min(t, (box_max[k] - pos[k]) / dir[k]);
        else if (dir[k] < 0.0) t = std::min(t, (box_min[k] - pos[k]) / dir[k]);
    }
    return std::max(t, 0.0);
}

struct RaySegment {
    int32_t voxel = -1;
    double t_entry = 0.0;
    double t_exit = 0.0;
    Vec3 midpoint = Vec3::Zero();

    double delta() const { return t_exit - t_entry; }
    double t_mid() const { return 0.5 * (t_entry + t_exit); }
};

inline void check_unit(const Vec3& dir, const char* who) {
    if (std::abs(dir.norm() - 1.0) > 1e-6) throw std::invalid_argument(std::string(who) + ": direction is not unit length");
}

/// Visits occupied voxels along origin + t dir in increasing t. Empty nodes
/// are skipped with one exit computation; after every exit the walk advances
/// by kMarchEpsilon. Segment bounds are the exact ray/voxel-cube intersection
/// (clamped to t >= 0 when the ray starts inside a voxel). `visit` returns
/// false to stop early.
template <class Visit>
void march_visit(const OctreeBuffer& buf, const Vec3& origin, const Vec3& dir, double t_max, Visit&& visit) {
    check_unit(dir, "march");
    const SlabHit root = intersect_box(origin, dir, buf.root_min, buf.root_max());
    if (!root.hit() || root.t_far <= 0.0) return;
    const double t_end = std::min(root.t_far, t_max);
    double t = std::max(root.t_near, 0.0);

    while (t < t_end) {
        const Vec3 pos = origin + t * dir;
        const OctreeHit hit = detail::query_unchecked(buf, pos);
        if (hit.empty()) {
            const Vec3 clamped = pos.cwiseMax(hit.node_min).cwiseMin(hit.node_max());
            t += ray_box_exit(clamped, dir, hit.node_min, hit.node_max()) + kMarchEpsilon;
            continue;
        }
        const SlabHit cube = intersect_box(origin, dir, hit.node_min, hit.node_max());
        RaySegment seg;
        seg.voxel = hit.voxel;
        seg.t_entry = std::max(cube.t_near, 0.0);
        seg.t_exit = std::min(cube.t_far, t_max);
        if (seg.t_exit > seg.t_entry) {
            seg.midpoint = origin + seg.t_mid() * dir;
            if (!visit(seg)) return;
        }
        t = std::max(cube.t_far, t) + kMarchEpsilon;
    }
}

inline std::vector<RaySegment> march(const OctreeBuffer& buf, const Ray& ray, double t_max = kInf) {
    std::vector<RaySegment> out;
    march_visit(buf, ray.origin, ray.dir, t_max, [&](const RaySegment& s) {
        out.push_back(s);
        return true;
    });
    return out;
}

/// Baseline without acceleration: intersect every voxel and sort by entry.
/// Used by the benchmark as the reference cost.
inline std::vector<RaySegment> intersect_all_sorted(const SparseVoxelSet& voxels, const Ray& ray, double t_max = kInf) {
    std::vector<RaySegment> out;
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        const auto& g = voxels.geom(i);
        const SlabHit h = intersect_box(ray.origin, ray.dir, g.box_min(), g.box_max());
        const double t0 = std::max(h.t_near, 0.0);
        const double t1 = std::min(h.t_far, t_max);
        if (t1 > t0) out.push_back({static_cast<int32_t>(i), t0, t1, ray.at(0.5 * (t0 + t1))});
    }
    std::sort(out.begin(), out.end(), [](const RaySegment& a, const RaySegment& b) {
        return a.t_entry < b.t_entry || (a.t_entry == b.t_entry && a.voxel < b.voxel);
    });
    return out;
}

/// Text table of the buffer, one "index is_leaf id_or_offset" row per node.
inline std::string dump_octree(const OctreeBuffer& buf) {
    std::ostringstream os;
    os << "# root_min " << buf.root_min.x() << ' ' << buf.root_min.y() << ' ' << buf.root_min.z() << " edge "
       << buf.root_edge << '\n';
    os << "# index is_leaf id_or_offset\n";
    for (std::size_t i = 0; i < buf.nodes.size(); ++i)
        os << i << ' ' << int(buf.nodes[i].is_leaf) << ' ' << buf.nodes[i].id_or_offset << '\n';
    return os.str();
}

}  // namespace salf
