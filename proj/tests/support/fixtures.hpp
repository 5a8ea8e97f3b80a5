#pragma once

// Test-side oracles and scene builders. Nothing here reuses the octree or
// renderer code paths it is used to check.

#include "salf/salf.hpp"

#include <functional>
#include <random>
#include <vector>

namespace salf::testing {

/// Random non-nesting voxels on a `levels`-level grid over [-2, 2]^3.
inline SparseVoxelSet random_voxel_set(std::mt19937_64& rng, std::size_t count, int levels = 3,
                                       double base_edge = 0.5) {
    SceneBounds b;
    b.aabb_min = Vec3::Constant(-2.0);
    b.aabb_max = Vec3::Constant(2.0);
    b.base_edge = base_edge;
    b.max_levels = levels;
    SparseVoxelSet set(b);
    std::uniform_int_distribution<int> lvl(0, levels - 1);
    const auto dims = b.base_dims();
    std::size_t attempts = 0;
    while (set.size() < count && attempts++ < 200 * count) {
        const int l = lvl(rng);
        std::array<int32_t, 3> ijk{};
        for (int k = 0; k < 3; ++k) ijk[k] = std::uniform_int_distribution<int32_t>(0, (dims[k] << l) - 1)(rng);
        try {
            set.add(l, ijk, random_field_params(rng, 1.0, 0.2));
        } catch (const std::invalid_argument&) {
        }
    }
    return set;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v(n(rng), n(rng), n(rng));
    while (v.norm() < 1e-6) v = Vec3(n(rng), n(rng), n(rng));
    return v.normalized();
}

/// Independent reference for march: intersect every voxel box (built from
/// level/ijk directly) and sort by entry distance.
inline std::vector<RaySegment> brute_force_segments(const SparseVoxelSet& set, const Vec3& o, const Vec3& d) {
    std::vector<RaySegment> out;
    const SceneBounds& b = set.bounds();
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& g = set.geom(i);
        const double e = b.base_edge / static_cast<double>(1 << g.level);
        Vec3 lo, hi;
        for (int k = 0; k < 3; ++k) {
            lo[k] = b.aabb_min[k] + g.ijk[k] * e;
            hi[k] = lo[k] + e;
        }
        double t0 = -kInf, t1 = kInf;
        bool miss = false;
        for (int k = 0; k < 3 && !miss; ++k) {
            if (d[k] == 0.0) {
                miss = o[k] < lo[k] || o[k] > hi[k];
                continue;
            }
            double a = (lo[k] - o[k]) / d[k];
            double c = (hi[k] - o[k]) / d[k];
            if (a > c) std::swap(a, c);
            t0 = std::max(t0, a);
            t1 = std::min(t1, c);
        }
        if (miss) continue;
        t0 = std::max(t0, 0.0);
        if (t1 > t0) out.push_back({static_cast<int32_t>(i), t0, t1, o + 0.5 * (t0 + t1) * d});
    }
    std::sort(out.begin(), out.end(), [](const RaySegment& x, const RaySegment& y) { return x.t_entry < y.t_entry; });
    return out;
}

/// Scalar front-to-back compositing of (alpha, color, t_mid) triples.
struct ReferenceComposite {
    Vec3 color = Vec3::Zero();
    double transmittance = 1.0;
    double weight_sum = 0.0;
    std::optional<double> depth;
};

inline ReferenceComposite reference_composite(const std::vector<double>& alpha, const std::vector<Vec3>& color,
                                              const std::vector<double>& t_mid, const Vec3& background) {
    ReferenceComposite r;
    double wt = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        double t = 1.0;
        for (std::size_t j = 0; j < i; ++j) t *= 1.0 - alpha[j];
        const double w = t * alpha[i];
        r.color += w * color[i];
        r.weight_sum += w;
        wt += w * t_mid[i];
    }
    for (double a : alpha) r.transmittance *= 1.0 - a;
    r.color += r.transmittance * background;
    if (r.weight_sum > 0.5) r.depth = wt / r.weight_sum;
    return r;
}

// ---------------------------------------------------------------------------
// Baked analytic scenes: voxel fields fitted to an analytic signed distance
// and color, for renderer comparisons.
// ---------------------------------------------------------------------------

struct AnalyticShape {
    enum Kind { box, sphere } kind = box;
    Vec3 a = Vec3::Zero();  ///< box min or sphere center
    Vec3 b = Vec3::Ones();  ///< box max; b.x() is the sphere radius
    Vec3 color = Vec3::Constant(0.5);

    /// Signed distance, positive inside.
    double inside_distance(const Vec3& p) const {
        if (kind == sphere) return b.x() - (p - a).norm();
        const Vec3 c = 0.5 * (a + b);
        const Vec3 h = 0.5 * (b - a);
        const Vec3 q = (p - c).cwiseAbs() - h;
        const double outside = q.cwiseMax(0.0).norm();
        const double inside = std::min(q.maxCoeff(), 0.0);
        return -(outside + inside);
    }
};

inline double logit(double c) {
    c = std::clamp(c, 1e-4, 1.0 - 1e-4);
    return std::log(c / (1.0 - c));
}

/// Voxelizes the union of shapes at `level`; voxels farther than one edge
/// from every surface and outside all shapes are left empty.
inline Scene bake_scene(const std::vector<AnalyticShape>& shapes, const SceneBounds& bounds, int level,
                        double sharpness = 40.0, double a = 60.0) {
    Scene scene;
    scene.static_voxels = SparseVoxelSet(bounds);
    const auto dims = bounds.base_dims();
    const double e = bounds.edge_at(level);
    const int32_t nx = dims[0] << level, ny = dims[1] << level, nz = dims[2] << level;
    for (int32_t z = 0; z < nz; ++z)
        for (int32_t y = 0; y < ny; ++y)
            for (int32_t x = 0; x < nx; ++x) {
                const VoxelGeom g = make_voxel_geom(bounds, level, {x, y, z});
                double best = -kInf;
                const AnalyticShape* shape = nullptr;
                for (const auto& s : shapes) {
                    const double d = s.inside_distance(g.center);
                    if (d > best) {
                        best = d;
                        shape = &s;
                    }
                }
                if (!shape || best < -0.9 * e) continue;
                // Linear fit of the SDF around the center by central differences.
                const double h = 0.25 * e;
                Vec3 grad;
                for (int k = 0; k < 3; ++k) {
                    Vec3 dp = Vec3::Zero();
                    dp[k] = h;
                    grad[k] = (shape->inside_distance(g.center + dp) - shape->inside_distance(g.center - dp)) / (2 * h);
                }
                VoxelParams p = VoxelParams::with_shape(a, 0.5);
                for (int k = 0; k < 3; ++k) p.w_s(k) = sharpness * grad[k] * 0.5 * e;
                p.w_s(3) = sharpness * best;
                for (int r = 0; r < 3; ++r) p.w_sh(r, 0) = logit(shape->color[r]) / kShC0;
                scene.static_voxels.add(level, {x, y, z}, p);
            }
    return scene;
}

/// Five small desk scenes used by the renderer-consistency checks.
inline std::vector<std::vector<AnalyticShape>> consistency_scenes() {
    using S = AnalyticShape;
    return {
        {{S::box, {-0.6, -0.6, -0.6}, {0.6, 0.6, 0.6}, {0.9, 0.2, 0.2}}},
        {{S::sphere, {0.0, 0.0, 0.0}, {0.8, 0, 0}, {0.2, 0.8, 0.3}}},
        {{S::box, {-1.0, -0.3, -0.3}, {0.0, 0.3, 0.3}, {0.2, 0.3, 0.9}},
         {S::sphere, {0.5, 0.2, 0.0}, {0.5, 0, 0}, {0.9, 0.9, 0.2}}},
        {{S::box, {-1.2, -1.2, -1.0}, {1.2, 1.2, -0.8}, {0.6, 0.6, 0.6}},
         {S::box, {-0.4, -0.4, -0.8}, {0.4, 0.4, 0.2}, {0.8, 0.4, 0.1}},
         {S::sphere, {0.0, 0.0, 0.6}, {0.4, 0, 0}, {0.3, 0.3, 0.9}}},
        {{S::sphere, {-0.6, -0.5, 0.0}, {0.35, 0, 0}, {0.9, 0.1, 0.6}},
         {S::sphere, {0.6, 0.5, 0.2}, {0.45, 0, 0}, {0.1, 0.7, 0.7}},
         {S::box, {-0.3, 0.3, -0.6}, {0.3, 0.9, 0.0}, {0.7, 0.7, 0.2}}},
    };
}

inline SceneBounds unit_bounds(double half = 1.6, double base_edge = 0.4, int levels = 3) {
    SceneBounds b;
    b.aabb_min = Vec3::Constant(-half);
    b.aabb_max = Vec3::Constant(half);
    b.base_edge = base_edge;
    b.max_levels = levels;
    return b;
}

inline CameraModel orbit_camera(int width, int height, double angle, double radius = 4.0, double fov_deg = 50.0) {
    CameraModel cam;
    cam.name = "orbit";
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    const Vec3 eye(radius * std::cos(angle), radius * std::sin(angle), 0.35 * radius);
    cam.pose = look_at(eye, Vec3::Zero());
    return cam;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central difference of f with respect to one parameter slot.
inline double central_difference(const std::function<double()>& f, double& slot, double h = 1e-4) {
    const double saved = slot;
    slot = saved + h;
    const double up = f();
    slot = saved - h;
    const double down = f();
    slot = saved;
    return (up - down) / (2.0 * h);
}

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// A small fixture: `count` voxels in a 3-level grid with random fields and
/// random, well-conditioned shape parameters.
inline Scene gradient_fixture(uint64_t seed, std::size_t count = 10, DensityMode mode = DensityMode::sdf) {
    std::mt19937_64 rng(seed);
    SceneBounds b;
    b.aabb_min = Vec3::Constant(-1.0);
    b.aabb_max = Vec3::Constant(1.0);
    b.base_edge = 1.0;
    b.max_levels = 3;
    Scene scene;
    scene.mode = mode;
    scene.static_voxels = SparseVoxelSet(b);
    std::uniform_real_distribution<double> la(std::log(1.0), std::log(4.0));
    std::uniform_real_distribution<double> lb(std::log(0.2), std::log(0.8));
    // A block of level-1 voxels near the center, one split.
    std::vector<std::array<int32_t, 3>> cells;
    for (int32_t z = 0; z < 4; ++z)
        for (int32_t y = 0; y < 4; ++y)
            for (int32_t x = 0; x < 4; ++x) cells.push_back({x, y, z});
    std::shuffle(cells.begin(), cells.end(), rng);
    for (const auto& c : cells) {
        if (scene.static_voxels.size() >= count) break;
        VoxelParams p = random_field_params(rng, 1.0, 1.0);
        p.log_a() = la(rng);
        p.log_b() = lb(rng);
        if (mode == DensityMode::raw) p.w_s(3) -= 0.5;
        scene.static_voxels.add(1, c, p);
    }
    return scene;
}

inline RayBatch fixture_rays(uint64_t seed, std::size_t count) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.6, 0.6);
    RayBatch rays;
    for (std::size_t i = 0; i < count; ++i) {
        Ray r;
        const Vec3 from = 2.5 * random_unit(rng);
        const Vec3 to(u(rng), u(rng), u(rng));
        r.origin = from;
        r.dir = (to - from).normalized();
        rays.push_back(r);
    }
    return rays;
}

}  // namespace salf::testing
