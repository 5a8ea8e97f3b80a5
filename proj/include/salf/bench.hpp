#pragma once

// Wall-clock comparisons used by `salf bench` and the performance checks:
// octree marching against intersect-everything, and ray casting against
// tile rasterization across resolutions.

#include "salf/render_raster.hpp"
#include "salf/render_ray.hpp"

#include <chrono>
#include <vector>

namespace salf {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Same camera at a new width; intrinsics scale with it and the aspect is kept.
inline CameraModel scaled_camera(const CameraModel& cam, int width) {
    CameraModel c = cam;
    const double s = static_cast<double>(width) / cam.width;
    c.width = width;
    c.height = std::max(1, static_cast<int>(std::lround(cam.height * s)));
    c.fx *= s;
    c.fy *= s;
    c.cx *= s;
    c.cy *= s;
    return c;
}

struct TraversalTiming {
    std::size_t rays = 0;        ///< rays marched through the octree
    std::size_t brute_rays = 0;  ///< rays run through the brute-force baseline
    double octree_s = 0.0;
    double brute_s = 0.0;
    std::size_t segments = 0;  ///< segment totals keep the work observable
    std::size_t brute_segments = 0;

    double octree_per_ray() const { return rays ? octree_s / rays : 0.0; }
    double brute_per_ray() const { return brute_rays ? brute_s / brute_rays : 0.0; }
    double speedup() const { return octree_per_ray() > 0.0 ? brute_per_ray() / octree_per_ray() : 0.0; }
};

/// Times traversal only (no shading). The baseline runs on every k-th ray so
/// that at most `max_brute_rays` go through it; both run single-threaded.
inline TraversalTiming time_traversal(const SparseVoxelSet& voxels, const OctreeBuffer& tree, const RayBatch& rays,
                                      std::size_t max_brute_rays = std::numeric_limits<std::size_t>::max()) {
    TraversalTiming t;
    t.rays = rays.size();
    auto t0 = std::chrono::steady_clock::now();
    for (const Ray& r : rays)
        if (r.valid) t.segments += march(tree, r).size();
    t.octree_s = seconds_since(t0);

    const std::size_t cap = std::max<std::size_t>(1, max_brute_rays);
    const std::size_t stride = rays.size() <= cap ? 1 : (rays.size() + cap - 1) / cap;
    t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < rays.size(); i += stride) {
        if (rays[i].valid) t.brute_segments += intersect_all_sorted(voxels, rays[i]).size();
        ++t.brute_rays;
    }
    t.brute_s = seconds_since(t0);
    return t;
}

struct RenderTiming {
    int width = 0;
    int height = 0;
    double ray_s = 0.0;
    double raster_s = 0.0;

    double ray_fps() const { return ray_s > 0.0 ? 1.0 / ray_s : 0.0; }
    double raster_fps() const { return raster_s > 0.0 ? 1.0 / raster_s : 0.0; }
};

/// Best of `repeats` frames for each renderer. Octree construction is not timed.
inline RenderTiming time_renderers(const Scene& scene, const SceneOctrees& trees, const CameraModel& cam, double t,
                                   int repeats = 1) {
    RenderTiming r;
    r.width = cam.width;
    r.height = cam.height;
    r.ray_s = r.raster_s = kInf;
    for (int k = 0; k < std::max(1, repeats); ++k) {
        auto t0 = std::chrono::steady_clock::now();
        const Framebuffer a = render_camera(scene, trees, cam, t);
        r.ray_s = std::min(r.ray_s, seconds_since(t0));
        t0 = std::chrono::steady_clock::now();
        const Framebuffer b = rasterize(scene, cam, t);
        r.raster_s = std::min(r.raster_s, seconds_since(t0));
    }
    return r;
}

}  // namespace salf
