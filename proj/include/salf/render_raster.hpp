#pragma once

// Tile-based voxel rasterizer for pinhole cameras.
//
// Voxels are projected, frustum-culled and binned into square tiles; each
// tile's list is sorted by camera-space center depth. Pixels then walk their
// tile's list front to back, intersecting the pixel ray with each cube to get
// the exact traversal length and midpoint, and composite exactly like the
// ray caster. Only the ordering differs (center depth vs true entry).

#include "salf/render_ray.hpp"

#include <vector>

namespace salf {

struct VoxelProjection {
    bool culled = true;
    double u_min = 0.0, u_max = 0.0, v_min = 0.0, v_max = 0.0;
    double depth = 0.0;  ///< camera-space z of the voxel center
    Vec2 center_px = Vec2::Zero();
};

inline void require_pinhole(const CameraModel& cam) {
    if (cam.kind != CameraKind::pinhole) throw std::invalid_argument("rasterizer: unsupported sensor (pinhole only)");
    if (cam.rolling_shutter && cam.readout_duration > 0.0)
        throw std::invalid_argument("rasterizer: unsupported sensor (rolling shutter)");
}

/// Bounding rectangle (continuous pixel coordinates) of the part of the cube
/// in front of the near plane.
inline VoxelProjection project_voxel(const VoxelGeom& voxel, const CameraModel& cam, double near = 0.05) {
    require_pinhole(cam);
    std::array<Vec3, 8> corners;
    for (int c = 0; c < 8; ++c) {
        const Vec3 x((c & 1) ? 1.0 : -1.0, (c & 2) ? 1.0 : -1.0, (c & 4) ? 1.0 : -1.0);
        corners[c] = cam.pose.apply_inverse(local_to_world(x, voxel));
    }
    VoxelProjection out;
    out.depth = cam.pose.apply_inverse(voxel.center).z();
    double umin = kInf, umax = -kInf, vmin = kInf, vmax = -kInf;
    bool any = false;
    auto add = [&](const Vec3& p) {
        const double u = cam.fx * p.x() / p.z() + cam.cx;
        const double v = cam.fy * p.y() / p.z() + cam.cy;
        umin = std::min(umin, u);
        umax = std::max(umax, u);
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
        any = true;
    };
    for (const Vec3& p : corners)
        if (p.z() >= near) add(p);
    // Clip the 12 cube edges against the near plane.
    for (int a = 0; a < 8; ++a) {
        for (int bit = 0; bit < 3; ++bit) {
            const int b = a | (1 << bit);
            if (b == a) continue;
            const Vec3& pa = corners[a];
            const Vec3& pb = corners[b];
            if ((pa.z() < near) != (pb.z() < near)) {
                const double s = (near - pa.z()) / (pb.z() - pa.z());
                Vec3 q = pa + s * (pb - pa);
                q.z() = near;
                add(q);
            }
        }
    }
    if (!any) return out;
    out.u_min = umin;
    out.u_max = umax;
    out.v_min = vmin;
    out.v_max = vmax;
    if (out.depth > 0.0) {
        const Vec3 pc = cam.pose.apply_inverse(voxel.center);
        out.center_px = {cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy};
    }
    out.culled = umax < 0.0 || vmax < 0.0 || umin > cam.width || vmin > cam.height;
    return out;
}

/// A voxel placed in the world frame at one timestamp.
struct FlatVoxel {
    VoxelGeom geom;
    const VoxelParams* params = nullptr;
    int32_t owner = kStaticOwner;
    int32_t voxel = -1;
};

/// Static voxels plus every actor voxel transformed by its pose at time t.
inline std::vector<FlatVoxel> flatten_scene(const Scene& scene, double t) {
    std::vector<FlatVoxel> out;
    const auto& sv = scene.static_voxels;
    out.reserve(sv.size());
    for (std::size_t i = 0; i < sv.size(); ++i)
        out.push_back({sv.geom(i), &sv.params(i), kStaticOwner, static_cast<int32_t>(i)});
    for (std::size_t a = 0; a < scene.actors.size(); ++a) {
        const Actor& actor = scene.actors[a];
        if (!actor.covers(t)) continue;
        const RigidPose pose = actor_pose_at(actor, t);
        for (std::size_t i = 0; i < actor.voxels.size(); ++i) {
            VoxelGeom g = actor.voxels.geom(i);
            g.center = pose.apply(g.center);
            g.rotation = (pose.rotation * g.rotation).normalized();
            out.push_back({g, &actor.voxels.params(i), static_cast<int32_t>(a), static_cast<int32_t>(i)});
        }
    }
    return out;
}

struct TileBin {
    int tx = 0;
    int ty = 0;
    std::vector<uint32_t> voxels;  ///< sorted by center depth, ties by index
};

struct RasterOptions {
    int tile_size = 16;
    double near = 0.05;
    RenderOptions render;
};

inline std::vector<TileBin> cull_and_bin(const std::vector<FlatVoxel>& voxels, const CameraModel& cam,
                                         const RasterOptions& opt = {}) {
    require_pinhole(cam);
    if (opt.tile_size < 1) throw std::invalid_argument("cull_and_bin: tile_size must be >= 1");
    const int ntx = (cam.width + opt.tile_size - 1) / opt.tile_size;
    const int nty = (cam.height + opt.tile_size - 1) / opt.tile_size;

    std::vector<VoxelProjection> proj(voxels.size());
    parallel_for(voxels.size(), [&](std::size_t i) { proj[i] = project_voxel(voxels[i].geom, cam, opt.near); });

    std::vector<TileBin> bins(static_cast<std::size_t>(ntx) * nty);
    for (int ty = 0; ty < nty; ++ty)
        for (int tx = 0; tx < ntx; ++tx) {
            bins[static_cast<std::size_t>(ty) * ntx + tx].tx = tx;
            bins[static_cast<std::size_t>(ty) * ntx + tx].ty = ty;
        }

    for (std::size_t i = 0; i < voxels.size(); ++i) {
        const VoxelProjection& p = proj[i];
        if (p.culled) continue;
        // Pixels whose centers (x + 0.5) fall inside the rectangle.
        const int x0 = std::max(0, static_cast<int>(std::ceil(p.u_min - 0.5)));
        const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(p.u_max - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(p.v_min - 0.5)));
        const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(p.v_max - 0.5)));
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / opt.tile_size; ty <= y1 / opt.tile_size; ++ty)
            for (int tx = x0 / opt.tile_size; tx <= x1 / opt.tile_size; ++tx)
                bins[static_cast<std::size_t>(ty) * ntx + tx].voxels.push_back(static_cast<uint32_t>(i));
    }

    parallel_for(
        bins.size(),
        [&](std::size_t b) {
            auto& list = bins[b].voxels;
            std::sort(list.begin(), list.end(), [&](uint32_t x, uint32_t y) {
                return proj[x].depth < proj[y].depth || (proj[x].depth == proj[y].depth && x < y);
            });
        },
        1);
    return bins;
}

/// Pixel-ray/voxel-cube interval, handling rotated (actor) voxels.
inline SlabHit intersect_voxel(const VoxelGeom& g, const Vec3& o, const Vec3& d) {
    if (g.axis_aligned()) return intersect_box(o, d, g.box_min(), g.box_max());
    const Quat inv = g.rotation.conjugate();
    const Vec3 half = Vec3::Constant(0.5 * g.edge);
    return intersect_box(inv * (o - g.center), inv * d, -half, half);
}

inline Framebuffer rasterize(const std::vector<FlatVoxel>& voxels, DensityMode mode, const CameraModel& cam,
                             const RasterOptions& opt = {}) {
    require_pinhole(cam);
    const auto bins = cull_and_bin(voxels, cam, opt);
    Framebuffer fb(cam.width, cam.height, opt.render.background);
    const Mat3 rot = cam.pose.rotation.toRotationMatrix();
    const Vec3 origin = cam.pose.translation;

    parallel_for(
        bins.size(),
        [&](std::size_t b) {
            const TileBin& bin = bins[b];
            // Stage this tile's voxels contiguously before the pixel loop.
            std::vector<const FlatVoxel*> staged;
            staged.reserve(bin.voxels.size());
            for (uint32_t i : bin.voxels) staged.push_back(&voxels[i]);

            const int x_begin = bin.tx * opt.tile_size;
            const int y_begin = bin.ty * opt.tile_size;
            const int x_end = std::min(cam.width, x_begin + opt.tile_size);
            const int y_end = std::min(cam.height, y_begin + opt.tile_size);
            for (int y = y_begin; y < y_end; ++y) {
                for (int x = x_begin; x < x_end; ++x) {
                    const Vec3 dc = *camera_direction(cam, x + 0.5, y + 0.5);
                    const Vec3 dir = (rot * dc).normalized();
                    const double t_near = opt.near / dc.z();
                    Compositor comp;
                    comp.termination_opacity = opt.render.termination_opacity;
                    comp.early_termination = opt.render.early_termination;
                    for (const FlatVoxel* fv : staged) {
                        const SlabHit h = intersect_voxel(fv->geom, origin, dir);
                        const double t0 = std::max(h.t_near, t_near);
                        const double t1 = std::min(h.t_far, opt.render.t_max);
                        if (!(t1 > t0)) continue;
                        const SegmentSample s = shade_segment(fv->geom, *fv->params, mode, origin, dir, t0, t1);
                        if (!comp.add(s.alpha, s.color, s.t_mid())) break;
                    }
                    const std::size_t i = fb.index(x, y);
                    fb.set_color(i, comp.color + comp.transmittance * opt.render.background);
                    fb.opacity[i] = 1.0 - comp.transmittance;
                    if (const auto d = comp.depth()) fb.depth[i] = *d;
                }
            }
        },
        1);
    return fb;
}

inline Framebuffer rasterize(const Scene& scene, const CameraModel& cam, double t, const RasterOptions& opt = {}) {
    return rasterize(flatten_scene(scene, t), scene.mode, cam, opt);
}

}  // namespace salf
