#pragma once

// Volume integration along rays over the composed scene: the static octree
// plus one octree per dynamic actor, merged front to back by segment entry.

#include "salf/framebuffer.hpp"
#include "salf/octree.hpp"
#include "salf/scene.hpp"
#include "salf/sensors.hpp"

#include <optional>
#include <vector>

namespace salf {

inline constexpr int32_t kStaticOwner = -1;

struct RenderOptions {
    Vec3 background = Vec3::Zero();
    double termination_opacity = 0.99;
    bool early_termination = true;
    double t_max = kInf;
};

/// One composited ray/voxel segment, with everything the backward pass needs.
struct SegmentSample {
    int32_t voxel = -1;
    int32_t owner = kStaticOwner;  ///< kStaticOwner or actor index
    double t_entry = 0.0;
    double t_exit = 0.0;
    Vec3 local = Vec3::Zero();  ///< midpoint in voxel-local coordinates
    Vec3 omega = Vec3::UnitZ();  ///< view direction in the voxel frame
    double sdf = 0.0;            ///< W_s [x, 1] (log-density in raw mode)
    double sigma = 0.0;
    double alpha = 0.0;
    Vec3 color = Vec3::Zero();
    double transmittance = 1.0;  ///< T before this segment

    double delta() const { return t_exit - t_entry; }
    double t_mid() const { return 0.5 * (t_entry + t_exit); }
    double weight() const { return transmittance * alpha; }
};

struct RenderRecord {
    std::vector<SegmentSample> segments;
    Vec3 color = Vec3::Zero();
    Vec3 background = Vec3::Zero();
    double opacity = 0.0;
    double final_transmittance = 1.0;
    double weight_sum = 0.0;
    std::optional<double> depth;
};

/// Front-to-back compositing shared by both renderers.
struct Compositor {
    double transmittance = 1.0;
    Vec3 color = Vec3::Zero();
    double weight_sum = 0.0;
    double weighted_t = 0.0;
    double termination_opacity = 0.99;
    bool early_termination = true;

    /// Returns false once accumulated opacity reaches the termination level.
    bool add(double alpha, const Vec3& c, double t_mid) {
        const double w = transmittance * alpha;
        color += w * c;
        weight_sum += w;
        weighted_t += w * t_mid;
        transmittance *= 1.0 - alpha;
        return !early_termination || 1.0 - transmittance < termination_opacity;
    }

    /// Weight-normalized mean segment midpoint; no return unless the weights
    /// exceed one half.
    std::optional<double> depth() const {
        if (weight_sum > 0.5) return weighted_t / weight_sum;
        return std::nullopt;
    }
};

inline std::optional<double> render_depth(const RenderRecord& record) {
    double wsum = 0.0;
    double wt = 0.0;
    for (const auto& s : record.segments) {
        wsum += s.weight();
        wt += s.weight() * s.t_mid();
    }
    if (wsum > 0.5) return wt / wsum;
    return std::nullopt;
}

/// Evaluates the voxel's fields at the midpoint of [t0, t1] along o + t d,
/// with o and d in the voxel set's frame.
inline SegmentSample shade_segment(const VoxelGeom& g, const VoxelParams& p, DensityMode mode, const Vec3& o,
                                   const Vec3& d, double t0, double t1) {
    SegmentSample s;
    s.t_entry = t0;
    s.t_exit = t1;
    s.local = world_to_local(o + (0.5 * (t0 + t1)) * d, g);
    s.omega = g.axis_aligned() ? d : Vec3(g.rotation.conjugate() * d);
    s.sdf = eval_sdf(s.local, p);
    s.sigma = mode == DensityMode::raw ? std::exp(s.sdf) : sdf_to_density(s.sdf, p.a(), p.b());
    s.alpha = segment_opacity(s.sigma, t1 - t0);
    s.color = eval_color(s.local, s.omega, p);
    return s;
}

// ---------------------------------------------------------------------------
// Octrees and traversal planning
// ---------------------------------------------------------------------------

struct SceneOctrees {
    OctreeBuffer static_tree;
    std::vector<OctreeBuffer> actor_trees;
};

inline SceneOctrees build_octrees(const Scene& scene) {
    SceneOctrees t;
    t.static_tree = build_octree(scene.static_voxels);
    for (const auto& a : scene.actors) t.actor_trees.push_back(build_octree(a.voxels));
    return t;
}

/// One interval of the ray owned by an octree. The static interval spans the
/// whole ray; actor intervals are the ray's passage through the actor box.
struct TraversalInterval {
    int32_t owner = kStaticOwner;
    double t_entry = 0.0;
    double t_exit = kInf;
    RigidPose pose;            ///< actor canonical frame -> world at ray time
    Vec3 origin = Vec3::Zero();  ///< ray in the owner's frame
    Vec3 dir = Vec3::UnitZ();
};

/// Static interval first, then actor intervals sorted by entry distance.
/// Actors whose trajectory does not cover the ray timestamp are absent.
inline std::vector<TraversalInterval> compose_actor_traversal(const Scene& scene, const Ray& ray) {
    std::vector<TraversalInterval> plan;
    plan.push_back({kStaticOwner, 0.0, kInf, RigidPose{}, ray.origin, ray.dir});
    std::vector<TraversalInterval> actors;
    for (std::size_t i = 0; i < scene.actors.size(); ++i) {
        const Actor& a = scene.actors[i];
        if (!a.covers(ray.t_stamp)) continue;
        TraversalInterval iv;
        iv.owner = static_cast<int32_t>(i);
        iv.pose = actor_pose_at(a, ray.t_stamp);
        iv.origin = iv.pose.apply_inverse(ray.origin);
        iv.dir = iv.pose.rotate_inverse(ray.dir).normalized();
        const SlabHit h = intersect_box(iv.origin, iv.dir, a.box_min(), a.box_max());
        if (!h.hit() || h.t_far <= 0.0) continue;
        iv.t_entry = std::max(h.t_near, 0.0);
        iv.t_exit = h.t_far;
        actors.push_back(iv);
    }
    std::stable_sort(actors.begin(), actors.end(),
                     [](const TraversalInterval& x, const TraversalInterval& y) { return x.t_entry < y.t_entry; });
    plan.insert(plan.end(), actors.begin(), actors.end());
    return plan;
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

inline RenderRecord integrate_ray(const Scene& scene, const SceneOctrees& trees, const Ray& ray,
                                  const RenderOptions& opt = {}) {
    RenderRecord rec;
    rec.background = opt.background;
    if (!ray.valid) {
        rec.color = opt.background;
        return rec;
    }
    check_unit(ray.dir, "integrate_ray");

    const auto plan = compose_actor_traversal(scene, ray);
    std::vector<SegmentSample> actor_samples;
    for (std::size_t k = 1; k < plan.size(); ++k) {
        const auto& iv = plan[k];
        const Actor& a = scene.actors[static_cast<std::size_t>(iv.owner)];
        march_visit(trees.actor_trees[static_cast<std::size_t>(iv.owner)], iv.origin, iv.dir, opt.t_max,
                    [&](const RaySegment& seg) {
                        SegmentSample s = shade_segment(a.voxels.geom(seg.voxel), a.voxels.params(seg.voxel),
                                                        scene.mode, iv.origin, iv.dir, seg.t_entry, seg.t_exit);
                        s.voxel = seg.voxel;
                        s.owner = iv.owner;
                        actor_samples.push_back(s);
                        return true;
                    });
    }
    std::stable_sort(actor_samples.begin(), actor_samples.end(),
                     [](const SegmentSample& x, const SegmentSample& y) { return x.t_entry < y.t_entry; });

    Compositor comp;
    comp.termination_opacity = opt.termination_opacity;
    comp.early_termination = opt.early_termination;
    bool go = true;
    auto emit = [&](SegmentSample s) {
        s.transmittance = comp.transmittance;
        go = comp.add(s.alpha, s.color, s.t_mid());
        rec.segments.push_back(s);
        return go;
    };

    std::size_t next_actor = 0;
    const auto& sv = scene.static_voxels;
    march_visit(trees.static_tree, ray.origin, ray.dir, opt.t_max, [&](const RaySegment& seg) {
        while (next_actor < actor_samples.size() && actor_samples[next_actor].t_entry < seg.t_entry)
            if (!emit(actor_samples[next_actor++])) return false;
        SegmentSample s = shade_segment(sv.geom(seg.voxel), sv.params(seg.voxel), scene.mode, ray.origin, ray.dir,
                                        seg.t_entry, seg.t_exit);
        s.voxel = seg.voxel;
        s.owner = kStaticOwner;
        return emit(s);
    });
    while (go && next_actor < actor_samples.size()) emit(actor_samples[next_actor++]);

    rec.color = comp.color + comp.transmittance * opt.background;
    rec.final_transmittance = comp.transmittance;
    rec.opacity = 1.0 - comp.transmittance;
    rec.weight_sum = comp.weight_sum;
    rec.depth = comp.depth();
    return rec;
}

/// Renders a row-major batch of width x height rays.
inline Framebuffer render_rays(const Scene& scene, const SceneOctrees& trees, const RayBatch& rays, int width,
                               int height, const RenderOptions& opt = {}) {
    if (rays.size() != static_cast<std::size_t>(width) * height)
        throw std::invalid_argument("render_rays: ray count does not match image size");
    Framebuffer fb(width, height, opt.background);
    parallel_for(rays.size(), [&](std::size_t i) {
        const RenderRecord r = integrate_ray(scene, trees, rays[i], opt);
        fb.set_color(i, r.color);
        fb.opacity[i] = r.opacity;
        if (r.depth) fb.depth[i] = *r.depth;
    });
    return fb;
}

/// Camera image through the ray-casting path; supports every camera model
/// and the rolling shutter.
inline Framebuffer render_camera(const Scene& scene, const SceneOctrees& trees, const CameraModel& cam, double t0,
                                 const RenderOptions& opt = {}) {
    return render_rays(scene, trees, gen_sensor_rays(cam, t0), cam.width, cam.height, opt);
}

// ---------------------------------------------------------------------------
// Secondary effects with injected analytic spheres
// ---------------------------------------------------------------------------

enum class SphereMaterial { mirror, glass, opaque };

struct InjectedSphere {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
    SphereMaterial material = SphereMaterial::opaque;
    double ior = 1.5;
    Vec3 albedo = Vec3::Constant(0.8);

    void validate() const {
        if (!(radius > 0.0)) throw std::invalid_argument("InjectedSphere: radius must be > 0");
        if (ior < 1.0) throw std::invalid_argument("InjectedSphere: index of refraction must be >= 1");
    }
};

inline constexpr double kShadowFactor = 0.5;

struct SphereHit {
    std::size_t sphere = 0;
    double t = kInf;
    bool inside = false;  ///< the ray travels inside the sphere up to the hit
    bool hit() const { return std::isfinite(t); }
};

inline SphereHit nearest_sphere_hit(const std::vector<InjectedSphere>& spheres, const Vec3& o, const Vec3& d,
                                    double t_min = 1e-7) {
    SphereHit best;
    for (std::size_t i = 0; i < spheres.size(); ++i) {
        const Vec3 oc = o - spheres[i].center;
        const double b = d.dot(oc);
        const double c = oc.squaredNorm() - spheres[i].radius * spheres[i].radius;
        const double disc = b * b - c;
        if (disc < 0.0) continue;
        const double sq = std::sqrt(disc);
        double t = -b - sq;
        bool far_root = false;
        if (t < t_min) {
            t = -b + sq;
            far_root = true;
        }
        if (t < t_min || t >= best.t) continue;
        // Taking the far root means the ray starts inside (or on the surface
        // heading in); testing the sign of c instead is unreliable there.
        best = {i, t, far_root};
    }
    return best;
}

/// Schlick's approximation; equal indices mean no interface and no
/// reflection at any angle.
inline double schlick_reflectance(double cos_i, double n1, double n2) {
    if (n1 == n2) return 0.0;
    const double r0 = ((n1 - n2) / (n1 + n2)) * ((n1 - n2) / (n1 + n2));
    double c = cos_i;
    if (n1 > n2) {
        const double eta = n1 / n2;
        const double sin2_t = eta * eta * (1.0 - cos_i * cos_i);
        if (sin2_t >= 1.0) return 1.0;
        c = std::sqrt(1.0 - sin2_t);
    }
    return r0 + (1.0 - r0) * std::pow(1.0 - c, 5.0);
}

/// Snell refraction of unit `d` at a surface with unit normal `n` facing the
/// incoming ray. Returns nullopt on total internal reflection.
inline std::optional<Vec3> refract(const Vec3& d, const Vec3& n, double eta) {
    const double cos_i = -d.dot(n);
    const double k = 1.0 - eta * eta * (1.0 - cos_i * cos_i);
    if (k < 0.0) return std::nullopt;
    return (eta * d + (eta * cos_i - std::sqrt(k)) * n).normalized();
}

inline Vec3 reflect(const Vec3& d, const Vec3& n) { return (d - 2.0 * d.dot(n) * n).normalized(); }

namespace detail {

inline Vec3 trace_recursive(const Scene& scene, const SceneOctrees& trees, const Ray& ray,
                            const std::vector<InjectedSphere>& spheres, const Vec3& sun_dir, int bounces_left,
                            const RenderOptions& opt) {
    if (bounces_left <= 0 || spheres.empty()) return integrate_ray(scene, trees, ray, opt).color;

    const SphereHit sh = nearest_sphere_hit(spheres, ray.origin, ray.dir);
    auto continue_from = [&](const Vec3& o, const Vec3& d) {
        Ray r = ray;
        r.origin = o;
        r.dir = d;
        return trace_recursive(scene, trees, r, spheres, sun_dir, bounces_left - 1, opt);
    };

    if (sh.hit() && sh.inside) {
        // Leaving a glass sphere: no volume inside the solid.
        const InjectedSphere& s = spheres[sh.sphere];
        const Vec3 p = ray.at(sh.t);
        const Vec3 n = -(p - s.center).normalized();
        if (s.material != SphereMaterial::glass) return continue_from(p, ray.dir);
        const double cos_i = -ray.dir.dot(n);
        const double refl = schlick_reflectance(cos_i, s.ior, 1.0);
        const auto t_dir = refract(ray.dir, n, s.ior);
        Vec3 out = Vec3::Zero();
        if (refl > 0.0) out += refl * continue_from(p, reflect(ray.dir, n));
        if (t_dir && refl < 1.0) out += (1.0 - refl) * continue_from(p, *t_dir);
        return out;
    }

    const RenderRecord full = integrate_ray(scene, trees, ray, opt);
    if (!sh.hit() || (full.depth && *full.depth < sh.t)) {
        Vec3 c = full.color;
        if (full.depth) {
            const Vec3 surface = ray.at(*full.depth);
            if (nearest_sphere_hit(spheres, surface, sun_dir, 1e-6).hit()) c *= kShadowFactor;
        }
        return c;
    }

    RenderOptions front_opt = opt;
    front_opt.t_max = sh.t;
    front_opt.background = Vec3::Zero();
    const RenderRecord front = integrate_ray(scene, trees, ray, front_opt);

    const InjectedSphere& s = spheres[sh.sphere];
    const Vec3 p = ray.at(sh.t);
    const Vec3 n = (p - s.center).normalized();
    Vec3 shade;
    switch (s.material) {
        case SphereMaterial::mirror:
            shade = continue_from(p, reflect(ray.dir, n));
            break;
        case SphereMaterial::glass: {
            const double refl = schlick_reflectance(-ray.dir.dot(n), 1.0, s.ior);
            shade = Vec3::Zero();
            if (refl > 0.0) shade += refl * continue_from(p, reflect(ray.dir, n));
            if (const auto t_dir = refract(ray.dir, n, 1.0 / s.ior)) shade += (1.0 - refl) * continue_from(p, *t_dir);
            break;
        }
        case SphereMaterial::opaque:
            shade = s.albedo * (0.3 + 0.7 * std::max(0.0, n.dot(sun_dir)));
            break;
    }
    return front.color + front.final_transmittance * shade;
}

}  // namespace detail

/// Renders one ray with injected spheres: reflections, Fresnel-weighted
/// refraction and sun shadows cast by the spheres onto the volume.
inline Vec3 trace_effects(const Scene& scene, const SceneOctrees& trees, const Ray& ray,
                          const std::vector<InjectedSphere>& spheres, const Vec3& sun_dir, int max_bounces,
                          const RenderOptions& opt = {}) {
    if (max_bounces < 1) throw std::invalid_argument("trace_effects: max_bounces must be >= 1");
    check_unit(sun_dir, "trace_effects");
    for (const auto& s : spheres) s.validate();
    if (!ray.valid) return opt.background;
    return detail::trace_recursive(scene, trees, ray, spheres, sun_dir, max_bounces, opt);
}

}  // namespace salf
