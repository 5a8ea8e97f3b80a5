#pragma once

// Analytic ground truth for synthetic scenes: closed-form ray casts against
// colored boxes, spheres and a ground plane with flat Lambertian shading.
//
// Nothing here touches voxels, octrees or the volume renderers; the images,
// depth maps, LiDAR ranges and point clouds it produces are the reference
// the trained representation is scored against.

#include "salf/framebuffer.hpp"
#include "salf/sensors.hpp"

#include <numbers>
#include <optional>
#include <random>
#include <vector>

namespace salf {

struct BoxPrimitive {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Ones();
    Vec3 color = Vec3::Constant(0.5);
};

struct SpherePrimitive {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
    Vec3 color = Vec3::Constant(0.5);
};

/// Horizontal plane z = height facing +z.
struct PlanePrimitive {
    double height = 0.0;
    Vec3 color = Vec3::Constant(0.5);
};

/// Sensors travel on a circle around `center`, looking at `target`.
struct SyntheticTrajectory {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
    double height = 1.0;
    Vec3 target = Vec3::Zero();
    double jitter = 0.0;  ///< uniform +-jitter on the eye position
    double frame_dt = 0.1;
};

struct SyntheticSceneSpec {
    uint64_t seed = 42;
    std::vector<BoxPrimitive> boxes;
    std::vector<SpherePrimitive> spheres;
    std::optional<PlanePrimitive> ground;
    Vec3 background = Vec3::Zero();
    Vec3 light_dir = Vec3(0.3, 0.2, 1.0).normalized();
    double ambient = 0.45;
    double diffuse = 0.55;

    int frames = 40;
    int holdout_every = 5;  ///< every n-th frame is held out for testing
    SyntheticTrajectory trajectory;

    int image_width = 128;
    int image_height = 128;
    double fov_deg = 70.0;

    std::vector<double> lidar_elevations_deg;
    int lidar_steps = 360;
    double lidar_period = 0.1;
    double lidar_max_range = 100.0;

    /// Half-size of the box around each sensor position used for initialization.
    double pose_box_half = 0.1;
    /// Initialization settings that travel with the scene.
    double init_base_edge = 0.25;
    double init_margin_up = 1.5;
    double init_margin_down = 1.5;
    double init_margin_lateral = 1.0;

    void validate() const {
        if (frames < 1) throw std::invalid_argument("SyntheticSceneSpec: frames must be >= 1");
        if (holdout_every < 0) throw std::invalid_argument("SyntheticSceneSpec: holdout_every must be >= 0");
        if (image_width < 1 || image_height < 1) throw std::invalid_argument("SyntheticSceneSpec: bad image size");
        if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw std::invalid_argument("SyntheticSceneSpec: fov out of range");
        for (const auto& b : boxes)
            if (!((b.min.array() < b.max.array()).all())) throw std::invalid_argument("SyntheticSceneSpec: box min >= max");
        for (const auto& s : spheres)
            if (!(s.radius > 0.0)) throw std::invalid_argument("SyntheticSceneSpec: sphere radius must be > 0");
    }
};

/// Lit surface hit by an analytic ray.
struct SurfaceHit {
    double t = kInf;
    Vec3 normal = Vec3::UnitZ();
    Vec3 albedo = Vec3::Zero();
    bool hit() const { return std::isfinite(t); }
};

inline SurfaceHit trace_primitives(const SyntheticSceneSpec& spec, const Vec3& o, const Vec3& d,
                                   double t_min = 1e-9) {
    SurfaceHit best;
    for (const auto& b : spec.boxes) {
        const SlabHit h = intersect_box(o, d, b.min, b.max);
        if (!h.hit()) continue;
        const double t = h.t_near >= t_min ? h.t_near : h.t_far;
        if (t < t_min || t >= best.t) continue;
        const Vec3 p = o + t * d;
        // Normal of the face the hit point lies on.
        double best_gap = kInf;
        Vec3 n = Vec3::Zero();
        for (int k = 0; k < 3; ++k) {
            const double g_lo = std::abs(p[k] - b.min[k]);
            const double g_hi = std::abs(p[k] - b.max[k]);
            if (g_lo < best_gap) {
                best_gap = g_lo;
                n = -Vec3::Unit(k);
            }
            if (g_hi < best_gap) {
                best_gap = g_hi;
                n = Vec3::Unit(k);
            }
        }
        best = {t, n, b.color};
    }
    for (const auto& s : spec.spheres) {
        const Vec3 oc = o - s.center;
        const double bq = d.dot(oc);
        const double c = oc.squaredNorm() - s.radius * s.radius;
        const double disc = bq * bq - c;
        if (disc < 0.0) continue;
        const double sq = std::sqrt(disc);
        double t = -bq - sq;
        if (t < t_min) t = -bq + sq;
        if (t < t_min || t >= best.t) continue;
        best = {t, (o + t * d - s.center).normalized(), s.color};
    }
    if (spec.ground && d.z() != 0.0) {
        const double t = (spec.ground->height - o.z()) / d.z();
        if (t >= t_min && t < best.t) best = {t, Vec3::UnitZ(), spec.ground->color};
    }
    return best;
}

inline Vec3 shade_surface(const SyntheticSceneSpec& spec, const SurfaceHit& h, const Vec3& d) {
    // Two-sided: light the face the ray sees.
    const Vec3 n = h.normal.dot(d) > 0.0 ? Vec3(-h.normal) : h.normal;
    const double lambert = std::max(0.0, n.dot(spec.light_dir));
    return (h.albedo * (spec.ambient + spec.diffuse * lambert)).cwiseMax(0.0).cwiseMin(1.0);
}

struct SyntheticFrame {
    int index = 0;
    double time = 0.0;
    bool train = true;
    CameraModel camera;
    LidarModel lidar;
    Framebuffer image;           ///< rgb + depth (NaN where nothing is hit)
    std::vector<double> ranges;  ///< per gen_lidar_rays order, NaN for no return
};

struct SyntheticData {
    std::vector<SyntheticFrame> frames;
    std::vector<Vec3> points;           ///< LiDAR returns of the training frames, world frame
    std::vector<Aabb> trajectory_boxes;  ///< one box per frame around the sensor position
};

inline Framebuffer render_analytic(const SyntheticSceneSpec& spec, const CameraModel& cam, double t0) {
    const RayBatch rays = gen_sensor_rays(cam, t0);
    Framebuffer fb(cam.width, cam.height, spec.background);
    parallel_for(rays.size(), [&](std::size_t i) {
        if (!rays[i].valid) return;
        const SurfaceHit h = trace_primitives(spec, rays[i].origin, rays[i].dir);
        if (!h.hit()) return;
        fb.set_color(i, shade_surface(spec, h, rays[i].dir));
        fb.opacity[i] = 1.0;
        fb.depth[i] = h.t;
    });
    return fb;
}

inline std::vector<double> lidar_ranges_analytic(const SyntheticSceneSpec& spec, const RayBatch& rays) {
    std::vector<double> out(rays.size(), std::numeric_limits<double>::quiet_NaN());
    parallel_for(rays.size(), [&](std::size_t i) {
        const SurfaceHit h = trace_primitives(spec, rays[i].origin, rays[i].dir);
        if (h.hit() && h.t <= spec.lidar_max_range) out[i] = h.t;
    });
    return out;
}

inline CameraModel synthetic_camera(const SyntheticSceneSpec& spec, const RigidPose& pose) {
    CameraModel cam;
    cam.name = "cam";
    cam.kind = CameraKind::pinhole;
    cam.width = spec.image_width;
    cam.height = spec.image_height;
    const double f = 0.5 * spec.image_width / std::tan(0.5 * spec.fov_deg * std::numbers::pi / 180.0);
    cam.fx = cam.fy = f;
    cam.cx = 0.5 * spec.image_width;
    cam.cy = 0.5 * spec.image_height;
    cam.pose = pose;
    return cam;
}

/// Sensor poses for every frame. The seed jitters the eye positions.
inline std::vector<std::pair<RigidPose, RigidPose>> synthetic_poses(const SyntheticSceneSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> jit(-1.0, 1.0);
    std::vector<std::pair<RigidPose, RigidPose>> out;
    const auto& tr = spec.trajectory;
    for (int i = 0; i < spec.frames; ++i) {
        const double ang = 2.0 * std::numbers::pi * i / spec.frames;
        Vec3 eye = tr.center + Vec3(tr.radius * std::cos(ang), tr.radius * std::sin(ang), tr.height);
        const Vec3 j(jit(rng), jit(rng), jit(rng));
        eye += tr.jitter * j;
        const RigidPose cam_pose = look_at(eye, tr.target);
        RigidPose lidar_pose;
        lidar_pose.translation = eye;
        lidar_pose.rotation = Quat(Eigen::AngleAxisd(ang + std::numbers::pi, Vec3::UnitZ()));
        out.emplace_back(cam_pose, lidar_pose);
    }
    return out;
}

inline SyntheticData make_synthetic(const SyntheticSceneSpec& spec) {
    spec.validate();
    SyntheticData data;
    const auto poses = synthetic_poses(spec);
    for (int i = 0; i < spec.frames; ++i) {
        SyntheticFrame fr;
        fr.index = i;
        fr.time = i * spec.trajectory.frame_dt;
        fr.train = spec.holdout_every <= 0 || i % spec.holdout_every != spec.holdout_every - 1;
        fr.camera = synthetic_camera(spec, poses[i].first);
        fr.image = render_analytic(spec, fr.camera, fr.time);

        fr.lidar.name = "lidar";
        fr.lidar.pose = poses[i].second;
        fr.lidar.steps = spec.lidar_steps;
        fr.lidar.scan_period = spec.lidar_period;
        for (double e : spec.lidar_elevations_deg) fr.lidar.beam_elevations.push_back(e * std::numbers::pi / 180.0);
        if (!fr.lidar.beam_elevations.empty()) {
            const RayBatch rays = gen_lidar_rays(fr.lidar, fr.time);
            fr.ranges = lidar_ranges_analytic(spec, rays);
            if (fr.train)
                for (std::size_t k = 0; k < rays.size(); ++k)
                    if (std::isfinite(fr.ranges[k])) data.points.push_back(rays[k].at(fr.ranges[k]));
        }

        const Vec3 eye = poses[i].first.translation;
        data.trajectory_boxes.push_back({eye - Vec3::Constant(spec.pose_box_half), eye + Vec3::Constant(spec.pose_box_half)});
        data.frames.push_back(std::move(fr));
    }
    return data;
}

/// Evenly spaced beam elevations in degrees, lowest first.
inline std::vector<double> beam_fan(double lo_deg, double hi_deg, int beams) {
    std::vector<double> out;
    for (int b = 0; b < beams; ++b) out.push_back(beams == 1 ? lo_deg : lo_deg + (hi_deg - lo_deg) * b / (beams - 1));
    return out;
}

/// The standard desk-scale scene: a closed 4 m x 4 m x 2.5 m room with a table,
/// colored boxes and spheres, seen by 40 frames on a circle.
inline SyntheticSceneSpec standard_scene_spec(uint64_t seed = 42) {
    SyntheticSceneSpec s;
    s.seed = seed;
    const double t = 0.1;
    const double h = 2.5;
    s.boxes = {
        {{2.0, -2.1, -t}, {2.0 + t, 2.1, h + t}, {0.85, 0.80, 0.70}},    // +x wall
        {{-2.0 - t, -2.1, -t}, {-2.0, 2.1, h + t}, {0.60, 0.75, 0.85}},  // -x wall
        {{-2.1, 2.0, -t}, {2.1, 2.0 + t, h + t}, {0.80, 0.70, 0.80}},    // +y wall
        {{-2.1, -2.0 - t, -t}, {2.1, -2.0, h + t}, {0.70, 0.85, 0.70}},  // -y wall
        {{-2.1, -2.1, h}, {2.1, 2.1, h + t}, {0.90, 0.90, 0.90}},        // ceiling
        {{-0.5, -0.4, 0.0}, {0.5, 0.4, 0.45}, {0.55, 0.35, 0.20}},       // table
        {{-0.3, -0.2, 0.45}, {0.0, 0.1, 0.75}, {0.85, 0.20, 0.15}},      // red box on the table
        {{1.2, 1.1, 0.0}, {1.7, 1.6, 0.6}, {0.20, 0.35, 0.80}},          // blue crate
        {{-1.7, 0.9, 0.0}, {-1.2, 1.7, 1.0}, {0.90, 0.75, 0.20}},        // yellow cabinet
    };
    s.spheres = {
        {{0.25, 0.1, 0.65}, 0.2, {0.20, 0.75, 0.30}},
        {{1.2, -1.3, 0.35}, 0.35, {0.75, 0.30, 0.70}},
    };
    s.ground = PlanePrimitive{0.0, {0.50, 0.45, 0.40}};
    s.trajectory.center = Vec3::Zero();
    s.trajectory.radius = 1.1;
    s.trajectory.height = 1.3;
    s.trajectory.target = Vec3(0.0, 0.0, 0.6);
    s.trajectory.jitter = 0.05;
    // Steep down-looking beams: the rig sits 1.3 m up, and init keeps only
    // voxels that LiDAR points fall in, so the floor near the table must be hit.
    s.lidar_elevations_deg = beam_fan(-70.0, 20.0, 32);
    return s;
}

}  // namespace salf
