#pragma once

// Ray generation for pinhole, fisheye and equirectangular cameras and for
// spinning LiDARs, with optional rolling-shutter / ego-motion.
//
// Camera frame: x right, y down, z forward. LiDAR frame: x forward, z up,
// azimuth counter-clockwise from +x. Poses map sensor frame -> world at the
// start of the exposure / sweep.

#include "salf/common.hpp"

#include <array>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace salf {

using RayBatch = std::vector<Ray>;

enum class CameraKind { pinhole, fisheye, equirect };

struct CameraModel {
    std::string name;
    CameraKind kind = CameraKind::pinhole;
    int width = 1;
    int height = 1;
    double fx = 1.0, fy = 1.0, cx = 0.5, cy = 0.5;
    /// Equidistant polynomial coefficients k1..k4 (fisheye only).
    std::array<double, 4> k{};
    RigidPose pose;
    bool rolling_shutter = false;
    double readout_duration = 0.0;
    Vec3 linear_velocity = Vec3::Zero();
    Vec3 angular_velocity = Vec3::Zero();

    void validate() const {
        if (width < 1 || height < 1) throw std::invalid_argument("CameraModel '" + name + "': width/height must be >= 1");
        if (readout_duration < 0.0) throw std::invalid_argument("CameraModel '" + name + "': readout_duration < 0");
        if (kind != CameraKind::equirect && (!(fx > 0.0) || !(fy > 0.0)))
            throw std::invalid_argument("CameraModel '" + name + "': focal lengths must be > 0");
    }
};

struct LidarModel {
    std::string name;
    std::vector<double> beam_elevations;
    double azimuth_start = -std::numbers::pi;
    double azimuth_end = std::numbers::pi;
    int steps = 1;
    double scan_period = 0.1;
    RigidPose pose;
    Vec3 linear_velocity = Vec3::Zero();
    Vec3 angular_velocity = Vec3::Zero();

    void validate() const {
        if (steps < 1) throw std::invalid_argument("LidarModel '" + name + "': steps must be >= 1");
        if (!(scan_period > 0.0)) throw std::invalid_argument("LidarModel '" + name + "': scan_period must be > 0");
        if (beam_elevations.empty()) throw std::invalid_argument("LidarModel '" + name + "': no beams");
    }
};

/// Pose looking from `eye` at `target` in the camera convention above.
inline RigidPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ()) {
    const Vec3 fwd = (target - eye).normalized();
    Vec3 right = fwd.cross(up);
    if (right.norm() < 1e-9) right = fwd.cross(Vec3::UnitX());
    right.normalize();
    const Vec3 down = fwd.cross(right);
    Mat3 r;
    r.col(0) = right;
    r.col(1) = down;
    r.col(2) = fwd;
    RigidPose p;
    p.rotation = Quat(r).normalized();
    p.translation = eye;
    return p;
}

// ---------------------------------------------------------------------------
// Lens models
// ---------------------------------------------------------------------------

inline double fisheye_distort(double theta, const std::array<double, 4>& k) {
    const double t2 = theta * theta;
    return theta * (1.0 + t2 * (k[0] + t2 * (k[1] + t2 * (k[2] + t2 * k[3]))));
}

/// Largest polar angle up to which the distortion polynomial is increasing.
inline double fisheye_max_theta(const std::array<double, 4>& k) {
    constexpr int kSteps = 2048;
    const double hi = std::numbers::pi;
    double prev = fisheye_distort(0.0, k);
    for (int i = 1; i <= kSteps; ++i) {
        const double th = hi * i / kSteps;
        const double cur = fisheye_distort(th, k);
        if (cur <= prev) return hi * (i - 1) / kSteps;
        prev = cur;
    }
    return hi;
}

/// Inverts theta_d = theta (1 + k1 theta^2 + ... + k4 theta^8) by bisection.
/// Returns nullopt when theta_d is beyond the monotone range.
/// `theta_max` may carry a cached fisheye_max_theta(k).
inline std::optional<double> fisheye_undistort(double theta_d, const std::array<double, 4>& k,
                                               double theta_max = -1.0) {
    if (theta_d < 0.0) return std::nullopt;
    if (theta_d == 0.0) return 0.0;
    double lo = 0.0;
    double hi = theta_max >= 0.0 ? theta_max : fisheye_max_theta(k);
    if (fisheye_distort(hi, k) < theta_d) return std::nullopt;
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        if (fisheye_distort(mid, k) < theta_d) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Equirect mapping of continuous image coordinates: u spans azimuth
/// [-pi, pi) left to right, v spans elevation pi/2 .. -pi/2 top to bottom.
inline Vec3 equirect_direction(double u, double v, int width, int height) {
    const double az = (u / width - 0.5) * 2.0 * std::numbers::pi;
    const double el = (0.5 - v / height) * std::numbers::pi;
    return {std::cos(el) * std::sin(az), -std::sin(el), std::cos(el) * std::cos(az)};
}

/// Camera-frame direction through continuous image point (u, v); pixel
/// (i, j) has its center at (i + 0.5, j + 0.5).
inline std::optional<Vec3> camera_direction(const CameraModel& cam, double u, double v,
                                            double fisheye_theta_max = -1.0) {
    switch (cam.kind) {
        case CameraKind::pinhole:
            return Vec3((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0).normalized();
        case CameraKind::fisheye: {
            const double mx = (u - cam.cx) / cam.fx;
            const double my = (v - cam.cy) / cam.fy;
            const double r = std::hypot(mx, my);
            if (r == 0.0) return Vec3::UnitZ();
            const auto theta = fisheye_undistort(r, cam.k, fisheye_theta_max);
            if (!theta) return std::nullopt;
            const double s = std::sin(*theta) / r;
            return Vec3(s * mx, s * my, std::cos(*theta)).normalized();
        }
        case CameraKind::equirect:
            return equirect_direction(u, v, cam.width, cam.height);
    }
    return std::nullopt;
}

/// Pinhole projection of a world point to continuous pixel coordinates.
inline std::optional<Vec2> project_pinhole(const CameraModel& cam, const Vec3& p_world) {
    const Vec3 pc = cam.pose.apply_inverse(p_world);
    if (pc.z() <= 0.0) return std::nullopt;
    return Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
}

// ---------------------------------------------------------------------------
// Ray batches
// ---------------------------------------------------------------------------

/// Global-shutter rays for every pixel, row-major.
inline RayBatch gen_camera_rays(const CameraModel& cam, double t0) {
    cam.validate();
    RayBatch out(static_cast<std::size_t>(cam.width) * cam.height);
    const Mat3 rot = cam.pose.rotation.toRotationMatrix();
    const double theta_max = cam.kind == CameraKind::fisheye ? fisheye_max_theta(cam.k) : -1.0;
    for (int v = 0; v < cam.height; ++v) {
        for (int u = 0; u < cam.width; ++u) {
            Ray& r = out[static_cast<std::size_t>(v) * cam.width + u];
            r.origin = cam.pose.translation;
            r.t_stamp = t0;
            r.row = v;
            r.col = u;
            const auto d = camera_direction(cam, u + 0.5, v + 0.5, theta_max);
            if (!d) {
                r.valid = false;
                r.dir = rot.col(2);
                continue;
            }
            r.dir = (rot * *d).normalized();
        }
    }
    return out;
}

/// First-order rigid motion of a sensor ray over dt: translate the origin by
/// v dt and rotate the direction by the angle-axis w dt.
inline void advance_ray(Ray& r, const Vec3& linear_velocity, const Vec3& angular_velocity, double dt) {
    if (dt == 0.0) return;
    if (!linear_velocity.isZero(0.0)) r.origin += linear_velocity * dt;
    const double w = angular_velocity.norm();
    if (w > 0.0) r.dir = (Eigen::AngleAxisd(w * dt, angular_velocity / w) * r.dir).normalized();
}

/// Row v is registered at t0 + readout * v / (height - 1).
inline RayBatch apply_rolling_shutter(const RayBatch& batch, const CameraModel& cam) {
    RayBatch out = batch;
    if (cam.readout_duration == 0.0) return out;
    const double denom = cam.height > 1 ? static_cast<double>(cam.height - 1) : 1.0;
    for (Ray& r : out) {
        const double t0 = r.t_stamp;
        const double dt = cam.readout_duration * (r.row / denom);
        r.t_stamp = t0 + dt;
        advance_ray(r, cam.linear_velocity, cam.angular_velocity, dt);
    }
    return out;
}

/// Rays as the sensor registers them: global shutter, or rolling when set.
inline RayBatch gen_sensor_rays(const CameraModel& cam, double t0) {
    RayBatch rays = gen_camera_rays(cam, t0);
    if (cam.rolling_shutter) rays = apply_rolling_shutter(rays, cam);
    return rays;
}

/// Direction of one LiDAR beam in the sensor frame.
inline Vec3 lidar_direction(double azimuth, double elevation) {
    return {std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth), std::sin(elevation)};
}

/// beams x steps rays; azimuth step j fires at t0 + period j / steps.
inline RayBatch gen_lidar_rays(const LidarModel& lidar, double t0) {
    lidar.validate();
    const std::size_t beams = lidar.beam_elevations.size();
    RayBatch out;
    out.reserve(beams * lidar.steps);
    for (std::size_t b = 0; b < beams; ++b) {
        for (int j = 0; j < lidar.steps; ++j) {
            const double frac = static_cast<double>(j) / lidar.steps;
            const double az = lidar.azimuth_start + (lidar.azimuth_end - lidar.azimuth_start) * frac;
            Ray r;
            r.origin = lidar.pose.translation;
            r.dir = lidar.pose.rotate(lidar_direction(az, lidar.beam_elevations[b])).normalized();
            r.t_stamp = t0 + lidar.scan_period * frac;
            r.row = static_cast<int32_t>(b);
            r.col = j;
            advance_ray(r, lidar.linear_velocity, lidar.angular_velocity, r.t_stamp - t0);
            out.push_back(r);
        }
    }
    return out;
}

}  // namespace salf
