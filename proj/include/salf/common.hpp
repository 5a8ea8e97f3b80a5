#pragma once

// Shared math types, rays, boxes and the data-parallel loop used by every
// salf module.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace salf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Rigid transform mapping a local frame into its parent: p_parent = R p + t.
struct RigidPose {
    Quat rotation = Quat::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    Vec3 apply_inverse(const Vec3& p) const { return rotation.conjugate() * (p - translation); }
    Vec3 rotate(const Vec3& v) const { return rotation * v; }
    Vec3 rotate_inverse(const Vec3& v) const { return rotation.conjugate() * v; }

    RigidPose inverse() const {
        RigidPose inv;
        inv.rotation = rotation.conjugate();
        inv.translation = -(inv.rotation * translation);
        return inv;
    }

    RigidPose operator*(const RigidPose& rhs) const {
        RigidPose out;
        out.rotation = rotation * rhs.rotation;
        out.translation = rotation * rhs.translation + translation;
        return out;
    }
};

struct Aabb {
    Vec3 min = Vec3::Constant(kInf);
    Vec3 max = Vec3::Constant(-kInf);

    bool empty() const { return (min.array() > max.array()).any(); }
    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 extent() const { return max - min; }

    void expand(const Vec3& p) {
        min = min.cwiseMin(p);
        max = max.cwiseMax(p);
    }
    void merge(const Aabb& o) {
        min = min.cwiseMin(o.min);
        max = max.cwiseMax(o.max);
    }
    bool contains(const Vec3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
};

/// A sensor ray. `key` is (row, col) for cameras and (beam, azimuth step)
/// for LiDAR. Rays whose pixel falls outside a lens model's valid domain
/// keep `valid = false` and render as background / no return.
struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 dir = Vec3::UnitZ();
    double t_stamp = 0.0;
    int32_t row = 0;
    int32_t col = 0;
    bool valid = true;

    Vec3 at(double t) const { return origin + t * dir; }
};

struct SlabHit {
    double t_near = 0.0;
    double t_far = -1.0;
    bool hit() const { return t_far >= t_near; }
};

/// Slab-method intersection of the infinite line o + t d with an
/// axis-aligned box. Zero direction components are handled per axis.
inline SlabHit intersect_box(const Vec3& o, const Vec3& d, const Vec3& bmin, const Vec3& bmax) {
    double t0 = -kInf;
    double t1 = kInf;
    for (int k = 0; k < 3; ++k) {
        if (d[k] == 0.0) {
            if (o[k] < bmin[k] || o[k] > bmax[k]) return {0.0, -1.0};
            continue;
        }
        const double inv = 1.0 / d[k];
        double ta = (bmin[k] - o[k]) * inv;
        double tb = (bmax[k] - o[k]) * inv;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return {t0, t1};
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Runs `fn(i)` for i in [0, n). Iterations must be independent; callers that
/// need a reduction write per-index results and reduce serially afterwards so
/// output never depends on the scheduler.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t grain = 64) {
    if (n == 0) return;
    tbb::parallel_for(tbb::blocked_range<std::size_t>(0, n, grain),
                      [&](const tbb::blocked_range<std::size_t>& r) {
                          for (std::size_t i = r.begin(); i != r.end(); ++i) fn(i);
                      });
}

}  // namespace salf
