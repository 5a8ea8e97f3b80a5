#pragma once

// Voxels, local linear fields and scene composition.
//
// A voxel is an axis-aligned cube on a multi-level grid. Each voxel carries a
// linear SDF field, a linear color field and four spherical-harmonic
// coefficients per channel, all expressed in the voxel's normalized local
// coordinates x in [-1, 1]^3.

#include "salf/common.hpp"

#include <array>
#include <optional>
#include <random>
#include <unordered_map>
#include <utility>
#include <vector>

namespace salf {

enum class DensityMode { sdf, raw };

/// The reconstruction volume and its grid. Level-l voxels have edge
/// base_edge / 2^l and are indexed from aabb_min.
struct SceneBounds {
    Vec3 aabb_min = Vec3::Zero();
    Vec3 aabb_max = Vec3::Ones();
    double base_edge = 1.0;
    int max_levels = 1;

    void validate() const {
        if (!((aabb_min.array() < aabb_max.array()).all()))
            throw std::invalid_argument("SceneBounds: aabb_min must be < aabb_max componentwise");
        if (!(base_edge > 0.0) || !std::isfinite(base_edge))
            throw std::invalid_argument("SceneBounds: base_edge must be > 0");
        if (max_levels < 1 || max_levels > 20)
            throw std::invalid_argument("SceneBounds: max_levels must be in [1, 20]");
    }

    double edge_at(int level) const { return std::ldexp(base_edge, -level); }

    /// Number of level-0 cells per axis, ceil(V / s0) with a small tolerance
    /// so exact multiples do not gain a sliver cell.
    std::array<int32_t, 3> base_dims() const {
        std::array<int32_t, 3> dims{};
        for (int k = 0; k < 3; ++k) {
            const double cells = (aabb_max[k] - aabb_min[k]) / base_edge;
            dims[k] = std::max<int32_t>(1, static_cast<int32_t>(std::ceil(cells - 1e-9)));
        }
        return dims;
    }

    bool in_grid(int level, const std::array<int32_t, 3>& ijk) const {
        if (level < 0 || level >= max_levels) return false;
        const auto dims = base_dims();
        for (int k = 0; k < 3; ++k) {
            if (ijk[k] < 0 || static_cast<int64_t>(ijk[k]) >= (static_cast<int64_t>(dims[k]) << level))
                return false;
        }
        return true;
    }
};

struct VoxelKey {
    int32_t level = 0;
    std::array<int32_t, 3> ijk{};

    bool operator==(const VoxelKey&) const = default;

    VoxelKey parent() const {
        return {level - 1, {ijk[0] >> 1, ijk[1] >> 1, ijk[2] >> 1}};
    }
};

struct VoxelKeyHash {
    std::size_t operator()(const VoxelKey& k) const noexcept {
        uint64_t h = static_cast<uint64_t>(k.level) * 0x9E3779B97F4A7C15ull;
        for (int32_t c : k.ijk) {
            h ^= static_cast<uint64_t>(static_cast<uint32_t>(c)) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
        }
        return static_cast<std::size_t>(h);
    }
};

/// Static geometry of one voxel. `rotation` is not learnable; it stays
/// identity for grid voxels and only changes when actor voxels are placed
/// into the world frame.
struct VoxelGeom {
    int32_t level = 0;
    std::array<int32_t, 3> ijk{};
    Vec3 center = Vec3::Zero();
    double edge = 1.0;
    Quat rotation = Quat::Identity();

    VoxelKey key() const { return {level, ijk}; }
    Vec3 box_min() const { return center - Vec3::Constant(0.5 * edge); }
    Vec3 box_max() const { return center + Vec3::Constant(0.5 * edge); }
    bool axis_aligned() const { return rotation.w() == 1.0; }
};

inline VoxelGeom make_voxel_geom(const SceneBounds& bounds, int32_t level, const std::array<int32_t, 3>& ijk) {
    VoxelGeom g;
    g.level = level;
    g.ijk = ijk;
    g.edge = bounds.edge_at(level);
    for (int k = 0; k < 3; ++k) g.center[k] = bounds.aabb_min[k] + (ijk[k] + 0.5) * g.edge;
    return g;
}

/// Learnable field parameters packed in one flat array so optimizers and
/// gradient buffers can treat every voxel uniformly.
///   [0, 4)   W_s   SDF row, applied to [x, 1]   (W_sigma in raw mode)
///   [4, 13)  W_c   3x3 color field, row-major
///   [13, 25) W_sh  3x4 SH coefficients, row-major
///   25, 26   log a, log b
struct VoxelParams {
    static constexpr std::size_t kCount = 27;
    static constexpr std::size_t kWs = 0;
    static constexpr std::size_t kWc = 4;
    static constexpr std::size_t kWsh = 13;
    static constexpr std::size_t kLogA = 25;
    static constexpr std::size_t kLogB = 26;

    std::array<double, kCount> v{};

    double& w_s(int i) { return v[kWs + i]; }
    double w_s(int i) const { return v[kWs + i]; }
    double& w_c(int r, int c) { return v[kWc + 3 * r + c]; }
    double w_c(int r, int c) const { return v[kWc + 3 * r + c]; }
    double& w_sh(int r, int k) { return v[kWsh + 4 * r + k]; }
    double w_sh(int r, int k) const { return v[kWsh + 4 * r + k]; }
    double& log_a() { return v[kLogA]; }
    double log_a() const { return v[kLogA]; }
    double& log_b() { return v[kLogB]; }
    double log_b() const { return v[kLogB]; }
    double a() const { return std::exp(v[kLogA]); }
    double b() const { return std::exp(v[kLogB]); }

    bool finite() const {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    }

    VoxelParams& operator+=(const VoxelParams& o) {
        for (std::size_t i = 0; i < kCount; ++i) v[i] += o.v[i];
        return *this;
    }

    static VoxelParams with_shape(double a, double b) {
        VoxelParams p;
        p.log_a() = std::log(a);
        p.log_b() = std::log(b);
        return p;
    }
};

// ---------------------------------------------------------------------------
// Per-point field evaluation
// ---------------------------------------------------------------------------

inline constexpr double kShC0 = 0.2820947918;
inline constexpr double kShC1 = 0.4886025119;

inline Vec3 world_to_local(const Vec3& p_world, const VoxelGeom& voxel) {
    const Vec3 rel = p_world - voxel.center;
    const Vec3 r = voxel.axis_aligned() ? rel : Vec3(voxel.rotation.conjugate() * rel);
    return r * (2.0 / voxel.edge);
}

inline Vec3 local_to_world(const Vec3& x, const VoxelGeom& voxel) {
    const Vec3 r = x * (0.5 * voxel.edge);
    return voxel.center + (voxel.axis_aligned() ? r : Vec3(voxel.rotation * r));
}

inline double eval_sdf(const Vec3& x, const VoxelParams& p) {
    return p.w_s(0) * x[0] + p.w_s(1) * x[1] + p.w_s(2) * x[2] + p.w_s(3);
}

/// Positive SDF is the occupied side: density rises from 0 (s -> -inf)
/// through a/2 (s = 0) to a (s -> +inf).
inline double sdf_to_density(double s, double a, double b) {
    const double half = 0.5 * a;
    return half + half * sign_of(s) * (1.0 - std::exp(-std::abs(s) / b));
}

inline double eval_density(const Vec3& x, const VoxelParams& p, DensityMode mode) {
    if (mode == DensityMode::raw) return std::exp(eval_sdf(x, p));
    return sdf_to_density(eval_sdf(x, p), p.a(), p.b());
}

/// Real SH bands l = 0, 1 in the order DC, Y(1,-1), Y(1,0), Y(1,1).
inline Vec4 sh_basis(const Vec3& omega) {
    if (std::abs(omega.norm() - 1.0) > 1e-6) throw std::invalid_argument("sh_basis: direction is not unit length");
    return {kShC0, kShC1 * omega.y(), kShC1 * omega.z(), kShC1 * omega.x()};
}

/// Pre-activation color z = W_c x + W_sh gamma.
inline Vec3 eval_color_logits(const Vec3& x, const Vec4& gamma, const VoxelParams& p) {
    Vec3 z;
    for (int r = 0; r < 3; ++r) {
        double acc = 0.0;
        for (int c = 0; c < 3; ++c) acc += p.w_c(r, c) * x[c];
        for (int k = 0; k < 4; ++k) acc += p.w_sh(r, k) * gamma[k];
        z[r] = acc;
    }
    return z;
}

inline Vec3 eval_color(const Vec3& x, const Vec3& omega, const VoxelParams& p) {
    const Vec3 z = eval_color_logits(x, sh_basis(omega), p);
    return {sigmoid(z[0]), sigmoid(z[1]), sigmoid(z[2])};
}

inline double segment_opacity(double sigma, double delta) { return -std::expm1(-sigma * delta); }

// ---------------------------------------------------------------------------
// Sparse voxel set
// ---------------------------------------------------------------------------

/// Level-indexed sparse set of voxels. No two voxels share a key and no voxel
/// nests inside another stored voxel.
class SparseVoxelSet {
public:
    SparseVoxelSet() = default;
    explicit SparseVoxelSet(SceneBounds bounds, std::size_t budget = std::numeric_limits<std::size_t>::max())
        : bounds_(std::move(bounds)), budget_(budget) {
        bounds_.validate();
    }

    const SceneBounds& bounds() const { return bounds_; }
    std::size_t budget() const { return budget_; }
    void set_budget(std::size_t m) { budget_ = m; }

    std::size_t size() const { return geom_.size(); }
    bool empty() const { return geom_.empty(); }

    const VoxelGeom& geom(std::size_t i) const { return geom_[i]; }
    const VoxelParams& params(std::size_t i) const { return params_[i]; }
    VoxelParams& params(std::size_t i) { return params_[i]; }
    const std::vector<VoxelGeom>& geoms() const { return geom_; }
    const std::vector<VoxelParams>& all_params() const { return params_; }
    std::vector<VoxelParams>& all_params() { return params_; }

    std::optional<std::size_t> find(const VoxelKey& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// True when `key` or one of its ancestors is stored.
    std::optional<std::size_t> find_covering(VoxelKey key) const {
        while (key.level >= 0) {
            if (auto i = find(key)) return i;
            if (key.level == 0) break;
            key = key.parent();
        }
        return std::nullopt;
    }

    std::size_t add(int32_t level, const std::array<int32_t, 3>& ijk, const VoxelParams& params) {
        const VoxelKey key{level, ijk};
        if (!bounds_.in_grid(level, ijk))
            throw std::out_of_range("SparseVoxelSet::add: voxel outside the grid at level " + std::to_string(level));
        if (index_.count(key)) throw std::invalid_argument("SparseVoxelSet::add: duplicate voxel key");
        if (descendants_.count(key))
            throw std::invalid_argument("SparseVoxelSet::add: voxel would contain an existing finer voxel");
        for (VoxelKey anc = key; anc.level > 0;) {
            anc = anc.parent();
            if (index_.count(anc))
                throw std::invalid_argument("SparseVoxelSet::add: voxel lies inside an existing coarser voxel");
        }
        if (geom_.size() >= budget_) throw std::length_error("SparseVoxelSet::add: voxel budget exhausted");

        for (VoxelKey anc = key; anc.level > 0;) {
            anc = anc.parent();
            ++descendants_[anc];
        }
        const std::size_t idx = geom_.size();
        geom_.push_back(make_voxel_geom(bounds_, level, ijk));
        params_.push_back(params);
        index_.emplace(key, idx);
        return idx;
    }

    /// Keeps the voxels for which `keep[i]` is true, preserving order.
    void retain(const std::vector<bool>& keep) {
        SparseVoxelSet next(bounds_, budget_);
        for (std::size_t i = 0; i < size(); ++i)
            if (keep[i]) next.add(geom_[i].level, geom_[i].ijk, params_[i]);
        *this = std::move(next);
    }

private:
    SceneBounds bounds_;
    std::size_t budget_ = std::numeric_limits<std::size_t>::max();
    std::vector<VoxelGeom> geom_;
    std::vector<VoxelParams> params_;
    std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> index_;
    std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> descendants_;
};

// ---------------------------------------------------------------------------
// Actors and scene
// ---------------------------------------------------------------------------

struct Keyframe {
    double t = 0.0;
    RigidPose pose;
};

/// A dynamic object: voxels live in a canonical frame centered on the
/// object's box, and the trajectory places that frame in the world.
struct Actor {
    std::string id;
    Vec3 extent = Vec3::Ones();
    SparseVoxelSet voxels;
    std::vector<Keyframe> trajectory;

    Vec3 box_min() const { return -0.5 * extent; }
    Vec3 box_max() const { return 0.5 * extent; }

    bool covers(double t) const {
        return !trajectory.empty() && t >= trajectory.front().t && t <= trajectory.back().t;
    }

    void validate() const {
        if (trajectory.empty()) throw std::invalid_argument("Actor '" + id + "': empty trajectory");
        for (std::size_t i = 1; i < trajectory.size(); ++i)
            if (!(trajectory[i].t > trajectory[i - 1].t))
                throw std::invalid_argument("Actor '" + id + "': trajectory timestamps must strictly increase");
        for (const auto& kf : trajectory)
            if (std::abs(kf.pose.rotation.norm() - 1.0) > 1e-9)
                throw std::invalid_argument("Actor '" + id + "': non-unit rotation in trajectory");
    }
};

/// Canonical bounds for an actor's voxel grid: the box centered on the origin.
inline SceneBounds actor_bounds(const Vec3& extent, double base_edge, int max_levels) {
    SceneBounds b;
    b.aabb_min = -0.5 * extent;
    b.aabb_max = 0.5 * extent;
    b.base_edge = base_edge;
    b.max_levels = max_levels;
    return b;
}

inline RigidPose actor_pose_at(const Actor& actor, double t) {
    const auto& traj = actor.trajectory;
    if (!actor.covers(t)) throw std::out_of_range("actor_pose_at: t outside the trajectory of actor '" + actor.id + "'");
    auto hi = std::lower_bound(traj.begin(), traj.end(), t, [](const Keyframe& k, double v) { return k.t < v; });
    if (hi->t == t) return hi->pose;
    auto lo = hi - 1;
    const double u = (t - lo->t) / (hi->t - lo->t);
    RigidPose out;
    out.translation = (1.0 - u) * lo->pose.translation + u * hi->pose.translation;
    out.rotation = lo->pose.rotation.slerp(u, hi->pose.rotation).normalized();
    return out;
}

struct Scene {
    SparseVoxelSet static_voxels;
    std::vector<Actor> actors;
    DensityMode mode = DensityMode::sdf;
    /// Region discretized at the finest initial resolution; voxels outside it
    /// form the coarse outer shells.
    std::optional<Aabb> inner_region;

    const SceneBounds& bounds() const { return static_voxels.bounds(); }
};

// ---------------------------------------------------------------------------
// Initialization helpers
// ---------------------------------------------------------------------------

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per field, the default for a
/// linear layer; fan_in is 3 for W_s and W_c and 4 for W_sh.
inline VoxelParams random_field_params(std::mt19937_64& rng, double a, double b) {
    VoxelParams p = VoxelParams::with_shape(a, b);
    std::uniform_real_distribution<double> u3(-1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0));
    std::uniform_real_distribution<double> u4(-0.5, 0.5);
    for (int i = 0; i < 4; ++i) p.w_s(i) = u3(rng);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) p.w_c(r, c) = u3(rng);
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 4; ++k) p.w_sh(r, k) = u4(rng);
    return p;
}

}  // namespace salf
