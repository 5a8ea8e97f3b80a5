#pragma once

// Losses with their analytic gradients, reverse-mode backward through volume
// rendering, Adam, and densification/pruning of the static voxel set.
//
// Every loss takes an optional gradient sink and a weight; when the sink is
// present the loss adds weight * dLoss/dParam into it. Gradients for rays are
// produced per ray and reduced serially in ray order, so results do not
// depend on thread count.

#include "salf/render_ray.hpp"

#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace salf {

using ParamGrads = std::vector<VoxelParams>;

struct SceneGrads {
    ParamGrads statics;
    std::vector<ParamGrads> actors;

    static SceneGrads zeros_like(const Scene& scene) {
        SceneGrads g;
        g.statics.assign(scene.static_voxels.size(), VoxelParams{});
        for (const auto& a : scene.actors) g.actors.emplace_back(a.voxels.size(), VoxelParams{});
        return g;
    }

    VoxelParams& at(int32_t owner, int32_t voxel) {
        return owner == kStaticOwner ? statics[static_cast<std::size_t>(voxel)]
                                     : actors[static_cast<std::size_t>(owner)][static_cast<std::size_t>(voxel)];
    }
};

struct LossWeights {
    double color = 1.0;
    double depth = 10.0;
    double eikonal = 0.1;
    double smooth = 3.0;
    double opacity = 10.0;
    double empty = 0.1;

    void validate() const {
        for (double w : {color, depth, eikonal, smooth, opacity, empty})
            if (!(w >= 0.0)) throw std::invalid_argument("LossWeights: weights must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Density derivatives
// ---------------------------------------------------------------------------

/// Partial derivatives of the density with respect to the SDF value and the
/// log shape parameters. The |s| kink takes subgradient 0 at s = 0.
struct DensityPartials {
    double d_s = 0.0;
    double d_log_a = 0.0;
    double d_log_b = 0.0;
};

inline DensityPartials density_partials(double s, const VoxelParams& p, DensityMode mode) {
    DensityPartials d;
    if (mode == DensityMode::raw) {
        d.d_s = std::exp(s);
        return d;
    }
    const double a = p.a();
    const double b = p.b();
    const double e = std::exp(-std::abs(s) / b);
    d.d_log_a = sdf_to_density(s, a, b);
    if (s == 0.0) return d;
    d.d_s = 0.5 * a * e / b;
    d.d_log_b = -0.5 * a * sign_of(s) * e * std::abs(s) / b;
    return d;
}

/// Adds g_sigma * dsigma/dparams for a density evaluated at local point x.
inline void add_density_grad(const Vec3& x, double s, const VoxelParams& p, DensityMode mode, double g_sigma,
                             VoxelParams& out) {
    if (g_sigma == 0.0) return;
    const DensityPartials d = density_partials(s, p, mode);
    const double g_s = g_sigma * d.d_s;
    out.w_s(0) += g_s * x[0];
    out.w_s(1) += g_s * x[1];
    out.w_s(2) += g_s * x[2];
    out.w_s(3) += g_s;
    out.log_a() += g_sigma * d.d_log_a;
    out.log_b() += g_sigma * d.d_log_b;
}

/// Adds dL/dc (post-sigmoid color) back to W_c and W_sh.
inline void add_color_grad(const Vec3& x, const Vec3& omega, const Vec3& color, const Vec3& g_color,
                           VoxelParams& out) {
    const Vec4 gamma = sh_basis(omega);
    for (int r = 0; r < 3; ++r) {
        const double gz = g_color[r] * color[r] * (1.0 - color[r]);
        if (gz == 0.0) continue;
        for (int k = 0; k < 3; ++k) out.w_c(r, k) += gz * x[k];
        for (int k = 0; k < 4; ++k) out.w_sh(r, k) += gz * gamma[k];
    }
}

// ---------------------------------------------------------------------------
// Ray losses
// ---------------------------------------------------------------------------

/// Mean absolute color difference over rays and channels.
inline double loss_color(const std::vector<RenderRecord>& records, const std::vector<Vec3>& gt,
                         std::vector<Vec3>* grad = nullptr, double weight = 1.0) {
    if (records.size() != gt.size()) throw std::invalid_argument("loss_color: record/gt count mismatch");
    if (grad) grad->assign(records.size(), Vec3::Zero());
    if (records.empty()) return 0.0;
    const double n = 3.0 * static_cast<double>(records.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Vec3 d = records[i].color - gt[i];
        acc += d.cwiseAbs().sum();
        if (grad) (*grad)[i] = weight / n * Vec3(sign_of(d[0]), sign_of(d[1]), sign_of(d[2]));
    }
    return acc / n;
}

/// Mean absolute range error over rays where both the prediction and the
/// ground truth have a return; NaN or non-positive gt marks no return.
inline double loss_depth(const std::vector<RenderRecord>& records, const std::vector<double>& gt,
                         std::vector<double>* grad = nullptr, double weight = 1.0) {
    if (records.size() != gt.size()) throw std::invalid_argument("loss_depth: record/gt count mismatch");
    if (grad) grad->assign(records.size(), 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].depth && std::isfinite(gt[i]) && gt[i] > 0.0) ++count;
    if (count == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!(records[i].depth && std::isfinite(gt[i]) && gt[i] > 0.0)) continue;
        const double d = *records[i].depth - gt[i];
        acc += std::abs(d);
        if (grad) (*grad)[i] = weight * sign_of(d) / static_cast<double>(count);
    }
    return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Backward through compositing
// ---------------------------------------------------------------------------

struct SparseGrad {
    int32_t owner = kStaticOwner;
    int32_t voxel = -1;
    VoxelParams g;
};

/// Gradients of one ray's color/depth with respect to the parameters of every
/// segment it composited.
///
/// With w_i = T_i alpha_i, C = sum w_i c_i + T_N bg, the suffix radiance
/// R_i (what lies behind segment i, seen from just after it) gives
/// dC/dalpha_i = T_i (c_i - R_i). For D = sum w_i m_i / W the analogous
/// suffix Q_i of alpha_j (m_j - D) gives dD/dalpha_i = T_i ((m_i - D) - Q_i) / W.
inline std::vector<SparseGrad> ray_backward(const RenderRecord& rec, const Vec3& dl_dc, double dl_dd,
                                            const Scene& scene) {
    std::vector<SparseGrad> out;
    const auto& segs = rec.segments;
    if (segs.empty()) return out;
    const bool use_depth = dl_dd != 0.0 && rec.depth.has_value();
    const double depth = use_depth ? *rec.depth : 0.0;
    const double w_sum = rec.weight_sum;

    out.resize(segs.size());
    Vec3 suffix_c = rec.background;
    double suffix_d = 0.0;
    for (std::size_t k = segs.size(); k-- > 0;) {
        const SegmentSample& s = segs[k];
        const double t = s.transmittance;
        double g_alpha = dl_dc.dot(t * (s.color - suffix_c));
        if (use_depth) {
            const double m = s.t_mid() - depth;
            g_alpha += dl_dd * t * (m - suffix_d) / w_sum;
            suffix_d = s.alpha * m + (1.0 - s.alpha) * suffix_d;
        }
        suffix_c = s.alpha * s.color + (1.0 - s.alpha) * suffix_c;

        const VoxelParams& p = s.owner == kStaticOwner
                                   ? scene.static_voxels.params(static_cast<std::size_t>(s.voxel))
                                   : scene.actors[static_cast<std::size_t>(s.owner)].voxels.params(
                                         static_cast<std::size_t>(s.voxel));
        SparseGrad& sg = out[k];
        sg.owner = s.owner;
        sg.voxel = s.voxel;
        // alpha = 1 - exp(-sigma delta)
        const double g_sigma = g_alpha * s.delta() * std::exp(-s.sigma * s.delta());
        add_density_grad(s.local, s.sdf, p, scene.mode, g_sigma, sg.g);
        add_color_grad(s.local, s.omega, s.color, dl_dc * (t * s.alpha), sg.g);
    }
    return out;
}

/// Accumulates per-ray gradients into `grads`; rays are processed in
/// parallel and reduced in ray order.
inline void backward(const std::vector<RenderRecord>& records, const std::vector<Vec3>& dl_dc,
                     const std::vector<double>& dl_dd, const Scene& scene, SceneGrads& grads) {
    if (!dl_dc.empty() && dl_dc.size() != records.size())
        throw std::invalid_argument("backward: color gradient count does not match the records");
    if (!dl_dd.empty() && dl_dd.size() != records.size())
        throw std::invalid_argument("backward: depth gradient count does not match the records");
    if (dl_dc.empty() && dl_dd.empty() && !records.empty())
        throw std::invalid_argument("backward: no loss gradients supplied");
    std::vector<std::vector<SparseGrad>> per_ray(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
        per_ray[i] = ray_backward(records[i], dl_dc.empty() ? Vec3::Zero() : dl_dc[i],
                                  dl_dd.empty() ? 0.0 : dl_dd[i], scene);
    }, 16);
    for (const auto& ray : per_ray)
        for (const auto& sg : ray) grads.at(sg.owner, sg.voxel) += sg.g;
}

// ---------------------------------------------------------------------------
// Regularizers
// ---------------------------------------------------------------------------

/// Mean |‖W_s[0:3]‖ - 1| over the selected static voxels.
inline double loss_eikonal(const SparseVoxelSet& voxels, std::span<const std::size_t> subset,
                           ParamGrads* grad = nullptr, double weight = 1.0) {
    if (subset.empty()) return 0.0;
    const double n = static_cast<double>(subset.size());
    double acc = 0.0;
    for (std::size_t i : subset) {
        const VoxelParams& p = voxels.params(i);
        const Vec3 w(p.w_s(0), p.w_s(1), p.w_s(2));
        const double norm = w.norm();
        acc += std::abs(norm - 1.0);
        if (grad && norm > 0.0) {
            const Vec3 g = (weight * sign_of(norm - 1.0) / (n * norm)) * w;
            for (int k = 0; k < 3; ++k) (*grad)[i].w_s(k) += g[k];
        }
    }
    return acc / n;
}

/// A face shared by a voxel and a same-size or coarser neighbor. `fine` is
/// the smaller (or, for equal sizes, the lower-index-side) voxel; the face
/// lies on its side `axis` in direction `dir` (+1 or -1).
struct FacePair {
    std::size_t fine = 0;
    std::size_t coarse = 0;
    int axis = 0;
    int dir = 1;
};

inline std::vector<FacePair> face_adjacency(const SparseVoxelSet& voxels) {
    std::vector<FacePair> out;
    const SceneBounds& bounds = voxels.bounds();
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        const VoxelGeom& g = voxels.geom(i);
        for (int axis = 0; axis < 3; ++axis) {
            for (int dir : {-1, 1}) {
                std::array<int32_t, 3> nb = g.ijk;
                nb[axis] += dir;
                if (!bounds.in_grid(g.level, nb)) continue;
                const auto j = voxels.find_covering({g.level, nb});
                if (!j || *j == i) continue;
                // Equal-size pairs are found from both sides; keep one.
                if (voxels.geom(*j).level == g.level && dir < 0) continue;
                out.push_back({i, *j, axis, dir});
            }
        }
    }
    return out;
}

/// The F = 4 corners of the finer voxel's shared face, in its local frame.
inline std::array<Vec3, 4> face_corners(const FacePair& f) {
    std::array<Vec3, 4> pts;
    const int u = (f.axis + 1) % 3;
    const int v = (f.axis + 2) % 3;
    for (int c = 0; c < 4; ++c) {
        Vec3 x = Vec3::Zero();
        x[f.axis] = f.dir;
        x[u] = (c & 1) ? 1.0 : -1.0;
        x[v] = (c & 2) ? 1.0 : -1.0;
        pts[c] = x;
    }
    return pts;
}

/// Mean |s_fine - s_coarse| plus mean channel |c_fine - c_coarse| over the
/// face corners of the selected pairs, each side evaluated in its own local
/// frame with the face normal as view direction.
inline double loss_smooth(const SparseVoxelSet& voxels, const std::vector<FacePair>& pairs,
                          std::span<const std::size_t> subset, ParamGrads* grad = nullptr, double weight = 1.0) {
    if (subset.empty()) return 0.0;
    const double n_pts = 4.0 * static_cast<double>(subset.size());
    double acc_s = 0.0;
    double acc_c = 0.0;
    for (std::size_t k : subset) {
        const FacePair& f = pairs[k];
        const VoxelGeom& gf = voxels.geom(f.fine);
        const VoxelGeom& gc = voxels.geom(f.coarse);
        const VoxelParams& pf = voxels.params(f.fine);
        const VoxelParams& pc = voxels.params(f.coarse);
        Vec3 normal = Vec3::Zero();
        normal[f.axis] = f.dir;
        for (const Vec3& xf : face_corners(f)) {
            const Vec3 xc = world_to_local(local_to_world(xf, gf), gc);
            const double ds = eval_sdf(xf, pf) - eval_sdf(xc, pc);
            acc_s += std::abs(ds);
            const Vec3 cf = eval_color(xf, normal, pf);
            const Vec3 cc = eval_color(xc, normal, pc);
            const Vec3 dc = cf - cc;
            acc_c += dc.cwiseAbs().sum();
            if (!grad) continue;
            const double gs = weight * sign_of(ds) / n_pts;
            for (int a = 0; a < 3; ++a) {
                (*grad)[f.fine].w_s(a) += gs * xf[a];
                (*grad)[f.coarse].w_s(a) -= gs * xc[a];
            }
            (*grad)[f.fine].w_s(3) += gs;
            (*grad)[f.coarse].w_s(3) -= gs;
            const Vec3 gc_vec = (weight / (3.0 * n_pts)) * Vec3(sign_of(dc[0]), sign_of(dc[1]), sign_of(dc[2]));
            add_color_grad(xf, normal, cf, gc_vec, (*grad)[f.fine]);
            add_color_grad(xc, normal, cc, -gc_vec, (*grad)[f.coarse]);
        }
    }
    return acc_s / n_pts + acc_c / (3.0 * n_pts);
}

/// A LiDAR point located in a static voxel.
struct PointSample {
    std::size_t voxel = 0;
    Vec3 local = Vec3::Zero();
};

inline constexpr double kOpacityTraversal = 0.2;

/// Mean |1 - alpha| with alpha the opacity over 0.2 m at each point's density.
inline double loss_opacity_lidar(const SparseVoxelSet& voxels, DensityMode mode,
                                 const std::vector<PointSample>& points, ParamGrads* grad = nullptr,
                                 double weight = 1.0) {
    if (points.empty()) return 0.0;
    const double n = static_cast<double>(points.size());
    double acc = 0.0;
    for (const PointSample& pt : points) {
        const VoxelParams& p = voxels.params(pt.voxel);
        const double s = eval_sdf(pt.local, p);
        const double sigma = mode == DensityMode::raw ? std::exp(s) : sdf_to_density(s, p.a(), p.b());
        const double transmit = std::exp(-sigma * kOpacityTraversal);
        acc += transmit;
        if (grad) add_density_grad(pt.local, s, p, mode, -weight * kOpacityTraversal * transmit / n, (*grad)[pt.voxel]);
    }
    return acc / n;
}

/// Opacity of a voxel traversed across one edge length at its center density.
inline double center_opacity(const VoxelGeom& g, const VoxelParams& p, DensityMode mode) {
    return segment_opacity(eval_density(Vec3::Zero(), p, mode), g.edge);
}

/// Static voxels whose centers lie outside the scene's inner region.
inline std::vector<std::size_t> outer_voxels(const Scene& scene) {
    std::vector<std::size_t> out;
    if (!scene.inner_region) return out;
    for (std::size_t i = 0; i < scene.static_voxels.size(); ++i)
        if (!scene.inner_region->contains(scene.static_voxels.geom(i).center)) out.push_back(i);
    return out;
}

/// Mean center opacity over the lowest ceil(20%) of the selected voxels.
inline double loss_empty(const SparseVoxelSet& voxels, DensityMode mode, std::span<const std::size_t> subset,
                         ParamGrads* grad = nullptr, double weight = 1.0) {
    if (subset.empty()) return 0.0;
    std::vector<std::pair<double, std::size_t>> ops;
    ops.reserve(subset.size());
    for (std::size_t i : subset) ops.emplace_back(center_opacity(voxels.geom(i), voxels.params(i), mode), i);
    std::sort(ops.begin(), ops.end());
    const std::size_t k = (subset.size() + 4) / 5;
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        const auto [alpha, i] = ops[j];
        acc += alpha;
        if (grad) {
            const VoxelParams& p = voxels.params(i);
            const double edge = voxels.geom(i).edge;
            const double g_sigma = weight / static_cast<double>(k) * edge * (1.0 - alpha);
            add_density_grad(Vec3::Zero(), eval_sdf(Vec3::Zero(), p), p, mode, g_sigma, (*grad)[i]);
        }
    }
    return acc / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 0.01;
    double decay = 0.8;
    int64_t decay_every = 800;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimState {
    AdamConfig cfg;
    std::vector<VoxelParams> m;
    std::vector<VoxelParams> v;
    int64_t step = 0;

    explicit OptimState(std::size_t n = 0, AdamConfig c = {}) : cfg(c), m(n), v(n) {}

    /// Learning rate used by the update at 0-based step `s`.
    double lr_at(int64_t s) const { return cfg.lr * std::pow(cfg.decay, static_cast<double>(s / cfg.decay_every)); }
    double lr() const { return lr_at(step); }
};

inline void adam_step(std::vector<VoxelParams>& params, const std::vector<VoxelParams>& grads, OptimState& st) {
    if (grads.size() != params.size() || st.m.size() != params.size() || st.v.size() != params.size())
        throw std::invalid_argument("adam_step: parameter, gradient and moment counts differ");
    const double lr = st.lr();
    const double t = static_cast<double>(st.step + 1);
    const double bc1 = 1.0 - std::pow(st.cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(st.cfg.beta2, t);
    const AdamConfig& c = st.cfg;
    parallel_for(params.size(), [&](std::size_t i) {
        for (std::size_t k = 0; k < VoxelParams::kCount; ++k) {
            const double g = grads[i].v[k];
            double& m = st.m[i].v[k];
            double& v = st.v[i].v[k];
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            params[i].v[k] -= lr * (m / bc1) / (std::sqrt(v / bc2) + c.eps);
        }
    }, 256);
    ++st.step;
}

// ---------------------------------------------------------------------------
// Densification and pruning
// ---------------------------------------------------------------------------

struct DensifyConfig {
    std::size_t budget = 2'500'000;
    double prune_opacity = 0.005;
    std::size_t split_denominator = 40;  ///< 8 children x 5
    int64_t interval = 400;
    double stop_fraction = 0.8;

    void validate() const {
        if (split_denominator == 0) throw std::invalid_argument("DensifyConfig: split_denominator must be > 0");
        if (interval < 1) throw std::invalid_argument("DensifyConfig: interval must be >= 1");
    }
};

struct DensifyReport {
    std::size_t n_before = 0;
    std::size_t n_pruned = 0;
    std::size_t split_target = 0;
    std::size_t n_split = 0;
    std::size_t n_after = 0;
    std::vector<std::size_t> pruned;  ///< indices before the round
    std::vector<std::size_t> split;   ///< indices before the round
    /// For every voxel after the round, its index before, or -1 for a new child.
    std::vector<int64_t> source;
};

inline std::size_t split_count(std::size_t budget, std::size_t n_pruned, std::size_t n, std::size_t denominator) {
    if (budget + n_pruned <= n) return 0;
    return (budget + n_pruned - n) / denominator;
}

/// Prunes near-transparent voxels, then splits the voxels with the largest
/// accumulated color-field gradient norms into their 8 children (which
/// inherit the parent's parameters). Kept voxels stay in order, children are
/// appended.
inline DensifyReport densify_and_prune(SparseVoxelSet& voxels, DensityMode mode,
                                       const std::vector<double>& grad_norms, const DensifyConfig& cfg) {
    cfg.validate();
    const std::size_t n = voxels.size();
    if (grad_norms.size() != n) throw std::invalid_argument("densify_and_prune: gradient norm count mismatch");
    if (n > cfg.budget) throw std::invalid_argument("densify_and_prune: voxel count already exceeds the budget");
    DensifyReport rep;
    rep.n_before = n;

    std::vector<bool> pruned(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        if (center_opacity(voxels.geom(i), voxels.params(i), mode) < cfg.prune_opacity) {
            pruned[i] = true;
            rep.pruned.push_back(i);
        }
    }
    rep.n_pruned = rep.pruned.size();
    rep.split_target = split_count(cfg.budget, rep.n_pruned, n, cfg.split_denominator);

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i)
        if (!pruned[i]) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return grad_norms[a] > grad_norms[b]; });
    const int max_levels = voxels.bounds().max_levels;
    std::vector<bool> split(n, false);
    for (std::size_t i : order) {
        if (rep.split.size() >= rep.split_target) break;
        if (voxels.geom(i).level + 1 >= max_levels) continue;
        split[i] = true;
        rep.split.push_back(i);
    }
    std::sort(rep.split.begin(), rep.split.end());
    rep.n_split = rep.split.size();

    SparseVoxelSet next(voxels.bounds(), voxels.budget());
    for (std::size_t i = 0; i < n; ++i) {
        if (pruned[i] || split[i]) continue;
        next.add(voxels.geom(i).level, voxels.geom(i).ijk, voxels.params(i));
        rep.source.push_back(static_cast<int64_t>(i));
    }
    for (std::size_t i : rep.split) {
        const VoxelGeom& g = voxels.geom(i);
        for (int c = 0; c < 8; ++c) {
            const std::array<int32_t, 3> ijk{2 * g.ijk[0] + (c & 1), 2 * g.ijk[1] + ((c >> 1) & 1),
                                             2 * g.ijk[2] + ((c >> 2) & 1)};
            next.add(g.level + 1, ijk, voxels.params(i));
            rep.source.push_back(-1);
        }
    }
    voxels = std::move(next);
    rep.n_after = voxels.size();
    return rep;
}

/// Carries optimizer moments across a densification round; children start
/// from zero moments.
inline void remap_optim_state(OptimState& st, const DensifyReport& rep) {
    std::vector<VoxelParams> m(rep.source.size());
    std::vector<VoxelParams> v(rep.source.size());
    for (std::size_t i = 0; i < rep.source.size(); ++i) {
        if (rep.source[i] < 0) continue;
        m[i] = st.m[static_cast<std::size_t>(rep.source[i])];
        v[i] = st.v[static_cast<std::size_t>(rep.source[i])];
    }
    st.m = std::move(m);
    st.v = std::move(v);
}

/// Per-voxel L2 norm of the W_c block of a gradient.
inline double color_field_grad_norm(const VoxelParams& g) {
    double acc = 0.0;
    for (std::size_t k = VoxelParams::kWc; k < VoxelParams::kWsh; ++k) acc += g.v[k] * g.v[k];
    return std::sqrt(acc);
}

}  // namespace salf
