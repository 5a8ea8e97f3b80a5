#pragma once

// The optimization loop: batch sampling, forward, losses, backward, Adam and
// periodic densification, plus held-out evaluation.

#include "salf/metrics.hpp"
#include "salf/train.hpp"

#include <functional>
#include <random>
#include <vector>

namespace salf {

struct CameraView {
    CameraModel camera;
    double time = 0.0;
    std::vector<Vec3> rgb;  ///< ground truth, row-major
};

struct LidarSweep {
    LidarModel lidar;
    double time = 0.0;
    std::vector<double> ranges;  ///< gen_lidar_rays order, NaN for no return
};

struct TrainDataset {
    std::vector<CameraView> cameras;
    std::vector<LidarSweep> lidars;
    std::vector<Vec3> points;  ///< LiDAR points for the opacity term
};

struct TrainConfig {
    int64_t steps = 2000;
    std::size_t camera_rays = 2048;
    std::size_t lidar_rays = 1024;
    std::size_t reg_samples = 2048;
    std::size_t point_samples = 1024;
    uint64_t seed = 42;
    AdamConfig adam;
    LossWeights weights;
    DensifyConfig densify;
    bool densify_enabled = true;
    RenderOptions render;

    void validate() const {
        if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
        weights.validate();
        densify.validate();
    }
};

struct StepLog {
    int64_t step = 0;
    double color = 0.0;
    double depth = 0.0;
    double eikonal = 0.0;
    double smooth = 0.0;
    double opacity = 0.0;
    double empty = 0.0;
    double total = 0.0;
    std::size_t voxels = 0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<StepLog> log;
    std::vector<DensifyReport> densify_rounds;
};

/// A uniform sample (with replacement) of n indices from [0, count).
inline std::vector<std::size_t> sample_indices(std::mt19937_64& rng, std::size_t count, std::size_t n) {
    std::vector<std::size_t> out;
    if (count == 0) return out;
    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(pick(rng));
    return out;
}

inline std::vector<RenderRecord> render_records(const Scene& scene, const SceneOctrees& trees, const RayBatch& rays,
                                                const RenderOptions& opt) {
    std::vector<RenderRecord> out(rays.size());
    parallel_for(rays.size(), [&](std::size_t i) { out[i] = integrate_ray(scene, trees, rays[i], opt); }, 16);
    return out;
}

/// Locates points in the static octree; points outside every voxel are dropped.
inline std::vector<PointSample> locate_points(const Scene& scene, const OctreeBuffer& tree,
                                              const std::vector<Vec3>& points) {
    std::vector<PointSample> out;
    const Vec3 lo = tree.root_min;
    const Vec3 hi = tree.root_max();
    for (const Vec3& p : points) {
        if ((p.array() < lo.array()).any() || (p.array() > hi.array()).any()) continue;
        const OctreeHit h = query(tree, p);
        if (h.empty()) continue;
        const auto v = static_cast<std::size_t>(h.voxel);
        out.push_back({v, world_to_local(p, scene.static_voxels.geom(v))});
    }
    return out;
}

/// Optimizes the static voxels of `scene` in place. Steps are 0-based; the
/// scene's actors are rendered but not updated.
inline TrainResult train_loop(Scene& scene, const TrainDataset& data, const TrainConfig& cfg,
                              const std::function<void(const StepLog&)>& on_step = {}) {
    cfg.validate();
    TrainResult result;
    if (cfg.steps == 0) return result;
    if (data.cameras.empty() && data.lidars.empty()) throw std::invalid_argument("train_loop: empty dataset");

    std::mt19937_64 rng(cfg.seed);

    // Every sensor ray, generated once.
    std::vector<RayBatch> cam_rays;
    for (const auto& v : data.cameras) {
        cam_rays.push_back(gen_sensor_rays(v.camera, v.time));
        if (v.rgb.size() != cam_rays.back().size())
            throw std::invalid_argument("train_loop: camera '" + v.camera.name + "' ground truth size mismatch");
    }
    std::vector<std::pair<std::size_t, std::size_t>> cam_pool;
    for (std::size_t v = 0; v < cam_rays.size(); ++v)
        for (std::size_t i = 0; i < cam_rays[v].size(); ++i)
            if (cam_rays[v][i].valid) cam_pool.emplace_back(v, i);
    std::vector<RayBatch> lidar_rays;
    std::vector<std::pair<std::size_t, std::size_t>> lidar_pool;
    for (std::size_t s = 0; s < data.lidars.size(); ++s) {
        lidar_rays.push_back(gen_lidar_rays(data.lidars[s].lidar, data.lidars[s].time));
        if (data.lidars[s].ranges.size() != lidar_rays.back().size())
            throw std::invalid_argument("train_loop: LiDAR sweep range count mismatch");
        for (std::size_t i = 0; i < lidar_rays[s].size(); ++i)
            if (std::isfinite(data.lidars[s].ranges[i]) && data.lidars[s].ranges[i] > 0.0) lidar_pool.emplace_back(s, i);
    }

    SparseVoxelSet& voxels = scene.static_voxels;
    OptimState state(voxels.size(), cfg.adam);
    SceneOctrees trees = build_octrees(scene);
    std::vector<FacePair> pairs = face_adjacency(voxels);
    std::vector<std::size_t> outer = outer_voxels(scene);
    std::vector<double> grad_norms(voxels.size(), 0.0);
    const auto densify_stop = static_cast<int64_t>(cfg.densify.stop_fraction * static_cast<double>(cfg.steps));
    const LossWeights& w = cfg.weights;

    for (int64_t step = 0; step < cfg.steps; ++step) {
        // Batch: camera rays then LiDAR rays.
        RayBatch rays;
        std::vector<Vec3> gt_rgb;
        std::vector<double> gt_range;
        for (std::size_t k : sample_indices(rng, cam_pool.size(), cam_pool.empty() ? 0 : cfg.camera_rays)) {
            const auto [v, i] = cam_pool[k];
            rays.push_back(cam_rays[v][i]);
            gt_rgb.push_back(data.cameras[v].rgb[i]);
        }
        const std::size_t n_cam = rays.size();
        for (std::size_t k : sample_indices(rng, lidar_pool.size(), lidar_pool.empty() ? 0 : cfg.lidar_rays)) {
            const auto [s, i] = lidar_pool[k];
            rays.push_back(lidar_rays[s][i]);
            gt_range.push_back(data.lidars[s].ranges[i]);
        }

        std::vector<RenderRecord> records = render_records(scene, trees, rays, cfg.render);
        std::vector<RenderRecord> lidar_records(std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(n_cam)),
                                                std::make_move_iterator(records.end()));
        records.resize(n_cam);

        StepLog log;
        log.step = step;
        std::vector<Vec3> dl_dc;
        std::vector<double> dl_dd;
        log.color = loss_color(records, gt_rgb, &dl_dc, w.color);
        log.depth = loss_depth(lidar_records, gt_range, &dl_dd, w.depth);

        SceneGrads grads = SceneGrads::zeros_like(scene);
        if (!records.empty()) backward(records, dl_dc, {}, scene, grads);
        if (!lidar_records.empty()) backward(lidar_records, {}, dl_dd, scene, grads);

        const auto reg_voxels = sample_indices(rng, voxels.size(), cfg.reg_samples);
        log.eikonal = loss_eikonal(voxels, reg_voxels, &grads.statics, w.eikonal);
        const auto reg_pairs = sample_indices(rng, pairs.size(), cfg.reg_samples);
        log.smooth = loss_smooth(voxels, pairs, reg_pairs, &grads.statics, w.smooth);
        std::vector<Vec3> pts;
        for (std::size_t k : sample_indices(rng, data.points.size(), cfg.point_samples)) pts.push_back(data.points[k]);
        log.opacity = loss_opacity_lidar(voxels, scene.mode, locate_points(scene, trees.static_tree, pts),
                                         &grads.statics, w.opacity);
        std::vector<std::size_t> empty_set;
        for (std::size_t k : sample_indices(rng, outer.size(), cfg.reg_samples)) empty_set.push_back(outer[k]);
        log.empty = loss_empty(voxels, scene.mode, empty_set, &grads.statics, w.empty);

        log.total = w.color * log.color + w.depth * log.depth + w.eikonal * log.eikonal + w.smooth * log.smooth +
                    w.opacity * log.opacity + w.empty * log.empty;
        if (!std::isfinite(log.total))
            throw std::runtime_error("train_loop: non-finite loss at step " + std::to_string(step));

        for (std::size_t i = 0; i < voxels.size(); ++i) grad_norms[i] += color_field_grad_norm(grads.statics[i]);
        log.lr = state.lr();
        adam_step(voxels.all_params(), grads.statics, state);

        const int64_t done = step + 1;
        if (cfg.densify_enabled && done % cfg.densify.interval == 0 && done < densify_stop) {
            DensifyReport rep = densify_and_prune(voxels, scene.mode, grad_norms, cfg.densify);
            remap_optim_state(state, rep);
            grad_norms.assign(voxels.size(), 0.0);
            trees = build_octrees(scene);
            pairs = face_adjacency(voxels);
            outer = outer_voxels(scene);
            result.densify_rounds.push_back(std::move(rep));
        }
        log.voxels = voxels.size();
        if (on_step) on_step(log);
        result.log.push_back(log);
    }
    return result;
}

struct EvalResult {
    double psnr = 0.0;  ///< mean over views
    double ssim = 0.0;  ///< mean over views
    double median_range_error = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> view_psnr;
};

inline Framebuffer to_framebuffer(const CameraView& v) {
    Framebuffer fb(v.camera.width, v.camera.height);
    for (std::size_t i = 0; i < v.rgb.size(); ++i) fb.set_color(i, v.rgb[i]);
    return fb;
}

/// Expected-depth ranges for every ray of a sweep; NaN where there is no return.
inline std::vector<double> render_ranges(const Scene& scene, const SceneOctrees& trees, const RayBatch& rays,
                                         const RenderOptions& opt = {}) {
    std::vector<double> out(rays.size(), std::numeric_limits<double>::quiet_NaN());
    parallel_for(rays.size(), [&](std::size_t i) {
        const RenderRecord r = integrate_ray(scene, trees, rays[i], opt);
        if (r.depth) out[i] = *r.depth;
    }, 16);
    return out;
}

inline EvalResult evaluate_views(const Scene& scene, const std::vector<CameraView>& views,
                                 const std::vector<LidarSweep>& sweeps, const RenderOptions& opt = {}) {
    EvalResult res;
    const SceneOctrees trees = build_octrees(scene);
    for (const auto& v : views) {
        const Framebuffer pred = render_camera(scene, trees, v.camera, v.time, opt);
        const Framebuffer gt = to_framebuffer(v);
        res.view_psnr.push_back(psnr(pred, gt));
        res.psnr += res.view_psnr.back();
        res.ssim += ssim(pred, gt);
    }
    if (!views.empty()) {
        res.psnr /= static_cast<double>(views.size());
        res.ssim /= static_cast<double>(views.size());
    }
    std::vector<double> pred_all;
    std::vector<double> gt_all;
    for (const auto& s : sweeps) {
        const auto pred = render_ranges(scene, trees, gen_lidar_rays(s.lidar, s.time), opt);
        pred_all.insert(pred_all.end(), pred.begin(), pred.end());
        gt_all.insert(gt_all.end(), s.ranges.begin(), s.ranges.end());
    }
    if (!pred_all.empty()) res.median_range_error = median_range_error(pred_all, gt_all);
    return res;
}

}  // namespace salf
