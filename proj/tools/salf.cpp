// salf: command-line front end for building, training and rendering
// sparse local-field scenes.

#include "salf/salf.hpp"

#include <CLI11.hpp>
#include <tbb/global_control.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>

using namespace salf;

namespace {

std::string ext_of(const std::string& path) {
    std::string e = std::filesystem::path(path).extension().string();
    for (char& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e;
}

void ensure_parent(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

Vec3 parse_vec3(const std::string& text, const char* what) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
    if (v.size() != 3) throw std::invalid_argument(std::string(what) + ": expected three comma-separated numbers");
    return {v[0], v[1], v[2]};
}

CameraModel find_camera(const SensorRig& rig, const std::string& name) {
    if (name.empty() && !rig.cameras.empty()) return rig.cameras.front();
    if (const CameraModel* c = rig.camera(name)) return *c;
    throw std::runtime_error("no camera named '" + name + "' in the scene's sensors.json");
}

/// Image outputs: .ppm always; a sibling depth map when requested.
void write_image(const Framebuffer& fb, const std::string& out, const std::string& depth_out) {
    if (ext_of(out) != ".ppm") throw std::invalid_argument("--out: only .ppm images are written");
    ensure_parent(out);
    write_ppm(fb, out);
    if (!depth_out.empty()) {
        ensure_parent(depth_out);
        write_pfm_depth(fb, depth_out);
    }
}

// ---------------------------------------------------------------------------

int cmd_make_synthetic(const std::string& spec_path, const std::string& out) {
    const SyntheticSceneSpec spec = spec_from_json(read_json(spec_path));
    const SyntheticData data = make_synthetic(spec);
    save_synthetic(out, spec, data);
    std::size_t train = 0;
    for (const auto& f : data.frames) train += f.train ? 1 : 0;
    std::cout << "frames " << data.frames.size() << " (train " << train << ", test " << data.frames.size() - train
              << "), points " << data.points.size() << " -> " << out << "\n";
    return 0;
}

int cmd_init(const std::string& points_path, const std::string& traj_path, const std::string& out,
             const std::optional<double>& base_edge) {
    const LoadedTrajectory traj = load_trajectory(traj_path);
    InitConfig cfg = traj.init;
    if (base_edge) cfg.base_edge = *base_edge;
    const std::vector<Vec3> points = points_of_rows(read_ply_rows(points_path));
    const Scene scene = init_multiscale(traj.boxes, points, cfg, &std::cerr);
    save_scene(out, scene, traj.sensors);
    std::cout << "voxels " << scene.static_voxels.size() << " from " << points.size() << " points -> " << out << "\n";
    return 0;
}

int cmd_train(const std::string& scene_path, const std::string& data_dir, const std::string& config_path,
              const std::string& out, const std::string& log_path, int64_t print_every) {
    Scene scene = load_scene(scene_path);
    SensorRig rig = load_sensors(scene_path);
    if (rig.cameras.empty() && rig.lidars.empty()) rig = load_sensors(data_dir);
    const TrainConfig cfg = train_config_from_json(read_json(config_path));
    const TrainDataset train = load_dataset(data_dir, true);

    std::unique_ptr<std::ofstream> log;
    const std::string log_file = log_path.empty() ? (std::filesystem::path(out) / "train_log.jsonl").string() : log_path;
    ensure_parent(log_file);
    log = std::make_unique<std::ofstream>(log_file);
    if (!*log) throw std::runtime_error("cannot open " + log_file);

    const auto t0 = std::chrono::steady_clock::now();
    train_loop(scene, train, cfg, [&](const StepLog& l) {
        *log << to_json(l).dump() << "\n";
        if (print_every > 0 && (l.step % print_every == 0 || l.step + 1 == cfg.steps))
            std::cout << "step " << l.step << " color " << l.color << " depth " << l.depth << " total " << l.total
                      << " voxels " << l.voxels << " lr " << l.lr << "\n"
                      << std::flush;
    });
    save_scene(out, scene, rig);
    std::cout << "trained " << cfg.steps << " steps in " << std::fixed << std::setprecision(1) << seconds_since(t0)
              << " s, voxels " << scene.static_voxels.size() << " -> " << out << "\n";

    const TrainDataset test = load_dataset(data_dir, false);
    if (!test.cameras.empty() || !test.lidars.empty()) {
        const EvalResult e = evaluate_views(scene, test.cameras, test.lidars, cfg.render);
        std::cout << std::setprecision(4) << "held-out PSNR " << e.psnr << " dB, SSIM " << e.ssim
                  << ", median LiDAR range error " << e.median_range_error << " m over " << test.cameras.size()
                  << " views\n";
    }
    return 0;
}

int cmd_render(const std::string& scene_path, const std::string& sensor, const std::string& mode, double t,
               const std::string& out, const std::string& depth_out) {
    const Scene scene = load_scene(scene_path);
    const CameraModel cam = find_camera(load_sensors(scene_path), sensor);
    const auto t0 = std::chrono::steady_clock::now();
    Framebuffer fb;
    if (mode == "ray") fb = render_camera(scene, build_octrees(scene), cam, t);
    else fb = rasterize(scene, cam, t);
    write_image(fb, out, depth_out);
    std::cout << mode << " " << cam.width << "x" << cam.height << " in " << std::fixed << std::setprecision(3)
              << seconds_since(t0) << " s -> " << out << "\n";
    return 0;
}

int cmd_lidar(const std::string& scene_path, const std::string& sensor, double t, const std::string& out) {
    const Scene scene = load_scene(scene_path);
    const SensorRig rig = load_sensors(scene_path);
    const LidarModel* lid = sensor.empty() ? (rig.lidars.empty() ? nullptr : &rig.lidars.front()) : rig.lidar(sensor);
    if (!lid) throw std::runtime_error("no LiDAR named '" + sensor + "' in the scene's sensors.json");
    const RayBatch rays = gen_lidar_rays(*lid, t);
    const std::vector<double> ranges = render_ranges(scene, build_octrees(scene), rays);
    std::vector<Vec3> o, d;
    for (const Ray& r : rays) {
        o.push_back(r.origin);
        d.push_back(r.dir);
    }
    ensure_parent(out);
    write_file(out, encode_pointcloud(o, d, ranges));
    std::size_t hits = 0;
    for (double r : ranges) hits += std::isfinite(r) ? 1 : 0;
    std::cout << "returns " << hits << " of " << rays.size() << " -> " << out << "\n";
    return 0;
}

int cmd_diff(const std::string& a_path, const std::string& b_path) {
    const Framebuffer a = read_ppm(a_path);
    const Framebuffer b = read_ppm(b_path);
    std::cout << std::setprecision(6) << "mean_l1 " << mean_l1(a, b) << "\npsnr " << psnr(a, b) << "\nssim "
              << ssim(a, b) << "\n";
    return 0;
}

int cmd_bench(const std::string& scene_path, const std::string& sensor, const std::vector<int>& resolutions,
              std::size_t brute_rays, int repeats) {
    const Scene scene = load_scene(scene_path);
    const SensorRig rig = load_sensors(scene_path);
    CameraModel base;
    if (!rig.cameras.empty() || !sensor.empty()) {
        base = find_camera(rig, sensor);
    } else {
        // No rig: look at the scene from outside its bounds.
        const SceneBounds b = scene.bounds();
        const Vec3 c = 0.5 * (b.aabb_min + b.aabb_max);
        const double r = (b.aabb_max - b.aabb_min).norm();
        base.width = base.height = 256;
        base.fx = base.fy = 256.0;
        base.cx = base.cy = 128.0;
        base.pose = look_at(c + Vec3(r, 0.3 * r, 0.3 * r), c);
    }
    const auto t_build = std::chrono::steady_clock::now();
    const SceneOctrees trees = build_octrees(scene);
    std::cout << "voxels " << scene.static_voxels.size() << ", octree nodes " << trees.static_tree.nodes.size()
              << ", build " << std::fixed << std::setprecision(3) << seconds_since(t_build) << " s\n\n";

    std::cout << std::left << std::setw(12) << "resolution" << std::right << std::setw(12) << "ray fps"
              << std::setw(12) << "raster fps" << std::setw(14) << "raster/ray" << std::setw(14) << "octree us"
              << std::setw(14) << "brute us" << std::setw(10) << "speedup" << "\n";
    for (int w : resolutions) {
        const CameraModel cam = scaled_camera(base, w);
        const RenderTiming rt = time_renderers(scene, trees, cam, 0.0, repeats);
        const TraversalTiming tt = time_traversal(scene.static_voxels, trees.static_tree, gen_camera_rays(cam, 0.0), brute_rays);
        std::ostringstream res;
        res << cam.width << "x" << cam.height;
        std::cout << std::left << std::setw(12) << res.str() << std::right << std::setprecision(2) << std::setw(12)
                  << rt.ray_fps() << std::setw(12) << rt.raster_fps() << std::setw(14) << rt.raster_fps() / rt.ray_fps()
                  << std::setprecision(3) << std::setw(14) << 1e6 * tt.octree_per_ray() << std::setw(14)
                  << 1e6 * tt.brute_per_ray() << std::setprecision(1) << std::setw(10) << tt.speedup() << "\n";
    }
    return 0;
}

int cmd_fx(const std::string& scene_path, const std::string& spheres_path, const std::string& sun, const std::string& sensor,
           double t, int bounces, const std::string& out) {
    const Scene scene = load_scene(scene_path);
    const CameraModel cam = find_camera(load_sensors(scene_path), sensor);
    const std::vector<InjectedSphere> spheres = spheres_from_json(read_json(spheres_path));
    const Vec3 sun_dir = parse_vec3(sun, "--sun").normalized();
    const SceneOctrees trees = build_octrees(scene);
    const RayBatch rays = gen_sensor_rays(cam, t);
    Framebuffer fb(cam.width, cam.height);
    parallel_for(rays.size(), [&](std::size_t i) {
        if (rays[i].valid) fb.set_color(i, trace_effects(scene, trees, rays[i], spheres, sun_dir, bounces));
    }, 16);
    write_image(fb, out, "");
    std::cout << "effects " << spheres.size() << " spheres -> " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"salf: sparse local-field scenes for camera and LiDAR simulation"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

    std::string spec, out, points, trajectory, scene, data, config, sensor, mode = "ray", a, b, spheres, sun = "0.3,0.2,1",
                                                                    log_path, depth_out;
    std::optional<double> base_edge;
    double time = 0.0;
    int64_t print_every = 100;
    std::vector<int> resolutions{256, 512, 1024};
    std::size_t brute_rays = 4096;
    int repeats = 1, bounces = 4;

    auto* mk = app.add_subcommand("make-synthetic", "render an analytic scene into a training dataset");
    mk->add_option("--spec", spec, "scene spec JSON")->required()->check(CLI::ExistingFile);
    mk->add_option("--out", out, "dataset directory")->required();

    auto* init = app.add_subcommand("init", "multiscale voxel initialization from LiDAR points");
    init->add_option("--points", points, "point cloud PLY (x y z columns first)")->required()->check(CLI::ExistingFile);
    init->add_option("--trajectory", trajectory, "trajectory JSON with pose boxes")->required()->check(CLI::ExistingFile);
    init->add_option("--out", out, "scene container directory")->required();
    init->add_option("--base-edge", base_edge, "override the inner voxel edge in meters");

    auto* train = app.add_subcommand("train", "optimize a scene against a dataset");
    train->add_option("--scene", scene, "input scene container")->required()->check(CLI::ExistingDirectory);
    train->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--config", config, "training config JSON")->required()->check(CLI::ExistingFile);
    train->add_option("--out", out, "output scene container")->required();
    train->add_option("--log", log_path, "line-delimited JSON log (default <out>/train_log.jsonl)");
    train->add_option("--print-every", print_every, "progress line interval in steps (0 = quiet)");

    auto* render = app.add_subcommand("render", "render a camera image");
    render->add_option("--scene", scene, "scene container")->required()->check(CLI::ExistingDirectory);
    render->add_option("--sensor", sensor, "camera name from sensors.json (default: first)");
    render->add_option("--mode", mode, "renderer")->check(CLI::IsMember({"ray", "raster"}));
    render->add_option("--time", time, "capture time in seconds");
    render->add_option("--out", out, "output .ppm")->required();
    render->add_option("--depth", depth_out, "also write expected depth as .pfm");

    auto* lidar = app.add_subcommand("lidar", "simulate a LiDAR sweep");
    lidar->add_option("--scene", scene, "scene container")->required()->check(CLI::ExistingDirectory);
    lidar->add_option("--sensor", sensor, "LiDAR name from sensors.json (default: first)");
    lidar->add_option("--time", time, "sweep start time in seconds");
    lidar->add_option("--out", out, "output .ply")->required();

    auto* diff = app.add_subcommand("diff", "compare two images");
    diff->add_option("--a", a, "first .ppm")->required()->check(CLI::ExistingFile);
    diff->add_option("--b", b, "second .ppm")->required()->check(CLI::ExistingFile);

    auto* bench = app.add_subcommand("bench", "renderer and traversal timings");
    bench->add_option("--scene", scene, "scene container")->required()->check(CLI::ExistingDirectory);
    bench->add_option("--sensor", sensor, "camera name (default: first, or an outside view)");
    bench->add_option("--resolutions", resolutions, "image widths")->delimiter(',')->check(CLI::PositiveNumber);
    bench->add_option("--brute-rays", brute_rays, "rays sampled for the brute-force baseline")->check(CLI::PositiveNumber);
    bench->add_option("--repeats", repeats, "frames per renderer, best time kept")->check(CLI::PositiveNumber);

    auto* fx = app.add_subcommand("fx", "render with injected mirror, glass and opaque spheres");
    fx->add_option("--scene", scene, "scene container")->required()->check(CLI::ExistingDirectory);
    fx->add_option("--spheres", spheres, "spheres JSON")->required()->check(CLI::ExistingFile);
    fx->add_option("--sun", sun, "direction toward the sun, dx,dy,dz");
    fx->add_option("--sensor", sensor, "camera name (default: first)");
    fx->add_option("--time", time, "capture time in seconds");
    fx->add_option("--bounces", bounces, "maximum secondary rays per path")->check(CLI::PositiveNumber);
    fx->add_option("--out", out, "output .ppm")->required();

    CLI11_PARSE(app, argc, argv);

    std::unique_ptr<tbb::global_control> limit;
    if (threads > 0)
        limit = std::make_unique<tbb::global_control>(tbb::global_control::max_allowed_parallelism, threads);

    try {
        if (*mk) return cmd_make_synthetic(spec, out);
        if (*init) return cmd_init(points, trajectory, out, base_edge);
        if (*train) return cmd_train(scene, data, config, out, log_path, print_every);
        if (*render) return cmd_render(scene, sensor, mode, time, out, depth_out);
        if (*lidar) return cmd_lidar(scene, sensor, time, out);
        if (*diff) return cmd_diff(a, b);
        if (*bench) return cmd_bench(scene, sensor, resolutions, brute_rays, repeats);
        if (*fx) return cmd_fx(scene, spheres, sun, sensor, time, bounces, out);
    } catch (const std::exception& e) {
        std::cerr << "salf: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
