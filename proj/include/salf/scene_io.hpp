#pragma once

// Scene containers, sensor rigs, JSON configuration and synthetic dataset
// directories.
//
// A container is a directory:
//   meta.json        format "salf.v1", bounds, grid, density mode, counts
//   voxels.bin       static voxels, 121 bytes each, little-endian:
//                    u8 level, 3 x i32 ijk, 27 x f32 parameters
//   actors.json      ids, extents, grids, trajectories
//   actor_<id>.bin   actor voxels in the same layout
//   sensors.json     camera and LiDAR rigs
// Parameters are stored as f32, so a save quantizes them once; saving a
// loaded container reproduces its files byte for byte.

#include "salf/image_io.hpp"
#include "salf/scene.hpp"
#include "salf/sensors.hpp"
#include "salf/synthetic.hpp"
#include "salf/trainer.hpp"
#include "salf/init.hpp"

#include <json.hpp>

#include <bit>
#include <filesystem>
#include <map>

namespace salf {

static_assert(std::endian::native == std::endian::little, "voxel files assume a little-endian host");

using json = nlohmann::json;

inline constexpr const char* kFormatVersion = "salf.v1";
inline constexpr std::size_t kVoxelRecordBytes = 1 + 3 * 4 + VoxelParams::kCount * 4;

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 3) throw std::runtime_error(what + ": expected an array of 3 numbers");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json to_json(const RigidPose& p) {
    return {{"translation", to_json(p.translation)},
            {"rotation", json::array({p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()})}};
}

inline RigidPose pose_from(const json& j, const std::string& what) {
    RigidPose p;
    p.translation = vec3_from(j.at("translation"), what + ".translation");
    const json& r = j.at("rotation");
    if (!r.is_array() || r.size() != 4) throw std::runtime_error(what + ".rotation: expected [w, x, y, z]");
    p.rotation = Quat(r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>());
    if (std::abs(p.rotation.norm() - 1.0) > 1e-6) throw std::runtime_error(what + ".rotation: not a unit quaternion");
    return p;
}

inline json to_json(const Aabb& b) { return {{"min", to_json(b.min)}, {"max", to_json(b.max)}}; }
inline Aabb aabb_from(const json& j, const std::string& what) {
    return {vec3_from(j.at("min"), what + ".min"), vec3_from(j.at("max"), what + ".max")};
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}
inline void read_opt_vec3(const json& j, const char* key, Vec3& out) {
    if (j.contains(key)) out = vec3_from(j.at(key), key);
}

inline const char* kind_name(CameraKind k) {
    switch (k) {
        case CameraKind::pinhole: return "pinhole";
        case CameraKind::fisheye: return "fisheye";
        case CameraKind::equirect: return "equirect";
    }
    return "pinhole";
}

inline CameraKind kind_from(const std::string& s) {
    if (s == "pinhole") return CameraKind::pinhole;
    if (s == "fisheye") return CameraKind::fisheye;
    if (s == "equirect") return CameraKind::equirect;
    throw std::runtime_error("unknown camera kind '" + s + "'");
}

inline json to_json(const CameraModel& c) {
    return {{"name", c.name},
            {"kind", kind_name(c.kind)},
            {"width", c.width},
            {"height", c.height},
            {"fx", c.fx},
            {"fy", c.fy},
            {"cx", c.cx},
            {"cy", c.cy},
            {"k", json::array({c.k[0], c.k[1], c.k[2], c.k[3]})},
            {"pose", to_json(c.pose)},
            {"rolling_shutter", c.rolling_shutter},
            {"readout_duration", c.readout_duration},
            {"linear_velocity", to_json(c.linear_velocity)},
            {"angular_velocity", to_json(c.angular_velocity)}};
}

inline CameraModel camera_from(const json& j) {
    CameraModel c;
    c.name = j.at("name").get<std::string>();
    c.kind = kind_from(j.value("kind", "pinhole"));
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    read_opt(j, "fx", c.fx);
    read_opt(j, "fy", c.fy);
    read_opt(j, "cx", c.cx);
    read_opt(j, "cy", c.cy);
    if (j.contains("k"))
        for (int i = 0; i < 4; ++i) c.k[i] = j.at("k").at(i).get<double>();
    if (j.contains("pose")) c.pose = pose_from(j.at("pose"), "camera '" + c.name + "'.pose");
    read_opt(j, "rolling_shutter", c.rolling_shutter);
    read_opt(j, "readout_duration", c.readout_duration);
    read_opt_vec3(j, "linear_velocity", c.linear_velocity);
    read_opt_vec3(j, "angular_velocity", c.angular_velocity);
    c.validate();
    return c;
}

inline json to_json(const LidarModel& l) {
    return {{"name", l.name},
            {"beam_elevations", l.beam_elevations},
            {"azimuth_start", l.azimuth_start},
            {"azimuth_end", l.azimuth_end},
            {"steps", l.steps},
            {"scan_period", l.scan_period},
            {"pose", to_json(l.pose)},
            {"linear_velocity", to_json(l.linear_velocity)},
            {"angular_velocity", to_json(l.angular_velocity)}};
}

inline LidarModel lidar_from(const json& j) {
    LidarModel l;
    l.name = j.at("name").get<std::string>();
    l.beam_elevations = j.at("beam_elevations").get<std::vector<double>>();
    read_opt(j, "azimuth_start", l.azimuth_start);
    read_opt(j, "azimuth_end", l.azimuth_end);
    read_opt(j, "steps", l.steps);
    read_opt(j, "scan_period", l.scan_period);
    if (j.contains("pose")) l.pose = pose_from(j.at("pose"), "lidar '" + l.name + "'.pose");
    read_opt_vec3(j, "linear_velocity", l.linear_velocity);
    read_opt_vec3(j, "angular_velocity", l.angular_velocity);
    l.validate();
    return l;
}

struct SensorRig {
    std::vector<CameraModel> cameras;
    std::vector<LidarModel> lidars;

    const CameraModel* camera(const std::string& name) const {
        for (const auto& c : cameras)
            if (c.name == name) return &c;
        return nullptr;
    }
    const LidarModel* lidar(const std::string& name) const {
        for (const auto& l : lidars)
            if (l.name == name) return &l;
        return nullptr;
    }
};

inline json to_json(const SensorRig& rig) {
    json cams = json::array();
    for (const auto& c : rig.cameras) cams.push_back(to_json(c));
    json lids = json::array();
    for (const auto& l : rig.lidars) lids.push_back(to_json(l));
    return {{"cameras", cams}, {"lidars", lids}};
}

inline SensorRig rig_from(const json& j) {
    SensorRig rig;
    if (j.contains("cameras"))
        for (const auto& c : j.at("cameras")) rig.cameras.push_back(camera_from(c));
    if (j.contains("lidars"))
        for (const auto& l : j.at("lidars")) rig.lidars.push_back(lidar_from(l));
    return rig;
}

inline json read_json(const std::string& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path + ": invalid JSON: " + e.what());
    }
}

inline void write_json(const std::string& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Voxel records
// ---------------------------------------------------------------------------

inline std::string encode_voxels(const SparseVoxelSet& voxels, const std::string& what) {
    std::string out;
    out.resize(voxels.size() * kVoxelRecordBytes);
    char* p = out.data();
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        const VoxelGeom& g = voxels.geom(i);
        const VoxelParams& prm = voxels.params(i);
        if (!prm.finite())
            throw std::invalid_argument(what + ": voxel " + std::to_string(i) + " has non-finite parameters");
        *p++ = static_cast<char>(static_cast<uint8_t>(g.level));
        for (int k = 0; k < 3; ++k) {
            std::memcpy(p, &g.ijk[k], 4);
            p += 4;
        }
        for (double v : prm.v) {
            const float f = static_cast<float>(v);
            if (!std::isfinite(f))
                throw std::invalid_argument(what + ": voxel " + std::to_string(i) + " parameter overflows f32");
            std::memcpy(p, &f, 4);
            p += 4;
        }
    }
    return out;
}

inline SparseVoxelSet decode_voxels(const std::string& bytes, std::size_t count, const SceneBounds& bounds,
                                    const std::string& what) {
    if (bytes.size() != count * kVoxelRecordBytes)
        throw std::runtime_error(what + ": size mismatch: expected " + std::to_string(count * kVoxelRecordBytes) +
                                 " bytes for " + std::to_string(count) + " voxels, found " +
                                 std::to_string(bytes.size()));
    SparseVoxelSet set(bounds);
    const char* p = bytes.data();
    for (std::size_t i = 0; i < count; ++i) {
        const int32_t level = static_cast<uint8_t>(*p++);
        std::array<int32_t, 3> ijk{};
        for (int k = 0; k < 3; ++k) {
            std::memcpy(&ijk[k], p, 4);
            p += 4;
        }
        VoxelParams prm;
        for (double& v : prm.v) {
            float f;
            std::memcpy(&f, p, 4);
            p += 4;
            v = f;
        }
        if (!prm.finite()) throw std::runtime_error(what + ": voxel " + std::to_string(i) + " has NaN/inf parameters");
        try {
            set.add(level, ijk, prm);
        } catch (const std::exception& e) {
            throw std::runtime_error(what + ": voxel " + std::to_string(i) + ": " + e.what());
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// Container
// ---------------------------------------------------------------------------

inline json bounds_json(const SceneBounds& b) {
    return {{"min", to_json(b.aabb_min)},
            {"max", to_json(b.aabb_max)},
            {"base_edge", b.base_edge},
            {"max_levels", b.max_levels}};
}

inline SceneBounds bounds_from(const json& j, const std::string& what) {
    SceneBounds b;
    b.aabb_min = vec3_from(j.at("min"), what + ".min");
    b.aabb_max = vec3_from(j.at("max"), what + ".max");
    b.base_edge = j.at("base_edge").get<double>();
    b.max_levels = j.at("max_levels").get<int>();
    b.validate();
    return b;
}

inline std::string actor_file(const std::string& id) { return "actor_" + id + ".bin"; }

inline void save_scene(const std::string& dir, const Scene& scene, const SensorRig& rig = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path root(dir);

    json meta;
    meta["format"] = kFormatVersion;
    meta["bounds"] = bounds_json(scene.bounds());
    meta["density_mode"] = scene.mode == DensityMode::sdf ? "sdf" : "raw";
    meta["voxel_count"] = scene.static_voxels.size();
    meta["actor_count"] = scene.actors.size();
    meta["inner_region"] = scene.inner_region ? to_json(*scene.inner_region) : json(nullptr);

    json actors = json::array();
    for (const Actor& a : scene.actors) {
        a.validate();
        if (a.id.empty() || a.id.find_first_of("/\\") != std::string::npos)
            throw std::invalid_argument("save_scene: actor id '" + a.id + "' is not a valid file name part");
        json traj = json::array();
        for (const auto& kf : a.trajectory) {
            json k = to_json(kf.pose);
            k["t"] = kf.t;
            traj.push_back(k);
        }
        actors.push_back({{"id", a.id},
                          {"extent", to_json(a.extent)},
                          {"bounds", bounds_json(a.voxels.bounds())},
                          {"voxel_count", a.voxels.size()},
                          {"trajectory", traj}});
        write_file((root / actor_file(a.id)).string(), encode_voxels(a.voxels, "actor '" + a.id + "'"));
    }

    write_file((root / "voxels.bin").string(), encode_voxels(scene.static_voxels, "static voxels"));
    write_json((root / "meta.json").string(), meta);
    write_json((root / "actors.json").string(), actors);
    write_json((root / "sensors.json").string(), to_json(rig));
}

inline Scene load_scene(const std::string& dir) {
    const std::filesystem::path root(dir);
    const std::string meta_path = (root / "meta.json").string();
    const json meta = read_json(meta_path);
    if (!meta.contains("format")) throw std::runtime_error(meta_path + ": missing format version");
    const std::string version = meta.at("format").get<std::string>();
    if (version != kFormatVersion)
        throw std::runtime_error(meta_path + ": unknown format version '" + version + "' (expected " + kFormatVersion + ")");

    Scene scene;
    const std::string mode = meta.at("density_mode").get<std::string>();
    if (mode == "sdf") scene.mode = DensityMode::sdf;
    else if (mode == "raw") scene.mode = DensityMode::raw;
    else throw std::runtime_error(meta_path + ": density_mode: unknown value '" + mode + "'");
    const SceneBounds bounds = bounds_from(meta.at("bounds"), "meta.bounds");
    if (meta.contains("inner_region") && !meta.at("inner_region").is_null())
        scene.inner_region = aabb_from(meta.at("inner_region"), "meta.inner_region");
    const auto count = meta.at("voxel_count").get<std::size_t>();
    scene.static_voxels = decode_voxels(read_file((root / "voxels.bin").string()), count, bounds, "voxels.bin");

    const std::string actors_path = (root / "actors.json").string();
    const json actors = read_json(actors_path);
    const auto actor_count = meta.at("actor_count").get<std::size_t>();
    if (!actors.is_array() || actors.size() != actor_count)
        throw std::runtime_error(actors_path + ": actor count does not match meta.actor_count");
    for (const json& aj : actors) {
        Actor a;
        a.id = aj.at("id").get<std::string>();
        a.extent = vec3_from(aj.at("extent"), "actor '" + a.id + "'.extent");
        const SceneBounds ab = bounds_from(aj.at("bounds"), "actor '" + a.id + "'.bounds");
        for (const json& k : aj.at("trajectory")) a.trajectory.push_back({k.at("t").get<double>(), pose_from(k, "actor '" + a.id + "' keyframe")});
        a.voxels = decode_voxels(read_file((root / actor_file(a.id)).string()), aj.at("voxel_count").get<std::size_t>(),
                                 ab, actor_file(a.id));
        a.validate();
        scene.actors.push_back(std::move(a));
    }
    return scene;
}

inline SensorRig load_sensors(const std::string& dir) {
    const auto path = (std::filesystem::path(dir) / "sensors.json").string();
    if (!std::filesystem::exists(path)) return {};
    return rig_from(read_json(path));
}

// ---------------------------------------------------------------------------
// Configuration files
// ---------------------------------------------------------------------------

inline SyntheticSceneSpec spec_from_json(const json& j) {
    SyntheticSceneSpec s;
    const uint64_t seed = j.value("seed", uint64_t{42});
    if (j.value("preset", std::string()) == "standard") s = standard_scene_spec(seed);
    else if (j.contains("preset")) throw std::runtime_error("spec: unknown preset '" + j.at("preset").get<std::string>() + "'");
    s.seed = seed;
    if (j.contains("boxes")) {
        s.boxes.clear();
        for (const auto& b : j.at("boxes"))
            s.boxes.push_back({vec3_from(b.at("min"), "box.min"), vec3_from(b.at("max"), "box.max"),
                               vec3_from(b.at("color"), "box.color")});
    }
    if (j.contains("spheres")) {
        s.spheres.clear();
        for (const auto& b : j.at("spheres"))
            s.spheres.push_back({vec3_from(b.at("center"), "sphere.center"), b.at("radius").get<double>(),
                                 vec3_from(b.at("color"), "sphere.color")});
    }
    if (j.contains("ground")) {
        if (j.at("ground").is_null()) s.ground.reset();
        else s.ground = PlanePrimitive{j.at("ground").at("height").get<double>(), vec3_from(j.at("ground").at("color"), "ground.color")};
    }
    read_opt_vec3(j, "background", s.background);
    if (j.contains("light_dir")) s.light_dir = vec3_from(j.at("light_dir"), "light_dir").normalized();
    read_opt(j, "ambient", s.ambient);
    read_opt(j, "diffuse", s.diffuse);
    read_opt(j, "frames", s.frames);
    read_opt(j, "holdout_every", s.holdout_every);
    if (j.contains("trajectory")) {
        const json& t = j.at("trajectory");
        read_opt_vec3(t, "center", s.trajectory.center);
        read_opt(t, "radius", s.trajectory.radius);
        read_opt(t, "height", s.trajectory.height);
        read_opt_vec3(t, "target", s.trajectory.target);
        read_opt(t, "jitter", s.trajectory.jitter);
        read_opt(t, "frame_dt", s.trajectory.frame_dt);
    }
    read_opt(j, "image_width", s.image_width);
    read_opt(j, "image_height", s.image_height);
    read_opt(j, "fov_deg", s.fov_deg);
    read_opt(j, "lidar_elevations_deg", s.lidar_elevations_deg);
    read_opt(j, "lidar_steps", s.lidar_steps);
    read_opt(j, "lidar_period", s.lidar_period);
    read_opt(j, "lidar_max_range", s.lidar_max_range);
    read_opt(j, "pose_box_half", s.pose_box_half);
    read_opt(j, "init_base_edge", s.init_base_edge);
    read_opt(j, "init_margin_up", s.init_margin_up);
    read_opt(j, "init_margin_down", s.init_margin_down);
    read_opt(j, "init_margin_lateral", s.init_margin_lateral);
    s.validate();
    return s;
}

inline TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    read_opt(j, "steps", c.steps);
    read_opt(j, "camera_rays", c.camera_rays);
    read_opt(j, "lidar_rays", c.lidar_rays);
    read_opt(j, "reg_samples", c.reg_samples);
    read_opt(j, "point_samples", c.point_samples);
    read_opt(j, "seed", c.seed);
    read_opt(j, "lr", c.adam.lr);
    read_opt(j, "lr_decay", c.adam.decay);
    read_opt(j, "lr_decay_every", c.adam.decay_every);
    read_opt(j, "termination_opacity", c.render.termination_opacity);
    if (j.contains("weights")) {
        const json& w = j.at("weights");
        read_opt(w, "color", c.weights.color);
        read_opt(w, "depth", c.weights.depth);
        read_opt(w, "eikonal", c.weights.eikonal);
        read_opt(w, "smooth", c.weights.smooth);
        read_opt(w, "opacity", c.weights.opacity);
        read_opt(w, "empty", c.weights.empty);
    }
    if (j.contains("densify")) {
        const json& d = j.at("densify");
        read_opt(d, "enabled", c.densify_enabled);
        read_opt(d, "budget", c.densify.budget);
        read_opt(d, "prune_opacity", c.densify.prune_opacity);
        read_opt(d, "interval", c.densify.interval);
        read_opt(d, "stop_fraction", c.densify.stop_fraction);
    }
    c.validate();
    return c;
}

/// Effects-demo spheres: an array of {center, radius, material, ior, albedo}
/// with material one of "mirror", "glass", "opaque".
inline std::vector<InjectedSphere> spheres_from_json(const json& j) {
    if (!j.is_array()) throw std::runtime_error("spheres: expected a JSON array");
    std::vector<InjectedSphere> out;
    for (const json& e : j) {
        InjectedSphere s;
        s.center = vec3_from(e.at("center"), "sphere.center");
        s.radius = e.at("radius").get<double>();
        const std::string m = e.value("material", std::string("opaque"));
        if (m == "mirror") s.material = SphereMaterial::mirror;
        else if (m == "glass") s.material = SphereMaterial::glass;
        else if (m == "opaque") s.material = SphereMaterial::opaque;
        else throw std::runtime_error("sphere.material: unknown value '" + m + "'");
        read_opt(e, "ior", s.ior);
        read_opt_vec3(e, "albedo", s.albedo);
        s.validate();
        out.push_back(s);
    }
    return out;
}

inline json to_json(const StepLog& l) {
    return {{"step", l.step},       {"color", l.color},     {"depth", l.depth}, {"eikonal", l.eikonal},
            {"smooth", l.smooth},   {"opacity", l.opacity}, {"empty", l.empty}, {"total", l.total},
            {"voxels", l.voxels},   {"lr", l.lr}};
}

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

inline InitConfig init_config_for(const SyntheticSceneSpec& spec) {
    InitConfig c;
    c.base_edge = spec.init_base_edge;
    c.margin_up = spec.init_margin_up;
    c.margin_down = spec.init_margin_down;
    c.margin_lateral = spec.init_margin_lateral;
    c.seed = spec.seed;
    return c;
}

inline CameraView camera_view(const SyntheticFrame& f) {
    CameraView v;
    v.camera = f.camera;
    v.time = f.time;
    v.rgb.resize(f.image.pixel_count());
    for (std::size_t i = 0; i < v.rgb.size(); ++i) v.rgb[i] = f.image.color(i);
    return v;
}

/// Training (or held-out) split of a synthetic dataset.
inline TrainDataset dataset_split(const SyntheticData& data, bool train) {
    TrainDataset ds;
    for (const auto& f : data.frames) {
        if (f.train != train) continue;
        ds.cameras.push_back(camera_view(f));
        if (!f.ranges.empty()) ds.lidars.push_back({f.lidar, f.time, f.ranges});
    }
    if (train) ds.points = data.points;
    return ds;
}

inline std::string indexed_name(const char* prefix, int index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03d", prefix, index);
    return buf;
}

/// Writes images, depth maps, LiDAR sweeps, the training point cloud and
/// the trajectory/sensor description used by `salf init`.
inline void save_synthetic(const std::string& dir, const SyntheticSceneSpec& spec, const SyntheticData& data) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path root(dir);
    json frames = json::array();
    SensorRig rig;
    for (const auto& f : data.frames) {
        CameraModel cam = f.camera;
        cam.name = indexed_name("cam", f.index);
        LidarModel lid = f.lidar;
        lid.name = indexed_name("lidar", f.index);
        rig.cameras.push_back(cam);
        if (!lid.beam_elevations.empty()) rig.lidars.push_back(lid);

        const std::string img = cam.name + ".ppm";
        const std::string dep = indexed_name("depth", f.index) + ".pfm";
        write_ppm(f.image, (root / img).string());
        write_pfm_depth(f.image, (root / dep).string());
        json fj = {{"index", f.index},     {"time", f.time}, {"split", f.train ? "train" : "test"},
                   {"camera", cam.name},   {"image", img},   {"depth", dep}};
        if (!f.ranges.empty()) {
            const RayBatch rays = gen_lidar_rays(f.lidar, f.time);
            std::vector<std::vector<double>> rows;
            for (std::size_t i = 0; i < rays.size(); ++i) {
                if (!std::isfinite(f.ranges[i])) continue;
                const Vec3 p = rays[i].at(f.ranges[i]);
                rows.push_back({p.x(), p.y(), p.z(), static_cast<double>(rays[i].row),
                                static_cast<double>(rays[i].col), f.ranges[i]});
            }
            const std::string ply = lid.name + ".ply";
            write_file((root / ply).string(), encode_ply(rows, {"x", "y", "z", "beam", "step", "range"}));
            fj["lidar"] = lid.name;
            fj["lidar_returns"] = ply;
        }
        frames.push_back(fj);
    }
    std::vector<std::vector<double>> pts;
    for (const Vec3& p : data.points) pts.push_back({p.x(), p.y(), p.z()});
    write_file((root / "points.ply").string(), encode_ply(pts, {"x", "y", "z"}));

    json boxes = json::array();
    for (const auto& b : data.trajectory_boxes) boxes.push_back(to_json(b));
    const InitConfig ic = init_config_for(spec);
    json traj = {{"boxes", boxes},
                 {"init",
                  {{"base_edge", ic.base_edge},
                   {"margin_up", ic.margin_up},
                   {"margin_down", ic.margin_down},
                   {"margin_lateral", ic.margin_lateral},
                   {"seed", ic.seed}}},
                 {"sensors", to_json(rig)}};
    write_json((root / "trajectory.json").string(), traj);
    write_json((root / "frames.json").string(), frames);
    write_json((root / "sensors.json").string(), to_json(rig));
}

struct LoadedTrajectory {
    std::vector<Aabb> boxes;
    InitConfig init;
    SensorRig sensors;
};

inline LoadedTrajectory load_trajectory(const std::string& path) {
    const json j = read_json(path);
    LoadedTrajectory t;
    for (const auto& b : j.at("boxes")) t.boxes.push_back(aabb_from(b, path + ": box"));
    if (j.contains("init")) {
        const json& i = j.at("init");
        read_opt(i, "base_edge", t.init.base_edge);
        read_opt(i, "margin_up", t.init.margin_up);
        read_opt(i, "margin_down", t.init.margin_down);
        read_opt(i, "margin_lateral", t.init.margin_lateral);
        read_opt(i, "extra_levels", t.init.extra_levels);
        read_opt(i, "seed", t.init.seed);
    }
    if (j.contains("sensors")) t.sensors = rig_from(j.at("sensors"));
    return t;
}

/// Loads a dataset directory written by save_synthetic; `train` selects the split.
inline TrainDataset load_dataset(const std::string& dir, bool train) {
    const std::filesystem::path root(dir);
    const json frames = read_json((root / "frames.json").string());
    const SensorRig rig = load_sensors(dir);
    TrainDataset ds;
    for (const auto& fj : frames) {
        if ((fj.at("split").get<std::string>() == "train") != train) continue;
        const double time = fj.at("time").get<double>();
        const CameraModel* cam = rig.camera(fj.at("camera").get<std::string>());
        if (!cam) throw std::runtime_error(dir + ": frame refers to unknown camera");
        const Framebuffer img = read_ppm((root / fj.at("image").get<std::string>()).string());
        if (img.width != cam->width || img.height != cam->height)
            throw std::runtime_error(dir + ": image size does not match camera '" + cam->name + "'");
        CameraView v{*cam, time, {}};
        for (std::size_t i = 0; i < img.pixel_count(); ++i) v.rgb.push_back(img.color(i));
        ds.cameras.push_back(std::move(v));
        if (fj.contains("lidar")) {
            const LidarModel* lid = rig.lidar(fj.at("lidar").get<std::string>());
            if (!lid) throw std::runtime_error(dir + ": frame refers to unknown LiDAR");
            LidarSweep s{*lid, time,
                         std::vector<double>(lid->beam_elevations.size() * static_cast<std::size_t>(lid->steps),
                                             std::numeric_limits<double>::quiet_NaN())};
            for (const auto& r : read_ply_rows((root / fj.at("lidar_returns").get<std::string>()).string())) {
                const auto idx = static_cast<std::size_t>(r.at(3)) * static_cast<std::size_t>(lid->steps) +
                                 static_cast<std::size_t>(r.at(4));
                if (idx >= s.ranges.size()) throw std::runtime_error(dir + ": LiDAR return index out of range");
                s.ranges[idx] = r.at(5);
            }
            ds.lidars.push_back(std::move(s));
        }
    }
    if (train) ds.points = points_of_rows(read_ply_rows((root / "points.ply").string()));
    return ds;
}

}  // namespace salf
