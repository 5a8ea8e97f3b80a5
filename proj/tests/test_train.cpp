#include "support/fixtures.hpp"

#include <gtest/gtest.h>

using namespace salf;
using salf::testing::central_difference;
using salf::testing::relative_error;

namespace {

RenderRecord record_with(const Vec3& color, std::optional<double> depth = std::nullopt) {
    RenderRecord r;
    r.color = color;
    r.depth = depth;
    return r;
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0u);
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss values
// ---------------------------------------------------------------------------

TEST(LossColor, ExamplesAndReference) {
    std::vector<RenderRecord> recs;
    std::vector<Vec3> gt;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 64; ++i) {
        const Vec3 c(u(rng), u(rng), u(rng));
        recs.push_back(record_with(c));
        gt.push_back(c);
    }
    EXPECT_EQ(loss_color(recs, gt), 0.0);
    std::vector<Vec3> shifted = gt;
    for (auto& c : shifted) c += Vec3::Constant(0.1);
    EXPECT_NEAR(loss_color(recs, shifted), 0.1, 1e-12);

    std::vector<Vec3> other;
    for (int i = 0; i < 64; ++i) other.emplace_back(u(rng), u(rng), u(rng));
    double ref = 0.0;
    for (int i = 0; i < 64; ++i)
        for (int k = 0; k < 3; ++k) ref += std::abs(recs[i].color[k] - other[i][k]);
    ref /= 192.0;
    EXPECT_NEAR(loss_color(recs, other), ref, 1e-12);
    EXPECT_THROW(loss_color(recs, {}), std::invalid_argument);
}

TEST(LossDepth, Examples) {
    std::vector<RenderRecord> recs{record_with(Vec3::Zero(), 3.0), record_with(Vec3::Zero(), 5.0),
                                   record_with(Vec3::Zero())};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    EXPECT_EQ(loss_depth(recs, {3.0, 5.0, 2.0}), 0.0);
    EXPECT_NEAR(loss_depth(recs, {3.5, 4.5, 7.0}), 0.5, 1e-12);
    std::vector<double> g;
    EXPECT_EQ(loss_depth(recs, {nan, -1.0, 2.0}, &g), 0.0);
    EXPECT_EQ(g, std::vector<double>(3, 0.0));
}

TEST(LossEikonal, Examples) {
    SparseVoxelSet set(salf::testing::unit_bounds());
    VoxelParams p;
    p.w_s(0) = 1.0;
    p.w_s(3) = 0.7;
    set.add(0, {0, 0, 0}, p);
    p.w_s(0) = 2.0;
    set.add(0, {1, 0, 0}, p);
    p.w_s(0) = 3.0;
    p.w_s(1) = 4.0;
    set.add(0, {2, 0, 0}, p);
    const std::vector<std::size_t> a{0}, b{1}, c{2};
    EXPECT_EQ(loss_eikonal(set, a), 0.0);
    EXPECT_DOUBLE_EQ(loss_eikonal(set, b), 1.0);
    EXPECT_DOUBLE_EQ(loss_eikonal(set, c), 4.0);
    EXPECT_EQ(loss_eikonal(set, {}), 0.0);
}

TEST(LossSmooth, Examples) {
    SparseVoxelSet set(salf::testing::unit_bounds());
    EXPECT_TRUE(face_adjacency(set).empty());
    set.add(0, {0, 0, 0}, {});
    EXPECT_TRUE(face_adjacency(set).empty());

    // Two same-size neighbors along x with bias-only SDFs 0 and 1.
    VoxelParams q;
    q.w_s(3) = 1.0;
    set.add(0, {1, 0, 0}, q);
    const auto pairs = face_adjacency(set);
    ASSERT_EQ(pairs.size(), 1u);
    EXPECT_EQ(pairs[0].fine, 0u);
    EXPECT_EQ(pairs[0].coarse, 1u);
    EXPECT_EQ(pairs[0].axis, 0);
    EXPECT_EQ(pairs[0].dir, 1);
    const std::vector<std::size_t> sel{0};
    EXPECT_DOUBLE_EQ(loss_smooth(set, pairs, sel), 1.0);

    // Identical linear fields continue across the face: x_local + 1 on the
    // left equals x_local - 1 on the right, so W_s = [1, 0, 0, 0] and
    // [1, 0, 0, 2] agree at every face point.
    VoxelParams l, r;
    l.w_s(0) = 1.0;
    r.w_s(0) = 1.0;
    r.w_s(3) = 2.0;
    SparseVoxelSet cont(salf::testing::unit_bounds());
    cont.add(0, {0, 0, 0}, l);
    cont.add(0, {1, 0, 0}, r);
    EXPECT_NEAR(loss_smooth(cont, face_adjacency(cont), sel), 0.0, 1e-15);
}

TEST(FaceAdjacency, FineToCoarsePairs) {
    SparseVoxelSet set(salf::testing::unit_bounds());
    set.add(0, {1, 0, 0}, {});
    for (int c = 0; c < 8; ++c) set.add(1, {c & 1, (c >> 1) & 1, (c >> 2) & 1}, {});
    const auto pairs = face_adjacency(set);
    // Four fine voxels touch the coarse one; the 8 children share 12 internal faces.
    std::size_t to_coarse = 0;
    for (const auto& f : pairs)
        if (f.coarse == 0) {
            ++to_coarse;
            EXPECT_EQ(set.geom(f.fine).ijk[0], 1);
        }
    EXPECT_EQ(to_coarse, 4u);
    EXPECT_EQ(pairs.size(), 16u);
}

TEST(LossOpacity, Examples) {
    SparseVoxelSet set(salf::testing::unit_bounds());
    VoxelParams p;
    p.w_s(3) = std::log(std::log(2.0) / 0.2);
    set.add(0, {0, 0, 0}, p);
    VoxelParams dense;
    dense.w_s(3) = 20.0;
    set.add(0, {1, 0, 0}, dense);
    VoxelParams none;
    none.w_s(3) = -1e3;
    set.add(0, {2, 0, 0}, none);
    EXPECT_NEAR(loss_opacity_lidar(set, DensityMode::raw, {{0, Vec3::Zero()}}), 0.5, 1e-12);
    EXPECT_NEAR(loss_opacity_lidar(set, DensityMode::raw, {{1, Vec3::Zero()}}), 0.0, 1e-12);
    EXPECT_NEAR(loss_opacity_lidar(set, DensityMode::raw, {{2, Vec3::Zero()}}), 1.0, 1e-12);
    EXPECT_EQ(loss_opacity_lidar(set, DensityMode::raw, {}), 0.0);
}

TEST(LossEmpty, QuantileMatchesSortOracle) {
    std::mt19937_64 rng(3);
    SceneBounds b = salf::testing::unit_bounds();
    SparseVoxelSet set(b);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int32_t i = 0; i < 8; ++i)
        for (int32_t j = 0; j < 3; ++j) {
            VoxelParams p;
            p.w_s(3) = n(rng);
            set.add(0, {i, j, 0}, p);
        }
    const auto sel = all_indices(set.size());
    std::vector<double> ops;
    for (std::size_t i : sel) {
        const double sigma = std::exp(set.params(i).w_s(3));
        ops.push_back(1.0 - std::exp(-sigma * set.geom(i).edge));
    }
    std::sort(ops.begin(), ops.end());
    const std::size_t k = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(ops.size())));
    const double want = std::accumulate(ops.begin(), ops.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / k;
    EXPECT_NEAR(loss_empty(set, DensityMode::raw, sel), want, 1e-12);

    SparseVoxelSet zero(b);
    VoxelParams z;
    z.w_s(3) = -1e3;
    zero.add(0, {0, 0, 0}, z);
    const std::vector<std::size_t> one{0};
    EXPECT_NEAR(loss_empty(zero, DensityMode::raw, one), 0.0, 1e-12);
    zero.params(0).w_s(3) = 10.0;
    EXPECT_GT(loss_empty(zero, DensityMode::raw, one), 0.99);
}

TEST(OuterVoxels, UsesInnerRegion) {
    Scene s;
    s.static_voxels = SparseVoxelSet(salf::testing::unit_bounds());
    s.static_voxels.add(0, {0, 0, 0}, {});
    s.static_voxels.add(0, {4, 4, 4}, {});
    EXPECT_TRUE(outer_voxels(s).empty());
    s.inner_region = Aabb{Vec3::Constant(-0.5), Vec3::Constant(0.5)};
    EXPECT_EQ(outer_voxels(s), std::vector<std::size_t>{0});
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

namespace {

/// A linear probe of the rendered outputs: L = sum r_i . C_i + q_i D_i.
/// Its gradient with respect to C and D is exactly (r, q), so the check
/// isolates the backward pass through rendering.
struct Probe {
    std::vector<Vec3> r;
    std::vector<double> q;
};

Probe make_probe(std::size_t n, uint64_t seed, bool depth) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Probe p;
    for (std::size_t i = 0; i < n; ++i) {
        p.r.emplace_back(u(rng), u(rng), u(rng));
        p.q.push_back(depth ? u(rng) : 0.0);
    }
    return p;
}

double probe_value(const Scene& s, const SceneOctrees& t, const RayBatch& rays, const Probe& p,
                   const RenderOptions& opt) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rays.size(); ++i) {
        const RenderRecord rec = integrate_ray(s, t, rays[i], opt);
        acc += p.r[i].dot(rec.color);
        if (rec.depth) acc += p.q[i] * *rec.depth;
    }
    return acc;
}

/// Every parameter with |s| < 1e-6 at some sampled midpoint sits on the
/// density kink, where central differences are meaningless.
std::vector<bool> on_kink(const Scene& s, const SceneOctrees& t, const RayBatch& rays, const RenderOptions& opt) {
    std::vector<bool> kink(s.static_voxels.size(), false);
    for (const Ray& r : rays)
        for (const auto& seg : integrate_ray(s, t, r, opt).segments)
            if (std::abs(seg.sdf) < 1e-6) kink[static_cast<std::size_t>(seg.voxel)] = true;
    return kink;
}

void check_render_gradients(DensityMode mode, bool depth, uint64_t seed) {
    Scene s = salf::testing::gradient_fixture(seed, 10, mode);
    const SceneOctrees t = build_octrees(s);
    const RayBatch rays = salf::testing::fixture_rays(seed + 100, 50);
    const Probe p = make_probe(rays.size(), seed + 200, depth);
    RenderOptions opt;
    opt.early_termination = false;
    opt.background = Vec3(0.3, 0.1, 0.6);

    std::vector<RenderRecord> recs;
    for (const Ray& r : rays) recs.push_back(integrate_ray(s, t, r, opt));
    SceneGrads g = SceneGrads::zeros_like(s);
    backward(recs, p.r, p.q, s, g);

    const auto kink = on_kink(s, t, rays, opt);
    std::size_t checked = 0, nonzero = 0;
    for (std::size_t v = 0; v < s.static_voxels.size(); ++v) {
        if (kink[v]) continue;
        for (std::size_t k = 0; k < VoxelParams::kCount; ++k) {
            double& slot = s.static_voxels.params(v).v[k];
            const double fd = central_difference([&] { return probe_value(s, t, rays, p, opt); }, slot);
            const double an = g.statics[v].v[k];
            EXPECT_LT(relative_error(an, fd), 1e-3) << "voxel " << v << " param " << k << " analytic " << an
                                                    << " numeric " << fd;
            ++checked;
            if (std::abs(an) > 1e-8) ++nonzero;
        }
    }
    EXPECT_GT(checked, 100u);
    EXPECT_GT(nonzero, checked / 3);
}

}  // namespace

TEST(Backward, MatchesFiniteDifferencesColor) { check_render_gradients(DensityMode::sdf, false, 1); }
TEST(Backward, MatchesFiniteDifferencesColorAndDepth) { check_render_gradients(DensityMode::sdf, true, 2); }
TEST(Backward, MatchesFiniteDifferencesRawDensity) { check_render_gradients(DensityMode::raw, true, 3); }

TEST(Backward, ZeroLossGivesZeroGradient) {
    const Scene s = salf::testing::gradient_fixture(5);
    const SceneOctrees t = build_octrees(s);
    const RayBatch rays = salf::testing::fixture_rays(6, 30);
    std::vector<RenderRecord> recs;
    std::vector<Vec3> gt;
    for (const Ray& r : rays) {
        recs.push_back(integrate_ray(s, t, r));
        gt.push_back(recs.back().color);
    }
    std::vector<Vec3> dl;
    EXPECT_EQ(loss_color(recs, gt, &dl), 0.0);
    SceneGrads g = SceneGrads::zeros_like(s);
    backward(recs, dl, {}, s, g);
    for (const auto& p : g.statics)
        for (double x : p.v) EXPECT_EQ(x, 0.0);
}

TEST(Backward, BackgroundRaysHaveNoGradient) {
    const Scene s = salf::testing::gradient_fixture(7);
    const SceneOctrees t = build_octrees(s);
    Ray r;
    r.origin = Vec3(5.0, 5.0, 5.0);
    r.dir = Vec3::UnitX();
    const std::vector<RenderRecord> recs{integrate_ray(s, t, r)};
    SceneGrads g = SceneGrads::zeros_like(s);
    backward(recs, {Vec3::Ones()}, {1.0}, s, g);
    for (const auto& p : g.statics)
        for (double x : p.v) EXPECT_EQ(x, 0.0);
    EXPECT_THROW(backward(recs, {}, {}, s, g), std::invalid_argument);
    EXPECT_THROW(backward(recs, {Vec3::Ones(), Vec3::Ones()}, {}, s, g), std::invalid_argument);
}

TEST(Backward, DensityKinkHasZeroSubgradient) {
    const VoxelParams p = VoxelParams::with_shape(2.0, 0.5);
    const DensityPartials d = density_partials(0.0, p, DensityMode::sdf);
    EXPECT_EQ(d.d_s, 0.0);
    EXPECT_EQ(d.d_log_b, 0.0);
    EXPECT_DOUBLE_EQ(d.d_log_a, 1.0);
}

TEST(Backward, IsDeterministicAcrossRuns) {
    const Scene s = salf::testing::gradient_fixture(8);
    const SceneOctrees t = build_octrees(s);
    const RayBatch rays = salf::testing::fixture_rays(9, 200);
    std::vector<RenderRecord> recs;
    for (const Ray& r : rays) recs.push_back(integrate_ray(s, t, r));
    const Probe p = make_probe(rays.size(), 10, true);
    SceneGrads a = SceneGrads::zeros_like(s), b = SceneGrads::zeros_like(s);
    backward(recs, p.r, p.q, s, a);
    backward(recs, p.r, p.q, s, b);
    for (std::size_t i = 0; i < a.statics.size(); ++i) EXPECT_EQ(a.statics[i].v, b.statics[i].v);
}

namespace {

/// FD check of a regularizer written as f(grad_sink) -> weighted loss.
void check_regularizer(Scene& s, const std::function<double(ParamGrads*)>& f, double tol = 1e-3) {
    ParamGrads g(s.static_voxels.size());
    f(&g);
    std::size_t nonzero = 0;
    for (std::size_t v = 0; v < s.static_voxels.size(); ++v)
        for (std::size_t k = 0; k < VoxelParams::kCount; ++k) {
            double& slot = s.static_voxels.params(v).v[k];
            const double fd = central_difference([&] { return f(nullptr); }, slot, 1e-6);
            EXPECT_LT(relative_error(g[v].v[k], fd), tol) << "voxel " << v << " param " << k;
            if (g[v].v[k] != 0.0) ++nonzero;
        }
    EXPECT_GT(nonzero, 0u);
}

}  // namespace

TEST(RegularizerGradients, Eikonal) {
    Scene s = salf::testing::gradient_fixture(11);
    const auto sel = all_indices(s.static_voxels.size());
    check_regularizer(s, [&](ParamGrads* g) { return 0.7 * loss_eikonal(s.static_voxels, sel, g, 0.7); });
}

TEST(RegularizerGradients, Smooth) {
    Scene s = salf::testing::gradient_fixture(12, 20);
    const auto pairs = face_adjacency(s.static_voxels);
    ASSERT_FALSE(pairs.empty());
    const auto sel = all_indices(pairs.size());
    check_regularizer(s, [&](ParamGrads* g) { return 3.0 * loss_smooth(s.static_voxels, pairs, sel, g, 3.0); });
}

TEST(RegularizerGradients, Opacity) {
    Scene s = salf::testing::gradient_fixture(13);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<PointSample> pts;
    for (std::size_t v = 0; v < s.static_voxels.size(); ++v)
        for (int j = 0; j < 3; ++j) pts.push_back({v, Vec3(u(rng), u(rng), u(rng))});
    check_regularizer(s, [&](ParamGrads* g) { return 10.0 * loss_opacity_lidar(s.static_voxels, s.mode, pts, g, 10.0); });
}

TEST(RegularizerGradients, Empty) {
    Scene s = salf::testing::gradient_fixture(14);
    for (auto& p : s.static_voxels.all_params()) p.w_s(3) -= 2.0;
    const auto sel = all_indices(s.static_voxels.size());
    check_regularizer(s, [&](ParamGrads* g) { return 0.1 * loss_empty(s.static_voxels, s.mode, sel, g, 0.1); });
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientKeepsParams) {
    std::vector<VoxelParams> params(2, VoxelParams::with_shape(2.0, 0.2));
    const auto before = params;
    OptimState st(2);
    st.m[0].v[3] = 0.5;
    st.v[0].v[3] = 0.25;
    adam_step(params, std::vector<VoxelParams>(2), st);
    EXPECT_NEAR(st.m[0].v[3], 0.45, 1e-15);
    EXPECT_NEAR(st.v[0].v[3], 0.24975, 1e-15);
    EXPECT_EQ(params[1].v, before[1].v);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<VoxelParams> params(1);
    std::vector<VoxelParams> grads(1);
    grads[0].v[0] = 3.7;
    grads[0].v[1] = -0.02;
    OptimState st(1);
    adam_step(params, grads, st);
    EXPECT_NEAR(params[0].v[0], -0.01, 1e-8);
    EXPECT_NEAR(params[0].v[1], 0.01, 1e-8);
    EXPECT_EQ(params[0].v[2], 0.0);
}

TEST(Adam, MatchesScalarReferenceTrace) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<VoxelParams> params(3);
    for (auto& p : params)
        for (double& x : p.v) x = n(rng);
    std::vector<std::vector<double>> ref(3, std::vector<double>(VoxelParams::kCount));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < VoxelParams::kCount; ++k) ref[i][k] = params[i].v[k];
    std::vector<std::vector<double>> m(3, std::vector<double>(VoxelParams::kCount, 0.0)), v = m;

    AdamConfig cfg;
    cfg.decay_every = 4;  // exercise the schedule within 10 steps
    OptimState st(3, cfg);
    for (int step = 0; step < 10; ++step) {
        std::vector<VoxelParams> grads(3);
        for (auto& g : grads)
            for (double& x : g.v) x = n(rng);
        const double lr = 0.01 * std::pow(0.8, step / 4);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t k = 0; k < VoxelParams::kCount; ++k) {
                const double g = grads[i].v[k];
                m[i][k] = 0.9 * m[i][k] + 0.1 * g;
                v[i][k] = 0.999 * v[i][k] + 0.001 * g * g;
                const double mh = m[i][k] / (1.0 - std::pow(0.9, step + 1));
                const double vh = v[i][k] / (1.0 - std::pow(0.999, step + 1));
                ref[i][k] -= lr * mh / (std::sqrt(vh) + 1e-8);
            }
        adam_step(params, grads, st);
    }
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < VoxelParams::kCount; ++k) EXPECT_NEAR(params[i].v[k], ref[i][k], 1e-10);
}

TEST(Adam, ScheduleIsExactAtDecayBoundaries) {
    OptimState st(0);
    EXPECT_EQ(st.lr_at(0), 0.01);
    EXPECT_EQ(st.lr_at(799), 0.01);
    for (int k = 1; k <= 4; ++k) {
        EXPECT_EQ(st.lr_at(800 * k), 0.01 * std::pow(0.8, k));
        EXPECT_EQ(st.lr_at(800 * k + 799), 0.01 * std::pow(0.8, k));
    }
}

TEST(Adam, RejectsMismatchedSizes) {
    std::vector<VoxelParams> params(2);
    OptimState st(2);
    EXPECT_THROW(adam_step(params, std::vector<VoxelParams>(1), st), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Densification
// ---------------------------------------------------------------------------

namespace {

/// n opaque level-0 voxels on a 10 x 10 x 10 grid with room for 2 more levels.
SparseVoxelSet opaque_grid(std::size_t n, int max_levels = 3) {
    SceneBounds b;
    b.aabb_min = Vec3::Zero();
    b.aabb_max = Vec3::Constant(10.0);
    b.base_edge = 1.0;
    b.max_levels = max_levels;
    SparseVoxelSet set(b);
    std::mt19937_64 rng(2);
    for (std::size_t i = 0; i < n; ++i) {
        VoxelParams p = random_field_params(rng, 2.0, 0.2);
        p.w_s(3) = 5.0;
        set.add(0, {static_cast<int32_t>(i % 10), static_cast<int32_t>((i / 10) % 10), static_cast<int32_t>(i / 100)},
                p);
    }
    return set;
}

}  // namespace

TEST(Densify, SplitCountFormula) {
    EXPECT_EQ(split_count(1000, 0, 100, 40), 22u);
    EXPECT_EQ(split_count(100, 0, 100, 40), 0u);
    EXPECT_EQ(split_count(100, 5, 200, 40), 0u);
    EXPECT_EQ(split_count(2'500'000, 1000, 1'000'000, 40), 37'525u);
}

TEST(Densify, HundredVoxelsBecome254) {
    SparseVoxelSet set = opaque_grid(100);
    std::vector<double> norms(100);
    for (std::size_t i = 0; i < 100; ++i) norms[i] = static_cast<double>((i * 37) % 100);
    DensifyConfig cfg;
    cfg.budget = 1000;
    const SparseVoxelSet before = set;
    const DensifyReport rep = densify_and_prune(set, DensityMode::sdf, norms, cfg);
    EXPECT_EQ(rep.n_pruned, 0u);
    EXPECT_EQ(rep.n_split, 22u);
    EXPECT_EQ(set.size(), 254u);
    // The 22 largest norms are 78..99.
    for (std::size_t i : rep.split) EXPECT_GE(norms[i], 78.0);
    // Children inherit parameters verbatim.
    for (std::size_t j = 78; j < set.size(); ++j) {
        const VoxelGeom& g = set.geom(j);
        EXPECT_EQ(g.level, 1);
        const auto parent = before.find({0, {g.ijk[0] / 2, g.ijk[1] / 2, g.ijk[2] / 2}});
        ASSERT_TRUE(parent.has_value());
        EXPECT_EQ(set.params(j).v, before.params(*parent).v);
    }
}

TEST(Densify, ZeroGradientsBreakTiesByIndex) {
    SparseVoxelSet set = opaque_grid(100);
    DensifyConfig cfg;
    cfg.budget = 1000;
    const DensifyReport rep = densify_and_prune(set, DensityMode::sdf, std::vector<double>(100, 0.0), cfg);
    ASSERT_EQ(rep.split.size(), 22u);
    for (std::size_t k = 0; k < 22; ++k) EXPECT_EQ(rep.split[k], k);
}

TEST(Densify, PrunesOnlyTransparentVoxels) {
    SparseVoxelSet set = opaque_grid(50);
    std::vector<double> expect_pruned;
    for (std::size_t i = 0; i < set.size(); i += 7) set.params(i).w_s(3) = -20.0;
    DensifyConfig cfg;
    cfg.budget = 60;
    std::vector<bool> transparent(set.size());
    for (std::size_t i = 0; i < set.size(); ++i)
        transparent[i] = center_opacity(set.geom(i), set.params(i), DensityMode::sdf) < 0.005;
    const DensifyReport rep = densify_and_prune(set, DensityMode::sdf, std::vector<double>(50, 1.0), cfg);
    EXPECT_EQ(rep.n_pruned, 8u);
    for (std::size_t i : rep.pruned) EXPECT_TRUE(transparent[i]);
    // floor((60 + 8 - 50) / 40) = 0
    EXPECT_EQ(rep.n_split, 0u);
    EXPECT_EQ(set.size(), 42u);
}

TEST(Densify, SkipsVoxelsAtFinestLevel) {
    SparseVoxelSet set = opaque_grid(100, 1);
    DensifyConfig cfg;
    cfg.budget = 1000;
    const DensifyReport rep = densify_and_prune(set, DensityMode::sdf, std::vector<double>(100, 1.0), cfg);
    EXPECT_EQ(rep.n_split, 0u);
    EXPECT_EQ(set.size(), 100u);
}

TEST(Densify, NeverExceedsBudgetOrLevels) {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        SparseVoxelSet set = opaque_grid(30 + trial * 7, 4);
        DensifyConfig cfg;
        cfg.budget = set.size() + std::uniform_int_distribution<std::size_t>(0, 600)(rng);
        for (int round = 0; round < 4; ++round) {
            std::vector<double> norms(set.size());
            for (double& x : norms) x = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            for (std::size_t i = 0; i < set.size(); ++i)
                if (rng() % 10 == 0) set.params(i).w_s(3) = -30.0;
            densify_and_prune(set, DensityMode::sdf, norms, cfg);
            EXPECT_LE(set.size(), cfg.budget);
            for (const auto& g : set.geoms()) EXPECT_LT(g.level, 4);
        }
    }
}

TEST(Densify, RemapKeepsMomentsAndZeroesChildren) {
    SparseVoxelSet set = opaque_grid(100);
    OptimState st(100);
    for (std::size_t i = 0; i < 100; ++i) st.m[i].v[0] = static_cast<double>(i);
    DensifyConfig cfg;
    cfg.budget = 1000;
    const DensifyReport rep = densify_and_prune(set, DensityMode::sdf, std::vector<double>(100, 0.0), cfg);
    remap_optim_state(st, rep);
    ASSERT_EQ(st.m.size(), set.size());
    EXPECT_EQ(st.m[0].v[0], 22.0);  // voxels 0..21 were split
    for (std::size_t j = 78; j < set.size(); ++j) EXPECT_EQ(st.m[j].v[0], 0.0);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

TrainDataset tiny_dataset(const Scene& truth) {
    TrainDataset d;
    const SceneOctrees t = build_octrees(truth);
    for (int k = 0; k < 3; ++k) {
        CameraView v;
        v.camera = salf::testing::orbit_camera(16, 16, 0.8 * k, 3.5);
        const Framebuffer fb = render_camera(truth, t, v.camera, 0.0);
        for (std::size_t i = 0; i < fb.pixel_count(); ++i) v.rgb.push_back(fb.color(i));
        d.cameras.push_back(v);
    }
    return d;
}

}  // namespace

TEST(TrainLoop, ZeroStepsLeavesSceneUnchanged) {
    Scene s = salf::testing::gradient_fixture(21);
    const Scene before = s;
    TrainConfig cfg;
    cfg.steps = 0;
    const TrainResult r = train_loop(s, TrainDataset{}, cfg);
    EXPECT_TRUE(r.log.empty());
    ASSERT_EQ(s.static_voxels.size(), before.static_voxels.size());
    for (std::size_t i = 0; i < s.static_voxels.size(); ++i)
        EXPECT_EQ(s.static_voxels.params(i).v, before.static_voxels.params(i).v);
}

TEST(TrainLoop, DeterministicAndDecreasing) {
    const Scene truth = salf::testing::gradient_fixture(22, 16);
    const TrainDataset data = tiny_dataset(truth);
    TrainConfig cfg;
    cfg.steps = 60;
    cfg.camera_rays = 256;
    cfg.reg_samples = 16;
    cfg.densify_enabled = false;
    cfg.adam.lr = 0.05;

    auto run = [&] {
        Scene s = salf::testing::gradient_fixture(23, 16);
        return std::make_pair(train_loop(s, data, cfg), s);
    };
    const auto [ra, sa] = run();
    const auto [rb, sb] = run();
    ASSERT_EQ(ra.log.size(), 60u);
    for (std::size_t i = 0; i < sa.static_voxels.size(); ++i)
        EXPECT_EQ(sa.static_voxels.params(i).v, sb.static_voxels.params(i).v);
    for (const auto& l : ra.log) EXPECT_TRUE(std::isfinite(l.total));
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 10; ++i) {
        first += ra.log[static_cast<std::size_t>(i)].color;
        last += ra.log[ra.log.size() - 1 - static_cast<std::size_t>(i)].color;
    }
    EXPECT_LT(last, first);
}

TEST(TrainLoop, DensifiesOnSchedule) {
    const Scene truth = salf::testing::gradient_fixture(24, 16);
    const TrainDataset data = tiny_dataset(truth);
    Scene s = salf::testing::gradient_fixture(25, 16);
    TrainConfig cfg;
    cfg.steps = 50;
    cfg.camera_rays = 64;
    cfg.reg_samples = 8;
    cfg.densify.interval = 10;
    cfg.densify.budget = 200;
    cfg.densify.prune_opacity = 0.0;
    const TrainResult r = train_loop(s, data, cfg);
    // Rounds after steps 10, 20, 30; the stop step is 40.
    EXPECT_EQ(r.densify_rounds.size(), 3u);
    EXPECT_LE(s.static_voxels.size(), 200u);
    EXPECT_GT(s.static_voxels.size(), 16u);
    EXPECT_EQ(r.log.back().voxels, s.static_voxels.size());
}
