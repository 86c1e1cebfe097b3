#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "gpnerf/image.hpp"
#include "gpnerf/neural_nets.hpp"
#include "gpnerf/rng.hpp"

namespace gpnerf {

struct RenderConfig {
    int n_samples = 64;                // N per ray
    int workers = 0;                   // <= 0: hardware concurrency
    Vec3 background = Vec3::Zero();
    bool apply_occupancy_mask = true;  // dense mode only: force sigma = 0 outside occupancy
};

struct RenderCounters {
    std::uint64_t rays = 0;       // rays marched (their interval hits the volume bounds)
    std::uint64_t pd_points = 0;  // density-network evaluations
    std::uint64_t pc_points = 0;  // appearance-network evaluations
    double td_ms = 0.0;           // sampling + culling + density pass
    double tc_ms = 0.0;           // appearance pass + compositing
    double total_ms = 0.0;

    void check() const {
        if (pc_points > pd_points)
            throw Error("counters: color evaluations exceed density evaluations");
    }
};

inline constexpr const char* kCountersCsvHeader = "rays,pd_points,pc_points,td_ms,tc_ms,total_ms";

inline std::string counters_csv_row(const RenderCounters& c) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%llu,%llu,%llu,%.3f,%.3f,%.3f",
                  static_cast<unsigned long long>(c.rays),
                  static_cast<unsigned long long>(c.pd_points),
                  static_cast<unsigned long long>(c.pc_points), c.td_ms, c.tc_ms, c.total_ms);
    return buf;
}

// Ordered samples along one ray with the two culling masks.
struct RaySamples {
    Ray ray;
    std::vector<double> t;                  // strictly increasing
    std::vector<double> delta;              // constant (t_far - t_near) / N
    std::vector<std::uint8_t> in_volume;    // stage 1: inside the geometry volume
    std::vector<double> sigma;              // 0 where never evaluated / masked
    std::vector<std::uint8_t> positive;     // stage 2: stage 1 and sigma > 0
    std::vector<Vec3> color;                // 0 where never evaluated

    std::size_t count() const { return t.size(); }
    Vec3 position(std::size_t i) const { return ray.at(t[i]); }

    void reset(std::size_t n) {
        t.assign(n, 0.0);
        delta.assign(n, 0.0);
        in_volume.assign(n, 0);
        sigma.assign(n, 0.0);
        positive.assign(n, 0);
        color.assign(n, Vec3::Zero());
    }
};

// Deterministic bin midpoints; with an rng, per-bin uniform jitter instead
// (training only). Spacing stays (t_far - t_near) / N for every sample.
inline RaySamples sample_points_on_ray(const Ray& ray, double t_near, double t_far, int n,
                                       Rng* jitter = nullptr) {
    if (!(t_near < t_far) || n < 1)
        throw InvalidInterval("sample_points_on_ray: need t_near < t_far and N >= 1");
    RaySamples s;
    s.ray = ray;
    s.reset(static_cast<std::size_t>(n));
    const double step = (t_far - t_near) / n;
    for (int i = 0; i < n; ++i) {
        const double offset = jitter ? jitter->uniform() : 0.5;
        s.t[i] = t_near + (i + offset) * step;
        s.delta[i] = step;
    }
    return s;
}

// Stage 1: occupancy test per sample. Returns the survivor count.
inline std::size_t cull_stage1(RaySamples& samples, const SparseFeatureVolume& volume) {
    std::size_t survivors = 0;
    for (std::size_t i = 0; i < samples.count(); ++i) {
        const bool in = query_occupancy(volume, samples.position(i));
        samples.in_volume[i] = in ? 1 : 0;
        survivors += in ? 1 : 0;
    }
    return survivors;
}

// Stage 2: strict sigma > 0 among stage-1 survivors.
inline std::size_t cull_stage2(RaySamples& samples) {
    std::size_t survivors = 0;
    for (std::size_t i = 0; i < samples.count(); ++i) {
        const bool pos = samples.in_volume[i] && samples.sigma[i] > 0.0;
        samples.positive[i] = pos ? 1 : 0;
        survivors += pos ? 1 : 0;
    }
    return survivors;
}

// Volume-rendering compositor over all samples:
//   C = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i + T_end * background,
// with T_i the transmittance past the first i-1 samples. The Real parameter
// selects the accumulator width: renders use float, invariant tests double.
template <typename Real>
inline Vec3 composite_t(const RaySamples& samples, const Vec3& background) {
    Real transmittance = Real(1);
    Real out[3] = {Real(0), Real(0), Real(0)};
    for (std::size_t i = 0; i < samples.count(); ++i) {
        if (!(samples.sigma[i] > 0.0)) continue;  // exact no-op for sigma = 0
        const Real a = static_cast<Real>(samples.sigma[i]) * static_cast<Real>(samples.delta[i]);
        const Real e = std::exp(-a);
        const Real w = transmittance * (Real(1) - e);
        for (int c = 0; c < 3; ++c) out[c] += w * static_cast<Real>(samples.color[i][c]);
        transmittance *= e;
    }
    for (int c = 0; c < 3; ++c) out[c] += transmittance * static_cast<Real>(background[c]);
    return Vec3(out[0], out[1], out[2]);
}

inline Vec3 composite(const RaySamples& samples, const Vec3& background) {
    return composite_t<double>(samples, background);
}

// Everything the render pipeline reads; all pointers are non-owning and the
// pointees must stay alive and unchanged for the duration of the call.
struct SceneView {
    const SparseFeatureVolume* volume = nullptr;
    std::span<const Camera> cameras;
    std::span<const FeatureMap> maps;
    const MlpWeights* density_mlp = nullptr;
    const MlpWeights* appearance_mlp = nullptr;
    Vec3 background = Vec3::Zero();
};

struct PixelSet {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> selected;

    bool contains(int u, int v) const {
        return selected[static_cast<std::size_t>(v) * width + u] != 0;
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto s : selected) n += s;
        return n;
    }
    std::vector<std::pair<int, int>> pixels() const {  // row-major order
        std::vector<std::pair<int, int>> out;
        out.reserve(count());
        for (int v = 0; v < height; ++v)
            for (int u = 0; u < width; ++u)
                if (contains(u, v)) out.emplace_back(u, v);
        return out;
    }
};

// Project every occupied voxel center into the target view and mark, per
// projection with positive depth, the 2x2 block of pixels whose centers
// surround it.
inline PixelSet select_valid_pixels(const SparseFeatureVolume& volume, const Camera& target) {
    if (volume.empty()) throw EmptyVolume("select_valid_pixels: empty volume");
    PixelSet set;
    set.width = target.width;
    set.height = target.height;
    set.selected.assign(static_cast<std::size_t>(target.width) * target.height, 0);
    for (std::int64_t lin : volume.indices) {
        const auto idx = volume.grid.delinearize(lin);
        const Vec3 center = volume.grid.voxel_center(idx[0], idx[1], idx[2]);
        const auto uv = try_project(world_to_camera(center, target), target);
        if (!uv) continue;
        const int u0 = static_cast<int>(std::floor(uv->x() - 0.5));
        const int v0 = static_cast<int>(std::floor(uv->y() - 0.5));
        for (int dv = 0; dv <= 1; ++dv)
            for (int du = 0; du <= 1; ++du) {
                const int u = u0 + du, v = v0 + dv;
                if (u < 0 || v < 0 || u >= target.width || v >= target.height) continue;
                set.selected[static_cast<std::size_t>(v) * target.width + u] = 1;
            }
    }
    return set;
}

namespace detail {

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// static contiguous partition; results must not depend on the worker count
template <typename Fn>
inline void parallel_chunks(int begin, int end, int workers, const Fn& fn) {
    const int n = end - begin;
    if (n <= 0) return;
    if (workers <= 1 || n == 1) {
        for (int i = begin; i < end; ++i) fn(i);
        return;
    }
    const int k = std::min(workers, n);
    const int chunk = (n + k - 1) / k;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(k));
    for (int w = 0; w < k; ++w) {
        const int lo = begin + w * chunk;
        const int hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : threads) t.join();
}

inline int resolve_workers(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// per-ray working state inside a block
struct RayState {
    RaySamples samples;
    RowMatrixXf density_in;      // evaluated samples x 3d
    RowMatrixXf appearance_in;   // evaluated samples x (M+2)d
    std::vector<int> eval_rows;  // sample index per evaluated row
    int pixel_u = 0;
    int pixel_v = 0;
    bool marched = false;
    std::uint64_t pd = 0;
    std::uint64_t pc = 0;
    Vec3 rgb = Vec3::Zero();
};

enum class RenderMode { progressive, dense };

// Phase A of one ray: sampling, stage-1 culling, feature gathering and the
// density pass. Progressive mode evaluates stage-1 survivors only; dense mode
// evaluates every sample and masks sigma by occupancy afterwards (unless the
// config disables masking, in which case there is no stage-1 notion at all).
inline void ray_density_pass(RayState& state, const SceneView& scene, const Camera& target,
                             const RenderConfig& config, const Aabb& bounds,
                             const MlpEval<float>& density_eval, int feature_dim,
                             RenderMode mode) {
    state.marched = false;
    state.pd = state.pc = 0;
    state.rgb = config.background;

    const Ray ray = generate_ray(target, state.pixel_u, state.pixel_v);
    const auto hit = ray_aabb_intersect(ray, bounds);
    if (!hit || !(hit->first < hit->second)) return;
    state.marched = true;

    state.samples = sample_points_on_ray(ray, hit->first, hit->second, config.n_samples);
    cull_stage1(state.samples, *scene.volume);
    if (mode == RenderMode::dense && !config.apply_occupancy_mask)
        std::fill(state.samples.in_volume.begin(), state.samples.in_volume.end(),
                  static_cast<std::uint8_t>(1));

    const int d = feature_dim;
    const int m_views = static_cast<int>(scene.cameras.size());
    state.eval_rows.clear();
    for (std::size_t i = 0; i < state.samples.count(); ++i) {
        if (mode == RenderMode::dense || state.samples.in_volume[i])
            state.eval_rows.push_back(static_cast<int>(i));
    }
    const int rows = static_cast<int>(state.eval_rows.size());
    state.pd = static_cast<std::uint64_t>(rows);
    if (rows == 0) return;

    state.density_in.resize(rows, 3 * d);
    state.appearance_in.resize(rows, (m_views + 2) * d);

    Eigen::VectorXd volume_feat(d);
    for (int r = 0; r < rows; ++r) {
        const Vec3 p = state.samples.position(static_cast<std::size_t>(state.eval_rows[r]));
        const ViewFeatureSet set = extract_pixel_aligned(p, scene.cameras, scene.maps);
        const ViewStats stats = mean_variance(set);
        sample_feature_into(*scene.volume, p, volume_feat.data());

        float* drow = state.density_in.row(r).data();
        for (int c = 0; c < d; ++c) drow[c] = static_cast<float>(volume_feat[c]);
        for (int c = 0; c < d; ++c) drow[d + c] = static_cast<float>(stats.mean[c]);
        for (int c = 0; c < d; ++c) drow[2 * d + c] = static_cast<float>(stats.variance[c]);

        float* arow = state.appearance_in.row(r).data();
        for (int m = 0; m < m_views; ++m)
            for (int c = 0; c < d; ++c) arow[m * d + c] = static_cast<float>(set.features(m, c));
        for (int c = 0; c < d; ++c) arow[m_views * d + c] = static_cast<float>(stats.mean[c]);
        for (int c = 0; c < d; ++c)
            arow[(m_views + 1) * d + c] = static_cast<float>(stats.variance[c]);
    }

    const RowMatrixXf sigma = density_eval.forward(state.density_in);
    for (int r = 0; r < rows; ++r) {
        const auto i = static_cast<std::size_t>(state.eval_rows[r]);
        // dense-masked semantics: evaluated everywhere, kept only inside occupancy
        state.samples.sigma[i] = state.samples.in_volume[i] ? static_cast<double>(sigma(r, 0)) : 0.0;
    }
}

// Phase B: stage-2 culling, appearance pass and compositing.
inline void ray_appearance_pass(RayState& state, const SceneView& scene, const RenderConfig& config,
                                const MlpEval<float>& appearance_eval) {
    if (!state.marched) return;
    cull_stage2(state.samples);

    std::vector<int> color_rows;
    for (int r = 0; r < static_cast<int>(state.eval_rows.size()); ++r)
        if (state.samples.positive[static_cast<std::size_t>(state.eval_rows[r])])
            color_rows.push_back(r);
    state.pc = static_cast<std::uint64_t>(color_rows.size());

    if (!color_rows.empty()) {
        RowMatrixXf selected(static_cast<int>(color_rows.size()), state.appearance_in.cols());
        for (std::size_t k = 0; k < color_rows.size(); ++k)
            selected.row(static_cast<Eigen::Index>(k)) = state.appearance_in.row(color_rows[k]);
        const RowMatrixXf rgb = appearance_eval.forward(selected);
        for (std::size_t k = 0; k < color_rows.size(); ++k) {
            const int sample = state.eval_rows[static_cast<std::size_t>(color_rows[k])];
            state.samples.color[static_cast<std::size_t>(sample)] =
                Vec3(rgb(static_cast<Eigen::Index>(k), 0), rgb(static_cast<Eigen::Index>(k), 1),
                     rgb(static_cast<Eigen::Index>(k), 2));
        }
    }
    // production accumulation is 32-bit
    state.rgb = composite_t<float>(state.samples, config.background);
}

inline double ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

// Shared driver: `pixels` lists the rays to march.
inline std::pair<RenderedImage, RenderCounters> render_pixels(
    const SceneView& scene, const Camera& target, const RenderConfig& config,
    const std::vector<std::pair<int, int>>& pixels, RenderMode mode,
    const std::vector<std::uint8_t>* rendered_flags) {
    const auto t_start = std::chrono::steady_clock::now();
    scene.volume->grid.validate();
    if (scene.volume->empty()) throw EmptyVolume("render: empty volume");

    const Aabb bounds = occupied_aabb(*scene.volume);
    const MlpEval<float> density_eval(*scene.density_mlp);
    const MlpEval<float> appearance_eval(*scene.appearance_mlp);
    const int d = density_eval.input_dim() / 3;
    const int workers = resolve_workers(config.workers);

    RenderedImage image(target.width, target.height);
    image.fill(static_cast<float>(config.background[0]), static_cast<float>(config.background[1]),
               static_cast<float>(config.background[2]));
    if (rendered_flags) image.rendered = *rendered_flags;

    RenderCounters counters;
    std::atomic<std::uint64_t> rays{0}, pd{0}, pc{0};
    double td_ms = 0.0, tc_ms = 0.0;

    constexpr int kBlock = 128;
    std::vector<RayState> block(kBlock);
    const int total = static_cast<int>(pixels.size());
    for (int base = 0; base < total; base += kBlock) {
        const int n = std::min(kBlock, total - base);

        const auto t_a = std::chrono::steady_clock::now();
        parallel_chunks(0, n, workers, [&](int i) {
            RayState& state = block[static_cast<std::size_t>(i)];
            state.pixel_u = pixels[static_cast<std::size_t>(base + i)].first;
            state.pixel_v = pixels[static_cast<std::size_t>(base + i)].second;
            ray_density_pass(state, scene, target, config, bounds, density_eval, d, mode);
            if (state.marched) rays.fetch_add(1, std::memory_order_relaxed);
            pd.fetch_add(state.pd, std::memory_order_relaxed);
        });
        td_ms += ms_since(t_a);

        const auto t_b = std::chrono::steady_clock::now();
        parallel_chunks(0, n, workers, [&](int i) {
            RayState& state = block[static_cast<std::size_t>(i)];
            ray_appearance_pass(state, scene, config, appearance_eval);
            pc.fetch_add(state.pc, std::memory_order_relaxed);
        });
        tc_ms += ms_since(t_b);

        for (int i = 0; i < n; ++i) {
            const RayState& state = block[static_cast<std::size_t>(i)];
            float* px = image.at(state.pixel_u, state.pixel_v);
            for (int c = 0; c < 3; ++c) px[c] = clamp01(static_cast<float>(state.rgb[c]));
            if (!rendered_flags)
                image.rendered[static_cast<std::size_t>(state.pixel_v) * image.width +
                               state.pixel_u] = state.marched ? 1 : 0;
        }
    }

    counters.rays = rays.load();
    counters.pd_points = pd.load();
    counters.pc_points = pc.load();
    counters.td_ms = td_ms;
    counters.tc_ms = tc_ms;
    counters.total_ms = ms_since(t_start);
    counters.check();
    return {std::move(image), counters};
}

}  // namespace detail

// Progressive pipeline: pixel selection from the geometry volume, stage-1
// occupancy culling, density pass on survivors, stage-2 positivity culling,
// appearance pass, compositing.
inline std::pair<RenderedImage, RenderCounters> render_progressive(const SceneView& scene,
                                                                   const Camera& target,
                                                                   const RenderConfig& config) {
    const PixelSet set = select_valid_pixels(*scene.volume, target);
    std::vector<std::uint8_t> flags = set.selected;
    auto result = detail::render_pixels(scene, target, config, set.pixels(),
                                        detail::RenderMode::progressive, &flags);
    return result;
}

// Dense oracle: march every pixel, evaluate density at every sample in the
// bounds interval, mask sigma outside occupancy (unless disabled), evaluate
// appearance wherever sigma > 0, composite identically.
inline std::pair<RenderedImage, RenderCounters> render_dense_masked(const SceneView& scene,
                                                                    const Camera& target,
                                                                    const RenderConfig& config) {
    std::vector<std::pair<int, int>> pixels;
    pixels.reserve(static_cast<std::size_t>(target.width) * target.height);
    for (int v = 0; v < target.height; ++v)
        for (int u = 0; u < target.width; ++u) pixels.emplace_back(u, v);
    return detail::render_pixels(scene, target, config, pixels, detail::RenderMode::dense, nullptr);
}

}  // namespace gpnerf
