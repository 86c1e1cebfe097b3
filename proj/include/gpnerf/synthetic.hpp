#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gpnerf/scene_io.hpp"

namespace gpnerf {

struct CapsuleSpec {
    Vec3 p0 = Vec3::Zero();
    Vec3 p1 = Vec3::Zero();  // p0 == p1 makes a sphere
    double radius = 0.1;
    Vec3 color = Vec3(0.8, 0.2, 0.2);
};

struct SyntheticSceneSpec {
    std::vector<CapsuleSpec> capsules;
    int vertex_count = 642;       // L, surface samples standing in for prior vertices
    int image_size = 64;
    int source_views = 3;         // M, on a horizontal circle
    int target_views = 4;
    std::uint64_t seed = 42;
    double sigma0 = 30.0;         // density inside the capsule union, 1/m
    int gt_samples = 256;         // brute-force marcher sample count
    double camera_distance = 2.2;
    double focal_px = 0.0;        // 0: auto (1.1 x image size)
    int feature_dim = 32;
    std::uint64_t feature_seed = 42;
    Vec3 background = Vec3::Zero();
    double voxel_size = 0.025;
    int margin_voxels = 5;

    void validate() const {
        if (capsules.empty()) throw SchemaError("scene spec: needs at least one capsule");
        for (const CapsuleSpec& c : capsules)
            if (!(c.radius > 0.0)) throw SchemaError("scene spec: capsule radii must be positive");
        if (vertex_count < 4) throw SchemaError("scene spec: vertex count must be >= 4");
        if (image_size < 11) throw SchemaError("scene spec: image size must be >= 11");
        if (source_views < 1) throw SchemaError("scene spec: needs at least one source view");
    }

    double focal() const { return focal_px > 0.0 ? focal_px : 1.1 * image_size; }
};

inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double len2 = ab.squaredNorm();
    if (len2 < 1e-18) return (p - a).norm();
    const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
    return (p - (a + t * ab)).norm();
}

// The analytic ground-truth field: constant density inside the capsule
// union, the nearest capsule's base color everywhere.
struct AnalyticField {
    const SyntheticSceneSpec* spec = nullptr;

    double sigma(const Vec3& p) const {
        for (const CapsuleSpec& c : spec->capsules)
            if (point_segment_distance(p, c.p0, c.p1) <= c.radius) return spec->sigma0;
        return 0.0;
    }

    Vec3 color(const Vec3& p) const {
        double best = std::numeric_limits<double>::infinity();
        Vec3 out = Vec3::Zero();
        for (const CapsuleSpec& c : spec->capsules) {
            const double signed_dist = point_segment_distance(p, c.p0, c.p1) - c.radius;
            if (signed_dist < best) {
                best = signed_dist;
                out = c.color;
            }
        }
        return out;
    }

    Aabb bounds() const {
        Aabb box;
        box.min = Vec3::Constant(std::numeric_limits<double>::infinity());
        box.max = -box.min;
        for (const CapsuleSpec& c : spec->capsules) {
            box.min = box.min.cwiseMin(c.p0.cwiseMin(c.p1) - Vec3::Constant(c.radius));
            box.max = box.max.cwiseMax(c.p0.cwiseMax(c.p1) + Vec3::Constant(c.radius));
        }
        // a little slack so grazing rays still march through the surface
        box.min -= Vec3::Constant(0.05);
        box.max += Vec3::Constant(0.05);
        return box;
    }
};

// Brute-force marcher through the analytic field: midpoint sampling over the
// ray/bounds interval, standard transmittance compositing in 64-bit. Returns
// the color; `weight_out`, when given, receives the accumulated opacity.
inline Vec3 march_analytic(const Ray& ray, const AnalyticField& field, int samples,
                           const Vec3& background, double* weight_out = nullptr) {
    const auto hit = ray_aabb_intersect(ray, field.bounds());
    if (!hit || !(hit->first < hit->second)) {
        if (weight_out) *weight_out = 0.0;
        return background;
    }
    const double step = (hit->second - hit->first) / samples;
    double transmittance = 1.0;
    Vec3 out = Vec3::Zero();
    for (int i = 0; i < samples; ++i) {
        const Vec3 p = ray.at(hit->first + (i + 0.5) * step);
        const double sigma = field.sigma(p);
        if (sigma <= 0.0) continue;
        const double e = std::exp(-sigma * step);
        out += transmittance * (1.0 - e) * field.color(p);
        transmittance *= e;
    }
    if (weight_out) *weight_out = 1.0 - transmittance;
    return out + transmittance * background;
}

inline Camera synthetic_camera(const SyntheticSceneSpec& spec, double azimuth_deg) {
    AnalyticField field{&spec};
    const Aabb box = field.bounds();
    const Vec3 center = 0.5 * (box.min + box.max);
    const double az = azimuth_deg * 3.14159265358979323846 / 180.0;
    const Vec3 eye = center + spec.camera_distance * Vec3(std::sin(az), 0.0, std::cos(az));
    return make_lookat_camera(eye, center, spec.focal(), spec.image_size, spec.image_size);
}

inline std::vector<Camera> synthetic_source_cameras(const SyntheticSceneSpec& spec) {
    std::vector<Camera> cams;
    for (int m = 0; m < spec.source_views; ++m)
        cams.push_back(synthetic_camera(spec, 360.0 * m / spec.source_views));
    return cams;
}

inline std::vector<Camera> synthetic_target_cameras(const SyntheticSceneSpec& spec) {
    std::vector<Camera> cams;
    for (int t = 0; t < spec.target_views; ++t)
        cams.push_back(synthetic_camera(spec, 360.0 * (t + 0.5) / spec.target_views));
    return cams;
}

// Uniform surface samples over the capsule union, area-weighted across
// capsules, cylinder side vs spherical caps weighted by area within each.
inline std::vector<Vec3> sample_capsule_vertices(const SyntheticSceneSpec& spec, Rng& rng) {
    constexpr double kPi = 3.14159265358979323846;
    std::vector<double> cyl_area(spec.capsules.size()), cap_area(spec.capsules.size());
    double total = 0.0;
    for (std::size_t i = 0; i < spec.capsules.size(); ++i) {
        const CapsuleSpec& c = spec.capsules[i];
        const double len = (c.p1 - c.p0).norm();
        cyl_area[i] = 2.0 * kPi * c.radius * len;
        cap_area[i] = 4.0 * kPi * c.radius * c.radius;
        total += cyl_area[i] + cap_area[i];
    }

    auto unit_sphere = [&rng]() {
        Vec3 v;
        do {
            v = Vec3(rng.normal(), rng.normal(), rng.normal());
        } while (v.norm() < 1e-9);
        return Vec3(v.normalized());
    };

    std::vector<Vec3> out;
    out.reserve(static_cast<std::size_t>(spec.vertex_count));
    for (int n = 0; n < spec.vertex_count; ++n) {
        double pick = rng.uniform(0.0, total);
        std::size_t i = 0;
        while (i + 1 < spec.capsules.size() && pick > cyl_area[i] + cap_area[i]) {
            pick -= cyl_area[i] + cap_area[i];
            ++i;
        }
        const CapsuleSpec& c = spec.capsules[i];
        const Vec3 axis_raw = c.p1 - c.p0;
        const double len = axis_raw.norm();
        if (pick < cyl_area[i] && len > 1e-12) {
            const Vec3 axis = axis_raw / len;
            Vec3 seed = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
            const Vec3 n1 = axis.cross(seed).normalized();
            const Vec3 n2 = axis.cross(n1);
            const double z = rng.uniform(0.0, len);
            const double phi = rng.uniform(0.0, 2.0 * kPi);
            out.push_back(c.p0 + axis * z + c.radius * (std::cos(phi) * n1 + std::sin(phi) * n2));
        } else {
            const Vec3 dir = unit_sphere();
            const Vec3 end = (len < 1e-12 || dir.dot(axis_raw) < 0.0) ? c.p0 : c.p1;
            out.push_back(end + c.radius * dir);
        }
    }
    return out;
}

inline RenderedImage render_analytic_view(const SyntheticSceneSpec& spec, const Camera& cam,
                                          std::vector<std::uint8_t>* mask_out = nullptr) {
    AnalyticField field{&spec};
    RenderedImage img(cam.width, cam.height);
    if (mask_out) mask_out->assign(img.pixel_count(), 0);
    for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u) {
            double weight = 0.0;
            const Vec3 rgb = march_analytic(generate_ray(cam, u, v), field, spec.gt_samples,
                                            spec.background, &weight);
            float* px = img.at(u, v);
            for (int c = 0; c < 3; ++c) px[c] = clamp01(static_cast<float>(rgb[c]));
            if (mask_out && weight > 0.5)
                (*mask_out)[static_cast<std::size_t>(v) * cam.width + u] = 1;
        }
    std::fill(img.rendered.begin(), img.rendered.end(), static_cast<std::uint8_t>(1));
    return img;
}

// Generate the whole scene on disk: source/target renders from the analytic
// field, body masks (accumulated opacity > 0.5), surface-sampled prior
// vertices, and the manifest tying it together.
inline fs::path gen_synthetic_scene(const SyntheticSceneSpec& spec, const fs::path& out_dir) {
    spec.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("gen-scene: cannot create output directory: " + out_dir.string());

    SceneManifest manifest;
    manifest.feature_dim = spec.feature_dim;
    manifest.feature_seed = spec.feature_seed;
    manifest.background = spec.background;
    manifest.vertices = "vertices.gpvx";
    manifest.voxel_size = spec.voxel_size;
    manifest.margin_voxels = spec.margin_voxels;

    const std::vector<Camera> sources = synthetic_source_cameras(spec);
    for (std::size_t m = 0; m < sources.size(); ++m) {
        std::vector<std::uint8_t> mask;
        const RenderedImage img = render_analytic_view(spec, sources[m], &mask);
        ManifestView view;
        view.camera = sources[m];
        view.image = "view" + std::to_string(m) + ".ppm";
        view.mask = "view" + std::to_string(m) + "_mask.ppm";
        write_ppm(out_dir / view.image, img);
        write_ppm(out_dir / view.mask, image_from_mask(img.width, img.height, mask));
        manifest.views.push_back(std::move(view));
    }

    const std::vector<Camera> targets = synthetic_target_cameras(spec);
    for (std::size_t t = 0; t < targets.size(); ++t) {
        std::vector<std::uint8_t> mask;
        const RenderedImage img = render_analytic_view(spec, targets[t], &mask);
        ManifestTarget target;
        target.camera = targets[t];
        target.image = "target" + std::to_string(t) + ".ppm";
        target.mask = "target" + std::to_string(t) + "_mask.ppm";
        write_ppm(out_dir / target.image, img);
        write_ppm(out_dir / target.mask, image_from_mask(img.width, img.height, mask));
        manifest.targets.push_back(std::move(target));
    }

    Rng rng(spec.seed);
    write_vertices(out_dir / manifest.vertices, sample_capsule_vertices(spec, rng));

    const fs::path manifest_path = out_dir / "manifest.json";
    write_manifest(manifest_path, manifest);
    return manifest_path;
}

// The bundled desk-scale figure: torso, head, one arm, one leg.
inline SyntheticSceneSpec default_capsule_spec() {
    SyntheticSceneSpec spec;
    spec.capsules = {
        {Vec3(0.00, 0.10, 0.00), Vec3(0.00, 0.70, 0.00), 0.16, Vec3(0.78, 0.18, 0.18)},
        {Vec3(0.00, 0.95, 0.00), Vec3(0.00, 0.95, 0.00), 0.11, Vec3(0.92, 0.73, 0.52)},
        {Vec3(-0.22, 0.62, 0.00), Vec3(-0.38, 0.18, 0.05), 0.05, Vec3(0.20, 0.45, 0.85)},
        {Vec3(0.10, 0.10, 0.00), Vec3(0.14, -0.50, -0.04), 0.06, Vec3(0.20, 0.70, 0.30)},
    };
    return spec;
}

inline SyntheticSceneSpec read_scene_spec(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingFile("scene spec: cannot open: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("scene spec: invalid JSON: ") + e.what());
    }
    SyntheticSceneSpec spec;
    try {
        const auto& caps = detail::require_field(j, "capsules", "scene spec");
        if (!caps.is_array() || caps.empty())
            throw SchemaError("scene spec: 'capsules' must be a non-empty array");
        spec.capsules.clear();
        for (const auto& jc : caps) {
            CapsuleSpec c;
            const auto& p0 = detail::require_field(jc, "p0", "capsules[]");
            const auto& p1 = detail::require_field(jc, "p1", "capsules[]");
            const auto& color = detail::require_field(jc, "color", "capsules[]");
            if (!p0.is_array() || p0.size() != 3 || !p1.is_array() || p1.size() != 3 ||
                !color.is_array() || color.size() != 3)
                throw SchemaError("scene spec: capsule p0/p1/color must be 3-element arrays");
            for (int i = 0; i < 3; ++i) {
                c.p0[i] = p0[i].get<double>();
                c.p1[i] = p1[i].get<double>();
                c.color[i] = color[i].get<double>();
            }
            c.radius = detail::require_field(jc, "radius", "capsules[]").get<double>();
            spec.capsules.push_back(c);
        }
        spec.vertex_count = j.value("vertex_count", spec.vertex_count);
        spec.image_size = j.value("image_size", spec.image_size);
        spec.source_views = j.value("source_views", spec.source_views);
        spec.target_views = j.value("target_views", spec.target_views);
        spec.seed = j.value("seed", spec.seed);
        spec.sigma0 = j.value("sigma0", spec.sigma0);
        spec.gt_samples = j.value("gt_samples", spec.gt_samples);
        spec.camera_distance = j.value("camera_distance", spec.camera_distance);
        spec.focal_px = j.value("focal_px", spec.focal_px);
        spec.feature_dim = j.value("feature_dim", spec.feature_dim);
        spec.feature_seed = j.value("feature_seed", spec.feature_seed);
        spec.voxel_size = j.value("voxel_size", spec.voxel_size);
        spec.margin_voxels = j.value("margin_voxels", spec.margin_voxels);
        if (j.contains("background")) {
            const auto& bg = j.at("background");
            if (!bg.is_array() || bg.size() != 3)
                throw SchemaError("scene spec: 'background' must be a 3-element array");
            for (int i = 0; i < 3; ++i) spec.background[i] = bg[i].get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("scene spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

}  // namespace gpnerf
