#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpnerf/renderer.hpp"

namespace gpnerf {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PPM (binary P6, maxval 255)

inline RenderedImage read_ppm(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingFile("ppm: cannot open: " + path.string());

    auto next_token = [&is, &path]() -> std::string {
        std::string tok;
        int c = is.get();
        while (c != EOF) {
            if (c == '#') {  // comment to end of line
                while (c != EOF && c != '\n') c = is.get();
                c = is.get();
                continue;
            }
            if (!std::isspace(c)) break;
            c = is.get();
        }
        if (c == EOF) throw BadHeader("ppm: truncated header in " + path.string());
        while (c != EOF && !std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            c = is.get();
        }
        return tok;
    };

    const std::string magic = next_token();
    if (magic != "P6")
        throw BadHeader("ppm: only binary P6 is supported, got '" + magic + "'");
    int width = 0, height = 0, maxval = 0;
    try {
        width = std::stoi(next_token());
        height = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw BadHeader("ppm: malformed header in " + path.string());
    }
    if (width < 1 || height < 1) throw BadHeader("ppm: bad dimensions in " + path.string());
    if (maxval != 255) throw BadHeader("ppm: only maxval 255 is supported");

    RenderedImage img(width, height);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * 3);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(is.gcount()) != bytes.size())
        throw TruncatedFile("ppm: payload shorter than header promises: " + path.string());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        img.rgb[i] = static_cast<float>(bytes[i]) / 255.0f;
    std::fill(img.rendered.begin(), img.rendered.end(), static_cast<std::uint8_t>(1));
    return img;
}

inline void write_ppm(const fs::path& path, const RenderedImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("ppm: cannot open for writing: " + path.string());
    os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> bytes(img.rgb.size());
    for (std::size_t i = 0; i < img.rgb.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::floor(clamp01(img.rgb[i]) * 255.0f + 0.5f));
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("ppm: write failed: " + path.string());
}

// body masks ride on PPM: white = body, black = background
inline std::vector<std::uint8_t> mask_from_image(const RenderedImage& img) {
    std::vector<std::uint8_t> mask(img.pixel_count());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const float lum = 0.2126f * img.rgb[i * 3] + 0.7152f * img.rgb[i * 3 + 1] +
                          0.0722f * img.rgb[i * 3 + 2];
        mask[i] = lum > 0.5f ? 1 : 0;
    }
    return mask;
}

inline RenderedImage image_from_mask(int width, int height, const std::vector<std::uint8_t>& mask) {
    RenderedImage img(width, height);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const float v = mask[i] ? 1.0f : 0.0f;
        img.rgb[i * 3] = img.rgb[i * 3 + 1] = img.rgb[i * 3 + 2] = v;
    }
    return img;
}

// ---------------------------------------------------------------------------
// prior vertex files: binary "GPVX" (u32 count, count x 3 f32) or ASCII
// "x y z" lines, auto-detected by the magic

inline constexpr char kVertexMagic[4] = {'G', 'P', 'V', 'X'};

inline void write_vertices(const fs::path& path, const std::vector<Vec3>& vertices) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("vertices: cannot open for writing: " + path.string());
    detail::write_bytes(os, kVertexMagic, 4);
    detail::write_u32(os, static_cast<std::uint32_t>(vertices.size()));
    for (const Vec3& v : vertices) {
        const float xyz[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()),
                              static_cast<float>(v.z())};
        detail::write_f32s(os, xyz, 3);
    }
}

inline std::vector<Vec3> read_vertices(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingFile("vertices: cannot open: " + path.string());
    char magic[4] = {0, 0, 0, 0};
    is.read(magic, 4);
    std::vector<Vec3> out;
    if (is.gcount() == 4 && std::memcmp(magic, kVertexMagic, 4) == 0) {
        const std::uint32_t count = detail::read_u32(is);
        out.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) {
            float xyz[3];
            detail::read_f32s(is, xyz, 3);
            out.emplace_back(xyz[0], xyz[1], xyz[2]);
        }
        return out;
    }
    // ASCII fallback
    is.clear();
    is.seekg(0);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        double x, y, z;
        if (!(ls >> x >> y >> z))
            throw BadHeader("vertices: line " + std::to_string(line_no) + " is not 'x y z' in " +
                            path.string());
        out.emplace_back(x, y, z);
    }
    return out;
}

// ---------------------------------------------------------------------------
// precomputed feature-map files: "GPFM", u32 width/height/channels, f32 grid

inline constexpr char kFeatureMagic[4] = {'G', 'P', 'F', 'M'};

inline void write_feature_map(const fs::path& path, const FeatureMap& map) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("feature map: cannot open for writing: " + path.string());
    detail::write_bytes(os, kFeatureMagic, 4);
    detail::write_u32(os, static_cast<std::uint32_t>(map.width));
    detail::write_u32(os, static_cast<std::uint32_t>(map.height));
    detail::write_u32(os, static_cast<std::uint32_t>(map.channels));
    detail::write_f32s(os, map.values.data(), map.values.size());
}

inline FeatureMap read_feature_map(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingFile("feature map: cannot open: " + path.string());
    char magic[4];
    detail::read_bytes(is, magic, 4);
    if (std::memcmp(magic, kFeatureMagic, 4) != 0)
        throw BadMagic("feature map: bad magic in " + path.string());
    FeatureMap map;
    map.width = static_cast<int>(detail::read_u32(is));
    map.height = static_cast<int>(detail::read_u32(is));
    map.channels = static_cast<int>(detail::read_u32(is));
    if (map.width < 1 || map.height < 1 || map.channels < 1)
        throw BadHeader("feature map: bad dimensions in " + path.string());
    map.values.resize(static_cast<std::size_t>(map.width) * map.height * map.channels);
    detail::read_f32s(is, map.values.data(), map.values.size());
    return map;
}

// ---------------------------------------------------------------------------
// deterministic feature provider, the stand-in for the learned backbone:
// channels [R, G, B, |du L|, |dv L|, then d-5 seeded random 5x5 convolutions
// of the luminance]

inline FeatureMap feature_provider(const RenderedImage& image, int d, std::uint64_t seed) {
    if (d < 5) throw BadDimension("feature provider: needs d >= 5");
    const int w = image.width, h = image.height;
    FeatureMap map(w, h, d);

    std::vector<double> lum(static_cast<std::size_t>(w) * h);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            const float* px = image.at(u, v);
            lum[static_cast<std::size_t>(v) * w + u] =
                0.2126 * px[0] + 0.7152 * px[1] + 0.0722 * px[2];
        }
    auto lum_at = [&](int u, int v) {
        u = std::clamp(u, 0, w - 1);
        v = std::clamp(v, 0, h - 1);
        return lum[static_cast<std::size_t>(v) * w + u];
    };

    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            const float* px = image.at(u, v);
            float* f = map.at(u, v);
            f[0] = px[0];
            f[1] = px[1];
            f[2] = px[2];
            f[3] = static_cast<float>(std::abs(0.5 * (lum_at(u + 1, v) - lum_at(u - 1, v))));
            f[4] = static_cast<float>(std::abs(0.5 * (lum_at(u, v + 1) - lum_at(u, v - 1))));
        }

    Rng rng(seed);
    for (int k = 5; k < d; ++k) {
        double kernel[25];
        for (double& x : kernel) x = rng.normal() * 0.2;
        for (int v = 0; v < h; ++v)
            for (int u = 0; u < w; ++u) {
                double acc = 0.0;
                for (int dv = -2; dv <= 2; ++dv)
                    for (int du = -2; du <= 2; ++du)
                        acc += kernel[(dv + 2) * 5 + (du + 2)] * lum_at(u + du, v + dv);
                map.at(u, v)[k] = static_cast<float>(acc);
            }
    }
    return map;
}

// ---------------------------------------------------------------------------
// scene manifest (JSON)

struct ManifestView {
    Camera camera;
    std::string image;
    std::string features;  // optional precomputed feature file
    std::string mask;      // optional body mask
};

struct ManifestTarget {
    Camera camera;
    std::string image;  // optional ground truth
    std::string mask;   // optional body mask
};

struct SceneManifest {
    int feature_dim = 32;
    std::uint64_t feature_seed = 42;
    Vec3 background = Vec3::Zero();
    std::string vertices;
    double voxel_size = 0.025;
    int margin_voxels = 5;
    std::vector<ManifestView> views;
    std::vector<ManifestTarget> targets;
};

namespace detail {

using nlohmann::json;

inline const json& require_field(const json& j, const char* field, const char* ctx) {
    if (!j.contains(field))
        throw SchemaError(std::string("manifest: missing field '") + field + "' in " + ctx);
    return j.at(field);
}

inline Camera camera_from_json(const json& j, const char* ctx) {
    Camera cam;
    const auto& jw = require_field(j, "width", ctx);
    const auto& jh = require_field(j, "height", ctx);
    const auto& jk = require_field(j, "K", ctx);
    const auto& jr = require_field(j, "R", ctx);
    const auto& jt = require_field(j, "t", ctx);
    if (!jw.is_number_integer() || !jh.is_number_integer())
        throw SchemaError(std::string("manifest: width/height must be integers in ") + ctx);
    cam.width = jw.get<int>();
    cam.height = jh.get<int>();
    if (!jk.is_array() || jk.size() != 9)
        throw SchemaError(std::string("manifest: 'K' must be a 9-element row-major array in ") + ctx);
    if (!jr.is_array() || jr.size() != 9)
        throw SchemaError(std::string("manifest: 'R' must be a 9-element row-major array in ") + ctx);
    if (!jt.is_array() || jt.size() != 3)
        throw SchemaError(std::string("manifest: 't' must be a 3-element array in ") + ctx);
    for (int i = 0; i < 9; ++i) {
        cam.intrinsics(i / 3, i % 3) = jk[i].get<double>();
        cam.rotation(i / 3, i % 3) = jr[i].get<double>();
    }
    for (int i = 0; i < 3; ++i) cam.translation[i] = jt[i].get<double>();
    cam.validate();
    return cam;
}

inline json camera_to_json(const Camera& cam) {
    json j;
    j["width"] = cam.width;
    j["height"] = cam.height;
    json k = json::array(), r = json::array(), t = json::array();
    for (int i = 0; i < 9; ++i) {
        k.push_back(cam.intrinsics(i / 3, i % 3));
        r.push_back(cam.rotation(i / 3, i % 3));
    }
    for (int i = 0; i < 3; ++i) t.push_back(cam.translation[i]);
    j["K"] = k;
    j["R"] = r;
    j["t"] = t;
    return j;
}

}  // namespace detail

inline SceneManifest read_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingFile("manifest: cannot open: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("manifest: invalid JSON: ") + e.what());
    }

    SceneManifest m;
    try {
        m.feature_dim = j.value("feature_dim", 32);
        m.feature_seed = j.value("feature_seed", std::uint64_t{42});
        if (j.contains("background")) {
            const auto& bg = j.at("background");
            if (!bg.is_array() || bg.size() != 3)
                throw SchemaError("manifest: 'background' must be a 3-element array");
            for (int i = 0; i < 3; ++i) m.background[i] = bg[i].get<double>();
        }
        m.vertices = detail::require_field(j, "vertices", "manifest root").get<std::string>();
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            m.voxel_size = g.value("voxel_size", 0.025);
            m.margin_voxels = g.value("margin_voxels", 5);
            if (!(m.voxel_size > 0.0)) throw SchemaError("manifest: grid.voxel_size must be > 0");
        }
        const auto& views = detail::require_field(j, "views", "manifest root");
        if (!views.is_array() || views.empty())
            throw SchemaError("manifest: 'views' must be a non-empty array");
        for (const auto& jv : views) {
            ManifestView view;
            view.camera = detail::camera_from_json(detail::require_field(jv, "camera", "views[]"),
                                                   "views[].camera");
            view.image = detail::require_field(jv, "image", "views[]").get<std::string>();
            view.features = jv.value("features", std::string{});
            view.mask = jv.value("mask", std::string{});
            m.views.push_back(std::move(view));
        }
        if (j.contains("targets")) {
            for (const auto& jt : j.at("targets")) {
                ManifestTarget target;
                target.camera = detail::camera_from_json(
                    detail::require_field(jt, "camera", "targets[]"), "targets[].camera");
                target.image = jt.value("image", std::string{});
                target.mask = jt.value("mask", std::string{});
                m.targets.push_back(std::move(target));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("manifest: ") + e.what());
    }
    return m;
}

inline void write_manifest(const fs::path& path, const SceneManifest& m) {
    nlohmann::json j;
    j["feature_dim"] = m.feature_dim;
    j["feature_seed"] = m.feature_seed;
    j["background"] = {m.background[0], m.background[1], m.background[2]};
    j["vertices"] = m.vertices;
    j["grid"] = {{"voxel_size", m.voxel_size}, {"margin_voxels", m.margin_voxels}};
    j["views"] = nlohmann::json::array();
    for (const ManifestView& v : m.views) {
        nlohmann::json jv;
        jv["camera"] = detail::camera_to_json(v.camera);
        jv["image"] = v.image;
        if (!v.features.empty()) jv["features"] = v.features;
        if (!v.mask.empty()) jv["mask"] = v.mask;
        j["views"].push_back(jv);
    }
    j["targets"] = nlohmann::json::array();
    for (const ManifestTarget& t : m.targets) {
        nlohmann::json jt;
        jt["camera"] = detail::camera_to_json(t.camera);
        if (!t.image.empty()) jt["image"] = t.image;
        if (!t.mask.empty()) jt["mask"] = t.mask;
        j["targets"].push_back(jt);
    }
    std::ofstream os(path);
    if (!os) throw IoError("manifest: cannot open for writing: " + path.string());
    os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// loaded assets and the prepared scene

struct SceneTarget {
    Camera camera;
    std::optional<RenderedImage> image;
    std::optional<std::vector<std::uint8_t>> mask;
};

struct SceneAssets {
    std::vector<Camera> cameras;       // M source views
    std::vector<RenderedImage> images;
    std::vector<FeatureMap> maps;
    std::vector<Vec3> vertices;
    std::vector<SceneTarget> targets;
    Vec3 background = Vec3::Zero();
    GridSpec grid;
    int feature_dim = 32;

    int view_count() const { return static_cast<int>(cameras.size()); }
};

inline SceneAssets load_scene(const fs::path& manifest_path) {
    const SceneManifest m = read_manifest(manifest_path);
    const fs::path dir = manifest_path.parent_path();
    auto resolve = [&dir](const std::string& rel) { return rel.empty() ? fs::path{} : dir / rel; };
    auto must_exist = [](const fs::path& p) {
        if (!fs::exists(p)) throw MissingFile("scene: referenced file does not exist: " + p.string());
        return p;
    };

    SceneAssets assets;
    assets.background = m.background;
    assets.feature_dim = m.feature_dim;
    for (const ManifestView& view : m.views) {
        assets.cameras.push_back(view.camera);
        RenderedImage img = read_ppm(must_exist(resolve(view.image)));
        if (!view.features.empty()) {
            FeatureMap map = read_feature_map(must_exist(resolve(view.features)));
            if (map.channels != m.feature_dim)
                throw BadDimension("scene: precomputed feature map channels differ from feature_dim");
            if (map.width != img.width || map.height != img.height)
                throw BadDimension("scene: precomputed feature map size differs from the image");
            assets.maps.push_back(std::move(map));
        } else {
            assets.maps.push_back(feature_provider(img, m.feature_dim, m.feature_seed));
        }
        assets.images.push_back(std::move(img));
    }
    assets.vertices = read_vertices(must_exist(resolve(m.vertices)));
    if (assets.vertices.empty()) throw SchemaError("scene: vertex file holds no vertices");
    for (const ManifestTarget& t : m.targets) {
        SceneTarget target;
        target.camera = t.camera;
        if (!t.image.empty()) target.image = read_ppm(must_exist(resolve(t.image)));
        if (!t.mask.empty()) target.mask = mask_from_image(read_ppm(must_exist(resolve(t.mask))));
        assets.targets.push_back(std::move(target));
    }
    assets.grid = GridSpec::fit(assets.vertices, m.voxel_size, m.margin_voxels);
    return assets;
}

// Scene with the weight-dependent state built: integrated vertex features,
// voxelized and densified into the geometry feature volume.
struct PreparedScene {
    SceneAssets assets;
    WeightBundle bundle;
    SparseFeatureVolume volume;

    SceneView view() const {
        SceneView v;
        v.volume = &volume;
        v.cameras = assets.cameras;
        v.maps = assets.maps;
        v.density_mlp = &bundle.density_mlp;
        v.appearance_mlp = &bundle.appearance_mlp;
        v.background = assets.background;
        return v;
    }
};

inline PreparedScene prepare_scene(SceneAssets assets, WeightBundle bundle,
                                   AttentionMode mode = AttentionMode::softmax) {
    bundle.validate();
    if (bundle.view_count != assets.view_count())
        throw InconsistentDims("prepare: bundle view count differs from the scene's");
    if (bundle.feature_dim != assets.feature_dim)
        throw InconsistentDims("prepare: bundle feature dimension differs from the scene's");
    if (bundle.vertex_count() != static_cast<int>(assets.vertices.size()))
        throw InconsistentDims("prepare: bundle query table rows differ from the vertex count");

    GeometryPrior prior;
    prior.positions = assets.vertices;
    prior.queries = bundle.queries;
    const Eigen::MatrixXd vertex_features =
        integrate_prior(prior, assets.cameras, assets.maps, bundle.attention, mode);

    SparseFeatureVolume volume = voxelize(assets.vertices, vertex_features, assets.grid);
    for (const DensifyKernel& kernel : bundle.densify_kernels)
        volume = densify_once(volume, kernel);

    PreparedScene scene;
    scene.assets = std::move(assets);
    scene.bundle = std::move(bundle);
    scene.volume = std::move(volume);
    return scene;
}

}  // namespace gpnerf
