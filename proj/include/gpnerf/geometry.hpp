#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "gpnerf/errors.hpp"

namespace gpnerf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Pinhole camera. Convention: x_cam = R * x_world + t, camera looks along +z,
// u grows right, v grows down. Integer pixel (u, v) has its center at the
// continuous coordinate (u + 0.5, v + 0.5).
struct Camera {
    Mat3 intrinsics = Mat3::Identity();  // K, pixels
    Mat3 rotation = Mat3::Identity();    // R, orthonormal
    Vec3 translation = Vec3::Zero();     // t, meters
    int width = 0;
    int height = 0;

    Vec3 center() const { return -rotation.transpose() * translation; }

    double fx() const { return intrinsics(0, 0); }
    double fy() const { return intrinsics(1, 1); }
    double cx() const { return intrinsics(0, 2); }
    double cy() const { return intrinsics(1, 2); }

    // Throws BadCamera when the invariants do not hold. Skew/projective terms
    // are rejected: projection and ray generation assume a pure pinhole K.
    void validate() const {
        if (width < 1 || height < 1) throw BadCamera("camera: width and height must be >= 1");
        if (!(fx() > 0.0) || !(fy() > 0.0)) throw BadCamera("camera: focal lengths must be positive");
        if (std::abs(intrinsics(2, 2) - 1.0) > 1e-9) throw BadCamera("camera: K[2][2] must be 1");
        if (std::abs(intrinsics(0, 1)) > 1e-9 || std::abs(intrinsics(1, 0)) > 1e-9 ||
            std::abs(intrinsics(2, 0)) > 1e-9 || std::abs(intrinsics(2, 1)) > 1e-9) {
            throw BadCamera("camera: K must be a pinhole matrix (no skew / projective terms)");
        }
        const Mat3 rtr = rotation.transpose() * rotation;
        if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
            throw BadCamera("camera: R is not orthonormal");
        if (rotation.determinant() < 0.5) throw BadCamera("camera: R has non-positive determinant");
    }
};

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();  // unit length
    int pixel_u = 0;
    int pixel_v = 0;

    Vec3 at(double t) const { return origin + t * direction; }
};

struct Aabb {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    bool contains(const Vec3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    Vec3 extent() const { return max - min; }

    static Aabb of_points(const std::vector<Vec3>& pts) {
        Aabb box;
        box.min = Vec3::Constant(std::numeric_limits<double>::infinity());
        box.max = -box.min;
        for (const Vec3& p : pts) {
            box.min = box.min.cwiseMin(p);
            box.max = box.max.cwiseMax(p);
        }
        return box;
    }
};

// Per-view image feature grid, float storage, row-major (v, u, channel).
struct FeatureMap {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> values;

    FeatureMap() = default;
    FeatureMap(int w, int h, int d) : width(w), height(h), channels(d) {
        values.assign(static_cast<std::size_t>(w) * h * d, 0.0f);
    }

    const float* at(int u, int v) const {
        return values.data() + (static_cast<std::size_t>(v) * width + u) * channels;
    }
    float* at(int u, int v) {
        return values.data() + (static_cast<std::size_t>(v) * width + u) * channels;
    }
};

inline Vec3 world_to_camera(const Vec3& point, const Camera& camera) {
    return camera.rotation * point + camera.translation;
}

// Projection of a camera-frame point, undefined for z <= 0. The non-throwing
// variant feeds the hot paths; `project` is the checked entry point.
inline std::optional<Vec2> try_project(const Vec3& point_cam, const Camera& camera) {
    if (!(point_cam.z() > 0.0)) return std::nullopt;
    const double inv_z = 1.0 / point_cam.z();
    return Vec2(camera.fx() * point_cam.x() * inv_z + camera.cx(),
                camera.fy() * point_cam.y() * inv_z + camera.cy());
}

inline Vec2 project(const Vec3& point_cam, const Camera& camera) {
    auto uv = try_project(point_cam, camera);
    if (!uv) throw NonPositiveDepth("project: point depth is not positive");
    return *uv;
}

// Bilinear interpolation on the feature grid. `uv` addresses grid nodes:
// integer (i, j) hits the stored pixel (i, j) exactly. Coordinates are clamped
// to [0, W-1] x [0, H-1]; `clamped` reports whether clamping moved the point.
// `out` must hold map.channels doubles.
inline bool bilinear_sample_into(const FeatureMap& map, const Vec2& uv, double* out) {
    const double max_u = static_cast<double>(map.width - 1);
    const double max_v = static_cast<double>(map.height - 1);
    double u = uv.x();
    double v = uv.y();
    bool clamped = false;
    if (u < 0.0) { u = 0.0; clamped = true; }
    if (u > max_u) { u = max_u; clamped = true; }
    if (v < 0.0) { v = 0.0; clamped = true; }
    if (v > max_v) { v = max_v; clamped = true; }

    int i0 = static_cast<int>(std::floor(u));
    int j0 = static_cast<int>(std::floor(v));
    if (i0 > map.width - 2) i0 = map.width > 1 ? map.width - 2 : 0;
    if (j0 > map.height - 2) j0 = map.height > 1 ? map.height - 2 : 0;
    const int i1 = map.width > 1 ? i0 + 1 : i0;
    const int j1 = map.height > 1 ? j0 + 1 : j0;
    const double fu = u - i0;
    const double fv = v - j0;

    const float* f00 = map.at(i0, j0);
    const float* f10 = map.at(i1, j0);
    const float* f01 = map.at(i0, j1);
    const float* f11 = map.at(i1, j1);
    const double w00 = (1.0 - fu) * (1.0 - fv);
    const double w10 = fu * (1.0 - fv);
    const double w01 = (1.0 - fu) * fv;
    const double w11 = fu * fv;
    for (int c = 0; c < map.channels; ++c)
        out[c] = w00 * f00[c] + w10 * f10[c] + w01 * f01[c] + w11 * f11[c];
    return clamped;
}

struct BilinearSample {
    Eigen::VectorXd value;
    bool clamped = false;
};

inline BilinearSample bilinear_sample(const FeatureMap& map, const Vec2& uv) {
    BilinearSample s;
    s.value.resize(map.channels);
    s.clamped = bilinear_sample_into(map, uv, s.value.data());
    return s;
}

// Slab test, interval clipped to t >= 0. Returns nullopt when the ray misses
// or the box lies entirely behind the origin.
inline std::optional<std::pair<double, double>> ray_aabb_intersect(const Ray& ray, const Aabb& box) {
    double t_min = -std::numeric_limits<double>::infinity();
    double t_max = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double d = ray.direction[a];
        const double o = ray.origin[a];
        if (std::abs(d) < 1e-15) {
            if (o < box.min[a] || o > box.max[a]) return std::nullopt;
            continue;
        }
        const double inv = 1.0 / d;
        double t0 = (box.min[a] - o) * inv;
        double t1 = (box.max[a] - o) * inv;
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > t_min) t_min = t0;
        if (t1 < t_max) t_max = t1;
        if (t_max < t_min) return std::nullopt;
    }
    if (t_max < 0.0) return std::nullopt;
    return std::make_pair(std::max(t_min, 0.0), t_max);
}

// Ray through the center of pixel (u, v): origin is the camera center,
// direction is R^T K^{-1} (u+0.5, v+0.5, 1), normalized.
inline Ray generate_ray(const Camera& camera, int u, int v) {
    if (u < 0 || u >= camera.width || v < 0 || v >= camera.height)
        throw PixelOutOfRange("generate_ray: pixel outside the image");
    Ray ray;
    ray.origin = camera.center();
    const Vec3 pix(u + 0.5, v + 0.5, 1.0);
    const Vec3 cam_dir((pix.x() - camera.cx()) / camera.fx(),
                       (pix.y() - camera.cy()) / camera.fy(), 1.0);
    ray.direction = (camera.rotation.transpose() * cam_dir).normalized();
    ray.pixel_u = u;
    ray.pixel_v = v;
    return ray;
}

// Look-at constructor used by generated scenes: y-up world, image v grows
// downward, camera z points at the target.
inline Camera make_lookat_camera(const Vec3& eye, const Vec3& target, double focal_px,
                                 int width, int height) {
    Camera cam;
    const Vec3 fwd = (target - eye).normalized();
    Vec3 up(0.0, 1.0, 0.0);
    if (std::abs(fwd.dot(up)) > 0.999) up = Vec3(0.0, 0.0, 1.0);
    const Vec3 right = fwd.cross(up).normalized();  // u axis; world-up maps to image-up
    const Vec3 down = fwd.cross(right);             // v axis grows downward
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = fwd.transpose();
    cam.rotation = r;
    cam.translation = -r * eye;
    cam.intrinsics = Mat3::Identity();
    cam.intrinsics(0, 0) = focal_px;
    cam.intrinsics(1, 1) = focal_px;
    cam.intrinsics(0, 2) = width * 0.5;
    cam.intrinsics(1, 2) = height * 0.5;
    cam.width = width;
    cam.height = height;
    cam.validate();
    return cam;
}

}  // namespace gpnerf
