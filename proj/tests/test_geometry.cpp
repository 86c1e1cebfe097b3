#include <catch2/catch_amalgamated.hpp>

#include "gpnerf/geometry.hpp"
#include "gpnerf/rng.hpp"

using namespace gpnerf;

namespace {

Mat3 rotation_z(double degrees) {
    const double a = degrees * 3.14159265358979323846 / 180.0;
    Mat3 r;
    r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return r;
}

Camera simple_camera(double f = 100.0, double cx = 50.0, double cy = 50.0, int w = 100, int h = 100) {
    Camera cam;
    cam.intrinsics = Mat3::Identity();
    cam.intrinsics(0, 0) = f;
    cam.intrinsics(1, 1) = f;
    cam.intrinsics(0, 2) = cx;
    cam.intrinsics(1, 2) = cy;
    cam.width = w;
    cam.height = h;
    return cam;
}

// random proper rotation from a uniform quaternion
Mat3 random_rotation(Rng& rng) {
    double q[4];
    double n = 0.0;
    for (double& v : q) {
        v = rng.normal();
        n += v * v;
    }
    n = std::sqrt(n);
    for (double& v : q) v /= n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

}  // namespace

TEST_CASE("world_to_camera matches the rigid transform", "[geometry]") {
    Camera cam = simple_camera();
    CHECK(world_to_camera(Vec3(1, 2, 3), cam) == Vec3(1, 2, 3));

    cam.translation = Vec3(0, 0, 1);
    CHECK(world_to_camera(Vec3(0, 0, 0), cam) == Vec3(0, 0, 1));

    cam.translation = Vec3::Zero();
    cam.rotation = rotation_z(90.0);
    const Vec3 p = world_to_camera(Vec3(1, 0, 0), cam);
    CHECK(p.isApprox(Vec3(0, 1, 0), 1e-12));
}

TEST_CASE("world_to_camera preserves pairwise distances", "[geometry]") {
    Rng rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        Camera cam = simple_camera();
        cam.rotation = random_rotation(rng);
        cam.translation = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
        const Vec3 a(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
        const Vec3 b(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
        const double before = (a - b).norm();
        const double after = (world_to_camera(a, cam) - world_to_camera(b, cam)).norm();
        REQUIRE(std::abs(before - after) < 1e-6);
    }
}

TEST_CASE("project follows the pinhole formula", "[geometry]") {
    const Camera cam = simple_camera();
    CHECK(project(Vec3(0, 0, 2), cam).isApprox(Vec2(50, 50), 1e-12));
    CHECK(project(Vec3(0.2, 0, 1), cam).isApprox(Vec2(70, 50), 1e-12));
    CHECK_THROWS_AS(project(Vec3(0, 0, -1), cam), NonPositiveDepth);
    CHECK_THROWS_AS(project(Vec3(0, 0, 0), cam), NonPositiveDepth);
}

TEST_CASE("bilinear_sample interpolates and clamps", "[geometry]") {
    FeatureMap map(2, 2, 1);
    *map.at(0, 0) = 0.0f;
    *map.at(1, 0) = 1.0f;
    *map.at(0, 1) = 1.0f;
    *map.at(1, 1) = 2.0f;

    auto center = bilinear_sample(map, Vec2(0.5, 0.5));
    CHECK(center.value[0] == Catch::Approx(1.0));
    CHECK_FALSE(center.clamped);

    auto node = bilinear_sample(map, Vec2(1.0, 0.0));
    CHECK(node.value[0] == Catch::Approx(1.0));
    CHECK_FALSE(node.clamped);

    auto outside = bilinear_sample(map, Vec2(-0.25, 0.0));
    CHECK(outside.clamped);
    CHECK(outside.value[0] == Catch::Approx(0.0));
}

TEST_CASE("bilinear_sample reproduces affine functions exactly", "[geometry]") {
    const int w = 7, h = 5;
    FeatureMap map(w, h, 2);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            map.at(u, v)[0] = static_cast<float>(u + v);
            map.at(u, v)[1] = static_cast<float>(2.0 * u - 3.0 * v + 1.0);
        }
    Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        const double u = rng.uniform(0.0, w - 1.0);
        const double v = rng.uniform(0.0, h - 1.0);
        auto s = bilinear_sample(map, Vec2(u, v));
        REQUIRE_FALSE(s.clamped);
        REQUIRE(s.value[0] == Catch::Approx(u + v).margin(1e-9));
        REQUIRE(s.value[1] == Catch::Approx(2 * u - 3 * v + 1).margin(1e-9));
    }
    // exact on every node
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            auto s = bilinear_sample(map, Vec2(u, v));
            REQUIRE(s.value[0] == static_cast<double>(map.at(u, v)[0]));
        }
}

TEST_CASE("ray_aabb_intersect slab test", "[geometry]") {
    const Aabb cube{Vec3(0, 0, 0), Vec3(1, 1, 1)};

    Ray ray;
    ray.origin = Vec3(-1, 0.5, 0.5);
    ray.direction = Vec3(1, 0, 0);
    auto hit = ray_aabb_intersect(ray, cube);
    REQUIRE(hit);
    CHECK(hit->first == Catch::Approx(1.0));
    CHECK(hit->second == Catch::Approx(2.0));

    ray.origin = Vec3(2, 2, -1);
    ray.direction = Vec3(0, 0, 1);
    CHECK_FALSE(ray_aabb_intersect(ray, cube));

    ray.origin = Vec3(0.5, 0.5, 0.5);
    ray.direction = Vec3(1, 0, 0);
    hit = ray_aabb_intersect(ray, cube);
    REQUIRE(hit);
    CHECK(hit->first == 0.0);
    CHECK(hit->second == Catch::Approx(0.5));

    // box entirely behind the origin
    ray.origin = Vec3(2, 0.5, 0.5);
    ray.direction = Vec3(1, 0, 0);
    CHECK_FALSE(ray_aabb_intersect(ray, cube));
}

TEST_CASE("ray_aabb_intersect endpoints lie on the boundary", "[geometry]") {
    const Aabb box{Vec3(-0.5, -1.0, 0.25), Vec3(1.5, 0.5, 2.0)};
    Rng rng(33);
    int hits = 0;
    for (int trial = 0; trial < 6000; ++trial) {
        Ray ray;
        // origins outside the box so neither endpoint is clamped
        do {
            ray.origin = Vec3(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4));
        } while (box.contains(ray.origin));
        Vec3 dir(rng.normal(), rng.normal(), rng.normal());
        if (dir.norm() < 1e-6) continue;
        ray.direction = dir.normalized();
        auto hit = ray_aabb_intersect(ray, box);
        if (!hit) continue;
        ++hits;
        REQUIRE(hit->first <= hit->second);
        for (double t : {hit->first, hit->second}) {
            const Vec3 p = ray.at(t);
            double dist_to_boundary = std::numeric_limits<double>::infinity();
            for (int a = 0; a < 3; ++a) {
                dist_to_boundary = std::min(dist_to_boundary, std::abs(p[a] - box.min[a]));
                dist_to_boundary = std::min(dist_to_boundary, std::abs(p[a] - box.max[a]));
            }
            REQUIRE(dist_to_boundary < 1e-6);
            REQUIRE((p.array() >= box.min.array() - 1e-6).all());
            REQUIRE((p.array() <= box.max.array() + 1e-6).all());
        }
    }
    REQUIRE(hits > 100);
}

TEST_CASE("generate_ray origin and principal direction", "[geometry]") {
    Camera cam = simple_camera(100.0, 50.5, 50.5, 101, 101);
    // pixel (50,50) has center (50.5, 50.5) = principal point
    const Ray ray = generate_ray(cam, 50, 50);
    CHECK(ray.origin.isApprox(Vec3::Zero(), 1e-12));
    CHECK(ray.direction.isApprox(Vec3(0, 0, 1), 1e-12));

    CHECK_THROWS_AS(generate_ray(cam, -1, 0), PixelOutOfRange);
    CHECK_THROWS_AS(generate_ray(cam, 0, 101), PixelOutOfRange);
}

TEST_CASE("project/generate_ray round trip hits the pixel center", "[geometry]") {
    Rng rng(55);
    for (int trial = 0; trial < 300; ++trial) {
        Camera cam = simple_camera(rng.uniform(50, 200), rng.uniform(20, 80), rng.uniform(20, 80));
        cam.rotation = random_rotation(rng);
        cam.translation = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        const int u = static_cast<int>(rng.below(100));
        const int v = static_cast<int>(rng.below(100));
        const Ray ray = generate_ray(cam, u, v);
        const double t = rng.uniform(0.5, 10.0);
        const Vec3 cam_pt = world_to_camera(ray.at(t), cam);
        if (cam_pt.z() <= 1e-9) continue;
        const Vec2 uv = project(cam_pt, cam);
        REQUIRE(std::abs(uv.x() - (u + 0.5)) < 1e-4);
        REQUIRE(std::abs(uv.y() - (v + 0.5)) < 1e-4);
    }
}

TEST_CASE("camera validation rejects broken intrinsics and rotations", "[geometry]") {
    Camera cam = simple_camera();
    CHECK_NOTHROW(cam.validate());

    Camera bad = cam;
    bad.intrinsics(2, 2) = 0.0;
    CHECK_THROWS_AS(bad.validate(), BadCamera);

    bad = cam;
    bad.rotation(0, 0) = 2.0;
    CHECK_THROWS_AS(bad.validate(), BadCamera);

    bad = cam;
    bad.width = 0;
    CHECK_THROWS_AS(bad.validate(), BadCamera);
}
