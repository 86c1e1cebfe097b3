#include <catch2/catch_amalgamated.hpp>

#include "gpnerf/feature_integration.hpp"
#include "gpnerf/neural_nets.hpp"
#include "gpnerf/rng.hpp"

using namespace gpnerf;

namespace {

FeatureMap constant_map(int w, int h, int d, float value) {
    FeatureMap map(w, h, d);
    for (float& v : map.values) v = value;
    return map;
}

Camera axis_camera(const Vec3& t = Vec3::Zero(), double f = 40.0, int size = 32) {
    Camera cam;
    cam.intrinsics(0, 0) = f;
    cam.intrinsics(1, 1) = f;
    cam.intrinsics(0, 2) = size / 2.0;
    cam.intrinsics(1, 2) = size / 2.0;
    cam.width = size;
    cam.height = size;
    cam.translation = t;
    return cam;
}

AttentionParams random_params(int d, int views, std::uint64_t seed) {
    Rng rng(seed);
    AttentionParams p;
    auto mat = [&](int r, int c) {
        Eigen::MatrixXf m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = static_cast<float>(rng.normal() * 0.3);
        return m;
    };
    p.w_query = mat(d, d);
    p.b_query = mat(d, 1).col(0);
    for (int m = 0; m < views; ++m) {
        p.w_key.push_back(mat(d, d));
        p.b_key.push_back(mat(d, 1).col(0));
    }
    return p;
}

ViewFeatureSet random_set(int views, int d, Rng& rng, double valid_prob = 1.0) {
    ViewFeatureSet set;
    set.features.resize(views, d);
    set.valid.assign(views, 0);
    for (int m = 0; m < views; ++m) {
        const bool ok = rng.uniform() < valid_prob;
        set.valid[m] = ok ? 1 : 0;
        for (int c = 0; c < d; ++c)
            set.features(m, c) = ok ? rng.normal() : 0.0;
    }
    return set;
}

}  // namespace

TEST_CASE("extract_pixel_aligned samples per view and flags invalid views", "[integration]") {
    const int d = 4;
    std::vector<Camera> cams{axis_camera(), axis_camera(Vec3(0, 0, 5))};
    std::vector<FeatureMap> maps{constant_map(32, 32, d, 0.0f), constant_map(32, 32, d, 2.0f)};
    // distinguish one node of view 0: node (16,16) = projection (16.5, 16.5)
    for (int c = 0; c < d; ++c) maps[0].at(16, 16)[c] = 7.0f;

    // point on the optical axis at depth 2: projects to (16, 16) center => node (15.5, 15.5)
    const Vec3 p(0, 0, 2);
    auto set = extract_pixel_aligned(p, cams, maps);
    REQUIRE(set.views() == 2);
    CHECK(set.valid[0] == 1);
    CHECK(set.valid[1] == 1);
    // bilinear average of nodes (15,15),(16,15),(15,16),(16,16) = (0+0+0+7)/4
    CHECK(set.features(0, 0) == Catch::Approx(7.0 / 4.0));
    CHECK(set.features(1, 0) == Catch::Approx(2.0));

    // point behind camera 1 (translation pushes it to z = -1)
    std::vector<Camera> cams2{axis_camera(), axis_camera(Vec3(0, 0, -3))};
    auto set2 = extract_pixel_aligned(p, cams2, maps);
    CHECK(set2.valid[1] == 0);
    CHECK(set2.features.row(1).cwiseAbs().maxCoeff() == 0.0);

    // exact node hit: choose point projecting to pixel node (8, 8), i.e. continuous (8.5, 8.5)
    maps[0] = constant_map(32, 32, d, 0.0f);
    for (int c = 0; c < d; ++c) maps[0].at(8, 8)[c] = 3.0f;
    const double f = 40.0, cx = 16.0;
    const double x = (8.5 - cx) / f * 2.0;  // u = f*x/z + cx with z = 2
    auto set3 = extract_pixel_aligned(Vec3(x, x, 2), cams, maps);
    CHECK(set3.features(0, 0) == Catch::Approx(3.0));
    CHECK(set3.valid[0] == 1);

    std::vector<FeatureMap> bad_maps{constant_map(32, 32, d, 0.0f), constant_map(32, 32, 2, 0.0f)};
    CHECK_THROWS_AS(extract_pixel_aligned(p, cams, bad_maps), DimensionMismatch);
}

TEST_CASE("attention_scores closed forms", "[integration]") {
    const int d = 3;

    SECTION("identical keys give equal weights") {
        AttentionParams p = random_params(d, 2, 11);
        p.w_key[1] = p.w_key[0];
        p.b_key[1] = p.b_key[0];
        ViewFeatureSet set;
        set.features = Eigen::MatrixXd::Ones(2, d);
        set.valid = {1, 1};
        const Eigen::VectorXd w = attention_scores(Eigen::VectorXd::Ones(d), set, p);
        CHECK(w[0] == Catch::Approx(0.5).margin(1e-12));
        CHECK(w[1] == Catch::Approx(0.5).margin(1e-12));
    }

    SECTION("logits (ln 2, 0) give weights (2/3, 1/3)") {
        // construct explicit logits: W1 = I, b1 = 0, W2m = 0, b2m chosen so
        // q' . b2m / sqrt(d) equals the wanted logit
        AttentionParams p;
        p.w_query = Eigen::MatrixXf::Identity(d, d);
        p.b_query = Eigen::VectorXf::Zero(d);
        for (int m = 0; m < 2; ++m) {
            p.w_key.push_back(Eigen::MatrixXf::Zero(d, d));
            p.b_key.push_back(Eigen::VectorXf::Zero(d));
        }
        const double ln2 = std::log(2.0);
        p.b_key[0][0] = static_cast<float>(ln2 * std::sqrt(3.0));
        Eigen::VectorXd q = Eigen::VectorXd::Zero(d);
        q[0] = 1.0;
        ViewFeatureSet set;
        set.features = Eigen::MatrixXd::Zero(2, d);
        set.valid = {1, 1};
        const Eigen::VectorXd w = attention_scores(q, set, p);
        CHECK(w[0] == Catch::Approx(2.0 / 3.0).epsilon(1e-6));
        CHECK(w[1] == Catch::Approx(1.0 / 3.0).epsilon(1e-6));
    }

    SECTION("single valid view gets weight one; none valid gives zeros") {
        AttentionParams p = random_params(d, 1, 5);
        Rng rng(3);
        ViewFeatureSet set = random_set(1, d, rng);
        const Eigen::VectorXd w = attention_scores(Eigen::VectorXd::Ones(d), set, p);
        CHECK(w[0] == Catch::Approx(1.0));

        set.valid[0] = 0;
        const Eigen::VectorXd w2 = attention_scores(Eigen::VectorXd::Ones(d), set, p);
        CHECK(w2[0] == 0.0);
    }
}

TEST_CASE("attention weights form a convex combination over valid views", "[integration][property]") {
    const int d = 8, views = 4;
    Rng rng(21);
    const AttentionParams p = random_params(d, views, 77);
    for (int trial = 0; trial < 1000; ++trial) {
        ViewFeatureSet set = random_set(views, d, rng, 0.7);
        bool any = false;
        for (auto v : set.valid) any |= (v != 0);
        Eigen::VectorXd q(d);
        for (int c = 0; c < d; ++c) q[c] = rng.normal();
        const Eigen::VectorXd w = attention_scores(q, set, p);
        if (!any) {
            REQUIRE(w.cwiseAbs().maxCoeff() == 0.0);
            continue;
        }
        REQUIRE(w.minCoeff() >= 0.0);
        REQUIRE(std::abs(w.sum() - 1.0) < 1e-6);
        for (int m = 0; m < views; ++m)
            if (!set.valid[m]) REQUIRE(w[m] == 0.0);
    }
}

TEST_CASE("softmax weights are invariant to a uniform logit shift", "[integration][property]") {
    const int d = 6, views = 3;
    Rng rng(31);
    for (int trial = 0; trial < 300; ++trial) {
        AttentionParams p = random_params(d, views, 1000 + trial);
        Eigen::VectorXd q(d);
        for (int c = 0; c < d; ++c) q[c] = rng.normal();
        ViewFeatureSet set = random_set(views, d, rng);

        // shift all logits by c: add c*sqrt(d)*q'/|q'|^2 to every key bias
        const Eigen::VectorXd q_proj =
            p.w_query.cast<double>() * q + p.b_query.cast<double>();
        if (q_proj.squaredNorm() < 1e-8) continue;
        const double shift = rng.uniform(-5.0, 5.0);
        const Eigen::VectorXd delta =
            shift * std::sqrt(static_cast<double>(d)) * q_proj / q_proj.squaredNorm();
        AttentionParams shifted = p;
        for (int m = 0; m < views; ++m)
            shifted.b_key[m] += delta.cast<float>();

        const Eigen::VectorXd w0 = attention_scores(q, set, p);
        const Eigen::VectorXd w1 = attention_scores(q, set, shifted);
        REQUIRE((w0 - w1).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("aggregate is the weighted sum and is linear in features", "[integration]") {
    const int d = 5;
    ViewFeatureSet set;
    set.features.resize(2, d);
    set.features.row(0).setConstant(0.0);
    set.features.row(1).setConstant(2.0);
    set.valid = {1, 1};
    Eigen::VectorXd w(2);
    w << 0.5, 0.5;
    CHECK(aggregate(w, set).isApproxToConstant(1.0, 1e-12));

    w << 0.0, 1.0;
    CHECK(aggregate(w, set).isApprox(set.features.row(1).transpose(), 1e-12));

    w.setZero();
    CHECK(aggregate(w, set).cwiseAbs().maxCoeff() == 0.0);

    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        ViewFeatureSet f = random_set(3, d, rng);
        ViewFeatureSet g = random_set(3, d, rng);
        Eigen::VectorXd wt(3);
        for (int m = 0; m < 3; ++m) wt[m] = rng.normal();
        const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
        ViewFeatureSet combo = f;
        combo.features = alpha * f.features + beta * g.features;
        const Eigen::VectorXd lhs = aggregate(wt, combo);
        const Eigen::VectorXd rhs = alpha * aggregate(wt, f) + beta * aggregate(wt, g);
        REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("mean_variance is the population statistic", "[integration]") {
    ViewFeatureSet set;
    set.features.resize(2, 1);
    set.features << 1.0, 3.0;
    set.valid = {1, 1};
    auto stats = mean_variance(set);
    CHECK(stats.mean[0] == Catch::Approx(2.0));
    CHECK(stats.variance[0] == Catch::Approx(1.0));

    set.features << 4.0, 4.0;
    stats = mean_variance(set);
    CHECK(stats.variance[0] == Catch::Approx(0.0).margin(1e-15));

    ViewFeatureSet single;
    single.features.resize(1, 3);
    single.features << 1.0, -2.0, 5.0;
    single.valid = {1};
    stats = mean_variance(single);
    CHECK(stats.variance.cwiseAbs().maxCoeff() == 0.0);

    // v = E[f^2] - mu^2
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        ViewFeatureSet s = random_set(4, 6, rng, 0.8);
        auto st = mean_variance(s);
        REQUIRE(st.variance.minCoeff() >= 0.0);
        const Eigen::VectorXd esq =
            s.features.array().square().colwise().sum().transpose() / 4.0;
        const Eigen::VectorXd alt = esq - st.mean.array().square().matrix();
        REQUIRE((st.variance - alt).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("integrate_prior composes the three steps", "[integration]") {
    const int d = 4;
    std::vector<Camera> cams{axis_camera(), axis_camera(Vec3(0, 0, 5))};
    std::vector<FeatureMap> maps{constant_map(32, 32, d, 0.0f), constant_map(32, 32, d, 2.0f)};

    AttentionParams p = random_params(d, 2, 13);
    p.w_key[1] = p.w_key[0];
    p.b_key[1] = p.b_key[0];
    // identical keys require identical key inputs; with features (0, 2) the
    // logits differ unless W2 is zero
    p.w_key[0].setZero();
    p.w_key[1].setZero();

    GeometryPrior prior;
    prior.positions = {Vec3(0, 0, 2)};
    prior.queries = Eigen::MatrixXf::Ones(1, d);
    const Eigen::MatrixXd out = integrate_prior(prior, cams, maps, p);
    REQUIRE(out.rows() == 1);
    CHECK(out.row(0).isApproxToConstant(1.0, 1e-9));  // (0 + 2) / 2
}

TEST_CASE("vertex invisible in all views integrates to zero", "[integration]") {
    const int d = 4;
    std::vector<Camera> cams{axis_camera()};
    std::vector<FeatureMap> maps{constant_map(32, 32, d, 5.0f)};
    GeometryPrior prior;
    prior.positions = {Vec3(0, 0, -1)};  // behind the single camera
    prior.queries = Eigen::MatrixXf::Ones(1, d);
    const Eigen::MatrixXd out = integrate_prior(prior, cams, maps, random_params(d, 1, 3));
    CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("integrate_prior matches a straight-line oracle on a capsule-like cloud",
          "[integration][oracle]") {
    const int d = 8, views = 3, count = 642;
    Rng rng(2024);

    std::vector<Camera> cams;
    std::vector<FeatureMap> maps;
    for (int m = 0; m < views; ++m) {
        const double az = 2.0 * 3.14159265358979323846 * m / views;
        cams.push_back(make_lookat_camera(Vec3(2.0 * std::sin(az), 0.3, 2.0 * std::cos(az)),
                                          Vec3(0, 0, 0), 40.0, 48, 48));
        FeatureMap map(48, 48, d);
        for (float& v : map.values) v = static_cast<float>(rng.normal());
        maps.push_back(std::move(map));
    }
    const AttentionParams params = random_params(d, views, 555);

    GeometryPrior prior;
    prior.queries.resize(count, d);
    for (int l = 0; l < count; ++l) {
        // points on a capsule around the y axis
        const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double y = rng.uniform(-0.4, 0.4);
        prior.positions.emplace_back(0.25 * std::cos(theta), y, 0.25 * std::sin(theta));
        for (int c = 0; c < d; ++c) prior.queries(l, c) = static_cast<float>(rng.normal());
    }

    const Eigen::MatrixXd fast = integrate_prior(prior, cams, maps, params);

    // oracle: script the three steps vertex by vertex
    Eigen::MatrixXd slow(count, d);
    for (int l = 0; l < count; ++l) {
        const auto set = extract_pixel_aligned(prior.positions[l], cams, maps);
        const auto w = attention_scores(prior.queries.row(l).cast<double>(), set, params);
        slow.row(l) = aggregate(w, set).transpose();
    }
    REQUIRE((fast - slow).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("view permutation with matching params leaves F_l unchanged", "[integration][property]") {
    const int d = 6, views = 3;
    Rng rng(404);
    std::vector<Camera> cams;
    std::vector<FeatureMap> maps;
    for (int m = 0; m < views; ++m) {
        const double az = 2.0 * 3.14159265358979323846 * m / views;
        cams.push_back(make_lookat_camera(Vec3(2.0 * std::sin(az), 0.1, 2.0 * std::cos(az)),
                                          Vec3(0, 0, 0), 30.0, 32, 32));
        FeatureMap map(32, 32, d);
        for (float& v : map.values) v = static_cast<float>(rng.normal());
        maps.push_back(std::move(map));
    }
    AttentionParams params = random_params(d, views, 888);

    GeometryPrior prior;
    const int count = 50;
    prior.queries.resize(count, d);
    for (int l = 0; l < count; ++l) {
        prior.positions.emplace_back(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                                     rng.uniform(-0.3, 0.3));
        for (int c = 0; c < d; ++c) prior.queries(l, c) = static_cast<float>(rng.normal());
    }
    const Eigen::MatrixXd base = integrate_prior(prior, cams, maps, params);

    const std::array<int, 3> perm = {2, 0, 1};
    std::vector<Camera> cams_p;
    std::vector<FeatureMap> maps_p;
    AttentionParams params_p = params;
    for (int m = 0; m < views; ++m) {
        cams_p.push_back(cams[perm[m]]);
        maps_p.push_back(maps[perm[m]]);
        params_p.w_key[m] = params.w_key[perm[m]];
        params_p.b_key[m] = params.b_key[perm[m]];
    }
    const Eigen::MatrixXd permuted = integrate_prior(prior, cams_p, maps_p, params_p);
    REQUIRE((base - permuted).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("raw-sum mode returns unnormalized scores", "[integration]") {
    const int d = 3;
    AttentionParams p;
    p.w_query = Eigen::MatrixXf::Identity(d, d);
    p.b_query = Eigen::VectorXf::Zero(d);
    p.w_key = {Eigen::MatrixXf::Identity(d, d), Eigen::MatrixXf::Identity(d, d)};
    p.b_key = {Eigen::VectorXf::Zero(d), Eigen::VectorXf::Zero(d)};
    ViewFeatureSet set;
    set.features.resize(2, d);
    set.features.row(0) << 1, 0, 0;
    set.features.row(1) << 0, 2, 0;
    set.valid = {1, 1};
    Eigen::VectorXd q(d);
    q << 1, 1, 0;
    const Eigen::VectorXd w = attention_scores(q, set, p, AttentionMode::raw_sum);
    const double s = std::sqrt(3.0);
    CHECK(w[0] == Catch::Approx(1.0 / s));
    CHECK(w[1] == Catch::Approx(2.0 / s));
}
