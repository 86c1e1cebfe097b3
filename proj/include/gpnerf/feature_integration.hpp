#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gpnerf/geometry.hpp"
#include "gpnerf/rng.hpp"

namespace gpnerf {

// Body prior: vertex positions plus one query embedding per vertex.
struct GeometryPrior {
    std::vector<Vec3> positions;  // L x 3, meters
    Eigen::MatrixXf queries;      // L x d

    int count() const { return static_cast<int>(positions.size()); }
    int dim() const { return static_cast<int>(queries.cols()); }

    void validate() const {
        if (static_cast<Eigen::Index>(positions.size()) != queries.rows())
            throw InconsistentDims("geometry prior: position and embedding counts differ");
    }
};

// Frozen attention parameters: one query projection, one key projection per view.
struct AttentionParams {
    Eigen::MatrixXf w_query;               // W1, d x d
    Eigen::VectorXf b_query;               // b1, d
    std::vector<Eigen::MatrixXf> w_key;    // W2m, each d x d
    std::vector<Eigen::VectorXf> b_key;    // b2m, each d

    int dim() const { return static_cast<int>(w_query.rows()); }
    int views() const { return static_cast<int>(w_key.size()); }

    void validate() const {
        const int d = dim();
        if (w_query.cols() != d || b_query.size() != d)
            throw InconsistentDims("attention params: query projection dimensions");
        if (w_key.size() != b_key.size() || w_key.empty())
            throw InconsistentDims("attention params: key projection count");
        for (std::size_t m = 0; m < w_key.size(); ++m) {
            if (w_key[m].rows() != d || w_key[m].cols() != d || b_key[m].size() != d)
                throw InconsistentDims("attention params: key projection dimensions");
        }
    }
};

// row-major so per-view rows are contiguous and can be filled in place
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Pixel-aligned features of one 3-D point across the M source views.
// Invalid views (behind the camera or projecting outside the image) carry a
// zero feature row and valid = 0.
struct ViewFeatureSet {
    RowMatrixXd features;            // M x d
    std::vector<std::uint8_t> valid; // M

    int views() const { return static_cast<int>(features.rows()); }
    int dim() const { return static_cast<int>(features.cols()); }
};

struct ViewStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
};

enum class AttentionMode {
    softmax,  // convex weights over valid views (default)
    raw_sum   // raw Eq.-style scores, no normalization
};

inline ViewFeatureSet extract_pixel_aligned(const Vec3& point, std::span<const Camera> cameras,
                                            std::span<const FeatureMap> maps) {
    if (cameras.size() != maps.size())
        throw DimensionMismatch("extract_pixel_aligned: camera and map counts differ");
    const int m_views = static_cast<int>(cameras.size());
    const int d = m_views > 0 ? maps[0].channels : 0;
    for (const FeatureMap& map : maps) {
        if (map.channels != d)
            throw DimensionMismatch("extract_pixel_aligned: feature maps disagree on channel count");
    }
    ViewFeatureSet set;
    set.features = RowMatrixXd::Zero(m_views, d);
    set.valid.assign(m_views, 0);
    for (int m = 0; m < m_views; ++m) {
        const Vec3 cam_pt = world_to_camera(point, cameras[m]);
        const auto uv = try_project(cam_pt, cameras[m]);
        if (!uv) continue;
        // grid nodes sit at pixel centers: node coordinate = projection - 0.5
        const Vec2 node = *uv - Vec2(0.5, 0.5);
        const bool clamped = bilinear_sample_into(maps[m], node, set.features.row(m).data());
        if (clamped) {
            set.features.row(m).setZero();
            continue;
        }
        set.valid[m] = 1;
    }
    return set;
}

// Correspondence scores: s_m = (W1 q + b1) . (W2m f_m + b2m) / sqrt(d).
// Softmax runs over the valid views only; with no valid view the result is
// all zeros. Raw mode returns the unnormalized scores (zero for invalid).
inline Eigen::VectorXd attention_scores(const Eigen::VectorXd& query, const ViewFeatureSet& features,
                                        const AttentionParams& params,
                                        AttentionMode mode = AttentionMode::softmax) {
    const int d = params.dim();
    const int m_views = params.views();
    if (query.size() != d) throw DimensionMismatch("attention_scores: query dimension");
    if (features.views() != m_views || features.dim() != d)
        throw DimensionMismatch("attention_scores: feature set dimensions");

    const Eigen::VectorXd q_proj =
        params.w_query.cast<double>() * query + params.b_query.cast<double>();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Eigen::VectorXd logits = Eigen::VectorXd::Zero(m_views);
    bool any_valid = false;
    for (int m = 0; m < m_views; ++m) {
        if (!features.valid[m]) continue;
        const Eigen::VectorXd key = params.w_key[m].cast<double>() * features.features.row(m).transpose() +
                                    params.b_key[m].cast<double>();
        logits[m] = q_proj.dot(key) * inv_sqrt_d;
        any_valid = true;
    }

    Eigen::VectorXd weights = Eigen::VectorXd::Zero(m_views);
    if (!any_valid) return weights;
    if (mode == AttentionMode::raw_sum) {
        for (int m = 0; m < m_views; ++m)
            if (features.valid[m]) weights[m] = logits[m];
        return weights;
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int m = 0; m < m_views; ++m)
        if (features.valid[m] && logits[m] > max_logit) max_logit = logits[m];
    double total = 0.0;
    for (int m = 0; m < m_views; ++m) {
        if (!features.valid[m]) continue;
        weights[m] = std::exp(logits[m] - max_logit);
        total += weights[m];
    }
    weights /= total;
    return weights;
}

inline Eigen::VectorXd aggregate(const Eigen::VectorXd& weights, const ViewFeatureSet& features) {
    if (weights.size() != features.views())
        throw DimensionMismatch("aggregate: weight count differs from view count");
    return features.features.transpose() * weights;
}

// Componentwise population mean/variance over all M views; invalid views
// participate with their zero features.
inline ViewStats mean_variance(const ViewFeatureSet& features) {
    const double m_views = static_cast<double>(features.views());
    ViewStats stats;
    stats.mean = features.features.colwise().sum() / m_views;
    stats.variance =
        (features.features.rowwise() - stats.mean.transpose()).array().square().colwise().sum() /
        m_views;
    return stats;
}

// Whole-prior integration: per vertex, extract -> score(Q_l) -> aggregate.
inline Eigen::MatrixXd integrate_prior(const GeometryPrior& prior, std::span<const Camera> cameras,
                                       std::span<const FeatureMap> maps, const AttentionParams& params,
                                       AttentionMode mode = AttentionMode::softmax) {
    prior.validate();
    params.validate();
    if (prior.dim() != params.dim())
        throw DimensionMismatch("integrate_prior: prior embedding dimension differs from params");
    const int count = prior.count();
    Eigen::MatrixXd out(count, prior.dim());
    for (int l = 0; l < count; ++l) {
        const ViewFeatureSet set = extract_pixel_aligned(prior.positions[l], cameras, maps);
        const Eigen::VectorXd w = attention_scores(prior.queries.row(l).cast<double>(), set, params, mode);
        out.row(l) = aggregate(w, set).transpose();
    }
    return out;
}

// Seeded unit-Gaussian query embeddings, the stand-in for learned Q_l.
inline Eigen::MatrixXf make_seeded_queries(int count, int dim, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXf q(count, dim);
    for (int l = 0; l < count; ++l)
        for (int c = 0; c < dim; ++c) q(l, c) = static_cast<float>(rng.normal());
    return q;
}

}  // namespace gpnerf
