#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gpnerf/feature_integration.hpp"
#include "gpnerf/sparse_volume.hpp"

namespace gpnerf {

enum class Activation : std::uint32_t { none = 0, relu = 1, sigmoid = 2 };

struct MlpLayer {
    Eigen::MatrixXf weight;  // out x in
    Eigen::VectorXf bias;    // out
    Activation act = Activation::none;
};

struct MlpWeights {
    std::vector<MlpLayer> layers;

    int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
    int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }

    void validate() const {
        if (layers.empty()) throw InconsistentDims("mlp: no layers");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const MlpLayer& l = layers[i];
            if (l.weight.rows() != l.bias.size())
                throw InconsistentDims("mlp: bias length differs from weight rows");
            if (i > 0 && layers[i - 1].weight.rows() != l.weight.cols())
                throw InconsistentDims("mlp: adjacent layer dimensions do not chain");
        }
    }
};

template <typename Real>
inline Real apply_activation(Activation act, Real x) {
    switch (act) {
        case Activation::relu: return x > Real(0) ? x : Real(0);
        case Activation::sigmoid: return Real(1) / (Real(1) + std::exp(-x));
        default: return x;
    }
}

// Sequential affine + activation in 64-bit; the checked, single-input entry
// point. Batched float evaluation for rendering lives in MlpEval below.
inline Eigen::VectorXd mlp_forward(const MlpWeights& weights, const Eigen::VectorXd& input) {
    weights.validate();
    if (input.size() != weights.input_dim())
        throw DimensionMismatch("mlp_forward: input length differs from first layer width");
    Eigen::VectorXd x = input;
    for (const MlpLayer& layer : weights.layers) {
        Eigen::VectorXd z = layer.weight.cast<double>() * x + layer.bias.cast<double>();
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = apply_activation(layer.act, z[i]);
        x = std::move(z);
    }
    return x;
}

// Batched evaluator: rows are samples. Weights are cached once in the target
// precision so render loops do not re-cast per call.
template <typename Real>
struct MlpEval {
    using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
    using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

    std::vector<Mat> weight_t;  // in x out, pre-transposed
    std::vector<RowVec> bias;
    std::vector<Activation> acts;

    MlpEval() = default;
    explicit MlpEval(const MlpWeights& w) {
        w.validate();
        for (const MlpLayer& layer : w.layers) {
            weight_t.push_back(layer.weight.transpose().template cast<Real>());
            bias.push_back(layer.bias.transpose().template cast<Real>());
            acts.push_back(layer.act);
        }
    }

    int input_dim() const { return weight_t.empty() ? 0 : static_cast<int>(weight_t.front().rows()); }
    int output_dim() const { return weight_t.empty() ? 0 : static_cast<int>(weight_t.back().cols()); }

    Mat forward(Mat x) const {
        for (std::size_t i = 0; i < weight_t.size(); ++i) {
            Mat z = x * weight_t[i];
            z.rowwise() += bias[i];
            if (acts[i] == Activation::relu)
                z = z.cwiseMax(Real(0));
            else if (acts[i] == Activation::sigmoid)
                z = ((-z.array()).exp() + Real(1)).inverse();
            x = std::move(z);
        }
        return x;
    }
};

// Opacity head: input [geometry feature | mean | variance], relu output.
inline double density_head(const Eigen::VectorXd& geom_feature, const ViewStats& stats,
                           const MlpWeights& weights) {
    const Eigen::Index d = geom_feature.size();
    if (stats.mean.size() != d || stats.variance.size() != d)
        throw DimensionMismatch("density_head: feature and stats dimensions differ");
    if (weights.input_dim() != 3 * d)
        throw DimensionMismatch("density_head: network expects 3d input");
    if (weights.output_dim() != 1 || weights.layers.back().act != Activation::relu)
        throw InconsistentDims("density_head: final layer must be a relu scalar");
    Eigen::VectorXd input(3 * d);
    input << geom_feature, stats.mean, stats.variance;
    return mlp_forward(weights, input)[0];
}

// Color head: input [f_1 | ... | f_M | mean | variance], sigmoid output.
inline Vec3 appearance_head(const ViewFeatureSet& view_features, const ViewStats& stats,
                            const MlpWeights& weights) {
    const Eigen::Index d = view_features.dim();
    const Eigen::Index m = view_features.views();
    if (stats.mean.size() != d || stats.variance.size() != d)
        throw DimensionMismatch("appearance_head: feature and stats dimensions differ");
    if (weights.input_dim() != (m + 2) * d)
        throw DimensionMismatch("appearance_head: network expects (M+2)d input");
    if (weights.output_dim() != 3 || weights.layers.back().act != Activation::sigmoid)
        throw InconsistentDims("appearance_head: final layer must be a sigmoid RGB triple");
    Eigen::VectorXd input((m + 2) * d);
    for (Eigen::Index v = 0; v < m; ++v) input.segment(v * d, d) = view_features.features.row(v);
    input.segment(m * d, d) = stats.mean;
    input.segment((m + 1) * d, d) = stats.variance;
    const Eigen::VectorXd out = mlp_forward(weights, input);
    return Vec3(out[0], out[1], out[2]);
}

// Every learnable symbol of the pipeline in one container. All numerics are
// float, matching the on-disk 32-bit storage, so save/load is bit-exact.
struct WeightBundle {
    std::uint32_t version = 1;
    int feature_dim = 32;  // d
    int view_count = 3;    // M
    AttentionParams attention;
    Eigen::MatrixXf queries;                   // L x d
    std::vector<DensifyKernel> densify_kernels;  // one kernel per round
    MlpWeights density_mlp;
    MlpWeights appearance_mlp;

    int vertex_count() const { return static_cast<int>(queries.rows()); }

    void validate() const {
        attention.validate();
        if (attention.dim() != feature_dim)
            throw InconsistentDims("bundle: attention dimension differs from d");
        if (attention.views() != view_count)
            throw InconsistentDims("bundle: attention view count differs from M");
        if (queries.cols() != feature_dim)
            throw InconsistentDims("bundle: query table width differs from d");
        density_mlp.validate();
        appearance_mlp.validate();
        if (density_mlp.input_dim() != 3 * feature_dim || density_mlp.output_dim() != 1)
            throw InconsistentDims("bundle: density head must map 3d -> 1");
        if (density_mlp.layers.back().act != Activation::relu)
            throw InconsistentDims("bundle: density head must end in relu");
        if (appearance_mlp.input_dim() != (view_count + 2) * feature_dim ||
            appearance_mlp.output_dim() != 3)
            throw InconsistentDims("bundle: appearance head must map (M+2)d -> 3");
        if (appearance_mlp.layers.back().act != Activation::sigmoid)
            throw InconsistentDims("bundle: appearance head must end in sigmoid");
    }
};

namespace detail {

inline void write_bytes(std::ostream& os, const void* data, std::size_t n) {
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!os) throw IoError("weight file: write failed");
}
inline void write_u32(std::ostream& os, std::uint32_t v) { write_bytes(os, &v, 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_bytes(os, &v, 8); }
inline void write_f32s(std::ostream& os, const float* data, std::size_t n) {
    write_bytes(os, data, n * sizeof(float));
}

inline void read_bytes(std::istream& is, void* data, std::size_t n) {
    is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw TruncatedFile("weight file: unexpected end of file");
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v;
    read_bytes(is, &v, 4);
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v;
    read_bytes(is, &v, 8);
    return v;
}
inline void read_f32s(std::istream& is, float* data, std::size_t n) {
    read_bytes(is, data, n * sizeof(float));
}

// matrices are stored row-major
inline void write_matrix(std::ostream& os, const Eigen::MatrixXf& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const float v = m(r, c);
            write_f32s(os, &v, 1);
        }
}
inline void read_matrix(std::istream& is, Eigen::MatrixXf& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            float v;
            read_f32s(is, &v, 1);
            m(r, c) = v;
        }
}

}  // namespace detail

inline constexpr char kWeightMagic[4] = {'G', 'P', 'N', 'W'};
inline constexpr std::uint32_t kWeightVersion = 1;

// Layout: magic "GPNW", u32 version, u32 d, u32 M, u32 L, then five sections
// in fixed order (attention, queries, densify kernels, density MLP,
// appearance MLP). Every section starts with a u64 count of its 32-bit reals;
// MLP sections carry u32 shape descriptors (layer count, then in/out/act per
// layer) between the count and the reals. Little-endian throughout.
inline void save_bundle(const WeightBundle& bundle, const std::filesystem::path& path) {
    bundle.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("weight file: cannot open for writing: " + path.string());
    using namespace detail;
    write_bytes(os, kWeightMagic, 4);
    write_u32(os, bundle.version);
    const auto d = static_cast<std::uint32_t>(bundle.feature_dim);
    const auto m = static_cast<std::uint32_t>(bundle.view_count);
    const auto l = static_cast<std::uint32_t>(bundle.vertex_count());
    write_u32(os, d);
    write_u32(os, m);
    write_u32(os, l);

    // attention: W1, b1, then W2m, b2m per view
    write_u64(os, std::uint64_t(d) * d + d + std::uint64_t(m) * (std::uint64_t(d) * d + d));
    write_matrix(os, bundle.attention.w_query);
    write_f32s(os, bundle.attention.b_query.data(), d);
    for (std::uint32_t v = 0; v < m; ++v) {
        write_matrix(os, bundle.attention.w_key[v]);
        write_f32s(os, bundle.attention.b_key[v].data(), d);
    }

    // queries
    write_u64(os, std::uint64_t(l) * d);
    write_matrix(os, bundle.queries);

    // densify kernels, one per round
    write_u64(os, std::uint64_t(27) * bundle.densify_kernels.size());
    for (const DensifyKernel& k : bundle.densify_kernels)
        for (double w : k) {
            const float f = static_cast<float>(w);
            write_f32s(os, &f, 1);
        }

    for (const MlpWeights* mlp : {&bundle.density_mlp, &bundle.appearance_mlp}) {
        std::uint64_t reals = 0;
        for (const MlpLayer& layer : mlp->layers)
            reals += std::uint64_t(layer.weight.size()) + layer.bias.size();
        write_u64(os, reals);
        write_u32(os, static_cast<std::uint32_t>(mlp->layers.size()));
        for (const MlpLayer& layer : mlp->layers) {
            write_u32(os, static_cast<std::uint32_t>(layer.weight.cols()));
            write_u32(os, static_cast<std::uint32_t>(layer.weight.rows()));
            write_u32(os, static_cast<std::uint32_t>(layer.act));
        }
        for (const MlpLayer& layer : mlp->layers) {
            write_matrix(os, layer.weight);
            write_f32s(os, layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
        }
    }
    os.flush();
    if (!os) throw IoError("weight file: flush failed");
}

inline WeightBundle load_bundle(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("weight file: cannot open: " + path.string());
    using namespace detail;
    char magic[4];
    read_bytes(is, magic, 4);
    if (std::memcmp(magic, kWeightMagic, 4) != 0)
        throw BadMagic("weight file: bad magic bytes");
    WeightBundle bundle;
    bundle.version = read_u32(is);
    if (bundle.version != kWeightVersion)
        throw UnsupportedVersion("weight file: unsupported version " + std::to_string(bundle.version));
    const std::uint32_t d = read_u32(is);
    const std::uint32_t m = read_u32(is);
    const std::uint32_t l = read_u32(is);
    if (d == 0 || m == 0) throw InconsistentDims("weight file: d and M must be positive");
    bundle.feature_dim = static_cast<int>(d);
    bundle.view_count = static_cast<int>(m);

    const std::uint64_t attn_expected =
        std::uint64_t(d) * d + d + std::uint64_t(m) * (std::uint64_t(d) * d + d);
    if (read_u64(is) != attn_expected)
        throw InconsistentDims("weight file: attention section size differs from header dims");
    bundle.attention.w_query.resize(d, d);
    read_matrix(is, bundle.attention.w_query);
    bundle.attention.b_query.resize(d);
    read_f32s(is, bundle.attention.b_query.data(), d);
    bundle.attention.w_key.resize(m);
    bundle.attention.b_key.resize(m);
    for (std::uint32_t v = 0; v < m; ++v) {
        bundle.attention.w_key[v].resize(d, d);
        read_matrix(is, bundle.attention.w_key[v]);
        bundle.attention.b_key[v].resize(d);
        read_f32s(is, bundle.attention.b_key[v].data(), d);
    }

    if (read_u64(is) != std::uint64_t(l) * d)
        throw InconsistentDims("weight file: query section size differs from header dims");
    bundle.queries.resize(l, d);
    read_matrix(is, bundle.queries);

    const std::uint64_t kernel_reals = read_u64(is);
    if (kernel_reals % 27 != 0)
        throw InconsistentDims("weight file: densify section must hold 27 reals per round");
    bundle.densify_kernels.resize(kernel_reals / 27);
    for (DensifyKernel& k : bundle.densify_kernels)
        for (double& w : k) {
            float f;
            read_f32s(is, &f, 1);
            w = f;
        }

    for (MlpWeights* mlp : {&bundle.density_mlp, &bundle.appearance_mlp}) {
        const std::uint64_t reals = read_u64(is);
        const std::uint32_t n_layers = read_u32(is);
        if (n_layers == 0 || n_layers > 64)
            throw InconsistentDims("weight file: implausible layer count");
        std::uint64_t expect = 0;
        mlp->layers.resize(n_layers);
        for (std::uint32_t i = 0; i < n_layers; ++i) {
            const std::uint32_t in = read_u32(is);
            const std::uint32_t out = read_u32(is);
            const std::uint32_t act = read_u32(is);
            if (act > 2) throw InconsistentDims("weight file: unknown activation tag");
            mlp->layers[i].weight.resize(out, in);
            mlp->layers[i].bias.resize(out);
            mlp->layers[i].act = static_cast<Activation>(act);
            expect += std::uint64_t(in) * out + out;
        }
        if (expect != reals)
            throw InconsistentDims("weight file: MLP section size differs from its shape descriptors");
        for (std::uint32_t i = 0; i < n_layers; ++i) {
            read_matrix(is, mlp->layers[i].weight);
            read_f32s(is, mlp->layers[i].bias.data(), mlp->layers[i].bias.size());
        }
    }
    bundle.validate();
    return bundle;
}

// He-style seeded initialization (gain sqrt(2/in)), zero hidden biases.
inline MlpWeights make_seeded_mlp(const std::vector<int>& widths,
                                  const std::vector<Activation>& acts, Rng& rng,
                                  float final_bias = 0.0f) {
    MlpWeights mlp;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        MlpLayer layer;
        const int in = widths[i], out = widths[i + 1];
        const double scale = std::sqrt(2.0 / in);
        layer.weight.resize(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) layer.weight(r, c) = static_cast<float>(rng.normal() * scale);
        layer.bias = Eigen::VectorXf::Zero(out);
        layer.act = acts[i];
        mlp.layers.push_back(std::move(layer));
    }
    mlp.layers.back().bias.setConstant(final_bias);
    return mlp;
}

// Default randomly initialized bundle: hidden widths 256/256 (density) and
// 256/128 (appearance), two uniform-box densify rounds.
inline WeightBundle make_seeded_bundle(int d, int views, int vertex_count, std::uint64_t seed) {
    Rng rng(seed);
    WeightBundle b;
    b.feature_dim = d;
    b.view_count = views;

    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d));
    auto random_matrix = [&](int rows, int cols, double scale) {
        Eigen::MatrixXf m(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) m(r, c) = static_cast<float>(rng.normal() * scale);
        return m;
    };
    b.attention.w_query = random_matrix(d, d, attn_scale);
    b.attention.b_query = random_matrix(d, 1, 0.1).col(0);
    for (int m = 0; m < views; ++m) {
        b.attention.w_key.push_back(random_matrix(d, d, attn_scale));
        b.attention.b_key.push_back(random_matrix(d, 1, 0.1).col(0));
    }

    b.queries = random_matrix(vertex_count, d, 1.0);
    b.densify_kernels = {uniform_box_kernel(), uniform_box_kernel()};

    using A = Activation;
    // slightly negative final density bias: keeps the sigma > 0 set of an
    // untrained bundle clearly below half of the stage-1 survivors
    b.density_mlp = make_seeded_mlp({3 * d, 256, 256, 1}, {A::relu, A::relu, A::relu}, rng, -0.2f);
    b.appearance_mlp =
        make_seeded_mlp({(views + 2) * d, 256, 128, 3}, {A::relu, A::relu, A::sigmoid}, rng);
    return b;
}

}  // namespace gpnerf
