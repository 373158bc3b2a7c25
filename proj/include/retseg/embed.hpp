#pragma once

#include "retseg/core.hpp"
#include "retseg/detail/binary.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

namespace retseg {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Number of hand-crafted per-cell base features: mean RGB, std RGB,
/// mean horizontal and vertical intensity gradient.
inline constexpr Index kBaseFeatureDim = 8;
/// Spatio-temporal channels appended before the head: column, row, frame.
inline constexpr Index kSpatioTemporalDim = 3;

struct BaseFeatureTag {};
struct AugmentedFeatureTag {};
struct EmbeddingTag {};

/// Per-frame stride grid of vectors, one row of `values` per cell in
/// row-major cell order. The tag keeps base features, augmented features and
/// embeddings from being mixed up.
template <typename Scalar, typename Tag>
struct CellGrid {
    Index rows = 0;
    Index cols = 0;
    Index stride = 1;
    RowMatrix<Scalar> values;

    Index cells() const { return rows * cols; }
    Index dim() const { return values.cols(); }
    Index cell_index(Index r, Index c) const { return r * cols + c; }
    auto cell(Index r, Index c) { return values.row(r * cols + c); }
    auto cell(Index r, Index c) const { return values.row(r * cols + c); }
};

template <typename Scalar = double>
using FeatureGrid = CellGrid<Scalar, BaseFeatureTag>;
template <typename Scalar = double>
using AugmentedFeatureGrid = CellGrid<Scalar, AugmentedFeatureTag>;
template <typename Scalar = double>
using EmbeddingGrid = CellGrid<Scalar, EmbeddingTag>;

template <typename Scalar = double>
FeatureGrid<Scalar> extract_base_features(const Frame& frame, Index stride)
{
    if (stride <= 0) throw Error("stride must be positive");
    if (stride > frame.height && stride > frame.width) throw Error("stride larger than both image dimensions");
    const GridShape shape = grid_shape(frame.height, frame.width, stride);
    FeatureGrid<Scalar> grid;
    grid.rows = shape.rows;
    grid.cols = shape.cols;
    grid.stride = stride;
    grid.values.resize(shape.cells(), kBaseFeatureDim);
    for (Index gr = 0; gr < shape.rows; ++gr) {
        for (Index gc = 0; gc < shape.cols; ++gc) {
            const Index r0 = gr * stride, r1 = std::min(frame.height, r0 + stride);
            const Index c0 = gc * stride, c1 = std::min(frame.width, c0 + stride);
            Eigen::Array3d sum = Eigen::Array3d::Zero();
            Eigen::Array3d sum_sq = Eigen::Array3d::Zero();
            double grad_x = 0.0, grad_y = 0.0;
            for (Index r = r0; r < r1; ++r) {
                for (Index c = c0; c < c1; ++c) {
                    const Eigen::Array3d px = frame.at(r, c).transpose();
                    sum += px;
                    sum_sq += px * px;
                    // forward differences, zero at the last image row/column
                    const double here = frame.intensity(r, c);
                    grad_x += frame.intensity(r, std::min(c + 1, frame.width - 1)) - here;
                    grad_y += frame.intensity(std::min(r + 1, frame.height - 1), c) - here;
                }
            }
            const double n = static_cast<double>((r1 - r0) * (c1 - c0));
            const Eigen::Array3d mean = sum / n;
            const Eigen::Array3d var = (sum_sq / n - mean * mean).max(0.0);
            auto row = grid.cell(gr, gc);
            for (int ch = 0; ch < 3; ++ch) {
                row(ch) = static_cast<Scalar>(mean(ch));
                row(3 + ch) = static_cast<Scalar>(std::sqrt(var(ch)));
            }
            row(6) = static_cast<Scalar>(grad_x / n);
            row(7) = static_cast<Scalar>(grad_y / n);
        }
    }
    return grid;
}

template <typename Scalar>
AugmentedFeatureGrid<Scalar> augment_spatiotemporal(const FeatureGrid<Scalar>& features, Index frame_index,
                                                    Index frame_count, Scalar lambda_space, Scalar lambda_time)
{
    if (frame_index < 0 || frame_index >= frame_count) throw Error("frame index out of range");
    if (lambda_space < Scalar(0) || lambda_time < Scalar(0)) throw Error("coordinate weights must be non-negative");
    AugmentedFeatureGrid<Scalar> out;
    out.rows = features.rows;
    out.cols = features.cols;
    out.stride = features.stride;
    out.values.resize(features.cells(), features.dim() + kSpatioTemporalDim);
    out.values.leftCols(features.dim()) = features.values;
    const Index base = features.dim();
    auto normalized = [](Index i, Index n) { return n > 1 ? Scalar(i) / Scalar(n - 1) : Scalar(0); };
    const Scalar t = lambda_time * normalized(frame_index, frame_count);
    for (Index r = 0; r < out.rows; ++r) {
        for (Index c = 0; c < out.cols; ++c) {
            auto row = out.cell(r, c);
            row(base) = lambda_space * normalized(c, out.cols);
            row(base + 1) = lambda_space * normalized(r, out.rows);
            row(base + 2) = t;
        }
    }
    return out;
}

enum class Activation : std::uint8_t { Tanh = 0, Identity = 1 };

struct HeadDims {
    Index input = kBaseFeatureDim + kSpatioTemporalDim;
    Index hidden = 64;
    Index output = 128;

    Index parameter_count() const { return input * hidden + hidden + hidden * output + output; }
    bool operator==(const HeadDims&) const = default;
};

/// Two-layer per-cell head: out = W2 * act(W1 * x + b1) + b2. Equivalent to a
/// stack of 1x1 convolutions over the cell grid.
template <typename Scalar = double>
struct HeadParams {
    RowMatrix<Scalar> w1;  // hidden x input
    Vector<Scalar> b1;
    RowMatrix<Scalar> w2;  // output x hidden
    Vector<Scalar> b2;
    Activation activation = Activation::Tanh;

    static HeadParams zeros(const HeadDims& dims, Activation act = Activation::Tanh)
    {
        HeadParams p;
        p.w1 = RowMatrix<Scalar>::Zero(dims.hidden, dims.input);
        p.b1 = Vector<Scalar>::Zero(dims.hidden);
        p.w2 = RowMatrix<Scalar>::Zero(dims.output, dims.hidden);
        p.b2 = Vector<Scalar>::Zero(dims.output);
        p.activation = act;
        return p;
    }

    HeadDims dims() const { return {w1.cols(), w1.rows(), w2.rows()}; }
    Index parameter_count() const { return dims().parameter_count(); }

    bool all_finite() const { return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite(); }

    /// Layer order, row-major within each matrix: W1, b1, W2, b2.
    Vector<Scalar> flatten() const
    {
        Vector<Scalar> flat(parameter_count());
        Index o = 0;
        auto put = [&](const auto& m) {
            for (Index i = 0; i < m.rows(); ++i)
                for (Index j = 0; j < m.cols(); ++j) flat(o++) = m(i, j);
        };
        put(w1);
        put(b1);
        put(w2);
        put(b2);
        return flat;
    }

    static HeadParams unflatten(const HeadDims& dims, const Vector<Scalar>& flat, Activation act = Activation::Tanh)
    {
        if (flat.size() != dims.parameter_count()) throw Error("parameter vector has wrong length");
        HeadParams p = zeros(dims, act);
        Index o = 0;
        auto take = [&](auto& m) {
            for (Index i = 0; i < m.rows(); ++i)
                for (Index j = 0; j < m.cols(); ++j) m(i, j) = flat(o++);
        };
        take(p.w1);
        take(p.b1);
        take(p.w2);
        take(p.b2);
        return p;
    }

    template <typename Other>
    HeadParams<Other> cast() const
    {
        HeadParams<Other> p;
        p.w1 = w1.template cast<Other>();
        p.b1 = b1.template cast<Other>();
        p.w2 = w2.template cast<Other>();
        p.b2 = b2.template cast<Other>();
        p.activation = activation;
        return p;
    }
};

template <typename Scalar>
Scalar activate(Activation act, Scalar z)
{
    return act == Activation::Tanh ? std::tanh(z) : z;
}

/// Derivative expressed through the activated value a = act(z).
template <typename Scalar>
Scalar activation_slope(Activation act, Scalar a)
{
    return act == Activation::Tanh ? Scalar(1) - a * a : Scalar(1);
}

/// Hidden activations and outputs for a batch of input rows; kept for backprop.
template <typename Scalar>
struct HeadForward {
    RowMatrix<Scalar> hidden;  // n x hidden, post-activation
    RowMatrix<Scalar> output;  // n x output
};

template <typename Scalar, typename Derived>
HeadForward<Scalar> head_apply(const HeadParams<Scalar>& params, const Eigen::MatrixBase<Derived>& inputs)
{
    if (inputs.cols() != params.w1.cols())
        throw Error("head input dimension " + std::to_string(inputs.cols()) + " does not match " +
                    std::to_string(params.w1.cols()));
    HeadForward<Scalar> f;
    f.hidden = (inputs * params.w1.transpose()).rowwise() + params.b1.transpose();
    const Activation act = params.activation;
    f.hidden = f.hidden.unaryExpr([act](Scalar z) { return activate(act, z); });
    f.output = (f.hidden * params.w2.transpose()).rowwise() + params.b2.transpose();
    return f;
}

template <typename Scalar>
EmbeddingGrid<Scalar> head_forward(const HeadParams<Scalar>& params, const AugmentedFeatureGrid<Scalar>& grid)
{
    EmbeddingGrid<Scalar> out;
    out.rows = grid.rows;
    out.cols = grid.cols;
    out.stride = grid.stride;
    out.values = head_apply(params, grid.values).output;
    return out;
}

/// Weights ~ N(0, 1/fan_in), biases zero. Deterministic for a given seed.
template <typename Scalar = double>
HeadParams<Scalar> head_init(std::uint64_t seed, const HeadDims& dims, Activation act = Activation::Tanh)
{
    if (dims.input <= 0 || dims.hidden <= 0 || dims.output <= 0) throw Error("head dimensions must be positive");
    HeadParams<Scalar> p = HeadParams<Scalar>::zeros(dims, act);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n1(0.0, 1.0 / std::sqrt(static_cast<double>(dims.input)));
    std::normal_distribution<double> n2(0.0, 1.0 / std::sqrt(static_cast<double>(dims.hidden)));
    for (Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = static_cast<Scalar>(n1(rng));
    for (Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = static_cast<Scalar>(n2(rng));
    return p;
}

struct EmbedConfig {
    Index stride = 8;
    double lambda_space = 1.0;
    double lambda_time = 1.0;
};

template <typename Scalar = double>
std::vector<AugmentedFeatureGrid<Scalar>> augment_video(const VideoTensor& video, const EmbedConfig& config)
{
    require_valid_video(video);
    std::vector<AugmentedFeatureGrid<Scalar>> out;
    out.reserve(video.frames.size());
    for (Index j = 0; j < video.frame_count(); ++j) {
        out.push_back(augment_spatiotemporal(extract_base_features<Scalar>(video.frames[j], config.stride), j,
                                             video.frame_count(), static_cast<Scalar>(config.lambda_space),
                                             static_cast<Scalar>(config.lambda_time)));
    }
    return out;
}

/// Embeddings depend only on (video, params, config); annotations never
/// enter this computation.
template <typename Scalar = double>
std::vector<EmbeddingGrid<Scalar>> embed_video(const VideoTensor& video, const HeadParams<Scalar>& params,
                                               const EmbedConfig& config)
{
    auto augmented = augment_video<Scalar>(video, config);
    std::vector<EmbeddingGrid<Scalar>> out;
    out.reserve(augmented.size());
    for (const auto& grid : augmented) out.push_back(head_forward(params, grid));
    return out;
}

// ---- serialization -------------------------------------------------------

inline constexpr detail::Magic kHeadMagic{'R', 'S', 'G', 'H', 'E', 'A', 'D', '\0'};
inline constexpr detail::Magic kEmbeddingMagic{'R', 'S', 'G', 'E', 'M', 'B', 'D', '\0'};
inline constexpr std::uint32_t kFormatVersion = 1;

/// magic, u32 version, u32 input/hidden/output, u8 activation, then f64
/// parameters in flatten() order.
template <typename Scalar>
void write_head(std::ostream& out, const HeadParams<Scalar>& params)
{
    const HeadDims dims = params.dims();
    detail::write_magic(out, kHeadMagic);
    detail::write_pod<std::uint32_t>(out, kFormatVersion);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dims.input));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dims.hidden));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dims.output));
    detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(params.activation));
    const Vector<Scalar> flat = params.flatten();
    for (Index i = 0; i < flat.size(); ++i) detail::write_pod<double>(out, static_cast<double>(flat(i)));
}

template <typename Scalar = double>
HeadParams<Scalar> read_head(std::istream& in)
{
    detail::expect_magic(in, kHeadMagic, "model");
    if (detail::read_pod<std::uint32_t>(in) != kFormatVersion) throw Error("unsupported model file version");
    HeadDims dims;
    dims.input = detail::read_pod<std::uint32_t>(in);
    dims.hidden = detail::read_pod<std::uint32_t>(in);
    dims.output = detail::read_pod<std::uint32_t>(in);
    const auto act = detail::read_pod<std::uint8_t>(in);
    if (act > 1) throw Error("unknown activation in model file");
    if (dims.input <= 0 || dims.hidden <= 0 || dims.output <= 0 || dims.parameter_count() > (Index{1} << 28))
        throw Error("implausible model dimensions");
    Vector<Scalar> flat(dims.parameter_count());
    for (Index i = 0; i < flat.size(); ++i) flat(i) = static_cast<Scalar>(detail::read_pod<double>(in));
    auto params = HeadParams<Scalar>::unflatten(dims, flat, static_cast<Activation>(act));
    if (!params.all_finite()) throw Error("model file contains non-finite parameters");
    return params;
}

template <typename Scalar>
void save_head(const std::filesystem::path& path, const HeadParams<Scalar>& params)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    write_head(out, params);
    if (!out) throw Error("write failed for " + path.string());
}

template <typename Scalar = double>
HeadParams<Scalar> load_head(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read model " + path.string());
    return read_head<Scalar>(in);
}

/// magic, u32 version, u32 rows, cols, stride, dim, then f64 values per cell.
template <typename Scalar>
void write_embedding(std::ostream& out, const EmbeddingGrid<Scalar>& grid)
{
    detail::write_magic(out, kEmbeddingMagic);
    detail::write_pod<std::uint32_t>(out, kFormatVersion);
    for (Index v : {grid.rows, grid.cols, grid.stride, grid.dim()})
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    for (Index i = 0; i < grid.values.size(); ++i)
        detail::write_pod<double>(out, static_cast<double>(grid.values.data()[i]));
}

template <typename Scalar = double>
EmbeddingGrid<Scalar> read_embedding(std::istream& in)
{
    detail::expect_magic(in, kEmbeddingMagic, "embedding");
    if (detail::read_pod<std::uint32_t>(in) != kFormatVersion) throw Error("unsupported embedding file version");
    EmbeddingGrid<Scalar> grid;
    grid.rows = detail::read_pod<std::uint32_t>(in);
    grid.cols = detail::read_pod<std::uint32_t>(in);
    grid.stride = detail::read_pod<std::uint32_t>(in);
    const Index dim = detail::read_pod<std::uint32_t>(in);
    if (grid.cells() * dim > (Index{1} << 30)) throw Error("implausible embedding dimensions");
    grid.values.resize(grid.cells(), dim);
    for (Index i = 0; i < grid.values.size(); ++i)
        grid.values.data()[i] = static_cast<Scalar>(detail::read_pod<double>(in));
    return grid;
}

}  // namespace retseg
