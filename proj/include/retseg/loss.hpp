#pragma once

#include "retseg/core.hpp"
#include "retseg/distance.hpp"
#include "retseg/embed.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <random>
#include <vector>

namespace retseg {

/// Anchors plus a shared pool of head inputs drawn from two non-anchor frames.
/// positives[a] / negatives[a] list pool rows whose label agrees / disagrees
/// with anchor a.
template <typename Scalar = double>
struct TripletBatch {
    RowMatrix<Scalar> anchors;
    std::vector<std::int32_t> anchor_labels;
    RowMatrix<Scalar> pool;
    std::vector<std::int32_t> pool_labels;
    std::vector<Index> pool_frames;
    std::vector<std::vector<Index>> positives;
    std::vector<std::vector<Index>> negatives;
    Index anchor_frame = -1;

    Index anchor_count() const { return anchors.rows(); }

    /// Labels partition the pool per anchor and no pool row comes from the
    /// anchor frame.
    bool consistent() const
    {
        if (static_cast<Index>(anchor_labels.size()) != anchors.rows()) return false;
        if (static_cast<Index>(positives.size()) != anchors.rows() || negatives.size() != positives.size())
            return false;
        for (Index f : pool_frames)
            if (f == anchor_frame) return false;
        for (Index a = 0; a < anchors.rows(); ++a) {
            for (Index p : positives[a])
                if (pool_labels[p] != anchor_labels[a]) return false;
            for (Index n : negatives[a])
                if (pool_labels[n] == anchor_labels[a]) return false;
            if (positives[a].size() + negatives[a].size() != pool_labels.size()) return false;
        }
        return true;
    }
};

/// Rebuilds positives/negatives from labels (every pool row lands in exactly
/// one of the two lists of each anchor).
template <typename Scalar>
void partition_pools(TripletBatch<Scalar>& batch)
{
    const Index n_anchor = batch.anchors.rows();
    batch.positives.assign(n_anchor, {});
    batch.negatives.assign(n_anchor, {});
    for (Index a = 0; a < n_anchor; ++a) {
        for (Index p = 0; p < static_cast<Index>(batch.pool_labels.size()); ++p) {
            (batch.pool_labels[p] == batch.anchor_labels[a] ? batch.positives[a] : batch.negatives[a]).push_back(p);
        }
    }
}

template <typename Scalar = double>
struct AnchorTerm {
    Scalar value = 0;       // hinged
    Scalar pre_hinge = 0;
    Scalar min_positive = 0;
    Scalar min_negative = 0;
    Index positive = -1;    // position within positives[a]
    Index negative = -1;    // position within negatives[a]
    bool skipped = false;
};

template <typename Scalar = double>
struct LossReport {
    Scalar total = 0;
    std::vector<AnchorTerm<Scalar>> per_anchor;

    Index skipped_count() const
    {
        return std::count_if(per_anchor.begin(), per_anchor.end(), [](const auto& t) { return t.skipped; });
    }
};

namespace detail {

// Smallest squared distance from `query` to the listed rows; ties keep the
// earliest list position.
template <typename Scalar>
std::pair<Scalar, Index> nearest_in(const RowMatrix<Scalar>& rows, const std::vector<Index>& members,
                                    const Scalar* query)
{
    Scalar best = std::numeric_limits<Scalar>::infinity();
    Index best_pos = -1;
    for (Index i = 0; i < static_cast<Index>(members.size()); ++i) {
        const Scalar d = squared_distance(query, rows.row(members[i]).data(), rows.cols());
        if (d < best) {
            best = d;
            best_pos = i;
        }
    }
    return {best, best_pos};
}

template <typename Scalar>
void require_finite(const RowMatrix<Scalar>& m)
{
    if (!m.allFinite()) throw Error("non-finite embedding");
}

template <typename Scalar>
LossReport<Scalar> evaluate_terms(const TripletBatch<Scalar>& batch, const RowMatrix<Scalar>& anchor_emb,
                                  const RowMatrix<Scalar>& pool_emb, Scalar alpha)
{
    if (alpha < Scalar(0)) throw Error("slack alpha must be non-negative");
    if (batch.positives.size() != static_cast<std::size_t>(batch.anchors.rows()) ||
        batch.negatives.size() != batch.positives.size())
        throw Error("triplet batch pools do not match anchor count");
    LossReport<Scalar> report;
    report.per_anchor.resize(static_cast<std::size_t>(batch.anchors.rows()));
    for (Index a = 0; a < batch.anchors.rows(); ++a) {
        auto& term = report.per_anchor[a];
        if (batch.negatives[a].empty()) throw Error("empty negative pool for anchor " + std::to_string(a));
        if (batch.positives[a].empty()) {
            term.skipped = true;
            continue;
        }
        const Scalar* q = anchor_emb.row(a).data();
        std::tie(term.min_positive, term.positive) = nearest_in(pool_emb, batch.positives[a], q);
        std::tie(term.min_negative, term.negative) = nearest_in(pool_emb, batch.negatives[a], q);
        term.pre_hinge = term.min_positive - term.min_negative + alpha;
        term.value = std::max(Scalar(0), term.pre_hinge);
    }
    // summed in anchor order
    for (const auto& term : report.per_anchor)
        if (!term.skipped) report.total += term.value;
    return report;
}

}  // namespace detail

/// Per anchor: max(0, min_P |f(a)-f(p)|^2 - min_N |f(a)-f(n)|^2 + alpha).
/// Anchors without positives are skipped and flagged.
template <typename Scalar>
LossReport<Scalar> proposed_loss(const HeadParams<Scalar>& params, const TripletBatch<Scalar>& batch, Scalar alpha)
{
    const RowMatrix<Scalar> anchor_emb = head_apply(params, batch.anchors).output;
    const RowMatrix<Scalar> pool_emb = head_apply(params, batch.pool).output;
    detail::require_finite(anchor_emb);
    detail::require_finite(pool_emb);
    return detail::evaluate_terms(batch, anchor_emb, pool_emb, alpha);
}

template <typename Scalar = double>
struct Triplet {
    Vector<Scalar> anchor;
    Vector<Scalar> positive;
    Vector<Scalar> negative;
};

template <typename Scalar>
Scalar standard_triplet_loss(const HeadParams<Scalar>& params, const std::vector<Triplet<Scalar>>& triplets,
                             Scalar alpha)
{
    if (alpha < Scalar(0)) throw Error("slack alpha must be non-negative");
    Scalar total = 0;
    for (const auto& t : triplets) {
        RowMatrix<Scalar> rows(3, t.anchor.size());
        rows.row(0) = t.anchor.transpose();
        rows.row(1) = t.positive.transpose();
        rows.row(2) = t.negative.transpose();
        const RowMatrix<Scalar> emb = head_apply(params, rows).output;
        detail::require_finite(emb);
        const Scalar dp = squared_distance(emb.row(0).data(), emb.row(1).data(), emb.cols());
        const Scalar dn = squared_distance(emb.row(0).data(), emb.row(2).data(), emb.cols());
        total += std::max(Scalar(0), dp - dn + alpha);
    }
    return total;
}

template <typename Scalar = double>
struct LabeledPair {
    Vector<Scalar> first;
    Vector<Scalar> second;
    bool same = false;  // y = 1
};

/// sum y d^2 + (1 - y) max(alpha - d, 0)^2 with d the (unsquared) distance.
template <typename Scalar>
Scalar contrastive_loss(const HeadParams<Scalar>& params, const std::vector<LabeledPair<Scalar>>& pairs,
                        Scalar alpha)
{
    if (alpha < Scalar(0)) throw Error("slack alpha must be non-negative");
    Scalar total = 0;
    for (const auto& p : pairs) {
        RowMatrix<Scalar> rows(2, p.first.size());
        rows.row(0) = p.first.transpose();
        rows.row(1) = p.second.transpose();
        const RowMatrix<Scalar> emb = head_apply(params, rows).output;
        detail::require_finite(emb);
        const Scalar d2 = squared_distance(emb.row(0).data(), emb.row(1).data(), emb.cols());
        if (p.same) {
            total += d2;
        } else {
            const Scalar gap = std::max(alpha - std::sqrt(d2), Scalar(0));
            total += gap * gap;
        }
    }
    return total;
}

/// Gradient of sum_i <grad_output_i, head(x_i)> with respect to the params.
template <typename Scalar>
HeadParams<Scalar> head_backward(const HeadParams<Scalar>& params, const RowMatrix<Scalar>& inputs,
                                 const HeadForward<Scalar>& forward, const RowMatrix<Scalar>& grad_output)
{
    HeadParams<Scalar> g;
    g.activation = params.activation;
    g.w2 = grad_output.transpose() * forward.hidden;
    g.b2 = grad_output.colwise().sum().transpose();
    RowMatrix<Scalar> grad_hidden = grad_output * params.w2;
    const Activation act = params.activation;
    grad_hidden.array() *= forward.hidden.unaryExpr([act](Scalar a) { return activation_slope(act, a); }).array();
    g.w1 = grad_hidden.transpose() * inputs;
    g.b1 = grad_hidden.colwise().sum().transpose();
    return g;
}

template <typename Scalar = double>
struct LossAndGradient {
    LossReport<Scalar> report;
    HeadParams<Scalar> gradient;
};

/// Subgradient that holds each anchor's argmin pool members fixed. Terms whose
/// pre-hinge value is <= 0 contribute nothing.
template <typename Scalar>
LossAndGradient<Scalar> proposed_loss_and_gradient(const HeadParams<Scalar>& params, const TripletBatch<Scalar>& batch,
                                                   Scalar alpha)
{
    const HeadForward<Scalar> anchor_fwd = head_apply(params, batch.anchors);
    const HeadForward<Scalar> pool_fwd = head_apply(params, batch.pool);
    detail::require_finite(anchor_fwd.output);
    detail::require_finite(pool_fwd.output);
    LossAndGradient<Scalar> out;
    out.report = detail::evaluate_terms(batch, anchor_fwd.output, pool_fwd.output, alpha);

    RowMatrix<Scalar> grad_anchor = RowMatrix<Scalar>::Zero(anchor_fwd.output.rows(), anchor_fwd.output.cols());
    RowMatrix<Scalar> grad_pool = RowMatrix<Scalar>::Zero(pool_fwd.output.rows(), pool_fwd.output.cols());
    for (Index a = 0; a < batch.anchors.rows(); ++a) {
        const auto& term = out.report.per_anchor[a];
        if (term.skipped || !(term.pre_hinge > Scalar(0))) continue;
        const Index p = batch.positives[a][term.positive];
        const Index n = batch.negatives[a][term.negative];
        const auto ea = anchor_fwd.output.row(a);
        const auto ep = pool_fwd.output.row(p);
        const auto en = pool_fwd.output.row(n);
        // d/d ea (|ea-ep|^2 - |ea-en|^2) = 2(en - ep)
        grad_anchor.row(a) += Scalar(2) * (en - ep);
        grad_pool.row(p) += Scalar(-2) * (ea - ep);
        grad_pool.row(n) += Scalar(2) * (ea - en);
    }
    HeadParams<Scalar> ga = head_backward(params, batch.anchors, anchor_fwd, grad_anchor);
    const HeadParams<Scalar> gp = head_backward(params, batch.pool, pool_fwd, grad_pool);
    ga.w1 += gp.w1;
    ga.b1 += gp.b1;
    ga.w2 += gp.w2;
    ga.b2 += gp.b2;
    out.gradient = std::move(ga);
    return out;
}

template <typename Scalar>
HeadParams<Scalar> loss_gradient(const HeadParams<Scalar>& params, const TripletBatch<Scalar>& batch, Scalar alpha)
{
    return proposed_loss_and_gradient(params, batch, alpha).gradient;
}

/// Per-frame head inputs and cell labels of a fully annotated sequence.
template <typename Scalar = double>
struct LabeledGrids {
    std::vector<AugmentedFeatureGrid<Scalar>> features;
    std::vector<LabelGrid> labels;

    Index frame_count() const { return static_cast<Index>(features.size()); }
};

template <typename Scalar = double>
LabeledGrids<Scalar> prepare_labeled_grids(const VideoTensor& video, const std::vector<LabelMask>& masks,
                                           const EmbedConfig& config)
{
    if (static_cast<Index>(masks.size()) != video.frame_count()) throw Error("mask count does not match frame count");
    LabeledGrids<Scalar> out;
    out.features = augment_video<Scalar>(video, config);
    for (const auto& m : masks) {
        if (m.rows() != video.height() || m.cols() != video.width()) throw Error("mask size does not match video");
        out.labels.push_back(cell_labels(m, config.stride));
    }
    return out;
}

/// Whether a frame holds at least one foreground and one background cell.
inline bool has_foreground_and_background(const LabelGrid& labels)
{
    return (labels == 0).any() && (labels != 0).any();
}

/// Draws three distinct frames, uses the first as anchor frame and the cells of
/// the other two as the shared pool. Anchors are drawn without replacement
/// and truncated to the number of cells.
template <typename Scalar, typename Rng>
TripletBatch<Scalar> sample_training_batch(const LabeledGrids<Scalar>& seq, Index anchor_count, Rng& rng)
{
    const Index n = seq.frame_count();
    if (n < 3) throw Error("training needs at least 3 frames, got " + std::to_string(n));
    if (anchor_count <= 0) throw Error("anchor count must be positive");
    std::array<Index, 3> frames{};
    for (int i = 0; i < 3; ++i) {
        Index f;
        do {
            f = std::uniform_int_distribution<Index>(0, n - 1)(rng);
        } while (std::find(frames.begin(), frames.begin() + i, f) != frames.begin() + i);
        frames[i] = f;
    }
    const auto& anchor_grid = seq.features[frames[0]];
    const LabelGrid& anchor_labels = seq.labels[frames[0]];
    if (!has_foreground_and_background(anchor_labels))
        throw Error("anchor frame " + std::to_string(frames[0]) + " lacks a foreground or background cell");

    TripletBatch<Scalar> batch;
    batch.anchor_frame = frames[0];
    std::vector<Index> cells(static_cast<std::size_t>(anchor_grid.cells()));
    for (Index i = 0; i < anchor_grid.cells(); ++i) cells[i] = i;
    std::shuffle(cells.begin(), cells.end(), rng);
    cells.resize(static_cast<std::size_t>(std::min(anchor_count, anchor_grid.cells())));
    batch.anchors.resize(static_cast<Index>(cells.size()), anchor_grid.dim());
    for (Index i = 0; i < static_cast<Index>(cells.size()); ++i) {
        batch.anchors.row(i) = anchor_grid.values.row(cells[i]);
        batch.anchor_labels.push_back(anchor_labels.data()[cells[i]]);
    }

    const Index pool_rows = seq.features[frames[1]].cells() + seq.features[frames[2]].cells();
    batch.pool.resize(pool_rows, anchor_grid.dim());
    Index o = 0;
    for (int k = 1; k < 3; ++k) {
        const auto& grid = seq.features[frames[k]];
        const LabelGrid& labels = seq.labels[frames[k]];
        for (Index c = 0; c < grid.cells(); ++c) {
            batch.pool.row(o++) = grid.values.row(c);
            batch.pool_labels.push_back(labels.data()[c]);
            batch.pool_frames.push_back(frames[k]);
        }
    }
    partition_pools(batch);
    return batch;
}

}  // namespace retseg
