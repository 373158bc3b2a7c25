#pragma once

#include "retseg/core.hpp"
#include "retseg/detail/binary.hpp"
#include "retseg/distance.hpp"
#include "retseg/embed.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <vector>

namespace retseg {

enum class Provenance : std::uint8_t { User = 0, Adaptation = 1 };

template <typename Scalar = double>
struct ReferenceSample {
    Vector<Scalar> embedding;
    std::int32_t label = 0;
    GridCoord origin;
    Provenance provenance = Provenance::User;
};

/// Reference samples in insertion order; insertion order is the tie-break
/// order of every search. Embeddings are stored contiguously, one row each.
template <typename Scalar = double>
class ReferencePool {
public:
    explicit ReferencePool(Index dim = 0) : dim_(dim) {}

    Index dim() const { return dim_; }
    Index size() const { return static_cast<Index>(labels_.size()); }
    bool empty() const { return labels_.empty(); }

    template <typename Derived>
    void add(const Eigen::DenseBase<Derived>& embedding, std::int32_t label, GridCoord origin, Provenance provenance)
    {
        if (embedding.size() != dim_) throw Error("reference dimension mismatch");
        if (label < 0) throw Error("reference label must be non-negative");
        if (!embedding.derived().allFinite()) throw Error("non-finite reference embedding");
        for (Index i = 0; i < dim_; ++i) data_.push_back(embedding.derived()(i));
        labels_.push_back(label);
        origins_.push_back(origin);
        provenance_.push_back(provenance);
    }

    void add(const ReferenceSample<Scalar>& s) { add(s.embedding, s.label, s.origin, s.provenance); }

    const Scalar* embedding(Index i) const { return data_.data() + i * dim_; }
    Eigen::Map<const RowMatrix<Scalar>> embeddings() const { return {data_.data(), size(), dim_}; }
    std::int32_t label(Index i) const { return labels_[i]; }
    const std::vector<std::int32_t>& labels() const { return labels_; }
    GridCoord origin(Index i) const { return origins_[i]; }
    Provenance provenance(Index i) const { return provenance_[i]; }

    ReferenceSample<Scalar> sample(Index i) const
    {
        ReferenceSample<Scalar> s;
        s.embedding = Eigen::Map<const Vector<Scalar>>(embedding(i), dim_);
        s.label = labels_[i];
        s.origin = origins_[i];
        s.provenance = provenance_[i];
        return s;
    }

    bool has_label(std::int32_t l) const { return std::find(labels_.begin(), labels_.end(), l) != labels_.end(); }
    std::int32_t max_label() const { return labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end()); }
    Index count(Provenance p) const { return std::count(provenance_.begin(), provenance_.end(), p); }

    /// Removes the flagged samples, keeping the relative order of the rest.
    void remove_if_flagged(const std::vector<bool>& flagged)
    {
        Index w = 0;
        for (Index i = 0; i < size(); ++i) {
            if (flagged[i]) continue;
            if (w != i) {
                std::copy_n(data_.begin() + i * dim_, dim_, data_.begin() + w * dim_);
                labels_[w] = labels_[i];
                origins_[w] = origins_[i];
                provenance_[w] = provenance_[i];
            }
            ++w;
        }
        data_.resize(static_cast<std::size_t>(w * dim_));
        labels_.resize(w);
        origins_.resize(w);
        provenance_.resize(w);
    }

private:
    Index dim_;
    std::vector<Scalar> data_;
    std::vector<std::int32_t> labels_;
    std::vector<GridCoord> origins_;
    std::vector<Provenance> provenance_;
};

template <typename Scalar = double>
struct Neighbor {
    Index index = 0;
    Scalar distance = 0;

    bool operator==(const Neighbor&) const = default;
    /// Ascending by (distance, pool index).
    friend bool operator<(const Neighbor& a, const Neighbor& b)
    {
        return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
    }
};

template <typename Scalar = double>
using NeighborList = std::vector<Neighbor<Scalar>>;

/// The k nearest pool entries by exhaustive evaluation; the reference every
/// other search path must match exactly.
template <typename Scalar>
NeighborList<Scalar> knn_query(const ReferencePool<Scalar>& pool, const Scalar* query, Index k)
{
    if (pool.empty()) throw Error("empty reference pool");
    if (k < 1) throw Error("k must be at least 1");
    NeighborList<Scalar> all(static_cast<std::size_t>(pool.size()));
    for (Index i = 0; i < pool.size(); ++i) all[i] = {i, squared_distance(query, pool.embedding(i), pool.dim())};
    const auto keep = static_cast<std::ptrdiff_t>(std::min(k, pool.size()));
    std::partial_sort(all.begin(), all.begin() + keep, all.end());
    all.resize(static_cast<std::size_t>(keep));
    return all;
}

template <typename Scalar, typename Derived>
NeighborList<Scalar> knn_query(const ReferencePool<Scalar>& pool, const Eigen::DenseBase<Derived>& query, Index k)
{
    if (query.size() != pool.dim()) throw Error("query dimension does not match pool");
    const Vector<Scalar> q = query.derived().transpose().reshaped();
    return knn_query(pool, q.data(), k);
}

template <typename Scalar>
std::vector<NeighborList<Scalar>> knn_bruteforce(const ReferencePool<Scalar>& pool, const RowMatrix<Scalar>& queries,
                                                 Index k)
{
    if (queries.cols() != pool.dim()) throw Error("query dimension does not match pool");
    std::vector<NeighborList<Scalar>> out(static_cast<std::size_t>(queries.rows()));
    for (Index q = 0; q < queries.rows(); ++q) out[q] = knn_query(pool, queries.row(q).data(), k);
    return out;
}

/// Exact kNN through a GEMM pre-screen: |q|^2 + |p|^2 - 2 q.p ranks the pool
/// cheaply, every entry that could still reach the top k under a rounding
/// error bound is re-evaluated with the exact kernel, and the final
/// selection uses (distance, index) like knn_query. Results are identical to
/// knn_bruteforce, tie order included.
template <typename Scalar>
std::vector<NeighborList<Scalar>> knn_screened(const ReferencePool<Scalar>& pool, const RowMatrix<Scalar>& queries,
                                               Index k)
{
    if (pool.empty()) throw Error("empty reference pool");
    if (k < 1) throw Error("k must be at least 1");
    if (queries.cols() != pool.dim()) throw Error("query dimension does not match pool");
    const Index n = pool.size();
    const Index d = pool.dim();
    if (n <= k) return knn_bruteforce(pool, queries, k);

    const auto refs = pool.embeddings();
    const Vector<Scalar> ref_norms = refs.rowwise().squaredNorm();
    const Scalar max_ref_norm = ref_norms.maxCoeff();
    constexpr Scalar eps = std::numeric_limits<Scalar>::epsilon();
    const Scalar gamma = Scalar(d + 2) * eps / (Scalar(1) - Scalar(d + 2) * eps);

    const Index block = std::max<Index>(1, Index{1 << 22} / n);
    std::vector<NeighborList<Scalar>> out(static_cast<std::size_t>(queries.rows()));
    RowMatrix<Scalar> approx;
    std::vector<Scalar> scratch;
    NeighborList<Scalar> candidates;
    for (Index q0 = 0; q0 < queries.rows(); q0 += block) {
        const Index b = std::min(block, queries.rows() - q0);
        const auto qblock = queries.middleRows(q0, b);
        approx.noalias() = Scalar(-2) * (qblock * refs.transpose());
        for (Index i = 0; i < b; ++i) {
            const Scalar qn = qblock.row(i).squaredNorm();
            auto row = approx.row(i);
            row += ref_norms.transpose();
            row.array() += qn;
            scratch.assign(row.data(), row.data() + n);
            std::nth_element(scratch.begin(), scratch.begin() + (k - 1), scratch.end());
            const Scalar kth = scratch[k - 1];
            // |approx - exact kernel| <= 8 gamma (|q|^2 + |p|^2); doubled for margin
            const Scalar slack = Scalar(16) * gamma * (qn + max_ref_norm) + std::numeric_limits<Scalar>::min();
            const Scalar limit = kth + Scalar(2) * slack;
            candidates.clear();
            const Scalar* qptr = qblock.row(i).data();
            for (Index j = 0; j < n; ++j)
                if (row(j) <= limit) candidates.push_back({j, squared_distance(qptr, pool.embedding(j), d)});
            const auto keep = static_cast<std::ptrdiff_t>(std::min<Index>(k, static_cast<Index>(candidates.size())));
            std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end());
            out[q0 + i].assign(candidates.begin(), candidates.begin() + keep);
        }
    }
    return out;
}

enum class SearchMethod { BruteForce, Screened };

template <typename Scalar>
std::vector<NeighborList<Scalar>> knn_search(const ReferencePool<Scalar>& pool, const RowMatrix<Scalar>& queries,
                                             Index k, SearchMethod method = SearchMethod::Screened)
{
    return method == SearchMethod::BruteForce ? knn_bruteforce(pool, queries, k) : knn_screened(pool, queries, k);
}

/// Majority vote result. fractions holds (label, share) sorted by label and
/// sums to 1.
struct Vote {
    std::int32_t label = 0;
    std::vector<std::pair<std::int32_t, double>> fractions;

    double fraction(std::int32_t l) const
    {
        for (const auto& [label_id, f] : fractions)
            if (label_id == l) return f;
        return 0.0;
    }
};

/// Most frequent neighbor label; count ties go to the smaller label.
template <typename Scalar>
Vote majority_vote(const NeighborList<Scalar>& neighbors, const ReferencePool<Scalar>& pool)
{
    if (neighbors.empty()) throw Error("cannot vote over an empty neighbor list");
    Vote v;
    for (const auto& nb : neighbors) {
        const std::int32_t l = pool.label(nb.index);
        auto it = std::lower_bound(v.fractions.begin(), v.fractions.end(), l,
                                   [](const auto& e, std::int32_t x) { return e.first < x; });
        if (it != v.fractions.end() && it->first == l)
            it->second += 1.0;
        else
            v.fractions.insert(it, {l, 1.0});
    }
    double best = -1.0;
    for (auto& [l, count] : v.fractions) {
        if (count > best) {
            best = count;
            v.label = l;
        }
        count /= static_cast<double>(neighbors.size());
    }
    return v;
}

template <typename Scalar, typename Derived>
Vote classify_cell(const ReferencePool<Scalar>& pool, const Eigen::DenseBase<Derived>& query, Index k)
{
    return majority_vote(knn_query(pool, query, k), pool);
}

/// Labels, per-label vote shares and neighbor lists for every cell of one
/// frame's grid.
template <typename Scalar = double>
struct ClassifiedGrid {
    Index rows = 0;
    Index cols = 0;
    Index stride = 1;
    Index k = 1;
    LabelGrid labels;
    /// cells x label_slots; column l is the vote share of label l.
    RowMatrix<double> fractions;
    std::vector<NeighborList<Scalar>> neighbors;

    Index cells() const { return rows * cols; }

    void set_vote(Index cell, const Vote& v)
    {
        const std::int32_t top = v.fractions.empty() ? 0 : v.fractions.back().first;
        if (top >= fractions.cols()) {
            const Index old = fractions.cols();
            fractions.conservativeResize(Eigen::NoChange, top + 1);
            fractions.rightCols(top + 1 - old).setZero();
        }
        fractions.row(cell).setZero();
        for (const auto& [l, f] : v.fractions) fractions(cell, l) = f;
        labels.data()[cell] = v.label;
    }
};

template <typename Scalar>
ClassifiedGrid<Scalar> classify_grid(const ReferencePool<Scalar>& pool, const EmbeddingGrid<Scalar>& embeddings,
                                     Index k, SearchMethod method = SearchMethod::Screened)
{
    if (pool.empty()) throw Error("empty reference pool");
    ClassifiedGrid<Scalar> out;
    out.rows = embeddings.rows;
    out.cols = embeddings.cols;
    out.stride = embeddings.stride;
    out.k = k;
    out.labels = LabelGrid::Zero(embeddings.rows, embeddings.cols);
    out.fractions = RowMatrix<double>::Zero(embeddings.cells(), pool.max_label() + 1);
    out.neighbors = knn_search(pool, embeddings.values, k, method);
    for (Index c = 0; c < embeddings.cells(); ++c) out.set_vote(c, majority_vote(out.neighbors[c], pool));
    return out;
}

/// Promotes every cell whose neighbor list (computed against the pool as it
/// stood at frame start) is unanimous. When the pool exceeds `cap`,
/// adaptation samples are evicted uniformly at random; user samples stay.
template <typename Scalar, typename Rng>
std::vector<ReferenceSample<Scalar>> online_adapt(ReferencePool<Scalar>& pool, const EmbeddingGrid<Scalar>& embeddings,
                                                  const ClassifiedGrid<Scalar>& classified, Index frame_index, Index cap,
                                                  Rng& rng)
{
    if (pool.empty()) throw Error("empty reference pool");
    if (cap < pool.size()) throw Error("pool cap below current pool size");
    std::vector<ReferenceSample<Scalar>> added;
    for (Index c = 0; c < embeddings.cells(); ++c) {
        const auto& nbs = classified.neighbors[c];
        if (nbs.empty()) continue;
        const std::int32_t l = pool.label(nbs.front().index);
        const bool unanimous =
            std::all_of(nbs.begin(), nbs.end(), [&](const auto& nb) { return pool.label(nb.index) == l; });
        if (!unanimous) continue;
        ReferenceSample<Scalar> s;
        s.embedding = embeddings.values.row(c).transpose();
        s.label = l;
        s.origin = {frame_index, c / embeddings.cols, c % embeddings.cols};
        s.provenance = Provenance::Adaptation;
        added.push_back(s);
    }
    for (const auto& s : added) pool.add(s);
    if (pool.size() > cap) {
        std::vector<Index> evictable;
        for (Index i = 0; i < pool.size(); ++i)
            if (pool.provenance(i) == Provenance::Adaptation) evictable.push_back(i);
        const Index excess = std::min<Index>(pool.size() - cap, static_cast<Index>(evictable.size()));
        std::shuffle(evictable.begin(), evictable.end(), rng);
        std::vector<bool> flagged(static_cast<std::size_t>(pool.size()), false);
        for (Index i = 0; i < excess; ++i) flagged[evictable[i]] = true;
        pool.remove_if_flagged(flagged);
    }
    return added;
}

template <typename Scalar, typename Rng>
std::vector<ReferenceSample<Scalar>> online_adapt(ReferencePool<Scalar>& pool, const EmbeddingGrid<Scalar>& embeddings,
                                                  Index frame_index, Index k, Index cap, Rng& rng)
{
    const ClassifiedGrid<Scalar> classified = classify_grid(pool, embeddings, k);
    return online_adapt(pool, embeddings, classified, frame_index, cap, rng);
}

struct IncrementalUpdate {
    std::vector<Index> changed_cells;
    std::vector<Index> touched_cells;  // neighbor list changed (vote shares may differ)
    Index distance_evaluations = 0;
};

/// Folds the newest pool entry (index pool.size() - 1) into existing neighbor
/// lists: one distance per query cell, independent of pool size. Returns the
/// cells whose majority label flipped.
template <typename Scalar>
IncrementalUpdate add_reference_incremental(ClassifiedGrid<Scalar>& state, const ReferencePool<Scalar>& pool,
                                            const EmbeddingGrid<Scalar>& embeddings)
{
    if (pool.empty()) throw Error("empty reference pool");
    if (embeddings.cells() != state.cells()) throw Error("embedding grid does not match neighbor lists");
    const Index newest = pool.size() - 1;
    const Scalar* sample = pool.embedding(newest);
    IncrementalUpdate update;
    for (Index c = 0; c < state.cells(); ++c) {
        const Neighbor<Scalar> cand{newest, squared_distance(embeddings.values.row(c).data(), sample, pool.dim())};
        ++update.distance_evaluations;
        auto& list = state.neighbors[c];
        if (static_cast<Index>(list.size()) >= state.k && !(cand < list.back())) continue;
        list.insert(std::upper_bound(list.begin(), list.end(), cand), cand);
        if (static_cast<Index>(list.size()) > state.k) list.pop_back();
        update.touched_cells.push_back(c);
        const std::int32_t before = state.labels.data()[c];
        state.set_vote(c, majority_vote(list, pool));
        if (state.labels.data()[c] != before) update.changed_cells.push_back(c);
    }
    return update;
}

/// Compares a sample of cells against a fresh exhaustive search.
template <typename Scalar>
bool neighbor_lists_consistent(const ClassifiedGrid<Scalar>& state, const ReferencePool<Scalar>& pool,
                               const EmbeddingGrid<Scalar>& embeddings, Index samples = 4)
{
    if (embeddings.cells() != state.cells() || static_cast<Index>(state.neighbors.size()) != state.cells())
        return false;
    const Index step = std::max<Index>(1, state.cells() / std::max<Index>(1, samples));
    for (Index c = 0; c < state.cells(); c += step)
        if (knn_query(pool, embeddings.values.row(c).data(), state.k) != state.neighbors[c]) return false;
    return true;
}

/// Bilinearly interpolated vote shares at a fractional grid position, then
/// argmax with ties to the smaller label.
std::int32_t interpolated_label(const RowMatrix<double>& fractions, Index rows, Index cols, double grid_y,
                                double grid_x);

/// Pixel (r, c) samples the grid at ((r + 0.5) / stride - 0.5, (c + 0.5) / stride - 0.5),
/// clamped to the grid. Stride 1 reproduces the grid exactly.
LabelMask upsample_labels(const RowMatrix<double>& fractions, Index rows, Index cols, Index stride, Index height,
                          Index width);

/// Re-derives only pixels in [row0, row1) x [col0, col1).
void upsample_region(const RowMatrix<double>& fractions, Index rows, Index cols, Index stride, LabelMask& mask,
                     Index row0, Index row1, Index col0, Index col1);

template <typename Scalar>
LabelMask upsample_labels(const ClassifiedGrid<Scalar>& grid, Index height, Index width)
{
    return upsample_labels(grid.fractions, grid.rows, grid.cols, grid.stride, height, width);
}

/// One-hot vote shares for a hard label grid.
RowMatrix<double> one_hot(const LabelGrid& labels);

struct SemiSupervisedConfig {
    EmbedConfig embed{4, 1.0, 1.0};
    Index k = 5;
    bool adapt = true;
    Index cap = 50000;
    std::uint64_t seed = 0;
};

struct SemiSupervisedResult {
    std::vector<LabelMask> masks;
    std::vector<Index> pool_sizes;  // after each frame
};

/// Frame-0 cells seed the pool; frames 1..N-1 are classified in order, with
/// online adaptation after each frame when enabled.
SemiSupervisedResult segment_video_semisupervised(const VideoTensor& video, const LabelMask& first_frame_mask,
                                                  const HeadParams<double>& params, const SemiSupervisedConfig& config);

// ---- pool serialization ----------------------------------------------------

inline constexpr detail::Magic kPoolMagic{'R', 'S', 'G', 'P', 'O', 'O', 'L', '\0'};

/// magic, u32 version, u32 dim, u64 count, then per sample: dim f64,
/// i32 label, i32 frame, i32 row, i32 col, u8 provenance.
template <typename Scalar>
void write_pool(std::ostream& out, const ReferencePool<Scalar>& pool)
{
    detail::write_magic(out, kPoolMagic);
    detail::write_pod<std::uint32_t>(out, 1);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(pool.dim()));
    detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(pool.size()));
    for (Index i = 0; i < pool.size(); ++i) {
        for (Index j = 0; j < pool.dim(); ++j) detail::write_pod<double>(out, static_cast<double>(pool.embedding(i)[j]));
        detail::write_pod<std::int32_t>(out, pool.label(i));
        const GridCoord o = pool.origin(i);
        detail::write_pod<std::int32_t>(out, static_cast<std::int32_t>(o.frame));
        detail::write_pod<std::int32_t>(out, static_cast<std::int32_t>(o.row));
        detail::write_pod<std::int32_t>(out, static_cast<std::int32_t>(o.col));
        detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(pool.provenance(i)));
    }
}

template <typename Scalar = double>
ReferencePool<Scalar> read_pool(std::istream& in)
{
    detail::expect_magic(in, kPoolMagic, "reference pool");
    if (detail::read_pod<std::uint32_t>(in) != 1) throw Error("unsupported pool file version");
    const Index dim = detail::read_pod<std::uint32_t>(in);
    const auto count = detail::read_pod<std::uint64_t>(in);
    ReferencePool<Scalar> pool(dim);
    Vector<Scalar> e(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        for (Index j = 0; j < dim; ++j) e(j) = static_cast<Scalar>(detail::read_pod<double>(in));
        const auto label = detail::read_pod<std::int32_t>(in);
        GridCoord o;
        o.frame = detail::read_pod<std::int32_t>(in);
        o.row = detail::read_pod<std::int32_t>(in);
        o.col = detail::read_pod<std::int32_t>(in);
        const auto prov = detail::read_pod<std::uint8_t>(in);
        if (prov > 1) throw Error("bad provenance byte in pool file");
        pool.add(e, label, o, static_cast<Provenance>(prov));
    }
    return pool;
}

}  // namespace retseg
