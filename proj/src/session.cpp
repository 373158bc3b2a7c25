#include "retseg/session.hpp"

#include "retseg/metrics.hpp"

#include <algorithm>
#include <cstring>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>

namespace retseg {

InteractiveSession::InteractiveSession(VideoTensor video, const HeadParams<double>& params, SessionConfig config)
    : video_(std::move(video)), config_(config), adapt_rng_(config.seed)
{
    if (config_.k < 1) throw Error("k must be at least 1");
    if (config_.object_count < 1) throw Error("object count must be at least 1");
    embeddings_ = embed_video(video_, params, config_.embed);
    forward_passes_ = 1;
    pool_ = ReferencePool<double>(embeddings_.front().dim());
    rebuild_state();
}

void InteractiveSession::rebuild_state()
{
    state_.clear();
    masks_.clear();
    for (const auto& grid : embeddings_) {
        ClassifiedGrid<double> s;
        s.rows = grid.rows;
        s.cols = grid.cols;
        s.stride = grid.stride;
        s.k = config_.k;
        if (pool_.empty()) {
            s.labels = LabelGrid::Zero(grid.rows, grid.cols);
            s.fractions = RowMatrix<double>::Zero(grid.cells(), config_.object_count + 1);
            s.neighbors.assign(static_cast<std::size_t>(grid.cells()), {});
        } else {
            s = classify_grid(pool_, grid, config_.k);
        }
        masks_.push_back(upsample_labels(s, height(), width()));
        state_.push_back(std::move(s));
    }
}

void InteractiveSession::validate(const Annotation& a) const
{
    if (a.frame < 0 || a.frame >= frame_count()) throw Error("click frame " + std::to_string(a.frame) + " out of range");
    if (a.row < 0 || a.col < 0 || a.row >= height() || a.col >= width())
        throw Error("click (" + std::to_string(a.row) + "," + std::to_string(a.col) + ") outside the image");
    if (a.label < 0) throw Error("click label " + std::to_string(a.label) + " is negative");
    if (a.label > config_.object_count)
        throw Error("click label " + std::to_string(a.label) + " above K=" + std::to_string(config_.object_count));
}

void InteractiveSession::rederive_region(Index frame, Index cell)
{
    const auto& s = state_[frame];
    const Index r = cell / s.cols;
    const Index c = cell % s.cols;
    // pixels whose bilinear stencil can include this cell
    upsample_region(s.fractions, s.rows, s.cols, s.stride, masks_[frame], (r - 1) * s.stride, (r + 2) * s.stride,
                    (c - 1) * s.stride, (c + 2) * s.stride);
}

ClickResult InteractiveSession::apply_click(const Annotation& a)
{
    validate(a);
    const Cell cell = full_to_grid(a.row, a.col, config_.embed.stride, height(), width());
    const auto& grid = embeddings_[a.frame];
    const bool was_empty = pool_.empty();
    pool_.add(grid.cell(cell.row, cell.col), a.label, {a.frame, cell.row, cell.col}, Provenance::User);
    log_.push_back(a);

    ClickResult result;
    for (Index j = 0; j < frame_count(); ++j) {
        const IncrementalUpdate up = add_reference_incremental(state_[j], pool_, embeddings_[j]);
        result.distance_evaluations += up.distance_evaluations;
        result.changed_cells += static_cast<Index>(up.changed_cells.size());
        if (!up.changed_cells.empty()) result.changed_frames.push_back(j);
        if (was_empty) {
            masks_[j] = upsample_labels(state_[j], height(), width());
        } else {
            for (Index c : up.touched_cells) rederive_region(j, c);
        }
    }

    if (config_.adapt && ready_locked()) {
        const Index cap = std::max(config_.adapt_cap, pool_.size());
        const Index before = pool_.size();
        for (Index j = 0; j < frame_count(); ++j) {
            const auto wide = classify_grid(pool_, embeddings_[j], config_.adapt_k);
            online_adapt(pool_, embeddings_[j], wide, j, cap, adapt_rng_);
        }
        if (pool_.size() != before) {
            const std::vector<LabelGrid> old = grid_labels_locked();
            rebuild_state();
            result.changed_frames.clear();
            result.changed_cells = 0;
            for (Index j = 0; j < frame_count(); ++j) {
                const Index diff = (old[j] != state_[j].labels).count();
                result.changed_cells += diff;
                if (diff > 0) result.changed_frames.push_back(j);
            }
        }
    }
    result.version = ++version_;
    return result;
}

ClickResult InteractiveSession::add_click(const Annotation& annotation)
{
    std::unique_lock lock(mutex_);
    return apply_click(annotation);
}

std::vector<ClickResult> InteractiveSession::add_clicks(const std::vector<Annotation>& annotations)
{
    std::unique_lock lock(mutex_);
    for (const auto& a : annotations) validate(a);
    std::vector<ClickResult> out;
    for (const auto& a : annotations) out.push_back(apply_click(a));
    return out;
}

void InteractiveSession::reset()
{
    std::unique_lock lock(mutex_);
    pool_ = ReferencePool<double>(embeddings_.front().dim());
    log_.clear();
    adapt_rng_.seed(config_.seed);
    rebuild_state();
    ++version_;
}

bool InteractiveSession::ready() const
{
    std::shared_lock lock(mutex_);
    return ready_locked();
}

bool InteractiveSession::ready_locked() const
{
    if (!pool_.has_label(0)) return false;
    return std::any_of(pool_.labels().begin(), pool_.labels().end(), [](std::int32_t l) { return l > 0; });
}

std::optional<std::vector<LabelMask>> InteractiveSession::masks() const
{
    std::shared_lock lock(mutex_);
    if (!ready_locked()) return std::nullopt;
    return masks_;
}

MaskSnapshot InteractiveSession::snapshot() const
{
    std::shared_lock lock(mutex_);
    MaskSnapshot snap;
    snap.version = version_;
    snap.ready = ready_locked();
    if (snap.ready) snap.masks = masks_;
    return snap;
}

std::vector<LabelMask> InteractiveSession::predicted_masks() const
{
    std::shared_lock lock(mutex_);
    if (pool_.empty()) throw Error("insufficient references");
    return masks_;
}

LabelMask InteractiveSession::predicted_mask(Index frame) const
{
    std::shared_lock lock(mutex_);
    if (pool_.empty()) throw Error("insufficient references");
    if (frame < 0 || frame >= frame_count()) throw Error("frame out of range");
    return masks_[frame];
}

std::vector<LabelGrid> InteractiveSession::grid_labels() const
{
    std::shared_lock lock(mutex_);
    return grid_labels_locked();
}

std::vector<LabelGrid> InteractiveSession::grid_labels_locked() const
{
    std::vector<LabelGrid> out;
    for (const auto& s : state_) out.push_back(s.labels);
    return out;
}

std::vector<LabelGrid> InteractiveSession::reclassify_all() const
{
    std::shared_lock lock(mutex_);
    if (pool_.empty()) throw Error("insufficient references");
    std::vector<LabelGrid> out;
    for (const auto& grid : embeddings_) out.push_back(classify_grid(pool_, grid, config_.k).labels);
    return out;
}

std::vector<LabelMask> InteractiveSession::rebuild_masks() const
{
    std::shared_lock lock(mutex_);
    if (pool_.empty()) throw Error("insufficient references");
    std::vector<LabelMask> out;
    for (const auto& grid : embeddings_)
        out.push_back(upsample_labels(classify_grid(pool_, grid, config_.k), height(), width()));
    return out;
}

std::uint64_t InteractiveSession::embedding_hash() const
{
    // FNV-1a over the raw embedding bytes
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& grid : embeddings_) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(grid.values.data());
        const std::size_t n = static_cast<std::size_t>(grid.values.size()) * sizeof(double);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::vector<Annotation> InteractiveSession::click_log() const
{
    std::shared_lock lock(mutex_);
    return log_;
}

std::uint64_t InteractiveSession::version() const
{
    std::shared_lock lock(mutex_);
    return version_;
}

Index InteractiveSession::pool_size() const
{
    std::shared_lock lock(mutex_);
    return pool_.size();
}

Index InteractiveSession::total_cells() const
{
    Index n = 0;
    for (const auto& g : embeddings_) n += g.cells();
    return n;
}

std::vector<Annotation> scribble_annotations(Index frame, const std::vector<Cell>& polyline, std::int32_t label,
                                             Index stride, Index height, Index width)
{
    std::vector<Annotation> out;
    std::set<std::pair<Index, Index>> seen;
    auto visit = [&](Index r, Index c) {
        const Cell g = full_to_grid(r, c, stride, height, width);
        if (seen.insert({g.row, g.col}).second) out.push_back({frame, r, c, label, AnnotationKind::ScribblePoint});
    };
    if (polyline.empty()) return out;
    visit(polyline.front().row, polyline.front().col);
    for (std::size_t i = 1; i < polyline.size(); ++i) {
        // Bresenham between consecutive points
        Index r0 = polyline[i - 1].row, c0 = polyline[i - 1].col;
        const Index r1 = polyline[i].row, c1 = polyline[i].col;
        const Index dr = std::abs(r1 - r0), dc = -std::abs(c1 - c0);
        const Index sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
        Index err = dr + dc;
        while (true) {
            visit(r0, c0);
            if (r0 == r1 && c0 == c1) break;
            const Index e2 = 2 * err;
            if (e2 >= dc) {
                err += dc;
                r0 += sr;
            }
            if (e2 <= dr) {
                err += dr;
                c0 += sc;
            }
        }
    }
    return out;
}

void write_click_log(std::ostream& out, const std::vector<Annotation>& log)
{
    for (const auto& a : log) out << a.frame << ' ' << a.row << ' ' << a.col << ' ' << a.label << ' ' << to_string(a.kind) << '\n';
}

std::vector<Annotation> read_click_log(std::istream& in)
{
    std::vector<Annotation> log;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
        std::istringstream ls(line);
        Annotation a;
        std::string kind;
        if (!(ls >> a.frame >> a.row >> a.col >> a.label >> kind))
            throw Error("click log line " + std::to_string(lineno) + ": expected 'frame row col label kind'");
        a.kind = annotation_kind_from_string(kind);
        log.push_back(a);
    }
    return log;
}

Index count_wrong_pixels(const std::vector<LabelMask>& pred, const std::vector<LabelMask>& gt)
{
    if (pred.size() != gt.size()) throw Error("prediction and ground-truth sequences differ in length");
    Index n = 0;
    for (std::size_t j = 0; j < gt.size(); ++j) n += (pred[j] != gt[j]).count();
    return n;
}

namespace {

void require_gt(const InteractiveSession& session, const std::vector<LabelMask>& gt)
{
    if (static_cast<Index>(gt.size()) != session.frame_count()) throw Error("ground truth does not cover every frame");
    for (const auto& m : gt)
        if (m.rows() != session.height() || m.cols() != session.width()) throw Error("ground truth size mismatch");
}

// Uniform choice among all pixels (over all frames) satisfying pred.
template <typename Pred>
std::optional<Annotation> pick_pixel(const std::vector<LabelMask>& gt, std::mt19937_64& rng, Pred pred)
{
    std::vector<Index> counts;
    Index total = 0;
    for (std::size_t j = 0; j < gt.size(); ++j) {
        Index n = 0;
        for (Index i = 0; i < gt[j].size(); ++i) n += pred(j, i) ? 1 : 0;
        counts.push_back(n);
        total += n;
    }
    if (total == 0) return std::nullopt;
    Index pick = std::uniform_int_distribution<Index>(0, total - 1)(rng);
    for (std::size_t j = 0; j < gt.size(); ++j) {
        if (pick >= counts[j]) {
            pick -= counts[j];
            continue;
        }
        for (Index i = 0; i < gt[j].size(); ++i) {
            if (!pred(j, i)) continue;
            if (pick-- == 0) {
                const Index w = gt[j].cols();
                return Annotation{static_cast<Index>(j), i / w, i % w, gt[j].data()[i], AnnotationKind::Click};
            }
        }
    }
    return std::nullopt;
}

std::vector<Annotation> initial_clicks(const std::vector<LabelMask>& gt, std::int32_t k, std::mt19937_64& rng)
{
    std::vector<Annotation> clicks;
    for (std::int32_t id = 1; id <= k; ++id) {
        auto a = pick_pixel(gt, rng, [&](std::size_t j, Index i) { return gt[j].data()[i] == id; });
        if (!a) throw Error("object " + std::to_string(id) + " is absent from every ground-truth frame");
        clicks.push_back(*a);
    }
    auto bg = pick_pixel(gt, rng, [&](std::size_t j, Index i) { return gt[j].data()[i] == 0; });
    if (!bg) throw Error("no background pixel in the ground truth");
    clicks.push_back(*bg);
    return clicks;
}

double mean_j_all_frames(const std::vector<LabelMask>& pred, const std::vector<LabelMask>& gt, std::int32_t k)
{
    return evaluate_sequence(pred, gt, k, {false, 1}).mean_j;
}

}  // namespace

std::vector<Annotation> robot_initial(InteractiveSession& session, const std::vector<LabelMask>& gt,
                                      std::mt19937_64& rng)
{
    require_gt(session, gt);
    const std::vector<Annotation> clicks = initial_clicks(gt, session.config().object_count, rng);
    for (const auto& a : clicks) session.add_click(a);
    return clicks;
}

std::optional<Annotation> robot_step(InteractiveSession& session, const std::vector<LabelMask>& gt,
                                     std::mt19937_64& rng)
{
    require_gt(session, gt);
    const std::vector<LabelMask> pred = session.predicted_masks();
    auto a = pick_pixel(gt, rng, [&](std::size_t j, Index i) { return pred[j].data()[i] != gt[j].data()[i]; });
    if (a) session.add_click(*a);
    return a;
}

RobotReport run_robot(InteractiveSession& session, const std::vector<LabelMask>& gt, Index click_budget,
                      const std::vector<std::uint64_t>& seeds)
{
    require_gt(session, gt);
    const std::int32_t k = session.config().object_count;
    if (click_budget < k + 1) throw Error("budget below K+1");
    const double frames = static_cast<double>(session.frame_count());
    RobotReport report;
    for (std::uint64_t seed : seeds) {
        session.reset();
        std::mt19937_64 rng(seed);
        RobotRun run;
        run.seed = seed;
        Index clicks = 0;
        auto record = [&] {
            ++clicks;
            run.curve.push_back({static_cast<double>(clicks) / frames, mean_j_all_frames(session.predicted_masks(), gt, k)});
        };
        // initial clicks go in one at a time so each one yields a curve point
        for (const auto& a : initial_clicks(gt, k, rng)) {
            session.add_click(a);
            record();
        }
        run.wrong_after_initial = count_wrong_pixels(session.predicted_masks(), gt);
        while (clicks < click_budget) {
            if (!robot_step(session, gt, rng)) break;
            record();
        }
        run.wrong_final = count_wrong_pixels(session.predicted_masks(), gt);
        report.runs.push_back(std::move(run));
    }
    std::size_t longest = 0;
    for (const auto& r : report.runs) longest = std::max(longest, r.curve.size());
    for (std::size_t i = 0; i < longest; ++i) {
        double j_sum = 0.0;
        for (const auto& r : report.runs) j_sum += r.curve[std::min(i, r.curve.size() - 1)].mean_j;
        report.mean_curve.push_back({static_cast<double>(i + 1) / frames, j_sum / static_cast<double>(report.runs.size())});
    }
    return report;
}

void write_robot_csv(std::ostream& out, const RobotReport& report)
{
    out << "seed,click,clicks_per_frame,mean_J\n" << std::setprecision(6) << std::fixed;
    for (const auto& r : report.runs)
        for (std::size_t i = 0; i < r.curve.size(); ++i)
            out << r.seed << ',' << i + 1 << ',' << r.curve[i].clicks_per_frame << ',' << r.curve[i].mean_j << '\n';
    for (std::size_t i = 0; i < report.mean_curve.size(); ++i)
        out << "mean," << i + 1 << ',' << report.mean_curve[i].clicks_per_frame << ',' << report.mean_curve[i].mean_j << '\n';
    out.unsetf(std::ios::floatfield);
}

}  // namespace retseg
