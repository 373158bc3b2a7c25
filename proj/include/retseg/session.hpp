#pragma once

#include "retseg/embed.hpp"
#include "retseg/retrieval.hpp"

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <shared_mutex>
#include <vector>

namespace retseg {

struct SessionConfig {
    EmbedConfig embed{4, 1.0, 1.0};
    Index k = 1;
    std::int32_t object_count = 1;
    /// Online adaptation after each click; off by default in interactive use.
    bool adapt = false;
    Index adapt_k = 5;
    Index adapt_cap = 50000;
    std::uint64_t seed = 0;
};

struct ClickResult {
    Index changed_cells = 0;
    Index distance_evaluations = 0;
    std::vector<Index> changed_frames;
    std::uint64_t version = 0;
};

/// Masks and version read under one lock.
struct MaskSnapshot {
    std::uint64_t version = 0;
    bool ready = false;
    std::vector<LabelMask> masks;  // empty unless ready
};

/// Interactive segmentation over embeddings computed once at construction.
/// A click becomes a reference sample and is folded into every frame's
/// neighbor lists incrementally; embeddings are never recomputed.
///
/// One writer at a time: add_click/reset take an exclusive lock and all
/// readers take a shared lock, so no reader sees a half-applied click.
class InteractiveSession {
public:
    InteractiveSession(VideoTensor video, const HeadParams<double>& params, SessionConfig config);

    ClickResult add_click(const Annotation& annotation);
    std::vector<ClickResult> add_clicks(const std::vector<Annotation>& annotations);
    void reset();

    /// True once the pool holds background and at least one object label.
    bool ready() const;
    /// Full-resolution masks, or nullopt ("insufficient references") before ready().
    std::optional<std::vector<LabelMask>> masks() const;
    /// Current labeling regardless of readiness; requires a non-empty pool.
    std::vector<LabelMask> predicted_masks() const;
    LabelMask predicted_mask(Index frame) const;
    std::vector<LabelGrid> grid_labels() const;
    MaskSnapshot snapshot() const;
    /// From-scratch classify_grid over the current pool, for consistency checks.
    std::vector<LabelGrid> reclassify_all() const;
    std::vector<LabelMask> rebuild_masks() const;

    std::uint64_t embedding_hash() const;
    Index forward_passes() const { return forward_passes_; }
    std::vector<Annotation> click_log() const;
    std::uint64_t version() const;
    Index pool_size() const;
    Index total_cells() const;

    const VideoTensor& video() const { return video_; }
    const SessionConfig& config() const { return config_; }
    const std::vector<EmbeddingGrid<double>>& embeddings() const { return embeddings_; }
    Index frame_count() const { return video_.frame_count(); }
    Index height() const { return video_.height(); }
    Index width() const { return video_.width(); }

private:
    void validate(const Annotation& a) const;
    bool ready_locked() const;
    std::vector<LabelGrid> grid_labels_locked() const;
    ClickResult apply_click(const Annotation& a);
    void rebuild_state();
    void rederive_region(Index frame, Index cell);

    VideoTensor video_;
    SessionConfig config_;
    std::vector<EmbeddingGrid<double>> embeddings_;
    Index forward_passes_ = 0;

    mutable std::shared_mutex mutex_;
    ReferencePool<double> pool_;
    std::vector<ClassifiedGrid<double>> state_;
    std::vector<LabelMask> masks_;
    std::vector<Annotation> log_;
    std::uint64_t version_ = 0;
    std::mt19937_64 adapt_rng_;
};

/// One annotation per grid cell traversed by the polyline (row, col points),
/// in stroke order.
std::vector<Annotation> scribble_annotations(Index frame, const std::vector<Cell>& polyline, std::int32_t label,
                                             Index stride, Index height, Index width);

/// Line format: "frame row col label kind".
void write_click_log(std::ostream& out, const std::vector<Annotation>& log);
std::vector<Annotation> read_click_log(std::istream& in);

// ---- simulated user ----------------------------------------------------------

Index count_wrong_pixels(const std::vector<LabelMask>& pred, const std::vector<LabelMask>& gt);

/// One uniformly random pixel per object id 1..K (from any frame showing it),
/// then one random background pixel, each clicked with its gt label.
std::vector<Annotation> robot_initial(InteractiveSession& session, const std::vector<LabelMask>& gt,
                                      std::mt19937_64& rng);

/// Clicks a uniformly random wrongly labeled pixel with its gt label; nullopt
/// when nothing is wrong.
std::optional<Annotation> robot_step(InteractiveSession& session, const std::vector<LabelMask>& gt,
                                     std::mt19937_64& rng);

struct ClickCurvePoint {
    double clicks_per_frame = 0.0;
    double mean_j = 0.0;
};

struct RobotRun {
    std::uint64_t seed = 0;
    std::vector<ClickCurvePoint> curve;
    Index wrong_after_initial = 0;
    Index wrong_final = 0;
};

struct RobotReport {
    std::vector<RobotRun> runs;
    /// Averaged by click index; runs that finished early carry their last J.
    std::vector<ClickCurvePoint> mean_curve;
};

/// Repeats the robot protocol per seed on a reset session, recording
/// (clicks / frame_count, mean J over all frames) after every click.
RobotReport run_robot(InteractiveSession& session, const std::vector<LabelMask>& gt, Index click_budget,
                      const std::vector<std::uint64_t>& seeds);

void write_robot_csv(std::ostream& out, const RobotReport& report);

}  // namespace retseg
