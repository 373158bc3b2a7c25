#pragma once

#include "retseg/core.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace retseg {

/// Intersection over union of the pixels equal to object_id; 1 when both are empty.
double jaccard(const LabelMask& pred, const LabelMask& gt, std::int32_t object_id);

/// Object pixels with a non-object 4-neighbor; the image border counts as non-object.
Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> object_boundary(const LabelMask& mask,
                                                                                    std::int32_t object_id);

/// Boundary F-measure: a boundary pixel matches when a counterpart boundary
/// pixel lies within Chebyshev distance tolerance_px.
double boundary_f(const LabelMask& pred, const LabelMask& gt, std::int32_t object_id, Index tolerance_px);

/// max(1, round(0.008 * image diagonal)).
Index default_boundary_tolerance(Index height, Index width);

struct FrameObjectScore {
    Index frame = 0;
    std::int32_t object_id = 0;
    double j = 0.0;
    double f = 0.0;
};

struct SequenceScore {
    std::vector<double> per_frame_j;
    std::vector<double> per_frame_f;
    std::vector<FrameObjectScore> per_object;
    std::vector<Index> frames;  // frame index of each per_frame entry
    double mean_j = 0.0;
    double mean_f = 0.0;
    double mean_jf = 0.0;
};

struct EvaluateOptions {
    bool exclude_first_frame = false;
    Index tolerance_px = -1;  // negative: default_boundary_tolerance
};

/// Per frame, J and F averaged over the object ids present in the gt frame;
/// frames without any gt object average over ids 1..K instead.
SequenceScore evaluate_sequence(const std::vector<LabelMask>& preds, const std::vector<LabelMask>& gts,
                                std::int32_t object_count, const EvaluateOptions& options = {});

/// CSV rows: sequence,frame,object_id,J,F, then a summary row
/// sequence,mean,all,mean_J,mean_F.
void write_metrics_csv_header(std::ostream& out);
void write_metrics_csv(std::ostream& out, const std::string& sequence, const SequenceScore& score);

}  // namespace retseg
