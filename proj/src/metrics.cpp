#include "retseg/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>

namespace retseg {

namespace {

using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same_shape(const LabelMask& a, const LabelMask& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("dimension mismatch between masks");
}

// Square (Chebyshev) dilation by radius via separable running maxima.
BoolGrid dilate(const BoolGrid& in, Index radius)
{
    if (radius <= 0) return in;
    const Index h = in.rows(), w = in.cols();
    BoolGrid horiz = BoolGrid::Constant(h, w, false);
    for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c)
            if (in(r, c))
                for (Index x = std::max<Index>(0, c - radius); x <= std::min(w - 1, c + radius); ++x) horiz(r, x) = true;
    BoolGrid out = BoolGrid::Constant(h, w, false);
    for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c)
            if (horiz(r, c))
                for (Index y = std::max<Index>(0, r - radius); y <= std::min(h - 1, r + radius); ++y) out(y, c) = true;
    return out;
}

double mean_of(const std::vector<double>& v)
{
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double jaccard(const LabelMask& pred, const LabelMask& gt, std::int32_t object_id)
{
    require_same_shape(pred, gt);
    const auto p = pred == object_id;
    const auto g = gt == object_id;
    const Index inter = (p && g).count();
    const Index uni = (p || g).count();
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BoolGrid object_boundary(const LabelMask& mask, std::int32_t object_id)
{
    const Index h = mask.rows(), w = mask.cols();
    BoolGrid out = BoolGrid::Constant(h, w, false);
    auto outside = [&](Index r, Index c) { return r < 0 || c < 0 || r >= h || c >= w || mask(r, c) != object_id; };
    for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c)
            if (mask(r, c) == object_id)
                out(r, c) = outside(r - 1, c) || outside(r + 1, c) || outside(r, c - 1) || outside(r, c + 1);
    return out;
}

double boundary_f(const LabelMask& pred, const LabelMask& gt, std::int32_t object_id, Index tolerance_px)
{
    require_same_shape(pred, gt);
    if (tolerance_px < 0) throw Error("boundary tolerance must be non-negative");
    const BoolGrid pb = object_boundary(pred, object_id);
    const BoolGrid gb = object_boundary(gt, object_id);
    const Index np = pb.count(), ng = gb.count();
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    const double precision = static_cast<double>((pb && dilate(gb, tolerance_px)).count()) / static_cast<double>(np);
    const double recall = static_cast<double>((gb && dilate(pb, tolerance_px)).count()) / static_cast<double>(ng);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

Index default_boundary_tolerance(Index height, Index width)
{
    const double diagonal = std::hypot(static_cast<double>(height), static_cast<double>(width));
    return std::max<Index>(1, std::lround(0.008 * diagonal));
}

SequenceScore evaluate_sequence(const std::vector<LabelMask>& preds, const std::vector<LabelMask>& gts,
                                std::int32_t object_count, const EvaluateOptions& options)
{
    if (preds.size() != gts.size()) throw Error("prediction and ground-truth sequences differ in length");
    if (object_count < 1) throw Error("object count must be at least 1");
    SequenceScore score;
    for (std::size_t j = options.exclude_first_frame ? 1 : 0; j < gts.size(); ++j) {
        const LabelMask& gt = gts[j];
        const LabelMask& pred = preds[j];
        require_same_shape(pred, gt);
        const Index tol = options.tolerance_px >= 0 ? options.tolerance_px : default_boundary_tolerance(gt.rows(), gt.cols());
        std::vector<std::int32_t> ids;
        for (std::int32_t id = 1; id <= object_count; ++id)
            if ((gt == id).any()) ids.push_back(id);
        if (ids.empty())
            for (std::int32_t id = 1; id <= object_count; ++id) ids.push_back(id);
        std::vector<double> js, fs;
        for (std::int32_t id : ids) {
            const double jv = jaccard(pred, gt, id);
            const double fv = boundary_f(pred, gt, id, tol);
            js.push_back(jv);
            fs.push_back(fv);
            score.per_object.push_back({static_cast<Index>(j), id, jv, fv});
        }
        score.frames.push_back(static_cast<Index>(j));
        score.per_frame_j.push_back(mean_of(js));
        score.per_frame_f.push_back(mean_of(fs));
    }
    score.mean_j = mean_of(score.per_frame_j);
    score.mean_f = mean_of(score.per_frame_f);
    score.mean_jf = 0.5 * (score.mean_j + score.mean_f);
    return score;
}

void write_metrics_csv_header(std::ostream& out)
{
    out << "sequence,frame,object_id,J,F\n";
}

void write_metrics_csv(std::ostream& out, const std::string& sequence, const SequenceScore& score)
{
    out << std::setprecision(6) << std::fixed;
    for (const auto& s : score.per_object)
        out << sequence << ',' << s.frame << ',' << s.object_id << ',' << s.j << ',' << s.f << '\n';
    out << sequence << ",mean,all," << score.mean_j << ',' << score.mean_f << '\n';
    out.unsetf(std::ios::floatfield);
}

}  // namespace retseg
