#include "retseg/core.hpp"

#include <algorithm>
#include <map>

namespace retseg {

std::string to_string(AnnotationKind kind)
{
    switch (kind) {
    case AnnotationKind::Click: return "click";
    case AnnotationKind::ScribblePoint: return "scribble-point";
    case AnnotationKind::MaskPixel: return "mask-pixel";
    }
    return "click";
}

AnnotationKind annotation_kind_from_string(const std::string& name)
{
    if (name == "click") return AnnotationKind::Click;
    if (name == "scribble-point") return AnnotationKind::ScribblePoint;
    if (name == "mask-pixel") return AnnotationKind::MaskPixel;
    throw Error("unknown annotation kind '" + name + "'");
}

GridShape grid_shape(Index height, Index width, Index stride)
{
    if (stride <= 0) throw Error("stride must be positive");
    return {(height + stride - 1) / stride, (width + stride - 1) / stride};
}

std::vector<std::string> validate_video(const VideoTensor& video)
{
    std::vector<std::string> violations;
    if (video.frames.empty()) {
        violations.emplace_back("video has no frames");
        return violations;
    }
    const Index h = video.height();
    const Index w = video.width();
    if (h <= 0 || w <= 0) violations.emplace_back("frame 1 has non-positive size");
    for (std::size_t j = 0; j < video.frames.size(); ++j) {
        const Frame& f = video.frames[j];
        // frames are reported 1-based
        if (f.height != h || f.width != w || f.pixels.rows() != h * w) {
            violations.push_back("dimension mismatch at frame " + std::to_string(j + 1));
            continue;
        }
        if (!f.pixels.allFinite() || (f.pixels < 0.0).any() || (f.pixels > 1.0).any())
            violations.push_back("channel out of range at frame " + std::to_string(j + 1));
    }
    return violations;
}

void require_valid_video(const VideoTensor& video)
{
    auto violations = validate_video(video);
    if (!violations.empty()) throw Error(violations.front());
}

Cell full_to_grid(Index pixel_row, Index pixel_col, Index stride, Index height, Index width)
{
    if (stride <= 0) throw Error("stride must be positive");
    if (pixel_row < 0 || pixel_col < 0 || pixel_row >= height || pixel_col >= width)
        throw Error("pixel (" + std::to_string(pixel_row) + "," + std::to_string(pixel_col) +
                    ") outside " + std::to_string(height) + "x" + std::to_string(width) + " image");
    return {pixel_row / stride, pixel_col / stride};
}

LabelGrid cell_labels(const LabelMask& mask, Index stride)
{
    const GridShape shape = grid_shape(mask.rows(), mask.cols(), stride);
    LabelGrid out(shape.rows, shape.cols);
    std::map<std::int32_t, Index> counts;
    for (Index gr = 0; gr < shape.rows; ++gr) {
        for (Index gc = 0; gc < shape.cols; ++gc) {
            counts.clear();
            const Index r1 = std::min(mask.rows(), (gr + 1) * stride);
            const Index c1 = std::min(mask.cols(), (gc + 1) * stride);
            for (Index r = gr * stride; r < r1; ++r)
                for (Index c = gc * stride; c < c1; ++c) ++counts[mask(r, c)];
            // map iterates ascending, so strict > keeps the smaller label on ties
            std::int32_t best = 0;
            Index best_count = -1;
            for (const auto& [label, n] : counts) {
                if (n > best_count) {
                    best = label;
                    best_count = n;
                }
            }
            out(gr, gc) = best;
        }
    }
    return out;
}

std::int32_t max_label(const LabelMask& mask)
{
    return mask.size() == 0 ? 0 : mask.maxCoeff();
}

}  // namespace retseg
