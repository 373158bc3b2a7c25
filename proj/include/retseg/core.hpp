#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace retseg {

using Index = Eigen::Index;

/// Error raised for contract violations on user-facing inputs.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One RGB frame. Pixel (r, c) lives at row r * width + c of `pixels`;
/// the three columns are R, G, B in [0, 1].
struct Frame {
    using Pixels = Eigen::Array<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

    Index height = 0;
    Index width = 0;
    Pixels pixels;

    Frame() = default;
    Frame(Index h, Index w) : height(h), width(w), pixels(Pixels::Zero(h * w, 3)) {}

    auto at(Index r, Index c) { return pixels.row(r * width + c); }
    auto at(Index r, Index c) const { return pixels.row(r * width + c); }

    double intensity(Index r, Index c) const { return pixels.row(r * width + c).mean(); }
};

struct VideoTensor {
    std::vector<Frame> frames;

    Index frame_count() const { return static_cast<Index>(frames.size()); }
    Index height() const { return frames.empty() ? 0 : frames.front().height; }
    Index width() const { return frames.empty() ? 0 : frames.front().width; }
};

/// Integer label grid, 0 = background, 1..K = objects. Used both at full
/// resolution (LabelMask) and on the stride grid.
using LabelGrid = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelMask = LabelGrid;

enum class AnnotationKind : std::uint8_t { Click, ScribblePoint, MaskPixel };

std::string to_string(AnnotationKind kind);
AnnotationKind annotation_kind_from_string(const std::string& name);

struct Annotation {
    Index frame = 0;
    Index row = 0;
    Index col = 0;
    std::int32_t label = 0;
    AnnotationKind kind = AnnotationKind::Click;

    bool operator==(const Annotation&) const = default;
};

struct GridCoord {
    Index frame = 0;
    Index row = 0;
    Index col = 0;

    bool operator==(const GridCoord&) const = default;
};

/// Stride-grid extent: (ceil(height / stride), ceil(width / stride)).
struct GridShape {
    Index rows = 0;
    Index cols = 0;

    Index cells() const { return rows * cols; }
    bool operator==(const GridShape&) const = default;
};

GridShape grid_shape(Index height, Index width, Index stride);

/// Empty result means the video is well formed.
std::vector<std::string> validate_video(const VideoTensor& video);

/// Throws Error carrying the first violation.
void require_valid_video(const VideoTensor& video);

struct Cell {
    Index row = 0;
    Index col = 0;

    bool operator==(const Cell&) const = default;
};

/// floor division onto the stride lattice; throws on out-of-bounds pixels.
Cell full_to_grid(Index pixel_row, Index pixel_col, Index stride, Index height, Index width);

/// Majority pixel label inside each stride x stride cell; exact count ties
/// go to the smaller label.
LabelGrid cell_labels(const LabelMask& mask, Index stride);

std::int32_t max_label(const LabelMask& mask);

}  // namespace retseg
