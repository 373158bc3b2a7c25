#pragma once

#include "retseg/core.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace retseg::synth {

enum class Shape { Disk, Rectangle };

/// Positions and velocities are (x, y) = (column, row) in pixels.
struct ObjectSpec {
    Shape shape = Shape::Disk;
    Eigen::Vector2d position{0.0, 0.0};
    Eigen::Vector2d velocity{0.0, 0.0};
    Eigen::Vector3d color{1.0, 1.0, 1.0};
    /// Hue rotation per frame, as a fraction of the full hue circle.
    double hue_drift = 0.0;
    /// Disk radius, or rectangle half-height.
    double size = 4.0;
    /// Rectangle half-width / half-height.
    double aspect = 1.0;
};

enum class BackgroundKind { Solid, TwoTone, Noise };

struct Background {
    BackgroundKind kind = BackgroundKind::Solid;
    Eigen::Vector3d color{0.0, 0.0, 0.0};
    Eigen::Vector3d second_color{0.5, 0.5, 0.5};  // right half for TwoTone
    double noise_amplitude = 0.0;
};

struct Occlusion {
    std::int32_t object_id = 1;
    Index start_frame = 0;
    Index end_frame = 0;  // inclusive
};

struct SceneSpec {
    std::uint64_t seed = 0;
    Index frame_count = 20;
    Index height = 64;
    Index width = 64;
    std::vector<ObjectSpec> objects;  // object id = position + 1
    Background background;
    std::vector<Occlusion> occlusions;
};

struct GeneratedSequence {
    VideoTensor video;
    std::vector<LabelMask> masks;
};

/// Hue-rotated color of an object at a given frame (HSV rotation; saturation
/// and value are preserved).
Eigen::Vector3d object_color(const ObjectSpec& object, Index frame);

/// Renders objects back to front in id order, hard edges, colors quantized to
/// 1/255 so the result survives an 8-bit round trip unchanged.
GeneratedSequence generate_sequence(const SceneSpec& spec);

/// One high-contrast disk on a dark solid background.
SceneSpec easy_preset(std::uint64_t seed);

/// One disk whose hue rotates a third of the circle over 20 frames, ending
/// closer to the background color than to its starting color.
SceneSpec drift_preset(std::uint64_t seed);

/// Two to three objects, mixed shapes and backgrounds; used for training.
SceneSpec mixed_preset(std::uint64_t seed);

/// Presets by name: "easy", "drift", "mixed".
SceneSpec preset(const std::string& name, std::uint64_t seed);

}  // namespace retseg::synth
