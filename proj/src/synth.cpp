#include "retseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace retseg::synth {

namespace {

Eigen::Vector3d rgb_to_hsv(const Eigen::Vector3d& rgb)
{
    const double mx = rgb.maxCoeff();
    const double mn = rgb.minCoeff();
    const double delta = mx - mn;
    double h = 0.0;
    if (delta > 0.0) {
        if (mx == rgb.x())
            h = std::fmod((rgb.y() - rgb.z()) / delta, 6.0);
        else if (mx == rgb.y())
            h = (rgb.z() - rgb.x()) / delta + 2.0;
        else
            h = (rgb.x() - rgb.y()) / delta + 4.0;
        h /= 6.0;
        if (h < 0.0) h += 1.0;
    }
    const double s = mx > 0.0 ? delta / mx : 0.0;
    return {h, s, mx};
}

Eigen::Vector3d hsv_to_rgb(const Eigen::Vector3d& hsv)
{
    const double h6 = hsv.x() * 6.0;
    const double s = hsv.y();
    const double v = hsv.z();
    const int sector = static_cast<int>(std::floor(h6)) % 6;
    const double f = h6 - std::floor(h6);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - f * s);
    const double t = v * (1.0 - (1.0 - f) * s);
    switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
    }
}

double quantize(double v)
{
    return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

bool covers(const ObjectSpec& o, const Eigen::Vector2d& center, double x, double y)
{
    const double dx = x - center.x();
    const double dy = y - center.y();
    if (o.shape == Shape::Disk) return dx * dx + dy * dy <= o.size * o.size;
    return std::abs(dx) <= o.size * o.aspect && std::abs(dy) <= o.size;
}

bool occluded(const SceneSpec& spec, std::int32_t id, Index frame)
{
    return std::any_of(spec.occlusions.begin(), spec.occlusions.end(), [&](const Occlusion& e) {
        return e.object_id == id && frame >= e.start_frame && frame <= e.end_frame;
    });
}

void check_spec(const SceneSpec& spec)
{
    if (spec.frame_count <= 0) throw Error("scene has zero frames");
    if (spec.height <= 0 || spec.width <= 0) throw Error("scene has non-positive size");
    if (spec.objects.size() > 255) throw Error("too many objects");
    for (std::size_t i = 0; i < spec.objects.size(); ++i) {
        const ObjectSpec& o = spec.objects[i];
        const double half_w = o.shape == Shape::Disk ? o.size : o.size * o.aspect;
        if (o.size <= 0.0 || o.aspect <= 0.0) throw Error("object " + std::to_string(i + 1) + " has non-positive size");
        if (2.0 * o.size >= static_cast<double>(spec.height) || 2.0 * half_w >= static_cast<double>(spec.width))
            throw Error("object " + std::to_string(i + 1) + " is larger than the frame");
        if ((o.color.array() < 0.0).any() || (o.color.array() > 1.0).any())
            throw Error("object " + std::to_string(i + 1) + " color out of range");
    }
    for (const Occlusion& e : spec.occlusions) {
        if (e.object_id < 1 || e.object_id > static_cast<std::int32_t>(spec.objects.size()))
            throw Error("occlusion refers to unknown object " + std::to_string(e.object_id));
    }
}

Eigen::Vector3d background_at(const Background& bg, Index col, Index width, std::mt19937_64& rng)
{
    switch (bg.kind) {
    case BackgroundKind::Solid: return bg.color;
    case BackgroundKind::TwoTone: return col < width / 2 ? bg.color : bg.second_color;
    case BackgroundKind::Noise: {
        std::uniform_real_distribution<double> u(-bg.noise_amplitude, bg.noise_amplitude);
        return bg.color + Eigen::Vector3d(u(rng), u(rng), u(rng));
    }
    }
    return bg.color;
}

}  // namespace

Eigen::Vector3d object_color(const ObjectSpec& object, Index frame)
{
    if (object.hue_drift == 0.0 || frame == 0) return object.color;
    Eigen::Vector3d hsv = rgb_to_hsv(object.color);
    hsv.x() = std::fmod(hsv.x() + object.hue_drift * static_cast<double>(frame), 1.0);
    if (hsv.x() < 0.0) hsv.x() += 1.0;
    return hsv_to_rgb(hsv);
}

GeneratedSequence generate_sequence(const SceneSpec& spec)
{
    check_spec(spec);
    GeneratedSequence out;
    out.video.frames.reserve(static_cast<std::size_t>(spec.frame_count));
    out.masks.reserve(static_cast<std::size_t>(spec.frame_count));
    for (Index t = 0; t < spec.frame_count; ++t) {
        std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(t));
        Frame frame(spec.height, spec.width);
        LabelMask mask = LabelMask::Zero(spec.height, spec.width);
        for (Index r = 0; r < spec.height; ++r)
            for (Index c = 0; c < spec.width; ++c) {
                const Eigen::Vector3d bg = background_at(spec.background, c, spec.width, rng);
                for (int ch = 0; ch < 3; ++ch) frame.at(r, c)(ch) = quantize(bg(ch));
            }
        for (std::size_t i = 0; i < spec.objects.size(); ++i) {
            const auto id = static_cast<std::int32_t>(i + 1);
            if (occluded(spec, id, t)) continue;
            const ObjectSpec& o = spec.objects[i];
            const Eigen::Vector2d center = o.position + o.velocity * static_cast<double>(t);
            const Eigen::Vector3d color = object_color(o, t);
            for (Index r = 0; r < spec.height; ++r)
                for (Index c = 0; c < spec.width; ++c) {
                    if (!covers(o, center, static_cast<double>(c), static_cast<double>(r))) continue;
                    for (int ch = 0; ch < 3; ++ch) frame.at(r, c)(ch) = quantize(color(ch));
                    mask(r, c) = id;
                }
        }
        out.video.frames.push_back(std::move(frame));
        out.masks.push_back(std::move(mask));
    }
    return out;
}

namespace {

// Start and velocity such that the object's center stays at least `margin`
// pixels inside the frame for all frames.
void random_trajectory(ObjectSpec& o, const SceneSpec& spec, double margin, double max_speed,
                       std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> speed(-max_speed, max_speed);
    const double span = static_cast<double>(spec.frame_count - 1);
    for (int axis = 0; axis < 2; ++axis) {
        const double extent = static_cast<double>(axis == 0 ? spec.width : spec.height) - 1.0;
        double v = std::round(speed(rng) * 4.0) / 4.0;
        // shrink speed until the path fits
        while (std::abs(v) * span > extent - 2.0 * margin && v != 0.0) v *= 0.5;
        const double lo = v >= 0.0 ? margin : margin - v * span;
        const double hi = v >= 0.0 ? extent - margin - v * span : extent - margin;
        std::uniform_real_distribution<double> start(lo, std::max(lo, hi));
        o.position(axis) = std::round(start(rng));
        o.velocity(axis) = v;
    }
}

}  // namespace

SceneSpec easy_preset(std::uint64_t seed)
{
    SceneSpec spec;
    spec.seed = seed;
    std::mt19937_64 rng(seed ^ 0xEA5Eull);
    ObjectSpec disk;
    disk.shape = Shape::Disk;
    disk.size = 11.0;
    disk.color = {0.95, 0.85, 0.2};
    random_trajectory(disk, spec, disk.size + 1.0, 1.0, rng);
    spec.objects.push_back(disk);
    spec.background.kind = BackgroundKind::Solid;
    spec.background.color = {0.1, 0.1, 0.15};
    return spec;
}

SceneSpec drift_preset(std::uint64_t seed)
{
    SceneSpec spec;
    spec.seed = seed;
    std::mt19937_64 rng(seed ^ 0xD21F7ull);
    ObjectSpec disk;
    disk.shape = Shape::Disk;
    disk.size = 11.0;
    disk.color = {0.9, 0.1, 0.1};
    disk.hue_drift = 1.0 / (3.0 * static_cast<double>(spec.frame_count - 1));
    random_trajectory(disk, spec, disk.size + 1.0, 1.0, rng);
    spec.objects.push_back(disk);
    spec.background.kind = BackgroundKind::Solid;
    spec.background.color = {0.1, 0.5, 0.6};
    return spec;
}

SceneSpec mixed_preset(std::uint64_t seed)
{
    SceneSpec spec;
    spec.seed = seed;
    std::mt19937_64 rng(seed ^ 0x3141ull);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int count = 2 + static_cast<int>(rng() % 2);
    for (int i = 0; i < count; ++i) {
        ObjectSpec o;
        o.shape = (rng() % 2) ? Shape::Disk : Shape::Rectangle;
        o.size = 6.0 + std::round(unit(rng) * 5.0);
        o.aspect = o.shape == Shape::Rectangle ? 0.6 + unit(rng) * 0.8 : 1.0;
        o.color = Eigen::Vector3d(unit(rng), unit(rng), unit(rng));
        o.hue_drift = unit(rng) < 0.5 ? unit(rng) * 0.02 : 0.0;
        random_trajectory(o, spec, o.size * std::max(1.0, o.aspect) + 1.0, 1.5, rng);
        spec.objects.push_back(o);
    }
    const auto kind = rng() % 3;
    spec.background.kind = kind == 0 ? BackgroundKind::Solid : kind == 1 ? BackgroundKind::TwoTone : BackgroundKind::Noise;
    spec.background.color = Eigen::Vector3d(unit(rng), unit(rng), unit(rng)) * 0.6;
    spec.background.second_color = Eigen::Vector3d(unit(rng), unit(rng), unit(rng)) * 0.6;
    spec.background.noise_amplitude = 0.05;
    if (unit(rng) < 0.5) {
        const auto start = static_cast<Index>(5 + rng() % 8);
        spec.occlusions.push_back({1, start, start + 2});
    }
    return spec;
}

SceneSpec preset(const std::string& name, std::uint64_t seed)
{
    if (name == "easy") return easy_preset(seed);
    if (name == "drift") return drift_preset(seed);
    if (name == "mixed") return mixed_preset(seed);
    throw Error("unknown preset '" + name + "' (expected easy, drift or mixed)");
}

}  // namespace retseg::synth
