#include "retseg/train.hpp"

#include "retseg/detail/binary.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

namespace retseg {

TrainConfig parse_train_config(const KeyValues& kv, TrainConfig cfg)
{
    for (const auto& [key, value] : kv) {
        try {
            if (key == "alpha") cfg.alpha = std::stod(value);
            else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
            else if (key == "momentum") cfg.momentum = std::stod(value);
            else if (key == "iterations") cfg.iterations = std::stoll(value);
            else if (key == "anchor_count") cfg.anchor_count = std::stoll(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "hidden") cfg.dims.hidden = std::stoll(value);
            else if (key == "dim") cfg.dims.output = std::stoll(value);
            else if (key == "stride") cfg.embed.stride = std::stoll(value);
            else if (key == "lambda_space") cfg.embed.lambda_space = std::stod(value);
            else if (key == "lambda_time") cfg.embed.lambda_time = std::stod(value);
            else throw Error("unknown training config key '" + key + "'");
        } catch (const std::logic_error&) {
            throw Error("bad value '" + value + "' for training config key '" + key + "'");
        }
    }
    if (cfg.alpha < 0.0) throw Error("alpha must be non-negative");
    if (cfg.learning_rate < 0.0) throw Error("learning_rate must be non-negative");
    if (cfg.iterations < 0 || cfg.anchor_count <= 0 || cfg.dims.hidden <= 0 || cfg.dims.output <= 0 ||
        cfg.embed.stride <= 0)
        throw Error("training config sizes must be positive");
    return cfg;
}

TrainResult train(const std::vector<LabeledGrids<double>>& sequences, const TrainConfig& config)
{
    if (sequences.empty()) throw Error("training needs at least one sequence");
    for (const auto& s : sequences)
        if (s.frame_count() < 3) throw Error("training sequences need at least 3 frames");
    HeadDims dims = config.dims;
    dims.input = sequences.front().features.front().dim();

    std::mt19937_64 rng(config.seed);
    TrainResult result;
    result.params = head_init<double>(rng(), dims);
    Vector<double> theta = result.params.flatten();
    Vector<double> velocity = Vector<double>::Zero(theta.size());
    std::uniform_int_distribution<std::size_t> pick(0, sequences.size() - 1);

    for (Index it = 0; it < config.iterations; ++it) {
        // redraw when the chosen anchor frame has no foreground (e.g. occlusion)
        TripletBatch<double> batch;
        for (int attempt = 0;; ++attempt) {
            const auto& seq = sequences[pick(rng)];
            try {
                batch = sample_training_batch(seq, config.anchor_count, rng);
                break;
            } catch (const Error&) {
                if (attempt >= 1000) throw Error("could not draw a training batch with foreground and background");
            }
        }
        const auto step = proposed_loss_and_gradient(result.params, batch, config.alpha);
        if (!std::isfinite(step.report.total)) throw Error("training diverged at iteration " + std::to_string(it));
        result.curve.push_back({it, step.report.total, step.report.skipped_count()});
        velocity = config.momentum * velocity - config.learning_rate * step.gradient.flatten();
        theta += velocity;
        if (!theta.allFinite()) throw Error("training diverged at iteration " + std::to_string(it));
        result.params = HeadParams<double>::unflatten(dims, theta, result.params.activation);
    }
    return result;
}

namespace {
constexpr detail::Magic kModelMagic{'R', 'S', 'G', 'M', 'O', 'D', 'L', '\0'};
}

void write_model(std::ostream& out, const Model& model)
{
    detail::write_magic(out, kModelMagic);
    detail::write_pod<std::uint32_t>(out, kFormatVersion);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.embed.stride));
    detail::write_pod<double>(out, model.embed.lambda_space);
    detail::write_pod<double>(out, model.embed.lambda_time);
    write_head(out, model.head);
}

Model read_model(std::istream& in)
{
    detail::expect_magic(in, kModelMagic, "model");
    if (detail::read_pod<std::uint32_t>(in) != kFormatVersion) throw Error("unsupported model file version");
    Model model;
    model.embed.stride = detail::read_pod<std::uint32_t>(in);
    model.embed.lambda_space = detail::read_pod<double>(in);
    model.embed.lambda_time = detail::read_pod<double>(in);
    if (model.embed.stride <= 0 || !std::isfinite(model.embed.lambda_space) || !std::isfinite(model.embed.lambda_time))
        throw Error("model file has invalid embedding settings");
    model.head = read_head<double>(in);
    if (model.head.dims().input != kBaseFeatureDim + kSpatioTemporalDim)
        throw Error("model input width does not match the feature extractor");
    return model;
}

void save_model(const std::filesystem::path& path, const Model& model)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    write_model(out, model);
    if (!out) throw Error("write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read model " + path.string());
    return read_model(in);
}

void write_loss_curve(std::ostream& out, const std::vector<LossCurvePoint>& curve)
{
    out << "iteration,total_loss,skipped_anchor_count\n";
    out << std::setprecision(17);
    for (const auto& p : curve) out << p.iteration << ',' << p.total_loss << ',' << p.skipped_anchors << '\n';
}

}  // namespace retseg
