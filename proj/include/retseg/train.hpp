#pragma once

#include "retseg/embed.hpp"
#include "retseg/image_io.hpp"
#include "retseg/loss.hpp"

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <vector>

namespace retseg {

struct TrainConfig {
    double alpha = 0.3;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    Index iterations = 500;
    Index anchor_count = 256;
    std::uint64_t seed = 0;
    HeadDims dims{};
    EmbedConfig embed{2, 1.0, 1.0};
};

/// Keys: alpha, learning_rate, momentum, iterations, anchor_count, seed,
/// hidden, dim, stride, lambda_space, lambda_time. Unknown keys are errors.
TrainConfig parse_train_config(const KeyValues& kv, TrainConfig base = {});

struct LossCurvePoint {
    Index iteration = 0;
    double total_loss = 0.0;
    Index skipped_anchors = 0;
};

struct TrainResult {
    HeadParams<double> params;
    std::vector<LossCurvePoint> curve;
};

/// SGD with momentum over freshly sampled triplet batches. Deterministic for a
/// given config.seed; aborts with Error if the loss becomes non-finite.
TrainResult train(const std::vector<LabeledGrids<double>>& sequences, const TrainConfig& config);

/// A trained head plus the input settings it was trained with.
struct Model {
    HeadParams<double> head;
    EmbedConfig embed;
};

/// magic "RSGMODL", u32 version, u32 stride, f64 lambda_space, f64
/// lambda_time, then the head record (see write_head).
void write_model(std::ostream& out, const Model& model);
Model read_model(std::istream& in);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

/// CSV: iteration,total_loss,skipped_anchor_count
void write_loss_curve(std::ostream& out, const std::vector<LossCurvePoint>& curve);

}  // namespace retseg
