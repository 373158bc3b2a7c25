#include "retseg/retrieval.hpp"

#include <cmath>

namespace retseg {

std::int32_t interpolated_label(const RowMatrix<double>& fractions, Index rows, Index cols, double grid_y,
                                double grid_x)
{
    const double y = std::clamp(grid_y, 0.0, static_cast<double>(rows - 1));
    const double x = std::clamp(grid_x, 0.0, static_cast<double>(cols - 1));
    const Index y0 = static_cast<Index>(std::floor(y));
    const Index x0 = static_cast<Index>(std::floor(x));
    const Index y1 = std::min(y0 + 1, rows - 1);
    const Index x1 = std::min(x0 + 1, cols - 1);
    const double wy = y - static_cast<double>(y0);
    const double wx = x - static_cast<double>(x0);
    std::int32_t best = 0;
    double best_share = -1.0;
    for (Index l = 0; l < fractions.cols(); ++l) {
        const double share = (1.0 - wy) * ((1.0 - wx) * fractions(y0 * cols + x0, l) + wx * fractions(y0 * cols + x1, l)) +
                             wy * ((1.0 - wx) * fractions(y1 * cols + x0, l) + wx * fractions(y1 * cols + x1, l));
        if (share > best_share) {
            best_share = share;
            best = static_cast<std::int32_t>(l);
        }
    }
    return best;
}

void upsample_region(const RowMatrix<double>& fractions, Index rows, Index cols, Index stride, LabelMask& mask,
                     Index row0, Index row1, Index col0, Index col1)
{
    const double s = static_cast<double>(stride);
    row0 = std::max<Index>(0, row0);
    col0 = std::max<Index>(0, col0);
    row1 = std::min(mask.rows(), row1);
    col1 = std::min(mask.cols(), col1);
    for (Index r = row0; r < row1; ++r) {
        const double gy = (static_cast<double>(r) + 0.5) / s - 0.5;
        for (Index c = col0; c < col1; ++c) {
            const double gx = (static_cast<double>(c) + 0.5) / s - 0.5;
            mask(r, c) = interpolated_label(fractions, rows, cols, gy, gx);
        }
    }
}

LabelMask upsample_labels(const RowMatrix<double>& fractions, Index rows, Index cols, Index stride, Index height,
                          Index width)
{
    if (fractions.rows() != rows * cols) throw Error("vote grid does not match its shape");
    if (grid_shape(height, width, stride) != GridShape{rows, cols})
        throw Error("vote grid is inconsistent with target size and stride");
    LabelMask mask(height, width);
    upsample_region(fractions, rows, cols, stride, mask, 0, height, 0, width);
    return mask;
}

RowMatrix<double> one_hot(const LabelGrid& labels)
{
    const Index slots = labels.size() == 0 ? 1 : labels.maxCoeff() + 1;
    RowMatrix<double> f = RowMatrix<double>::Zero(labels.size(), slots);
    for (Index i = 0; i < labels.size(); ++i) f(i, labels.data()[i]) = 1.0;
    return f;
}

SemiSupervisedResult segment_video_semisupervised(const VideoTensor& video, const LabelMask& first_frame_mask,
                                                  const HeadParams<double>& params, const SemiSupervisedConfig& config)
{
    require_valid_video(video);
    if (first_frame_mask.rows() != video.height() || first_frame_mask.cols() != video.width())
        throw Error("first-frame mask size does not match the video");
    const auto embeddings = embed_video(video, params, config.embed);
    const LabelGrid seed_labels = cell_labels(first_frame_mask, config.embed.stride);
    if (!(seed_labels > 0).any()) throw Error("no foreground reference");

    const EmbeddingGrid<double>& first = embeddings.front();
    ReferencePool<double> pool(first.dim());
    for (Index c = 0; c < first.cells(); ++c)
        pool.add(first.values.row(c), seed_labels.data()[c], {0, c / first.cols, c % first.cols}, Provenance::User);

    std::mt19937_64 rng(config.seed);
    SemiSupervisedResult result;
    result.masks.push_back(
        upsample_labels(one_hot(seed_labels), first.rows, first.cols, config.embed.stride, video.height(), video.width()));
    result.pool_sizes.push_back(pool.size());
    const Index cap = std::max(config.cap, pool.size());
    for (Index j = 1; j < video.frame_count(); ++j) {
        const auto classified = classify_grid(pool, embeddings[j], config.k);
        result.masks.push_back(upsample_labels(classified, video.height(), video.width()));
        if (config.adapt) online_adapt(pool, embeddings[j], classified, j, cap, rng);
        result.pool_sizes.push_back(pool.size());
    }
    return result;
}

}  // namespace retseg
