#pragma once

#include "retseg/core.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace retseg {

/// 8-bit PNG encode/decode. Channel values are quantized with round(v * 255).
std::vector<unsigned char> encode_png(const Frame& frame);
std::vector<unsigned char> encode_png(const LabelMask& mask);
Frame decode_png_rgb(const std::vector<unsigned char>& bytes);
LabelMask decode_png_gray(const std::vector<unsigned char>& bytes);

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
std::vector<unsigned char> read_file(const std::filesystem::path& path);

/// A video on disk: frame_NNNN.png (RGB), optional mask_NNNN.png (grayscale,
/// pixel value = label) and meta.txt with height, width, frame_count, K.
struct Sequence {
    std::string name;
    VideoTensor video;
    std::vector<LabelMask> masks;  // empty when no ground truth is stored
    std::int32_t object_count = 0;
};

std::string frame_file_name(Index frame);
std::string mask_file_name(Index frame);

void save_sequence(const std::filesystem::path& dir, const VideoTensor& video,
                   const std::vector<LabelMask>& masks, std::int32_t object_count);
Sequence load_sequence(const std::filesystem::path& dir);

void save_masks(const std::filesystem::path& dir, const std::vector<LabelMask>& masks);

/// Plain key=value text; '#' starts a comment, blank lines ignored.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);

}  // namespace retseg
