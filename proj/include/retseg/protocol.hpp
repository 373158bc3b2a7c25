#pragma once

#include "retseg/core.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace retseg {

/// Row-major run-length encoding of a label mask. Runs alternate freely
/// between labels; adjacent runs never share a label and every length is
/// positive, so the encoding of a mask is unique.
struct RleMask {
    Index height = 0;
    Index width = 0;
    std::vector<std::pair<std::int32_t, Index>> runs;  // (label, length)

    friend bool operator==(const RleMask&, const RleMask&) = default;
};

RleMask rle_encode(const LabelMask& mask);
/// Throws Error on zero-length runs, negative labels, or a pixel total
/// different from height * width.
LabelMask rle_decode(const RleMask& rle);

/// {"height": H, "width": W, "runs": [label, length, label, length, ...]}
nlohmann::json rle_to_json(const RleMask& rle);
RleMask rle_from_json(const nlohmann::json& j);

/// {"error": {"code": code, "message": message}}
nlohmann::json error_json(const std::string& code, const std::string& message);

}  // namespace retseg
