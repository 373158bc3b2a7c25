#include "retseg/protocol.hpp"

namespace retseg {

RleMask rle_encode(const LabelMask& mask)
{
    RleMask rle;
    rle.height = mask.rows();
    rle.width = mask.cols();
    const Index n = mask.size();
    const std::int32_t* data = mask.data();
    for (Index i = 0; i < n;) {
        Index j = i + 1;
        while (j < n && data[j] == data[i]) ++j;
        rle.runs.emplace_back(data[i], j - i);
        i = j;
    }
    return rle;
}

LabelMask rle_decode(const RleMask& rle)
{
    if (rle.height < 0 || rle.width < 0) throw Error("RLE mask has negative dimensions");
    LabelMask mask(rle.height, rle.width);
    const Index n = rle.height * rle.width;
    Index at = 0;
    for (const auto& [label, length] : rle.runs) {
        if (length <= 0) throw Error("RLE run with non-positive length");
        if (label < 0) throw Error("RLE run with negative label");
        if (at + length > n) throw Error("RLE runs exceed height * width");
        std::fill(mask.data() + at, mask.data() + at + length, label);
        at += length;
    }
    if (at != n) throw Error("RLE runs cover " + std::to_string(at) + " of " + std::to_string(n) + " pixels");
    return mask;
}

nlohmann::json rle_to_json(const RleMask& rle)
{
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& [label, length] : rle.runs) {
        runs.push_back(label);
        runs.push_back(length);
    }
    return {{"height", rle.height}, {"width", rle.width}, {"runs", std::move(runs)}};
}

RleMask rle_from_json(const nlohmann::json& j)
{
    try {
        RleMask rle;
        rle.height = j.at("height").get<Index>();
        rle.width = j.at("width").get<Index>();
        const auto& runs = j.at("runs");
        if (!runs.is_array() || runs.size() % 2 != 0) throw Error("RLE runs must be a flat array of (label, length) pairs");
        for (std::size_t i = 0; i < runs.size(); i += 2)
            rle.runs.emplace_back(runs[i].get<std::int32_t>(), runs[i + 1].get<Index>());
        return rle;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed RLE mask: ") + e.what());
    }
}

nlohmann::json error_json(const std::string& code, const std::string& message)
{
    return {{"error", {{"code", code}, {"message", message}}}};
}

}  // namespace retseg
