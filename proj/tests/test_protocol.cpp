#include "helpers.hpp"
#include "retseg/protocol.hpp"
#include "service_fixture.hpp"

#include <doctest.h>

using namespace retseg;
using namespace retseg::testing;
using nlohmann::json;

namespace {

LabelMask mask_from(const json& c)
{
    LabelMask m(c.at("height").get<Index>(), c.at("width").get<Index>());
    const auto& px = c.at("pixels");
    REQUIRE(static_cast<Index>(px.size()) == m.size());
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = px[i].get<std::int32_t>();
    return m;
}

LabelMask random_mask(Index h, Index w, std::int32_t labels, double flip, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::int32_t> pick(0, labels - 1);
    LabelMask m(h, w);
    std::int32_t cur = pick(rng);
    for (Index i = 0; i < m.size(); ++i) {
        if (u(rng) < flip) cur = pick(rng);
        m.data()[i] = cur;
    }
    return m;
}

}  // namespace

TEST_CASE("golden RLE cases encode and decode exactly")
{
    for (const auto& c : load_fixture("rle_cases.json")) {
        CAPTURE(c.at("name").get<std::string>());
        const LabelMask m = mask_from(c);
        const RleMask rle = rle_encode(m);
        CHECK(rle_to_json(rle) == c.at("rle"));
        CHECK(rle_from_json(c.at("rle")) == rle);
        CHECK((rle_decode(rle_from_json(c.at("rle"))) == m).all());
    }
}

TEST_CASE("golden invalid RLE payloads are rejected")
{
    for (const auto& c : load_fixture("rle_invalid.json")) {
        const std::string name = c.at("name");
        CAPTURE(name);
        std::string message;
        bool threw = false;
        try {
            (void)rle_decode(rle_from_json(c.at("rle")));
        } catch (const Error& e) {
            threw = true;
            message = e.what();
        }
        CHECK(threw);
        if (!c.at("message").is_null()) CHECK(message == c.at("message").get<std::string>());
    }
}

TEST_CASE("alternating labels give one run per pixel")
{
    LabelMask m(3, 5);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<std::int32_t>(i % 2);
    const RleMask rle = rle_encode(m);
    CHECK(rle.runs.size() == 15);
    for (const auto& [label, length] : rle.runs) CHECK(length == 1);
}

TEST_CASE("empty masks encode to no runs")
{
    const RleMask rle = rle_encode(LabelMask(0, 4));
    CHECK(rle.runs.empty());
    CHECK(rle_decode(rle).size() == 0);
}

TEST_CASE("RLE properties over random masks")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const Index h = std::uniform_int_distribution<Index>(1, 20)(rng);
        const Index w = std::uniform_int_distribution<Index>(1, 20)(rng);
        const LabelMask m = random_mask(h, w, 1 + trial % 4, trial % 2 ? 0.05 : 0.5, rng);
        const RleMask rle = rle_encode(m);
        // round trip, also through JSON text
        CHECK((rle_decode(rle) == m).all());
        CHECK(rle_from_json(json::parse(rle_to_json(rle).dump())) == rle);
        // canonical: positive lengths, no two neighbouring runs share a label, lengths sum to h*w
        Index total = 0;
        for (std::size_t i = 0; i < rle.runs.size(); ++i) {
            CHECK(rle.runs[i].second > 0);
            if (i > 0) CHECK(rle.runs[i].first != rle.runs[i - 1].first);
            total += rle.runs[i].second;
        }
        CHECK(total == h * w);
        // run count equals one plus the number of label changes in row-major order
        Index changes = 0;
        for (Index i = 1; i < m.size(); ++i) changes += m.data()[i] != m.data()[i - 1];
        CHECK(static_cast<Index>(rle.runs.size()) == changes + 1);
    }
}

TEST_CASE("error payload shape")
{
    CHECK(error_json("not_found", "gone") == json{{"error", {{"code", "not_found"}, {"message", "gone"}}}});
}
