#include "helpers.hpp"
#include "retseg/metrics.hpp"
#include "retseg/session.hpp"
#include "retseg/synth.hpp"
#include "retseg/train.hpp"

#include <doctest.h>

#include <sstream>
#include <thread>

using namespace retseg;
using namespace retseg::testing;

namespace {

SessionConfig small_config(Index k = 1, std::int32_t objects = 1)
{
    SessionConfig cfg;
    cfg.embed = {4, 1.0, 1.0};
    cfg.k = k;
    cfg.object_count = objects;
    return cfg;
}

const HeadParams<double>& small_head()
{
    static const auto p = head_init<double>(17, {11, 16, 8});
    return p;
}

void check_consistent(const InteractiveSession& s)
{
    const auto inc = s.grid_labels();
    const auto full = s.reclassify_all();
    REQUIRE(inc.size() == full.size());
    for (std::size_t j = 0; j < inc.size(); ++j) CHECK((inc[j] == full[j]).all());
    const auto masks = s.predicted_masks();
    const auto rebuilt = s.rebuild_masks();
    for (std::size_t j = 0; j < masks.size(); ++j) CHECK((masks[j] == rebuilt[j]).all());
}

}  // namespace

TEST_CASE("start: embeddings cached, no clicks, masks unavailable")
{
    std::mt19937_64 rng(1);
    InteractiveSession s(random_video(20, 16, 16, rng), small_head(), small_config());
    CHECK(s.embeddings().size() == 20);
    CHECK(s.click_log().empty());
    CHECK(s.forward_passes() == 1);
    CHECK_FALSE(s.masks().has_value());
    CHECK_FALSE(s.ready());
    CHECK_THROWS_WITH_AS(s.predicted_masks(), "insufficient references", Error);
}

TEST_CASE("identical inputs give identical embedding hashes")
{
    std::mt19937_64 rng(2);
    const auto v = random_video(4, 16, 16, rng);
    InteractiveSession a(v, small_head(), small_config());
    InteractiveSession b(v, small_head(), small_config());
    CHECK(a.embedding_hash() == b.embedding_hash());
}

TEST_CASE("first fg and bg clicks label a uniform object everywhere")
{
    synth::SceneSpec spec = synth::easy_preset(0);
    spec.frame_count = 6;
    const auto seq = synth::generate_sequence(spec);
    InteractiveSession s(seq.video, small_head(), small_config());
    // a pixel deep inside the disk on frame 0 and a far background pixel
    Index fr = 0, fc = 0;
    for (Index i = 0; i < seq.masks[0].size(); ++i)
        if (seq.masks[0].data()[i] == 1) {
            const Index r = i / 64, c = i % 64;
            if (r % 4 == 1 && c % 4 == 1 && (seq.masks[0].block(r - 1, c - 1, 4, 4) == 1).all()) {
                fr = r;
                fc = c;
                break;
            }
        }
    REQUIRE(seq.masks[0](fr, fc) == 1);
    s.add_click({0, fr, fc, 1, AnnotationKind::Click});
    CHECK_FALSE(s.ready());
    Index br = 0, bc = 0;
    for (Index i = 0; i < seq.masks[0].size(); ++i)
        if (seq.masks[0].data()[i] == 0) {
            br = i / 64;
            bc = i % 64;
            if (br % 4 == 1 && bc % 4 == 1 && (seq.masks[0].block(br - 1, bc - 1, 4, 4) == 0).all()) break;
        }
    s.add_click({0, br, bc, 0, AnnotationKind::Click});
    REQUIRE(s.ready());
    const auto grids = s.grid_labels();
    for (Index j = 0; j < 6; ++j) {
        const LabelGrid truth = cell_labels(seq.masks[j], 4);
        // every cell fully inside the disk is labeled as object
        for (Index r = 0; r < truth.rows(); ++r)
            for (Index c = 0; c < truth.cols(); ++c)
                if ((seq.masks[j].block(4 * r, 4 * c, 4, 4) == 1).all()) CHECK(grids[j](r, c) == 1);
    }
}

TEST_CASE("clicks: validation, duplicates, no-op clicks")
{
    std::mt19937_64 rng(3);
    InteractiveSession s(random_video(3, 16, 16, rng), small_head(), small_config(1, 2));
    CHECK_THROWS_AS(s.add_click({3, 0, 0, 1, AnnotationKind::Click}), Error);
    CHECK_THROWS_AS(s.add_click({0, 16, 0, 1, AnnotationKind::Click}), Error);
    CHECK_THROWS_AS(s.add_click({0, 0, 0, 3, AnnotationKind::Click}), Error);
    CHECK(s.click_log().empty());

    s.add_click({0, 1, 1, 0, AnnotationKind::Click});
    s.add_click({1, 9, 9, 1, AnnotationKind::Click});
    const auto before = s.predicted_masks();
    const auto dup = s.add_click({1, 9, 9, 1, AnnotationKind::Click});
    CHECK(dup.changed_cells == 0);
    const auto after = s.predicted_masks();
    for (std::size_t j = 0; j < before.size(); ++j) CHECK((before[j] == after[j]).all());
    CHECK(s.pool_size() == 3);
}

TEST_CASE("incremental labels and masks equal a full rebuild after every click")
{
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        std::mt19937_64 rng(seed);
        const Index k = 1 + static_cast<Index>(seed % 3);
        InteractiveSession s(random_video(4, 20, 17, rng), small_head(), small_config(k, 2));
        for (int i = 0; i < 15; ++i) {
            s.add_click({std::uniform_int_distribution<Index>(0, 3)(rng), std::uniform_int_distribution<Index>(0, 19)(rng),
                         std::uniform_int_distribution<Index>(0, 16)(rng), std::uniform_int_distribution<int>(0, 2)(rng),
                         AnnotationKind::Click});
            check_consistent(s);
        }
    }
}

TEST_CASE("click cost is one distance per grid cell and embeddings never change")
{
    std::mt19937_64 rng(4);
    InteractiveSession s(random_video(5, 16, 16, rng), small_head(), small_config(3, 1));
    const auto hash = s.embedding_hash();
    for (int i = 0; i < 30; ++i) {
        const auto r = s.add_click({i % 5, (i * 7) % 16, (i * 3) % 16, i % 2, AnnotationKind::Click});
        CHECK(r.distance_evaluations == s.total_cells());
    }
    CHECK(s.total_cells() == 5 * 16);
    CHECK(s.embedding_hash() == hash);
    CHECK(s.forward_passes() == 1);
}

TEST_CASE("replaying a click log reproduces the masks")
{
    std::mt19937_64 rng(5);
    const auto v = random_video(3, 16, 16, rng);
    InteractiveSession a(v, small_head(), small_config(1, 2));
    for (int i = 0; i < 12; ++i)
        a.add_click({i % 3, (i * 5) % 16, (i * 11) % 16, i % 3, i % 2 ? AnnotationKind::Click : AnnotationKind::ScribblePoint});
    std::stringstream log;
    write_click_log(log, a.click_log());
    InteractiveSession b(v, small_head(), small_config(1, 2));
    b.add_clicks(read_click_log(log));
    CHECK(b.click_log() == a.click_log());
    const auto ma = a.predicted_masks(), mb = b.predicted_masks();
    for (std::size_t j = 0; j < ma.size(); ++j) CHECK((ma[j] == mb[j]).all());

    std::stringstream bad("0 1 2\n");
    CHECK_THROWS_AS(read_click_log(bad), Error);
}

TEST_CASE("reset clears the pool and log")
{
    std::mt19937_64 rng(6);
    InteractiveSession s(random_video(2, 8, 8, rng), small_head(), small_config());
    s.add_click({0, 0, 0, 0, AnnotationKind::Click});
    s.add_click({1, 7, 7, 1, AnnotationKind::Click});
    const auto v = s.version();
    s.reset();
    CHECK(s.pool_size() == 0);
    CHECK(s.click_log().empty());
    CHECK(s.version() > v);
    CHECK_FALSE(s.ready());
}

TEST_CASE("scribbles become one annotation per traversed cell")
{
    const auto a = scribble_annotations(2, {{0, 0}, {0, 15}, {15, 15}}, 1, 4, 16, 16);
    CHECK(a.size() == 7);
    for (const auto& x : a) {
        CHECK(x.frame == 2);
        CHECK(x.kind == AnnotationKind::ScribblePoint);
    }
    CHECK(scribble_annotations(0, {}, 1, 4, 16, 16).empty());
}

TEST_CASE("adaptation mode keeps masks consistent with the pool")
{
    std::mt19937_64 rng(7);
    auto cfg = small_config(1, 1);
    cfg.adapt = true;
    cfg.adapt_k = 1;
    InteractiveSession s(random_video(3, 16, 16, rng), small_head(), cfg);
    s.add_click({0, 2, 2, 0, AnnotationKind::Click});
    s.add_click({0, 12, 12, 1, AnnotationKind::Click});
    CHECK(s.pool_size() > 2);
    check_consistent(s);
}

TEST_CASE("concurrent readers never see a half-applied click")
{
    std::mt19937_64 rng(8);
    InteractiveSession s(random_video(4, 16, 16, rng), small_head(), small_config(1, 1));
    s.add_click({0, 0, 0, 0, AnnotationKind::Click});
    s.add_click({0, 8, 8, 1, AnnotationKind::Click});
    std::atomic<bool> done{false};
    std::atomic<int> bad{0};
    std::thread reader([&] {
        while (!done) {
            const MaskSnapshot snap = s.snapshot();
            if (!snap.ready || snap.masks.size() != 4) ++bad;
        }
    });
    for (int i = 0; i < 40; ++i) s.add_click({i % 4, (i * 3) % 16, (i * 5) % 16, i % 2, AnnotationKind::Click});
    done = true;
    reader.join();
    CHECK(bad == 0);
    check_consistent(s);
}

TEST_CASE("robot protocol")
{
    synth::SceneSpec spec = synth::easy_preset(2);
    spec.frame_count = 5;
    const auto seq = synth::generate_sequence(spec);
    InteractiveSession s(seq.video, small_head(), small_config());

    SUBCASE("K=1 issues two initial clicks, reproducibly")
    {
        std::mt19937_64 r1(9), r2(9);
        const auto a = robot_initial(s, seq.masks, r1);
        CHECK(a.size() == 2);
        CHECK(a[0].label == 1);
        CHECK(a[1].label == 0);
        s.reset();
        CHECK(robot_initial(s, seq.masks, r2) == a);
    }
    SUBCASE("K=3 issues four initial clicks")
    {
        synth::SceneSpec three = synth::mixed_preset(1);
        three.frame_count = 4;
        while (three.objects.size() < 3) three.objects.push_back(three.objects.back());
        three.objects[2].position = {10.0, 50.0};
        three.objects[2].velocity = {0.0, 0.0};
        three.occlusions.clear();
        const auto seq3 = synth::generate_sequence(three);
        InteractiveSession s3(seq3.video, small_head(), small_config(1, 3));
        std::mt19937_64 r(1);
        CHECK(robot_initial(s3, seq3.masks, r).size() == 4);
    }
    SUBCASE("a missing object is an error")
    {
        InteractiveSession s2(seq.video, small_head(), small_config(1, 2));
        std::mt19937_64 r(1);
        CHECK_THROWS_AS(robot_initial(s2, seq.masks, r), Error);
    }
    SUBCASE("done when nothing is wrong; forced choice with one wrong pixel")
    {
        std::mt19937_64 r(3);
        robot_initial(s, seq.masks, r);
        const auto pred = s.predicted_masks();
        CHECK_FALSE(robot_step(s, pred, r).has_value());
        auto one_off = pred;
        one_off[2](5, 6) = pred[2](5, 6) == 0 ? 1 : 0;
        const auto click = robot_step(s, one_off, r);
        REQUIRE(click.has_value());
        CHECK(click->frame == 2);
        CHECK(click->row == 5);
        CHECK(click->col == 6);
        CHECK(click->label == one_off[2](5, 6));
    }
    SUBCASE("budget K+1 yields K+1 points; budget below is rejected")
    {
        const auto rep = run_robot(s, seq.masks, 2, {0, 1, 2, 3, 4});
        CHECK(rep.runs.size() == 5);
        for (const auto& run : rep.runs) CHECK(run.curve.size() == 2);
        CHECK(rep.mean_curve.size() == 2);
        CHECK(rep.mean_curve[1].clicks_per_frame == doctest::Approx(2.0 / 5.0));
        CHECK_THROWS_WITH_AS(run_robot(s, seq.masks, 1, {0}), "budget below K+1", Error);
        CHECK_THROWS_WITH_AS(run_robot(s, seq.masks, 0, {0}), "budget below K+1", Error);
    }
    SUBCASE("robot CSV layout")
    {
        const auto rep = run_robot(s, seq.masks, 3, {7});
        std::ostringstream out;
        write_robot_csv(out, rep);
        const std::string text = out.str();
        CHECK(text.rfind("seed,click,clicks_per_frame,mean_J\n7,1,0.200000,", 0) == 0);
        CHECK(text.find("\nmean,3,0.600000,") != std::string::npos);
    }
}

// Pixel stride: with coarser cells a click on the minority part of a mixed
// cell relabels the whole cell, and the count grows in about a third of steps.
TEST_CASE("robot: wrong-pixel count rarely grows after a click")
{
    TrainConfig tc;
    tc.iterations = 20;
    tc.dims = {11, 16, 8};
    tc.anchor_count = 64;
    tc.embed = {1, 1.0, 1.0};
    synth::SceneSpec held_out = synth::easy_preset(1002);
    held_out.frame_count = 5;
    const auto train_seq = synth::generate_sequence(held_out);
    const auto head = train({prepare_labeled_grids<double>(train_seq.video, train_seq.masks, tc.embed)}, tc).params;

    // hue drift away from the training appearance leaves real errors to fix
    const auto seq = synth::generate_sequence(synth::drift_preset(2));
    SessionConfig cfg;
    cfg.embed = tc.embed;
    InteractiveSession s(seq.video, head, cfg);
    {
        Index steps = 0, non_increasing = 0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            s.reset();
            std::mt19937_64 r(seed);
            robot_initial(s, seq.masks, r);
            Index wrong = count_wrong_pixels(s.predicted_masks(), seq.masks);
            for (int i = 0; i < 15; ++i) {
                if (!robot_step(s, seq.masks, r)) break;
                const Index now = count_wrong_pixels(s.predicted_masks(), seq.masks);
                ++steps;
                if (now <= wrong) ++non_increasing;
                wrong = now;
            }
        }
        REQUIRE(steps > 0);
        MESSAGE("non-increasing steps: " << non_increasing << " of " << steps);
        CHECK(static_cast<double>(non_increasing) >= 0.9 * static_cast<double>(steps));
    }
}
