// Acceptance run: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include "helpers.hpp"
#include "loss_fixtures.hpp"
#include "retseg/loss.hpp"
#include "retseg/metrics.hpp"
#include "retseg/retrieval.hpp"
#include "retseg/session.hpp"
#include "retseg/synth.hpp"
#include "retseg/train.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

using namespace retseg;
using namespace retseg::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t)
{
    return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// ---- 1 --------------------------------------------------------------------

// True when every anchor's hinge and both argmins are clear of ties by `gap`.
bool well_separated(const HeadParams<double>& p, const TripletBatch<double>& b, double gap)
{
    const RowMatrix<double> ae = head_apply(p, b.anchors).output;
    const RowMatrix<double> pe = head_apply(p, b.pool).output;
    for (Index a = 0; a < b.anchor_count(); ++a) {
        auto two_smallest = [&](const std::vector<Index>& members) {
            std::vector<double> d;
            for (Index m : members) d.push_back((ae.row(a) - pe.row(m)).squaredNorm());
            std::sort(d.begin(), d.end());
            return std::pair(d[0], d.size() > 1 ? d[1] : d[0] + 1.0);
        };
        const auto [p0, p1] = two_smallest(b.positives[a]);
        const auto [n0, n1] = two_smallest(b.negatives[a]);
        if (p1 - p0 < gap || n1 - n0 < gap) return false;
        if (std::abs(p0 - n0 + 0.3) < gap) return false;
    }
    return true;
}

Outcome gradient_correctness()
{
    const auto start = Clock::now();
    std::mt19937_64 rng(101);
    const double alpha = 0.3, h = 1e-5;
    int configs = 0, drawn = 0;
    double worst = 0.0;
    while (configs < 30 && drawn < 1000) {
        ++drawn;
        const Index in = 3 + static_cast<Index>(rng() % 3);
        const Index pool = 2 + static_cast<Index>(rng() % 7);  // 2..8
        const Index anchors = 1 + static_cast<Index>(rng() % 3);
        const auto params = head_init<double>(rng(), {in, 5, 4});
        const auto batch = random_batch(anchors, pool, in, rng);
        if (!well_separated(params, batch, 1e-3)) continue;
        const Vector<double> analytic = loss_gradient(params, batch, alpha).flatten();
        const Vector<double> theta = params.flatten();
        Vector<double> numeric(theta.size());
        for (Index i = 0; i < theta.size(); ++i) {
            Vector<double> tp = theta, tm = theta;
            tp(i) += h;
            tm(i) -= h;
            const double fp = proposed_loss(HeadParams<double>::unflatten(params.dims(), tp, params.activation), batch, alpha).total;
            const double fm = proposed_loss(HeadParams<double>::unflatten(params.dims(), tm, params.activation), batch, alpha).total;
            numeric(i) = (fp - fm) / (2 * h);
        }
        const double scale = std::max(analytic.norm() + numeric.norm(), 1e-8);
        worst = std::max(worst, (analytic - numeric).norm() / scale);
        ++configs;
    }
    const double secs = seconds_since(start);
    return {configs >= 20 && worst < 1e-4 && secs < 10.0,
            std::to_string(configs) + " configs, max rel err " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s"};
}

// ---- 2 --------------------------------------------------------------------

Outcome triplet_reduction()
{
    std::mt19937_64 rng(202);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Index in = 2 + trial % 5;
        const auto params = head_init<double>(rng(), {in, 6, 1 + trial % 7});
        const Index anchors = 1 + trial % 4;
        TripletBatch<double> b;
        b.anchors = random_matrix(anchors, in, rng);
        b.anchor_labels.assign(anchors, 1);
        b.pool = random_matrix(2, in, rng);
        b.pool_labels = {1, 0};
        b.pool_frames = {1, 2};
        b.anchor_frame = 0;
        partition_pools(b);
        std::vector<Triplet<double>> triplets;
        for (Index a = 0; a < anchors; ++a)
            triplets.push_back({b.anchors.row(a).transpose(), b.pool.row(0).transpose(), b.pool.row(1).transpose()});
        const double alpha = 0.1 * (trial % 6);
        const double ours = proposed_loss(params, b, alpha).total;
        const double standard = standard_triplet_loss(params, triplets, alpha);
        worst = std::max(worst, std::abs(ours - standard));
    }
    return {worst <= 1e-12, "100 cases, max |diff| " + fmt("%.2e", worst)};
}

// ---- 3 --------------------------------------------------------------------

Outcome retrieval_equivalence()
{
    std::mt19937_64 rng(303);
    int identical = 0;
    Index max_refs = 0, max_queries = 0;
    for (int inst = 0; inst < 50; ++inst) {
        const Index d = inst % 2 ? 128 : 4;
        const bool full = inst < 4;
        const Index n = full ? 5000 : std::uniform_int_distribution<Index>(1, d == 128 ? 1500 : 5000)(rng);
        const Index q = full ? 2000 : std::uniform_int_distribution<Index>(1, d == 128 ? 600 : 2000)(rng);
        max_refs = std::max(max_refs, n);
        max_queries = std::max(max_queries, q);
        const bool coarse = inst % 3 == 0;  // small integer lattice: many exact ties
        RowMatrix<double> refs(n, d), queries(q, d);
        std::uniform_int_distribution<int> lattice(-2, 2);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Index i = 0; i < refs.size(); ++i) refs.data()[i] = coarse ? lattice(rng) : normal(rng);
        for (Index i = 0; i < queries.size(); ++i) queries.data()[i] = coarse ? lattice(rng) : normal(rng);
        for (Index i = 1; i < n; i += 7) refs.row(i) = refs.row(i - 1);  // duplicates
        for (Index i = 0; i < q && n > 0; i += 5) queries.row(i) = refs.row(i % n);  // zero distances
        ReferencePool<double> pool(d);
        for (Index i = 0; i < n; ++i) pool.add(refs.row(i), static_cast<std::int32_t>(i % 3), {}, Provenance::User);
        const Index k = 1 + inst % 7;
        if (knn_screened(pool, queries, k) == knn_bruteforce(pool, queries, k)) ++identical;
    }
    return {identical == 50, std::to_string(identical) + "/50 identical (up to " + std::to_string(max_refs) + " refs, " +
                                 std::to_string(max_queries) + " queries, d in {4,128})"};
}

// ---- 4 --------------------------------------------------------------------

Outcome incremental_equals_rebuild()
{
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(400 + seed);
        SessionConfig cfg;
        cfg.embed = {4, 1.0, 1.0};
        cfg.k = 1 + static_cast<Index>(seed % 5);
        cfg.object_count = 1 + static_cast<std::int32_t>(seed % 3);
        InteractiveSession s(random_video(6, 24, 28, rng), head_init<double>(seed, {11, 16, 8}), cfg);
        for (int i = 0; i < 50; ++i)
            s.add_click({std::uniform_int_distribution<Index>(0, 5)(rng), std::uniform_int_distribution<Index>(0, 23)(rng),
                         std::uniform_int_distribution<Index>(0, 27)(rng),
                         std::uniform_int_distribution<std::int32_t>(0, cfg.object_count)(rng), AnnotationKind::Click});
        const auto inc = s.grid_labels();
        const auto full = s.reclassify_all();
        const auto masks = s.predicted_masks();
        const auto rebuilt = s.rebuild_masks();
        bool same = inc.size() == full.size();
        for (std::size_t j = 0; same && j < inc.size(); ++j)
            same = (inc[j] == full[j]).all() && (masks[j] == rebuilt[j]).all();
        ok += same;
    }
    return {ok == 10, std::to_string(ok) + "/10 trials identical after 50 clicks"};
}

// ---- shared training for 5, 6, 7 -------------------------------------------

// Heads are trained on held-out seeds of the easy preset (no appearance drift).
Model train_easy_head(std::uint64_t held_out_seed, Index stride, Index iterations)
{
    TrainConfig cfg;
    cfg.seed = held_out_seed;
    cfg.iterations = iterations;
    cfg.embed.stride = stride;
    const auto seq = synth::generate_sequence(synth::easy_preset(held_out_seed));
    const std::vector<LabeledGrids<double>> data{prepare_labeled_grids<double>(seq.video, seq.masks, cfg.embed)};
    return {train(data, cfg).params, cfg.embed};
}

SequenceScore semisup_score(const synth::GeneratedSequence& seq, const Model& model, bool adapt)
{
    SemiSupervisedConfig cfg;
    cfg.embed = model.embed;
    cfg.adapt = adapt;
    const auto result = segment_video_semisupervised(seq.video, seq.masks.front(), model.head, cfg);
    return evaluate_sequence(result.masks, seq.masks, 1, {true, -1});
}

constexpr Index kSemiStride = 2;

std::map<std::uint64_t, Model> g_semi_models;

const Model& semi_model(std::uint64_t s)
{
    if (!g_semi_models.count(s)) g_semi_models[s] = train_easy_head(1000 + s, kSemiStride, 500);
    return g_semi_models[s];
}

// ---- 5 --------------------------------------------------------------------

Outcome semisupervised_synthetic()
{
    double sum_j = 0, sum_f = 0, min_j = 1, min_f = 1, max_secs = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto start = Clock::now();
        g_semi_models.erase(s);
        const Model& model = semi_model(s);
        const auto seq = synth::generate_sequence(synth::easy_preset(s));
        const SequenceScore score = semisup_score(seq, model, true);
        max_secs = std::max(max_secs, seconds_since(start));
        sum_j += score.mean_j;
        sum_f += score.mean_f;
        min_j = std::min(min_j, score.mean_j);
        min_f = std::min(min_f, score.mean_f);
    }
    return {min_j >= 0.90 && min_f >= 0.85 && max_secs < 120.0,
            "stride " + std::to_string(kSemiStride) + ", mean J " + fmt("%.3f", sum_j / 5) + " (min " + fmt("%.3f", min_j) +
                "), mean F " + fmt("%.3f", sum_f / 5) + " (min " + fmt("%.3f", min_f) + "), slowest sequence " +
                fmt("%.1f", max_secs) + " s"};
}

// ---- 6 --------------------------------------------------------------------

Outcome adaptation_value()
{
    double gain = 0, with = 0, without = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Model& model = semi_model(s);
        const auto seq = synth::generate_sequence(synth::drift_preset(s));
        const double a = semisup_score(seq, model, true).mean_j;
        const double b = semisup_score(seq, model, false).mean_j;
        with += a;
        without += b;
        gain += a - b;
    }
    gain /= 5;
    return {gain >= 0.03, "mean J " + fmt("%.3f", with / 5) + " with vs " + fmt("%.3f", without / 5) +
                              " without, gain " + fmt("%.3f", gain)};
}

// ---- 7 --------------------------------------------------------------------

// Pixel stride, so a robot click labels exactly the pixel it was drawn from.
Outcome interactive_curve()
{
    std::vector<double> curve;
    Index wrong_initial = 0, wrong_final = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Model model = train_easy_head(1000 + s, 1, 100);
        const auto seq = synth::generate_sequence(synth::easy_preset(s));
        SessionConfig cfg;
        cfg.embed = model.embed;
        InteractiveSession session(seq.video, model.head, cfg);
        const RobotReport rep = run_robot(session, seq.masks, 20, {s});
        curve.resize(rep.mean_curve.size(), 0.0);
        for (std::size_t i = 0; i < rep.mean_curve.size(); ++i) curve[i] += rep.mean_curve[i].mean_j / 5;
        for (const auto& r : rep.runs) {
            wrong_initial += r.wrong_after_initial;
            wrong_final += r.wrong_final;
        }
    }
    const bool rising = !curve.empty() && curve.back() >= curve.front();
    const bool fewer = static_cast<double>(wrong_final) < 0.5 * static_cast<double>(wrong_initial);
    return {rising && fewer, "stride 1, J " + fmt("%.3f", curve.front()) + " -> " + fmt("%.3f", curve.back()) +
                                 ", wrong pixels " + std::to_string(wrong_initial) + " -> " + std::to_string(wrong_final)};
}

// ---- 8 --------------------------------------------------------------------

Outcome invariance_suite()
{
    std::mt19937_64 rng(808);
    std::vector<std::string> failed;
    auto suite = [&](const std::string& name, const std::function<bool()>& one_case) {
        for (int i = 0; i < 100; ++i)
            if (!one_case()) {
                failed.push_back(name);
                return;
            }
    };

    suite("loss permutation", [&] {
        const Index in = 3 + static_cast<Index>(rng() % 3);
        const auto p = head_init<double>(rng(), {in, 6, 4});
        auto b = random_batch(3, 8, in, rng);
        const double before = proposed_loss(p, b, 0.3).total;
        std::vector<Index> perm(static_cast<std::size_t>(b.pool.rows()));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        TripletBatch<double> c = b;
        for (Index i = 0; i < b.pool.rows(); ++i) {
            c.pool.row(i) = b.pool.row(perm[i]);
            c.pool_labels[i] = b.pool_labels[perm[i]];
            c.pool_frames[i] = b.pool_frames[perm[i]];
        }
        partition_pools(c);
        return std::abs(proposed_loss(p, c, 0.3).total - before) <= 1e-12 * std::max(1.0, before);
    });
    suite("alpha monotonicity", [&] {
        const auto p = head_init<double>(rng(), {4, 6, 4});
        const auto b = random_batch(4, 6, 4, rng);
        const double a1 = std::uniform_real_distribution<double>(0, 1)(rng);
        const double a2 = a1 + std::uniform_real_distribution<double>(0, 1)(rng);
        return proposed_loss(p, b, a1).total <= proposed_loss(p, b, a2).total;
    });
    suite("hinge non-negativity", [&] {
        const auto p = head_init<double>(rng(), {4, 6, 4});
        const auto b = random_batch(4, 6, 4, rng);
        const auto r = proposed_loss(p, b, std::uniform_real_distribution<double>(0, 1)(rng));
        return std::all_of(r.per_anchor.begin(), r.per_anchor.end(), [](const auto& t) { return t.value >= 0.0; }) &&
               r.total >= 0.0;
    });
    suite("retrieval scale invariance", [&] {
        const Index d = 1 + static_cast<Index>(rng() % 8), n = 1 + static_cast<Index>(rng() % 40);
        const Index k = 1 + static_cast<Index>(rng() % 7);
        const double c = std::ldexp(1.0, static_cast<int>(rng() % 9) - 4);  // power of two: exact scaling
        ReferencePool<double> a(d), s(d);
        const RowMatrix<double> refs = random_matrix(n, d, rng);
        for (Index i = 0; i < n; ++i) {
            const auto l = static_cast<std::int32_t>(rng() % 3);
            a.add(refs.row(i), l, {}, Provenance::User);
            s.add(c * refs.row(i), l, {}, Provenance::User);
        }
        const RowMatrix<double> q = random_matrix(5, d, rng);
        const auto na = knn_bruteforce(a, q, k);
        const auto ns = knn_bruteforce(s, RowMatrix<double>(c * q), k);
        for (std::size_t i = 0; i < na.size(); ++i) {
            if (na[i].size() != ns[i].size()) return false;
            for (std::size_t j = 0; j < na[i].size(); ++j)
                if (na[i][j].index != ns[i][j].index) return false;
            if (majority_vote(na[i], a).label != majority_vote(ns[i], s).label) return false;
        }
        return true;
    });
    suite("vote normalization", [&] {
        const Index d = 3, n = 1 + static_cast<Index>(rng() % 30), k = 1 + static_cast<Index>(rng() % 9);
        ReferencePool<double> pool(d);
        const RowMatrix<double> refs = random_matrix(n, d, rng);
        for (Index i = 0; i < n; ++i) pool.add(refs.row(i), static_cast<std::int32_t>(rng() % 4), {}, Provenance::User);
        const Vote v = classify_cell(pool, random_matrix(1, d, rng).row(0), k);
        double sum = 0;
        for (const auto& [l, f] : v.fractions) sum += f;
        return std::abs(sum - 1.0) < 1e-12;
    });
    auto random_mask = [&](Index h, Index w) {
        LabelMask m(h, w);
        const double p = std::uniform_real_distribution<double>(0, 1)(rng);
        std::bernoulli_distribution on(p);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = on(rng) ? 1 : 0;
        return m;
    };
    suite("J/F symmetry", [&] {
        const Index h = 4 + static_cast<Index>(rng() % 20), w = 4 + static_cast<Index>(rng() % 20);
        const LabelMask a = random_mask(h, w), b = random_mask(h, w);
        const Index tol = static_cast<Index>(rng() % 3);
        return jaccard(a, b, 1) == jaccard(b, a, 1) && boundary_f(a, b, 1, tol) == boundary_f(b, a, 1, tol);
    });
    suite("J/F bounds", [&] {
        const Index h = 4 + static_cast<Index>(rng() % 20), w = 4 + static_cast<Index>(rng() % 20);
        const LabelMask a = random_mask(h, w), b = random_mask(h, w);
        const double j = jaccard(a, b, 1), f = boundary_f(a, b, 1, static_cast<Index>(rng() % 3));
        return j >= 0 && j <= 1 && f >= 0 && f <= 1 && jaccard(a, a, 1) == 1.0 && boundary_f(a, a, 1, 0) == 1.0;
    });

    std::string detail = "7 suites x 100 cases";
    for (const auto& f : failed) detail += "; failed: " + f;
    return {failed.empty(), detail};
}

// ---- 9 --------------------------------------------------------------------

Outcome click_cost()
{
    std::mt19937_64 rng(909);
    SessionConfig cfg;
    cfg.k = 3;
    cfg.object_count = 2;
    InteractiveSession s(random_video(7, 30, 26, rng), head_init<double>(9, {11, 16, 8}), cfg);
    Index mismatches = 0;
    for (int i = 0; i < 80; ++i) {
        const auto r = s.add_click({i % 7, (i * 13) % 30, (i * 7) % 26, i % 3, AnnotationKind::Click});
        mismatches += r.distance_evaluations != s.total_cells();
    }
    return {mismatches == 0 && s.pool_size() > 1,
            "80 clicks, pool 1.." + std::to_string(s.pool_size()) + ", " + std::to_string(s.total_cells()) +
                " cells, mismatches " + std::to_string(mismatches)};
}

}  // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"triplet reduction", triplet_reduction},
        {"retrieval oracle equivalence", retrieval_equivalence},
        {"incremental equals rebuild", incremental_equals_rebuild},
        {"semi-supervised synthetic", semisupervised_synthetic},
        {"online adaptation value", adaptation_value},
        {"interactive curve", interactive_curve},
        {"invariance suite", invariance_suite},
        {"incremental click cost", click_cost},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
