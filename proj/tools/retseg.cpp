// retseg: command-line front end (synth, train, eval, replay, serve).

#include "retseg/image_io.hpp"
#include "retseg/metrics.hpp"
#include "retseg/retrieval.hpp"
#include "retseg/service.hpp"
#include "retseg/session.hpp"
#include "retseg/synth.hpp"
#include "retseg/train.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <numeric>
#include <thread>

namespace fs = std::filesystem;
using namespace retseg;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int)
{
    g_stop = true;
}

std::ofstream open_output(const fs::path& path)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

Sequence load_with_gt(const fs::path& dir)
{
    if (!fs::is_directory(dir)) throw Error("data directory not found: " + dir.string());
    Sequence seq = load_sequence(dir);
    if (seq.masks.empty()) throw Error("sequence " + dir.string() + " has no ground-truth masks");
    return seq;
}

struct SynthArgs {
    std::string preset_name;
    fs::path spec_file;
    std::uint64_t seed = 0;
    fs::path out;
};

int run_synth(const SynthArgs& a)
{
    synth::SceneSpec spec;
    if (!a.spec_file.empty()) {
        // key=value file: preset (required), seed, frame_count, height, width
        const KeyValues kv = read_key_values(a.spec_file);
        const auto it = kv.find("preset");
        if (it == kv.end()) throw Error(a.spec_file.string() + ": missing key 'preset'");
        spec = synth::preset(it->second, kv.count("seed") ? std::stoull(kv.at("seed")) : a.seed);
        for (const auto& [key, value] : kv) {
            if (key == "frame_count") spec.frame_count = std::stoll(value);
            else if (key == "height") spec.height = std::stoll(value);
            else if (key == "width") spec.width = std::stoll(value);
            else if (key != "preset" && key != "seed") throw Error(a.spec_file.string() + ": unknown key '" + key + "'");
        }
    } else {
        spec = synth::preset(a.preset_name, a.seed);
    }
    const auto seq = synth::generate_sequence(spec);
    fs::create_directories(a.out);
    save_sequence(a.out, seq.video, seq.masks, static_cast<std::int32_t>(spec.objects.size()));
    std::cout << "wrote " << seq.video.frame_count() << " frames to " << a.out.string() << "\n";
    return 0;
}

struct TrainArgs {
    std::vector<fs::path> data;
    fs::path config;
    fs::path out;
    fs::path loss_csv;
    std::optional<std::uint64_t> seed;
    std::optional<Index> iterations;
};

int run_train(const TrainArgs& a)
{
    TrainConfig cfg;
    if (!a.config.empty()) cfg = parse_train_config(read_key_values(a.config));
    if (a.seed) cfg.seed = *a.seed;
    if (a.iterations) cfg.iterations = *a.iterations;
    std::vector<LabeledGrids<double>> grids;
    for (const auto& dir : a.data) {
        const Sequence seq = load_with_gt(dir);
        grids.push_back(prepare_labeled_grids<double>(seq.video, seq.masks, cfg.embed));
    }
    const auto start = std::chrono::steady_clock::now();
    const TrainResult result = train(grids, cfg);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    save_model(a.out, {result.params, cfg.embed});
    if (!a.loss_csv.empty()) {
        auto out = open_output(a.loss_csv);
        write_loss_curve(out, result.curve);
    }
    std::cout << "trained " << cfg.iterations << " iterations in " << seconds << " s; final loss "
              << (result.curve.empty() ? 0.0 : result.curve.back().total_loss) << "\n";
    return 0;
}

struct EvalArgs {
    fs::path data;
    fs::path model;
    std::string mode = "semisup";
    Index k = -1;
    bool adapt = true;
    Index cap = 50000;
    Index clicks = 20;
    Index seeds = 5;
    fs::path csv;
    fs::path masks_out;
};

int run_eval(const EvalArgs& a)
{
    const Model model = load_model(a.model);
    const Sequence seq = load_with_gt(a.data);
    const std::string name = a.data.filename().string();
    if (a.mode == "semisup") {
        SemiSupervisedConfig cfg;
        cfg.embed = model.embed;
        cfg.k = a.k > 0 ? a.k : 5;
        cfg.adapt = a.adapt;
        cfg.cap = a.cap;
        const auto result = segment_video_semisupervised(seq.video, seq.masks.front(), model.head, cfg);
        const SequenceScore score = evaluate_sequence(result.masks, seq.masks, std::max(1, seq.object_count), {true, -1});
        if (!a.csv.empty()) {
            auto out = open_output(a.csv);
            write_metrics_csv_header(out);
            write_metrics_csv(out, name, score);
        }
        if (!a.masks_out.empty()) save_masks(a.masks_out, result.masks);
        std::cout << name << " mean_J=" << score.mean_j << " mean_F=" << score.mean_f << " mean_JF=" << score.mean_jf
                  << "\n";
        return 0;
    }
    SessionConfig cfg;
    cfg.embed = model.embed;
    cfg.k = a.k > 0 ? a.k : 1;
    cfg.object_count = std::max(1, seq.object_count);
    if (a.clicks < cfg.object_count + 1) throw Error("budget below K+1");
    InteractiveSession session(seq.video, model.head, cfg);
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(a.seeds));
    std::iota(seeds.begin(), seeds.end(), std::uint64_t{0});
    const RobotReport report = run_robot(session, seq.masks, a.clicks, seeds);
    if (!a.csv.empty()) {
        auto out = open_output(a.csv);
        write_robot_csv(out, report);
    }
    if (!a.masks_out.empty()) save_masks(a.masks_out, session.predicted_masks());
    Index wrong_initial = 0, wrong_final = 0;
    for (const auto& r : report.runs) {
        wrong_initial += r.wrong_after_initial;
        wrong_final += r.wrong_final;
    }
    std::cout << name << " first_J=" << report.mean_curve.front().mean_j << " last_J=" << report.mean_curve.back().mean_j
              << " wrong_after_initial=" << wrong_initial << " wrong_final=" << wrong_final << "\n";
    return 0;
}

struct ReplayArgs {
    fs::path data;
    fs::path model;
    fs::path log;
    Index k = 1;
    fs::path masks_out;
};

int run_replay(const ReplayArgs& a)
{
    const Model model = load_model(a.model);
    if (!fs::is_directory(a.data)) throw Error("data directory not found: " + a.data.string());
    const Sequence seq = load_sequence(a.data);
    std::ifstream in(a.log);
    if (!in) throw Error("cannot read click log " + a.log.string());
    SessionConfig cfg;
    cfg.embed = model.embed;
    cfg.k = a.k;
    cfg.object_count = std::max(1, seq.object_count);
    InteractiveSession session(seq.video, model.head, cfg);
    const auto clicks = read_click_log(in);
    session.add_clicks(clicks);
    const auto masks = session.predicted_masks();
    if (!a.masks_out.empty()) save_masks(a.masks_out, masks);
    std::cout << "replayed " << clicks.size() << " clicks";
    if (!seq.masks.empty())
        std::cout << "; mean_J=" << evaluate_sequence(masks, seq.masks, cfg.object_count, {false, -1}).mean_j;
    std::cout << "\n";
    return 0;
}

int run_serve(const ServiceConfig& cfg)
{
    cfg.validate();
    if (!fs::is_directory(cfg.data_dir)) throw Error("data directory not found: " + cfg.data_dir.string());
    SessionService service(cfg, load_model(cfg.model_path));
    HttpFrontend frontend(service);
    const int port = frontend.bind(cfg.host, cfg.port);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::thread watcher([&] {
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        frontend.stop();
    });
    std::cout << "listening on http://" << cfg.host << ":" << port << std::endl;
    frontend.serve();
    g_stop = true;
    watcher.join();
    std::cout << "shut down" << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Video object segmentation by pixel-wise retrieval"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic sequence");
    auto* preset_opt = synth->add_option("--preset", synth_args.preset_name, "Preset name")
                           ->check(CLI::IsMember({"easy", "drift", "mixed"}));
    auto* spec_opt = synth->add_option("--spec", synth_args.spec_file, "key=value scene file")->check(CLI::ExistingFile);
    preset_opt->excludes(spec_opt);
    synth->add_option("--seed", synth_args.seed, "Random seed");
    synth->add_option("--out", synth_args.out, "Output directory")->required();

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train an embedding head");
    train_cmd->add_option("--data", train_args.data, "Sequence directories")->required();
    train_cmd->add_option("--config", train_args.config, "key=value training config")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", train_args.out, "Model file to write")->required();
    train_cmd->add_option("--loss-csv", train_args.loss_csv, "Loss curve CSV");
    std::uint64_t train_seed = 0;
    Index train_iters = 0;
    auto* seed_opt = train_cmd->add_option("--seed", train_seed, "Override config seed");
    auto* iters_opt = train_cmd->add_option("--iterations", train_iters, "Override iteration count");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Evaluate a model on one sequence");
    eval->add_option("--data", eval_args.data, "Sequence directory")->required();
    eval->add_option("--model", eval_args.model, "Model file")->required();
    eval->add_option("--mode", eval_args.mode, "semisup or robot")->check(CLI::IsMember({"semisup", "robot"}));
    eval->add_option("--k", eval_args.k, "Neighbors (default 5 semisup, 1 robot)")->check(CLI::PositiveNumber);
    eval->add_flag("--adapt,!--no-adapt", eval_args.adapt, "Online adaptation (semisup)");
    eval->add_option("--cap", eval_args.cap, "Reference pool cap")->check(CLI::PositiveNumber);
    eval->add_option("--clicks", eval_args.clicks, "Robot click budget");
    eval->add_option("--seeds", eval_args.seeds, "Robot runs (seeds 0..n-1)")->check(CLI::PositiveNumber);
    eval->add_option("--csv", eval_args.csv, "Metrics CSV");
    eval->add_option("--masks-out", eval_args.masks_out, "Directory for predicted masks");

    ReplayArgs replay_args;
    auto* replay = app.add_subcommand("replay", "Replay a click log");
    replay->add_option("--data", replay_args.data, "Sequence directory")->required();
    replay->add_option("--model", replay_args.model, "Model file")->required();
    replay->add_option("--log", replay_args.log, "Click log")->required();
    replay->add_option("--k", replay_args.k, "Neighbors")->check(CLI::PositiveNumber);
    replay->add_option("--masks-out", replay_args.masks_out, "Directory for final masks");

    ServiceConfig serve_cfg;
    auto* serve = app.add_subcommand("serve", "Run the session service");
    serve->add_option("--data", serve_cfg.data_dir, "Directory of sequence directories")->required();
    serve->add_option("--model", serve_cfg.model_path, "Model file")->required();
    serve->add_option("--host", serve_cfg.host, "Listen address");
    serve->add_option("--port", serve_cfg.port, "Listen port (0 = any)");
    serve->add_option("--max-sessions", serve_cfg.max_sessions, "Concurrent session limit");
    serve->add_option("--max-video-pixels", serve_cfg.max_video_pixels, "frames*height*width limit");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            if (synth_args.preset_name.empty() && synth_args.spec_file.empty())
                throw Error("synth needs --preset or --spec");
            return run_synth(synth_args);
        }
        if (train_cmd->parsed()) {
            if (seed_opt->count()) train_args.seed = train_seed;
            if (iters_opt->count()) train_args.iterations = train_iters;
            return run_train(train_args);
        }
        if (eval->parsed()) return run_eval(eval_args);
        if (replay->parsed()) return run_replay(replay_args);
        if (serve->parsed()) return run_serve(serve_cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
