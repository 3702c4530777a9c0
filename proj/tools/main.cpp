// Command-line front end: synthetic clip generation, training, stylization,
// evaluation, the four-arm ablation driver and a gradient self-check.
// Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime
// failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "tssm/checkpoint.hpp"
#include "tssm/losses.hpp"
#include "tssm/metrics.hpp"
#include "tssm/rng.hpp"
#include "tssm/train.hpp"
#include "tssm/video.hpp"

namespace fs = std::filesystem;
using namespace tssm;

namespace {

std::pair<int, int> parse_size(const std::string& size) {
    const std::size_t x = size.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= size.size()) {
        throw ConfigError("--size expects WIDTHxHEIGHT, got '" + size + "'");
    }
    try {
        std::size_t used = 0;
        const int w = std::stoi(size.substr(0, x), &used);
        if (used != x) throw std::invalid_argument("trailing");
        const int h = std::stoi(size.substr(x + 1), &used);
        if (used != size.size() - x - 1) throw std::invalid_argument("trailing");
        return {w, h};
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("--size expects WIDTHxHEIGHT, got '" + size + "'");
    }
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

struct SynthOpts {
    std::string kind;
    int frames = 16;
    std::string size = "32x32";
    std::uint64_t seed = 0;
    std::string out;
};

int run_synth(const SynthOpts& opts) {
    const auto [w, h] = parse_size(opts.size);
    const SynthKind kind = parse_synth_kind(opts.kind);
    VideoClip clip = synth_video(kind, opts.frames, h, w, opts.seed);
    ClipManifest manifest{opts.frames, h, w, synth_kind_name(kind), opts.seed};
    write_clip_dir(opts.out, clip, manifest);
    std::printf("wrote %d frames (%dx%d) to %s\n", opts.frames, w, h, opts.out.c_str());
    return 0;
}

struct TrainOpts {
    std::string clip;
    std::string prompt;
    std::string config_file;
    std::string checkpoint;
    int iters = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool per_frame = false;
    float lambda3 = -1.0f;
    float lambda4 = -1.0f;
    int ssm_layers = -1;
};

TrainConfig resolve_train_config(const TrainOpts& opts) {
    TrainConfig config;
    if (!opts.config_file.empty()) config = parse_config_file(opts.config_file);
    // explicit flags win over the config file
    if (opts.iters >= 0) config.iters = opts.iters;
    if (opts.seed_set) config.seed = opts.seed;
    if (opts.per_frame) config.per_frame_mode = true;
    if (opts.lambda3 >= 0.0f) config.weights.lambda3 = opts.lambda3;
    if (opts.lambda4 >= 0.0f) config.weights.lambda4 = opts.lambda4;
    if (opts.ssm_layers > 0) config.ssm_layers = opts.ssm_layers;
    return config;
}

int run_train(const TrainOpts& opts) {
    const TrainConfig config = resolve_train_config(opts);
    VideoClip clip = read_clip_dir(opts.clip);
    TrainResult result = train(clip, opts.prompt, config);

    const fs::path ckpt_path(opts.checkpoint);
    if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
    save_checkpoint(ckpt_path, result.params);

    std::string log_text;
    for (const TrainLogEntry& entry : result.log) log_text += entry.line() + "\n";
    write_text_file(opts.checkpoint + ".log", log_text);

    std::printf("trained %d iterations; checkpoint %s (%lld bytes), log %s.log\n", config.iters,
                opts.checkpoint.c_str(), static_cast<long long>(model_size_bytes(result.params)),
                opts.checkpoint.c_str());
    return 0;
}

struct StylizeOpts {
    std::string clip;
    std::string prompt;
    std::string checkpoint;
    std::string out;
    bool per_frame = false;
};

int run_stylize(const StylizeOpts& opts) {
    ModelParams params = load_checkpoint(opts.checkpoint);
    ClipManifest manifest;
    VideoClip clip = read_clip_dir(opts.clip, &manifest);
    if (clip.height() % 2 != 0 || clip.width() % 2 != 0) {
        throw ConfigError("stylize: clip " + std::to_string(clip.width()) + "x" +
                          std::to_string(clip.height()) + " has odd dims; checkpoint expects " +
                          std::to_string(params.config.channels) +
                          "-channel features at half resolution");
    }
    VideoClip stylized = stylize(clip, opts.prompt, params, opts.per_frame);
    write_clip_dir(opts.out, stylized, manifest);
    std::printf("stylized %d frames into %s\n", stylized.length(), opts.out.c_str());
    return 0;
}

struct EvalOpts {
    std::string clip;
    std::string prompt;
    std::string report;
    std::string checkpoint;  // optional; provides model_size_bytes
};

int run_eval(const EvalOpts& opts) {
    VideoClip clip = read_clip_dir(opts.clip);
    int embed_dim = 64;
    std::int64_t size_bytes = 0;
    if (!opts.checkpoint.empty()) {
        ModelParams params = load_checkpoint(opts.checkpoint);
        embed_dim = params.config.embed_dim;
        size_bytes = model_size_bytes(params);
    }
    const TextEmbedding e_style = encode_text(opts.prompt, embed_dim);
    const EvalReport report = evaluate(clip.frames, e_style, size_bytes);
    write_text_file(opts.report, report.to_text());
    std::printf("t_ssim=%.6f style_score=%.6f\n", report.t_ssim, report.style_score);
    return 0;
}

struct AblateOpts {
    std::string clip;
    std::string prompt;
    std::string out;
    std::string config_file;
    int iters = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

int run_ablate(const AblateOpts& opts) {
    TrainConfig config;
    if (!opts.config_file.empty()) config = parse_config_file(opts.config_file);
    if (opts.iters >= 0) config.iters = opts.iters;
    if (opts.seed_set) config.seed = opts.seed;

    ClipManifest manifest;
    VideoClip clip = read_clip_dir(opts.clip, &manifest);
    const AblationReport report = run_ablation(config, clip, manifest, opts.prompt);
    fs::create_directories(opts.out);
    write_text_file(fs::path(opts.out) / "report.txt", report.to_text());
    std::fputs(report.to_text().c_str(), stdout);
    return 0;
}

struct GradcheckOpts {
    std::uint64_t seed = 7;
};

int run_gradcheck(const GradcheckOpts& opts) {
    constexpr int kFrames = 3, kSide = 6, kChannels = 4, kEmbed = 8;
    DetRng rng(mix64(opts.seed));
    auto random_frame = [&rng] {
        Tensor f = Tensor::zeros({kSide, kSide, 3});
        for (float& v : f.mutable_data()) v = rng.next_uniform(0.2f, 0.8f);
        return f;
    };
    std::vector<Tensor> hat, src;
    for (int i = 0; i < kFrames; ++i) {
        hat.push_back(random_frame());
        src.push_back(random_frame());
    }
    const ModelParams params =
        ModelParams::init(ModelConfig{kChannels, kEmbed, 3, 2}, opts.seed);
    const TextEmbedding e_style = encode_text("wide mosaic glass", kEmbed);
    const TextEmbedding e_source = encode_text("a photo", kEmbed);
    const GuidanceParams guide = GuidanceParams::from_embedding(e_style);
    const MaskSet masks = sample_masks(kFrames, kSide, kSide, 0.25f, 2, 2, mix64(opts.seed + 1));

    // perturb one frame at a time; report the worst coordinate per loss
    auto with_frame = [&hat](std::size_t t, const Tensor& x) {
        std::vector<Tensor> frames = hat;
        frames[t] = x;
        return frames;
    };
    const float eps = 1e-3f;
    double err_content = 0, err_dir = 0, err_tmd = 0, err_tso = 0;
    for (std::size_t t = 0; t < hat.size(); ++t) {
        err_content = std::max(
            err_content, finite_diff_check(
                             [&](const Tensor& x) {
                                 return content_loss(with_frame(t, x), src, params.encoder);
                             },
                             hat[t], eps));
        err_dir = std::max(
            err_dir, finite_diff_check(
                         [&](const Tensor& x) {
                             return dir_loss(with_frame(t, x), src, e_style, e_source);
                         },
                         hat[t], eps));
        err_tmd = std::max(err_tmd, finite_diff_check(
                                        [&](const Tensor& x) {
                                            return tmd_loss(with_frame(t, x), guide, masks);
                                        },
                                        hat[t], eps));
        err_tso = std::max(
            err_tso,
            finite_diff_check([&](const Tensor& x) { return tso_loss(with_frame(t, x)); }, hat[t],
                              eps));
    }
    std::printf("content max_rel_err=%.3e\n", err_content);
    std::printf("dir max_rel_err=%.3e\n", err_dir);
    std::printf("tmd max_rel_err=%.3e\n", err_tmd);
    std::printf("tso max_rel_err=%.3e\n", err_tso);
    const double worst = std::max(std::max(err_content, err_dir), std::max(err_tmd, err_tso));
    return worst <= 1e-3 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"text-driven video stylization with a state-space fusion core"};
    app.require_subcommand(1);

    SynthOpts synth_opts;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic clip directory");
    synth->add_option("--kind", synth_opts.kind,
                      "moving_square, scene_cut or occlusion")->required();
    synth->add_option("--frames", synth_opts.frames, "frame count");
    synth->add_option("--size", synth_opts.size, "WIDTHxHEIGHT, even dims >= 16");
    synth->add_option("--seed", synth_opts.seed, "generator seed");
    synth->add_option("--out", synth_opts.out, "output clip directory")->required();

    TrainOpts train_opts;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model on one clip and prompt");
    train_cmd->add_option("--clip", train_opts.clip, "input clip directory")->required();
    train_cmd->add_option("--prompt", train_opts.prompt, "style prompt")->required();
    train_cmd->add_option("--iters", train_opts.iters, "training iterations");
    CLI::Option* train_seed = train_cmd->add_option("--seed", train_opts.seed, "training seed");
    train_cmd->add_option("--config", train_opts.config_file, "key=value config file");
    train_cmd->add_option("--checkpoint", train_opts.checkpoint,
                          "output checkpoint path (log goes to <path>.log)")->required();
    train_cmd->add_flag("--per-frame", train_opts.per_frame,
                        "reset the fusion state every frame");
    train_cmd->add_option("--lambda3", train_opts.lambda3, "masked directional loss weight");
    train_cmd->add_option("--lambda4", train_opts.lambda4, "second-order temporal loss weight");
    train_cmd->add_option("--ssm-layers", train_opts.ssm_layers, "scan layer count");

    StylizeOpts stylize_opts;
    CLI::App* stylize_cmd = app.add_subcommand("stylize", "stylize a clip with a checkpoint");
    stylize_cmd->add_option("--clip", stylize_opts.clip, "input clip directory")->required();
    stylize_cmd->add_option("--prompt", stylize_opts.prompt, "style prompt")->required();
    stylize_cmd->add_option("--checkpoint", stylize_opts.checkpoint, "model checkpoint")->required();
    stylize_cmd->add_option("--out", stylize_opts.out, "output clip directory")->required();
    stylize_cmd->add_flag("--per-frame", stylize_opts.per_frame,
                          "reset the fusion state every frame");

    EvalOpts eval_opts;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate temporal SSIM and style score");
    eval_cmd->add_option("--clip", eval_opts.clip, "clip directory to evaluate")->required();
    eval_cmd->add_option("--prompt", eval_opts.prompt, "style prompt")->required();
    eval_cmd->add_option("--report", eval_opts.report, "output report file")->required();
    eval_cmd->add_option("--checkpoint", eval_opts.checkpoint,
                         "optional checkpoint; reports its size");

    AblateOpts ablate_opts;
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "train and compare four loss variants");
    ablate_cmd->add_option("--clip", ablate_opts.clip, "input clip directory")->required();
    ablate_cmd->add_option("--prompt", ablate_opts.prompt, "style prompt")->required();
    ablate_cmd->add_option("--out", ablate_opts.out, "output directory")->required();
    ablate_cmd->add_option("--config", ablate_opts.config_file, "key=value config file");
    ablate_cmd->add_option("--iters", ablate_opts.iters, "training iterations per arm");
    CLI::Option* ablate_seed = ablate_cmd->add_option("--seed", ablate_opts.seed, "training seed");

    GradcheckOpts gradcheck_opts;
    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference check of every loss component");
    gradcheck_cmd->add_option("--seed", gradcheck_opts.seed, "input seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    train_opts.seed_set = train_seed->count() > 0;
    ablate_opts.seed_set = ablate_seed->count() > 0;

    try {
        if (synth->parsed()) return run_synth(synth_opts);
        if (train_cmd->parsed()) return run_train(train_opts);
        if (stylize_cmd->parsed()) return run_stylize(stylize_opts);
        if (eval_cmd->parsed()) return run_eval(eval_opts);
        if (ablate_cmd->parsed()) return run_ablate(ablate_opts);
        if (gradcheck_cmd->parsed()) return run_gradcheck(gradcheck_opts);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
