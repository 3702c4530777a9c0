#include "tssm/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "tssm/metrics.hpp"
#include "tssm/rng.hpp"

namespace tssm {

namespace {
constexpr std::uint64_t kWindowStream = 0x77696e64'6f777301ull;
}

void TrainConfig::validate() const {
    if (!(lr > 0.0f)) throw ConfigError("config: lr must be positive");
    if (iters < 1) throw ConfigError("config: iters must be >= 1");
    if (batch_frames < 1) throw ConfigError("config: batch_frames must be >= 1");
    if (weights.lambda1 < 0 || weights.lambda2 < 0 || weights.lambda3 < 0 ||
        weights.lambda4 < 0) {
        throw ConfigError("config: loss weights must be non-negative");
    }
    if (weights.lambda4 > 0 && batch_frames < 3) {
        throw ConfigError("config: lambda4 > 0 needs batch_frames >= 3 (the second-order "
                          "temporal loss spans three frames)");
    }
    if (channels < 1 || embed_dim < 1 || ssm_layers < 1) {
        throw ConfigError("config: channels, embed_dim and ssm_layers must be positive");
    }
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("config: kernel must be odd");
    if (!(mask_ratio >= 0.0f && mask_ratio <= 1.0f)) {
        throw ConfigError("config: mask_ratio must lie in [0,1]");
    }
    if (mask_patch_spatial < 1 || mask_patch_temporal < 1) {
        throw ConfigError("config: mask patch dims must be >= 1");
    }
    if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f)) {
        throw ConfigError("config: betas must lie in [0,1)");
    }
    if (!(eps > 0.0f)) throw ConfigError("config: eps must be positive");
    if (weight_decay < 0.0f) throw ConfigError("config: weight_decay must be non-negative");
}

ModelConfig TrainConfig::model_config() const {
    return ModelConfig{channels, embed_dim, kernel, ssm_layers};
}

namespace {

float parse_float(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const float v = std::stof(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad float for " + key + ": '" + value + "'");
    }
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const std::uint64_t v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad unsigned integer for " + key + ": '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + value + "'");
}

}  // namespace

void apply_config_entry(TrainConfig& config, const std::string& key, const std::string& value) {
    if (key == "lambda1") config.weights.lambda1 = parse_float(key, value);
    else if (key == "lambda2") config.weights.lambda2 = parse_float(key, value);
    else if (key == "lambda3") config.weights.lambda3 = parse_float(key, value);
    else if (key == "lambda4") config.weights.lambda4 = parse_float(key, value);
    else if (key == "lr") config.lr = parse_float(key, value);
    else if (key == "beta1") config.beta1 = parse_float(key, value);
    else if (key == "beta2") config.beta2 = parse_float(key, value);
    else if (key == "eps") config.eps = parse_float(key, value);
    else if (key == "weight_decay") config.weight_decay = parse_float(key, value);
    else if (key == "iters") config.iters = parse_int(key, value);
    else if (key == "batch_frames") config.batch_frames = parse_int(key, value);
    else if (key == "channels") config.channels = parse_int(key, value);
    else if (key == "embed_dim") config.embed_dim = parse_int(key, value);
    else if (key == "ssm_layers") config.ssm_layers = parse_int(key, value);
    else if (key == "kernel") config.kernel = parse_int(key, value);
    else if (key == "mask_ratio") config.mask_ratio = parse_float(key, value);
    else if (key == "mask_patch_spatial") config.mask_patch_spatial = parse_int(key, value);
    else if (key == "mask_patch_temporal") config.mask_patch_temporal = parse_int(key, value);
    else if (key == "seed") config.seed = parse_u64(key, value);
    else if (key == "per_frame_mode") config.per_frame_mode = parse_bool(key, value);
    else if (key == "detach_guidance") config.detach_guidance = parse_bool(key, value);
    else if (key == "source_prompt") config.source_prompt = value;
    else throw ConfigError("config: unknown key '" + key + "'");
}

TrainConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
    TrainConfig config;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        // trim
        const std::size_t begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        const std::size_t end = line.find_last_not_of(" \t\r");
        line = line.substr(begin, end - begin + 1);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value");
        }
        apply_config_entry(config, line.substr(0, eq), line.substr(eq + 1));
    }
    return config;
}

// ---------------------------------------------------------------------------
// Optimizer

void adamw_step(const std::vector<std::pair<std::string, Tensor*>>& params,
                const std::unordered_map<std::string, Tensor>& grads, OptimizerState& state,
                const TrainConfig& config) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(double(config.beta1), double(state.step));
    const double bc2 = 1.0 - std::pow(double(config.beta2), double(state.step));

    for (const auto& [name, param] : params) {
        auto found = grads.find(name);
        if (found == grads.end()) throw Error("adamw: missing gradient for '" + name + "'");
        const Tensor& grad = found->second;
        if (grad.shape() != param->shape()) {
            throw Error("adamw: gradient shape mismatch for '" + name + "'");
        }
        for (float v : grad.data()) {
            if (!std::isfinite(v)) throw Error("adamw: non-finite gradient for '" + name + "'");
        }

        auto [it, inserted] = state.moments.try_emplace(
            name, std::make_pair(Tensor::zeros(param->shape()), Tensor::zeros(param->shape())));
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        if (!inserted && m.shape() != param->shape()) {
            throw Error("adamw: moment shape mismatch for '" + name + "'");
        }

        float* pm = m.mutable_data().data();
        float* pv = v.mutable_data().data();
        float* pp = param->mutable_data().data();
        const float* pg = grad.data().data();
        for (std::int64_t i = 0; i < param->numel(); ++i) {
            const double g = pg[i];
            const double mi = double(config.beta1) * pm[i] + (1.0 - config.beta1) * g;
            const double vi = double(config.beta2) * pv[i] + (1.0 - config.beta2) * g * g;
            pm[i] = static_cast<float>(mi);
            pv[i] = static_cast<float>(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            const double update =
                m_hat / (std::sqrt(v_hat) + config.eps) + double(config.weight_decay) * pp[i];
            pp[i] = static_cast<float>(pp[i] - double(config.lr) * update);
        }
    }
}

// ---------------------------------------------------------------------------
// Training

std::string TrainLogEntry::line() const {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "iter=%d total=%.6e content=%.6e dir=%.6e tmd=%.6e tso=%.6e",
                  iter, total, content, dir, tmd, tso);
    return buf;
}

TrainResult train(const VideoClip& clip, const std::string& prompt, const TrainConfig& config) {
    config.validate();
    clip.validate();
    if (prompt.empty()) throw ConfigError("train: prompt must be non-empty");
    const int t = clip.length();
    const int h = clip.height();
    const int w = clip.width();
    if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("train: clip dims must be even, got " + std::to_string(w) + "x" +
                          std::to_string(h));
    }
    const int window = std::min(config.batch_frames, t);
    // T = 1 is the single-image degenerate mode; longer clips too short for
    // the second-order loss are treated as misconfiguration.
    if (config.weights.lambda4 > 0 && t >= 2 && window < 3) {
        throw ConfigError("train: lambda4 > 0 needs at least 3 frames per window, clip has " +
                          std::to_string(t));
    }

    const TextEmbedding e_style = encode_text(prompt, config.embed_dim);
    const TextEmbedding e_source = encode_text(config.source_prompt, config.embed_dim);
    const GuidanceParams guide = GuidanceParams::from_embedding(e_style);

    ModelParams params = ModelParams::init(config.model_config(), config.seed);
    OptimizerState opt;
    DetRng window_rng(mix_seeds(config.seed, kWindowStream));

    TrainResult result{std::move(params), {}};
    result.log.reserve(config.iters);

    for (int iter = 1; iter <= config.iters; ++iter) {
        const int start =
            window == t ? 0 : static_cast<int>(window_rng.next_below(std::uint64_t(t - window + 1)));

        Tape tape;
        ModelParams bound = result.params.bound(tape);

        std::vector<Tensor> window_in(clip.frames.begin() + start,
                                      clip.frames.begin() + start + window);
        std::vector<Tensor> window_out;
        window_out.reserve(window);
        Tensor state = Tensor::zeros({h / 2, w / 2, config.channels});
        for (int i = 0; i < window; ++i) {
            if (config.per_frame_mode) state = Tensor::zeros({h / 2, w / 2, config.channels});
            StylizeResult r = stylize_frame(window_in[i], state, e_style, bound);
            window_out.push_back(std::move(r.image));
            state = std::move(r.state);
        }

        const Tensor zero = Tensor::scalar(0.0f);
        Tensor content = config.weights.lambda1 > 0
                             ? content_loss(window_out, window_in, bound.encoder)
                             : zero;
        Tensor dir = config.weights.lambda2 > 0
                         ? dir_loss(window_out, window_in, e_style, e_source)
                         : zero;
        Tensor tmd = zero;
        if (config.weights.lambda3 > 0) {
            const MaskSet masks =
                sample_masks(window, h, w, config.mask_ratio, config.mask_patch_spatial,
                             config.mask_patch_temporal, mix_seeds(config.seed, std::uint64_t(iter)));
            tmd = tmd_loss(window_out, guide, masks, config.detach_guidance);
        }
        Tensor tso = (config.weights.lambda4 > 0 && window >= 3) ? tso_loss(window_out) : zero;
        Tensor total = total_loss(content, dir, tmd, tso, config.weights);

        result.log.push_back(TrainLogEntry{iter, double(total.item()), double(content.item()),
                                           double(dir.item()), double(tmd.item()),
                                           double(tso.item())});

        // A constant objective (every weight zero) produces no gradients and
        // therefore no update.
        if (!total.tracked()) continue;

        auto grad_map = tape.backward(total);
        std::unordered_map<std::string, Tensor> named_grads;
        const auto bound_named = bound.named_params();
        for (const auto& [name, tensor] : bound_named) {
            named_grads.emplace(name, std::move(grad_map.at(tensor->id())));
        }
        auto param_list = result.params.named_params();
        adamw_step(param_list, named_grads, opt, config);
    }
    return result;
}

VideoClip stylize(const VideoClip& clip, const std::string& prompt, const ModelParams& params,
                  bool per_frame_mode) {
    clip.validate();
    if (prompt.empty()) throw ConfigError("stylize: prompt must be non-empty");
    const int h = clip.height();
    const int w = clip.width();
    if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("stylize: clip dims must be even, got " + std::to_string(w) + "x" +
                          std::to_string(h));
    }
    const TextEmbedding e_style = encode_text(prompt, params.config.embed_dim);

    VideoClip out;
    out.frames.reserve(clip.frames.size());
    Tensor state = Tensor::zeros({h / 2, w / 2, params.config.channels});
    for (const Tensor& frame : clip.frames) {
        if (per_frame_mode) state = Tensor::zeros({h / 2, w / 2, params.config.channels});
        StylizeResult r = stylize_frame(frame, state, e_style, params);
        out.frames.push_back(std::move(r.image));
        state = std::move(r.state);
    }
    return out;
}

std::string AblationReport::to_text() const {
    char buf[128];
    std::string out = "arm t_ssim style_score\n";
    for (const AblationRow& row : rows) {
        std::snprintf(buf, sizeof(buf), "%s %.6f %.6f\n", row.arm.c_str(), row.t_ssim,
                      row.style_score);
        out += buf;
    }
    return out;
}

AblationReport run_ablation(const TrainConfig& base, const VideoClip& clip,
                            const ClipManifest& manifest, const std::string& prompt) {
    struct Arm {
        const char* name;
        TrainConfig config;
    };
    TrainConfig no_tso = base;
    no_tso.weights.lambda4 = 0.0f;
    TrainConfig no_tmd = base;
    no_tmd.weights.lambda3 = 0.0f;
    TrainConfig single_layer = base;
    single_layer.ssm_layers = 1;
    const std::vector<Arm> arms = {{"full", base},
                                   {"no_tso", no_tso},
                                   {"no_tmd", no_tmd},
                                   {"ssm_layers_1", single_layer}};

    const VideoClip held_out = synth_video(parse_synth_kind(manifest.kind), manifest.t,
                                           manifest.h, manifest.w, manifest.seed + 1);
    const TextEmbedding e_style = encode_text(prompt, base.embed_dim);

    AblationReport report;
    for (const Arm& arm : arms) {
        TrainResult trained = train(clip, prompt, arm.config);
        VideoClip stylized = stylize(held_out, prompt, trained.params, arm.config.per_frame_mode);
        report.rows.push_back(
            AblationRow{arm.name, t_ssim(stylized.frames), style_score(stylized.frames, e_style)});
    }
    return report;
}

}  // namespace tssm
