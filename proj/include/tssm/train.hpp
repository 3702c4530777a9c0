#pragma once

// AdamW training over one clip + prompt, stylization over clips, and the
// four-arm ablation driver. One iteration samples a contiguous frame
// window, stylizes it sequentially carrying the fusion state, evaluates the
// weighted objective and updates every trainable parameter. Everything is
// a pure function of (inputs, config, seed).

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "tssm/losses.hpp"
#include "tssm/model.hpp"
#include "tssm/video.hpp"

namespace tssm {

struct TrainConfig {
    LossWeights weights;
    float lr = 5e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
    int iters = 500;
    int batch_frames = 8;
    int channels = 16;
    int embed_dim = 64;
    int ssm_layers = 3;
    int kernel = 3;
    float mask_ratio = 0.25f;
    int mask_patch_spatial = 8;
    int mask_patch_temporal = 2;
    std::uint64_t seed = 0;
    bool per_frame_mode = false;   // reset the fusion state at every frame
    bool detach_guidance = false;  // treat the guidance transform as a fixed target
    std::string source_prompt = "a photo";

    void validate() const;  // throws ConfigError
    ModelConfig model_config() const;
};

// Applies one `key=value` pair; unknown keys throw ConfigError.
void apply_config_entry(TrainConfig& config, const std::string& key, const std::string& value);
// Flat key=value file mirroring the fields above. '#' starts a comment.
TrainConfig parse_config_file(const std::filesystem::path& path);

struct OptimizerState {
    // first/second moments per parameter group, keyed by name
    std::map<std::string, std::pair<Tensor, Tensor>> moments;
    std::int64_t step = 0;
};

// Decoupled-weight-decay Adam update over every named parameter.
void adamw_step(const std::vector<std::pair<std::string, Tensor*>>& params,
                const std::unordered_map<std::string, Tensor>& grads, OptimizerState& state,
                const TrainConfig& config);

struct TrainLogEntry {
    int iter = 0;
    double total = 0, content = 0, dir = 0, tmd = 0, tso = 0;
    std::string line() const;
};

struct TrainResult {
    ModelParams params;
    std::vector<TrainLogEntry> log;
};

TrainResult train(const VideoClip& clip, const std::string& prompt, const TrainConfig& config);

VideoClip stylize(const VideoClip& clip, const std::string& prompt, const ModelParams& params,
                  bool per_frame_mode);

struct AblationRow {
    std::string arm;
    double t_ssim = 0;
    double style_score = 0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::string to_text() const;
};

// Trains four variants (full, no_tso, no_tmd, ssm_layers_1) and evaluates
// each on a held-out clip from the same generator with seed+1.
AblationReport run_ablation(const TrainConfig& base, const VideoClip& clip,
                            const ClipManifest& manifest, const std::string& prompt);

}  // namespace tssm
