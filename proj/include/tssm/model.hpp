#pragma once

// Frame encoder/decoder and the text-to-style pathway. The text encoder is
// a deterministic hashed bag-of-tokens embedder; no pretrained weights are
// involved anywhere, so results are reproducible from a seed alone.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tssm/ssm.hpp"
#include "tssm/tensor.hpp"

namespace tssm {

struct ModelConfig {
    int channels = 16;   // feature channels c
    int embed_dim = 64;  // text embedding dimension d
    int kernel = 3;      // conv kernel size, odd
    int ssm_layers = 3;
};

// Unit-norm deterministic embedding of a prompt string.
struct TextEmbedding {
    Tensor vector;  // [d]
    int dim() const { return vector.shape()[0]; }
};

// Hashed bag-of-tokens text encoder: lowercase, split on whitespace, each
// token SplitMix64-hashed over its bytes into a pseudo-random unit vector;
// the embedding is the L2-normalized sum. Order-free and integer-exact.
TextEmbedding encode_text(const std::string& prompt, int embed_dim = 64);

struct EncoderParams {
    Tensor conv1_kernel;  // [k,k,3,c]
    Tensor conv1_bias;    // [c]
    Tensor conv2_kernel;  // [k,k,c,c]
    Tensor conv2_bias;    // [c]
};

struct ModelParams {
    ModelConfig config;
    EncoderParams encoder;
    Tensor style_w;     // [d,c]
    Tensor style_bias;  // [c]
    Tensor dec_kernel;  // [k,k,c,3]
    Tensor dec_bias;    // [3]
    FusionParams fusion;

    static ModelParams init(const ModelConfig& config, std::uint64_t seed);

    // Stable name -> tensor listing; fixes checkpoint and optimizer order.
    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;

    // Copy with every parameter registered as a leaf of the tape.
    ModelParams bound(Tape& tape) const;
    // Encoder parameters as constants; gradients stop at them.
    EncoderParams detached_encoder() const;
};

// conv(3->c) + bias, relu, conv(c->c) + bias, stride-2 subsample.
// [H,W,3] -> [H/2,W/2,c]; H and W must be even.
Tensor encode_frame(const Tensor& image, const EncoderParams& encoder);

// Style vector W_s^T e + bias broadcast over an h x w grid -> [h,w,c].
Tensor project_style(const TextEmbedding& e, const ModelParams& params, int h, int w);

// Nearest-neighbor 2x upsample, conv(c->3) + bias, sigmoid. Output in [0,1].
Tensor decode_features(const Tensor& f_hat, const ModelParams& params);

struct StylizeResult {
    Tensor image;  // [H,W,3] in [0,1]
    Tensor state;  // [H/2,W/2,c] carried to the next frame
};

// One frame through the full pipeline: encode, project style, fuse with the
// carried state, residual-mix, decode.
StylizeResult stylize_frame(const Tensor& image, const Tensor& h_prev, const TextEmbedding& e,
                            const ModelParams& params);

// Closed-form parameter count for a configuration:
//   k*k*3*c + c  +  k*k*c*c + c  +  d*c + c  +  k*k*c*3 + 3
//   + ssm_layers * 4c  +  3 (fusion scalars)
std::int64_t param_count(const ModelConfig& config);
std::int64_t param_count(const ModelParams& params);

// Exact size of the serialized checkpoint: 4 bytes per parameter plus the
// format header (magic, version, per-group names and dims).
std::int64_t model_size_bytes(const ModelParams& params);

}  // namespace tssm
