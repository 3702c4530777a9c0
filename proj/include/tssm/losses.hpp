#pragma once

// The four training loss components, spatiotemporal mask sampling, the
// prompt-conditioned guidance transform, and the toy image embedder shared
// with the evaluation metrics.

#include <array>
#include <cstdint>
#include <vector>

#include "tssm/model.hpp"
#include "tssm/tensor.hpp"

namespace tssm {

// Fixed seeds identifying the frozen (non-trainable) projections. They play
// the role of pretrained weights: constants of the artifact.
inline constexpr std::uint64_t kGuidanceSeed = 0x67756964'616e6365ull;
inline constexpr std::uint64_t kImageEmbedSeed = 0x696d6745'6d626564ull;

// Per-frame boolean occlusion masks over a [T,H,W] volume. true = masked
// (excluded from the masked directional loss).
struct MaskSet {
    int t = 0, h = 0, w = 0;
    std::vector<std::uint8_t> mask;  // [T,H,W]
    std::uint64_t seed = 0;
    float ratio = 0.0f;
    int patch_spatial = 1;
    int patch_temporal = 1;

    bool at(int ti, int y, int x) const {
        return mask[(std::size_t(ti) * h + y) * w + x] != 0;
    }
    double masked_fraction() const;
};

// Tiles the volume into (patch_temporal, patch_spatial, patch_spatial)
// blocks (edge blocks truncated) and masks each independently with
// probability `ratio`. Whole-frame masking falls out of a spatial patch at
// least as large as the frame.
MaskSet sample_masks(int t, int h, int w, float ratio, int patch_spatial, int patch_temporal,
                     std::uint64_t seed);

// Prompt-conditioned affine color transform: per channel
// clamp01(gain_k * v + bias_k) with gain in [0.5,1.5], bias in [-0.25,0.25].
struct GuidanceParams {
    std::array<float, 3> gain{1.0f, 1.0f, 1.0f};
    std::array<float, 3> bias{0.0f, 0.0f, 0.0f};

    // Seeded linear map of the embedding followed by range squashing.
    static GuidanceParams from_embedding(const TextEmbedding& e,
                                         std::uint64_t seed = kGuidanceSeed);
};

// Applies the transform; differentiable in the image argument.
Tensor guidance(const Tensor& img, const GuidanceParams& params);

struct LossWeights {
    float lambda1 = 1.0f;  // content
    float lambda2 = 0.5f;  // directional
    float lambda3 = 0.8f;  // masked directional (temporal)
    float lambda4 = 0.3f;  // second-order temporal
};

// Sum over frames and unmasked pixels of the squared difference between the
// spatial gradients of the frame and of its guidance transform. With
// detach_guidance the transform is treated as a fixed target.
Tensor tmd_loss(const std::vector<Tensor>& frames_hat, const GuidanceParams& params,
                const MaskSet& masks, bool detach_guidance = false);

// Sum over t >= 2 and all pixels of || I_t - 2 I_{t-1} + I_{t-2} ||^2.
// Exactly zero for fewer than three frames.
Tensor tso_loss(const std::vector<Tensor>& frames_hat);

// Mean over frames of pixel MSE plus encoder-feature MSE. The encoder is
// applied with detached parameters: gradients reach the stylized frames
// only.
Tensor content_loss(const std::vector<Tensor>& frames_hat, const std::vector<Tensor>& frames,
                    const EncoderParams& encoder);

// Directional alignment: mean over frames of
// 1 - cos(embed(I_hat) - embed(I), e_style - e_source). A frame whose
// direction vector degenerates (norm < 1e-8) contributes the sentinel 1.
Tensor dir_loss(const std::vector<Tensor>& frames_hat, const std::vector<Tensor>& frames,
                const TextEmbedding& e_style, const TextEmbedding& e_source);

Tensor total_loss(const Tensor& content, const Tensor& dir, const Tensor& tmd, const Tensor& tso,
                  const LossWeights& weights);

// Toy image embedder: adaptive 8x8 average pool, flatten, fixed seeded
// random projection to R^d, L2 normalize. Returns the zero vector when the
// projection is degenerate. Differentiable in the image.
Tensor image_embed(const Tensor& img, int embed_dim);

}  // namespace tssm
