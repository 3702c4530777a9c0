#include "tssm/losses.hpp"

#include <array>
#include <cmath>

#include "tssm/rng.hpp"

namespace tssm {

double MaskSet::masked_fraction() const {
    if (mask.empty()) return 0.0;
    std::size_t on = 0;
    for (std::uint8_t v : mask) on += v != 0;
    return double(on) / double(mask.size());
}

MaskSet sample_masks(int t, int h, int w, float ratio, int patch_spatial, int patch_temporal,
                     std::uint64_t seed) {
    if (t < 1 || h < 1 || w < 1) throw Error("sample_masks: dimensions must be positive");
    if (!(ratio >= 0.0f && ratio <= 1.0f)) {
        throw Error("sample_masks: ratio must lie in [0,1], got " + std::to_string(ratio));
    }
    if (patch_spatial < 1 || patch_temporal < 1) {
        throw Error("sample_masks: patch dims must be >= 1");
    }

    MaskSet m;
    m.t = t;
    m.h = h;
    m.w = w;
    m.seed = seed;
    m.ratio = ratio;
    m.patch_spatial = patch_spatial;
    m.patch_temporal = patch_temporal;
    m.mask.assign(std::size_t(t) * h * w, 0);

    DetRng rng(mix64(seed));
    for (int pt = 0; pt < t; pt += patch_temporal) {
        for (int py = 0; py < h; py += patch_spatial) {
            for (int px = 0; px < w; px += patch_spatial) {
                const bool masked = rng.next_unit() < ratio;
                if (!masked) continue;
                const int te = std::min(t, pt + patch_temporal);
                const int ye = std::min(h, py + patch_spatial);
                const int xe = std::min(w, px + patch_spatial);
                for (int ti = pt; ti < te; ++ti) {
                    for (int y = py; y < ye; ++y) {
                        for (int x = px; x < xe; ++x) {
                            m.mask[(std::size_t(ti) * h + y) * w + x] = 1;
                        }
                    }
                }
            }
        }
    }
    return m;
}

GuidanceParams GuidanceParams::from_embedding(const TextEmbedding& e, std::uint64_t seed) {
    const int d = e.dim();
    DetRng rng(mix64(seed));
    std::array<double, 6> raw{};
    // fixed 6 x d linear map, rows drawn in order
    for (int r = 0; r < 6; ++r) {
        double acc = 0;
        for (int j = 0; j < d; ++j) acc += double(rng.next_uniform(-1.5f, 1.5f)) * e.vector.data()[j];
        raw[r] = acc;
    }
    auto squash = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    GuidanceParams p;
    for (int k = 0; k < 3; ++k) {
        p.gain[k] = static_cast<float>(0.5 + squash(raw[k]));                // (0.5, 1.5)
        p.bias[k] = static_cast<float>(0.25 * (2.0 * squash(raw[3 + k]) - 1.0));  // (-0.25, 0.25)
    }
    return p;
}

Tensor guidance(const Tensor& img, const GuidanceParams& params) {
    if (img.rank() != 3 || img.shape()[2] != 3) {
        throw Error("guidance: expected [H,W,3] image, got " + shape_str(img.shape()));
    }
    const std::int64_t pixels = img.numel() / 3;
    Tensor out = Tensor::zeros(img.shape());
    const float* pi = img.data().data();
    float* po = out.mutable_data().data();
    for (std::int64_t p = 0; p < pixels; ++p) {
        for (int k = 0; k < 3; ++k) {
            const float v = params.gain[k] * pi[p * 3 + k] + params.bias[k];
            po[p * 3 + k] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        }
    }
    if (img.tracked()) {
        img.tape()->record(
            "guidance", {&img}, out,
            [pixels, gain = params.gain, bias = params.bias,
             iv = std::vector<float>(img.data().begin(), img.data().end())](
                std::span<const float> g, const std::vector<float*>& gin) {
                if (!gin[0]) return;
                for (std::int64_t p = 0; p < pixels; ++p) {
                    for (int k = 0; k < 3; ++k) {
                        const float pre = gain[k] * iv[p * 3 + k] + bias[k];
                        if (pre > 0.0f && pre < 1.0f) {
                            gin[0][p * 3 + k] += gain[k] * g[p * 3 + k];
                        }
                    }
                }
            });
    }
    return out;
}

namespace {

void validate_frames(const char* kind, const std::vector<Tensor>& frames) {
    if (frames.empty()) throw Error(std::string(kind) + ": no frames");
    for (const Tensor& f : frames) {
        if (f.rank() != 3 || f.shape()[2] != 3) {
            throw Error(std::string(kind) + ": frames must be [H,W,3], got " + shape_str(f.shape()));
        }
        if (f.shape() != frames.front().shape()) {
            throw Error(std::string(kind) + ": frames have mismatched shapes");
        }
    }
}

// [H,W,3,2] weights: 1 where the pixel is unmasked, replicated over channel
// and gradient direction.
Tensor unmasked_weights(const MaskSet& masks, int ti, int h, int w) {
    Tensor weights = Tensor::zeros({h, w, 3, 2});
    float* pw = weights.mutable_data().data();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (masks.at(ti, y, x)) continue;
            float* cell = pw + (std::size_t(y) * w + x) * 6;
            for (int j = 0; j < 6; ++j) cell[j] = 1.0f;
        }
    }
    return weights;
}

}  // namespace

Tensor tmd_loss(const std::vector<Tensor>& frames_hat, const GuidanceParams& params,
                const MaskSet& masks, bool detach_guidance) {
    validate_frames("tmd_loss", frames_hat);
    const int t = static_cast<int>(frames_hat.size());
    const int h = frames_hat.front().shape()[0];
    const int w = frames_hat.front().shape()[1];
    if (masks.t != t || masks.h != h || masks.w != w) {
        throw Error("tmd_loss: mask volume [" + std::to_string(masks.t) + "," +
                    std::to_string(masks.h) + "," + std::to_string(masks.w) +
                    "] does not match frames " + shape_str(frames_hat.front().shape()));
    }

    Tensor loss = Tensor::scalar(0.0f);
    for (int ti = 0; ti < t; ++ti) {
        Tensor guided = guidance(frames_hat[ti], params);
        if (detach_guidance) guided = guided.detached();
        Tensor diff = sub(spatial_gradient(frames_hat[ti]), spatial_gradient(guided));
        Tensor term = reduce_sum(mul(square(diff), unmasked_weights(masks, ti, h, w)));
        loss = add(loss, term);
    }
    return loss;
}

Tensor tso_loss(const std::vector<Tensor>& frames_hat) {
    if (frames_hat.size() >= 2) validate_frames("tso_loss", frames_hat);
    if (frames_hat.size() < 3) return Tensor::scalar(0.0f);
    Tensor two = Tensor::scalar(2.0f);
    Tensor loss = Tensor::scalar(0.0f);
    for (std::size_t ti = 2; ti < frames_hat.size(); ++ti) {
        Tensor accel =
            add(sub(frames_hat[ti], mul(two, frames_hat[ti - 1])), frames_hat[ti - 2]);
        loss = add(loss, reduce_sum(square(accel)));
    }
    return loss;
}

Tensor content_loss(const std::vector<Tensor>& frames_hat, const std::vector<Tensor>& frames,
                    const EncoderParams& encoder) {
    validate_frames("content_loss", frames_hat);
    validate_frames("content_loss", frames);
    if (frames_hat.size() != frames.size() ||
        frames_hat.front().shape() != frames.front().shape()) {
        throw Error("content_loss: stylized and source videos disagree in shape");
    }
    // Gradients stop at the encoder weights; they flow to the frames only.
    EncoderParams frozen{encoder.conv1_kernel.detached(), encoder.conv1_bias.detached(),
                         encoder.conv2_kernel.detached(), encoder.conv2_bias.detached()};

    Tensor acc = Tensor::scalar(0.0f);
    for (std::size_t ti = 0; ti < frames_hat.size(); ++ti) {
        Tensor pixel = reduce_mean(square(sub(frames_hat[ti], frames[ti])));
        Tensor feat_hat = encode_frame(frames_hat[ti], frozen);
        Tensor feat = encode_frame(frames[ti], frozen);
        Tensor feature = reduce_mean(square(sub(feat_hat, feat)));
        acc = add(acc, add(pixel, feature));
    }
    return mul(acc, Tensor::scalar(1.0f / static_cast<float>(frames_hat.size())));
}

Tensor image_embed(const Tensor& img, int embed_dim) {
    if (img.rank() != 3 || img.shape()[2] != 3) {
        throw Error("image_embed: expected [H,W,3] image, got " + shape_str(img.shape()));
    }
    if (embed_dim < 1) throw Error("image_embed: embed_dim must be positive");
    constexpr int kPooled = 8 * 8 * 3;

    // frozen random projection, regenerated deterministically per call
    DetRng rng(mix64(kImageEmbedSeed));
    const float bound = std::sqrt(3.0f / kPooled);
    Tensor projection = Tensor::zeros({kPooled, embed_dim});
    for (float& v : projection.mutable_data()) v = rng.next_uniform(-bound, bound);

    Tensor pooled = adaptive_avg_pool(img, 8, 8);
    Tensor flat = reshape(pooled, {1, kPooled});
    Tensor projected = matmul(flat, projection);
    Tensor norm2 = reduce_sum(square(projected));
    if (std::sqrt(double(norm2.item())) < 1e-12) {
        return Tensor::zeros({embed_dim});
    }
    Tensor unit = div(projected, sqrt(norm2));
    return reshape(unit, {embed_dim});
}

Tensor dir_loss(const std::vector<Tensor>& frames_hat, const std::vector<Tensor>& frames,
                const TextEmbedding& e_style, const TextEmbedding& e_source) {
    validate_frames("dir_loss", frames_hat);
    validate_frames("dir_loss", frames);
    if (frames_hat.size() != frames.size() ||
        frames_hat.front().shape() != frames.front().shape()) {
        throw Error("dir_loss: stylized and source videos disagree in shape");
    }
    if (e_style.dim() != e_source.dim()) {
        throw Error("dir_loss: style and source embeddings have different dims");
    }
    const int d = e_style.dim();

    Tensor text_delta = sub(e_style.vector, e_source.vector);
    double text_norm2 = 0;
    for (float v : text_delta.data()) text_norm2 += double(v) * v;
    const double text_norm = std::sqrt(text_norm2);

    Tensor acc = Tensor::scalar(0.0f);
    for (std::size_t ti = 0; ti < frames_hat.size(); ++ti) {
        Tensor contribution = Tensor::scalar(1.0f);  // degenerate-direction sentinel
        if (text_norm >= 1e-8) {
            Tensor delta = sub(image_embed(frames_hat[ti], d), image_embed(frames[ti], d));
            Tensor delta_norm2 = reduce_sum(square(delta));
            if (std::sqrt(double(delta_norm2.item())) >= 1e-8) {
                Tensor dot = reduce_sum(mul(delta, text_delta));
                Tensor denom = mul(sqrt(delta_norm2), Tensor::scalar(static_cast<float>(text_norm)));
                contribution = sub(Tensor::scalar(1.0f), div(dot, denom));
            }
        }
        acc = add(acc, contribution);
    }
    return mul(acc, Tensor::scalar(1.0f / static_cast<float>(frames_hat.size())));
}

Tensor total_loss(const Tensor& content, const Tensor& dir, const Tensor& tmd, const Tensor& tso,
                  const LossWeights& weights) {
    if (weights.lambda1 < 0 || weights.lambda2 < 0 || weights.lambda3 < 0 || weights.lambda4 < 0) {
        throw Error("total_loss: loss weights must be non-negative");
    }
    Tensor acc = mul(Tensor::scalar(weights.lambda1), content);
    acc = add(acc, mul(Tensor::scalar(weights.lambda2), dir));
    acc = add(acc, mul(Tensor::scalar(weights.lambda3), tmd));
    acc = add(acc, mul(Tensor::scalar(weights.lambda4), tso));
    return acc;
}

}  // namespace tssm
