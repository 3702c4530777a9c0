#include "tssm/ssm.hpp"

#include <cmath>

namespace tssm {

int layer_channels(const SsmLayerParams& layer) {
    if (layer.a_raw.rank() != 1 || layer.b.rank() != 1 || layer.c_out.rank() != 1 ||
        layer.d.rank() != 1) {
        throw Error("ssm layer: parameter vectors must be rank-1");
    }
    const int c = layer.a_raw.shape()[0];
    if (layer.b.shape()[0] != c || layer.c_out.shape()[0] != c || layer.d.shape()[0] != c) {
        throw Error("ssm layer: parameter vectors have mismatched channel counts");
    }
    return c;
}

SsmLayerParams identity_layer(int channels) {
    SsmLayerParams layer;
    layer.a_raw = Tensor::zeros({channels});
    layer.b = Tensor::zeros({channels});
    layer.c_out = Tensor::zeros({channels});
    layer.d = Tensor::full({channels}, 1.0f);
    return layer;
}

namespace {

// Recorded scan primitive over the effective (post-sigmoid) decay.
Tensor scan_apply(const Tensor& u, const Tensor& a, const Tensor& b, const Tensor& c,
                  const Tensor& d) {
    const int length = u.shape()[0];
    const int channels = u.shape()[1];

    std::vector<float> states(std::size_t(length) * channels);
    Tensor out = Tensor::zeros({length, channels});
    const float* pu = u.data().data();
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    const float* pc = c.data().data();
    const float* pd = d.data().data();
    float* po = out.mutable_data().data();

    for (int j = 0; j < channels; ++j) {
        const float aj = pa[j], bj = pb[j], cj = pc[j], dj = pd[j];
        float x = 0.0f;
        for (int l = 0; l < length; ++l) {
            const float uv = pu[std::size_t(l) * channels + j];
            x = aj * x + bj * uv;
            states[std::size_t(l) * channels + j] = x;
            po[std::size_t(l) * channels + j] = cj * x + dj * uv;
        }
    }

    Tape* tape = nullptr;
    for (const Tensor* t : {&u, &a, &b, &c, &d}) {
        if (!t->tracked()) continue;
        if (tape && t->tape() != tape) {
            throw Error("ssm_scan: operands belong to different records");
        }
        tape = t->tape();
    }
    if (tape) {
        tape->record(
            "ssm_scan", {&u, &a, &b, &c, &d}, out,
            [length, channels, uv = std::vector<float>(u.data().begin(), u.data().end()),
             av = std::vector<float>(a.data().begin(), a.data().end()),
             bv = std::vector<float>(b.data().begin(), b.data().end()),
             cv = std::vector<float>(c.data().begin(), c.data().end()),
             dv = std::vector<float>(d.data().begin(), d.data().end()),
             xs = std::move(states)](std::span<const float> g, const std::vector<float*>& gin) {
                for (int j = 0; j < channels; ++j) {
                    const double aj = av[j], bj = bv[j], cj = cv[j], dj = dv[j];
                    double ga = 0, gb = 0, gc = 0, gd = 0;
                    double xbar = 0;  // dL/dx_l carried backward
                    for (int l = length - 1; l >= 0; --l) {
                        const std::size_t idx = std::size_t(l) * channels + j;
                        const double gy = g[idx];
                        const double xl = xs[idx];
                        const double ul = uv[idx];
                        gc += gy * xl;
                        gd += gy * ul;
                        xbar = cj * gy + aj * xbar;
                        const double x_prev = l > 0 ? xs[idx - channels] : 0.0;
                        ga += xbar * x_prev;
                        gb += xbar * ul;
                        if (gin[0]) gin[0][idx] += static_cast<float>(dj * gy + bj * xbar);
                    }
                    if (gin[1]) gin[1][j] += static_cast<float>(ga);
                    if (gin[2]) gin[2][j] += static_cast<float>(gb);
                    if (gin[3]) gin[3][j] += static_cast<float>(gc);
                    if (gin[4]) gin[4][j] += static_cast<float>(gd);
                }
            });
    }
    return out;
}

void validate_scan_input(const Tensor& u, const SsmLayerParams& layer) {
    if (u.rank() != 2) {
        throw Error("ssm_scan: input must be [length, channels], got " + shape_str(u.shape()));
    }
    if (u.shape()[1] != layer_channels(layer)) {
        throw Error("ssm_scan: input has " + std::to_string(u.shape()[1]) +
                    " channels, layer has " + std::to_string(layer_channels(layer)));
    }
}

}  // namespace

Tensor ssm_scan(const Tensor& u, const SsmLayerParams& layer) {
    validate_scan_input(u, layer);
    Tensor a = sigmoid(layer.a_raw);
    return scan_apply(u, a, layer.b, layer.c_out, layer.d);
}

Tensor ssm_scan_naive(const Tensor& u, const SsmLayerParams& layer) {
    validate_scan_input(u, layer);
    const int length = u.shape()[0];
    const int channels = u.shape()[1];
    Tensor out = Tensor::zeros({length, channels});
    float* po = out.mutable_data().data();

    std::vector<float> x(channels, 0.0f);
    for (int l = 0; l < length; ++l) {
        for (int j = 0; j < channels; ++j) {
            const float a = 1.0f / (1.0f + std::exp(-layer.a_raw.data()[j]));
            const float uv = u.data()[std::size_t(l) * channels + j];
            x[j] = a * x[j] + layer.b.data()[j] * uv;
            po[std::size_t(l) * channels + j] = layer.c_out.data()[j] * x[j] + layer.d.data()[j] * uv;
        }
    }
    return out;
}

Tensor fuse(const Tensor& h_prev, const Tensor& f_t, const Tensor& s, const FusionParams& params) {
    if (h_prev.rank() != 3 || f_t.rank() != 3 || s.rank() != 3) {
        throw Error("fuse: feature maps must be rank-3 [h,w,c]");
    }
    if (h_prev.shape() != f_t.shape() || f_t.shape() != s.shape()) {
        throw Error("fuse: shape mismatch " + shape_str(h_prev.shape()) + " vs " +
                    shape_str(f_t.shape()) + " vs " + shape_str(s.shape()));
    }
    const int h = f_t.shape()[0], w = f_t.shape()[1], c = f_t.shape()[2];

    Tensor z = add(add(mul(params.alpha, h_prev), mul(params.beta, f_t)), mul(params.gamma, s));
    Tensor u = reshape(z, {h * w, c});
    for (const SsmLayerParams& layer : params.layers) {
        u = ssm_scan(u, layer);
    }
    return reshape(u, {h, w, c});
}

Tensor mix_output(const Tensor& h_t, const Tensor& f_t) {
    if (h_t.shape() != f_t.shape()) {
        throw Error("mix_output: shape mismatch " + shape_str(h_t.shape()) + " vs " +
                    shape_str(f_t.shape()));
    }
    return add(h_t, f_t);
}

}  // namespace tssm
