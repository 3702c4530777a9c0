#include "tssm/model.hpp"

#include <cctype>
#include <cmath>

#include "tssm/rng.hpp"

namespace tssm {

namespace {

// Fixed stream tag so parameter init and other seed users never collide.
constexpr std::uint64_t kParamInitStream = 0x70617261'6d696e69ull;

std::uint64_t hash_token(const std::string& token) {
    std::uint64_t h = 0x746f6b656e5f6830ull;
    for (unsigned char ch : token) {
        h = mix64(h ^ ch);
    }
    return h;
}

// Pseudo-random unit vector for one token.
std::vector<float> token_vector(std::uint64_t hash, int dim) {
    DetRng rng(hash);
    std::vector<float> v(dim);
    double norm2 = 0;
    for (int i = 0; i < dim; ++i) {
        v[i] = rng.next_sym();
        norm2 += double(v[i]) * v[i];
    }
    if (norm2 < 1e-24) {
        v[0] = 1.0f;
        return v;
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(norm2));
    for (float& x : v) x *= inv;
    return v;
}

Tensor uniform_tensor(Shape shape, float bound, DetRng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.mutable_data()) v = rng.next_uniform(-bound, bound);
    return t;
}

}  // namespace

TextEmbedding encode_text(const std::string& prompt, int embed_dim) {
    if (embed_dim < 1) throw Error("encode_text: embed_dim must be positive");
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : prompt) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    if (tokens.empty()) throw Error("encode_text: empty prompt");

    std::vector<double> acc(embed_dim, 0.0);
    for (const std::string& token : tokens) {
        std::vector<float> v = token_vector(hash_token(token), embed_dim);
        for (int i = 0; i < embed_dim; ++i) acc[i] += v[i];
    }
    double norm2 = 0;
    for (double v : acc) norm2 += v * v;
    std::vector<float> out(embed_dim, 0.0f);
    if (norm2 < 1e-24) {
        out[0] = 1.0f;  // unreachable in practice; keeps the unit-norm invariant
    } else {
        const double inv = 1.0 / std::sqrt(norm2);
        for (int i = 0; i < embed_dim; ++i) out[i] = static_cast<float>(acc[i] * inv);
    }
    return TextEmbedding{Tensor::from_data({embed_dim}, std::move(out))};
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    if (config.channels < 1 || config.embed_dim < 1 || config.ssm_layers < 1) {
        throw Error("model init: channels, embed_dim and ssm_layers must be positive");
    }
    if (config.kernel < 1 || config.kernel % 2 == 0) {
        throw Error("model init: kernel size must be odd and positive");
    }
    const int c = config.channels, d = config.embed_dim, k = config.kernel;
    DetRng rng(mix_seeds(seed, kParamInitStream));

    ModelParams p;
    p.config = config;
    p.encoder.conv1_kernel = uniform_tensor({k, k, 3, c}, std::sqrt(6.0f / (k * k * 3)), rng);
    p.encoder.conv1_bias = Tensor::zeros({c});
    p.encoder.conv2_kernel = uniform_tensor({k, k, c, c}, std::sqrt(6.0f / (k * k * c)), rng);
    p.encoder.conv2_bias = Tensor::zeros({c});
    p.style_w = uniform_tensor({d, c}, std::sqrt(6.0f / d), rng);
    p.style_bias = Tensor::zeros({c});
    p.dec_kernel = uniform_tensor({k, k, c, 3}, std::sqrt(6.0f / (k * k * c)), rng);
    p.dec_bias = Tensor::zeros({3});
    // content-dominant start for the fusion scalars
    p.fusion.alpha = Tensor::scalar(0.5f);
    p.fusion.beta = Tensor::scalar(1.0f);
    p.fusion.gamma = Tensor::scalar(0.5f);
    for (int l = 0; l < config.ssm_layers; ++l) {
        SsmLayerParams layer;
        layer.a_raw = uniform_tensor({c}, 1.0f, rng);
        layer.b = uniform_tensor({c}, 0.5f, rng);
        layer.c_out = uniform_tensor({c}, 0.5f, rng);
        layer.d = Tensor::full({c}, 1.0f);  // near-passthrough start
        p.fusion.layers.push_back(std::move(layer));
    }
    return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out = {
        {"enc1_kernel", &encoder.conv1_kernel}, {"enc1_bias", &encoder.conv1_bias},
        {"enc2_kernel", &encoder.conv2_kernel}, {"enc2_bias", &encoder.conv2_bias},
        {"style_w", &style_w},                  {"style_bias", &style_bias},
        {"dec_kernel", &dec_kernel},            {"dec_bias", &dec_bias},
        {"fusion_alpha", &fusion.alpha},        {"fusion_beta", &fusion.beta},
        {"fusion_gamma", &fusion.gamma},
    };
    for (std::size_t l = 0; l < fusion.layers.size(); ++l) {
        const std::string prefix = "ssm" + std::to_string(l) + "_";
        out.emplace_back(prefix + "a_raw", &fusion.layers[l].a_raw);
        out.emplace_back(prefix + "b", &fusion.layers[l].b);
        out.emplace_back(prefix + "c", &fusion.layers[l].c_out);
        out.emplace_back(prefix + "d", &fusion.layers[l].d);
    }
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_params() const {
    auto mutable_list = const_cast<ModelParams*>(this)->named_params();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mutable_list.size());
    for (auto& [name, t] : mutable_list) out.emplace_back(name, t);
    return out;
}

ModelParams ModelParams::bound(Tape& tape) const {
    ModelParams copy = *this;
    for (auto& [name, tensor] : copy.named_params()) {
        *tensor = tape.leaf(*tensor);
    }
    return copy;
}

EncoderParams ModelParams::detached_encoder() const {
    return EncoderParams{encoder.conv1_kernel.detached(), encoder.conv1_bias.detached(),
                         encoder.conv2_kernel.detached(), encoder.conv2_bias.detached()};
}

Tensor encode_frame(const Tensor& image, const EncoderParams& encoder) {
    if (image.rank() != 3 || image.shape()[2] != encoder.conv1_kernel.shape()[2]) {
        throw Error("encode_frame: expected [H,W," +
                    std::to_string(encoder.conv1_kernel.shape()[2]) + "] image, got " +
                    shape_str(image.shape()));
    }
    const int h = image.shape()[0], w = image.shape()[1];
    if (h % 2 != 0 || w % 2 != 0) {
        throw Error("encode_frame: spatial dims must be even, got " + shape_str(image.shape()));
    }
    Tensor x = conv2d(image, encoder.conv1_kernel);
    x = add(x, tile_spatial(encoder.conv1_bias, h, w));
    x = relu(x);
    x = conv2d(x, encoder.conv2_kernel);
    x = add(x, tile_spatial(encoder.conv2_bias, h, w));
    return subsample2(x);
}

Tensor project_style(const TextEmbedding& e, const ModelParams& params, int h, int w) {
    const int d = params.style_w.shape()[0];
    const int c = params.style_w.shape()[1];
    if (e.dim() != d) {
        throw Error("project_style: embedding dim " + std::to_string(e.dim()) +
                    " does not match style matrix " + shape_str(params.style_w.shape()));
    }
    Tensor row = reshape(e.vector, {1, d});
    Tensor style_vec = add(matmul(row, params.style_w), reshape(params.style_bias, {1, c}));
    return tile_spatial(reshape(style_vec, {c}), h, w);
}

Tensor decode_features(const Tensor& f_hat, const ModelParams& params) {
    if (f_hat.rank() != 3 || f_hat.shape()[2] != params.dec_kernel.shape()[2]) {
        throw Error("decode_features: expected [h,w," + std::to_string(params.dec_kernel.shape()[2]) +
                    "] features, got " + shape_str(f_hat.shape()));
    }
    Tensor up = upsample2_nearest(f_hat);
    Tensor x = conv2d(up, params.dec_kernel);
    x = add(x, tile_spatial(params.dec_bias, up.shape()[0], up.shape()[1]));
    return sigmoid(x);
}

StylizeResult stylize_frame(const Tensor& image, const Tensor& h_prev, const TextEmbedding& e,
                            const ModelParams& params) {
    Tensor features = encode_frame(image, params.encoder);
    Tensor style = project_style(e, params, features.shape()[0], features.shape()[1]);
    Tensor state = fuse(h_prev, features, style, params.fusion);
    Tensor mixed = mix_output(state, features);
    Tensor out = decode_features(mixed, params);
    return StylizeResult{std::move(out), std::move(state)};
}

std::int64_t param_count(const ModelConfig& config) {
    const std::int64_t c = config.channels, d = config.embed_dim, k = config.kernel;
    const std::int64_t enc = (k * k * 3 * c + c) + (k * k * c * c + c);
    const std::int64_t style = d * c + c;
    const std::int64_t dec = k * k * c * 3 + 3;
    const std::int64_t ssm = std::int64_t(config.ssm_layers) * 4 * c;
    return enc + style + dec + ssm + 3;
}

std::int64_t param_count(const ModelParams& params) {
    return param_count(params.config);
}

std::int64_t model_size_bytes(const ModelParams& params) {
    // magic + version + group count
    std::int64_t total = 4 + 4 + 4;
    for (const auto& [name, tensor] : params.named_params()) {
        total += 4 + static_cast<std::int64_t>(name.size());  // name length + bytes
        total += 4 + 4 * static_cast<std::int64_t>(tensor->rank());  // rank + dims
        total += 4 * tensor->numel();
    }
    return total;
}

}  // namespace tssm
