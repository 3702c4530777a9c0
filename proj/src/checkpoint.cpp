#include "tssm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace tssm {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u32(out, bits);
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw Error("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = std::uint32_t(bytes[pos]) | (std::uint32_t(bytes[pos + 1]) << 8) |
                          (std::uint32_t(bytes[pos + 2]) << 16) |
                          (std::uint32_t(bytes[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
};

Tensor take_group(std::map<std::string, Tensor>& groups, const std::string& name) {
    auto it = groups.find(name);
    if (it == groups.end()) throw Error("checkpoint: missing parameter group '" + name + "'");
    Tensor t = std::move(it->second);
    groups.erase(it);
    return t;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params) {
    std::vector<std::uint8_t> out;
    out.reserve(static_cast<std::size_t>(model_size_bytes(params)));
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
    put_u32(out, kCheckpointVersion);
    const auto named = params.named_params();
    put_u32(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, tensor] : named) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(tensor->rank()));
        for (int dim : tensor->shape()) put_u32(out, static_cast<std::uint32_t>(dim));
        for (float v : tensor->data()) put_f32(out, v);
    }
    return out;
}

ModelParams deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    const std::string magic = r.str(4);
    if (magic != std::string(kCheckpointMagic, 4)) {
        throw Error("checkpoint: bad magic '" + magic + "', expected \"TSSM\"");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw Error("checkpoint: unsupported format version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();

    std::map<std::string, Tensor> groups;
    for (std::uint32_t g = 0; g < count; ++g) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw Error("checkpoint: implausible rank for group '" + name + "'");
        Shape shape;
        std::int64_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint32_t dim = r.u32();
            if (dim == 0 || dim > (1u << 20)) {
                throw Error("checkpoint: implausible dimension in group '" + name + "'");
            }
            shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        std::vector<float> data(static_cast<std::size_t>(numel));
        for (float& v : data) v = r.f32();
        if (groups.count(name)) throw Error("checkpoint: duplicate group '" + name + "'");
        groups.emplace(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
    }
    if (r.pos != bytes.size()) throw Error("checkpoint: trailing bytes after last group");

    ModelParams p;
    p.encoder.conv1_kernel = take_group(groups, "enc1_kernel");
    p.encoder.conv1_bias = take_group(groups, "enc1_bias");
    p.encoder.conv2_kernel = take_group(groups, "enc2_kernel");
    p.encoder.conv2_bias = take_group(groups, "enc2_bias");
    p.style_w = take_group(groups, "style_w");
    p.style_bias = take_group(groups, "style_bias");
    p.dec_kernel = take_group(groups, "dec_kernel");
    p.dec_bias = take_group(groups, "dec_bias");
    p.fusion.alpha = take_group(groups, "fusion_alpha");
    p.fusion.beta = take_group(groups, "fusion_beta");
    p.fusion.gamma = take_group(groups, "fusion_gamma");
    for (int l = 0; groups.count("ssm" + std::to_string(l) + "_a_raw"); ++l) {
        const std::string prefix = "ssm" + std::to_string(l) + "_";
        SsmLayerParams layer;
        layer.a_raw = take_group(groups, prefix + "a_raw");
        layer.b = take_group(groups, prefix + "b");
        layer.c_out = take_group(groups, prefix + "c");
        layer.d = take_group(groups, prefix + "d");
        p.fusion.layers.push_back(std::move(layer));
    }
    if (!groups.empty()) {
        throw Error("checkpoint: unrecognized parameter group '" + groups.begin()->first + "'");
    }
    if (p.fusion.layers.empty()) throw Error("checkpoint: no ssm layers present");

    if (p.encoder.conv1_kernel.rank() != 4 || p.style_w.rank() != 2) {
        throw Error("checkpoint: malformed parameter shapes");
    }
    p.config.kernel = p.encoder.conv1_kernel.shape()[0];
    p.config.channels = p.encoder.conv1_kernel.shape()[3];
    p.config.embed_dim = p.style_w.shape()[0];
    p.config.ssm_layers = static_cast<int>(p.fusion.layers.size());
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    const std::vector<std::uint8_t> bytes = serialize_checkpoint(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("checkpoint: cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("checkpoint: write failed for '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("checkpoint: cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace tssm
