#include "tssm/video.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "tssm/rng.hpp"

namespace tssm {

void VideoClip::validate() const {
    if (frames.empty()) throw Error("clip: no frames");
    const Shape& shape = frames.front().shape();
    if (shape.size() != 3 || shape[2] != 3) {
        throw Error("clip: frames must be [H,W,3], got " + shape_str(shape));
    }
    for (const Tensor& f : frames) {
        if (f.shape() != shape) throw Error("clip: frames have mismatched shapes");
        for (float v : f.data()) {
            if (!(v >= 0.0f && v <= 1.0f)) {
                throw Error("clip: pixel value " + std::to_string(v) + " outside [0,1]");
            }
        }
    }
}

SynthKind parse_synth_kind(const std::string& name) {
    if (name == "moving_square") return SynthKind::moving_square;
    if (name == "scene_cut") return SynthKind::scene_cut;
    if (name == "occlusion") return SynthKind::occlusion;
    throw ConfigError("unknown synthetic clip kind '" + name +
                      "' (expected moving_square, scene_cut or occlusion)");
}

const char* synth_kind_name(SynthKind kind) {
    switch (kind) {
        case SynthKind::moving_square: return "moving_square";
        case SynthKind::scene_cut: return "scene_cut";
        case SynthKind::occlusion: return "occlusion";
    }
    throw Error("synth_kind_name: bad kind");
}

namespace {

struct Scene {
    std::array<float, 3> background;
    std::array<float, 3> square;
    std::vector<float> texture;  // [h*w] in [0,1), static per scene
};

Scene make_scene(DetRng& rng, int h, int w, bool bright) {
    Scene s;
    for (int k = 0; k < 3; ++k) {
        s.background[k] = bright ? rng.next_uniform(0.65f, 0.9f) : rng.next_uniform(0.08f, 0.3f);
        s.square[k] = bright ? rng.next_uniform(0.05f, 0.3f) : rng.next_uniform(0.7f, 0.95f);
    }
    s.texture.resize(std::size_t(h) * w);
    for (float& v : s.texture) v = rng.next_unit();
    return s;
}

void paint_background(Tensor& frame, const Scene& scene, int h, int w, float texture_amp) {
    float* p = frame.mutable_data().data();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float noise = (scene.texture[std::size_t(y) * w + x] - 0.5f) * texture_amp;
            for (int k = 0; k < 3; ++k) {
                float v = scene.background[k] + noise;
                p[(std::size_t(y) * w + x) * 3 + k] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            }
        }
    }
}

void paint_square(Tensor& frame, int y0, int x0, int size, const std::array<float, 3>& color,
                  int h, int w) {
    float* p = frame.mutable_data().data();
    for (int y = std::max(0, y0); y < std::min(h, y0 + size); ++y) {
        for (int x = std::max(0, x0); x < std::min(w, x0 + size); ++x) {
            for (int k = 0; k < 3; ++k) p[(std::size_t(y) * w + x) * 3 + k] = color[k];
        }
    }
}

// position bouncing between 0 and limit, advancing 1 px/frame
int bounce(int start, int step, int limit) {
    if (limit <= 0) return 0;
    const int period = 2 * limit;
    int u = (start + step) % period;
    if (u < 0) u += period;
    return u < limit ? u : period - u;
}

}  // namespace

VideoClip synth_video(SynthKind kind, int t, int h, int w, std::uint64_t seed) {
    if (t < 1) throw ConfigError("synth_video: frame count must be >= 1");
    if (h < 16 || w < 16 || h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("synth_video: spatial dims must be even and >= 16, got " +
                          std::to_string(w) + "x" + std::to_string(h));
    }
    const float texture_amp = 0.12f;
    DetRng rng(mix64(seed));

    VideoClip clip;
    clip.frames.reserve(t);

    switch (kind) {
        case SynthKind::moving_square: {
            Scene scene = make_scene(rng, h, w, false);
            const int size = std::max(4, h / 4);
            const int y0 = static_cast<int>(rng.next_below(std::uint64_t(h - size)));
            const int x0 = static_cast<int>(rng.next_below(std::uint64_t(w - size)));
            for (int ti = 0; ti < t; ++ti) {
                Tensor frame = Tensor::zeros({h, w, 3});
                paint_background(frame, scene, h, w, texture_amp);
                paint_square(frame, bounce(y0, ti, h - size), bounce(x0, ti, w - size), size,
                             scene.square, h, w);
                clip.frames.push_back(std::move(frame));
            }
            break;
        }
        case SynthKind::scene_cut: {
            Scene first = make_scene(rng, h, w, false);
            Scene second = make_scene(rng, h, w, true);
            const int size = std::max(4, h / 4);
            const int y0 = static_cast<int>(rng.next_below(std::uint64_t(h - size)));
            const int x0 = static_cast<int>(rng.next_below(std::uint64_t(w - size)));
            const int cut = t / 2;
            for (int ti = 0; ti < t; ++ti) {
                const Scene& scene = ti < cut ? first : second;
                Tensor frame = Tensor::zeros({h, w, 3});
                paint_background(frame, scene, h, w, texture_amp);
                paint_square(frame, bounce(y0, ti, h - size), bounce(x0, ti, w - size), size,
                             scene.square, h, w);
                clip.frames.push_back(std::move(frame));
            }
            break;
        }
        case SynthKind::occlusion: {
            Scene scene = make_scene(rng, h, w, false);
            std::array<float, 3> occluder_color;
            for (int k = 0; k < 3; ++k) occluder_color[k] = rng.next_uniform(0.4f, 0.6f);
            const int size = std::max(4, h / 4);
            const int y0 = (h - size) / 2;
            const int x0 = (w - size) / 2;
            for (int ti = 0; ti < t; ++ti) {
                Tensor frame = Tensor::zeros({h, w, 3});
                paint_background(frame, scene, h, w, texture_amp);
                paint_square(frame, y0, x0, size, scene.square, h, w);
                // occluder sits on the object two frames out of every four
                if (ti % 4 < 2) {
                    paint_square(frame, y0, x0, size, occluder_color, h, w);
                } else {
                    paint_square(frame, y0, std::min(w - size, x0 + size + 2), size,
                                 occluder_color, h, w);
                }
                clip.frames.push_back(std::move(frame));
            }
            break;
        }
    }
    return clip;
}

std::vector<std::uint8_t> write_ppm(const Tensor& frame) {
    if (frame.rank() != 3 || frame.shape()[2] != 3) {
        throw Error("write_ppm: expected [H,W,3] frame, got " + shape_str(frame.shape()));
    }
    const int h = frame.shape()[0], w = frame.shape()[1];
    for (float v : frame.data()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw Error("write_ppm: pixel value " + std::to_string(v) + " outside [0,1]");
        }
    }
    char header[64];
    const int header_len = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", w, h);
    std::vector<std::uint8_t> out(header, header + header_len);
    out.reserve(out.size() + frame.numel());
    for (float v : frame.data()) {
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
    return out;
}

namespace {

// Reads one whitespace-delimited ASCII integer from a PPM header.
long ppm_int(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
        throw Error("read_ppm: malformed header");
    }
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        value = value * 10 + (bytes[pos] - '0');
        if (value > 1 << 24) throw Error("read_ppm: implausible header value");
        ++pos;
    }
    return value;
}

}  // namespace

Tensor read_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        throw Error("read_ppm: not a binary PPM (missing P6 magic)");
    }
    std::size_t pos = 2;
    const long w = ppm_int(bytes, pos);
    const long h = ppm_int(bytes, pos);
    const long maxval = ppm_int(bytes, pos);
    if (w < 1 || h < 1) throw Error("read_ppm: bad dimensions");
    if (maxval != 255) throw Error("read_ppm: unsupported max value " + std::to_string(maxval));
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw Error("read_ppm: malformed header");
    }
    ++pos;  // exactly one whitespace byte separates header and payload

    const std::size_t payload = std::size_t(h) * w * 3;
    if (bytes.size() - pos < payload) throw Error("read_ppm: truncated payload");
    if (bytes.size() - pos > payload) throw Error("read_ppm: trailing bytes after payload");

    Tensor frame = Tensor::zeros({static_cast<int>(h), static_cast<int>(w), 3});
    float* p = frame.mutable_data().data();
    for (std::size_t i = 0; i < payload; ++i) {
        p[i] = static_cast<float>(bytes[pos + i]) / 255.0f;
    }
    return frame;
}

void write_clip_dir(const std::filesystem::path& dir, const VideoClip& clip,
                    const ClipManifest& manifest) {
    clip.validate();
    std::filesystem::create_directories(dir);
    for (int ti = 0; ti < clip.length(); ++ti) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%06d.ppm", ti);
        const std::vector<std::uint8_t> bytes = write_ppm(clip.frames[ti]);
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("clip: cannot write '" + (dir / name).string() + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    std::ofstream mf(dir / "manifest.txt", std::ios::trunc);
    if (!mf) throw Error("clip: cannot write manifest in '" + dir.string() + "'");
    mf << "T=" << clip.length() << "\n"
       << "H=" << clip.height() << "\n"
       << "W=" << clip.width() << "\n"
       << "kind=" << manifest.kind << "\n"
       << "seed=" << manifest.seed << "\n";
}

VideoClip read_clip_dir(const std::filesystem::path& dir, ClipManifest* manifest_out) {
    std::ifstream mf(dir / "manifest.txt");
    if (!mf) throw Error("clip: missing manifest.txt in '" + dir.string() + "'");
    ClipManifest manifest;
    std::string line;
    while (std::getline(mf, line)) {
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "T") manifest.t = std::stoi(value);
            else if (key == "H") manifest.h = std::stoi(value);
            else if (key == "W") manifest.w = std::stoi(value);
            else if (key == "kind") manifest.kind = value;
            else if (key == "seed") manifest.seed = std::stoull(value);
        } catch (const std::exception&) {
            throw Error("clip: malformed manifest line '" + line + "'");
        }
    }
    if (manifest.t < 1) throw Error("clip: manifest has no positive frame count");

    VideoClip clip;
    clip.frames.reserve(manifest.t);
    for (int ti = 0; ti < manifest.t; ++ti) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%06d.ppm", ti);
        std::ifstream in(dir / name, std::ios::binary);
        if (!in) throw Error("clip: missing frame '" + (dir / name).string() + "'");
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        clip.frames.push_back(read_ppm(bytes));
    }
    clip.validate();
    if (clip.height() != manifest.h || clip.width() != manifest.w) {
        throw Error("clip: manifest dims disagree with frames");
    }
    if (manifest_out) *manifest_out = manifest;
    return clip;
}

}  // namespace tssm
