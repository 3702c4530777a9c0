#pragma once

// Video clips in memory and on disk. On disk a clip is a directory of
// binary PPM (P6) frames named frame_000000.ppm ... plus a manifest.txt of
// T=/H=/W=/kind=/seed= lines. Synthetic generators provide deterministic
// desk-scale test footage.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tssm/tensor.hpp"

namespace tssm {

struct VideoClip {
    std::vector<Tensor> frames;  // each [H,W,3], pixels in [0,1]

    int length() const { return static_cast<int>(frames.size()); }
    int height() const { return frames.at(0).shape()[0]; }
    int width() const { return frames.at(0).shape()[1]; }
    // Uniform shapes, finite pixels inside [0,1].
    void validate() const;
};

enum class SynthKind { moving_square, scene_cut, occlusion };

SynthKind parse_synth_kind(const std::string& name);
const char* synth_kind_name(SynthKind kind);

// moving_square: a colored square drifting 1 px/frame (bouncing at edges)
// over a static textured background.
// scene_cut: background, texture and object all swap at frame floor(T/2).
// occlusion: a second object covers the first every 4 frames.
VideoClip synth_video(SynthKind kind, int t, int h, int w, std::uint64_t seed);

// Binary PPM, "P6\n<w> <h>\n255\n" + RGB rows, quantization round(v*255).
std::vector<std::uint8_t> write_ppm(const Tensor& frame);
Tensor read_ppm(std::span<const std::uint8_t> bytes);

struct ClipManifest {
    int t = 0, h = 0, w = 0;
    std::string kind = "unknown";
    std::uint64_t seed = 0;
};

void write_clip_dir(const std::filesystem::path& dir, const VideoClip& clip,
                    const ClipManifest& manifest);
VideoClip read_clip_dir(const std::filesystem::path& dir, ClipManifest* manifest_out = nullptr);

}  // namespace tssm
