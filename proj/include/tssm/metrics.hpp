#pragma once

// Evaluation-only measures: windowed SSIM, temporal SSIM over consecutive
// stylized frames, and a toy-embedding style score. None of these ever
// participate in gradient computation.

#include <cstdint>
#include <string>
#include <vector>

#include "tssm/model.hpp"
#include "tssm/tensor.hpp"

namespace tssm {

// SSIM with a 7x7 uniform window over valid positions only, population
// statistics, C1=(0.01)^2 and C2=(0.03)^2 for a [0,1] pixel range. Computed
// per channel, then channel-averaged.
double ssim(const Tensor& a, const Tensor& b);

// ssim of each consecutive pair; requires at least two frames.
std::vector<double> pairwise_ssim(const std::vector<Tensor>& frames);

// Mean of pairwise_ssim.
double t_ssim(const std::vector<Tensor>& frames);

// Mean over frames of cos(image_embed(frame), e_style).
double style_score(const std::vector<Tensor>& frames, const TextEmbedding& e_style);

struct EvalReport {
    double t_ssim = 0.0;
    double style_score = 0.0;
    std::int64_t model_size_bytes = 0;
    std::vector<double> pair_ssim;

    // Flat key=value lines: t_ssim, style_score, style_score_note,
    // model_size_bytes, pair_ssim_<t> (t = 1-based index of the later frame).
    std::string to_text() const;
};

EvalReport evaluate(const std::vector<Tensor>& frames, const TextEmbedding& e_style,
                    std::int64_t model_size_bytes);

}  // namespace tssm
