#include "tssm/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "tssm/losses.hpp"

namespace tssm {

namespace {
constexpr int kWindow = 7;
constexpr double kC1 = 0.01 * 0.01;  // (0.01 * L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;
}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || a.shape() != b.shape()) {
        throw Error("ssim: expected equal-shaped [H,W,c] images, got " + shape_str(a.shape()) +
                    " and " + shape_str(b.shape()));
    }
    const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
    if (h < kWindow || w < kWindow) {
        throw Error("ssim: image " + shape_str(a.shape()) + " smaller than the 7x7 window");
    }
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    const double n = double(kWindow) * kWindow;

    double total = 0;
    for (int ch = 0; ch < c; ++ch) {
        double channel_acc = 0;
        for (int wy = 0; wy + kWindow <= h; ++wy) {
            for (int wx = 0; wx + kWindow <= w; ++wx) {
                double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                for (int y = wy; y < wy + kWindow; ++y) {
                    for (int x = wx; x < wx + kWindow; ++x) {
                        const double va = pa[(std::size_t(y) * w + x) * c + ch];
                        const double vb = pb[(std::size_t(y) * w + x) * c + ch];
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                const double mu_a = sa / n, mu_b = sb / n;
                const double var_a = saa / n - mu_a * mu_a;
                const double var_b = sbb / n - mu_b * mu_b;
                const double cov = sab / n - mu_a * mu_b;
                channel_acc += ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
                               ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
            }
        }
        const double positions = double(h - kWindow + 1) * (w - kWindow + 1);
        total += channel_acc / positions;
    }
    return total / c;
}

std::vector<double> pairwise_ssim(const std::vector<Tensor>& frames) {
    if (frames.size() < 2) throw Error("t_ssim: needs at least two frames");
    std::vector<double> pairs;
    pairs.reserve(frames.size() - 1);
    for (std::size_t t = 1; t < frames.size(); ++t) {
        pairs.push_back(ssim(frames[t], frames[t - 1]));
    }
    return pairs;
}

double t_ssim(const std::vector<Tensor>& frames) {
    const std::vector<double> pairs = pairwise_ssim(frames);
    double acc = 0;
    for (double v : pairs) acc += v;
    return acc / double(pairs.size());
}

double style_score(const std::vector<Tensor>& frames, const TextEmbedding& e_style) {
    if (frames.empty()) throw Error("style_score: no frames");
    const int d = e_style.dim();
    double acc = 0;
    for (const Tensor& frame : frames) {
        // evaluation-only: never records onto a caller's tape
        Tensor embedded = image_embed(frame.detached(), d);
        double dot = 0, n2 = 0;
        for (int i = 0; i < d; ++i) {
            dot += double(embedded.data()[i]) * e_style.vector.data()[i];
            n2 += double(embedded.data()[i]) * embedded.data()[i];
        }
        // the embeddings are unit or exactly zero; a zero embedding scores 0
        acc += n2 < 1e-24 ? 0.0 : dot / std::sqrt(n2);
    }
    return acc / double(frames.size());
}

std::string EvalReport::to_text() const {
    char line[128];
    std::string out;
    std::snprintf(line, sizeof(line), "t_ssim=%.6f\n", t_ssim);
    out += line;
    std::snprintf(line, sizeof(line), "style_score=%.6f\n", style_score);
    out += line;
    out += "style_score_note=toy hashed-embedding score; not comparable to CLIP-based scores\n";
    std::snprintf(line, sizeof(line), "model_size_bytes=%lld\n",
                  static_cast<long long>(model_size_bytes));
    out += line;
    for (std::size_t i = 0; i < pair_ssim.size(); ++i) {
        std::snprintf(line, sizeof(line), "pair_ssim_%zu=%.6f\n", i + 1, pair_ssim[i]);
        out += line;
    }
    return out;
}

EvalReport evaluate(const std::vector<Tensor>& frames, const TextEmbedding& e_style,
                    std::int64_t model_size_bytes) {
    EvalReport report;
    report.pair_ssim = pairwise_ssim(frames);
    double acc = 0;
    for (double v : report.pair_ssim) acc += v;
    report.t_ssim = acc / double(report.pair_ssim.size());
    report.style_score = style_score(frames, e_style);
    report.model_size_bytes = model_size_bytes;
    return report;
}

}  // namespace tssm
