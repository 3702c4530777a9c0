#pragma once

// Diagonal state-space scan layers and the fusion operator that carries
// style state across video frames. Each layer runs an independent linear
// recurrence per channel over a flattened spatial sequence:
//
//   x_l = a_j * x_{l-1} + b_j * u_{l,j}      (x_{-1} = 0)
//   y_l = c_j * x_l     + d_j * u_{l,j}
//
// with the decay a_j = sigmoid(a_raw_j) kept strictly inside (0, 1).

#include <vector>

#include "tssm/tensor.hpp"

namespace tssm {

struct SsmLayerParams {
    Tensor a_raw;  // [c] pre-activation decay; effective decay sigmoid(a_raw)
    Tensor b;      // [c] input gain
    Tensor c_out;  // [c] state readout
    Tensor d;      // [c] passthrough
};

// Channel count of a layer; throws if the four vectors disagree.
int layer_channels(const SsmLayerParams& layer);

// A layer with b=0, d=1: output equals input, state never excited.
SsmLayerParams identity_layer(int channels);

struct FusionParams {
    Tensor alpha;  // rank-0, weight of the carried state
    Tensor beta;   // rank-0, weight of the content features
    Tensor gamma;  // rank-0, weight of the style map
    std::vector<SsmLayerParams> layers;
};

// Runs one scan layer over u [L,c]. Differentiable in u and all four
// parameter vectors.
Tensor ssm_scan(const Tensor& u, const SsmLayerParams& layer);

// Verification route: the textbook sequential loop, position-major, forward
// values only. Kept free of any shared code with ssm_scan's recurrence.
Tensor ssm_scan_naive(const Tensor& u, const SsmLayerParams& layer);

// Fusion operator: z = alpha*h_prev + beta*f_t + gamma*s, flattened to a
// raster-order [h*w, c] sequence, pushed through the stacked scan layers,
// reshaped back to [h,w,c]. The result is the new carried state.
Tensor fuse(const Tensor& h_prev, const Tensor& f_t, const Tensor& s,
            const FusionParams& params);

// Residual mix of carried state and content features.
Tensor mix_output(const Tensor& h_t, const Tensor& f_t);

}  // namespace tssm
