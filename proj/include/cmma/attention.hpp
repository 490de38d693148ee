#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cmma/rng.hpp"
#include "cmma/tensor.hpp"

namespace cmma::attention {

/// One attention submodule: a channel-reducing 1x1 conv, ReLU, then a 1x1
/// conv down to a single response channel.
struct MamSubmodule {
    Tensor inner_weight;  // D1 x D
    Tensor inner_bias;    // D1
    Tensor outer_weight;  // 1 x D1
    Tensor outer_bias;    // 1
};

struct MamParams {
    std::size_t submodules = 0;  // K
    std::size_t channels = 0;    // D
    std::size_t bottleneck = 0;  // D1, must be < D

    std::vector<MamSubmodule> sub;

    /// Weights uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
    static MamParams init(std::size_t submodules, std::size_t channels, std::size_t bottleneck, Rng& rng);
};

/// Per-frame, per-submodule attentive distributions over the spatial grid;
/// every (n, k) slice is nonnegative and sums to 1.
struct AttentionStack {
    Tensor values;  // N x K x H x W
};

struct FusedFeatures {
    Tensor values;  // N x D x H x W
};

/// Submodule responses r[n,k] = outer(relu(inner(f[n]))). f: N x D x H x W.
Tensor attention_responses(const Tensor& features, const MamParams& params);

/// Global softmax over each (n, k) spatial slice.
AttentionStack attention_distributions(const Tensor& responses);

/// x[n,k,d] = a[n,k] (.) f[n,d].
Tensor weight_features(const AttentionStack& attn, const Tensor& features);

struct WeightFeaturesGrads {
    Tensor attention;  // N x K x H x W
    Tensor features;   // N x D x H x W
};
WeightFeaturesGrads weight_features_backward(const AttentionStack& attn, const Tensor& features,
                                             const Tensor& grad_out);

/// fhat[n] = f[n] + max_k x[n,k].
FusedFeatures fuse_frames(const Tensor& weighted, const Tensor& features);

struct FuseFramesGrads {
    Tensor weighted;  // N x K x D x H x W; ties route to the lowest index
    Tensor features;  // N x D x H x W
};
FuseFramesGrads fuse_frames_backward(const Tensor& weighted, const Tensor& features,
                                     const Tensor& grad_out);

/// Temporal then spatial mean of the fused features; length-D vector.
Tensor video_embedding(const FusedFeatures& fused);

/// Forward pass of one multi-attention module with the intermediates the
/// backward pass needs.
struct MamForward {
    FusedFeatures fused;
    AttentionStack attention;
    Tensor hidden;                       // N x K x D1 x H x W, post-ReLU
    std::vector<std::uint8_t> max_index; // argmax submodule per (n, d, h, w)
};

MamForward mam_forward(const Tensor& features, const MamParams& params);

struct MamGrads {
    std::vector<MamSubmodule> sub;  // same shapes as the parameters
    Tensor features;                // N x D x H x W
};

/// Backward through the module. `grad_attention` (may be null) carries the
/// cotangent that the attention regularizers put directly on the
/// distributions; it is combined with the path through the feature
/// weighting before the softmax backward.
MamGrads mam_backward(const Tensor& features, const MamParams& params, const MamForward& fwd,
                      const Tensor& grad_fused, const Tensor* grad_attention);

}  // namespace cmma::attention
