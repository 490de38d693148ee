#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cmma/attention.hpp"
#include "cmma/rng.hpp"
#include "cmma/tensor.hpp"

namespace cmma::model {

/// Which attention modules are wired in. `single_mam` keeps only the module
/// behind the final stage; `baseline` pools the raw backbone features.
enum class Wiring { baseline, single_mam, multi_mam };

std::string wiring_name(Wiring w);
Wiring wiring_from_name(const std::string& name);

/// Desk-scale feature extractor: a stack of 3x3 conv + ReLU stages with
/// per-stage stride, plus the two tap points where attention modules insert.
struct BackboneConfig {
    std::vector<std::size_t> stage_widths{16, 32, 64};
    std::vector<std::size_t> stage_strides{2, 2, 2};
    std::size_t input_channels = 3;
    std::size_t input_height = 64;
    std::size_t input_width = 32;
    std::size_t tap1 = 1;
    std::size_t tap2 = 2;
    std::size_t attention_submodules = 4;  // K
    std::size_t attention_bottleneck = 16;  // D1

    /// Spatial extent after stage `index` (0-based).
    std::pair<std::size_t, std::size_t> stage_extent(std::size_t index) const;

    /// All violations, empty when the config is usable for `wiring`.
    std::vector<std::string> validate(Wiring wiring) const;
};

struct ConvStage {
    Tensor weight;  // C_out x C_in x 3 x 3
    Tensor bias;    // C_out
    std::size_t stride = 1;
};

struct ModelState {
    BackboneConfig config;
    Wiring wiring = Wiring::multi_mam;
    std::size_t classes = 0;
    std::vector<ConvStage> stages;
    attention::MamParams mam1;  // active only under multi_mam
    attention::MamParams mam2;  // active unless baseline
    Tensor classifier;          // classes x D_final

    bool has_mam1() const { return wiring == Wiring::multi_mam; }
    bool has_mam2() const { return wiring != Wiring::baseline; }

    static ModelState init(const BackboneConfig& config, Wiring wiring, std::size_t classes, Rng& rng);
};

/// Plain stage outputs with no attention applied: activations at tap1 and at
/// the final stage. Both are nonnegative (stages end in ReLU).
struct BackboneTaps {
    Tensor tap1;
    Tensor final_features;
};
BackboneTaps backbone_forward(const Tensor& frames, const ModelState& state);

struct ModelForward {
    std::vector<Tensor> stage_out;  // post-ReLU per stage, before any fusion
    attention::MamForward mam1;
    attention::MamForward mam2;
    Tensor embedding;  // D_final
    Tensor logits;     // classes
};
ModelForward model_forward(const Tensor& frames, const ModelState& state);

struct ModelGrads {
    std::vector<ConvStage> stages;
    std::vector<attention::MamSubmodule> mam1_sub;
    std::vector<attention::MamSubmodule> mam2_sub;
    Tensor classifier;
    Tensor frames;  // filled only when requested
};

/// Backward through the whole model. Attention cotangents (from the
/// regularizers) may be null.
ModelGrads model_backward(const Tensor& frames, const ModelState& state, const ModelForward& fwd,
                          const Tensor& grad_embedding, const Tensor& grad_logits,
                          const Tensor* grad_attention1, const Tensor* grad_attention2,
                          bool want_frames_grad = false);

struct ParamLayout {
    struct Segment {
        std::string name;
        std::size_t offset = 0;
        std::size_t size = 0;
    };
    std::vector<Segment> segments;
    std::size_t total = 0;
};

ParamLayout param_layout(const ModelState& state);
std::vector<double> flatten_params(const ModelState& state);
void unflatten_params(ModelState& state, const std::vector<double>& flat);
std::vector<double> flatten_grads(const ModelState& state, const ModelGrads& grads);

/// Checkpoint: named tensor-container sections plus a JSON sidecar
/// (path + ".json") describing the architecture.
void save_checkpoint(const std::string& path, const ModelState& state, Dtype dtype = Dtype::f64);
ModelState load_checkpoint(const std::string& path);

}  // namespace cmma::model
