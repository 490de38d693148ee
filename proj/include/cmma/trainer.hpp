#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cmma/dataset.hpp"
#include "cmma/losses.hpp"
#include "cmma/model.hpp"

namespace cmma::trainer {

struct BatchSpec {
    std::size_t identities = 4;         // P
    std::size_t clips_per_identity = 7; // Q
};

enum class SamplingStrategy { ris, restricted };

std::string sampling_name(SamplingStrategy s);
SamplingStrategy sampling_from_name(const std::string& name);

struct TrainConfig {
    double learning_rate = 2e-4;
    double weight_decay = 5e-4;
    BatchSpec batch;
    std::size_t frames_per_clip = 6;  // N
    std::size_t steps = 500;
    std::uint64_t seed = 1;
    losses::LossWeights weights;
    model::Wiring wiring = model::Wiring::multi_mam;
    SamplingStrategy sampling = SamplingStrategy::ris;
    bool interval_per_epoch = true;  // redraw the interval per video per epoch
    model::BackboneConfig backbone;

    std::vector<std::string> validate() const;
};

struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
};

/// One Adam update with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
/// Weight decay enters as a classic L2 term added to the gradient before the
/// moment update. `t` is the 1-based step. `layout` (may be null) names the
/// parameter in the non-finite-gradient error.
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamMoments& moments,
               std::size_t t, double learning_rate, double weight_decay,
               const model::ParamLayout* layout);

struct LogRow {
    std::size_t step = 0;
    double total = 0.0;
    double id = 0.0;
    double triplet = 0.0;
    double diversity = 0.0;
    double concentration = 0.0;
    double mean_diag = 0.0;
};

struct AttentionSummary {
    double mean_diag = 0.0;       // mean diagonal mass of the stripe matrices
    double mean_hellinger = 0.0;  // mean pairwise distance between submodule maps
};

struct TrainResult {
    model::ModelState state;
    std::vector<LogRow> log;
    AttentionSummary summary;
};

TrainResult train(const TrainConfig& config, const dataset::SyntheticDataset& data);

/// Deterministic frames (evenly spaced) through the model; one row per clip.
Tensor extract_embeddings(const model::ModelState& state, const dataset::SyntheticDataset& data,
                          const std::vector<std::size_t>& clip_indices, std::size_t frames);

/// Attention statistics on a probe set, deterministic frames.
AttentionSummary attention_summary(const model::ModelState& state,
                                   const dataset::SyntheticDataset& data,
                                   const std::vector<std::size_t>& clip_indices, std::size_t frames);

void write_log_csv(const std::string& path, const std::vector<LogRow>& log);

}  // namespace cmma::trainer
