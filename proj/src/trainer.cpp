#include "cmma/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <stdexcept>

#include "cmma/rng.hpp"
#include "cmma/sampling.hpp"

namespace cmma::trainer {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;

Tensor gather_frames(const Tensor& clip_frames, const std::vector<int>& indices) {
    const std::size_t chw = clip_frames.extent(1) * clip_frames.extent(2) * clip_frames.extent(3);
    Tensor out({indices.size(), clip_frames.extent(1), clip_frames.extent(2), clip_frames.extent(3)});
    for (std::size_t j = 0; j < indices.size(); ++j) {
        // indices are 1-based frame numbers
        const std::size_t src = static_cast<std::size_t>(indices[j] - 1);
        std::memcpy(out.data() + j * chw, clip_frames.data() + src * chw, chw * sizeof(double));
    }
    return out;
}

std::vector<int> draw_plan(const dataset::Clip& clip, const TrainConfig& config, int fixed_interval,
                           Rng& rng) {
    const int t = static_cast<int>(clip.frames.extent(0));
    const int n = static_cast<int>(config.frames_per_clip);
    if (config.sampling == SamplingStrategy::restricted) {
        return sampling::restricted_sample(t, n, rng).indices;
    }
    if (config.interval_per_epoch && fixed_interval > 0) {
        return sampling::ris_sample_with_interval(t, n, fixed_interval, rng).indices;
    }
    return sampling::ris_sample(t, n, rng).indices;
}

}  // namespace

std::string sampling_name(SamplingStrategy s) {
    return s == SamplingStrategy::ris ? "ris" : "restricted";
}

SamplingStrategy sampling_from_name(const std::string& name) {
    if (name == "ris") return SamplingStrategy::ris;
    if (name == "restricted") return SamplingStrategy::restricted;
    throw std::invalid_argument("unknown sampling strategy '" + name + "' (expected ris or restricted)");
}

std::vector<std::string> TrainConfig::validate() const {
    std::vector<std::string> errors = backbone.validate(wiring);
    if (!(learning_rate > 0.0)) errors.push_back("train: learning_rate must be positive");
    if (weight_decay < 0.0) errors.push_back("train: weight_decay must be nonnegative");
    if (batch.identities < 2) errors.push_back("train: batch needs P >= 2 identities");
    if (batch.clips_per_identity < 2) errors.push_back("train: batch needs Q >= 2 clips per identity");
    if (frames_per_clip < 1) errors.push_back("train: frames_per_clip must be >= 1");
    if (steps < 1) errors.push_back("train: steps must be >= 1");
    if (weights.id < 0.0 || weights.triplet < 0.0 || weights.diversity < 0.0 ||
        weights.concentration < 0.0) {
        errors.push_back("train: loss weights must be nonnegative");
    }
    if (weights.margin < 0.0) errors.push_back("train: triplet margin must be nonnegative");
    return errors;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamMoments& moments,
               std::size_t t, double learning_rate, double weight_decay,
               const model::ParamLayout* layout) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adam_step: parameter and gradient sizes differ");
    }
    if (t < 1) throw std::invalid_argument("adam_step: step index is 1-based");
    if (moments.m.size() != params.size()) {
        moments.m.assign(params.size(), 0.0);
        moments.v.assign(params.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i] + weight_decay * params[i];
        if (!std::isfinite(g)) {
            std::string where = "parameter index " + std::to_string(i);
            if (layout) {
                for (const auto& seg : layout->segments) {
                    if (i >= seg.offset && i < seg.offset + seg.size) {
                        where = seg.name + "[" + std::to_string(i - seg.offset) + "]";
                        break;
                    }
                }
            }
            throw std::runtime_error("adam_step: non-finite gradient at " + where);
        }
        moments.m[i] = kBeta1 * moments.m[i] + (1.0 - kBeta1) * g;
        moments.v[i] = kBeta2 * moments.v[i] + (1.0 - kBeta2) * g * g;
        const double mhat = moments.m[i] / bc1;
        const double vhat = moments.v[i] / bc2;
        params[i] -= learning_rate * mhat / (std::sqrt(vhat) + kEps);
    }
}

TrainResult train(const TrainConfig& config, const dataset::SyntheticDataset& data) {
    auto errors = config.validate();
    if (data.train_identity_ids.size() < config.batch.identities) {
        errors.push_back("train: dataset has fewer train identities than the batch needs");
    }
    if (!errors.empty()) {
        std::string msg = "invalid train configuration:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw std::runtime_error(msg);
    }

    // identity id -> class index, ordered by id
    std::vector<int> class_ids = data.train_identity_ids;
    std::sort(class_ids.begin(), class_ids.end());
    std::map<int, int> class_of;
    for (std::size_t i = 0; i < class_ids.size(); ++i) class_of[class_ids[i]] = static_cast<int>(i);

    // per-identity train clip lists, in class order
    std::vector<std::vector<std::size_t>> clips_of(class_ids.size());
    for (std::size_t i = 0; i < data.clips.size(); ++i) {
        auto it = class_of.find(data.clips[i].identity);
        if (it != class_of.end()) clips_of[static_cast<std::size_t>(it->second)].push_back(i);
    }
    for (std::size_t c = 0; c < clips_of.size(); ++c) {
        if (clips_of[c].empty()) {
            throw std::runtime_error("train: identity " + std::to_string(class_ids[c]) +
                                     " has no training clips");
        }
    }

    const Rng root(config.seed);
    Rng param_rng = root.fork(1);
    Rng batch_rng = root.fork(2);
    Rng frame_rng = root.fork(3);
    Rng interval_rng = root.fork(4);

    model::ModelState state =
        model::ModelState::init(config.backbone, config.wiring, class_ids.size(), param_rng);
    const model::ParamLayout layout = model::param_layout(state);
    std::vector<double> params = model::flatten_params(state);
    AdamMoments moments;

    const std::size_t batch_size = config.batch.identities * config.batch.clips_per_identity;
    const std::vector<std::size_t> train_clips = data.train_clip_indices();
    const std::size_t epoch_len = std::max<std::size_t>(1, (train_clips.size() + batch_size - 1) / batch_size);

    // Per-video sampling interval, redrawn at epoch boundaries.
    std::vector<int> interval(data.clips.size(), 0);
    auto redraw_intervals = [&]() {
        for (std::size_t idx : train_clips) {
            const int t = static_cast<int>(data.clips[idx].frames.extent(0));
            const int gmax = sampling::max_interval(t, static_cast<int>(config.frames_per_clip));
            interval[idx] = gmax >= 1 ? static_cast<int>(interval_rng.uniform_int(1, gmax)) : 0;
        }
    };

    TrainResult result;
    result.log.reserve(config.steps);

    std::vector<std::size_t> batch_clip(batch_size);
    std::vector<int> batch_label(batch_size);
    std::vector<Tensor> batch_frames(batch_size);
    std::vector<model::ModelForward> forwards(batch_size);

    for (std::size_t step = 0; step < config.steps; ++step) {
        if (config.sampling == SamplingStrategy::ris && config.interval_per_epoch &&
            step % epoch_len == 0) {
            redraw_intervals();
        }

        // P distinct identities, then Q clip draws each (with replacement).
        std::vector<std::size_t> pool(class_ids.size());
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
        for (std::size_t j = 0; j < config.batch.identities; ++j) {
            const std::size_t pick = j + batch_rng.bounded(pool.size() - j);
            std::swap(pool[j], pool[pick]);
        }
        std::size_t slot = 0;
        for (std::size_t j = 0; j < config.batch.identities; ++j) {
            const std::size_t cls = pool[j];
            for (std::size_t q = 0; q < config.batch.clips_per_identity; ++q, ++slot) {
                const auto& list = clips_of[cls];
                batch_clip[slot] = list[batch_rng.bounded(list.size())];
                batch_label[slot] = static_cast<int>(cls);
            }
        }

        for (std::size_t b = 0; b < batch_size; ++b) {
            const auto& clip = data.clips[batch_clip[b]];
            const auto indices = draw_plan(clip, config, interval[batch_clip[b]], frame_rng);
            batch_frames[b] = gather_frames(clip.frames, indices);
        }

#pragma omp parallel for schedule(dynamic, 1)
        for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(batch_size); ++b) {
            forwards[static_cast<std::size_t>(b)] =
                model::model_forward(batch_frames[static_cast<std::size_t>(b)], state);
        }

        losses::BatchOutputs batch;
        const std::size_t d = forwards[0].embedding.size();
        batch.embeddings = Tensor({batch_size, d});
        batch.logits = Tensor({batch_size, state.classes});
        batch.labels = batch_label;
        for (std::size_t b = 0; b < batch_size; ++b) {
            std::memcpy(batch.embeddings.data() + b * d, forwards[b].embedding.data(), d * sizeof(double));
            std::memcpy(batch.logits.data() + b * state.classes, forwards[b].logits.data(),
                        state.classes * sizeof(double));
        }

        std::vector<std::vector<const Tensor*>> stacks;
        if (state.has_mam1()) {
            stacks.emplace_back();
            for (std::size_t b = 0; b < batch_size; ++b) {
                stacks.back().push_back(&forwards[b].mam1.attention.values);
            }
        }
        if (state.has_mam2()) {
            stacks.emplace_back();
            for (std::size_t b = 0; b < batch_size; ++b) {
                stacks.back().push_back(&forwards[b].mam2.attention.values);
            }
        }

        auto [terms, loss_grads] = losses::total_loss_with_grads(batch, stacks, config.weights);

        std::vector<std::vector<double>> clip_grads(batch_size);
#pragma omp parallel for schedule(dynamic, 1)
        for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(batch_size); ++bi) {
            const std::size_t b = static_cast<std::size_t>(bi);
            Tensor g_emb({d});
            std::memcpy(g_emb.data(), loss_grads.embeddings.data() + b * d, d * sizeof(double));
            Tensor g_logits({state.classes});
            std::memcpy(g_logits.data(), loss_grads.logits.data() + b * state.classes,
                        state.classes * sizeof(double));
            const Tensor* ga1 = nullptr;
            const Tensor* ga2 = nullptr;
            std::size_t m = 0;
            if (state.has_mam1()) ga1 = &loss_grads.attention[m++][b];
            if (state.has_mam2()) ga2 = &loss_grads.attention[m][b];
            auto grads = model::model_backward(batch_frames[b], state, forwards[b], g_emb, g_logits,
                                               ga1, ga2);
            clip_grads[b] = model::flatten_grads(state, grads);
        }

        // Fixed-order reduction keeps the step deterministic.
        std::vector<double> grad(layout.total, 0.0);
        for (std::size_t b = 0; b < batch_size; ++b) {
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += clip_grads[b][i];
        }

        adam_step(params, grad, moments, step + 1, config.learning_rate, config.weight_decay, &layout);
        model::unflatten_params(state, params);

        result.log.push_back({step + 1, terms.total, terms.id, terms.triplet, terms.diversity,
                              terms.concentration, terms.mean_diag});
    }

    result.state = std::move(state);
    std::vector<std::size_t> probe = train_clips;
    if (probe.size() > 8) probe.resize(8);
    result.summary = attention_summary(result.state, data, probe, config.frames_per_clip);
    return result;
}

Tensor extract_embeddings(const model::ModelState& state, const dataset::SyntheticDataset& data,
                          const std::vector<std::size_t>& clip_indices, std::size_t frames) {
    const std::size_t d = state.config.stage_widths.back();
    Tensor out({clip_indices.size(), d});
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(clip_indices.size()); ++i) {
        const auto& clip = data.clips[clip_indices[static_cast<std::size_t>(i)]];
        const auto indices =
            sampling::eval_sample(static_cast<int>(clip.frames.extent(0)), static_cast<int>(frames));
        const auto fwd = model::model_forward(gather_frames(clip.frames, indices), state);
        std::memcpy(out.data() + static_cast<std::size_t>(i) * d, fwd.embedding.data(),
                    d * sizeof(double));
    }
    return out;
}

AttentionSummary attention_summary(const model::ModelState& state,
                                   const dataset::SyntheticDataset& data,
                                   const std::vector<std::size_t>& clip_indices, std::size_t frames) {
    AttentionSummary summary;
    if (state.wiring == model::Wiring::baseline || clip_indices.empty()) return summary;
    double diag_sum = 0.0, hell_sum = 0.0;
    std::size_t diag_count = 0, hell_count = 0;
    for (std::size_t idx : clip_indices) {
        const auto& clip = data.clips[idx];
        const auto indices =
            sampling::eval_sample(static_cast<int>(clip.frames.extent(0)), static_cast<int>(frames));
        const auto fwd = model::model_forward(gather_frames(clip.frames, indices), state);
        std::vector<const attention::AttentionStack*> active;
        if (state.has_mam1()) active.push_back(&fwd.mam1.attention);
        if (state.has_mam2()) active.push_back(&fwd.mam2.attention);
        for (const auto* stack : active) {
            const std::size_t n = stack->values.extent(0), k = stack->values.extent(1);
            for (std::size_t f = 0; f < n; ++f) {
                const Tensor flat = losses::flat_attention(*stack, f);
                const Tensor ahat = losses::concentration_matrix(flat);
                for (std::size_t i = 0; i < k; ++i) diag_sum += ahat.at(i, i);
                diag_count += k;
                const std::size_t hw = flat.extent(1);
                for (std::size_t a = 0; a < k; ++a) {
                    for (std::size_t b = a + 1; b < k; ++b) {
                        Tensor ra({hw}), rb({hw});
                        std::memcpy(ra.data(), flat.data() + a * hw, hw * sizeof(double));
                        std::memcpy(rb.data(), flat.data() + b * hw, hw * sizeof(double));
                        hell_sum += losses::hellinger_distance(ra, rb);
                        ++hell_count;
                    }
                }
            }
        }
    }
    if (diag_count > 0) summary.mean_diag = diag_sum / static_cast<double>(diag_count);
    if (hell_count > 0) summary.mean_hellinger = hell_sum / static_cast<double>(hell_count);
    return summary;
}

void write_log_csv(const std::string& path, const std::vector<LogRow>& log) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    std::fprintf(f, "step,loss_total,loss_id,loss_triplet,loss_diversity,loss_concentration,mean_diag\n");
    for (const auto& row : log) {
        std::fprintf(f, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", row.step, row.total, row.id,
                     row.triplet, row.diversity, row.concentration, row.mean_diag);
    }
    std::fclose(f);
}

}  // namespace cmma::trainer
