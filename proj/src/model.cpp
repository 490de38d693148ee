#include "cmma/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cmma/ops.hpp"
#include "conv_core.hpp"

namespace cmma::model {

namespace {

constexpr std::size_t kKernel = 3;
constexpr std::size_t kPad = 1;

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

std::size_t conv_extent(std::size_t in, std::size_t stride) {
    return (in + 2 * kPad - kKernel) / stride + 1;
}

cmma::detail::ConvDims stage_dims(const Tensor& x, const ConvStage& stage) {
    return cmma::detail::conv_dims(x.extent(1), x.extent(2), x.extent(3), stage.weight.extent(0),
                                   kKernel, kKernel, stage.stride, kPad);
}

std::vector<double> frame_columns(const Tensor& x, const cmma::detail::ConvDims& d) {
    const std::size_t n = x.extent(0);
    const std::size_t in_block = d.cin * d.h * d.w;
    const std::size_t col_block = d.patch() * d.sites();
    std::vector<double> cols(n * col_block);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t f = 0; f < static_cast<std::ptrdiff_t>(n); ++f) {
        cmma::detail::im2col(x.data() + f * in_block, d, cols.data() + f * col_block);
    }
    return cols;
}

// Batched conv + ReLU over the frame axis.
Tensor stage_forward(const Tensor& x, const ConvStage& stage) {
    const std::size_t n = x.extent(0);
    const auto d = stage_dims(x, stage);
    Tensor out({n, d.cout, d.ho, d.wo});
    const std::size_t chan_block = d.sites();
    const std::size_t col_block = d.patch() * d.sites();
    const std::vector<double> cols = frame_columns(x, d);
    const std::size_t chunks = (d.cout + cmma::detail::kCoBlock - 1) / cmma::detail::kCoBlock;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t f = 0; f < static_cast<std::ptrdiff_t>(n); ++f) {
        for (std::ptrdiff_t chunk = 0; chunk < static_cast<std::ptrdiff_t>(chunks); ++chunk) {
            const std::size_t co0 = static_cast<std::size_t>(chunk) * cmma::detail::kCoBlock;
            const std::size_t co1 = std::min(co0 + cmma::detail::kCoBlock, d.cout);
            double* oblock = out.data() + (f * d.cout + co0) * chan_block;
            cmma::detail::conv_forward_chunk(cols.data() + f * col_block, stage.weight.data(),
                                             stage.bias.data(), d, co0, co1, oblock);
            for (std::size_t i = 0; i < (co1 - co0) * chan_block; ++i) {
                oblock[i] = oblock[i] > 0.0 ? oblock[i] : 0.0;
            }
        }
    }
    return out;
}

// conv backward over the frame axis; weight/bias grads accumulate over frames
// in ascending order.
void stage_backward(const Tensor& x, const ConvStage& stage, const Tensor& grad_pre, ConvStage& grads,
                    Tensor* grad_input) {
    const std::size_t n = x.extent(0);
    const auto d = stage_dims(x, stage);
    const std::size_t in_block = d.cin * d.h * d.w;
    const std::size_t out_block = d.cout * d.sites();
    const std::size_t col_block = d.patch() * d.sites();
    const std::vector<double> cols = frame_columns(x, d);

    if (grad_input) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t f = 0; f < static_cast<std::ptrdiff_t>(n); ++f) {
            std::vector<double> gcol(col_block);
            cmma::detail::conv_backward_gcol(stage.weight.data(), grad_pre.data() + f * out_block, d,
                                             gcol.data());
            cmma::detail::col2im_add(gcol.data(), d, grad_input->data() + f * in_block);
        }
    }

    const std::size_t chunks = (d.cout + cmma::detail::kCoBlock - 1) / cmma::detail::kCoBlock;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t chunk = 0; chunk < static_cast<std::ptrdiff_t>(chunks); ++chunk) {
        const std::size_t co0 = static_cast<std::size_t>(chunk) * cmma::detail::kCoBlock;
        const std::size_t co1 = std::min(co0 + cmma::detail::kCoBlock, d.cout);
        for (std::size_t f = 0; f < n; ++f) {
            cmma::detail::conv_backward_dw_chunk(cols.data() + f * col_block,
                                                 grad_pre.data() + f * out_block, d, co0, co1,
                                                 grads.weight.data(), grads.bias.data());
        }
    }
}

}  // namespace

std::string wiring_name(Wiring w) {
    switch (w) {
        case Wiring::baseline: return "baseline";
        case Wiring::single_mam: return "single-mam";
        case Wiring::multi_mam: return "multi-mam";
    }
    throw std::invalid_argument("wiring_name: unknown wiring");
}

Wiring wiring_from_name(const std::string& name) {
    if (name == "baseline") return Wiring::baseline;
    if (name == "single-mam") return Wiring::single_mam;
    if (name == "multi-mam") return Wiring::multi_mam;
    throw std::invalid_argument("unknown ablation wiring '" + name +
                                "' (expected baseline, single-mam or multi-mam)");
}

std::pair<std::size_t, std::size_t> BackboneConfig::stage_extent(std::size_t index) const {
    std::size_t h = input_height, w = input_width;
    for (std::size_t s = 0; s <= index; ++s) {
        h = conv_extent(h, stage_strides[s]);
        w = conv_extent(w, stage_strides[s]);
    }
    return {h, w};
}

std::vector<std::string> BackboneConfig::validate(Wiring wiring) const {
    std::vector<std::string> errors;
    if (stage_widths.empty()) errors.push_back("backbone: stage_widths must not be empty");
    if (stage_widths.size() != stage_strides.size()) {
        errors.push_back("backbone: stage_widths and stage_strides must have equal length");
    }
    for (std::size_t s = 0; s < stage_strides.size(); ++s) {
        if (stage_strides[s] < 1) errors.push_back("backbone: stage " + std::to_string(s) + " stride must be >= 1");
    }
    if (input_channels == 0 || input_height < kKernel || input_width < kKernel) {
        errors.push_back("backbone: input extent too small for a 3x3 kernel");
    }
    if (!errors.empty()) return errors;

    const std::size_t last = stage_widths.size() - 1;
    if (tap2 != last) errors.push_back("backbone: tap2 must be the final stage index " + std::to_string(last));
    if (wiring == Wiring::multi_mam && tap1 >= tap2) {
        errors.push_back("backbone: tap1 must come before tap2");
    }
    if (attention_submodules < 1) errors.push_back("backbone: attention_submodules must be >= 1");

    std::vector<std::size_t> taps;
    if (wiring == Wiring::multi_mam) taps.push_back(tap1);
    if (wiring != Wiring::baseline) taps.push_back(tap2);
    for (std::size_t tap : taps) {
        if (tap >= stage_widths.size()) {
            errors.push_back("backbone: tap index " + std::to_string(tap) + " out of range");
            continue;
        }
        const auto [h, w] = stage_extent(tap);
        const std::size_t k = attention_submodules;
        if (h % k != 0) {
            errors.push_back("backbone: height " + std::to_string(h) + " at stage " + std::to_string(tap) +
                             " must be divisible by " + std::to_string(k) +
                             " so stripes are whole rows");
        }
        if ((h * w) % k != 0) {
            errors.push_back("backbone: grid " + std::to_string(h * w) + " at stage " + std::to_string(tap) +
                             " must be divisible by " + std::to_string(k));
        }
        if (attention_bottleneck >= stage_widths[tap]) {
            errors.push_back("backbone: attention_bottleneck " + std::to_string(attention_bottleneck) +
                             " must be smaller than stage width " + std::to_string(stage_widths[tap]));
        }
    }
    return errors;
}

ModelState ModelState::init(const BackboneConfig& config, Wiring wiring, std::size_t classes, Rng& rng) {
    auto errors = config.validate(wiring);
    if (classes < 2) errors.push_back("model: need at least two identity classes");
    if (!errors.empty()) {
        std::string msg = "invalid model configuration:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw std::runtime_error(msg);
    }

    ModelState state;
    state.config = config;
    state.wiring = wiring;
    state.classes = classes;

    std::size_t cin = config.input_channels;
    for (std::size_t s = 0; s < config.stage_widths.size(); ++s) {
        ConvStage stage;
        const std::size_t cout = config.stage_widths[s];
        stage.weight = Tensor({cout, cin, kKernel, kKernel});
        // Kaiming-style bound keeps activation magnitudes steady through the
        // ReLU stack.
        const double scale = std::sqrt(6.0 / static_cast<double>(cin * kKernel * kKernel));
        for (std::size_t i = 0; i < stage.weight.size(); ++i) stage.weight[i] = rng.uniform(-scale, scale);
        stage.bias = Tensor({cout});
        stage.stride = config.stage_strides[s];
        state.stages.push_back(std::move(stage));
        cin = cout;
    }

    if (state.has_mam1()) {
        state.mam1 = attention::MamParams::init(config.attention_submodules,
                                                config.stage_widths[config.tap1],
                                                config.attention_bottleneck, rng);
    }
    if (state.has_mam2()) {
        state.mam2 = attention::MamParams::init(config.attention_submodules,
                                                config.stage_widths[config.tap2],
                                                config.attention_bottleneck, rng);
    }

    const std::size_t d = config.stage_widths.back();
    state.classifier = Tensor({classes, d});
    const double cscale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < state.classifier.size(); ++i) state.classifier[i] = rng.uniform(-cscale, cscale);
    return state;
}

BackboneTaps backbone_forward(const Tensor& frames, const ModelState& state) {
    require(frames.rank() == 4 && frames.extent(1) == state.config.input_channels &&
                frames.extent(2) == state.config.input_height &&
                frames.extent(3) == state.config.input_width,
            "backbone_forward: frames shape " + shape_str(frames.shape()) + " does not match input " +
                std::to_string(state.config.input_channels) + "x" +
                std::to_string(state.config.input_height) + "x" + std::to_string(state.config.input_width));
    BackboneTaps taps;
    Tensor x = frames;
    for (std::size_t s = 0; s < state.stages.size(); ++s) {
        x = stage_forward(x, state.stages[s]);
        if (s == state.config.tap1) taps.tap1 = x;
    }
    taps.final_features = std::move(x);
    return taps;
}

ModelForward model_forward(const Tensor& frames, const ModelState& state) {
    require(frames.rank() == 4 && frames.extent(1) == state.config.input_channels &&
                frames.extent(2) == state.config.input_height &&
                frames.extent(3) == state.config.input_width,
            "model_forward: frames shape " + shape_str(frames.shape()) + " does not match configured input");
    ModelForward fwd;
    const Tensor* x = &frames;
    for (std::size_t s = 0; s < state.stages.size(); ++s) {
        fwd.stage_out.push_back(stage_forward(*x, state.stages[s]));
        if (s == state.config.tap1 && state.has_mam1()) {
            fwd.mam1 = attention::mam_forward(fwd.stage_out[s], state.mam1);
            x = &fwd.mam1.fused.values;
        } else {
            x = &fwd.stage_out[s];
        }
    }

    const Tensor* fused = &fwd.stage_out.back();
    if (state.has_mam2()) {
        fwd.mam2 = attention::mam_forward(fwd.stage_out.back(), state.mam2);
        fused = &fwd.mam2.fused.values;
    }
    fwd.embedding = attention::video_embedding(attention::FusedFeatures{*fused});

    const std::size_t d = fwd.embedding.size();
    fwd.logits = Tensor({state.classes});
    for (std::size_t c = 0; c < state.classes; ++c) {
        double acc = 0.0;
        const double* row = state.classifier.data() + c * d;
        for (std::size_t i = 0; i < d; ++i) acc += row[i] * fwd.embedding[i];
        fwd.logits[c] = acc;
    }
    return fwd;
}

namespace {

const Tensor& stage_input(std::size_t s, const Tensor& frames, const ModelState& state,
                          const ModelForward& fwd) {
    if (s == 0) return frames;
    if (s - 1 == state.config.tap1 && state.has_mam1()) return fwd.mam1.fused.values;
    return fwd.stage_out[s - 1];
}

}  // namespace

ModelGrads model_backward(const Tensor& frames, const ModelState& state, const ModelForward& fwd,
                          const Tensor& grad_embedding, const Tensor& grad_logits,
                          const Tensor* grad_attention1, const Tensor* grad_attention2,
                          bool want_frames_grad) {
    const std::size_t d = fwd.embedding.size();
    require(grad_embedding.size() == d, "model_backward: grad_embedding size mismatch");
    require(grad_logits.size() == state.classes, "model_backward: grad_logits size mismatch");

    ModelGrads grads;
    grads.classifier = Tensor(state.classifier.shape());

    // Classifier head; the embedding collects both cotangents.
    Tensor g_embedding = grad_embedding;
    for (std::size_t c = 0; c < state.classes; ++c) {
        const double gl = grad_logits[c];
        const double* row = state.classifier.data() + c * d;
        double* grow = grads.classifier.data() + c * d;
        for (std::size_t i = 0; i < d; ++i) {
            grow[i] = gl * fwd.embedding[i];
            g_embedding[i] += gl * row[i];
        }
    }

    // Pooling backward: every fused element shares its channel mean gradient.
    const Tensor& last = fwd.stage_out.back();
    const std::size_t n = last.extent(0), hw = last.extent(2) * last.extent(3);
    Tensor g_fused(last.shape());
    const double inv = 1.0 / static_cast<double>(n * hw);
    for (std::size_t f = 0; f < n; ++f) {
        for (std::size_t c = 0; c < d; ++c) {
            const double g = g_embedding[c] * inv;
            double* row = g_fused.data() + (f * d + c) * hw;
            for (std::size_t p = 0; p < hw; ++p) row[p] = g;
        }
    }

    Tensor g_stage_out;  // cotangent on stage_out[s]
    if (state.has_mam2()) {
        auto mg = attention::mam_backward(last, state.mam2, fwd.mam2, g_fused, grad_attention2);
        grads.mam2_sub = std::move(mg.sub);
        g_stage_out = std::move(mg.features);
    } else {
        g_stage_out = std::move(g_fused);
    }

    for (std::size_t s = state.stages.size(); s-- > 0;) {
        // ReLU gate, then per-frame conv backward.
        const Tensor& out = fwd.stage_out[s];
        Tensor g_pre(out.shape());
        for (std::size_t i = 0; i < out.size(); ++i) g_pre[i] = out[i] > 0.0 ? g_stage_out[i] : 0.0;

        const Tensor& input = stage_input(s, frames, state, fwd);
        const ConvStage& stage = state.stages[s];
        ConvStage sg;
        sg.weight = Tensor(stage.weight.shape());
        sg.bias = Tensor(stage.bias.shape());
        sg.stride = stage.stride;

        const bool need_input_grad = s > 0 || want_frames_grad;
        Tensor g_input;
        if (need_input_grad) g_input = Tensor(input.shape());
        stage_backward(input, stage, g_pre, sg, need_input_grad ? &g_input : nullptr);
        grads.stages.insert(grads.stages.begin(), std::move(sg));

        if (s == 0) {
            if (want_frames_grad) grads.frames = std::move(g_input);
            break;
        }

        if (s - 1 == state.config.tap1 && state.has_mam1()) {
            auto mg = attention::mam_backward(fwd.stage_out[s - 1], state.mam1, fwd.mam1, g_input,
                                              grad_attention1);
            grads.mam1_sub = std::move(mg.sub);
            g_stage_out = std::move(mg.features);
        } else {
            g_stage_out = std::move(g_input);
        }
    }
    return grads;
}

namespace {

template <typename Fn>
void walk_params(const ModelState& state, Fn&& fn) {
    for (std::size_t s = 0; s < state.stages.size(); ++s) {
        fn("backbone.stage" + std::to_string(s) + ".weight", state.stages[s].weight);
        fn("backbone.stage" + std::to_string(s) + ".bias", state.stages[s].bias);
    }
    auto walk_mam = [&](const attention::MamParams& mam, const std::string& prefix) {
        for (std::size_t k = 0; k < mam.sub.size(); ++k) {
            const std::string base = prefix + ".sub" + std::to_string(k);
            fn(base + ".inner.weight", mam.sub[k].inner_weight);
            fn(base + ".inner.bias", mam.sub[k].inner_bias);
            fn(base + ".outer.weight", mam.sub[k].outer_weight);
            fn(base + ".outer.bias", mam.sub[k].outer_bias);
        }
    };
    if (state.has_mam1()) walk_mam(state.mam1, "mam1");
    if (state.has_mam2()) walk_mam(state.mam2, "mam2");
    fn("classifier.weight", state.classifier);
}

template <typename Fn>
void walk_params_mut(ModelState& state, Fn&& fn) {
    for (std::size_t s = 0; s < state.stages.size(); ++s) {
        fn(state.stages[s].weight);
        fn(state.stages[s].bias);
    }
    auto walk_mam = [&](attention::MamParams& mam) {
        for (auto& sub : mam.sub) {
            fn(sub.inner_weight);
            fn(sub.inner_bias);
            fn(sub.outer_weight);
            fn(sub.outer_bias);
        }
    };
    if (state.has_mam1()) walk_mam(state.mam1);
    if (state.has_mam2()) walk_mam(state.mam2);
    fn(state.classifier);
}

}  // namespace

ParamLayout param_layout(const ModelState& state) {
    ParamLayout layout;
    walk_params(state, [&](const std::string& name, const Tensor& t) {
        layout.segments.push_back({name, layout.total, t.size()});
        layout.total += t.size();
    });
    return layout;
}

std::vector<double> flatten_params(const ModelState& state) {
    std::vector<double> flat;
    walk_params(state, [&](const std::string&, const Tensor& t) {
        flat.insert(flat.end(), t.values().begin(), t.values().end());
    });
    return flat;
}

void unflatten_params(ModelState& state, const std::vector<double>& flat) {
    std::size_t pos = 0;
    walk_params_mut(state, [&](Tensor& t) {
        if (pos + t.size() > flat.size()) throw std::invalid_argument("unflatten_params: vector too short");
        std::memcpy(t.data(), flat.data() + pos, t.size() * sizeof(double));
        pos += t.size();
    });
    if (pos != flat.size()) throw std::invalid_argument("unflatten_params: vector length mismatch");
}

std::vector<double> flatten_grads(const ModelState& state, const ModelGrads& grads) {
    std::vector<double> flat;
    auto append = [&](const Tensor& t) { flat.insert(flat.end(), t.values().begin(), t.values().end()); };
    for (const auto& sg : grads.stages) {
        append(sg.weight);
        append(sg.bias);
    }
    auto append_mam = [&](const std::vector<attention::MamSubmodule>& subs) {
        for (const auto& s : subs) {
            append(s.inner_weight);
            append(s.inner_bias);
            append(s.outer_weight);
            append(s.outer_bias);
        }
    };
    if (state.has_mam1()) append_mam(grads.mam1_sub);
    if (state.has_mam2()) append_mam(grads.mam2_sub);
    append(grads.classifier);
    return flat;
}

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'M', 'M', 'K'};

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state, Dtype dtype) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    const ParamLayout layout = param_layout(state);
    f.write(kCheckpointMagic, 4);
    put_u32(f, 1);
    put_u32(f, static_cast<std::uint32_t>(layout.segments.size()));
    walk_params(state, [&](const std::string& name, const Tensor& t) {
        put_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor(f, t, dtype);
    });
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
    f.close();

    nlohmann::json j;
    j["format_version"] = 1;
    j["wiring"] = wiring_name(state.wiring);
    j["classes"] = state.classes;
    j["backbone"] = {
        {"stage_widths", state.config.stage_widths},
        {"stage_strides", state.config.stage_strides},
        {"input_channels", state.config.input_channels},
        {"input_height", state.config.input_height},
        {"input_width", state.config.input_width},
        {"tap1", state.config.tap1},
        {"tap2", state.config.tap2},
        {"attention_submodules", state.config.attention_submodules},
        {"attention_bottleneck", state.config.attention_bottleneck},
    };
    std::ofstream sidecar(path + ".json");
    if (!sidecar) throw std::runtime_error("cannot open " + path + ".json for writing");
    sidecar << j.dump(2) << "\n";
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream sidecar(path + ".json");
    if (!sidecar) throw std::runtime_error("cannot open checkpoint sidecar " + path + ".json");
    nlohmann::json j = nlohmann::json::parse(sidecar);

    BackboneConfig config;
    const auto& b = j.at("backbone");
    config.stage_widths = b.at("stage_widths").get<std::vector<std::size_t>>();
    config.stage_strides = b.at("stage_strides").get<std::vector<std::size_t>>();
    config.input_channels = b.at("input_channels").get<std::size_t>();
    config.input_height = b.at("input_height").get<std::size_t>();
    config.input_width = b.at("input_width").get<std::size_t>();
    config.tap1 = b.at("tap1").get<std::size_t>();
    config.tap2 = b.at("tap2").get<std::size_t>();
    config.attention_submodules = b.at("attention_submodules").get<std::size_t>();
    config.attention_bottleneck = b.at("attention_bottleneck").get<std::size_t>();

    Rng rng(0);
    ModelState state = ModelState::init(config, wiring_from_name(j.at("wiring").get<std::string>()),
                                        j.at("classes").get<std::size_t>(), rng);

    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
        throw std::runtime_error("bad checkpoint: missing CMMK magic in " + path);
    }
    const std::uint32_t version = get_u32(f);
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    const std::uint32_t count = get_u32(f);

    std::vector<std::pair<std::string, Tensor>> sections;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = get_u32(f);
        std::string name(len, '\0');
        f.read(name.data(), len);
        sections.emplace_back(std::move(name), read_tensor(f));
    }
    if (!f) throw std::runtime_error("checkpoint read truncated: " + path);

    const ParamLayout layout = param_layout(state);
    if (sections.size() != layout.segments.size()) {
        throw std::runtime_error("checkpoint has " + std::to_string(sections.size()) +
                                 " sections, expected " + std::to_string(layout.segments.size()));
    }
    std::vector<double> flat(layout.total);
    for (std::size_t i = 0; i < sections.size(); ++i) {
        const auto& seg = layout.segments[i];
        if (sections[i].first != seg.name || sections[i].second.size() != seg.size) {
            throw std::runtime_error("checkpoint section mismatch at '" + seg.name + "'");
        }
        std::memcpy(flat.data() + seg.offset, sections[i].second.data(), seg.size * sizeof(double));
    }
    unflatten_params(state, flat);
    return state;
}

}  // namespace cmma::model
