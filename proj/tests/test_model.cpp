#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>

#include "cmma/model.hpp"
#include "cmma/ops.hpp"
#include "model_probe.hpp"
#include "test_util.hpp"

using cmma::Rng;
using cmma::Tensor;
namespace model = cmma::model;
using model::BackboneConfig;
using model::ModelState;
using model::Wiring;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

BackboneConfig tiny_config() {
    BackboneConfig cfg;
    cfg.stage_widths = {4, 6};
    cfg.stage_strides = {2, 2};
    cfg.input_height = 8;
    cfg.input_width = 8;
    cfg.tap1 = 0;
    cfg.tap2 = 1;
    cfg.attention_submodules = 2;
    cfg.attention_bottleneck = 2;
    return cfg;
}

}  // namespace

TEST_CASE("desk config validates; broken configs report every problem") {
    BackboneConfig desk;
    CHECK(desk.validate(Wiring::multi_mam).empty());
    CHECK(desk.stage_extent(2) == std::pair<std::size_t, std::size_t>{8, 4});

    BackboneConfig broken = desk;
    broken.tap1 = 2;                     // not before tap2
    broken.attention_bottleneck = 64;    // not smaller than the tap width
    const auto errors = broken.validate(Wiring::multi_mam);
    CHECK(errors.size() >= 2);

    BackboneConfig stripes = desk;
    stripes.attention_submodules = 3;  // 8 rows not divisible by 3
    CHECK(!stripes.validate(Wiring::multi_mam).empty());
    // but fine when no attention module is wired in
    CHECK(stripes.validate(Wiring::baseline).empty());
}

TEST_CASE("zero input gives zero activations at both taps") {
    Rng rng(1);
    const ModelState state = ModelState::init(tiny_config(), Wiring::multi_mam, 2, rng);
    const auto taps = model::backbone_forward(Tensor({3, 3, 8, 8}), state);
    for (std::size_t i = 0; i < taps.tap1.size(); ++i) CHECK(taps.tap1[i] == 0.0);
    for (std::size_t i = 0; i < taps.final_features.size(); ++i) CHECK(taps.final_features[i] == 0.0);
}

TEST_CASE("desk backbone lands on the 8x4 grid") {
    Rng rng(2);
    const ModelState state = ModelState::init(BackboneConfig{}, Wiring::multi_mam, 4, rng);
    const auto taps = model::backbone_forward(random_tensor({2, 3, 64, 32}, rng, 0.0, 1.0), state);
    CHECK(taps.final_features.shape() == std::vector<std::size_t>{2, 64, 8, 4});
    CHECK(taps.tap1.shape() == std::vector<std::size_t>{2, 32, 16, 8});
    for (std::size_t i = 0; i < taps.tap1.size(); ++i) CHECK(taps.tap1[i] >= 0.0);
    for (std::size_t i = 0; i < taps.final_features.size(); ++i) CHECK(taps.final_features[i] >= 0.0);
}

TEST_CASE("per-frame independence: doubling and permuting frames") {
    Rng rng(3);
    const ModelState state = ModelState::init(tiny_config(), Wiring::multi_mam, 2, rng);
    const Tensor two = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    Tensor four({4, 3, 8, 8});
    std::memcpy(four.data(), two.data(), two.size() * sizeof(double));
    std::memcpy(four.data() + two.size(), two.data(), two.size() * sizeof(double));

    const auto taps2 = model::backbone_forward(two, state);
    const auto taps4 = model::backbone_forward(four, state);
    CHECK(taps4.final_features.extent(0) == 4);
    const std::size_t block = taps2.final_features.size();
    for (std::size_t i = 0; i < block; ++i) {
        CHECK(taps4.final_features[i] == taps2.final_features[i]);
        CHECK(taps4.final_features[block + i] == taps2.final_features[i]);
    }

    // swapping the two frames leaves the embedding unchanged
    Tensor swapped(two.shape());
    const std::size_t frame = two.size() / 2;
    std::memcpy(swapped.data(), two.data() + frame, frame * sizeof(double));
    std::memcpy(swapped.data() + frame, two.data(), frame * sizeof(double));
    const auto fwd_a = model::model_forward(two, state);
    const auto fwd_b = model::model_forward(swapped, state);
    CHECK(max_abs_diff(fwd_a.embedding, fwd_b.embedding) < 1e-12);
}

TEST_CASE("baseline wiring pools the raw backbone features") {
    Rng rng(4);
    const ModelState state = ModelState::init(tiny_config(), Wiring::baseline, 2, rng);
    const Tensor frames = random_tensor({3, 3, 8, 8}, rng, 0.0, 1.0);
    const auto fwd = model::model_forward(frames, state);
    const auto taps = model::backbone_forward(frames, state);
    const Tensor pooled = cmma::ops::avg_pool(cmma::ops::avg_pool(taps.final_features, {0}), {1, 2});
    CHECK(max_abs_diff(fwd.embedding, pooled) < 1e-12);
}

TEST_CASE("single-mam wiring ignores tap1 entirely") {
    Rng rng(5);
    BackboneConfig a = tiny_config();
    const ModelState sa = ModelState::init(a, Wiring::single_mam, 2, rng);
    const Tensor frames = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    const auto fa = model::model_forward(frames, sa);
    // same parameters, different tap1 index: identical outputs
    ModelState sb = sa;
    sb.config.tap1 = 42;
    const auto fb = model::model_forward(frames, sb);
    CHECK(max_abs_diff(fa.embedding, fb.embedding) == 0.0);
    CHECK(max_abs_diff(fa.logits, fb.logits) == 0.0);
}

TEST_CASE("embedding dimension equals the final stage width") {
    Rng rng(6);
    for (const std::size_t width : {6UL, 10UL}) {
        BackboneConfig cfg = tiny_config();
        cfg.stage_widths.back() = width;
        const ModelState state = ModelState::init(cfg, Wiring::multi_mam, 3, rng);
        const auto fwd = model::model_forward(random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0), state);
        CHECK(fwd.embedding.size() == width);
        CHECK(fwd.logits.size() == 3);
    }
}

TEST_CASE("total loss gradient through the model passes finite differences") {
    Rng rng(7);
    for (const Wiring wiring : {Wiring::multi_mam, Wiring::single_mam, Wiring::baseline}) {
        ModelState state = ModelState::init(tiny_config(), wiring, 2, rng);
        testutil::jitter_biases(state, rng);
        testutil::ProbeBatch batch;
        batch.labels = {0, 0, 1, 1};
        for (int c = 0; c < 4; ++c) {
            batch.frames.push_back(random_tensor({2, 3, 8, 8}, rng, 0.05, 1.0));
        }
        cmma::losses::LossWeights weights;  // all terms on
        const auto f = testutil::total_loss_over_params(state, batch, weights);
        const auto flat = model::flatten_params(state);
        CHECK(cmma::ops::finite_diff_check(f, Tensor({flat.size()}, flat), 1e-5) < 1e-4);
    }
}

TEST_CASE("gradient with respect to the input frames passes finite differences") {
    Rng rng(8);
    ModelState state = ModelState::init(tiny_config(), Wiring::multi_mam, 2, rng);
    testutil::jitter_biases(state, rng);
    const Tensor proj_emb = random_tensor({6}, rng);
    const Tensor proj_logits = random_tensor({2}, rng);
    cmma::ops::ScalarFunction f;
    f.value = [&](const Tensor& frames) {
        const auto fwd = model::model_forward(frames, state);
        double acc = 0.0;
        for (std::size_t i = 0; i < 6; ++i) acc += proj_emb[i] * fwd.embedding[i];
        for (std::size_t i = 0; i < 2; ++i) acc += proj_logits[i] * fwd.logits[i];
        return Tensor::scalar(acc);
    };
    f.gradient = [&](const Tensor& frames) {
        const auto fwd = model::model_forward(frames, state);
        const auto grads =
            model::model_backward(frames, state, fwd, proj_emb, proj_logits, nullptr, nullptr, true);
        return grads.frames;
    };
    CHECK(cmma::ops::finite_diff_check(f, random_tensor({2, 3, 8, 8}, rng, 0.05, 1.0), 1e-5) < 1e-4);
}

TEST_CASE("parameter flattening round-trips and the layout names everything") {
    Rng rng(9);
    ModelState state = ModelState::init(tiny_config(), Wiring::multi_mam, 2, rng);
    const auto layout = model::param_layout(state);
    const auto flat = model::flatten_params(state);
    CHECK(layout.total == flat.size());
    std::size_t sum = 0;
    for (const auto& seg : layout.segments) sum += seg.size;
    CHECK(sum == layout.total);
    CHECK(layout.segments.front().name == "backbone.stage0.weight");
    CHECK(layout.segments.back().name == "classifier.weight");

    std::vector<double> perturbed = flat;
    for (auto& v : perturbed) v += 1.0;
    model::unflatten_params(state, perturbed);
    const auto back = model::flatten_params(state);
    CHECK(back == perturbed);
}

TEST_CASE("checkpoints round-trip bitwise with their sidecar") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "cmma_model_test";
    fs::create_directories(dir);
    const std::string path = (dir / "ckpt.cmmk").string();

    Rng rng(10);
    const ModelState state = ModelState::init(tiny_config(), Wiring::multi_mam, 3, rng);
    model::save_checkpoint(path, state, cmma::Dtype::f64);
    const ModelState loaded = model::load_checkpoint(path);
    CHECK(loaded.wiring == state.wiring);
    CHECK(loaded.classes == state.classes);
    CHECK(loaded.config.stage_widths == state.config.stage_widths);
    CHECK(model::flatten_params(loaded) == model::flatten_params(state));

    // f32 payloads load back rounded
    model::save_checkpoint(path, state, cmma::Dtype::f32);
    const ModelState rounded = model::load_checkpoint(path);
    const auto a = model::flatten_params(state);
    const auto b = model::flatten_params(rounded);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(b[i] == static_cast<double>(static_cast<float>(a[i])));
    }
    fs::remove_all(dir);
}
