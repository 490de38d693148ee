#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cmma/trainer.hpp"
#include "test_util.hpp"

namespace trainer = cmma::trainer;
namespace model = cmma::model;
namespace dataset = cmma::dataset;
using cmma::Rng;
using cmma::Tensor;

namespace {

model::BackboneConfig tiny_backbone() {
    model::BackboneConfig cfg;
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

dataset::DatasetConfig tiny_dataset() {
    dataset::DatasetConfig cfg;
    cfg.identities = 4;
    cfg.train_identities = 4;
    cfg.clips_per_id = 2;
    cfg.frames_per_clip = 8;
    cfg.height = 8;
    cfg.width = 8;
    cfg.occlusion_rate = 0.3;
    cfg.seed = 3;
    return cfg;
}

trainer::TrainConfig tiny_train(std::size_t steps, std::uint64_t seed) {
    trainer::TrainConfig cfg;
    cfg.backbone = tiny_backbone();
    cfg.batch.identities = 2;
    cfg.batch.clips_per_identity = 2;
    cfg.frames_per_clip = 2;
    cfg.steps = steps;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("adam: zero gradient and zero decay leave parameters alone") {
    std::vector<double> params{1.0, -2.0, 0.5};
    const std::vector<double> zero(3, 0.0);
    trainer::AdamMoments moments;
    trainer::adam_step(params, zero, moments, 1, 0.1, 0.0, nullptr);
    CHECK(params == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam: first step on one scalar is close to minus the rate") {
    std::vector<double> params{0.0};
    trainer::AdamMoments moments;
    trainer::adam_step(params, {1.0}, moments, 1, 0.002, 0.0, nullptr);
    // bias-corrected first step: -lr * 1 / (1 + eps)
    CHECK(params[0] == doctest::Approx(-0.002).epsilon(1e-6));
}

TEST_CASE("adam: repeated runs from the same inputs are bitwise identical") {
    Rng rng(4);
    std::vector<double> a(32), b(32), g(32);
    for (std::size_t i = 0; i < 32; ++i) {
        a[i] = b[i] = rng.uniform(-1.0, 1.0);
        g[i] = rng.uniform(-1.0, 1.0);
    }
    trainer::AdamMoments ma, mb;
    for (std::size_t t = 1; t <= 10; ++t) {
        trainer::adam_step(a, g, ma, t, 2e-4, 5e-4, nullptr);
        trainer::adam_step(b, g, mb, t, 2e-4, 5e-4, nullptr);
    }
    CHECK(a == b);
}

TEST_CASE("adam names the parameter carrying a non-finite gradient") {
    Rng rng(5);
    model::ModelState state = model::ModelState::init(tiny_backbone(), model::Wiring::multi_mam, 2, rng);
    const auto layout = model::param_layout(state);
    std::vector<double> params = model::flatten_params(state);
    std::vector<double> grads(params.size(), 0.0);
    // poison one classifier entry
    grads[layout.segments.back().offset + 1] = std::nan("");
    trainer::AdamMoments moments;
    CHECK_THROWS_WITH_AS(
        trainer::adam_step(params, grads, moments, 1, 2e-4, 0.0, &layout),
        doctest::Contains("classifier.weight"), std::runtime_error);
}

TEST_CASE("all-zero loss weights: losses log as zero, decay is the only drift") {
    const auto data = dataset::generate_dataset(tiny_dataset());
    trainer::TrainConfig cfg = tiny_train(3, 11);
    cfg.weights.id = cfg.weights.triplet = cfg.weights.diversity = cfg.weights.concentration = 0.0;
    cfg.weight_decay = 0.0;

    Rng param_rng = Rng(cfg.seed).fork(1);
    const model::ModelState fresh =
        model::ModelState::init(cfg.backbone, cfg.wiring, 4, param_rng);
    const auto result = trainer::train(cfg, data);
    for (const auto& row : result.log) {
        CHECK(row.total == 0.0);
        CHECK(row.id == 0.0);
        CHECK(row.triplet == 0.0);
        CHECK(row.diversity == 0.0);
        CHECK(row.concentration == 0.0);
    }
    // zero gradients and zero decay: parameters never move
    CHECK(model::flatten_params(result.state) == model::flatten_params(fresh));

    cfg.weight_decay = 5e-4;
    const auto decayed = trainer::train(cfg, data);
    CHECK(model::flatten_params(decayed.state) != model::flatten_params(fresh));
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto data = dataset::generate_dataset(tiny_dataset());
    const auto a = trainer::train(tiny_train(6, 21), data);
    const auto b = trainer::train(tiny_train(6, 21), data);
    CHECK(model::flatten_params(a.state) == model::flatten_params(b.state));
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].total == b.log[i].total);
        CHECK(a.log[i].mean_diag == b.log[i].mean_diag);
    }
    CHECK(a.summary.mean_diag == b.summary.mean_diag);
    CHECK(a.summary.mean_hellinger == b.summary.mean_hellinger);

    const auto c = trainer::train(tiny_train(6, 22), data);
    CHECK(model::flatten_params(a.state) != model::flatten_params(c.state));
}

TEST_CASE("losses stay finite across seeds and wirings") {
    const auto data = dataset::generate_dataset(tiny_dataset());
    for (const std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        for (const auto wiring :
             {model::Wiring::baseline, model::Wiring::single_mam, model::Wiring::multi_mam}) {
            trainer::TrainConfig cfg = tiny_train(4, seed);
            cfg.wiring = wiring;
            const auto result = trainer::train(cfg, data);
            for (const auto& row : result.log) {
                CHECK(std::isfinite(row.total));
                CHECK(std::isfinite(row.mean_diag));
            }
        }
    }
}

TEST_CASE("restricted sampling strategy also trains") {
    const auto data = dataset::generate_dataset(tiny_dataset());
    trainer::TrainConfig cfg = tiny_train(3, 31);
    cfg.sampling = trainer::SamplingStrategy::restricted;
    const auto result = trainer::train(cfg, data);
    CHECK(result.log.size() == 3);
}

TEST_CASE("config violations are collected, not reported one at a time") {
    trainer::TrainConfig cfg = tiny_train(0, 1);
    cfg.batch.identities = 1;
    cfg.learning_rate = 0.0;
    const auto errors = cfg.validate();
    CHECK(errors.size() >= 3);
    const auto data = dataset::generate_dataset(tiny_dataset());
    CHECK_THROWS_AS(trainer::train(cfg, data), std::runtime_error);
}

TEST_CASE("embedding extraction and attention summary") {
    const auto data = dataset::generate_dataset(tiny_dataset());
    const auto result = trainer::train(tiny_train(2, 41), data);
    const auto idx = data.train_clip_indices();
    const Tensor emb = trainer::extract_embeddings(result.state, data, idx, 2);
    CHECK(emb.shape() == std::vector<std::size_t>{idx.size(), 6});
    CHECK(emb.all_finite());

    const auto summary = trainer::attention_summary(result.state, data, idx, 2);
    CHECK(summary.mean_diag > 0.0);
    CHECK(summary.mean_diag <= 1.0 + 1e-9);
    CHECK(summary.mean_hellinger >= 0.0);
    CHECK(summary.mean_hellinger <= 1.0 + 1e-9);
}

TEST_CASE("training log csv has one row per step") {
    namespace fs = std::filesystem;
    const auto data = dataset::generate_dataset(tiny_dataset());
    const auto result = trainer::train(tiny_train(4, 51), data);
    const fs::path path = fs::temp_directory_path() / "cmma_trainer_log.csv";
    trainer::write_log_csv(path.string(), result.log);
    std::ifstream f(path);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(f, line)) ++rows;
    CHECK(rows == 5);  // header + 4 steps
    fs::remove(path);
}
