#include <iostream>

#include <CLI11.hpp>

#include "cmma/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Multi-attention video re-identification toolkit"};
    app.require_subcommand(1);

    cmma::cli::TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON config");
    train_cmd->add_option("--config", train.config_path, "JSON run configuration")->required();
    train_cmd->add_option("--ablation", train.ablation,
                          "Override the wiring: baseline, single-mam or multi-mam");

    cmma::cli::GenDataOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset and manifest");
    gen_cmd->add_option("--config", gen.config_path, "JSON config (dataset section or bare object)")
        ->required();
    gen_cmd->add_option("--out", gen.output_dir, "Output directory")->required();

    cmma::cli::EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "Compute retrieval metrics for a checkpoint");
    eval_cmd->add_option("--checkpoint", eval.checkpoint_path, "Checkpoint file")->required();
    eval_cmd->add_option("--manifest", eval.manifest_path, "Dataset manifest")->required();
    eval_cmd->add_option("--out", eval.output_path, "Metrics JSON output")->required();
    eval_cmd->add_option("--frames", eval.frames, "Frames per clip at evaluation time");
    eval_cmd->add_option("--max-rank", eval.max_rank, "Deepest CMC rank to compute");
    eval_cmd->add_option("--query-camera", eval.query_camera, "Camera whose clips form the queries");
    eval_cmd->add_option("--split", eval.split, "Identity split to evaluate: test, train or all");
    eval_cmd->add_flag("--same-camera,!--cross-camera", [&](std::int64_t count) {
        eval.cross_camera = count <= 0;
    }, "Keep same-identity same-camera gallery entries");

    cmma::cli::HeatmapOptions heat;
    auto* heat_cmd = app.add_subcommand("heatmap", "Export attention maps for one clip");
    heat_cmd->add_option("--checkpoint", heat.checkpoint_path, "Checkpoint file")->required();
    heat_cmd->add_option("--manifest", heat.manifest_path, "Dataset manifest")->required();
    heat_cmd->add_option("--clip", heat.clip_id, "Clip video id")->required();
    heat_cmd->add_option("--out", heat.output_dir, "Output directory")->required();
    heat_cmd->add_option("--frames", heat.frames, "Frames to visualize");

    cmma::cli::SampleCheckOptions sample;
    auto* sample_cmd = app.add_subcommand("sample-check", "Print sampling plans and uniformity stats");
    sample_cmd->add_option("--total-frames,-T", sample.total_frames, "Video length T")->required();
    sample_cmd->add_option("--frames,-N", sample.frames, "Frames per draw N")->required();
    sample_cmd->add_option("--draws", sample.draws, "Number of plans to draw");
    sample_cmd->add_option("--seed", sample.seed, "Random seed");
    sample_cmd->add_option("--strategy", sample.strategy, "ris or restricted");

    CLI11_PARSE(app, argc, argv);

    if (train_cmd->parsed()) return cmma::cli::cmd_train(train, std::cerr);
    if (gen_cmd->parsed()) return cmma::cli::cmd_gen_data(gen, std::cerr);
    if (eval_cmd->parsed()) return cmma::cli::cmd_eval(eval, std::cerr);
    if (heat_cmd->parsed()) return cmma::cli::cmd_heatmap(heat, std::cerr);
    if (sample_cmd->parsed()) return cmma::cli::cmd_sample_check(sample, std::cout, std::cerr);
    return 1;
}
