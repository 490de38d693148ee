#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

namespace cmma::cli {

// Exit codes: 0 success, 1 runtime failure, 2 unreadable or malformed input,
// 3 configuration validation failure, 4 unknown clip id.

struct TrainOptions {
    std::string config_path;
    std::string ablation;  // optional wiring override
};
int cmd_train(const TrainOptions& options, std::ostream& diag);

struct GenDataOptions {
    std::string config_path;
    std::string output_dir;
};
int cmd_gen_data(const GenDataOptions& options, std::ostream& diag);

struct EvalOptions {
    std::string checkpoint_path;
    std::string manifest_path;
    std::string output_path;
    std::size_t frames = 6;
    std::size_t max_rank = 20;
    bool cross_camera = true;
    int query_camera = 0;
    std::string split = "test";  // test | train | all
};
int cmd_eval(const EvalOptions& options, std::ostream& diag);

struct HeatmapOptions {
    std::string checkpoint_path;
    std::string manifest_path;
    std::string output_dir;
    int clip_id = 0;
    std::size_t frames = 6;
};
int cmd_heatmap(const HeatmapOptions& options, std::ostream& diag);

struct SampleCheckOptions {
    int total_frames = 73;
    int frames = 6;
    std::size_t draws = 1;
    std::uint64_t seed = 1;
    std::string strategy = "ris";  // ris | restricted
};
/// Emits one JSON line per plan (0-based start and indices) followed by a
/// JSON summary line with chi-square uniformity statistics.
int cmd_sample_check(const SampleCheckOptions& options, std::ostream& out, std::ostream& diag);

}  // namespace cmma::cli
