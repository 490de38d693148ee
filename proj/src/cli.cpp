#include "cmma/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "cmma/dataset.hpp"
#include "cmma/losses.hpp"
#include "cmma/model.hpp"
#include "cmma/retrieval.hpp"
#include "cmma/sampling.hpp"
#include "cmma/stats.hpp"
#include "cmma/trainer.hpp"

namespace cmma::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Line/column of a byte offset, both 1-based.
std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

int load_json_file(const std::string& path, json& out, std::ostream& diag) {
    std::ifstream f(path);
    if (!f) {
        diag << "error: cannot open config file '" << path << "'\n";
        return 2;
    }
    std::stringstream buffer;
    buffer << f.rdbuf();
    const std::string text = buffer.str();
    try {
        out = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
        diag << "error: malformed JSON in '" << path << "' at line " << line << ", column " << col
             << ": " << e.what() << "\n";
        return 2;
    }
    return 0;
}

// Pulls a field if present, appending a message on type mismatch.
template <typename T>
void read_field(const json& j, const char* key, T& out, std::vector<std::string>& errors) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        errors.push_back(std::string("field '") + key + "' has the wrong type");
    }
}

struct TrainRun {
    trainer::TrainConfig train;
    dataset::DatasetConfig data;
    std::string checkpoint_path = "checkpoint.cmmk";
    std::string log_path = "train_log.csv";
    std::string summary_path = "train_summary.json";
    Dtype precision = Dtype::f64;
};

void parse_dataset_config(const json& j, dataset::DatasetConfig& cfg,
                          std::vector<std::string>& errors) {
    read_field(j, "identities", cfg.identities, errors);
    read_field(j, "train_identities", cfg.train_identities, errors);
    read_field(j, "clips_per_id", cfg.clips_per_id, errors);
    read_field(j, "frames_per_clip", cfg.frames_per_clip, errors);
    read_field(j, "cameras", cfg.cameras, errors);
    read_field(j, "height", cfg.height, errors);
    read_field(j, "width", cfg.width, errors);
    read_field(j, "occlusion_rate", cfg.occlusion_rate, errors);
    read_field(j, "seed", cfg.seed, errors);
}

TrainRun parse_train_run(const json& j, std::vector<std::string>& errors) {
    TrainRun run;
    read_field(j, "learning_rate", run.train.learning_rate, errors);
    read_field(j, "weight_decay", run.train.weight_decay, errors);
    read_field(j, "frames_per_clip", run.train.frames_per_clip, errors);
    read_field(j, "steps", run.train.steps, errors);
    read_field(j, "seed", run.train.seed, errors);
    read_field(j, "triplet_margin", run.train.weights.margin, errors);
    if (j.contains("batch")) {
        read_field(j["batch"], "identities", run.train.batch.identities, errors);
        read_field(j["batch"], "clips_per_identity", run.train.batch.clips_per_identity, errors);
    }
    if (j.contains("loss_weights")) {
        const auto& w = j["loss_weights"];
        read_field(w, "id", run.train.weights.id, errors);
        read_field(w, "triplet", run.train.weights.triplet, errors);
        read_field(w, "diversity", run.train.weights.diversity, errors);
        read_field(w, "concentration", run.train.weights.concentration, errors);
    }
    if (j.contains("ablation")) {
        try {
            run.train.wiring = model::wiring_from_name(j["ablation"].get<std::string>());
        } catch (const std::exception& e) {
            errors.push_back(e.what());
        }
    }
    if (j.contains("sampling")) {
        const auto& s = j["sampling"];
        if (s.contains("strategy")) {
            try {
                run.train.sampling = trainer::sampling_from_name(s["strategy"].get<std::string>());
            } catch (const std::exception& e) {
                errors.push_back(e.what());
            }
        }
        read_field(s, "g_per_epoch", run.train.interval_per_epoch, errors);
    }
    if (j.contains("backbone")) {
        const auto& b = j["backbone"];
        auto& cfg = run.train.backbone;
        read_field(b, "stage_widths", cfg.stage_widths, errors);
        read_field(b, "stage_strides", cfg.stage_strides, errors);
        read_field(b, "input_height", cfg.input_height, errors);
        read_field(b, "input_width", cfg.input_width, errors);
        read_field(b, "tap1", cfg.tap1, errors);
        read_field(b, "tap2", cfg.tap2, errors);
        read_field(b, "attention_submodules", cfg.attention_submodules, errors);
        read_field(b, "attention_bottleneck", cfg.attention_bottleneck, errors);
    }
    if (j.contains("dataset")) parse_dataset_config(j["dataset"], run.data, errors);
    if (j.contains("precision")) {
        const std::string p = j["precision"].get<std::string>();
        if (p == "f64") {
            run.precision = Dtype::f64;
        } else if (p == "f32") {
            run.precision = Dtype::f32;
        } else {
            errors.push_back("precision must be 'f64' or 'f32', got '" + p + "'");
        }
    }
    if (j.contains("outputs")) {
        const auto& o = j["outputs"];
        read_field(o, "checkpoint", run.checkpoint_path, errors);
        read_field(o, "log", run.log_path, errors);
        read_field(o, "summary", run.summary_path, errors);
    }
    // dataset frames must fit the backbone input
    run.data.height = run.train.backbone.input_height;
    run.data.width = run.train.backbone.input_width;
    return run;
}

int report_validation(const std::vector<std::string>& errors, std::ostream& diag) {
    diag << "error: invalid configuration (" << errors.size() << " problem"
         << (errors.size() == 1 ? "" : "s") << "):\n";
    for (const auto& e : errors) diag << "  - " << e << "\n";
    return 3;
}

struct LoadedEval {
    model::ModelState state;
    dataset::SyntheticDataset data;
};

int load_checkpoint_and_manifest(const std::string& checkpoint, const std::string& manifest,
                                 LoadedEval& out, std::ostream& diag) {
    try {
        out.state = model::load_checkpoint(checkpoint);
    } catch (const std::exception& e) {
        diag << "error: " << e.what() << "\n";
        return 2;
    }
    try {
        out.data = dataset::load_dataset(manifest);
    } catch (const std::exception& e) {
        diag << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace

int cmd_train(const TrainOptions& options, std::ostream& diag) {
    json j;
    if (int rc = load_json_file(options.config_path, j, diag); rc != 0) return rc;

    std::vector<std::string> errors;
    TrainRun run = parse_train_run(j, errors);
    if (!options.ablation.empty()) {
        try {
            run.train.wiring = model::wiring_from_name(options.ablation);
        } catch (const std::exception& e) {
            errors.push_back(e.what());
        }
    }
    if (const char* env_seed = std::getenv("CMMA_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env_seed, &end, 10);
        if (end == env_seed || *end != '\0') {
            errors.push_back("CMMA_SEED must be an unsigned integer, got '" + std::string(env_seed) + "'");
        } else {
            run.train.seed = v;
        }
    }
    auto tv = run.train.validate();
    errors.insert(errors.end(), tv.begin(), tv.end());
    auto dv = run.data.validate();
    errors.insert(errors.end(), dv.begin(), dv.end());
    if (run.data.train_identities < run.train.batch.identities) {
        errors.push_back("dataset: train_identities must cover the batch identity count");
    }
    if (!errors.empty()) return report_validation(errors, diag);

    try {
        const auto data = dataset::generate_dataset(run.data);
        const auto result = trainer::train(run.train, data);
        model::save_checkpoint(run.checkpoint_path, result.state, run.precision);
        trainer::write_log_csv(run.log_path, result.log);

        json summary;
        summary["steps"] = run.train.steps;
        summary["ablation"] = model::wiring_name(run.train.wiring);
        summary["final_mean_diag"] = result.summary.mean_diag;
        summary["final_mean_hellinger"] = result.summary.mean_hellinger;
        if (!result.log.empty()) {
            const auto& last = result.log.back();
            summary["final_loss"] = {{"total", last.total},       {"id", last.id},
                                     {"triplet", last.triplet},   {"diversity", last.diversity},
                                     {"concentration", last.concentration}};
        }
        std::ofstream s(run.summary_path);
        if (!s) throw std::runtime_error("cannot open " + run.summary_path + " for writing");
        s << summary.dump(2) << "\n";
    } catch (const std::exception& e) {
        diag << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cmd_gen_data(const GenDataOptions& options, std::ostream& diag) {
    json j;
    if (int rc = load_json_file(options.config_path, j, diag); rc != 0) return rc;
    std::vector<std::string> errors;
    dataset::DatasetConfig cfg;
    parse_dataset_config(j.contains("dataset") ? j["dataset"] : j, cfg, errors);
    if (j.contains("backbone")) {
        read_field(j["backbone"], "input_height", cfg.height, errors);
        read_field(j["backbone"], "input_width", cfg.width, errors);
    }
    auto dv = cfg.validate();
    errors.insert(errors.end(), dv.begin(), dv.end());
    if (!errors.empty()) return report_validation(errors, diag);
    try {
        dataset::write_dataset(options.output_dir, dataset::generate_dataset(cfg));
    } catch (const std::exception& e) {
        diag << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cmd_eval(const EvalOptions& options, std::ostream& diag) {
    std::vector<std::string> errors;
    if (options.frames < 1) errors.push_back("eval: --frames must be >= 1");
    if (options.max_rank < 1) errors.push_back("eval: --max-rank must be >= 1");
    if (options.split != "test" && options.split != "train" && options.split != "all") {
        errors.push_back("eval: --split must be test, train or all");
    }
    if (!errors.empty()) return report_validation(errors, diag);

    LoadedEval loaded;
    if (int rc = load_checkpoint_and_manifest(options.checkpoint_path, options.manifest_path, loaded, diag);
        rc != 0) {
        return rc;
    }

    try {
        std::vector<std::size_t> pool;
        if (options.split == "test") {
            pool = loaded.data.test_clip_indices();
        } else if (options.split == "train") {
            pool = loaded.data.train_clip_indices();
        } else {
            pool.resize(loaded.data.clips.size());
            for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
        }
        if (pool.empty()) throw std::runtime_error("eval: no clips in split '" + options.split + "'");

        retrieval::EvalProtocol protocol;
        protocol.cross_camera = options.cross_camera;
        std::vector<std::size_t> query_rows;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            const auto& clip = loaded.data.clips[pool[i]];
            protocol.gallery.push_back({clip.video_id, clip.identity, clip.camera});
            if (clip.camera == options.query_camera) {
                protocol.query.push_back({clip.video_id, clip.identity, clip.camera});
                query_rows.push_back(i);
            }
        }
        if (protocol.query.empty()) {
            throw std::runtime_error("eval: no query clips on camera " +
                                     std::to_string(options.query_camera));
        }

        const Tensor gallery_emb =
            trainer::extract_embeddings(loaded.state, loaded.data, pool, options.frames);
        const std::size_t d = gallery_emb.extent(1);
        Tensor query_emb({query_rows.size(), d});
        for (std::size_t i = 0; i < query_rows.size(); ++i) {
            std::copy_n(gallery_emb.data() + query_rows[i] * d, d, query_emb.data() + i * d);
        }

        const Tensor dist = retrieval::pairwise_distances(query_emb, gallery_emb);
        const auto cmc = retrieval::cmc_curve(dist, protocol, options.max_rank);
        const auto map = retrieval::mean_average_precision(dist, protocol);

        auto rank_at = [&](std::size_t k) {
            return k <= cmc.rank.size() ? cmc.rank[k - 1] : cmc.rank.back();
        };
        json out;
        out["rank1"] = rank_at(1);
        out["rank5"] = rank_at(5);
        out["rank10"] = rank_at(10);
        out["rank20"] = rank_at(20);
        out["mAP"] = map.map;
        out["excluded_queries"] = cmc.excluded_queries;
        out["queries"] = protocol.query.size();
        out["gallery"] = protocol.gallery.size();
        std::ofstream f(options.output_path);
        if (!f) throw std::runtime_error("cannot open " + options.output_path + " for writing");
        f << out.dump(2) << "\n";
    } catch (const std::exception& e) {
        diag << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

namespace {

void write_pgm(const std::string& path, const Tensor& map, std::size_t out_h, std::size_t out_w) {
    const std::size_t h = map.extent(0), w = map.extent(1);
    double vmax = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i) vmax = std::max(vmax, map[i]);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << "P2\n" << out_w << " " << out_h << "\n255\n";
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            const std::size_t gy = y * h / out_h;
            const std::size_t gx = x * w / out_w;
            const int v = vmax > 0.0 ? static_cast<int>(std::lround(255.0 * map.at(gy, gx) / vmax)) : 0;
            f << v << (x + 1 == out_w ? "" : " ");
        }
        f << "\n";
    }
}

void write_map_csv(const std::string& path, const Tensor& map) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    for (std::size_t y = 0; y < map.extent(0); ++y) {
        for (std::size_t x = 0; x < map.extent(1); ++x) {
            f << fmt17(map.at(y, x)) << (x + 1 == map.extent(1) ? "" : ",");
        }
        f << "\n";
    }
}

}  // namespace

int cmd_heatmap(const HeatmapOptions& options, std::ostream& diag) {
    LoadedEval loaded;
    if (int rc = load_checkpoint_and_manifest(options.checkpoint_path, options.manifest_path, loaded, diag);
        rc != 0) {
        return rc;
    }
    const dataset::Clip* clip = nullptr;
    for (const auto& c : loaded.data.clips) {
        if (c.video_id == options.clip_id) clip = &c;
    }
    if (!clip) {
        diag << "error: unknown clip id " << options.clip_id << "\n";
        return 4;
    }
    if (loaded.state.wiring == model::Wiring::baseline) {
        diag << "error: baseline checkpoints have no attention modules to visualize\n";
        return 1;
    }

    try {
        fs::create_directories(options.output_dir);
        const auto indices = sampling::eval_sample(static_cast<int>(clip->frames.extent(0)),
                                                   static_cast<int>(options.frames));
        const std::size_t chw =
            clip->frames.extent(1) * clip->frames.extent(2) * clip->frames.extent(3);
        Tensor frames({indices.size(), clip->frames.extent(1), clip->frames.extent(2),
                       clip->frames.extent(3)});
        for (std::size_t j = 0; j < indices.size(); ++j) {
            std::copy_n(clip->frames.data() + static_cast<std::size_t>(indices[j] - 1) * chw, chw,
                        frames.data() + j * chw);
        }
        const auto fwd = model::model_forward(frames, loaded.state);

        std::vector<std::pair<std::string, const attention::AttentionStack*>> stacks;
        if (loaded.state.has_mam1()) stacks.emplace_back("mam1", &fwd.mam1.attention);
        if (loaded.state.has_mam2()) stacks.emplace_back("mam2", &fwd.mam2.attention);

        json manifest;
        manifest["clip_id"] = options.clip_id;
        manifest["identity"] = clip->identity;
        manifest["camera"] = clip->camera;
        manifest["frame_indices_0based"] = [&]() {
            std::vector<int> zero;
            for (int i : indices) zero.push_back(i - 1);
            return zero;
        }();
        manifest["maps"] = json::array();

        double diag_sum = 0.0;
        std::size_t diag_count = 0;
        for (const auto& [name, stack] : stacks) {
            const std::size_t n = stack->values.extent(0), k = stack->values.extent(1);
            const std::size_t h = stack->values.extent(2), w = stack->values.extent(3);
            for (std::size_t f = 0; f < n; ++f) {
                const Tensor flat = losses::flat_attention(*stack, f);
                const Tensor ahat = losses::concentration_matrix(flat);
                for (std::size_t i = 0; i < k; ++i) diag_sum += ahat.at(i, i);
                diag_count += k;
                for (std::size_t ki = 0; ki < k; ++ki) {
                    Tensor map({h, w});
                    std::copy_n(stack->values.data() + (f * k + ki) * h * w, h * w, map.data());
                    double vmax = 0.0;
                    for (std::size_t i = 0; i < map.size(); ++i) vmax = std::max(vmax, map[i]);
                    const std::string base =
                        name + "_frame" + std::to_string(f) + "_sub" + std::to_string(ki);
                    write_pgm((fs::path(options.output_dir) / (base + ".pgm")).string(), map,
                              loaded.state.config.input_height, loaded.state.config.input_width);
                    write_map_csv((fs::path(options.output_dir) / (base + ".csv")).string(), map);
                    manifest["maps"].push_back({{"module", name},
                                                {"frame", f},
                                                {"submodule", ki},
                                                {"max_weight", vmax},
                                                {"pgm", base + ".pgm"},
                                                {"csv", base + ".csv"}});
                }
            }
        }
        manifest["mean_diag"] = diag_count > 0 ? diag_sum / static_cast<double>(diag_count) : 0.0;
        std::ofstream f(fs::path(options.output_dir) / "manifest.json");
        if (!f) throw std::runtime_error("cannot write heatmap manifest");
        f << manifest.dump(2) << "\n";
    } catch (const std::exception& e) {
        diag << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cmd_sample_check(const SampleCheckOptions& options, std::ostream& out, std::ostream& diag) {
    std::vector<std::string> errors;
    if (options.total_frames < 1) errors.push_back("sample-check: T must be >= 1");
    if (options.frames < 1) errors.push_back("sample-check: N must be >= 1");
    if (options.draws < 1) errors.push_back("sample-check: draws must be >= 1");
    if (options.strategy != "ris" && options.strategy != "restricted") {
        errors.push_back("sample-check: strategy must be ris or restricted");
    }
    if (!errors.empty()) return report_validation(errors, diag);

    Rng rng(options.seed);
    const bool ris = options.strategy == "ris";
    const int gmax = sampling::max_interval(options.total_frames, options.frames);
    if (ris && gmax == 0) {
        out << json{{"warning", "T < N + 1; emitting padded plans that cycle frames from the start"}}
                   .dump()
            << "\n";
    }

    std::vector<std::size_t> g_counts(gmax > 0 ? static_cast<std::size_t>(gmax) : 0, 0);
    // s histogram per interval; cell 0 of interval g is s = 1
    std::vector<std::vector<std::size_t>> s_counts(g_counts.size());
    for (int g = 1; g <= gmax; ++g) {
        s_counts[static_cast<std::size_t>(g - 1)].assign(
            static_cast<std::size_t>(options.total_frames - g * options.frames), 0);
    }

    for (std::size_t i = 0; i < options.draws; ++i) {
        const auto plan = ris ? sampling::ris_sample(options.total_frames, options.frames, rng)
                              : sampling::restricted_sample(options.total_frames, options.frames, rng);
        json line;
        line["T"] = plan.total_frames;
        line["N"] = plan.frames;
        line["g"] = plan.interval;
        line["s"] = plan.padded ? 0 : plan.start - 1;  // 0-based in CLI output
        json idx = json::array();
        for (int v : plan.indices) idx.push_back(v - 1);
        line["indices"] = idx;
        if (plan.padded) line["padded"] = true;
        out << line.dump() << "\n";
        if (ris && !plan.padded) {
            g_counts[static_cast<std::size_t>(plan.interval - 1)] += 1;
            s_counts[static_cast<std::size_t>(plan.interval - 1)]
                    [static_cast<std::size_t>(plan.start - 1)] += 1;
        }
    }

    json summary;
    summary["draws"] = options.draws;
    summary["strategy"] = options.strategy;
    if (ris && gmax >= 2 && options.draws >= 2) {
        const auto g_fit = stats::chi_square_uniform(g_counts);
        summary["g"] = {{"cells", g_counts.size()},
                        {"statistic", g_fit.statistic},
                        {"dof", g_fit.dof},
                        {"p_value", g_fit.p_value}};
        // Pool the per-interval start-point statistics: independent
        // chi-squares add, as do their degrees of freedom.
        double stat = 0.0, dof = 0.0;
        for (const auto& cells : s_counts) {
            std::size_t total = 0;
            for (std::size_t c : cells) total += c;
            if (cells.size() < 2 || total == 0) continue;
            const auto fit = stats::chi_square_uniform(cells);
            stat += fit.statistic;
            dof += fit.dof;
        }
        if (dof > 0.0) {
            summary["s_given_g"] = {{"statistic", stat},
                                    {"dof", dof},
                                    {"p_value", stats::chi_square_p_value(stat, dof)}};
        }
    }
    out << json{{"summary", summary}}.dump() << "\n";
    return 0;
}

}  // namespace cmma::cli
