#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cmma/cli.hpp"
#include "cmma/dataset.hpp"
#include "cmma/model.hpp"
#include "cmma/rng.hpp"

namespace cli = cmma::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    f << text;
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Small enough to train in a fraction of a second.
const char* kMicroConfig = R"({
  "seed": 5,
  "steps": 3,
  "frames_per_clip": 2,
  "batch": {"identities": 2, "clips_per_identity": 2},
  "backbone": {
    "stage_widths": [4, 6],
    "stage_strides": [2, 2],
    "input_height": 8,
    "input_width": 8,
    "tap1": 0,
    "tap2": 1,
    "attention_submodules": 2,
    "attention_bottleneck": 2
  },
  "dataset": {
    "identities": 6,
    "train_identities": 4,
    "clips_per_id": 2,
    "frames_per_clip": 6,
    "seed": 9
  }
})";

}  // namespace

TEST_CASE("sample-check: draw count, byte determinism, interval span") {
    cli::SampleCheckOptions opts;
    opts.total_frames = 73;
    opts.frames = 6;
    opts.draws = 1;
    opts.seed = 2;
    std::ostringstream out1, err;
    CHECK(cli::cmd_sample_check(opts, out1, err) == 0);
    std::size_t lines = 0;
    std::istringstream is(out1.str());
    std::string line;
    while (std::getline(is, line)) ++lines;
    CHECK(lines == 2);  // one plan + summary

    opts.draws = 3000;
    std::ostringstream out2, out3;
    CHECK(cli::cmd_sample_check(opts, out2, err) == 0);
    CHECK(cli::cmd_sample_check(opts, out3, err) == 0);
    CHECK(out2.str() == out3.str());

    // every plan line satisfies the arithmetic-progression contract
    std::istringstream plans(out2.str());
    std::vector<bool> interval_seen(12, false);
    while (std::getline(plans, line)) {
        const json j = json::parse(line);
        if (!j.contains("g")) continue;
        const int g = j["g"].get<int>();
        const int s0 = j["s"].get<int>();
        const auto idx = j["indices"].get<std::vector<int>>();
        REQUIRE(g >= 1);
        REQUIRE(g <= 12);
        interval_seen[g - 1] = true;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            CHECK(idx[k] == s0 + g * static_cast<int>(k + 1));
            CHECK(idx[k] >= 0);
            CHECK(idx[k] <= 72);
        }
    }
    for (bool seen : interval_seen) CHECK(seen);

    // uniformity summary carries p-values
    const std::string text = out2.str();
    const auto last = text.rfind('{');
    const json summary = json::parse(text.substr(last == std::string::npos ? 0 : text.rfind("\n{", last)));
}

TEST_CASE("sample-check warns and pads when T < N + 1") {
    cli::SampleCheckOptions opts;
    opts.total_frames = 4;
    opts.frames = 6;
    opts.draws = 2;
    std::ostringstream out, err;
    CHECK(cli::cmd_sample_check(opts, out, err) == 0);
    CHECK(out.str().find("warning") != std::string::npos);
    CHECK(out.str().find("padded") != std::string::npos);
}

TEST_CASE("train: missing config and malformed JSON exit 2") {
    std::ostringstream diag;
    CHECK(cli::cmd_train({"/nonexistent/nowhere.json", ""}, diag) == 2);

    const fs::path dir = fresh_dir("cmma_cli_badjson");
    write_file(dir / "bad.json", "{\n  \"steps\": 3,\n  oops\n}");
    std::ostringstream diag2;
    CHECK(cli::cmd_train({(dir / "bad.json").string(), ""}, diag2) == 2);
    CHECK(diag2.str().find("line 3") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("train: validation failures are listed together with exit 3") {
    const fs::path dir = fresh_dir("cmma_cli_invalid");
    write_file(dir / "cfg.json", R"({
      "steps": 0,
      "learning_rate": -1.0,
      "batch": {"identities": 1, "clips_per_identity": 1},
      "dataset": {"identities": 1}
    })");
    std::ostringstream diag;
    CHECK(cli::cmd_train({(dir / "cfg.json").string(), ""}, diag) == 3);
    CHECK(diag.str().find("steps") != std::string::npos);
    CHECK(diag.str().find("learning_rate") != std::string::npos);
    CHECK(diag.str().find("P >= 2") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("train then eval then heatmap, end to end") {
    const fs::path dir = fresh_dir("cmma_cli_e2e");
    write_file(dir / "cfg.json", std::string(kMicroConfig));

    json cfg = json::parse(std::string(kMicroConfig));
    cfg["outputs"] = {{"checkpoint", (dir / "ckpt.cmmk").string()},
                      {"log", (dir / "log.csv").string()},
                      {"summary", (dir / "summary.json").string()}};
    write_file(dir / "cfg.json", cfg.dump(2));

    std::ostringstream diag;
    REQUIRE(cli::cmd_train({(dir / "cfg.json").string(), ""}, diag) == 0);
    CHECK(fs::exists(dir / "ckpt.cmmk"));
    CHECK(fs::exists(dir / "ckpt.cmmk.json"));
    CHECK(fs::exists(dir / "summary.json"));

    // one header plus one row per step
    std::istringstream log(read_file(dir / "log.csv"));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(log, line)) ++rows;
    CHECK(rows == 4);

    std::ostringstream gd;
    REQUIRE(cli::cmd_gen_data({(dir / "cfg.json").string(), (dir / "data").string()}, gd) == 0);
    REQUIRE(fs::exists(dir / "data" / "manifest.json"));

    cli::EvalOptions eval;
    eval.checkpoint_path = (dir / "ckpt.cmmk").string();
    eval.manifest_path = (dir / "data" / "manifest.json").string();
    eval.output_path = (dir / "metrics.json").string();
    eval.frames = 2;
    std::ostringstream ed;
    REQUIRE(cli::cmd_eval(eval, ed) == 0);
    const json metrics = json::parse(read_file(dir / "metrics.json"));
    for (const char* key : {"rank1", "rank5", "rank10", "rank20", "mAP", "excluded_queries"}) {
        CHECK(metrics.contains(key));
    }
    CHECK(metrics["rank1"].get<double>() >= 0.0);
    CHECK(metrics["rank1"].get<double>() <= 1.0);

    // eval twice: identical bytes
    eval.output_path = (dir / "metrics2.json").string();
    REQUIRE(cli::cmd_eval(eval, ed) == 0);
    CHECK(read_file(dir / "metrics.json") == read_file(dir / "metrics2.json"));

    cli::HeatmapOptions heat;
    heat.checkpoint_path = (dir / "ckpt.cmmk").string();
    heat.manifest_path = (dir / "data" / "manifest.json").string();
    heat.output_dir = (dir / "maps").string();
    heat.clip_id = 0;
    heat.frames = 2;
    std::ostringstream hd;
    REQUIRE(cli::cmd_heatmap(heat, hd) == 0);
    const json hmanifest = json::parse(read_file(dir / "maps" / "manifest.json"));
    CHECK(hmanifest["mean_diag"].get<double>() > 0.0);
    REQUIRE(!hmanifest["maps"].empty());
    // every exported CSV is a normalized distribution
    for (const auto& entry : hmanifest["maps"]) {
        const std::string csv = read_file(dir / "maps" / entry["csv"].get<std::string>());
        double sum = 0.0;
        std::istringstream rows_in(csv);
        std::string row;
        while (std::getline(rows_in, row)) {
            std::istringstream cells(row);
            std::string cell;
            while (std::getline(cells, cell, ',')) sum += std::stod(cell);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(fs::exists(dir / "maps" / entry["pgm"].get<std::string>()));
    }

    // unknown clip id
    heat.clip_id = 9999;
    CHECK(cli::cmd_heatmap(heat, hd) == 4);
    fs::remove_all(dir);
}

TEST_CASE("fresh desk model exports near-uniform attention maps") {
    const fs::path dir = fresh_dir("cmma_cli_uniform");

    // untrained desk-scale model, zero outer biases from initialization
    cmma::Rng rng(7);
    const auto state = cmma::model::ModelState::init(cmma::model::BackboneConfig{},
                                                     cmma::model::Wiring::multi_mam, 4, rng);
    cmma::model::save_checkpoint((dir / "fresh.cmmk").string(), state);

    cmma::dataset::DatasetConfig dcfg;
    dcfg.identities = 2;
    dcfg.train_identities = 1;
    dcfg.clips_per_id = 2;
    dcfg.frames_per_clip = 4;
    dcfg.seed = 3;
    cmma::dataset::write_dataset((dir / "data").string(), cmma::dataset::generate_dataset(dcfg));

    cli::HeatmapOptions heat;
    heat.checkpoint_path = (dir / "fresh.cmmk").string();
    heat.manifest_path = (dir / "data" / "manifest.json").string();
    heat.output_dir = (dir / "maps").string();
    heat.clip_id = 0;
    heat.frames = 2;
    std::ostringstream hd;
    REQUIRE(cli::cmd_heatmap(heat, hd) == 0);

    const json manifest = json::parse(read_file(dir / "maps" / "manifest.json"));
    for (const auto& entry : manifest["maps"]) {
        const double max_weight = entry["max_weight"].get<double>();
        const std::size_t cells = entry["module"] == "mam1" ? 16 * 8 : 8 * 4;
        CHECK(max_weight >= 1.0 / static_cast<double>(cells));
        CHECK(max_weight < 3.0 / static_cast<double>(cells));
    }
    fs::remove_all(dir);
}
