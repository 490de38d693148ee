#include "cmma/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cmma/rng.hpp"

namespace cmma::dataset {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kBands = 8;

struct IdentityPattern {
    double band_color[kBands][3];
};

// Every identity wears the same color palette; what identifies a person is
// the order of the bands. Global color statistics are then shared across
// identities and only the spatial arrangement discriminates.
IdentityPattern identity_pattern(std::uint64_t seed, int identity) {
    Rng palette_rng = Rng(seed).fork(0x9a1e77eULL);
    double palette[kBands][3];
    for (std::size_t b = 0; b < kBands; ++b) {
        for (int c = 0; c < 3; ++c) palette[b][c] = palette_rng.uniform(0.08, 0.92);
    }
    Rng rng = Rng(seed).fork(0x1d000000ULL + static_cast<std::uint64_t>(identity));
    std::size_t perm[kBands];
    for (std::size_t b = 0; b < kBands; ++b) perm[b] = b;
    for (std::size_t b = kBands; b-- > 1;) {
        std::swap(perm[b], perm[rng.bounded(b + 1)]);
    }
    IdentityPattern p;
    for (std::size_t b = 0; b < kBands; ++b) {
        for (int c = 0; c < 3; ++c) p.band_color[b][c] = palette[perm[b]][c];
    }
    return p;
}

void camera_gain(int camera, double gain[3]) {
    // Fixed tints so cross-camera matching is not a pixel comparison.
    const double base[2][3] = {{1.0, 0.92, 0.84}, {0.82, 1.0, 0.9}};
    const int slot = camera % 2;
    const double drift = 0.02 * static_cast<double>(camera / 2);
    for (int c = 0; c < 3; ++c) gain[c] = base[slot][c] - drift;
}

Clip render_clip(const DatasetConfig& cfg, int video_id, int identity, int camera, int clip_index) {
    const std::size_t h = cfg.height, w = cfg.width, t = cfg.frames_per_clip;
    const IdentityPattern pattern = identity_pattern(cfg.seed, identity);
    Rng rng = Rng(cfg.seed).fork(0xc11b000000ULL ^ (static_cast<std::uint64_t>(identity) << 20) ^
                                 (static_cast<std::uint64_t>(camera) << 10) ^
                                 static_cast<std::uint64_t>(clip_index));
    double gain[3];
    camera_gain(camera, gain);

    Clip clip;
    clip.video_id = video_id;
    clip.identity = identity;
    clip.camera = camera;
    clip.frames = Tensor({t, 3, h, w});
    clip.occluded.assign(t, false);

    // The body fills the full height so every horizontal stripe carries
    // identity-specific bands; jitter rolls the bands vertically and shifts
    // the body sideways.
    const long body_left = static_cast<long>(w / 4);
    const long body_right = static_cast<long>(w - w / 4);

    for (std::size_t f = 0; f < t; ++f) {
        const long dx = rng.uniform_int(-2, 2);
        const long dy = rng.uniform_int(-3, 3);
        const bool occlude = rng.uniform() < cfg.occlusion_rate;
        clip.occluded[f] = occlude;

        double* frame = clip.frames.data() + f * 3 * h * w;
        for (std::size_t c = 0; c < 3; ++c) {
            double* plane = frame + c * h * w;
            for (std::size_t i = 0; i < h * w; ++i) plane[i] = 0.2 + rng.uniform(-0.05, 0.05);
        }
        for (long y = 0; y < static_cast<long>(h); ++y) {
            const long rolled = ((y + dy) % static_cast<long>(h) + static_cast<long>(h)) % static_cast<long>(h);
            const std::size_t band =
                static_cast<std::size_t>(rolled * static_cast<long>(kBands) / static_cast<long>(h));
            for (long x = body_left + dx; x < body_right + dx; ++x) {
                if (x < 0 || x >= static_cast<long>(w)) continue;
                for (std::size_t c = 0; c < 3; ++c) {
                    frame[c * h * w + static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] =
                        pattern.band_color[band][c];
                }
            }
        }
        if (occlude) {
            // Bar height capped at half the frame so some of the body survives.
            const long bar_height = rng.uniform_int(static_cast<long>(h / 4), static_cast<long>(h / 2));
            const long bar_top = rng.uniform_int(0, static_cast<long>(h) - bar_height);
            double color[3];
            for (int c = 0; c < 3; ++c) color[c] = rng.uniform(0.1, 0.9);
            for (long y = bar_top; y < bar_top + bar_height; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    for (std::size_t c = 0; c < 3; ++c) {
                        frame[c * h * w + static_cast<std::size_t>(y) * w + x] =
                            color[c] + rng.uniform(-0.1, 0.1);
                    }
                }
            }
        }
        for (std::size_t c = 0; c < 3; ++c) {
            double* plane = frame + c * h * w;
            for (std::size_t i = 0; i < h * w; ++i) {
                plane[i] = std::clamp(plane[i] * gain[c], 0.0, 1.0);
            }
        }
    }
    return clip;
}

}  // namespace

std::vector<std::string> DatasetConfig::validate() const {
    std::vector<std::string> errors;
    if (identities < 2) errors.push_back("dataset: need at least two identities");
    if (train_identities > identities) {
        errors.push_back("dataset: train_identities exceeds the identity count");
    }
    if (clips_per_id < 1) errors.push_back("dataset: clips_per_id must be >= 1");
    if (frames_per_clip < 1) errors.push_back("dataset: frames_per_clip must be >= 1");
    if (cameras < 1) errors.push_back("dataset: cameras must be >= 1");
    if (height < 8 || width < 8) errors.push_back("dataset: frame size must be at least 8x8");
    if (occlusion_rate < 0.0 || occlusion_rate > 1.0) {
        errors.push_back("dataset: occlusion_rate must lie in [0, 1]");
    }
    return errors;
}

SyntheticDataset generate_dataset(const DatasetConfig& config) {
    const auto errors = config.validate();
    if (!errors.empty()) {
        std::string msg = "invalid dataset configuration:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw std::runtime_error(msg);
    }

    SyntheticDataset data;
    data.config = config;
    int video_id = 0;
    for (std::size_t id = 0; id < config.identities; ++id) {
        if (id < config.train_identities) {
            data.train_identity_ids.push_back(static_cast<int>(id));
        } else {
            data.test_identity_ids.push_back(static_cast<int>(id));
        }
        for (std::size_t cam = 0; cam < config.cameras; ++cam) {
            std::size_t count = config.clips_per_id / config.cameras;
            if (cam < config.clips_per_id % config.cameras) ++count;
            for (std::size_t c = 0; c < count; ++c) {
                data.clips.push_back(render_clip(config, video_id++, static_cast<int>(id),
                                                 static_cast<int>(cam), static_cast<int>(c)));
            }
        }
    }
    return data;
}

SyntheticDataset generate_dataset(std::size_t identities, std::size_t clips_per_id,
                                  std::size_t frames_per_clip, std::uint64_t seed) {
    DatasetConfig cfg;
    cfg.identities = identities;
    cfg.train_identities = identities;
    cfg.clips_per_id = clips_per_id;
    cfg.frames_per_clip = frames_per_clip;
    cfg.seed = seed;
    return generate_dataset(cfg);
}

std::vector<std::size_t> SyntheticDataset::train_clip_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (std::find(train_identity_ids.begin(), train_identity_ids.end(), clips[i].identity) !=
            train_identity_ids.end()) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<std::size_t> SyntheticDataset::test_clip_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (std::find(test_identity_ids.begin(), test_identity_ids.end(), clips[i].identity) !=
            test_identity_ids.end()) {
            out.push_back(i);
        }
    }
    return out;
}

void write_dataset(const std::string& dir, const SyntheticDataset& data, Dtype dtype) {
    fs::create_directories(fs::path(dir) / "clips");
    nlohmann::json manifest;
    manifest["frames_per_clip"] = data.config.frames_per_clip;
    manifest["height"] = data.config.height;
    manifest["width"] = data.config.width;
    manifest["identities"] = nlohmann::json::array();

    std::vector<int> ids;
    for (const auto& clip : data.clips) {
        if (std::find(ids.begin(), ids.end(), clip.identity) == ids.end()) ids.push_back(clip.identity);
    }
    std::sort(ids.begin(), ids.end());

    for (int id : ids) {
        nlohmann::json entry;
        entry["id"] = id;
        const bool is_train = std::find(data.train_identity_ids.begin(), data.train_identity_ids.end(),
                                        id) != data.train_identity_ids.end();
        entry["split"] = is_train ? "train" : "test";
        entry["clips"] = nlohmann::json::array();
        for (const auto& clip : data.clips) {
            if (clip.identity != id) continue;
            const std::string file = "clips/clip_" + std::to_string(clip.video_id) + ".cmmt";
            save_tensor((fs::path(dir) / file).string(), clip.frames, dtype);
            nlohmann::json centry;
            centry["camera"] = clip.camera;
            centry["video_id"] = clip.video_id;
            nlohmann::json frames = nlohmann::json::array();
            for (std::size_t f = 0; f < clip.frames.extent(0); ++f) {
                frames.push_back({{"file", file}, {"index", f}});
            }
            centry["frames"] = std::move(frames);
            entry["clips"].push_back(std::move(centry));
        }
        manifest["identities"].push_back(std::move(entry));
    }

    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest under " + dir);
    out << manifest.dump(2) << "\n";
}

SyntheticDataset load_dataset(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open dataset manifest " + manifest_path);
    nlohmann::json manifest = nlohmann::json::parse(in);
    const fs::path base = fs::path(manifest_path).parent_path();

    SyntheticDataset data;
    data.config.frames_per_clip = manifest.at("frames_per_clip").get<std::size_t>();
    data.config.height = manifest.at("height").get<std::size_t>();
    data.config.width = manifest.at("width").get<std::size_t>();

    std::size_t identities = 0, train = 0;
    for (const auto& entry : manifest.at("identities")) {
        const int id = entry.at("id").get<int>();
        ++identities;
        if (entry.at("split").get<std::string>() == "train") {
            data.train_identity_ids.push_back(id);
            ++train;
        } else {
            data.test_identity_ids.push_back(id);
        }
        for (const auto& centry : entry.at("clips")) {
            Clip clip;
            clip.identity = id;
            clip.camera = centry.at("camera").get<int>();
            clip.video_id = centry.at("video_id").get<int>();
            const std::string file = centry.at("frames").at(0).at("file").get<std::string>();
            clip.frames = load_tensor((base / file).string());
            data.clips.push_back(std::move(clip));
        }
    }
    data.config.identities = identities;
    data.config.train_identities = train;
    std::sort(data.clips.begin(), data.clips.end(),
              [](const Clip& a, const Clip& b) { return a.video_id < b.video_id; });
    return data;
}

}  // namespace cmma::dataset
