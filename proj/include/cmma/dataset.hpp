#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cmma/tensor.hpp"

namespace cmma::dataset {

/// Synthetic stand-in for a multi-camera tracklet corpus: every identity has
/// a fixed striped body pattern rendered at a jittered position, each camera
/// applies its own tint, and a random subset of frames is overwritten by an
/// occluder bar.
struct DatasetConfig {
    std::size_t identities = 30;
    std::size_t train_identities = 20;
    std::size_t clips_per_id = 4;  // split across cameras
    std::size_t frames_per_clip = 24;  // T
    std::size_t cameras = 2;
    std::size_t height = 64;
    std::size_t width = 32;
    double occlusion_rate = 0.5;
    std::uint64_t seed = 7;

    std::vector<std::string> validate() const;
};

struct Clip {
    int video_id = 0;
    int identity = 0;
    int camera = 0;
    Tensor frames;               // T x 3 x H x W, values in [0, 1]
    std::vector<bool> occluded;  // per frame
};

struct SyntheticDataset {
    DatasetConfig config;
    std::vector<Clip> clips;
    std::vector<int> train_identity_ids;
    std::vector<int> test_identity_ids;

    std::vector<std::size_t> train_clip_indices() const;
    std::vector<std::size_t> test_clip_indices() const;
};

SyntheticDataset generate_dataset(const DatasetConfig& config);

/// Convenience form: C identities, all marked train, two cameras.
SyntheticDataset generate_dataset(std::size_t identities, std::size_t clips_per_id,
                                  std::size_t frames_per_clip, std::uint64_t seed);

/// Writes one tensor container per clip plus manifest.json into `dir`.
void write_dataset(const std::string& dir, const SyntheticDataset& data, Dtype dtype = Dtype::f32);

/// A dataset reloaded from a manifest; frame tensors come from the referenced
/// clip containers.
SyntheticDataset load_dataset(const std::string& manifest_path);

}  // namespace cmma::dataset
