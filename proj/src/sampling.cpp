#include "cmma/sampling.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cmma::sampling {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

int max_interval(int total_frames, int frames) {
    if (total_frames < frames + 1) return 0;
    return (total_frames - 1) / frames;
}

SamplePlan pad_sample(int total_frames, int frames) {
    require(total_frames >= 1 && frames >= 1, "pad_sample: T and N must be positive");
    SamplePlan plan;
    plan.total_frames = total_frames;
    plan.frames = frames;
    plan.interval = 0;
    plan.start = 0;
    plan.padded = true;
    plan.indices.reserve(static_cast<std::size_t>(frames));
    for (int j = 0; j < frames; ++j) plan.indices.push_back(1 + j % total_frames);
    return plan;
}

SamplePlan ris_sample_with_interval(int total_frames, int frames, int interval, Rng& rng) {
    require(frames >= 1, "ris_sample: N must be positive");
    if (total_frames < frames + 1) return pad_sample(total_frames, frames);
    require(interval >= 1 && interval <= max_interval(total_frames, frames),
            "ris_sample: interval " + std::to_string(interval) + " infeasible for T=" +
                std::to_string(total_frames) + ", N=" + std::to_string(frames));
    SamplePlan plan;
    plan.total_frames = total_frames;
    plan.frames = frames;
    plan.interval = interval;
    plan.start = static_cast<int>(rng.uniform_int(1, total_frames - interval * frames));
    plan.indices.reserve(static_cast<std::size_t>(frames));
    for (int j = 0; j < frames; ++j) plan.indices.push_back(plan.start + interval * (j + 1));
    return plan;
}

SamplePlan ris_sample(int total_frames, int frames, Rng& rng) {
    require(frames >= 1, "ris_sample: N must be positive");
    if (total_frames < frames + 1) return pad_sample(total_frames, frames);
    const int g = static_cast<int>(rng.uniform_int(1, max_interval(total_frames, frames)));
    return ris_sample_with_interval(total_frames, frames, g, rng);
}

SamplePlan restricted_sample(int total_frames, int frames, Rng& rng) {
    require(frames >= 1, "restricted_sample: N must be positive");
    if (total_frames < frames) return pad_sample(total_frames, frames);
    SamplePlan plan;
    plan.total_frames = total_frames;
    plan.frames = frames;
    plan.interval = 0;
    plan.start = 0;
    plan.indices.reserve(static_cast<std::size_t>(frames));
    const int base = total_frames / frames;
    const int extra = total_frames % frames;
    int begin = 1;
    for (int chunk = 0; chunk < frames; ++chunk) {
        const int len = base + (chunk < extra ? 1 : 0);
        plan.indices.push_back(static_cast<int>(rng.uniform_int(begin, begin + len - 1)));
        begin += len;
    }
    return plan;
}

std::vector<int> eval_sample(int total_frames, int frames) {
    require(total_frames >= 1 && frames >= 1, "eval_sample: T and N must be positive");
    std::vector<int> indices;
    indices.reserve(static_cast<std::size_t>(frames));
    if (frames == 1) {
        indices.push_back(1);
        return indices;
    }
    for (int j = 0; j < frames; ++j) {
        const double pos = 1.0 + static_cast<double>(j) * (total_frames - 1) / (frames - 1);
        indices.push_back(static_cast<int>(std::lround(pos)));
    }
    return indices;
}

}  // namespace cmma::sampling
