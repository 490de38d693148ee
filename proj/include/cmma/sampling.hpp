#pragma once

#include <cstddef>
#include <vector>

#include "cmma/rng.hpp"

namespace cmma::sampling {

// Frame indices are 1-based internally; subtract 1 when indexing stored
// frame arrays. The CLI prints 0-based values.

struct SamplePlan {
    int total_frames = 0;   // T
    int frames = 0;         // N
    int interval = 0;       // g
    int start = 0;          // s
    std::vector<int> indices;
    bool padded = false;
};

/// Largest interval g such that the start-point range [1, T - g*N] is
/// non-empty; 0 when no interval fits.
int max_interval(int total_frames, int frames);

/// Draw g uniformly from [1, max_interval], then s uniformly from
/// [1, T - g*N]; indices are s + g*(j+1), j = 0..N-1. Falls back to a padded
/// cyclic plan when T < N + 1.
SamplePlan ris_sample(int total_frames, int frames, Rng& rng);

/// As ris_sample but with the interval fixed by the caller (used when g is
/// redrawn once per epoch rather than per draw).
SamplePlan ris_sample_with_interval(int total_frames, int frames, int interval, Rng& rng);

/// Split the video into N contiguous chunks (remainder spread over the first
/// chunks) and draw one index per chunk. Falls back to a padded plan when
/// T < N.
SamplePlan restricted_sample(int total_frames, int frames, Rng& rng);

/// Deterministic evenly spaced indices round(1 + j*(T-1)/(N-1)); duplicates
/// appear when T < N.
std::vector<int> eval_sample(int total_frames, int frames);

/// Cycle frames from the start until N indices are filled.
SamplePlan pad_sample(int total_frames, int frames);

}  // namespace cmma::sampling
