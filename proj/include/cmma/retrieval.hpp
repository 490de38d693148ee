#pragma once

#include <cstddef>
#include <vector>

#include "cmma/tensor.hpp"

namespace cmma::retrieval {

struct EvalItem {
    int video_id = 0;
    int identity = 0;
    int camera = 0;
};

/// Query/gallery description. A query is never matched against itself (by
/// video id); when `cross_camera` is set, gallery entries sharing both the
/// query's identity and camera are dropped as well.
struct EvalProtocol {
    std::vector<EvalItem> query;
    std::vector<EvalItem> gallery;
    bool cross_camera = true;
};

/// Euclidean distances between the rows of Q (q x D) and G (g x D).
Tensor pairwise_distances(const Tensor& queries, const Tensor& gallery);

struct CmcResult {
    std::vector<double> rank;       // rank[k-1] = rank-k accuracy
    std::size_t excluded_queries = 0;  // queries with no valid match
};

/// Rank-k accuracies for k = 1..max_rank. Distance ties break by ascending
/// gallery index.
CmcResult cmc_curve(const Tensor& dist, const EvalProtocol& protocol, std::size_t max_rank);

struct MapResult {
    double map = 0.0;
    std::size_t excluded_queries = 0;
};

MapResult mean_average_precision(const Tensor& dist, const EvalProtocol& protocol);

}  // namespace cmma::retrieval
