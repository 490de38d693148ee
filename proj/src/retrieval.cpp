#include "cmma/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cmma::retrieval {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

// Gallery order for one query: valid entries sorted by (distance, index).
std::vector<std::size_t> ranked_gallery(const Tensor& dist, const EvalProtocol& protocol,
                                        std::size_t q) {
    const auto& query = protocol.query[q];
    std::vector<std::size_t> order;
    order.reserve(protocol.gallery.size());
    for (std::size_t j = 0; j < protocol.gallery.size(); ++j) {
        const auto& item = protocol.gallery[j];
        if (item.video_id == query.video_id) continue;
        if (protocol.cross_camera && item.identity == query.identity && item.camera == query.camera) {
            continue;
        }
        order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dist.at(q, a) < dist.at(q, b);
    });
    return order;
}

void check_protocol(const Tensor& dist, const EvalProtocol& protocol) {
    require(dist.rank() == 2, "retrieval: distance matrix must be q x g");
    require(dist.extent(0) == protocol.query.size() && dist.extent(1) == protocol.gallery.size(),
            "retrieval: distance matrix " + shape_str(dist.shape()) + " does not match protocol sizes " +
                std::to_string(protocol.query.size()) + " x " + std::to_string(protocol.gallery.size()));
}

}  // namespace

Tensor pairwise_distances(const Tensor& queries, const Tensor& gallery) {
    require(queries.rank() == 2 && gallery.rank() == 2, "pairwise_distances: inputs must be rank-2");
    require(queries.extent(1) == gallery.extent(1),
            "pairwise_distances: feature axis " + std::to_string(queries.extent(1)) + " != " +
                std::to_string(gallery.extent(1)));
    const std::size_t nq = queries.extent(0), ng = gallery.extent(0), d = queries.extent(1);
    Tensor out({nq, ng});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(nq); ++i) {
        const double* qrow = queries.data() + i * d;
        double* orow = out.data() + i * ng;
        for (std::size_t j = 0; j < ng; ++j) {
            const double* grow = gallery.data() + j * d;
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = qrow[c] - grow[c];
                acc += diff * diff;
            }
            orow[j] = std::sqrt(acc);
        }
    }
    return out;
}

CmcResult cmc_curve(const Tensor& dist, const EvalProtocol& protocol, std::size_t max_rank) {
    check_protocol(dist, protocol);
    require(max_rank >= 1, "cmc_curve: max_rank must be >= 1");
    CmcResult result;
    result.rank.assign(max_rank, 0.0);
    std::size_t counted = 0;
    for (std::size_t q = 0; q < protocol.query.size(); ++q) {
        const auto order = ranked_gallery(dist, protocol, q);
        std::size_t first_match = max_rank;  // sentinel: beyond the curve
        bool has_match = false;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            if (protocol.gallery[order[pos]].identity == protocol.query[q].identity) {
                has_match = true;
                first_match = pos;
                break;
            }
        }
        if (!has_match) {
            ++result.excluded_queries;
            continue;
        }
        ++counted;
        for (std::size_t k = first_match; k < max_rank; ++k) result.rank[k] += 1.0;
    }
    if (counted > 0) {
        for (double& v : result.rank) v /= static_cast<double>(counted);
    }
    return result;
}

MapResult mean_average_precision(const Tensor& dist, const EvalProtocol& protocol) {
    check_protocol(dist, protocol);
    MapResult result;
    std::size_t counted = 0;
    double sum = 0.0;
    for (std::size_t q = 0; q < protocol.query.size(); ++q) {
        const auto order = ranked_gallery(dist, protocol, q);
        std::size_t relevant = 0;
        double ap = 0.0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            if (protocol.gallery[order[pos]].identity == protocol.query[q].identity) {
                ++relevant;
                ap += static_cast<double>(relevant) / static_cast<double>(pos + 1);
            }
        }
        if (relevant == 0) {
            ++result.excluded_queries;
            continue;
        }
        ++counted;
        sum += ap / static_cast<double>(relevant);
    }
    if (counted > 0) result.map = sum / static_cast<double>(counted);
    return result;
}

}  // namespace cmma::retrieval
