#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>

#include "cmma/reference.hpp"
#include "cmma/retrieval.hpp"
#include "test_util.hpp"

using cmma::Rng;
using cmma::Tensor;
namespace retrieval = cmma::retrieval;
using retrieval::EvalItem;
using retrieval::EvalProtocol;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// Exhaustive sort-and-scan implementations, independent of the library path.
struct OracleResult {
    std::vector<double> cmc;
    double map = 0.0;
    std::size_t excluded = 0;
};

OracleResult metrics_oracle(const Tensor& dist, const EvalProtocol& protocol, std::size_t max_rank) {
    OracleResult out;
    out.cmc.assign(max_rank, 0.0);
    std::size_t counted = 0;
    double ap_sum = 0.0;
    for (std::size_t q = 0; q < protocol.query.size(); ++q) {
        std::vector<std::pair<double, std::size_t>> order;
        for (std::size_t j = 0; j < protocol.gallery.size(); ++j) {
            if (protocol.gallery[j].video_id == protocol.query[q].video_id) continue;
            if (protocol.cross_camera && protocol.gallery[j].identity == protocol.query[q].identity &&
                protocol.gallery[j].camera == protocol.query[q].camera) {
                continue;
            }
            order.emplace_back(dist.at(q, j), j);
        }
        std::sort(order.begin(), order.end());
        std::size_t relevant = 0;
        double ap = 0.0;
        std::size_t first = max_rank;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            if (protocol.gallery[order[pos].second].identity == protocol.query[q].identity) {
                if (relevant == 0) first = pos;
                ++relevant;
                ap += static_cast<double>(relevant) / static_cast<double>(pos + 1);
            }
        }
        if (relevant == 0) {
            ++out.excluded;
            continue;
        }
        ++counted;
        ap_sum += ap / static_cast<double>(relevant);
        for (std::size_t k = first; k < max_rank; ++k) out.cmc[k] += 1.0;
    }
    if (counted > 0) {
        for (double& v : out.cmc) v /= static_cast<double>(counted);
        out.map = ap_sum / static_cast<double>(counted);
    }
    return out;
}

EvalProtocol random_protocol(std::size_t nq, std::size_t ng, Rng& rng) {
    EvalProtocol protocol;
    protocol.cross_camera = rng.bounded(2) == 0;
    for (std::size_t i = 0; i < nq; ++i) {
        protocol.query.push_back({static_cast<int>(1000 + i), static_cast<int>(rng.bounded(25)),
                                  static_cast<int>(rng.bounded(2))});
    }
    for (std::size_t j = 0; j < ng; ++j) {
        protocol.gallery.push_back({static_cast<int>(j), static_cast<int>(rng.bounded(25)),
                                    static_cast<int>(rng.bounded(2))});
    }
    return protocol;
}

}  // namespace

TEST_CASE("pairwise distances: hand cases and loop oracle") {
    const Tensor a({1, 2}, {0.0, 0.0});
    CHECK(retrieval::pairwise_distances(a, a).item() == 0.0);

    const Tensor b({1, 2}, {3.0, 4.0});
    CHECK(retrieval::pairwise_distances(a, b).item() == doctest::Approx(5.0).epsilon(1e-12));

    Rng rng(1);
    const Tensor q = random_tensor({5, 3}, rng);
    const Tensor g = random_tensor({7, 3}, rng);
    CHECK(max_abs_diff(retrieval::pairwise_distances(q, g), cmma::ref::pairwise_distances(q, g)) < 1e-10);

    const Tensor self = retrieval::pairwise_distances(q, q);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(self.at(i, i) == 0.0);
        for (std::size_t j = 0; j < 5; ++j) CHECK(self.at(i, j) == self.at(j, i));
    }
    CHECK_THROWS_AS(retrieval::pairwise_distances(q, random_tensor({4, 2}, rng)),
                    std::invalid_argument);
}

TEST_CASE("perfect and adversarial rankings") {
    EvalProtocol protocol;
    protocol.cross_camera = false;
    for (int i = 0; i < 4; ++i) protocol.query.push_back({100 + i, i, 0});
    for (int j = 0; j < 8; ++j) protocol.gallery.push_back({j, j % 4, 1});

    Tensor perfect({4, 8});
    for (std::size_t q = 0; q < 4; ++q) {
        for (std::size_t j = 0; j < 8; ++j) {
            perfect.at(q, j) = (protocol.gallery[j].identity == protocol.query[q].identity) ? 0.0 : 1.0;
        }
    }
    const auto good = retrieval::cmc_curve(perfect, protocol, 5);
    CHECK(good.rank[0] == doctest::Approx(1.0));
    CHECK(retrieval::mean_average_precision(perfect, protocol).map == doctest::Approx(1.0));

    Tensor adversarial({4, 8});
    for (std::size_t q = 0; q < 4; ++q) {
        for (std::size_t j = 0; j < 8; ++j) {
            adversarial.at(q, j) = (protocol.gallery[j].identity == protocol.query[q].identity) ? 1.0 : 0.0;
        }
    }
    // 6 wrong entries rank ahead of the first of 2 matches
    const auto bad = retrieval::cmc_curve(adversarial, protocol, 8);
    for (std::size_t k = 0; k < 6; ++k) CHECK(bad.rank[k] == 0.0);
    CHECK(bad.rank[6] == doctest::Approx(1.0));
}

TEST_CASE("hand-evaluated average precision") {
    // one query; relevant gallery items end up at ranks 1 and 3
    EvalProtocol protocol;
    protocol.cross_camera = false;
    protocol.query.push_back({100, 7, 0});
    protocol.gallery.push_back({0, 7, 1});
    protocol.gallery.push_back({1, 3, 1});
    protocol.gallery.push_back({2, 7, 1});
    protocol.gallery.push_back({3, 4, 1});
    Tensor dist({1, 4}, {0.1, 0.2, 0.3, 0.4});
    const auto result = retrieval::mean_average_precision(dist, protocol);
    CHECK(result.map == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(result.map == doctest::Approx(0.83333).epsilon(1e-4));
}

TEST_CASE("random instances match the exhaustive oracle exactly") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        const auto protocol = random_protocol(20, 60, rng);
        const Tensor dist = random_tensor({20, 60}, rng, 0.0, 10.0);
        const auto oracle = metrics_oracle(dist, protocol, 10);
        const auto cmc = retrieval::cmc_curve(dist, protocol, 10);
        const auto map = retrieval::mean_average_precision(dist, protocol);
        CHECK(cmc.excluded_queries == oracle.excluded);
        for (std::size_t k = 0; k < 10; ++k) CHECK(cmc.rank[k] == oracle.cmc[k]);
        CHECK(map.map == doctest::Approx(oracle.map).epsilon(1e-12));
    }
}

TEST_CASE("cmc is monotone, bounded, and saturates when matches exist") {
    Rng rng(3);
    const auto protocol = random_protocol(15, 40, rng);
    const Tensor dist = random_tensor({15, 40}, rng, 0.0, 5.0);
    const auto cmc = retrieval::cmc_curve(dist, protocol, 40);
    for (std::size_t k = 0; k < 40; ++k) {
        CHECK(cmc.rank[k] >= 0.0);
        CHECK(cmc.rank[k] <= 1.0);
        if (k > 0) CHECK(cmc.rank[k] >= cmc.rank[k - 1]);
    }
    CHECK(cmc.rank[39] == doctest::Approx(1.0));  // included queries all match by rank g
}

TEST_CASE("mAP is invariant under strictly monotone distance transforms") {
    Rng rng(4);
    const auto protocol = random_protocol(12, 30, rng);
    const Tensor dist = random_tensor({12, 30}, rng, 0.0, 3.0);
    const double base = retrieval::mean_average_precision(dist, protocol).map;

    Tensor shifted(dist.shape()), cubed(dist.shape()), exped(dist.shape());
    for (std::size_t i = 0; i < dist.size(); ++i) {
        shifted[i] = 2.0 * dist[i] + 5.0;
        cubed[i] = dist[i] * dist[i] * dist[i];
        exped[i] = std::exp(dist[i]);
    }
    CHECK(retrieval::mean_average_precision(shifted, protocol).map == doctest::Approx(base).epsilon(1e-12));
    CHECK(retrieval::mean_average_precision(cubed, protocol).map == doctest::Approx(base).epsilon(1e-12));
    CHECK(retrieval::mean_average_precision(exped, protocol).map == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("self matches and same-camera entries are excluded") {
    EvalProtocol protocol;
    protocol.cross_camera = true;
    protocol.query.push_back({0, 5, 0});
    // the query itself sits in the gallery at distance 0
    protocol.gallery.push_back({0, 5, 0});
    // a same-camera same-identity twin
    protocol.gallery.push_back({1, 5, 0});
    // the true cross-camera match
    protocol.gallery.push_back({2, 5, 1});
    protocol.gallery.push_back({3, 9, 1});
    Tensor dist({1, 4}, {0.0, 0.05, 0.5, 0.4});
    const auto cmc = retrieval::cmc_curve(dist, protocol, 2);
    // with exclusions the wrong identity ranks first, the match second
    CHECK(cmc.rank[0] == 0.0);
    CHECK(cmc.rank[1] == doctest::Approx(1.0));

    EvalProtocol same_cam = protocol;
    same_cam.cross_camera = false;
    const auto cmc2 = retrieval::cmc_curve(dist, same_cam, 2);
    // self is still excluded, but the same-camera twin now counts
    CHECK(cmc2.rank[0] == doctest::Approx(1.0));
}

TEST_CASE("queries with no valid match are excluded and counted") {
    EvalProtocol protocol;
    protocol.cross_camera = true;
    protocol.query.push_back({100, 1, 0});
    protocol.query.push_back({101, 2, 0});
    protocol.gallery.push_back({0, 1, 1});
    protocol.gallery.push_back({1, 3, 1});
    Tensor dist({2, 2}, {0.1, 0.2, 0.1, 0.2});
    const auto cmc = retrieval::cmc_curve(dist, protocol, 2);
    CHECK(cmc.excluded_queries == 1);
    CHECK(cmc.rank[0] == doctest::Approx(1.0));
    const auto map = retrieval::mean_average_precision(dist, protocol);
    CHECK(map.excluded_queries == 1);
}

TEST_CASE("distance ties break by ascending gallery index") {
    EvalProtocol protocol;
    protocol.cross_camera = false;
    protocol.query.push_back({100, 1, 0});
    protocol.gallery.push_back({0, 2, 1});
    protocol.gallery.push_back({1, 1, 1});
    // both at the same distance: index 0 (wrong) precedes index 1 (right)
    Tensor dist({1, 2}, {0.5, 0.5});
    const auto cmc = retrieval::cmc_curve(dist, protocol, 2);
    CHECK(cmc.rank[0] == 0.0);
    CHECK(cmc.rank[1] == doctest::Approx(1.0));
}
