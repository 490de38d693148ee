#include "cmma/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace cmma::losses {

namespace {

constexpr double kLogEps = 1e-8;

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void check_nonnegative(const Tensor& t, const char* who) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] < 0.0) {
            throw std::domain_error(std::string(who) + ": negative entry " + std::to_string(t[i]) +
                                    " at flat index " + std::to_string(i));
        }
    }
}

// Gram matrix of the elementwise square roots of the rows.
Tensor sqrt_gram(const Tensor& s) {
    const std::size_t k = s.extent(0), m = s.extent(1);
    Tensor g({k, k});
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i; j < k; ++j) {
            double acc = 0.0;
            const double* ri = s.data() + i * m;
            const double* rj = s.data() + j * m;
            for (std::size_t x = 0; x < m; ++x) acc += ri[x] * rj[x];
            g.at(i, j) = acc;
            g.at(j, i) = acc;
        }
    }
    return g;
}

Tensor elementwise_sqrt(const Tensor& a) {
    Tensor s(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) s[i] = std::sqrt(a[i]);
    return s;
}

}  // namespace

double hellinger_distance(const Tensor& a, const Tensor& b) {
    require(a.size() == b.size(), "hellinger_distance: lengths differ, " + std::to_string(a.size()) +
                                      " vs " + std::to_string(b.size()));
    check_nonnegative(a, "hellinger_distance");
    check_nonnegative(b, "hellinger_distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::sqrt(a[i]) - std::sqrt(b[i]);
        acc += d * d;
    }
    return std::sqrt(acc / 2.0);
}

double diversity_loss(const Tensor& flat_attention) {
    require(flat_attention.rank() == 2, "diversity_loss: attention matrix must be K x M, got " +
                                            shape_str(flat_attention.shape()));
    check_nonnegative(flat_attention, "diversity_loss");
    const Tensor s = elementwise_sqrt(flat_attention);
    const Tensor g = sqrt_gram(s);
    const std::size_t k = g.extent(0);
    double loss = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const double v = g.at(i, j) - (i == j ? 1.0 : 0.0);
            loss += v * v;
        }
    }
    return loss;
}

Tensor diversity_loss_grad(const Tensor& flat_attention) {
    require(flat_attention.rank() == 2, "diversity_loss_grad: attention matrix must be K x M");
    check_nonnegative(flat_attention, "diversity_loss_grad");
    const std::size_t k = flat_attention.extent(0), m = flat_attention.extent(1);
    const Tensor s = elementwise_sqrt(flat_attention);
    const Tensor g = sqrt_gram(s);
    Tensor grad({k, m});
    for (std::size_t i = 0; i < k; ++i) {
        const double diag_term = 2.0 * (g.at(i, i) - 1.0);
        for (std::size_t x = 0; x < m; ++x) {
            double cross = 0.0;
            for (std::size_t q = 0; q < k; ++q) {
                if (q != i) cross += g.at(i, q) * s.at(q, x);
            }
            const double si = s.at(i, x);
            grad.at(i, x) = diag_term + (si > 0.0 ? 2.0 * cross / si : 0.0);
        }
    }
    return grad;
}

Tensor concentration_matrix(const Tensor& flat_attention) {
    require(flat_attention.rank() == 2, "concentration_matrix: attention matrix must be K x M, got " +
                                            shape_str(flat_attention.shape()));
    const std::size_t k = flat_attention.extent(0), m = flat_attention.extent(1);
    if (m % k != 0) {
        throw std::invalid_argument("concentration_matrix: grid size " + std::to_string(m) +
                                    " is not divisible by " + std::to_string(k) + " stripes");
    }
    const std::size_t stripe = m / k;
    Tensor out({k, k});
    for (std::size_t row = 0; row < k; ++row) {
        const double* r = flat_attention.data() + row * m;
        for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            for (std::size_t x = l * stripe; x < (l + 1) * stripe; ++x) acc += r[x];
            out.at(row, l) = acc;
        }
    }
    return out;
}

double concentration_loss(const Tensor& concentration) {
    require(concentration.rank() == 2 && concentration.extent(0) == concentration.extent(1),
            "concentration_loss: matrix must be K x K, got " + shape_str(concentration.shape()));
    const std::size_t k = concentration.extent(0);
    double loss = 0.0;
    for (std::size_t i = 0; i < k; ++i) loss -= std::log(std::max(concentration.at(i, i), kLogEps));
    return loss;
}

Tensor concentration_grad(const Tensor& flat_attention) {
    const Tensor ahat = concentration_matrix(flat_attention);
    const std::size_t k = flat_attention.extent(0), m = flat_attention.extent(1);
    const std::size_t stripe = m / k;
    Tensor grad({k, m});
    for (std::size_t row = 0; row < k; ++row) {
        const double diag = ahat.at(row, row);
        if (diag <= kLogEps) continue;  // clamped region
        const double g = -1.0 / diag;
        double* r = grad.data() + row * m;
        for (std::size_t x = row * stripe; x < (row + 1) * stripe; ++x) r[x] = g;
    }
    return grad;
}

double id_loss(const Tensor& logits, std::size_t label) {
    require(logits.size() >= 2, "id_loss: need at least two classes");
    if (label >= logits.size()) {
        throw std::invalid_argument("id_loss: label " + std::to_string(label) + " out of range for " +
                                    std::to_string(logits.size()) + " classes");
    }
    double mx = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - mx);
    return mx + std::log(sum) - logits[label];
}

Tensor id_loss_grad(const Tensor& logits, std::size_t label) {
    require(logits.size() >= 2, "id_loss_grad: need at least two classes");
    if (label >= logits.size()) {
        throw std::invalid_argument("id_loss_grad: label " + std::to_string(label) + " out of range");
    }
    double mx = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    Tensor g(logits.shape());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        g[i] = std::exp(logits[i] - mx);
        sum += g[i];
    }
    for (std::size_t i = 0; i < logits.size(); ++i) g[i] /= sum;
    g[label] -= 1.0;
    return g;
}

namespace {

void check_triplet_batch(const Tensor& embeddings, const std::vector<int>& labels) {
    if (embeddings.rank() != 2 || embeddings.extent(0) != labels.size()) {
        throw std::invalid_argument("triplet_loss: embeddings must be B x D with one label per row");
    }
    std::vector<int> distinct;
    for (int l : labels) {
        if (std::find(distinct.begin(), distinct.end(), l) == distinct.end()) distinct.push_back(l);
    }
    bool singleton = false;
    for (int l : distinct) {
        if (std::count(labels.begin(), labels.end(), l) < 2) singleton = true;
    }
    if (distinct.size() < 2 || singleton) {
        throw std::runtime_error(
            "triplet_loss: degenerate batch; compose batches as P >= 2 identities with Q >= 2 clips "
            "each so every anchor has a positive and a negative");
    }
}

Tensor distance_matrix(const Tensor& e) {
    const std::size_t b = e.extent(0), d = e.extent(1);
    Tensor dist({b, b});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = i + 1; j < b; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = e.at(i, c) - e.at(j, c);
                acc += diff * diff;
            }
            const double v = std::sqrt(acc);
            dist.at(i, j) = v;
            dist.at(j, i) = v;
        }
    }
    return dist;
}

struct HardPair {
    std::size_t positive;
    std::size_t negative;
    double hinge;
};

// Hardest positive/negative per anchor, lowest index on ties.
std::vector<HardPair> hard_pairs(const Tensor& dist, const std::vector<int>& labels, double margin) {
    const std::size_t b = labels.size();
    std::vector<HardPair> out(b);
    for (std::size_t a = 0; a < b; ++a) {
        double hp = -1.0, hn = 0.0;
        std::size_t pi = a, nix = a;
        bool have_n = false;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == a) continue;
            if (labels[j] == labels[a]) {
                if (dist.at(a, j) > hp) {
                    hp = dist.at(a, j);
                    pi = j;
                }
            } else if (!have_n || dist.at(a, j) < hn) {
                hn = dist.at(a, j);
                nix = j;
                have_n = true;
            }
        }
        out[a] = {pi, nix, std::max(0.0, hp - hn + margin)};
    }
    return out;
}

}  // namespace

double triplet_loss(const Tensor& embeddings, const std::vector<int>& labels, double margin) {
    check_triplet_batch(embeddings, labels);
    const Tensor dist = distance_matrix(embeddings);
    const auto pairs = hard_pairs(dist, labels, margin);
    double loss = 0.0;
    for (const auto& p : pairs) loss += p.hinge;
    return loss / static_cast<double>(pairs.size());
}

Tensor triplet_loss_grad(const Tensor& embeddings, const std::vector<int>& labels, double margin) {
    check_triplet_batch(embeddings, labels);
    const std::size_t b = embeddings.extent(0), d = embeddings.extent(1);
    const Tensor dist = distance_matrix(embeddings);
    const auto pairs = hard_pairs(dist, labels, margin);
    Tensor grad({b, d});
    const double scale = 1.0 / static_cast<double>(b);
    for (std::size_t a = 0; a < b; ++a) {
        if (pairs[a].hinge <= 0.0) continue;
        const std::size_t p = pairs[a].positive;
        const std::size_t n = pairs[a].negative;
        const double dp = dist.at(a, p);
        if (dp > 0.0) {
            for (std::size_t c = 0; c < d; ++c) {
                const double u = (embeddings.at(a, c) - embeddings.at(p, c)) / dp * scale;
                grad.at(a, c) += u;
                grad.at(p, c) -= u;
            }
        }
        const double dn = dist.at(a, n);
        if (dn > 0.0) {
            for (std::size_t c = 0; c < d; ++c) {
                const double v = (embeddings.at(a, c) - embeddings.at(n, c)) / dn * scale;
                grad.at(a, c) -= v;
                grad.at(n, c) += v;
            }
        }
    }
    return grad;
}

Tensor flat_attention(const attention::AttentionStack& stack, std::size_t frame) {
    const Tensor& v = stack.values;
    require(v.rank() == 4, "flat_attention: stack must be N x K x H x W");
    require(frame < v.extent(0), "flat_attention: frame index out of range");
    const std::size_t k = v.extent(1), hw = v.extent(2) * v.extent(3);
    Tensor out({k, hw});
    std::memcpy(out.data(), v.data() + frame * k * hw, k * hw * sizeof(double));
    return out;
}

namespace {

struct AttentionTermAccum {
    double diversity = 0.0;
    double concentration = 0.0;
    double diag = 0.0;
    std::size_t maps = 0;    // (module, clip, frame) triples
    std::size_t diags = 0;   // diagonal entries seen
};

Tensor flat_rows(const Tensor& stack, std::size_t frame) {
    const std::size_t k = stack.extent(1), hw = stack.extent(2) * stack.extent(3);
    Tensor out({k, hw});
    std::memcpy(out.data(), stack.data() + frame * k * hw, k * hw * sizeof(double));
    return out;
}

}  // namespace

TotalLossTerms total_loss(const BatchOutputs& batch,
                          const std::vector<std::vector<const Tensor*>>& stacks,
                          const LossWeights& weights) {
    return total_loss_with_grads(batch, stacks, weights).first;
}

std::pair<TotalLossTerms, TotalLossGrads> total_loss_with_grads(
    const BatchOutputs& batch, const std::vector<std::vector<const Tensor*>>& stacks,
    const LossWeights& weights) {
    const std::size_t b = batch.embeddings.extent(0);
    require(batch.labels.size() == b && batch.logits.extent(0) == b,
            "total_loss: embeddings, logits and labels must agree on the batch size");

    TotalLossTerms terms;
    TotalLossGrads grads;
    grads.logits = Tensor(batch.logits.shape());
    grads.embeddings = Tensor(batch.embeddings.shape());

    if (weights.id != 0.0) {
        const double scale = weights.id / static_cast<double>(b);
        for (std::size_t c = 0; c < b; ++c) {
            Tensor row({batch.logits.extent(1)});
            std::memcpy(row.data(), batch.logits.data() + c * row.size(), row.size() * sizeof(double));
            const auto label = static_cast<std::size_t>(batch.labels[c]);
            terms.id += scale * id_loss(row, label);
            const Tensor g = id_loss_grad(row, label);
            for (std::size_t i = 0; i < g.size(); ++i) grads.logits[c * g.size() + i] = scale * g[i];
        }
    }

    if (weights.triplet != 0.0) {
        terms.triplet = weights.triplet * triplet_loss(batch.embeddings, batch.labels, weights.margin);
        const Tensor g = triplet_loss_grad(batch.embeddings, batch.labels, weights.margin);
        for (std::size_t i = 0; i < g.size(); ++i) grads.embeddings[i] = weights.triplet * g[i];
    }

    AttentionTermAccum acc;
    grads.attention.resize(stacks.size());
    std::size_t total_maps = 0;
    for (const auto& clips : stacks) {
        for (const Tensor* s : clips) total_maps += s->extent(0);
    }
    const double att_scale = total_maps > 0 ? 1.0 / static_cast<double>(total_maps) : 0.0;

    for (std::size_t m = 0; m < stacks.size(); ++m) {
        grads.attention[m].reserve(stacks[m].size());
        for (const Tensor* stack : stacks[m]) {
            Tensor ga(stack->shape());
            const std::size_t frames = stack->extent(0);
            const std::size_t k = stack->extent(1), hw = stack->extent(2) * stack->extent(3);
            for (std::size_t f = 0; f < frames; ++f) {
                const Tensor flat = flat_rows(*stack, f);
                const Tensor ahat = concentration_matrix(flat);
                for (std::size_t i = 0; i < k; ++i) acc.diag += ahat.at(i, i);
                acc.diags += k;
                acc.maps += 1;
                if (weights.diversity != 0.0) {
                    acc.diversity += diversity_loss(flat);
                    const Tensor g = diversity_loss_grad(flat);
                    const double s = weights.diversity * att_scale;
                    for (std::size_t i = 0; i < k * hw; ++i) ga[f * k * hw + i] += s * g[i];
                }
                if (weights.concentration != 0.0) {
                    acc.concentration += concentration_loss(ahat);
                    const Tensor g = concentration_grad(flat);
                    const double s = weights.concentration * att_scale;
                    for (std::size_t i = 0; i < k * hw; ++i) ga[f * k * hw + i] += s * g[i];
                }
            }
            grads.attention[m].push_back(std::move(ga));
        }
    }

    if (acc.maps > 0) {
        terms.diversity = weights.diversity * acc.diversity / static_cast<double>(acc.maps);
        terms.concentration = weights.concentration * acc.concentration / static_cast<double>(acc.maps);
        terms.mean_diag = acc.diag / static_cast<double>(acc.diags);
    }
    terms.total = terms.id + terms.triplet + terms.diversity + terms.concentration;
    return {terms, std::move(grads)};
}

}  // namespace cmma::losses
