#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "cmma/attention.hpp"
#include "cmma/tensor.hpp"

namespace cmma::losses {

/// (1/sqrt(2)) * ||sqrt(a) - sqrt(b)||_2 for two discrete distributions.
double hellinger_distance(const Tensor& a, const Tensor& b);

/// ||sqrt(A) sqrt(A)^T - I||_F^2 for a K x M matrix of flattened attention
/// rows; square roots are elementwise.
double diversity_loss(const Tensor& flat_attention);
Tensor diversity_loss_grad(const Tensor& flat_attention);

/// Stripe-mass matrix: entry (k, l) is the mass of row k inside the l-th of
/// K equal contiguous segments. Requires M divisible by K.
Tensor concentration_matrix(const Tensor& flat_attention);

/// sum_k -log(max(diag_k, eps)) with eps = 1e-8.
double concentration_loss(const Tensor& concentration);

/// Gradient of concentration_loss(concentration_matrix(A)) with respect to A.
Tensor concentration_grad(const Tensor& flat_attention);

/// Softmax cross entropy of logits against a class index.
double id_loss(const Tensor& logits, std::size_t label);
Tensor id_loss_grad(const Tensor& logits, std::size_t label);

/// Batch-hard triplet loss: mean over anchors of
/// max(0, hardest-positive - hardest-negative + margin), Euclidean distances.
double triplet_loss(const Tensor& embeddings, const std::vector<int>& labels, double margin);
Tensor triplet_loss_grad(const Tensor& embeddings, const std::vector<int>& labels, double margin);

/// Row n of an attention stack flattened to K x (H*W).
Tensor flat_attention(const attention::AttentionStack& stack, std::size_t frame);

struct LossWeights {
    double id = 1.0;
    double triplet = 1.0;
    double diversity = 1.0;
    double concentration = 1.0;
    double margin = 0.3;
};

struct BatchOutputs {
    Tensor embeddings;        // B x D
    Tensor logits;            // B x C
    std::vector<int> labels;  // class indices
};

/// Weighted loss terms as logged; attention terms are means over frames,
/// clips and the active attention modules.
struct TotalLossTerms {
    double total = 0.0;
    double id = 0.0;
    double triplet = 0.0;
    double diversity = 0.0;
    double concentration = 0.0;
    double mean_diag = 0.0;  // mean diagonal mass of the stripe matrices
};

struct TotalLossGrads {
    Tensor embeddings;  // B x D
    Tensor logits;      // B x C
    // attention[m][c] aligns with stacks[m][c]
    std::vector<std::vector<Tensor>> attention;
};

/// stacks[m][c] points at the attention stack of clip c under module m.
TotalLossTerms total_loss(const BatchOutputs& batch,
                          const std::vector<std::vector<const Tensor*>>& stacks,
                          const LossWeights& weights);

std::pair<TotalLossTerms, TotalLossGrads> total_loss_with_grads(
    const BatchOutputs& batch, const std::vector<std::vector<const Tensor*>>& stacks,
    const LossWeights& weights);

}  // namespace cmma::losses
