#pragma once

#include "qvr/tensor.hpp"

namespace qvr {

// Cosine similarity of two 1-D vectors (differentiable). Either vector having
// zero norm is an input error: the caller fed a degenerate embedding.
Tensor cosine(const Tensor& a, const Tensor& b);

// Alias used at the embedding-path call sites.
Tensor embed_similarity(const Tensor& query_embedding, const Tensor& video_embedding);

// Sum over columns j of cos(q_j, qhat_j) for two [d x L] tensors.
// A zero-norm q_j is an input error; a zero-norm qhat_j contributes 0 to the
// sum (it carries no direction to compare against) and passes no gradient.
Tensor cosine_sum_columns(const Tensor& q, const Tensor& qhat);

// Cross-matching similarity between query tokens Q [d x L] and video tokens
// V [d x Tv]: each q_j soft-attends over V (a_j = softmax(V^T q_j)), is
// reconstructed as qhat_j = V a_j, and scores cos(q_j, qhat_j); the result is
// the sum over query tokens, so it lies in [-L, L].
Tensor cross_similarity(const Tensor& q, const Tensor& v);

// Soft-attention pooling of word vectors against centroids, kept for the
// un-normalized inner-product scoring mode. S = C^T W column-softmaxed, the
// words re-expressed in centroid space as W~ = C softmax(S), and the score is
// sum_j <w~_j, w_j>.
struct PoolResult {
    Tensor pooled_words;  // [d x M]
    Tensor score;         // scalar
};
PoolResult soft_attention_pool(const Tensor& centroids, const Tensor& words);

}  // namespace qvr
