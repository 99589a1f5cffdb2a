#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "qvr/tensor.hpp"

namespace qvr {

// What a token in the input sequence stands for. Roles ride along with the
// hidden states so downstream stages can split query tokens from video tokens
// without re-deriving offsets.
enum class TokenRole : std::uint8_t {
    QueryWord,
    BoxCentroid,
    TitleWord,
    ClassToken,
};

// Hidden states [d_model x T] plus one role tag per token.
struct HiddenSequence {
    Tensor tokens;
    std::vector<TokenRole> roles;

    int length() const { return tokens.defined() ? tokens.cols() : 0; }
    void validate() const;  // tags must match the token count
};

// Parameters of one self-attention layer: per-head bias-free projections for
// value/key/query, an output projection over the concatenated heads, and the
// gain/shift of the post-residual layer norm. There is no feed-forward
// sublayer; a layer is attention + add&norm only.
struct AttentionLayerParams {
    std::vector<Tensor> value_proj;  // per head, [d_head x d_model]
    std::vector<Tensor> key_proj;    // per head, [d_head x d_model]
    std::vector<Tensor> query_proj;  // per head, [d_head x d_model]
    Tensor output_proj;              // [d_model x heads*d_head]
    Tensor norm_gain;                // [d_model]
    Tensor norm_shift;               // [d_model]

    int d_model = 0;
    int heads = 0;
    int d_head = 0;

    // Uniform init scaled by fan-in; gain starts at 1, shift at 0.
    static AttentionLayerParams init(int d_model, int heads, std::mt19937_64& rng);
    // Zero-valued tensors of the right shapes (deserialization target).
    static AttentionLayerParams allocate(int d_model, int heads);
    void validate() const;
};

// Per-head projections of a sequence: q/k/v are each [d_head x T].
struct QkvProjection {
    std::vector<Tensor> q, k, v;
};

// Applies the per-head value/key/query maps to every token.
QkvProjection project_qkv(const HiddenSequence& x, const AttentionLayerParams& p);

// One full layer: per head, attention weights softmax(K^T q_j) pool the value
// vectors; heads are concatenated, projected back to d_model, added to the
// input and layer-normed. Logits are used raw by default; `scaled_logits`
// divides them by sqrt(d_head).
//
// `attention_probs` (optional, for inspection/tests) receives one [T x T]
// tensor per head whose column j holds the weights token j attends with.
HiddenSequence attention_layer(const HiddenSequence& x, const AttentionLayerParams& p,
                               bool scaled_logits = false,
                               std::vector<Tensor>* attention_probs = nullptr);

}  // namespace qvr
