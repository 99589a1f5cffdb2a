#include "qvr/attention.hpp"

#include <cmath>
#include <string>

#include "qvr/errors.hpp"

namespace qvr {

void HiddenSequence::validate() const {
    if (!tokens.defined() || tokens.ndim() != 2) {
        throw DimensionError("HiddenSequence: tokens must be a 2-D [d x T] tensor");
    }
    if (roles.size() != static_cast<std::size_t>(tokens.cols())) {
        throw DimensionError("HiddenSequence: " + std::to_string(roles.size()) +
                             " role tags for " + std::to_string(tokens.cols()) + " tokens");
    }
}

AttentionLayerParams AttentionLayerParams::init(int d_model, int heads,
                                                std::mt19937_64& rng) {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0) {
        throw DimensionError("AttentionLayerParams::init: heads (" + std::to_string(heads) +
                             ") must divide d_model (" + std::to_string(d_model) + ")");
    }
    AttentionLayerParams p;
    p.d_model = d_model;
    p.heads = heads;
    p.d_head = d_model / heads;
    for (int h = 0; h < heads; ++h) {
        p.value_proj.push_back(Tensor::uniform_init({p.d_head, d_model}, d_model, rng));
        p.key_proj.push_back(Tensor::uniform_init({p.d_head, d_model}, d_model, rng));
        p.query_proj.push_back(Tensor::uniform_init({p.d_head, d_model}, d_model, rng));
    }
    p.output_proj = Tensor::uniform_init({d_model, d_model}, d_model, rng);
    p.norm_gain = Tensor::full({d_model}, 1.0, /*requires_grad=*/true);
    p.norm_shift = Tensor::zeros({d_model}, /*requires_grad=*/true);
    return p;
}

AttentionLayerParams AttentionLayerParams::allocate(int d_model, int heads) {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0) {
        throw DimensionError("AttentionLayerParams::allocate: heads (" +
                             std::to_string(heads) + ") must divide d_model (" +
                             std::to_string(d_model) + ")");
    }
    AttentionLayerParams p;
    p.d_model = d_model;
    p.heads = heads;
    p.d_head = d_model / heads;
    for (int h = 0; h < heads; ++h) {
        p.value_proj.push_back(Tensor::zeros({p.d_head, d_model}, true));
        p.key_proj.push_back(Tensor::zeros({p.d_head, d_model}, true));
        p.query_proj.push_back(Tensor::zeros({p.d_head, d_model}, true));
    }
    p.output_proj = Tensor::zeros({d_model, d_model}, true);
    p.norm_gain = Tensor::zeros({d_model}, true);
    p.norm_shift = Tensor::zeros({d_model}, true);
    return p;
}

void AttentionLayerParams::validate() const {
    if (heads <= 0 || d_head <= 0 || d_model != heads * d_head) {
        throw DimensionError("AttentionLayerParams: inconsistent geometry");
    }
    if (value_proj.size() != static_cast<std::size_t>(heads) ||
        key_proj.size() != static_cast<std::size_t>(heads) ||
        query_proj.size() != static_cast<std::size_t>(heads)) {
        throw DimensionError("AttentionLayerParams: projection count != head count");
    }
    const auto check = [&](const Tensor& t, int r, int c, const char* name) {
        if (!t.defined() || t.ndim() != 2 || t.rows() != r || t.cols() != c) {
            throw DimensionError(std::string("AttentionLayerParams: ") + name + " is " +
                                 t.shape_str() + ", expected [" + std::to_string(r) + " x " +
                                 std::to_string(c) + "]");
        }
    };
    for (int h = 0; h < heads; ++h) {
        check(value_proj[h], d_head, d_model, "value_proj");
        check(key_proj[h], d_head, d_model, "key_proj");
        check(query_proj[h], d_head, d_model, "query_proj");
    }
    check(output_proj, d_model, heads * d_head, "output_proj");
    if (norm_gain.ndim() != 1 || static_cast<int>(norm_gain.size()) != d_model ||
        norm_shift.ndim() != 1 || static_cast<int>(norm_shift.size()) != d_model) {
        throw DimensionError("AttentionLayerParams: norm gain/shift do not span d_model");
    }
}

QkvProjection project_qkv(const HiddenSequence& x, const AttentionLayerParams& p) {
    x.validate();
    p.validate();
    if (x.tokens.rows() != p.d_model) {
        throw DimensionError("project_qkv: layer expects d_model " +
                             std::to_string(p.d_model) + ", sequence has " +
                             std::to_string(x.tokens.rows()));
    }
    QkvProjection out;
    for (int h = 0; h < p.heads; ++h) {
        out.q.push_back(linear_nobias(x.tokens, p.query_proj[h]));
        out.k.push_back(linear_nobias(x.tokens, p.key_proj[h]));
        out.v.push_back(linear_nobias(x.tokens, p.value_proj[h]));
    }
    return out;
}

HiddenSequence attention_layer(const HiddenSequence& x, const AttentionLayerParams& p,
                               bool scaled_logits, std::vector<Tensor>* attention_probs) {
    QkvProjection qkv = project_qkv(x, p);
    if (attention_probs) attention_probs->clear();

    std::vector<Tensor> head_outputs;
    for (int h = 0; h < p.heads; ++h) {
        // Column j of K^T Q holds the logits token j attends with.
        Tensor logits = matmul(transpose(qkv.k[h]), qkv.q[h]);
        if (scaled_logits) {
            logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(p.d_head)));
        }
        Tensor probs = softmax_columns(logits);
        if (attention_probs) attention_probs->push_back(probs);
        head_outputs.push_back(matmul(qkv.v[h], probs));
    }

    Tensor pooled = p.heads == 1 ? head_outputs[0] : concat_rows(head_outputs);
    Tensor projected = linear_nobias(pooled, p.output_proj);
    Tensor out = layer_norm_columns(add(x.tokens, projected), p.norm_gain, p.norm_shift);
    return HiddenSequence{out, x.roles};
}

}  // namespace qvr
