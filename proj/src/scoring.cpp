#include "qvr/scoring.hpp"

#include <cmath>
#include <string>

#include "qvr/errors.hpp"

namespace qvr {

namespace {

double norm_of(const std::vector<double>& v, std::size_t off, std::size_t stride, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = v[off + static_cast<std::size_t>(i) * stride];
        s += x * x;
    }
    return std::sqrt(s);
}

}  // namespace

Tensor cosine(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 1 || b.ndim() != 1 || a.size() != b.size()) {
        throw DimensionError("cosine: expected equal-length 1-D vectors, got " +
                             a.shape_str() + " and " + b.shape_str());
    }
    const int n = static_cast<int>(a.size());
    const double na = norm_of(a.values(), 0, 1, n);
    const double nb = norm_of(b.values(), 0, 1, n);
    if (na == 0.0 || nb == 0.0) {
        throw InputError("cosine: zero-norm vector has no direction");
    }
    double dot = 0.0;
    for (int i = 0; i < n; ++i) dot += a.values()[i] * b.values()[i];
    const double cos_val = dot / (na * nb);
    const bool rec = Tape::active() && (a.requires_grad() || b.requires_grad());
    Tensor y = Tensor::from_values({1}, {cos_val}, rec);
    if (rec) {
        Tape::active()->record([a, b, y, na, nb, cos_val, n]() mutable {
            const double g = y.grad()[0];
            if (a.requires_grad()) {
                std::vector<double>& ga = a.grad();
                for (int i = 0; i < n; ++i)
                    ga[i] += g * (b.values()[i] / (na * nb) -
                                  cos_val * a.values()[i] / (na * na));
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad();
                for (int i = 0; i < n; ++i)
                    gb[i] += g * (a.values()[i] / (na * nb) -
                                  cos_val * b.values()[i] / (nb * nb));
            }
        });
    }
    return y;
}

Tensor embed_similarity(const Tensor& query_embedding, const Tensor& video_embedding) {
    return cosine(query_embedding, video_embedding);
}

Tensor cosine_sum_columns(const Tensor& q, const Tensor& qhat) {
    if (q.ndim() != 2 || qhat.ndim() != 2 || q.shape() != qhat.shape()) {
        throw DimensionError("cosine_sum_columns: shape mismatch " + q.shape_str() +
                             " vs " + qhat.shape_str());
    }
    const int d = q.rows(), l = q.cols();
    const std::vector<double>& qv = q.values();
    const std::vector<double>& hv = qhat.values();
    std::vector<double> nq(l), nh(l), cos_col(l, 0.0);
    double total = 0.0;
    for (int j = 0; j < l; ++j) {
        nq[j] = norm_of(qv, static_cast<std::size_t>(j), static_cast<std::size_t>(l), d);
        nh[j] = norm_of(hv, static_cast<std::size_t>(j), static_cast<std::size_t>(l), d);
        if (nq[j] == 0.0) {
            throw InputError("cosine_sum_columns: query token " + std::to_string(j) +
                             " has zero norm");
        }
        if (nh[j] == 0.0) continue;  // nothing to compare against; term is 0
        double dot = 0.0;
        for (int i = 0; i < d; ++i) {
            const std::size_t idx = static_cast<std::size_t>(i) * l + j;
            dot += qv[idx] * hv[idx];
        }
        cos_col[j] = dot / (nq[j] * nh[j]);
        total += cos_col[j];
    }
    const bool rec = Tape::active() && (q.requires_grad() || qhat.requires_grad());
    Tensor y = Tensor::from_values({1}, {total}, rec);
    if (rec) {
        Tape::active()->record([q, qhat, y, nq, nh, cos_col, d, l]() mutable {
            const double g = y.grad()[0];
            for (int j = 0; j < l; ++j) {
                if (nh[j] == 0.0) continue;  // skipped column: no gradient either
                for (int i = 0; i < d; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(i) * l + j;
                    if (q.requires_grad()) {
                        q.grad()[idx] += g * (qhat.values()[idx] / (nq[j] * nh[j]) -
                                              cos_col[j] * q.values()[idx] / (nq[j] * nq[j]));
                    }
                    if (qhat.requires_grad()) {
                        qhat.grad()[idx] += g * (q.values()[idx] / (nq[j] * nh[j]) -
                                                 cos_col[j] * qhat.values()[idx] /
                                                     (nh[j] * nh[j]));
                    }
                }
            }
        });
    }
    return y;
}

Tensor cross_similarity(const Tensor& q, const Tensor& v) {
    if (q.ndim() != 2 || v.ndim() != 2 || q.rows() != v.rows()) {
        throw DimensionError("cross_similarity: query " + q.shape_str() + " and video " +
                             v.shape_str() + " disagree on feature width");
    }
    if (q.cols() < 1 || v.cols() < 1) {
        throw InputError("cross_similarity: both sides need at least one token");
    }
    // Fail on degenerate queries up front; cosine_sum_columns would catch it
    // later but the blame belongs to the input, not the pooling.
    for (int j = 0; j < q.cols(); ++j) {
        double s = 0.0;
        for (int i = 0; i < q.rows(); ++i) s += q.at(i, j) * q.at(i, j);
        if (s == 0.0) {
            throw InputError("cross_similarity: query token " + std::to_string(j) +
                             " has zero norm");
        }
    }
    Tensor logits = matmul(transpose(v), q);      // [Tv x L]
    Tensor attn = softmax_columns(logits);        // each query token attends over V
    Tensor recon = matmul(v, attn);               // [d x L]
    return cosine_sum_columns(q, recon);
}

PoolResult soft_attention_pool(const Tensor& centroids, const Tensor& words) {
    if (centroids.ndim() != 2 || words.ndim() != 2 || centroids.rows() != words.rows()) {
        throw DimensionError("soft_attention_pool: centroids " + centroids.shape_str() +
                             " and words " + words.shape_str() +
                             " disagree on feature width");
    }
    Tensor s = matmul(transpose(centroids), words);  // [K x M]
    Tensor s_soft = softmax_columns(s);
    Tensor pooled = matmul(centroids, s_soft);       // [d x M]
    Tensor score = sum(mul(pooled, words));
    return PoolResult{pooled, score};
}

}  // namespace qvr
