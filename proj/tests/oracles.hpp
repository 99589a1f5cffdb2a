#pragma once

// Shared test oracles: straight-line reference math and finite-difference
// gradient checking. Nothing here calls the library's differentiable ops;
// these implementations are kept deliberately naive so the production code
// is judged against independent arithmetic.

#include <cmath>
#include <functional>
#include <vector>

#include "qvr/attention.hpp"
#include "qvr/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;  // [row][col]

inline Mat from_tensor(const qvr::Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (int r = 0; r < t.rows(); ++r) {
        for (int c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    }
    return m;
}

inline qvr::Tensor to_tensor(const Mat& m, bool requires_grad = false) {
    const int r = static_cast<int>(m.size());
    const int c = static_cast<int>(m[0].size());
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(r) * c);
    for (const auto& row : m) {
        for (double x : row) v.push_back(x);
    }
    return qvr::Tensor::from_values({r, c}, std::move(v), requires_grad);
}

inline Mat matmul(const Mat& a, const Mat& b) {
    const std::size_t n = a.size(), k = b.size(), m = b[0].size();
    Mat out(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += a[i][t] * b[t][j];
            out[i][j] = s;
        }
    }
    return out;
}

inline Mat transpose(const Mat& a) {
    Mat out(a[0].size(), std::vector<double>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
    }
    return out;
}

inline std::vector<double> softmax(std::vector<double> v) {
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double z = 0.0;
    for (double& x : v) {
        x = std::exp(x - m);
        z += x;
    }
    for (double& x : v) x /= z;
    return v;
}

inline Mat softmax_columns(const Mat& m) {
    Mat out = m;
    for (std::size_t j = 0; j < m[0].size(); ++j) {
        std::vector<double> col(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) col[i] = m[i][j];
        col = softmax(col);
        for (std::size_t i = 0; i < m.size(); ++i) out[i][j] = col[i];
    }
    return out;
}

inline std::vector<double> layer_norm(const std::vector<double>& x,
                                      const std::vector<double>& gain,
                                      const std::vector<double>& shift,
                                      double eps = qvr::kLayerNormEps) {
    const std::size_t d = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = gain[i] * (x[i] - mean) * inv + shift[i];
    return out;
}

inline Mat layer_norm_columns(const Mat& x, const std::vector<double>& gain,
                              const std::vector<double>& shift,
                              double eps = qvr::kLayerNormEps) {
    Mat out = x;
    for (std::size_t j = 0; j < x[0].size(); ++j) {
        std::vector<double> col(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) col[i] = x[i][j];
        col = layer_norm(col, gain, shift, eps);
        for (std::size_t i = 0; i < x.size(); ++i) out[i][j] = col[i];
    }
    return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline std::vector<double> column(const Mat& m, std::size_t j) {
    std::vector<double> col(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) col[i] = m[i][j];
    return col;
}

// Per-token soft reconstruction score: each query column attends over the
// video columns, is rebuilt from them, and contributes its cosine.
inline double cross_similarity(const Mat& q, const Mat& v) {
    double total = 0.0;
    for (std::size_t j = 0; j < q[0].size(); ++j) {
        const std::vector<double> qj = column(q, j);
        std::vector<double> logits(v[0].size(), 0.0);
        for (std::size_t t = 0; t < v[0].size(); ++t) {
            for (std::size_t i = 0; i < v.size(); ++i) logits[t] += v[i][t] * qj[i];
        }
        const std::vector<double> attn = softmax(logits);
        std::vector<double> qhat(v.size(), 0.0);
        for (std::size_t i = 0; i < v.size(); ++i) {
            for (std::size_t t = 0; t < v[0].size(); ++t) qhat[i] += v[i][t] * attn[t];
        }
        total += cosine(qj, qhat);
    }
    return total;
}

// Full attention layer recomputed from the layer's weight tensors.
inline Mat attention_layer(const Mat& x, const qvr::AttentionLayerParams& p,
                           bool scaled_logits) {
    Mat concat;  // heads stacked over rows
    for (int h = 0; h < p.heads; ++h) {
        const Mat wq = from_tensor(p.query_proj[h]);
        const Mat wk = from_tensor(p.key_proj[h]);
        const Mat wv = from_tensor(p.value_proj[h]);
        const Mat q = matmul(wq, x), k = matmul(wk, x), v = matmul(wv, x);
        Mat logits = matmul(transpose(k), q);
        if (scaled_logits) {
            const double s = 1.0 / std::sqrt(static_cast<double>(p.d_head));
            for (auto& row : logits) {
                for (double& val : row) val *= s;
            }
        }
        const Mat head = matmul(v, softmax_columns(logits));
        for (const auto& row : head) concat.push_back(row);
    }
    const Mat projected = matmul(from_tensor(p.output_proj), concat);
    Mat residual = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < x[0].size(); ++j) residual[i][j] += projected[i][j];
    }
    return layer_norm_columns(residual, p.norm_gain.values(), p.norm_shift.values());
}

// Central-difference gradient of f with respect to every entry of `param`.
// Perturbs the shared storage in place, so f must recompute from scratch.
inline std::vector<double> fd_gradient(const std::function<double()>& f, qvr::Tensor param,
                                       double h = 1e-6) {
    std::vector<double>& vals = param.values();
    std::vector<double> g(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double keep = vals[i];
        vals[i] = keep + h;
        const double up = f();
        vals[i] = keep - h;
        const double down = f();
        vals[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Relative disagreement, with a pass when both sides are tiny in absolute
// terms (finite differences carry no signal down there).
inline double gradient_gap(double got, double want, double tiny = 1e-7) {
    if (std::abs(got) < tiny && std::abs(want) < tiny) return 0.0;
    return std::abs(got - want) / std::max(std::abs(got), std::abs(want));
}

inline double max_gradient_gap(const std::vector<double>& got,
                               const std::vector<double>& want, double tiny = 1e-7) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        worst = std::max(worst, gradient_gap(got[i], want[i], tiny));
    }
    return worst;
}

}  // namespace oracle
