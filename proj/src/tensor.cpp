#include "qvr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "qvr/errors.hpp"

namespace qvr {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return n;
}

void check_shape(const std::vector<int>& shape, const char* op) {
    if (shape.empty() || shape.size() > 2) {
        throw DimensionError(std::string(op) + ": tensors must be 1-D or 2-D, got " +
                             std::to_string(shape.size()) + " dims");
    }
    for (int e : shape) {
        if (e <= 0) {
            throw DimensionError(std::string(op) + ": extents must be positive");
        }
    }
}

std::string shape_to_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? " x " : "") << shape[i];
    os << "]";
    return os.str();
}

void ensure_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
    }
}

// True when the op should record a backward step: a tape is active and at
// least one input carries gradients.
bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void accumulate(const Tensor& t, const std::vector<double>& g) {
    if (!t.requires_grad()) return;
    std::vector<double>& grad = t.grad();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    check_shape(shape, "Tensor::full");
    std::vector<double> v(shape_numel(shape), value);
    return from_values(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
    check_shape(shape, "Tensor::from_values");
    if (values.size() != shape_numel(shape)) {
        throw DimensionError("Tensor::from_values: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_to_str(shape));
    }
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    if (requires_grad) t.d_->grad.assign(t.d_->values.size(), 0.0);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::uniform_init(std::vector<int> shape, int fan_in, std::mt19937_64& rng) {
    if (fan_in <= 0) throw DimensionError("Tensor::uniform_init: fan_in must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    check_shape(shape, "Tensor::uniform_init");
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return from_values(std::move(shape), std::move(v), /*requires_grad=*/true);
}

const std::vector<int>& Tensor::shape() const {
    if (!d_) throw ContractError("Tensor::shape: tensor is undefined");
    return d_->shape;
}

int Tensor::ndim() const { return static_cast<int>(shape().size()); }

int Tensor::rows() const {
    if (ndim() != 2) throw DimensionError("Tensor::rows: tensor is not 2-D");
    return d_->shape[0];
}

int Tensor::cols() const {
    if (ndim() != 2) throw DimensionError("Tensor::cols: tensor is not 2-D");
    return d_->shape[1];
}

std::size_t Tensor::size() const { return shape_numel(shape()); }

std::string Tensor::shape_str() const {
    return d_ ? shape_to_str(d_->shape) : std::string("[undefined]");
}

bool Tensor::requires_grad() const { return d_ && d_->requires_grad; }

void Tensor::set_requires_grad(bool enabled) {
    if (!d_) throw ContractError("Tensor::set_requires_grad: tensor is undefined");
    d_->requires_grad = enabled;
    if (enabled && d_->grad.size() != d_->values.size()) {
        d_->grad.assign(d_->values.size(), 0.0);
    }
    if (!enabled) d_->grad.clear();
}

std::vector<double>& Tensor::values() {
    if (!d_) throw ContractError("Tensor::values: tensor is undefined");
    return d_->values;
}

const std::vector<double>& Tensor::values() const {
    if (!d_) throw ContractError("Tensor::values: tensor is undefined");
    return d_->values;
}

std::vector<double>& Tensor::grad() const {
    if (!d_) throw ContractError("Tensor::grad: tensor is undefined");
    if (!d_->requires_grad) throw ContractError("Tensor::grad: tensor does not require grad");
    return d_->grad;
}

void Tensor::zero_grad() {
    if (requires_grad()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("Tensor::item: tensor has " +
                                         std::to_string(size()) + " elements, expected 1");
    return d_->values[0];
}

double Tensor::at(int r, int c) const {
    if (ndim() != 2) throw DimensionError("Tensor::at: tensor is not 2-D");
    return d_->values[static_cast<std::size_t>(r) * d_->shape[1] + c];
}

double& Tensor::at(int r, int c) {
    if (ndim() != 2) throw DimensionError("Tensor::at: tensor is not 2-D");
    return d_->values[static_cast<std::size_t>(r) * d_->shape[1] + c];
}

// ---- Tape ----

Tape::Tape() {
    previous_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_step) {
    nodes_.push_back(std::move(backward_step));
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) {
        throw ContractError("Tape::backward: tape already replayed; call reset() first");
    }
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("Tape::backward: seed must be a scalar tensor");
    }
    if (!loss.requires_grad()) {
        throw ContractError("Tape::backward: loss does not require grad (was it recorded?)");
    }
    consumed_ = true;
    const_cast<Tensor&>(loss).grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
}

NoTapeScope::NoTapeScope() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoTapeScope::~NoTapeScope() { g_active_tape = saved_; }

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) {
        throw DimensionError("matmul: both operands must be 2-D, got " + a.shape_str() +
                             " and " + b.shape_str());
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner extents disagree, " + a.shape_str() + " x " +
                             b.shape_str());
    }
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double aip = av[static_cast<std::size_t>(i) * k + p];
            if (aip == 0.0) continue;
            const std::size_t brow = static_cast<std::size_t>(p) * n;
            const std::size_t orow = static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) out[orow + j] += aip * bv[brow + j];
        }
    }
    const bool rec = tracing({&a, &b});
    Tensor y = Tensor::from_values({m, n}, std::move(out), rec);
    if (rec) {
        Tape::active()->record([a, b, y, m, k, n]() mutable {
            const std::vector<double>& g = y.grad();
            const std::vector<double>& av2 = a.values();
            const std::vector<double>& bv2 = b.values();
            if (a.requires_grad()) {
                std::vector<double>& ga = a.grad();
                // dA = dY * B^T
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (int j = 0; j < n; ++j)
                            s += g[static_cast<std::size_t>(i) * n + j] *
                                 bv2[static_cast<std::size_t>(p) * n + j];
                        ga[static_cast<std::size_t>(i) * k + p] += s;
                    }
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad();
                // dB = A^T * dY
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (int i = 0; i < m; ++i)
                            s += av2[static_cast<std::size_t>(i) * k + p] *
                                 g[static_cast<std::size_t>(i) * n + j];
                        gb[static_cast<std::size_t>(p) * n + j] += s;
                    }
            }
        });
    }
    return y;
}

Tensor linear_nobias(const Tensor& x, const Tensor& w) {
    if (w.ndim() != 2) {
        throw DimensionError("linear_nobias: weight must be 2-D, got " + w.shape_str());
    }
    const bool vector_input = (x.ndim() == 1);
    Tensor x2 = vector_input ? as_column(x) : x;
    if (x2.rows() != w.cols()) {
        throw DimensionError("linear_nobias: weight " + w.shape_str() +
                             " cannot consume input " + x.shape_str());
    }
    Tensor y = matmul(w, x2);
    return vector_input ? flatten(y) : y;
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("transpose: tensor is not 2-D");
    const int m = a.rows(), n = a.cols();
    std::vector<double> out(a.size());
    const std::vector<double>& av = a.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
    const bool rec = tracing({&a});
    Tensor y = Tensor::from_values({n, m}, std::move(out), rec);
    if (rec) {
        Tape::active()->record([a, y, m, n]() mutable {
            const std::vector<double>& g = y.grad();
            std::vector<double>& ga = a.grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ga[static_cast<std::size_t>(i) * n + j] +=
                        g[static_cast<std::size_t>(j) * m + i];
        });
    }
    return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
    ensure_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    const bool rec = tracing({&a, &b});
    Tensor y = Tensor::from_values(a.shape(), std::move(out), rec);
    if (rec) {
        Tape::active()->record([a, b, y]() mutable {
            accumulate(a, y.grad());
            accumulate(b, y.grad());
        });
    }
    return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    ensure_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    const bool rec = tracing({&a, &b});
    Tensor y = Tensor::from_values(a.shape(), std::move(out), rec);
    if (rec) {
        Tape::active()->record([a, b, y]() mutable {
            if (a.requires_grad()) accumulate(a, y.grad());
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad();
                const std::vector<double>& g = y.grad();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    ensure_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    const bool rec = tracing({&a, &b});
    Tensor y = Tensor::from_values(a.shape(), std::move(out), rec);
    if (rec) {
        Tape::active()->record([a, b, y]() mutable {
            const std::vector<double>& g = y.grad();
            if (a.requires_grad()) {
                std::vector<double>& ga = a.grad();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * b.values()[i];
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * a.values()[i];
            }
        });
    }
    return y;
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
    const bool rec = tracing({&a});
    Tensor y = Tensor::from_values(a.shape(), std::move(out), rec);
    if (rec) {
        Tape::active()->record([a, y, factor]() mutable {
            std::vector<double>& ga = a.grad();
            const std::vector<double>& g = y.grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
        });
    }
    return y;
}

Tensor add_scalar(const Tensor& a, double addend) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + addend;
    const bool rec = tracing({&a});
    Tensor y = Tensor::from_values(a.shape(), std::move(out), rec);
    if (rec) {
        Tape::active()->record([a, y]() mutable { accumulate(a, y.grad()); });
    }
    return y;
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, a.values()[i]);
    const bool rec = tracing({&a});
    Tensor y = Tensor::from_values(a.shape(), std::move(out), rec);
    if (rec) {
        // Subgradient at the kink is taken as 0: only strictly positive
        // inputs pass gradient.
        Tape::active()->record([a, y]() mutable {
            std::vector<double>& ga = a.grad();
            const std::vector<double>& g = y.grad();
            for (std::size_t i = 0; i < ga.size(); ++i)
                if (a.values()[i] > 0.0) ga[i] += g[i];
        });
    }
    return y;
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    const bool rec = tracing({&a});
    Tensor y = Tensor::from_values({1}, {s}, rec);
    if (rec) {
        Tape::active()->record([a, y]() mutable {
            std::vector<double>& ga = a.grad();
            const double g = y.grad()[0];
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return y;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no tensors given");
    int r = -1, total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != 2) throw DimensionError("concat_cols: all parts must be 2-D");
        if (r < 0) r = p.rows();
        if (p.rows() != r) {
            throw DimensionError("concat_cols: row extents disagree, " +
                                 std::to_string(r) + " vs " + std::to_string(p.rows()));
        }
        total += p.cols();
    }
    std::vector<double> out(static_cast<std::size_t>(r) * total);
    int col0 = 0;
    for (const Tensor& p : parts) {
        const int c = p.cols();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                out[static_cast<std::size_t>(i) * total + col0 + j] = p.at(i, j);
        col0 += c;
    }
    bool rec = false;
    {
        std::vector<const Tensor*> ptrs;
        for (const Tensor& p : parts) ptrs.push_back(&p);
        if (Tape::active()) {
            for (const Tensor* p : ptrs)
                if (p->requires_grad()) { rec = true; break; }
        }
    }
    Tensor y = Tensor::from_values({r, total}, std::move(out), rec);
    if (rec) {
        std::vector<Tensor> held = parts;
        Tape::active()->record([held, y, r, total]() mutable {
            const std::vector<double>& g = y.grad();
            int col0 = 0;
            for (Tensor& p : held) {
                const int c = p.cols();
                if (p.requires_grad()) {
                    std::vector<double>& gp = p.grad();
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j)
                            gp[static_cast<std::size_t>(i) * c + j] +=
                                g[static_cast<std::size_t>(i) * total + col0 + j];
                }
                col0 += c;
            }
        });
    }
    return y;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no tensors given");
    int c = -1, total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != 2) throw DimensionError("concat_rows: all parts must be 2-D");
        if (c < 0) c = p.cols();
        if (p.cols() != c) {
            throw DimensionError("concat_rows: column extents disagree, " +
                                 std::to_string(c) + " vs " + std::to_string(p.cols()));
        }
        total += p.rows();
    }
    std::vector<double> out(static_cast<std::size_t>(total) * c);
    int row0 = 0;
    for (const Tensor& p : parts) {
        const std::vector<double>& pv = p.values();
        std::copy(pv.begin(), pv.end(), out.begin() + static_cast<std::size_t>(row0) * c);
        row0 += p.rows();
    }
    bool rec = false;
    if (Tape::active()) {
        for (const Tensor& p : parts)
            if (p.requires_grad()) { rec = true; break; }
    }
    Tensor y = Tensor::from_values({total, c}, std::move(out), rec);
    if (rec) {
        std::vector<Tensor> held = parts;
        Tape::active()->record([held, y, c]() mutable {
            const std::vector<double>& g = y.grad();
            std::size_t off = 0;
            for (Tensor& p : held) {
                const std::size_t n = p.size();
                if (p.requires_grad()) {
                    std::vector<double>& gp = p.grad();
                    for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
                }
                off += n;
            }
        });
    }
    return y;
}

Tensor slice_cols(const Tensor& a, int begin, int end) {
    if (a.ndim() != 2) throw DimensionError("slice_cols: tensor is not 2-D");
    const int r = a.rows(), c = a.cols();
    if (begin < 0 || end > c || begin >= end) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                             std::to_string(end) + ") invalid for " + a.shape_str());
    }
    const int w = end - begin;
    std::vector<double> out(static_cast<std::size_t>(r) * w);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j)
            out[static_cast<std::size_t>(i) * w + j] = a.at(i, begin + j);
    const bool rec = tracing({&a});
    Tensor y = Tensor::from_values({r, w}, std::move(out), rec);
    if (rec) {
        Tape::active()->record([a, y, begin, r, w]() mutable {
            const std::vector<double>& g = y.grad();
            std::vector<double>& ga = a.grad();
            const int c2 = a.cols();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < w; ++j)
                    ga[static_cast<std::size_t>(i) * c2 + begin + j] +=
                        g[static_cast<std::size_t>(i) * w + j];
        });
    }
    return y;
}

Tensor flatten(const Tensor& a) {
    std::vector<double> out = a.values();
    const bool rec = tracing({&a});
    Tensor y = Tensor::from_values({static_cast<int>(a.size())}, std::move(out), rec);
    if (rec) {
        Tape::active()->record([a, y]() mutable { accumulate(a, y.grad()); });
    }
    return y;
}

Tensor as_column(const Tensor& a) {
    if (a.ndim() != 1) throw DimensionError("as_column: tensor is not 1-D");
    std::vector<double> out = a.values();
    const bool rec = tracing({&a});
    Tensor y = Tensor::from_values({static_cast<int>(a.size()), 1}, std::move(out), rec);
    if (rec) {
        Tape::active()->record([a, y]() mutable { accumulate(a, y.grad()); });
    }
    return y;
}

Tensor element(const Tensor& a, std::size_t flat_index) {
    if (flat_index >= a.size()) {
        throw DimensionError("element: index " + std::to_string(flat_index) +
                             " out of range for " + a.shape_str());
    }
    const bool rec = tracing({&a});
    Tensor y = Tensor::from_values({1}, {a.values()[flat_index]}, rec);
    if (rec) {
        Tape::active()->record([a, y, flat_index]() mutable {
            a.grad()[flat_index] += y.grad()[0];
        });
    }
    return y;
}

Tensor stack_scalars(const std::vector<Tensor>& scalars, int r, int c) {
    if (r <= 0 || c <= 0 || scalars.size() != static_cast<std::size_t>(r) * c) {
        throw DimensionError("stack_scalars: " + std::to_string(scalars.size()) +
                             " scalars do not fill a " + std::to_string(r) + " x " +
                             std::to_string(c) + " tensor");
    }
    std::vector<double> out(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].size() != 1) {
            throw DimensionError("stack_scalars: entry " + std::to_string(i) +
                                 " is not a scalar");
        }
        out[i] = scalars[i].item();
    }
    bool rec = false;
    if (Tape::active()) {
        for (const Tensor& s : scalars)
            if (s.requires_grad()) { rec = true; break; }
    }
    Tensor y = Tensor::from_values({r, c}, std::move(out), rec);
    if (rec) {
        std::vector<Tensor> held = scalars;
        Tape::active()->record([held, y]() mutable {
            const std::vector<double>& g = y.grad();
            for (std::size_t i = 0; i < held.size(); ++i)
                if (held[i].requires_grad()) held[i].grad()[0] += g[i];
        });
    }
    return y;
}

namespace {

// Shared softmax kernel over a contiguous stride-1 slice laid out by the
// caller. Computes into `out`; returns nothing extra. Max-subtraction keeps
// exp() in range.
void softmax_slice(const double* x, double* out, int n) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) {
        out[i] = std::exp(x[i] - mx);
        denom += out[i];
    }
    for (int i = 0; i < n; ++i) out[i] /= denom;
}

void check_finite(const Tensor& t, const char* op) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite input value");
        }
    }
}

}  // namespace

Tensor softmax(const Tensor& x) {
    if (x.ndim() != 1) throw DimensionError("softmax: tensor is not 1-D");
    check_finite(x, "softmax");
    const int n = static_cast<int>(x.size());
    std::vector<double> out(n);
    softmax_slice(x.values().data(), out.data(), n);
    const bool rec = tracing({&x});
    Tensor y = Tensor::from_values(x.shape(), std::move(out), rec);
    if (rec) {
        Tape::active()->record([x, y, n]() mutable {
            const std::vector<double>& g = y.grad();
            const std::vector<double>& yv = y.values();
            std::vector<double>& gx = x.grad();
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += g[i] * yv[i];
            for (int i = 0; i < n; ++i) gx[i] += yv[i] * (g[i] - dot);
        });
    }
    return y;
}

Tensor softmax_columns(const Tensor& x) {
    if (x.ndim() != 2) throw DimensionError("softmax_columns: tensor is not 2-D");
    check_finite(x, "softmax_columns");
    const int r = x.rows(), c = x.cols();
    std::vector<double> out(x.size());
    std::vector<double> col(r), colout(r);
    const std::vector<double>& xv = x.values();
    for (int j = 0; j < c; ++j) {
        for (int i = 0; i < r; ++i) col[i] = xv[static_cast<std::size_t>(i) * c + j];
        softmax_slice(col.data(), colout.data(), r);
        for (int i = 0; i < r; ++i) out[static_cast<std::size_t>(i) * c + j] = colout[i];
    }
    const bool rec = tracing({&x});
    Tensor y = Tensor::from_values(x.shape(), std::move(out), rec);
    if (rec) {
        Tape::active()->record([x, y, r, c]() mutable {
            const std::vector<double>& g = y.grad();
            const std::vector<double>& yv = y.values();
            std::vector<double>& gx = x.grad();
            for (int j = 0; j < c; ++j) {
                double dot = 0.0;
                for (int i = 0; i < r; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(i) * c + j;
                    dot += g[idx] * yv[idx];
                }
                for (int i = 0; i < r; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(i) * c + j;
                    gx[idx] += yv[idx] * (g[idx] - dot);
                }
            }
        });
    }
    return y;
}

namespace {

// Layer norm over one stride-`stride` slice of length d starting at x+off.
// Writes the normalized pre-gain values (x_hat) and the inverse stddev for
// the backward pass.
void layer_norm_slice(const double* x, double* x_hat, double* inv_std, int d,
                      std::size_t off, std::size_t stride, double eps) {
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += x[off + i * stride];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
        const double dv = x[off + i * stride] - mean;
        var += dv * dv;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    *inv_std = inv;
    for (int i = 0; i < d; ++i) x_hat[i] = (x[off + i * stride] - mean) * inv;
}

void check_norm_params(int d, const Tensor& gain, const Tensor& shift, const char* op) {
    if (d < 2) {
        throw DimensionError(std::string(op) + ": feature axis must have >= 2 elements, got " +
                             std::to_string(d));
    }
    if (gain.ndim() != 1 || static_cast<int>(gain.size()) != d) {
        throw DimensionError(std::string(op) + ": gain " + gain.shape_str() +
                             " does not match feature extent " + std::to_string(d));
    }
    if (shift.ndim() != 1 || static_cast<int>(shift.size()) != d) {
        throw DimensionError(std::string(op) + ": shift " + shift.shape_str() +
                             " does not match feature extent " + std::to_string(d));
    }
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    if (x.ndim() != 1) throw DimensionError("layer_norm: tensor is not 1-D");
    const int d = static_cast<int>(x.size());
    check_norm_params(d, gain, shift, "layer_norm");
    std::vector<double> x_hat(d);
    double inv_std = 0.0;
    layer_norm_slice(x.values().data(), x_hat.data(), &inv_std, d, 0, 1, eps);
    std::vector<double> out(d);
    for (int i = 0; i < d; ++i) out[i] = gain.values()[i] * x_hat[i] + shift.values()[i];
    const bool rec = tracing({&x, &gain, &shift});
    Tensor y = Tensor::from_values(x.shape(), std::move(out), rec);
    if (rec) {
        Tape::active()->record([x, gain, shift, y, x_hat, inv_std, d]() mutable {
            const std::vector<double>& g = y.grad();
            if (shift.requires_grad()) accumulate(shift, g);
            if (gain.requires_grad()) {
                std::vector<double>& gg = gain.grad();
                for (int i = 0; i < d; ++i) gg[i] += g[i] * x_hat[i];
            }
            if (x.requires_grad()) {
                std::vector<double>& gx = x.grad();
                double mean_gy = 0.0, mean_gy_xhat = 0.0;
                std::vector<double> gy(d);
                for (int i = 0; i < d; ++i) {
                    gy[i] = g[i] * gain.values()[i];
                    mean_gy += gy[i];
                    mean_gy_xhat += gy[i] * x_hat[i];
                }
                mean_gy /= d;
                mean_gy_xhat /= d;
                for (int i = 0; i < d; ++i)
                    gx[i] += inv_std * (gy[i] - mean_gy - x_hat[i] * mean_gy_xhat);
            }
        });
    }
    return y;
}

Tensor layer_norm_columns(const Tensor& x, const Tensor& gain, const Tensor& shift,
                          double eps) {
    if (x.ndim() != 2) throw DimensionError("layer_norm_columns: tensor is not 2-D");
    const int d = x.rows(), c = x.cols();
    check_norm_params(d, gain, shift, "layer_norm_columns");
    std::vector<double> x_hat(x.size());
    std::vector<double> inv_std(c);
    const std::vector<double>& xv = x.values();
    std::vector<double> col_hat(d);
    for (int j = 0; j < c; ++j) {
        layer_norm_slice(xv.data(), col_hat.data(), &inv_std[j], d,
                         static_cast<std::size_t>(j), static_cast<std::size_t>(c), eps);
        for (int i = 0; i < d; ++i) x_hat[static_cast<std::size_t>(i) * c + j] = col_hat[i];
    }
    std::vector<double> out(x.size());
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < c; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * c + j;
            out[idx] = gain.values()[i] * x_hat[idx] + shift.values()[i];
        }
    const bool rec = tracing({&x, &gain, &shift});
    Tensor y = Tensor::from_values(x.shape(), std::move(out), rec);
    if (rec) {
        Tape::active()->record([x, gain, shift, y, x_hat, inv_std, d, c]() mutable {
            const std::vector<double>& g = y.grad();
            if (shift.requires_grad()) {
                std::vector<double>& gs = shift.grad();
                for (int i = 0; i < d; ++i)
                    for (int j = 0; j < c; ++j)
                        gs[i] += g[static_cast<std::size_t>(i) * c + j];
            }
            if (gain.requires_grad()) {
                std::vector<double>& gg = gain.grad();
                for (int i = 0; i < d; ++i)
                    for (int j = 0; j < c; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(i) * c + j;
                        gg[i] += g[idx] * x_hat[idx];
                    }
            }
            if (x.requires_grad()) {
                std::vector<double>& gx = x.grad();
                for (int j = 0; j < c; ++j) {
                    double mean_gy = 0.0, mean_gy_xhat = 0.0;
                    for (int i = 0; i < d; ++i) {
                        const std::size_t idx = static_cast<std::size_t>(i) * c + j;
                        const double gy = g[idx] * gain.values()[i];
                        mean_gy += gy;
                        mean_gy_xhat += gy * x_hat[idx];
                    }
                    mean_gy /= d;
                    mean_gy_xhat /= d;
                    for (int i = 0; i < d; ++i) {
                        const std::size_t idx = static_cast<std::size_t>(i) * c + j;
                        const double gy = g[idx] * gain.values()[i];
                        gx[idx] += inv_std[j] * (gy - mean_gy - x_hat[idx] * mean_gy_xhat);
                    }
                }
            }
        });
    }
    return y;
}

// ---- Optimizer ----

Optimizer::Optimizer(OptimizerKind kind, std::vector<Tensor> params, double learning_rate,
                     double momentum)
    : kind_(kind), params_(std::move(params)), lr_(learning_rate), momentum_(momentum) {
    for (const Tensor& p : params_) {
        if (!p.requires_grad()) {
            throw ContractError("Optimizer: parameter without gradient buffer");
        }
        velocity_.emplace_back(p.size(), 0.0);
        if (kind_ == OptimizerKind::Adam) second_.emplace_back(p.size(), 0.0);
    }
}

void Optimizer::step() {
    ++step_count_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        std::vector<double>& v = params_[k].values();
        const std::vector<double>& g = params_[k].grad();
        std::vector<double>& mom = velocity_[k];
        if (kind_ == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < v.size(); ++i) {
                mom[i] = momentum_ * mom[i] - lr_ * g[i];
                v[i] += mom[i];
            }
        } else {
            std::vector<double>& sec = second_[k];
            const double bc1 = 1.0 - std::pow(adam_beta1_, step_count_);
            const double bc2 = 1.0 - std::pow(adam_beta2_, step_count_);
            for (std::size_t i = 0; i < v.size(); ++i) {
                mom[i] = adam_beta1_ * mom[i] + (1.0 - adam_beta1_) * g[i];
                sec[i] = adam_beta2_ * sec[i] + (1.0 - adam_beta2_) * g[i] * g[i];
                const double mhat = mom[i] / bc1;
                const double vhat = sec[i] / bc2;
                v[i] -= lr_ * mhat / (std::sqrt(vhat) + adam_eps_);
            }
        }
    }
}

void Optimizer::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

}  // namespace qvr
