#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace qvr {

// Epsilon added to the variance inside layer_norm. Fixed rather than
// configurable: every serialized model assumes the same value.
inline constexpr double kLayerNormEps = 1e-5;

// Dense row-major tensor of doubles (1-D or 2-D). Copying a Tensor copies a
// handle; the storage (values and gradient) is shared. Training code keeps
// parameter tensors as persistent handles and treats everything an op returns
// as a per-forward temporary.
//
// All arithmetic runs in double precision. Serialization quantizes to 32-bit
// floats; see model.hpp.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    // Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], gradient enabled.
    static Tensor uniform_init(std::vector<int> shape, int fan_in, std::mt19937_64& rng);

    bool defined() const { return static_cast<bool>(d_); }
    const std::vector<int>& shape() const;
    int ndim() const;
    int rows() const;  // 2-D only
    int cols() const;  // 2-D only
    std::size_t size() const;
    std::string shape_str() const;

    bool requires_grad() const;
    void set_requires_grad(bool enabled);

    std::vector<double>& values();
    const std::vector<double>& values() const;
    // Gradient buffer; only tensors with requires_grad carry one. The buffer
    // lives in the shared storage, so it stays writable through const handles;
    // backward steps accumulate through the handles they captured.
    std::vector<double>& grad() const;
    void zero_grad();

    double item() const;               // scalar tensors only
    double at(int r, int c) const;     // 2-D read access
    double& at(int r, int c);

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  private:
    struct Data {
        std::vector<int> shape;
        std::vector<double> values;
        std::vector<double> grad;  // empty unless requires_grad
        bool requires_grad = false;
    };
    std::shared_ptr<Data> d_;
};

// Reverse-mode tape. Constructing a Tape makes it the active recorder for the
// current thread (nesting restores the previous one on destruction); while it
// is active, every op whose inputs require gradients appends a backward
// closure. backward() seeds the scalar loss with 1 and replays the closures
// in reverse recording order, which touches each node exactly once because
// an op's inputs are always recorded before the op itself.
//
// A tape and the tensors recorded on it belong to one thread. Independent
// tapes on separate threads do not interact.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Runs the reverse pass once. The loss must be a scalar recorded on this
    // tape; a second call without reset() is a contract violation.
    void backward(const Tensor& loss);
    // Clears recorded nodes so the tape can record a fresh forward pass.
    void reset();
    std::size_t node_count() const { return nodes_.size(); }

    static Tape* active();
    void record(std::function<void()> backward_step);

  private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
    Tape* previous_ = nullptr;
};

// Suspends recording for the current thread while alive. Use around pure
// evaluation (scoring at inference time, finite differences) so no backward
// closures pile up even if an outer tape exists.
class NoTapeScope {
  public:
    NoTapeScope();
    ~NoTapeScope();
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

  private:
    Tape* saved_;
};

// ---- differentiable ops ----
// Every op validates shapes eagerly and, when a tape is active and an input
// requires gradients, records its backward step.

// W [d_out x d_in] applied to x [d_in x n] (or [d_in]) -> [d_out x n].
Tensor linear_nobias(const Tensor& x, const Tensor& w);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double addend);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);  // -> scalar

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int begin, int end);  // [begin, end)
Tensor flatten(const Tensor& a);                         // -> 1-D copy
Tensor as_column(const Tensor& a);                       // 1-D [d] -> [d x 1]
Tensor element(const Tensor& a, std::size_t flat_index);  // -> scalar
// Assembles r*c scalar tensors (row-major) into one [r x c] tensor.
Tensor stack_scalars(const std::vector<Tensor>& scalars, int r, int c);

// Softmax over a 1-D tensor. Rejects non-finite inputs.
Tensor softmax(const Tensor& x);
// Softmax applied to each column of a 2-D tensor independently.
Tensor softmax_columns(const Tensor& x);

// Layer normalization over the feature axis with learned gain/shift.
// 1-D input: normalizes the whole vector. 2-D input: normalizes each column.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps = kLayerNormEps);
Tensor layer_norm_columns(const Tensor& x, const Tensor& gain, const Tensor& shift,
                          double eps = kLayerNormEps);

// ---- optimizers ----

enum class OptimizerKind { Sgd, Adam };

// SGD with classical momentum by default; Adam available behind the same
// interface for experiments. Velocity/moment buffers are keyed by parameter
// order, so the parameter list must stay stable across steps.
class Optimizer {
  public:
    Optimizer(OptimizerKind kind, std::vector<Tensor> params, double learning_rate,
              double momentum = 0.9);

    void step();
    void zero_grad();
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

  private:
    OptimizerKind kind_;
    std::vector<Tensor> params_;
    double lr_;
    double momentum_;
    double adam_beta1_ = 0.9, adam_beta2_ = 0.999, adam_eps_ = 1e-8;
    long step_count_ = 0;
    std::vector<std::vector<double>> velocity_;  // SGD momentum / Adam m
    std::vector<std::vector<double>> second_;    // Adam v
};

}  // namespace qvr
