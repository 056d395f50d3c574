#pragma once

// Dense float64 arrays with tape-based reverse-mode differentiation.
//
// Ops compute eagerly. When a Tape is active on the current thread (see
// TapeScope) and at least one input requires a gradient, the op appends a
// backward closure to the tape and its output is marked as requiring a
// gradient. With no active tape everything is plain evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lfd {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until something accumulates into it
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), 0.0);
        }
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return node_->data; }
    /// In-place access; reserved for optimizers and finite-difference probes.
    std::span<double> mutable_values() { return node_->data; }

    double item() const;
    double operator[](std::size_t i) const { return node_->data[i]; }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    /// Accumulated gradient; empty when nothing has flowed into this tensor.
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    /// Deep copy of shape and values, detached from any tape.
    Tensor clone() const;

    const std::shared_ptr<detail::TensorNode>& node() const noexcept { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn);

    /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure once, newest
    /// first. Recording order is a topological order of the graph, so the
    /// reverse visits each node after all of its consumers. The tape is
    /// cleared afterwards.
    void backward(const Tensor& loss);

    void clear() noexcept { entries_.clear(); }
    std::size_t size() const noexcept { return entries_.size(); }

    /// Tape receiving records on this thread, or nullptr.
    static Tape* active() noexcept;

private:
    friend class TapeScope;
    std::vector<std::function<void()>> entries_;
};

/// Makes `tape` the active tape for the current thread while in scope.
class TapeScope {
public:
    explicit TapeScope(Tape& tape) noexcept;
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Convenience for the common case of one loss per tape.
void backward(const Tensor& loss);

namespace ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);
/// max(a, floor); the gradient passes only where a > floor.
Tensor clamp_min(const Tensor& a, double floor);
Tensor relu(const Tensor& a);
/// tanh approximation of GELU.
Tensor gelu(const Tensor& a);

/// [rows x cols] + [cols], the bias broadcast over rows.
Tensor add_rowwise(const Tensor& a, const Tensor& bias);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Row softmax. With `causal`, row r only sees columns c <= r + (cols - rows);
/// masked entries come out exactly zero.
Tensor softmax_rows(const Tensor& a, bool causal = false);
/// Row log-softmax with max subtraction; every row's logsumexp is zero.
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Rows of `table` selected by `ids`; the backward scatter-adds.
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
/// Elements a[rows[i], cols[i]] as a vector.
Tensor gather(const Tensor& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols);
Tensor sum(const Tensor& a);
/// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& a, double rate, Rng& rng);

}  // namespace ops
}  // namespace lfd
