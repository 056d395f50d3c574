#include "lfd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lfd/error.hpp"
#include "lfd/rng.hpp"

namespace lfd {

std::size_t shape_size(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

namespace {

void check_finite(std::span<const double> values, const char* where) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw Error(ErrorKind::InvalidValue, std::string("non-finite value in ") + where);
        }
    }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) : node_(std::make_shared<detail::TensorNode>()) {
    require(shape_size(shape) == data.size(), ErrorKind::ContractViolation,
            "shape " + shape_string(shape) + " does not match " + std::to_string(data.size()) + " values");
    check_finite(data, "tensor construction");
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::rows() const {
    require(rank() == 2, ErrorKind::ContractViolation, "rows() needs a matrix, got " + shape_string(shape()));
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require(rank() == 2, ErrorKind::ContractViolation, "cols() needs a matrix, got " + shape_string(shape()));
    return node_->shape[1];
}

double Tensor::item() const {
    require(size() == 1, ErrorKind::ContractViolation, "item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->data); }

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() noexcept { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) noexcept : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }

void Tape::backward(const Tensor& loss) {
    require(loss.defined() && loss.size() == 1, ErrorKind::ContractViolation,
            "backward needs a scalar loss, got " + (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    require(loss.requires_grad(), ErrorKind::ContractViolation, "loss is not connected to any leaf that requires a gradient");
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        (*it)();
    }
    entries_.clear();
}

void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    require(tape != nullptr, ErrorKind::ContractViolation, "backward called with no active tape");
    tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {
namespace {

using NodePtr = std::shared_ptr<detail::TensorNode>;

Tensor make_result(Shape shape, std::vector<double> data, const char* op) {
    check_finite(data, op);
    return Tensor(std::move(shape), std::move(data));
}

/// Returns the active tape when any input needs a gradient.
Tape* recording(std::initializer_list<const Tensor*> inputs) {
    Tape* tape = Tape::active();
    if (tape == nullptr) {
        return nullptr;
    }
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) {
            return tape;
        }
    }
    return nullptr;
}

void attach(Tape* tape, Tensor& out, std::function<void()> fn) {
    out.set_requires_grad(true);
    tape->record(std::move(fn));
}

// Output grad, or nullptr when nothing downstream produced one.
const double* out_grad(const NodePtr& out) { return out->grad.empty() ? nullptr : out->grad.data(); }

double* in_grad(const NodePtr& in) {
    if (!in->requires_grad) {
        return nullptr;
    }
    in->ensure_grad();
    return in->grad.data();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), ErrorKind::ContractViolation,
            std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_matrix(const Tensor& a, const char* op) {
    require(a.rank() == 2, ErrorKind::ContractViolation, std::string(op) + " needs a matrix, got " + shape_string(a.shape()));
}

// Elementwise unary op with derivative expressed through (input, output).
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
    std::vector<double> out(a.size());
    const auto x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = fwd(x[i]);
    }
    Tensor result = make_result(a.shape(), std::move(out), name);
    if (Tape* tape = recording({&a})) {
        attach(tape, result, [o = result.node(), an = a.node(), deriv] {
            const double* g = out_grad(o);
            double* ga = in_grad(an);
            if (!g || !ga) {
                return;
            }
            for (std::size_t i = 0; i < o->data.size(); ++i) {
                ga[i] += g[i] * deriv(an->data[i], o->data[i]);
            }
        });
    }
    return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    Tensor result = make_result(a.shape(), std::move(out), "add");
    if (Tape* tape = recording({&a, &b})) {
        attach(tape, result, [o = result.node(), an = a.node(), bn = b.node()] {
            const double* g = out_grad(o);
            if (!g) {
                return;
            }
            const std::size_t n = o->data.size();
            if (double* ga = in_grad(an)) {
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (double* gb = in_grad(bn)) {
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
    }
    return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    Tensor result = make_result(a.shape(), std::move(out), "sub");
    if (Tape* tape = recording({&a, &b})) {
        attach(tape, result, [o = result.node(), an = a.node(), bn = b.node()] {
            const double* g = out_grad(o);
            if (!g) {
                return;
            }
            const std::size_t n = o->data.size();
            if (double* ga = in_grad(an)) {
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (double* gb = in_grad(bn)) {
                for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        });
    }
    return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    Tensor result = make_result(a.shape(), std::move(out), "mul");
    if (Tape* tape = recording({&a, &b})) {
        attach(tape, result, [o = result.node(), an = a.node(), bn = b.node()] {
            const double* g = out_grad(o);
            if (!g) {
                return;
            }
            const std::size_t n = o->data.size();
            if (double* ga = in_grad(an)) {
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bn->data[i];
            }
            if (double* gb = in_grad(bn)) {
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * an->data[i];
            }
        });
    }
    return result;
}

Tensor scale(const Tensor& a, double factor) {
    return unary(a, "scale", [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor pow(const Tensor& a, double exponent) {
    return unary(
        a, "pow", [exponent](double x) { return std::pow(x, exponent); },
        [exponent](double x, double) { return exponent == 0.0 ? 0.0 : exponent * std::pow(x, exponent - 1.0); });
}

Tensor clamp_min(const Tensor& a, double floor) {
    return unary(
        a, "clamp_min", [floor](double x) { return std::max(x, floor); },
        [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Tensor relu(const Tensor& a) {
    return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
    static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    static constexpr double kA = 0.044715;
    return unary(
        a, "gelu",
        [](double x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))); },
        [](double x, double) {
            const double u = kC * (x + kA * x * x * x);
            const double t = std::tanh(u);
            const double du = kC * (1.0 + 3.0 * kA * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
    require_matrix(a, "add_rowwise");
    require(bias.rank() == 1 && bias.size() == a.cols(), ErrorKind::ContractViolation,
            "add_rowwise: bias " + shape_string(bias.shape()) + " vs " + shape_string(a.shape()));
    const std::size_t rows = a.rows();
    const std::size_t cols = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = a[r * cols + c] + bias[c];
        }
    }
    Tensor result = make_result(a.shape(), std::move(out), "add_rowwise");
    if (Tape* tape = recording({&a, &bias})) {
        attach(tape, result, [o = result.node(), an = a.node(), bn = bias.node(), rows, cols] {
            const double* g = out_grad(o);
            if (!g) {
                return;
            }
            if (double* ga = in_grad(an)) {
                for (std::size_t i = 0; i < rows * cols; ++i) ga[i] += g[i];
            }
            if (double* gb = in_grad(bn)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                }
            }
        });
    }
    return result;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const std::size_t n = b.cols();
    require(b.rows() == k, ErrorKind::ContractViolation,
            "matmul: inner extents differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    std::vector<double> out(m * n, 0.0);
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] += av * brow[j];
            }
        }
    }
    Tensor result = make_result({m, n}, std::move(out), "matmul");
    if (Tape* tape = recording({&a, &b})) {
        attach(tape, result, [o = result.node(), an = a.node(), bn = b.node(), m, k, n] {
            const double* g = out_grad(o);
            if (!g) {
                return;
            }
            // dA = G B^T
            if (double* ga = in_grad(an)) {
                const double* pb = bn->data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* grow = g + i * n;
                        const double* brow = pb + p * n;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + p] += acc;
                    }
                }
            }
            // dB = A^T G
            if (double* gb = in_grad(bn)) {
                const double* pa = an->data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = g + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = pa[i * k + p];
                        double* gbrow = gb + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return result;
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t rows = a.rows();
    const std::size_t cols = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
    }
    Tensor result = make_result({cols, rows}, std::move(out), "transpose");
    if (Tape* tape = recording({&a})) {
        attach(tape, result, [o = result.node(), an = a.node(), rows, cols] {
            const double* g = out_grad(o);
            double* ga = in_grad(an);
            if (!g || !ga) {
                return;
            }
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[c * rows + r];
            }
        });
    }
    return result;
}

Tensor softmax_rows(const Tensor& a, bool causal) {
    require_matrix(a, "softmax_rows");
    const std::size_t rows = a.rows();
    const std::size_t cols = a.cols();
    require(!causal || cols >= rows, ErrorKind::ContractViolation, "causal softmax needs cols >= rows");
    const std::size_t offset = causal ? cols - rows : 0;
    check_finite(a.values(), "softmax_rows input");
    std::vector<double> out(a.size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t visible = causal ? r + offset + 1 : cols;
        const double* x = a.values().data() + r * cols;
        double* y = out.data() + r * cols;
        const double mx = *std::max_element(x, x + visible);
        double total = 0.0;
        for (std::size_t c = 0; c < visible; ++c) {
            y[c] = std::exp(x[c] - mx);
            total += y[c];
        }
        for (std::size_t c = 0; c < visible; ++c) y[c] /= total;
    }
    Tensor result = make_result(a.shape(), std::move(out), "softmax_rows");
    if (Tape* tape = recording({&a})) {
        attach(tape, result, [o = result.node(), an = a.node(), rows, cols] {
            const double* g = out_grad(o);
            double* ga = in_grad(an);
            if (!g || !ga) {
                return;
            }
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = o->data.data() + r * cols;
                const double* gr = g + r * cols;
                double dot = 0.0;
                for (std::size_t c = 0; c < cols; ++c) dot += y[c] * gr[c];
                for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += y[c] * (gr[c] - dot);
            }
        });
    }
    return result;
}

Tensor log_softmax_rows(const Tensor& a) {
    require_matrix(a, "log_softmax_rows");
    const std::size_t rows = a.rows();
    const std::size_t cols = a.cols();
    require(cols >= 1, ErrorKind::ContractViolation, "log_softmax_rows needs at least one column");
    check_finite(a.values(), "log_softmax_rows input");
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.values().data() + r * cols;
        double* y = out.data() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) total += std::exp(x[c] - mx);
        const double lse = mx + std::log(total);
        for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lse;
    }
    Tensor result = make_result(a.shape(), std::move(out), "log_softmax_rows");
    if (Tape* tape = recording({&a})) {
        attach(tape, result, [o = result.node(), an = a.node(), rows, cols] {
            const double* g = out_grad(o);
            double* ga = in_grad(an);
            if (!g || !ga) {
                return;
            }
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = o->data.data() + r * cols;
                const double* gr = g + r * cols;
                double gsum = 0.0;
                for (std::size_t c = 0; c < cols; ++c) gsum += gr[c];
                for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += gr[c] - std::exp(y[c]) * gsum;
            }
        });
    }
    return result;
}

Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    require_matrix(a, "layer_norm_rows");
    const std::size_t rows = a.rows();
    const std::size_t cols = a.cols();
    require(gain.size() == cols && bias.size() == cols, ErrorKind::ContractViolation, "layer_norm_rows: gain/bias extent");
    std::vector<double> normed(a.size());
    std::vector<double> inv_std(rows);
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.values().data() + r * cols;
        double mean = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mean += x[c];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (x[c] - mean) * (x[c] - mean);
        var /= static_cast<double>(cols);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c) {
            const double xh = (x[c] - mean) * inv_std[r];
            normed[r * cols + c] = xh;
            out[r * cols + c] = xh * gain[c] + bias[c];
        }
    }
    Tensor result = make_result(a.shape(), std::move(out), "layer_norm_rows");
    if (Tape* tape = recording({&a, &gain, &bias})) {
        attach(tape, result,
               [o = result.node(), an = a.node(), gn = gain.node(), bn = bias.node(), normed = std::move(normed),
                inv_std = std::move(inv_std), rows, cols] {
                   const double* g = out_grad(o);
                   if (!g) {
                       return;
                   }
                   if (double* gg = in_grad(gn)) {
                       for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * normed[r * cols + c];
                   }
                   if (double* gb = in_grad(bn)) {
                       for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                   }
                   if (double* ga = in_grad(an)) {
                       const double n = static_cast<double>(cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                           double sum_dxh = 0.0;
                           double sum_dxh_xh = 0.0;
                           for (std::size_t c = 0; c < cols; ++c) {
                               const double dxh = g[r * cols + c] * gn->data[c];
                               sum_dxh += dxh;
                               sum_dxh_xh += dxh * normed[r * cols + c];
                           }
                           for (std::size_t c = 0; c < cols; ++c) {
                               const double dxh = g[r * cols + c] * gn->data[c];
                               ga[r * cols + c] +=
                                   inv_std[r] / n * (n * dxh - sum_dxh - normed[r * cols + c] * sum_dxh_xh);
                           }
                       }
                   }
               });
    }
    return result;
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
    require_matrix(table, "embedding");
    const std::size_t vocab = table.rows();
    const std::size_t dim = table.cols();
    std::vector<std::size_t> rows_idx(ids.size());
    std::vector<double> out(ids.size() * dim);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab, ErrorKind::ContractViolation,
                "embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab) + " rows");
        rows_idx[i] = static_cast<std::size_t>(ids[i]);
        std::copy_n(table.values().data() + rows_idx[i] * dim, dim, out.data() + i * dim);
    }
    Tensor result = make_result({ids.size(), dim}, std::move(out), "embedding");
    if (Tape* tape = recording({&table})) {
        attach(tape, result, [o = result.node(), tn = table.node(), rows_idx = std::move(rows_idx), dim] {
            const double* g = out_grad(o);
            double* gt = in_grad(tn);
            if (!g || !gt) {
                return;
            }
            for (std::size_t i = 0; i < rows_idx.size(); ++i) {
                for (std::size_t c = 0; c < dim; ++c) gt[rows_idx[i] * dim + c] += g[i * dim + c];
            }
        });
    }
    return result;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    require_matrix(a, "slice_rows");
    require(begin + count <= a.rows(), ErrorKind::ContractViolation, "slice_rows out of range");
    const std::size_t cols = a.cols();
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                            a.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * cols));
    Tensor result = make_result({count, cols}, std::move(out), "slice_rows");
    if (Tape* tape = recording({&a})) {
        attach(tape, result, [o = result.node(), an = a.node(), begin, count, cols] {
            const double* g = out_grad(o);
            double* ga = in_grad(an);
            if (!g || !ga) {
                return;
            }
            for (std::size_t i = 0; i < count * cols; ++i) ga[begin * cols + i] += g[i];
        });
    }
    return result;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
    require_matrix(a, "slice_cols");
    require(begin + count <= a.cols(), ErrorKind::ContractViolation, "slice_cols out of range");
    const std::size_t rows = a.rows();
    const std::size_t cols = a.cols();
    std::vector<double> out(rows * count);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.values().data() + r * cols + begin, count, out.data() + r * count);
    }
    Tensor result = make_result({rows, count}, std::move(out), "slice_cols");
    if (Tape* tape = recording({&a})) {
        attach(tape, result, [o = result.node(), an = a.node(), begin, count, rows, cols] {
            const double* g = out_grad(o);
            double* ga = in_grad(an);
            if (!g || !ga) {
                return;
            }
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < count; ++c) ga[r * cols + begin + c] += g[r * count + c];
        });
    }
    return result;
}

Tensor concat_cols(std::span<const Tensor> parts) {
    require(!parts.empty(), ErrorKind::ContractViolation, "concat_cols needs at least one part");
    const std::size_t rows = parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        require(p.rank() == 2 && p.rows() == rows, ErrorKind::ContractViolation, "concat_cols: row extents differ");
        total += p.cols();
    }
    std::vector<double> out(rows * total);
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t c = p.cols();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(p.values().data() + r * c, c, out.data() + r * total + offset);
        }
        offset += c;
    }
    Tensor result = make_result({rows, total}, std::move(out), "concat_cols");
    Tape* tape = Tape::active();
    const bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (tape && any) {
        std::vector<NodePtr> nodes;
        for (const Tensor& p : parts) nodes.push_back(p.node());
        attach(tape, result, [o = result.node(), nodes = std::move(nodes), rows, total] {
            const double* g = out_grad(o);
            if (!g) {
                return;
            }
            std::size_t offset = 0;
            for (const NodePtr& n : nodes) {
                const std::size_t c = n->shape[1];
                if (double* gp = in_grad(n)) {
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < c; ++j) gp[r * c + j] += g[r * total + offset + j];
                }
                offset += c;
            }
        });
    }
    return result;
}

Tensor gather(const Tensor& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
    require_matrix(a, "gather");
    require(rows.size() == cols.size(), ErrorKind::ContractViolation, "gather: index lists differ in length");
    const std::size_t width = a.cols();
    std::vector<std::size_t> flat(rows.size());
    std::vector<double> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] < a.rows() && cols[i] < width, ErrorKind::ContractViolation, "gather index out of range");
        flat[i] = rows[i] * width + cols[i];
        out[i] = a[flat[i]];
    }
    Tensor result = make_result({rows.size()}, std::move(out), "gather");
    if (Tape* tape = recording({&a})) {
        attach(tape, result, [o = result.node(), an = a.node(), flat = std::move(flat)] {
            const double* g = out_grad(o);
            double* ga = in_grad(an);
            if (!g || !ga) {
                return;
            }
            for (std::size_t i = 0; i < flat.size(); ++i) ga[flat[i]] += g[i];
        });
    }
    return result;
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    Tensor result = make_result({}, {total}, "sum");
    if (Tape* tape = recording({&a})) {
        attach(tape, result, [o = result.node(), an = a.node()] {
            const double* g = out_grad(o);
            double* ga = in_grad(an);
            if (!g || !ga) {
                return;
            }
            for (std::size_t i = 0; i < an->data.size(); ++i) ga[i] += g[0];
        });
    }
    return result;
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
    require(rate >= 0.0 && rate < 1.0, ErrorKind::ContractViolation, "dropout rate outside [0,1)");
    if (rate == 0.0) {
        return a;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(a.size());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
        out[i] = a[i] * mask[i];
    }
    Tensor result = make_result(a.shape(), std::move(out), "dropout");
    if (Tape* tape = recording({&a})) {
        attach(tape, result, [o = result.node(), an = a.node(), mask = std::move(mask)] {
            const double* g = out_grad(o);
            double* ga = in_grad(an);
            if (!g || !ga) {
                return;
            }
            for (std::size_t i = 0; i < mask.size(); ++i) ga[i] += g[i] * mask[i];
        });
    }
    return result;
}

}  // namespace ops
}  // namespace lfd
