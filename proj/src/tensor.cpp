#include "ilq/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "ilq/errors.hpp"

namespace ilq {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<uint64_t> g_next_id{1};

int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

std::shared_ptr<TensorNode> new_node(std::vector<int> shape, std::vector<float> data) {
    auto n = std::make_shared<TensorNode>();
    if ((int64_t)data.size() != numel(shape)) {
        throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    std::vector<float> data(static_cast<size_t>(numel(shape)), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
    auto n = new_node(std::move(shape), std::move(data));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

float Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
    }
    return n_->data[0];
}

Tensor Tensor::clone() const {
    return Tensor::from_data(n_->shape, n_->data, n_->requires_grad);
}

Tensor make_op_node(std::vector<int> shape, std::vector<float> data, std::string op,
                    std::vector<Tensor> parents, std::function<void(TensorNode&)> backward_fn) {
    auto n = new_node(std::move(shape), std::move(data));
    n->op = std::move(op);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

namespace {

// iterative post-order DFS; inputs come before outputs
std::vector<TensorNode*> topo_order(TensorNode* root) {
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (!visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

ComputationTape ComputationTape::record(const Tensor& root) {
    ComputationTape tape;
    for (TensorNode* n : topo_order(root.node().get())) {
        Entry e;
        e.output = n->id;
        e.op = n->op;
        for (const auto& p : n->parents) e.inputs.push_back(p->id);
        tape.entries.push_back(std::move(e));
    }
    return tape;
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    auto order = topo_order(loss.node().get());
    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (!n->backward_fn) continue;
        n->ensure_grad();
        for (auto& p : n->parents) p->ensure_grad();
        n->backward_fn(*n);
    }
}

// ---- elementwise ----------------------------------------------------------

namespace {

Tensor unary_op(const Tensor& a, const char* name, float (*fwd)(float),
                float (*dfy)(float x, float y)) {
    std::vector<float> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
    auto an = a.node();
    return make_op_node(a.shape(), std::move(out), name, {a}, [an, dfy](TensorNode& self) {
        if (!an->requires_grad) return;
        for (size_t i = 0; i < self.data.size(); ++i) {
            an->grad[i] += self.grad[i] * dfy(an->data[i], self.data[i]);
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<float> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    return make_op_node(a.shape(), std::move(out), "add", {a, b}, [an, bn](TensorNode& self) {
        if (an->requires_grad)
            for (size_t i = 0; i < self.data.size(); ++i) an->grad[i] += self.grad[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < self.data.size(); ++i) bn->grad[i] += self.grad[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<float> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node(), bn = b.node();
    return make_op_node(a.shape(), std::move(out), "sub", {a, b}, [an, bn](TensorNode& self) {
        if (an->requires_grad)
            for (size_t i = 0; i < self.data.size(); ++i) an->grad[i] += self.grad[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < self.data.size(); ++i) bn->grad[i] -= self.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<float> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    return make_op_node(a.shape(), std::move(out), "mul", {a, b}, [an, bn](TensorNode& self) {
        if (an->requires_grad)
            for (size_t i = 0; i < self.data.size(); ++i)
                an->grad[i] += self.grad[i] * bn->data[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < self.data.size(); ++i)
                bn->grad[i] += self.grad[i] * an->data[i];
    });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        a, "tanh", [](float x) { return std::tanh(x); },
        [](float, float y) { return 1.0f - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, "relu", [](float x) { return x > 0.0f ? x : 0.0f; },
        [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        a, "exp", [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& a) {
    for (float x : a.data()) {
        if (!(x > 0.0f)) {
            throw DomainError("log: input must be strictly positive, got " + std::to_string(x));
        }
    }
    return unary_op(
        a, "log", [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Tensor square(const Tensor& a) {
    return unary_op(
        a, "square", [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Tensor elementwise(EltOp op, const Tensor& a) {
    switch (op) {
        case EltOp::Tanh: return tanh(a);
        case EltOp::Relu: return relu(a);
        case EltOp::Exp: return exp(a);
        case EltOp::Log: return log(a);
        case EltOp::Square: return square(a);
        default: throw ShapeError("elementwise: op requires two arguments");
    }
}

Tensor elementwise(EltOp op, const Tensor& a, const Tensor& b) {
    switch (op) {
        case EltOp::Add: return add(a, b);
        case EltOp::Sub: return sub(a, b);
        case EltOp::Mul: return mul(a, b);
        default: throw ShapeError("elementwise: op requires one argument");
    }
}

// ---- structured ops --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<float> out(static_cast<size_t>(m) * n);
    const float* ad = a.data().data();
    const float* bd = b.data().data();
    // ikj order, double accumulator per output row; reduction stays sequential in k
    std::vector<double> acc(n);
    for (int i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            const float* brow = bd + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) acc[j] += av * brow[j];
        }
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = static_cast<float>(acc[j]);
    }
    auto an = a.node(), bn = b.node();
    return make_op_node({m, n}, std::move(out), "matmul", {a, b},
                        [an, bn, m, k, n](TensorNode& self) {
                            const float* g = self.grad.data();
                            if (an->requires_grad) {
                                // dA = dC * B^T
                                for (int i = 0; i < m; ++i) {
                                    for (int p = 0; p < k; ++p) {
                                        double s = 0.0;
                                        const float* brow = bn->data.data() + static_cast<size_t>(p) * n;
                                        const float* grow = g + static_cast<size_t>(i) * n;
                                        for (int j = 0; j < n; ++j) s += (double)grow[j] * brow[j];
                                        an->grad[static_cast<size_t>(i) * k + p] += static_cast<float>(s);
                                    }
                                }
                            }
                            if (bn->requires_grad) {
                                // dB = A^T * dC
                                for (int p = 0; p < k; ++p) {
                                    for (int i = 0; i < m; ++i) {
                                        const double av = an->data[static_cast<size_t>(i) * k + p];
                                        if (av == 0.0) continue;
                                        const float* grow = g + static_cast<size_t>(i) * n;
                                        float* brow = bn->grad.data() + static_cast<size_t>(p) * n;
                                        for (int j = 0; j < n; ++j)
                                            brow[j] += static_cast<float>(av * grow[j]);
                                    }
                                }
                            }
                        });
}

Tensor add_bias(const Tensor& m, const Tensor& bias) {
    if (m.shape().size() != 2 || bias.shape().size() != 1 || bias.shape()[0] != m.shape()[1]) {
        throw ShapeError("add_bias: incompatible shapes " + shape_str(m.shape()) + " and " +
                         shape_str(bias.shape()));
    }
    const int rows = m.shape()[0], cols = m.shape()[1];
    std::vector<float> out(m.data().size());
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out[static_cast<size_t>(i) * cols + j] = m.data()[static_cast<size_t>(i) * cols + j] + bias.data()[j];
    auto mn = m.node(), bn = bias.node();
    return make_op_node(m.shape(), std::move(out), "add_bias", {m, bias},
                        [mn, bn, rows, cols](TensorNode& self) {
                            if (mn->requires_grad)
                                for (size_t i = 0; i < self.data.size(); ++i)
                                    mn->grad[i] += self.grad[i];
                            if (bn->requires_grad)
                                for (int i = 0; i < rows; ++i)
                                    for (int j = 0; j < cols; ++j)
                                        bn->grad[j] += self.grad[static_cast<size_t>(i) * cols + j];
                        });
}

Tensor rep_rows(const Tensor& v, int rows) {
    if (v.shape().size() != 1 || rows < 1) {
        throw ShapeError("rep_rows: need 1-D input and rows >= 1, got " + shape_str(v.shape()));
    }
    const int cols = v.shape()[0];
    std::vector<float> out(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out[static_cast<size_t>(i) * cols + j] = v.data()[j];
    auto vn = v.node();
    return make_op_node({rows, cols}, std::move(out), "rep_rows", {v},
                        [vn, rows, cols](TensorNode& self) {
                            if (!vn->requires_grad) return;
                            for (int i = 0; i < rows; ++i)
                                for (int j = 0; j < cols; ++j)
                                    vn->grad[j] += self.grad[static_cast<size_t>(i) * cols + j];
                        });
}

Tensor row_sum(const Tensor& m) {
    if (m.shape().size() != 2) {
        throw ShapeError("row_sum: need 2-D input, got " + shape_str(m.shape()));
    }
    const int rows = m.shape()[0], cols = m.shape()[1];
    std::vector<float> out(rows);
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += m.data()[static_cast<size_t>(i) * cols + j];
        out[i] = static_cast<float>(s);
    }
    auto mn = m.node();
    return make_op_node({rows}, std::move(out), "row_sum", {m},
                        [mn, rows, cols](TensorNode& self) {
                            if (!mn->requires_grad) return;
                            for (int i = 0; i < rows; ++i)
                                for (int j = 0; j < cols; ++j)
                                    mn->grad[static_cast<size_t>(i) * cols + j] += self.grad[i];
                        });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (float x : a.data()) s += x;
    auto an = a.node();
    return make_op_node({1}, {static_cast<float>(s)}, "sum", {a}, [an](TensorNode& self) {
        if (!an->requires_grad) return;
        for (size_t i = 0; i < an->data.size(); ++i) an->grad[i] += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    double s = 0.0;
    for (float x : a.data()) s += x;
    auto an = a.node();
    return make_op_node({1}, {static_cast<float>(s * inv)}, "mean", {a},
                        [an, inv](TensorNode& self) {
                            if (!an->requires_grad) return;
                            const float g = self.grad[0] * static_cast<float>(inv);
                            for (size_t i = 0; i < an->data.size(); ++i) an->grad[i] += g;
                        });
}

Tensor scale(const Tensor& a, float c) {
    std::vector<float> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto an = a.node();
    return make_op_node(a.shape(), std::move(out), "scale", {a}, [an, c](TensorNode& self) {
        if (!an->requires_grad) return;
        for (size_t i = 0; i < self.data.size(); ++i) an->grad[i] += self.grad[i] * c;
    });
}

Tensor add_scalar(const Tensor& a, float c) {
    std::vector<float> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
    auto an = a.node();
    return make_op_node(a.shape(), std::move(out), "add_scalar", {a}, [an](TensorNode& self) {
        if (!an->requires_grad) return;
        for (size_t i = 0; i < self.data.size(); ++i) an->grad[i] += self.grad[i];
    });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    check_same_shape("minimum", a, b);
    std::vector<float> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(a.data()[i], b.data()[i]);
    auto an = a.node(), bn = b.node();
    // ties route the gradient to the first argument
    return make_op_node(a.shape(), std::move(out), "minimum", {a, b}, [an, bn](TensorNode& self) {
        for (size_t i = 0; i < self.data.size(); ++i) {
            const bool pick_a = an->data[i] <= bn->data[i];
            if (pick_a && an->requires_grad) an->grad[i] += self.grad[i];
            if (!pick_a && bn->requires_grad) bn->grad[i] += self.grad[i];
        }
    });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
    std::vector<float> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(a.data()[i], lo), hi);
    auto an = a.node();
    return make_op_node(a.shape(), std::move(out), "clamp", {a}, [an, lo, hi](TensorNode& self) {
        if (!an->requires_grad) return;
        for (size_t i = 0; i < self.data.size(); ++i) {
            if (an->data[i] >= lo && an->data[i] <= hi) an->grad[i] += self.grad[i];
        }
    });
}

Tensor detach(const Tensor& a) { return Tensor::from_data(a.shape(), a.data(), false); }

// ---- Adam -------------------------------------------------------------------

void adam_step(std::vector<Tensor>& params, AdamState& state, float lr, float beta1, float beta2,
               float eps) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t p = 0; p < params.size(); ++p) {
            state.m[p].assign(params[p].data().size(), 0.0f);
            state.v[p].assign(params[p].data().size(), 0.0f);
        }
    }
    if (state.m.size() != params.size()) {
        throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " params, got " + std::to_string(params.size()));
    }
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(state.step_count));
    for (size_t p = 0; p < params.size(); ++p) {
        auto& data = params[p].data();
        const auto& grad = params[p].grad();
        if (state.m[p].size() != data.size()) {
            throw ShapeError("adam_step: state size mismatch for param " + std::to_string(p));
        }
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (size_t i = 0; i < data.size(); ++i) {
            const float g = grad[i];
            if (!std::isfinite(g)) {
                throw NumericalError("adam_step: non-finite gradient at param " +
                                     std::to_string(p) + " index " + std::to_string(i));
            }
            m[i] = beta1 * m[i] + (1.0f - beta1) * g;
            v[i] = beta2 * v[i] + (1.0f - beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            data[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

}  // namespace ilq
