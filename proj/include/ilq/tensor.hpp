#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ilq {

// Reverse-mode autodiff over dense row-major float32 tensors. Small by intent:
// enough for MLP policies, no broadcasting beyond bias-add / row replication.

bool grad_enabled();

// Disables graph recording in scope (teacher forwards, rollouts, evaluation).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

struct TensorNode {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Accumulates into parents' grads given this node's grad.
    std::function<void(TensorNode&)> backward_fn;
    uint64_t id = 0;

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<int>& shape() const { return n_->shape; }
    int64_t size() const { return n_->size(); }
    std::vector<float>& data() { return n_->data; }
    const std::vector<float>& data() const { return n_->data; }
    std::vector<float>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    const std::vector<float>& grad() const {
        n_->ensure_grad();
        return n_->grad;
    }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }
    float item() const;
    void zero_grad() { n_->grad.assign(n_->data.size(), 0.0f); }
    const std::string& op() const { return n_->op; }
    uint64_t id() const { return n_->id; }
    std::shared_ptr<TensorNode> node() const { return n_; }

    Tensor clone() const;  // copies data, drops graph

private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}
    std::shared_ptr<TensorNode> n_;
    friend Tensor make_op_node(std::vector<int> shape, std::vector<float> data, std::string op,
                               std::vector<Tensor> parents,
                               std::function<void(TensorNode&)> backward_fn);
};

// Internal helper used by ops (including fake quantization in quant.cpp).
Tensor make_op_node(std::vector<int> shape, std::vector<float> data, std::string op,
                    std::vector<Tensor> parents, std::function<void(TensorNode&)> backward_fn);

// Recorded forward graph in topological order: every entry's inputs appear
// earlier in the list; replaying in reverse visits each node exactly once.
struct ComputationTape {
    struct Entry {
        uint64_t output;
        std::vector<uint64_t> inputs;
        std::string op;
    };
    std::vector<Entry> entries;

    static ComputationTape record(const Tensor& root);
};

// Populates grads of every reachable requires_grad leaf. Loss must be scalar.
void backward(const Tensor& loss);

// ---- ops ----------------------------------------------------------------

enum class EltOp { Add, Sub, Mul, Tanh, Relu, Exp, Log, Square };

Tensor elementwise(EltOp op, const Tensor& a);
Tensor elementwise(EltOp op, const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
// [B x n] plus row vector [n]
Tensor add_bias(const Tensor& m, const Tensor& bias);
// replicate [n] into [rows x n]; backward sums over rows
Tensor rep_rows(const Tensor& v, int rows);
// [B x n] -> [B]
Tensor row_sum(const Tensor& m);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor scale(const Tensor& a, float c);
Tensor add_scalar(const Tensor& a, float c);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor clamp(const Tensor& a, float lo, float hi);
Tensor detach(const Tensor& a);

// ---- optimizer -----------------------------------------------------------

struct AdamState {
    std::vector<std::vector<float>> m, v;
    int64_t step_count = 0;
};

// Standard Adam update over leaf parameters; throws NumericalError on a
// non-finite gradient so the training loop can abort with the last-good state.
void adam_step(std::vector<Tensor>& params, AdamState& state, float lr, float beta1 = 0.9f,
               float beta2 = 0.999f, float eps = 1e-8f);

}  // namespace ilq
