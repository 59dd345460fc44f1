#include "ilq/quant.hpp"

#include <algorithm>
#include <cmath>

#include "ilq/errors.hpp"

namespace ilq {

std::string to_string(Granularity g) {
    return g == Granularity::PerTensor ? "per_tensor" : "per_channel";
}

std::string to_string(QuantMethod m) { return m == QuantMethod::RTN ? "rtn" : "lsq"; }

Granularity granularity_from_string(const std::string& s) {
    if (s == "per_tensor") return Granularity::PerTensor;
    if (s == "per_channel") return Granularity::PerChannel;
    throw ConfigError("unknown granularity '" + s + "' (per_tensor|per_channel)");
}

QuantMethod method_from_string(const std::string& s) {
    if (s == "rtn") return QuantMethod::RTN;
    if (s == "lsq") return QuantMethod::LSQ;
    throw ConfigError("unknown quant method '" + s + "' (rtn|lsq)");
}

void QuantSpec::validate() const {
    if (bits != 2 && bits != 4 && bits != 8) {
        throw ConfigError("quant bits must be one of {2,4,8}, got " + std::to_string(bits));
    }
}

float round_half_even(float x) {
    const float f = std::floor(x);
    const float d = x - f;
    if (d < 0.5f) return f;
    if (d > 0.5f) return f + 1.0f;
    return std::fmod(f, 2.0f) == 0.0f ? f : f + 1.0f;
}

RtnResult rtn_quantize(const std::vector<float>& w, float s, const QuantSpec& spec) {
    if (!(s > 0.0f)) {
        throw DomainError("rtn_quantize: step size must be positive, got " + std::to_string(s));
    }
    const float qn = static_cast<float>(spec.qmin());
    const float qp = static_cast<float>(spec.qmax());
    RtnResult r;
    r.q.resize(w.size());
    r.dq.resize(w.size());
    for (size_t i = 0; i < w.size(); ++i) {
        const float u = std::min(std::max(w[i] / s, qn), qp);
        const float n = round_half_even(u);
        r.q[i] = static_cast<int>(n);
        r.dq[i] = n * s;
    }
    return r;
}

std::vector<float> ste_weight_grad(const std::vector<float>& w, float s, const QuantSpec& spec,
                                   const std::vector<float>& upstream) {
    const float qn = static_cast<float>(spec.qmin());
    const float qp = static_cast<float>(spec.qmax());
    std::vector<float> g(w.size(), 0.0f);
    for (size_t i = 0; i < w.size(); ++i) {
        const float u = w[i] / s;
        if (u >= qn && u <= qp) g[i] = upstream[i];
    }
    return g;
}

float lsq_step_grad(const std::vector<float>& w, float s, const QuantSpec& spec,
                    const std::vector<float>& upstream) {
    const float qn = static_cast<float>(spec.qmin());
    const float qp = static_cast<float>(spec.qmax());
    const double gscale = 1.0 / std::sqrt(static_cast<double>(w.size()) * spec.qmax());
    double acc = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        const float u = w[i] / s;
        float dds;
        if (u < qn) {
            dds = qn;
        } else if (u > qp) {
            dds = qp;
        } else {
            dds = round_half_even(u) - u;
        }
        acc += static_cast<double>(upstream[i]) * dds;
    }
    return static_cast<float>(gscale * acc);
}

float init_step_size(const std::vector<float>& w, const QuantSpec& spec) {
    if (w.empty()) throw DomainError("init_step_size: empty tensor");
    double mean_abs = 0.0;
    for (float x : w) mean_abs += std::fabs(x);
    mean_abs /= static_cast<double>(w.size());
    const float s = static_cast<float>(2.0 * mean_abs / std::sqrt(static_cast<double>(spec.qmax())));
    return s > 0.0f ? s : 1e-3f;
}

FakeQuantizer FakeQuantizer::make(QuantSpec spec, std::vector<float> steps) {
    spec.validate();
    if (steps.empty()) throw ConfigError("FakeQuantizer: need at least one step size");
    for (float& s : steps) s = std::max(s, kStepFloor);
    FakeQuantizer q;
    q.spec = spec;
    const int n = static_cast<int>(steps.size());
    q.step = Tensor::from_data({n}, std::move(steps), spec.method == QuantMethod::LSQ);
    return q;
}

void FakeQuantizer::clamp_step() {
    for (float& s : step.data()) s = std::max(s, kStepFloor);
}

Tensor fake_quant_forward(const Tensor& x, const FakeQuantizer& q) {
    const bool per_channel = q.spec.granularity == Granularity::PerChannel;
    const int n_steps = q.step.shape()[0];
    if (per_channel) {
        if (!q.spec.is_signed) {
            throw ConfigError("fake_quant_forward: per-channel mode is for weight tensors only");
        }
        if (x.shape().size() != 2 || x.shape()[1] != n_steps) {
            throw ShapeError("fake_quant_forward: per-channel step count " +
                             std::to_string(n_steps) + " does not match weight columns");
        }
    } else if (n_steps != 1) {
        throw ShapeError("fake_quant_forward: per-tensor quantizer must hold one step size");
    }

    const float qn = static_cast<float>(q.spec.qmin());
    const float qp = static_cast<float>(q.spec.qmax());
    const int cols = per_channel ? x.shape()[1] : 1;
    const auto& steps = q.step.data();
    for (float s : steps) {
        if (!(s > 0.0f)) {
            throw DomainError("fake_quant_forward: step size must be positive, got " +
                              std::to_string(s));
        }
    }

    std::vector<float> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        const float s = steps[per_channel ? (i % cols) : 0];
        const float u = std::min(std::max(x.data()[i] / s, qn), qp);
        out[i] = round_half_even(u) * s;
    }

    auto xn = x.node();
    auto sn = q.step.node();
    const bool lsq = q.spec.method == QuantMethod::LSQ;
    return make_op_node(
        x.shape(), std::move(out), "fake_quant", {x, q.step},
        [xn, sn, qn, qp, per_channel, cols, lsq](TensorNode& self) {
            const size_t n = self.data.size();
            const double gscale =
                1.0 / std::sqrt(static_cast<double>(n) * static_cast<double>(qp));
            std::vector<double> sacc(sn->data.size(), 0.0);
            for (size_t i = 0; i < n; ++i) {
                const size_t ch = per_channel ? (i % cols) : 0;
                const float s = sn->data[ch];
                const float u = xn->data[i] / s;
                if (xn->requires_grad && u >= qn && u <= qp) {
                    xn->grad[i] += self.grad[i];
                }
                if (lsq && sn->requires_grad) {
                    float dds;
                    if (u < qn) {
                        dds = qn;
                    } else if (u > qp) {
                        dds = qp;
                    } else {
                        dds = round_half_even(u) - u;
                    }
                    sacc[ch] += static_cast<double>(self.grad[i]) * dds;
                }
            }
            if (lsq && sn->requires_grad) {
                for (size_t ch = 0; ch < sacc.size(); ++ch) {
                    sn->grad[ch] += static_cast<float>(gscale * sacc[ch]);
                }
            }
        });
}

}  // namespace ilq
