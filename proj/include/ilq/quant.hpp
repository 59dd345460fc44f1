#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ilq/tensor.hpp"

namespace ilq {

enum class Granularity { PerTensor, PerChannel };
enum class QuantMethod { RTN, LSQ };

std::string to_string(Granularity g);
std::string to_string(QuantMethod m);
Granularity granularity_from_string(const std::string& s);
QuantMethod method_from_string(const std::string& s);

struct QuantSpec {
    int bits = 8;
    bool is_signed = true;  // weights signed, activations unsigned
    Granularity granularity = Granularity::PerTensor;
    QuantMethod method = QuantMethod::LSQ;

    int qmin() const { return is_signed ? -(1 << (bits - 1)) : 0; }
    int qmax() const { return is_signed ? (1 << (bits - 1)) - 1 : (1 << bits) - 1; }
    void validate() const;  // bits in {2,4,8}
};

// round-half-to-even, independent of the FP environment rounding mode
float round_half_even(float x);

struct RtnResult {
    std::vector<int> q;    // integer codes in [qmin, qmax]
    std::vector<float> dq; // q * s
};

// w_bar = round(clip(w/s, qmin, qmax)), w_hat = w_bar * s
RtnResult rtn_quantize(const std::vector<float>& w, float s, const QuantSpec& spec);

// grad_w = upstream where qmin <= w/s <= qmax (closed interval), else 0
std::vector<float> ste_weight_grad(const std::vector<float>& w, float s, const QuantSpec& spec,
                                   const std::vector<float>& upstream);

// d(w_hat)/ds per element: round(w/s) - w/s inside the clip range, qmin below,
// qmax above; returns g * sum(upstream * d(w_hat)/ds) with g = 1/sqrt(N*qmax)
float lsq_step_grad(const std::vector<float>& w, float s, const QuantSpec& spec,
                    const std::vector<float>& upstream);

// s = 2*mean(|w|)/sqrt(qmax), with a 1e-3 floor for all-zero tensors
float init_step_size(const std::vector<float>& w, const QuantSpec& spec);

constexpr float kStepFloor = 1e-9f;

// Fake quantizer with an optionally trainable step size. The step lives in a
// Tensor so LSQ can update it through the same optimizer as the weights;
// per-channel mode keeps one step per output column of a weight matrix.
struct FakeQuantizer {
    QuantSpec spec;
    Tensor step;  // shape {1} per-tensor, {channels} per-channel

    static FakeQuantizer make(QuantSpec spec, std::vector<float> steps);
    // clamp after an optimizer step so s stays positive
    void clamp_step();
    bool trainable() const { return spec.method == QuantMethod::LSQ; }
};

// Quantize-dequantize with STE backward for x and (LSQ) the step-size gradient
// for s. Per-channel mode requires x to be a weight matrix [in x out] with the
// channel axis on the output dimension.
Tensor fake_quant_forward(const Tensor& x, const FakeQuantizer& q);

}  // namespace ilq
