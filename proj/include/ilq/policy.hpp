#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ilq/quant.hpp"
#include "ilq/rng.hpp"
#include "ilq/tensor.hpp"

namespace ilq {

// Bits/method/granularity of an attached quantizer set. Weights are signed,
// activations unsigned per-tensor; the final layer always stays full precision.
struct PolicyQuantConfig {
    int bits = 4;
    QuantMethod method = QuantMethod::LSQ;
    Granularity granularity = Granularity::PerTensor;
};

// MLP with tanh hidden activations mapping observations to a diagonal
// Gaussian: mu = MLP(obs), sigma = exp(log_std).
struct GaussianPolicy {
    std::vector<int> layer_dims;  // input, hidden..., action_dim
    std::vector<Tensor> weights;  // [in x out]
    std::vector<Tensor> biases;   // [out]
    Tensor log_std;               // [action_dim]

    std::optional<PolicyQuantConfig> quant;
    std::vector<FakeQuantizer> weight_quant;  // one per hidden layer
    std::vector<FakeQuantizer> act_quant;     // one per hidden activation

    std::string env_name;
    std::string provenance;
    uint64_t seed = 0;

    int input_dim() const { return layer_dims.front(); }
    int action_dim() const { return layer_dims.back(); }
    int n_layers() const { return static_cast<int>(weights.size()); }
    bool quantized() const { return quant.has_value(); }
};

GaussianPolicy init_policy(const std::vector<int>& layer_dims, uint64_t seed);
GaussianPolicy clone_policy(const GaussianPolicy& p);
void set_requires_grad(GaussianPolicy& p, bool rg);
// weights + biases + log_std, plus trainable quantizer steps
std::vector<Tensor> trainable_params(GaussianPolicy& p);
// keeps log_std and quantizer steps in their valid ranges after an update
void post_update_clamp(GaussianPolicy& p);

// Attach fake quantizers: weight steps from init_step_size, activation steps
// from the caller (typically a calibration rollout; see imitation module).
void attach_quantizers(GaussianPolicy& p, const PolicyQuantConfig& cfg,
                       const std::vector<float>& act_steps);

// obs [B x input_dim] -> mu [B x action_dim]; use_quant=false bypasses the
// quantizers and reproduces the full-precision forward bit for bit.
Tensor forward(const GaussianPolicy& p, const Tensor& obs, bool use_quant = true);

// log pi(a|s) per batch row, differentiable w.r.t. policy parameters
Tensor log_prob(const GaussianPolicy& p, const Tensor& obs, const Tensor& actions);

// graph-free single-observation helpers
std::pair<std::vector<float>, std::vector<float>> policy_mu_sigma(const GaussianPolicy& p,
                                                                  const std::vector<float>& obs);
// rng == nullptr selects the deterministic mode (returns mu)
std::vector<float> policy_act(const GaussianPolicy& p, const std::vector<float>& obs, Rng* rng);
float policy_log_prob_value(const GaussianPolicy& p, const std::vector<float>& obs,
                            const std::vector<float>& action);
// mu concatenated with log_std: the pre-distribution output vector used by the
// QBC discrepancy and the saliency score
std::vector<float> policy_output_vector(const GaussianPolicy& p, const std::vector<float>& obs);
// post-tanh hidden activations of the full-precision path, one vector per
// hidden layer; used to calibrate activation quantizer steps
std::vector<std::vector<float>> hidden_activations(const GaussianPolicy& p,
                                                   const std::vector<float>& obs);

// ---- checkpoint persistence (magic "ILQ1", versioned, little-endian) -------

inline constexpr uint32_t kCheckpointVersion = 1;

// Optional packed_section round-trips the deployment payload appended by the
// kernels module; save writes it verbatim after the float blobs.
void save_policy(const GaussianPolicy& p, const std::string& path,
                 const std::vector<uint8_t>* packed_section = nullptr);
GaussianPolicy load_policy(const std::string& path,
                           std::vector<uint8_t>* packed_section = nullptr);

}  // namespace ilq
