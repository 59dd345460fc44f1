#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ilq/envs.hpp"
#include "ilq/imitation.hpp"
#include "ilq/policy.hpp"

namespace ilq {

struct QarlConfig {
    std::string env = "cartpole";
    int bits = 4;
    std::string method = "lsq";
    std::string granularity = "per_tensor";
    double lambda = 1.0;  // QBC weight
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip_eps = 0.2;
    double learning_rate = 3e-4;
    int iterations = 15;
    int steps_per_iter = 1024;
    int epochs = 4;
    int minibatch = 64;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    std::vector<int> critic_hidden = {256, 256};

    void validate() const;
    PolicyQuantConfig quant_config() const;
};

// one iteration's rollout records; log-probs are stored at collection time and
// never recomputed
struct ExperienceBuffer {
    std::vector<std::vector<float>> obs;
    std::vector<std::vector<float>> actions;
    std::vector<float> logp_old;
    std::vector<float> rewards;
    std::vector<float> values;
    std::vector<float> dones;  // 1.0 when the step ended an episode
    float last_value = 0;      // v(s_T) bootstrap for a truncated tail

    size_t size() const { return rewards.size(); }
};

struct GaeResult {
    std::vector<float> advantages;  // normalized when requested
    std::vector<float> returns;     // raw advantages + values
};

// delta_t = r_t + gamma*v(s_{t+1})*(1-done_t) - v(s_t);
// A_t = sum_k (gamma*lambda)^k delta_{t+k}, cut at episode ends
GaeResult gae_advantages(const ExperienceBuffer& buf, float gamma = 0.99f, float lambda = 0.95f,
                         bool normalize = true);

// -mean(min(r*A, clip(r, 1-eps, 1+eps)*A)), r = exp(logp_new - logp_old)
Tensor ppo_clip_loss(const Tensor& logp_new, const std::vector<float>& logp_old,
                     const std::vector<float>& advantages, float eps = 0.2f);

Tensor qarl_total_loss(const Tensor& ppo, const Tensor& qbc, float lambda);

struct QarlLogRow {
    int iter = 0;
    double mean_return = 0, ppo_loss = 0, qbc_loss = 0, value_loss = 0, entropy = 0;
};

struct QarlResult {
    GaussianPolicy policy;
    std::vector<QarlLogRow> log;
    bool aborted = false;
};

// PPO over the fake-quantized actor initialized from the FP policy, with QBC
// regularization toward the frozen FP teacher on the on-policy buffer states
QarlResult train_qarl(const GaussianPolicy& fp, const Env& proto, const QarlConfig& cfg,
                      uint64_t seed);

void save_qarl_log_jsonl(const std::vector<QarlLogRow>& log, const std::string& path);

}  // namespace ilq
