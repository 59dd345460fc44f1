#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ilq/envs.hpp"
#include "ilq/policy.hpp"

namespace ilq {

enum class DataSource { Expert, FpPolicy };

struct DataPair {
    std::vector<float> obs;
    std::vector<float> action;
    DataSource source = DataSource::Expert;
};

struct Dataset {
    std::string env;
    std::vector<DataPair> pairs;

    size_t size() const { return pairs.size(); }
};

Dataset dataset_from_trajectories(const std::vector<Trajectory>& trajs, DataSource source);
// multiset union, expert block first, source tags preserved
Dataset build_qail_dataset(const Dataset& expert, const Dataset& fp);

struct QailConfig {
    std::string env = "cartpole";
    double lambda = 1.0;  // QBC weight
    double beta = 2.0;    // wQBC boost, must stay > 1 when wqbc_enabled
    int bits = 4;
    std::string method = "lsq";
    std::string granularity = "per_tensor";
    double learning_rate = 3e-4;
    int steps = 3000;
    int batch_size = 128;
    bool wqbc_enabled = false;
    double threshold = -1.0;  // < 0: calibrated from data each epoch
    double il_weight = 1.0;   // 0 gives the QBC-only ablation
    int fp_episodes = 40;
    bool collect_deterministic = false;
    bool qbc_on_policy = false;  // draw QBC states from fresh pi_q rollouts

    void validate() const;
    PolicyQuantConfig quant_config() const;
};

// -(1/|batch|) sum log pi_q(a|s)
Tensor il_loss(const GaussianPolicy& policy, const Tensor& obs, const Tensor& actions);

// mean over states of ||out_q(s) - out_fp(s)||^2 on the (mu, log_std) output
// vector, optionally weighted per state; the teacher must carry no gradients
Tensor qbc_loss(const GaussianPolicy& policy_q, const GaussianPolicy& policy_fp, const Tensor& obs,
                const std::vector<float>& state_weights = {});

// alpha = beta if mean_saliency > threshold (strict), else 1
float wqbc_alpha(float mean_saliency, float threshold, float beta);

// nearest-rank percentile of mean saliency over a seeded sample of the dataset
float calibrate_threshold(const GaussianPolicy& policy_q, const Dataset& dataset,
                          double fraction = 0.10, double quantile = 0.80, uint64_t seed = 0);
// same computation, exposing the sampled indices and scores for the training loop
struct CalibrationResult {
    float threshold = 0;
    std::vector<size_t> indices;
    std::vector<float> scores;
};
CalibrationResult calibrate_threshold_detail(const GaussianPolicy& policy_q,
                                             const Dataset& dataset, double fraction,
                                             double quantile, uint64_t seed);

struct LossBreakdown {
    Tensor total;
    float il = 0, qbc = 0, alpha_mean = 1;
};
LossBreakdown total_loss(const GaussianPolicy& policy_q, const GaussianPolicy& policy_fp,
                         const Tensor& obs, const Tensor& actions, const QailConfig& cfg,
                         const std::vector<float>& alphas = {});

struct TrainLogRow {
    int step = 0;
    double il_loss = 0, qbc_loss = 0, alpha_mean = 1, total_loss = 0, lr = 0;
};

// plain behavior cloning for the full-precision policy
struct BcConfig {
    double learning_rate = 3e-4;
    int steps = 4000;
    int batch_size = 128;
    std::vector<int> hidden = {256, 256};

    void validate() const;
};

struct BcResult {
    GaussianPolicy policy;
    std::vector<TrainLogRow> log;
    bool aborted = false;
};

BcResult train_bc(const Dataset& data, const BcConfig& cfg, const Env& proto, uint64_t seed);

struct QailResult {
    GaussianPolicy policy;
    std::vector<TrainLogRow> log;
    bool aborted = false;       // non-finite loss; policy holds the last good state
    double threshold = -1.0;    // last calibrated wQBC threshold, if any
};

// activation steps from a 5-episode seeded rollout of the given policy
std::vector<float> calibrate_activation_steps(const GaussianPolicy& p, const Env& proto, int bits,
                                              uint64_t seed, int episodes = 5);
// clone fp and attach quantizers: weight steps via init_step_size, activation
// steps via calibration rollouts; latent weights stay at the FP values
GaussianPolicy attach_ptq_quantizers(const GaussianPolicy& fp, const PolicyQuantConfig& cfg,
                                     const Env& proto, uint64_t seed);
// post-training RTN baseline: quantizers attached and weights snapped onto the
// quantizer grid, no training
GaussianPolicy ptq_rtn(const GaussianPolicy& fp, int bits, const Env& proto, uint64_t seed,
                       QuantMethod method = QuantMethod::RTN,
                       Granularity granularity = Granularity::PerTensor);

// Algorithm: init pi_q from pi_fp, collect D_FP with pi_fp, train on the
// union with total_loss under STE gradients
QailResult train_qail(const GaussianPolicy& fp, const Dataset& d_expert, const QailConfig& cfg,
                      const Env& proto, uint64_t seed);

void save_train_log_jsonl(const std::vector<TrainLogRow>& log, const std::string& path);

}  // namespace ilq
