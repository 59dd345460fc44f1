#include "ilq/imitation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "ilq/errors.hpp"
#include "ilq/saliency.hpp"

namespace ilq {

Dataset dataset_from_trajectories(const std::vector<Trajectory>& trajs, DataSource source) {
    Dataset d;
    if (!trajs.empty()) d.env = trajs.front().env;
    for (const auto& t : trajs) {
        if (t.env != d.env) throw ConfigError("dataset: mixed env provenance in trajectories");
        for (const auto& s : t.steps) d.pairs.push_back({s.obs, s.action, source});
    }
    return d;
}

Dataset build_qail_dataset(const Dataset& expert, const Dataset& fp) {
    if (!expert.env.empty() && !fp.env.empty() && expert.env != fp.env) {
        throw ConfigError("build_qail_dataset: env mismatch '" + expert.env + "' vs '" + fp.env +
                          "'");
    }
    Dataset d;
    d.env = expert.env.empty() ? fp.env : expert.env;
    d.pairs = expert.pairs;
    d.pairs.insert(d.pairs.end(), fp.pairs.begin(), fp.pairs.end());
    return d;
}

void QailConfig::validate() const {
    if (lambda < 0) throw ConfigError("qail: lambda must be >= 0");
    if (wqbc_enabled && !(beta > 1.0)) throw ConfigError("qail: beta must be > 1 for wQBC");
    if (il_weight < 0) throw ConfigError("qail: il_weight must be >= 0");
    if (batch_size < 1 || steps < 0) throw ConfigError("qail: bad steps/batch_size");
    QuantSpec spec;
    spec.bits = bits;
    spec.validate();
    method_from_string(method);
    granularity_from_string(granularity);
}

PolicyQuantConfig QailConfig::quant_config() const {
    PolicyQuantConfig q;
    q.bits = bits;
    q.method = method_from_string(method);
    q.granularity = granularity_from_string(granularity);
    return q;
}

namespace {

std::pair<Tensor, Tensor> batch_tensors(const Dataset& d, const std::vector<size_t>& idx) {
    const int b = static_cast<int>(idx.size());
    const int od = static_cast<int>(d.pairs[idx[0]].obs.size());
    const int ad = static_cast<int>(d.pairs[idx[0]].action.size());
    std::vector<float> obs(static_cast<size_t>(b) * od), act(static_cast<size_t>(b) * ad);
    for (int i = 0; i < b; ++i) {
        const auto& p = d.pairs[idx[i]];
        std::copy(p.obs.begin(), p.obs.end(), obs.begin() + static_cast<size_t>(i) * od);
        std::copy(p.action.begin(), p.action.end(), act.begin() + static_cast<size_t>(i) * ad);
    }
    return {Tensor::from_data({b, od}, std::move(obs)), Tensor::from_data({b, ad}, std::move(act))};
}

}  // namespace

Tensor il_loss(const GaussianPolicy& policy, const Tensor& obs, const Tensor& actions) {
    if (obs.shape()[0] == 0) throw ConfigError("il_loss: empty batch");
    return scale(mean(log_prob(policy, obs, actions)), -1.0f);
}

Tensor qbc_loss(const GaussianPolicy& policy_q, const GaussianPolicy& policy_fp, const Tensor& obs,
                const std::vector<float>& state_weights) {
    if (policy_q.input_dim() != policy_fp.input_dim() ||
        policy_q.action_dim() != policy_fp.action_dim()) {
        throw ShapeError("qbc_loss: policies disagree on input/output dims");
    }
    const int batch = obs.shape()[0];
    Tensor mu_q = forward(policy_q, obs);
    Tensor mu_fp;
    {
        NoGradGuard ng;
        mu_fp = forward(policy_fp, obs);
    }
    Tensor d2 = row_sum(square(sub(mu_q, mu_fp)));  // [B]
    Tensor lsd = sum(square(sub(policy_q.log_std, detach(policy_fp.log_std))));
    if (state_weights.empty()) {
        return add(mean(d2), lsd);
    }
    if (static_cast<int>(state_weights.size()) != batch) {
        throw ShapeError("qbc_loss: weight count does not match batch");
    }
    double wsum = 0;
    for (float w : state_weights) wsum += w;
    const float wmean = static_cast<float>(wsum / batch);
    Tensor w = Tensor::from_data({batch}, state_weights);
    return add(mean(mul(w, d2)), scale(lsd, wmean));
}

float wqbc_alpha(float mean_saliency, float threshold, float beta) {
    if (!(beta > 1.0f)) throw ConfigError("wqbc_alpha: beta must be > 1");
    return mean_saliency > threshold ? beta : 1.0f;
}

CalibrationResult calibrate_threshold_detail(const GaussianPolicy& policy_q,
                                             const Dataset& dataset, double fraction,
                                             double quantile, uint64_t seed) {
    const size_t n = dataset.size();
    const size_t take = static_cast<size_t>(fraction * static_cast<double>(n));
    if (take < 10) {
        throw ConfigError("calibrate_threshold: need fraction*|dataset| >= 10 states, got " +
                          std::to_string(take));
    }
    auto env = make_env(dataset.env);
    auto [rows, cols, offset] = env->grid_layout();
    if (rows == 0) {
        throw ConfigError("calibrate_threshold: env '" + dataset.env +
                          "' has no grid observation");
    }
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(stream_seed(seed, 0xca11b));
    rng.shuffle(order);
    CalibrationResult r;
    r.indices.assign(order.begin(), order.begin() + take);
    r.scores.assign(take, 0.0f);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(take); ++i) {
        r.scores[i] =
            mean_saliency(policy_q, dataset.pairs[r.indices[i]].obs, rows, cols, offset);
    }
    std::vector<float> sorted = r.scores;
    std::sort(sorted.begin(), sorted.end());
    const size_t rank = static_cast<size_t>(std::ceil(quantile * static_cast<double>(take)));
    r.threshold = sorted[std::min(rank, take) - 1];  // nearest-rank
    return r;
}

float calibrate_threshold(const GaussianPolicy& policy_q, const Dataset& dataset, double fraction,
                          double quantile, uint64_t seed) {
    return calibrate_threshold_detail(policy_q, dataset, fraction, quantile, seed).threshold;
}

LossBreakdown total_loss(const GaussianPolicy& policy_q, const GaussianPolicy& policy_fp,
                         const Tensor& obs, const Tensor& actions, const QailConfig& cfg,
                         const std::vector<float>& alphas) {
    LossBreakdown out;
    Tensor il = il_loss(policy_q, obs, actions);
    out.il = il.item();
    if (cfg.lambda == 0.0) {
        // total == il exactly when lambda is zero
        out.total = cfg.il_weight == 1.0 ? il : scale(il, static_cast<float>(cfg.il_weight));
        out.qbc = 0;
        return out;
    }
    Tensor qbc = qbc_loss(policy_q, policy_fp, obs, alphas);
    out.qbc = qbc.item();
    if (!alphas.empty()) {
        double s = 0;
        for (float a : alphas) s += a;
        out.alpha_mean = static_cast<float>(s / static_cast<double>(alphas.size()));
    }
    Tensor weighted_il =
        cfg.il_weight == 1.0 ? il : scale(il, static_cast<float>(cfg.il_weight));
    out.total = add(weighted_il, scale(qbc, static_cast<float>(cfg.lambda)));
    return out;
}

std::vector<float> calibrate_activation_steps(const GaussianPolicy& p, const Env& proto, int bits,
                                              uint64_t seed, int episodes) {
    QuantSpec aspec;
    aspec.bits = bits;
    aspec.is_signed = false;
    const int hidden_layers = p.n_layers() - 1;
    std::vector<float> maxima(hidden_layers, 0.0f);
    for (int e = 0; e < episodes; ++e) {
        auto env = proto.clone_config();
        Trajectory t = rollout_policy(*env, p, seed + e, /*deterministic=*/true);
        for (const auto& s : t.steps) {
            const auto acts = hidden_activations(p, s.obs);
            for (int l = 0; l < hidden_layers; ++l) {
                for (float v : acts[l]) maxima[l] = std::max(maxima[l], v);
            }
        }
    }
    std::vector<float> steps(hidden_layers);
    for (int l = 0; l < hidden_layers; ++l) {
        steps[l] = maxima[l] > 0.0f ? maxima[l] / static_cast<float>(aspec.qmax()) : 1e-3f;
    }
    return steps;
}

GaussianPolicy attach_ptq_quantizers(const GaussianPolicy& fp, const PolicyQuantConfig& cfg,
                                     const Env& proto, uint64_t seed) {
    GaussianPolicy q = clone_policy(fp);
    attach_quantizers(q, cfg, calibrate_activation_steps(fp, proto, cfg.bits, seed));
    set_requires_grad(q, true);
    return q;
}

GaussianPolicy ptq_rtn(const GaussianPolicy& fp, int bits, const Env& proto, uint64_t seed,
                       QuantMethod method, Granularity granularity) {
    PolicyQuantConfig cfg;
    cfg.bits = bits;
    cfg.method = method;
    cfg.granularity = granularity;
    GaussianPolicy q = attach_ptq_quantizers(fp, cfg, proto, seed);
    // snap weights onto the quantizer grid; the forward pass re-quantizes
    // idempotently so eval sees exactly these values
    for (size_t l = 0; l < q.weight_quant.size(); ++l) {
        auto& w = q.weights[l].data();
        const auto& spec = q.weight_quant[l].spec;
        const auto& steps = q.weight_quant[l].step.data();
        if (spec.granularity == Granularity::PerChannel) {
            const int cols = q.layer_dims[l + 1];
            for (size_t i = 0; i < w.size(); ++i) {
                const float s = steps[i % cols];
                auto r = rtn_quantize({w[i]}, s, spec);
                w[i] = r.dq[0];
            }
        } else {
            auto r = rtn_quantize(w, steps[0], spec);
            w = std::move(r.dq);
        }
    }
    q.provenance = "ptq_" + to_string(method) + "_b" + std::to_string(bits);
    return q;
}

QailResult train_qail(const GaussianPolicy& fp, const Dataset& d_expert, const QailConfig& cfg,
                      const Env& proto, uint64_t seed) {
    cfg.validate();
    if (d_expert.size() == 0) throw ConfigError("train_qail: empty expert dataset");

    GaussianPolicy teacher = clone_policy(fp);
    set_requires_grad(teacher, false);

    // initialize pi_q from pi_fp with PTQ-style quantizer attachment
    GaussianPolicy q =
        attach_ptq_quantizers(fp, cfg.quant_config(), proto, stream_seed(seed, 0xca1b0));
    q.provenance = "qail_b" + std::to_string(cfg.bits);
    q.env_name = proto.name();
    q.seed = seed;

    // collect D_FP with the full-precision policy, then take the union
    Dataset d_fp;
    if (cfg.fp_episodes > 0) {
        auto trajs = collect_policy(proto, teacher, cfg.fp_episodes, stream_seed(seed, 0xdf0),
                                    cfg.collect_deterministic, "fp_policy");
        d_fp = dataset_from_trajectories(trajs, DataSource::FpPolicy);
    }
    Dataset data = build_qail_dataset(d_expert, d_fp);

    auto [grid_rows, grid_cols, grid_off] = proto.grid_layout();
    (void)grid_cols;
    (void)grid_off;
    if (cfg.wqbc_enabled && grid_rows == 0) {
        throw ConfigError("train_qail: wQBC needs a grid observation env");
    }

    // optional on-policy QBC state buffer, refreshed each epoch
    Dataset qbc_states;

    QailResult result;
    std::vector<Tensor> params = trainable_params(q);
    AdamState adam;
    Rng shuffle_rng(stream_seed(seed, 0x5f1e));
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const int steps_per_epoch =
        std::max<int>(1, static_cast<int>((data.size() + cfg.batch_size - 1) / cfg.batch_size));

    GaussianPolicy last_good = clone_policy(q);

    std::unordered_map<size_t, float> alpha_by_index;
    double threshold = cfg.threshold;

    for (int step = 0; step < cfg.steps; ++step) {
        const int in_epoch = step % steps_per_epoch;
        if (in_epoch == 0) {
            shuffle_rng.shuffle(order);
            if (cfg.wqbc_enabled) {
                auto calib =
                    calibrate_threshold_detail(q, data, 0.10, 0.80, stream_seed(seed, 0xca7));
                threshold = cfg.threshold >= 0 ? cfg.threshold : calib.threshold;
                alpha_by_index.clear();
                for (size_t i = 0; i < calib.indices.size(); ++i) {
                    alpha_by_index[calib.indices[i]] =
                        wqbc_alpha(calib.scores[i], static_cast<float>(threshold),
                                   static_cast<float>(cfg.beta));
                }
            }
            if (cfg.qbc_on_policy) {
                auto trajs = collect_policy(proto, q, 4, stream_seed(seed, 0x0b5e + step), false,
                                            "pi_q");
                qbc_states = dataset_from_trajectories(trajs, DataSource::FpPolicy);
            }
        }

        std::vector<size_t> idx;
        idx.reserve(cfg.batch_size);
        for (int i = 0; i < cfg.batch_size; ++i) {
            idx.push_back(
                order[(static_cast<size_t>(in_epoch) * cfg.batch_size + i) % data.size()]);
        }
        auto [obs, act] = batch_tensors(data, idx);

        std::vector<float> alphas;
        if (cfg.wqbc_enabled) {
            alphas.resize(idx.size(), 1.0f);
            for (size_t i = 0; i < idx.size(); ++i) {
                auto it = alpha_by_index.find(idx[i]);
                if (it != alpha_by_index.end()) alphas[i] = it->second;
            }
        }

        LossBreakdown loss;
        if (cfg.qbc_on_policy && cfg.lambda > 0 && qbc_states.size() > 0) {
            // QBC states drawn from fresh pi_q rollouts instead of the batch
            std::vector<size_t> sidx(idx.size());
            for (size_t i = 0; i < sidx.size(); ++i) {
                sidx[i] = static_cast<size_t>(shuffle_rng.uniform01() * qbc_states.size());
                if (sidx[i] >= qbc_states.size()) sidx[i] = qbc_states.size() - 1;
            }
            auto [sobs, sact] = batch_tensors(qbc_states, sidx);
            Tensor il = il_loss(q, obs, act);
            Tensor qbc = qbc_loss(q, teacher, sobs);
            loss.il = il.item();
            loss.qbc = qbc.item();
            Tensor weighted_il =
                cfg.il_weight == 1.0 ? il : scale(il, static_cast<float>(cfg.il_weight));
            loss.total = add(weighted_il, scale(qbc, static_cast<float>(cfg.lambda)));
        } else {
            loss = total_loss(q, teacher, obs, act, cfg, alphas);
        }
        if (!std::isfinite(loss.total.item())) {
            q = std::move(last_good);
            result.aborted = true;
            break;
        }

        for (auto& p : params) p.zero_grad();
        backward(loss.total);
        try {
            adam_step(params, adam, static_cast<float>(cfg.learning_rate));
        } catch (const NumericalError&) {
            q = std::move(last_good);
            result.aborted = true;
            break;
        }
        post_update_clamp(q);
        last_good = clone_policy(q);

        result.log.push_back(
            {step, loss.il, loss.qbc, loss.alpha_mean, loss.total.item(), cfg.learning_rate});
    }

    result.threshold = threshold;
    result.policy = std::move(q);
    return result;
}

void BcConfig::validate() const {
    if (steps < 0 || batch_size < 1) throw ConfigError("bc: bad steps/batch_size");
    if (learning_rate <= 0) throw ConfigError("bc: learning_rate must be positive");
    for (int h : hidden) {
        if (h < 1) throw ConfigError("bc: hidden sizes must be >= 1");
    }
}

BcResult train_bc(const Dataset& data, const BcConfig& cfg, const Env& proto, uint64_t seed) {
    cfg.validate();
    if (data.size() == 0) throw ConfigError("train_bc: empty dataset");
    std::vector<int> dims;
    dims.push_back(proto.obs_dim());
    for (int h : cfg.hidden) dims.push_back(h);
    dims.push_back(proto.action_dim());

    BcResult result;
    GaussianPolicy p = init_policy(dims, seed);
    p.env_name = proto.name();
    p.seed = seed;
    p.provenance = "bc_fp";

    std::vector<Tensor> params = trainable_params(p);
    AdamState adam;
    Rng shuffle_rng(stream_seed(seed, 0x5f1e));
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    const int steps_per_epoch =
        std::max<int>(1, static_cast<int>((data.size() + cfg.batch_size - 1) / cfg.batch_size));

    GaussianPolicy last_good = clone_policy(p);
    for (int step = 0; step < cfg.steps; ++step) {
        const int in_epoch = step % steps_per_epoch;
        if (in_epoch == 0) shuffle_rng.shuffle(order);
        std::vector<size_t> idx;
        idx.reserve(cfg.batch_size);
        for (int i = 0; i < cfg.batch_size; ++i) {
            idx.push_back(
                order[(static_cast<size_t>(in_epoch) * cfg.batch_size + i) % data.size()]);
        }
        auto [obs, act] = batch_tensors(data, idx);
        Tensor loss = il_loss(p, obs, act);
        if (!std::isfinite(loss.item())) {
            p = std::move(last_good);
            result.aborted = true;
            break;
        }
        for (auto& prm : params) prm.zero_grad();
        backward(loss);
        try {
            adam_step(params, adam, static_cast<float>(cfg.learning_rate));
        } catch (const NumericalError&) {
            p = std::move(last_good);
            result.aborted = true;
            break;
        }
        post_update_clamp(p);
        last_good = clone_policy(p);
        result.log.push_back({step, loss.item(), 0.0, 1.0, loss.item(), cfg.learning_rate});
    }
    result.policy = std::move(p);
    return result;
}

void save_train_log_jsonl(const std::vector<TrainLogRow>& log, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const auto& r : log) {
        nlohmann::json j{{"step", r.step},       {"il_loss", r.il_loss},
                         {"qbc_loss", r.qbc_loss}, {"alpha_mean", r.alpha_mean},
                         {"total_loss", r.total_loss}, {"lr", r.lr}};
        f << j.dump() << "\n";
    }
}

}  // namespace ilq
