#include "ilq/qarl.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ilq/errors.hpp"

namespace ilq {

void QarlConfig::validate() const {
    if (lambda < 0) throw ConfigError("qarl: lambda must be >= 0");
    if (clip_eps <= 0 || clip_eps >= 1) throw ConfigError("qarl: clip_eps must be in (0,1)");
    if (iterations < 0 || steps_per_iter < 1 || epochs < 1 || minibatch < 1) {
        throw ConfigError("qarl: bad iteration/batch settings");
    }
    QuantSpec spec;
    spec.bits = bits;
    spec.validate();
    method_from_string(method);
    granularity_from_string(granularity);
}

PolicyQuantConfig QarlConfig::quant_config() const {
    PolicyQuantConfig q;
    q.bits = bits;
    q.method = method_from_string(method);
    q.granularity = granularity_from_string(granularity);
    return q;
}

GaeResult gae_advantages(const ExperienceBuffer& buf, float gamma, float lambda, bool normalize) {
    const size_t n = buf.size();
    if (n == 0) throw ConfigError("gae_advantages: empty buffer");
    GaeResult r;
    r.advantages.resize(n);
    r.returns.resize(n);
    double running = 0;
    for (size_t i = n; i-- > 0;) {
        const double not_done = 1.0 - buf.dones[i];
        const double next_v = (i + 1 < n) ? buf.values[i + 1] : buf.last_value;
        const double delta = buf.rewards[i] + gamma * next_v * not_done - buf.values[i];
        running = delta + gamma * lambda * not_done * running;
        r.advantages[i] = static_cast<float>(running);
        r.returns[i] = static_cast<float>(running + buf.values[i]);
    }
    if (normalize) {
        double mean = 0;
        for (float a : r.advantages) mean += a;
        mean /= static_cast<double>(n);
        double var = 0;
        for (float a : r.advantages) var += (a - mean) * (a - mean);
        const double sd = std::sqrt(var / static_cast<double>(n)) + 1e-8;
        for (float& a : r.advantages) a = static_cast<float>((a - mean) / sd);
    }
    return r;
}

Tensor ppo_clip_loss(const Tensor& logp_new, const std::vector<float>& logp_old,
                     const std::vector<float>& advantages, float eps) {
    const int n = logp_new.shape()[0];
    if (static_cast<int>(logp_old.size()) != n || static_cast<int>(advantages.size()) != n) {
        throw ShapeError("ppo_clip_loss: misaligned arrays");
    }
    Tensor old_t = Tensor::from_data({n}, logp_old);
    Tensor adv_t = Tensor::from_data({n}, advantages);
    Tensor ratio = exp(sub(logp_new, old_t));
    for (float v : ratio.data()) {
        if (!std::isfinite(v)) throw NumericalError("ppo_clip_loss: non-finite ratio");
    }
    Tensor unclipped = mul(ratio, adv_t);
    Tensor clipped = mul(clamp(ratio, 1.0f - eps, 1.0f + eps), adv_t);
    return scale(mean(minimum(unclipped, clipped)), -1.0f);
}

Tensor qarl_total_loss(const Tensor& ppo, const Tensor& qbc, float lambda) {
    if (lambda < 0) throw ConfigError("qarl_total_loss: lambda must be >= 0");
    if (lambda == 0.0f) return ppo;
    return add(ppo, scale(qbc, lambda));
}

namespace {

float critic_value(const GaussianPolicy& critic, const std::vector<float>& obs) {
    NoGradGuard ng;
    Tensor o = Tensor::from_data({1, static_cast<int>(obs.size())}, obs);
    return forward(critic, o).data()[0];
}

Tensor entropy_tensor(const GaussianPolicy& p) {
    // diagonal Gaussian: sum(log_std) + d/2 * log(2*pi*e)
    const float c = 0.5f * static_cast<float>(p.action_dim()) *
                    std::log(2.0f * static_cast<float>(std::numbers::pi) * std::exp(1.0f));
    return add_scalar(sum(p.log_std), c);
}

}  // namespace

QarlResult train_qarl(const GaussianPolicy& fp, const Env& proto, const QarlConfig& cfg,
                      uint64_t seed) {
    cfg.validate();

    GaussianPolicy teacher = clone_policy(fp);
    set_requires_grad(teacher, false);

    GaussianPolicy actor =
        attach_ptq_quantizers(fp, cfg.quant_config(), proto, stream_seed(seed, 0xca1b0));
    actor.provenance = "qarl_b" + std::to_string(cfg.bits);
    actor.env_name = proto.name();
    actor.seed = seed;

    std::vector<int> critic_dims;
    critic_dims.push_back(proto.obs_dim());
    for (int h : cfg.critic_hidden) critic_dims.push_back(h);
    critic_dims.push_back(1);
    GaussianPolicy critic = init_policy(critic_dims, stream_seed(seed, 0xc417));

    std::vector<Tensor> actor_params = trainable_params(actor);
    std::vector<Tensor> critic_params;
    for (auto& w : critic.weights) critic_params.push_back(w);
    for (auto& b : critic.biases) critic_params.push_back(b);
    AdamState actor_adam, critic_adam;

    QarlResult result;
    GaussianPolicy last_good = clone_policy(actor);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        // phase 1: collect with pi_q_theta_old
        ExperienceBuffer buf;
        auto env = proto.clone_config();
        int episode = 0;
        double episode_return_sum = 0;
        int episodes_started = 0;
        bool env_done = true;
        Rng action_rng(stream_seed(seed, 0xa0000 + static_cast<uint64_t>(iter)));
        std::vector<float> obs;
        while (buf.size() < static_cast<size_t>(cfg.steps_per_iter)) {
            if (env_done) {
                env->reset(stream_seed(seed, 0xe90000 + static_cast<uint64_t>(iter) * 4096 +
                                                 static_cast<uint64_t>(episode)));
                obs = env->observe();
                episode += 1;
                episodes_started += 1;
                env_done = false;
            }
            auto [mu, sigma] = policy_mu_sigma(actor, obs);
            std::vector<float> action(mu.size());
            for (size_t d = 0; d < mu.size(); ++d) {
                action[d] = mu[d] + sigma[d] * static_cast<float>(action_rng.normal());
            }
            buf.obs.push_back(obs);
            buf.actions.push_back(action);
            buf.logp_old.push_back(policy_log_prob_value(actor, obs, action));
            buf.values.push_back(critic_value(critic, obs));
            const StepOutcome out = env->step(action);
            buf.rewards.push_back(out.reward);
            buf.dones.push_back(out.done ? 1.0f : 0.0f);
            episode_return_sum += out.reward;
            env_done = out.done;
            obs = env->observe();
        }
        buf.last_value = env_done ? 0.0f : critic_value(critic, obs);

        // phase 2: advantages
        GaeResult gae = gae_advantages(buf, static_cast<float>(cfg.gamma),
                                       static_cast<float>(cfg.gae_lambda), true);

        // phase 3: clipped updates with QBC toward the FP teacher
        Rng shuffle_rng(stream_seed(seed, 0x50000 + static_cast<uint64_t>(iter)));
        std::vector<size_t> order(buf.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        QarlLogRow row;
        row.iter = iter;
        row.mean_return = episode_return_sum / std::max(1, episodes_started);
        int update_count = 0;
        bool aborted = false;
        for (int epoch = 0; epoch < cfg.epochs && !aborted; ++epoch) {
            shuffle_rng.shuffle(order);
            for (size_t start = 0; start + cfg.minibatch <= order.size() && !aborted;
                 start += cfg.minibatch) {
                const int b = cfg.minibatch;
                const int od = proto.obs_dim(), ad = proto.action_dim();
                std::vector<float> obs_flat(static_cast<size_t>(b) * od);
                std::vector<float> act_flat(static_cast<size_t>(b) * ad);
                std::vector<float> lp_old(b), adv(b), ret(b);
                for (int i = 0; i < b; ++i) {
                    const size_t s = order[start + i];
                    std::copy(buf.obs[s].begin(), buf.obs[s].end(),
                              obs_flat.begin() + static_cast<size_t>(i) * od);
                    std::copy(buf.actions[s].begin(), buf.actions[s].end(),
                              act_flat.begin() + static_cast<size_t>(i) * ad);
                    lp_old[i] = buf.logp_old[s];
                    adv[i] = gae.advantages[s];
                    ret[i] = gae.returns[s];
                }
                Tensor obs_t = Tensor::from_data({b, od}, std::move(obs_flat));
                Tensor act_t = Tensor::from_data({b, ad}, std::move(act_flat));

                Tensor lp_new = log_prob(actor, obs_t, act_t);
                Tensor ppo;
                try {
                    ppo = ppo_clip_loss(lp_new, lp_old, adv, static_cast<float>(cfg.clip_eps));
                } catch (const NumericalError&) {
                    aborted = true;
                    break;
                }
                Tensor qbc = qbc_loss(actor, teacher, obs_t);
                Tensor qtotal = qarl_total_loss(ppo, qbc, static_cast<float>(cfg.lambda));

                Tensor ret_t = Tensor::from_data({b, 1}, std::vector<float>(ret.begin(), ret.end()));
                Tensor v = forward(critic, obs_t);
                Tensor vloss = mean(square(sub(v, ret_t)));
                Tensor ent = entropy_tensor(actor);

                Tensor full = add(add(qtotal, scale(vloss, static_cast<float>(cfg.value_coef))),
                                  scale(ent, -static_cast<float>(cfg.entropy_coef)));
                if (!std::isfinite(full.item())) {
                    aborted = true;
                    break;
                }
                for (auto& p : actor_params) p.zero_grad();
                for (auto& p : critic_params) p.zero_grad();
                backward(full);
                try {
                    adam_step(actor_params, actor_adam, static_cast<float>(cfg.learning_rate));
                    adam_step(critic_params, critic_adam, static_cast<float>(cfg.learning_rate));
                } catch (const NumericalError&) {
                    aborted = true;
                    break;
                }
                post_update_clamp(actor);

                row.ppo_loss += ppo.item();
                row.qbc_loss += qbc.item();
                row.value_loss += vloss.item();
                row.entropy = ent.item();
                update_count += 1;
            }
        }
        if (aborted) {
            actor = std::move(last_good);
            result.aborted = true;
            result.log.push_back(row);
            break;
        }
        if (update_count > 0) {
            row.ppo_loss /= update_count;
            row.qbc_loss /= update_count;
            row.value_loss /= update_count;
        }
        result.log.push_back(row);
        last_good = clone_policy(actor);
    }

    result.policy = std::move(actor);
    return result;
}

void save_qarl_log_jsonl(const std::vector<QarlLogRow>& log, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const auto& r : log) {
        nlohmann::json j{{"iter", r.iter},           {"mean_return", r.mean_return},
                         {"ppo_loss", r.ppo_loss},   {"qbc_loss", r.qbc_loss},
                         {"value_loss", r.value_loss}, {"entropy", r.entropy}};
        f << j.dump() << "\n";
    }
}

}  // namespace ilq
