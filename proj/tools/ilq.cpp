// ilq: expert data, behavior cloning, post-training quantization,
// quantization-aware fine-tuning (QAIL/QBC/wQBC), PPO-based QARL, evaluation,
// saliency analysis and packed integer kernel benchmarks, end to end.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ilq/envs.hpp"
#include "ilq/errors.hpp"
#include "ilq/experiments.hpp"
#include "ilq/imitation.hpp"
#include "ilq/kernels.hpp"
#include "ilq/qarl.hpp"
#include "ilq/runtime.hpp"
#include "ilq/saliency.hpp"
#include "ilq/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void ensure_out_dir(const std::string& out) {
    fs::create_directories(out);
}

void write_resolved_config(const std::string& out, const std::string& command, json params) {
    params["command"] = command;
    params["version"] = ILQ_VERSION;
    std::ofstream f(fs::path(out) / "resolved_config.json");
    f << params.dump(2) << "\n";
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream f(path);
    if (!f) throw ilq::ConfigError("cannot open config file '" + path + "'");
    return json::parse(f);
}

// strict field check: unknown keys are rejected
void check_fields(const json& cfg, const std::vector<std::string>& allowed,
                  const std::string& what) {
    for (const auto& [key, value] : cfg.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ilq::ConfigError("unknown field '" + key + "' in " + what + " config");
        }
    }
}

json metrics_json(const ilq::Metrics& m) {
    return json{{"avg_return", m.avg_return},
                {"return_std", m.return_std},
                {"success_rate", m.success_rate},
                {"collisions_per_episode", m.collisions_per_episode},
                {"episodes", m.episodes}};
}

void print_metrics_row(const std::string& name, const ilq::Metrics& m) {
    std::cout << std::left << std::setw(24) << name << " return " << std::setw(10)
              << m.avg_return << " success " << std::setw(8) << m.success_rate << " collisions "
              << m.collisions_per_episode << "\n";
}

ilq::QailConfig qail_config_from(const json& cfg) {
    check_fields(cfg,
                 {"env", "lambda", "beta", "bits", "method", "granularity", "learning_rate",
                  "steps", "batch_size", "wqbc_enabled", "threshold", "il_weight", "fp_episodes",
                  "collect_deterministic", "qbc_on_policy"},
                 "qail");
    ilq::QailConfig q;
    q.env = cfg.value("env", q.env);
    q.lambda = cfg.value("lambda", q.lambda);
    q.beta = cfg.value("beta", q.beta);
    q.bits = cfg.value("bits", q.bits);
    q.method = cfg.value("method", q.method);
    q.granularity = cfg.value("granularity", q.granularity);
    q.learning_rate = cfg.value("learning_rate", q.learning_rate);
    q.steps = cfg.value("steps", q.steps);
    q.batch_size = cfg.value("batch_size", q.batch_size);
    q.wqbc_enabled = cfg.value("wqbc_enabled", q.wqbc_enabled);
    q.threshold = cfg.value("threshold", q.threshold);
    q.il_weight = cfg.value("il_weight", q.il_weight);
    q.fp_episodes = cfg.value("fp_episodes", q.fp_episodes);
    q.collect_deterministic = cfg.value("collect_deterministic", q.collect_deterministic);
    q.qbc_on_policy = cfg.value("qbc_on_policy", q.qbc_on_policy);
    q.validate();
    return q;
}

json qail_config_json(const ilq::QailConfig& q) {
    return json{{"env", q.env},
                {"lambda", q.lambda},
                {"beta", q.beta},
                {"bits", q.bits},
                {"method", q.method},
                {"granularity", q.granularity},
                {"learning_rate", q.learning_rate},
                {"steps", q.steps},
                {"batch_size", q.batch_size},
                {"wqbc_enabled", q.wqbc_enabled},
                {"threshold", q.threshold},
                {"il_weight", q.il_weight},
                {"fp_episodes", q.fp_episodes},
                {"collect_deterministic", q.collect_deterministic},
                {"qbc_on_policy", q.qbc_on_policy}};
}

ilq::QarlConfig qarl_config_from(const json& cfg) {
    check_fields(cfg,
                 {"env", "bits", "method", "granularity", "lambda", "gamma", "gae_lambda",
                  "clip_eps", "learning_rate", "iterations", "steps_per_iter", "epochs",
                  "minibatch", "value_coef", "entropy_coef", "critic_hidden"},
                 "qarl");
    ilq::QarlConfig q;
    q.env = cfg.value("env", q.env);
    q.bits = cfg.value("bits", q.bits);
    q.method = cfg.value("method", q.method);
    q.granularity = cfg.value("granularity", q.granularity);
    q.lambda = cfg.value("lambda", q.lambda);
    q.gamma = cfg.value("gamma", q.gamma);
    q.gae_lambda = cfg.value("gae_lambda", q.gae_lambda);
    q.clip_eps = cfg.value("clip_eps", q.clip_eps);
    q.learning_rate = cfg.value("learning_rate", q.learning_rate);
    q.iterations = cfg.value("iterations", q.iterations);
    q.steps_per_iter = cfg.value("steps_per_iter", q.steps_per_iter);
    q.epochs = cfg.value("epochs", q.epochs);
    q.minibatch = cfg.value("minibatch", q.minibatch);
    q.value_coef = cfg.value("value_coef", q.value_coef);
    q.entropy_coef = cfg.value("entropy_coef", q.entropy_coef);
    q.critic_hidden = cfg.value("critic_hidden", q.critic_hidden);
    q.validate();
    return q;
}

json qarl_config_json(const ilq::QarlConfig& q) {
    return json{{"env", q.env},
                {"bits", q.bits},
                {"method", q.method},
                {"granularity", q.granularity},
                {"lambda", q.lambda},
                {"gamma", q.gamma},
                {"gae_lambda", q.gae_lambda},
                {"clip_eps", q.clip_eps},
                {"learning_rate", q.learning_rate},
                {"iterations", q.iterations},
                {"steps_per_iter", q.steps_per_iter},
                {"epochs", q.epochs},
                {"minibatch", q.minibatch},
                {"value_coef", q.value_coef},
                {"entropy_coef", q.entropy_coef},
                {"critic_hidden", q.critic_hidden}};
}

ilq::Dataset load_dataset(const std::string& path) {
    auto trajs = ilq::load_trajectories_jsonl(path);
    ilq::Dataset d;
    if (trajs.empty()) return d;
    d.env = trajs.front().env;
    for (const auto& t : trajs) {
        const ilq::DataSource src =
            t.policy_id == "expert" ? ilq::DataSource::Expert : ilq::DataSource::FpPolicy;
        for (const auto& s : t.steps) d.pairs.push_back({s.obs, s.action, src});
    }
    return d;
}

}  // namespace

int main(int argc, char** argv) {
    ilq::init_threads_from_env();

    CLI::App app{"ilq: quantization-aware imitation learning toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    // shared options per subcommand
    struct Common {
        uint64_t seed = 1;
        std::string out = "out";
        std::string config;
    };
    auto add_common = [](CLI::App* cmd, Common& c) {
        cmd->add_option("--seed", c.seed, "base random seed");
        cmd->add_option("--out", c.out, "output directory");
        cmd->add_option("--config", c.config, "JSON config file");
    };

    // collect-expert
    auto* c_collect = app.add_subcommand("collect-expert", "roll out the scripted expert");
    Common cc_collect;
    std::string collect_env = "cartpole";
    int collect_episodes = 40;
    add_common(c_collect, cc_collect);
    c_collect->add_option("--env", collect_env, "cartpole|grid_drive|grid_drive_long");
    c_collect->add_option("--episodes", collect_episodes, "episode count");

    // train-fp
    auto* c_trainfp = app.add_subcommand("train-fp", "behavior-clone the FP policy");
    Common cc_trainfp;
    std::string trainfp_dataset, trainfp_env = "cartpole";
    add_common(c_trainfp, cc_trainfp);
    c_trainfp->add_option("--dataset", trainfp_dataset, "expert dataset JSONL")->required();
    c_trainfp->add_option("--env", trainfp_env, "environment name");

    // collect-fp
    auto* c_collectfp = app.add_subcommand("collect-fp", "roll out a trained FP policy");
    Common cc_collectfp;
    std::string collectfp_ckpt;
    int collectfp_episodes = 40;
    bool collectfp_deterministic = false;
    add_common(c_collectfp, cc_collectfp);
    c_collectfp->add_option("--ckpt", collectfp_ckpt, "FP checkpoint")->required();
    c_collectfp->add_option("--episodes", collectfp_episodes, "episode count");
    c_collectfp->add_flag("--deterministic", collectfp_deterministic, "actions = mu");

    // quantize
    auto* c_quant = app.add_subcommand("quantize", "post-training RTN quantization");
    Common cc_quant;
    std::string quant_ckpt;
    int quant_bits = 4;
    bool quant_packed = false;
    add_common(c_quant, cc_quant);
    c_quant->add_option("--ckpt", quant_ckpt, "FP checkpoint")->required();
    c_quant->add_option("--bits", quant_bits, "2|4|8");
    c_quant->add_flag("--packed", quant_packed, "append packed-weights section");

    // qail
    auto* c_qail = app.add_subcommand("qail", "quantization-aware imitation learning");
    Common cc_qail;
    std::string qail_fp_ckpt, qail_expert;
    add_common(c_qail, cc_qail);
    c_qail->add_option("--fp-ckpt", qail_fp_ckpt, "FP checkpoint")->required();
    c_qail->add_option("--expert-dataset", qail_expert, "expert dataset JSONL")->required();

    // qarl
    auto* c_qarl = app.add_subcommand("qarl", "quantization-aware reinforcement learning");
    Common cc_qarl;
    std::string qarl_fp_ckpt;
    add_common(c_qarl, cc_qarl);
    c_qarl->add_option("--fp-ckpt", qarl_fp_ckpt, "FP checkpoint")->required();

    // eval
    auto* c_eval = app.add_subcommand("eval", "evaluate one or more checkpoints");
    Common cc_eval;
    std::vector<std::string> eval_ckpts;
    std::string eval_env = "cartpole";
    int eval_episodes = 20;
    bool eval_stochastic = false;
    add_common(c_eval, cc_eval);
    c_eval->add_option("--ckpt", eval_ckpts, "checkpoint(s)")->required()->expected(-1);
    c_eval->add_option("--env", eval_env, "environment name");
    c_eval->add_option("--episodes", eval_episodes, "episodes per checkpoint");
    c_eval->add_flag("--stochastic", eval_stochastic, "sample actions instead of mu");

    // saliency
    auto* c_sal = app.add_subcommand("saliency", "perturbation saliency map for one state");
    Common cc_sal;
    std::string sal_ckpt, sal_env = "grid_drive";
    int sal_state_index = 10;
    add_common(c_sal, cc_sal);
    c_sal->add_option("--ckpt", sal_ckpt, "checkpoint")->required();
    c_sal->add_option("--env", sal_env, "grid env name");
    c_sal->add_option("--state-index", sal_state_index, "step index into the seeded rollout");

    // attdiv
    auto* c_att = app.add_subcommand("attdiv", "attention divergence between two policies");
    Common cc_att;
    std::string att_q_ckpt, att_fp_ckpt, att_env = "grid_drive";
    int att_states = 50;
    add_common(c_att, cc_att);
    c_att->add_option("--q-ckpt", att_q_ckpt, "quantized policy checkpoint")->required();
    c_att->add_option("--fp-ckpt", att_fp_ckpt, "FP policy checkpoint")->required();
    c_att->add_option("--env", att_env, "grid env name");
    c_att->add_option("--states", att_states, "number of seeded states");

    // bench
    auto* c_bench = app.add_subcommand("bench", "packed integer GEMM benchmark");
    Common cc_bench;
    int bench_m = 1024, bench_n = 1024, bench_k = 1024, bench_bits = 8, bench_reps = 30;
    add_common(c_bench, cc_bench);
    c_bench->add_option("--m", bench_m, "rows of A");
    c_bench->add_option("--n", bench_n, "cols of B");
    c_bench->add_option("--k", bench_k, "inner dimension");
    c_bench->add_option("--bits", bench_bits, "4|8");
    c_bench->add_option("--reps", bench_reps, "timed repetitions (>= 30)");

    // reproduce
    auto* c_repro = app.add_subcommand("reproduce", "run the acceptance experiments end to end");
    Common cc_repro;
    bool repro_quick = false;
    add_common(c_repro, cc_repro);
    c_repro->add_flag("--quick", repro_quick, "smaller scale, for smoke runs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*c_collect) {
            ensure_out_dir(cc_collect.out);
            auto env = ilq::make_env(collect_env);
            auto trajs = ilq::collect_expert(*env, collect_episodes, cc_collect.seed);
            const std::string path = (fs::path(cc_collect.out) / "dataset.jsonl").string();
            ilq::save_trajectories_jsonl(trajs, path);
            const ilq::Metrics m = ilq::metrics_from(trajs);
            write_resolved_config(cc_collect.out, "collect-expert",
                                  {{"env", collect_env},
                                   {"episodes", collect_episodes},
                                   {"seed", cc_collect.seed},
                                   {"dataset", path}});
            print_metrics_row("expert", m);
            std::cout << "wrote " << path << "\n";
        } else if (*c_trainfp) {
            ensure_out_dir(cc_trainfp.out);
            const json cfg = load_config_file(cc_trainfp.config);
            check_fields(cfg, {"learning_rate", "steps", "batch_size", "hidden"}, "train-fp");
            ilq::BcConfig bc;
            bc.learning_rate = cfg.value("learning_rate", bc.learning_rate);
            bc.steps = cfg.value("steps", bc.steps);
            bc.batch_size = cfg.value("batch_size", bc.batch_size);
            bc.hidden = cfg.value("hidden", bc.hidden);
            auto env = ilq::make_env(trainfp_env);
            ilq::Dataset data = load_dataset(trainfp_dataset);
            if (!data.env.empty() && data.env != trainfp_env) {
                throw ilq::ConfigError("dataset env '" + data.env + "' does not match --env '" +
                                       trainfp_env + "'");
            }
            ilq::BcResult r = ilq::train_bc(data, bc, *env, cc_trainfp.seed);
            const std::string ckpt = (fs::path(cc_trainfp.out) / "fp_policy.ilq").string();
            ilq::save_policy(r.policy, ckpt);
            ilq::save_train_log_jsonl(r.log,
                                      (fs::path(cc_trainfp.out) / "train_log.jsonl").string());
            const ilq::Metrics m = ilq::evaluate_policy(*env, r.policy, 20, cc_trainfp.seed + 50);
            std::ofstream rf(fs::path(cc_trainfp.out) / "eval_report.json");
            rf << metrics_json(m).dump(2) << "\n";
            write_resolved_config(cc_trainfp.out, "train-fp",
                                  {{"env", trainfp_env},
                                   {"dataset", trainfp_dataset},
                                   {"seed", cc_trainfp.seed},
                                   {"learning_rate", bc.learning_rate},
                                   {"steps", bc.steps},
                                   {"batch_size", bc.batch_size},
                                   {"hidden", bc.hidden}});
            print_metrics_row("fp_policy", m);
            std::cout << "wrote " << ckpt << "\n";
        } else if (*c_collectfp) {
            ensure_out_dir(cc_collectfp.out);
            ilq::GaussianPolicy p = ilq::load_policy(collectfp_ckpt);
            auto env = ilq::make_env(p.env_name);
            auto trajs = ilq::collect_policy(*env, p, collectfp_episodes, cc_collectfp.seed,
                                             collectfp_deterministic, "fp_policy");
            const std::string path = (fs::path(cc_collectfp.out) / "dataset.jsonl").string();
            ilq::save_trajectories_jsonl(trajs, path);
            write_resolved_config(cc_collectfp.out, "collect-fp",
                                  {{"ckpt", collectfp_ckpt},
                                   {"episodes", collectfp_episodes},
                                   {"seed", cc_collectfp.seed},
                                   {"deterministic", collectfp_deterministic},
                                   {"dataset", path}});
            print_metrics_row("fp_policy", ilq::metrics_from(trajs));
            std::cout << "wrote " << path << "\n";
        } else if (*c_quant) {
            ensure_out_dir(cc_quant.out);
            ilq::GaussianPolicy fp = ilq::load_policy(quant_ckpt);
            auto env = ilq::make_env(fp.env_name);
            ilq::GaussianPolicy q = ilq::ptq_rtn(fp, quant_bits, *env, cc_quant.seed);
            const std::string ckpt = (fs::path(cc_quant.out) / "quantized.ilq").string();
            if (quant_packed) {
                const auto packed = ilq::build_packed_section(q);
                ilq::save_policy(q, ckpt, &packed);
            } else {
                ilq::save_policy(q, ckpt);
            }
            const ilq::Metrics m = ilq::evaluate_policy(*env, q, 20, cc_quant.seed + 50);
            std::ofstream rf(fs::path(cc_quant.out) / "eval_report.json");
            rf << metrics_json(m).dump(2) << "\n";
            write_resolved_config(cc_quant.out, "quantize",
                                  {{"ckpt", quant_ckpt},
                                   {"bits", quant_bits},
                                   {"seed", cc_quant.seed},
                                   {"packed", quant_packed}});
            print_metrics_row("rtn_ptq_b" + std::to_string(quant_bits), m);
            std::cout << "wrote " << ckpt << "\n";
        } else if (*c_qail) {
            ensure_out_dir(cc_qail.out);
            const json cfg = load_config_file(cc_qail.config);
            ilq::QailConfig qc = qail_config_from(cfg);
            ilq::GaussianPolicy fp = ilq::load_policy(qail_fp_ckpt);
            auto env = ilq::make_env(qc.env.empty() ? fp.env_name : qc.env);
            ilq::Dataset expert = load_dataset(qail_expert);
            ilq::QailResult r = ilq::train_qail(fp, expert, qc, *env, cc_qail.seed);
            const std::string ckpt = (fs::path(cc_qail.out) / "qail_policy.ilq").string();
            ilq::save_policy(r.policy, ckpt);
            ilq::save_train_log_jsonl(r.log,
                                      (fs::path(cc_qail.out) / "train_log.jsonl").string());
            const ilq::Metrics m = ilq::evaluate_policy(*env, r.policy, 20, cc_qail.seed + 50);
            std::ofstream rf(fs::path(cc_qail.out) / "eval_report.json");
            rf << metrics_json(m).dump(2) << "\n";
            json rc = qail_config_json(qc);
            rc["fp_ckpt"] = qail_fp_ckpt;
            rc["expert_dataset"] = qail_expert;
            rc["seed"] = cc_qail.seed;
            rc["aborted"] = r.aborted;
            write_resolved_config(cc_qail.out, "qail", rc);
            print_metrics_row("qail", m);
            std::cout << "wrote " << ckpt << "\n";
        } else if (*c_qarl) {
            ensure_out_dir(cc_qarl.out);
            const json cfg = load_config_file(cc_qarl.config);
            ilq::QarlConfig qc = qarl_config_from(cfg);
            ilq::GaussianPolicy fp = ilq::load_policy(qarl_fp_ckpt);
            auto env = ilq::make_env(qc.env.empty() ? fp.env_name : qc.env);
            ilq::QarlResult r = ilq::train_qarl(fp, *env, qc, cc_qarl.seed);
            const std::string ckpt = (fs::path(cc_qarl.out) / "qarl_policy.ilq").string();
            ilq::save_policy(r.policy, ckpt);
            ilq::save_qarl_log_jsonl(r.log,
                                     (fs::path(cc_qarl.out) / "train_log.jsonl").string());
            const ilq::Metrics m = ilq::evaluate_policy(*env, r.policy, 20, cc_qarl.seed + 50);
            std::ofstream rf(fs::path(cc_qarl.out) / "eval_report.json");
            rf << metrics_json(m).dump(2) << "\n";
            json rc = qarl_config_json(qc);
            rc["fp_ckpt"] = qarl_fp_ckpt;
            rc["seed"] = cc_qarl.seed;
            rc["aborted"] = r.aborted;
            write_resolved_config(cc_qarl.out, "qarl", rc);
            print_metrics_row("qarl", m);
            std::cout << "wrote " << ckpt << "\n";
        } else if (*c_eval) {
            ensure_out_dir(cc_eval.out);
            auto env = ilq::make_env(eval_env);
            json rows = json::array();
            for (const auto& path : eval_ckpts) {
                ilq::GaussianPolicy p = ilq::load_policy(path);
                const ilq::Metrics m = ilq::evaluate_policy(*env, p, eval_episodes, cc_eval.seed,
                                                            !eval_stochastic);
                json row = metrics_json(m);
                row["ckpt"] = path;
                row["provenance"] = p.provenance;
                rows.push_back(row);
                print_metrics_row(p.provenance.empty() ? fs::path(path).stem().string()
                                                       : p.provenance,
                                  m);
            }
            std::ofstream rf(fs::path(cc_eval.out) / "metrics.json");
            rf << rows.dump(2) << "\n";
            write_resolved_config(cc_eval.out, "eval",
                                  {{"env", eval_env},
                                   {"ckpts", eval_ckpts},
                                   {"episodes", eval_episodes},
                                   {"seed", cc_eval.seed},
                                   {"stochastic", eval_stochastic}});
        } else if (*c_sal) {
            ensure_out_dir(cc_sal.out);
            ilq::GaussianPolicy p = ilq::load_policy(sal_ckpt);
            auto env = ilq::make_env(sal_env);
            auto [rows, cols, off] = env->grid_layout();
            if (rows == 0) throw ilq::ConfigError("env '" + sal_env + "' has no grid observation");
            ilq::Trajectory t = ilq::rollout_policy(*env, p, cc_sal.seed, true);
            const int idx = std::min<int>(sal_state_index, static_cast<int>(t.steps.size()) - 1);
            const auto& obs = t.steps[idx].obs;
            ilq::SaliencyMap m = ilq::saliency_map(p, obs, rows, cols, off);
            json grid = json::array();
            for (int i = 0; i < rows; ++i) {
                json line = json::array();
                for (int j = 0; j < cols; ++j) line.push_back(m.at(i, j));
                grid.push_back(line);
            }
            json outj{{"policy_id", p.provenance},
                      {"observation_id",
                       sal_env + ":" + std::to_string(cc_sal.seed) + ":" + std::to_string(idx)},
                      {"map", grid},
                      {"mean_saliency", ilq::mean_saliency(m)}};
            std::ofstream rf(fs::path(cc_sal.out) / "saliency.json");
            rf << outj.dump(2) << "\n";
            write_resolved_config(cc_sal.out, "saliency",
                                  {{"ckpt", sal_ckpt},
                                   {"env", sal_env},
                                   {"seed", cc_sal.seed},
                                   {"state_index", idx}});
            std::cout << "mean saliency " << ilq::mean_saliency(m) << "\n";
        } else if (*c_att) {
            ensure_out_dir(cc_att.out);
            ilq::GaussianPolicy q = ilq::load_policy(att_q_ckpt);
            ilq::GaussianPolicy fp = ilq::load_policy(att_fp_ckpt);
            auto env = ilq::make_env(att_env);
            auto [rows, cols, off] = env->grid_layout();
            if (rows == 0) throw ilq::ConfigError("env '" + att_env + "' has no grid observation");
            json per_state = json::array();
            double acc = 0;
            int count = 0;
            uint64_t ep = 0;
            while (count < att_states) {
                auto e2 = env->clone_config();
                ilq::Trajectory t = ilq::rollout_policy(*e2, fp, cc_att.seed + 9000 + ep, true);
                for (size_t k = 3; k < t.steps.size() && count < att_states; k += 7) {
                    const double d = ilq::attdiv(q, fp, t.steps[k].obs, rows, cols, off);
                    per_state.push_back(d);
                    acc += d;
                    count += 1;
                }
                ep += 1;
            }
            json outj{{"per_state", per_state}, {"mean_attdiv", acc / count}, {"states", count}};
            std::ofstream rf(fs::path(cc_att.out) / "attdiv.json");
            rf << outj.dump(2) << "\n";
            write_resolved_config(cc_att.out, "attdiv",
                                  {{"q_ckpt", att_q_ckpt},
                                   {"fp_ckpt", att_fp_ckpt},
                                   {"env", att_env},
                                   {"states", att_states},
                                   {"seed", cc_att.seed}});
            std::cout << "mean attdiv " << acc / count << "\n";
        } else if (*c_bench) {
            ensure_out_dir(cc_bench.out);
            const ilq::BenchReport r =
                ilq::bench_gemm(bench_m, bench_n, bench_k, bench_bits, bench_reps, cc_bench.seed);
            const std::string js = ilq::bench_report_json(r);
            std::ofstream rf(fs::path(cc_bench.out) / "bench.json");
            rf << js << "\n";
            write_resolved_config(cc_bench.out, "bench",
                                  {{"m", bench_m},
                                   {"n", bench_n},
                                   {"k", bench_k},
                                   {"bits", bench_bits},
                                   {"reps", bench_reps},
                                   {"seed", cc_bench.seed}});
            std::cout << js << "\n";
            std::cout << "speedup vs fp32: " << r.speedup << "x\n";
        } else if (*c_repro) {
            ensure_out_dir(cc_repro.out);
            ilq::ExperimentScale s;
            if (repro_quick) {
                s.n_seeds = 1;
                s.fp_train_steps = 800;
                s.qail_steps = 400;
                s.gd_train_steps = 300;
                s.qarl_iterations = 2;
                s.expert_episodes = 8;
                s.fp_episodes = 8;
                s.gd_expert_episodes = 6;
                s.gd_fp_episodes = 6;
                s.eval_episodes = 5;
            }
            const std::string report = ilq::reproduce_report(s, cc_repro.seed, &std::cout);
            std::ofstream rf(fs::path(cc_repro.out) / "reproduce_report.json");
            rf << report << "\n";
            write_resolved_config(cc_repro.out, "reproduce",
                                  {{"seed", cc_repro.seed}, {"quick", repro_quick}});
            std::cout << report << "\n";
        }
    } catch (const ilq::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
