#include "ilq/envs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ilq/errors.hpp"

namespace ilq {

namespace {

constexpr uint64_t kEnvStream = 0x1157a7e;
constexpr uint64_t kActionStream = 0xac7105;

float clampf(float v, float lo, float hi) { return std::min(std::max(v, lo), hi); }

float wrap_angle(float a) {
    const float pi = static_cast<float>(std::numbers::pi);
    while (a > pi) a -= 2 * pi;
    while (a < -pi) a += 2 * pi;
    return a;
}

}  // namespace

std::unique_ptr<Env> make_env(const std::string& name) {
    if (name == "cartpole") return std::make_unique<CartpoleBalanceEnv>();
    if (name == "grid_drive") return std::make_unique<GridDriveEnv>(false);
    if (name == "grid_drive_long") return std::make_unique<GridDriveEnv>(true);
    throw ConfigError("unknown env '" + name + "' (cartpole|grid_drive|grid_drive_long)");
}

// ---- cartpole ---------------------------------------------------------------

void CartpoleBalanceEnv::reset(uint64_t seed) {
    Rng rng(stream_seed(seed, kEnvStream));
    x = static_cast<float>(rng.uniform(-0.05, 0.05));
    x_dot = static_cast<float>(rng.uniform(-0.05, 0.05));
    theta = static_cast<float>(rng.uniform(-0.05, 0.05));
    theta_dot = static_cast<float>(rng.uniform(-0.05, 0.05));
    steps_ = 0;
    failed_ = false;
    done_ = false;
}

std::vector<float> CartpoleBalanceEnv::observe() const { return {x, x_dot, theta, theta_dot}; }

StepOutcome CartpoleBalanceEnv::step(const std::vector<float>& action) {
    if (action.size() != 1) throw ShapeError("cartpole step: action must have 1 component");
    const float force = clampf(action[0], -kForceLimit, kForceLimit);
    const float total_mass = kMassCart + kMassPole;
    const float ml = kMassPole * kPoleHalfLength;
    const float sin_t = std::sin(theta);
    const float cos_t = std::cos(theta);
    const float temp = (force + ml * theta_dot * theta_dot * sin_t) / total_mass;
    const float theta_acc =
        (kGravity * sin_t - cos_t * temp) /
        (kPoleHalfLength * (4.0f / 3.0f - kMassPole * cos_t * cos_t / total_mass));
    const float x_acc = temp - ml * theta_acc * cos_t / total_mass;
    // semi-implicit Euler: velocities first, positions with the new velocities
    x_dot += x_acc * kDt;
    x += x_dot * kDt;
    theta_dot += theta_acc * kDt;
    theta += theta_dot * kDt;

    steps_ += 1;
    failed_ = std::fabs(theta) > kThetaLimit || std::fabs(x) > kXLimit;
    done_ = failed_ || steps_ >= kMaxSteps;
    const float reward = failed_ ? 0.0f : 1.0f;
    return {reward, done_};
}

std::vector<float> CartpoleBalanceEnv::expert_action() const {
    return {kExpertKp * theta + kExpertKd * theta_dot};
}

// ---- grid drive --------------------------------------------------------------

GridDriveEnv::GridDriveEnv(bool long_horizon) : long_horizon_(long_horizon) {
    n_waypoints_ = long_horizon ? 24 : 12;
    n_static_ = long_horizon ? 12 : 6;
    n_movers_ = long_horizon ? 6 : 3;
    reset(0);
}

GridDriveEnv::Vec2 GridDriveEnv::Mover::at(float t) const {
    const float off = amp * std::sin(omega * t + phase);
    return {center.x + axis.x * off, center.y + axis.y * off};
}

void GridDriveEnv::reset(uint64_t seed) {
    Rng rng(stream_seed(seed, kEnvStream));
    waypoints_.assign(1, Vec2{0, 0});
    float h = 0;
    for (int i = 1; i < n_waypoints_; ++i) {
        h += static_cast<float>(rng.uniform(-0.35, 0.35));
        const Vec2& prev = waypoints_.back();
        waypoints_.push_back(
            {prev.x + kWaypointSpacing * std::cos(h), prev.y + kWaypointSpacing * std::sin(h)});
    }

    statics_.clear();
    for (int k = 0; k < n_static_; ++k) {
        const int si = 2 + rng.uniform_int(0, n_waypoints_ - 4);  // skip very first segment
        const Vec2 a = waypoints_[si - 1], b = waypoints_[si];
        const float t = static_cast<float>(rng.uniform(0.3, 0.7));
        const float side = rng.uniform01() < 0.5 ? -1.0f : 1.0f;
        const float off = static_cast<float>(rng.uniform(1.3, 1.9));
        const float dx = b.x - a.x, dy = b.y - a.y;
        const float len = std::sqrt(dx * dx + dy * dy);
        const float nx = -dy / len, ny = dx / len;
        statics_.push_back({a.x + t * dx + side * off * nx, a.y + t * dy + side * off * ny});
    }

    movers_.clear();
    for (int k = 0; k < n_movers_; ++k) {
        const int si = 3 + rng.uniform_int(0, n_waypoints_ - 5);
        const Vec2 a = waypoints_[si - 1], b = waypoints_[si];
        const float dx = b.x - a.x, dy = b.y - a.y;
        const float len = std::sqrt(dx * dx + dy * dy);
        Mover m;
        m.center = {a.x + 0.5f * dx, a.y + 0.5f * dy};
        m.axis = {-dy / len, dx / len};
        m.amp = 2.2f;
        m.omega = static_cast<float>(rng.uniform(0.3, 0.55));
        m.phase = static_cast<float>(rng.uniform(0.0, 2.0 * std::numbers::pi));
        movers_.push_back(m);
    }

    pos_ = waypoints_[0];
    heading_ = std::atan2(waypoints_[1].y - pos_.y, waypoints_[1].x - pos_.x);
    speed_ = 0;
    sim_time_ = 0;
    next_wp_ = 1;
    steps_ = 0;
    collisions_ = 0;
    overlap_prev_ = false;
    reached_goal_ = false;
    done_ = false;
}

bool GridDriveEnv::occupied(float wx, float wy) const {
    const float r2 = kObstacleRadius * kObstacleRadius;
    for (const auto& s : statics_) {
        const float dx = wx - s.x, dy = wy - s.y;
        if (dx * dx + dy * dy <= r2) return true;
    }
    for (const auto& m : movers_) {
        const Vec2 p = mover_pos(m);
        const float dx = wx - p.x, dy = wy - p.y;
        if (dx * dx + dy * dy <= r2) return true;
    }
    return false;
}

float GridDriveEnv::track_progress() const {
    const Vec2 a = waypoints_[next_wp_ - 1], b = waypoints_[next_wp_];
    const float dx = b.x - a.x, dy = b.y - a.y;
    const float len2 = dx * dx + dy * dy;
    const float t = clampf(((pos_.x - a.x) * dx + (pos_.y - a.y) * dy) / len2, 0.0f, 1.0f);
    return (static_cast<float>(next_wp_) - 1.0f + t) * kWaypointSpacing;
}

std::vector<float> GridDriveEnv::observe() const {
    std::vector<float> obs(static_cast<size_t>(kGrid) * kGrid + 4, 0.0f);
    const float fx = std::cos(heading_), fy = std::sin(heading_);
    const float lx = -fy, ly = fx;
    for (int r = 0; r < kGrid; ++r) {
        const float fwd = (r - kGrid / 2) * kCell;
        for (int c = 0; c < kGrid; ++c) {
            const float lat = (c - kGrid / 2) * kCell;
            const float wx = pos_.x + fx * fwd + lx * lat;
            const float wy = pos_.y + fy * fwd + ly * lat;
            obs[static_cast<size_t>(r) * kGrid + c] = occupied(wx, wy) ? 1.0f : 0.0f;
        }
    }
    const Vec2 target = waypoints_[next_wp_];
    const float desired = std::atan2(target.y - pos_.y, target.x - pos_.x);
    const float err = wrap_angle(desired - heading_);
    const float dist = std::hypot(target.x - pos_.x, target.y - pos_.y);
    const size_t base = static_cast<size_t>(kGrid) * kGrid;
    obs[base + 0] = speed_ / kVMax;
    obs[base + 1] = std::sin(err);
    obs[base + 2] = std::cos(err);
    obs[base + 3] = std::min(dist / (2.0f * kWaypointSpacing), 1.0f);
    return obs;
}

StepOutcome GridDriveEnv::step(const std::vector<float>& action) {
    if (action.size() != 2) throw ShapeError("grid_drive step: action must have 2 components");
    const float steer = clampf(action[0], -1.0f, 1.0f);
    const float throttle = clampf(action[1], -1.0f, 1.0f);

    const float progress_before = track_progress();
    heading_ = wrap_angle(heading_ + steer * kOmegaMax * kDt);
    speed_ = clampf(speed_ + throttle * kAMax * kDt, 0.0f, kVMax);
    pos_.x += speed_ * std::cos(heading_) * kDt;
    pos_.y += speed_ * std::sin(heading_) * kDt;
    sim_time_ += kDt;

    while (next_wp_ < n_waypoints_) {
        const Vec2 t = waypoints_[next_wp_];
        if (std::hypot(t.x - pos_.x, t.y - pos_.y) >= kReachRadius) break;
        next_wp_ += 1;
        if (next_wp_ == n_waypoints_) {
            reached_goal_ = true;
            next_wp_ = n_waypoints_ - 1;  // keep a valid chase target for observe()
            break;
        }
    }

    float reward = track_progress() - progress_before - kSteerPenalty * std::fabs(steer);
    const bool overlap_now = occupied(pos_.x, pos_.y);
    if (overlap_now && !overlap_prev_) {
        collisions_ += 1;
        reward -= kCollisionPenalty;
    }
    overlap_prev_ = overlap_now;

    steps_ += 1;
    done_ = reached_goal_ || steps_ >= max_steps();
    return {reward, done_};
}

std::vector<float> GridDriveEnv::expert_action() const {
    const Vec2 target = waypoints_[next_wp_];
    const float desired = std::atan2(target.y - pos_.y, target.x - pos_.x);
    const float err = wrap_angle(desired - heading_);
    const float steer = clampf(2.0f * err, -1.0f, 1.0f);

    const float fx = std::cos(heading_), fy = std::sin(heading_);
    const float lx = -fy, ly = fx;
    bool brake = false;
    bool escape = false;

    // statics sit off the line; a simple forward corridor (narrower than the
    // closest static offset) only triggers on genuine intrusions
    for (const auto& s : statics_) {
        const float dx = s.x - pos_.x, dy = s.y - pos_.y;
        const float lon = dx * fx + dy * fy;
        const float lat = dx * lx + dy * ly;
        brake = brake || (lon > 0.0f && lon < 2.5f && std::fabs(lat) < 0.9f);
    }

    // movers sweep a fixed line across the track; hold short of that line
    // until the crossing stays clear long enough to pass it
    for (const auto& m : movers_) {
        const float dx = m.center.x - pos_.x, dy = m.center.y - pos_.y;
        const float lon = dx * fx + dy * fy;
        const float lat = dx * lx + dy * ly;
        if (lon <= 0.2f || lon >= 3.2f || std::fabs(lat) >= 1.4f) continue;
        const float t_clear = (lon + 1.4f) / std::max(speed_, 1.2f);
        bool blocked = false;
        for (float t = 0.0f; t <= t_clear + 0.2f; t += 0.1f) {
            const float off = m.amp * std::sin(m.omega * (sim_time_ + t) + m.phase);
            if (std::fabs(off) < 1.25f) {
                blocked = true;
                break;
            }
        }
        if (blocked) {
            if (lon > 1.0f) {
                brake = true;  // stop before the sweep line
            } else {
                escape = true;  // already inside the crossing, clear it fast
            }
        }
    }

    float v_des;
    if (escape) {
        v_des = kVMax;
    } else if (brake) {
        v_des = 0.0f;
    } else {
        v_des = kVMax * (1.0f - 0.5f * std::min(1.0f, std::fabs(err)));
    }
    const float throttle = clampf(2.0f * (v_des - speed_), -1.0f, 1.0f);
    return {steer, throttle};
}

// ---- rollouts & metrics -------------------------------------------------------

Trajectory rollout(Env& env, const ActorFn& actor, uint64_t seed, int max_steps,
                   const std::string& policy_id) {
    env.reset(seed);
    Rng rng(stream_seed(seed, kActionStream));
    Trajectory t;
    t.seed = seed;
    t.env = env.name();
    t.policy_id = policy_id;
    const int limit = max_steps < 0 ? env.max_steps() : std::min(max_steps, env.max_steps());
    for (int i = 0; i < limit; ++i) {
        TrajStep s;
        s.obs = env.observe();
        s.action = actor(env, s.obs, rng);
        const StepOutcome out = env.step(s.action);
        s.reward = out.reward;
        s.done = out.done;
        t.ret += out.reward;
        t.steps.push_back(std::move(s));
        if (out.done) break;
    }
    t.success = env.success();
    t.collisions = env.collisions();
    return t;
}

Trajectory rollout_policy(Env& env, const GaussianPolicy& p, uint64_t seed, bool deterministic,
                          int max_steps, const std::string& policy_id) {
    if (p.input_dim() != env.obs_dim()) {
        throw ShapeError("rollout: policy input dim " + std::to_string(p.input_dim()) +
                         " does not match env obs dim " + std::to_string(env.obs_dim()));
    }
    return rollout(
        env,
        [&p, deterministic](Env&, const std::vector<float>& obs, Rng& rng) {
            return policy_act(p, obs, deterministic ? nullptr : &rng);
        },
        seed, max_steps, policy_id);
}

Trajectory rollout_expert(Env& env, uint64_t seed, int max_steps) {
    return rollout(
        env, [](Env& e, const std::vector<float>&, Rng&) { return e.expert_action(); }, seed,
        max_steps, "expert");
}

Metrics metrics_from(const std::vector<Trajectory>& trajs) {
    Metrics m;
    m.episodes = static_cast<int>(trajs.size());
    if (trajs.empty()) return m;
    double sum = 0, successes = 0, collisions = 0;
    for (const auto& t : trajs) {
        sum += t.ret;
        successes += t.success ? 1 : 0;
        collisions += t.collisions;
    }
    m.avg_return = sum / m.episodes;
    double var = 0;
    for (const auto& t : trajs) var += (t.ret - m.avg_return) * (t.ret - m.avg_return);
    m.return_std = std::sqrt(var / m.episodes);
    m.success_rate = successes / m.episodes;
    m.collisions_per_episode = collisions / m.episodes;
    return m;
}

Metrics evaluate_policy(const Env& proto, const GaussianPolicy& p, int n_episodes,
                        uint64_t base_seed, bool deterministic) {
    if (n_episodes < 1) throw ConfigError("evaluate: n_episodes must be >= 1");
    std::vector<Trajectory> trajs(n_episodes);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n_episodes; ++i) {
        auto env = proto.clone_config();
        trajs[i] = rollout_policy(*env, p, base_seed + i, deterministic);
    }
    return metrics_from(trajs);
}

Metrics evaluate_expert(const Env& proto, int n_episodes, uint64_t base_seed) {
    std::vector<Trajectory> trajs(n_episodes);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n_episodes; ++i) {
        auto env = proto.clone_config();
        trajs[i] = rollout_expert(*env, base_seed + i);
    }
    return metrics_from(trajs);
}

std::vector<Trajectory> collect_expert(const Env& proto, int n_episodes, uint64_t base_seed) {
    std::vector<Trajectory> trajs(n_episodes);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n_episodes; ++i) {
        auto env = proto.clone_config();
        trajs[i] = rollout_expert(*env, base_seed + i);
    }
    return trajs;
}

std::vector<Trajectory> collect_policy(const Env& proto, const GaussianPolicy& p, int n_episodes,
                                       uint64_t base_seed, bool deterministic,
                                       const std::string& policy_id) {
    std::vector<Trajectory> trajs(n_episodes);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n_episodes; ++i) {
        auto env = proto.clone_config();
        trajs[i] = rollout_policy(*env, p, base_seed + i, deterministic, -1, policy_id);
    }
    return trajs;
}

// ---- JSONL ----------------------------------------------------------------------

namespace {

using nlohmann::json;

json traj_to_json(const Trajectory& t) {
    json steps = json::array();
    for (const auto& s : t.steps) {
        json obs = json::array();
        for (float v : s.obs) obs.push_back(static_cast<double>(v));
        json action = json::array();
        for (float v : s.action) action.push_back(static_cast<double>(v));
        steps.push_back({{"obs", std::move(obs)},
                         {"action", std::move(action)},
                         {"reward", static_cast<double>(s.reward)},
                         {"done", s.done}});
    }
    return json{{"seed", t.seed},       {"env", t.env},
                {"policy_id", t.policy_id}, {"steps", std::move(steps)},
                {"return", static_cast<double>(t.ret)}, {"success", t.success},
                {"collisions", t.collisions}};
}

Trajectory traj_from_json(const json& j) {
    Trajectory t;
    t.seed = j.at("seed").get<uint64_t>();
    t.env = j.at("env").get<std::string>();
    t.policy_id = j.at("policy_id").get<std::string>();
    t.ret = static_cast<float>(j.at("return").get<double>());
    t.success = j.at("success").get<bool>();
    t.collisions = j.at("collisions").get<int>();
    for (const auto& js : j.at("steps")) {
        TrajStep s;
        for (const auto& v : js.at("obs")) s.obs.push_back(static_cast<float>(v.get<double>()));
        for (const auto& v : js.at("action"))
            s.action.push_back(static_cast<float>(v.get<double>()));
        s.reward = static_cast<float>(js.at("reward").get<double>());
        s.done = js.at("done").get<bool>();
        t.steps.push_back(std::move(s));
    }
    return t;
}

}  // namespace

void save_trajectories_jsonl(const std::vector<Trajectory>& trajs, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const auto& t : trajs) f << traj_to_json(t).dump() << "\n";
    if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<Trajectory> load_trajectories_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::vector<Trajectory> trajs;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        trajs.push_back(traj_from_json(nlohmann::json::parse(line)));
    }
    return trajs;
}

}  // namespace ilq
