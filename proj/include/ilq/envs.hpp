#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ilq/policy.hpp"
#include "ilq/rng.hpp"

namespace ilq {

struct StepOutcome {
    float reward;
    bool done;
};

// Deterministic toy control environment. step() is a pure function of the
// internal state and the (clipped) action; all randomness enters at reset().
class Env {
public:
    virtual ~Env() = default;
    virtual std::string name() const = 0;
    virtual int obs_dim() const = 0;
    virtual int action_dim() const = 0;
    virtual int max_steps() const = 0;
    virtual void reset(uint64_t seed) = 0;
    virtual std::vector<float> observe() const = 0;
    virtual StepOutcome step(const std::vector<float>& action) = 0;
    virtual std::vector<float> expert_action() const = 0;
    virtual bool success() const = 0;
    virtual int collisions() const = 0;
    virtual std::unique_ptr<Env> clone_config() const = 0;
    // spatial observation layout as (rows, cols, offset into obs); rows==0
    // means the observation has no grid portion
    virtual std::tuple<int, int, int> grid_layout() const { return {0, 0, 0}; }
};

std::unique_ptr<Env> make_env(const std::string& name);

// Pole balancing with a continuous force action in [-10, 10].
class CartpoleBalanceEnv final : public Env {
public:
    static constexpr float kGravity = 9.81f;
    static constexpr float kMassCart = 1.0f;
    static constexpr float kMassPole = 0.1f;
    static constexpr float kPoleHalfLength = 0.5f;
    static constexpr float kDt = 0.02f;
    static constexpr float kForceLimit = 10.0f;
    static constexpr float kThetaLimit = 0.21f;
    static constexpr float kXLimit = 2.4f;
    static constexpr int kMaxSteps = 500;
    // PD gains of the scripted expert, F = kp*theta + kd*theta_dot
    static constexpr float kExpertKp = 40.0f;
    static constexpr float kExpertKd = 5.0f;

    std::string name() const override { return "cartpole"; }
    int obs_dim() const override { return 4; }
    int action_dim() const override { return 1; }
    int max_steps() const override { return kMaxSteps; }
    void reset(uint64_t seed) override;
    std::vector<float> observe() const override;
    StepOutcome step(const std::vector<float>& action) override;
    std::vector<float> expert_action() const override;
    bool success() const override { return steps_ >= kMaxSteps && !failed_; }
    int collisions() const override { return 0; }
    std::unique_ptr<Env> clone_config() const override {
        return std::make_unique<CartpoleBalanceEnv>();
    }

    // state, public for tests against the standalone integration oracle
    float x = 0, x_dot = 0, theta = 0, theta_dot = 0;

private:
    int steps_ = 0;
    bool failed_ = false;
    bool done_ = false;
};

// 2-D waypoint track with static obstacles off the driving line and moving
// obstacles crossing it. Observation: 16x16 occupancy grid in the agent frame
// (rows ahead, columns left) plus 4 scalar kinematics.
class GridDriveEnv final : public Env {
public:
    static constexpr int kGrid = 16;
    static constexpr float kCell = 0.5f;
    static constexpr float kDt = 0.1f;
    static constexpr float kVMax = 2.0f;
    static constexpr float kAMax = 2.0f;
    static constexpr float kOmegaMax = 1.5f;
    static constexpr float kWaypointSpacing = 3.0f;
    static constexpr float kReachRadius = 1.0f;
    static constexpr float kObstacleRadius = 0.6f;
    static constexpr float kCollisionPenalty = 10.0f;
    static constexpr float kSteerPenalty = 0.01f;

    explicit GridDriveEnv(bool long_horizon = false);

    std::string name() const override { return long_horizon_ ? "grid_drive_long" : "grid_drive"; }
    int obs_dim() const override { return kGrid * kGrid + 4; }
    int action_dim() const override { return 2; }  // (steer, throttle)
    int max_steps() const override { return long_horizon_ ? 600 : 300; }
    void reset(uint64_t seed) override;
    std::vector<float> observe() const override;
    StepOutcome step(const std::vector<float>& action) override;
    std::vector<float> expert_action() const override;
    bool success() const override { return reached_goal_ && collisions_ == 0; }
    int collisions() const override { return collisions_; }
    std::unique_ptr<Env> clone_config() const override {
        return std::make_unique<GridDriveEnv>(long_horizon_);
    }
    std::tuple<int, int, int> grid_layout() const override { return {kGrid, kGrid, 0}; }

    bool occupied(float wx, float wy) const;  // inside any obstacle disk now

private:
    struct Vec2 {
        float x = 0, y = 0;
    };
    struct Mover {
        Vec2 center;
        Vec2 axis;  // crossing direction (unit)
        float amp = 0, omega = 0, phase = 0;
        Vec2 at(float t) const;
    };

    float track_progress() const;
    Vec2 mover_pos(const Mover& m) const { return m.at(sim_time_); }

    bool long_horizon_;
    int n_waypoints_, n_static_, n_movers_;
    std::vector<Vec2> waypoints_;
    std::vector<Vec2> statics_;
    std::vector<Mover> movers_;
    Vec2 pos_;
    float heading_ = 0, speed_ = 0, sim_time_ = 0;
    int next_wp_ = 1;
    int steps_ = 0, collisions_ = 0;
    bool overlap_prev_ = false, reached_goal_ = false, done_ = false;
};

// ---- trajectories & metrics -------------------------------------------------

struct TrajStep {
    std::vector<float> obs;
    std::vector<float> action;
    float reward = 0;
    bool done = false;
};

struct Trajectory {
    uint64_t seed = 0;
    std::string env;
    std::string policy_id;
    std::vector<TrajStep> steps;
    float ret = 0;
    bool success = false;
    int collisions = 0;
};

struct Metrics {
    double avg_return = 0;
    double return_std = 0;
    double success_rate = 0;
    double collisions_per_episode = 0;
    int episodes = 0;
};

using ActorFn = std::function<std::vector<float>(Env&, const std::vector<float>&, Rng&)>;

Trajectory rollout(Env& env, const ActorFn& actor, uint64_t seed, int max_steps,
                   const std::string& policy_id);
Trajectory rollout_policy(Env& env, const GaussianPolicy& p, uint64_t seed, bool deterministic,
                          int max_steps = -1, const std::string& policy_id = "policy");
Trajectory rollout_expert(Env& env, uint64_t seed, int max_steps = -1);

Metrics metrics_from(const std::vector<Trajectory>& trajs);
// episodes run with per-episode seeds base_seed + index; order-independent
// aggregation makes parallel and serial evaluation identical
Metrics evaluate_policy(const Env& proto, const GaussianPolicy& p, int n_episodes,
                        uint64_t base_seed, bool deterministic = true);
Metrics evaluate_expert(const Env& proto, int n_episodes, uint64_t base_seed);
std::vector<Trajectory> collect_expert(const Env& proto, int n_episodes, uint64_t base_seed);
std::vector<Trajectory> collect_policy(const Env& proto, const GaussianPolicy& p, int n_episodes,
                                       uint64_t base_seed, bool deterministic,
                                       const std::string& policy_id);

// one JSON object per line: {seed, env, policy_id, steps, return, success, collisions}
void save_trajectories_jsonl(const std::vector<Trajectory>& trajs, const std::string& path);
std::vector<Trajectory> load_trajectories_jsonl(const std::string& path);

}  // namespace ilq
