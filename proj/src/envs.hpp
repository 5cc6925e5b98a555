#pragma once

// Family of 2D point-mass control tasks with hidden task parameters. The agent
// observes (position, velocity) and applies a 2D force; what varies between
// tasks is the reward: reach a hidden goal, hold a hidden speed, or run in a
// hidden direction. Dynamics are shared:
//
//   v <- 0.8 v + 0.2 clip(a, -1, 1)
//   p <- p + 0.1 v
//
// Episodes have a fixed horizon; reset draws the start state with small
// Gaussian jitter so trajectories are not literally identical.

#include <array>
#include <cstdint>
#include <string>

#include "common.hpp"

namespace ad {

enum class EnvId { point_reacher_goal, point_vel, point_dir };

EnvId parse_env_id(const std::string& name);
std::string env_name(EnvId id);

struct EnvDims {
    int64_t obs_dim;
    int64_t act_dim;
    int64_t horizon;
};

EnvDims env_dims(EnvId id);

// A concrete task: the environment family plus its hidden parameters. Hidden
// parameters never appear in observations; they only shape the reward.
struct TaskSpec {
    EnvId env = EnvId::point_reacher_goal;
    std::array<float, 2> goal{0.0f, 0.0f};  // point_reacher_goal
    float target_speed = 0.0f;              // point_vel
    float target_angle = 0.0f;              // point_dir
    uint64_t task_seed = 0;                 // seed the task was drawn from
};

TaskSpec sample_task(EnvId id, uint64_t task_seed);

struct EnvState {
    std::array<float, 2> pos{0.0f, 0.0f};
    std::array<float, 2> vel{0.0f, 0.0f};
    int64_t t = 0;
};

struct StepResult {
    EnvState next;
    std::array<float, 4> obs;
    float reward = 0.0f;
    bool done = false;
};

// Start state with jitter ~ N(0, 0.01^2) per coordinate, clamped to 5 sigma.
EnvState env_reset(const TaskSpec& task, Rng& rng);

std::array<float, 4> observe(const EnvState& s);

// Pure transition: same (task, state, action) always yields the same result.
// Raises NumericError on non-finite actions; actions are clipped to [-1, 1].
StepResult env_step(const TaskSpec& task, const EnvState& s, const std::array<float, 2>& action);

// Near-optimal feedback controller for the task (asymptotic reference).
std::array<float, 2> oracle_action(const TaskSpec& task, const EnvState& s);

// Uniform random actions in [-1, 1]^2 (floor reference).
std::array<float, 2> random_action(Rng& rng);

// Mean episode returns of the two reference policies, estimated over
// `episodes` rollouts; used to normalise evaluation scores.
struct ReferenceReturns {
    double oracle_mean = 0.0;
    double random_mean = 0.0;
};
ReferenceReturns reference_returns(const TaskSpec& task, int episodes, uint64_t seed);

}  // namespace ad
