#include "envs.hpp"

#include <cmath>

namespace ad {

namespace {

constexpr float kDt = 0.1f;
constexpr float kDrag = 0.8f;
constexpr float kGain = 0.2f;
constexpr float kJitter = 0.01f;

float clipf(float v, float lo, float hi) { return v < lo ? lo : (v > hi ? hi : v); }

float norm2(float x, float y) { return std::sqrt(x * x + y * y); }

}  // namespace

EnvId parse_env_id(const std::string& name) {
    if (name == "point-reacher-goal") return EnvId::point_reacher_goal;
    if (name == "point-vel") return EnvId::point_vel;
    if (name == "point-dir") return EnvId::point_dir;
    throw ConfigError("unknown env '" + name +
                      "' (expected point-reacher-goal, point-vel or point-dir)");
}

std::string env_name(EnvId id) {
    switch (id) {
        case EnvId::point_reacher_goal: return "point-reacher-goal";
        case EnvId::point_vel: return "point-vel";
        case EnvId::point_dir: return "point-dir";
    }
    throw ConfigError("invalid env id");
}

EnvDims env_dims(EnvId id) {
    switch (id) {
        case EnvId::point_reacher_goal: return {4, 2, 20};
        case EnvId::point_vel: return {4, 2, 40};
        case EnvId::point_dir: return {4, 2, 40};
    }
    throw ConfigError("invalid env id");
}

TaskSpec sample_task(EnvId id, uint64_t task_seed) {
    Rng rng(task_seed);
    TaskSpec task;
    task.env = id;
    task.task_seed = task_seed;
    switch (id) {
        case EnvId::point_reacher_goal: {
            // Uniform over the unit disk via the sqrt radius trick.
            double theta = rng.uniform(0.0, 6.283185307179586);
            double r = std::sqrt(rng.uniform());
            task.goal = {static_cast<float>(r * std::cos(theta)),
                         static_cast<float>(r * std::sin(theta))};
            break;
        }
        case EnvId::point_vel:
            task.target_speed = static_cast<float>(rng.uniform(0.1, 1.0));
            break;
        case EnvId::point_dir:
            task.target_angle = static_cast<float>(rng.uniform(0.0, 6.283185307179586));
            break;
    }
    return task;
}

EnvState env_reset(const TaskSpec& /*task*/, Rng& rng) {
    EnvState s;
    for (int i = 0; i < 2; ++i)
        s.pos[i] = clipf(static_cast<float>(rng.normal(0.0, kJitter)), -5 * kJitter, 5 * kJitter);
    for (int i = 0; i < 2; ++i)
        s.vel[i] = clipf(static_cast<float>(rng.normal(0.0, kJitter)), -5 * kJitter, 5 * kJitter);
    s.t = 0;
    return s;
}

std::array<float, 4> observe(const EnvState& s) { return {s.pos[0], s.pos[1], s.vel[0], s.vel[1]}; }

StepResult env_step(const TaskSpec& task, const EnvState& s, const std::array<float, 2>& action) {
    if (!std::isfinite(action[0]) || !std::isfinite(action[1]))
        throw NumericError("env_step: non-finite action");
    std::array<float, 2> a{clipf(action[0], -1.0f, 1.0f), clipf(action[1], -1.0f, 1.0f)};

    StepResult r;
    r.next = s;
    for (int i = 0; i < 2; ++i) {
        r.next.vel[i] = kDrag * s.vel[i] + kGain * a[i];
        r.next.pos[i] = s.pos[i] + kDt * r.next.vel[i];
    }
    r.next.t = s.t + 1;
    r.obs = observe(r.next);

    // Rewards are evaluated on the post-transition state.
    switch (task.env) {
        case EnvId::point_reacher_goal:
            r.reward = -norm2(r.next.pos[0] - task.goal[0], r.next.pos[1] - task.goal[1]);
            break;
        case EnvId::point_vel:
            r.reward = -std::abs(norm2(r.next.vel[0], r.next.vel[1]) - task.target_speed);
            break;
        case EnvId::point_dir: {
            float ux = std::cos(task.target_angle), uy = std::sin(task.target_angle);
            r.reward = r.next.vel[0] * ux + r.next.vel[1] * uy -
                       0.01f * (a[0] * a[0] + a[1] * a[1]);
            break;
        }
    }
    r.done = r.next.t >= env_dims(task.env).horizon;
    return r;
}

std::array<float, 2> oracle_action(const TaskSpec& task, const EnvState& s) {
    switch (task.env) {
        case EnvId::point_reacher_goal: {
            // PD controller toward the goal; saturates far away, damps nearby.
            float ex = task.goal[0] - s.pos[0];
            float ey = task.goal[1] - s.pos[1];
            constexpr float kp = 6.0f, kd = 3.0f;
            return {clipf(kp * ex - kd * s.vel[0], -1.0f, 1.0f),
                    clipf(kp * ey - kd * s.vel[1], -1.0f, 1.0f)};
        }
        case EnvId::point_vel: {
            // Steady state of the dynamics is v = a, so track a = s * u with a
            // proportional boost during the transient.
            float sp = norm2(s.vel[0], s.vel[1]);
            float ux = 1.0f, uy = 0.0f;
            if (sp > 1e-6f) {
                ux = s.vel[0] / sp;
                uy = s.vel[1] / sp;
            }
            float tx = task.target_speed * ux, ty = task.target_speed * uy;
            constexpr float kv = 2.0f;
            return {clipf(tx + kv * (tx - s.vel[0]), -1.0f, 1.0f),
                    clipf(ty + kv * (ty - s.vel[1]), -1.0f, 1.0f)};
        }
        case EnvId::point_dir:
            return {std::cos(task.target_angle), std::sin(task.target_angle)};
    }
    throw ConfigError("invalid env id");
}

std::array<float, 2> random_action(Rng& rng) {
    return {static_cast<float>(rng.uniform(-1.0, 1.0)), static_cast<float>(rng.uniform(-1.0, 1.0))};
}

ReferenceReturns reference_returns(const TaskSpec& task, int episodes, uint64_t seed) {
    if (episodes < 1) throw ConfigError("reference_returns: episodes must be >= 1");
    ReferenceReturns out;
    Rng reset_rng(seed, 1);
    Rng action_rng(seed, 2);
    for (int e = 0; e < episodes; ++e) {
        EnvState s = env_reset(task, reset_rng);
        double ret = 0.0;
        for (;;) {
            StepResult r = env_step(task, s, oracle_action(task, s));
            ret += r.reward;
            s = r.next;
            if (r.done) break;
        }
        out.oracle_mean += ret;
    }
    for (int e = 0; e < episodes; ++e) {
        EnvState s = env_reset(task, reset_rng);
        double ret = 0.0;
        for (;;) {
            StepResult r = env_step(task, s, random_action(action_rng));
            ret += r.reward;
            s = r.next;
            if (r.done) break;
        }
        out.random_mean += ret;
    }
    out.oracle_mean /= episodes;
    out.random_mean /= episodes;
    return out;
}

}  // namespace ad
