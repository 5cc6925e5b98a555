#pragma once

// Generates learning histories: one small policy-gradient learner is trained
// per task and every episode it plays — exploration included — is recorded in
// order. The recorded improvement curve is the signal the sequence models are
// later trained to imitate.

#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "envs.hpp"
#include "tensor.hpp"

namespace ad {

// Diagonal-Gaussian policy: 2-layer tanh MLP for the mean, one global
// learnable log-std per action dim. The log-std is kept inside
// [log_std_min, log_std_max] by projecting after each optimiser step.
struct GaussianPolicy {
    Tensor w1, b1, w2, b2, log_std;
    int64_t obs_dim = 0, act_dim = 0, hidden = 0;

    GaussianPolicy(int64_t obs_dim, int64_t act_dim, int64_t hidden, float log_std_init,
                   uint64_t init_seed);

    std::vector<Tensor> params();

    // Graph-building mean for a batch of observations (rows).
    Tensor mean_graph(const Tensor& obs_batch) const;

    // Sampling path used while interacting (no graph): writes the raw
    // Gaussian sample and its [-1, 1]-clipped version.
    void act(std::span<const float> obs, Rng& rng, std::span<float> raw,
             std::span<float> executed) const;

    // Deterministic path: the clipped mean, no noise, no RNG consumption.
    void act_mean(std::span<const float> obs, std::span<float> executed) const;

    void clamp_log_std(float lo, float hi);
};

struct SourceRlConfig {
    int64_t batch_episodes = 5;
    float lr = 3e-3f;
    float ema_decay = 0.9f;
    int64_t hidden = 64;
    float log_std_init = -0.5f;
    float log_std_min = -3.0f;
    float log_std_max = 1.0f;
    // Exploration annealing: the log-std ceiling decays linearly from
    // log_std_init to this value across the run, so late histories approach
    // the deterministic behavior a frozen distilled policy produces. Values
    // >= log_std_max disable the schedule.
    float log_std_anneal_to = -2.0f;
    // Scripted data-collection episodes recorded at the start of each run
    // (before any learning): a fixed two-leg full-throttle sweep whose reward
    // trace identifies the hidden task parameters. Gives every history a
    // deterministic, task-independent opening an imitation policy can
    // reproduce to gather information from an empty context.
    int64_t scripted_warmup = 1;
    // Per-task exploration spread used by generate_dataset: each task's
    // learner draws log_std_init uniformly from [min, max], so the corpus
    // covers the (noise level x competence) plane and near-deterministic
    // behavior appears at every quality level. min >= max disables the draw.
    float log_std_init_min = -2.0f;
    float log_std_init_max = -0.3f;
    // Periodic deterministic evaluation: every n-th episode is played with
    // the mean action (no exploration noise) and recorded like any other, but
    // never enters an update batch. Downsampling at a multiple of n turns the
    // retained stream into a noise-free improvement ladder — the same kind of
    // trajectory a deterministic imitation policy produces when deployed.
    // 0 disables.
    int64_t greedy_eval_every = 10;
};

struct LearningHistory {
    TaskSpec task;
    uint64_t learner_seed = 0;
    TrajectoryData data;           // completed episodes, in generation order
    std::vector<double> returns;   // one entry per completed episode
    bool aborted = false;
    std::string diagnostic;
};

// Runs REINFORCE with an EMA return baseline on one task. Deterministic in
// (task, seed, config). On a non-finite loss or action the run aborts with a
// diagnostic, keeping every episode completed so far.
LearningHistory train_source(const TaskSpec& task, int64_t num_episodes, uint64_t seed,
                             const SourceRlConfig& cfg = {});

// Same loop with a caller-supplied policy (exercises the abort path).
LearningHistory train_source_with_policy(GaussianPolicy& policy, const TaskSpec& task,
                                         int64_t num_episodes, uint64_t seed,
                                         const SourceRlConfig& cfg = {});

// Mean return over the first/last max(1, n/10) episodes.
double first_decile_mean(const std::vector<double>& returns);
double last_decile_mean(const std::vector<double>& returns);

// Population variance of the executed action components within episode e.
double episode_action_variance(const TrajectoryData& data, int64_t e);

struct DatasetManifest {
    std::string env;
    int64_t num_episodes = 0;
    int64_t horizon = 0;
    int64_t obs_dim = 0;
    int64_t act_dim = 0;
    uint64_t master_seed = 0;

    struct Entry {
        int64_t index = 0;
        std::string file;  // empty when failed
        TaskSpec task;
        uint64_t learner_seed = 0;
        std::vector<double> returns;
        bool failed = false;
        std::string diagnostic;
    };
    std::vector<Entry> entries;

    int64_t num_ok() const;
};

// Samples `num_tasks` tasks from the training seed range, trains one learner
// per task and writes one trajectory file per task plus manifest.json into
// out_dir. Per-task failures are recorded in the manifest; generation
// continues.
DatasetManifest generate_dataset(EnvId env, int64_t num_tasks, int64_t num_episodes,
                                 uint64_t master_seed, const std::string& out_dir,
                                 const SourceRlConfig& cfg = {});

void write_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

}  // namespace ad
