#pragma once

// Experiment configuration: one JSON document drives dataset generation,
// training, evaluation, sweeps and benchmarks. Parsing is strict — unknown
// keys are rejected so typos fail loudly — and every run can write back a
// fully resolved snapshot of what it actually used.

#include <cstdint>
#include <string>
#include <vector>

#include "envs.hpp"
#include "model.hpp"

namespace ad {

struct DataConfig {
    std::string dir;            // dataset directory (trajectories + manifest)
    int64_t tasks = 32;
    int64_t episodes = 800;
    uint64_t seed = 7;
};

struct ModelSpecConfig {
    ModelKind kind = ModelKind::ssm;
    int64_t embed_dim = 32;
    int64_t d_model = 48;
    int64_t n_layers = 2;
    // selective-scan backbone
    int64_t state_dim = 8;
    int64_t conv_width = 4;
    int64_t expand = 2;
    int64_t dt_rank = 0;  // 0 = ceil(d_model / 16)
    // attention backbone
    int64_t n_heads = 4;
    int64_t ff_dim = 0;  // 0 = width-searched to match the equivalent ssm's parameter count
    int64_t max_context = 2304;
};

struct TrainConfig {
    int64_t context = 0;  // tokens; 0 = full downsampled history
    int64_t downsample_k = 1;
    float noise_sigma = 0.01f;
    bool standardize = false;
    int64_t epochs = 30;
    int64_t batch_size = 16;
    float peak_lr = 3e-4f;
    float warmup_frac = 0.1f;
    float weight_decay = 0.0f;
    uint64_t seed = 1;
    int64_t log_every = 10;
};

struct EvalConfig {
    int64_t tasks = 10;
    int64_t episodes = 40;
    int64_t seeds = 3;  // number of pre-training seeds expected / evaluated
    uint64_t rollout_seed = 99;
    int64_t reference_episodes = 20;  // rollouts per task for oracle/random lines
};

struct BenchConfig {
    std::vector<int64_t> context_lengths{128, 512, 2048};
    int64_t reps = 100;
};

struct ExperimentConfig {
    EnvId env = EnvId::point_reacher_goal;
    DataConfig data;
    ModelSpecConfig model;
    TrainConfig train;
    EvalConfig eval;
    BenchConfig bench;
    std::vector<int64_t> sweep_contexts;  // for sweeps; 0 entries mean full history

    void validate() const;  // ConfigError on out-of-range values
};

ExperimentConfig experiment_from_json(const std::string& text);
std::string experiment_to_json(const ExperimentConfig& cfg);

ExperimentConfig load_experiment_file(const std::string& path);
void write_resolved_config(const ExperimentConfig& cfg, const std::string& path);

// Backbone config for the experiment's model on this token geometry. For a
// transformer with ff_dim = 0 the feed-forward width is searched so the
// parameter count matches the selective-scan model the same experiment
// would build.
ModelConfig to_model_config(const ExperimentConfig& cfg, int64_t token_dim, int64_t act_dim);

}  // namespace ad
