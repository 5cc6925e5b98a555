#pragma once

// Sequence-model distillation of recorded learning histories, and the
// in-context evaluation loop that replays a trained model against fresh
// tasks. Training slides fixed-length windows over each task's token stream
// and regresses the action inside every token from the tokens before it;
// evaluation starts from an empty context and lets the model fill it with
// its own transitions, so any improvement across episodes happens with the
// weights frozen.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "envs.hpp"
#include "model.hpp"
#include "source_rl.hpp"

namespace ad {

// Mean squared error over every element (batch rows x action dims). The
// pipeline never pads: windows are always full, so every position is real.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// Mean negative log-likelihood of integer targets under row-wise softmax.
// Discrete-action coverage; the point-mass pipeline trains with mse_loss.
Tensor nll_loss(const Tensor& logits, const std::vector<int64_t>& targets);

// Linear warmup to `peak` (exactly `peak` on the last warmup step), then a
// cosine decay towards zero over the remaining steps.
float cosine_lr(int64_t step, int64_t total_steps, float peak, float warmup_frac);

// Optional per-component token standardisation. Identity when the stats are
// empty. Targets are never standardised: the loss stays in raw action units.
struct TokenStats {
    std::vector<float> mean;   // token_dim entries
    std::vector<float> stdev;  // token_dim entries, floored away from zero

    bool identity() const { return mean.empty(); }
    void apply(std::span<float> token) const;
    // Standardises only the leading observation fields; used for queries,
    // whose remaining fields are zero by construction.
    void apply_obs(std::span<float> token, int64_t obs_dim) const;
};

TokenStats compute_token_stats(const std::vector<TokenSequence>& seqs);
void write_token_stats(const TokenStats& stats, const std::string& path);
TokenStats read_token_stats(const std::string& path);

// A generated dataset pulled into memory: every usable task's history,
// downsampled and packed into a token stream.
struct LoadedDataset {
    DatasetManifest manifest;
    EnvId env = EnvId::point_reacher_goal;
    EnvDims dims{};
    std::vector<TokenSequence> sequences;  // one per usable task
    std::vector<int64_t> task_indices;     // manifest entry index per sequence
    int64_t token_dim = 0;
    int64_t min_length = 0;  // shortest token stream
};

LoadedDataset load_dataset(const std::string& dir, int64_t downsample_k);

struct LossPoint {
    int64_t step = 0;
    float lr = 0.0f;
    double loss = 0.0;
};

struct TrainOutput {
    SequenceModel model;
    TokenStats stats;
    std::vector<LossPoint> curve;  // one entry per optimiser step
    int64_t context = 0;           // resolved window length in tokens
    int64_t steps = 0;
    double first_smoothed = 0.0;  // mean loss over the first up-to-10 steps
    double last_smoothed = 0.0;   // mean loss over the last up-to-10 steps
    bool aborted = false;
    std::string diagnostic;
};

// Distils the dataset into a fresh model. Deterministic in (dataset, config):
// the same inputs give bit-identical parameters regardless of thread count.
// A non-finite batch loss aborts the run, keeping the last good parameters.
TrainOutput train_ad(const LoadedDataset& ds, const ExperimentConfig& cfg);

// A frozen-weights policy that adapts by accumulating its own interaction
// history. Drive it with act(obs) -> clipped action, then feed the transition
// back via observe(). Episodes are horizon-aligned: after every `horizon`
// observed steps the context budget is re-applied. context_tokens = 0 keeps
// the whole history (the recurrent model's state is never reset); a positive
// budget keeps the most recent whole episodes for the recurrent model and a
// sliding token window for the attention model.
class StreamingPolicy {
public:
    StreamingPolicy(const SequenceModel& model, TokenStats stats, int64_t horizon,
                    int64_t context_tokens);

    // Drops all accumulated context.
    void reset();
    std::vector<float> act(std::span<const float> obs);
    void observe(std::span<const float> obs, std::span<const float> act, float reward,
                 std::span<const float> next_obs);

    int64_t obs_dim() const { return od_; }
    int64_t act_dim() const { return adim_; }

private:
    void finish_episode();

    const SequenceModel& model_;
    TokenStats stats_;
    int64_t horizon_, context_, keep_eps_, od_, adim_, td_;
    bool recurrent_;
    int64_t steps_ = 0;  // steps observed in the current episode
    SequenceModel::State st_;
    std::deque<std::vector<float>> ep_blocks_;  // recurrent, bounded: recent episodes
    std::deque<std::vector<float>> window_;     // attention: sliding token window
    std::vector<float> block_, query_, token_;
};

// One frozen-weights deployment on one task: `episodes` episodes played back
// to back, the model filling its own context through a StreamingPolicy.
// Deterministic in all arguments; only the reset jitter consumes randomness.
struct RolloutResult {
    std::vector<double> episode_returns;
};

RolloutResult icrl_rollout(const SequenceModel& model, const TokenStats& stats,
                           const TaskSpec& task, int64_t episodes, int64_t context_tokens,
                           uint64_t rollout_seed);

struct EvalRow {
    int64_t seed_index = 0;
    int64_t task_index = 0;
    int64_t episode = 0;
    double ret = 0.0;
    double normalized = 0.0;  // 0 = random reference, 1 = oracle reference
};

struct EvalReport {
    std::vector<EvalRow> rows;
    int64_t seeds = 0, tasks = 0, episodes = 0;
    std::vector<TaskSpec> task_specs;
    std::vector<double> oracle_means;  // per task
    std::vector<double> random_means;  // per task
    // Per-episode aggregates over (seed, task) pairs.
    std::vector<double> mean_curve, std_curve;  // normalized
    std::vector<double> raw_mean_curve;

    // Mean of the normalized per-episode curve over the last `tail` episodes.
    double final_tail_mean(int64_t tail) const;
    // Same over the first `head` episodes (improvement checks).
    double head_mean(int64_t head) const;
};

// Rolls every model (one per pre-training seed) over `cfg.tasks` held-out
// tasks drawn from the evaluation task seed range of `task_master_seed`.
// Pure function of its arguments.
EvalReport evaluate(const std::vector<const SequenceModel*>& models, const TokenStats& stats,
                    EnvId env, uint64_t task_master_seed, const EvalConfig& cfg,
                    int64_t context_tokens);

// Trains `cfg.eval.seeds` replicates per context length and evaluates each
// at its training context. All variants share the dataset, the task draws
// and the seed list. context 0 = full history.
struct SweepEntry {
    int64_t context_tokens = 0;  // as requested (0 = full)
    int64_t resolved_context = 0;
    std::vector<double> final_losses;  // per replicate
    EvalReport eval;
};

std::vector<SweepEntry> context_sweep(const LoadedDataset& ds, const ExperimentConfig& cfg,
                                      const std::vector<int64_t>& contexts);

// Median wall-clock cost of one deployment step (predict the action, then
// absorb the completed transition) at a fixed context size. The attention
// model slides its window so the context stays exactly at the probed size;
// the recurrent model's step cost is context-independent by construction.
struct BenchRow {
    ModelKind kind = ModelKind::ssm;
    int64_t context = 0;
    double median_us = 0.0;
    int64_t reps = 0;
};

std::vector<BenchRow> benchmark_inference(const SequenceModel& model,
                                          const std::vector<int64_t>& context_lengths,
                                          int64_t reps, uint64_t seed);

}  // namespace ad
