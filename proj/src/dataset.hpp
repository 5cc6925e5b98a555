#pragma once

// Turns raw learning histories into model-ready token streams and persists
// them. A trajectory file stores fixed-horizon episodes of (obs, action,
// reward) steps; packing expands each step into a transition token
// [obs | action | reward | next_obs] whose training target is the action
// inside it. The terminal step of an episode has no successor in the file,
// so its next-obs field repeats the terminal observation; the same frozen
// tail is applied when tokens are built online during evaluation, keeping
// the two distributions identical.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"

namespace ad {

struct TrajectoryData {
    int64_t obs_dim = 0;
    int64_t act_dim = 0;
    int64_t horizon = 0;    // steps per episode
    int64_t episodes = 0;
    int64_t downsample_k = 1;  // in-memory provenance, not persisted

    // episode-major, step-major flat storage
    std::vector<float> obs;      // episodes * horizon * obs_dim
    std::vector<float> actions;  // episodes * horizon * act_dim
    std::vector<float> rewards;  // episodes * horizon

    int64_t steps() const { return episodes * horizon; }
    const float* obs_row(int64_t e, int64_t t) const {
        return obs.data() + (e * horizon + t) * obs_dim;
    }
    const float* act_row(int64_t e, int64_t t) const {
        return actions.data() + (e * horizon + t) * act_dim;
    }
    float reward_at(int64_t e, int64_t t) const { return rewards[e * horizon + t]; }
    double episode_return(int64_t e) const;
    void validate() const;
};

// Binary format: magic "ADTRAJ01"; little-endian u32 version, obs_dim,
// act_dim, horizon, episodes; body of f32 steps [obs|action|reward]; u32
// CRC32 of the body.
void write_trajectory(const TrajectoryData& data, const std::string& path);
TrajectoryData read_trajectory(const std::string& path);

// Keeps episodes with index = 0 (mod k), preserving order and contents.
TrajectoryData downsample(const TrajectoryData& data, int64_t k);

struct TokenSequence {
    int64_t obs_dim = 0;
    int64_t act_dim = 0;
    int64_t horizon = 0;
    int64_t length = 0;                   // number of tokens
    std::vector<float> tokens;            // length * token_dim
    std::vector<float> targets;           // length * act_dim, always noise-free
    std::vector<int64_t> episode_starts;  // token indices where episodes begin

    int64_t token_dim() const { return 2 * obs_dim + act_dim + 1; }
    const float* token_row(int64_t t) const { return tokens.data() + t * token_dim(); }
    const float* target_row(int64_t t) const { return targets.data() + t * act_dim; }
};

// Writes one transition token [obs | action | reward | next_obs] to out.
void build_token(std::span<float> out, std::span<const float> obs, std::span<const float> action,
                 float reward, std::span<const float> next_obs);

TokenSequence pack_tokens(const TrajectoryData& data);
TrajectoryData unpack_tokens(const TokenSequence& seq);

// Uniform start offset over the length-c windows of a length-L stream.
int64_t sample_window_start(int64_t length, int64_t window, Rng& rng);
TokenSequence slice_window(const TokenSequence& seq, int64_t start, int64_t window);

// Adds iid N(0, sigma^2) to every token component; targets stay clean.
// sigma = 0 leaves the sequence untouched and consumes no randomness.
void augment_noise(TokenSequence& seq, float sigma, Rng& rng);

// The model-visible query at position t: the token with its action, reward
// and next-obs fields zero-filled (only the current observation is known
// when the action must be predicted).
void mask_to_query(std::span<float> token, int64_t obs_dim);
std::vector<float> make_queries(const TokenSequence& seq);

}  // namespace ad
