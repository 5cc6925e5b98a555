#pragma once

// Runtime facade over the two backbone kinds plus checkpoint serialisation.
// Training, evaluation and the C API all talk to SequenceModel; only tests
// instantiate the templated models directly (e.g. in double precision).

#include <string>
#include <variant>
#include <vector>

#include "ssm.hpp"
#include "transformer.hpp"

namespace ad {

enum class ModelKind { ssm, transformer };

ModelKind parse_model_kind(const std::string& name);
std::string model_kind_name(ModelKind k);

struct ModelConfig {
    ModelKind kind = ModelKind::ssm;
    int64_t token_dim = 0;
    int64_t act_dim = 0;
    int64_t embed_dim = 32;
    int64_t d_model = 128;
    int64_t n_layers = 4;
    // ssm
    int64_t state_dim = 16;
    int64_t conv_width = 4;
    int64_t expand = 2;
    int64_t dt_rank = 0;
    // transformer
    int64_t n_heads = 4;
    int64_t ff_dim = 512;
    int64_t max_context = 2304;
    uint64_t init_seed = 1;

    SsmConfig ssm() const {
        return SsmConfig{token_dim, act_dim, embed_dim, d_model,   n_layers,
                         state_dim, conv_width, expand,  dt_rank, init_seed};
    }
    TransformerConfig transformer() const {
        return TransformerConfig{token_dim, act_dim, embed_dim, d_model,    n_layers,
                                 n_heads,   ff_dim,  max_context, init_seed};
    }
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json);

class SequenceModel {
public:
    explicit SequenceModel(const ModelConfig& cfg);

    ModelKind kind() const { return cfg_.kind; }
    const ModelConfig& config() const { return cfg_; }

    Tensor forward(const Tensor& tokens, const Tensor& queries) const;

    struct State {
        std::variant<SsmModel::State, TransformerModel::State> v;
    };
    State new_state() const;
    void consume(State& st, std::span<const float> token) const;
    std::vector<float> predict(const State& st, std::span<const float> query) const;

    std::vector<std::pair<std::string, Tensor>> named_params() const;
    int64_t param_count() const;

    int64_t train_steps = 0;  // persisted in checkpoints

private:
    ModelConfig cfg_;
    std::variant<SsmModel, TransformerModel> impl_;
};

// Binary checkpoint: magic "ADCKPT01", config echo, step counter, named
// parameter blobs (f32), CRC-32 footer over everything after the magic.
void save_checkpoint(const SequenceModel& model, const std::string& path);
SequenceModel load_checkpoint(const std::string& path);

// CRC-32 of an entire file (used to assert checkpoints stay untouched).
uint32_t file_crc32(const std::string& path);

}  // namespace ad
