#include "config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

namespace ad {
namespace {

using nlohmann::json;

void require_known_keys(const json& obj, const char* section,
                        std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed) {
            if (item.key() == key) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("unknown key \"" + item.key() + "\" in " + section);
        }
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("bad value for \"") + key + "\"");
    }
}

void check_positive(int64_t value, const char* what) {
    if (value <= 0) throw ConfigError(std::string(what) + " must be positive");
}

}  // namespace

void ExperimentConfig::validate() const {
    check_positive(data.tasks, "data.tasks");
    if (data.episodes < 0) throw ConfigError("data.episodes must be non-negative");

    check_positive(model.embed_dim, "model.embed_dim");
    check_positive(model.d_model, "model.d_model");
    check_positive(model.n_layers, "model.n_layers");
    check_positive(model.state_dim, "model.state_dim");
    check_positive(model.conv_width, "model.conv_width");
    check_positive(model.expand, "model.expand");
    if (model.dt_rank < 0) throw ConfigError("model.dt_rank must be non-negative");
    check_positive(model.n_heads, "model.n_heads");
    if (model.ff_dim < 0) throw ConfigError("model.ff_dim must be non-negative");
    check_positive(model.max_context, "model.max_context");
    if (model.kind == ModelKind::transformer && model.d_model % model.n_heads != 0) {
        throw ConfigError("model.d_model must be divisible by model.n_heads");
    }

    if (train.context < 0) throw ConfigError("train.context must be non-negative");
    check_positive(train.downsample_k, "train.downsample_k");
    if (!(train.noise_sigma >= 0.0f)) throw ConfigError("train.noise_sigma must be non-negative");
    check_positive(train.epochs, "train.epochs");
    check_positive(train.batch_size, "train.batch_size");
    if (!(train.peak_lr > 0.0f)) throw ConfigError("train.peak_lr must be positive");
    if (!(train.warmup_frac >= 0.0f && train.warmup_frac < 1.0f)) {
        throw ConfigError("train.warmup_frac must lie in [0, 1)");
    }
    if (!(train.weight_decay >= 0.0f)) throw ConfigError("train.weight_decay must be non-negative");
    check_positive(train.log_every, "train.log_every");

    check_positive(eval.tasks, "eval.tasks");
    check_positive(eval.episodes, "eval.episodes");
    check_positive(eval.seeds, "eval.seeds");
    check_positive(eval.reference_episodes, "eval.reference_episodes");

    check_positive(bench.reps, "bench.reps");
    if (bench.context_lengths.empty()) throw ConfigError("bench.context_lengths must not be empty");
    for (int64_t c : bench.context_lengths) check_positive(c, "bench.context_lengths entry");
    for (int64_t c : sweep_contexts) {
        if (c < 0) throw ConfigError("sweep.contexts entries must be non-negative");
    }
}

ExperimentConfig experiment_from_json(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid json: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be an object");
    require_known_keys(root, "config root",
                       {"env", "data", "model", "train", "eval", "bench", "sweep"});

    ExperimentConfig cfg;
    try {
        if (root.contains("env")) cfg.env = parse_env_id(root.at("env").get<std::string>());

        if (root.contains("data")) {
            const json& d = root.at("data");
            require_known_keys(d, "data", {"dir", "tasks", "episodes", "seed"});
            read_field(d, "dir", cfg.data.dir);
            read_field(d, "tasks", cfg.data.tasks);
            read_field(d, "episodes", cfg.data.episodes);
            read_field(d, "seed", cfg.data.seed);
        }

        if (root.contains("model")) {
            const json& m = root.at("model");
            require_known_keys(m, "model",
                               {"kind", "embed_dim", "d_model", "n_layers", "state_dim",
                                "conv_width", "expand", "dt_rank", "n_heads", "ff_dim",
                                "max_context"});
            if (m.contains("kind")) cfg.model.kind = parse_model_kind(m.at("kind").get<std::string>());
            read_field(m, "embed_dim", cfg.model.embed_dim);
            read_field(m, "d_model", cfg.model.d_model);
            read_field(m, "n_layers", cfg.model.n_layers);
            read_field(m, "state_dim", cfg.model.state_dim);
            read_field(m, "conv_width", cfg.model.conv_width);
            read_field(m, "expand", cfg.model.expand);
            read_field(m, "dt_rank", cfg.model.dt_rank);
            read_field(m, "n_heads", cfg.model.n_heads);
            read_field(m, "ff_dim", cfg.model.ff_dim);
            read_field(m, "max_context", cfg.model.max_context);
        }

        if (root.contains("train")) {
            const json& t = root.at("train");
            require_known_keys(t, "train",
                               {"context", "downsample_k", "noise_sigma", "standardize",
                                "epochs", "batch_size", "peak_lr", "warmup_frac",
                                "weight_decay", "seed", "log_every"});
            read_field(t, "context", cfg.train.context);
            read_field(t, "downsample_k", cfg.train.downsample_k);
            read_field(t, "noise_sigma", cfg.train.noise_sigma);
            read_field(t, "standardize", cfg.train.standardize);
            read_field(t, "epochs", cfg.train.epochs);
            read_field(t, "batch_size", cfg.train.batch_size);
            read_field(t, "peak_lr", cfg.train.peak_lr);
            read_field(t, "warmup_frac", cfg.train.warmup_frac);
            read_field(t, "weight_decay", cfg.train.weight_decay);
            read_field(t, "seed", cfg.train.seed);
            read_field(t, "log_every", cfg.train.log_every);
        }

        if (root.contains("eval")) {
            const json& e = root.at("eval");
            require_known_keys(e, "eval",
                               {"tasks", "episodes", "seeds", "rollout_seed",
                                "reference_episodes"});
            read_field(e, "tasks", cfg.eval.tasks);
            read_field(e, "episodes", cfg.eval.episodes);
            read_field(e, "seeds", cfg.eval.seeds);
            read_field(e, "rollout_seed", cfg.eval.rollout_seed);
            read_field(e, "reference_episodes", cfg.eval.reference_episodes);
        }

        if (root.contains("bench")) {
            const json& b = root.at("bench");
            require_known_keys(b, "bench", {"context_lengths", "reps"});
            read_field(b, "context_lengths", cfg.bench.context_lengths);
            read_field(b, "reps", cfg.bench.reps);
        }

        if (root.contains("sweep")) {
            const json& s = root.at("sweep");
            require_known_keys(s, "sweep", {"contexts"});
            read_field(s, "contexts", cfg.sweep_contexts);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }

    cfg.validate();
    return cfg;
}

std::string experiment_to_json(const ExperimentConfig& cfg) {
    json root;
    root["env"] = env_name(cfg.env);
    root["data"] = {{"dir", cfg.data.dir},
                    {"tasks", cfg.data.tasks},
                    {"episodes", cfg.data.episodes},
                    {"seed", cfg.data.seed}};
    root["model"] = {{"kind", model_kind_name(cfg.model.kind)},
                     {"embed_dim", cfg.model.embed_dim},
                     {"d_model", cfg.model.d_model},
                     {"n_layers", cfg.model.n_layers},
                     {"state_dim", cfg.model.state_dim},
                     {"conv_width", cfg.model.conv_width},
                     {"expand", cfg.model.expand},
                     {"dt_rank", cfg.model.dt_rank},
                     {"n_heads", cfg.model.n_heads},
                     {"ff_dim", cfg.model.ff_dim},
                     {"max_context", cfg.model.max_context}};
    root["train"] = {{"context", cfg.train.context},
                     {"downsample_k", cfg.train.downsample_k},
                     {"noise_sigma", cfg.train.noise_sigma},
                     {"standardize", cfg.train.standardize},
                     {"epochs", cfg.train.epochs},
                     {"batch_size", cfg.train.batch_size},
                     {"peak_lr", cfg.train.peak_lr},
                     {"warmup_frac", cfg.train.warmup_frac},
                     {"weight_decay", cfg.train.weight_decay},
                     {"seed", cfg.train.seed},
                     {"log_every", cfg.train.log_every}};
    root["eval"] = {{"tasks", cfg.eval.tasks},
                    {"episodes", cfg.eval.episodes},
                    {"seeds", cfg.eval.seeds},
                    {"rollout_seed", cfg.eval.rollout_seed},
                    {"reference_episodes", cfg.eval.reference_episodes}};
    root["bench"] = {{"context_lengths", cfg.bench.context_lengths}, {"reps", cfg.bench.reps}};
    root["sweep"] = {{"contexts", cfg.sweep_contexts}};
    return root.dump(2) + "\n";
}

ExperimentConfig load_experiment_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return experiment_from_json(buf.str());
}

void write_resolved_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write resolved config: " + path);
    out << experiment_to_json(cfg);
    if (!out) throw DataError("short write: " + path);
}

ModelConfig to_model_config(const ExperimentConfig& cfg, int64_t token_dim, int64_t act_dim) {
    ModelConfig mc;
    mc.kind = cfg.model.kind;
    mc.token_dim = token_dim;
    mc.act_dim = act_dim;
    mc.embed_dim = cfg.model.embed_dim;
    mc.d_model = cfg.model.d_model;
    mc.n_layers = cfg.model.n_layers;
    mc.state_dim = cfg.model.state_dim;
    mc.conv_width = cfg.model.conv_width;
    mc.expand = cfg.model.expand;
    mc.dt_rank = cfg.model.dt_rank;
    mc.n_heads = cfg.model.n_heads;
    mc.ff_dim = cfg.model.ff_dim;
    mc.max_context = cfg.model.max_context;
    mc.init_seed = domain_seed(cfg.train.seed, seed_domain::model_init, 0);
    if (mc.kind == ModelKind::transformer && cfg.model.ff_dim == 0) {
        int64_t target = SsmModel(mc.ssm()).param_count();
        mc.ff_dim = paired_transformer_config(mc.transformer(), target).ff_dim;
    }
    return mc;
}

}  // namespace ad
