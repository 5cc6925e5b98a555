#include "admamba.h"

#include <cstring>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include "config.hpp"
#include "distill.hpp"
#include "report.hpp"

namespace fs = std::filesystem;

namespace {

thread_local std::string g_last_error;

template <typename Fn>
ad_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return AD_OK;
    } catch (const ad::ConfigError& e) {
        g_last_error = e.what();
        return AD_ERR_CONFIG;
    } catch (const ad::DataError& e) {
        g_last_error = e.what();
        return AD_ERR_DATA;
    } catch (const ad::NumericError& e) {
        g_last_error = e.what();
        return AD_ERR_NUMERIC;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return AD_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown failure";
        return AD_ERR_INTERNAL;
    }
}

ad::ExperimentConfig parse_config(const char* config_json) {
    if (!config_json) throw ad::ConfigError("config json is required");
    return ad::experiment_from_json(config_json);
}

fs::path prepare_out_dir(const ad::ExperimentConfig& cfg, const char* out_dir) {
    if (!out_dir || !*out_dir) throw ad::ConfigError("output directory is required");
    fs::path dir(out_dir);
    fs::create_directories(dir);
    ad::write_resolved_config(cfg, (dir / "resolved_config.json").string());
    return dir;
}

std::string run_label(const ad::ExperimentConfig& cfg, ad::ModelKind kind) {
    return ad::model_kind_name(kind) + " on " + ad::env_name(cfg.env);
}

void write_eval_artifacts(const fs::path& dir, const std::string& suffix,
                          const ad::EvalReport& rep, const std::string& label) {
    ad::write_eval_rows_csv((dir / ("eval_rows" + suffix + ".csv")).string(), rep);
    ad::write_eval_summary_json((dir / ("eval_summary" + suffix + ".json")).string(), rep,
                                label);
    ad::write_learning_curve_svg((dir / ("learning_curve" + suffix + ".svg")).string(), rep,
                                 label);
}

}  // namespace

extern "C" {

const char* ad_version(void) { return "0.1.0"; }

const char* ad_last_error(void) { return g_last_error.c_str(); }

ad_status ad_gen_data(const char* config_json, const char* out_dir) {
    return guarded([&] {
        ad::ExperimentConfig cfg = parse_config(config_json);
        fs::path dir = prepare_out_dir(cfg, out_dir);
        ad::generate_dataset(cfg.env, cfg.data.tasks, cfg.data.episodes, cfg.data.seed,
                             dir.string());
    });
}

ad_status ad_train(const char* config_json, const char* out_dir) {
    return guarded([&] {
        ad::ExperimentConfig cfg = parse_config(config_json);
        fs::path dir = prepare_out_dir(cfg, out_dir);
        ad::LoadedDataset ds = ad::load_dataset(cfg.data.dir, cfg.train.downsample_k);
        ad::TrainOutput out = ad::train_ad(ds, cfg);
        ad::write_loss_curve_csv((dir / "loss.csv").string(), out.curve, cfg.train.log_every);
        ad::write_token_stats(out.stats, (dir / "token_stats.json").string());
        ad::save_checkpoint(out.model, (dir / "model.ckpt").string());
        if (out.aborted) throw ad::NumericError(out.diagnostic);
    });
}

ad_status ad_eval(const char* config_json, const char* const* checkpoint_paths,
                  int32_t n_checkpoints, const char* out_dir) {
    return guarded([&] {
        ad::ExperimentConfig cfg = parse_config(config_json);
        if (!checkpoint_paths || n_checkpoints < 1)
            throw ad::ConfigError("at least one checkpoint is required");
        fs::path dir = prepare_out_dir(cfg, out_dir);

        std::vector<ad::SequenceModel> models;
        models.reserve(n_checkpoints);
        for (int32_t i = 0; i < n_checkpoints; ++i) {
            if (!checkpoint_paths[i]) throw ad::ConfigError("checkpoint path is null");
            models.push_back(ad::load_checkpoint(checkpoint_paths[i]));
        }
        ad::TokenStats stats;
        fs::path sidecar = fs::path(checkpoint_paths[0]).parent_path() / "token_stats.json";
        if (fs::exists(sidecar)) stats = ad::read_token_stats(sidecar.string());

        std::vector<const ad::SequenceModel*> views;
        views.reserve(models.size());
        for (const auto& m : models) views.push_back(&m);
        ad::EvalReport rep = ad::evaluate(views, stats, cfg.env, cfg.data.seed, cfg.eval,
                                          cfg.train.context);
        write_eval_artifacts(dir, "", rep, run_label(cfg, models[0].kind()));
    });
}

ad_status ad_sweep(const char* config_json, const char* out_dir) {
    return guarded([&] {
        ad::ExperimentConfig cfg = parse_config(config_json);
        fs::path dir = prepare_out_dir(cfg, out_dir);
        ad::LoadedDataset ds = ad::load_dataset(cfg.data.dir, cfg.train.downsample_k);
        std::vector<ad::SweepEntry> entries = ad::context_sweep(ds, cfg, cfg.sweep_contexts);
        ad::write_sweep_csv((dir / "sweep.csv").string(), entries);
        for (const ad::SweepEntry& e : entries) {
            std::string suffix = "_ctx" + std::to_string(e.context_tokens);
            std::string label = run_label(cfg, cfg.model.kind) + ", context " +
                                std::to_string(e.resolved_context);
            write_eval_artifacts(dir, suffix, e.eval, label);
        }
    });
}

ad_status ad_bench(const char* config_json, const char* out_dir) {
    return guarded([&] {
        ad::ExperimentConfig cfg = parse_config(config_json);
        fs::path dir = prepare_out_dir(cfg, out_dir);
        ad::EnvDims dims = ad::env_dims(cfg.env);
        const int64_t td = 2 * dims.obs_dim + dims.act_dim + 1;

        std::vector<ad::BenchRow> rows;
        for (ad::ModelKind kind : {ad::ModelKind::ssm, ad::ModelKind::transformer}) {
            ad::ExperimentConfig kcfg = cfg;
            kcfg.model.kind = kind;
            ad::SequenceModel model(ad::to_model_config(kcfg, td, dims.act_dim));
            std::vector<ad::BenchRow> part = ad::benchmark_inference(
                model, cfg.bench.context_lengths, cfg.bench.reps, cfg.train.seed);
            rows.insert(rows.end(), part.begin(), part.end());
        }
        ad::write_bench_csv((dir / "bench.csv").string(), rows);
    });
}

ad_status ad_plot(const char* rows_csv_path, const char* svg_path, const char* title) {
    return guarded([&] {
        if (!rows_csv_path || !svg_path) throw ad::ConfigError("csv and svg paths are required");
        ad::EvalReport rep = ad::report_from_rows(ad::read_eval_rows_csv(rows_csv_path));
        ad::write_learning_curve_svg(svg_path, rep,
                                     title && *title ? title : "learning curve");
    });
}

/* --- streaming policy ---------------------------------------------------- */

struct ad_policy {
    ad::SequenceModel model;
    ad::StreamingPolicy stream;

    ad_policy(ad::SequenceModel m, ad::TokenStats stats, int64_t horizon,
              int64_t context_tokens)
        : model(std::move(m)), stream(model, std::move(stats), horizon, context_tokens) {}
};

ad_status ad_policy_open(const char* checkpoint_path, const char* stats_json_path,
                         int64_t horizon, int64_t context_tokens, ad_policy** out) {
    return guarded([&] {
        if (!checkpoint_path || !out) throw ad::ConfigError("checkpoint path is required");
        *out = nullptr;
        ad::SequenceModel model = ad::load_checkpoint(checkpoint_path);
        ad::TokenStats stats;
        if (stats_json_path && *stats_json_path)
            stats = ad::read_token_stats(stats_json_path);
        *out = new ad_policy(std::move(model), std::move(stats), horizon, context_tokens);
    });
}

void ad_policy_close(ad_policy* p) { delete p; }

int64_t ad_policy_obs_dim(const ad_policy* p) { return p ? p->stream.obs_dim() : 0; }

int64_t ad_policy_act_dim(const ad_policy* p) { return p ? p->stream.act_dim() : 0; }

ad_status ad_policy_reset(ad_policy* p) {
    return guarded([&] {
        if (!p) throw ad::ConfigError("null policy");
        p->stream.reset();
    });
}

ad_status ad_policy_act(ad_policy* p, const float* obs, int64_t obs_dim, float* act_out,
                        int64_t act_dim) {
    return guarded([&] {
        if (!p || !obs || !act_out) throw ad::ConfigError("null policy or buffer");
        if (act_dim != p->stream.act_dim())
            throw ad::ConfigError("action buffer width mismatch");
        std::vector<float> act =
            p->stream.act({obs, static_cast<size_t>(obs_dim)});
        std::memcpy(act_out, act.data(), act.size() * sizeof(float));
    });
}

ad_status ad_policy_observe(ad_policy* p, const float* obs, const float* act, float reward,
                            const float* next_obs) {
    return guarded([&] {
        if (!p || !obs || !act || !next_obs) throw ad::ConfigError("null policy or buffer");
        size_t od = static_cast<size_t>(p->stream.obs_dim());
        size_t adim = static_cast<size_t>(p->stream.act_dim());
        p->stream.observe({obs, od}, {act, adim}, reward, {next_obs, od});
    });
}

} /* extern "C" */
