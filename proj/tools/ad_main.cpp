// Batch front door: dataset generation, training, evaluation, context sweeps,
// inference benchmarking and plot emission. Everything goes through the C API;
// flags override fields of the JSON config, and every run's resolved config is
// snapshotted next to its artifacts. Exit codes: 0 ok, 2 config, 3 data,
// 4 numeric, 1 internal.

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "admamba.h"
#include "json.hpp"

using nlohmann::json;

namespace {

struct CliFailure {
    int code;
    std::string msg;
};

const char* failure_kind(int code) {
    switch (code) {
        case AD_ERR_CONFIG: return "config-error";
        case AD_ERR_DATA: return "data-error";
        case AD_ERR_NUMERIC: return "numeric-error";
        default: return "internal-error";
    }
}

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw CliFailure{AD_ERR_CONFIG, "cannot read config file: " + path};
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw CliFailure{AD_ERR_CONFIG, "config is not valid json: " + path};
    if (!j.is_object()) throw CliFailure{AD_ERR_CONFIG, "config root must be an object"};
    return j;
}

// Flag overrides collected per subcommand; only flags the user passed are
// written into the config document.
class Overrides {
public:
    template <typename T>
    void field(CLI::App* sub, const std::string& flag, T& slot, std::string ptr,
               const std::string& desc) {
        CLI::Option* o = sub->add_option(flag, slot, desc);
        items_.emplace_back(o, [&slot, ptr = std::move(ptr)](json& j) {
            j[json::json_pointer(ptr)] = slot;
        });
    }

    void apply(json& cfg) const {
        for (const auto& [opt, setter] : items_)
            if (opt->count() > 0) setter(cfg);
    }

private:
    std::vector<std::pair<CLI::Option*, std::function<void(json&)>>> items_;
};

// Timestamps live only in this sidecar so artifact bytes stay reproducible.
void log_run(const std::string& out_dir, const std::string& argv_line, int code) {
    if (out_dir.empty()) return;
    std::ofstream log(out_dir + "/run.log", std::ios::app);
    if (!log) return;
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    log << stamp << ' ' << argv_line << " -> exit " << code << '\n';
}

void check_status(ad_status st, const std::string& out_dir, const std::string& argv_line) {
    log_run(out_dir, argv_line, static_cast<int>(st));
    if (st != AD_OK) throw CliFailure{static_cast<int>(st), ad_last_error()};
}

}  // namespace

int main(int argc, char** argv) {
    std::string argv_line;
    for (int i = 0; i < argc; ++i) {
        if (i) argv_line += ' ';
        argv_line += argv[i];
    }

    CLI::App app{"in-context distillation pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    app.add_option("--config,-c", config_path, "json config file")->envname("AD_CONFIG");

    // gen-data ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "record source-learner histories");
    Overrides gen_ov;
    std::string gen_env;
    int64_t gen_tasks = 0, gen_episodes = 0;
    uint64_t gen_seed = 0;
    gen_ov.field(gen, "--env", gen_env, "/env", "environment id");
    gen_ov.field(gen, "--tasks", gen_tasks, "/data/tasks", "number of tasks");
    gen_ov.field(gen, "--episodes", gen_episodes, "/data/episodes", "episodes per task");
    gen_ov.field(gen, "--seed", gen_seed, "/data/seed", "master seed");
    gen->add_option("--out,-o", out_dir, "output directory")->required();

    // train ------------------------------------------------------------------
    auto* train = app.add_subcommand("train", "distil a dataset into a sequence model");
    Overrides train_ov;
    std::string train_env, train_model, train_data;
    int64_t train_context = 0, train_epochs = 0, train_batch = 0, train_down = 0;
    uint64_t train_seed = 0;
    double train_lr = 0, train_noise = 0, train_wd = 0;
    bool train_std = false;
    train_ov.field(train, "--env", train_env, "/env", "environment id");
    train_ov.field(train, "--model", train_model, "/model/kind", "ssm | transformer");
    train_ov.field(train, "--data", train_data, "/data/dir", "dataset directory");
    train_ov.field(train, "--context", train_context, "/train/context",
                   "training window tokens (0 = whole history)");
    train_ov.field(train, "--epochs", train_epochs, "/train/epochs", "epochs");
    train_ov.field(train, "--batch", train_batch, "/train/batch_size", "batch size");
    train_ov.field(train, "--lr", train_lr, "/train/peak_lr", "peak learning rate");
    train_ov.field(train, "--seed", train_seed, "/train/seed", "training seed");
    train_ov.field(train, "--downsample", train_down, "/train/downsample_k",
                   "keep every k-th episode");
    train_ov.field(train, "--noise", train_noise, "/train/noise_sigma",
                   "token noise stdev");
    train_ov.field(train, "--weight-decay", train_wd, "/train/weight_decay", "weight decay");
    train_ov.field(train, "--standardize", train_std, "/train/standardize",
                   "standardize tokens (true|false)");
    train->add_option("--out,-o", out_dir, "output directory")->required();

    // eval -------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "replay checkpoints on held-out tasks");
    Overrides eval_ov;
    std::vector<std::string> eval_ckpts;
    std::string eval_env;
    int64_t eval_tasks = 0, eval_episodes = 0, eval_refs = 0, eval_context = 0;
    uint64_t eval_rollout_seed = 0, eval_task_seed = 0;
    eval->add_option("--checkpoints", eval_ckpts, "checkpoint files, one per seed")
        ->required()
        ->expected(-1);
    eval_ov.field(eval, "--env", eval_env, "/env", "environment id");
    eval_ov.field(eval, "--tasks", eval_tasks, "/eval/tasks", "held-out tasks");
    eval_ov.field(eval, "--episodes", eval_episodes, "/eval/episodes", "episodes per task");
    eval_ov.field(eval, "--context", eval_context, "/train/context",
                  "context budget in tokens (0 = unbounded)");
    eval_ov.field(eval, "--rollout-seed", eval_rollout_seed, "/eval/rollout_seed",
                  "rollout seed");
    eval_ov.field(eval, "--task-seed", eval_task_seed, "/data/seed",
                  "held-out task master seed");
    eval_ov.field(eval, "--reference-episodes", eval_refs, "/eval/reference_episodes",
                  "episodes per reference policy");
    eval->add_option("--out,-o", out_dir, "output directory")->required();

    // sweep ------------------------------------------------------------------
    auto* sweep = app.add_subcommand("sweep", "train and evaluate across context lengths");
    Overrides sweep_ov;
    std::vector<int64_t> sweep_contexts;
    std::string sweep_env, sweep_model, sweep_data;
    int64_t sweep_seeds = 0, sweep_epochs = 0, sweep_tasks = 0, sweep_episodes = 0;
    sweep_ov.field(sweep, "--contexts", sweep_contexts, "/sweep/contexts",
                   "context lengths in tokens (0 = whole history)");
    sweep_ov.field(sweep, "--env", sweep_env, "/env", "environment id");
    sweep_ov.field(sweep, "--model", sweep_model, "/model/kind", "ssm | transformer");
    sweep_ov.field(sweep, "--data", sweep_data, "/data/dir", "dataset directory");
    sweep_ov.field(sweep, "--seeds", sweep_seeds, "/eval/seeds", "replicates per context");
    sweep_ov.field(sweep, "--epochs", sweep_epochs, "/train/epochs", "epochs");
    sweep_ov.field(sweep, "--tasks", sweep_tasks, "/eval/tasks", "held-out tasks");
    sweep_ov.field(sweep, "--episodes", sweep_episodes, "/eval/episodes",
                   "episodes per task");
    sweep->add_option("--out,-o", out_dir, "output directory")->required();

    // bench ------------------------------------------------------------------
    auto* bench = app.add_subcommand("bench", "time one inference step per context length");
    Overrides bench_ov;
    std::vector<int64_t> bench_contexts;
    std::string bench_env;
    int64_t bench_reps = 0;
    bench_ov.field(bench, "--contexts", bench_contexts, "/bench/context_lengths",
                   "probed context lengths");
    bench_ov.field(bench, "--reps", bench_reps, "/bench/reps", "timed repetitions");
    bench_ov.field(bench, "--env", bench_env, "/env", "environment id");
    bench->add_option("--out,-o", out_dir, "output directory")->required();

    // plot -------------------------------------------------------------------
    auto* plot = app.add_subcommand("plot", "render a learning-curve svg from eval rows");
    std::string plot_csv, plot_svg, plot_title;
    plot->add_option("csv", plot_csv, "eval_rows.csv file")->required();
    plot->add_option("--out,-o", plot_svg, "output svg (default: csv with .svg)");
    plot->add_option("--title", plot_title, "plot title");

    try {
        app.parse(argc, argv);

        auto config_text = [&](const Overrides& ov) {
            json cfg = load_config(config_path);
            ov.apply(cfg);
            return cfg.dump();
        };

        if (gen->parsed()) {
            check_status(ad_gen_data(config_text(gen_ov).c_str(), out_dir.c_str()), out_dir,
                         argv_line);
            std::printf("dataset written to %s\n", out_dir.c_str());
        } else if (train->parsed()) {
            check_status(ad_train(config_text(train_ov).c_str(), out_dir.c_str()), out_dir,
                         argv_line);
            std::printf("checkpoint and loss curve written to %s\n", out_dir.c_str());
        } else if (eval->parsed()) {
            std::vector<const char*> ptrs;
            ptrs.reserve(eval_ckpts.size());
            for (const auto& s : eval_ckpts) ptrs.push_back(s.c_str());
            check_status(ad_eval(config_text(eval_ov).c_str(), ptrs.data(),
                                 static_cast<int32_t>(ptrs.size()), out_dir.c_str()),
                         out_dir, argv_line);
            std::printf("evaluation report written to %s\n", out_dir.c_str());
        } else if (sweep->parsed()) {
            check_status(ad_sweep(config_text(sweep_ov).c_str(), out_dir.c_str()), out_dir,
                         argv_line);
            std::printf("sweep results written to %s\n", out_dir.c_str());
        } else if (bench->parsed()) {
            check_status(ad_bench(config_text(bench_ov).c_str(), out_dir.c_str()), out_dir,
                         argv_line);
            std::printf("timings written to %s\n", out_dir.c_str());
        } else if (plot->parsed()) {
            std::string svg = plot_svg;
            if (svg.empty()) {
                svg = plot_csv;
                auto dot = svg.find_last_of('.');
                if (dot != std::string::npos) svg.resize(dot);
                svg += ".svg";
            }
            ad_status st = ad_plot(plot_csv.c_str(), svg.c_str(), plot_title.c_str());
            if (st != AD_OK) throw CliFailure{static_cast<int>(st), ad_last_error()};
            std::printf("plot written to %s\n", svg.c_str());
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::fprintf(stderr, "[ad:config-error] %s\n", e.what());
        return AD_ERR_CONFIG;
    } catch (const CliFailure& f) {
        std::fprintf(stderr, "[ad:%s] %s\n", failure_kind(f.code), f.msg.c_str());
        return f.code;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "[ad:internal-error] %s\n", e.what());
        return AD_ERR_INTERNAL;
    }
}
