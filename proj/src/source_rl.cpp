#include "source_rl.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "adam.hpp"
#include "threading.hpp"

namespace ad {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

std::string task_file_name(int64_t index) {
    std::ostringstream os;
    os << "task_" << std::setw(3) << std::setfill('0') << index << ".traj";
    return os.str();
}

}  // namespace

GaussianPolicy::GaussianPolicy(int64_t obs_dim_, int64_t act_dim_, int64_t hidden_,
                               float log_std_init, uint64_t init_seed)
    : obs_dim(obs_dim_), act_dim(act_dim_), hidden(hidden_) {
    Rng rng(init_seed);
    w1 = Tensor::randn({obs_dim, hidden}, rng, 1.0f / std::sqrt(static_cast<float>(obs_dim)),
                       true);
    b1 = Tensor::zeros({hidden});
    b1.set_requires_grad(true);
    w2 = Tensor::randn({hidden, act_dim}, rng, 1.0f / std::sqrt(static_cast<float>(hidden)),
                       true);
    b2 = Tensor::zeros({act_dim});
    b2.set_requires_grad(true);
    log_std = Tensor::full({act_dim}, log_std_init);
    log_std.set_requires_grad(true);
}

std::vector<Tensor> GaussianPolicy::params() { return {w1, b1, w2, b2, log_std}; }

Tensor GaussianPolicy::mean_graph(const Tensor& obs_batch) const {
    Tensor h = tanh(add(matmul(obs_batch, w1), b1));
    return add(matmul(h, w2), b2);
}

void GaussianPolicy::act(std::span<const float> obs, Rng& rng, std::span<float> raw,
                         std::span<float> executed) const {
    const float* W1 = w1.data().data();
    const float* B1 = b1.data().data();
    const float* W2 = w2.data().data();
    const float* B2 = b2.data().data();
    const float* LS = log_std.data().data();
    std::vector<float> h(hidden);
    for (int64_t j = 0; j < hidden; ++j) {
        float acc = B1[j];
        for (int64_t d = 0; d < obs_dim; ++d) acc += obs[d] * W1[d * hidden + j];
        h[j] = std::tanh(acc);
    }
    for (int64_t d = 0; d < act_dim; ++d) {
        float mu = B2[d];
        for (int64_t j = 0; j < hidden; ++j) mu += h[j] * W2[j * act_dim + d];
        float sample = mu + std::exp(LS[d]) * static_cast<float>(rng.normal());
        raw[d] = sample;
        executed[d] = std::clamp(sample, -1.0f, 1.0f);
    }
}

void GaussianPolicy::act_mean(std::span<const float> obs, std::span<float> executed) const {
    const float* W1 = w1.data().data();
    const float* B1 = b1.data().data();
    const float* W2 = w2.data().data();
    const float* B2 = b2.data().data();
    std::vector<float> h(hidden);
    for (int64_t j = 0; j < hidden; ++j) {
        float acc = B1[j];
        for (int64_t d = 0; d < obs_dim; ++d) acc += obs[d] * W1[d * hidden + j];
        h[j] = std::tanh(acc);
    }
    for (int64_t d = 0; d < act_dim; ++d) {
        float mu = B2[d];
        for (int64_t j = 0; j < hidden; ++j) mu += h[j] * W2[j * act_dim + d];
        if (!std::isfinite(mu)) throw NumericError("non-finite mean action");
        executed[d] = std::clamp(mu, -1.0f, 1.0f);
    }
}

void GaussianPolicy::clamp_log_std(float lo, float hi) {
    for (float& v : log_std.data()) v = std::clamp(v, lo, hi);
}

LearningHistory train_source(const TaskSpec& task, int64_t num_episodes, uint64_t seed,
                             const SourceRlConfig& cfg) {
    GaussianPolicy policy(env_dims(task.env).obs_dim, env_dims(task.env).act_dim, cfg.hidden,
                          cfg.log_std_init, derive_seed(seed, 0));
    return train_source_with_policy(policy, task, num_episodes, seed, cfg);
}

LearningHistory train_source_with_policy(GaussianPolicy& policy, const TaskSpec& task,
                                         int64_t num_episodes, uint64_t seed,
                                         const SourceRlConfig& cfg) {
    if (num_episodes < 1) throw ConfigError("num_episodes must be >= 1");
    EnvDims dims = env_dims(task.env);
    const int64_t T = dims.horizon;

    LearningHistory hist;
    hist.task = task;
    hist.learner_seed = seed;
    hist.data.obs_dim = dims.obs_dim;
    hist.data.act_dim = dims.act_dim;
    hist.data.horizon = T;

    Adam opt(policy.params(), {.lr = cfg.lr});
    Rng run_rng(seed, 1);

    double ema = 0.0;
    bool ema_set = false;

    std::vector<float> ep_obs(T * dims.obs_dim), ep_raw(T * dims.act_dim),
        ep_act(T * dims.act_dim), ep_rew(T);
    std::vector<float> batch_obs, batch_raw;
    std::vector<double> batch_returns;

    // Scripted sweep episodes: one full-throttle leg per action axis. The
    // policy never trains on them; they exist so every history opens with the
    // same task-independent probe whose rewards pin down the task.
    int64_t warmup = std::clamp<int64_t>(cfg.scripted_warmup, 0, num_episodes);
    for (int64_t w = 0; w < warmup; ++w) {
        EnvState st = env_reset(task, run_rng);
        double ret = 0.0;
        for (int64_t t = 0; t < T; ++t) {
            auto o = observe(st);
            std::copy(o.begin(), o.end(), ep_obs.begin() + t * dims.obs_dim);
            int64_t leg = std::min(dims.act_dim - 1, t * dims.act_dim / T);
            for (int64_t d = 0; d < dims.act_dim; ++d)
                ep_act[t * dims.act_dim + d] = d == leg ? 1.0f : 0.0f;
            StepResult step =
                env_step(task, st, {ep_act[t * dims.act_dim], ep_act[t * dims.act_dim + 1]});
            ep_rew[t] = step.reward;
            ret += step.reward;
            st = step.next;
        }
        hist.data.obs.insert(hist.data.obs.end(), ep_obs.begin(), ep_obs.end());
        hist.data.actions.insert(hist.data.actions.end(), ep_act.begin(), ep_act.end());
        hist.data.rewards.insert(hist.data.rewards.end(), ep_rew.begin(), ep_rew.end());
        ++hist.data.episodes;
        hist.returns.push_back(ret);
    }

    int64_t e = warmup;
    while (e < num_episodes && !hist.aborted) {
        // greedy evaluation episodes are recorded but never trained on
        bool greedy = cfg.greedy_eval_every > 0 && e % cfg.greedy_eval_every == 0;
        EnvState st = env_reset(task, run_rng);
        double ret = 0.0;
        try {
            for (int64_t t = 0; t < T; ++t) {
                auto o = observe(st);
                std::copy(o.begin(), o.end(), ep_obs.begin() + t * dims.obs_dim);
                size_t na = static_cast<size_t>(dims.act_dim);
                if (greedy)
                    policy.act_mean(o, {ep_act.data() + t * dims.act_dim, na});
                else
                    policy.act(o, run_rng, {ep_raw.data() + t * dims.act_dim, na},
                               {ep_act.data() + t * dims.act_dim, na});
                StepResult step = env_step(
                    task, st, {ep_act[t * dims.act_dim], ep_act[t * dims.act_dim + 1]});
                ep_rew[t] = step.reward;
                ret += step.reward;
                st = step.next;
            }
        } catch (const NumericError& ex) {
            hist.aborted = true;
            hist.diagnostic =
                std::string("episode ") + std::to_string(e) + " aborted: " + ex.what();
            break;  // discard the partial episode
        }
        hist.data.obs.insert(hist.data.obs.end(), ep_obs.begin(), ep_obs.end());
        hist.data.actions.insert(hist.data.actions.end(), ep_act.begin(), ep_act.end());
        hist.data.rewards.insert(hist.data.rewards.end(), ep_rew.begin(), ep_rew.end());
        ++hist.data.episodes;
        hist.returns.push_back(ret);
        ++e;
        if (!greedy) {
            batch_obs.insert(batch_obs.end(), ep_obs.begin(), ep_obs.end());
            batch_raw.insert(batch_raw.end(), ep_raw.begin(), ep_raw.end());
            batch_returns.push_back(ret);
        }

        auto B = static_cast<int64_t>(batch_returns.size());
        if (B == 0 || (B < cfg.batch_episodes && e < num_episodes)) continue;

        // advantage against the pre-batch baseline; the very first batch uses
        // its own mean (no earlier information exists)
        double batch_mean = 0.0;
        for (double r : batch_returns) batch_mean += r;
        batch_mean /= static_cast<double>(B);
        double baseline = ema_set ? ema : batch_mean;
        ema = ema_set ? cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * batch_mean : batch_mean;
        ema_set = true;

        int64_t rows = B * T;
        std::vector<float> weights(rows * dims.act_dim);
        for (int64_t b = 0; b < B; ++b) {
            auto adv = static_cast<float>(batch_returns[b] - baseline);
            for (int64_t i = 0; i < T * dims.act_dim; ++i)
                weights[b * T * dims.act_dim + i] = adv;
        }

        Tensor obs_t = Tensor::from_vector({rows, dims.obs_dim}, batch_obs);
        Tensor raw_t = Tensor::from_vector({rows, dims.act_dim}, batch_raw);
        Tensor w_t = Tensor::from_vector({rows, dims.act_dim}, weights);
        Tensor mean = policy.mean_graph(obs_t);
        Tensor z = mul(sub(raw_t, mean), exp(affine(policy.log_std, -1.0f, 0.0f)));
        Tensor lp = sub(affine(mul(z, z), -0.5f, -static_cast<float>(kHalfLog2Pi)),
                        policy.log_std);
        Tensor loss = affine(sum(mul(lp, w_t)), -1.0f / static_cast<float>(B), 0.0f);

        if (!std::isfinite(loss.item())) {
            hist.aborted = true;
            hist.diagnostic =
                "non-finite loss after episode " + std::to_string(e) + "; update skipped";
            break;
        }
        opt.zero_grad();
        backward(loss);
        opt.step();
        batch_obs.clear();
        batch_raw.clear();
        batch_returns.clear();
        float hi = cfg.log_std_max;
        if (cfg.log_std_anneal_to < cfg.log_std_max) {
            float progress = static_cast<float>(e) / static_cast<float>(num_episodes);
            hi = std::min(cfg.log_std_max,
                          cfg.log_std_init +
                              (cfg.log_std_anneal_to - cfg.log_std_init) * progress);
        }
        policy.clamp_log_std(cfg.log_std_min, hi);
    }
    return hist;
}

double first_decile_mean(const std::vector<double>& returns) {
    if (returns.empty()) throw DataError("no episodes recorded");
    auto n = static_cast<int64_t>(returns.size());
    int64_t d = std::max<int64_t>(1, n / 10);
    double sum = 0.0;
    for (int64_t i = 0; i < d; ++i) sum += returns[i];
    return sum / static_cast<double>(d);
}

double last_decile_mean(const std::vector<double>& returns) {
    if (returns.empty()) throw DataError("no episodes recorded");
    auto n = static_cast<int64_t>(returns.size());
    int64_t d = std::max<int64_t>(1, n / 10);
    double sum = 0.0;
    for (int64_t i = n - d; i < n; ++i) sum += returns[i];
    return sum / static_cast<double>(d);
}

double episode_action_variance(const TrajectoryData& data, int64_t e) {
    // temporal variance per action dim, averaged over dims (a constant but
    // asymmetric action vector has zero variance)
    double total = 0.0;
    for (int64_t d = 0; d < data.act_dim; ++d) {
        double mean = 0.0;
        for (int64_t t = 0; t < data.horizon; ++t) mean += data.act_row(e, t)[d];
        mean /= static_cast<double>(data.horizon);
        double var = 0.0;
        for (int64_t t = 0; t < data.horizon; ++t) {
            double diff = data.act_row(e, t)[d] - mean;
            var += diff * diff;
        }
        total += var / static_cast<double>(data.horizon);
    }
    return total / static_cast<double>(data.act_dim);
}

int64_t DatasetManifest::num_ok() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.failed ? 0 : 1;
    return n;
}

DatasetManifest generate_dataset(EnvId env, int64_t num_tasks, int64_t num_episodes,
                                 uint64_t master_seed, const std::string& out_dir,
                                 const SourceRlConfig& cfg) {
    if (num_tasks < 1) throw ConfigError("num_tasks must be >= 1");
    std::filesystem::create_directories(out_dir);

    EnvDims dims = env_dims(env);
    DatasetManifest m;
    m.env = env_name(env);
    m.num_episodes = num_episodes;
    m.horizon = dims.horizon;
    m.obs_dim = dims.obs_dim;
    m.act_dim = dims.act_dim;
    m.master_seed = master_seed;
    m.entries.resize(num_tasks);

    parallel_for(num_tasks, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            auto& e = m.entries[i];
            e.index = i;
            e.task = sample_task(env, domain_seed(master_seed, seed_domain::train_task,
                                                  static_cast<uint64_t>(i)));
            e.learner_seed =
                domain_seed(master_seed, seed_domain::learner, static_cast<uint64_t>(i));
            SourceRlConfig task_cfg = cfg;
            if (cfg.log_std_init_min < cfg.log_std_init_max) {
                Rng sr(e.learner_seed, 2);
                task_cfg.log_std_init =
                    cfg.log_std_init_min + (cfg.log_std_init_max - cfg.log_std_init_min) *
                                               static_cast<float>(sr.uniform());
            }
            try {
                LearningHistory h = train_source(e.task, num_episodes, e.learner_seed, task_cfg);
                e.returns = h.returns;
                if (h.aborted) {
                    e.failed = true;
                    e.diagnostic = h.diagnostic;
                    continue;
                }
                e.file = task_file_name(i);
                write_trajectory(h.data, out_dir + "/" + e.file);
            } catch (const std::exception& ex) {
                e.failed = true;
                e.file.clear();
                e.diagnostic = ex.what();
            }
        }
    });

    write_manifest(m, out_dir + "/manifest.json");
    return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["format"] = "ad-dataset-manifest";
    j["version"] = 1;
    j["env"] = m.env;
    j["num_episodes"] = m.num_episodes;
    j["horizon"] = m.horizon;
    j["obs_dim"] = m.obs_dim;
    j["act_dim"] = m.act_dim;
    j["master_seed"] = m.master_seed;
    j["num_tasks"] = m.entries.size();
    j["num_ok"] = m.num_ok();
    auto& tasks = j["tasks"] = nlohmann::json::array();
    for (const auto& e : m.entries) {
        nlohmann::json t;
        t["index"] = e.index;
        t["file"] = e.file;
        t["task_seed"] = e.task.task_seed;
        t["goal"] = {e.task.goal[0], e.task.goal[1]};
        t["target_speed"] = e.task.target_speed;
        t["target_angle"] = e.task.target_angle;
        t["learner_seed"] = e.learner_seed;
        t["failed"] = e.failed;
        t["diagnostic"] = e.diagnostic;
        t["returns"] = e.returns;
        tasks.push_back(std::move(t));
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << j.dump(2) << "\n";
    if (!f) throw DataError("write failed: " + path);
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open manifest: " + path);
    try {
        nlohmann::json j = nlohmann::json::parse(f);
        if (j.at("format") != "ad-dataset-manifest" || j.at("version") != 1)
            throw DataError("not a dataset manifest: " + path);
        DatasetManifest m;
        m.env = j.at("env");
        m.num_episodes = j.at("num_episodes");
        m.horizon = j.at("horizon");
        m.obs_dim = j.at("obs_dim");
        m.act_dim = j.at("act_dim");
        m.master_seed = j.at("master_seed");
        EnvId env = parse_env_id(m.env);
        for (const auto& t : j.at("tasks")) {
            DatasetManifest::Entry e;
            e.index = t.at("index");
            e.file = t.at("file");
            e.task.env = env;
            e.task.task_seed = t.at("task_seed");
            e.task.goal[0] = t.at("goal").at(0);
            e.task.goal[1] = t.at("goal").at(1);
            e.task.target_speed = t.at("target_speed");
            e.task.target_angle = t.at("target_angle");
            e.learner_seed = t.at("learner_seed");
            e.failed = t.at("failed");
            e.diagnostic = t.at("diagnostic");
            e.returns = t.at("returns").get<std::vector<double>>();
            m.entries.push_back(std::move(e));
        }
        return m;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError("manifest parse error in " + path + ": " + ex.what());
    }
}

}  // namespace ad
