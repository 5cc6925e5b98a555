#include "distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <numeric>
#include <sstream>

#include "adam.hpp"
#include "json.hpp"
#include "threading.hpp"

namespace ad {

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ConfigError("mse_loss: prediction shape " + shape_str(pred.shape()) +
                          " does not match target shape " + shape_str(target.shape()));
    Tensor d = sub(pred, target);
    return mean(mul(d, d));
}

Tensor nll_loss(const Tensor& logits, const std::vector<int64_t>& targets) {
    if (logits.rank() != 2) throw ConfigError("nll_loss: logits must be rank-2");
    int64_t m = logits.rows(), n = logits.cols();
    if (static_cast<int64_t>(targets.size()) != m)
        throw ConfigError("nll_loss: expected one target per row");
    Tensor onehot = Tensor::zeros({m, n});
    auto ov = onehot.data();
    for (int64_t r = 0; r < m; ++r) {
        int64_t t = targets[r];
        if (t < 0 || t >= n)
            throw DataError("nll_loss: target " + std::to_string(t) +
                            " outside the action set of size " + std::to_string(n));
        ov[r * n + t] = 1.0f;
    }
    Tensor picked = sum_col_groups(mul(softmax_lastdim(logits), onehot), n);  // (m, 1)
    return affine(sum(log(picked)), -1.0f / static_cast<float>(m), 0.0f);
}

float cosine_lr(int64_t step, int64_t total_steps, float peak, float warmup_frac) {
    if (total_steps < 1) throw ConfigError("cosine_lr: total_steps must be >= 1");
    if (step < 0 || step >= total_steps) throw ConfigError("cosine_lr: step out of range");
    if (!(peak > 0.0f)) throw ConfigError("cosine_lr: peak must be positive");
    if (!(warmup_frac >= 0.0f && warmup_frac < 1.0f))
        throw ConfigError("cosine_lr: warmup fraction must lie in [0, 1)");
    int64_t warm = std::min(
        total_steps, static_cast<int64_t>(std::llround(static_cast<double>(warmup_frac) *
                                                       static_cast<double>(total_steps))));
    if (step < warm)
        return peak * static_cast<float>(step + 1) / static_cast<float>(warm);
    if (warm == total_steps) return peak;
    double t = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return peak * 0.5f * (1.0f + static_cast<float>(std::cos(M_PI * t)));
}

// --- token standardisation ----------------------------------------------------

void TokenStats::apply(std::span<float> token) const {
    if (identity()) return;
    if (token.size() != mean.size())
        throw ConfigError("token stats: width mismatch");
    for (size_t i = 0; i < token.size(); ++i) token[i] = (token[i] - mean[i]) / stdev[i];
}

void TokenStats::apply_obs(std::span<float> token, int64_t obs_dim) const {
    if (identity()) return;
    if (token.size() != mean.size() || obs_dim > static_cast<int64_t>(token.size()))
        throw ConfigError("token stats: width mismatch");
    for (int64_t i = 0; i < obs_dim; ++i) token[i] = (token[i] - mean[i]) / stdev[i];
}

TokenStats compute_token_stats(const std::vector<TokenSequence>& seqs) {
    if (seqs.empty()) throw DataError("token stats: no sequences");
    int64_t td = seqs[0].token_dim();
    std::vector<double> sum(td, 0.0), sumsq(td, 0.0);
    int64_t n = 0;
    for (const auto& s : seqs) {
        if (s.token_dim() != td) throw DataError("token stats: mixed token widths");
        for (int64_t t = 0; t < s.length; ++t) {
            const float* row = s.token_row(t);
            for (int64_t i = 0; i < td; ++i) {
                sum[i] += row[i];
                sumsq[i] += static_cast<double>(row[i]) * row[i];
            }
        }
        n += s.length;
    }
    if (n == 0) throw DataError("token stats: empty sequences");
    TokenStats st;
    st.mean.resize(td);
    st.stdev.resize(td);
    for (int64_t i = 0; i < td; ++i) {
        double mu = sum[i] / static_cast<double>(n);
        double var = std::max(0.0, sumsq[i] / static_cast<double>(n) - mu * mu);
        st.mean[i] = static_cast<float>(mu);
        st.stdev[i] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
    }
    return st;
}

void write_token_stats(const TokenStats& stats, const std::string& path) {
    nlohmann::json j;
    j["mean"] = stats.mean;
    j["stdev"] = stats.stdev;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write token stats: " + path);
    out << j.dump(2) << "\n";
}

TokenStats read_token_stats(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open token stats: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    TokenStats st;
    try {
        auto j = nlohmann::json::parse(buf.str());
        st.mean = j.at("mean").get<std::vector<float>>();
        st.stdev = j.at("stdev").get<std::vector<float>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed token stats: ") + e.what());
    }
    if (st.mean.size() != st.stdev.size()) throw DataError("token stats: size mismatch");
    return st;
}

// --- dataset loading ------------------------------------------------------------

LoadedDataset load_dataset(const std::string& dir, int64_t downsample_k) {
    LoadedDataset ds;
    ds.manifest = read_manifest(dir + "/manifest.json");
    ds.env = parse_env_id(ds.manifest.env);
    ds.dims = env_dims(ds.env);
    for (const auto& e : ds.manifest.entries) {
        if (e.failed) continue;
        TrajectoryData data = read_trajectory(dir + "/" + e.file);
        TokenSequence seq = pack_tokens(downsample(data, downsample_k));
        if (ds.token_dim == 0) ds.token_dim = seq.token_dim();
        if (seq.token_dim() != ds.token_dim) throw DataError("dataset: mixed token widths");
        if (ds.sequences.empty() || seq.length < ds.min_length) ds.min_length = seq.length;
        ds.sequences.push_back(std::move(seq));
        ds.task_indices.push_back(e.index);
    }
    if (ds.sequences.empty())
        throw DataError("dataset at " + dir + " has no usable tasks");
    return ds;
}

// --- training ---------------------------------------------------------------------

TrainOutput train_ad(const LoadedDataset& ds, const ExperimentConfig& cfg) {
    const TrainConfig& tc = cfg.train;
    if (ds.sequences.empty()) throw DataError("train: dataset has no usable tasks");

    const int64_t c = tc.context == 0 ? ds.min_length : tc.context;
    if (c < 1) throw ConfigError("train: resolved context is empty");
    if (c > ds.min_length)
        throw ConfigError("train: context " + std::to_string(c) +
                          " exceeds the shortest history (" + std::to_string(ds.min_length) +
                          " tokens)");

    ModelConfig mc = to_model_config(cfg, ds.token_dim, ds.dims.act_dim);
    if (mc.kind == ModelKind::transformer && c + 1 > mc.max_context)
        throw ConfigError("train: context + query exceeds max_context of " +
                          std::to_string(mc.max_context));

    TokenStats stats;
    std::vector<TokenSequence> seqs = ds.sequences;
    if (tc.standardize) {
        stats = compute_token_stats(seqs);
        for (auto& s : seqs)
            for (int64_t t = 0; t < s.length; ++t)
                stats.apply({s.tokens.data() + t * s.token_dim(),
                             static_cast<size_t>(s.token_dim())});
    }

    SequenceModel model(mc);
    std::vector<Tensor> params;
    for (auto& [name, p] : model.named_params()) params.push_back(p);
    Adam opt(params, AdamConfig{.lr = tc.peak_lr, .weight_decay = tc.weight_decay});

    int64_t total_windows = 0;
    for (const auto& s : seqs) total_windows += std::max<int64_t>(1, s.length / c);
    const int64_t steps_per_epoch =
        std::max<int64_t>(1, (total_windows + tc.batch_size - 1) / tc.batch_size);
    const int64_t total_steps = tc.epochs * steps_per_epoch;

    const int64_t B = tc.batch_size;
    const int64_t n_seq = static_cast<int64_t>(seqs.size());
    const float inv_b = 1.0f / static_cast<float>(B);

    std::vector<LossPoint> curve;
    curve.reserve(total_steps);
    bool aborted = false;
    std::string diagnostic;

    for (int64_t step = 0; step < total_steps; ++step) {
        float lr = cosine_lr(step, total_steps, tc.peak_lr, tc.warmup_frac);
        opt.set_lr(lr);

        // Windows are drawn and noised from one per-step stream before any
        // parallel work, so the batch is identical for every thread count.
        Rng brng(domain_seed(tc.seed, seed_domain::batch, static_cast<uint64_t>(step)));
        std::vector<TokenSequence> wins(B);
        for (int64_t b = 0; b < B; ++b) {
            const TokenSequence& src = seqs[brng.uniform_int(n_seq)];
            int64_t start = sample_window_start(src.length, c, brng);
            wins[b] = slice_window(src, start, c);
            augment_noise(wins[b], tc.noise_sigma, brng);
        }

        std::vector<MapGradSink<float>> sinks(B);
        std::vector<double> losses(B, 0.0);
        std::vector<std::string> errors(B);
        parallel_for(B, [&](int64_t lo, int64_t hi) {
            for (int64_t b = lo; b < hi; ++b) {
                try {
                    const TokenSequence& w = wins[b];
                    Tensor tokens = Tensor::from_vector({c, ds.token_dim}, w.tokens);
                    Tensor queries = Tensor::from_vector({c, ds.token_dim}, make_queries(w));
                    Tensor targets = Tensor::from_vector({c, ds.dims.act_dim}, w.targets);
                    Tensor pred = model.forward(tokens, queries);
                    // 1/B folds the batch mean into each example's loss
                    Tensor loss = affine(mse_loss(pred, targets), inv_b, 0.0f);
                    losses[b] = loss.item();
                    backward(loss, sinks[b]);
                } catch (const NumericError& e) {
                    errors[b] = e.what();
                }
            }
        });

        double batch_loss = 0.0;
        std::string err;
        for (int64_t b = 0; b < B; ++b) {
            batch_loss += losses[b];
            if (err.empty() && !errors[b].empty()) err = errors[b];
        }
        if (!err.empty() || !std::isfinite(batch_loss)) {
            aborted = true;
            diagnostic = "non-finite loss at step " + std::to_string(step) +
                         (err.empty() ? "" : std::string(": ") + err) +
                         "; last good parameters kept";
            break;
        }

        opt.zero_grad();
        for (auto& s : sinks) s.merge_into_nodes(params);
        opt.step();
        model.train_steps = step + 1;
        curve.push_back({step, lr, batch_loss});
    }

    auto smoothed = [&](bool tail) {
        if (curve.empty()) return 0.0;
        int64_t n = std::min<int64_t>(10, static_cast<int64_t>(curve.size()));
        int64_t begin = tail ? static_cast<int64_t>(curve.size()) - n : 0;
        double acc = 0.0;
        for (int64_t i = begin; i < begin + n; ++i) acc += curve[i].loss;
        return acc / static_cast<double>(n);
    };
    double first_s = smoothed(false), last_s = smoothed(true);
    int64_t steps_done = static_cast<int64_t>(curve.size());

    return TrainOutput{std::move(model), std::move(stats), std::move(curve), c,
                       steps_done,       first_s,          last_s,           aborted,
                       std::move(diagnostic)};
}

// --- in-context rollouts -------------------------------------------------------------

StreamingPolicy::StreamingPolicy(const SequenceModel& model, TokenStats stats,
                                 int64_t horizon, int64_t context_tokens)
    : model_(model),
      stats_(std::move(stats)),
      horizon_(horizon),
      context_(context_tokens),
      st_(model.new_state()) {
    if (horizon_ < 1) throw ConfigError("policy: horizon must be >= 1");
    if (context_ < 0) throw ConfigError("policy: context must be >= 0");
    td_ = model_.config().token_dim;
    adim_ = model_.config().act_dim;
    od_ = (td_ - adim_ - 1) / 2;
    if (2 * od_ + adim_ + 1 != td_)
        throw ConfigError("policy: model token width is not obs+act+reward+obs");
    recurrent_ = model_.kind() == ModelKind::ssm;
    // Whole previous episodes kept for the recurrent model; with the current
    // episode they never exceed the token budget.
    keep_eps_ = context_ == 0 ? -1 : std::max<int64_t>(0, context_ / horizon_ - 1);
    query_.resize(td_);
    token_.resize(td_);
}

void StreamingPolicy::reset() {
    st_ = model_.new_state();
    ep_blocks_.clear();
    window_.clear();
    block_.clear();
    steps_ = 0;
}

std::vector<float> StreamingPolicy::act(std::span<const float> obs) {
    if (static_cast<int64_t>(obs.size()) != od_)
        throw ConfigError("policy: observation width mismatch");
    std::fill(query_.begin(), query_.end(), 0.0f);
    std::copy(obs.begin(), obs.end(), query_.begin());
    stats_.apply_obs(query_, od_);

    std::vector<float> pred;
    if (recurrent_) {
        pred = model_.predict(st_, query_);
    } else {
        SequenceModel::State ts = model_.new_state();
        auto& toks = std::get<TransformerModel::State>(ts.v).tokens;
        toks.assign(window_.begin(), window_.end());
        pred = model_.predict(ts, query_);
    }
    for (float& v : pred) v = std::clamp(v, -1.0f, 1.0f);
    return pred;
}

void StreamingPolicy::observe(std::span<const float> obs, std::span<const float> act,
                              float reward, std::span<const float> next_obs) {
    if (static_cast<int64_t>(obs.size()) != od_ ||
        static_cast<int64_t>(next_obs.size()) != od_ ||
        static_cast<int64_t>(act.size()) != adim_)
        throw ConfigError("policy: transition width mismatch");
    build_token(token_, obs, act, reward, next_obs);
    stats_.apply(token_);

    if (recurrent_) {
        model_.consume(st_, token_);
        if (context_ > 0) block_.insert(block_.end(), token_.begin(), token_.end());
    } else {
        window_.emplace_back(token_.begin(), token_.end());
        if (context_ > 0)
            while (static_cast<int64_t>(window_.size()) > context_ - 1) window_.pop_front();
    }
    if (++steps_ == horizon_) finish_episode();
}

void StreamingPolicy::finish_episode() {
    steps_ = 0;
    if (!recurrent_ || context_ == 0) return;
    ep_blocks_.push_back(std::move(block_));
    block_ = {};
    while (static_cast<int64_t>(ep_blocks_.size()) > keep_eps_) ep_blocks_.pop_front();
    // Episode-aligned context: replay the retained episodes into a fresh
    // state so the visible history matches training windows.
    st_ = model_.new_state();
    for (const auto& past : ep_blocks_)
        for (int64_t t = 0; t < horizon_; ++t)
            model_.consume(st_, {past.data() + t * td_, static_cast<size_t>(td_)});
    block_.reserve(horizon_ * td_);
}

RolloutResult icrl_rollout(const SequenceModel& model, const TokenStats& stats,
                           const TaskSpec& task, int64_t episodes, int64_t context_tokens,
                           uint64_t rollout_seed) {
    if (episodes < 1) throw ConfigError("rollout: episodes must be >= 1");
    const EnvDims dims = env_dims(task.env);
    const int64_t T = dims.horizon;
    if (model.config().token_dim != 2 * dims.obs_dim + dims.act_dim + 1 ||
        model.config().act_dim != dims.act_dim)
        throw ConfigError("rollout: model token geometry does not match the environment");
    StreamingPolicy pol(model, stats, T, context_tokens);

    Rng reset_rng(rollout_seed);
    RolloutResult out;
    out.episode_returns.reserve(episodes);
    for (int64_t e = 0; e < episodes; ++e) {
        EnvState s = env_reset(task, reset_rng);
        double ret = 0.0;
        for (int64_t t = 0; t < T; ++t) {
            std::array<float, 4> obs = observe(s);
            std::vector<float> pred = pol.act(obs);
            std::array<float, 2> act{};
            std::copy(pred.begin(), pred.end(), act.begin());

            StepResult sr = env_step(task, s, act);
            ret += sr.reward;

            // Terminal tokens repeat the current observation in the next-obs
            // field — the same frozen tail the training streams carry.
            const std::array<float, 4>& next = t + 1 < T ? sr.obs : obs;
            pol.observe(obs, {act.data(), pred.size()}, sr.reward, next);
            s = sr.next;
        }
        out.episode_returns.push_back(ret);
    }
    return out;
}

// --- evaluation -----------------------------------------------------------------------

double EvalReport::final_tail_mean(int64_t tail) const {
    if (tail < 1 || mean_curve.empty()) throw ConfigError("eval report: bad tail");
    int64_t n = std::min<int64_t>(tail, static_cast<int64_t>(mean_curve.size()));
    double acc = 0.0;
    for (int64_t i = static_cast<int64_t>(mean_curve.size()) - n;
         i < static_cast<int64_t>(mean_curve.size()); ++i)
        acc += mean_curve[i];
    return acc / static_cast<double>(n);
}

double EvalReport::head_mean(int64_t head) const {
    if (head < 1 || mean_curve.empty()) throw ConfigError("eval report: bad head");
    int64_t n = std::min<int64_t>(head, static_cast<int64_t>(mean_curve.size()));
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += mean_curve[i];
    return acc / static_cast<double>(n);
}

EvalReport evaluate(const std::vector<const SequenceModel*>& models, const TokenStats& stats,
                    EnvId env, uint64_t task_master_seed, const EvalConfig& cfg,
                    int64_t context_tokens) {
    if (models.empty()) throw ConfigError("evaluate: at least one model required");
    for (const auto* m : models)
        if (m == nullptr) throw ConfigError("evaluate: null model");

    EvalReport rep;
    rep.seeds = static_cast<int64_t>(models.size());
    rep.tasks = cfg.tasks;
    rep.episodes = cfg.episodes;

    rep.task_specs.reserve(cfg.tasks);
    rep.oracle_means.resize(cfg.tasks);
    rep.random_means.resize(cfg.tasks);
    for (int64_t j = 0; j < cfg.tasks; ++j) {
        TaskSpec task = sample_task(env, domain_seed(task_master_seed, seed_domain::test_task, j));
        ReferenceReturns refs = reference_returns(
            task, static_cast<int>(cfg.reference_episodes),
            domain_seed(cfg.rollout_seed, seed_domain::eval_rollout, (1ull << 20) + j));
        rep.oracle_means[j] = refs.oracle_mean;
        rep.random_means[j] = refs.random_mean;
        rep.task_specs.push_back(task);
    }

    const int64_t cells = rep.seeds * rep.tasks;
    std::vector<std::vector<double>> returns(cells);
    parallel_for(cells, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            int64_t s = i / rep.tasks, j = i % rep.tasks;
            uint64_t seed = domain_seed(cfg.rollout_seed, seed_domain::eval_rollout,
                                        static_cast<uint64_t>(i));
            returns[i] = icrl_rollout(*models[s], stats, rep.task_specs[j], cfg.episodes,
                                      context_tokens, seed)
                             .episode_returns;
        }
    });

    rep.rows.reserve(cells * cfg.episodes);
    for (int64_t s = 0; s < rep.seeds; ++s) {
        for (int64_t j = 0; j < rep.tasks; ++j) {
            double denom = std::max(rep.oracle_means[j] - rep.random_means[j], 1e-9);
            const auto& rets = returns[s * rep.tasks + j];
            for (int64_t e = 0; e < cfg.episodes; ++e) {
                double norm = (rets[e] - rep.random_means[j]) / denom;
                rep.rows.push_back({s, j, e, rets[e], norm});
            }
        }
    }

    rep.mean_curve.resize(cfg.episodes);
    rep.std_curve.resize(cfg.episodes);
    rep.raw_mean_curve.resize(cfg.episodes);
    for (int64_t e = 0; e < cfg.episodes; ++e) {
        double sum = 0.0, sumsq = 0.0, raw = 0.0;
        for (int64_t i = 0; i < cells; ++i) {
            const EvalRow& row = rep.rows[i * cfg.episodes + e];
            sum += row.normalized;
            sumsq += row.normalized * row.normalized;
            raw += row.ret;
        }
        double n = static_cast<double>(cells);
        double mu = sum / n;
        rep.mean_curve[e] = mu;
        rep.std_curve[e] = std::sqrt(std::max(0.0, sumsq / n - mu * mu));
        rep.raw_mean_curve[e] = raw / n;
    }
    return rep;
}

// --- context sweep ----------------------------------------------------------------------

std::vector<SweepEntry> context_sweep(const LoadedDataset& ds, const ExperimentConfig& cfg,
                                      const std::vector<int64_t>& contexts) {
    if (contexts.empty()) throw ConfigError("sweep: no context lengths given");
    std::vector<SweepEntry> out;
    out.reserve(contexts.size());
    for (int64_t c : contexts) {
        ExperimentConfig vcfg = cfg;
        vcfg.train.context = c;
        std::vector<TrainOutput> trained;
        trained.reserve(cfg.eval.seeds);
        for (int64_t s = 0; s < cfg.eval.seeds; ++s) {
            vcfg.train.seed = cfg.train.seed + static_cast<uint64_t>(s);
            trained.push_back(train_ad(ds, vcfg));
            if (trained.back().aborted)
                throw NumericError("sweep: replicate " + std::to_string(s) + " at context " +
                                   std::to_string(c) + " aborted: " +
                                   trained.back().diagnostic);
        }
        SweepEntry ent;
        ent.context_tokens = c;
        ent.resolved_context = trained[0].context;
        std::vector<const SequenceModel*> models;
        for (const auto& t : trained) {
            ent.final_losses.push_back(t.last_smoothed);
            models.push_back(&t.model);
        }
        ent.eval = evaluate(models, trained[0].stats, ds.env, cfg.data.seed, cfg.eval, c);
        out.push_back(std::move(ent));
    }
    return out;
}

// --- inference benchmark ------------------------------------------------------------------

namespace {

// Absorbs one token; the attention model then drops its oldest token so the
// probed context size stays fixed across repetitions.
void st_consume_trim(const SequenceModel& model, SequenceModel::State& st,
                     std::span<const float> token, int64_t budget) {
    model.consume(st, token);
    if (model.kind() == ModelKind::transformer) {
        auto& toks = std::get<TransformerModel::State>(st.v).tokens;
        while (static_cast<int64_t>(toks.size()) > budget) toks.erase(toks.begin());
    }
}

}  // namespace

std::vector<BenchRow> benchmark_inference(const SequenceModel& model,
                                          const std::vector<int64_t>& context_lengths,
                                          int64_t reps, uint64_t seed) {
    if (reps < 1) throw ConfigError("bench: reps must be >= 1");
    if (context_lengths.empty()) throw ConfigError("bench: no context lengths");
    const int64_t td = model.config().token_dim;
    Rng rng(seed);
    auto random_token = [&](std::vector<float>& tok) {
        tok.resize(td);
        for (auto& v : tok) v = static_cast<float>(rng.normal()) * 0.5f;
    };

    std::vector<BenchRow> rows;
    rows.reserve(context_lengths.size());
    for (int64_t c : context_lengths) {
        if (c < 1) throw ConfigError("bench: context lengths must be positive");
        SequenceModel::State st = model.new_state();
        std::vector<float> tok;
        for (int64_t i = 0; i < c; ++i) {
            random_token(tok);
            st_consume_trim(model, st, tok, c);
        }
        std::vector<float> query(td, 0.0f);
        for (int64_t i = 0; i < 4 && i < td; ++i)
            query[i] = static_cast<float>(rng.normal()) * 0.5f;

        auto one_step = [&]() {
            (void)model.predict(st, query);
            random_token(tok);
            st_consume_trim(model, st, tok, c);
        };
        int64_t warmup = std::max<int64_t>(3, reps / 10);
        for (int64_t i = 0; i < warmup; ++i) one_step();

        std::vector<double> us(reps);
        for (int64_t r = 0; r < reps; ++r) {
            auto t0 = std::chrono::steady_clock::now();
            one_step();
            auto t1 = std::chrono::steady_clock::now();
            us[r] = std::chrono::duration<double, std::micro>(t1 - t0).count();
        }
        std::sort(us.begin(), us.end());
        double median = reps % 2 == 1 ? us[reps / 2] : 0.5 * (us[reps / 2 - 1] + us[reps / 2]);
        rows.push_back({model.kind(), c, median, reps});
    }
    return rows;
}

}  // namespace ad
