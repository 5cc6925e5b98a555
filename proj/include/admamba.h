#ifndef ADMAMBA_H
#define ADMAMBA_H

/* C interface to the in-context distillation library.
 *
 * Batch entry points take an experiment config as JSON text (the same schema
 * the CLI reads) plus an output directory; every call writes a resolved-config
 * snapshot next to its artifacts. The streaming policy is an opaque handle
 * around a trained checkpoint that adapts to a task by accumulating its own
 * interaction history with frozen weights.
 *
 * All functions return ad_status; on failure ad_last_error() holds a
 * single-line message for the calling thread.
 */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ad_status {
    AD_OK = 0,
    AD_ERR_INTERNAL = 1, /* unexpected failure */
    AD_ERR_CONFIG = 2,   /* invalid config or arguments */
    AD_ERR_DATA = 3,     /* missing/corrupt files or datasets */
    AD_ERR_NUMERIC = 4   /* non-finite values during optimisation */
} ad_status;

const char* ad_version(void);

/* Message for the most recent failure on this thread; empty after success. */
const char* ad_last_error(void);

/* Trains one source learner per task and records its full learning history;
 * writes trajectory files plus manifest.json into out_dir. */
ad_status ad_gen_data(const char* config_json, const char* out_dir);

/* Distils the dataset referenced by the config into a sequence model; writes
 * model.ckpt, loss.csv, token_stats.json. Returns AD_ERR_NUMERIC if the loss
 * went non-finite (the last good parameters are still saved). */
ad_status ad_train(const char* config_json, const char* out_dir);

/* Replays one or more trained checkpoints (seed replicates) on held-out
 * tasks; writes eval_rows.csv, eval_summary.json, learning_curve.svg. Token
 * statistics are picked up from token_stats.json next to the first
 * checkpoint when present. */
ad_status ad_eval(const char* config_json, const char* const* checkpoint_paths,
                  int32_t n_checkpoints, const char* out_dir);

/* Trains and evaluates one model per context length in the config's sweep
 * list; writes sweep.csv plus per-context evaluation artifacts. */
ad_status ad_sweep(const char* config_json, const char* out_dir);

/* Times one inference step for both backbone kinds at the configured context
 * lengths; writes bench.csv. */
ad_status ad_bench(const char* config_json, const char* out_dir);

/* Renders a learning-curve SVG from an eval_rows.csv file. */
ad_status ad_plot(const char* rows_csv_path, const char* svg_path, const char* title);

/* --- streaming policy ---------------------------------------------------- */

typedef struct ad_policy ad_policy;

/* Opens a checkpoint as a deployable policy. stats_json_path may be NULL when
 * the model was trained on raw tokens. horizon is the episode length of the
 * target environment; context_tokens = 0 keeps the whole history, a positive
 * budget keeps the most recent whole episodes (recurrent backbone) or a
 * sliding token window (attention backbone). */
ad_status ad_policy_open(const char* checkpoint_path, const char* stats_json_path,
                         int64_t horizon, int64_t context_tokens, ad_policy** out);
void ad_policy_close(ad_policy* p);

int64_t ad_policy_obs_dim(const ad_policy* p);
int64_t ad_policy_act_dim(const ad_policy* p);

/* Drops all accumulated context (fresh task). */
ad_status ad_policy_reset(ad_policy* p);

/* Predicts the action for the current observation; act_out receives
 * ad_policy_act_dim(p) values clipped to [-1, 1]. */
ad_status ad_policy_act(ad_policy* p, const float* obs, int64_t obs_dim, float* act_out,
                        int64_t act_dim);

/* Feeds the executed transition back into the context. On the final step of
 * an episode pass the current observation again as next_obs. */
ad_status ad_policy_observe(ad_policy* p, const float* obs, const float* act, float reward,
                            const float* next_obs);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* ADMAMBA_H */
