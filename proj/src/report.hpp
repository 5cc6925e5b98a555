#pragma once

// Run artifacts: loss curves and evaluation results as CSV/JSON, plus a
// self-contained SVG learning-curve plot (mean with a +/- one-std band on
// the normalized scale, against the oracle and random reference lines).

#include <string>
#include <vector>

#include "distill.hpp"

namespace ad {

// step,lr,loss for every step with step % log_every == 0, plus the last step.
void write_loss_curve_csv(const std::string& path, const std::vector<LossPoint>& curve,
                          int64_t log_every);

// Long format: seed,task,episode,return,normalized.
void write_eval_rows_csv(const std::string& path, const EvalReport& rep);
std::vector<EvalRow> read_eval_rows_csv(const std::string& path);

// Rebuilds the aggregate curves from bare rows (e.g. a re-read CSV). The
// reference levels are not recoverable, so only the normalized curves and
// grid shape are filled in.
EvalReport report_from_rows(std::vector<EvalRow> rows);

// Aggregates: per-episode mean/std curves, reference levels, tail means.
void write_eval_summary_json(const std::string& path, const EvalReport& rep,
                             const std::string& label);

// model,context,median_us,reps.
void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows);

// context,resolved_context,final_norm_tail10,final_raw_tail10,final_loss_mean.
void write_sweep_csv(const std::string& path, const std::vector<SweepEntry>& entries);

std::string learning_curve_svg(const EvalReport& rep, const std::string& title);
void write_learning_curve_svg(const std::string& path, const EvalReport& rep,
                              const std::string& title);

}  // namespace ad
