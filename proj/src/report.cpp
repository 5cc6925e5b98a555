#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace ad {
namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    return out;
}

void finish(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw DataError("short write: " + path);
}

std::string fmt(double v, int precision = 6) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

}  // namespace

void write_loss_curve_csv(const std::string& path, const std::vector<LossPoint>& curve,
                          int64_t log_every) {
    if (log_every < 1) throw ConfigError("loss curve: log_every must be >= 1");
    auto out = open_out(path);
    out << "step,lr,loss\n";
    for (size_t i = 0; i < curve.size(); ++i) {
        if (curve[i].step % log_every != 0 && i + 1 != curve.size()) continue;
        out << curve[i].step << ',' << fmt(curve[i].lr) << ',' << fmt(curve[i].loss) << '\n';
    }
    finish(out, path);
}

void write_eval_rows_csv(const std::string& path, const EvalReport& rep) {
    auto out = open_out(path);
    out << "seed,task,episode,return,normalized\n";
    for (const EvalRow& r : rep.rows)
        out << r.seed_index << ',' << r.task_index << ',' << r.episode << ',' << fmt(r.ret)
            << ',' << fmt(r.normalized) << '\n';
    finish(out, path);
}

std::vector<EvalRow> read_eval_rows_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "seed,task,episode,return,normalized")
        throw DataError(path + ": not an evaluation row file");
    std::vector<EvalRow> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        EvalRow r;
        char c1, c2, c3, c4;
        std::istringstream ss(line);
        ss >> r.seed_index >> c1 >> r.task_index >> c2 >> r.episode >> c3 >> r.ret >> c4 >>
            r.normalized;
        if (!ss || c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',')
            throw DataError(path + ": malformed row at line " + std::to_string(lineno));
        rows.push_back(r);
    }
    if (rows.empty()) throw DataError(path + ": no rows");
    return rows;
}

EvalReport report_from_rows(std::vector<EvalRow> rows) {
    if (rows.empty()) throw DataError("no evaluation rows");
    EvalReport rep;
    for (const EvalRow& r : rows) {
        rep.seeds = std::max(rep.seeds, r.seed_index + 1);
        rep.tasks = std::max(rep.tasks, r.task_index + 1);
        rep.episodes = std::max(rep.episodes, r.episode + 1);
    }
    rep.rows = std::move(rows);
    rep.mean_curve.resize(rep.episodes);
    rep.std_curve.resize(rep.episodes);
    rep.raw_mean_curve.resize(rep.episodes);
    std::vector<int64_t> counts(rep.episodes, 0);
    for (const EvalRow& r : rep.rows) {
        rep.mean_curve[r.episode] += r.normalized;
        rep.raw_mean_curve[r.episode] += r.ret;
        ++counts[r.episode];
    }
    for (int64_t e = 0; e < rep.episodes; ++e) {
        if (counts[e] == 0) throw DataError("episode " + std::to_string(e) + " has no rows");
        rep.mean_curve[e] /= static_cast<double>(counts[e]);
        rep.raw_mean_curve[e] /= static_cast<double>(counts[e]);
    }
    for (const EvalRow& r : rep.rows) {
        double d = r.normalized - rep.mean_curve[r.episode];
        rep.std_curve[r.episode] += d * d;
    }
    for (int64_t e = 0; e < rep.episodes; ++e)
        rep.std_curve[e] = std::sqrt(rep.std_curve[e] / static_cast<double>(counts[e]));
    return rep;
}

void write_eval_summary_json(const std::string& path, const EvalReport& rep,
                             const std::string& label) {
    nlohmann::json j;
    j["label"] = label;
    j["seeds"] = rep.seeds;
    j["tasks"] = rep.tasks;
    j["episodes"] = rep.episodes;
    j["oracle_means"] = rep.oracle_means;
    j["random_means"] = rep.random_means;
    j["normalized_mean_curve"] = rep.mean_curve;
    j["normalized_std_curve"] = rep.std_curve;
    j["raw_mean_curve"] = rep.raw_mean_curve;
    int64_t tail = std::min<int64_t>(10, rep.episodes);
    j["final_tail_episodes"] = tail;
    j["final_tail_normalized"] = rep.final_tail_mean(tail);
    j["head_normalized"] = rep.head_mean(tail);
    auto out = open_out(path);
    out << j.dump(2) << "\n";
    finish(out, path);
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    auto out = open_out(path);
    out << "model,context,median_us,reps\n";
    for (const BenchRow& r : rows)
        out << model_kind_name(r.kind) << ',' << r.context << ',' << fmt(r.median_us) << ','
            << r.reps << '\n';
    finish(out, path);
}

void write_sweep_csv(const std::string& path, const std::vector<SweepEntry>& entries) {
    auto out = open_out(path);
    out << "context,resolved_context,final_norm_tail10,final_raw_tail10,final_loss_mean\n";
    for (const SweepEntry& e : entries) {
        int64_t tail = std::min<int64_t>(10, e.eval.episodes);
        double raw_tail = 0.0;
        for (int64_t i = e.eval.episodes - std::min<int64_t>(tail, e.eval.episodes);
             i < e.eval.episodes; ++i)
            raw_tail += e.eval.raw_mean_curve[i];
        raw_tail /= static_cast<double>(std::min<int64_t>(tail, e.eval.episodes));
        double loss_mean = 0.0;
        for (double l : e.final_losses) loss_mean += l;
        if (!e.final_losses.empty()) loss_mean /= static_cast<double>(e.final_losses.size());
        out << e.context_tokens << ',' << e.resolved_context << ','
            << fmt(e.eval.final_tail_mean(tail)) << ',' << fmt(raw_tail) << ','
            << fmt(loss_mean) << '\n';
    }
    finish(out, path);
}

// --- svg ------------------------------------------------------------------------

namespace {

struct PlotBox {
    double x0 = 64, y0 = 40, w = 640, h = 320;  // plot area in svg coords

    double px(double t) const { return x0 + t * w; }        // t in [0,1]
    double py(double t) const { return y0 + (1 - t) * h; }  // t in [0,1], y up
};

std::string poly_points(const PlotBox& box, const std::vector<double>& xs,
                        const std::vector<double>& ys, double xmin, double xmax, double ymin,
                        double ymax) {
    std::ostringstream os;
    os << std::setprecision(5);
    for (size_t i = 0; i < xs.size(); ++i) {
        double tx = (xs[i] - xmin) / (xmax - xmin);
        double ty = (ys[i] - ymin) / (ymax - ymin);
        os << box.px(tx) << ',' << box.py(ty) << ' ';
    }
    return os.str();
}

}  // namespace

std::string learning_curve_svg(const EvalReport& rep, const std::string& title) {
    if (rep.mean_curve.empty()) throw ConfigError("svg: empty curve");
    const int64_t n = rep.episodes;
    std::vector<double> xs(n), lo(n), hi(n);
    for (int64_t i = 0; i < n; ++i) {
        xs[i] = static_cast<double>(i + 1);
        lo[i] = rep.mean_curve[i] - rep.std_curve[i];
        hi[i] = rep.mean_curve[i] + rep.std_curve[i];
    }
    double ymin = 0.0, ymax = 1.0;  // keep the reference lines in frame
    for (int64_t i = 0; i < n; ++i) {
        ymin = std::min(ymin, lo[i]);
        ymax = std::max(ymax, hi[i]);
    }
    double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    double xmin = 1.0, xmax = static_cast<double>(std::max<int64_t>(n, 2));

    PlotBox box;
    std::ostringstream svg;
    svg << std::setprecision(5);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"420\" "
           "viewBox=\"0 0 760 420\">\n";
    svg << "<rect width=\"760\" height=\"420\" fill=\"white\"/>\n";
    svg << "<text x=\"380\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"15\">"
        << title << "</text>\n";

    // axes frame
    svg << "<rect x=\"" << box.x0 << "\" y=\"" << box.y0 << "\" width=\"" << box.w
        << "\" height=\"" << box.h << "\" fill=\"none\" stroke=\"#333\"/>\n";

    // y ticks
    for (int i = 0; i <= 4; ++i) {
        double v = ymin + (ymax - ymin) * i / 4.0;
        double y = box.py(static_cast<double>(i) / 4.0);
        svg << "<line x1=\"" << box.x0 - 4 << "\" y1=\"" << y << "\" x2=\"" << box.x0
            << "\" y2=\"" << y << "\" stroke=\"#333\"/>\n";
        svg << "<text x=\"" << box.x0 - 8 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt(v, 3) << "</text>\n";
    }
    // x ticks
    for (int i = 0; i <= 4; ++i) {
        double v = xmin + (xmax - xmin) * i / 4.0;
        double x = box.px(static_cast<double>(i) / 4.0);
        svg << "<line x1=\"" << x << "\" y1=\"" << box.y0 + box.h << "\" x2=\"" << x
            << "\" y2=\"" << box.y0 + box.h + 4 << "\" stroke=\"#333\"/>\n";
        svg << "<text x=\"" << x << "\" y=\"" << box.y0 + box.h + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt(v, 3) << "</text>\n";
    }
    svg << "<text x=\"" << box.x0 + box.w / 2 << "\" y=\"" << box.y0 + box.h + 36
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">evaluation "
           "episode</text>\n";
    svg << "<text x=\"18\" y=\"" << box.y0 + box.h / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "transform=\"rotate(-90 18 "
        << box.y0 + box.h / 2 << ")\">normalized return</text>\n";

    auto yline = [&](double v, const char* color, const char* name, double label_y_off) {
        double ty = (v - ymin) / (ymax - ymin);
        double y = box.py(ty);
        svg << "<line x1=\"" << box.x0 << "\" y1=\"" << y << "\" x2=\"" << box.x0 + box.w
            << "\" y2=\"" << y << "\" stroke=\"" << color
            << "\" stroke-dasharray=\"6 4\" stroke-width=\"1\"/>\n";
        svg << "<text x=\"" << box.x0 + box.w - 6 << "\" y=\"" << y + label_y_off
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\""
            << color << "\">" << name << "</text>\n";
    };
    yline(1.0, "#2a7", "oracle", -5);
    yline(0.0, "#a33", "random", 14);

    // +/- one std band
    std::vector<double> band_x(xs), band_y(hi);
    for (int64_t i = n - 1; i >= 0; --i) {
        band_x.push_back(xs[i]);
        band_y.push_back(lo[i]);
    }
    svg << "<polygon points=\"" << poly_points(box, band_x, band_y, xmin, xmax, ymin, ymax)
        << "\" fill=\"#36c\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
    svg << "<polyline points=\"" << poly_points(box, xs, rep.mean_curve, xmin, xmax, ymin, ymax)
        << "\" fill=\"none\" stroke=\"#36c\" stroke-width=\"2\"/>\n";

    svg << "</svg>\n";
    return svg.str();
}

void write_learning_curve_svg(const std::string& path, const EvalReport& rep,
                              const std::string& title) {
    auto out = open_out(path);
    out << learning_curve_svg(rep, title);
    finish(out, path);
}

}  // namespace ad
