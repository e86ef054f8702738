#pragma once

// Controller accuracy metrics: per-sample confusion with Open as the positive
// class, global accuracy / PPV / NPV, and transition matching.

#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "orthosis/model.hpp"

namespace orthosis::eval {

struct Confusion {
    std::size_t tp = 0;
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + tn + fp + fn; }
    bool operator==(const Confusion&) const = default;
};

inline Confusion confusion(std::span<const MotorCommand> pred, std::span<const MotorCommand> gt) {
    if (pred.size() != gt.size()) {
        throw Error(ErrorCode::LengthMismatch, "prediction has " + std::to_string(pred.size()) +
                                                   " samples, ground truth has " + std::to_string(gt.size()));
    }
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == MotorCommand::CmdOpen;
        const bool g = gt[i] == MotorCommand::CmdOpen;
        if (p && g) ++c.tp;
        else if (!p && !g) ++c.tn;
        else if (p) ++c.fp;
        else ++c.fn;
    }
    return c;
}

/// Ratios with an empty denominator are std::nullopt ("not defined").
struct Metrics {
    double accuracy = 0.0;
    std::optional<double> ppv;
    std::optional<double> npv;
};

inline Metrics metrics(const Confusion& c) {
    if (c.total() == 0) throw Error(ErrorCode::EmptyInput, "no samples to score");
    Metrics m;
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    if (c.tp + c.fp > 0) m.ppv = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (c.tn + c.fn > 0) m.npv = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fn);
    return m;
}

struct Transition {
    std::size_t index = 0;
    double t = 0.0;
    MotorCommand to = MotorCommand::CmdOpen;
};

inline std::vector<Transition> transitions(std::span<const MotorCommand> cmds, std::span<const double> times) {
    if (cmds.size() != times.size()) throw Error(ErrorCode::LengthMismatch, "commands and timestamps differ in length");
    std::vector<Transition> out;
    for (std::size_t i = 1; i < cmds.size(); ++i) {
        if (cmds[i] != cmds[i - 1]) out.push_back({i, times[i], cmds[i]});
    }
    return out;
}

struct TransitionMatch {
    std::size_t matched = 0;
    std::size_t total_gt = 0;
    std::size_t total_pred = 0;
    std::size_t false_count = 0;
    bool operator==(const TransitionMatch&) const = default;
};

/// Each ground-truth change, in time order, takes the earliest unused
/// predicted change in the same direction within +/- window seconds.
/// Predicted changes left unused are false transitions.
inline TransitionMatch match_transitions(std::span<const MotorCommand> pred, std::span<const MotorCommand> gt,
                                         std::span<const double> times, double window_s = 1.5) {
    if (pred.size() != gt.size()) {
        throw Error(ErrorCode::LengthMismatch, "prediction has " + std::to_string(pred.size()) +
                                                   " samples, ground truth has " + std::to_string(gt.size()));
    }
    const auto gt_tr = transitions(gt, times);
    const auto pred_tr = transitions(pred, times);
    std::vector<bool> used(pred_tr.size(), false);
    TransitionMatch m;
    m.total_gt = gt_tr.size();
    m.total_pred = pred_tr.size();
    for (const auto& g : gt_tr) {
        for (std::size_t k = 0; k < pred_tr.size(); ++k) {
            if (used[k] || pred_tr[k].to != g.to) continue;
            if (std::abs(pred_tr[k].t - g.t) <= window_s + 1e-9) {
                used[k] = true;
                ++m.matched;
                break;
            }
        }
    }
    m.false_count = m.total_pred - m.matched;
    return m;
}

/// One row of a controller-accuracy table. Counts are doubles so that rows
/// averaged over runs keep fractional values.
struct EvalReport {
    std::string condition = "Regular";
    std::string control = "EMG";
    double global_accuracy = 0.0;
    std::optional<double> ppv;
    std::optional<double> npv;
    double correct_transitions = 0.0;
    double total_transitions = 0.0;
    double false_transitions = 0.0;
    std::size_t runs = 1;
};

inline EvalReport evaluate(std::span<const MotorCommand> pred, std::span<const MotorCommand> gt,
                           std::span<const double> times, double window_s = 1.5) {
    const auto m = metrics(confusion(pred, gt));
    const auto tm = match_transitions(pred, gt, times, window_s);
    EvalReport r;
    r.global_accuracy = m.accuracy;
    r.ppv = m.ppv;
    r.npv = m.npv;
    r.correct_transitions = static_cast<double>(tm.matched);
    r.total_transitions = static_cast<double>(tm.total_gt);
    r.false_transitions = static_cast<double>(tm.false_count);
    return r;
}

inline EvalReport evaluate_log(const SessionLog& log, double window_s = 1.5) {
    const auto pred = log.predicted_commands();
    const auto times = log.times();
    return evaluate(pred, log.gt_command, times, window_s);
}

/// Mean of every cell; PPV/NPV average over the runs where they are defined.
inline EvalReport average(const std::vector<EvalReport>& rows) {
    if (rows.empty()) throw Error(ErrorCode::EmptyInput, "nothing to average");
    EvalReport out = rows.front();
    double acc = 0, ppv = 0, npv = 0, corr = 0, tot = 0, fal = 0;
    std::size_t n_ppv = 0, n_npv = 0;
    for (const auto& r : rows) {
        acc += r.global_accuracy;
        corr += r.correct_transitions;
        tot += r.total_transitions;
        fal += r.false_transitions;
        if (r.ppv) {
            ppv += *r.ppv;
            ++n_ppv;
        }
        if (r.npv) {
            npv += *r.npv;
            ++n_npv;
        }
    }
    const double n = static_cast<double>(rows.size());
    out.global_accuracy = acc / n;
    out.correct_transitions = corr / n;
    out.total_transitions = tot / n;
    out.false_transitions = fal / n;
    out.ppv = n_ppv ? std::optional<double>(ppv / static_cast<double>(n_ppv)) : std::nullopt;
    out.npv = n_npv ? std::optional<double>(npv / static_cast<double>(n_npv)) : std::nullopt;
    out.runs = rows.size();
    return out;
}

namespace detail {
inline std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}
}  // namespace detail

inline std::string format_percent(const std::optional<double>& v) {
    return v ? detail::fmt("%.1f%%", *v * 100.0) : std::string("n/a");
}

/// Integers print bare ("2"), fractions with one decimal ("0.5").
inline std::string format_count(double v) {
    if (std::abs(v - std::round(v)) < 1e-9) return detail::fmt("%.0f", std::round(v));
    return detail::fmt("%.1f", v);
}

inline std::string render_table(const std::vector<EvalReport>& rows) {
    const std::vector<std::string> head = {"Condition", "Control Type", "Global Accuracy", "PPV", "NPV", "Correct",
                                           "False"};
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) {
        cells.push_back({r.condition, r.control, format_percent(r.global_accuracy), format_percent(r.ppv),
                         format_percent(r.npv),
                         format_count(r.correct_transitions) + "/" + format_count(r.total_transitions),
                         format_count(r.false_transitions)});
    }
    std::vector<std::size_t> width(head.size());
    for (std::size_t c = 0; c < head.size(); ++c) {
        width[c] = head[c].size();
        for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
    }
    auto line = [&](const std::vector<std::string>& row) {
        std::string s;
        for (std::size_t c = 0; c < row.size(); ++c) {
            s += row[c];
            if (c + 1 < row.size()) s += std::string(width[c] - row[c].size() + 2, ' ');
        }
        while (!s.empty() && s.back() == ' ') s.pop_back();
        return s + "\n";
    };
    std::string out = std::string(width[0] + width[1] + 4, ' ') +
                      std::string(width[2] + width[3] + width[4] + 6, ' ') + "Transitions\n";
    out += line(head);
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    out += std::string(total - 2, '-') + "\n";
    for (const auto& row : cells) out += line(row);
    return out;
}

inline nlohmann::json to_json(const EvalReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"condition", r.condition},
            {"control", r.control},
            {"global_accuracy", r.global_accuracy},
            {"ppv", opt(r.ppv)},
            {"npv", opt(r.npv)},
            {"correct_transitions", r.correct_transitions},
            {"total_transitions", r.total_transitions},
            {"false_transitions", r.false_transitions},
            {"runs", r.runs}};
}

inline nlohmann::json to_json(const std::vector<EvalReport>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) arr.push_back(to_json(r));
    return {{"report", "controller-accuracy"}, {"rows", arr}};
}

}  // namespace orthosis::eval
