#pragma once

// Session log, forest and calibration persistence, plus paced replay.
//
// Session logs are line-oriented text: a version line, a column header, then
// one CSV record per frame. A JSON-lines variant (".jsonl") carries the same
// fields. Reals are written with 17 significant digits so that reading back
// reproduces every value exactly.

#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "orthosis/forest.hpp"
#include "orthosis/model.hpp"

namespace orthosis::io {

inline constexpr int kLogVersion = 1;
inline constexpr int kForestVersion = 1;
inline constexpr int kCalibrationVersion = 1;

namespace detail {

inline std::string real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_real(const std::string& s, std::size_t line) {
    if (s.empty()) throw Error(ErrorCode::Validation, "line " + std::to_string(line) + ": empty numeric field");
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) {
        throw Error(ErrorCode::Validation, "line " + std::to_string(line) + ": bad number '" + s + "'");
    }
    return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T, typename Parse>
T parse_field(const std::string& s, Parse parse, const char* what, std::size_t line) {
    auto v = parse(s);
    if (!v) {
        throw Error(ErrorCode::Validation, "line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
    }
    return *v;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
    return out;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
    return in;
}

}  // namespace detail

inline std::string log_column_header() {
    std::string h = "t";
    for (std::size_t i = 0; i < kEmgChannels; ++i) h += ",emg" + std::to_string(i);
    for (std::size_t i = 0; i < kBendChannels; ++i) h += ",bend" + std::to_string(i);
    h += ",pressure,motor_pos,gt_intent,gt_command,phase,arm_position,pred_intent,cmd";
    return h;
}

inline constexpr std::size_t kLogColumns = 1 + kEmgChannels + kBendChannels + 2 + 6;

inline void write_log_csv(const SessionLog& log, std::ostream& out) {
    validate_log(log);
    out << "# orthosis-log v" << kLogVersion << " rate_hz=" << detail::real(log.rate_hz) << "\n";
    out << log_column_header() << "\n";
    std::string line;
    for (std::size_t i = 0; i < log.size(); ++i) {
        const auto& f = log.frames[i];
        line = detail::real(f.t);
        for (double v : f.emg) line += "," + detail::real(v);
        for (double v : f.bend) line += "," + detail::real(v);
        line += "," + detail::real(f.pressure[0]) + "," + detail::real(f.motor_pos);
        line += ",";
        line += to_string(log.gt_intent[i]);
        line += ",";
        line += to_string(log.gt_command[i]);
        line += ",";
        line += to_string(log.phase[i]);
        line += ",";
        line += to_string(log.arm_position[i]);
        line += ",";
        if (!log.pred_intent.empty() && log.pred_intent[i]) line += to_string(*log.pred_intent[i]);
        line += ",";
        if (!log.pred_command.empty() && log.pred_command[i]) line += to_string(*log.pred_command[i]);
        out << line << "\n";
    }
}

inline SessionLog read_log_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::Schema, "empty file");
    const std::string magic = "# orthosis-log v";
    if (line.rfind(magic, 0) != 0) throw Error(ErrorCode::Schema, "missing orthosis-log header");
    SessionLog log;
    {
        std::istringstream hs(line.substr(magic.size()));
        int version = 0;
        std::string rate;
        hs >> version >> rate;
        if (version != kLogVersion) {
            throw Error(ErrorCode::Schema, "unsupported log version " + std::to_string(version));
        }
        if (rate.rfind("rate_hz=", 0) != 0) throw Error(ErrorCode::Schema, "missing rate_hz in header");
        log.rate_hz = detail::parse_real(rate.substr(8), 1);
    }
    if (!std::getline(in, line) || detail::split(line, ',') != detail::split(log_column_header(), ',')) {
        throw Error(ErrorCode::Schema, "unexpected column header");
    }
    std::size_t line_no = 2;
    bool any_pred_intent = false;
    bool any_pred_cmd = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = detail::split(line, ',');
        if (cells.size() != kLogColumns) {
            throw Error(ErrorCode::Validation, "line " + std::to_string(line_no) + ": expected " +
                                                   std::to_string(kLogColumns) + " columns, got " +
                                                   std::to_string(cells.size()));
        }
        SensorFrame f;
        std::size_t c = 0;
        f.t = detail::parse_real(cells[c++], line_no);
        for (auto& v : f.emg) v = detail::parse_real(cells[c++], line_no);
        for (auto& v : f.bend) v = detail::parse_real(cells[c++], line_no);
        f.pressure[0] = detail::parse_real(cells[c++], line_no);
        f.motor_pos = detail::parse_real(cells[c++], line_no);
        try {
            validate_frame(f);
        } catch (const Error& e) {
            throw Error(ErrorCode::Validation, "line " + std::to_string(line_no) + ": " + e.what());
        }
        const auto gi = detail::parse_field<IntentClass>(cells[c++], parse_intent, "intent", line_no);
        const auto gc = detail::parse_field<MotorCommand>(cells[c++], parse_command, "command", line_no);
        const auto ph = detail::parse_field<Phase>(cells[c++], parse_phase, "phase", line_no);
        const auto arm = detail::parse_field<ArmPosition>(cells[c++], parse_arm_position, "arm position", line_no);
        log.push_back(std::move(f), gi, gc, ph, arm);
        const auto& pi = cells[c++];
        const auto& pc = cells[c++];
        if (pi.empty()) {
            log.pred_intent.emplace_back(std::nullopt);
        } else {
            log.pred_intent.emplace_back(detail::parse_field<IntentClass>(pi, parse_intent, "intent", line_no));
            any_pred_intent = true;
        }
        if (pc.empty()) {
            log.pred_command.emplace_back(std::nullopt);
        } else {
            log.pred_command.emplace_back(detail::parse_field<MotorCommand>(pc, parse_command, "command", line_no));
            any_pred_cmd = true;
        }
    }
    // Prediction columns come as a pair: present if either carries a value.
    if (!any_pred_intent && !any_pred_cmd) {
        log.pred_intent.clear();
        log.pred_command.clear();
    }
    try {
        validate_log(log);
    } catch (const Error& e) {
        throw Error(ErrorCode::Validation, e.what());
    }
    return log;
}

inline void write_log_jsonl(const SessionLog& log, std::ostream& out) {
    validate_log(log);
    out << nlohmann::json{{"format", "orthosis-log"}, {"version", kLogVersion}, {"rate_hz", log.rate_hz}}.dump()
        << "\n";
    for (std::size_t i = 0; i < log.size(); ++i) {
        const auto& f = log.frames[i];
        nlohmann::json j = {{"t", f.t},
                            {"emg", f.emg},
                            {"bend", f.bend},
                            {"pressure", f.pressure[0]},
                            {"motor_pos", f.motor_pos},
                            {"gt_intent", to_string(log.gt_intent[i])},
                            {"gt_command", to_string(log.gt_command[i])},
                            {"phase", to_string(log.phase[i])},
                            {"arm_position", to_string(log.arm_position[i])}};
        if (!log.pred_intent.empty() && log.pred_intent[i]) j["pred_intent"] = to_string(*log.pred_intent[i]);
        if (!log.pred_command.empty() && log.pred_command[i]) j["cmd"] = to_string(*log.pred_command[i]);
        out << j.dump() << "\n";
    }
}

inline SessionLog read_log_jsonl(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::Schema, "empty file");
    SessionLog log;
    try {
        const auto head = nlohmann::json::parse(line);
        if (head.value("format", "") != "orthosis-log") throw Error(ErrorCode::Schema, "not an orthosis log");
        if (head.value("version", 0) != kLogVersion) throw Error(ErrorCode::Schema, "unsupported log version");
        log.rate_hz = head.at("rate_hz").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Schema, e.what());
    }
    std::size_t line_no = 1;
    bool any_pi = false;
    bool any_pc = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            SensorFrame f;
            f.t = j.at("t").get<double>();
            f.emg = j.at("emg").get<std::vector<double>>();
            f.bend = j.at("bend").get<std::vector<double>>();
            f.pressure = {j.at("pressure").get<double>()};
            f.motor_pos = j.at("motor_pos").get<double>();
            validate_frame(f);
            auto str = [&](const char* key) { return j.at(key).get<std::string>(); };
            log.push_back(std::move(f),
                          detail::parse_field<IntentClass>(str("gt_intent"), parse_intent, "intent", line_no),
                          detail::parse_field<MotorCommand>(str("gt_command"), parse_command, "command", line_no),
                          detail::parse_field<Phase>(str("phase"), parse_phase, "phase", line_no),
                          detail::parse_field<ArmPosition>(str("arm_position"), parse_arm_position, "arm", line_no));
            if (j.contains("pred_intent")) {
                log.pred_intent.emplace_back(
                    detail::parse_field<IntentClass>(str("pred_intent"), parse_intent, "intent", line_no));
                any_pi = true;
            } else {
                log.pred_intent.emplace_back(std::nullopt);
            }
            if (j.contains("cmd")) {
                log.pred_command.emplace_back(
                    detail::parse_field<MotorCommand>(str("cmd"), parse_command, "command", line_no));
                any_pc = true;
            } else {
                log.pred_command.emplace_back(std::nullopt);
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::Validation, "line " + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            if (e.code() == ErrorCode::Validation) throw;
            throw Error(ErrorCode::Validation, "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!any_pi && !any_pc) {
        log.pred_intent.clear();
        log.pred_command.clear();
    }
    validate_log(log);
    return log;
}

/// Format follows the extension: ".jsonl" for JSON lines, CSV otherwise.
inline void write_log(const SessionLog& log, const std::string& path) {
    auto out = detail::open_out(path);
    if (detail::ends_with(path, ".jsonl")) {
        write_log_jsonl(log, out);
    } else {
        write_log_csv(log, out);
    }
    if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

inline SessionLog read_log(const std::string& path) {
    auto in = detail::open_in(path);
    return detail::ends_with(path, ".jsonl") ? read_log_jsonl(in) : read_log_csv(in);
}

// --- forest ----------------------------------------------------------------

inline void write_forest(const Forest& forest, std::ostream& out) {
    const auto& p = forest.params();
    out << "orthosis-forest v" << kForestVersion << "\n";
    out << "params " << p.n_trees << " " << p.max_depth << " " << p.min_leaf << " " << p.features_per_split << " "
        << p.seed << " " << (p.balanced_bootstrap ? 1 : 0) << " " << (forest.degenerate() ? 1 : 0) << "\n";
    out << "trees " << forest.trees().size() << "\n";
    for (const auto& tree : forest.trees()) {
        out << "tree " << tree.nodes().size() << "\n";
        for (const auto& n : tree.nodes()) {
            out << n.feature << " " << detail::real(n.threshold) << " " << n.left << " " << n.right << " "
                << n.counts[0] << " " << n.counts[1] << " " << n.counts[2] << "\n";
        }
    }
}

inline Forest read_forest(std::istream& in) {
    std::string word;
    int version = 0;
    std::string magic;
    if (!(in >> magic) || magic != "orthosis-forest") throw Error(ErrorCode::Schema, "not an orthosis forest file");
    if (!(in >> word) || word.size() < 2 || word[0] != 'v') throw Error(ErrorCode::Schema, "missing version");
    version = std::atoi(word.c_str() + 1);
    if (version != kForestVersion) throw Error(ErrorCode::Schema, "unsupported forest version " + word);

    auto expect = [&](const char* kw) {
        if (!(in >> word) || word != kw) throw Error(ErrorCode::Validation, std::string("expected '") + kw + "'");
    };
    ForestParams p;
    int balanced = 1;
    int degenerate = 0;
    expect("params");
    if (!(in >> p.n_trees >> p.max_depth >> p.min_leaf >> p.features_per_split >> p.seed >> balanced >> degenerate)) {
        throw Error(ErrorCode::Validation, "bad params line");
    }
    p.balanced_bootstrap = balanced != 0;
    std::size_t n_trees = 0;
    expect("trees");
    if (!(in >> n_trees)) throw Error(ErrorCode::Validation, "bad tree count");
    std::vector<Tree> trees;
    trees.reserve(n_trees);
    for (std::size_t t = 0; t < n_trees; ++t) {
        std::size_t n_nodes = 0;
        expect("tree");
        if (!(in >> n_nodes)) throw Error(ErrorCode::Validation, "bad node count");
        std::vector<TreeNode> nodes(n_nodes);
        for (auto& n : nodes) {
            std::string thr;
            if (!(in >> n.feature >> thr >> n.left >> n.right >> n.counts[0] >> n.counts[1] >> n.counts[2])) {
                throw Error(ErrorCode::Validation, "bad node in tree " + std::to_string(t));
            }
            n.threshold = detail::parse_real(thr, 0);
        }
        trees.emplace_back(std::move(nodes));
    }
    return Forest(p, std::move(trees), degenerate != 0);
}

inline void write_forest(const Forest& forest, const std::string& path) {
    auto out = detail::open_out(path);
    write_forest(forest, out);
    if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

inline Forest read_forest(const std::string& path) {
    auto in = detail::open_in(path);
    return read_forest(in);
}

// --- calibration -----------------------------------------------------------

/// Human-editable "key = value" text; '#' starts a comment. A threshold
/// that calibration could not determine is written as "none".
inline void write_calibration(const CalibrationResult& c, std::ostream& out) {
    validate_calibration(c);
    auto opt = [](const std::optional<double>& v) { return v ? detail::real(*v) : std::string("none"); };
    out << "# orthosis-calibration v" << kCalibrationVersion << "\n";
    out << "L_B = " << opt(c.bend_threshold) << "\n";
    out << "L_P = " << opt(c.pressure_threshold) << "\n";
    out << "threshold_open = " << detail::real(c.class_thresholds[0]) << "\n";
    out << "threshold_relaxed = " << detail::real(c.class_thresholds[1]) << "\n";
    out << "threshold_closed = " << detail::real(c.class_thresholds[2]) << "\n";
    out << "focus_digit = " << c.focus_digit << "\n";
}

inline CalibrationResult read_calibration(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("# orthosis-calibration v", 0) != 0) {
        throw Error(ErrorCode::Schema, "missing orthosis-calibration header");
    }
    if (std::atoi(line.c_str() + 24) != kCalibrationVersion) {
        throw Error(ErrorCode::Schema, "unsupported calibration version");
    }
    CalibrationResult c;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        if (trim(line).empty()) continue;
        if (eq == std::string::npos) {
            throw Error(ErrorCode::Validation, "line " + std::to_string(line_no) + ": expected key = value");
        }
        const auto key = trim(line.substr(0, eq));
        const auto val = trim(line.substr(eq + 1));
        auto opt = [&]() -> std::optional<double> {
            if (val == "none") return std::nullopt;
            return detail::parse_real(val, line_no);
        };
        if (key == "L_B") c.bend_threshold = opt();
        else if (key == "L_P") c.pressure_threshold = opt();
        else if (key == "threshold_open") c.class_thresholds[0] = detail::parse_real(val, line_no);
        else if (key == "threshold_relaxed") c.class_thresholds[1] = detail::parse_real(val, line_no);
        else if (key == "threshold_closed") c.class_thresholds[2] = detail::parse_real(val, line_no);
        else if (key == "focus_digit") c.focus_digit = static_cast<std::size_t>(detail::parse_real(val, line_no));
        else throw Error(ErrorCode::Validation, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    try {
        validate_calibration(c);
    } catch (const Error& e) {
        throw Error(ErrorCode::Validation, e.what());
    }
    return c;
}

inline void write_calibration(const CalibrationResult& c, const std::string& path) {
    auto out = detail::open_out(path);
    write_calibration(c, out);
    if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

inline CalibrationResult read_calibration(const std::string& path) {
    auto in = detail::open_in(path);
    return read_calibration(in);
}

// --- replay ----------------------------------------------------------------

enum class Pace { Realtime, MaxSpeed };

/// Emits frames in order to `sink`. In realtime mode each frame is released
/// at its recorded offset from the first frame; the sink runs on the calling
/// thread, so a slow consumer holds back the producer.
inline void replay(const SessionLog& log, Pace pace, const std::function<void(std::size_t, const SensorFrame&)>& sink) {
    if (log.empty()) throw Error(ErrorCode::EmptyLog, "nothing to replay");
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    const double t0 = log.frames.front().t;
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (pace == Pace::Realtime) {
            const auto due = start + std::chrono::duration_cast<clock::duration>(
                                         std::chrono::duration<double>(log.frames[i].t - t0));
            std::this_thread::sleep_until(due);
        }
        sink(i, log.frames[i]);
    }
}

}  // namespace orthosis::io
