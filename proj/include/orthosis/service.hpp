#pragma once

// Session engine behind the operator wire protocol.
//
// The engine owns one control loop. Transport threads hand it inbound lines
// through an ordered queue; the loop drains the queue at the start of each
// tick, so operator changes always land between samples. Outbound messages
// carry one global sequence counter, which makes seq strictly increasing on
// every connection whatever subset of the stream it receives.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "orthosis/calibration.hpp"
#include "orthosis/control.hpp"
#include "orthosis/eval.hpp"
#include "orthosis/forest.hpp"
#include "orthosis/io.hpp"
#include "orthosis/model.hpp"
#include "orthosis/simgen.hpp"

namespace orthosis::service {

enum class Kind {
    Frame,
    Intent,
    Command,
    DeviceState,
    PhaseLabel,
    SetMode,
    SetThreshold,
    StartTraining,
    StartTest,
    Calibrate,
    Metrics,
    Error,
};

constexpr std::string_view to_string(Kind k) {
    switch (k) {
        case Kind::Frame: return "frame";
        case Kind::Intent: return "intent";
        case Kind::Command: return "command";
        case Kind::DeviceState: return "device_state";
        case Kind::PhaseLabel: return "phase_label";
        case Kind::SetMode: return "set_mode";
        case Kind::SetThreshold: return "set_threshold";
        case Kind::StartTraining: return "start_training";
        case Kind::StartTest: return "start_test";
        case Kind::Calibrate: return "calibrate";
        case Kind::Metrics: return "metrics";
        case Kind::Error: return "error";
    }
    return "?";
}

inline std::optional<Kind> parse_kind(std::string_view s) {
    for (int i = 0; i <= static_cast<int>(Kind::Error); ++i) {
        if (to_string(static_cast<Kind>(i)) == s) return static_cast<Kind>(i);
    }
    return std::nullopt;
}

/// Kinds an operator may send. The rest are server-to-client only.
constexpr bool is_operator_kind(Kind k) {
    switch (k) {
        case Kind::PhaseLabel:
        case Kind::SetMode:
        case Kind::SetThreshold:
        case Kind::StartTraining:
        case Kind::StartTest:
        case Kind::Calibrate: return true;
        default: return false;
    }
}

struct Message {
    Kind kind = Kind::Error;
    std::uint64_t seq = 0;
    nlohmann::json payload = nlohmann::json::object();
};

inline std::string encode(const Message& m) {
    nlohmann::json j = {{"kind", std::string(to_string(m.kind))}, {"seq", m.seq}, {"payload", m.payload}};
    return j.dump();
}

/// Parses one wire line. Throws BadMessage on malformed JSON, missing or
/// mistyped fields, or an unknown kind.
inline Message decode(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::BadMessage, std::string("not JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::BadMessage, "message must be a JSON object");
    for (const char* key : {"kind", "seq", "payload"}) {
        if (!j.contains(key)) throw Error(ErrorCode::BadMessage, std::string("missing field '") + key + "'");
    }
    if (!j["kind"].is_string()) throw Error(ErrorCode::BadMessage, "kind must be a string");
    if (!j["seq"].is_number_unsigned()) throw Error(ErrorCode::BadMessage, "seq must be a non-negative integer");
    if (!j["payload"].is_object()) throw Error(ErrorCode::BadMessage, "payload must be an object");
    const auto kind = parse_kind(j["kind"].get<std::string>());
    if (!kind) throw Error(ErrorCode::BadMessage, "unknown kind '" + j["kind"].get<std::string>() + "'");
    return {*kind, j["seq"].get<std::uint64_t>(), j["payload"]};
}

/// Rolling report over the trailing `window_s` seconds of a log with
/// predictions. A window longer than the log covers all of it.
inline eval::EvalReport compute_live_metrics(const SessionLog& log, double window_s, double match_window_s = 1.5) {
    if (log.empty() || !log.has_predictions()) throw Error(ErrorCode::NoGroundTruth, "no scored samples yet");
    const double period = 1.0 / log.rate_hz;
    if (!(window_s >= period - 1e-9)) throw Error(ErrorCode::EmptyInput, "window is shorter than one sample period");
    const double want = std::floor(window_s / period + 1e-9);
    const std::size_t n = want >= static_cast<double>(log.size()) ? log.size() : static_cast<std::size_t>(want);
    const std::size_t b = log.size() - n;
    const auto pred = log.predicted_commands();
    const auto times = log.times();
    return eval::evaluate(std::span(pred).subspan(b), std::span(log.gt_command).subspan(b),
                          std::span(times).subspan(b), match_window_s);
}

inline nlohmann::json error_payload(ErrorCode code, const std::string& message,
                                    std::optional<std::uint64_t> in_reply_to = std::nullopt) {
    nlohmann::json p = {{"code", std::string(to_string(code))}, {"message", message}};
    if (in_reply_to) p["in_reply_to"] = *in_reply_to;
    return p;
}

inline nlohmann::json calibration_json(const CalibrationResult& c) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"L_B", opt(c.bend_threshold)},
            {"L_P", opt(c.pressure_threshold)},
            {"threshold_open", c.class_thresholds[0]},
            {"threshold_relaxed", c.class_thresholds[1]},
            {"threshold_closed", c.class_thresholds[2]},
            {"focus_digit", c.focus_digit}};
}

using ConnId = std::uint64_t;

/// One outbound message; `to` is empty for a broadcast.
struct Outbound {
    std::optional<ConnId> to;
    Message msg;
};

struct EngineConfig {
    Settings settings;
    sim::SubjectProfile profile = sim::preset("B-like");
    sim::TestConfig test;
    sim::Script script = sim::default_test_script();
    ForestParams forest;
    double metrics_window_s = 10.0;
    std::uint64_t seed = 1;
};

enum class EngineState { Idle, Training, Testing, Replaying };

constexpr std::string_view to_string(EngineState s) {
    switch (s) {
        case EngineState::Idle: return "idle";
        case EngineState::Training: return "training";
        case EngineState::Testing: return "testing";
        case EngineState::Replaying: return "replaying";
    }
    return "?";
}

class SessionEngine {
public:
    using Sink = std::function<void(const Outbound&)>;

    SessionEngine(EngineConfig config, Sink sink) : config_(std::move(config)), sink_(std::move(sink)) {
        config_.test.settings = config_.settings;
        mode_ = sim::matched_mode(config_.profile);
    }

    // --- transport side (any thread) ----------------------------------------

    void connect(ConnId conn) { enqueue({conn, Inbound::Connect, {}}); }
    void disconnect(ConnId conn) { enqueue({conn, Inbound::Disconnect, {}}); }
    void submit_line(ConnId conn, std::string line) { enqueue({conn, Inbound::Line, std::move(line)}); }

    // --- loop side ------------------------------------------------------------

    /// Applies queued operator input, then advances the active session by
    /// one sample. Idle ticks only apply input.
    void tick() {
        drain();
        switch (state_) {
            case EngineState::Idle: return;
            case EngineState::Training: tick_training(); break;
            case EngineState::Testing: tick_test(); break;
            case EngineState::Replaying: tick_replay(); break;
        }
        ++ticks_;
    }

    /// Runs until stop() is called. With `realtime` the loop keeps its own
    /// fixed-rate clock; otherwise it ticks as fast as it can.
    void run(const std::atomic<bool>& stop, bool realtime = true) {
        using clock = std::chrono::steady_clock;
        const auto period = std::chrono::duration_cast<clock::duration>(
            std::chrono::duration<double>(config_.settings.period()));
        auto due = clock::now();
        while (!stop.load()) {
            tick();
            if (realtime) {
                due += period;
                std::this_thread::sleep_until(due);
            }
        }
    }

    EngineState state() const { return state_; }
    ControlMode mode() const { return mode_; }
    const std::optional<CalibrationResult>& calibration() const { return calib_; }
    const Forest* forest() const { return forest_.get(); }
    const SessionLog& training_log() const { return training_log_; }
    const SessionLog& test_log() const { return test_log_; }
    std::optional<ConnId> operator_conn() const { return operator_; }
    std::uint64_t last_seq() const { return seq_; }

    /// Installs a previously trained model and calibration.
    void load(Forest forest, CalibrationResult calib) {
        validate_calibration(calib);
        forest_ = std::make_unique<Forest>(std::move(forest));
        calib_ = calib;
    }

private:
    struct Inbound {
        ConnId conn;
        enum Type { Connect, Disconnect, Line } type;
        std::string line;
    };

    void enqueue(Inbound in) {
        std::lock_guard lock(mu_);
        queue_.push_back(std::move(in));
    }

    void drain() {
        std::deque<Inbound> batch;
        {
            std::lock_guard lock(mu_);
            batch.swap(queue_);
        }
        for (auto& in : batch) handle(in);
    }

    void emit(Kind kind, nlohmann::json payload, std::optional<ConnId> to = std::nullopt) {
        sink_({to, {kind, ++seq_, std::move(payload)}});
    }

    void reply_error(ConnId conn, const Error& e, std::optional<std::uint64_t> in_reply_to) {
        emit(Kind::Error, error_payload(e.code(), e.message(), in_reply_to), conn);
    }

    void handle(const Inbound& in) {
        switch (in.type) {
            case Inbound::Connect: conns_.insert(in.conn); return;
            case Inbound::Disconnect:
                conns_.erase(in.conn);
                last_in_seq_.erase(in.conn);
                if (operator_ == in.conn) operator_.reset();
                return;
            case Inbound::Line: break;
        }
        std::optional<std::uint64_t> seq;
        try {
            const Message m = decode(in.line);
            seq = m.seq;
            if (auto it = last_in_seq_.find(in.conn); it != last_in_seq_.end() && m.seq <= it->second) {
                throw Error(ErrorCode::BadMessage, "seq must increase on each connection");
            }
            last_in_seq_[in.conn] = m.seq;
            if (!is_operator_kind(m.kind)) {
                throw Error(ErrorCode::BadMessage, "kind '" + std::string(to_string(m.kind)) + "' is server-only");
            }
            if (!operator_) operator_ = in.conn;
            if (*operator_ != in.conn) {
                throw Error(ErrorCode::BadMessage, "another operator holds this session; connection is read-only");
            }
            apply(m);
        } catch (const Error& e) {
            reply_error(in.conn, e, seq);
        } catch (const nlohmann::json::exception& e) {
            reply_error(in.conn, Error(ErrorCode::BadMessage, e.what()), seq);
        }
    }

    void apply(const Message& m) {
        const auto& p = m.payload;
        switch (m.kind) {
            case Kind::PhaseLabel: {
                if (state_ != EngineState::Training) throw Error(ErrorCode::BadMessage, "phase labels apply only during training");
                const auto phase = parse_phase(p.at("phase").get<std::string>());
                if (!phase) throw Error(ErrorCode::BadMessage, "unknown phase '" + p.at("phase").get<std::string>() + "'");
                if (p.contains("arm_position")) {
                    const auto arm = parse_arm_position(p["arm_position"].get<std::string>());
                    if (!arm) throw Error(ErrorCode::BadMessage, "unknown arm position");
                    arm_ = *arm;
                }
                training_->begin_phase(*phase, arm_);
                emit(Kind::PhaseLabel, {{"phase", std::string(to_string(*phase))},
                                        {"arm_position", std::string(to_string(arm_))},
                                        {"t", training_->time()}});
                return;
            }
            case Kind::SetMode: {
                const auto mode = parse_mode(p.at("mode").get<std::string>());
                if (!mode) throw Error(ErrorCode::BadMessage, "unknown mode '" + p.at("mode").get<std::string>() + "'");
                if (controller_) {
                    controller_->set_mode(*mode);
                } else if (calib_) {
                    if (*mode == ControlMode::BendOpenEmgClose && !calib_->bend_threshold) {
                        throw Error(ErrorCode::NotCalibrated, "bend-open mode requires a bend threshold (L_B)");
                    }
                    if (*mode == ControlMode::EmgOpenPressureClose && !calib_->pressure_threshold) {
                        throw Error(ErrorCode::NotCalibrated, "pressure-close mode requires a pressure threshold (L_P)");
                    }
                }
                mode_ = *mode;
                emit(Kind::SetMode, {{"mode", std::string(to_string(mode_))}});
                return;
            }
            case Kind::SetThreshold: {
                if (state_ == EngineState::Testing || state_ == EngineState::Replaying) {
                    throw Error(ErrorCode::BadMessage, "thresholds are kept constant throughout all tests");
                }
                if (!calib_) throw Error(ErrorCode::NotCalibrated, "nothing to adjust before calibration");
                const auto field = calibration::parse_field(p.at("field").get<std::string>());
                if (!field) throw Error(ErrorCode::BadMessage, "unknown threshold field");
                calib_ = calibration::manual_adjust(*calib_, *field, p.at("value").get<double>());
                emit(Kind::SetThreshold, {{"calibration", calibration_json(*calib_)}});
                return;
            }
            case Kind::StartTraining: {
                sim::TrainingConfig tc;
                tc.settings = config_.settings;
                tc.seed = p.value("seed", config_.seed);
                training_ = std::make_unique<sim::TrainingStepper>(config_.profile, tc, *tc.seed);
                arm_ = ArmPosition::OnTable;
                training_->begin_phase(Phase::Relax, arm_);
                training_log_ = SessionLog{};
                training_log_.rate_hz = config_.settings.rate_hz;
                stop_session();
                state_ = EngineState::Training;
                emit(Kind::StartTraining, {{"profile", config_.profile.name}, {"seed", *tc.seed}});
                return;
            }
            case Kind::Calibrate: {
                if (state_ == EngineState::Testing || state_ == EngineState::Replaying) {
                    throw Error(ErrorCode::BadMessage, "thresholds are kept constant throughout all tests");
                }
                if (p.contains("calibration")) {
                    // Operator-supplied values, e.g. loaded from a file.
                    CalibrationResult c = calib_.value_or(CalibrationResult{});
                    for (auto& [key, value] : p["calibration"].items()) {
                        const auto field = calibration::parse_field(key);
                        if (!field) throw Error(ErrorCode::BadMessage, "unknown calibration field '" + key + "'");
                        c = calibration::manual_adjust(c, *field, value.get<double>());
                    }
                    calib_ = c;
                    emit(Kind::Calibrate, {{"calibration", calibration_json(*calib_)}});
                    return;
                }
                if (training_log_.empty()) throw Error(ErrorCode::NoGroundTruth, "no training data recorded");
                const auto outcome = calibration::calibrate(training_log_);
                auto params = config_.forest;
                params.seed = p.value("seed", params.seed);
                auto forest = train_forest(training_samples(training_log_), params);
                training_.reset();
                if (state_ == EngineState::Training) state_ = EngineState::Idle;
                forest_ = std::make_unique<Forest>(std::move(forest));
                calib_ = outcome.result;
                nlohmann::json out = {{"calibration", calibration_json(*calib_)},
                                      {"frames", training_log_.size()},
                                      {"degenerate", forest_->degenerate()}};
                if (!outcome.bend_error.empty()) out["bend_error"] = outcome.bend_error;
                if (!outcome.pressure_error.empty()) out["pressure_error"] = outcome.pressure_error;
                emit(Kind::Calibrate, out);
                return;
            }
            case Kind::StartTest: {
                if (!calib_ || !forest_) throw Error(ErrorCode::NotCalibrated, "start_test requires a calibrated, trained session");
                ControlMode mode = mode_;
                if (p.contains("mode")) {
                    const auto m2 = parse_mode(p["mode"].get<std::string>());
                    if (!m2) throw Error(ErrorCode::BadMessage, "unknown mode");
                    mode = *m2;
                }
                auto controller = std::make_unique<Controller>(mode, *forest_, *calib_, config_.settings);
                const std::string source = p.value("source", std::string("simgen"));
                test_log_ = SessionLog{};
                test_log_.rate_hz = config_.settings.rate_hz;
                if (source == "simgen") {
                    auto script = config_.script;
                    if (p.contains("script")) script = sim::script_from_json(p["script"]);
                    if (p.contains("duration")) {
                        // Truncates the script; later events are dropped.
                        script.duration = p["duration"].get<double>();
                        std::erase_if(script.events, [&](const sim::ScriptEvent& ev) { return ev.time > script.duration; });
                    }
                    auto tc = config_.test;
                    tc.seed = p.value("seed", config_.seed);
                    test_ = std::make_unique<sim::TestStepper>(config_.profile, script, tc);
                    state_ = EngineState::Testing;
                } else if (source == "replay") {
                    replay_log_ = io::read_log(p.at("log").get<std::string>());
                    if (replay_log_.empty()) throw Error(ErrorCode::EmptyLog, "replay log has no frames");
                    if (std::abs(replay_log_.rate_hz - config_.settings.rate_hz) > 1e-9) {
                        throw Error(ErrorCode::InvalidConfig, "replay log rate differs from the session rate");
                    }
                    replay_pos_ = 0;
                    state_ = EngineState::Replaying;
                } else {
                    throw Error(ErrorCode::BadMessage, "source must be 'simgen' or 'replay'");
                }
                training_.reset();
                controller_ = std::move(controller);
                mode_ = mode;
                session_ticks_ = 0;
                emit(Kind::StartTest, {{"mode", std::string(to_string(mode_))}, {"source", source}});
                return;
            }
            default: throw Error(ErrorCode::BadMessage, "unsupported kind");
        }
    }

    void stop_session() {
        controller_.reset();
        test_.reset();
    }

    static nlohmann::json frame_json(const SensorFrame& f, Phase phase, ArmPosition arm) {
        return {{"t", f.t},
                {"emg", f.emg},
                {"bend", f.bend},
                {"pressure", f.pressure[0]},
                {"motor_pos", f.motor_pos},
                {"phase", std::string(to_string(phase))},
                {"arm_position", std::string(to_string(arm))}};
    }

    void emit_bundle(const SensorFrame& f, Phase phase, ArmPosition arm, IntentClass intent,
                     const std::optional<ProbTriple>& probs, MotorCommand cmd, DeviceState dev) {
        emit(Kind::Frame, frame_json(f, phase, arm));
        nlohmann::json ip = {{"intent", std::string(to_string(intent))}};
        if (probs) ip["probabilities"] = probs->p;
        else ip["source"] = "label";
        emit(Kind::Intent, ip);
        emit(Kind::Command, {{"command", std::string(to_string(cmd))}});
        emit(Kind::DeviceState, {{"state", std::string(to_string(dev))}});
    }

    void tick_training() {
        auto tk = training_->step();
        const DeviceState dev = derive_device_state(tk.frame.motor_pos, tk.command, tk.stalled);
        emit_bundle(tk.frame, tk.phase, tk.arm, tk.gt_intent, std::nullopt, tk.command, dev);
        training_log_.push_back(std::move(tk.frame), tk.gt_intent, tk.gt_command, tk.phase, tk.arm);
    }

    void record_scored(const SensorFrame& f, IntentClass gt_intent, MotorCommand gt_cmd, Phase phase, ArmPosition arm,
                       const ControlOutput& out) {
        test_log_.push_back(f, gt_intent, gt_cmd, phase, arm);
        test_log_.pred_intent.emplace_back(out.intent);
        test_log_.pred_command.emplace_back(out.command);
        ++session_ticks_;
        const auto per_second = static_cast<std::size_t>(std::llround(config_.settings.rate_hz));
        if (per_second > 0 && session_ticks_ % per_second == 0) emit_metrics(false);
    }

    void emit_metrics(bool final) {
        const double window = final ? std::numeric_limits<double>::infinity() : config_.metrics_window_s;
        auto report = compute_live_metrics(test_log_, window, config_.settings.match_window_s);
        report.control = std::string(to_string(mode_));
        auto j = eval::to_json(report);
        j["window_s"] = final ? nlohmann::json(nullptr) : nlohmann::json(config_.metrics_window_s);
        j["final"] = final;
        j["t"] = test_log_.frames.back().t;
        emit(Kind::Metrics, j);
    }

    void tick_test() {
        // The controller runs inside the stepper so it sees the stall input.
        auto tk = test_->step(controller_.get());
        const auto& out = *tk.control;
        emit_bundle(tk.frame, tk.phase, tk.arm, out.intent, out.probabilities, out.command, out.device);
        record_scored(tk.frame, tk.gt_intent, tk.gt_command, tk.phase, tk.arm, out);
        if (test_->done()) finish_test();
    }

    void tick_replay() {
        const std::size_t i = replay_pos_++;
        const auto& f = replay_log_.frames[i];
        const auto out = controller_->step(f);
        emit_bundle(f, replay_log_.phase[i], replay_log_.arm_position[i], out.intent, out.probabilities, out.command,
                    out.device);
        record_scored(f, replay_log_.gt_intent[i], replay_log_.gt_command[i], replay_log_.phase[i],
                      replay_log_.arm_position[i], out);
        if (replay_pos_ >= replay_log_.size()) finish_test();
    }

    void finish_test() {
        emit_metrics(true);
        stop_session();
        state_ = EngineState::Idle;
    }

    EngineConfig config_;
    Sink sink_;
    std::mutex mu_;
    std::deque<Inbound> queue_;

    std::set<ConnId> conns_;
    std::unordered_map<ConnId, std::uint64_t> last_in_seq_;
    std::optional<ConnId> operator_;
    std::uint64_t seq_ = 0;
    std::uint64_t ticks_ = 0;

    EngineState state_ = EngineState::Idle;
    ControlMode mode_ = ControlMode::EmgOnly;
    ArmPosition arm_ = ArmPosition::OnTable;
    std::unique_ptr<sim::TrainingStepper> training_;
    std::unique_ptr<sim::TestStepper> test_;
    std::unique_ptr<Forest> forest_;
    std::optional<CalibrationResult> calib_;
    std::unique_ptr<Controller> controller_;
    SessionLog training_log_;
    SessionLog test_log_;
    SessionLog replay_log_;
    std::size_t replay_pos_ = 0;
    std::size_t session_ticks_ = 0;
};

}  // namespace orthosis::service
