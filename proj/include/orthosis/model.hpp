#pragma once

// Shared domain types for the orthosis intent/control engine.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "orthosis/error.hpp"

namespace orthosis {

inline constexpr std::size_t kEmgChannels = 8;
inline constexpr std::size_t kBendChannels = 4;
inline constexpr std::size_t kPressureChannels = 1;
inline constexpr std::size_t kClasses = 3;

/// One timestamped multimodal sample. Vectors are dynamically sized so that
/// malformed input can be represented and rejected by validate_frame().
struct SensorFrame {
    double t = 0.0;
    std::vector<double> emg = std::vector<double>(kEmgChannels, 0.0);
    std::vector<double> bend = std::vector<double>(kBendChannels, 0.0);
    std::vector<double> pressure = std::vector<double>(kPressureChannels, 0.0);
    double motor_pos = 0.0;  // 0 = tendon extended (closed), 1 = retracted (open)

    bool operator==(const SensorFrame&) const = default;
};

enum class IntentClass { Open = 0, Relaxed = 1, Closed = 2 };
enum class DeviceState { Closed, Opening, Open, Closing };
enum class MotorCommand { CmdOpen, CmdClose };
enum class Phase { Relax, TryOpen, DeviceOpening, HoldOpen, TryClose, DeviceClosing, HoldClose };
enum class ArmPosition { OnTable, Raised, Supported };
enum class ControlMode { EmgOnly, BendOpenEmgClose, EmgOpenPressureClose };

constexpr std::size_t index_of(IntentClass c) { return static_cast<std::size_t>(c); }
constexpr IntentClass intent_from_index(std::size_t i) { return static_cast<IntentClass>(i); }

constexpr std::string_view to_string(IntentClass c) {
    switch (c) {
        case IntentClass::Open: return "open";
        case IntentClass::Relaxed: return "relaxed";
        case IntentClass::Closed: return "closed";
    }
    return "?";
}

constexpr std::string_view to_string(DeviceState s) {
    switch (s) {
        case DeviceState::Closed: return "closed";
        case DeviceState::Opening: return "opening";
        case DeviceState::Open: return "open";
        case DeviceState::Closing: return "closing";
    }
    return "?";
}

constexpr std::string_view to_string(MotorCommand c) {
    return c == MotorCommand::CmdOpen ? "open" : "close";
}

constexpr std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::Relax: return "relax";
        case Phase::TryOpen: return "try-open";
        case Phase::DeviceOpening: return "device-opening";
        case Phase::HoldOpen: return "hold-open";
        case Phase::TryClose: return "try-close";
        case Phase::DeviceClosing: return "device-closing";
        case Phase::HoldClose: return "hold-close";
    }
    return "?";
}

constexpr std::string_view to_string(ArmPosition a) {
    switch (a) {
        case ArmPosition::OnTable: return "on-table";
        case ArmPosition::Raised: return "raised";
        case ArmPosition::Supported: return "supported";
    }
    return "?";
}

constexpr std::string_view to_string(ControlMode m) {
    switch (m) {
        case ControlMode::EmgOnly: return "emg";
        case ControlMode::BendOpenEmgClose: return "bend-open";
        case ControlMode::EmgOpenPressureClose: return "pressure-close";
    }
    return "?";
}

namespace detail {
template <typename E, std::size_t N>
std::optional<E> parse_enum(std::string_view s, const std::array<E, N>& values) {
    for (E v : values) {
        if (to_string(v) == s) return v;
    }
    return std::nullopt;
}
}  // namespace detail

inline std::optional<IntentClass> parse_intent(std::string_view s) {
    return detail::parse_enum(s, std::array{IntentClass::Open, IntentClass::Relaxed, IntentClass::Closed});
}
inline std::optional<DeviceState> parse_device_state(std::string_view s) {
    return detail::parse_enum(
        s, std::array{DeviceState::Closed, DeviceState::Opening, DeviceState::Open, DeviceState::Closing});
}
inline std::optional<MotorCommand> parse_command(std::string_view s) {
    return detail::parse_enum(s, std::array{MotorCommand::CmdOpen, MotorCommand::CmdClose});
}
inline std::optional<Phase> parse_phase(std::string_view s) {
    return detail::parse_enum(s, std::array{Phase::Relax, Phase::TryOpen, Phase::DeviceOpening, Phase::HoldOpen,
                                            Phase::TryClose, Phase::DeviceClosing, Phase::HoldClose});
}
inline std::optional<ArmPosition> parse_arm_position(std::string_view s) {
    return detail::parse_enum(s, std::array{ArmPosition::OnTable, ArmPosition::Raised, ArmPosition::Supported});
}
inline std::optional<ControlMode> parse_mode(std::string_view s) {
    return detail::parse_enum(
        s, std::array{ControlMode::EmgOnly, ControlMode::BendOpenEmgClose, ControlMode::EmgOpenPressureClose});
}

/// Ground-truth intent implied by a training phase.
constexpr IntentClass intent_for_phase(Phase p) {
    switch (p) {
        case Phase::TryOpen:
        case Phase::DeviceOpening:
        case Phase::HoldOpen: return IntentClass::Open;
        case Phase::TryClose:
        case Phase::DeviceClosing:
        case Phase::HoldClose: return IntentClass::Closed;
        case Phase::Relax: return IntentClass::Relaxed;
    }
    return IntentClass::Relaxed;
}

/// Tunable numeric parameters. Defaults are the values used by the
/// reference protocol; every one of them may be overridden for sweeps.
struct Settings {
    double rate_hz = 50.0;
    double mean_window_s = 0.25;     // bend / pressure smoothing
    double median_window_s = 0.5;    // class-probability smoothing
    double transition_time_s = 1.8;  // full motor travel
    double match_window_s = 1.5;     // transition matching tolerance
    double class_threshold = 0.6;

    double period() const { return 1.0 / rate_hz; }
};

/// Number of samples in a trailing (t - window, t] window on a uniform grid.
inline std::size_t mean_window_samples(double window_s, double period_s) {
    if (!(window_s > 0.0) || !(period_s > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "window and period must be positive");
    }
    const double n = std::ceil(window_s / period_s - 1e-9);
    return n < 1.0 ? 1 : static_cast<std::size_t>(n);
}

/// Median windows use the nearest odd sample count so the median is a sample.
inline std::size_t median_window_samples(double window_s, double period_s) {
    if (!(window_s > 0.0) || !(period_s > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "window and period must be positive");
    }
    const double x = window_s / period_s;
    const double odd = 2.0 * std::floor(x / 2.0 + 1e-9) + 1.0;
    return static_cast<std::size_t>(odd);
}

/// Per-subject thresholds. L_B / L_P are absent when calibration found no
/// voluntary peaks for that modality.
struct CalibrationResult {
    std::optional<double> bend_threshold;      // L_B, bend units per second
    std::optional<double> pressure_threshold;  // L_P, pressure units per second
    std::array<double, kClasses> class_thresholds{0.6, 0.6, 0.6};
    std::size_t focus_digit = 0;

    bool operator==(const CalibrationResult&) const = default;
};

inline void validate_calibration(const CalibrationResult& c) {
    if (c.bend_threshold && !(*c.bend_threshold > 0.0 && std::isfinite(*c.bend_threshold))) {
        throw Error(ErrorCode::InvariantViolation, "L_B must be positive");
    }
    if (c.pressure_threshold && !(*c.pressure_threshold > 0.0 && std::isfinite(*c.pressure_threshold))) {
        throw Error(ErrorCode::InvariantViolation, "L_P must be positive");
    }
    for (double th : c.class_thresholds) {
        if (!(th > 0.5 && th < 1.0)) {
            throw Error(ErrorCode::InvariantViolation, "class thresholds must lie in (0.5, 1)");
        }
    }
    if (c.focus_digit >= kBendChannels) {
        throw Error(ErrorCode::InvariantViolation, "focus digit must be in [0, 4)");
    }
}

inline void validate_frame(const SensorFrame& f) {
    if (!std::isfinite(f.t)) throw Error(ErrorCode::Time, "non-finite timestamp");
    if (f.emg.size() != kEmgChannels) {
        throw Error(ErrorCode::Arity, "expected 8 EMG values, got " + std::to_string(f.emg.size()));
    }
    if (f.bend.size() != kBendChannels) {
        throw Error(ErrorCode::Arity, "expected 4 bend values, got " + std::to_string(f.bend.size()));
    }
    if (f.pressure.size() != kPressureChannels) {
        throw Error(ErrorCode::Arity, "expected 1 pressure value, got " + std::to_string(f.pressure.size()));
    }
    for (double v : f.emg) {
        if (!std::isfinite(v) || v < 0.0) throw Error(ErrorCode::Range, "EMG values must be finite and >= 0");
    }
    for (double v : f.bend) {
        if (!std::isfinite(v)) throw Error(ErrorCode::Range, "bend values must be finite");
    }
    if (!std::isfinite(f.pressure[0]) || f.pressure[0] < 0.0) {
        throw Error(ErrorCode::Range, "pressure must be finite and >= 0");
    }
    if (!(f.motor_pos >= 0.0 && f.motor_pos <= 1.0)) {
        throw Error(ErrorCode::Range, "motor_pos outside [0,1]");
    }
}

struct SessionLog {
    double rate_hz = 50.0;
    std::vector<SensorFrame> frames;
    std::vector<IntentClass> gt_intent;
    std::vector<MotorCommand> gt_command;
    std::vector<Phase> phase;
    std::vector<ArmPosition> arm_position;
    // Controller annotations; either empty or one entry per frame.
    std::vector<std::optional<IntentClass>> pred_intent;
    std::vector<std::optional<MotorCommand>> pred_command;

    std::size_t size() const { return frames.size(); }
    bool empty() const { return frames.empty(); }

    void push_back(SensorFrame frame, IntentClass intent, MotorCommand cmd, Phase ph, ArmPosition arm) {
        frames.push_back(std::move(frame));
        gt_intent.push_back(intent);
        gt_command.push_back(cmd);
        phase.push_back(ph);
        arm_position.push_back(arm);
    }

    bool has_predictions() const { return !pred_command.empty(); }

    std::vector<MotorCommand> predicted_commands() const {
        std::vector<MotorCommand> out;
        out.reserve(pred_command.size());
        for (const auto& c : pred_command) {
            if (!c) throw Error(ErrorCode::Validation, "log has frames without a predicted command");
            out.push_back(*c);
        }
        return out;
    }

    std::vector<double> times() const {
        std::vector<double> out;
        out.reserve(frames.size());
        for (const auto& f : frames) out.push_back(f.t);
        return out;
    }

    bool operator==(const SessionLog&) const = default;
};

/// Structural checks: equal-length columns, increasing time, valid frames.
inline void validate_log(const SessionLog& log) {
    const std::size_t n = log.frames.size();
    if (log.gt_intent.size() != n || log.gt_command.size() != n || log.phase.size() != n ||
        log.arm_position.size() != n) {
        throw Error(ErrorCode::Validation, "per-frame columns differ in length");
    }
    if (!log.pred_intent.empty() && log.pred_intent.size() != n) {
        throw Error(ErrorCode::Validation, "pred_intent column length mismatch");
    }
    if (!log.pred_command.empty() && log.pred_command.size() != n) {
        throw Error(ErrorCode::Validation, "pred_command column length mismatch");
    }
    if (!(log.rate_hz > 0.0)) throw Error(ErrorCode::Validation, "rate must be positive");
    for (std::size_t i = 0; i < n; ++i) {
        validate_frame(log.frames[i]);
        if (i > 0 && !(log.frames[i].t > log.frames[i - 1].t)) {
            throw Error(ErrorCode::Time, "timestamps must strictly increase (frame " + std::to_string(i) + ")");
        }
    }
}

}  // namespace orthosis
