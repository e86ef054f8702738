#pragma once

// The three controllers as explicit state machines over DeviceState.
//
// All modes share the transition lockout: no command change is issued while
// the device is Opening or Closing.

#include <optional>

#include "orthosis/dsp.hpp"
#include "orthosis/forest.hpp"
#include "orthosis/intent.hpp"
#include "orthosis/model.hpp"
#include "orthosis/plant.hpp"

namespace orthosis {

constexpr bool transitioning(DeviceState s) { return s == DeviceState::Opening || s == DeviceState::Closing; }

inline MotorCommand decide_emg_only(DeviceState device, MotorCommand last, IntentClass intent) {
    if (transitioning(device)) return last;
    switch (intent) {
        case IntentClass::Open: return MotorCommand::CmdOpen;
        case IntentClass::Closed: return MotorCommand::CmdClose;
        case IntentClass::Relaxed: return last;
    }
    return last;
}

// Derivative triggers fire at or above the threshold: L_B / L_P are the
// smallest calibration peak, and that peak itself must trigger.
inline MotorCommand decide_bend_open_emg_close(DeviceState device, MotorCommand last, double bend_rate,
                                               double bend_threshold, IntentClass intent) {
    if (device == DeviceState::Closed && bend_rate >= bend_threshold) return MotorCommand::CmdOpen;
    if (device == DeviceState::Open && intent == IntentClass::Closed) return MotorCommand::CmdClose;
    return last;
}

inline MotorCommand decide_emg_open_pressure_close(DeviceState device, MotorCommand last, IntentClass intent,
                                                   double pressure_rate, double pressure_threshold) {
    if (device == DeviceState::Closed && intent == IntentClass::Open) return MotorCommand::CmdOpen;
    if (device == DeviceState::Open && pressure_rate >= pressure_threshold) return MotorCommand::CmdClose;
    return last;
}

/// Per-tick controller output.
struct ControlOutput {
    IntentClass intent = IntentClass::Relaxed;
    MotorCommand command = MotorCommand::CmdClose;
    DeviceState device = DeviceState::Closed;
    ProbTriple probabilities;
    double bend_rate = 0.0;
    double pressure_rate = 0.0;
};

class Controller {
public:
    Controller(ControlMode mode, const Forest& forest, CalibrationResult calib, Settings settings = {})
        : mode_(mode),
          forest_(&forest),
          calib_(calib),
          settings_(settings),
          decoder_(calib.class_thresholds, median_window_samples(settings.median_window_s, settings.period())),
          bend_rate_(mean_window_samples(settings.mean_window_s, settings.period())),
          pressure_rate_(mean_window_samples(settings.mean_window_s, settings.period())) {
        validate_calibration(calib_);
        require_calibration(mode_);
    }

    ControlMode mode() const { return mode_; }
    MotorCommand last_command() const { return last_command_; }
    IntentClass last_intent() const { return decoder_.intent(); }
    DeviceState device() const { return device_; }
    const CalibrationResult& calibration() const { return calib_; }

    /// Switches mode, clearing filter memory. The commanded motor state
    /// persists since the plant is physical.
    void set_mode(ControlMode mode) {
        require_calibration(mode);
        mode_ = mode;
        decoder_.reset();
        bend_rate_.reset();
        pressure_rate_.reset();
    }

    ControlOutput step(const SensorFrame& frame, bool stall = false) {
        device_ = derive_device_state(frame.motor_pos, last_command_, stall);

        ControlOutput out;
        out.device = device_;
        out.probabilities = forest_->predict_proba(to_features(frame));
        IntentClass intent = decoder_.push(out.probabilities);
        out.bend_rate = bend_rate_.push(frame.t, frame.bend.at(calib_.focus_digit));
        out.pressure_rate = pressure_rate_.push(frame.t, frame.pressure.at(0));

        MotorCommand cmd = last_command_;
        if (transitioning(device_)) {
            cmd = last_command_;
        } else {
            switch (mode_) {
                case ControlMode::EmgOnly:
                    cmd = decide_emg_only(device_, last_command_, intent);
                    break;
                case ControlMode::BendOpenEmgClose:
                    cmd = decide_bend_open_emg_close(device_, last_command_, out.bend_rate, *calib_.bend_threshold,
                                                     intent);
                    break;
                case ControlMode::EmgOpenPressureClose:
                    cmd = decide_emg_open_pressure_close(device_, last_command_, intent, out.pressure_rate,
                                                         *calib_.pressure_threshold);
                    break;
            }
        }
        // In the multimodal modes EMG only acts from one device state; a held
        // intent must not carry over from the states where EMG is ignored.
        if (emg_gated()) {
            decoder_.forget_intent();
            intent = IntentClass::Relaxed;
        }
        out.intent = intent;
        out.command = cmd;
        last_command_ = cmd;
        return out;
    }

private:
    void require_calibration(ControlMode mode) const {
        if (mode == ControlMode::BendOpenEmgClose && !calib_.bend_threshold) {
            throw Error(ErrorCode::NotCalibrated, "bend-open mode requires a bend threshold (L_B)");
        }
        if (mode == ControlMode::EmgOpenPressureClose && !calib_.pressure_threshold) {
            throw Error(ErrorCode::NotCalibrated, "pressure-close mode requires a pressure threshold (L_P)");
        }
    }

    bool emg_gated() const {
        switch (mode_) {
            case ControlMode::EmgOnly: return false;
            case ControlMode::BendOpenEmgClose: return device_ != DeviceState::Open;
            case ControlMode::EmgOpenPressureClose: return device_ != DeviceState::Closed;
        }
        return false;
    }

    ControlMode mode_;
    const Forest* forest_;
    CalibrationResult calib_;
    Settings settings_;
    IntentDecoder decoder_;
    dsp::SmoothedRate bend_rate_;
    dsp::SmoothedRate pressure_rate_;
    MotorCommand last_command_ = MotorCommand::CmdClose;
    DeviceState device_ = DeviceState::Closed;
};

/// Runs a controller over recorded frames. Open loop: the recorded
/// motor_pos reflects whatever drove the plant during recording.
inline SessionLog annotate_open_loop(SessionLog log, Controller& controller) {
    log.pred_intent.clear();
    log.pred_command.clear();
    for (const auto& frame : log.frames) {
        const auto out = controller.step(frame);
        log.pred_intent.emplace_back(out.intent);
        log.pred_command.emplace_back(out.command);
    }
    return log;
}

}  // namespace orthosis
