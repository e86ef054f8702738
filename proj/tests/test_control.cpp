#include <gtest/gtest.h>

#include "orthosis/calibration.hpp"
#include "orthosis/control.hpp"
#include "orthosis/plant.hpp"
#include "orthosis/simgen.hpp"
#include "support.hpp"

using namespace orthosis;

namespace {

struct Trained {
    Forest forest;
    CalibrationResult calib;
};

// A small forest and calibration from a simulated B-like training session.
const Trained& trained() {
    static const Trained t = [] {
        const auto log = sim::generate_training_session(sim::preset("B-like"));
        ForestParams fp;
        fp.n_trees = 20;
        fp.seed = 3;
        Trained out{train_forest(training_samples(log), fp), calibration::calibrate(log).result};
        return out;
    }();
    return t;
}

}  // namespace

TEST(EmgOnly, IntentMapsToCommand) {
    for (auto dev : {DeviceState::Closed, DeviceState::Open}) {
        EXPECT_EQ(decide_emg_only(dev, MotorCommand::CmdClose, IntentClass::Open), MotorCommand::CmdOpen);
        EXPECT_EQ(decide_emg_only(dev, MotorCommand::CmdOpen, IntentClass::Closed), MotorCommand::CmdClose);
    }
}

TEST(EmgOnly, RelaxedHoldsPreviousCommand) {
    EXPECT_EQ(decide_emg_only(DeviceState::Open, MotorCommand::CmdOpen, IntentClass::Relaxed), MotorCommand::CmdOpen);
    EXPECT_EQ(decide_emg_only(DeviceState::Closed, MotorCommand::CmdClose, IntentClass::Relaxed), MotorCommand::CmdClose);
}

TEST(EmgOnly, HandSteppedSequence) {
    MotorCommand cmd = MotorCommand::CmdClose;
    std::vector<MotorCommand> seen;
    for (auto intent : {IntentClass::Open, IntentClass::Relaxed, IntentClass::Closed}) {
        cmd = decide_emg_only(DeviceState::Closed, cmd, intent);
        seen.push_back(cmd);
    }
    EXPECT_EQ(seen, (std::vector<MotorCommand>{MotorCommand::CmdOpen, MotorCommand::CmdOpen, MotorCommand::CmdClose}));
}

TEST(EmgOnly, LockoutAppliesToo) {
    EXPECT_EQ(decide_emg_only(DeviceState::Opening, MotorCommand::CmdOpen, IntentClass::Closed), MotorCommand::CmdOpen);
    EXPECT_EQ(decide_emg_only(DeviceState::Closing, MotorCommand::CmdClose, IntentClass::Open), MotorCommand::CmdClose);
}

TEST(BendOpen, RateAboveThresholdOpensFromClosed) {
    EXPECT_EQ(decide_bend_open_emg_close(DeviceState::Closed, MotorCommand::CmdClose, 0.5, 0.4, IntentClass::Relaxed),
              MotorCommand::CmdOpen);
    EXPECT_EQ(decide_bend_open_emg_close(DeviceState::Closed, MotorCommand::CmdClose, 0.4, 0.4, IntentClass::Relaxed),
              MotorCommand::CmdOpen);
    EXPECT_EQ(decide_bend_open_emg_close(DeviceState::Closed, MotorCommand::CmdClose, 0.39, 0.4, IntentClass::Open),
              MotorCommand::CmdClose);
}

TEST(BendOpen, NoSwitchWhileOpening) {
    EXPECT_EQ(decide_bend_open_emg_close(DeviceState::Opening, MotorCommand::CmdOpen, 0.0, 0.4, IntentClass::Closed),
              MotorCommand::CmdOpen);
}

TEST(BendOpen, BendIgnoredWhenOpen) {
    EXPECT_EQ(decide_bend_open_emg_close(DeviceState::Open, MotorCommand::CmdOpen, 0.9, 0.4, IntentClass::Relaxed),
              MotorCommand::CmdOpen);
    EXPECT_EQ(decide_bend_open_emg_close(DeviceState::Open, MotorCommand::CmdOpen, 0.9, 0.4, IntentClass::Closed),
              MotorCommand::CmdClose);
}

TEST(PressureClose, EmgOpensFromClosed) {
    EXPECT_EQ(decide_emg_open_pressure_close(DeviceState::Closed, MotorCommand::CmdClose, IntentClass::Open, 0.0, 1.5),
              MotorCommand::CmdOpen);
}

TEST(PressureClose, PressureRateClosesFromOpen) {
    EXPECT_EQ(decide_emg_open_pressure_close(DeviceState::Open, MotorCommand::CmdOpen, IntentClass::Relaxed, 2.1, 1.5),
              MotorCommand::CmdClose);
}

TEST(PressureClose, PressureIgnoredWhenClosed) {
    EXPECT_EQ(decide_emg_open_pressure_close(DeviceState::Closed, MotorCommand::CmdClose, IntentClass::Relaxed, 3.0, 1.5),
              MotorCommand::CmdClose);
    EXPECT_EQ(decide_emg_open_pressure_close(DeviceState::Closing, MotorCommand::CmdClose, IntentClass::Open, 0.0, 1.5),
              MotorCommand::CmdClose);
}

TEST(Plant, FullOpenTakesTransitionTime) {
    MotorPlant p;
    for (int i = 0; i < 89; ++i) {
        p = plant_step(p, MotorCommand::CmdOpen, 0.02);
        EXPECT_LT(p.pos, 1.0);
        EXPECT_EQ(device_state(p), DeviceState::Opening);
    }
    p = plant_step(p, MotorCommand::CmdOpen, 0.02);
    EXPECT_EQ(p.pos, 1.0);
    EXPECT_EQ(device_state(p), DeviceState::Open);
}

TEST(Plant, ClampsAtEndpoints) {
    MotorPlant p;
    p.pos = 1.0;
    EXPECT_EQ(plant_step(p, MotorCommand::CmdOpen, 0.02).pos, 1.0);
    p.pos = 0.0;
    EXPECT_EQ(plant_step(p, MotorCommand::CmdClose, 0.02).pos, 0.0);
}

TEST(Plant, HalfwayCloseTakesHalfTheTime) {
    MotorPlant p;
    p.pos = 0.5;
    for (int i = 0; i < 45; ++i) p = plant_step(p, MotorCommand::CmdClose, 0.02);
    EXPECT_EQ(p.pos, 0.0);
    p.pos = 0.5;
    EXPECT_EQ(plant_step(p, MotorCommand::CmdClose, 0.9).pos, 0.0);
}

TEST(Plant, StepSizeIsDtOverTransitionTime) {
    MotorPlant p;
    p.pos = 0.3;
    EXPECT_NEAR(plant_step(p, MotorCommand::CmdOpen, 0.02).pos - 0.3, 0.02 / 1.8, 1e-15);
    EXPECT_NEAR(0.3 - plant_step(p, MotorCommand::CmdClose, 0.02).pos, 0.02 / 1.8, 1e-15);
    EXPECT_THROW(plant_step(p, MotorCommand::CmdOpen, 0.0), Error);
}

TEST(Plant, StallEndsStroke) {
    EXPECT_EQ(derive_device_state(0.4, MotorCommand::CmdOpen, true), DeviceState::Open);
    EXPECT_EQ(derive_device_state(0.4, MotorCommand::CmdClose, true), DeviceState::Closed);
    MotorPlant p;
    p.pos = 0.4;
    EXPECT_EQ(plant_step(p, MotorCommand::CmdClose, 0.02, true).pos, 0.4);
}

TEST(Controller, RequiresCalibrationForMode) {
    CalibrationResult c;
    const auto& t = trained();
    EXPECT_NO_THROW(Controller(ControlMode::EmgOnly, t.forest, c));
    try {
        Controller(ControlMode::BendOpenEmgClose, t.forest, c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotCalibrated);
    }
    EXPECT_THROW(Controller(ControlMode::EmgOpenPressureClose, t.forest, c), Error);
}

TEST(Controller, ModeSwitchKeepsCommand) {
    const auto& t = trained();
    Controller ctl(ControlMode::EmgOnly, t.forest, t.calib);
    SensorFrame f;
    f.emg.assign(sim::detail::kExtensor.begin(), sim::detail::kExtensor.end());
    for (int i = 0; i < 40; ++i) {
        f.t = i * 0.02;
        ctl.step(f);
    }
    ASSERT_EQ(ctl.last_command(), MotorCommand::CmdOpen);
    ctl.set_mode(ControlMode::BendOpenEmgClose);
    EXPECT_EQ(ctl.last_command(), MotorCommand::CmdOpen);
    EXPECT_EQ(ctl.last_intent(), IntentClass::Relaxed);
}

TEST(Invariants, NoCommandChangeWhileTransitioning) {
    const auto& t = trained();
    for (auto mode : {ControlMode::EmgOnly, ControlMode::BendOpenEmgClose, ControlMode::EmgOpenPressureClose}) {
        std::size_t moving = 0, changes = 0;
        for (std::uint64_t seed = 0; seed < 30; ++seed) {
            const auto st = support::run_lockout(t.forest, t.calib, mode, seed, 600);
            EXPECT_EQ(st.changes_while_transitioning, 0u);
            moving += st.transitioning_steps;
            changes += st.command_changes;
        }
        EXPECT_GT(moving, 1000u);
        EXPECT_GT(changes, 20u);
    }
}

TEST(Invariants, GatedChannelsAreInert) {
    const auto& t = trained();
    for (auto mode : {ControlMode::BendOpenEmgClose, ControlMode::EmgOpenPressureClose}) {
        std::size_t scrambled = 0;
        for (std::uint64_t seed = 0; seed < 30; ++seed) {
            const auto st = support::run_gating(t.forest, t.calib, mode, seed, 600);
            EXPECT_EQ(st.mismatches, 0u) << to_string(mode) << " seed " << seed;
            scrambled += st.scrambled_steps;
        }
        EXPECT_GT(scrambled, 1000u);
    }
}

TEST(Invariants, ZeroInputHoldsCommand) {
    const auto& t = trained();
    for (auto mode : {ControlMode::EmgOnly, ControlMode::BendOpenEmgClose, ControlMode::EmgOpenPressureClose}) {
        EXPECT_EQ(support::zero_input_command_changes(t.forest, t.calib, mode, 2000), 0u);
    }
}

TEST(Invariants, PlantIsMonotoneUnderSustainedCommand) {
    MotorPlant p;
    double prev = p.pos;
    for (int i = 0; i < 200; ++i) {
        p = plant_step(p, MotorCommand::CmdOpen, 0.02);
        EXPECT_GE(p.pos, prev);
        prev = p.pos;
    }
    for (int i = 0; i < 200; ++i) {
        p = plant_step(p, MotorCommand::CmdClose, 0.02);
        EXPECT_LE(p.pos, prev);
        prev = p.pos;
    }
}

TEST(OpenLoop, AnnotationAddsPredictions) {
    const auto& t = trained();
    const auto log = sim::generate_training_session(sim::preset("B-like"));
    Controller ctl(ControlMode::EmgOnly, t.forest, t.calib);
    const auto out = annotate_open_loop(log, ctl);
    EXPECT_EQ(out.pred_command.size(), log.size());
    EXPECT_EQ(out.frames, log.frames);
}
