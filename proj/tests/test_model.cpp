#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "orthosis/model.hpp"

using namespace orthosis;

namespace {

ErrorCode code_of(const SensorFrame& f) {
    try {
        validate_frame(f);
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "frame was accepted";
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(ValidateFrame, AcceptsWellFormedFrame) {
    SensorFrame f;
    f.motor_pos = 0.0;
    EXPECT_NO_THROW(validate_frame(f));
}

TEST(ValidateFrame, RejectsSevenEmgChannels) {
    SensorFrame f;
    f.emg.resize(7);
    EXPECT_EQ(code_of(f), ErrorCode::Arity);
}

TEST(ValidateFrame, RejectsWrongBendAndPressureArity) {
    SensorFrame f;
    f.bend.resize(5);
    EXPECT_EQ(code_of(f), ErrorCode::Arity);
    SensorFrame g;
    g.pressure.clear();
    EXPECT_EQ(code_of(g), ErrorCode::Arity);
}

TEST(ValidateFrame, RejectsMotorPositionOutsideUnitInterval) {
    SensorFrame f;
    f.motor_pos = 1.2;
    EXPECT_EQ(code_of(f), ErrorCode::Range);
    f.motor_pos = -0.01;
    EXPECT_EQ(code_of(f), ErrorCode::Range);
}

TEST(ValidateFrame, RejectsNonFiniteTime) {
    SensorFrame f;
    f.t = std::numeric_limits<double>::quiet_NaN();
    EXPECT_EQ(code_of(f), ErrorCode::Time);
}

TEST(ValidateFrame, RejectsNegativeEmgAndPressure) {
    SensorFrame f;
    f.emg[3] = -0.1;
    EXPECT_EQ(code_of(f), ErrorCode::Range);
    SensorFrame g;
    g.pressure[0] = -1.0;
    EXPECT_EQ(code_of(g), ErrorCode::Range);
}

TEST(Windows, MeanWindowCoversHalfOpenInterval) {
    EXPECT_EQ(mean_window_samples(0.25, 1.0 / 50.0), 13u);
    EXPECT_EQ(mean_window_samples(0.03, 1.0 / 100.0), 3u);
    EXPECT_EQ(mean_window_samples(0.25, 1.0 / 64.0), 16u);
    EXPECT_EQ(mean_window_samples(0.001, 1.0 / 50.0), 1u);
}

TEST(Windows, MedianWindowRoundsToOddCount) {
    EXPECT_EQ(median_window_samples(0.5, 1.0 / 50.0), 25u);
    EXPECT_EQ(median_window_samples(0.5, 1.0 / 64.0), 33u);
    EXPECT_EQ(median_window_samples(0.5, 1.0 / 100.0), 51u);
    EXPECT_EQ(median_window_samples(0.01, 1.0 / 50.0), 1u);
    EXPECT_THROW(median_window_samples(0.0, 0.02), Error);
}

TEST(Enums, NamesRoundTrip) {
    for (auto p : {Phase::Relax, Phase::TryOpen, Phase::DeviceOpening, Phase::HoldOpen, Phase::TryClose,
                   Phase::DeviceClosing, Phase::HoldClose}) {
        EXPECT_EQ(parse_phase(to_string(p)), p);
    }
    for (auto m : {ControlMode::EmgOnly, ControlMode::BendOpenEmgClose, ControlMode::EmgOpenPressureClose}) {
        EXPECT_EQ(parse_mode(to_string(m)), m);
    }
    for (auto a : {ArmPosition::OnTable, ArmPosition::Raised, ArmPosition::Supported}) {
        EXPECT_EQ(parse_arm_position(to_string(a)), a);
    }
    EXPECT_EQ(parse_mode("emg"), ControlMode::EmgOnly);
    EXPECT_EQ(parse_mode("bend-open"), ControlMode::BendOpenEmgClose);
    EXPECT_EQ(parse_mode("pressure-close"), ControlMode::EmgOpenPressureClose);
    EXPECT_FALSE(parse_mode("telepathy").has_value());
}

TEST(Enums, PhaseIntentMapping) {
    EXPECT_EQ(intent_for_phase(Phase::TryOpen), IntentClass::Open);
    EXPECT_EQ(intent_for_phase(Phase::TryClose), IntentClass::Closed);
    EXPECT_EQ(intent_for_phase(Phase::Relax), IntentClass::Relaxed);
}

TEST(Calibration, ValidationEnforcesInvariants) {
    CalibrationResult c;
    EXPECT_NO_THROW(validate_calibration(c));
    c.bend_threshold = 0.0;
    EXPECT_THROW(validate_calibration(c), Error);
    c.bend_threshold = 0.4;
    c.class_thresholds[1] = 0.5;
    EXPECT_THROW(validate_calibration(c), Error);
    c.class_thresholds[1] = 0.6;
    c.focus_digit = 4;
    EXPECT_THROW(validate_calibration(c), Error);
}

TEST(SessionLogType, ValidateLogChecksLengths) {
    SessionLog log;
    SensorFrame f;
    log.push_back(f, IntentClass::Relaxed, MotorCommand::CmdClose, Phase::Relax, ArmPosition::OnTable);
    EXPECT_NO_THROW(validate_log(log));
    log.gt_intent.push_back(IntentClass::Open);
    EXPECT_THROW(validate_log(log), Error);
}
