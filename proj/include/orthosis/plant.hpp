#pragma once

#include <algorithm>
#include <cmath>

#include "orthosis/model.hpp"

namespace orthosis {

/// Simulated tendon actuator: position ramps linearly toward the commanded
/// endpoint and takes `transition_time` seconds for a full stroke.
struct MotorPlant {
    double pos = 0.0;
    double transition_time = 1.8;
    MotorCommand command = MotorCommand::CmdClose;
    bool stalled = false;

    bool operator==(const MotorPlant&) const = default;
};

/// Device state implied by a position, the command being executed and the
/// stall input. A stall ends the stroke early: an opening stroke that cannot
/// travel further counts as open, a closing stroke blocked by a grasped
/// object counts as closed.
inline DeviceState derive_device_state(double pos, MotorCommand cmd, bool stalled) {
    if (stalled) return cmd == MotorCommand::CmdOpen ? DeviceState::Open : DeviceState::Closed;
    if (pos <= 0.0) return DeviceState::Closed;
    if (pos >= 1.0) return DeviceState::Open;
    return cmd == MotorCommand::CmdOpen ? DeviceState::Opening : DeviceState::Closing;
}

inline DeviceState device_state(const MotorPlant& p) { return derive_device_state(p.pos, p.command, p.stalled); }

inline MotorPlant plant_step(MotorPlant plant, MotorCommand cmd, double dt, bool stall = false) {
    if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
    if (!(plant.transition_time > 0.0)) throw Error(ErrorCode::InvalidArgument, "transition time must be positive");
    plant.command = cmd;
    plant.stalled = stall;
    if (stall) return plant;
    const double target = cmd == MotorCommand::CmdOpen ? 1.0 : 0.0;
    const double step = dt / plant.transition_time;
    double next = cmd == MotorCommand::CmdOpen ? plant.pos + step : plant.pos - step;
    // Snap accumulated rounding so a full stroke lands exactly on the endpoint.
    if (std::abs(next - target) < 1e-9) next = target;
    plant.pos = std::clamp(next, 0.0, 1.0);
    return plant;
}

}  // namespace orthosis
