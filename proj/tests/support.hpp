#pragma once

// Independent oracles and fixtures shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "orthosis/control.hpp"
#include "orthosis/eval.hpp"
#include "orthosis/forest.hpp"
#include "orthosis/plant.hpp"
#include "orthosis/model.hpp"
#include "orthosis/simgen.hpp"

namespace orthosis::support {

// --- naive per-sample recomputation ------------------------------------------

inline std::vector<double> naive_mean(const std::vector<double>& v, std::size_t w) {
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::size_t lo = i + 1 >= w ? i + 1 - w : 0;
        double sum = 0.0;
        for (std::size_t j = lo; j <= i; ++j) sum += v[j];
        out.push_back(sum / static_cast<double>(i + 1 - lo));
    }
    return out;
}

inline std::vector<double> naive_median(const std::vector<double>& v, std::size_t w) {
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::size_t lo = i + 1 >= w ? i + 1 - w : 0;
        std::vector<double> win(v.begin() + static_cast<std::ptrdiff_t>(lo), v.begin() + static_cast<std::ptrdiff_t>(i + 1));
        std::sort(win.begin(), win.end());
        const std::size_t n = win.size();
        out.push_back(n % 2 ? win[n / 2] : (win[n / 2 - 1] + win[n / 2]) / 2.0);
    }
    return out;
}

inline std::vector<double> naive_derivative(const std::vector<double>& t, const std::vector<double>& v) {
    std::vector<double> out(v.size(), 0.0);
    for (std::size_t i = 1; i < v.size(); ++i) out[i] = (v[i] - v[i - 1]) / (t[i] - t[i - 1]);
    return out;
}

// --- separable EMG ---------------------------------------------------------

/// Three Gaussian clusters, one per class, `n_per_class` each. Cluster means
/// sit `separation` noise standard deviations apart along distinct channels.
inline std::vector<LabeledSample> separable_emg(std::size_t n_per_class, double separation, double sd,
                                                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sd);
    std::vector<LabeledSample> out;
    for (std::size_t c = 0; c < kClasses; ++c) {
        for (std::size_t i = 0; i < n_per_class; ++i) {
            LabeledSample s;
            for (std::size_t ch = 0; ch < kEmgChannels; ++ch) {
                const double mean = (ch % kClasses == c) ? separation * sd : 0.0;
                s.x[ch] = mean + noise(rng);
            }
            s.y = intent_from_index(c);
            out.push_back(s);
        }
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

// --- calibration fixture -------------------------------------------------------
//
// A training log at 64 Hz whose smoothed rates are exact in binary floating
// point: the 0.25 s mean window is 16 samples, every signal value is a small
// multiple of 2^-10, so sums, means, differences and the division by 1/64 are
// all exact. A step of height h in a flat signal then yields a rate plateau of
// exactly 4h for 16 samples, i.e. one local maximum of value 4h.

struct CalibrationFixture {
    SessionLog log;
    std::size_t focus_digit = 1;
    std::vector<double> open_peaks;   // injected bend-rate peaks, one per try-open phase
    std::vector<double> close_peaks;  // injected pressure-rate peaks, one per try-close phase
    double decoy = 0.0;               // extra small peak in the first try-open phase
};

inline constexpr double kFixtureRate = 64.0;
inline constexpr double kFixtureStep = 1.0 / 1024.0;

/// Relax-phase jitter: a triangle wave of period 12 samples, zero for the
/// last 40 samples of the phase so that no relax rate leaks into the next
/// cue phase.
inline double relax_jitter(std::size_t k, std::size_t len) {
    if (k < 32 || k >= len - 40) return 0.0;
    const std::size_t m = (k - 32) % 12;
    return static_cast<double>(m <= 6 ? m : 12 - m) * kFixtureStep;
}

inline CalibrationFixture calibration_fixture(std::vector<double> open_peaks = {0.875, 0.625, 0.375, 0.75, 0.5},
                                              std::vector<double> close_peaks = {1.25, 2.0, 1.5, 1.125, 1.75},
                                              double decoy = 1.0 / 128.0) {
    CalibrationFixture fx;
    fx.open_peaks = open_peaks;
    fx.close_peaks = close_peaks;
    fx.decoy = decoy;
    sim::TrainingConfig cfg;
    cfg.settings.rate_hz = kFixtureRate;
    const auto cycle = sim::training_cycle(cfg);
    const FeatureVector open_emg{1.0, 0.8, 0.6, 0.2, 0.1, 0.1, 0.1, 0.2};
    const FeatureVector rest_emg{0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
    const FeatureVector close_emg{0.1, 0.1, 0.2, 0.3, 0.6, 1.0, 0.9, 0.5};

    SessionLog& log = fx.log;
    log.rate_hz = kFixtureRate;
    std::size_t k = 0;
    double bend = 0.0;
    double pressure = 0.0;
    double pos = 0.0;
    MotorCommand gt = MotorCommand::CmdClose;
    for (std::size_t rep = 0; rep < open_peaks.size(); ++rep) {
        for (const auto& span : cycle) {
            for (std::size_t i = 0; i < span.samples; ++i, ++k) {
                SensorFrame f;
                f.t = static_cast<double>(k) / kFixtureRate;
                double jitter = 0.0;
                switch (span.phase) {
                    case Phase::Relax:
                        // Signals from the previous cue return to rest here.
                        if (i == 0 && pos >= 1.0) bend = 0.0;
                        if (i == 0 && pos <= 0.0) pressure = 0.0;
                        jitter = relax_jitter(i, span.samples);
                        break;
                    case Phase::TryOpen:
                        if (rep == 0 && i == 20) bend += decoy / 4.0;
                        if (rep == 0 && i == 36) bend -= decoy / 4.0;
                        if (i == 60) bend += open_peaks[rep] / 4.0;
                        break;
                    case Phase::TryClose:
                        if (i == 60) pressure += close_peaks[rep % close_peaks.size()] / 4.0;
                        break;
                    case Phase::DeviceOpening:
                        gt = MotorCommand::CmdOpen;
                        pos = std::min(1.0, static_cast<double>(i + 1) / static_cast<double>(span.samples));
                        break;
                    case Phase::DeviceClosing:
                        gt = MotorCommand::CmdClose;
                        pos = std::max(0.0, 1.0 - static_cast<double>(i + 1) / static_cast<double>(span.samples));
                        break;
                    default: break;
                }
                f.bend[fx.focus_digit] = bend + jitter;
                f.pressure[0] = pressure + jitter;
                f.motor_pos = pos;
                const IntentClass intent = intent_for_phase(span.phase);
                const FeatureVector& emg =
                    intent == IntentClass::Open ? open_emg : intent == IntentClass::Closed ? close_emg : rest_emg;
                f.emg.assign(emg.begin(), emg.end());
                log.push_back(f, intent, gt, span.phase, rep < 2 ? ArmPosition::OnTable : ArmPosition::Raised);
            }
        }
    }
    return fx;
}

/// Noise floor recomputed from scratch: 3 x median |rate| over relax frames,
/// with the rate built from the naive oracles above.
inline double oracle_floor(const SessionLog& log, bool bend, std::size_t digit) {
    std::vector<double> t;
    std::vector<double> v;
    for (const auto& f : log.frames) {
        t.push_back(f.t);
        v.push_back(bend ? f.bend[digit] : f.pressure[0]);
    }
    const auto window = mean_window_samples(0.25, 1.0 / log.rate_hz);
    const auto rate = naive_derivative(t, naive_mean(v, window));
    std::vector<double> mags;
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (log.phase[i] == Phase::Relax) mags.push_back(std::abs(rate[i]));
    }
    std::sort(mags.begin(), mags.end());
    const std::size_t n = mags.size();
    const double med = n % 2 ? mags[n / 2] : (mags[n / 2 - 1] + mags[n / 2]) / 2.0;
    return 3.0 * med;
}


// --- adversarial controller streams --------------------------------------------

/// Random sensor input in regimes of 10-60 samples: extensor bursts, flexor
/// bursts, rest, or unstructured noise; bend and pressure random-walk with
/// occasional jumps.
class AdversarialSource {
public:
    explicit AdversarialSource(std::uint64_t seed) : rng_(seed) {}

    SensorFrame next(double t, double motor_pos) {
        if (left_ == 0) {
            regime_ = std::uniform_int_distribution<int>(0, 3)(rng_);
            left_ = std::uniform_int_distribution<int>(10, 60)(rng_);
        }
        --left_;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        SensorFrame f;
        f.t = t;
        f.motor_pos = motor_pos;
        const double amp = 0.4 + u(rng_);
        for (std::size_t c = 0; c < kEmgChannels; ++c) {
            switch (regime_) {
                case 0: f.emg[c] = sim::detail::kExtensor[c] * amp + 0.1 * u(rng_); break;
                case 1: f.emg[c] = sim::detail::kFlexor[c] * amp + 0.1 * u(rng_); break;
                case 2: f.emg[c] = 0.1 + 0.05 * u(rng_); break;
                default: f.emg[c] = 1.5 * u(rng_); break;
            }
        }
        for (auto& b : bend_) b += (u(rng_) - 0.5) * 0.05 + (u(rng_) < 0.03 ? (u(rng_) - 0.3) * 2.0 : 0.0);
        pressure_ = std::max(0.0, pressure_ + (u(rng_) - 0.5) * 0.05 + (u(rng_) < 0.03 ? (u(rng_) - 0.3) * 3.0 : 0.0));
        f.bend.assign(bend_.begin(), bend_.end());
        f.pressure[0] = pressure_;
        return f;
    }

    std::mt19937_64& rng() { return rng_; }

private:
    std::mt19937_64 rng_;
    int regime_ = 2;
    int left_ = 0;
    std::array<double, kBendChannels> bend_{};
    double pressure_ = 0.0;
};

struct LockoutStats {
    std::size_t steps = 0;
    std::size_t transitioning_steps = 0;
    std::size_t changes_while_transitioning = 0;
    std::size_t command_changes = 0;
};

/// Closed loop over one adversarial stream; counts command changes issued
/// while the device was Opening or Closing. Random stalls are injected.
inline LockoutStats run_lockout(const Forest& forest, const CalibrationResult& calib, ControlMode mode,
                                std::uint64_t seed, std::size_t samples, const Settings& settings = {}) {
    AdversarialSource src(seed);
    Controller ctl(mode, forest, calib, settings);
    MotorPlant plant;
    plant.transition_time = settings.transition_time_s;
    LockoutStats st;
    MotorCommand prev = ctl.last_command();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t k = 0; k < samples; ++k) {
        const bool stall = u(src.rng()) < 0.01;
        const auto frame = src.next(static_cast<double>(k) * settings.period(), plant.pos);
        const auto out = ctl.step(frame, stall);
        ++st.steps;
        if (out.command != prev) ++st.command_changes;
        if (transitioning(out.device)) {
            ++st.transitioning_steps;
            if (out.command != prev) ++st.changes_while_transitioning;
        }
        prev = out.command;
        plant = plant_step(plant, out.command, settings.period(), stall);
    }
    return st;
}

struct GatingStats {
    std::size_t steps = 0;
    std::size_t scrambled_steps = 0;
    std::size_t mismatches = 0;
};

/// Two controllers see the same stream except that the channels the mode
/// ignores in the current device state are shuffled or replaced for the
/// second one. Their command streams must agree exactly.
inline GatingStats run_gating(const Forest& forest, const CalibrationResult& calib, ControlMode mode,
                              std::uint64_t seed, std::size_t samples, const Settings& settings = {}) {
    AdversarialSource src(seed);
    std::mt19937_64 scramble(seed ^ 0x5eedULL);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    Controller a(mode, forest, calib, settings);
    Controller b(mode, forest, calib, settings);
    MotorPlant plant;
    plant.transition_time = settings.transition_time_s;
    GatingStats st;
    for (std::size_t k = 0; k < samples; ++k) {
        const auto frame = src.next(static_cast<double>(k) * settings.period(), plant.pos);
        const DeviceState dev = derive_device_state(plant.pos, a.last_command(), false);
        SensorFrame other = frame;
        bool scrambled = false;
        auto shuffle_emg = [&] {
            std::shuffle(other.emg.begin(), other.emg.end(), scramble);
            for (auto& v : other.emg) v += u(scramble);
            scrambled = true;
        };
        if (mode == ControlMode::BendOpenEmgClose) {
            if (dev == DeviceState::Closed) shuffle_emg();
            if (dev == DeviceState::Open) {
                for (auto& v : other.bend) v = u(scramble) * 4.0 - 6.0;
                scrambled = true;
            }
        } else if (mode == ControlMode::EmgOpenPressureClose) {
            if (dev == DeviceState::Closed) {
                other.pressure[0] = u(scramble) * 5.0;
                scrambled = true;
            }
            if (dev == DeviceState::Open) shuffle_emg();
        }
        const auto oa = a.step(frame);
        const auto ob = b.step(other);
        ++st.steps;
        st.scrambled_steps += scrambled;
        if (oa.command != ob.command || oa.device != ob.device) ++st.mismatches;
        plant = plant_step(plant, oa.command, settings.period());
    }
    return st;
}

/// Commands produced from an all-zero sensor stream (closed loop).
inline std::size_t zero_input_command_changes(const Forest& forest, const CalibrationResult& calib, ControlMode mode,
                                              std::size_t samples, const Settings& settings = {}) {
    Controller ctl(mode, forest, calib, settings);
    MotorPlant plant;
    plant.transition_time = settings.transition_time_s;
    std::size_t changes = 0;
    MotorCommand prev = ctl.last_command();
    for (std::size_t k = 0; k < samples; ++k) {
        SensorFrame f;
        f.t = static_cast<double>(k) * settings.period();
        f.emg.assign(kEmgChannels, 0.0);
        f.motor_pos = plant.pos;
        const auto out = ctl.step(f);
        changes += out.command != prev;
        prev = out.command;
        plant = plant_step(plant, out.command, settings.period());
    }
    return changes;
}

// --- crafted metric fixtures ---------------------------------------------------

/// Hand-enumerated confusion counts and transition matches on a 10 Hz grid
/// with the default 1.5 s matching window ('O' = open, 'C' = close).
struct MetricFixture {
    const char* pred;
    const char* gt;
    eval::Confusion c;
    eval::TransitionMatch m;
};

inline std::vector<MetricFixture> metric_fixtures() {
    return {
        {"CCCCCOOOOO", "CCCCCOOOOO", {5, 5, 0, 0}, {1, 1, 1, 0}},
        {"OOOOOOOOOO", "CCCCCOOOOO", {5, 0, 5, 0}, {0, 1, 0, 0}},
        {"CCCCCCCCCC", "CCCCCOOOOO", {0, 5, 0, 5}, {0, 1, 0, 0}},
        {"CCOCOCOCCC", "CCCCCCCCCC", {0, 7, 3, 0}, {0, 0, 6, 6}},
        {"CCCOOOOCCC", "CCOOOOOOCC", {4, 4, 0, 2}, {2, 2, 2, 0}},
        {"OOOOOCCCCC", "CCCCCOOOOO", {0, 0, 5, 5}, {0, 1, 1, 1}},
        {"CCCCCCCCCCCCCCCCCCCCOOOOOOOOOO", "CCCCOOOOOOOOOOOOOOOOOOOOOOOOOO", {10, 4, 0, 16}, {0, 1, 1, 1}},
        {"CCCCCCCCCCCCCCCCCCOOOOOOOOOOOO", "CCCCOOOOOOOOOOOOOOOOOOOOOOOOOO", {12, 4, 0, 14}, {1, 1, 1, 0}},
        {"COCOCOCOCOCO", "CCCCCCOOOOOO", {3, 3, 3, 3}, {1, 1, 11, 10}},
        {"OOCCCCCCOOOOCC", "OOOOCCCCCOOOCC", {5, 6, 1, 2}, {3, 3, 3, 0}},
    };
}

inline std::vector<MotorCommand> parse_commands(const std::string& s) {
    std::vector<MotorCommand> out;
    for (char c : s) out.push_back(c == 'O' ? MotorCommand::CmdOpen : MotorCommand::CmdClose);
    return out;
}

inline std::vector<double> grid_times(std::size_t n, double rate = 10.0) {
    std::vector<double> t;
    for (std::size_t i = 0; i < n; ++i) t.push_back(static_cast<double>(i) / rate);
    return t;
}

}  // namespace orthosis::support
