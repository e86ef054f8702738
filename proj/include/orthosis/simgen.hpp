#pragma once

// Synthetic subjects and sessions.
//
// A SubjectProfile describes one impairment pattern: per-class EMG
// activation patterns, how fast sustained effort fades, how much the
// antagonist pattern bleeds in (coactivation), how far each finger extends
// voluntarily, and how hard the thumb presses into its strap when closing
// against the open device. Sessions are generated sample by sample; test
// sessions run closed loop with a controller and the motor plant.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "orthosis/control.hpp"
#include "orthosis/forest.hpp"
#include "orthosis/model.hpp"
#include "orthosis/plant.hpp"

namespace orthosis::sim {

struct SubjectProfile {
    std::string name = "custom";
    // Indexed by IntentClass: open, relaxed, closed. Relaxed is the resting level.
    std::array<FeatureVector, kClasses> emg_class_means{};
    double emg_noise_sd = 0.05;
    double fatigue_rate = 0.0;                            // 1/s decay of sustained effort amplitude
    std::array<double, kClasses> fatigue_weight{1, 0, 1}; // per-class multiplier on fatigue_rate
    double coactivation_gain = 0.0;                       // antagonist bleed during effort
    std::array<double, kBendChannels> residual_extension{};
    double pressure_close_gain = 0.0;
    double effort_jitter = 0.1;   // sd of per-attempt amplitude factor
    double bend_noise_sd = 0.0;
    double pressure_noise_sd = 0.0;
    bool arm_support = false;
    std::uint64_t seed = 1;

    bool operator==(const SubjectProfile&) const = default;
};

inline void validate_profile(const SubjectProfile& p) {
    auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
    for (const auto& m : p.emg_class_means) {
        for (double v : m) {
            if (!(v >= 0.0 && std::isfinite(v))) bad("EMG class means must be finite and >= 0");
        }
    }
    if (!(p.emg_noise_sd >= 0.0)) bad("emg_noise_sd must be >= 0");
    if (!(p.fatigue_rate >= 0.0)) bad("fatigue_rate must be >= 0");
    for (double w : p.fatigue_weight) {
        if (!(w >= 0.0)) bad("fatigue weights must be >= 0");
    }
    if (!(p.coactivation_gain >= 0.0)) bad("coactivation_gain must be >= 0");
    for (double r : p.residual_extension) {
        if (!(r >= 0.0)) bad("residual extension must be >= 0");
    }
    if (!(p.pressure_close_gain >= 0.0)) bad("pressure_close_gain must be >= 0");
    if (!(p.effort_jitter >= 0.0 && p.effort_jitter < 0.5)) bad("effort_jitter must be in [0, 0.5)");
    if (!(p.bend_noise_sd >= 0.0) || !(p.pressure_noise_sd >= 0.0)) bad("sensor noise must be >= 0");
}

// --- presets ---------------------------------------------------------------

namespace detail {

inline constexpr FeatureVector kRest{0.10, 0.10, 0.10, 0.10, 0.10, 0.10, 0.10, 0.10};
// Extensor-dominant and flexor-dominant activation shapes around the forearm.
inline constexpr FeatureVector kExtensor{1.00, 0.85, 0.55, 0.25, 0.10, 0.10, 0.20, 0.45};
inline constexpr FeatureVector kFlexor{0.15, 0.10, 0.15, 0.35, 0.70, 1.00, 0.90, 0.55};

inline FeatureVector active_mean(const FeatureVector& shape, double amplitude) {
    FeatureVector out{};
    for (std::size_t i = 0; i < kEmgChannels; ++i) out[i] = kRest[i] + amplitude * shape[i];
    return out;
}

inline SubjectProfile base_profile(std::string name, double open_amp, double close_amp) {
    SubjectProfile p;
    p.name = std::move(name);
    p.emg_class_means = {active_mean(kExtensor, open_amp), kRest, active_mean(kFlexor, close_amp)};
    return p;
}

}  // namespace detail

/// Arm-support variant: much weaker coactivation.
inline SubjectProfile with_arm_support(SubjectProfile p) {
    p.name += "+support";
    p.coactivation_gain *= 0.35;
    p.arm_support = true;
    return p;
}

/// Four impairment patterns, each with an arm-support variant
/// ("<name>+support").
inline std::map<std::string, SubjectProfile> profile_presets() {
    std::map<std::string, SubjectProfile> out;

    // Almost no voluntary extension; clear open EMG, cannot sustain close.
    auto a = detail::base_profile("A-like", 0.80, 0.55);
    a.emg_noise_sd = 0.06;
    a.fatigue_rate = 0.9;
    a.fatigue_weight = {0.15, 0.0, 1.0};
    a.coactivation_gain = 0.45;
    a.residual_extension = {0.0, 0.0, 0.0, 0.0};
    a.pressure_close_gain = 1.0;
    a.seed = 11;

    // Partial extension (index finger most); cannot sustain open EMG.
    auto b = detail::base_profile("B-like", 0.55, 0.80);
    b.emg_noise_sd = 0.06;
    b.fatigue_rate = 0.9;
    b.fatigue_weight = {1.0, 0.0, 0.15};
    b.coactivation_gain = 0.55;
    b.residual_extension = {0.06, 0.30, 0.18, 0.05};
    b.pressure_close_gain = 0.5;
    b.seed = 12;

    // Partial extension (middle finger most); milder coactivation.
    auto c = detail::base_profile("C-like", 0.60, 0.80);
    c.emg_noise_sd = 0.06;
    c.fatigue_rate = 0.7;
    c.fatigue_weight = {1.0, 0.0, 0.15};
    c.coactivation_gain = 0.40;
    c.residual_extension = {0.05, 0.16, 0.26, 0.08};
    c.pressure_close_gain = 0.5;
    c.seed = 13;

    // Like A with pronounced coactivation and fatigue.
    auto d = detail::base_profile("D-like", 0.80, 0.55);
    d.emg_noise_sd = 0.06;
    d.fatigue_rate = 0.9;
    d.fatigue_weight = {0.15, 0.0, 1.0};
    d.coactivation_gain = 0.55;
    d.residual_extension = {0.0, 0.0, 0.0, 0.0};
    d.pressure_close_gain = 1.0;
    d.seed = 14;

    for (auto* p : {&a, &b, &c, &d}) {
        p->effort_jitter = 0.05;
        out[p->name] = *p;
        auto s = with_arm_support(*p);
        out[s.name] = s;
    }
    return out;
}

inline SubjectProfile preset(const std::string& name) {
    const auto all = profile_presets();
    auto it = all.find(name);
    if (it == all.end()) throw Error(ErrorCode::InvalidConfig, "unknown profile preset '" + name + "'");
    return it->second;
}

/// Control mode matched to a preset's impairment pattern.
inline ControlMode matched_mode(const SubjectProfile& p) {
    const double ext = *std::max_element(p.residual_extension.begin(), p.residual_extension.end());
    return ext > 0.05 ? ControlMode::BendOpenEmgClose : ControlMode::EmgOpenPressureClose;
}

// --- scripts ---------------------------------------------------------------

enum class EventKind { CueOpen, CueClose, CueRelax, DeviceActuate, ObjectContact, ArmRaise };

constexpr std::string_view to_string(EventKind k) {
    switch (k) {
        case EventKind::CueOpen: return "cue-open";
        case EventKind::CueClose: return "cue-close";
        case EventKind::CueRelax: return "cue-relax";
        case EventKind::DeviceActuate: return "device-actuate";
        case EventKind::ObjectContact: return "object-contact";
        case EventKind::ArmRaise: return "arm-raise";
    }
    return "?";
}

inline std::optional<EventKind> parse_event_kind(std::string_view s) {
    for (auto k : {EventKind::CueOpen, EventKind::CueClose, EventKind::CueRelax, EventKind::DeviceActuate,
                   EventKind::ObjectContact, EventKind::ArmRaise}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

struct ScriptEvent {
    double time = 0.0;
    EventKind kind = EventKind::CueRelax;
    // device-actuate: target command; object-contact: contact duration.
    MotorCommand command = MotorCommand::CmdOpen;
    double duration = 0.0;

    bool operator==(const ScriptEvent&) const = default;
};

struct Script {
    double duration = 60.0;
    std::vector<ScriptEvent> events;

    bool operator==(const Script&) const = default;
};

inline void validate_script(const Script& s) {
    if (!(s.duration > 0.0)) throw Error(ErrorCode::InvalidScript, "script duration must be positive");
    double prev = 0.0;
    for (const auto& e : s.events) {
        if (!(e.time >= 0.0) || e.time > s.duration) throw Error(ErrorCode::InvalidScript, "event time outside script");
        if (e.time < prev) throw Error(ErrorCode::InvalidScript, "event times must be non-decreasing");
        if (e.kind == EventKind::ObjectContact && !(e.duration > 0.0)) {
            throw Error(ErrorCode::InvalidScript, "object-contact needs a positive duration");
        }
        prev = e.time;
    }
}

/// Alternating open/close cues, starting with open.
inline Script alternating_script(int cues, double first = 4.0, double spacing = 8.0) {
    Script s;
    s.events.push_back({0.0, EventKind::ArmRaise});
    for (int i = 0; i < cues; ++i) {
        s.events.push_back({first + spacing * i, i % 2 == 0 ? EventKind::CueOpen : EventKind::CueClose});
    }
    s.duration = first + spacing * cues;
    return s;
}

inline Script default_test_script() { return alternating_script(7); }

// --- subject model ---------------------------------------------------------

namespace detail {

inline double smoothstep(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3.0 - 2.0 * x);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    return orthosis::detail::splitmix64(seed ^ orthosis::detail::splitmix64(stream));
}

}  // namespace detail

/// Generates sensor samples for a subject whose effort is driven externally.
class SubjectModel {
public:
    static constexpr double kRiseTime = 0.3;     // one voluntary submovement
    static constexpr double kSecondaryDelay = 0.6;
    static constexpr double kPrimaryShare = 0.65;
    static constexpr double kReleaseTime = 0.6;  // relaxation back to rest
    static constexpr double kEmgOnset = 0.1;
    static constexpr double kCoactTau = 0.8;  // s, correlation time of coactivation level
    static constexpr double kDeviceBendGain = 0.6;

    SubjectModel(SubjectProfile profile, double rate_hz, std::uint64_t seed)
        : p_(std::move(profile)),
          dt_(1.0 / rate_hz),
          noise_rng_(detail::stream_seed(seed, 1)),
          coact_rng_(detail::stream_seed(seed, 2)) {
        validate_profile(p_);
    }

    const SubjectProfile& profile() const { return p_; }
    IntentClass effort() const { return effort_; }
    double effort_onset() const { return onset_; }

    /// Starts an attempt toward `intent` (Open or Closed) at time t with the
    /// given amplitude factor.
    void begin_effort(IntentClass intent, double t, double factor) {
        if (intent == IntentClass::Relaxed) {
            relax(t);
            return;
        }
        capture_release(t);
        effort_ = intent;
        onset_ = t;
        factor_ = factor;
    }

    void relax(double t) {
        if (effort_ == IntentClass::Relaxed) return;
        capture_release(t);
        effort_ = IntentClass::Relaxed;
        onset_ = t;
    }

    /// Amplitude of the sustained-effort EMG component (1 at onset).
    double emg_envelope(double t) const {
        if (effort_ == IntentClass::Relaxed) return 0.0;
        const double tau = std::max(0.0, t - onset_);
        const double rate = p_.fatigue_rate * p_.fatigue_weight[index_of(effort_)];
        return detail::smoothstep(tau / kEmgOnset) * std::exp(-rate * tau);
    }

    SensorFrame sample(double t, double motor_pos, ArmPosition arm, double contact_force) {
        SensorFrame f;
        f.t = t;
        f.motor_pos = motor_pos;

        // Coactivation level: slow positive process, stepped every sample.
        const double rho = std::exp(-dt_ / kCoactTau);
        coact_z_ = rho * coact_z_ + std::sqrt(1.0 - rho * rho) * normal_(coact_rng_);
        const double arm_mult = arm == ArmPosition::OnTable ? 0.6 : 1.0;
        const double coact = p_.coactivation_gain * arm_mult * std::max(0.0, 1.0 + 0.6 * coact_z_);

        const auto& rest = p_.emg_class_means[index_of(IntentClass::Relaxed)];
        std::array<double, kEmgChannels> noise{};
        for (auto& n : noise) n = normal_(noise_rng_);
        const double bend_noise = normal_(noise_rng_);
        const double press_noise = normal_(noise_rng_);

        for (std::size_t ch = 0; ch < kEmgChannels; ++ch) {
            double v = rest[ch];
            if (effort_ != IntentClass::Relaxed) {
                const auto anti = effort_ == IntentClass::Open ? IntentClass::Closed : IntentClass::Open;
                const double active = p_.emg_class_means[index_of(effort_)][ch] - rest[ch];
                const double bleed = p_.emg_class_means[index_of(anti)][ch] - rest[ch];
                const double ramp = detail::smoothstep((t - onset_) / kEmgOnset);
                v += factor_ * emg_envelope(t) * active + ramp * coact * bleed;
            }
            v += p_.emg_noise_sd * (0.5 + v) * noise[ch];
            f.emg[ch] = std::max(0.0, v);
        }

        const double open_drive = voluntary(t, IntentClass::Open);
        for (std::size_t d = 0; d < kBendChannels; ++d) {
            const double vol = p_.residual_extension[d] * open_drive;
            f.bend[d] = 1.0 + kDeviceBendGain * motor_pos + vol * (1.0 - motor_pos) + p_.bend_noise_sd * bend_noise;
        }

        const double strap = p_.pressure_close_gain * voluntary(t, IntentClass::Closed) * motor_pos;
        f.pressure[0] = std::max(0.0, 0.05 + strap + contact_force + p_.pressure_noise_sd * press_noise);
        return f;
    }

private:
    // Normalized voluntary drive toward `cls`: rises over kRiseTime after
    // onset, decays over kReleaseTime after the effort stops.
    double voluntary(double t, IntentClass cls) const {
        double v = 0.0;
        if (effort_ == cls) v = factor_ * submovements(t - onset_);
        const auto& rel = release_[index_of(cls)];
        if (rel.level > 0.0) v += rel.level * (1.0 - detail::smoothstep((t - rel.t) / kReleaseTime));
        return v;
    }

    // Impaired voluntary motion is fragmented: a primary submovement
    // followed by a smaller corrective one.
    static double submovements(double tau) {
        return kPrimaryShare * detail::smoothstep(tau / kRiseTime) +
               (1.0 - kPrimaryShare) * detail::smoothstep((tau - kSecondaryDelay) / kRiseTime);
    }

    void capture_release(double t) {
        for (auto cls : {IntentClass::Open, IntentClass::Closed}) {
            auto& rel = release_[index_of(cls)];
            rel = {t, voluntary(t, cls)};
        }
    }

    struct Release {
        double t = 0.0;
        double level = 0.0;
    };

    SubjectProfile p_;
    double dt_;
    std::mt19937_64 noise_rng_;
    std::mt19937_64 coact_rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    double coact_z_ = 0.0;
    IntentClass effort_ = IntentClass::Relaxed;
    double onset_ = 0.0;
    double factor_ = 1.0;
    std::array<Release, kClasses> release_{};
};

// --- training sessions -----------------------------------------------------

struct TrainingConfig {
    int repetitions = 5;
    int on_table_repetitions = 2;
    double relax_s = 3.0;
    double try_s = 3.0;
    double hold_s = 3.0;
    double reaction_min_s = 0.3;
    double reaction_max_s = 0.6;
    Settings settings;
    std::optional<std::uint64_t> seed;  // defaults to the profile seed
};

inline void validate_training_config(const TrainingConfig& c) {
    if (c.repetitions < 1) throw Error(ErrorCode::InvalidConfig, "repetitions must be >= 1");
    if (c.on_table_repetitions < 0 || c.on_table_repetitions > c.repetitions) {
        throw Error(ErrorCode::InvalidConfig, "on_table_repetitions must be in [0, repetitions]");
    }
    if (!(c.relax_s > 0 && c.try_s > 0 && c.hold_s > 0)) throw Error(ErrorCode::InvalidConfig, "phase durations must be positive");
    if (!(c.reaction_min_s >= 0 && c.reaction_max_s >= c.reaction_min_s)) {
        throw Error(ErrorCode::InvalidConfig, "bad reaction-time range");
    }
    if (!(c.settings.rate_hz > 0 && c.settings.transition_time_s > 0)) {
        throw Error(ErrorCode::InvalidConfig, "rate and transition time must be positive");
    }
}

struct PhaseSpan {
    Phase phase;
    std::size_t samples;
};

/// One repetition of the scripted cycle, in sample counts.
inline std::vector<PhaseSpan> training_cycle(const TrainingConfig& c) {
    const double r = c.settings.rate_hz;
    auto n = [r](double s) { return static_cast<std::size_t>(std::llround(s * r)); };
    return {{Phase::Relax, n(c.relax_s)},           {Phase::TryOpen, n(c.try_s)},
            {Phase::DeviceOpening, n(c.settings.transition_time_s)},
            {Phase::HoldOpen, n(c.hold_s)},         {Phase::Relax, n(c.relax_s)},
            {Phase::TryClose, n(c.try_s)},          {Phase::DeviceClosing, n(c.settings.transition_time_s)},
            {Phase::HoldClose, n(c.hold_s)},        {Phase::Relax, n(c.relax_s)}};
}

/// One labeled sample as produced by a stepper.
struct Tick {
    SensorFrame frame;
    IntentClass gt_intent = IntentClass::Relaxed;
    MotorCommand gt_command = MotorCommand::CmdClose;
    Phase phase = Phase::Relax;
    ArmPosition arm = ArmPosition::OnTable;
    bool stalled = false;
    MotorCommand command = MotorCommand::CmdClose;  // what drove the plant
    std::optional<IntentClass> pred_intent;         // set when a controller ran
    std::optional<ControlOutput> control;
};

/// Training protocol one sample at a time. The experimenter announces each
/// phase; the subject reacts to cue phases after a delay and the device
/// follows the device-opening / device-closing phases.
class TrainingStepper {
public:
    TrainingStepper(const SubjectProfile& profile, const TrainingConfig& config, std::uint64_t seed)
        : config_(config),
          subject_(profile, config.settings.rate_hz, seed),
          cue_rng_(detail::stream_seed(seed, 3)),
          jitter_(1.0, profile.effort_jitter) {
        plant_.transition_time = config.settings.transition_time_s;
    }

    void begin_phase(Phase phase, ArmPosition arm) {
        phase_ = phase;
        arm_ = arm;
        const double start = time();
        cue_.reset();
        if (phase == Phase::TryOpen) cue_ = IntentClass::Open;
        if (phase == Phase::TryClose) cue_ = IntentClass::Closed;
        if (phase == Phase::Relax) cue_ = IntentClass::Relaxed;
        std::uniform_real_distribution<double> reaction(config_.reaction_min_s, config_.reaction_max_s);
        react_at_ = start + reaction(cue_rng_);
        factor_ = std::clamp(jitter_(cue_rng_), 0.5, 1.5);
        reacted_ = !cue_ || subject_.effort() == *cue_;
        if (phase == Phase::DeviceOpening) gt_cmd_ = MotorCommand::CmdOpen;
        if (phase == Phase::DeviceClosing) gt_cmd_ = MotorCommand::CmdClose;
    }

    Tick step() {
        const double t = time();
        if (!reacted_ && t >= react_at_) {
            subject_.begin_effort(*cue_, t, factor_);
            reacted_ = true;
        }
        Tick tick;
        tick.frame = subject_.sample(t, plant_.pos, arm_, 0.0);
        tick.gt_intent = intent_for_phase(phase_);
        tick.gt_command = gt_cmd_;
        tick.phase = phase_;
        tick.arm = arm_;
        tick.command = gt_cmd_;
        plant_ = plant_step(plant_, gt_cmd_, 1.0 / config_.settings.rate_hz);
        ++k_;
        return tick;
    }

    double time() const { return static_cast<double>(k_) / config_.settings.rate_hz; }
    Phase phase() const { return phase_; }
    const MotorPlant& plant() const { return plant_; }

private:
    TrainingConfig config_;
    SubjectModel subject_;
    std::mt19937_64 cue_rng_;
    std::normal_distribution<double> jitter_;
    MotorPlant plant_;
    MotorCommand gt_cmd_ = MotorCommand::CmdClose;
    Phase phase_ = Phase::Relax;
    ArmPosition arm_ = ArmPosition::OnTable;
    std::optional<IntentClass> cue_;
    double react_at_ = 0.0;
    double factor_ = 1.0;
    bool reacted_ = true;
    std::size_t k_ = 0;
};

inline SessionLog to_log(const std::vector<Tick>& ticks, double rate_hz, bool with_predictions) {
    SessionLog log;
    log.rate_hz = rate_hz;
    for (const auto& tk : ticks) {
        log.push_back(tk.frame, tk.gt_intent, tk.gt_command, tk.phase, tk.arm);
        if (with_predictions) {
            log.pred_intent.push_back(tk.pred_intent);
            log.pred_command.emplace_back(tk.command);
        }
    }
    return log;
}

/// Scripted training protocol: the experimenter cues the subject and
/// actuates the device; ground truth comes from the phase labels.
inline SessionLog generate_training_session(const SubjectProfile& profile, const TrainingConfig& config = {}) {
    validate_training_config(config);
    TrainingStepper stepper(profile, config, config.seed.value_or(profile.seed));
    SessionLog log;
    log.rate_hz = config.settings.rate_hz;
    const auto cycle = training_cycle(config);
    for (int rep = 0; rep < config.repetitions; ++rep) {
        const ArmPosition arm = rep < config.on_table_repetitions
                                    ? ArmPosition::OnTable
                                    : (profile.arm_support ? ArmPosition::Supported : ArmPosition::Raised);
        for (const auto& span : cycle) {
            stepper.begin_phase(span.phase, arm);
            for (std::size_t i = 0; i < span.samples; ++i) {
                auto tk = stepper.step();
                log.push_back(std::move(tk.frame), tk.gt_intent, tk.gt_command, tk.phase, tk.arm);
            }
        }
    }
    return log;
}

// --- test sessions ---------------------------------------------------------

struct TestConfig {
    Settings settings;
    double reaction_min_s = 0.4;
    double reaction_max_s = 0.8;
    double attempt_s = 2.5;      // give up and retry after this long
    double retry_pause_s = 1.0;
    double retry_boost = 0.15;   // each retry after a failed attempt is this much stronger
    double hold_after_s = 0.3;   // keep trying briefly once the device responds
    double contact_force = 1.5;  // object-contact pressure
    std::optional<std::uint64_t> seed;
};

/// Scripted test session one sample at a time. With a controller the loop
/// is closed: each sample is synthesized from the current plant position,
/// the controller commands the plant, and the subject's behaviour follows
/// the device. Without one, the device follows device-actuate events (or
/// the cued command if there are none).
class TestStepper {
public:
    TestStepper(const SubjectProfile& profile, Script script, const TestConfig& config)
        : profile_(profile),
          script_(std::move(script)),
          config_(config),
          seed_(config.seed.value_or(profile.seed)),
          subject_(profile, config.settings.rate_hz, seed_),
          jitter_(1.0, profile.effort_jitter) {
        validate_script(script_);
        if (!(config.settings.rate_hz > 0.0)) throw Error(ErrorCode::InvalidConfig, "rate must be positive");
        plant_.transition_time = config.settings.transition_time_s;
        scripted_device_ = std::any_of(script_.events.begin(), script_.events.end(),
                                       [](const ScriptEvent& e) { return e.kind == EventKind::DeviceActuate; });
        n_ = static_cast<std::size_t>(std::llround(script_.duration * config.settings.rate_hz));
    }

    bool done() const { return k_ >= n_; }
    std::size_t size() const { return n_; }
    const MotorPlant& plant() const { return plant_; }

    Tick step(Controller* controller) {
        if (done()) throw Error(ErrorCode::InvalidArgument, "test session already finished");
        const double rate = config_.settings.rate_hz;
        const double t = static_cast<double>(k_) / rate;
        apply_events(t);
        behave(t);

        const bool contact = t < contact_until_;
        Tick tick;
        tick.frame = subject_.sample(t, plant_.pos, arm_, contact ? config_.contact_force : 0.0);
        tick.gt_intent = subject_.effort();
        tick.gt_command = gt_cmd_;
        tick.phase = subject_.effort() == IntentClass::Open     ? Phase::TryOpen
                     : subject_.effort() == IntentClass::Closed ? Phase::TryClose
                                                                : Phase::Relax;
        tick.arm = arm_;
        tick.stalled = plant_.stalled;
        tick.command = scripted_device_ ? device_cmd_ : gt_cmd_;
        if (controller) {
            const auto out = controller->step(tick.frame, plant_.stalled);
            tick.command = out.command;
            tick.pred_intent = out.intent;
            tick.control = out;
        }
        // A grasped object blocks a closing stroke part-way.
        const bool stall = contact && tick.command == MotorCommand::CmdClose && plant_.pos > 0.0;
        plant_ = plant_step(plant_, tick.command, 1.0 / rate, stall);
        ++k_;
        return tick;
    }

private:
    void apply_events(double t) {
        while (ev_ < script_.events.size() && script_.events[ev_].time <= t + 1e-9) {
            const auto& e = script_.events[ev_++];
            switch (e.kind) {
                case EventKind::CueOpen:
                case EventKind::CueClose:
                case EventKind::CueRelax: {
                    ++cue_index_;
                    cue_rng_.seed(detail::stream_seed(seed_, 1000 + static_cast<std::uint64_t>(cue_index_)));
                    std::uniform_real_distribution<double> reaction(config_.reaction_min_s, config_.reaction_max_s);
                    target_ = e.kind == EventKind::CueOpen    ? IntentClass::Open
                              : e.kind == EventKind::CueClose ? IntentClass::Closed
                                                              : IntentClass::Relaxed;
                    if (target_ == IntentClass::Open) gt_cmd_ = MotorCommand::CmdOpen;
                    if (target_ == IntentClass::Closed) gt_cmd_ = MotorCommand::CmdClose;
                    next_attempt_ = t + reaction(cue_rng_);
                    attempting_ = false;
                    responded_at_ = -1.0;
                    satisfied_at_ = -1e9;
                    attempts_ = 0;
                    if (subject_.effort() != target_) subject_.relax(t);
                    break;
                }
                case EventKind::DeviceActuate: device_cmd_ = e.command; break;
                case EventKind::ObjectContact: contact_until_ = e.time + e.duration; break;
                case EventKind::ArmRaise:
                    arm_ = profile_.arm_support ? ArmPosition::Supported : ArmPosition::Raised;
                    break;
            }
        }
    }

    // An attempt lasts until the device responds (moves toward or reaches
    // the target) plus a short hold, or times out. If the device later ends
    // up elsewhere the subject notices and tries again.
    void behave(double t) {
        if (target_ == IntentClass::Relaxed) return;
        const DeviceState dev = device_state(plant_);
        const bool satisfied = target_ == IntentClass::Open
                                   ? (dev == DeviceState::Open || dev == DeviceState::Opening)
                                   : (dev == DeviceState::Closed || dev == DeviceState::Closing);
        if (attempting_) {
            if (!satisfied) {
                responded_at_ = -1.0;
                if (t - attempt_start_ >= config_.attempt_s && !transitioning(dev)) {
                    subject_.relax(t);
                    attempting_ = false;
                    next_attempt_ = t + config_.retry_pause_s;
                }
                return;
            }
            if (responded_at_ < 0.0) responded_at_ = t;
            if (t - responded_at_ >= config_.hold_after_s) {
                subject_.relax(t);
                attempting_ = false;
                satisfied_at_ = t;
            }
            return;
        }
        if (satisfied) {
            satisfied_at_ = t;
        } else if (t >= next_attempt_ && t - satisfied_at_ >= config_.retry_pause_s) {
            const double harder = 1.0 + config_.retry_boost * static_cast<double>(attempts_);
            subject_.begin_effort(target_, t, std::clamp(jitter_(cue_rng_) * harder, 0.5, 1.5));
            ++attempts_;
            attempting_ = true;
            attempt_start_ = t;
            responded_at_ = -1.0;
        }
    }

    SubjectProfile profile_;
    Script script_;
    TestConfig config_;
    std::uint64_t seed_;
    SubjectModel subject_;
    std::normal_distribution<double> jitter_;
    std::mt19937_64 cue_rng_;
    MotorPlant plant_;
    bool scripted_device_ = false;
    std::size_t n_ = 0;
    std::size_t k_ = 0;
    std::size_t ev_ = 0;
    MotorCommand gt_cmd_ = MotorCommand::CmdClose;
    MotorCommand device_cmd_ = MotorCommand::CmdClose;
    ArmPosition arm_ = ArmPosition::OnTable;
    double contact_until_ = -1.0;
    IntentClass target_ = IntentClass::Relaxed;
    int cue_index_ = -1;
    double next_attempt_ = 0.0;
    bool attempting_ = false;
    double attempt_start_ = 0.0;
    double responded_at_ = -1.0;
    double satisfied_at_ = -1e9;
    int attempts_ = 0;
};

struct TestRun {
    SessionLog log;             // with pred_intent / pred_command when a controller ran
    std::vector<bool> stalled;  // stall input seen by the plant per frame
};

inline TestRun generate_test_session(const SubjectProfile& profile, const Script& script, Controller* controller,
                                     const TestConfig& config = {}) {
    TestStepper stepper(profile, script, config);
    TestRun run;
    run.log.rate_hz = config.settings.rate_hz;
    while (!stepper.done()) {
        auto tk = stepper.step(controller);
        run.stalled.push_back(tk.stalled);
        run.log.push_back(std::move(tk.frame), tk.gt_intent, tk.gt_command, tk.phase, tk.arm);
        if (controller) {
            run.log.pred_intent.push_back(tk.pred_intent);
            run.log.pred_command.emplace_back(tk.command);
        }
    }
    return run;
}

// --- config files ----------------------------------------------------------

inline nlohmann::json to_json(const SubjectProfile& p) {
    nlohmann::json means = nlohmann::json::object();
    for (std::size_t c = 0; c < kClasses; ++c) {
        means[std::string(to_string(intent_from_index(c)))] = p.emg_class_means[c];
    }
    return {{"name", p.name},
            {"emg_class_means", means},
            {"emg_noise_sd", p.emg_noise_sd},
            {"fatigue_rate", p.fatigue_rate},
            {"fatigue_weight", p.fatigue_weight},
            {"coactivation_gain", p.coactivation_gain},
            {"residual_extension", p.residual_extension},
            {"pressure_close_gain", p.pressure_close_gain},
            {"effort_jitter", p.effort_jitter},
            {"bend_noise_sd", p.bend_noise_sd},
            {"pressure_noise_sd", p.pressure_noise_sd},
            {"arm_support", p.arm_support},
            {"seed", p.seed}};
}

/// Missing keys keep their defaults, so a config may override a subset.
inline SubjectProfile profile_from_json(const nlohmann::json& j, SubjectProfile base = {}) {
    try {
        SubjectProfile p = std::move(base);
        if (j.contains("name")) p.name = j.at("name").get<std::string>();
        if (j.contains("emg_class_means")) {
            for (std::size_t c = 0; c < kClasses; ++c) {
                const auto key = std::string(to_string(intent_from_index(c)));
                if (j.at("emg_class_means").contains(key)) {
                    p.emg_class_means[c] = j.at("emg_class_means").at(key).get<FeatureVector>();
                }
            }
        }
        auto num = [&](const char* key, double& field) {
            if (j.contains(key)) field = j.at(key).get<double>();
        };
        num("emg_noise_sd", p.emg_noise_sd);
        num("fatigue_rate", p.fatigue_rate);
        num("coactivation_gain", p.coactivation_gain);
        num("pressure_close_gain", p.pressure_close_gain);
        num("effort_jitter", p.effort_jitter);
        num("bend_noise_sd", p.bend_noise_sd);
        num("pressure_noise_sd", p.pressure_noise_sd);
        if (j.contains("fatigue_weight")) p.fatigue_weight = j.at("fatigue_weight").get<std::array<double, kClasses>>();
        if (j.contains("residual_extension")) {
            p.residual_extension = j.at("residual_extension").get<std::array<double, kBendChannels>>();
        }
        if (j.contains("arm_support")) p.arm_support = j.at("arm_support").get<bool>();
        if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
        validate_profile(p);
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("profile: ") + e.what());
    }
}

inline nlohmann::json to_json(const Script& s) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : s.events) {
        nlohmann::json je = {{"time", e.time}, {"kind", std::string(to_string(e.kind))}};
        if (e.kind == EventKind::DeviceActuate) je["command"] = std::string(to_string(e.command));
        if (e.kind == EventKind::ObjectContact) je["duration"] = e.duration;
        events.push_back(je);
    }
    return {{"duration", s.duration}, {"events", events}};
}

inline Script script_from_json(const nlohmann::json& j) {
    try {
        Script s;
        s.duration = j.at("duration").get<double>();
        for (const auto& je : j.at("events")) {
            ScriptEvent e;
            e.time = je.at("time").get<double>();
            const auto kind = parse_event_kind(je.at("kind").get<std::string>());
            if (!kind) throw Error(ErrorCode::InvalidScript, "unknown event kind " + je.at("kind").dump());
            e.kind = *kind;
            if (e.kind == EventKind::DeviceActuate) {
                const auto cmd = parse_command(je.at("command").get<std::string>());
                if (!cmd) throw Error(ErrorCode::InvalidScript, "device-actuate command must be open or close");
                e.command = *cmd;
            }
            if (je.contains("duration")) e.duration = je.at("duration").get<double>();
            s.events.push_back(e);
        }
        validate_script(s);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidScript, std::string("script: ") + e.what());
    }
}

}  // namespace orthosis::sim
