#pragma once

// Per-subject threshold calibration from a labeled training session.
//
// L_B is the minimum over the local maxima of the smoothed bend rate of the
// focus digit during try-open phases; L_P is the same over the thumb
// pressure rate during try-close phases. Phase windows end where the device
// starts moving, so device-driven peaks never enter the estimate.

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "orthosis/dsp.hpp"
#include "orthosis/model.hpp"

namespace orthosis::calibration {

struct Peak {
    double t = 0.0;
    double v = 0.0;
    bool operator==(const Peak&) const = default;
};

/// Interior samples strictly above both neighbours. A plateau counts once,
/// at its first sample, when the values on both sides are lower.
inline std::vector<Peak> local_maxima(const dsp::ScalarStream& s) {
    if (s.size() < 3) throw Error(ErrorCode::TooShort, "local maxima need at least three samples");
    std::vector<Peak> out;
    const std::size_t n = s.size();
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!(s.v[i] > s.v[i - 1])) continue;
        std::size_t j = i + 1;
        while (j < n && s.v[j] == s.v[i]) ++j;
        if (j < n && s.v[j] < s.v[i]) out.push_back({s.t[i], s.v[i]});
    }
    return out;
}

struct Options {
    double mean_window_s = 0.25;
    double noise_floor_factor = 3.0;  // times the median |rate| during relax phases
};

/// Contiguous [begin, end) frame ranges tagged with `phase`.
inline std::vector<std::pair<std::size_t, std::size_t>> phase_slices(const SessionLog& log, Phase phase) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t i = 0;
    while (i < log.phase.size()) {
        if (log.phase[i] != phase) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < log.phase.size() && log.phase[j] == phase) ++j;
        out.emplace_back(i, j);
        i = j;
    }
    return out;
}

/// Moving mean then backward derivative over one channel of the whole log.
template <typename Extract>
dsp::ScalarStream smoothed_rate(const SessionLog& log, Extract extract, double mean_window_s) {
    dsp::ScalarStream raw;
    raw.t.reserve(log.size());
    raw.v.reserve(log.size());
    for (const auto& f : log.frames) raw.push_back(f.t, extract(f));
    return dsp::derivative(dsp::moving_mean(raw, mean_window_s));
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

/// Spurious-peak floor: factor x median |rate| over relax-phase frames.
inline double noise_floor(const SessionLog& log, const dsp::ScalarStream& rate, double factor) {
    std::vector<double> mags;
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (log.phase[i] == Phase::Relax) mags.push_back(std::abs(rate.v[i]));
    }
    return factor * median_of(std::move(mags));
}

/// Minimum of the peaks strictly above the floor (and above zero).
inline std::optional<double> threshold_from_peaks(const std::vector<double>& peaks, double floor = 0.0) {
    std::optional<double> best;
    for (double v : peaks) {
        if (v > floor && v > 0.0 && (!best || v < *best)) best = v;
    }
    return best;
}

struct PeakScan {
    std::vector<Peak> peaks;  // after the noise floor
    double floor = 0.0;
};

template <typename Extract>
PeakScan scan_peaks(const SessionLog& log, Phase phase, Extract extract, const Options& opt) {
    validate_log(log);
    const auto slices = phase_slices(log, phase);
    if (slices.size() < 2) {
        throw Error(ErrorCode::TooShort, "calibration needs at least two '" + std::string(to_string(phase)) + "' phases");
    }
    const auto rate = smoothed_rate(log, extract, opt.mean_window_s);
    PeakScan scan;
    scan.floor = noise_floor(log, rate, opt.noise_floor_factor);
    for (auto [b, e] : slices) {
        if (e - b < 3) continue;
        dsp::ScalarStream slice;
        slice.t.assign(rate.t.begin() + static_cast<std::ptrdiff_t>(b), rate.t.begin() + static_cast<std::ptrdiff_t>(e));
        slice.v.assign(rate.v.begin() + static_cast<std::ptrdiff_t>(b), rate.v.begin() + static_cast<std::ptrdiff_t>(e));
        for (const auto& p : local_maxima(slice)) {
            if (p.v > scan.floor && p.v > 0.0) scan.peaks.push_back(p);
        }
    }
    return scan;
}

inline double min_peak_or_throw(const PeakScan& scan, std::string_view what) {
    std::vector<double> values;
    for (const auto& p : scan.peaks) values.push_back(p.v);
    const auto th = threshold_from_peaks(values, scan.floor);
    if (!th) throw Error(ErrorCode::NoPeaks, std::string("no voluntary peaks found for ") + std::string(what));
    return *th;
}

inline double compute_bend_threshold(const SessionLog& log, std::size_t digit, const Options& opt = {}) {
    if (digit >= kBendChannels) throw Error(ErrorCode::InvalidArgument, "digit index out of range");
    auto scan = scan_peaks(log, Phase::TryOpen, [digit](const SensorFrame& f) { return f.bend.at(digit); }, opt);
    return min_peak_or_throw(scan, "bend");
}

inline double compute_pressure_threshold(const SessionLog& log, const Options& opt = {}) {
    auto scan = scan_peaks(log, Phase::TryClose, [](const SensorFrame& f) { return f.pressure.at(0); }, opt);
    return min_peak_or_throw(scan, "pressure");
}

/// Lowest index wins ties.
inline std::size_t argmax_range(const std::array<double, kBendChannels>& ranges) {
    std::size_t best = 0;
    for (std::size_t d = 1; d < kBendChannels; ++d) {
        if (ranges[d] > ranges[best]) best = d;
    }
    return best;
}

/// Mean per-phase (max - min) raw bend over try-open phases, per digit.
inline std::array<double, kBendChannels> voluntary_ranges(const SessionLog& log) {
    const auto slices = phase_slices(log, Phase::TryOpen);
    if (slices.empty()) throw Error(ErrorCode::TooShort, "no try-open phases");
    std::array<double, kBendChannels> ranges{};
    for (std::size_t d = 0; d < kBendChannels; ++d) {
        double sum = 0.0;
        for (auto [b, e] : slices) {
            double lo = log.frames[b].bend.at(d);
            double hi = lo;
            for (std::size_t i = b; i < e; ++i) {
                lo = std::min(lo, log.frames[i].bend.at(d));
                hi = std::max(hi, log.frames[i].bend.at(d));
            }
            sum += hi - lo;
        }
        ranges[d] = sum / static_cast<double>(slices.size());
    }
    return ranges;
}

inline std::size_t select_focus_digit(const SessionLog& log) { return argmax_range(voluntary_ranges(log)); }

enum class Field { BendThreshold, PressureThreshold, ThresholdOpen, ThresholdRelaxed, ThresholdClosed, FocusDigit };

inline std::optional<Field> parse_field(std::string_view s) {
    if (s == "L_B" || s == "bend_threshold") return Field::BendThreshold;
    if (s == "L_P" || s == "pressure_threshold") return Field::PressureThreshold;
    if (s == "threshold_open") return Field::ThresholdOpen;
    if (s == "threshold_relaxed") return Field::ThresholdRelaxed;
    if (s == "threshold_closed") return Field::ThresholdClosed;
    if (s == "focus_digit") return Field::FocusDigit;
    return std::nullopt;
}

/// Returns an adjusted copy; the input is untouched when validation fails.
inline CalibrationResult manual_adjust(CalibrationResult result, Field field, double value) {
    switch (field) {
        case Field::BendThreshold: result.bend_threshold = value; break;
        case Field::PressureThreshold: result.pressure_threshold = value; break;
        case Field::ThresholdOpen: result.class_thresholds[0] = value; break;
        case Field::ThresholdRelaxed: result.class_thresholds[1] = value; break;
        case Field::ThresholdClosed: result.class_thresholds[2] = value; break;
        case Field::FocusDigit:
            if (!(value >= 0.0 && value < static_cast<double>(kBendChannels)) || value != std::floor(value)) {
                throw Error(ErrorCode::InvariantViolation, "focus digit must be an integer in [0, 4)");
            }
            result.focus_digit = static_cast<std::size_t>(value);
            break;
    }
    validate_calibration(result);
    return result;
}

struct CalibrationOutcome {
    CalibrationResult result;
    std::string bend_error;      // empty when L_B was found
    std::string pressure_error;  // empty when L_P was found

    bool operator==(const CalibrationOutcome&) const = default;
};

/// Full calibration. A modality without voluntary peaks is left unset and
/// the reason recorded, so the operator can pick the other multimodal mode.
inline CalibrationOutcome calibrate(const SessionLog& log, const Options& opt = {},
                                    std::optional<std::size_t> focus_override = std::nullopt,
                                    double class_threshold = 0.6) {
    CalibrationOutcome out;
    out.result.class_thresholds = {class_threshold, class_threshold, class_threshold};
    out.result.focus_digit = focus_override ? *focus_override : select_focus_digit(log);
    try {
        out.result.bend_threshold = compute_bend_threshold(log, out.result.focus_digit, opt);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NoPeaks) throw;
        out.bend_error = e.what();
    }
    try {
        out.result.pressure_threshold = compute_pressure_threshold(log, opt);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NoPeaks) throw;
        out.pressure_error = e.what();
    }
    validate_calibration(out.result);
    return out;
}

}  // namespace orthosis::calibration
