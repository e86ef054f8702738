#pragma once

// Probability smoothing and exclusive-threshold intent decision.

#include <array>

#include "orthosis/dsp.hpp"
#include "orthosis/forest.hpp"
#include "orthosis/model.hpp"

namespace orthosis {

using ClassThresholds = std::array<double, kClasses>;

inline void validate_thresholds(const ClassThresholds& th) {
    for (double v : th) {
        // Anything at or below one half lets two classes pass at once.
        if (!(v > 0.5 && v < 1.0)) throw Error(ErrorCode::InvalidThreshold, "class thresholds must lie in (0.5, 1)");
    }
}

/// Returns the class whose smoothed probability exceeds its threshold, or
/// `prev` when none does.
inline IntentClass decide_intent(const ProbTriple& smoothed, const ClassThresholds& thresholds, IntentClass prev) {
    validate_thresholds(thresholds);
    for (std::size_t c = 0; c < kClasses; ++c) {
        if (smoothed.p[c] > thresholds[c]) return intent_from_index(c);
    }
    return prev;
}

/// Streaming decoder: per-class median filter followed by decide_intent.
class IntentDecoder {
public:
    IntentDecoder(ClassThresholds thresholds, std::size_t median_samples, IntentClass initial = IntentClass::Relaxed)
        : thresholds_(thresholds),
          filters_{dsp::MovingMedian(median_samples), dsp::MovingMedian(median_samples),
                   dsp::MovingMedian(median_samples)},
          intent_(initial) {
        validate_thresholds(thresholds_);
    }

    IntentClass push(const ProbTriple& raw) {
        for (std::size_t c = 0; c < kClasses; ++c) smoothed_.p[c] = filters_[c].push(raw.p[c]);
        intent_ = decide_intent(smoothed_, thresholds_, intent_);
        return intent_;
    }

    /// Clears smoothing history and the held intent.
    void reset(IntentClass initial = IntentClass::Relaxed) {
        for (auto& f : filters_) f.reset();
        intent_ = initial;
    }

    /// Forgets the held intent without touching the smoothing windows.
    void forget_intent(IntentClass value = IntentClass::Relaxed) { intent_ = value; }

    IntentClass intent() const { return intent_; }
    const ProbTriple& smoothed() const { return smoothed_; }
    const ClassThresholds& thresholds() const { return thresholds_; }

private:
    ClassThresholds thresholds_;
    std::array<dsp::MovingMedian, kClasses> filters_;
    ProbTriple smoothed_;
    IntentClass intent_;
};

}  // namespace orthosis
