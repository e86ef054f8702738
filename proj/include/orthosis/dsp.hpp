#pragma once

// Causal streaming filters over scalar signals. Each filter object owns the
// state for one channel; the batch helpers run a fresh filter over a whole
// stream.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "orthosis/error.hpp"
#include "orthosis/model.hpp"

namespace orthosis::dsp {

struct ScalarStream {
    std::vector<double> t;
    std::vector<double> v;

    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    void push_back(double time, double value) {
        t.push_back(time);
        v.push_back(value);
    }

    bool operator==(const ScalarStream&) const = default;
};

/// Checks strictly increasing, uniformly spaced timestamps (1e-6 s tolerance)
/// and returns the sampling period (0 for a single sample).
inline double stream_period(const ScalarStream& s) {
    if (s.t.size() != s.v.size()) throw Error(ErrorCode::Validation, "time/value length mismatch");
    if (s.empty()) throw Error(ErrorCode::EmptyStream, "stream has no samples");
    if (s.size() == 1) return 0.0;
    const double period = (s.t.back() - s.t.front()) / static_cast<double>(s.size() - 1);
    for (std::size_t i = 1; i < s.size(); ++i) {
        const double dt = s.t[i] - s.t[i - 1];
        if (!(dt > 0.0)) throw Error(ErrorCode::Time, "timestamps must strictly increase");
        if (std::abs(dt - period) > 1e-6) throw Error(ErrorCode::Time, "stream is not uniformly sampled");
    }
    return period;
}

/// Fixed-capacity ring buffer; oldest() .. newest() iteration via at().
class Ring {
public:
    explicit Ring(std::size_t capacity) : buf_(capacity == 0 ? 1 : capacity) {}

    // Returns true and writes the evicted value when the buffer was full.
    bool push(double v, double* evicted = nullptr) {
        bool full = count_ == buf_.size();
        if (full && evicted) *evicted = buf_[head_];
        buf_[head_] = v;
        head_ = (head_ + 1) % buf_.size();
        if (!full) ++count_;
        return full;
    }

    // i = 0 is the oldest sample currently held.
    double at(std::size_t i) const {
        const std::size_t start = (head_ + buf_.size() - count_) % buf_.size();
        return buf_[(start + i) % buf_.size()];
    }

    std::size_t size() const { return count_; }
    std::size_t capacity() const { return buf_.size(); }
    void clear() {
        head_ = 0;
        count_ = 0;
    }

private:
    std::vector<double> buf_;
    std::size_t head_ = 0;
    std::size_t count_ = 0;
};

/// Trailing mean over the last `window` samples. During warm-up the mean is
/// over whatever has arrived. The sum is re-accumulated oldest-first on every
/// sample so results never drift from a direct recomputation.
class MovingMean {
public:
    explicit MovingMean(std::size_t window) : ring_(window) {}

    double push(double v) {
        ring_.push(v);
        double sum = 0.0;
        for (std::size_t i = 0; i < ring_.size(); ++i) sum += ring_.at(i);
        return sum / static_cast<double>(ring_.size());
    }

    void reset() { ring_.clear(); }
    std::size_t window() const { return ring_.capacity(); }

private:
    Ring ring_;
};

/// Trailing median; even-sized warm-up windows average the two middle values.
class MovingMedian {
public:
    explicit MovingMedian(std::size_t window) : ring_(window) { sorted_.reserve(ring_.capacity()); }

    double push(double v) {
        double evicted = 0.0;
        if (ring_.push(v, &evicted)) {
            sorted_.erase(std::lower_bound(sorted_.begin(), sorted_.end(), evicted));
        }
        sorted_.insert(std::upper_bound(sorted_.begin(), sorted_.end(), v), v);
        const std::size_t n = sorted_.size();
        if (n % 2 == 1) return sorted_[n / 2];
        return (sorted_[n / 2 - 1] + sorted_[n / 2]) / 2.0;
    }

    void reset() {
        ring_.clear();
        sorted_.clear();
    }
    std::size_t window() const { return ring_.capacity(); }

private:
    Ring ring_;
    std::vector<double> sorted_;
};

/// Backward first difference in units per second; the first sample yields 0.
class Derivative {
public:
    double push(double t, double v) {
        double out = 0.0;
        if (has_prev_) out = (v - prev_v_) / (t - prev_t_);
        prev_t_ = t;
        prev_v_ = v;
        has_prev_ = true;
        return out;
    }

    void reset() { has_prev_ = false; }

private:
    bool has_prev_ = false;
    double prev_t_ = 0.0;
    double prev_v_ = 0.0;
};

/// Moving mean followed by derivative: the bend/pressure rate pipeline.
class SmoothedRate {
public:
    explicit SmoothedRate(std::size_t mean_window) : mean_(mean_window) {}

    double push(double t, double v) { return deriv_.push(t, mean_.push(v)); }

    void reset() {
        mean_.reset();
        deriv_.reset();
    }

private:
    MovingMean mean_;
    Derivative deriv_;
};

inline ScalarStream moving_mean(const ScalarStream& in, double window_s) {
    if (!(window_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "window must be positive");
    const double period = stream_period(in);
    MovingMean filter(period > 0.0 ? mean_window_samples(window_s, period) : 1);
    ScalarStream out;
    for (std::size_t i = 0; i < in.size(); ++i) out.push_back(in.t[i], filter.push(in.v[i]));
    return out;
}

inline ScalarStream median_filter(const ScalarStream& in, double window_s) {
    if (!(window_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "window must be positive");
    const double period = stream_period(in);
    MovingMedian filter(period > 0.0 ? median_window_samples(window_s, period) : 1);
    ScalarStream out;
    for (std::size_t i = 0; i < in.size(); ++i) out.push_back(in.t[i], filter.push(in.v[i]));
    return out;
}

inline ScalarStream derivative(const ScalarStream& in) {
    stream_period(in);
    if (in.size() < 2) throw Error(ErrorCode::SingleSample, "derivative needs at least two samples");
    Derivative d;
    ScalarStream out;
    for (std::size_t i = 0; i < in.size(); ++i) out.push_back(in.t[i], d.push(in.t[i], in.v[i]));
    return out;
}

}  // namespace orthosis::dsp
