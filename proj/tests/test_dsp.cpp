#include <gtest/gtest.h>

#include <random>

#include "orthosis/dsp.hpp"
#include "support.hpp"

using namespace orthosis;
using namespace orthosis::dsp;
using orthosis::support::naive_derivative;
using orthosis::support::naive_mean;
using orthosis::support::naive_median;

namespace {

ScalarStream uniform(const std::vector<double>& v, double rate) {
    ScalarStream s;
    for (std::size_t i = 0; i < v.size(); ++i) s.push_back(static_cast<double>(i) / rate, v[i]);
    return s;
}

}  // namespace

TEST(MovingMean, ConstantStreamIsUnchanged) {
    const auto out = moving_mean(uniform(std::vector<double>(200, 5.0), 50.0), 0.25);
    for (double v : out.v) EXPECT_EQ(v, 5.0);
}

TEST(MovingMean, HandComputedCausalMeans) {
    const auto out = moving_mean(uniform({1, 2, 3, 4}, 100.0), 0.03);
    EXPECT_EQ(out.v, (std::vector<double>{1.0, 1.5, 2.0, 3.0}));
}

TEST(MovingMean, SingleSamplePassesThrough) {
    ScalarStream s;
    s.push_back(0.0, 7.5);
    EXPECT_EQ(moving_mean(s, 0.25).v, std::vector<double>{7.5});
}

TEST(MovingMean, EmptyStreamThrows) {
    try {
        moving_mean(ScalarStream{}, 0.25);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyStream);
    }
}

TEST(MovingMean, KeepsTimestamps) {
    const auto in = uniform({3, 1, 4, 1, 5}, 50.0);
    EXPECT_EQ(moving_mean(in, 0.25).t, in.t);
}

TEST(Derivative, ConstantStreamIsZero) {
    for (double v : derivative(uniform(std::vector<double>(50, 3.0), 50.0)).v) EXPECT_EQ(v, 0.0);
}

TEST(Derivative, RampGivesSlope) {
    std::vector<double> v;
    for (int i = 0; i < 100; ++i) v.push_back(2.0 * i / 50.0);
    const auto out = derivative(uniform(v, 50.0));
    EXPECT_EQ(out.v[0], 0.0);
    for (std::size_t i = 1; i < out.size(); ++i) EXPECT_NEAR(out.v[i], 2.0, 1e-9);
}

TEST(Derivative, StepGivesSingleSpike) {
    std::vector<double> v(100, 0.0);
    for (std::size_t i = 50; i < v.size(); ++i) v[i] = 1.0;  // t = 1.0 at 50 Hz
    const auto out = derivative(uniform(v, 50.0));
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (i == 50) {
            EXPECT_NEAR(out.v[i], 50.0, 1e-9);
        } else {
            EXPECT_EQ(out.v[i], 0.0);
        }
    }
}

TEST(Derivative, NeedsTwoSamples) {
    ScalarStream one;
    one.push_back(0.0, 1.0);
    try {
        derivative(one);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SingleSample);
    }
    EXPECT_THROW(derivative(ScalarStream{}), Error);
}

TEST(MedianFilter, ConstantStreamIsUnchanged) {
    for (double v : median_filter(uniform(std::vector<double>(100, -2.0), 50.0), 0.5).v) EXPECT_EQ(v, -2.0);
}

TEST(MedianFilter, RemovesIsolatedSpike) {
    std::vector<double> v(100, 0.25);
    v[60] = 9.0;
    for (double x : median_filter(uniform(v, 50.0), 0.5).v) EXPECT_EQ(x, 0.25);
}

TEST(MedianFilter, StepIsDelayedByHalfTheWindow) {
    std::vector<double> v(200, 0.0);
    for (std::size_t i = 100; i < v.size(); ++i) v[i] = 1.0;
    const auto out = median_filter(uniform(v, 50.0), 0.5);
    EXPECT_EQ(out.v, naive_median(v, 25));
    for (std::size_t i = 0; i < 112; ++i) EXPECT_EQ(out.v[i], 0.0) << i;
    for (std::size_t i = 112; i < v.size(); ++i) EXPECT_EQ(out.v[i], 1.0) << i;
}

TEST(StreamChecks, RejectsNonUniformAndNonIncreasingTime) {
    ScalarStream s;
    s.push_back(0.0, 1.0);
    s.push_back(0.02, 1.0);
    s.push_back(0.05, 1.0);
    EXPECT_THROW(moving_mean(s, 0.25), Error);
    ScalarStream r;
    r.push_back(0.0, 1.0);
    r.push_back(0.0, 1.0);
    EXPECT_THROW(derivative(r), Error);
}

TEST(Oracle, StreamingFiltersEqualNaiveRecomputation) {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> len(1, 1000);
    std::uniform_int_distribution<int> win(1, 40);
    std::normal_distribution<double> val(0.0, 3.0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = static_cast<std::size_t>(len(rng));
        const std::size_t w = static_cast<std::size_t>(win(rng));
        std::vector<double> t(n);
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = static_cast<double>(i) / 50.0;
            v[i] = val(rng);
        }
        MovingMean mean(w);
        MovingMedian median(w);
        Derivative deriv;
        std::vector<double> m;
        std::vector<double> md;
        std::vector<double> d;
        for (std::size_t i = 0; i < n; ++i) {
            m.push_back(mean.push(v[i]));
            md.push_back(median.push(v[i]));
            d.push_back(deriv.push(t[i], v[i]));
        }
        ASSERT_EQ(m, naive_mean(v, w)) << "trial " << trial;
        ASSERT_EQ(md, naive_median(v, w)) << "trial " << trial;
        ASSERT_EQ(d, naive_derivative(t, v)) << "trial " << trial;
    }
}

TEST(Properties, FiltersAreCausal) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> val(0.0, 1.0);
    std::vector<double> a(300);
    for (auto& x : a) x = val(rng);
    auto b = a;
    for (std::size_t i = 150; i < b.size(); ++i) b[i] = val(rng);
    const auto ma = moving_mean(uniform(a, 50.0), 0.25);
    const auto mb = moving_mean(uniform(b, 50.0), 0.25);
    const auto da = median_filter(uniform(a, 50.0), 0.5);
    const auto db = median_filter(uniform(b, 50.0), 0.5);
    for (std::size_t i = 0; i < 150; ++i) {
        EXPECT_EQ(ma.v[i], mb.v[i]);
        EXPECT_EQ(da.v[i], db.v[i]);
    }
}

TEST(Properties, FiltersAreIdempotentOnConstants) {
    const auto c = uniform(std::vector<double>(80, 1.5), 50.0);
    EXPECT_EQ(moving_mean(moving_mean(c, 0.25), 0.25).v, c.v);
    EXPECT_EQ(median_filter(median_filter(c, 0.5), 0.5).v, c.v);
}

TEST(Properties, RateIsLinearInScale) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> val(0.0, 1.0);
    std::vector<double> v(400);
    for (auto& x : v) x = val(rng);
    for (double c : {4.0, 0.5, -2.0, 3.0}) {
        std::vector<double> cv;
        for (double x : v) cv.push_back(c * x);
        const auto base = derivative(moving_mean(uniform(v, 50.0), 0.25));
        const auto scaled = derivative(moving_mean(uniform(cv, 50.0), 0.25));
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(scaled.v[i], c * base.v[i], 1e-9 * (1 + std::abs(c * base.v[i])));
    }
}

TEST(SmoothedRate, MatchesBatchPipeline) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> val(0.0, 1.0);
    ScalarStream s;
    for (int i = 0; i < 500; ++i) s.push_back(i / 50.0, val(rng));
    const auto batch = derivative(moving_mean(s, 0.25));
    SmoothedRate rate(mean_window_samples(0.25, 0.02));
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(rate.push(s.t[i], s.v[i]), batch.v[i]);
}
