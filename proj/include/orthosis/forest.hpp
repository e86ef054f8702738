#pragma once

// Random-forest classifier over instantaneous 8-channel EMG samples.
//
// Trees are CART-style with Gini impurity and axis-aligned splits
// (x[feature] <= threshold goes left). Each tree is grown on a class-balanced
// bootstrap resample and considers a random subset of channels at every node.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <thread>
#include <utility>
#include <vector>

#include "orthosis/error.hpp"
#include "orthosis/model.hpp"

namespace orthosis {

using FeatureVector = std::array<double, kEmgChannels>;

struct LabeledSample {
    FeatureVector x{};
    IntentClass y = IntentClass::Relaxed;
};

/// Class probabilities indexed by IntentClass (open, relaxed, closed).
struct ProbTriple {
    std::array<double, kClasses> p{1.0 / 3, 1.0 / 3, 1.0 / 3};

    double operator[](IntentClass c) const { return p[index_of(c)]; }
    double& operator[](IntentClass c) { return p[index_of(c)]; }

    IntentClass argmax() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < kClasses; ++i) {
            if (p[i] > p[best]) best = i;
        }
        return intent_from_index(best);
    }

    bool operator==(const ProbTriple&) const = default;
};

struct ForestParams {
    int n_trees = 100;
    int max_depth = 12;
    int min_leaf = 2;
    int features_per_split = 3;
    std::uint64_t seed = 1;
    bool balanced_bootstrap = true;
    int threads = 0;  // 0 = hardware concurrency; has no effect on the result

    /// Compares the model-defining fields; `threads` is ignored.
    bool operator==(const ForestParams& o) const {
        return n_trees == o.n_trees && max_depth == o.max_depth && min_leaf == o.min_leaf &&
               features_per_split == o.features_per_split && seed == o.seed &&
               balanced_bootstrap == o.balanced_bootstrap;
    }
};

inline FeatureVector to_features(const SensorFrame& f) {
    if (f.emg.size() != kEmgChannels) throw Error(ErrorCode::Arity, "expected 8 EMG values");
    FeatureVector x{};
    std::copy(f.emg.begin(), f.emg.end(), x.begin());
    return x;
}

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::array<std::uint32_t, kClasses> counts{};

    bool is_leaf() const { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

class Tree {
public:
    Tree() = default;

    /// Builds a tree from an explicit node table; node 0 is the root.
    explicit Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) { check(); }

    const TreeNode& leaf_for(const FeatureVector& x) const {
        std::size_t i = 0;
        while (!nodes_[i].is_leaf()) {
            const auto& n = nodes_[i];
            i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
        }
        return nodes_[i];
    }

    ProbTriple distribution(const FeatureVector& x) const {
        const auto& counts = leaf_for(x).counts;
        const double total = static_cast<double>(counts[0]) + counts[1] + counts[2];
        ProbTriple out;
        for (std::size_t c = 0; c < kClasses; ++c) out.p[c] = counts[c] / total;
        return out;
    }

    const std::vector<TreeNode>& nodes() const { return nodes_; }
    std::size_t depth() const { return nodes_.empty() ? 0 : depth_from(0); }

    bool operator==(const Tree&) const = default;

private:
    void check() const {
        if (nodes_.empty()) throw Error(ErrorCode::Validation, "tree has no nodes");
        const auto n = static_cast<std::int32_t>(nodes_.size());
        for (const auto& node : nodes_) {
            if (node.is_leaf()) {
                if (node.counts[0] + node.counts[1] + node.counts[2] == 0) {
                    throw Error(ErrorCode::Validation, "leaf histogram is empty");
                }
            } else {
                if (node.feature >= static_cast<int>(kEmgChannels)) {
                    throw Error(ErrorCode::Validation, "split channel out of range");
                }
                if (node.left <= 0 || node.right <= 0 || node.left >= n || node.right >= n) {
                    throw Error(ErrorCode::Validation, "child index out of range");
                }
            }
        }
    }

    std::size_t depth_from(std::size_t i) const {
        const auto& n = nodes_[i];
        if (n.is_leaf()) return 0;
        return 1 + std::max(depth_from(static_cast<std::size_t>(n.left)), depth_from(static_cast<std::size_t>(n.right)));
    }

    std::vector<TreeNode> nodes_;
};

class Forest {
public:
    Forest() = default;
    Forest(ForestParams params, std::vector<Tree> trees, bool degenerate = false)
        : params_(params), trees_(std::move(trees)), degenerate_(degenerate) {}

    bool trained() const { return !trees_.empty(); }

    /// Average of per-tree leaf distributions.
    ProbTriple predict_proba(const FeatureVector& x) const {
        if (!trained()) throw Error(ErrorCode::UntrainedForest, "forest has no trees");
        std::array<double, kClasses> acc{};
        for (const auto& tree : trees_) {
            const auto d = tree.distribution(x);
            for (std::size_t c = 0; c < kClasses; ++c) acc[c] += d.p[c];
        }
        const double total = acc[0] + acc[1] + acc[2];
        ProbTriple out;
        for (std::size_t c = 0; c < kClasses; ++c) out.p[c] = acc[c] / total;
        return out;
    }

    IntentClass predict(const FeatureVector& x) const { return predict_proba(x).argmax(); }

    void add_tree(Tree tree) { trees_.push_back(std::move(tree)); }

    const ForestParams& params() const { return params_; }
    const std::vector<Tree>& trees() const { return trees_; }
    /// True when training data carried no feature variation; the model then
    /// returns the empirical class priors everywhere.
    bool degenerate() const { return degenerate_; }

    bool operator==(const Forest&) const = default;

private:
    ForestParams params_;
    std::vector<Tree> trees_;
    bool degenerate_ = false;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform index in [0, n) without relying on library distribution details.
inline std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

class TreeBuilder {
public:
    TreeBuilder(const std::vector<LabeledSample>& data, const ForestParams& params, std::uint64_t seed)
        : data_(data), params_(params), rng_(seed) {}

    Tree build(std::vector<std::uint32_t> sample) {
        nodes_.clear();
        grow(std::move(sample), 0);
        return Tree(std::move(nodes_));
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double impurity = 0.0;  // weighted child impurity times n
    };

    std::array<std::uint32_t, kClasses> histogram(const std::vector<std::uint32_t>& idx) const {
        std::array<std::uint32_t, kClasses> h{};
        for (auto i : idx) ++h[index_of(data_[i].y)];
        return h;
    }

    static double gini_mass(const std::array<std::uint32_t, kClasses>& h, double n) {
        // n * gini = n - sum(c^2)/n
        if (n <= 0.0) return 0.0;
        double sq = 0.0;
        for (auto c : h) sq += static_cast<double>(c) * c;
        return n - sq / n;
    }

    std::vector<int> pick_features() {
        std::array<int, kEmgChannels> all{};
        std::iota(all.begin(), all.end(), 0);
        const auto k = static_cast<std::size_t>(std::clamp(params_.features_per_split, 1, static_cast<int>(kEmgChannels)));
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(all[i], all[i + draw_index(rng_, kEmgChannels - i)]);
        }
        std::vector<int> chosen(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(chosen.begin(), chosen.end());
        return chosen;
    }

    std::int32_t grow(std::vector<std::uint32_t> idx, int depth) {
        const auto node_id = static_cast<std::int32_t>(nodes_.size());
        nodes_.emplace_back();
        const auto hist = histogram(idx);
        nodes_[static_cast<std::size_t>(node_id)].counts = hist;

        const auto n = idx.size();
        const bool pure = std::count_if(hist.begin(), hist.end(), [](auto c) { return c > 0; }) <= 1;
        const auto min_leaf = static_cast<std::size_t>(std::max(1, params_.min_leaf));
        if (pure || depth >= params_.max_depth || n < 2 * min_leaf) return node_id;

        const auto split = best_split(idx, hist, min_leaf);
        if (split.feature < 0) return node_id;

        std::vector<std::uint32_t> left_idx;
        std::vector<std::uint32_t> right_idx;
        left_idx.reserve(n);
        right_idx.reserve(n);
        for (auto i : idx) {
            (data_[i].x[static_cast<std::size_t>(split.feature)] <= split.threshold ? left_idx : right_idx).push_back(i);
        }
        idx.clear();
        idx.shrink_to_fit();

        const auto l = grow(std::move(left_idx), depth + 1);
        const auto r = grow(std::move(right_idx), depth + 1);
        auto& node = nodes_[static_cast<std::size_t>(node_id)];
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.left = l;
        node.right = r;
        return node_id;
    }

    // Scans features in ascending channel order and thresholds in ascending
    // order, replacing the incumbent only on a strict improvement; equal gains
    // therefore resolve to the lower channel, then the lower threshold.
    Split best_split(const std::vector<std::uint32_t>& idx, const std::array<std::uint32_t, kClasses>& hist,
                     std::size_t min_leaf) {
        const auto n = idx.size();
        const double parent = gini_mass(hist, static_cast<double>(n));
        Split best;
        best.impurity = parent;
        std::vector<std::pair<double, std::uint8_t>> column(n);
        for (int f : pick_features()) {
            for (std::size_t k = 0; k < n; ++k) {
                const auto& s = data_[idx[k]];
                column[k] = {s.x[static_cast<std::size_t>(f)], static_cast<std::uint8_t>(index_of(s.y))};
            }
            std::sort(column.begin(), column.end());
            std::array<std::uint32_t, kClasses> left{};
            for (std::size_t k = 0; k + 1 < n; ++k) {
                ++left[column[k].second];
                const std::size_t nl = k + 1;
                const std::size_t nr = n - nl;
                if (column[k].first == column[k + 1].first) continue;
                if (nl < min_leaf || nr < min_leaf) continue;
                std::array<std::uint32_t, kClasses> right{};
                for (std::size_t c = 0; c < kClasses; ++c) right[c] = hist[c] - left[c];
                const double imp = gini_mass(left, static_cast<double>(nl)) + gini_mass(right, static_cast<double>(nr));
                if (imp < best.impurity - 1e-12) {
                    const double lo = column[k].first;
                    const double hi = column[k + 1].first;
                    double thr = lo + (hi - lo) / 2.0;
                    if (!(thr < hi)) thr = lo;
                    best = {f, thr, imp};
                }
            }
        }
        return best;
    }

    const std::vector<LabeledSample>& data_;
    const ForestParams& params_;
    std::mt19937_64 rng_;
    std::vector<TreeNode> nodes_;
};

inline std::vector<std::uint32_t> bootstrap(const std::vector<LabeledSample>& data,
                                            const std::array<std::vector<std::uint32_t>, kClasses>& by_class,
                                            bool balanced, std::mt19937_64& rng) {
    const std::size_t n = data.size();
    std::vector<std::uint32_t> sample;
    sample.reserve(n);
    if (!balanced) {
        for (std::size_t i = 0; i < n; ++i) sample.push_back(static_cast<std::uint32_t>(draw_index(rng, n)));
        return sample;
    }
    for (std::size_t c = 0; c < kClasses; ++c) {
        const std::size_t quota = n / kClasses + (c < n % kClasses ? 1 : 0);
        const auto& pool = by_class[c];
        for (std::size_t k = 0; k < quota; ++k) sample.push_back(pool[draw_index(rng, pool.size())]);
    }
    return sample;
}

}  // namespace detail

inline void validate_params(const ForestParams& p) {
    if (p.n_trees < 1) throw Error(ErrorCode::InvalidArgument, "n_trees must be >= 1");
    if (p.max_depth < 1) throw Error(ErrorCode::InvalidArgument, "max_depth must be >= 1");
    if (p.min_leaf < 1) throw Error(ErrorCode::InvalidArgument, "min_leaf must be >= 1");
    if (p.features_per_split < 1 || p.features_per_split > static_cast<int>(kEmgChannels)) {
        throw Error(ErrorCode::InvalidArgument, "features_per_split must be in [1, 8]");
    }
}

/// Trains a forest. Deterministic for a given seed regardless of thread count.
inline Forest train_forest(const std::vector<LabeledSample>& data, const ForestParams& params) {
    validate_params(params);
    std::array<std::vector<std::uint32_t>, kClasses> by_class;
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (double v : data[i].x) {
            if (!std::isfinite(v)) throw Error(ErrorCode::Validation, "non-finite feature value");
        }
        by_class[index_of(data[i].y)].push_back(static_cast<std::uint32_t>(i));
    }
    for (std::size_t c = 0; c < kClasses; ++c) {
        if (by_class[c].empty()) {
            throw Error(ErrorCode::MissingClass,
                        std::string("no training examples for class ") + std::string(to_string(intent_from_index(c))));
        }
    }

    const bool degenerate = std::all_of(data.begin(), data.end(), [&](const LabeledSample& s) { return s.x == data[0].x; });
    if (degenerate) {
        TreeNode leaf;
        for (std::size_t c = 0; c < kClasses; ++c) leaf.counts[c] = static_cast<std::uint32_t>(by_class[c].size());
        std::vector<Tree> trees(static_cast<std::size_t>(params.n_trees), Tree({leaf}));
        return Forest(params, std::move(trees), true);
    }

    const auto n_trees = static_cast<std::size_t>(params.n_trees);
    std::vector<Tree> trees(n_trees);
    auto train_one = [&](std::size_t t) {
        std::mt19937_64 rng(detail::splitmix64(params.seed ^ detail::splitmix64(t + 1)));
        auto sample = detail::bootstrap(data, by_class, params.balanced_bootstrap, rng);
        detail::TreeBuilder builder(data, params, rng());
        trees[t] = builder.build(std::move(sample));
    };

    unsigned workers = params.threads > 0 ? static_cast<unsigned>(params.threads) : std::thread::hardware_concurrency();
    workers = std::clamp<unsigned>(workers, 1, static_cast<unsigned>(n_trees));
    if (workers == 1) {
        for (std::size_t t = 0; t < n_trees; ++t) train_one(t);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t t = w; t < n_trees; t += workers) train_one(t);
            });
        }
        for (auto& th : pool) th.join();
    }
    return Forest(params, std::move(trees));
}

/// Labeled EMG samples from every frame of a log, labeled by ground-truth intent.
inline std::vector<LabeledSample> training_samples(const SessionLog& log) {
    std::vector<LabeledSample> out;
    out.reserve(log.size());
    for (std::size_t i = 0; i < log.size(); ++i) out.push_back({to_features(log.frames[i]), log.gt_intent[i]});
    return out;
}

}  // namespace orthosis
