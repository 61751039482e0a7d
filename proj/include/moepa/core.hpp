// Copyright 2026 The moepa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Domain types shared by every module, the reference MoE gate
// (softmax over W_g x followed by top-k), and activation statistics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "moepa/errors.hpp"

namespace moepa {

/// Row-major so that a batch of samples is one row per sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using ExpertIndex = std::uint32_t;
using ExpertSet = std::vector<ExpertIndex>;

/// One MoE layer's router. Shared experts are always active and therefore
/// never part of a RouterSpec; E counts routed experts only.
struct RouterSpec {
    int d = 0;
    int E = 0;
    int k = 0;
    Matrix gate_weights;  // E x d

    void validate() const {
        if (d <= 0 || E <= 0 || k <= 0) throw ConfigError("router: d, E and k must be positive");
        if (k > E) throw ConfigError("router: k=" + std::to_string(k) + " exceeds E=" + std::to_string(E));
        if (gate_weights.rows() != E || gate_weights.cols() != d)
            throw ConfigError("router: gate_weights must be E x d");
        if (!gate_weights.allFinite()) throw ConfigError("router: gate_weights has non-finite entries");
    }
};

/// One token's pre-attention activation with the router's ground truth.
struct TraceSample {
    std::vector<float> activation;   // length d
    std::vector<float> true_scores;  // length E, post-softmax
    ExpertSet true_topk;             // size k, ascending

    bool operator==(const TraceSample &) const = default;
};

/// A predicted expert set together with the logits it was ranked from.
struct ExpertSelection {
    ExpertSet indices;  // ascending
    std::vector<double> raw_scores;
};

/// Indices of `scores` from best to worst: larger score first, equal scores
/// broken towards the lower index.
template <typename T>
std::vector<ExpertIndex> rank_order(std::span<const T> scores) {
    std::vector<ExpertIndex> order(scores.size());
    std::iota(order.begin(), order.end(), ExpertIndex{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](ExpertIndex a, ExpertIndex b) { return scores[a] > scores[b]; });
    return order;
}

template <typename T>
std::vector<ExpertIndex> rank_order(const std::vector<T> &scores) {
    return rank_order(std::span<const T>(scores));
}

/// The k best indices of `scores` (lowest index wins ties), sorted ascending.
template <typename T>
ExpertSet top_k(std::span<const T> scores, std::size_t k) {
    if (k > scores.size())
        throw ArgumentError("top_k: k=" + std::to_string(k) + " exceeds E=" + std::to_string(scores.size()));
    std::vector<ExpertIndex> order(scores.size());
    std::iota(order.begin(), order.end(), ExpertIndex{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](ExpertIndex a, ExpertIndex b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

template <typename T>
ExpertSet top_k(const std::vector<T> &scores, std::size_t k) {
    return top_k(std::span<const T>(scores), k);
}

/// Numerically stable softmax (max-subtracted).
template <std::floating_point T>
std::vector<T> softmax(std::span<const T> logits) {
    std::vector<T> out(logits.size());
    if (logits.empty()) return out;
    const T peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double e = std::exp(static_cast<double>(logits[i]) - static_cast<double>(peak));
        out[i] = static_cast<T>(e);
        total += e;
    }
    for (auto &v : out) v = static_cast<T>(static_cast<double>(v) / total);
    return out;
}

template <std::floating_point T>
std::vector<T> softmax(const std::vector<T> &logits) {
    return softmax(std::span<const T>(logits));
}

/// Row-wise softmax of a batch of logits.
inline Matrix softmax_rows(const Matrix &logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double peak = logits.row(i).maxCoeff();
        out.row(i) = (logits.row(i).array() - peak).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

/// Raw router logits W_g x.
inline std::vector<double> gate_logits(const RouterSpec &spec, std::span<const double> x) {
    if (static_cast<int>(x.size()) != spec.d || spec.gate_weights.cols() != spec.d ||
        spec.gate_weights.rows() != spec.E)
        throw ConfigError("gate: input length " + std::to_string(x.size()) + " does not match d=" +
                          std::to_string(spec.d));
    const Eigen::Map<const Vector> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    const Vector z = spec.gate_weights * xv;
    return {z.data(), z.data() + z.size()};
}

/// The router's affinity scores softmax(W_g x).
inline std::vector<double> gate_forward(const RouterSpec &spec, std::span<const double> x) {
    return softmax(gate_logits(spec, x));
}

inline std::vector<double> gate_forward(const RouterSpec &spec, const std::vector<double> &x) {
    return gate_forward(spec, std::span<const double>(x));
}

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Parameter-free layer normalization. A constant input maps to zeros.
template <std::floating_point T>
std::vector<T> layer_norm(std::span<const T> x, double epsilon = kLayerNormEpsilon) {
    if (x.size() < 2) throw ArgumentError("layer_norm: need at least 2 elements");
    double mean = 0.0;
    for (T v : x) mean += static_cast<double>(v);
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (T v : x) var += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
    var /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(var + epsilon);
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<T>((static_cast<double>(x[i]) - mean) * inv);
    return out;
}

template <std::floating_point T>
std::vector<T> layer_norm(const std::vector<T> &x, double epsilon = kLayerNormEpsilon) {
    return layer_norm(std::span<const T>(x), epsilon);
}

/// Shannon entropy of expert activation counts, normalized by log E so a
/// uniform distribution scores 1. A single expert has zero entropy.
inline double activation_entropy(std::span<const std::uint64_t> counts) {
    std::uint64_t total = 0;
    for (auto c : counts) total += c;
    if (total == 0) throw ArgumentError("activation_entropy: all counts are zero");
    if (counts.size() < 2) return 0.0;
    double h = 0.0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h / std::log(static_cast<double>(counts.size()));
}

inline double activation_entropy(const std::vector<std::uint64_t> &counts) {
    return activation_entropy(std::span<const std::uint64_t>(counts));
}

/// Expert activation counts over a set of samples (how often each expert is in the top-k).
inline std::vector<std::uint64_t> activation_counts(std::span<const TraceSample> samples, int num_experts) {
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(num_experts), 0);
    for (const auto &s : samples)
        for (auto e : s.true_topk) ++counts.at(e);
    return counts;
}

template <typename T>
std::vector<double> to_double(std::span<const T> v) {
    return {v.begin(), v.end()};
}

template <typename T>
std::vector<double> to_double(const std::vector<T> &v) {
    return {v.begin(), v.end()};
}

}  // namespace moepa
