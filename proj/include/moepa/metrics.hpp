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

// Evaluation metrics for expert predictions:
//   exact match      predicted top-k set == true top-k set
//   over-provision   true top-k contained in the predicted top-m (m >= k)
//   top-1            best predicted expert is one of the true top-k
// plus per-expert recall at m and the sorted affinity-score profile.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "moepa/core.hpp"
#include "moepa/predictor.hpp"

namespace moepa {

inline bool exact_match(const ExpertSet &pred, const ExpertSet &truth) {
    if (pred.size() != truth.size())
        throw ArgumentError("exact_match: predicted set has " + std::to_string(pred.size()) + " experts, truth has " +
                            std::to_string(truth.size()));
    ExpertSet a = pred, b = truth;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a == b;
}

inline std::size_t intersection_size(const ExpertSet &pred, const ExpertSet &truth) {
    std::size_t n = 0;
    for (auto t : truth)
        if (std::find(pred.begin(), pred.end(), t) != pred.end()) ++n;
    return n;
}

/// Full coverage: every true expert is among the m prefetched ones.
inline bool overprovision_hit(const ExpertSet &pred, const ExpertSet &truth) {
    if (pred.size() < truth.size())
        throw ArgumentError("overprovision_hit: m=" + std::to_string(pred.size()) + " is smaller than k=" +
                            std::to_string(truth.size()));
    return intersection_size(pred, truth) == truth.size();
}

/// Fraction of the true experts that are among the prefetched ones.
inline double expert_recall(const ExpertSet &pred, const ExpertSet &truth) {
    if (truth.empty()) throw ArgumentError("expert_recall: empty truth");
    return static_cast<double>(intersection_size(pred, truth)) / static_cast<double>(truth.size());
}

inline bool top1_hit(const ExpertSelection &pred, const ExpertSet &truth) {
    if (pred.raw_scores.empty()) throw ArgumentError("top1_hit: empty prediction");
    const auto best = rank_order(pred.raw_scores).front();
    return std::find(truth.begin(), truth.end(), best) != truth.end();
}

struct EvalResult {
    int E = 0;
    int k = 0;
    double exact_match = 0.0;
    std::map<int, double> overprov;         // m -> full-coverage hit rate
    std::map<int, double> overprov_recall;  // m -> per-expert recall
    double top1 = 0.0;
    std::size_t n_samples = 0;
    std::vector<std::uint64_t> per_expert_hits;  // true expert also in predicted top-k
};

/// Aggregates all metrics from predicted logits (one row per sample).
/// `ms` lists extra over-provisioning sizes; k and E are always included.
inline EvalResult evaluate_scores(const Matrix &logits, std::span<const ExpertSet> truths, int k,
                                  std::span<const int> ms = {}) {
    const int E = static_cast<int>(logits.cols());
    if (static_cast<std::size_t>(logits.rows()) != truths.size() || truths.empty())
        throw ArgumentError("evaluate: need one non-empty prediction row per truth set");
    if (k < 1 || k > E) throw ArgumentError("evaluate: need 1 <= k <= E");
    std::vector<int> sizes{k, E};
    for (int m : ms) {
        if (m < k || m > E)
            throw ArgumentError("evaluate: over-provisioning size " + std::to_string(m) + " outside [k, E]");
        sizes.push_back(m);
    }
    std::sort(sizes.begin(), sizes.end());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());

    EvalResult r;
    r.E = E;
    r.k = k;
    r.n_samples = truths.size();
    r.per_expert_hits.assign(static_cast<std::size_t>(E), 0);
    std::vector<std::uint64_t> full(sizes.size(), 0);
    std::vector<double> recall(sizes.size(), 0.0);
    std::uint64_t exact = 0, top1 = 0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const auto &truth = truths[i];
        if (truth.size() != static_cast<std::size_t>(k)) throw ArgumentError("evaluate: truth set size differs from k");
        const auto order = rank_order(std::span<const double>(logits.row(static_cast<Eigen::Index>(i)).data(), E));
        // Rank position of each true expert; the true set is inside the top-m
        // iff its worst position is < m.
        std::size_t worst = 0, found = 0;
        std::vector<std::size_t> pos(truth.size());
        for (std::size_t t = 0; t < truth.size(); ++t) {
            const auto p = static_cast<std::size_t>(std::find(order.begin(), order.end(), truth[t]) - order.begin());
            if (p >= static_cast<std::size_t>(E)) throw ArgumentError("evaluate: truth index out of range");
            pos[t] = p;
            worst = std::max(worst, p);
        }
        for (std::size_t s = 0; s < sizes.size(); ++s) {
            const auto m = static_cast<std::size_t>(sizes[s]);
            if (worst < m) ++full[s];
            found = 0;
            for (auto p : pos)
                if (p < m) ++found;
            recall[s] += static_cast<double>(found) / static_cast<double>(k);
        }
        if (worst < static_cast<std::size_t>(k)) ++exact;
        if (std::find(truth.begin(), truth.end(), order.front()) != truth.end()) ++top1;
        for (std::size_t t = 0; t < truth.size(); ++t)
            if (pos[t] < static_cast<std::size_t>(k)) ++r.per_expert_hits[truth[t]];
    }
    const auto n = static_cast<double>(truths.size());
    r.exact_match = static_cast<double>(exact) / n;
    r.top1 = static_cast<double>(top1) / n;
    for (std::size_t s = 0; s < sizes.size(); ++s) {
        r.overprov[sizes[s]] = static_cast<double>(full[s]) / n;
        r.overprov_recall[sizes[s]] = recall[s] / n;
    }
    return r;
}

/// Runs the model (Eval semantics) over the samples and aggregates metrics.
inline EvalResult evaluate(const PredictorModel &model, std::span<const TraceSample> samples,
                           std::span<const int> ms = {}) {
    if (samples.empty()) throw ArgumentError("evaluate: no samples");
    if (model.mode != Mode::Eval) throw UsageError("evaluate: model must be in Eval mode");
    const int k = static_cast<int>(samples[0].true_topk.size());
    Matrix logits(static_cast<Eigen::Index>(samples.size()), model.E);
    constexpr std::size_t kChunk = 4096;
    for (std::size_t start = 0; start < samples.size(); start += kChunk) {
        const std::size_t len = std::min(kChunk, samples.size() - start);
        logits.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len)) =
            forward(model, activation_batch(samples.subspan(start, len)));
    }
    std::vector<ExpertSet> truths;
    truths.reserve(samples.size());
    for (const auto &s : samples) truths.push_back(s.true_topk);
    return evaluate_scores(logits, truths, k, ms);
}

/// Mean of the r-th largest true score for every rank r.
inline std::vector<double> affinity_tier_profile(std::span<const TraceSample> samples) {
    if (samples.empty()) throw ArgumentError("affinity_tier_profile: no samples");
    const std::size_t E = samples[0].true_scores.size();
    std::vector<double> curve(E, 0.0);
    std::vector<double> sorted(E);
    for (const auto &s : samples) {
        if (s.true_scores.size() != E) throw ArgumentError("affinity_tier_profile: mixed expert counts");
        std::copy(s.true_scores.begin(), s.true_scores.end(), sorted.begin());
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        for (std::size_t r = 0; r < E; ++r) curve[r] += sorted[r];
    }
    for (auto &v : curve) v /= static_cast<double>(samples.size());
    return curve;
}

/// Long-format CSV: metric,m,value.
inline void write_eval_csv(std::ostream &out, const EvalResult &r) {
    out << "metric,m,value\n" << std::setprecision(10);
    out << "exact_match," << r.k << ',' << r.exact_match << '\n';
    out << "top1,1," << r.top1 << '\n';
    for (const auto &[m, v] : r.overprov) out << "overprov_full_coverage," << m << ',' << v << '\n';
    for (const auto &[m, v] : r.overprov_recall) out << "overprov_expert_recall," << m << ',' << v << '\n';
    out << "n_samples,0," << r.n_samples << '\n';
    for (std::size_t j = 0; j < r.per_expert_hits.size(); ++j)
        out << "expert_hits_" << j << ',' << r.k << ',' << r.per_expert_hits[j] << '\n';
}

inline void write_tier_profile_csv(std::ostream &out, const std::vector<double> &curve) {
    out << "rank,mean_score\n" << std::setprecision(10);
    for (std::size_t r = 0; r < curve.size(); ++r) out << r + 1 << ',' << curve[r] << '\n';
}

}  // namespace moepa
