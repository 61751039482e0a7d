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

// Training objectives for expert prediction. Every loss returns the batch
// scalar together with its gradient with respect to its input matrix.
//
// Tier boundaries ("top-10", "ranks 11-30") are clamped to E, so with E=16
// the tiers are ranks 1-10, 11-16 and an empty rest tier.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "moepa/core.hpp"

namespace moepa {

enum class LossFamily { MSE, WeightedBCE, Focal, RankingAware };

inline const char *to_string(LossFamily f) {
    switch (f) {
        case LossFamily::MSE:
            return "mse";
        case LossFamily::WeightedBCE:
            return "wbce";
        case LossFamily::Focal:
            return "focal";
        case LossFamily::RankingAware:
            return "ranking";
    }
    return "?";
}

struct TierWeights {
    double top = 3.0;   // true rank <= top_tier
    double mid = 1.5;   // top_tier < true rank <= mid_tier_end (ranking-aware loss only)
    double rest = 0.5;
};

struct LossSpec {
    LossFamily family = LossFamily::WeightedBCE;
    TierWeights tier_weights;
    double lambda = 0.3;
    double margin = 0.1;
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    /// Divide the hinge sum by the number of contributing pairs in the batch.
    bool normalize_ranking = true;
    int top_tier = 10;
    int mid_tier_end = 30;

    void validate() const {
        if (!(lambda >= 0.0)) throw ConfigError("loss: lambda must be >= 0");
        if (!(margin > 0.0)) throw ConfigError("loss: margin must be > 0");
        if (!(tier_weights.top > 0.0 && tier_weights.mid > 0.0 && tier_weights.rest > 0.0))
            throw ConfigError("loss: tier weights must be > 0");
        if (!(focal_gamma >= 0.0) || !(focal_alpha >= 0.0 && focal_alpha <= 1.0))
            throw ConfigError("loss: focal gamma must be >= 0 and alpha in [0,1]");
        if (top_tier < 1 || mid_tier_end < top_tier) throw ConfigError("loss: need 1 <= top_tier <= mid_tier_end");
    }
};

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IntMatrix = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Ground truth of a batch in the shapes the losses consume.
struct BatchLabels {
    Matrix true_scores;   // N x E
    BoolMatrix topk_mask;  // expert in the true top-k
    IntMatrix rank_of;     // 1-based rank by true score, ties to the lower index
    int k = 0;

    Eigen::Index rows() const { return true_scores.rows(); }
    Eigen::Index cols() const { return true_scores.cols(); }

    static BatchLabels from_scores(const Matrix &scores, int k) {
        if (k < 1 || k > scores.cols()) throw ArgumentError("labels: need 1 <= k <= E");
        BatchLabels b;
        b.true_scores = scores;
        b.k = k;
        b.topk_mask = BoolMatrix::Constant(scores.rows(), scores.cols(), false);
        b.rank_of = IntMatrix::Zero(scores.rows(), scores.cols());
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            const auto order = rank_order(std::span<const double>(scores.row(i).data(), scores.cols()));
            for (std::size_t r = 0; r < order.size(); ++r) {
                b.rank_of(i, order[r]) = static_cast<int>(r) + 1;
                if (static_cast<int>(r) < k) b.topk_mask(i, order[r]) = true;
            }
        }
        return b;
    }

    static BatchLabels from_samples(std::span<const TraceSample> samples) {
        if (samples.empty()) throw ArgumentError("labels: empty batch");
        const auto E = static_cast<Eigen::Index>(samples[0].true_scores.size());
        Matrix s(static_cast<Eigen::Index>(samples.size()), E);
        for (std::size_t i = 0; i < samples.size(); ++i)
            for (Eigen::Index j = 0; j < E; ++j) s(static_cast<Eigen::Index>(i), j) = samples[i].true_scores[j];
        return from_scores(s, static_cast<int>(samples[0].true_topk.size()));
    }
};

struct LossResult {
    double value = 0.0;
    Matrix grad;
};

namespace detail {

inline void check_shape(const Matrix &m, const BatchLabels &labels, const char *who) {
    if (m.rows() != labels.rows() || m.cols() != labels.cols() || m.rows() == 0)
        throw ArgumentError(std::string(who) + ": prediction shape does not match labels");
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double tier_weight(int rank, int E, const LossSpec &spec, bool three_tier) {
    const int top = std::min(spec.top_tier, E);
    const int mid = std::min(spec.mid_tier_end, E);
    if (rank <= top) return spec.tier_weights.top;
    if (three_tier && rank <= mid) return spec.tier_weights.mid;
    return spec.tier_weights.rest;
}

/// Weighted BCE over logits; two tiers (top / rest) or three (top / mid / rest).
inline LossResult tiered_bce(const Matrix &logits, const BatchLabels &labels, const LossSpec &spec, bool three_tier) {
    const auto n = logits.rows();
    const auto e = logits.cols();
    const double scale = 1.0 / static_cast<double>(n * e);
    LossResult r;
    r.grad.resize(n, e);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < e; ++j) {
            const double z = logits(i, j);
            const double w = tier_weight(labels.rank_of(i, j), static_cast<int>(e), spec, three_tier);
            if (labels.topk_mask(i, j)) {
                total += w * softplus(-z);  // -log sigmoid(z)
                r.grad(i, j) = scale * w * (stable_sigmoid(z) - 1.0);
            } else {
                total += w * softplus(z);  // -log(1 - sigmoid(z))
                r.grad(i, j) = scale * w * stable_sigmoid(z);
            }
        }
    }
    r.value = scale * total;
    return r;
}

}  // namespace detail

/// Mean over samples of the squared error between predicted and true
/// affinities: (1/N) sum_i sum_j (s_ij - p_ij)^2. Gradient is w.r.t. p.
inline LossResult mse_loss(const Matrix &pred_scores, const BatchLabels &labels) {
    detail::check_shape(pred_scores, labels, "mse_loss");
    const double inv_n = 1.0 / static_cast<double>(pred_scores.rows());
    const Matrix diff = pred_scores - labels.true_scores;
    return {inv_n * diff.squaredNorm(), 2.0 * inv_n * diff};
}

/// Weighted BCE with top-tier weight for the true top-10 and rest weight otherwise.
inline LossResult weighted_bce_loss(const Matrix &logits, const BatchLabels &labels, const LossSpec &spec = {}) {
    detail::check_shape(logits, labels, "weighted_bce_loss");
    return detail::tiered_bce(logits, labels, spec, false);
}

/// alpha-balanced binary focal loss, mean over N*E.
inline LossResult focal_loss(const Matrix &logits, const BatchLabels &labels, const LossSpec &spec = {}) {
    detail::check_shape(logits, labels, "focal_loss");
    const auto n = logits.rows();
    const auto e = logits.cols();
    const double scale = 1.0 / static_cast<double>(n * e);
    const double gamma = spec.focal_gamma;
    LossResult r;
    r.grad.resize(n, e);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < e; ++j) {
            const bool positive = labels.topk_mask(i, j);
            // Signed logit of the true class: p_t = sigmoid(zt).
            const double zt = positive ? logits(i, j) : -logits(i, j);
            const double alpha_t = positive ? spec.focal_alpha : 1.0 - spec.focal_alpha;
            const double pt = detail::stable_sigmoid(zt);
            const double one_minus = detail::stable_sigmoid(-zt);
            const double nll = detail::softplus(-zt);  // -log p_t
            const double mod = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);
            total += alpha_t * mod * nll;
            // d/dzt [(1-p)^g * nll] = -(1-p)^g * (g * p * nll + (1-p))
            const double dzt = -alpha_t * mod * (gamma * pt * nll + one_minus);
            r.grad(i, j) = scale * (positive ? dzt : -dzt);
        }
    }
    r.value = scale * total;
    return r;
}

/// Pairwise hinge over true top-tier experts: for every pair (j, l) with
/// s_ij > s_il, ReLU(margin - (z_ij - z_il)). Exact score ties contribute
/// nothing. Divided by the number of such pairs when normalize_ranking.
inline LossResult ranking_hinge(const Matrix &logits, const BatchLabels &labels, const LossSpec &spec = {}) {
    detail::check_shape(logits, labels, "ranking_hinge");
    const auto n = logits.rows();
    const auto e = logits.cols();
    const int top = std::min<int>(spec.top_tier, static_cast<int>(e));
    LossResult r;
    r.grad = Matrix::Zero(n, e);
    double total = 0.0;
    std::size_t pairs = 0;
    std::vector<Eigen::Index> tier;
    for (Eigen::Index i = 0; i < n; ++i) {
        tier.clear();
        for (Eigen::Index j = 0; j < e; ++j)
            if (labels.rank_of(i, j) <= top) tier.push_back(j);
        for (auto a : tier) {
            for (auto b : tier) {
                if (!(labels.true_scores(i, a) > labels.true_scores(i, b))) continue;
                ++pairs;
                const double slack = spec.margin - (logits(i, a) - logits(i, b));
                if (slack > 0.0) {
                    total += slack;
                    r.grad(i, a) -= 1.0;
                    r.grad(i, b) += 1.0;
                }
            }
        }
    }
    const double scale = (spec.normalize_ranking && pairs > 0) ? 1.0 / static_cast<double>(pairs) : 1.0;
    r.value = scale * total;
    r.grad *= scale;
    return r;
}

/// Three-tier weighted BCE plus lambda times the pairwise ranking hinge.
inline LossResult ranking_aware_loss(const Matrix &logits, const BatchLabels &labels, const LossSpec &spec = {}) {
    detail::check_shape(logits, labels, "ranking_aware_loss");
    LossResult r = detail::tiered_bce(logits, labels, spec, true);
    if (spec.lambda != 0.0) {
        const LossResult hinge = ranking_hinge(logits, labels, spec);
        r.value += spec.lambda * hinge.value;
        r.grad += spec.lambda * hinge.grad;
    }
    return r;
}

/// Loss of `spec.family` as a function of raw predictor logits. MSE compares
/// softmax(logits) against the true affinities and chains through the softmax.
inline LossResult evaluate_loss(const LossSpec &spec, const Matrix &logits, const BatchLabels &labels) {
    switch (spec.family) {
        case LossFamily::MSE: {
            detail::check_shape(logits, labels, "mse_loss");
            const Matrix p = softmax_rows(logits);
            LossResult r = mse_loss(p, labels);
            // dL/dz_j = p_j (g_j - sum_l p_l g_l)
            const Vector dot = (p.array() * r.grad.array()).rowwise().sum();
            r.grad = (p.array() * (r.grad.colwise() - dot).array()).matrix();
            return r;
        }
        case LossFamily::WeightedBCE:
            return weighted_bce_loss(logits, labels, spec);
        case LossFamily::Focal:
            return focal_loss(logits, labels, spec);
        case LossFamily::RankingAware:
            return ranking_aware_loss(logits, labels, spec);
    }
    throw ArgumentError("unknown loss family");
}

}  // namespace moepa
