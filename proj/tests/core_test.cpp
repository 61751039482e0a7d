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

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <vector>

#include "gtest/gtest.h"
#include "moepa/core.hpp"
#include "moepa/rng.hpp"
#include "support/oracles.hpp"

namespace moepa {
namespace {

RouterSpec identity_router(int d) {
    RouterSpec r{d, d, 1, Matrix::Identity(d, d)};
    return r;
}

TEST(GateForward, SymmetricInputIsUniform) {
    const auto p = gate_forward(identity_router(2), std::vector<double>{0.0, 0.0});
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(GateForward, LogThree) {
    const auto p = gate_forward(identity_router(2), std::vector<double>{std::log(3.0), 0.0});
    EXPECT_NEAR(p[0], 0.75, 1e-12);
    EXPECT_NEAR(p[1], 0.25, 1e-12);
}

TEST(GateForward, EqualRowsGiveEqualScores) {
    CounterRng rng(3, 0);
    RouterSpec r{4, 5, 2, testing::random_matrix(rng, 5, 4)};
    r.gate_weights.row(3) = r.gate_weights.row(1);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> x(4);
        for (auto &v : x) v = rng.normal();
        const auto p = gate_forward(r, x);
        EXPECT_DOUBLE_EQ(p[1], p[3]);
    }
}

TEST(GateForward, DimensionMismatchIsConfigError) {
    EXPECT_THROW(gate_forward(identity_router(3), std::vector<double>{1.0, 2.0}), ConfigError);
}

TEST(GateForward, SumsToOneForLargeInputs) {
    CounterRng rng(5, 0);
    RouterSpec r{8, 16, 2, testing::random_matrix(rng, 16, 8)};
    for (int t = 0; t < 200; ++t) {
        std::vector<double> x(8);
        for (auto &v : x) v = rng.uniform(-1e4, 1e4);
        const auto p = gate_forward(r, x);
        double total = 0.0;
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
    }
}

TEST(RouterSpec, Validate) {
    EXPECT_NO_THROW(identity_router(3).validate());
    RouterSpec bad{3, 3, 4, Matrix::Identity(3, 3)};
    EXPECT_THROW(bad.validate(), ConfigError);
    RouterSpec shape{3, 4, 1, Matrix::Identity(3, 3)};
    EXPECT_THROW(shape.validate(), ConfigError);
    RouterSpec nan = identity_router(2);
    nan.gate_weights(0, 1) = std::nan("");
    EXPECT_THROW(nan.validate(), ConfigError);
}

TEST(TopK, Examples) {
    EXPECT_EQ(top_k(std::vector<double>{0.1, 0.7, 0.2}, 1), (ExpertSet{1}));
    EXPECT_EQ(top_k(std::vector<double>{0.5, 0.5, 0.0}, 1), (ExpertSet{0}));
    EXPECT_EQ(top_k(std::vector<double>{0.4, 0.1, 0.3, 0.2}, 2), (ExpertSet{0, 2}));
}

TEST(TopK, KLargerThanEThrows) {
    EXPECT_THROW(top_k(std::vector<double>{1.0, 2.0}, 3), ArgumentError);
}

// Exhaustive oracle: every subset of size k, pick the one with the largest
// sum, ties resolved lexicographically on the (ascending) index list.
TEST(TopK, MatchesExhaustiveOracle) {
    CounterRng rng(11, 0);
    for (int trial = 0; trial < 200; ++trial) {
        const int E = 2 + static_cast<int>(rng.below(6));
        const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(E)));
        std::vector<double> s(static_cast<std::size_t>(E));
        for (auto &v : s) v = static_cast<double>(rng.below(5));  // many ties
        ExpertSet best;
        std::vector<double> best_sorted;
        for (unsigned mask = 0; mask < (1u << E); ++mask) {
            if (std::popcount(mask) != k) continue;
            ExpertSet cand;
            for (int j = 0; j < E; ++j)
                if (mask & (1u << j)) cand.push_back(static_cast<ExpertIndex>(j));
            std::vector<double> vals;
            for (auto j : cand) vals.push_back(s[j]);
            std::sort(vals.begin(), vals.end(), std::greater<>());
            if (best.empty() || vals > best_sorted || (vals == best_sorted && cand < best)) {
                best = cand;
                best_sorted = vals;
            }
        }
        EXPECT_EQ(top_k(s, static_cast<std::size_t>(k)), best) << "trial " << trial;
    }
}

TEST(TopK, PermutationConsistent) {
    CounterRng rng(13, 0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t E = 10;
        std::vector<double> s(E);
        for (auto &v : s) v = rng.normal();
        const auto pi = permutation(E, rng);
        std::vector<double> permuted(E);
        for (std::size_t i = 0; i < E; ++i) permuted[pi[i]] = s[i];
        ExpertSet mapped;
        for (auto j : top_k(s, 3)) mapped.push_back(static_cast<ExpertIndex>(pi[j]));
        std::sort(mapped.begin(), mapped.end());
        EXPECT_EQ(top_k(permuted, 3), mapped);
    }
}

TEST(RankOrder, StableDescending) {
    EXPECT_EQ(rank_order(std::vector<double>{1.0, 3.0, 3.0, 2.0}), (std::vector<ExpertIndex>{1, 2, 3, 0}));
}

TEST(LayerNorm, MeanZeroUnitVariance) {
    const auto y = layer_norm(std::vector<double>{1.0, 2.0, 3.0});
    double mean = 0.0, var = 0.0;
    for (double v : y) mean += v;
    mean /= 3.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= 3.0;
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);
    EXPECT_LT(y[0], y[1]);
    EXPECT_LT(y[1], y[2]);
}

TEST(LayerNorm, ConstantMapsToZero) {
    for (double v : layer_norm(std::vector<double>{5.0, 5.0, 5.0})) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, TooShortThrows) { EXPECT_THROW(layer_norm(std::vector<double>{1.0}), ArgumentError); }

TEST(LayerNorm, ArgsortPreserved1000Trials) {
    CounterRng rng(17, 0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> x(2 + rng.below(62));
        for (auto &v : x) v = 3.0 * rng.normal() + 1.0;
        EXPECT_EQ(testing::argsort_desc(layer_norm(x)), testing::argsort_desc(x)) << "trial " << trial;
    }
}

TEST(Softmax, ArgsortPreserved1000Trials) {
    CounterRng rng(19, 0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> z(2 + rng.below(62));
        for (auto &v : z) v = 4.0 * rng.normal();
        EXPECT_EQ(testing::argsort_desc(softmax(z)), testing::argsort_desc(z)) << "trial " << trial;
    }
}

TEST(Softmax, RowsMatchVector) {
    CounterRng rng(23, 0);
    const Matrix z = testing::random_matrix(rng, 3, 5, 10.0);
    const Matrix p = softmax_rows(z);
    for (int i = 0; i < 3; ++i) {
        std::vector<double> row(z.row(i).data(), z.row(i).data() + 5);
        const auto q = softmax(row);
        for (int j = 0; j < 5; ++j) EXPECT_NEAR(p(i, j), q[static_cast<std::size_t>(j)], 1e-15);
    }
}

TEST(Softmax, GateTopKEqualsLogitTopK) {
    CounterRng rng(29, 0);
    RouterSpec r{16, 16, 2, testing::random_matrix(rng, 16, 16, 0.25)};
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> x(16);
        for (auto &v : x) v = rng.normal();
        const auto normed = layer_norm(x);
        EXPECT_EQ(top_k(gate_forward(r, normed), 2), top_k(gate_logits(r, normed), 2));
    }
}

TEST(ActivationEntropy, Uniform) {
    std::vector<std::uint64_t> c(64, 17);
    EXPECT_NEAR(activation_entropy(c), 1.0, 1e-12);
}

TEST(ActivationEntropy, SingleNonzero) {
    std::vector<std::uint64_t> c(8, 0);
    c[3] = 10;
    EXPECT_DOUBLE_EQ(activation_entropy(c), 0.0);
}

TEST(ActivationEntropy, ThreeToOne) {
    // Binary entropy of 0.75 in bits.
    const double oracle = -(0.75 * std::log2(0.75) + 0.25 * std::log2(0.25));
    EXPECT_NEAR(activation_entropy(std::vector<std::uint64_t>{3, 1}), oracle, 1e-12);
    EXPECT_NEAR(activation_entropy(std::vector<std::uint64_t>{3, 1}), 0.8113, 1e-4);
}

TEST(ActivationEntropy, ZeroCountsThrow) {
    EXPECT_THROW(activation_entropy(std::vector<std::uint64_t>{0, 0, 0}), ArgumentError);
}

TEST(Rng, DeterministicAndKeyed) {
    CounterRng a(42, 1), b(42, 1), c(42, 2);
    for (int i = 0; i < 10; ++i) {
        const auto x = a.next_u64();
        EXPECT_EQ(x, b.next_u64());
        EXPECT_NE(x, c.next_u64());
    }
}

TEST(Rng, NormalMoments) {
    CounterRng rng(7, 0);
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        s += v;
        s2 += v * v;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Rng, PermutationIsPermutation) {
    CounterRng rng(9, 0);
    auto p = permutation(100, rng);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
}

}  // namespace
}  // namespace moepa
