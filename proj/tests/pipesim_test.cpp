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
#include <cmath>
#include <sstream>
#include <vector>

#include "gtest/gtest.h"
#include "moepa/pipesim.hpp"
#include "moepa/rng.hpp"

namespace moepa {
namespace {

constexpr LoadSource kMem = LoadSource::Memory;
constexpr LoadSource kDisk = LoadSource::Disk;

HardwareProfile random_profile(CounterRng &rng) {
    HardwareProfile p;
    p.name = "random";
    p.t_pre_norm = rng.uniform(0.0, 0.3);
    p.t_attn = rng.uniform(0.05, 2.0);
    p.t_post_norm = rng.uniform(0.0, 0.3);
    p.t_select = rng.uniform(0.0, 0.3);
    p.t_expert_compute = rng.uniform(0.1, 12.0);
    p.t_load_disk_per_expert = rng.uniform(0.1, 10.0);
    p.t_load_mem_per_expert = rng.uniform(0.01, 2.0);
    p.t_predict = rng.uniform(0.0, 0.3);
    p.parallel_load_slots = 1 + static_cast<int>(rng.below(8));
    return p;
}

std::vector<ScheduleMode> all_modes(int k) {
    std::vector<ScheduleMode> modes{ScheduleMode::no_prefetch(), ScheduleMode::all_hit()};
    for (int m = 0; m <= k; ++m) modes.push_back(ScheduleMode::miss(m));
    return modes;
}

double sum_of(const ScheduleResult &r, Stage s) {
    double t = 0.0;
    for (const auto &iv : r.stages)
        if (iv.stage == s) t += iv.end - iv.start;
    return t;
}

TEST(Profiles, BuiltinValues) {
    const auto v100 = builtin_profile("V100-32GB");
    EXPECT_DOUBLE_EQ(v100.t_attn, 1.1279);
    EXPECT_NEAR(full_load_ms(v100, kMem), 9.5, 1e-12);
    EXPECT_NEAR(full_load_ms(v100, kDisk), 48.1, 1e-12);
    EXPECT_NEAR(full_load_ms(builtin_profile("A100-40GB"), kMem), 8.5, 1e-12);
    const auto a80 = builtin_profile("A100-80GB");
    EXPECT_NEAR(full_load_ms(a80, kMem), 4.0, 1e-12);
    EXPECT_NEAR(a80.t_load_mem_per_expert, 4.0 / 6.0, 1e-12);
    EXPECT_DOUBLE_EQ(a80.t_predict, 0.15);
    EXPECT_EQ(a80.parallel_load_slots, 6);
    EXPECT_DOUBLE_EQ(a80.stddev.expert_compute, 1.1864);
    EXPECT_THROW(builtin_profile("TPU"), ConfigError);
    for (const auto &p : builtin_profiles()) EXPECT_NO_THROW(p.validate());
}

TEST(Profiles, Validate) {
    auto p = builtin_profile("A100-40GB");
    p.t_attn = 0.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = builtin_profile("A100-40GB");
    p.t_select = -1.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = builtin_profile("A100-40GB");
    p.parallel_load_slots = 0;
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(ExpertBlob, SizeConsistency) {
    ExpertBlobSpec blob;
    EXPECT_NEAR(blob.per_expert_mb(), 16.5, 1e-9);
    EXPECT_TRUE(blob.consistent_with(16.5));
    EXPECT_NEAR(blob.per_expert_mb() * blob.experts_per_token, 99.0, 1e-9);
    // 5.78e6 two-byte parameters are 11.6 MB, not 16.5 MB.
    ExpertBlobSpec stated;
    stated.params_per_expert = 5'780'000;
    EXPECT_FALSE(stated.consistent_with(16.5));
}

TEST(Schedule, AllHitA100MemoryHasNoStall) {
    const auto p = builtin_profile("A100-80GB");
    const auto r = schedule(p, 6, ScheduleMode::all_hit(), kMem);
    const double window = p.t_attn + p.t_post_norm + p.t_select - p.t_predict;
    EXPECT_LE(p.t_load_mem_per_expert * std::ceil(6.0 / p.parallel_load_slots), window);
    EXPECT_DOUBLE_EQ(r.expert_stall, 0.0);
}

TEST(Schedule, NoPrefetchV100SingleSlotWaitsFullLoad) {
    auto p = builtin_profile("V100-32GB");
    p.parallel_load_slots = 1;
    const auto r = schedule(p, 6, ScheduleMode::no_prefetch(), kMem);
    EXPECT_NEAR(r.expert_stall, 9.5, 1e-9);
    p.parallel_load_slots = 6;
    EXPECT_NEAR(schedule(p, 6, ScheduleMode::no_prefetch(), kMem).expert_stall, 9.5 / 6.0, 1e-9);
}

TEST(Schedule, DegenerateWindow) {
    auto p = builtin_profile("V100-32GB");
    p.t_attn = 1e-12;
    p.t_post_norm = 0.0;
    p.t_select = 0.0;
    p.t_predict = 0.0;
    for (auto src : {kMem, kDisk}) {
        const auto a = schedule(p, 6, ScheduleMode::no_prefetch(), src);
        const auto b = schedule(p, 6, ScheduleMode::all_hit(), src);
        EXPECT_NEAR(a.token_latency, b.token_latency, 1e-9);
    }
    p.t_attn = 0.5;
    EXPECT_LT(schedule(p, 6, ScheduleMode::all_hit(), kMem).token_latency,
              schedule(p, 6, ScheduleMode::no_prefetch(), kMem).token_latency - 0.4);
}

TEST(Schedule, PrefetchNeverHurtsBuiltin) {
    for (const auto &p : builtin_profiles())
        for (auto src : {kMem, kDisk})
            for (int k : {1, 2, 6, 8}) {
                const auto none = schedule(p, k, ScheduleMode::no_prefetch(), src);
                EXPECT_LE(schedule(p, k, ScheduleMode::all_hit(), src).token_latency, none.token_latency);
                for (int m = 0; m <= k; ++m)
                    EXPECT_LE(schedule(p, k, ScheduleMode::miss(m), src).token_latency, none.token_latency + 1e-12)
                        << p.name << " k=" << k << " misses=" << m;
            }
}

TEST(Schedule, ClosedFormStallCondition) {
    CounterRng rng(41, 0);
    for (int trial = 0; trial < 2000; ++trial) {
        const auto p = random_profile(rng);
        const int k = 1 + static_cast<int>(rng.below(8));
        const auto r = schedule(p, k, ScheduleMode::all_hit(), kMem);
        const double waves = std::ceil(static_cast<double>(k) / p.parallel_load_slots);
        const double lhs = p.t_load_mem_per_expert * waves;
        const double window = p.t_attn + p.t_post_norm + p.t_select - p.t_predict;
        EXPECT_NEAR(r.expert_stall, std::max(0.0, lhs - window), 1e-9);
        if (lhs <= window) {
            EXPECT_EQ(r.expert_stall, 0.0);
        }
    }
}

TEST(Schedule, Conservation) {
    CounterRng rng(43, 0);
    for (int trial = 0; trial < 500; ++trial) {
        const auto p = random_profile(rng);
        const int k = 1 + static_cast<int>(rng.below(8));
        for (auto mode : all_modes(k)) {
            for (auto src : {kMem, kDisk}) {
                const auto r = schedule(p, k, mode, src);
                const double front = sum_of(r, Stage::PreNorm) + sum_of(r, Stage::Attention) +
                                     sum_of(r, Stage::PostNorm) + sum_of(r, Stage::Select);
                EXPECT_NEAR(r.selection_end, front, 1e-9);
                EXPECT_NEAR(sum_of(r, Stage::ExpertCompute), p.t_expert_compute, 1e-9);
                EXPECT_NEAR(r.token_latency, front + r.expert_stall + p.t_expert_compute, 1e-9);
                EXPECT_GE(r.expert_stall, 0.0);

                double last_end = 0.0, compute_cursor = r.selection_end;
                int loads = 0;
                std::vector<std::pair<double, double>> load_iv;
                for (const auto &iv : r.stages) {
                    // The predictor runs on a side stream and may outlast the token.
                    if (iv.stage != Stage::Predict) last_end = std::max(last_end, iv.end);
                    EXPECT_LE(iv.start, iv.end);
                    if (iv.stage == Stage::ExpertCompute) {
                        EXPECT_GE(iv.start, compute_cursor - 1e-12);  // sequential, after selection
                        compute_cursor = iv.end;
                    }
                    if (iv.stage == Stage::Load || iv.stage == Stage::EmergencyLoad) {
                        ++loads;
                        load_iv.emplace_back(iv.start, iv.end);
                    }
                    if (iv.stage == Stage::EmergencyLoad) {
                        EXPECT_GE(iv.start, r.selection_end - 1e-12);
                    }
                }
                EXPECT_EQ(loads, k);
                EXPECT_NEAR(r.token_latency, last_end, 1e-9);
                // Never more concurrent transfers than slots.
                for (const auto &[s, e] : load_iv) {
                    const double mid = 0.5 * (s + e);
                    int live = 0;
                    for (const auto &[s2, e2] : load_iv)
                        if (s2 <= mid && mid < e2) ++live;
                    EXPECT_LE(live, p.parallel_load_slots);
                }
            }
        }
    }
}

// Holds for a single load wave with a timely prediction. With k > slots the
// all-hit schedule waits for every wave before computing, while misses
// interleave, so a miss can finish earlier.
TEST(Schedule, MissesMonotoneSingleWave) {
    CounterRng rng(47, 0);
    for (int trial = 0; trial < 500; ++trial) {
        auto p = random_profile(rng);
        p.t_predict = std::min(p.t_predict, p.t_attn + p.t_post_norm + p.t_select);
        const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(p.parallel_load_slots)));
        const auto hit = schedule(p, k, ScheduleMode::all_hit(), kMem);
        EXPECT_DOUBLE_EQ(schedule(p, k, ScheduleMode::miss(0), kMem).token_latency, hit.token_latency);
        double prev = hit.token_latency;
        for (int m = 1; m <= k; ++m) {
            const double t = schedule(p, k, ScheduleMode::miss(m), kMem).token_latency;
            EXPECT_GE(t, prev - 1e-12);
            prev = t;
        }
        EXPECT_LE(prev, schedule(p, k, ScheduleMode::no_prefetch(), kMem).token_latency + 1e-12);
    }
}

TEST(Schedule, MultiWaveMissCanBeatAllHit) {
    HardwareProfile p;
    p.name = "toy";
    p.t_attn = 0.5;
    p.t_expert_compute = 3.0;
    p.t_load_mem_per_expert = 1.0;
    p.t_predict = 0.0;
    p.parallel_load_slots = 1;
    // All hit: loads end at 3, compute [3, 6]. One miss: hits ready at 2,
    // computed [2, 4]; emergency [2, 3]; miss computed [4, 5].
    EXPECT_NEAR(schedule(p, 3, ScheduleMode::all_hit(), kMem).token_latency, 6.0, 1e-12);
    EXPECT_NEAR(schedule(p, 3, ScheduleMode::miss(1), kMem).token_latency, 5.0, 1e-12);
}

TEST(Schedule, MissOverlapsEmergencyLoadWithCompute) {
    // One slot, one miss out of two: the hit expert computes while the
    // missed one is still in flight.
    HardwareProfile p;
    p.name = "toy";
    p.t_attn = 1.0;
    p.t_expert_compute = 2.0;
    p.t_load_mem_per_expert = 0.5;
    p.t_predict = 0.0;
    p.parallel_load_slots = 1;
    const auto r = schedule(p, 2, ScheduleMode::miss(1), kMem);
    // Hit load [0, 0.5]; compute e0 [1, 2]; emergency load [1, 1.5]; compute e1 [2, 3].
    EXPECT_NEAR(r.token_latency, 3.0, 1e-12);
    EXPECT_NEAR(r.expert_stall, 0.0, 1e-12);
    p.t_load_mem_per_expert = 1.5;
    const auto slow = schedule(p, 2, ScheduleMode::miss(1), kMem);
    // Hit load [0, 1.5]; emergency [1.5, 3]; e0 [1.5, 2.5]; e1 [3, 4].
    EXPECT_NEAR(slow.token_latency, 4.0, 1e-12);
    EXPECT_NEAR(slow.expert_stall, 1.0, 1e-12);
}

TEST(Schedule, ComputeShare) {
    const auto p = builtin_profile("A100-40GB");
    const auto r = schedule(p, 2, ScheduleMode::miss(1), kMem, {0.25, 0.75});
    std::vector<double> durations;
    for (const auto &iv : r.stages)
        if (iv.stage == Stage::ExpertCompute) durations.push_back(iv.end - iv.start);
    ASSERT_EQ(durations.size(), 2u);
    EXPECT_NEAR(durations[0], 0.25 * p.t_expert_compute, 1e-12);
    EXPECT_THROW(schedule(p, 2, ScheduleMode::all_hit(), kMem, {1.0}), ArgumentError);
}

TEST(Schedule, InvalidArguments) {
    const auto p = builtin_profile("A100-40GB");
    EXPECT_THROW(schedule(p, 6, ScheduleMode::miss(7), kMem), ArgumentError);
    EXPECT_THROW(schedule(p, 6, ScheduleMode::miss(-1), kMem), ArgumentError);
    EXPECT_THROW(schedule(p, 0, ScheduleMode::all_hit(), kMem), ArgumentError);
}

TEST(ExpectedLoading, Examples) {
    EXPECT_NEAR(expected_loading_time(0.9303, 9.5), 0.66215, 1e-9);
    EXPECT_NEAR(expected_loading_time(0.9303, 9.5), 0.66, 0.01);
    EXPECT_NEAR(expected_loading_time(0.7879, 9.5), 2.01495, 1e-9);
    EXPECT_NEAR(expected_loading_time(0.7879, 9.5), 2.01, 0.01);
    EXPECT_EQ(expected_loading_time(1.0, 9.5), 0.0);
    EXPECT_THROW(expected_loading_time(1.1, 9.5), ArgumentError);
    EXPECT_THROW(expected_loading_time(-0.1, 9.5), ArgumentError);
}

TEST(ExpectedLoading, StrictlyDecreasing) {
    double prev = expected_loading_time(0.0, 3.0);
    for (int i = 1; i <= 100; ++i) {
        const double t = expected_loading_time(i / 100.0, 3.0);
        EXPECT_LT(t, prev);
        prev = t;
    }
}

TEST(Savings, ReferenceAccuracies) {
    const auto rows = savings_report(0.9303, 0.7879, builtin_profiles(), 1000);
    ASSERT_EQ(rows.size(), 6u);
    const auto &v100 = rows[0];
    EXPECT_EQ(v100.profile, "V100-32GB");
    EXPECT_EQ(v100.source, kMem);
    EXPECT_NEAR(v100.delta_ms_per_token, 1.3528, 1e-9);
    EXPECT_NEAR(v100.total_savings_ms, 1352.8, 1e-6);
    EXPECT_NEAR(v100.zero_latency_fraction_delta, 0.1424, 1e-12);
    const auto &a80 = rows[4];
    EXPECT_EQ(a80.profile, "A100-80GB");
    EXPECT_NEAR(a80.total_savings_ms, (0.2121 - 0.0697) * 4.0 * 1000, 1e-6);
    EXPECT_NEAR(a80.total_savings_ms, 569.6, 1e-6);
    double lo = 1e9, hi = 0.0;
    for (const auto &r : rows)
        if (r.source == kMem) {
            lo = std::min(lo, r.ours_ms_per_token);
            hi = std::max(hi, r.ours_ms_per_token);
        }
    EXPECT_NEAR(lo, 0.2788, 1e-9);
    EXPECT_NEAR(hi, 0.66215, 1e-9);
}

TEST(Savings, EqualAccuraciesGiveZeroDelta) {
    for (const auto &r : savings_report(0.8, 0.8, builtin_profiles(), 1000)) {
        EXPECT_EQ(r.delta_ms_per_token, 0.0);
        EXPECT_EQ(r.total_savings_ms, 0.0);
        EXPECT_EQ(r.zero_latency_fraction_delta, 0.0);
    }
}

TEST(Savings, PerfectAccuracyGivesZeroLoad) {
    for (const auto &r : savings_report(1.0, 0.5, builtin_profiles(), 10)) EXPECT_EQ(r.ours_ms_per_token, 0.0);
}

TEST(IoOverhead, Examples) {
    const auto ten = overprov_io_overhead(10, 6, 16.5);
    EXPECT_NEAR(ten.overhead_fraction, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(ten.extra_mb, 66.0, 1e-12);
    EXPECT_EQ(overprov_io_overhead(6, 6, 16.5).overhead_fraction, 0.0);
    EXPECT_DOUBLE_EQ(overprov_io_overhead(3, 2, 1.0).overhead_fraction, 0.5);
    EXPECT_THROW(overprov_io_overhead(5, 6, 16.5), ArgumentError);
}

TEST(Writers, CsvAndTable) {
    const auto rows = savings_report(0.9303, 0.7879, {builtin_profile("V100-32GB")}, 1000);
    std::ostringstream csv;
    write_savings_csv(csv, rows);
    EXPECT_NE(csv.str().find("V100-32GB,memory,9.5,"), std::string::npos);
    std::ostringstream table;
    write_savings_table(table, rows);
    EXPECT_NE(table.str().find("1352.800"), std::string::npos);
    std::ostringstream sched;
    const auto p = builtin_profile("V100-32GB");
    write_schedule_csv(sched, p.name, ScheduleMode::miss(1), kMem, schedule(p, 6, ScheduleMode::miss(1), kMem));
    EXPECT_NE(sched.str().find("V100-32GB,prefetch_miss,1,memory,emergency_load,5,"), std::string::npos);
}

}  // namespace
}  // namespace moepa
