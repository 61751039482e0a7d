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

// Closed-form schedule of one MoE transformer layer for one token.
//
// Main path (always sequential):
//
//   pre_norm -> attention -> post_norm -> select -> expert compute
//
// The predictor runs right after pre_norm, in parallel with attention.
// Expert loads take `per-expert load time` each and run on
// parallel_load_slots slots, so n loads need ceil(n / slots) waves.
//
//   NoPrefetch      all k loads start when selection ends; compute starts
//                   once every expert is resident.
//   PrefetchAllHit  the k predicted experts start loading when the predictor
//                   finishes; compute starts at max(selection end, loads done).
//   PrefetchMiss(m) k - m hits load as above. The m misses are emergency
//                   loads issued at selection end on the earliest free slot,
//                   and each missed expert is computed as soon as it arrives
//                   after the hits (per-expert compute = t_expert_compute / k
//                   unless a split is given).
//
// expert_stall is the idle time of the expert-compute stage after selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "moepa/errors.hpp"

namespace moepa {

struct StageStddev {
    double pre_norm = 0, attn = 0, post_norm = 0, select = 0, expert_compute = 0;
};

/// Per-stage timings in milliseconds.
struct HardwareProfile {
    std::string name;
    double t_pre_norm = 0;
    double t_attn = 0;
    double t_post_norm = 0;
    double t_select = 0;
    double t_expert_compute = 0;
    double t_load_disk_per_expert = 0;
    double t_load_mem_per_expert = 0;
    double t_predict = 0.15;
    int parallel_load_slots = 6;
    /// Stored for reference; the analytic schedule uses means only.
    StageStddev stddev;

    void validate() const {
        for (double t : {t_pre_norm, t_attn, t_post_norm, t_select, t_expert_compute, t_load_disk_per_expert,
                         t_load_mem_per_expert, t_predict})
            if (!(t >= 0.0) || !std::isfinite(t)) throw ConfigError("profile " + name + ": times must be finite and >= 0");
        if (!(t_attn > 0.0)) throw ConfigError("profile " + name + ": t_attn must be > 0");
        if (parallel_load_slots < 1) throw ConfigError("profile " + name + ": parallel_load_slots must be >= 1");
    }
};

enum class LoadSource { Disk, Memory };

inline const char *to_string(LoadSource s) { return s == LoadSource::Disk ? "disk" : "memory"; }

inline double per_expert_load_ms(const HardwareProfile &p, LoadSource source) {
    return source == LoadSource::Disk ? p.t_load_disk_per_expert : p.t_load_mem_per_expert;
}

/// Number of experts behind the built-in load measurements.
inline constexpr int kMeasuredExperts = 6;

/// Time to load `experts` experts back to back (the whole-token load cost).
inline double full_load_ms(const HardwareProfile &p, LoadSource source, int experts = kMeasuredExperts) {
    return per_expert_load_ms(p, source) * experts;
}

/// Built-in profiles: stage means of a DeepSeek-V2-Lite layer and the cost of
/// loading its 6 routed experts (99 MB) from disk or pinned host memory.
inline std::vector<HardwareProfile> builtin_profiles() {
    auto make = [](std::string name, double pre, double attn, double post, double sel, double comp, double disk6,
                   double mem6, StageStddev sd) {
        HardwareProfile p;
        p.name = std::move(name);
        p.t_pre_norm = pre;
        p.t_attn = attn;
        p.t_post_norm = post;
        p.t_select = sel;
        p.t_expert_compute = comp;
        p.t_load_disk_per_expert = disk6 / kMeasuredExperts;
        p.t_load_mem_per_expert = mem6 / kMeasuredExperts;
        p.stddev = sd;
        return p;
    };
    return {
        make("V100-32GB", 0.1292, 1.1279, 0.1292, 0.1432, 10.3075, 48.1, 9.5, {0.0120, 0.0388, 0.0120, 0.0138, 1.7038}),
        make("A100-40GB", 0.0771, 0.7607, 0.0823, 0.0972, 6.1970, 49.8, 8.5, {0.0007, 0.0069, 0.0012, 0.0025, 1.0668}),
        make("A100-80GB", 0.0750, 0.7385, 0.0797, 0.1018, 6.8111, 33.5, 4.0, {0.0015, 0.0074, 0.0040, 0.0039, 1.1864}),
    };
}

inline HardwareProfile builtin_profile(const std::string &name) {
    for (auto &p : builtin_profiles())
        if (p.name == name) return p;
    throw ConfigError("unknown hardware profile '" + name + "'");
}

/// Size of one expert's weights.
struct ExpertBlobSpec {
    // 3 projections x 2048 hidden x 1408 intermediate (DeepSeek-V2-Lite routed expert).
    std::uint64_t params_per_expert = 8'650'752;
    int bytes_per_param = 2;
    int experts_per_token = 6;

    /// MiB per expert.
    double per_expert_mb() const {
        return static_cast<double>(params_per_expert) * bytes_per_param / (1024.0 * 1024.0);
    }

    bool consistent_with(double stated_mb, double tolerance = 0.02) const {
        return std::abs(per_expert_mb() - stated_mb) <= tolerance * stated_mb;
    }
};

struct ScheduleMode {
    enum class Kind { NoPrefetch, PrefetchAllHit, PrefetchMiss };
    Kind kind = Kind::NoPrefetch;
    int miss_count = 0;

    static ScheduleMode no_prefetch() { return {Kind::NoPrefetch, 0}; }
    static ScheduleMode all_hit() { return {Kind::PrefetchAllHit, 0}; }
    static ScheduleMode miss(int count) { return {Kind::PrefetchMiss, count}; }
};

inline const char *to_string(ScheduleMode::Kind k) {
    switch (k) {
        case ScheduleMode::Kind::NoPrefetch:
            return "no_prefetch";
        case ScheduleMode::Kind::PrefetchAllHit:
            return "prefetch_all_hit";
        case ScheduleMode::Kind::PrefetchMiss:
            return "prefetch_miss";
    }
    return "?";
}

enum class Stage { PreNorm, Attention, PostNorm, Select, Predict, Load, EmergencyLoad, ExpertCompute };

inline const char *to_string(Stage s) {
    switch (s) {
        case Stage::PreNorm:
            return "pre_norm";
        case Stage::Attention:
            return "attention";
        case Stage::PostNorm:
            return "post_norm";
        case Stage::Select:
            return "select";
        case Stage::Predict:
            return "predict";
        case Stage::Load:
            return "load";
        case Stage::EmergencyLoad:
            return "emergency_load";
        case Stage::ExpertCompute:
            return "expert_compute";
    }
    return "?";
}

struct StageInterval {
    Stage stage;
    int expert = -1;  // slot in the token's expert list for loads/compute
    double start = 0;
    double end = 0;
};

struct ScheduleResult {
    std::vector<StageInterval> stages;
    double selection_end = 0;
    double token_latency = 0;
    double expert_stall = 0;
};

/// Schedules one token. `compute_share`, when non-empty, gives each expert's
/// fraction of t_expert_compute (length k, sums to 1); default is an even split.
inline ScheduleResult schedule(const HardwareProfile &profile, int k, ScheduleMode mode, LoadSource source,
                               const std::vector<double> &compute_share = {}) {
    profile.validate();
    if (k < 1) throw ArgumentError("schedule: k must be >= 1");
    if (mode.kind == ScheduleMode::Kind::PrefetchMiss && (mode.miss_count < 0 || mode.miss_count > k))
        throw ArgumentError("schedule: miss_count " + std::to_string(mode.miss_count) + " outside [0, k]");
    std::vector<double> share = compute_share;
    if (share.empty()) share.assign(static_cast<std::size_t>(k), 1.0 / k);
    if (static_cast<int>(share.size()) != k) throw ArgumentError("schedule: compute_share must have k entries");

    ScheduleResult r;
    auto add = [&](Stage s, int expert, double start, double len) {
        r.stages.push_back({s, expert, start, start + len});
        return start + len;
    };
    double t = add(Stage::PreNorm, -1, 0.0, profile.t_pre_norm);
    const double pre_end = t;
    t = add(Stage::Attention, -1, t, profile.t_attn);
    t = add(Stage::PostNorm, -1, t, profile.t_post_norm);
    const double sel_end = add(Stage::Select, -1, t, profile.t_select);
    r.selection_end = sel_end;

    const double load = per_expert_load_ms(profile, source);
    const int slots = profile.parallel_load_slots;

    auto compute_from = [&](double start, int first, int count) {
        for (int e = first; e < first + count; ++e)
            start = add(Stage::ExpertCompute, e, start, share[static_cast<std::size_t>(e)] * profile.t_expert_compute);
        return start;
    };

    // Stall is summed from idle gaps so a stall-free schedule gives exactly 0.
    double end = 0.0, stall = 0.0;
    if (mode.kind == ScheduleMode::Kind::NoPrefetch) {
        double ready = sel_end;
        for (int e = 0; e < k; ++e) ready = std::max(ready, add(Stage::Load, e, sel_end + (e / slots) * load, load));
        stall = ready - sel_end;
        end = compute_from(ready, 0, k);
    } else {
        const int misses = mode.kind == ScheduleMode::Kind::PrefetchMiss ? mode.miss_count : 0;
        const int hits = k - misses;
        const double predict_end = add(Stage::Predict, -1, pre_end, profile.t_predict);
        std::vector<double> slot_free(static_cast<std::size_t>(slots), sel_end);
        double hits_ready = sel_end;
        for (int e = 0; e < hits; ++e) {
            const double done = add(Stage::Load, e, predict_end + (e / slots) * load, load);
            hits_ready = std::max(hits_ready, done);
            auto &f = slot_free[static_cast<std::size_t>(e % slots)];
            f = std::max(f, done);
        }
        std::vector<double> miss_ready;
        for (int e = hits; e < k; ++e) {
            auto it = std::min_element(slot_free.begin(), slot_free.end());
            *it = add(Stage::EmergencyLoad, e, *it, load);
            miss_ready.push_back(*it);
        }
        stall = hits_ready - sel_end;
        double cursor = compute_from(hits_ready, 0, hits);
        for (int e = hits; e < k; ++e) {
            const double start = std::max(cursor, miss_ready[static_cast<std::size_t>(e - hits)]);
            stall += start - cursor;
            cursor = compute_from(start, e, 1);
        }
        end = cursor;
    }
    r.token_latency = end;
    r.expert_stall = stall;
    return r;
}

/// Expected per-token expert loading time when a misprediction costs a full load.
inline double expected_loading_time(double accuracy, double full_load) {
    if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw ArgumentError("expected_loading_time: accuracy outside [0,1]");
    return (1.0 - accuracy) * full_load;
}

struct SavingsRow {
    std::string profile;
    LoadSource source = LoadSource::Memory;
    double full_load_ms = 0;
    double ours_ms_per_token = 0;
    double baseline_ms_per_token = 0;
    double delta_ms_per_token = 0;
    double total_savings_ms = 0;
    double zero_latency_fraction_delta = 0;
};

/// Expected loading time under two predictor accuracies for every profile
/// and load source, with savings accumulated over n_tokens.
inline std::vector<SavingsRow> savings_report(double acc_ours, double acc_baseline,
                                              const std::vector<HardwareProfile> &profiles, std::uint64_t n_tokens,
                                              int experts = kMeasuredExperts) {
    std::vector<SavingsRow> rows;
    for (const auto &p : profiles) {
        p.validate();
        for (auto source : {LoadSource::Memory, LoadSource::Disk}) {
            SavingsRow row;
            row.profile = p.name;
            row.source = source;
            row.full_load_ms = full_load_ms(p, source, experts);
            row.ours_ms_per_token = expected_loading_time(acc_ours, row.full_load_ms);
            row.baseline_ms_per_token = expected_loading_time(acc_baseline, row.full_load_ms);
            row.delta_ms_per_token = row.baseline_ms_per_token - row.ours_ms_per_token;
            row.total_savings_ms = row.delta_ms_per_token * static_cast<double>(n_tokens);
            row.zero_latency_fraction_delta = acc_ours - acc_baseline;
            rows.push_back(row);
        }
    }
    return rows;
}

struct IoOverhead {
    double extra_mb = 0;
    double overhead_fraction = 0;
};

/// Extra transfer volume of prefetching m experts when k are needed.
inline IoOverhead overprov_io_overhead(int m, int k, double per_expert_mb) {
    if (k < 1) throw ArgumentError("overprov_io_overhead: k must be >= 1");
    if (m < k) throw ArgumentError("overprov_io_overhead: m=" + std::to_string(m) + " is smaller than k=" + std::to_string(k));
    return {(m - k) * per_expert_mb, static_cast<double>(m - k) / k};
}

inline void write_savings_csv(std::ostream &out, const std::vector<SavingsRow> &rows) {
    out << "profile,source,full_load_ms,ours_ms_per_token,baseline_ms_per_token,delta_ms_per_token,total_savings_ms,"
           "zero_latency_fraction_delta\n"
        << std::setprecision(10);
    for (const auto &r : rows)
        out << r.profile << ',' << to_string(r.source) << ',' << r.full_load_ms << ',' << r.ours_ms_per_token << ','
            << r.baseline_ms_per_token << ',' << r.delta_ms_per_token << ',' << r.total_savings_ms << ','
            << r.zero_latency_fraction_delta << '\n';
}

inline void write_savings_table(std::ostream &out, const std::vector<SavingsRow> &rows) {
    out << std::left << std::setw(12) << "profile" << std::setw(8) << "source" << std::right << std::setw(10)
        << "load ms" << std::setw(12) << "ours/tok" << std::setw(12) << "base/tok" << std::setw(12) << "delta/tok"
        << std::setw(14) << "total saved" << '\n';
    out << std::fixed << std::setprecision(3);
    for (const auto &r : rows)
        out << std::left << std::setw(12) << r.profile << std::setw(8) << to_string(r.source) << std::right
            << std::setw(10) << r.full_load_ms << std::setw(12) << r.ours_ms_per_token << std::setw(12)
            << r.baseline_ms_per_token << std::setw(12) << r.delta_ms_per_token << std::setw(14) << r.total_savings_ms
            << '\n';
    out.unsetf(std::ios::fixed);
}

inline void write_schedule_csv(std::ostream &out, const std::string &profile, ScheduleMode mode, LoadSource source,
                               const ScheduleResult &r) {
    out << std::setprecision(10);
    for (const auto &s : r.stages)
        out << profile << ',' << to_string(mode.kind) << ',' << mode.miss_count << ',' << to_string(source) << ','
            << to_string(s.stage) << ',' << s.expert << ',' << s.start << ',' << s.end << '\n';
}

}  // namespace moepa
