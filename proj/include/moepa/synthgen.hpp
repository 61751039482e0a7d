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

// Synthetic router traces from a configurable teacher layer, and the MOEPA1
// binary trace format.
//
// Trace file layout (all little-endian):
//
//   offset  size        field
//   0       6           magic "MOEPA1"
//   6       4           u32 version (= 1)
//   10      4           u32 d
//   14      4           u32 E
//   18      4           u32 k
//   22      4           u32 n (record count)
//   26      n * rec     records
//
//   record: d x f32 activation, E x f32 true_scores, k x u32 true_topk (ascending)

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "moepa/binary_io.hpp"
#include "moepa/core.hpp"
#include "moepa/rng.hpp"

namespace moepa {

enum class MixKind { Identity, LinearMix, NonlinearMix };

inline const char *to_string(MixKind kind) {
    switch (kind) {
        case MixKind::Identity:
            return "identity";
        case MixKind::LinearMix:
            return "linear";
        case MixKind::NonlinearMix:
            return "nonlinear";
    }
    return "?";
}

/// Stand-in for the self-attention block between the pre-attention
/// activation and the router input.
struct AttentionTransform {
    MixKind kind = MixKind::Identity;
    Matrix mix;    // LinearMix: d x d
    Matrix inner;  // NonlinearMix: h x d
    Matrix outer;  // NonlinearMix: d x h

    Vector apply(const Vector &x) const {
        switch (kind) {
            case MixKind::Identity:
                return x;
            case MixKind::LinearMix:
                return mix * x;
            case MixKind::NonlinearMix:
                return outer * (inner * x).array().tanh().matrix();
        }
        return x;
    }
};

struct TeacherSpec {
    RouterSpec router;
    AttentionTransform attention;
    bool post_norm = true;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        router.validate();
        const int d = router.d;
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("teacher: noise_sigma must be >= 0");
        switch (attention.kind) {
            case MixKind::Identity:
                break;
            case MixKind::LinearMix:
                if (attention.mix.rows() != d || attention.mix.cols() != d || !attention.mix.allFinite())
                    throw ConfigError("teacher: LinearMix matrix must be finite d x d");
                break;
            case MixKind::NonlinearMix:
                if (attention.inner.cols() != d || attention.outer.rows() != d ||
                    attention.inner.rows() != attention.outer.cols() || attention.inner.rows() <= 0 ||
                    !attention.inner.allFinite() || !attention.outer.allFinite())
                    throw ConfigError("teacher: NonlinearMix maps must be h x d and d x h");
                break;
        }
    }
};

/// Knobs for building a random teacher.
struct TeacherOptions {
    int d = 64;
    int E = 16;
    int k = 2;
    MixKind mix = MixKind::Identity;
    int mix_hidden = 64;
    bool post_norm = true;
    double noise_sigma = 0.0;
    /// Standard deviation of the router logits for a unit-variance input.
    double gate_scale = 1.0;
    std::uint64_t seed = 1;
};

namespace detail {

inline Matrix gaussian_matrix(int rows, int cols, double stddev, CounterRng &rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = stddev * rng.normal();
    return m;
}

enum : std::uint64_t { kStreamGate = 1, kStreamMix = 2, kStreamSamples = 3 };

}  // namespace detail

/// Builds a teacher whose random matrices are a pure function of the options.
inline TeacherSpec make_teacher(const TeacherOptions &opt) {
    TeacherSpec t;
    t.router.d = opt.d;
    t.router.E = opt.E;
    t.router.k = opt.k;
    t.post_norm = opt.post_norm;
    t.noise_sigma = opt.noise_sigma;
    t.seed = opt.seed;
    if (opt.d <= 0 || opt.E <= 0) throw ConfigError("teacher: d and E must be positive");

    CounterRng gate_rng(opt.seed, detail::kStreamGate);
    t.router.gate_weights = detail::gaussian_matrix(opt.E, opt.d, opt.gate_scale / std::sqrt(opt.d), gate_rng);

    CounterRng mix_rng(opt.seed, detail::kStreamMix);
    t.attention.kind = opt.mix;
    if (opt.mix == MixKind::LinearMix) {
        t.attention.mix = detail::gaussian_matrix(opt.d, opt.d, 1.0 / std::sqrt(opt.d), mix_rng);
    } else if (opt.mix == MixKind::NonlinearMix) {
        if (opt.mix_hidden <= 0) throw ConfigError("teacher: mix_hidden must be positive");
        t.attention.inner = detail::gaussian_matrix(opt.mix_hidden, opt.d, 1.0 / std::sqrt(opt.d), mix_rng);
        t.attention.outer = detail::gaussian_matrix(opt.d, opt.mix_hidden, 1.0 / std::sqrt(opt.mix_hidden), mix_rng);
    }
    t.validate();
    return t;
}

/// Ground truth for an activation that is already float-representable.
inline TraceSample label_sample(const TeacherSpec &teacher, std::vector<float> activation, CounterRng *noise_rng) {
    const int d = teacher.router.d;
    Vector x(d);
    for (int i = 0; i < d; ++i) x[i] = activation[static_cast<std::size_t>(i)];
    Vector post = teacher.attention.apply(x);
    if (teacher.noise_sigma > 0.0 && noise_rng != nullptr)
        for (int i = 0; i < d; ++i) post[i] += teacher.noise_sigma * noise_rng->normal();
    std::vector<double> router_in(post.data(), post.data() + post.size());
    if (teacher.post_norm) router_in = layer_norm(router_in);
    const auto scores = gate_forward(teacher.router, router_in);

    TraceSample s;
    s.activation = std::move(activation);
    s.true_scores.assign(scores.begin(), scores.end());
    s.true_topk = top_k(s.true_scores, static_cast<std::size_t>(teacher.router.k));
    return s;
}

/// Generates samples [first_index, first_index + n). Each sample's randomness
/// is keyed by (seed, index), so disjoint index ranges give independent
/// datasets and any range can be regenerated on its own.
inline std::vector<TraceSample> generate_dataset(const TeacherSpec &teacher, std::size_t n,
                                                 std::uint64_t first_index = 0) {
    teacher.validate();
    if (n == 0) throw ArgumentError("generate_dataset: n must be >= 1");
    const std::uint64_t sample_key = derive_key(teacher.seed, detail::kStreamSamples);
    std::vector<TraceSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        CounterRng rng(sample_key, first_index + i);
        std::vector<float> x(static_cast<std::size_t>(teacher.router.d));
        for (auto &v : x) v = static_cast<float>(rng.normal());
        out.push_back(label_sample(teacher, std::move(x), &rng));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trace file format

inline constexpr std::string_view kTraceMagic = "MOEPA1";
inline constexpr std::uint32_t kTraceVersion = 1;

struct TraceFile {
    std::uint32_t version = kTraceVersion;
    std::uint32_t d = 0;
    std::uint32_t E = 0;
    std::uint32_t k = 0;
    std::vector<TraceSample> records;

    bool operator==(const TraceFile &) const = default;
};

/// Empty string when the sample satisfies every TraceSample invariant,
/// otherwise a description of the first violation.
inline std::string check_sample(const TraceSample &s, std::size_t d, std::size_t E, std::size_t k) {
    if (s.activation.size() != d) return "activation length differs from d";
    if (s.true_scores.size() != E) return "true_scores length differs from E";
    if (s.true_topk.size() != k) return "true_topk size differs from k";
    double total = 0.0;
    for (float v : s.activation)
        if (!std::isfinite(v)) return "non-finite activation";
    for (float v : s.true_scores) {
        if (!(v >= 0.0f && v <= 1.0f)) return "score outside [0,1]";
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-5) return "scores do not sum to 1";
    for (std::size_t i = 0; i < s.true_topk.size(); ++i) {
        if (s.true_topk[i] >= E) return "top-k index out of range";
        if (i > 0 && s.true_topk[i] <= s.true_topk[i - 1]) return "top-k indices not strictly ascending";
    }
    if (top_k(s.true_scores, k) != s.true_topk) return "true_topk is not the top-k of true_scores";
    return {};
}

inline Bytes encode_trace(std::span<const TraceSample> samples) {
    if (samples.empty()) throw ArgumentError("write_trace: no samples");
    const std::size_t d = samples[0].activation.size();
    const std::size_t E = samples[0].true_scores.size();
    const std::size_t k = samples[0].true_topk.size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto why = check_sample(samples[i], d, E, k);
        if (!why.empty()) throw ArgumentError("write_trace: record " + std::to_string(i) + ": " + why);
    }
    ByteWriter w;
    w.raw(kTraceMagic);
    w.u32(kTraceVersion);
    w.u32(static_cast<std::uint32_t>(d));
    w.u32(static_cast<std::uint32_t>(E));
    w.u32(static_cast<std::uint32_t>(k));
    w.u32(static_cast<std::uint32_t>(samples.size()));
    for (const auto &s : samples) {
        for (float v : s.activation) w.f32(v);
        for (float v : s.true_scores) w.f32(v);
        for (auto idx : s.true_topk) w.u32(idx);
    }
    return std::move(w).bytes();
}

inline TraceFile decode_trace(std::span<const std::uint8_t> data) {
    ByteReader r(data);
    if (data.size() < kTraceMagic.size() || r.raw(kTraceMagic.size()) != kTraceMagic)
        throw ParseError(ParseErrorKind::BadMagic, "expected \"MOEPA1\"");
    TraceFile f;
    f.version = r.u32();
    if (f.version != kTraceVersion)
        throw ParseError(ParseErrorKind::VersionMismatch, "file version " + std::to_string(f.version) +
                                                             ", reader supports " + std::to_string(kTraceVersion));
    f.d = r.u32();
    f.E = r.u32();
    f.k = r.u32();
    const std::uint32_t n = r.u32();
    if (f.d == 0 || f.E == 0 || f.k == 0 || f.k > f.E)
        throw ParseError(ParseErrorKind::InvariantViolation, "header requires d, E >= 1 and 1 <= k <= E");
    const std::size_t record_bytes = 4u * (std::size_t{f.d} + f.E + f.k);
    if (r.remaining() < record_bytes * n)
        throw ParseError(ParseErrorKind::Truncated, "header declares " + std::to_string(n) + " records, " +
                                                        std::to_string(r.remaining() / record_bytes) + " present");
    if (r.remaining() > record_bytes * n)
        throw ParseError(ParseErrorKind::TrailingData,
                         std::to_string(r.remaining() - record_bytes * n) + " bytes after the last record");
    f.records.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        auto &s = f.records[i];
        s.activation.resize(f.d);
        s.true_scores.resize(f.E);
        s.true_topk.resize(f.k);
        for (auto &v : s.activation) v = r.f32();
        for (auto &v : s.true_scores) v = r.f32();
        for (auto &v : s.true_topk) v = r.u32();
        const auto why = check_sample(s, f.d, f.E, f.k);
        if (!why.empty()) throw ParseError(ParseErrorKind::InvariantViolation, "record " + std::to_string(i) + ": " + why);
    }
    return f;
}

inline void write_trace(const std::filesystem::path &path, std::span<const TraceSample> samples) {
    write_file(path, encode_trace(samples));
}

inline TraceFile read_trace(const std::filesystem::path &path) { return decode_trace(read_file(path)); }

}  // namespace moepa
