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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "moepa/synthgen.hpp"
#include "support/oracles.hpp"

namespace moepa {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string &name) {
    const auto dir = fs::path(::testing::TempDir()) / "moepa_synthgen";
    fs::create_directories(dir);
    return dir / name;
}

TeacherSpec small_teacher(MixKind mix = MixKind::Identity, double noise = 0.0, std::uint64_t seed = 5) {
    TeacherOptions o;
    o.d = 16;
    o.E = 8;
    o.k = 2;
    o.mix = mix;
    o.mix_hidden = 12;
    o.noise_sigma = noise;
    o.seed = seed;
    return make_teacher(o);
}

ParseErrorKind parse_kind(const Bytes &bytes) {
    try {
        decode_trace(bytes);
    } catch (const ParseError &e) {
        return e.kind();
    }
    ADD_FAILURE() << "decode_trace accepted corrupted input";
    return ParseErrorKind::InvariantViolation;
}

void put_u32(Bytes &b, std::size_t offset, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

constexpr std::size_t kHeaderBytes = 6 + 5 * 4;

TEST(Teacher, RouterGateRecoversLabelsExactly) {
    const auto teacher = small_teacher();
    const auto data = generate_dataset(teacher, 2000);
    std::size_t hits = 0;
    for (const auto &s : data) {
        const auto normed = layer_norm(to_double(s.activation));
        if (top_k(gate_logits(teacher.router, normed), 2) == s.true_topk) ++hits;
    }
    EXPECT_EQ(hits, data.size());
}

TEST(Teacher, SameSeedIsByteIdentical) {
    for (auto mix : {MixKind::Identity, MixKind::LinearMix, MixKind::NonlinearMix}) {
        const auto a = encode_trace(generate_dataset(small_teacher(mix, 0.3), 100));
        const auto b = encode_trace(generate_dataset(small_teacher(mix, 0.3), 100));
        EXPECT_EQ(a, b);
        const auto c = encode_trace(generate_dataset(small_teacher(mix, 0.3, 6), 100));
        EXPECT_NE(a, c);
    }
}

TEST(Teacher, IndexRangesMatchSerialGeneration) {
    const auto teacher = small_teacher(MixKind::LinearMix, 0.1);
    const auto all = generate_dataset(teacher, 50);
    const auto tail = generate_dataset(teacher, 20, 30);
    for (std::size_t i = 0; i < tail.size(); ++i) EXPECT_EQ(tail[i], all[30 + i]);
}

TEST(Teacher, LabelsConsistentAndNormalized) {
    for (auto mix : {MixKind::Identity, MixKind::LinearMix, MixKind::NonlinearMix}) {
        for (double noise : {0.0, 0.5}) {
            for (const auto &s : generate_dataset(small_teacher(mix, noise), 300)) {
                double total = 0.0;
                for (float v : s.true_scores) total += v;
                EXPECT_NEAR(total, 1.0, 1e-5);
                EXPECT_EQ(top_k(s.true_scores, 2), s.true_topk);
                EXPECT_EQ(check_sample(s, 16, 8, 2), "");
            }
        }
    }
}

TEST(Teacher, InvalidOptions) {
    TeacherOptions o;
    o.k = 20;
    EXPECT_THROW(make_teacher(o), ConfigError);
    TeacherOptions neg;
    neg.noise_sigma = -1.0;
    EXPECT_THROW(make_teacher(neg), ConfigError);
    EXPECT_THROW(generate_dataset(small_teacher(), 0), ArgumentError);
    auto t = small_teacher(MixKind::LinearMix);
    t.attention.mix.resize(3, 3);
    EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Teacher, RandomPredictorBaselineIsOneOver120) {
    // C(16,2) = 120 equally likely pairs.
    const double mc = testing::monte_carlo_random_exact_match(16, 2, 100000, 99);
    EXPECT_NEAR(mc, 1.0 / 120.0, 0.002);
}

// Least squares from layer_norm(X) to log-scores is an exact linear problem
// (log-softmax differs from W x by a per-sample constant), so the fitted map
// must reproduce every label.
TEST(Teacher, LeastSquaresOracleRecoversIdentityTeacher) {
    const auto teacher = small_teacher();
    const auto data = generate_dataset(teacher, 400);
    Matrix X(400, 16), Y(400, 8);
    for (int i = 0; i < 400; ++i) {
        const auto normed = layer_norm(to_double(data[static_cast<std::size_t>(i)].activation));
        for (int j = 0; j < 16; ++j) X(i, j) = normed[static_cast<std::size_t>(j)];
        for (int j = 0; j < 8; ++j) Y(i, j) = std::log(static_cast<double>(data[static_cast<std::size_t>(i)].true_scores[static_cast<std::size_t>(j)]));
    }
    // layer_norm rows sum to zero, so X has rank d-1; take the min-norm solution.
    const Matrix W = X.completeOrthogonalDecomposition().solve(Y);
    const auto test = generate_dataset(teacher, 1000, 400);
    std::size_t hits = 0;
    for (const auto &s : test) {
        const auto normed = layer_norm(to_double(s.activation));
        const Eigen::Map<const Eigen::RowVectorXd> x(normed.data(), 16);
        const Eigen::RowVectorXd z = x * W;
        if (top_k(std::vector<double>(z.data(), z.data() + 8), 2) == s.true_topk) ++hits;
    }
    EXPECT_GE(static_cast<double>(hits) / 1000.0, 0.999);
}

TEST(TraceFormat, RoundTripThroughFile) {
    const auto samples = generate_dataset(small_teacher(MixKind::NonlinearMix, 0.2), 3);
    const auto path = temp_path("three.trace");
    write_trace(path, samples);
    const auto f = read_trace(path);
    EXPECT_EQ(f.version, kTraceVersion);
    EXPECT_EQ(f.d, 16u);
    EXPECT_EQ(f.E, 8u);
    EXPECT_EQ(f.k, 2u);
    EXPECT_EQ(f.records, samples);
    EXPECT_EQ(fs::file_size(path), kHeaderBytes + 3 * 4 * (16 + 8 + 2));
}

TEST(TraceFormat, LittleEndianLayout) {
    const auto samples = generate_dataset(small_teacher(), 1);
    const auto b = encode_trace(samples);
    EXPECT_EQ(std::string(b.begin(), b.begin() + 6), "MOEPA1");
    EXPECT_EQ(b[6], 1);
    EXPECT_EQ(b[7], 0);
    EXPECT_EQ(b[10], 16);  // d
    EXPECT_EQ(b[14], 8);   // E
    EXPECT_EQ(b[18], 2);   // k
    EXPECT_EQ(b[22], 1);   // n
    float first = 0.0f;
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[kHeaderBytes + i]) << (8 * i);
    std::memcpy(&first, &bits, 4);
    EXPECT_EQ(first, samples[0].activation[0]);
}

TEST(TraceFormat, BadMagic) {
    auto b = encode_trace(generate_dataset(small_teacher(), 3));
    b[0] = 'X';
    EXPECT_EQ(parse_kind(b), ParseErrorKind::BadMagic);
    EXPECT_EQ(parse_kind(Bytes{'M', 'O'}), ParseErrorKind::BadMagic);
    try {
        decode_trace(b);
    } catch (const ParseError &e) {
        EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
    }
}

TEST(TraceFormat, VersionMismatch) {
    auto b = encode_trace(generate_dataset(small_teacher(), 3));
    put_u32(b, 6, 2);
    EXPECT_EQ(parse_kind(b), ParseErrorKind::VersionMismatch);
}

TEST(TraceFormat, HeaderSaysTenButNinePresent) {
    auto b = encode_trace(generate_dataset(small_teacher(), 9));
    put_u32(b, 22, 10);
    EXPECT_EQ(parse_kind(b), ParseErrorKind::Truncated);
    try {
        decode_trace(b);
    } catch (const ParseError &e) {
        EXPECT_NE(std::string(e.what()).find("truncated file"), std::string::npos);
    }
}

TEST(TraceFormat, TruncatedHeader) {
    auto b = encode_trace(generate_dataset(small_teacher(), 1));
    b.resize(12);
    EXPECT_EQ(parse_kind(b), ParseErrorKind::Truncated);
}

TEST(TraceFormat, TrailingData) {
    auto b = encode_trace(generate_dataset(small_teacher(), 2));
    b.push_back(0);
    EXPECT_EQ(parse_kind(b), ParseErrorKind::TrailingData);
}

TEST(TraceFormat, InvariantViolations) {
    const auto samples = generate_dataset(small_teacher(), 2);
    const std::size_t rec0 = kHeaderBytes;
    const std::size_t topk_off = rec0 + 4 * (16 + 8);
    {
        auto b = encode_trace(samples);
        put_u32(b, topk_off, 8);  // index out of range
        EXPECT_EQ(parse_kind(b), ParseErrorKind::InvariantViolation);
    }
    {
        auto b = encode_trace(samples);
        // Swap the two indices: no longer ascending.
        const auto i0 = samples[0].true_topk[0], i1 = samples[0].true_topk[1];
        put_u32(b, topk_off, i1);
        put_u32(b, topk_off + 4, i0);
        EXPECT_EQ(parse_kind(b), ParseErrorKind::InvariantViolation);
    }
    {
        auto b = encode_trace(samples);
        float big = 2.0f;
        std::uint32_t bits;
        std::memcpy(&bits, &big, 4);
        put_u32(b, rec0 + 4 * 16, bits);  // score > 1
        EXPECT_EQ(parse_kind(b), ParseErrorKind::InvariantViolation);
    }
    {
        auto b = encode_trace(samples);
        put_u32(b, 18, 9);  // k > E
        EXPECT_EQ(parse_kind(b), ParseErrorKind::InvariantViolation);
    }
    {
        // Stored top-k is a valid set but not the top-k of the scores.
        auto s = samples;
        ExpertSet wrong;
        for (ExpertIndex j = 0; j < 8 && wrong.size() < 2; ++j)
            if (std::find(s[0].true_topk.begin(), s[0].true_topk.end(), j) == s[0].true_topk.end()) wrong.push_back(j);
        auto b = encode_trace(samples);
        put_u32(b, topk_off, wrong[0]);
        put_u32(b, topk_off + 4, wrong[1]);
        EXPECT_EQ(parse_kind(b), ParseErrorKind::InvariantViolation);
    }
}

TEST(TraceFormat, WriteRejectsBadInput) {
    EXPECT_THROW(encode_trace(std::vector<TraceSample>{}), ArgumentError);
    auto s = generate_dataset(small_teacher(), 2);
    s[1].activation.pop_back();
    EXPECT_THROW(encode_trace(s), ArgumentError);
    EXPECT_THROW(read_trace(temp_path("does_not_exist.trace")), IoError);
}

}  // namespace
}  // namespace moepa
