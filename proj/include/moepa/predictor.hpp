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

// Pre-attention expert predictors.
//
//   Arch1:  z = W2 * Dropout(GELU(BatchNorm(W1 x + b1))) + b2
//   Arch2:  z = W2 * SiLU(W1 x + b1) + b2
//
// GELU is the tanh approximation
//   gelu(u) = 0.5 u (1 + tanh(sqrt(2/pi) (u + 0.044715 u^3)))
// and SiLU(u) = u * sigmoid(u). Dropout is inverted (kept units scaled by
// 1/(1-p)) with a mask drawn from CounterRng keyed by (dropout_seed, step).
//
// Checkpoint layout (little-endian):
//   "MOEPM1", u32 arch (1 or 2), u32 d, u32 hidden, u32 E,
//   f64 w1[hidden][d], f64 b1[hidden], f64 w2[E][hidden], f64 b2[E],
//   Arch1 only: f64 gamma[hidden], beta[hidden], running_mean[hidden],
//               running_var[hidden], f64 momentum, f64 epsilon,
//               f64 dropout_rate, u64 dropout_seed

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moepa/binary_io.hpp"
#include "moepa/core.hpp"
#include "moepa/rng.hpp"

namespace moepa {

enum class Arch { Arch1, Arch2 };
enum class Mode { Train, Eval };

inline const char *to_string(Arch a) { return a == Arch::Arch1 ? "arch1" : "arch2"; }

struct BatchNormParams {
    Vector gamma;
    Vector beta;
    Vector running_mean;
    Vector running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;
};

struct PredictorModel {
    Arch arch = Arch::Arch2;
    Mode mode = Mode::Eval;
    int d = 0;
    int hidden = 2048;
    int E = 0;
    Matrix w1;  // hidden x d
    Vector b1;
    Matrix w2;  // E x hidden
    Vector b2;
    std::optional<BatchNormParams> bn;  // present iff Arch1
    double dropout_rate = 0.1;
    std::uint64_t dropout_seed = 0;

    void validate() const {
        if (d <= 0 || hidden <= 0 || E <= 0) throw ConfigError("predictor: d, hidden and E must be positive");
        if (w1.rows() != hidden || w1.cols() != d || b1.size() != hidden || w2.rows() != E || w2.cols() != hidden ||
            b2.size() != E)
            throw ConfigError("predictor: parameter shapes do not match (d, hidden, E)");
        if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite())
            throw DataError("predictor: non-finite parameter");
        if (bn.has_value() != (arch == Arch::Arch1)) throw ConfigError("predictor: batch-norm present iff Arch1");
        if (bn) {
            if (bn->gamma.size() != hidden || bn->beta.size() != hidden || bn->running_mean.size() != hidden ||
                bn->running_var.size() != hidden)
                throw ConfigError("predictor: batch-norm vectors must have length hidden");
            if (!bn->gamma.allFinite() || !bn->beta.allFinite() || !bn->running_mean.allFinite() ||
                !bn->running_var.allFinite())
                throw DataError("predictor: non-finite batch-norm state");
            if ((bn->running_var.array() < 0.0).any()) throw DataError("predictor: negative running variance");
            if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("predictor: dropout rate must be in [0,1)");
        }
    }

    /// Number of trainable parameters (batch-norm running statistics excluded).
    std::size_t parameter_count() const {
        std::size_t n = static_cast<std::size_t>(hidden) * (d + E) + hidden + E;
        if (arch == Arch::Arch1) n += 2 * static_cast<std::size_t>(hidden);
        return n;
    }
};

/// Kaiming-uniform fan-in initialization with negative slope sqrt(5), i.e.
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases, batch-norm scale 1 and shift 0.
inline PredictorModel make_predictor(Arch arch, int d, int hidden, int E, std::uint64_t seed) {
    if (d <= 0 || hidden <= 0 || E <= 0) throw ConfigError("predictor: d, hidden and E must be positive");
    PredictorModel m;
    m.arch = arch;
    m.d = d;
    m.hidden = hidden;
    m.E = E;
    CounterRng rng(seed, 0x1417);
    const double bound1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    m.w1.resize(hidden, d);
    for (Eigen::Index i = 0; i < m.w1.size(); ++i) m.w1.data()[i] = rng.uniform(-bound1, bound1);
    m.w2.resize(E, hidden);
    for (Eigen::Index i = 0; i < m.w2.size(); ++i) m.w2.data()[i] = rng.uniform(-bound2, bound2);
    m.b1 = Vector::Zero(hidden);
    m.b2 = Vector::Zero(E);
    if (arch == Arch::Arch1) {
        m.bn = BatchNormParams{Vector::Ones(hidden), Vector::Zero(hidden), Vector::Zero(hidden), Vector::Ones(hidden)};
    }
    m.dropout_seed = derive_key(seed, 0xD20F);
    return m;
}

/// Parameter gradients, shaped like the trainable parameters of a model.
struct Gradients {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
    Vector gamma;  // Arch1 only
    Vector beta;   // Arch1 only

    static Gradients zeros_like(const PredictorModel &m) {
        Gradients g;
        g.w1 = Matrix::Zero(m.hidden, m.d);
        g.b1 = Vector::Zero(m.hidden);
        g.w2 = Matrix::Zero(m.E, m.hidden);
        g.b2 = Vector::Zero(m.E);
        if (m.arch == Arch::Arch1) {
            g.gamma = Vector::Zero(m.hidden);
            g.beta = Vector::Zero(m.hidden);
        }
        return g;
    }

    bool all_finite() const {
        return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() && gamma.allFinite() &&
               beta.allFinite();
    }
};

/// Intermediates of a batched forward pass, consumed by backward.
struct ForwardTrace {
    Matrix input;       // N x d
    Matrix pre;         // N x hidden, W1 x + b1
    Matrix normalized;  // Arch1: (pre - mean) / sqrt(var + eps)
    Matrix bn_out;      // Arch1: gamma * normalized + beta
    Matrix mask;        // Arch1 Train: dropout multipliers (0 or 1/(1-p))
    Matrix hidden_out;  // N x hidden, input of the second linear layer
    Vector batch_mean;  // Arch1 Train
    Vector batch_var;   // Arch1 Train, biased
    Vector inv_std;     // Arch1
    bool train = false;
};

namespace detail {

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

inline double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

inline double gelu_grad(double u) {
    const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

inline double sigmoid(double u) {
    if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
}

inline double silu(double u) { return u * sigmoid(u); }

inline double silu_grad(double u) {
    const double s = sigmoid(u);
    return s * (1.0 + u * (1.0 - s));
}

}  // namespace detail

/// Batched forward pass: one row of `x` per sample, one row of logits out.
/// In Train mode Arch1 normalizes with batch statistics and applies the
/// dropout mask for `step`; running statistics are not touched (see
/// update_running_stats). In Eval mode the output is a pure function of
/// (model, x).
inline Matrix forward(const PredictorModel &model, const Matrix &x, ForwardTrace *trace = nullptr,
                      std::uint64_t step = 0) {
    if (x.cols() != model.d)
        throw ConfigError("predictor: input width " + std::to_string(x.cols()) + " does not match d=" +
                          std::to_string(model.d));
    ForwardTrace local;
    ForwardTrace &t = trace ? *trace : local;
    t.train = model.mode == Mode::Train;
    t.input = x;
    t.pre = (x * model.w1.transpose()).rowwise() + model.b1.transpose();

    if (model.arch == Arch::Arch2) {
        t.hidden_out = t.pre.unaryExpr([](double u) { return detail::silu(u); });
    } else {
        const auto &bn = *model.bn;
        const auto n = static_cast<double>(x.rows());
        Vector mean, var;
        if (t.train) {
            mean = t.pre.colwise().mean().transpose();
            var = ((t.pre.rowwise() - mean.transpose()).array().square().colwise().sum() / n).matrix().transpose();
            t.batch_mean = mean;
            t.batch_var = var;
        } else {
            mean = bn.running_mean;
            var = bn.running_var;
        }
        t.inv_std = (var.array() + bn.epsilon).rsqrt().matrix();
        t.normalized = (t.pre.rowwise() - mean.transpose()).array().rowwise() * t.inv_std.transpose().array();
        t.bn_out = (t.normalized.array().rowwise() * bn.gamma.transpose().array()).rowwise() +
                   bn.beta.transpose().array();
        t.hidden_out = t.bn_out.unaryExpr([](double u) { return detail::gelu(u); });
        if (t.train && model.dropout_rate > 0.0) {
            CounterRng rng(model.dropout_seed, step);
            const double keep_scale = 1.0 / (1.0 - model.dropout_rate);
            t.mask.resize(t.hidden_out.rows(), t.hidden_out.cols());
            for (Eigen::Index i = 0; i < t.mask.size(); ++i)
                t.mask.data()[i] = rng.uniform() >= model.dropout_rate ? keep_scale : 0.0;
            t.hidden_out.array() *= t.mask.array();
        } else {
            t.mask.resize(0, 0);
        }
    }
    return (t.hidden_out * model.w2.transpose()).rowwise() + model.b2.transpose();
}

/// Single-sample forward pass.
inline std::vector<double> forward(const PredictorModel &model, std::span<const double> x) {
    if (static_cast<int>(x.size()) != model.d)
        throw ConfigError("predictor: input length " + std::to_string(x.size()) + " does not match d=" +
                          std::to_string(model.d));
    Matrix row = Eigen::Map<const Matrix>(x.data(), 1, model.d);
    const Matrix z = forward(model, row);
    return {z.data(), z.data() + z.size()};
}

inline std::vector<double> forward(const PredictorModel &model, const std::vector<double> &x) {
    return forward(model, std::span<const double>(x));
}

/// Folds the batch statistics of a Train-mode Arch1 forward into the running
/// estimates (momentum update, unbiased variance).
inline void update_running_stats(PredictorModel &model, const ForwardTrace &trace) {
    if (model.arch != Arch::Arch1 || !trace.train) return;
    auto &bn = *model.bn;
    const auto n = static_cast<double>(trace.input.rows());
    const Vector unbiased = n > 1 ? Vector(trace.batch_var * (n / (n - 1.0))) : trace.batch_var;
    bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * trace.batch_mean;
    bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * unbiased;
}

/// Gradients of a scalar loss with respect to every trainable parameter,
/// given dL/dz for each row of `x`. Pass the trace of the paired forward;
/// without it the forward is recomputed, which is only possible when no
/// dropout mask is involved.
inline Gradients backward(const PredictorModel &model, const Matrix &x, const Matrix &dlogits,
                          const ForwardTrace *trace = nullptr) {
    if (dlogits.rows() != x.rows() || dlogits.cols() != model.E)
        throw ConfigError("predictor: upstream gradient must be N x E");
    ForwardTrace recomputed;
    if (trace == nullptr) {
        if (model.arch == Arch::Arch1 && model.mode == Mode::Train && model.dropout_rate > 0.0)
            throw UsageError("backward: Train-mode Arch1 needs the ForwardTrace of its paired forward");
        forward(model, x, &recomputed);
        trace = &recomputed;
    } else if (trace->input.rows() != x.rows() || trace->input.cols() != x.cols() ||
               trace->train != (model.mode == Mode::Train)) {
        throw UsageError("backward: trace does not belong to this input/mode");
    }
    const ForwardTrace &t = *trace;

    Gradients g;
    g.w2 = dlogits.transpose() * t.hidden_out;
    g.b2 = dlogits.colwise().sum().transpose();
    Matrix dhidden = dlogits * model.w2;

    Matrix dpre;
    if (model.arch == Arch::Arch2) {
        dpre = dhidden.array() * t.pre.unaryExpr([](double u) { return detail::silu_grad(u); }).array();
    } else {
        const auto &bn = *model.bn;
        if (t.mask.size() > 0) dhidden.array() *= t.mask.array();
        const Matrix dbn_out =
            dhidden.array() * t.bn_out.unaryExpr([](double u) { return detail::gelu_grad(u); }).array();
        g.gamma = (dbn_out.array() * t.normalized.array()).colwise().sum().transpose();
        g.beta = dbn_out.colwise().sum().transpose();
        const Matrix dnorm = dbn_out.array().rowwise() * bn.gamma.transpose().array();
        if (t.train) {
            const auto n = static_cast<double>(x.rows());
            const Eigen::RowVectorXd sum_dnorm = dnorm.colwise().sum();
            const Eigen::RowVectorXd sum_dnorm_xhat = (dnorm.array() * t.normalized.array()).colwise().sum();
            Matrix centered = (n * dnorm).rowwise() - sum_dnorm;
            centered -= (t.normalized.array().rowwise() * sum_dnorm_xhat.array()).matrix();
            dpre = (centered.array().rowwise() * (t.inv_std.transpose().array() / n)).matrix();
        } else {
            dpre = dnorm.array().rowwise() * t.inv_std.transpose().array();
        }
    }
    g.w1 = dpre.transpose() * x;
    g.b1 = dpre.colwise().sum().transpose();
    return g;
}

/// Top-m experts by predicted logit. The model must be in Eval mode.
inline ExpertSelection predict_topk(const PredictorModel &model, std::span<const double> x, std::size_t m) {
    if (model.mode != Mode::Eval) throw UsageError("predict_topk: model must be in Eval mode");
    if (m > static_cast<std::size_t>(model.E))
        throw ArgumentError("predict_topk: m=" + std::to_string(m) + " exceeds E=" + std::to_string(model.E));
    ExpertSelection sel;
    sel.raw_scores = forward(model, x);
    sel.indices = top_k(sel.raw_scores, m);
    return sel;
}

inline ExpertSelection predict_topk(const PredictorModel &model, const std::vector<double> &x, std::size_t m) {
    return predict_topk(model, std::span<const double>(x), m);
}

/// Stacks sample activations into an N x d batch.
inline Matrix activation_batch(std::span<const TraceSample> samples) {
    if (samples.empty()) return Matrix(0, 0);
    Matrix x(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(samples[0].activation.size()));
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t j = 0; j < samples[i].activation.size(); ++j)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i].activation[j];
    return x;
}

// ---------------------------------------------------------------------------
// Checkpoint file

inline constexpr std::string_view kCheckpointMagic = "MOEPM1";

inline Bytes encode_checkpoint(const PredictorModel &m) {
    m.validate();
    ByteWriter w;
    w.raw(kCheckpointMagic);
    w.u32(m.arch == Arch::Arch1 ? 1u : 2u);
    w.u32(static_cast<std::uint32_t>(m.d));
    w.u32(static_cast<std::uint32_t>(m.hidden));
    w.u32(static_cast<std::uint32_t>(m.E));
    auto put = [&](const auto &a) {
        for (Eigen::Index i = 0; i < a.size(); ++i) w.f64(a.data()[i]);
    };
    put(m.w1);
    put(m.b1);
    put(m.w2);
    put(m.b2);
    if (m.bn) {
        put(m.bn->gamma);
        put(m.bn->beta);
        put(m.bn->running_mean);
        put(m.bn->running_var);
        w.f64(m.bn->momentum);
        w.f64(m.bn->epsilon);
        w.f64(m.dropout_rate);
        w.u64(m.dropout_seed);
    }
    return std::move(w).bytes();
}

/// Decodes a checkpoint; the model comes back in Eval mode.
inline PredictorModel decode_checkpoint(std::span<const std::uint8_t> data) {
    ByteReader r(data);
    if (data.size() < kCheckpointMagic.size() || r.raw(kCheckpointMagic.size()) != kCheckpointMagic)
        throw ParseError(ParseErrorKind::BadMagic, "expected \"MOEPM1\"");
    PredictorModel m;
    const auto tag = r.u32();
    if (tag != 1 && tag != 2) throw ParseError(ParseErrorKind::VersionMismatch, "unknown arch tag " + std::to_string(tag));
    m.arch = tag == 1 ? Arch::Arch1 : Arch::Arch2;
    m.d = static_cast<int>(r.u32());
    m.hidden = static_cast<int>(r.u32());
    m.E = static_cast<int>(r.u32());
    if (m.d <= 0 || m.hidden <= 0 || m.E <= 0)
        throw ParseError(ParseErrorKind::InvariantViolation, "zero dimension in checkpoint header");
    {
        const auto d = static_cast<std::uint64_t>(m.d), h = static_cast<std::uint64_t>(m.hidden),
                   e = static_cast<std::uint64_t>(m.E);
        std::uint64_t expected = 8 * (h * d + h + e * h + e);
        if (m.arch == Arch::Arch1) expected += 8 * (4 * h + 3) + 8;
        if (r.remaining() < expected)
            throw ParseError(ParseErrorKind::Truncated, "parameters need " + std::to_string(expected) + " bytes, " +
                                                            std::to_string(r.remaining()) + " present");
    }
    auto get = [&](auto &a) {
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = r.f64();
    };
    m.w1.resize(m.hidden, m.d);
    m.b1.resize(m.hidden);
    m.w2.resize(m.E, m.hidden);
    m.b2.resize(m.E);
    get(m.w1);
    get(m.b1);
    get(m.w2);
    get(m.b2);
    if (m.arch == Arch::Arch1) {
        BatchNormParams bn;
        bn.gamma.resize(m.hidden);
        bn.beta.resize(m.hidden);
        bn.running_mean.resize(m.hidden);
        bn.running_var.resize(m.hidden);
        get(bn.gamma);
        get(bn.beta);
        get(bn.running_mean);
        get(bn.running_var);
        bn.momentum = r.f64();
        bn.epsilon = r.f64();
        m.bn = std::move(bn);
        m.dropout_rate = r.f64();
        m.dropout_seed = r.u64();
    }
    if (r.remaining() != 0)
        throw ParseError(ParseErrorKind::TrailingData, std::to_string(r.remaining()) + " bytes after parameters");
    try {
        m.validate();
    } catch (const Error &e) {
        throw ParseError(ParseErrorKind::InvariantViolation, e.what());
    }
    return m;
}

inline void save_checkpoint(const std::filesystem::path &path, const PredictorModel &m) {
    write_file(path, encode_checkpoint(m));
}

inline PredictorModel load_checkpoint(const std::filesystem::path &path) { return decode_checkpoint(read_file(path)); }

}  // namespace moepa
