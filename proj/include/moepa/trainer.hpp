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

// Mini-batch training of predictors and the single-epoch loss comparison.
// A run is a pure function of (TrainConfig, data): shuffles, initial weights
// and dropout masks all derive from config.seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moepa/core.hpp"
#include "moepa/losses.hpp"
#include "moepa/metrics.hpp"
#include "moepa/predictor.hpp"
#include "moepa/rng.hpp"
#include "moepa/synthgen.hpp"

namespace moepa {

enum class OptimizerKind { SGD, SGDMomentum, Adam };

inline const char *to_string(OptimizerKind o) {
    switch (o) {
        case OptimizerKind::SGD:
            return "sgd";
        case OptimizerKind::SGDMomentum:
            return "momentum";
        case OptimizerKind::Adam:
            return "adam";
    }
    return "?";
}

struct TrainConfig {
    LossSpec loss;
    Arch arch = Arch::Arch2;
    int hidden = 256;
    int batch_size = 256;
    int epochs = 5;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 1;
    double eval_fraction = 0.1;
    /// Over-provisioning size tracked per epoch; 0 means min(E, k + 1).
    int overprov_m = 0;

    void validate() const {
        loss.validate();
        if (hidden < 1) throw ConfigError("train: hidden must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
        if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw ConfigError("train: eval_fraction must be in (0,1)");
        if (overprov_m < 0) throw ConfigError("train: overprov_m must be >= 0");
    }
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double exact_match = 0.0;
    double top1 = 0.0;
    double overprov = 0.0;
};

struct TrainingReport {
    std::vector<EpochRow> epochs;
    std::size_t n_train = 0;
    std::size_t n_eval = 0;
    int overprov_m = 0;
    EvalResult final_eval;
};

struct TrainResult {
    PredictorModel model;
    TrainingReport report;
};

inline void write_training_csv(std::ostream &out, const TrainingReport &r) {
    out << "epoch,train_loss,exact_match,top1,overprov\n" << std::setprecision(10);
    for (const auto &row : r.epochs)
        out << row.epoch << ',' << row.train_loss << ',' << row.exact_match << ',' << row.top1 << ',' << row.overprov
            << '\n';
}

namespace detail {

/// Flat views over the trainable tensors of a model and its gradients, in a
/// fixed order.
inline std::vector<std::pair<double *, const double *>> parameter_slots(PredictorModel &m, const Gradients &g,
                                                                       std::vector<Eigen::Index> &sizes) {
    std::vector<std::pair<double *, const double *>> slots{
        {m.w1.data(), g.w1.data()}, {m.b1.data(), g.b1.data()}, {m.w2.data(), g.w2.data()}, {m.b2.data(), g.b2.data()}};
    sizes = {m.w1.size(), m.b1.size(), m.w2.size(), m.b2.size()};
    if (m.bn) {
        slots.push_back({m.bn->gamma.data(), g.gamma.data()});
        slots.push_back({m.bn->beta.data(), g.beta.data()});
        sizes.push_back(m.bn->gamma.size());
        sizes.push_back(m.bn->beta.size());
    }
    return slots;
}

class Optimizer {
  public:
    explicit Optimizer(const TrainConfig &cfg) : cfg_(cfg) {}

    void step(PredictorModel &model, const Gradients &grads) {
        std::vector<Eigen::Index> sizes;
        auto slots = parameter_slots(model, grads, sizes);
        if (first_.empty()) {
            for (auto n : sizes) {
                first_.push_back(Vector::Zero(n));
                second_.push_back(Vector::Zero(n));
            }
        }
        ++t_;
        const double lr = cfg_.learning_rate;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t s = 0; s < slots.size(); ++s) {
            Eigen::Map<Vector> p(slots[s].first, sizes[s]);
            Eigen::Map<const Vector> g(slots[s].second, sizes[s]);
            switch (cfg_.optimizer) {
                case OptimizerKind::SGD:
                    p -= lr * g;
                    break;
                case OptimizerKind::SGDMomentum:
                    first_[s] = cfg_.momentum * first_[s] + g;
                    p -= lr * first_[s];
                    break;
                case OptimizerKind::Adam:
                    first_[s] = cfg_.beta1 * first_[s] + (1.0 - cfg_.beta1) * g;
                    second_[s] = cfg_.beta2 * second_[s] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
                    p.array() -= lr * (first_[s].array() / bc1) /
                                 ((second_[s].array() / bc2).sqrt() + cfg_.adam_epsilon);
                    break;
            }
        }
    }

  private:
    TrainConfig cfg_;
    std::vector<Vector> first_;
    std::vector<Vector> second_;
    std::int64_t t_ = 0;
};

inline Matrix score_matrix(std::span<const TraceSample> samples) {
    Matrix s(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(samples[0].true_scores.size()));
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t j = 0; j < samples[i].true_scores.size(); ++j)
            s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i].true_scores[j];
    return s;
}

inline void check_dataset(std::span<const TraceSample> samples, int &d, int &E, int &k) {
    if (samples.empty()) throw DataError("train: empty dataset");
    d = static_cast<int>(samples[0].activation.size());
    E = static_cast<int>(samples[0].true_scores.size());
    k = static_cast<int>(samples[0].true_topk.size());
    for (const auto &s : samples)
        if (static_cast<int>(s.activation.size()) != d || static_cast<int>(s.true_scores.size()) != E ||
            static_cast<int>(s.true_topk.size()) != k)
            throw ConfigError("train: samples disagree on d/E/k");
}

enum : std::uint64_t { kStreamInit = 1, kStreamSplit = 2, kStreamEpoch = 100 };

}  // namespace detail

/// Trains on `train_set`, reporting held-out metrics on `eval_set` after every epoch.
inline TrainResult train(const TrainConfig &config, std::span<const TraceSample> train_set,
                         std::span<const TraceSample> eval_set) {
    config.validate();
    int d = 0, E = 0, k = 0;
    detail::check_dataset(train_set, d, E, k);
    if (!eval_set.empty()) {
        int d2 = 0, E2 = 0, k2 = 0;
        detail::check_dataset(eval_set, d2, E2, k2);
        if (d2 != d || E2 != E || k2 != k) throw ConfigError("train: eval set dimensions differ from training set");
    }
    const int overprov_m = config.overprov_m == 0 ? std::min(E, k + 1) : config.overprov_m;
    if (overprov_m < k || overprov_m > E) throw ConfigError("train: overprov_m must lie in [k, E]");

    TrainResult result;
    PredictorModel &model = result.model;
    model = make_predictor(config.arch, d, config.hidden, E, derive_key(config.seed, detail::kStreamInit));
    model.mode = Mode::Train;

    const Matrix x_all = activation_batch(train_set);
    const BatchLabels labels_all = BatchLabels::from_scores(detail::score_matrix(train_set), k);
    const std::vector<int> ms{overprov_m};

    detail::Optimizer optimizer(config);
    const auto n = static_cast<Eigen::Index>(train_set.size());
    const auto batch = static_cast<Eigen::Index>(config.batch_size);
    std::uint64_t step = 0;
    ForwardTrace trace;
    Matrix xb;
    BatchLabels lb;
    lb.k = k;

    result.report.n_train = train_set.size();
    result.report.n_eval = eval_set.size();
    result.report.overprov_m = overprov_m;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        CounterRng shuffle_rng(config.seed, detail::kStreamEpoch + static_cast<std::uint64_t>(epoch));
        const auto order = permutation(train_set.size(), shuffle_rng);
        double loss_sum = 0.0;
        for (Eigen::Index start = 0; start < n; start += batch) {
            const Eigen::Index len = std::min(batch, n - start);
            xb.resize(len, d);
            lb.true_scores.resize(len, E);
            lb.topk_mask.resize(len, E);
            lb.rank_of.resize(len, E);
            for (Eigen::Index r = 0; r < len; ++r) {
                const auto src = static_cast<Eigen::Index>(order[static_cast<std::size_t>(start + r)]);
                xb.row(r) = x_all.row(src);
                lb.true_scores.row(r) = labels_all.true_scores.row(src);
                lb.topk_mask.row(r) = labels_all.topk_mask.row(src);
                lb.rank_of.row(r) = labels_all.rank_of.row(src);
            }
            const Matrix logits = forward(model, xb, &trace, step);
            const LossResult loss = evaluate_loss(config.loss, logits, lb);
            const Gradients grads = backward(model, xb, loss.grad, &trace);
            if (!std::isfinite(loss.value) || !grads.all_finite())
                throw DataError("train: non-finite loss or gradient at step " + std::to_string(step));
            optimizer.step(model, grads);
            update_running_stats(model, trace);
            if (!model.w1.allFinite() || !model.w2.allFinite() || !model.b1.allFinite() || !model.b2.allFinite())
                throw DataError("train: parameter became non-finite at step " + std::to_string(step));
            loss_sum += loss.value * static_cast<double>(len);
            ++step;
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(n);
        if (!eval_set.empty()) {
            model.mode = Mode::Eval;
            result.report.final_eval = evaluate(model, eval_set, ms);
            model.mode = Mode::Train;
            row.exact_match = result.report.final_eval.exact_match;
            row.top1 = result.report.final_eval.top1;
            row.overprov = result.report.final_eval.overprov.at(overprov_m);
        }
        result.report.epochs.push_back(row);
    }
    model.mode = Mode::Eval;
    return result;
}

/// Trains on a dataset, holding out the last eval_fraction of a seeded shuffle.
inline TrainResult train(const TrainConfig &config, std::span<const TraceSample> data) {
    config.validate();
    if (data.size() < 2) throw DataError("train: need at least 2 samples to hold out an eval split");
    CounterRng split_rng(config.seed, detail::kStreamSplit);
    const auto order = permutation(data.size(), split_rng);
    auto n_eval = static_cast<std::size_t>(std::floor(config.eval_fraction * static_cast<double>(data.size())));
    n_eval = std::clamp<std::size_t>(n_eval, 1, data.size() - 1);
    std::vector<TraceSample> train_set, eval_set;
    train_set.reserve(data.size() - n_eval);
    eval_set.reserve(n_eval);
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < data.size() - n_eval ? train_set : eval_set).push_back(data[order[i]]);
    return train(config, train_set, eval_set);
}

inline TrainResult train(const TrainConfig &config, const TraceFile &data) { return train(config, data.records); }

struct LossComparisonRow {
    LossFamily family;
    Arch arch;
    double exact_match = 0.0;
    double top1 = 0.0;
    double overprov = 0.0;
    double final_train_loss = 0.0;
};

/// Single-epoch run of every loss family on both architectures with the same
/// seed (hence identical split, shuffle and initialization streams).
inline std::vector<LossComparisonRow> compare_losses(const TrainConfig &base, std::span<const TraceSample> data) {
    std::vector<LossComparisonRow> rows;
    for (auto family : {LossFamily::MSE, LossFamily::WeightedBCE, LossFamily::Focal, LossFamily::RankingAware}) {
        for (auto arch : {Arch::Arch1, Arch::Arch2}) {
            TrainConfig cfg = base;
            cfg.loss.family = family;
            cfg.arch = arch;
            cfg.epochs = 1;
            const auto res = train(cfg, data);
            const auto &last = res.report.epochs.back();
            rows.push_back({family, arch, last.exact_match, last.top1, last.overprov, last.train_loss});
        }
    }
    return rows;
}

inline void write_loss_comparison_csv(std::ostream &out, const std::vector<LossComparisonRow> &rows) {
    out << "loss,arch,exact_match,top1,overprov,train_loss\n" << std::setprecision(10);
    for (const auto &r : rows)
        out << to_string(r.family) << ',' << to_string(r.arch) << ',' << r.exact_match << ',' << r.top1 << ','
            << r.overprov << ',' << r.final_train_loss << '\n';
}

}  // namespace moepa
