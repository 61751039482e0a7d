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

// Experiment configuration (JSON) and the structured evaluation report.
//
// Precedence, lowest first: built-in defaults, the --config file, --set
// key=value overrides (dotted paths), dedicated command-line flags.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "moepa/metrics.hpp"
#include "moepa/pipesim.hpp"
#include "moepa/synthgen.hpp"
#include "moepa/trainer.hpp"

namespace moepa {

using Json = nlohmann::ordered_json;

/// Environment variable naming a directory of <profile>.json files.
inline constexpr const char *kProfileDirEnv = "MOEPA_PROFILE_DIR";

inline Json default_config_json() {
    return Json::parse(R"({
  "seed": 1,
  "output_dir": "out",
  "router": {"d": 64, "E": 16, "k": 2, "gate_scale": 1.0},
  "teacher": {"mix": "identity", "mix_hidden": 64, "post_norm": true, "noise_sigma": 0.0},
  "data": {"n_train": 50000, "n_eval": 10000},
  "train": {
    "arch": "arch2", "hidden": 256, "batch_size": 256, "epochs": 10, "learning_rate": 0.0005,
    "optimizer": "adam", "eval_fraction": 0.1, "overprov_m": 0,
    "loss": {
      "family": "wbce",
      "tier_weights": {"top": 3.0, "mid": 1.5, "rest": 0.5},
      "lambda": 0.3, "margin": 0.1, "focal_gamma": 2.0, "focal_alpha": 0.25,
      "normalize_ranking": true, "top_tier": 10, "mid_tier_end": 30
    }
  },
  "eval": {"ms": [3, 4]},
  "simulate": {
    "profiles": ["V100-32GB", "A100-40GB", "A100-80GB"],
    "n_tokens": 1000, "baseline_accuracy": 0.7879, "experts": 6
  },
  "profiles": []
})");
}

namespace detail {

/// Rejects keys that do not exist in the defaults (catches typos).
inline void check_known_keys(const Json &user, const Json &defaults, const std::string &prefix) {
    if (!user.is_object()) return;
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!defaults.contains(it.key())) throw ConfigError("config: unknown key '" + path + "'");
        const auto &d = defaults.at(it.key());
        if (d.is_object()) {
            if (!it.value().is_object()) throw ConfigError("config: '" + path + "' must be an object");
            check_known_keys(it.value(), d, path);
        }
    }
}

template <typename T>
T get(const Json &j, const char *key, const std::string &where) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError("config: " + where + "." + key + ": " + e.what());
    }
}

}  // namespace detail

/// Merges a user config over the defaults.
inline Json merge_config(const Json &user) {
    detail::check_known_keys(user, default_config_json(), "");
    Json merged = default_config_json();
    merged.merge_patch(user);
    return merged;
}

inline Json load_config_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    try {
        return merge_config(Json::parse(in));
    } catch (const nlohmann::json::parse_error &e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

/// Applies "a.b.c=value"; value is parsed as JSON when possible, else taken as a string.
inline void apply_override(Json &config, const std::string &assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    Json *node = &config;
    const Json defaults = default_config_json();
    const Json *def = &defaults;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!def->is_object() || !def->contains(parts[i])) throw ConfigError("override: unknown key '" + key + "'");
        def = &def->at(parts[i]);
        if (i + 1 == parts.size()) {
            (*node)[parts[i]] = value;
        } else {
            node = &(*node)[parts[i]];
        }
    }
}

inline Arch parse_arch(const std::string &s) {
    if (s == "arch1") return Arch::Arch1;
    if (s == "arch2") return Arch::Arch2;
    throw ConfigError("unknown arch '" + s + "' (arch1|arch2)");
}

inline LossFamily parse_loss_family(const std::string &s) {
    if (s == "mse") return LossFamily::MSE;
    if (s == "wbce") return LossFamily::WeightedBCE;
    if (s == "focal") return LossFamily::Focal;
    if (s == "ranking") return LossFamily::RankingAware;
    throw ConfigError("unknown loss family '" + s + "' (mse|wbce|focal|ranking)");
}

inline OptimizerKind parse_optimizer(const std::string &s) {
    if (s == "sgd") return OptimizerKind::SGD;
    if (s == "momentum") return OptimizerKind::SGDMomentum;
    if (s == "adam") return OptimizerKind::Adam;
    throw ConfigError("unknown optimizer '" + s + "' (sgd|momentum|adam)");
}

inline MixKind parse_mix(const std::string &s) {
    if (s == "identity") return MixKind::Identity;
    if (s == "linear") return MixKind::LinearMix;
    if (s == "nonlinear") return MixKind::NonlinearMix;
    throw ConfigError("unknown teacher mix '" + s + "' (identity|linear|nonlinear)");
}

inline HardwareProfile profile_from_json(const Json &j) {
    HardwareProfile p;
    const std::string where = "profile";
    p.name = detail::get<std::string>(j, "name", where);
    p.t_pre_norm = detail::get<double>(j, "t_pre_norm", where);
    p.t_attn = detail::get<double>(j, "t_attn", where);
    p.t_post_norm = detail::get<double>(j, "t_post_norm", where);
    p.t_select = detail::get<double>(j, "t_select", where);
    p.t_expert_compute = detail::get<double>(j, "t_expert_compute", where);
    p.t_load_disk_per_expert = detail::get<double>(j, "t_load_disk_per_expert", where);
    p.t_load_mem_per_expert = detail::get<double>(j, "t_load_mem_per_expert", where);
    if (j.contains("t_predict")) p.t_predict = detail::get<double>(j, "t_predict", where);
    if (j.contains("parallel_load_slots")) p.parallel_load_slots = detail::get<int>(j, "parallel_load_slots", where);
    p.validate();
    return p;
}

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "out";
    TeacherOptions teacher;
    std::size_t n_train = 0;
    std::size_t n_eval = 0;
    TrainConfig train;
    std::vector<int> eval_ms;
    std::vector<std::string> profile_names;
    std::uint64_t n_tokens = 1000;
    double baseline_accuracy = 0.7879;
    int sim_experts = kMeasuredExperts;
    std::vector<HardwareProfile> custom_profiles;

    /// Resolves a profile: built-in, then config "profiles", then $MOEPA_PROFILE_DIR/<name>.json.
    HardwareProfile resolve_profile(const std::string &name) const {
        for (const auto &p : builtin_profiles())
            if (p.name == name) return p;
        for (const auto &p : custom_profiles)
            if (p.name == name) return p;
        if (const char *dir = std::getenv(kProfileDirEnv)) {
            const auto path = std::filesystem::path(dir) / (name + ".json");
            if (std::filesystem::exists(path)) {
                std::ifstream in(path);
                try {
                    return profile_from_json(Json::parse(in));
                } catch (const nlohmann::json::exception &e) {
                    throw ConfigError("profile file " + path.string() + ": " + e.what());
                }
            }
        }
        throw ConfigError("unknown hardware profile '" + name + "'");
    }

    std::vector<HardwareProfile> profiles() const {
        std::vector<HardwareProfile> out;
        for (const auto &n : profile_names) out.push_back(resolve_profile(n));
        return out;
    }
};

/// Converts a merged config into typed settings and validates them.
inline ExperimentConfig experiment_from_json(const Json &j) {
    ExperimentConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.output_dir = j.at("output_dir").get<std::string>();
        const auto &r = j.at("router");
        c.teacher.d = r.at("d").get<int>();
        c.teacher.E = r.at("E").get<int>();
        c.teacher.k = r.at("k").get<int>();
        c.teacher.gate_scale = r.at("gate_scale").get<double>();
        const auto &t = j.at("teacher");
        c.teacher.mix = parse_mix(t.at("mix").get<std::string>());
        c.teacher.mix_hidden = t.at("mix_hidden").get<int>();
        c.teacher.post_norm = t.at("post_norm").get<bool>();
        c.teacher.noise_sigma = t.at("noise_sigma").get<double>();
        c.teacher.seed = c.seed;
        c.n_train = j.at("data").at("n_train").get<std::size_t>();
        c.n_eval = j.at("data").at("n_eval").get<std::size_t>();

        const auto &tr = j.at("train");
        c.train.arch = parse_arch(tr.at("arch").get<std::string>());
        c.train.hidden = tr.at("hidden").get<int>();
        c.train.batch_size = tr.at("batch_size").get<int>();
        c.train.epochs = tr.at("epochs").get<int>();
        c.train.learning_rate = tr.at("learning_rate").get<double>();
        c.train.optimizer = parse_optimizer(tr.at("optimizer").get<std::string>());
        c.train.eval_fraction = tr.at("eval_fraction").get<double>();
        c.train.overprov_m = tr.at("overprov_m").get<int>();
        c.train.seed = c.seed;
        const auto &l = tr.at("loss");
        c.train.loss.family = parse_loss_family(l.at("family").get<std::string>());
        c.train.loss.tier_weights.top = l.at("tier_weights").at("top").get<double>();
        c.train.loss.tier_weights.mid = l.at("tier_weights").at("mid").get<double>();
        c.train.loss.tier_weights.rest = l.at("tier_weights").at("rest").get<double>();
        c.train.loss.lambda = l.at("lambda").get<double>();
        c.train.loss.margin = l.at("margin").get<double>();
        c.train.loss.focal_gamma = l.at("focal_gamma").get<double>();
        c.train.loss.focal_alpha = l.at("focal_alpha").get<double>();
        c.train.loss.normalize_ranking = l.at("normalize_ranking").get<bool>();
        c.train.loss.top_tier = l.at("top_tier").get<int>();
        c.train.loss.mid_tier_end = l.at("mid_tier_end").get<int>();

        c.eval_ms = j.at("eval").at("ms").get<std::vector<int>>();
        const auto &s = j.at("simulate");
        c.profile_names = s.at("profiles").get<std::vector<std::string>>();
        c.n_tokens = s.at("n_tokens").get<std::uint64_t>();
        c.baseline_accuracy = s.at("baseline_accuracy").get<double>();
        c.sim_experts = s.at("experts").get<int>();
        for (const auto &p : j.at("profiles")) c.custom_profiles.push_back(profile_from_json(p));
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (c.teacher.d < 2 || c.teacher.E < 1 || c.teacher.k < 1 || c.teacher.k > c.teacher.E)
        throw ConfigError("config: router needs d >= 2 and 1 <= k <= E");
    if (c.n_train == 0 || c.n_eval == 0) throw ConfigError("config: data.n_train and data.n_eval must be >= 1");
    c.train.validate();
    for (int m : c.eval_ms)
        if (m < c.teacher.k || m > c.teacher.E) throw ConfigError("config: eval.ms entries must lie in [k, E]");
    if (!(c.baseline_accuracy >= 0.0 && c.baseline_accuracy <= 1.0))
        throw ConfigError("config: simulate.baseline_accuracy must be in [0,1]");
    if (c.sim_experts < 1) throw ConfigError("config: simulate.experts must be >= 1");
    for (const auto &n : c.profile_names) (void)c.resolve_profile(n);
    return c;
}

// ---------------------------------------------------------------------------
// Structured evaluation report

inline Json eval_report_json(const EvalResult &r, const std::vector<double> &tier_profile) {
    Json j;
    j["E"] = r.E;
    j["k"] = r.k;
    j["n_samples"] = r.n_samples;
    j["exact_match"] = r.exact_match;
    j["top1"] = r.top1;
    Json full = Json::object(), recall = Json::object();
    for (const auto &[m, v] : r.overprov) full[std::to_string(m)] = v;
    for (const auto &[m, v] : r.overprov_recall) recall[std::to_string(m)] = v;
    j["overprov_full_coverage"] = full;
    j["overprov_expert_recall"] = recall;
    j["per_expert_hits"] = r.per_expert_hits;
    j["tier_profile"] = tier_profile;
    return j;
}

inline EvalResult eval_result_from_json(const Json &j, std::vector<double> *tier_profile = nullptr) {
    EvalResult r;
    try {
        r.E = j.at("E").get<int>();
        r.k = j.at("k").get<int>();
        r.n_samples = j.at("n_samples").get<std::size_t>();
        r.exact_match = j.at("exact_match").get<double>();
        r.top1 = j.at("top1").get<double>();
        for (auto it = j.at("overprov_full_coverage").begin(); it != j.at("overprov_full_coverage").end(); ++it)
            r.overprov[std::stoi(it.key())] = it.value().get<double>();
        for (auto it = j.at("overprov_expert_recall").begin(); it != j.at("overprov_expert_recall").end(); ++it)
            r.overprov_recall[std::stoi(it.key())] = it.value().get<double>();
        r.per_expert_hits = j.at("per_expert_hits").get<std::vector<std::uint64_t>>();
        if (tier_profile) *tier_profile = j.at("tier_profile").get<std::vector<double>>();
    } catch (const std::exception &e) {
        throw DataError(std::string("eval report: ") + e.what());
    }
    if (!(r.exact_match >= 0.0 && r.exact_match <= 1.0)) throw DataError("eval report: exact_match outside [0,1]");
    return r;
}

}  // namespace moepa
