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

// moepa command-line driver.
//
// Exit codes: 0 success, 1 unexpected failure, 2 bad config or arguments,
// 3 bad input data, 4 filesystem error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "moepa/moepa.hpp"

namespace fs = std::filesystem;
using namespace moepa;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitIo = 4;

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

void add_common(CLI::App *cmd, CommonOptions &o) {
    cmd->add_option("-c,--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    cmd->add_option("--set", o.overrides, "Override a config key, e.g. --set train.epochs=3");
    cmd->add_option("--seed", o.seed, "Master seed");
    cmd->add_option("-o,--out", o.out, "Output directory");
}

Json build_config(const CommonOptions &o) {
    Json j = o.config_path.empty() ? default_config_json() : load_config_file(o.config_path);
    for (const auto &s : o.overrides) apply_override(j, s);
    if (o.seed) j["seed"] = *o.seed;
    if (o.out) j["output_dir"] = *o.out;
    return j;
}

fs::path ensure_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    return dir;
}

std::ofstream open_out(const fs::path &path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    return f;
}

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

int cmd_gen(const ExperimentConfig &cfg) {
    const auto teacher = make_teacher(cfg.teacher);
    const auto train_set = generate_dataset(teacher, cfg.n_train, 0);
    const auto eval_set = generate_dataset(teacher, cfg.n_eval, cfg.n_train);
    const auto dir = ensure_dir(cfg.output_dir);
    write_trace(dir / "train.trace", train_set);
    write_trace(dir / "eval.trace", eval_set);
    const auto counts = activation_counts(train_set, cfg.teacher.E);
    const double h = activation_entropy(counts);
    auto f = open_out(dir / "activation_counts.csv");
    f << "expert,count\n";
    for (std::size_t e = 0; e < counts.size(); ++e) f << e << ',' << counts[e] << '\n';
    std::cout << "gen: train=" << train_set.size() << " eval=" << eval_set.size() << " d=" << cfg.teacher.d
              << " E=" << cfg.teacher.E << " k=" << cfg.teacher.k << " mix=" << to_string(cfg.teacher.mix)
              << " entropy=" << fmt(h) << '\n';
    return 0;
}

int cmd_train(const ExperimentConfig &cfg, const std::string &train_path, const std::string &eval_path,
              const std::string &ckpt_path) {
    const fs::path dir = ensure_dir(cfg.output_dir);
    const auto train_file = read_trace(train_path.empty() ? dir / "train.trace" : fs::path(train_path));
    TrainResult res = [&] {
        if (eval_path.empty()) return train(cfg.train, train_file);
        const auto eval_file = read_trace(eval_path);
        return train(cfg.train, train_file.records, eval_file.records);
    }();
    save_checkpoint(ckpt_path.empty() ? dir / "model.ckpt" : fs::path(ckpt_path), res.model);
    auto f = open_out(dir / "training.csv");
    write_training_csv(f, res.report);
    const auto &last = res.report.epochs.back();
    std::cout << "train: arch=" << to_string(cfg.train.arch) << " loss=" << to_string(cfg.train.loss.family)
              << " epochs=" << res.report.epochs.size() << " n_train=" << res.report.n_train
              << " n_eval=" << res.report.n_eval << " loss=" << fmt(last.train_loss, 6)
              << " exact_match=" << fmt(last.exact_match) << " top1=" << fmt(last.top1) << " overprov@"
              << res.report.overprov_m << '=' << fmt(last.overprov) << '\n';
    return 0;
}

int cmd_eval(const ExperimentConfig &cfg, const std::string &ckpt_path, const std::string &trace_path) {
    const fs::path dir = ensure_dir(cfg.output_dir);
    const auto model = load_checkpoint(ckpt_path.empty() ? dir / "model.ckpt" : fs::path(ckpt_path));
    const auto data = read_trace(trace_path.empty() ? dir / "eval.trace" : fs::path(trace_path));
    if (static_cast<int>(data.d) != model.d || static_cast<int>(data.E) != model.E)
        throw DataError("eval: trace d/E (" + std::to_string(data.d) + "/" + std::to_string(data.E) +
                        ") do not match the checkpoint (" + std::to_string(model.d) + "/" + std::to_string(model.E) +
                        ")");
    std::vector<int> ms;
    for (int m : cfg.eval_ms)
        if (m >= static_cast<int>(data.k) && m <= static_cast<int>(data.E)) ms.push_back(m);
    const auto result = evaluate(model, data.records, ms);
    const auto tiers = affinity_tier_profile(data.records);
    {
        auto f = open_out(dir / "eval.csv");
        write_eval_csv(f, result);
    }
    {
        auto f = open_out(dir / "tier_profile.csv");
        write_tier_profile_csv(f, tiers);
    }
    {
        auto f = open_out(dir / "eval_report.json");
        f << eval_report_json(result, tiers).dump(2) << '\n';
    }
    std::cout << "eval: n=" << result.n_samples << " exact_match=" << fmt(result.exact_match)
              << " top1=" << fmt(result.top1);
    for (const auto &[m, v] : result.overprov) std::cout << " overprov@" << m << '=' << fmt(v);
    std::cout << '\n';
    return 0;
}

int cmd_compare(const ExperimentConfig &cfg, const std::string &trace_path) {
    const fs::path dir = ensure_dir(cfg.output_dir);
    const auto data = read_trace(trace_path.empty() ? dir / "train.trace" : fs::path(trace_path));
    const auto rows = compare_losses(cfg.train, data.records);
    auto f = open_out(dir / "loss_comparison.csv");
    write_loss_comparison_csv(f, rows);
    const LossComparisonRow *best = &rows.front();
    for (const auto &r : rows)
        if (r.exact_match > best->exact_match) best = &r;
    std::cout << "compare-losses: rows=" << rows.size() << " best=" << to_string(best->family) << '/'
              << to_string(best->arch) << " exact_match=" << fmt(best->exact_match) << '\n';
    return 0;
}

double accuracy_from_report(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open eval report " + path.string());
    Json j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError("eval report " + path.string() + " is not valid JSON");
    return eval_result_from_json(j).exact_match;
}

int cmd_simulate(const ExperimentConfig &cfg, std::optional<double> accuracy, const std::string &report_path) {
    const fs::path dir = cfg.output_dir;
    const double acc = accuracy ? *accuracy
                                : accuracy_from_report(report_path.empty() ? dir / "eval_report.json" : fs::path(report_path));
    if (!(acc >= 0.0 && acc <= 1.0)) throw ArgumentError("simulate: accuracy must lie in [0,1]");
    ensure_dir(dir);
    const auto profiles = cfg.profiles();
    const auto rows = savings_report(acc, cfg.baseline_accuracy, profiles, cfg.n_tokens, cfg.sim_experts);
    {
        auto f = open_out(dir / "savings.csv");
        write_savings_csv(f, rows);
    }
    {
        auto f = open_out(dir / "schedule.csv");
        f << "profile,mode,misses,source,stage,expert,start_ms,end_ms\n";
        for (const auto &p : profiles)
            for (auto source : {LoadSource::Memory, LoadSource::Disk})
                for (auto mode : {ScheduleMode::no_prefetch(), ScheduleMode::all_hit(), ScheduleMode::miss(1)})
                    write_schedule_csv(f, p.name, mode, source, schedule(p, cfg.sim_experts, mode, source));
    }
    write_savings_table(std::cout, rows);
    double best = 0.0;
    for (const auto &r : rows) best = std::max(best, r.total_savings_ms);
    std::cout << "simulate: accuracy=" << fmt(acc) << " baseline=" << fmt(cfg.baseline_accuracy)
              << " tokens=" << cfg.n_tokens << " rows=" << rows.size() << " max_savings_ms=" << fmt(best, 1) << '\n';
    return 0;
}

int cmd_report(const ExperimentConfig &cfg, const std::string &report_path) {
    const fs::path path = report_path.empty() ? fs::path(cfg.output_dir) / "eval_report.json" : fs::path(report_path);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open eval report " + path.string());
    Json j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError("eval report " + path.string() + " is not valid JSON");
    std::vector<double> tiers;
    const auto r = eval_result_from_json(j, &tiers);
    std::cout << "samples        " << r.n_samples << "  (E=" << r.E << ", k=" << r.k << ")\n";
    std::cout << "exact match    " << fmt(r.exact_match) << '\n';
    std::cout << "top-1          " << fmt(r.top1) << '\n';
    for (const auto &[m, v] : r.overprov)
        std::cout << "top-" << m << (m < 10 ? "  " : " ") << " coverage " << fmt(v) << "  recall "
                  << fmt(r.overprov_recall.at(m)) << '\n';
    const auto rows = savings_report(r.exact_match, cfg.baseline_accuracy, cfg.profiles(), cfg.n_tokens, cfg.sim_experts);
    std::cout << '\n';
    write_savings_table(std::cout, rows);
    std::cout << "report: exact_match=" << fmt(r.exact_match) << " baseline=" << fmt(cfg.baseline_accuracy)
              << " delta_pp=" << fmt(100.0 * (r.exact_match - cfg.baseline_accuracy), 2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"moepa: expert pre-attention prediction toolkit"};
    app.require_subcommand(1);

    CommonOptions gen_o, train_o, eval_o, cmp_o, sim_o, rep_o;

    auto *gen = app.add_subcommand("gen", "Generate synthetic train/eval traces from a teacher router");
    add_common(gen, gen_o);
    std::optional<std::size_t> n_train, n_eval;
    std::string mix;
    gen->add_option("--n-train", n_train, "Training samples");
    gen->add_option("--n-eval", n_eval, "Held-out samples");
    gen->add_option("--mix", mix, "Teacher attention mix")->check(CLI::IsMember({"identity", "linear", "nonlinear"}));

    auto *tr = app.add_subcommand("train", "Train a predictor on a trace");
    add_common(tr, train_o);
    std::string train_trace, train_eval_trace, train_ckpt, loss_name, arch_name;
    std::optional<int> epochs, hidden;
    std::optional<double> lr;
    tr->add_option("--trace", train_trace, "Training trace (default <out>/train.trace)");
    tr->add_option("--eval-trace", train_eval_trace, "Held-out trace (default: split the training trace)");
    tr->add_option("--checkpoint", train_ckpt, "Checkpoint path (default <out>/model.ckpt)");
    tr->add_option("--loss", loss_name, "Loss family")->check(CLI::IsMember({"mse", "wbce", "focal", "ranking"}));
    tr->add_option("--arch", arch_name, "Predictor architecture")->check(CLI::IsMember({"arch1", "arch2"}));
    tr->add_option("--epochs", epochs, "Training epochs");
    tr->add_option("--hidden", hidden, "Hidden width");
    tr->add_option("--lr", lr, "Learning rate");

    auto *ev = app.add_subcommand("eval", "Evaluate a checkpoint on a trace");
    add_common(ev, eval_o);
    std::string eval_ckpt, eval_trace;
    std::vector<int> eval_ms;
    ev->add_option("--checkpoint", eval_ckpt, "Checkpoint (default <out>/model.ckpt)");
    ev->add_option("--trace", eval_trace, "Trace (default <out>/eval.trace)");
    ev->add_option("--m", eval_ms, "Over-provisioning sizes");

    auto *cmp = app.add_subcommand("compare-losses", "One-epoch comparison of every loss and architecture");
    add_common(cmp, cmp_o);
    std::string cmp_trace;
    cmp->add_option("--trace", cmp_trace, "Trace (default <out>/train.trace)");

    auto *sim = app.add_subcommand("simulate", "Pipeline schedules and loading-time savings");
    add_common(sim, sim_o);
    std::optional<double> sim_acc, sim_base;
    std::optional<std::uint64_t> sim_tokens;
    std::string sim_report;
    std::vector<std::string> sim_profiles;
    auto *acc_opt = sim->add_option("--accuracy", sim_acc, "Predictor exact-match accuracy");
    sim->add_option("--eval-report", sim_report, "Read accuracy from an eval_report.json")->excludes(acc_opt);
    sim->add_option("--baseline", sim_base, "Baseline accuracy");
    sim->add_option("--tokens", sim_tokens, "Tokens for cumulative savings");
    sim->add_option("--profile", sim_profiles, "Hardware profile name (repeatable)");

    auto *rep = app.add_subcommand("report", "Summarize an eval report with savings");
    add_common(rep, rep_o);
    std::string rep_report;
    rep->add_option("--eval-report", rep_report, "Report path (default <out>/eval_report.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*gen) {
            Json j = build_config(gen_o);
            if (n_train) j["data"]["n_train"] = *n_train;
            if (n_eval) j["data"]["n_eval"] = *n_eval;
            if (!mix.empty()) j["teacher"]["mix"] = mix;
            return cmd_gen(experiment_from_json(j));
        }
        if (*tr) {
            Json j = build_config(train_o);
            if (!loss_name.empty()) j["train"]["loss"]["family"] = loss_name;
            if (!arch_name.empty()) j["train"]["arch"] = arch_name;
            if (epochs) j["train"]["epochs"] = *epochs;
            if (hidden) j["train"]["hidden"] = *hidden;
            if (lr) j["train"]["learning_rate"] = *lr;
            return cmd_train(experiment_from_json(j), train_trace, train_eval_trace, train_ckpt);
        }
        if (*ev) {
            Json j = build_config(eval_o);
            if (!eval_ms.empty()) j["eval"]["ms"] = eval_ms;
            return cmd_eval(experiment_from_json(j), eval_ckpt, eval_trace);
        }
        if (*cmp) return cmd_compare(experiment_from_json(build_config(cmp_o)), cmp_trace);
        if (*sim) {
            Json j = build_config(sim_o);
            if (sim_base) j["simulate"]["baseline_accuracy"] = *sim_base;
            if (sim_tokens) j["simulate"]["n_tokens"] = *sim_tokens;
            if (!sim_profiles.empty()) j["simulate"]["profiles"] = sim_profiles;
            return cmd_simulate(experiment_from_json(j), sim_acc, sim_report);
        }
        if (*rep) return cmd_report(experiment_from_json(build_config(rep_o)), rep_report);
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ArgumentError &e) {
        std::cerr << "argument error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const UsageError &e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ParseError &e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const DataError &e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const IoError &e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitOther;
    }
    return kExitOther;
}
