#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "galu/data_io.hpp"
#include "galu/experiments.hpp"
#include "galu/kernels.hpp"
#include "galu/verify.hpp"

namespace {

using namespace galu;

int run_verify(bool quick) {
    bool all_pass = true;
    std::string first_fail;
    invariant_checks(quick, [&](const CheckResult& r) {
        std::printf("%s %-40s %6.2fs  %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                    r.detail.c_str());
        std::fflush(stdout);
        if (!r.pass && all_pass) {
            all_pass = false;
            first_fail = r.name;
        }
    });
    if (!all_pass) {
        std::printf("first failing property: %s\n", first_fail.c_str());
        return 1;
    }
    return 0;
}

std::vector<Tensor> dataset_inputs(const Dataset& d) {
    std::vector<Tensor> X;
    X.reserve(static_cast<size_t>(d.size()));
    for (int i = 0; i < d.size(); ++i) X.push_back(d.row(i));
    return X;
}

GatingNet gating_from_config(const ExperimentConfig& cfg) {
    if (cfg.model.family == Family::DNN)
        throw std::runtime_error("path kernels need a gated family (DGN/DLGN/DLGN_SHALLOW)");
    RngStream rng(cfg.seed, 0x6A7E);
    return make_gating_net(cfg.arch, cfg.model.family, cfg.init, rng, GatingMode::HARD,
                           cfg.model.beta);
}

Model model_from_config(const ExperimentConfig& cfg) {
    RngStream rng(cfg.seed, 0x30DE1);
    return make_model(cfg.arch, cfg.model, cfg.init, rng);
}

int run_npk(const std::string& spec_path, const std::string& out, const std::string& method,
            const std::string& binary_out) {
    const ExperimentConfig cfg = ExperimentConfig::parse_file(spec_path);
    auto [train_set, test_set] = load_config_data(cfg);
    const std::vector<Tensor> X = dataset_inputs(train_set);
    const GatingNet gating = gating_from_config(cfg);
    const GramMatrix g = method == "brute" ? npk_bruteforce(gating, X) : npk_closed(gating, X);
    write_gram_csv(g, out);
    if (!binary_out.empty()) write_gram_binary(g, binary_out);
    std::printf("wrote %dx%d %s gram to %s\n", g.n, g.n, provenance_name(g.provenance).c_str(),
                out.c_str());
    return 0;
}

int run_ntk(const std::string& spec_path, const std::string& out, const std::string& scope) {
    const ExperimentConfig cfg = ExperimentConfig::parse_file(spec_path);
    auto [train_set, test_set] = load_config_data(cfg);
    const std::vector<Tensor> X = dataset_inputs(train_set);
    const Model m = model_from_config(cfg);
    const GramMatrix g =
        empirical_ntk(m, X, scope == "all" ? ParamScope::ALL : ParamScope::VALUE_NET);
    write_gram_csv(g, out);
    std::printf("wrote %dx%d NTK gram to %s\n", g.n, g.n, out.c_str());
    return 0;
}

int run_train(const std::string& config_path, std::uint64_t seed_override, bool has_seed) {
    ExperimentConfig cfg = ExperimentConfig::parse_file(config_path);
    if (has_seed) {
        cfg.seed = seed_override;
        cfg.train.seed = seed_override;
    }
    DirLock lock(cfg.out_dir);
    auto [train_set, test_set] = load_config_data(cfg);
    Model m = model_from_config(cfg);
    auto [trained, result] = train(std::move(m), train_set, test_set, cfg.train);

    const std::string run_id = make_run_id(cfg, "train", cfg.seed);
    LedgerRow row;
    row.run_id = run_id;
    row.subcommand = "train";
    row.spec_hash = to_hex(cfg.spec_hash());
    row.seed = cfg.seed;
    row.mode = cfg.train.mode == TrainConfig::Mode::ST ? "ST" : "PG";
    row.test_accuracy = result.test_accuracy;
    row.wall_seconds = result.wall_seconds;
    append_ledger(cfg.out_dir + "/ledger.csv", row);
    write_run_json(cfg.out_dir + "/run-" + run_id + ".json", cfg, result, "train", run_id);
    save_checkpoint(trained.value, cfg.seed, cfg.out_dir + "/value-" + run_id + ".ckpt");
    if (trained.gating)
        save_checkpoint(*trained.gating, cfg.seed, cfg.out_dir + "/gating-" + run_id + ".ckpt");
    std::printf("run %s: test accuracy %.4f (%.2fs)\n", run_id.c_str(), result.test_accuracy,
                result.wall_seconds);
    return 0;
}

int run_sweep(const std::string& spec_path, bool permutations, bool allones,
              std::uint64_t seed_override, bool has_seed) {
    ExperimentConfig cfg = ExperimentConfig::parse_file(spec_path);
    if (has_seed) {
        cfg.seed = seed_override;
        cfg.train.seed = seed_override;
    }
    if (permutations == allones)
        throw std::runtime_error("sweep: pass exactly one of --permutations / --allones");
    DirLock lock(cfg.out_dir);
    auto [train_set, test_set] = load_config_data(cfg);

    auto record = [&](const std::string& tag, const RunResult& res) {
        const std::string run_id = make_run_id(cfg, "sweep-" + tag, cfg.seed);
        LedgerRow row;
        row.run_id = run_id;
        row.subcommand = "sweep";
        row.spec_hash = to_hex(cfg.spec_hash());
        row.seed = cfg.seed;
        row.permutation_id = tag;
        row.mode = cfg.train.mode == TrainConfig::Mode::ST ? "ST" : "PG";
        row.test_accuracy = res.test_accuracy;
        row.wall_seconds = res.wall_seconds;
        append_ledger(cfg.out_dir + "/ledger.csv", row);
        write_run_json(cfg.out_dir + "/run-" + run_id + ".json", cfg, res, "sweep", run_id);
    };

    if (permutations) {
        const auto runs =
            permutation_sweep(cfg.arch, cfg.model.family, train_set, test_set, cfg.train);
        for (const PermutationRun& run : runs) {
            std::string perm_id;
            for (int p : run.perm) perm_id += std::to_string(p);
            record(perm_id, run.result);
        }
        std::printf("permutation sweep: %zu runs appended to %s/ledger.csv\n", runs.size(),
                    cfg.out_dir.c_str());
    } else {
        const AllonesPair pair =
            run_allones(cfg.arch, cfg.model.family, train_set, test_set, cfg.train);
        record("with-input", pair.with_input);
        record("all-ones", pair.all_ones);
        std::printf("allones sweep: gap %.2f points, rows appended to %s/ledger.csv\n",
                    pair.gap_points, cfg.out_dir.c_str());
    }
    return 0;
}

int run_ratio_study(const std::string& spec_path, const std::string& widths_csv, int inputs,
                    int seeds, const std::string& out) {
    const ExperimentConfig cfg = ExperimentConfig::parse_file(spec_path);
    std::vector<int> widths;
    std::string token;
    std::istringstream ws(widths_csv);
    while (std::getline(ws, token, ',')) widths.push_back(std::stoi(token));
    if (widths.empty()) throw std::runtime_error("ratio-study: no widths given");

    const auto rows = ntk_npk_ratio_study(cfg.arch, widths, inputs, seeds, cfg.init.param, cfg.seed);
    std::FILE* f = out.empty() ? stdout : std::fopen(out.c_str(), "w");
    if (!f) throw std::runtime_error("ratio-study: cannot open " + out);
    std::fprintf(f, "width,mean_abs_dev,pairs_retained\n");
    for (const auto& r : rows)
        std::fprintf(f, "%d,%.17g,%d\n", r.width, r.mean_abs_dev, r.pairs_retained);
    if (f != stdout) std::fclose(f);
    for (const auto& r : rows)
        std::printf("w=%-6d mean |NTK/(c*NPK) - 1| = %.4f  (%d pairs)\n", r.width, r.mean_abs_dev,
                    r.pairs_retained);
    return 0;
}

int run_report(const std::string& ledger_path) {
    const auto rows = read_ledger(ledger_path);
    if (rows.empty()) {
        std::printf("ledger %s is empty\n", ledger_path.c_str());
        return 0;
    }
    struct Agg {
        int n = 0;
        double sum = 0.0, sum2 = 0.0;
    };
    std::map<std::string, Agg> groups;
    for (const auto& r : rows) {
        std::string key = r.subcommand + "/" + r.mode;
        if (r.subcommand == "sweep") {
            if (r.permutation_id == "with-input" || r.permutation_id == "all-ones")
                key += "/" + r.permutation_id;
            else {
                bool identity = true;
                for (size_t i = 0; i < r.permutation_id.size(); ++i)
                    identity = identity && r.permutation_id[i] == static_cast<char>('0' + i);
                key += identity ? "/identity" : "/shuffled";
            }
        }
        Agg& a = groups[key];
        ++a.n;
        a.sum += r.test_accuracy;
        a.sum2 += r.test_accuracy * r.test_accuracy;
    }
    std::printf("%-40s %6s %10s %10s\n", "group", "runs", "mean_acc", "std");
    for (const auto& [key, a] : groups) {
        const double mean = a.sum / a.n;
        const double var = std::max(0.0, a.sum2 / a.n - mean * mean);
        std::printf("%-40s %6d %10.4f %10.4f\n", key.c_str(), a.n, mean, std::sqrt(var));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"galupath: gated networks in the path basis"};
    app.require_subcommand(1);

    auto* verify = app.add_subcommand("verify", "run the invariant suite");
    bool quick = false;
    verify->add_flag("--quick", quick, "trimmed case counts, skip training studies");

    auto* npk = app.add_subcommand("npk", "emit a path-kernel gram CSV");
    std::string npk_spec, npk_out, npk_method = "closed", npk_bin;
    npk->add_option("--spec", npk_spec, "experiment config")->required();
    npk->add_option("--out", npk_out, "output CSV")->required();
    npk->add_option("--method", npk_method, "closed | brute")
        ->check(CLI::IsMember({"closed", "brute"}));
    npk->add_option("--binary", npk_bin, "also write the compact binary form");

    auto* ntk = app.add_subcommand("ntk", "emit an empirical gradient-kernel gram CSV");
    std::string ntk_spec, ntk_out, ntk_scope = "value";
    ntk->add_option("--spec", ntk_spec, "experiment config")->required();
    ntk->add_option("--out", ntk_out, "output CSV")->required();
    ntk->add_option("--scope", ntk_scope, "value | all")->check(CLI::IsMember({"value", "all"}));

    auto* tr = app.add_subcommand("train", "run one training configuration");
    std::string train_config;
    std::uint64_t seed = 0;
    tr->add_option("--config", train_config, "experiment config")->required();
    CLI::Option* seed_opt = tr->add_option("--seed", seed, "override the config seed");

    auto* sweep = app.add_subcommand("sweep", "permutation or constant-input suites");
    std::string sweep_spec;
    bool sweep_perm = false, sweep_allones = false;
    std::uint64_t sweep_seed = 0;
    sweep->add_option("--spec", sweep_spec, "experiment config")->required();
    sweep->add_flag("--permutations", sweep_perm, "train one model per gating-mask permutation");
    sweep->add_flag("--allones", sweep_allones, "train (x,x) against (x,1)");
    CLI::Option* sweep_seed_opt = sweep->add_option("--seed", sweep_seed, "override the config seed");

    auto* ratio = app.add_subcommand("ratio-study", "NTK/NPK deviation across widths");
    std::string ratio_spec, ratio_widths = "64,256,1024", ratio_out;
    int ratio_inputs = 10, ratio_seeds = 5;
    ratio->add_option("--spec", ratio_spec, "experiment config")->required();
    ratio->add_option("--widths", ratio_widths, "comma-separated widths");
    ratio->add_option("--inputs", ratio_inputs, "number of unit inputs");
    ratio->add_option("--seeds", ratio_seeds, "number of seeds");
    ratio->add_option("--out", ratio_out, "output CSV (default stdout)");

    auto* report = app.add_subcommand("report", "summarize a results ledger");
    std::string report_ledger;
    report->add_option("--ledger", report_ledger, "ledger CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (verify->parsed()) return run_verify(quick);
        if (npk->parsed()) return run_npk(npk_spec, npk_out, npk_method, npk_bin);
        if (ntk->parsed()) return run_ntk(ntk_spec, ntk_out, ntk_scope);
        if (tr->parsed()) return run_train(train_config, seed, seed_opt->count() > 0);
        if (sweep->parsed())
            return run_sweep(sweep_spec, sweep_perm, sweep_allones, sweep_seed,
                             sweep_seed_opt->count() > 0);
        if (ratio->parsed())
            return run_ratio_study(ratio_spec, ratio_widths, ratio_inputs, ratio_seeds, ratio_out);
        if (report->parsed()) return run_report(report_ledger);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
