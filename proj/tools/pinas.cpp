// Command-line front end: one subcommand per pipeline stage plus sweeps.
#include "pinas/baselines.hpp"
#include "pinas/config.hpp"
#include "pinas/error.hpp"
#include "pinas/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

using namespace pinas;

namespace {

config::RunConfig build_config(const std::string& file, const std::vector<std::string>& sets, const std::string& ablation) {
    config::RunConfig c = file.empty() ? config::RunConfig{} : config::load(file);
    if (!ablation.empty()) baselines::apply_mode(c, baselines::parse_mode(ablation));
    for (const auto& s : sets) config::set(c, s);
    config::validate(c);
    return c;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stoull(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("invalid seed '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError("--seeds is empty");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Supernet training with cross-path mean-teacher consistency, architecture search and ranking"};
    app.require_subcommand(1);
    std::string run_dir;

    auto* train = app.add_subcommand("train-supernet", "Create a run directory and train the supernet");
    std::string cfg_file, ablation;
    std::vector<std::string> sets;
    long stop_after = -1;
    bool resume = false;
    train->add_option("--run", run_dir, "Run directory")->required();
    train->add_option("--config", cfg_file, "key=value config file (defaults otherwise)");
    train->add_option("--set", sets, "Override one key, e.g. --set train.epochs=5 (repeatable)");
    train->add_option("--ablation", ablation,
                      "Trainer preset: pi_nas, spos, s_pi_model, no_cross_path, no_downsample_sharing, no_negatives");
    train->add_option("--stop-after-step", stop_after, "Checkpoint and exit once this many steps are done");
    train->add_flag("--resume", resume, "Continue from the latest checkpoint (config comes from the run directory)");

    auto* lin = app.add_subcommand("linear-eval", "Train the linear head on frozen supernet features");
    lin->add_option("--run", run_dir, "Run directory")->required();

    auto* srch = app.add_subcommand("search", "Evolutionary search scored by linear-eval accuracy");
    std::optional<int> budget;
    srch->add_option("--run", run_dir, "Run directory")->required();
    srch->add_option("--budget", budget, "Distinct evaluations (default search.budget)");

    auto* orc = app.add_subcommand("oracle", "Ground-truth accuracies for the ranking set");
    std::vector<std::string> archs;
    std::string table;
    orc->add_option("--run", run_dir, "Run directory")->required();
    orc->add_option("--arch", archs, "Architecture string (repeatable; default: ranking set from the search)");
    orc->add_option("--table", table, "Benchmark accuracy table; replaces oracle training");

    auto* rnk = app.add_subcommand("rank", "Kendall tau between estimated and ground-truth accuracy");
    rnk->add_option("--run", run_dir, "Run directory")->required();

    auto* dia = app.add_subcommand("diagnose", "Feature-shift similarity and parameter drift");
    dia->add_option("--run", run_dir, "Run directory")->required();

    auto* sweep = app.add_subcommand("sweep", "Full pipeline for several trainer modes and seeds");
    std::string root, modes_text = "pi_nas,s_pi_model,spos", seeds_text = "1,2,3,4,5";
    sweep->add_option("--root", root, "Directory receiving one run directory per (mode, seed)")->required();
    sweep->add_option("--modes", modes_text, "Comma-separated trainer modes");
    sweep->add_option("--seeds", seeds_text, "Comma-separated master seeds");
    sweep->add_option("--config", cfg_file, "Base config file");
    sweep->add_option("--set", sets, "Override one key of the base config (repeatable)");

    auto* show = app.add_subcommand("config", "Print the default config with each key's origin");
    show->add_option("--set", sets, "Override one key before printing (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    try {
        if (*train) {
            if (resume && (!cfg_file.empty() || !sets.empty() || !ablation.empty()))
                throw ConfigError("--resume takes its config from the run directory; drop --config/--set/--ablation");
            if (!resume) run::init_run(run_dir, build_config(cfg_file, sets, ablation));
            run::RunLock lock(run_dir);
            run::TrainOptions opt;
            opt.stop_after_step = stop_after;
            opt.resume = resume;
            const auto out = run::train_supernet(run_dir, opt);
            std::printf("%s after %ld steps\n", out.complete ? "supernet trained" : "checkpoint written", out.steps);
        } else if (*lin) {
            run::RunLock lock(run_dir);
            run::linear_eval(run_dir);
            std::printf("linear head trained\n");
        } else if (*srch) {
            run::RunLock lock(run_dir);
            const auto res = run::search(run_dir, budget);
            const auto sp = config::make_space(run::load_run_config(run_dir));
            std::printf("best %s est_acc %.4f over %zu evaluations\n", space::to_string(sp, res.best.arch).c_str(),
                        res.best.est_acc, res.trials.size());
        } else if (*orc) {
            run::RunLock lock(run_dir);
            const auto recs = run::oracle(run_dir, archs, table);
            std::printf("%zu ground-truth records\n", recs.size());
        } else if (*rnk) {
            run::RunLock lock(run_dir);
            const auto rep = run::rank(run_dir);
            std::printf("kendall_tau %.4f over %d architectures\n", rep.tau, rep.n);
        } else if (*dia) {
            run::RunLock lock(run_dir);
            const auto d = run::diagnose(run_dir);
            std::printf("off_diag_mean %.4f drift student %.4g teacher %.4g\n", d.off_diag_mean, d.student_drift,
                        d.teacher_drift);
        } else if (*sweep) {
            std::vector<baselines::TrainerMode> modes;
            std::stringstream ss(modes_text);
            std::string m;
            while (std::getline(ss, m, ',')) modes.push_back(baselines::parse_mode(m));
            const auto outcomes = baselines::run_sweep(modes, parse_seeds(seeds_text), build_config(cfg_file, sets, ""), root);
            for (const auto& o : outcomes)
                std::printf("%-22s seed %-4llu %s\n", baselines::mode_name(o.mode).c_str(),
                            static_cast<unsigned long long>(o.seed),
                            o.collapsed ? "collision" : ("tau " + std::to_string(*o.tau)).c_str());
            std::printf("summary written to %s/summary.tsv\n", root.c_str());
        } else if (*show) {
            config::RunConfig c;
            for (const auto& s : sets) config::set(c, s);
            std::cout << config::serialize(c);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(ExitCode::contract);
    }
    return 0;
}
