#include "pinas/baselines.hpp"

#include "pinas/error.hpp"
#include "pinas/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

namespace pinas::baselines {

namespace fs = std::filesystem;

const std::vector<TrainerMode>& all_modes() {
    static const std::vector<TrainerMode> m = {TrainerMode::pi_nas,        TrainerMode::spos,
                                               TrainerMode::s_pi_model,    TrainerMode::no_cross_path,
                                               TrainerMode::no_downsample_sharing, TrainerMode::no_negatives};
    return m;
}

std::string mode_name(TrainerMode m) {
    switch (m) {
        case TrainerMode::pi_nas: return "pi_nas";
        case TrainerMode::spos: return "spos";
        case TrainerMode::s_pi_model: return "s_pi_model";
        case TrainerMode::no_cross_path: return "no_cross_path";
        case TrainerMode::no_downsample_sharing: return "no_downsample_sharing";
        case TrainerMode::no_negatives: return "no_negatives";
    }
    return "?";
}

TrainerMode parse_mode(const std::string& name) {
    std::string n = name;
    for (char& c : n)
        if (c == '-') c = '_';
    for (TrainerMode m : all_modes())
        if (mode_name(m) == n) return m;
    std::string known;
    for (TrainerMode m : all_modes()) known += (known.empty() ? "" : ", ") + mode_name(m);
    throw ConfigError("unknown trainer mode '" + name + "' (known: " + known + ")");
}

pi::AblationFlags flags_for(TrainerMode m) {
    //                     cross_path mean_teacher ds    nontrivial spos
    switch (m) {
        case TrainerMode::pi_nas: return {true, true, true, true, false};
        case TrainerMode::spos: return {false, false, true, false, true};
        case TrainerMode::s_pi_model: return {true, false, true, true, false};
        case TrainerMode::no_cross_path: return {false, true, true, true, false};
        case TrainerMode::no_downsample_sharing: return {true, true, false, true, false};
        case TrainerMode::no_negatives: return {true, true, true, false, false};
    }
    throw ContractError("invalid trainer mode");
}

std::optional<TrainerMode> mode_of(const pi::AblationFlags& f) {
    for (TrainerMode m : all_modes())
        if (flags_for(m) == f) return m;
    return std::nullopt;
}

void apply_mode(config::RunConfig& c, TrainerMode m) { c.ablation = flags_for(m); }

std::vector<std::string> config_diff(const config::RunConfig& a, const config::RunConfig& b) {
    std::vector<std::string> out;
    for (const auto& f : config::fields())
        if (config::get(a, f.key) != config::get(b, f.key)) out.push_back(f.key);
    return out;
}

ModeOutcome run_mode(TrainerMode m, config::RunConfig cfg, const std::string& run_dir) {
    apply_mode(cfg, m);
    ModeOutcome out;
    out.mode = m;
    out.seed = cfg.seed;
    out.run_dir = run_dir;
    run::init_run(run_dir, cfg);
    run::RunLock lock(run_dir);
    try {
        run::train_supernet(run_dir);
    } catch (const CollapseError& e) {
        out.collapsed = true;
        out.message = e.what();
        return out;
    }
    run::linear_eval(run_dir);
    run::search(run_dir);
    run::oracle(run_dir);
    const auto report = run::rank(run_dir);
    out.tau = report.tau;
    out.n = report.n;
    return out;
}

std::vector<ModeOutcome> run_sweep(const std::vector<TrainerMode>& modes, const std::vector<std::uint64_t>& seeds,
                                   const config::RunConfig& base, const std::string& root) {
    fs::create_directories(root);
    std::vector<ModeOutcome> all;
    std::string tsv = "mode\tseed\trun_dir\toutcome\ttau\tn\n";
    for (TrainerMode m : modes)
        for (std::uint64_t s : seeds) {
            config::RunConfig c = base;
            c.seed = s;
            const std::string dir = (fs::path(root) / (mode_name(m) + "-seed" + std::to_string(s))).string();
            ModeOutcome o = run_mode(m, c, dir);
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.6f", o.tau.value_or(0.0));
            tsv += mode_name(m) + "\t" + std::to_string(s) + "\t" + dir + "\t" + (o.collapsed ? "collision" : "ok") +
                   "\t" + (o.tau ? buf : "-") + "\t" + std::to_string(o.n) + "\n";
            all.push_back(std::move(o));
        }
    {
        std::ofstream out(fs::path(root) / "sweep.tsv", std::ios::trunc);
        out << tsv;
    }

    // One row per mode, flags as columns, mean tau or the collision outcome.
    std::string summary = "mode\tcross_path\tmean_teacher\tdownsample_sharing\tnontrivial\tsupervised_spos\tmean_tau\truns\n";
    for (TrainerMode m : modes) {
        const auto f = flags_for(m);
        double sum = 0;
        int n = 0, collided = 0;
        for (const auto& o : all)
            if (o.mode == m) {
                if (o.tau) {
                    sum += *o.tau;
                    ++n;
                } else if (o.collapsed)
                    ++collided;
            }
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f", n ? sum / n : 0.0);
        const std::string tau = n ? std::string(buf) : (collided ? "collision" : "-");
        auto yn = [](bool b) { return b ? "x" : "-"; };
        summary += mode_name(m) + "\t" + yn(f.cross_path) + "\t" + yn(f.mean_teacher) + "\t" + yn(f.downsample_sharing) +
                   "\t" + yn(f.nontrivial) + "\t" + yn(f.supervised_spos) + "\t" + tau + "\t" +
                   std::to_string(n + collided) + "\n";
    }
    std::ofstream out(fs::path(root) / "summary.tsv", std::ios::trunc);
    out << summary;
    return all;
}

}  // namespace pinas::baselines
