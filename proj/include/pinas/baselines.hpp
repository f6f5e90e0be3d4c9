#pragma once

#include "pinas/config.hpp"
#include "pinas/pi_training.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pinas::baselines {

enum class TrainerMode { pi_nas, spos, s_pi_model, no_cross_path, no_downsample_sharing, no_negatives };

const std::vector<TrainerMode>& all_modes();
std::string mode_name(TrainerMode m);
// Accepts '-' or '_' as separators.
TrainerMode parse_mode(const std::string& name);

pi::AblationFlags flags_for(TrainerMode m);
std::optional<TrainerMode> mode_of(const pi::AblationFlags& f);

// Sets the ablation block of `c` and nothing else.
void apply_mode(config::RunConfig& c, TrainerMode m);

// Keys whose values differ between two configs.
std::vector<std::string> config_diff(const config::RunConfig& a, const config::RunConfig& b);

struct ModeOutcome {
    TrainerMode mode = TrainerMode::pi_nas;
    std::uint64_t seed = 0;
    std::string run_dir;
    bool collapsed = false;
    std::string message;  // collapse diagnostic
    std::optional<double> tau;
    int n = 0;
};

// Full pipeline (train, linear eval, search, oracle, rank) for one mode in
// `run_dir`. A collapse is recorded in the outcome rather than thrown.
ModeOutcome run_mode(TrainerMode m, config::RunConfig base, const std::string& run_dir);

// Every (mode, seed) pair in its own run directory under `root`; writes
// root/sweep.tsv and root/summary.tsv (mean tau per mode).
std::vector<ModeOutcome> run_sweep(const std::vector<TrainerMode>& modes, const std::vector<std::uint64_t>& seeds,
                                   const config::RunConfig& base, const std::string& root);

}  // namespace pinas::baselines
