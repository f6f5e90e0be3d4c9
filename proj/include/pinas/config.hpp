#pragma once

#include "pinas/data.hpp"
#include "pinas/linear_eval.hpp"
#include "pinas/pi_training.hpp"
#include "pinas/search_rank.hpp"
#include "pinas/search_space.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pinas::config {

// Where a default comes from: the published recipe, a desk-scale
// substitute, or an implementation decision.
enum class Origin { published, desk_scale, decision };
const char* origin_name(Origin o);

struct RunConfig {
    std::uint64_t seed = 7;

    std::string data_source = "synthetic";  // synthetic | cifar10
    std::string data_path;
    std::uint64_t data_seed = 1000;
    data::SyntheticSpec synthetic;
    int val_per_class = 32;
    int calib_per_class = 16;
    std::vector<float> norm_mean{0.1f, 0.1f};
    std::vector<float> norm_std{0.2f, 0.2f};

    data::AugmentPolicy aug;

    std::string space_kind = "chain";  // chain | cell
    int space_layers = 2;
    int space_stem_width = 8;
    std::vector<std::string> space_options{"k3d1", "k3d2", "k1"};
    std::vector<int> space_reduce_at{0};
    std::vector<std::string> cell_ops{"none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"};
    int cell_nodes = 4;
    int cell_stages = 2;
    int cells_per_stage = 1;

    int embed_dim = 64;
    bool projector_bn = true;

    pi::AblationFlags ablation;

    int train_epochs = 40;
    int train_batch = 64;
    double train_lr = 0.03;
    double train_momentum = 0.9;
    double train_weight_decay = 1e-4;
    double train_warmup = 0.1;
    double tau = 0.5;
    double lambda = 0.99;
    int queue = 512;
    double collapse_factor = 0.1;
    bool abort_on_collapse = true;
    int checkpoint_every = 100;

    int linear_epochs = 30;
    int linear_batch = 64;
    double linear_lr = 0.1;
    double linear_crop_min = 0.8;
    double linear_momentum = 0.9;
    double linear_weight_decay = 0.0;

    int search_budget = 100;
    int search_population = 0;
    int search_tournament = 4;
    int search_mutation_k = 1;
    int calib_batch = 64;

    int oracle_epochs = 30;
    int oracle_batch = 128;
    double oracle_lr = 0.05;
    double oracle_momentum = 0.9;
    double oracle_weight_decay = 5e-4;
    std::uint64_t oracle_seed = 0;
    int oracle_repeats = 1;
    std::string oracle_cache;

    int rank_top = 5;
    int rank_random = 8;
    std::string rank_table;
    std::vector<std::string> rank_exclude_ops;
    std::vector<std::string> rank_skip_from;
    int rank_sample = 20;

    int diag_paths = 4;
    int diag_probe = 256;
    int diag_bins = 64;
    std::string diag_layer = "stem.conv.weight";
    int diag_snapshot_every = 20;

    bool operator==(const RunConfig&) const;
};

struct FieldInfo {
    std::string key;
    Origin origin;
};
const std::vector<FieldInfo>& fields();

// "key=value  # origin" lines in field order; doubles as %.17g.
std::string serialize(const RunConfig& c);
// Rejects unknown or repeated keys and malformed values (ConfigError with
// the line number). Keys not present keep their defaults.
RunConfig parse(const std::string& text);
RunConfig load(const std::string& path);
void save(const RunConfig& c, const std::string& path);
// Applies one "key=value" override.
void set(RunConfig& c, const std::string& assignment);
std::string get(const RunConfig& c, const std::string& key);

// Checks cross-field consistency (ConfigError).
void validate(const RunConfig& c);

// Derived objects.
space::SearchSpace make_space(const RunConfig& c);
pi::TrainConfig train_config(const RunConfig& c);
linear::LinearConfig linear_config(const RunConfig& c);
search::EvolutionConfig evolution_config(const RunConfig& c);
search::OracleConfig oracle_config(const RunConfig& c);

}  // namespace pinas::config
