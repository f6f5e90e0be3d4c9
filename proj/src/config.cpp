#include "pinas/config.hpp"

#include "pinas/error.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace pinas::config {

const char* origin_name(Origin o) {
    switch (o) {
        case Origin::published: return "published";
        case Origin::desk_scale: return "desk_scale";
        case Origin::decision: return "decision";
    }
    return "?";
}

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

std::string fmt_double(double d) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    return buf;
}

[[noreturn]] void bad(const std::string& key, const std::string& v, const char* what) {
    throw ConfigError("invalid value '" + v + "' for " + key + ": expected " + what);
}

long long to_ll(const std::string& key, const std::string& v) {
    long long x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "an integer");
    return x;
}

double to_d(const std::string& key, const std::string& v) {
    if (v.empty()) bad(key, v, "a number");
    char* end = nullptr;
    errno = 0;
    const double d = std::strtod(v.c_str(), &end);
    if (errno != 0 || end != v.c_str() + v.size()) bad(key, v, "a number");
    return d;
}

struct Binding {
    std::string key;
    Origin origin;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <class Ref>
Binding int_field(std::string key, Origin o, Ref ref) {
    return {key, o, [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
            [ref, key](RunConfig& c, const std::string& v) {
                const long long x = to_ll(key, v);
                if (x < INT32_MIN || x > INT32_MAX) bad(key, v, "a 32-bit integer");
                ref(c) = static_cast<int>(x);
            }};
}

template <class Ref>
Binding u64_field(std::string key, Origin o, Ref ref) {
    return {key, o, [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
            [ref, key](RunConfig& c, const std::string& v) {
                std::uint64_t x = 0;
                auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
                if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "an unsigned integer");
                ref(c) = x;
            }};
}

template <class Ref>
Binding dbl_field(std::string key, Origin o, Ref ref) {
    return {key, o, [ref](const RunConfig& c) { return fmt_double(ref(const_cast<RunConfig&>(c))); },
            [ref, key](RunConfig& c, const std::string& v) { ref(c) = to_d(key, v); }};
}

template <class Ref>
Binding bool_field(std::string key, Origin o, Ref ref) {
    return {key, o, [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); },
            [ref, key](RunConfig& c, const std::string& v) {
                if (v == "true" || v == "1")
                    ref(c) = true;
                else if (v == "false" || v == "0")
                    ref(c) = false;
                else
                    bad(key, v, "true or false");
            }};
}

template <class Ref>
Binding str_field(std::string key, Origin o, Ref ref) {
    return {key, o, [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
            [ref](RunConfig& c, const std::string& v) { ref(c) = v; }};
}

template <class Ref>
Binding strs_field(std::string key, Origin o, Ref ref) {
    return {key, o,
            [ref](const RunConfig& c) {
                std::string s;
                for (const auto& x : ref(const_cast<RunConfig&>(c))) s += (s.empty() ? "" : ",") + x;
                return s;
            },
            [ref](RunConfig& c, const std::string& v) { ref(c) = split_list(v); }};
}

template <class Ref>
Binding ints_field(std::string key, Origin o, Ref ref) {
    return {key, o,
            [ref](const RunConfig& c) {
                std::string s;
                for (int x : ref(const_cast<RunConfig&>(c))) s += (s.empty() ? "" : ",") + std::to_string(x);
                return s;
            },
            [ref, key](RunConfig& c, const std::string& v) {
                std::vector<int> out;
                for (const auto& x : split_list(v)) out.push_back(static_cast<int>(to_ll(key, x)));
                ref(c) = out;
            }};
}

template <class Ref>
Binding floats_field(std::string key, Origin o, Ref ref) {
    return {key, o,
            [ref](const RunConfig& c) {
                std::string s;
                for (float x : ref(const_cast<RunConfig&>(c))) s += (s.empty() ? "" : ",") + fmt_double(x);
                return s;
            },
            [ref, key](RunConfig& c, const std::string& v) {
                std::vector<float> out;
                for (const auto& x : split_list(v)) out.push_back(static_cast<float>(to_d(key, x)));
                ref(c) = out;
            }};
}

#define REF(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Binding>& bindings() {
    using O = Origin;
    static const std::vector<Binding> b = {
        u64_field("seed", O::decision, REF(seed)),
        str_field("data.source", O::desk_scale, REF(data_source)),
        str_field("data.path", O::decision, REF(data_path)),
        u64_field("data.seed", O::decision, REF(data_seed)),
        int_field("data.synthetic.classes", O::desk_scale, REF(synthetic.num_classes)),
        int_field("data.synthetic.image_size", O::desk_scale, REF(synthetic.image_size)),
        int_field("data.synthetic.channels", O::desk_scale, REF(synthetic.channels)),
        int_field("data.synthetic.train_per_class", O::desk_scale, REF(synthetic.train_per_class)),
        int_field("data.synthetic.test_per_class", O::desk_scale, REF(synthetic.test_per_class)),
        dbl_field("data.synthetic.blob_sigma", O::decision, REF(synthetic.blob_sigma)),
        dbl_field("data.synthetic.small_blob_sigma", O::decision, REF(synthetic.small_blob_sigma)),
        dbl_field("data.synthetic.offset", O::decision, REF(synthetic.offset)),
        dbl_field("data.synthetic.angle_jitter", O::decision, REF(synthetic.angle_jitter)),
        dbl_field("data.synthetic.offset_jitter", O::decision, REF(synthetic.offset_jitter)),
        dbl_field("data.synthetic.size_jitter", O::decision, REF(synthetic.size_jitter)),
        dbl_field("data.synthetic.position_jitter", O::decision, REF(synthetic.position_jitter)),
        dbl_field("data.synthetic.amplitude_jitter", O::decision, REF(synthetic.amplitude_jitter)),
        dbl_field("data.synthetic.tint_jitter", O::decision, REF(synthetic.tint_jitter)),
        dbl_field("data.synthetic.noise", O::decision, REF(synthetic.noise)),
        int_field("data.val_per_class", O::desk_scale, REF(val_per_class)),
        int_field("data.calib_per_class", O::desk_scale, REF(calib_per_class)),
        floats_field("data.norm_mean", O::decision, REF(norm_mean)),
        floats_field("data.norm_std", O::decision, REF(norm_std)),
        bool_field("aug.random_resize_crop", O::published, REF(aug.random_resize_crop)),
        dbl_field("aug.crop_scale_min", O::desk_scale, REF(aug.crop_scale_min)),
        dbl_field("aug.crop_scale_max", O::published, REF(aug.crop_scale_max)),
        dbl_field("aug.flip_prob", O::published, REF(aug.flip_prob)),
        dbl_field("aug.jitter_prob", O::published, REF(aug.jitter_prob)),
        dbl_field("aug.brightness", O::published, REF(aug.brightness)),
        dbl_field("aug.contrast", O::published, REF(aug.contrast)),
        dbl_field("aug.saturation", O::published, REF(aug.saturation)),
        dbl_field("aug.hue", O::published, REF(aug.hue)),
        dbl_field("aug.drop_prob", O::published, REF(aug.drop_prob)),
        dbl_field("aug.blur_prob", O::published, REF(aug.blur_prob)),
        dbl_field("aug.blur_sigma_min", O::published, REF(aug.blur_sigma_min)),
        dbl_field("aug.blur_sigma_max", O::published, REF(aug.blur_sigma_max)),
        str_field("space.kind", O::desk_scale, REF(space_kind)),
        int_field("space.layers", O::desk_scale, REF(space_layers)),
        int_field("space.stem_width", O::desk_scale, REF(space_stem_width)),
        strs_field("space.options", O::desk_scale, REF(space_options)),
        ints_field("space.reduce_at", O::desk_scale, REF(space_reduce_at)),
        strs_field("space.cell_ops", O::published, REF(cell_ops)),
        int_field("space.cell_nodes", O::published, REF(cell_nodes)),
        int_field("space.cell_stages", O::desk_scale, REF(cell_stages)),
        int_field("space.cells_per_stage", O::desk_scale, REF(cells_per_stage)),
        int_field("supernet.embed_dim", O::desk_scale, REF(embed_dim)),
        bool_field("supernet.projector_bn", O::decision, REF(projector_bn)),
        bool_field("ablation.cross_path", O::published, REF(ablation.cross_path)),
        bool_field("ablation.mean_teacher", O::published, REF(ablation.mean_teacher)),
        bool_field("ablation.downsample_sharing", O::published, REF(ablation.downsample_sharing)),
        bool_field("ablation.nontrivial", O::published, REF(ablation.nontrivial)),
        bool_field("ablation.supervised_spos", O::published, REF(ablation.supervised_spos)),
        int_field("train.epochs", O::desk_scale, REF(train_epochs)),
        int_field("train.batch_size", O::desk_scale, REF(train_batch)),
        dbl_field("train.lr", O::desk_scale, REF(train_lr)),
        dbl_field("train.momentum", O::published, REF(train_momentum)),
        dbl_field("train.weight_decay", O::decision, REF(train_weight_decay)),
        dbl_field("train.warmup_fraction", O::desk_scale, REF(train_warmup)),
        dbl_field("train.tau", O::desk_scale, REF(tau)),
        dbl_field("train.lambda", O::desk_scale, REF(lambda)),
        int_field("train.queue", O::desk_scale, REF(queue)),
        dbl_field("train.collapse_factor", O::decision, REF(collapse_factor)),
        bool_field("train.abort_on_collapse", O::decision, REF(abort_on_collapse)),
        int_field("train.checkpoint_every", O::decision, REF(checkpoint_every)),
        int_field("linear.epochs", O::desk_scale, REF(linear_epochs)),
        int_field("linear.batch_size", O::desk_scale, REF(linear_batch)),
        dbl_field("linear.lr", O::desk_scale, REF(linear_lr)),
        dbl_field("linear.crop_scale_min", O::desk_scale, REF(linear_crop_min)),
        dbl_field("linear.momentum", O::published, REF(linear_momentum)),
        dbl_field("linear.weight_decay", O::published, REF(linear_weight_decay)),
        int_field("search.budget", O::desk_scale, REF(search_budget)),
        int_field("search.population", O::decision, REF(search_population)),
        int_field("search.tournament", O::decision, REF(search_tournament)),
        int_field("search.mutation_k", O::decision, REF(search_mutation_k)),
        int_field("search.calib_batch", O::decision, REF(calib_batch)),
        int_field("oracle.epochs", O::desk_scale, REF(oracle_epochs)),
        int_field("oracle.batch_size", O::desk_scale, REF(oracle_batch)),
        dbl_field("oracle.lr", O::desk_scale, REF(oracle_lr)),
        dbl_field("oracle.momentum", O::decision, REF(oracle_momentum)),
        dbl_field("oracle.weight_decay", O::decision, REF(oracle_weight_decay)),
        u64_field("oracle.seed", O::decision, REF(oracle_seed)),
        int_field("oracle.repeats", O::decision, REF(oracle_repeats)),
        str_field("oracle.cache", O::decision, REF(oracle_cache)),
        int_field("rank.top", O::published, REF(rank_top)),
        int_field("rank.random", O::published, REF(rank_random)),
        str_field("rank.table", O::decision, REF(rank_table)),
        strs_field("rank.exclude_ops", O::published, REF(rank_exclude_ops)),
        strs_field("rank.skip_from", O::published, REF(rank_skip_from)),
        int_field("rank.sample", O::desk_scale, REF(rank_sample)),
        int_field("diag.paths", O::published, REF(diag_paths)),
        int_field("diag.probe", O::decision, REF(diag_probe)),
        int_field("diag.bins", O::decision, REF(diag_bins)),
        str_field("diag.layer", O::decision, REF(diag_layer)),
        int_field("diag.snapshot_every", O::decision, REF(diag_snapshot_every)),
    };
    return b;
}

#undef REF

const Binding& find(const std::string& key) {
    static const std::map<std::string, const Binding*> index = [] {
        std::map<std::string, const Binding*> m;
        for (const auto& b : bindings()) m.emplace(b.key, &b);
        return m;
    }();
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown config key '" + key + "'");
    return *it->second;
}

}  // namespace

const std::vector<FieldInfo>& fields() {
    static const std::vector<FieldInfo> f = [] {
        std::vector<FieldInfo> out;
        for (const auto& b : bindings()) out.push_back({b.key, b.origin});
        return out;
    }();
    return f;
}

bool RunConfig::operator==(const RunConfig& o) const {
    for (const auto& b : bindings())
        if (b.get(*this) != b.get(o)) return false;
    return true;
}

std::string serialize(const RunConfig& c) {
    std::string out;
    for (const auto& b : bindings()) out += b.key + "=" + b.get(c) + "  # " + origin_name(b.origin) + "\n";
    return out;
}

void set(RunConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
    find(trim(assignment.substr(0, eq))).set(c, trim(assignment.substr(eq + 1)));
}

std::string get(const RunConfig& c, const std::string& key) { return find(key).get(c); }

RunConfig parse(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    std::set<std::string> seen;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "config line " + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
        const std::string key = trim(line.substr(0, eq));
        if (!seen.insert(key).second) throw ConfigError(where + "repeated key '" + key + "'");
        try {
            find(key).set(c, trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return c;
}

RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void save(const RunConfig& c, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write config " + path);
    out << serialize(c);
    if (!out) throw ConfigError("failed writing config " + path);
}

void validate(const RunConfig& c) {
    if (c.data_source != "synthetic" && c.data_source != "cifar10")
        throw ConfigError("data.source must be synthetic or cifar10");
    if (c.space_kind != "chain" && c.space_kind != "cell") throw ConfigError("space.kind must be chain or cell");
    if (c.tau <= 0) throw ConfigError("train.tau must be positive");
    if (c.lambda < 0 || c.lambda > 1) throw ConfigError("train.lambda must lie in [0,1]");
    if (c.queue < 0) throw ConfigError("train.queue must be non-negative");
    if (c.train_epochs < 0 || c.linear_epochs < 0 || c.oracle_epochs < 0) throw ConfigError("epochs must be non-negative");
    if (c.train_batch < 2 || c.linear_batch < 2 || c.oracle_batch < 2) throw ConfigError("batch sizes must be at least 2");
    if (c.checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be positive");
    if (c.oracle_repeats < 1) throw ConfigError("oracle.repeats must be positive");
    if (c.diag_probe < 2) throw ConfigError("diag.probe must be at least 2");
    if (c.diag_snapshot_every < 1) throw ConfigError("diag.snapshot_every must be positive");
    const std::size_t ch = c.data_source == "cifar10" ? 3 : static_cast<std::size_t>(c.synthetic.channels);
    for (const auto* v : {&c.norm_mean, &c.norm_std})
        if (v->size() != 1 && v->size() != ch)
            throw ConfigError("data.norm_mean/norm_std need 1 or " + std::to_string(ch) + " entries");
    for (float s : c.norm_std)
        if (!(s > 0)) throw ConfigError("data.norm_std entries must be positive");
    const auto& f = c.ablation;
    if (f.supervised_spos && (f.mean_teacher || f.nontrivial || f.cross_path))
        throw ConfigError("ablation.supervised_spos excludes cross_path, mean_teacher and nontrivial");
    (void)make_space(c);
}

space::SearchSpace make_space(const RunConfig& c) {
    const int in = c.data_source == "cifar10" ? 3 : c.synthetic.channels;
    if (c.space_kind == "chain")
        return space::SearchSpace(space::make_chain_space(in, c.space_stem_width, c.space_layers, c.space_options,
                                                          c.space_reduce_at, c.ablation.downsample_sharing));
    space::CellSpace cs;
    cs.in_channels = in;
    cs.stem_width = c.space_stem_width;
    cs.num_nodes = c.cell_nodes;
    cs.stages = c.cell_stages;
    cs.cells_per_stage = c.cells_per_stage;
    cs.op_set.clear();
    for (const auto& n : c.cell_ops) cs.op_set.push_back(space::parse_cell_op(n));
    if (cs.op_set.empty()) throw ConfigError("space.cell_ops is empty");
    return space::SearchSpace(cs);
}

pi::TrainConfig train_config(const RunConfig& c) {
    pi::TrainConfig t;
    t.epochs = c.train_epochs;
    t.batch_size = c.train_batch;
    t.base_lr = c.train_lr;
    t.warmup_fraction = c.train_warmup;
    t.seed = derive_seed(c.seed, "train");
    t.step.tau = c.tau;
    t.step.lambda = c.lambda;
    t.step.flags = c.ablation;
    t.step.policy = c.aug;
    t.step.norm_mean = c.norm_mean;
    t.step.norm_std = c.norm_std;
    t.step.collapse_factor = c.collapse_factor;
    t.step.abort_on_collapse = c.abort_on_collapse;
    return t;
}

linear::LinearConfig linear_config(const RunConfig& c) {
    linear::LinearConfig l;
    l.epochs = c.linear_epochs;
    l.batch_size = c.linear_batch;
    l.lr = c.linear_lr;
    l.momentum = c.linear_momentum;
    l.weight_decay = c.linear_weight_decay;
    l.policy = data::AugmentPolicy::crop_flip(c.linear_crop_min);
    l.norm_mean = c.norm_mean;
    l.norm_std = c.norm_std;
    l.seed = derive_seed(c.seed, "linear");
    return l;
}

search::EvolutionConfig evolution_config(const RunConfig& c) {
    return {c.search_budget, c.search_population, c.search_tournament, c.search_mutation_k};
}

search::OracleConfig oracle_config(const RunConfig& c) {
    search::OracleConfig o;
    o.epochs = c.oracle_epochs;
    o.batch_size = c.oracle_batch;
    o.lr = c.oracle_lr;
    o.momentum = c.oracle_momentum;
    o.weight_decay = c.oracle_weight_decay;
    o.policy = data::AugmentPolicy::crop_flip(c.aug.crop_scale_min);
    o.norm_mean = c.norm_mean;
    o.norm_std = c.norm_std;
    return o;
}

}  // namespace pinas::config
