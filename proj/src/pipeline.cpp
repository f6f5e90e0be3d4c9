#include "pinas/pipeline.hpp"

#include "pinas/diagnostics.hpp"
#include "pinas/error.hpp"
#include "pinas/linear_eval.hpp"
#include "pinas/pi_training.hpp"
#include "pinas/supernet.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace pinas::run {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string join(const std::string& dir, const std::string& rel) { return (fs::path(dir) / rel).string(); }

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Write to a temporary name, then rename over the target.
void write_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp);
        out << bytes;
        out.flush();
        if (!out) throw ConfigError("failed writing " + tmp);
    }
    fs::rename(tmp, path);
}

void mark(const std::string& dir, const std::string& stage) { write_atomic(join(dir, stage + "/DONE"), ""); }

void require_stage(const std::string& dir, const std::string& stage, const std::string& command) {
    if (!stage_done(dir, stage))
        throw PrerequisiteError("stage '" + stage + "' has not completed in " + dir + "; run `pinas " + command +
                                " --run " + dir + "` first");
}

void require_trained(const std::string& dir) {
    if (supernet_collapsed(dir))
        throw PrerequisiteError("supernet training in " + dir +
                                " ended in collapse (see supernet/COLLAPSED); later stages have nothing to evaluate");
    require_stage(dir, "supernet", "train-supernet");
}

void begin_stage(const std::string& dir, const std::string& stage) {
    if (stage_done(dir, stage)) throw ContractError("stage '" + stage + "' is already complete in " + dir);
    fs::create_directories(join(dir, stage));
}

supernet::Supernet make_net(const config::RunConfig& cfg, int num_classes) {
    return supernet::Supernet(config::make_space(cfg), num_classes, cfg.embed_dim, cfg.projector_bn);
}

ParameterStore load_student(const std::string& dir) { return ParameterStore::load_file(join(dir, "supernet/student.bin")); }

linear::LinearHead load_head(const supernet::Supernet& net, const std::string& dir) {
    linear::LinearHead head = linear::init_head(net, 0);
    ParameterStore stored = ParameterStore::load_file(join(dir, "linear/head.bin"));
    if (!stored.same_schema(head.params))
        throw ContractError("linear/head.bin does not match the supernet head (entry '" +
                            stored.first_schema_difference(head.params) + "')");
    head.params = std::move(stored);
    return head;
}

std::string hex(const unsigned char* p, unsigned n) {
    static const char* d = "0123456789abcdef";
    std::string s;
    for (unsigned i = 0; i < n; ++i) {
        s += d[p[i] >> 4];
        s += d[p[i] & 15];
    }
    return s;
}

// ---- checkpoints

constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    pi::TrainState state;
    std::map<long, Tensor> snaps_student, snaps_teacher;
    std::uint64_t teacher_start = 0;
    std::uint64_t queue_start = 0;
    double min_collapse = INFINITY;
};

std::uint64_t queue_checksum(const pi::FeatureQueue& q) {
    ParameterStore s;
    s.add("queue", EntryKind::buffer, q.buffer());
    return s.checksum() ^ (static_cast<std::uint64_t>(q.head()) << 32) ^ static_cast<std::uint64_t>(q.filled());
}

std::string checkpoint_name(long step) { return "supernet/checkpoint-" + std::to_string(step) + ".bin"; }

void save_checkpoint(const std::string& dir, const Checkpoint& ck) {
    ParameterStore out;
    for (const auto& e : ck.state.student.entries()) out.add("student/" + e.name, e.kind, e.value);
    for (const auto& e : ck.state.teacher.entries()) out.add("teacher/" + e.name, e.kind, e.value);
    for (const auto& [name, v] : ck.state.sgd.momentum_buffers) out.add("momentum/" + name, EntryKind::buffer, v);
    out.add("queue", EntryKind::buffer, ck.state.queue.buffer());
    for (const auto& [s, t] : ck.snaps_student) out.add("snap/student/" + std::to_string(s), EntryKind::buffer, t);
    for (const auto& [s, t] : ck.snaps_teacher) out.add("snap/teacher/" + std::to_string(s), EntryKind::buffer, t);

    const std::string bytes = out.serialize();
    const std::string name = checkpoint_name(ck.state.step);
    write_atomic(join(dir, name), bytes);

    json meta;
    meta["version"] = kCheckpointVersion;
    meta["step"] = ck.state.step;
    meta["file"] = name;
    meta["sha256"] = sha256_hex(bytes);
    meta["queue_capacity"] = ck.state.queue.capacity();
    meta["queue_head"] = ck.state.queue.head();
    meta["queue_filled"] = ck.state.queue.filled();
    meta["teacher_checksum_start"] = ck.teacher_start;
    meta["queue_checksum_start"] = ck.queue_start;
    meta["min_collapse"] = std::isfinite(ck.min_collapse) ? json(ck.min_collapse) : json(nullptr);
    std::string previous;
    const std::string meta_path = join(dir, "supernet/checkpoint.meta");
    if (fs::exists(meta_path)) previous = json::parse(read_file(meta_path)).value("file", "");
    write_atomic(meta_path, meta.dump(1) + "\n");
    if (!previous.empty() && previous != name) fs::remove(join(dir, previous));
}

Checkpoint load_checkpoint(const std::string& dir, const pi::TrainState& fresh) {
    const std::string meta_path = join(dir, "supernet/checkpoint.meta");
    if (!fs::exists(meta_path)) throw PrerequisiteError("no checkpoint to resume in " + dir);
    const json meta = json::parse(read_file(meta_path));
    if (meta.value("version", 0) != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
    const std::string bytes = read_file(join(dir, meta.at("file").get<std::string>()));
    if (sha256_hex(bytes) != meta.at("sha256").get<std::string>())
        throw ConfigError("checkpoint " + meta.at("file").get<std::string>() + " does not match its recorded hash");
    const ParameterStore in = ParameterStore::deserialize(bytes);

    Checkpoint ck;
    ck.state = fresh;
    ck.state.sgd.momentum_buffers.clear();
    ck.state.step = meta.at("step").get<long>();
    ParameterStore student, teacher;
    Tensor queue;
    for (const auto& e : in.entries()) {
        const auto slash = e.name.find('/');
        const std::string group = e.name.substr(0, slash);
        const std::string rest = slash == std::string::npos ? "" : e.name.substr(slash + 1);
        if (group == "student")
            student.add(rest, e.kind, e.value);
        else if (group == "teacher")
            teacher.add(rest, e.kind, e.value);
        else if (group == "momentum")
            ck.state.sgd.momentum_buffers[rest] = e.value;
        else if (group == "queue")
            queue = e.value;
        else if (group == "snap") {
            const auto s2 = rest.find('/');
            const long step = std::stol(rest.substr(s2 + 1));
            (rest.substr(0, s2) == "student" ? ck.snaps_student : ck.snaps_teacher)[step] = e.value;
        } else
            throw ConfigError("unexpected checkpoint entry '" + e.name + "'");
    }
    if (!student.same_schema(fresh.student) || !teacher.same_schema(fresh.teacher))
        throw ConfigError("checkpoint does not match the configured supernet");
    ck.state.student = std::move(student);
    ck.state.teacher = std::move(teacher);
    ck.state.queue = pi::FeatureQueue::restore(queue, meta.at("queue_head").get<int>(), meta.at("queue_filled").get<int>());
    ck.teacher_start = meta.at("teacher_checksum_start").get<std::uint64_t>();
    ck.queue_start = meta.at("queue_checksum_start").get<std::uint64_t>();
    ck.min_collapse = meta.at("min_collapse").is_null() ? INFINITY : meta.at("min_collapse").get<double>();
    return ck;
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string metrics_line(const space::SearchSpace& sp, const pi::StepResult& r) {
    json j;
    j["step"] = r.step;
    j["lr"] = r.lr;
    j["loss"] = nullable(r.loss.total);
    j["con"] = nullable(r.loss.con_term);
    j["add"] = nullable(r.loss.add_term);
    j["collapse"] = nullable(r.collapse);
    j["path_i"] = space::to_string(sp, r.path_i);
    j["path_j"] = space::to_string(sp, r.path_j);
    return j.dump();
}

// Keeps metric lines of steps before `step`.
void truncate_metrics(const std::string& path, long step) {
    if (!fs::exists(path)) return;
    std::ifstream in(path);
    std::string line, kept;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (json::parse(line).at("step").get<long>() < step) kept += line + "\n";
    }
    in.close();
    write_atomic(path, kept);
}

void append(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw ConfigError("cannot append to " + path);
    out << text;
    out.flush();
}

std::vector<space::ArchEncoding> parse_archs(const space::SearchSpace& sp, const std::vector<std::string>& names) {
    std::vector<space::ArchEncoding> out;
    for (const auto& n : names) out.push_back(space::parse_arch(sp, n));
    return out;
}

// The oracle trains standalone subnets, which have one reduction shortcut
// per reducing layer whether or not the supernet shares it.
space::SearchSpace oracle_space(config::RunConfig cfg) {
    cfg.ablation.downsample_sharing = true;
    return config::make_space(cfg);
}

std::string oracle_cache_key(const config::RunConfig& cfg) {
    std::string material;
    for (const auto& f : config::fields()) {
        const bool relevant = f.key.rfind("data.", 0) == 0 || f.key.rfind("space.", 0) == 0 ||
                              (f.key.rfind("oracle.", 0) == 0 && f.key != "oracle.cache") || f.key == "aug.crop_scale_min";
        if (relevant && f.key != "data.path") material += f.key + "=" + config::get(cfg, f.key) + "\n";
    }
    material += config::oracle_config(cfg).describe();
    return sha256_hex(material);
}

std::map<std::string, double> read_cache(const std::string& path) {
    std::map<std::string, double> out;
    std::ifstream in(path);
    std::string arch;
    double acc = 0;
    while (in >> arch >> acc) out[arch] = acc;
    return out;
}

}  // namespace

// ---- hashing, locking, manifest

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw NumericError("sha256 computation failed");
    return hex(md, len);
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

RunLock::RunLock(const std::string& dir) : path_(join(dir, "run.lock")) {
    fs::create_directories(dir);
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    std::string holder;
    if (fd < 0) {
        std::ifstream in(path_);
        std::getline(in, holder);
        // A killed run leaves its lock behind; reclaim it when the pid is gone.
        char* end = nullptr;
        const long pid = std::strtol(holder.c_str(), &end, 10);
        if (pid > 0 && end && *end == '\0' && ::kill(static_cast<pid_t>(pid), 0) != 0 && errno == ESRCH) {
            std::error_code ec;
            fs::remove(path_, ec);
            fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        }
    }
    if (fd < 0) {
        throw ContractError("run directory " + dir + " is locked (run.lock held by pid " +
                            (holder.empty() ? "?" : holder) + "); remove the file if that process is gone");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd, pid.data(), pid.size()) < 0) {
        ::close(fd);
        throw ContractError("cannot write " + path_);
    }
    ::close(fd);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

namespace {
bool skipped(const std::string& rel) {
    return rel == "manifest.txt" || rel == "run.lock" || (rel.size() > 4 && rel.substr(rel.size() - 4) == ".tmp");
}
}  // namespace

void write_manifest(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) {
            const std::string rel = fs::relative(e.path(), dir).generic_string();
            if (!skipped(rel)) files.push_back(rel);
        }
    std::sort(files.begin(), files.end());
    std::string out;
    for (const auto& f : files) out += sha256_file(join(dir, f)) + "  " + f + "\n";
    write_atomic(join(dir, "manifest.txt"), out);
}

std::vector<std::string> verify_manifest(const std::string& dir) {
    std::vector<std::string> problems;
    std::map<std::string, std::string> listed;
    std::ifstream in(join(dir, "manifest.txt"));
    if (!in) return {"manifest.txt missing"};
    std::string line;
    while (std::getline(in, line)) {
        if (line.size() < 67) continue;
        listed[line.substr(66)] = line.substr(0, 64);
    }
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string rel = fs::relative(e.path(), dir).generic_string();
        if (skipped(rel)) continue;
        auto it = listed.find(rel);
        if (it == listed.end())
            problems.push_back(rel + ": not in manifest");
        else if (it->second != sha256_file(e.path().string()))
            problems.push_back(rel + ": hash mismatch");
    }
    for (const auto& [rel, h] : listed)
        if (!fs::exists(join(dir, rel))) problems.push_back(rel + ": missing");
    return problems;
}

// ---- run directory

void init_run(const std::string& dir, const config::RunConfig& cfg) {
    config::validate(cfg);
    fs::create_directories(dir);
    const std::string path = join(dir, "config.txt");
    if (fs::exists(path)) {
        if (!(config::load(path) == cfg))
            throw ConfigError(dir + " already holds a run with a different config; use a new directory");
        return;
    }
    config::save(cfg, path);
}

config::RunConfig load_run_config(const std::string& dir) {
    const std::string path = join(dir, "config.txt");
    if (!fs::exists(path)) throw PrerequisiteError(dir + " is not a run directory (no config.txt); run `pinas train-supernet --run " + dir + "` first");
    config::RunConfig c = config::load(path);
    config::validate(c);
    return c;
}

bool stage_done(const std::string& dir, const std::string& stage) { return fs::exists(join(dir, stage + "/DONE")); }
bool supernet_collapsed(const std::string& dir) { return fs::exists(join(dir, "supernet/COLLAPSED")); }

Data load_data(const config::RunConfig& cfg) {
    Data d;
    data::Dataset full;
    if (cfg.data_source == "synthetic") {
        full = data::make_synthetic(cfg.synthetic, cfg.data_seed, data::Split::train);
        d.test = data::make_synthetic(cfg.synthetic, cfg.data_seed, data::Split::test);
    } else {
        const char* env = std::getenv("PINAS_DATA_DIR");
        const std::string root = env && *env ? env : cfg.data_path;
        if (root.empty()) throw ConfigError("data.source=cifar10 needs data.path or PINAS_DATA_DIR");
        full = data::load_cifar10(root);
        d.test = data::load_cifar10(join(root, "test_batch.bin"));
        d.test.split = data::Split::test;
    }
    d.splits = data::make_splits(full, cfg.val_per_class, cfg.calib_per_class, derive_seed(cfg.data_seed, "splits"));
    return d;
}

// ---- stages

TrainOutcome train_supernet(const std::string& dir, const TrainOptions& opt) {
    const config::RunConfig cfg = load_run_config(dir);
    if (stage_done(dir, "supernet") || supernet_collapsed(dir))
        throw ContractError("stage 'supernet' is already finished in " + dir);
    fs::create_directories(join(dir, "supernet"));
    const std::string meta_path = join(dir, "supernet/checkpoint.meta");
    const std::string metrics_path = join(dir, "supernet/metrics.jsonl");
    if (!opt.resume && fs::exists(meta_path))
        throw ContractError(dir + " has a training checkpoint; pass --resume to continue it");

    const Data data = load_data(cfg);
    const supernet::Supernet net = make_net(cfg, data.splits.train.num_classes);
    const pi::TrainConfig tc = config::train_config(cfg);
    const pi::TrainState fresh = pi::init_train_state(
        net, derive_seed(cfg.seed, "init"), cfg.queue,
        nn::SgdState{{}, cfg.train_lr, cfg.train_momentum, cfg.train_weight_decay});

    Checkpoint ck;
    if (opt.resume) {
        ck = load_checkpoint(dir, fresh);
        truncate_metrics(metrics_path, ck.state.step);
    } else {
        ck.state = fresh;
        ck.teacher_start = fresh.teacher.checksum();
        ck.queue_start = queue_checksum(fresh.queue);
        write_atomic(metrics_path, "");
    }
    if (!ck.state.student.contains(cfg.diag_layer))
        throw ConfigError("diag.layer '" + cfg.diag_layer + "' is not a supernet parameter");
    auto snapshot = [&](const pi::TrainState& s) {
        if (s.step % cfg.diag_snapshot_every != 0) return;
        ck.snaps_student[s.step] = s.student.get(cfg.diag_layer);
        ck.snaps_teacher[s.step] = s.teacher.get(cfg.diag_layer);
    };
    if (ck.state.step == 0) snapshot(ck.state);

    const long total = pi::steps_per_epoch(data.splits.train.size(), cfg.train_batch) * cfg.train_epochs;
    const long end = opt.stop_after_step >= 0 ? std::min(opt.stop_after_step, total) : total;
    std::string pending;
    auto flush = [&] {
        append(metrics_path, pending);
        pending.clear();
    };

    try {
        while (ck.state.step < end) {
            const long next = std::min(end, (ck.state.step / cfg.checkpoint_every + 1) * cfg.checkpoint_every);
            pi::train_supernet(net, ck.state, data.splits.train, tc, next,
                               [&](const pi::StepResult& r, const pi::TrainState& s) {
                                   pending += metrics_line(net.space(), r) + "\n";
                                   if (std::isfinite(r.collapse)) ck.min_collapse = std::min(ck.min_collapse, r.collapse);
                                   snapshot(s);
                               });
            // Metrics first: a checkpoint never refers to steps missing from the log.
            flush();
            save_checkpoint(dir, ck);
        }
    } catch (const CollapseError& e) {
        flush();
        json j;
        j["message"] = e.what();
        j["step"] = e.step();
        j["collapse_metric"] = e.metric();
        write_atomic(join(dir, "supernet/COLLAPSED"), j.dump(1) + "\n");
        write_manifest(dir);
        throw;
    }

    TrainOutcome out;
    out.steps = ck.state.step;
    if (ck.state.step < total) {
        write_manifest(dir);
        return out;
    }
    ck.snaps_student[ck.state.step] = ck.state.student.get(cfg.diag_layer);
    ck.snaps_teacher[ck.state.step] = ck.state.teacher.get(cfg.diag_layer);
    ck.state.student.save_file(join(dir, "supernet/student.bin"));
    ck.state.teacher.save_file(join(dir, "supernet/teacher.bin"));
    ParameterStore snaps;
    for (const auto& [s, t] : ck.snaps_student) snaps.add("student/" + std::to_string(s), EntryKind::buffer, t);
    for (const auto& [s, t] : ck.snaps_teacher) snaps.add("teacher/" + std::to_string(s), EntryKind::buffer, t);
    snaps.save_file(join(dir, "supernet/snapshots.bin"));
    json sum;
    sum["steps"] = ck.state.step;
    sum["teacher_checksum_start"] = ck.teacher_start;
    sum["teacher_checksum_end"] = ck.state.teacher.checksum();
    sum["queue_checksum_start"] = ck.queue_start;
    sum["queue_checksum_end"] = queue_checksum(ck.state.queue);
    sum["min_collapse"] = nullable(ck.min_collapse);
    sum["min_collapse_sqrt_d"] = nullable(ck.min_collapse * std::sqrt(static_cast<double>(cfg.embed_dim)));
    write_atomic(join(dir, "supernet/summary.json"), sum.dump(1) + "\n");
    mark(dir, "supernet");
    write_manifest(dir);
    out.complete = true;
    return out;
}

void linear_eval(const std::string& dir) {
    const config::RunConfig cfg = load_run_config(dir);
    require_trained(dir);
    begin_stage(dir, "linear");
    const Data data = load_data(cfg);
    const supernet::Supernet net = make_net(cfg, data.splits.train.num_classes);
    ParameterStore backbone = load_student(dir);
    backbone.freeze();
    linear::LinearHead head = linear::init_head(net, derive_seed(cfg.seed, "linear-head"));
    std::string log;
    linear::train_linear(net, backbone, head, data.splits.train, config::linear_config(cfg),
                         [&](const linear::EpochLog& e) {
                             json j;
                             j["epoch"] = e.epoch;
                             j["lr"] = e.lr;
                             j["train_acc"] = e.train_acc;
                             log += j.dump() + "\n";
                         });
    head.params.save_file(join(dir, "linear/head.bin"));
    write_atomic(join(dir, "linear/log.jsonl"), log);
    mark(dir, "linear");
    write_manifest(dir);
}

search::SearchResult search(const std::string& dir, std::optional<int> budget) {
    const config::RunConfig cfg = load_run_config(dir);
    require_trained(dir);
    require_stage(dir, "linear", "linear-eval");
    begin_stage(dir, "search");
    const Data data = load_data(cfg);
    const supernet::Supernet net = make_net(cfg, data.splits.train.num_classes);
    const ParameterStore backbone = load_student(dir);
    search::CandidateEvaluator eval(net, backbone, load_head(net, dir), data.splits.calibration, data.splits.search_val,
                                    cfg.norm_mean, cfg.norm_std, cfg.calib_batch);
    search::EvolutionConfig ec = config::evolution_config(cfg);
    if (budget) ec.budget = *budget;
    Rng rng(derive_seed(cfg.seed, "search"));
    search::SearchResult res = search::evolutionary_search(net.space(), eval.as_function(), ec, rng);
    search::write_records(join(dir, "search/trials.jsonl"), res.trials);
    json best;
    best["arch"] = space::to_string(net.space(), res.best.arch);
    best["est_acc"] = res.best.est_acc;
    best["budget"] = ec.budget;
    best["evaluations"] = res.trials.size();
    write_atomic(join(dir, "search/best.json"), best.dump(1) + "\n");
    mark(dir, "search");
    write_manifest(dir);
    return res;
}

std::vector<search::TrialRecord> oracle(const std::string& dir, const std::vector<std::string>& arch_names,
                                        const std::string& table_arg) {
    const config::RunConfig cfg = load_run_config(dir);
    const std::string table_path = table_arg.empty() ? cfg.rank_table : table_arg;
    const space::SearchSpace sp = oracle_space(cfg);

    std::vector<space::ArchEncoding> archs = parse_archs(sp, arch_names);
    std::optional<search::BenchmarkTable> table;
    if (!table_path.empty()) table = search::BenchmarkTable::load(table_path);
    if (archs.empty()) {
        if (table) {
            std::vector<space::CellOp> ex;
            for (const auto& o : cfg.rank_exclude_ops) ex.push_back(space::parse_cell_op(o));
            std::vector<space::ArchEncoding> pool =
                ex.empty() ? space::enumerate(sp) : space::enumerate(sp, space::exclude_cell_ops(sp, ex));
            std::erase_if(pool, [&](const auto& a) { return !table->contains(space::to_string(sp, a)); });
            Rng rng(derive_seed(cfg.seed, "rank-sample"));
            for (int i = static_cast<int>(pool.size()) - 1; i > 0; --i) std::swap(pool[i], pool[rng.below(i + 1)]);
            if (static_cast<int>(pool.size()) > cfg.rank_sample) pool.resize(cfg.rank_sample);
            archs = pool;
        } else {
            require_stage(dir, "search", "search");
            const auto trials = search::read_records(join(dir, "search/trials.jsonl"), sp);
            Rng rng(derive_seed(cfg.seed, "rank-set"));
            archs = search::ranking_set(sp, trials, cfg.rank_top, cfg.rank_random, rng);
        }
    }
    if (archs.empty()) throw ConfigError("no architectures to evaluate");
    begin_stage(dir, "oracle");

    std::vector<search::TrialRecord> out;
    if (table) {
        for (std::size_t i = 0; i < archs.size(); ++i) {
            search::TrialRecord r;
            r.arch = archs[i];
            r.oracle_acc = table->lookup(space::to_string(sp, archs[i]));
            r.source = search::OracleSource::benchmark_table;
            r.timestamp = static_cast<long>(i);
            out.push_back(r);
        }
        table->save(join(dir, "oracle/table.txt"));
    } else {
        const Data data = load_data(cfg);
        const search::OracleConfig oc = config::oracle_config(cfg);
        std::string cache_path;
        std::map<std::string, double> cache;
        if (!cfg.oracle_cache.empty()) {
            fs::create_directories(cfg.oracle_cache);
            cache_path = join(cfg.oracle_cache, oracle_cache_key(cfg) + ".tsv");
            cache = read_cache(cache_path);
        }
        for (std::size_t i = 0; i < archs.size(); ++i) {
            const std::string name = space::to_string(sp, archs[i]);
            double acc = 0;
            if (auto it = cache.find(name); it != cache.end()) {
                acc = it->second;
            } else {
                for (int r = 0; r < cfg.oracle_repeats; ++r)
                    acc += search::train_oracle(sp, data.splits.train.num_classes, archs[i], data.splits.train,
                                                data.test, oc, derive_seed(cfg.oracle_seed, "repeat", r));
                acc /= cfg.oracle_repeats;
                if (!cache_path.empty()) {
                    char buf[64];
                    std::snprintf(buf, sizeof buf, " %.17g\n", acc);
                    append(cache_path, name + buf);
                    cache[name] = acc;
                }
            }
            search::TrialRecord r;
            r.arch = archs[i];
            r.oracle_acc = acc;
            r.source = search::OracleSource::trained_oracle;
            r.seed = cfg.oracle_seed;
            r.timestamp = static_cast<long>(i);
            r.recipe = oc.describe() + " repeats=" + std::to_string(cfg.oracle_repeats);
            out.push_back(r);
        }
    }
    search::write_records(join(dir, "oracle/records.jsonl"), out);
    mark(dir, "oracle");
    write_manifest(dir);
    return out;
}

search::RankingReport rank(const std::string& dir) {
    const config::RunConfig cfg = load_run_config(dir);
    require_trained(dir);
    require_stage(dir, "linear", "linear-eval");
    require_stage(dir, "oracle", "oracle");
    begin_stage(dir, "rank");
    const Data data = load_data(cfg);
    const supernet::Supernet net = make_net(cfg, data.splits.train.num_classes);
    const space::SearchSpace& sp = net.space();
    const ParameterStore backbone = load_student(dir);
    search::CandidateEvaluator eval(net, backbone, load_head(net, dir), data.splits.calibration, data.splits.search_val,
                                    cfg.norm_mean, cfg.norm_std, cfg.calib_batch);

    auto records = search::read_records(join(dir, "oracle/records.jsonl"), sp);
    for (auto& r : records) r.est_acc = eval(r.arch);

    space::ArchFilter filter;
    if (!cfg.rank_exclude_ops.empty()) {
        std::vector<space::CellOp> ex;
        for (const auto& o : cfg.rank_exclude_ops) ex.push_back(space::parse_cell_op(o));
        filter = space::exclude_cell_ops(sp, ex);
    }
    const search::RankingReport report = search::ranking_report(sp, records, filter);
    search::write_records(join(dir, "rank/records.jsonl"), records);

    json rep;
    rep["tau"] = report.tau;
    rep["n"] = report.n;
    std::string scatter = "arch\test\toracle\n";
    for (const auto& p : report.scatter) {
        rep["scatter"].push_back({{"arch", p.arch}, {"est", p.est}, {"oracle", p.oracle}});
        char buf[96];
        std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\n", p.est, p.oracle);
        scatter += p.arch + buf;
    }
    write_atomic(join(dir, "rank/scatter.tsv"), scatter);

    const std::string table_path = join(dir, "oracle/table.txt");
    if (fs::exists(table_path) && !sp.is_chain() && !cfg.rank_skip_from.empty()) {
        const auto table = search::BenchmarkTable::load(table_path);
        std::string tsv = "op_from\tarch\tvariant\tsite\td_est\td_actual\n";
        for (const auto& from_name : cfg.rank_skip_from) {
            const space::CellOp from = space::parse_cell_op(from_name);
            // Estimates for every in-table substitution variant.
            std::vector<search::TrialRecord> extended;
            std::set<std::string> have;
            for (const auto& r : records) have.insert(space::to_string(sp, r.arch));
            for (const auto& r : records)
                for (const auto& [site, v] : search::substitutions(sp, r.arch, from, space::CellOp::skip)) {
                    const std::string vn = space::to_string(sp, v);
                    if (have.count(vn) || !table.contains(vn)) continue;
                    search::TrialRecord x;
                    x.arch = v;
                    x.est_acc = eval(v);
                    x.oracle_acc = table.lookup(vn);
                    x.source = search::OracleSource::benchmark_table;
                    extended.push_back(x);
                    have.insert(vn);
                }
            const auto changes = search::skip_sensitivity(sp, records, table, from, space::CellOp::skip, extended);
            for (const auto& c : changes) {
                char buf[128];
                std::snprintf(buf, sizeof buf, "\t%d\t%.6f\t%.6f\n", c.site, c.d_est, c.d_actual);
                tsv += from_name + "\t" + c.arch + "\t" + c.variant + buf;
            }
            const auto q = search::threshold_query(changes, 0.01);
            rep["skip"][from_name] = {{"pairs", changes.size()},
                                      {"small_est_change", q.count},
                                      {"actual_drops", q.actual_drops},
                                      {"mean_d_actual", q.mean_d_actual}};
        }
        write_atomic(join(dir, "rank/skip.tsv"), tsv);
    }
    write_atomic(join(dir, "rank/report.json"), rep.dump(1) + "\n");
    mark(dir, "rank");
    write_manifest(dir);
    return report;
}

DiagnoseOutcome diagnose(const std::string& dir) {
    const config::RunConfig cfg = load_run_config(dir);
    require_trained(dir);
    begin_stage(dir, "diagnostics");
    const Data data = load_data(cfg);
    const supernet::Supernet net = make_net(cfg, data.splits.train.num_classes);
    ParameterStore student = load_student(dir);

    std::vector<int> idx(data.test.size());
    for (int i = 0; i < data.test.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(cfg.seed, "probe"));
    for (int i = data.test.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    idx.resize(std::min<std::size_t>(idx.size(), cfg.diag_probe));
    std::sort(idx.begin(), idx.end());
    std::vector<Tensor> imgs;
    for (int i : idx) imgs.push_back(data.test.image(i));
    const Tensor probe = data::make_batch(imgs, cfg.norm_mean, cfg.norm_std);

    const auto paths = diag::last_site_variants(net.space(), cfg.diag_paths);
    const diag::SimilarityMatrix m = diag::feature_shift_matrix(net, student, paths, probe);
    std::string sim;
    for (int a = 0; a < m.size; ++a) {
        sim += space::to_string(net.space(), m.paths[a]);
        for (int b = 0; b < m.size; ++b) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "\t%.6f", m.at(a, b));
            sim += buf;
        }
        sim += "\n";
    }
    write_atomic(join(dir, "diagnostics/similarity.tsv"), sim);

    const ParameterStore snaps = ParameterStore::load_file(join(dir, "supernet/snapshots.bin"));
    DiagnoseOutcome out;
    out.off_diag_mean = m.off_diag_mean;
    json sum;
    sum["off_diag_mean"] = m.off_diag_mean;
    sum["probe"] = idx.size();
    for (const std::string who : {"student", "teacher"}) {
        std::vector<long> steps;
        std::vector<Tensor> values;
        for (const auto& e : snaps.entries())
            if (e.name.rfind(who + "/", 0) == 0) {
                steps.push_back(std::stol(e.name.substr(who.size() + 1)));
                values.push_back(e.value);
            }
        // Entries were stored in ascending step order.
        if (steps.size() < 2) continue;
        const diag::DriftSeries d = diag::parameter_drift(cfg.diag_layer, steps, values, cfg.diag_bins);
        std::string tsv = "step\tw1_to_previous";
        for (std::size_t b = 0; b + 1 < d.edges.size(); ++b) {
            char buf[48];
            std::snprintf(buf, sizeof buf, "\tbin[%.4g,%.4g)", d.edges[b], d.edges[b + 1]);
            tsv += buf;
        }
        tsv += "\n";
        for (std::size_t k = 0; k < d.steps.size(); ++k) {
            tsv += std::to_string(d.steps[k]);
            char buf[32];
            std::snprintf(buf, sizeof buf, "\t%.6g", k == 0 ? 0.0 : d.distances[k - 1]);
            tsv += buf;
            for (double h : d.histograms[k]) {
                std::snprintf(buf, sizeof buf, "\t%.6g", h);
                tsv += buf;
            }
            tsv += "\n";
        }
        write_atomic(join(dir, "diagnostics/drift_" + who + ".tsv"), tsv);
        sum["drift_" + who] = d.mean_distance;
        (who == "student" ? out.student_drift : out.teacher_drift) = d.mean_distance;
    }
    write_atomic(join(dir, "diagnostics/summary.json"), sum.dump(1) + "\n");
    mark(dir, "diagnostics");
    write_manifest(dir);
    return out;
}

}  // namespace pinas::run
