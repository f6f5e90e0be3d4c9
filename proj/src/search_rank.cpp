#include "pinas/search_rank.hpp"

#include "pinas/error.hpp"
#include "pinas/nn/optim.hpp"
#include "pinas/pi_training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace pinas::search {

using json = nlohmann::json;

const char* source_name(OracleSource s) {
    return s == OracleSource::trained_oracle ? "trained_oracle" : "benchmark_table";
}

// ---------------------------------------------------------------- records

std::string to_jsonl(const TrialRecord& r) {
    // Arch strings are rebuilt from the choice vector so the record is
    // self-contained without the space definition.
    json j;
    j["schema"] = kTrialSchemaVersion;
    j["space"] = r.arch.space_id;
    j["choices"] = r.arch.choices;
    j["est_acc"] = r.est_acc;
    j["oracle_acc"] = r.oracle_acc ? json(*r.oracle_acc) : json(nullptr);
    j["source"] = r.source ? json(source_name(*r.source)) : json(nullptr);
    j["seed"] = r.seed;
    j["timestamp"] = r.timestamp;
    j["recipe"] = r.recipe;
    return j.dump();
}

TrialRecord from_jsonl(const std::string& line, const space::SearchSpace& sp) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw IngestionError(std::string("malformed trial record: ") + e.what());
    }
    try {
        if (j.at("schema").get<int>() != kTrialSchemaVersion)
            throw IngestionError("unsupported trial record schema " + j.at("schema").dump());
        TrialRecord r;
        r.arch.space_id = j.at("space").get<std::string>();
        r.arch.choices = j.at("choices").get<std::vector<int>>();
        space::validate(sp, r.arch);
        r.est_acc = j.at("est_acc").get<double>();
        if (!j.at("oracle_acc").is_null()) r.oracle_acc = j.at("oracle_acc").get<double>();
        if (!j.at("source").is_null()) {
            const auto s = j.at("source").get<std::string>();
            if (s == "trained_oracle")
                r.source = OracleSource::trained_oracle;
            else if (s == "benchmark_table")
                r.source = OracleSource::benchmark_table;
            else
                throw IngestionError("unknown oracle source '" + s + "'");
        }
        r.seed = j.at("seed").get<std::uint64_t>();
        r.timestamp = j.at("timestamp").get<long>();
        r.recipe = j.at("recipe").get<std::string>();
        return r;
    } catch (const json::exception& e) {
        throw IngestionError(std::string("malformed trial record: ") + e.what());
    }
}

void write_records(const std::string& path, const std::vector<TrialRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IngestionError("cannot write " + path);
    for (const auto& r : records) out << to_jsonl(r) << '\n';
    if (!out) throw IngestionError("failed writing " + path);
}

std::vector<TrialRecord> read_records(const std::string& path, const space::SearchSpace& sp) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open " + path);
    std::vector<TrialRecord> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(from_jsonl(line, sp));
    return out;
}

// ---------------------------------------------------------------- evaluation

CandidateEvaluator::CandidateEvaluator(const supernet::Supernet& net, const ParameterStore& backbone,
                                       linear::LinearHead head, const data::Dataset& calibration,
                                       const data::Dataset& val, std::vector<float> norm_mean,
                                       std::vector<float> norm_std, int calib_batch)
    : net_(net), backbone_(backbone), head_(std::move(head)), calibration_(calibration), val_(val), mean_(std::move(norm_mean)),
      std_(std::move(norm_std)) {
    if (calibration.size() == 0) throw ConfigError("calibration split is empty");
    if (val.size() == 0) throw ConfigError("search validation split is empty");
    for (int b = 0; b + 1 < calibration.size(); b += calib_batch) {
        const int e = std::min(calibration.size(), b + calib_batch);
        if (e - b < 2) break;
        calib_batches_.push_back(data::normalize_batch(calibration.images.slice_rows(b, e), mean_, std_));
    }
}

double CandidateEvaluator::operator()(const ArchEncoding& arch) {
    const auto id = space::arch_id(net_.space(), arch);
    if (auto it = cache_.find(id); it != cache_.end()) return it->second;
    ParameterStore cal = supernet::recalibrate_bn(net_, backbone_, arch, calib_batches_);
    const Tensor f = linear::extract_features(net_, cal, arch, calibration_, true, mean_, std_);
    const double acc = linear::eval_linear(net_, cal, linear::calibrate_head(head_, f), arch, val_, true, mean_, std_);
    cache_.emplace(id, acc);
    return acc;
}

std::vector<TrialRecord> evaluate_candidates(const Evaluator& eval, const std::vector<ArchEncoding>& archs) {
    std::vector<TrialRecord> out;
    for (std::size_t i = 0; i < archs.size(); ++i) {
        TrialRecord r;
        r.arch = archs[i];
        r.est_acc = eval(archs[i]);
        r.timestamp = static_cast<long>(i);
        out.push_back(std::move(r));
    }
    std::stable_sort(out.begin(), out.end(), [](const TrialRecord& a, const TrialRecord& b) {
        if (a.est_acc != b.est_acc) return a.est_acc > b.est_acc;
        return a.arch.choices < b.arch.choices;
    });
    return out;
}

SearchResult evolutionary_search(const space::SearchSpace& sp, const Evaluator& eval, const EvolutionConfig& cfg,
                                 Rng& rng) {
    if (cfg.budget < 1) throw ConfigError("search budget must be at least 1");
    if (cfg.population < 0 || cfg.tournament < 1 || cfg.mutation_k < 1)
        throw ConfigError("search population, tournament and mutation_k must be positive");
    if (cfg.population > cfg.budget)
        throw ConfigError("search budget " + std::to_string(cfg.budget) + " is smaller than the population " +
                          std::to_string(cfg.population));
    const int pop_size = cfg.population > 0 ? cfg.population : std::min(16, cfg.budget);
    const std::uint64_t limit = std::min<std::uint64_t>(static_cast<std::uint64_t>(cfg.budget), sp.size());

    SearchResult res;
    std::map<std::uint64_t, double> seen;
    auto evaluate = [&](const ArchEncoding& a) -> std::pair<double, bool> {
        const auto id = space::arch_id(sp, a);
        if (auto it = seen.find(id); it != seen.end()) return {it->second, false};
        const double acc = eval(a);
        seen.emplace(id, acc);
        TrialRecord r;
        r.arch = a;
        r.est_acc = acc;
        r.timestamp = static_cast<long>(res.trials.size());
        res.trials.push_back(std::move(r));
        return {acc, true};
    };

    std::deque<std::pair<ArchEncoding, double>> population;
    while (static_cast<int>(population.size()) < pop_size && res.trials.size() < limit) {
        auto a = space::sample_uniform(sp, rng);
        const double acc = evaluate(a).first;
        population.emplace_back(std::move(a), acc);
    }
    int stall = 0;
    while (res.trials.size() < limit) {
        std::size_t best = rng.below(population.size());
        for (int t = 1; t < cfg.tournament; ++t) {
            const std::size_t c = rng.below(population.size());
            if (population[c].second > population[best].second) best = c;
        }
        const int k = std::min(cfg.mutation_k, sp.num_sites());
        // A long run of already-seen children means the neighbourhood is
        // exhausted; jump to a random point instead.
        ArchEncoding child = stall >= 50 ? space::sample_uniform(sp, rng) : space::mutate(sp, population[best].first, rng, k);
        const auto [acc, fresh] = evaluate(child);
        stall = fresh ? 0 : stall + 1;
        population.emplace_back(std::move(child), acc);
        population.pop_front();
    }
    res.best = *std::max_element(res.trials.begin(), res.trials.end(), [](const TrialRecord& a, const TrialRecord& b) {
        return a.est_acc < b.est_acc;
    });
    return res;
}

// ---------------------------------------------------------------- oracle

std::string OracleConfig::describe() const {
    std::ostringstream os;
    os << "sgd epochs=" << epochs << " batch=" << batch_size << " lr=" << lr << " cosine momentum=" << momentum
       << " wd=" << weight_decay << " aug=" << (policy.random_resize_crop ? "crop" : "") << "+"
       << (policy.flip_prob > 0 ? "flip" : "");
    return os.str();
}

double train_oracle(const space::SearchSpace& sp, int num_classes, const ArchEncoding& arch,
                    const data::Dataset& train, const data::Dataset& test, const OracleConfig& cfg,
                    std::uint64_t seed) {
    space::validate(sp, arch);
    if (cfg.epochs < 0) throw ConfigError("oracle.epochs must be non-negative");
    supernet::Supernet net(sp, num_classes, 16);
    auto sub = supernet::extract_subnet(net, net.make_store(derive_seed(seed, "oracle-init")), arch);
    const nn::ForwardContext train_ctx{nn::BnMode::tracked, true, nullptr};
    if (cfg.epochs > 0) {
        const long spe = pi::steps_per_epoch(train.size(), cfg.batch_size);
        const long total = spe * cfg.epochs;
        nn::SgdState sgd{{}, cfg.lr, cfg.momentum, cfg.weight_decay};
        std::vector<int> order;
        for (long step = 0; step < total; ++step) {
            const int epoch = static_cast<int>(step / spe);
            if (step % spe == 0)
                order = pi::epoch_order(train.size(), derive_seed(seed, "oracle-data"), epoch);
            Rng rng(derive_seed(seed, "oracle-step", static_cast<std::uint64_t>(step)));
            std::vector<Tensor> imgs;
            std::vector<int> labels;
            const long pos = (step % spe) * cfg.batch_size;
            for (long k = pos; k < pos + cfg.batch_size; ++k) {
                imgs.push_back(data::augment(train.image(order[k]), cfg.policy, rng));
                labels.push_back(train.labels[order[k]]);
            }
            sgd.lr = nn::cosine_lr(step, total, cfg.lr);
            nn::Tape tape;
            Tensor logits =
                sub.classifier->forward(sub.params, data::make_batch(imgs, cfg.norm_mean, cfg.norm_std), train_ctx, &tape);
            auto ce = nn::softmax_cross_entropy(logits, labels);
            if (!std::isfinite(ce.loss))
                throw NumericError("oracle training diverged at step " + std::to_string(step));
            GradStore g;
            sub.classifier->backward(sub.params, tape, ce.grad, g);
            nn::sgd_step(sub.params, g, sgd);
        }
    }
    const nn::ForwardContext eval_ctx{nn::BnMode::tracked, false, nullptr};
    std::vector<Tensor> parts;
    for (int b = 0; b < test.size(); b += 256) {
        const int e = std::min(test.size(), b + 256);
        parts.push_back(sub.classifier->forward(
            sub.params, data::normalize_batch(test.images.slice_rows(b, e), cfg.norm_mean, cfg.norm_std), eval_ctx,
            nullptr));
    }
    return linear::accuracy(concat_rows(parts), test.labels);
}

// ---------------------------------------------------------------- ranking

double kendall_tau(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw ContractError("kendall_tau: length mismatch (" + std::to_string(xs.size()) + " vs " +
                            std::to_string(ys.size()) + ")");
    const std::size_t n = xs.size();
    if (n < 2) throw ContractError("kendall_tau needs at least 2 pairs");
    long long concordant = 0, discordant = 0, tie_x = 0, tie_y = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = xs[i] - xs[j], dy = ys[i] - ys[j];
            if (dx == 0) ++tie_x;
            if (dy == 0) ++tie_y;
            if (dx == 0 || dy == 0) continue;
            ((dx > 0) == (dy > 0) ? concordant : discordant) += 1;
        }
    const long long n0 = static_cast<long long>(n * (n - 1) / 2);
    if (tie_x == n0 || tie_y == n0) throw ContractError("kendall_tau is undefined when one list is all ties");
    return static_cast<double>(concordant - discordant) /
           std::sqrt(static_cast<double>(n0 - tie_x) * static_cast<double>(n0 - tie_y));
}

RankingReport ranking_report(const space::SearchSpace& sp, const std::vector<TrialRecord>& records,
                             const space::ArchFilter& filter) {
    RankingReport rep;
    std::vector<double> est, orc;
    for (const auto& r : records) {
        if (filter && !filter(r.arch)) continue;
        if (!r.oracle_acc)
            throw ContractError("record " + space::to_string(sp, r.arch) + " has no ground-truth accuracy");
        est.push_back(r.est_acc);
        orc.push_back(*r.oracle_acc);
        rep.scatter.push_back({space::to_string(sp, r.arch), r.est_acc, *r.oracle_acc});
    }
    rep.n = static_cast<int>(est.size());
    if (rep.n < 2) throw ContractError("ranking report needs at least 2 records after filtering, got " + std::to_string(rep.n));
    rep.tau = kendall_tau(est, orc);
    return rep;
}

std::vector<ArchEncoding> ranking_set(const space::SearchSpace& sp, const std::vector<TrialRecord>& searched,
                                      int top, int random_count, Rng& rng) {
    if (top < 0 || random_count < 0) throw ConfigError("ranking set sizes must be non-negative");
    const std::uint64_t want = static_cast<std::uint64_t>(top) + static_cast<std::uint64_t>(random_count);
    if (sp.size() <= want) return space::enumerate(sp);
    std::vector<TrialRecord> sorted = searched;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const TrialRecord& a, const TrialRecord& b) { return a.est_acc > b.est_acc; });
    std::vector<ArchEncoding> out;
    std::set<std::uint64_t> ids;
    for (const auto& r : sorted) {
        if (static_cast<int>(out.size()) >= top) break;
        if (ids.insert(space::arch_id(sp, r.arch)).second) out.push_back(r.arch);
    }
    const std::size_t target = out.size() + static_cast<std::size_t>(random_count);
    while (out.size() < target) {
        auto a = space::sample_uniform(sp, rng);
        if (ids.insert(space::arch_id(sp, a)).second) out.push_back(std::move(a));
    }
    return out;
}

// ---------------------------------------------------------------- benchmark table

BenchmarkTable::BenchmarkTable(std::map<std::string, double> entries) : entries_(std::move(entries)) {
    for (const auto& [k, v] : entries_)
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("benchmark accuracy for " + k + " outside [0,1]");
}

BenchmarkTable BenchmarkTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open benchmark table " + path);
    std::map<std::string, double> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string arch;
        double acc = 0.0;
        if (!(ls >> arch)) continue;
        std::string extra;
        if (!(ls >> acc) || (ls >> extra))
            throw IngestionError(path + ":" + std::to_string(lineno) + ": expected '<arch> <accuracy>'");
        if (!(acc >= 0.0 && acc <= 1.0))
            throw IngestionError(path + ":" + std::to_string(lineno) + ": accuracy outside [0,1]");
        if (!entries.emplace(arch, acc).second)
            throw IngestionError(path + ":" + std::to_string(lineno) + ": duplicate architecture " + arch);
    }
    return BenchmarkTable(std::move(entries));
}

void BenchmarkTable::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IngestionError("cannot write " + path);
    out.precision(17);
    for (const auto& [k, v] : entries_) out << k << ' ' << v << '\n';
}

double BenchmarkTable::lookup(const std::string& arch) const {
    auto it = entries_.find(arch);
    if (it == entries_.end()) throw ContractError("benchmark table has no entry for " + arch);
    return it->second;
}

// ---------------------------------------------------------------- skip sensitivity

namespace {
int op_index(const space::SearchSpace& sp, space::CellOp op) {
    const auto& ops = sp.cell().op_set;
    auto it = std::find(ops.begin(), ops.end(), op);
    if (it == ops.end())
        throw ConfigError("operation " + std::string(space::cell_op_name(op)) + " is not in the search space");
    return static_cast<int>(it - ops.begin());
}
}  // namespace

std::vector<std::pair<int, ArchEncoding>> substitutions(const space::SearchSpace& sp, const ArchEncoding& arch,
                                                        space::CellOp op_from, space::CellOp op_to) {
    if (sp.is_chain()) throw ConfigError("operation substitution needs a cell search space");
    space::validate(sp, arch);
    const int from = op_index(sp, op_from), to = op_index(sp, op_to);
    std::vector<std::pair<int, ArchEncoding>> out;
    for (int s = 0; s < static_cast<int>(arch.choices.size()); ++s) {
        if (arch.choices[s] != from) continue;
        ArchEncoding v = arch;
        v.choices[s] = to;
        out.emplace_back(s, std::move(v));
    }
    return out;
}

std::vector<SkipChange> skip_sensitivity(const space::SearchSpace& sp, const std::vector<TrialRecord>& records,
                                         const BenchmarkTable& table, space::CellOp op_from, space::CellOp op_to,
                                         const std::vector<TrialRecord>& variants) {
    std::map<std::uint64_t, double> est;
    for (const auto& r : variants) est[space::arch_id(sp, r.arch)] = r.est_acc;
    for (const auto& r : records) est[space::arch_id(sp, r.arch)] = r.est_acc;
    auto estimate = [&](const ArchEncoding& a) {
        auto it = est.find(space::arch_id(sp, a));
        if (it == est.end()) throw ContractError("no supernet estimate for " + space::to_string(sp, a));
        return it->second;
    };
    auto truth = [&](const ArchEncoding& a) { return table.lookup(space::to_string(sp, a)); };
    std::vector<SkipChange> out;
    for (const auto& r : records)
        for (const auto& [site, v] : substitutions(sp, r.arch, op_from, op_to))
            out.push_back({space::to_string(sp, r.arch), space::to_string(sp, v), site, estimate(v) - r.est_acc,
                           truth(v) - truth(r.arch)});
    return out;
}

ThresholdSummary threshold_query(const std::vector<SkipChange>& changes, double threshold) {
    ThresholdSummary s;
    double sum = 0.0;
    for (const auto& c : changes) {
        if (std::abs(c.d_est) >= threshold) continue;
        ++s.count;
        s.actual_drops += c.d_actual < 0;
        sum += c.d_actual;
    }
    if (s.count) s.mean_d_actual = sum / s.count;
    return s;
}

}  // namespace pinas::search
