#pragma once

#include "pinas/data.hpp"
#include "pinas/linear_eval.hpp"
#include "pinas/search_space.hpp"
#include "pinas/supernet.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pinas::search {

using space::ArchEncoding;

enum class OracleSource { trained_oracle, benchmark_table };
const char* source_name(OracleSource s);

inline constexpr int kTrialSchemaVersion = 1;

struct TrialRecord {
    ArchEncoding arch;
    double est_acc = 0.0;
    std::optional<double> oracle_acc;
    std::optional<OracleSource> source;
    std::uint64_t seed = 0;
    long timestamp = 0;  // logical: position in the producing sequence
    std::string recipe;  // oracle recipe, when trained

    bool operator==(const TrialRecord&) const = default;
};

// One JSON object per line.
std::string to_jsonl(const TrialRecord& r);
TrialRecord from_jsonl(const std::string& line, const space::SearchSpace& sp);
void write_records(const std::string& path, const std::vector<TrialRecord>& records);
std::vector<TrialRecord> read_records(const std::string& path, const space::SearchSpace& sp);

using Evaluator = std::function<double(const ArchEncoding&)>;

// Estimates accuracy of a path: recalibrate backbone and head BN on
// `calibration`, then linear-eval top-1 on `val`. Results are cached per architecture.
class CandidateEvaluator {
public:
    CandidateEvaluator(const supernet::Supernet& net, const ParameterStore& backbone, linear::LinearHead head,
                       const data::Dataset& calibration, const data::Dataset& val, std::vector<float> norm_mean,
                       std::vector<float> norm_std, int calib_batch = 64);
    double operator()(const ArchEncoding& arch);
    Evaluator as_function() { return [this](const ArchEncoding& a) { return (*this)(a); }; }
    std::size_t evaluations() const noexcept { return cache_.size(); }

private:
    const supernet::Supernet& net_;
    const ParameterStore& backbone_;
    linear::LinearHead head_;
    const data::Dataset& calibration_;
    const data::Dataset& val_;
    std::vector<float> mean_, std_;
    std::vector<Tensor> calib_batches_;
    std::map<std::uint64_t, double> cache_;
};

// One record per input arch, sorted by est_acc descending (ties: smaller arch
// id first). Timestamps follow input order.
std::vector<TrialRecord> evaluate_candidates(const Evaluator& eval, const std::vector<ArchEncoding>& archs);

struct EvolutionConfig {
    int budget = 100;      // distinct evaluations
    int population = 0;    // 0: min(16, budget)
    int tournament = 4;
    int mutation_k = 1;
};

struct SearchResult {
    TrialRecord best;
    std::vector<TrialRecord> trials;  // every distinct evaluation, in order
};

// Aging evolution with tournament selection. Stops after
// min(budget, |space|) distinct evaluations.
SearchResult evolutionary_search(const space::SearchSpace& sp, const Evaluator& eval, const EvolutionConfig& cfg,
                                 Rng& rng);

struct OracleConfig {
    int epochs = 30;
    int batch_size = 128;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    data::AugmentPolicy policy = data::AugmentPolicy::crop_flip();
    std::vector<float> norm_mean;
    std::vector<float> norm_std;

    std::string describe() const;
};

// Supervised training of the standalone subnet from scratch; returns test
// top-1 accuracy with tracked BN statistics.
double train_oracle(const space::SearchSpace& sp, int num_classes, const ArchEncoding& arch,
                    const data::Dataset& train, const data::Dataset& test, const OracleConfig& cfg,
                    std::uint64_t seed);

// Tie-corrected Kendall tau-b.
double kendall_tau(const std::vector<double>& xs, const std::vector<double>& ys);

struct ScatterPoint {
    std::string arch;
    double est = 0.0;
    double oracle = 0.0;
};

struct RankingReport {
    double tau = 0.0;
    int n = 0;
    std::vector<ScatterPoint> scatter;
};

RankingReport ranking_report(const space::SearchSpace& sp, const std::vector<TrialRecord>& records,
                             const space::ArchFilter& filter = {});

// Top `top` archs of `searched` plus `random_count` further distinct archs
// drawn uniformly; the whole space when it has no more than top + random_count
// members.
std::vector<ArchEncoding> ranking_set(const space::SearchSpace& sp, const std::vector<TrialRecord>& searched,
                                      int top, int random_count, Rng& rng);

// Ground-truth accuracies keyed by canonical architecture string. Text
// format: one "<arch> <accuracy in [0,1]>" per line, '#' comments.
class BenchmarkTable {
public:
    BenchmarkTable() = default;
    explicit BenchmarkTable(std::map<std::string, double> entries);
    static BenchmarkTable load(const std::string& path);
    void save(const std::string& path) const;

    // Keys are canonical architecture strings (space::to_string).
    double lookup(const std::string& arch) const;
    bool contains(const std::string& arch) const { return entries_.count(arch) != 0; }
    std::size_t size() const noexcept { return entries_.size(); }
    const std::map<std::string, double>& entries() const noexcept { return entries_; }

private:
    std::map<std::string, double> entries_;
};

struct SkipChange {
    std::string arch;
    std::string variant;
    int site = 0;
    double d_est = 0.0;     // est(variant) - est(arch)
    double d_actual = 0.0;  // table(variant) - table(arch)
};

// Architectures obtained from `arch` by replacing one site holding op_from.
std::vector<std::pair<int, ArchEncoding>> substitutions(const space::SearchSpace& sp, const ArchEncoding& arch,
                                                        space::CellOp op_from, space::CellOp op_to);

// Pairs for every record arch and every substitution. Variant estimates come
// from `records` or `variants`; both archs of each pair must be in `table`.
std::vector<SkipChange> skip_sensitivity(const space::SearchSpace& sp, const std::vector<TrialRecord>& records,
                                         const BenchmarkTable& table, space::CellOp op_from,
                                         space::CellOp op_to = space::CellOp::skip,
                                         const std::vector<TrialRecord>& variants = {});

struct ThresholdSummary {
    int count = 0;             // pairs with |d_est| < threshold
    int actual_drops = 0;      // of those, pairs with d_actual < 0
    double mean_d_actual = 0;  // over those pairs (0 when none)
};
ThresholdSummary threshold_query(const std::vector<SkipChange>& changes, double threshold = 0.01);

}  // namespace pinas::search
