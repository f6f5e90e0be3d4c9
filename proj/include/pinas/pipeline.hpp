#pragma once

#include "pinas/config.hpp"
#include "pinas/data.hpp"
#include "pinas/search_rank.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pinas::run {

// Layout of a run directory:
//   config.txt            full config snapshot
//   manifest.txt          "<sha256>  <relative path>" for every artifact
//   run.lock              present while a command owns the directory
//   supernet/             checkpoint.bin + checkpoint.meta, metrics.jsonl,
//                         student.bin, teacher.bin, summary.json, DONE or COLLAPSED
//   linear/               head.bin, log.jsonl, DONE
//   search/               trials.jsonl, best.txt, DONE
//   oracle/               records.jsonl, DONE
//   rank/                 records.jsonl, report.json, scatter.tsv, skip.tsv, DONE
//   diagnostics/          similarity.tsv, drift_<store>.tsv, summary.json, DONE

std::string sha256_file(const std::string& path);
std::string sha256_hex(const std::string& bytes);

// Exclusive owner of a run directory for the lifetime of the object.
class RunLock {
public:
    explicit RunLock(const std::string& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::string path_;
};

// Rewrites manifest.txt from the directory contents.
void write_manifest(const std::string& dir);
// Lists files whose hash differs from the manifest, or which are missing
// from it or from disk. Empty when consistent.
std::vector<std::string> verify_manifest(const std::string& dir);

// Creates `dir` with config.txt, or checks an existing one holds the same config.
void init_run(const std::string& dir, const config::RunConfig& cfg);
config::RunConfig load_run_config(const std::string& dir);

struct Data {
    data::Splits splits;
    data::Dataset test;
};
// Data directory: PINAS_DATA_DIR when set, else data.path.
Data load_data(const config::RunConfig& cfg);

struct TrainOptions {
    long stop_after_step = -1;  // write a checkpoint and return at this step
    bool resume = false;
};

struct TrainOutcome {
    long steps = 0;
    bool complete = false;
    bool collapsed = false;
    std::string message;
};

// Trains (or resumes) the supernet stage. A collapse writes supernet/COLLAPSED
// and rethrows the CollapseError.
TrainOutcome train_supernet(const std::string& dir, const TrainOptions& opt = {});
void linear_eval(const std::string& dir);
search::SearchResult search(const std::string& dir, std::optional<int> budget = std::nullopt);
// Ground truth for `archs` (default: the ranking set built from the search
// trials). With a table, accuracies come from it and no search is needed.
std::vector<search::TrialRecord> oracle(const std::string& dir, const std::vector<std::string>& archs = {},
                                        const std::string& table = "");
search::RankingReport rank(const std::string& dir);

struct DiagnoseOutcome {
    double off_diag_mean = 0.0;
    double student_drift = 0.0;
    double teacher_drift = 0.0;
};
DiagnoseOutcome diagnose(const std::string& dir);

// Stage marker helpers.
bool stage_done(const std::string& dir, const std::string& stage);
bool supernet_collapsed(const std::string& dir);

}  // namespace pinas::run
