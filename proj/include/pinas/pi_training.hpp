#pragma once

#include "pinas/data.hpp"
#include "pinas/nn/optim.hpp"
#include "pinas/supernet.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace pinas::pi {

struct AblationFlags {
    bool cross_path = true;
    bool mean_teacher = true;
    bool downsample_sharing = true;
    bool nontrivial = true;  // use queued negatives
    bool supervised_spos = false;  // cross-entropy on one path; crop and flip only

    bool operator==(const AblationFlags&) const = default;
};

struct LossBreakdown {
    double total = 0.0;
    double con_term = 0.0;  // -mean(<z_i, zt_j> + <z_j, zt_i>) / tau
    double add_term = 0.0;  // mean of the two log-sum-exp normalizers (0 when nontrivial is off)
};

struct LossGrads {
    Tensor d_zi;
    Tensor d_zj;
};

// Rows of every input must be unit-norm (within 1e-3). The positive for z_i
// is zt_j and for z_j is zt_i. With nontrivial=true each row contributes
//   -log( e^{s+} / (sum_q e^{<z,q>/tau} + e^{s+}) ),  s+ = <z, positive>/tau
// and total is the batch mean of the two terms summed. With nontrivial=false
// the negatives are ignored and total = con_term. Teacher rows and negatives
// are constants.
LossBreakdown cross_path_loss(const Tensor& z_i, const Tensor& z_j, const Tensor& zt_i, const Tensor& zt_j,
                              const Tensor& negatives, double tau, bool nontrivial = true, LossGrads* grads = nullptr);

// Fixed-capacity FIFO of unit-norm rows.
class FeatureQueue {
public:
    FeatureQueue() = default;
    FeatureQueue(int capacity, int dim);

    void enqueue(const Tensor& rows);
    // Stored rows, oldest first, shape (filled, dim).
    Tensor contents() const;

    int capacity() const noexcept { return capacity_; }
    int dim() const noexcept { return dim_; }
    int head() const noexcept { return head_; }  // next slot to overwrite
    int filled() const noexcept { return filled_; }
    const Tensor& buffer() const noexcept { return buffer_; }

    static FeatureQueue restore(Tensor buffer, int head, int filled);
    bool operator==(const FeatureQueue&) const = default;

private:
    int capacity_ = 0;
    int dim_ = 0;
    int head_ = 0;
    int filled_ = 0;
    Tensor buffer_;
};

// teacher <- lambda * teacher + (1 - lambda) * student for every entry,
// buffers included.
void ema_update(ParameterStore& teacher, const ParameterStore& student, double lambda);

// Mean over dimensions of the across-batch (population) standard deviation.
double collapse_metric(const Tensor& embeddings);

struct StepConfig {
    double tau = 0.2;
    double lambda = 0.999;
    AblationFlags flags;
    data::AugmentPolicy policy;
    std::vector<float> norm_mean;
    std::vector<float> norm_std;
    // Abort when collapse_metric(z_i) < collapse_factor / sqrt(D).
    double collapse_factor = 0.1;
    bool abort_on_collapse = true;
};

struct TrainState {
    ParameterStore student;
    ParameterStore teacher;
    nn::SgdState sgd;
    FeatureQueue queue;
    long step = 0;  // completed steps
};

TrainState init_train_state(const supernet::Supernet& net, std::uint64_t init_seed, int queue_capacity,
                            const nn::SgdState& sgd);

struct StepResult {
    long step = 0;
    double lr = 0.0;
    LossBreakdown loss;
    double collapse = 0.0;  // NaN in supervised mode
    space::ArchEncoding path_i;
    space::ArchEncoding path_j;
};

// One training step on the images `indices` of `ds`. Randomness (paths and
// augmentation) is drawn from `rng`. Uses state.sgd.lr as the learning rate
// and advances state.step.
StepResult pi_train_step(const supernet::Supernet& net, TrainState& state, const data::Dataset& ds,
                         const std::vector<int>& indices, Rng& rng, const StepConfig& cfg);

struct TrainConfig {
    StepConfig step;
    int epochs = 10;
    int batch_size = 64;
    double base_lr = 0.03;
    // Linear warmup over this fraction of all steps, then cosine decay.
    double warmup_fraction = 0.0;
    std::uint64_t seed = 0;
};

double scheduled_lr(long step, long total_steps, const TrainConfig& cfg);

long steps_per_epoch(int dataset_size, int batch_size);

// Per-epoch sample order: permutation drawn from derive_seed(seed, "data", epoch).
std::vector<int> epoch_order(int dataset_size, std::uint64_t seed, int epoch);

// Runs steps state.step .. stop_step-1 (stop_step < 0: to the end of the
// schedule). Every step uses Rng(derive_seed(seed, "step", step)) so a resumed
// run retraces an uninterrupted one. Collapse raises CollapseError.
void train_supernet(const supernet::Supernet& net, TrainState& state, const data::Dataset& train,
                    const TrainConfig& cfg, long stop_step, const std::function<void(const StepResult&, const TrainState&)>& on_step = {});

}  // namespace pinas::pi
