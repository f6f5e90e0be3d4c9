#pragma once

#include "pinas/data.hpp"
#include "pinas/supernet.hpp"

#include <functional>
#include <vector>

namespace pinas::linear {

struct LinearConfig {
    int epochs = 30;
    int batch_size = 64;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::vector<double> milestones{0.6, 0.8};  // x0.1 at these fractions of the epochs
    data::AugmentPolicy policy = data::AugmentPolicy::crop_flip(0.8);
    std::vector<float> norm_mean;
    std::vector<float> norm_std;
    std::uint64_t seed = 0;
};

// Linear classifier over standardized pooled features: BatchNorm
// "linear.bn" then "linear.fc" (K, F). At inference the BN is an affine map,
// so the head stays linear in the features.
struct LinearHead {
    std::shared_ptr<const nn::Module> module;
    ParameterStore params;
};

LinearHead init_head(const supernet::Supernet& net, std::uint64_t seed);

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_acc = 0.0;
};

// Trains only the head. Each step samples one path uniformly; backbone BN
// uses batch statistics. `backbone` must be frozen.
void train_linear(const supernet::Supernet& net, ParameterStore& backbone, LinearHead& head,
                  const data::Dataset& train, const LinearConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// Pooled features of `ds` under `arch`, evaluated in chunks of `chunk`.
// calibrated=true uses tracked BN statistics (recalibrate first); otherwise
// each chunk normalizes with its own statistics.
Tensor extract_features(const supernet::Supernet& net, ParameterStore& backbone, const space::ArchEncoding& arch,
                        const data::Dataset& ds, bool calibrated, const std::vector<float>& norm_mean,
                        const std::vector<float>& norm_std, int chunk = 256);

// Copy of the head whose BN statistics are the moments of `features`
// (per-path recalibration of the head).
LinearHead calibrate_head(const LinearHead& head, const Tensor& features);

// Top-1 accuracy of the head on `ds` under `arch`, head BN in tracked mode.
double eval_linear(const supernet::Supernet& net, ParameterStore& backbone, const LinearHead& head,
                   const space::ArchEncoding& arch, const data::Dataset& ds, bool calibrated,
                   const std::vector<float>& norm_mean, const std::vector<float>& norm_std);

// Fraction of rows whose argmax (first on ties) equals the label.
double accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace pinas::linear
