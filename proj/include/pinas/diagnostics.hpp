#pragma once

#include "pinas/supernet.hpp"

#include <string>
#include <vector>

namespace pinas::diag {

struct SimilarityMatrix {
    std::vector<space::ArchEncoding> paths;
    int size = 0;
    std::vector<double> values;  // row-major size x size
    double off_diag_mean = 0.0;

    double at(int a, int b) const { return values[static_cast<std::size_t>(a) * size + b]; }
};

// Entry (a, b): batch mean of the cosine similarity between row n of
// features[a] and row n of features[b]. Two zero rows count as identical.
SimilarityMatrix similarity_from_features(const std::vector<Tensor>& features);

// Pooled last-layer features of `probe` (already normalized) under each path,
// BN on batch statistics.
SimilarityMatrix feature_shift_matrix(const supernet::Supernet& net, ParameterStore& params,
                                      const std::vector<space::ArchEncoding>& paths, const Tensor& probe);

// Paths that share every site but the last, which takes options 0..count-1.
std::vector<space::ArchEncoding> last_site_variants(const space::SearchSpace& sp, int count = 4, int base = 0);

// Wasserstein-1 distance between the empirical distributions of two equally
// sized samples: mean absolute difference of the sorted values.
double w1_distance(const Tensor& a, const Tensor& b);

struct DriftSeries {
    std::string layer;
    std::vector<long> steps;
    std::vector<double> edges;                     // bins + 1, shared by all snapshots
    std::vector<std::vector<double>> histograms;   // densities per snapshot
    std::vector<double> distances;                 // W1 between consecutive snapshots
    double mean_distance = 0.0;
};

DriftSeries parameter_drift(const std::string& layer, const std::vector<long>& steps,
                            const std::vector<Tensor>& snapshots, int bins = 64);

}  // namespace pinas::diag
