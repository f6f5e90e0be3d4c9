#include "pinas/diagnostics.hpp"

#include "pinas/error.hpp"

#include <algorithm>
#include <cmath>

namespace pinas::diag {

SimilarityMatrix similarity_from_features(const std::vector<Tensor>& features) {
    const int p = static_cast<int>(features.size());
    if (p < 2) throw ContractError("feature shift needs at least 2 paths");
    const Shape& s0 = features[0].shape();
    if (s0.size() != 2 || s0[0] == 0) throw ContractError("feature shift needs a non-empty (N, F) batch");
    for (const auto& f : features)
        if (f.shape() != s0) throw ContractError("feature shift: feature shapes differ across paths");
    const int n = s0[0], d = s0[1];
    std::vector<std::vector<double>> norms(p, std::vector<double>(n));
    for (int a = 0; a < p; ++a)
        for (int r = 0; r < n; ++r) {
            double s = 0;
            for (int c = 0; c < d; ++c) s += static_cast<double>(features[a].at(r, c)) * features[a].at(r, c);
            norms[a][r] = std::sqrt(s);
        }
    SimilarityMatrix m;
    m.size = p;
    m.values.assign(static_cast<std::size_t>(p) * p, 0.0);
    double off = 0.0;
    for (int a = 0; a < p; ++a)
        for (int b = a; b < p; ++b) {
            double total = 0.0;
            for (int r = 0; r < n; ++r) {
                const double na = norms[a][r], nb = norms[b][r];
                if (na == 0.0 || nb == 0.0) {
                    total += na == nb ? 1.0 : 0.0;
                    continue;
                }
                double dot = 0;
                for (int c = 0; c < d; ++c) dot += static_cast<double>(features[a].at(r, c)) * features[b].at(r, c);
                total += dot / (na * nb);
            }
            const double v = a == b ? 1.0 : total / n;
            m.values[static_cast<std::size_t>(a) * p + b] = m.values[static_cast<std::size_t>(b) * p + a] = v;
            if (a != b) off += 2 * v;
        }
    m.off_diag_mean = off / (static_cast<double>(p) * (p - 1));
    return m;
}

SimilarityMatrix feature_shift_matrix(const supernet::Supernet& net, ParameterStore& params,
                                      const std::vector<space::ArchEncoding>& paths, const Tensor& probe) {
    if (probe.ndim() != 4 || probe.dim(0) == 0) throw ContractError("feature shift needs a non-empty probe batch");
    const nn::ForwardContext ctx{nn::BnMode::batch_stats, false, nullptr};
    std::vector<Tensor> feats;
    for (const auto& a : paths) feats.push_back(net.features(a)->forward(params, probe, ctx, nullptr));
    SimilarityMatrix m = similarity_from_features(feats);
    m.paths = paths;
    return m;
}

std::vector<space::ArchEncoding> last_site_variants(const space::SearchSpace& sp, int count, int base) {
    const auto counts = sp.option_counts();
    if (counts.empty()) throw ConfigError("search space has no decision sites");
    space::ArchEncoding a;
    a.space_id = sp.id();
    for (int c : counts) a.choices.push_back(std::min(base, c - 1));
    std::vector<space::ArchEncoding> out;
    for (int k = 0; k < std::min(count, counts.back()); ++k) {
        a.choices.back() = k;
        out.push_back(a);
    }
    if (out.size() < 2) throw ConfigError("the last site needs at least 2 options for a feature-shift matrix");
    return out;
}

double w1_distance(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size() || a.empty())
        throw ContractError("W1 distance needs equally sized non-empty snapshots (" + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()) + ")");
    std::vector<float> x(a.values().begin(), a.values().end()), y(b.values().begin(), b.values().end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(static_cast<double>(x[i]) - y[i]);
    return s / static_cast<double>(x.size());
}

DriftSeries parameter_drift(const std::string& layer, const std::vector<long>& steps,
                            const std::vector<Tensor>& snapshots, int bins) {
    if (snapshots.size() < 2) throw ContractError("parameter drift needs at least 2 snapshots");
    if (steps.size() != snapshots.size()) throw ContractError("parameter drift: one step per snapshot required");
    if (bins < 1) throw ConfigError("drift histogram needs at least one bin");
    for (const auto& s : snapshots)
        if (s.shape() != snapshots[0].shape())
            throw ContractError("parameter drift: snapshot shape " + shape_str(s.shape()) + " differs from " +
                                shape_str(snapshots[0].shape()) + " for " + layer);
    DriftSeries d;
    d.layer = layer;
    d.steps = steps;
    float lo = snapshots[0][0], hi = lo;
    for (const auto& s : snapshots)
        for (float v : s.values()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (hi == lo) hi = lo + 1.0f;
    const double width = (static_cast<double>(hi) - lo) / bins;
    for (int i = 0; i <= bins; ++i) d.edges.push_back(lo + i * width);
    for (const auto& s : snapshots) {
        std::vector<double> h(bins, 0.0);
        for (float v : s.values()) {
            const int b = std::clamp(static_cast<int>((v - lo) / width), 0, bins - 1);
            h[b] += 1.0;
        }
        for (auto& c : h) c /= static_cast<double>(s.size()) * width;
        d.histograms.push_back(std::move(h));
    }
    double sum = 0.0;
    for (std::size_t i = 1; i < snapshots.size(); ++i) {
        d.distances.push_back(w1_distance(snapshots[i - 1], snapshots[i]));
        sum += d.distances.back();
    }
    d.mean_distance = sum / static_cast<double>(d.distances.size());
    return d;
}

}  // namespace pinas::diag
