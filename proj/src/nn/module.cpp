#include "pinas/nn/module.hpp"

#include "pinas/error.hpp"

#include <cmath>
#include <unordered_set>

namespace pinas::nn {

void MomentRecorder::record(const std::string& bn_name, const std::vector<double>& mean,
                            const std::vector<double>& var) {
    auto& s = sums_[bn_name];
    if (s.mean_sum.empty()) {
        s.mean_sum.assign(mean.size(), 0.0);
        s.var_sum.assign(var.size(), 0.0);
    }
    if (s.mean_sum.size() != mean.size()) throw ConfigError("moment size changed for " + bn_name);
    for (std::size_t c = 0; c < mean.size(); ++c) {
        s.mean_sum[c] += mean[c];
        s.var_sum[c] += var[c];
    }
    ++s.batches;
}

Tape::Frame Tape::pop(std::string_view who) {
    if (frames_.empty())
        throw StateError("backward called without a matching forward (at " + std::string(who) + ")");
    Frame f = std::move(frames_.back());
    frames_.pop_back();
    return f;
}

std::vector<ParamDecl> collect_decls(const Module& m) {
    std::vector<ParamDecl> all;
    m.declare(all);
    std::vector<ParamDecl> out;
    std::unordered_set<std::string> seen;
    for (auto& d : all) {
        if (seen.insert(d.name).second) out.push_back(std::move(d));
    }
    return out;
}

std::vector<std::string> param_names(const Module& m) {
    std::vector<std::string> names;
    for (const auto& d : collect_decls(m)) names.push_back(d.name);
    return names;
}

void init_params(const Module& m, ParameterStore& ps, Rng& rng) {
    for (const auto& d : collect_decls(m)) {
        if (ps.contains(d.name)) {
            if (ps.get(d.name).shape() != d.shape)
                throw ConfigError("parameter '" + d.name + "' redeclared with a different shape");
            continue;
        }
        Tensor t(d.shape);
        switch (d.init) {
            case Init::zeros:
                break;
            case Init::ones:
                t.fill(1.0f);
                break;
            case Init::fan_in_uniform: {
                const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, d.fan_in)));
                for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
                break;
            }
        }
        ps.add(d.name, d.kind, std::move(t));
    }
}

}  // namespace pinas::nn
