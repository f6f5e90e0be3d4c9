#pragma once

#include "pinas/data.hpp"
#include "pinas/nn/layers.hpp"
#include "pinas/search_space.hpp"

#include <map>
#include <string>
#include <vector>

namespace pinas::supernet {

using space::ArchEncoding;

struct PathContext {
    ArchEncoding arch;
    nn::BnMode bn_mode = nn::BnMode::batch_stats;
    bool train = false;
};

// Every candidate operation of a search space plus the shared stem and head.
// Modules are stateless; weights live in a ParameterStore handed to each call,
// so student, teacher and extracted subnets run the same graph.
//
// Parameter names:
//   stem.conv, stem.bn
//   chain: site<l>.opt<k>.{conv_a,bn_a,conv_b,bn_b}; reduction shortcut
//          site<l>.down.{conv,bn} when shared, else site<l>.opt<k>.down.{conv,bn}
//   cell:  stage<s>.cell<c>.e<e>.<op>.{conv,bn}; stage<s>.reduce.*; final.bn
//   head.fc1, head.bn, head.fc2 (projector), cls (supervised classifier)
class Supernet {
public:
    Supernet(space::SearchSpace space, int num_classes, int embed_dim = 64, bool projector_bn = true);

    const space::SearchSpace& space() const noexcept { return space_; }
    int num_classes() const noexcept { return num_classes_; }
    int embed_dim() const noexcept { return embed_dim_; }
    bool projector_bn() const noexcept { return projector_bn_; }
    // Width of the pooled backbone features.
    int feature_dim() const noexcept { return feature_dim_; }

    // x -> pooled features (N, feature_dim)
    nn::ModulePtr features(const ArchEncoding& arch) const;
    // x -> unit-norm embeddings (N, embed_dim)
    nn::ModulePtr embedder(const ArchEncoding& arch) const;
    // x -> class logits through `cls`
    nn::ModulePtr classifier_net(const ArchEncoding& arch) const;
    const nn::ModulePtr& projector() const noexcept { return projector_; }
    const nn::ModulePtr& cls() const noexcept { return cls_; }

    // The candidate chosen at `site` (for tests and diagnostics).
    nn::ModulePtr site_module(int site, int choice) const;

    // Adds every entry of the whole supernet (all candidates, head, cls).
    void init(ParameterStore& ps, Rng& rng) const;
    ParameterStore make_store(std::uint64_t seed) const;

    // Entry names used by `arch` (backbone, and optionally head/cls).
    std::vector<std::string> path_entries(const ArchEncoding& arch, bool with_projector = true,
                                          bool with_cls = true) const;
    // Names of every BatchNorm on the path's feature extractor (+ projector).
    std::vector<std::string> path_bn_names(const ArchEncoding& arch, bool with_projector) const;

    // Unit-norm embeddings for a batch; invalid archs raise ContractError
    // naming the site.
    Tensor forward_path(ParameterStore& ps, const Tensor& x, const PathContext& ctx, nn::Tape* tape = nullptr) const;

private:
    void build_chain();
    void build_cell();
    std::vector<nn::ModulePtr> backbone_modules(const ArchEncoding& arch) const;

    space::SearchSpace space_;
    int num_classes_;
    int embed_dim_;
    bool projector_bn_;
    int feature_dim_ = 0;

    nn::ModulePtr stem_;
    // chain: candidates_[site][option]; cell: candidates_[stage*cells+cell][edge*ops+op]
    std::vector<std::vector<nn::ModulePtr>> candidates_;
    std::vector<nn::ModulePtr> reductions_;  // cell space: between stages
    nn::ModulePtr tail_;                     // pre-pool layers (cell: final BN + ReLU)
    nn::ModulePtr pool_;
    nn::ModulePtr projector_;
    nn::ModulePtr cls_;
    // Every module, for init.
    std::vector<nn::ModulePtr> all_;
};

// Standalone network holding a private copy of the path's weights.
struct Subnet {
    ArchEncoding arch;
    nn::ModulePtr features;
    nn::ModulePtr embedder;
    nn::ModulePtr classifier;
    ParameterStore params;
};

Subnet extract_subnet(const Supernet& net, const ParameterStore& ps, const ArchEncoding& arch);

// Copy of `ps` in which every BN on the path (backbone and projector) has
// running_mean / running_var set to the average of its per-batch moments over
// `batches` and num_batches set to the batch count. Other entries untouched.
ParameterStore recalibrate_bn(const Supernet& net, const ParameterStore& ps, const ArchEncoding& arch,
                              const std::vector<Tensor>& batches);

// Throws PrerequisiteError when any BN on the path has never been calibrated.
void require_calibrated(const Supernet& net, const ParameterStore& ps, const ArchEncoding& arch);

}  // namespace pinas::supernet
