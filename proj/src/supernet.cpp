#include "pinas/supernet.hpp"

#include "pinas/error.hpp"

#include <memory>
#include <set>

namespace pinas::supernet {

using namespace pinas::nn;

namespace {

ModulePtr conv_bn(const std::string& name, ConvSpec spec) {
    const int out = spec.out_channels;
    return std::make_shared<Sequential>(
        name, std::vector<ModulePtr>{std::make_shared<Conv2d>(name + ".conv", spec),
                                     std::make_shared<BatchNorm>(name + ".bn", out)});
}

ModulePtr chain_block(const std::string& name, const space::ChainLayer& layer, const space::BlockOption& o,
                      ModulePtr shortcut) {
    const int pad = o.dilation * (o.kernel - 1) / 2;
    auto body = std::make_shared<Sequential>(
        name + ".body",
        std::vector<ModulePtr>{
            std::make_shared<Conv2d>(name + ".conv_a", ConvSpec{.in_channels = layer.in_width,
                                                                .out_channels = o.hidden,
                                                                .kernel = o.kernel,
                                                                .stride = layer.stride,
                                                                .padding = pad,
                                                                .dilation = o.dilation,
                                                                .groups = o.groups}),
            std::make_shared<BatchNorm>(name + ".bn_a", o.hidden), std::make_shared<ReLU>(name + ".relu"),
            std::make_shared<Conv2d>(name + ".conv_b",
                                     ConvSpec{.in_channels = o.hidden, .out_channels = layer.out_width, .kernel = 1}),
            std::make_shared<BatchNorm>(name + ".bn_b", layer.out_width)});
    return std::make_shared<Residual>(name, body, std::move(shortcut), true);
}

ModulePtr cell_edge(const std::string& prefix, space::CellOp op, int width) {
    const std::string name = prefix + "." + std::string(space::cell_op_name(op));
    switch (op) {
        case space::CellOp::zero: return std::make_shared<Zero>(name);
        case space::CellOp::skip: return std::make_shared<Identity>(name);
        case space::CellOp::avgpool3x3: return std::make_shared<AvgPool2d>(name, 3, 1, 1);
        case space::CellOp::conv1x1:
        case space::CellOp::conv3x3: {
            const int k = op == space::CellOp::conv1x1 ? 1 : 3;
            return std::make_shared<Sequential>(
                name, std::vector<ModulePtr>{
                          std::make_shared<ReLU>(name + ".relu"),
                          std::make_shared<Conv2d>(name + ".conv", ConvSpec{.in_channels = width,
                                                                            .out_channels = width,
                                                                            .kernel = k,
                                                                            .padding = k / 2}),
                          std::make_shared<BatchNorm>(name + ".bn", width)});
        }
    }
    throw ConfigError("unknown cell op");
}

}  // namespace

Supernet::Supernet(space::SearchSpace sp, int num_classes, int embed_dim, bool projector_bn)
    : space_(std::move(sp)), num_classes_(num_classes), embed_dim_(embed_dim), projector_bn_(projector_bn) {
    if (num_classes < 2) throw ConfigError("supernet needs at least 2 classes");
    if (embed_dim < 2) throw ConfigError("embedding dimension must be at least 2");
    if (space_.is_chain()) build_chain();
    else build_cell();

    pool_ = std::make_shared<GlobalAvgPool>("pool");
    const int c = feature_dim_;
    std::vector<ModulePtr> head{std::make_shared<Linear>("head.fc1", c, c)};
    if (projector_bn_) head.push_back(std::make_shared<BatchNorm>("head.bn", c));
    head.push_back(std::make_shared<ReLU>("head.relu"));
    head.push_back(std::make_shared<Linear>("head.fc2", c, embed_dim_));
    head.push_back(std::make_shared<L2Normalize>("head.l2"));
    projector_ = std::make_shared<Sequential>("head", std::move(head));
    cls_ = std::make_shared<Linear>("cls", c, num_classes_);
    all_.push_back(projector_);
    all_.push_back(cls_);
}

void Supernet::build_chain() {
    const auto& cs = space_.chain();
    if (cs.layers.empty()) throw ConfigError("chain space has no layers");
    stem_ = std::make_shared<Sequential>(
        "stem", std::vector<ModulePtr>{std::make_shared<Conv2d>("stem.conv", ConvSpec{.in_channels = cs.in_channels,
                                                                                      .out_channels = cs.stem_width,
                                                                                      .kernel = 3,
                                                                                      .padding = 1}),
                                       std::make_shared<BatchNorm>("stem.bn", cs.stem_width),
                                       std::make_shared<ReLU>("stem.relu")});
    all_.push_back(stem_);
    int width = cs.stem_width;
    for (std::size_t l = 0; l < cs.layers.size(); ++l) {
        const auto& layer = cs.layers[l];
        if (layer.in_width != width) throw ConfigError("chain layer " + std::to_string(l) + " input width mismatch");
        const std::string site = "site" + std::to_string(l);
        ModulePtr shared;
        if (layer.reduces() && cs.downsample_shared)
            shared = conv_bn(site + ".down", {.in_channels = layer.in_width, .out_channels = layer.out_width,
                                              .kernel = 1, .stride = layer.stride});
        std::vector<ModulePtr> opts;
        for (std::size_t k = 0; k < layer.options.size(); ++k) {
            const std::string name = site + ".opt" + std::to_string(k);
            ModulePtr shortcut = shared;
            if (layer.reduces() && !cs.downsample_shared)
                shortcut = conv_bn(name + ".down", {.in_channels = layer.in_width, .out_channels = layer.out_width,
                                                    .kernel = 1, .stride = layer.stride});
            opts.push_back(chain_block(name, layer, layer.options[k], shortcut));
            all_.push_back(opts.back());
        }
        candidates_.push_back(std::move(opts));
        width = layer.out_width;
    }
    feature_dim_ = width;
    tail_ = nullptr;
}

void Supernet::build_cell() {
    const auto& cs = space_.cell();
    if (cs.stages < 1 || cs.cells_per_stage < 1) throw ConfigError("cell space needs at least one stage and cell");
    if (cs.op_set.empty()) throw ConfigError("cell space has an empty op set");
    stem_ = conv_bn("stem", {.in_channels = cs.in_channels, .out_channels = cs.stem_width, .kernel = 3, .padding = 1});
    all_.push_back(stem_);
    int width = cs.stem_width;
    for (int s = 0; s < cs.stages; ++s) {
        for (int c = 0; c < cs.cells_per_stage; ++c) {
            const std::string prefix = "stage" + std::to_string(s) + ".cell" + std::to_string(c);
            std::vector<ModulePtr> edges;
            for (int e = 0; e < cs.num_edges(); ++e)
                for (auto op : cs.op_set) {
                    edges.push_back(cell_edge(prefix + ".e" + std::to_string(e), op, width));
                    all_.push_back(edges.back());
                }
            candidates_.push_back(std::move(edges));
        }
        if (s + 1 < cs.stages) {
            const std::string name = "stage" + std::to_string(s) + ".reduce";
            const int out = width * 2;
            auto body = std::make_shared<Sequential>(
                name + ".body",
                std::vector<ModulePtr>{
                    std::make_shared<Conv2d>(name + ".conv_a", ConvSpec{.in_channels = width, .out_channels = out,
                                                                        .kernel = 3, .stride = 2, .padding = 1}),
                    std::make_shared<BatchNorm>(name + ".bn_a", out), std::make_shared<ReLU>(name + ".relu"),
                    std::make_shared<Conv2d>(name + ".conv_b",
                                             ConvSpec{.in_channels = out, .out_channels = out, .kernel = 3, .padding = 1}),
                    std::make_shared<BatchNorm>(name + ".bn_b", out)});
            auto down = conv_bn(name + ".down", {.in_channels = width, .out_channels = out, .kernel = 1, .stride = 2});
            reductions_.push_back(std::make_shared<Residual>(name, body, down, false));
            all_.push_back(reductions_.back());
            width = out;
        }
    }
    tail_ = std::make_shared<Sequential>(
        "final", std::vector<ModulePtr>{std::make_shared<BatchNorm>("final.bn", width),
                                        std::make_shared<ReLU>("final.relu")});
    all_.push_back(tail_);
    feature_dim_ = width;
}

ModulePtr Supernet::site_module(int site, int choice) const {
    space::validate(space_, [&] {
        ArchEncoding a{std::vector<int>(space_.num_sites(), 0), space_.id()};
        a.choices.at(site) = choice;
        return a;
    }());
    if (space_.is_chain()) return candidates_[site][choice];
    return candidates_[0][site * space_.cell().op_set.size() + choice];
}

std::vector<ModulePtr> Supernet::backbone_modules(const ArchEncoding& arch) const {
    space::validate(space_, arch);
    std::vector<ModulePtr> mods{stem_};
    if (space_.is_chain()) {
        for (std::size_t l = 0; l < candidates_.size(); ++l) mods.push_back(candidates_[l][arch.choices[l]]);
    } else {
        const auto& cs = space_.cell();
        const std::size_t nops = cs.op_set.size();
        for (int s = 0; s < cs.stages; ++s) {
            for (int c = 0; c < cs.cells_per_stage; ++c) {
                const auto& cand = candidates_[s * cs.cells_per_stage + c];
                std::vector<ModulePtr> edges;
                for (int e = 0; e < cs.num_edges(); ++e) edges.push_back(cand[e * nops + arch.choices[e]]);
                mods.push_back(std::make_shared<Cell>("stage" + std::to_string(s) + ".cell" + std::to_string(c),
                                                      cs.num_nodes, std::move(edges)));
            }
            if (s + 1 < cs.stages) mods.push_back(reductions_[s]);
        }
    }
    if (tail_) mods.push_back(tail_);
    mods.push_back(pool_);
    return mods;
}

ModulePtr Supernet::features(const ArchEncoding& arch) const {
    return std::make_shared<Sequential>("features", backbone_modules(arch));
}

ModulePtr Supernet::embedder(const ArchEncoding& arch) const {
    auto mods = backbone_modules(arch);
    mods.push_back(projector_);
    return std::make_shared<Sequential>("embedder", std::move(mods));
}

ModulePtr Supernet::classifier_net(const ArchEncoding& arch) const {
    auto mods = backbone_modules(arch);
    mods.push_back(cls_);
    return std::make_shared<Sequential>("classifier", std::move(mods));
}

void Supernet::init(ParameterStore& ps, Rng& rng) const {
    for (const auto& m : all_) init_params(*m, ps, rng);
}

ParameterStore Supernet::make_store(std::uint64_t seed) const {
    ParameterStore ps;
    Rng rng(seed);
    init(ps, rng);
    return ps;
}

std::vector<std::string> Supernet::path_entries(const ArchEncoding& arch, bool with_projector, bool with_cls) const {
    std::vector<std::string> names = param_names(*features(arch));
    if (with_projector)
        for (auto& n : param_names(*projector_)) names.push_back(std::move(n));
    if (with_cls)
        for (auto& n : param_names(*cls_)) names.push_back(std::move(n));
    return names;
}

std::vector<std::string> Supernet::path_bn_names(const ArchEncoding& arch, bool with_projector) const {
    std::vector<std::string> out;
    const std::string suffix = ".running_mean";
    for (const auto& n : path_entries(arch, with_projector, false))
        if (n.size() > suffix.size() && n.ends_with(suffix)) out.push_back(n.substr(0, n.size() - suffix.size()));
    return out;
}

Tensor Supernet::forward_path(ParameterStore& ps, const Tensor& x, const PathContext& ctx, Tape* tape) const {
    ForwardContext fc{ctx.bn_mode, ctx.train, nullptr};
    return embedder(ctx.arch)->forward(ps, x, fc, tape);
}

Subnet extract_subnet(const Supernet& net, const ParameterStore& ps, const ArchEncoding& arch) {
    Subnet s;
    s.arch = arch;
    s.features = net.features(arch);
    s.embedder = net.embedder(arch);
    s.classifier = net.classifier_net(arch);
    s.params = ps.subset(net.path_entries(arch, true, true));
    s.params.unfreeze();
    return s;
}

ParameterStore recalibrate_bn(const Supernet& net, const ParameterStore& ps, const ArchEncoding& arch,
                              const std::vector<Tensor>& batches) {
    if (batches.empty()) throw ConfigError("BN recalibration needs at least one calibration batch");
    ParameterStore out = ps;
    out.unfreeze();
    MomentRecorder rec;
    ForwardContext fc{BnMode::batch_stats, false, &rec};
    auto emb = net.embedder(arch);
    for (const auto& b : batches) emb->forward(out, b, fc, nullptr);
    for (const auto& bn : net.path_bn_names(arch, true)) {
        const auto it = rec.sums().find(bn);
        if (it == rec.sums().end()) continue;  // BN not reached (e.g. cell output fed only by zero edges)
        const auto& s = it->second;
        Tensor& rm = out.mut(bn + ".running_mean");
        Tensor& rv = out.mut(bn + ".running_var");
        for (std::size_t c = 0; c < s.mean_sum.size(); ++c) {
            rm[c] = static_cast<float>(s.mean_sum[c] / s.batches);
            rv[c] = static_cast<float>(s.var_sum[c] / s.batches);
        }
        out.mut(bn + ".num_batches")[0] = static_cast<float>(s.batches);
    }
    if (ps.frozen()) out.freeze();
    return out;
}

void require_calibrated(const Supernet& net, const ParameterStore& ps, const ArchEncoding& arch) {
    for (const auto& bn : net.path_bn_names(arch, false))
        if (ps.get(bn + ".num_batches")[0] <= 0.0f)
            throw PrerequisiteError("BN '" + bn + "' has no running statistics for architecture " +
                                    space::to_string(net.space(), arch) + "; run recalibrate_bn first");
}

}  // namespace pinas::supernet
