#include "pinas/linear_eval.hpp"

#include "pinas/error.hpp"
#include "pinas/nn/layers.hpp"
#include "pinas/nn/optim.hpp"
#include "pinas/pi_training.hpp"

#include <cmath>
#include <numeric>

namespace pinas::linear {

LinearHead init_head(const supernet::Supernet& net, std::uint64_t seed) {
    LinearHead h;
    h.module = std::make_shared<nn::Sequential>(
        "linear", std::vector<nn::ModulePtr>{std::make_shared<nn::BatchNorm>("linear.bn", net.feature_dim()),
                                             std::make_shared<nn::Linear>("linear.fc", net.feature_dim(),
                                                                          net.num_classes())});
    Rng rng(derive_seed(seed, "linear-head"));
    nn::init_params(*h.module, h.params, rng);
    return h;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2 || logits.dim(0) != static_cast<int>(labels.size()))
        throw ContractError("accuracy: logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) +
                            " labels");
    if (labels.empty()) throw ContractError("accuracy of an empty set");
    int correct = 0;
    const int k = logits.dim(1);
    for (int i = 0; i < logits.dim(0); ++i) {
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        correct += best == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

void train_linear(const supernet::Supernet& net, ParameterStore& backbone, LinearHead& head,
                  const data::Dataset& train, const LinearConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
    if (!backbone.frozen()) throw ContractError("linear evaluation requires a frozen backbone");
    if (cfg.epochs < 0) throw ConfigError("linear.epochs must be non-negative");
    if (cfg.epochs == 0) return;
    const long spe = pi::steps_per_epoch(train.size(), cfg.batch_size);
    nn::SgdState sgd{{}, cfg.lr, cfg.momentum, cfg.weight_decay};
    const nn::ForwardContext ctx{nn::BnMode::batch_stats, false, nullptr};
    const nn::ForwardContext head_ctx{nn::BnMode::tracked, true, nullptr};
    auto feats = [&](const space::ArchEncoding& a) { return net.features(a); };
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        sgd.lr = nn::step_decay_lr(epoch, cfg.epochs, cfg.lr, cfg.milestones);
        Rng order_rng(derive_seed(cfg.seed, "linear-data", static_cast<std::uint64_t>(epoch)));
        std::vector<int> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        for (int i = train.size() - 1; i > 0; --i) std::swap(order[i], order[order_rng.below(i + 1)]);
        int correct = 0, seen = 0;
        for (long s = 0; s < spe; ++s, ++step) {
            Rng rng(derive_seed(cfg.seed, "linear-step", static_cast<std::uint64_t>(step)));
            const auto arch = space::sample_uniform(net.space(), rng);
            std::vector<Tensor> imgs;
            std::vector<int> labels;
            for (long k = s * cfg.batch_size; k < (s + 1) * cfg.batch_size; ++k) {
                imgs.push_back(data::augment(train.image(order[k]), cfg.policy, rng));
                labels.push_back(train.labels[order[k]]);
            }
            Tensor x = data::make_batch(imgs, cfg.norm_mean, cfg.norm_std);
            Tensor f = feats(arch)->forward(backbone, x, ctx, nullptr);
            nn::Tape tape;
            Tensor logits = head.module->forward(head.params, f, head_ctx, &tape);
            auto ce = nn::softmax_cross_entropy(logits, labels);
            if (!std::isfinite(ce.loss))
                throw NumericError("non-finite linear-eval loss at step " + std::to_string(step));
            GradStore g;
            head.module->backward(head.params, tape, ce.grad, g);
            nn::sgd_step(head.params, g, sgd);
            correct += ce.correct;
            seen += static_cast<int>(labels.size());
        }
        if (on_epoch) on_epoch({epoch, sgd.lr, static_cast<double>(correct) / seen});
    }
}

Tensor extract_features(const supernet::Supernet& net, ParameterStore& backbone, const space::ArchEncoding& arch,
                        const data::Dataset& ds, bool calibrated, const std::vector<float>& norm_mean,
                        const std::vector<float>& norm_std, int chunk) {
    if (ds.size() == 0) throw ContractError("feature extraction on an empty dataset");
    if (calibrated) supernet::require_calibrated(net, backbone, arch);
    const nn::ForwardContext ctx{calibrated ? nn::BnMode::tracked : nn::BnMode::batch_stats, false, nullptr};
    auto m = net.features(arch);
    std::vector<Tensor> parts;
    for (int b = 0; b < ds.size(); b += chunk) {
        const int e = std::min(ds.size(), b + chunk);
        Tensor x = data::normalize_batch(ds.images.slice_rows(b, e), norm_mean, norm_std);
        parts.push_back(m->forward(backbone, x, ctx, nullptr));
    }
    return concat_rows(parts);
}

LinearHead calibrate_head(const LinearHead& head, const Tensor& features) {
    if (features.ndim() != 2 || features.dim(0) < 2) throw ContractError("head calibration needs at least 2 feature rows");
    const int n = features.dim(0), d = features.dim(1);
    LinearHead out = head;
    Tensor& mean = out.params.mut("linear.bn.running_mean");
    Tensor& var = out.params.mut("linear.bn.running_var");
    if (mean.size() != static_cast<std::size_t>(d)) throw ContractError("head calibration: feature width mismatch");
    for (int c = 0; c < d; ++c) {
        double m = 0.0, v = 0.0;
        for (int r = 0; r < n; ++r) m += features.at(r, c);
        m /= n;
        for (int r = 0; r < n; ++r) v += (features.at(r, c) - m) * (features.at(r, c) - m);
        mean[c] = static_cast<float>(m);
        var[c] = static_cast<float>(v / n);
    }
    out.params.mut("linear.bn.num_batches")[0] = 1.0f;
    return out;
}

double eval_linear(const supernet::Supernet& net, ParameterStore& backbone, const LinearHead& head,
                   const space::ArchEncoding& arch, const data::Dataset& ds, bool calibrated,
                   const std::vector<float>& norm_mean, const std::vector<float>& norm_std) {
    Tensor f = extract_features(net, backbone, arch, ds, calibrated, norm_mean, norm_std);
    ParameterStore hp = head.params;
    Tensor logits = head.module->forward(hp, f, {nn::BnMode::tracked, false, nullptr}, nullptr);
    return accuracy(logits, ds.labels);
}

}  // namespace pinas::linear
