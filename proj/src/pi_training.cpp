#include "pinas/pi_training.hpp"

#include "pinas/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace pinas::pi {

namespace {

void require_unit_rows(const Tensor& t, const char* what, int dim) {
    if (t.ndim() != 2 || t.dim(1) != dim)
        throw ContractError(std::string(what) + " must have shape (n, " + std::to_string(dim) + "), got " +
                            shape_str(t.shape()));
    for (int r = 0; r < t.dim(0); ++r) {
        double s = 0;
        for (int c = 0; c < dim; ++c) s += static_cast<double>(t.at(r, c)) * t.at(r, c);
        if (std::abs(std::sqrt(s) - 1.0) > 1e-3)
            throw ContractError(std::string(what) + " row " + std::to_string(r) + " has norm " +
                                std::to_string(std::sqrt(s)) + "; embeddings must be unit-norm");
    }
}

double dot(const Tensor& a, int ra, const Tensor& b, int rb) {
    const int d = a.dim(1);
    const float* x = a.data() + static_cast<std::size_t>(ra) * d;
    const float* y = b.data() + static_cast<std::size_t>(rb) * d;
    double s = 0;
    for (int k = 0; k < d; ++k) s += static_cast<double>(x[k]) * y[k];
    return s;
}

// One direction: rows of z against their positives and shared negatives.
// Accumulates loss pieces and writes d/dz scaled by 1/B.
void one_side(const Tensor& z, const Tensor& pos, const Tensor& neg, double tau, bool nontrivial, double& con,
              double& add, Tensor* dz) {
    const int B = z.dim(0), D = z.dim(1), K = nontrivial ? neg.dim(0) : 0;
    std::vector<double> logits(K + 1);
    for (int b = 0; b < B; ++b) {
        const double sp = dot(z, b, pos, b) / tau;
        con -= sp;
        if (!nontrivial) {
            if (dz)
                for (int k = 0; k < D; ++k) dz->at(b, k) = static_cast<float>(-pos.at(b, k) / (tau * B));
            continue;
        }
        double mx = sp;
        for (int q = 0; q < K; ++q) {
            logits[q] = dot(z, b, neg, q) / tau;
            mx = std::max(mx, logits[q]);
        }
        logits[K] = sp;
        double sum = 0;
        for (int q = 0; q <= K; ++q) sum += std::exp(logits[q] - mx);
        add += mx + std::log(sum);
        if (dz) {
            // d/dz [lse - s+] = (sum_q p_q q + p_pos pos - pos) / tau
            std::vector<double> g(D, 0.0);
            for (int q = 0; q < K; ++q) {
                const double p = std::exp(logits[q] - mx) / sum;
                for (int k = 0; k < D; ++k) g[k] += p * neg.at(q, k);
            }
            const double pp = std::exp(sp - mx) / sum;
            for (int k = 0; k < D; ++k) g[k] += (pp - 1.0) * pos.at(b, k);
            for (int k = 0; k < D; ++k) dz->at(b, k) = static_cast<float>(g[k] / (tau * B));
        }
    }
}

}  // namespace

LossBreakdown cross_path_loss(const Tensor& z_i, const Tensor& z_j, const Tensor& zt_i, const Tensor& zt_j,
                              const Tensor& negatives, double tau, bool nontrivial, LossGrads* grads) {
    if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
    if (z_i.ndim() != 2 || z_i.dim(0) < 1) throw ContractError("cross_path_loss: z_i must be a non-empty (B, D) array");
    const int B = z_i.dim(0), D = z_i.dim(1);
    require_unit_rows(z_i, "z_i", D);
    require_unit_rows(z_j, "z_j", D);
    require_unit_rows(zt_i, "zt_i", D);
    require_unit_rows(zt_j, "zt_j", D);
    if (z_j.dim(0) != B || zt_i.dim(0) != B || zt_j.dim(0) != B)
        throw ContractError("cross_path_loss: batch sizes differ");
    if (nontrivial && !negatives.empty()) require_unit_rows(negatives, "negative", D);
    const Tensor none({0, D});
    const Tensor& neg = negatives.empty() ? none : negatives;

    double con = 0, add = 0;
    if (grads) {
        grads->d_zi = Tensor({B, D});
        grads->d_zj = Tensor({B, D});
    }
    one_side(z_i, zt_j, neg, tau, nontrivial, con, add, grads ? &grads->d_zi : nullptr);
    one_side(z_j, zt_i, neg, tau, nontrivial, con, add, grads ? &grads->d_zj : nullptr);
    LossBreakdown out;
    out.con_term = con / B;
    out.add_term = nontrivial ? add / B : 0.0;
    out.total = out.con_term + out.add_term;
    return out;
}

FeatureQueue::FeatureQueue(int capacity, int dim) : capacity_(capacity), dim_(dim), buffer_({capacity, dim}) {
    if (capacity < 0 || dim < 1) throw ConfigError("feature queue needs capacity >= 0 and dim >= 1");
}

void FeatureQueue::enqueue(const Tensor& rows) {
    if (rows.empty()) return;
    if (rows.ndim() != 2 || rows.dim(1) != dim_)
        throw ContractError("feature queue holds " + std::to_string(dim_) + "-d rows, got " + shape_str(rows.shape()));
    if (capacity_ == 0) return;
    require_unit_rows(rows, "queued row", dim_);
    for (int r = 0; r < rows.dim(0); ++r) {
        std::copy_n(rows.data() + static_cast<std::size_t>(r) * dim_, dim_,
                    buffer_.data() + static_cast<std::size_t>(head_) * dim_);
        head_ = (head_ + 1) % capacity_;
        filled_ = std::min(filled_ + 1, capacity_);
    }
}

Tensor FeatureQueue::contents() const {
    Tensor out({filled_, dim_});
    const int start = capacity_ ? (head_ - filled_ + capacity_) % capacity_ : 0;
    for (int r = 0; r < filled_; ++r)
        std::copy_n(buffer_.data() + static_cast<std::size_t>((start + r) % capacity_) * dim_, dim_,
                    out.data() + static_cast<std::size_t>(r) * dim_);
    return out;
}

FeatureQueue FeatureQueue::restore(Tensor buffer, int head, int filled) {
    if (buffer.ndim() != 2) throw IngestionError("queue buffer must be 2-d");
    FeatureQueue q(buffer.dim(0), buffer.dim(1));
    if (head < 0 || filled < 0 || filled > q.capacity_ || (q.capacity_ && head >= q.capacity_))
        throw IngestionError("queue head/filled out of range");
    q.buffer_ = std::move(buffer);
    q.head_ = head;
    q.filled_ = filled;
    return q;
}

void ema_update(ParameterStore& teacher, const ParameterStore& student, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("EMA coefficient must lie in [0, 1]");
    const std::string diff = teacher.first_schema_difference(student);
    if (!diff.empty()) throw ContractError("teacher/student schema mismatch at entry '" + diff + "'");
    const float a = static_cast<float>(lambda), b = static_cast<float>(1.0 - lambda);
    for (const auto& e : student.entries()) {
        Tensor& t = teacher.mut(e.name);
        const float* s = e.value.data();
        float* w = t.data();
        for (std::size_t k = 0; k < t.size(); ++k) w[k] = a * w[k] + b * s[k];
    }
}

double collapse_metric(const Tensor& z) {
    if (z.ndim() != 2 || z.dim(0) < 2) throw ContractError("collapse_metric needs at least 2 embeddings");
    const int n = z.dim(0), d = z.dim(1);
    double total = 0;
    for (int k = 0; k < d; ++k) {
        double s = 0, s2 = 0;
        for (int r = 0; r < n; ++r) s += z.at(r, k);
        const double m = s / n;
        for (int r = 0; r < n; ++r) s2 += (z.at(r, k) - m) * (z.at(r, k) - m);
        total += std::sqrt(s2 / n);
    }
    return total / d;
}

TrainState init_train_state(const supernet::Supernet& net, std::uint64_t init_seed, int queue_capacity,
                            const nn::SgdState& sgd) {
    TrainState s;
    s.student = net.make_store(init_seed);
    s.teacher = s.student;
    s.sgd = sgd;
    s.sgd.momentum_buffers.clear();
    s.queue = FeatureQueue(queue_capacity, net.embed_dim());
    return s;
}

StepResult pi_train_step(const supernet::Supernet& net, TrainState& state, const data::Dataset& ds,
                         const std::vector<int>& indices, Rng& rng, const StepConfig& cfg) {
    if (indices.size() < 2) throw ConfigError("a training step needs at least 2 samples");
    const auto& flags = cfg.flags;
    StepResult res;
    res.step = state.step;
    res.lr = state.sgd.lr;
    res.path_i = space::sample_uniform(net.space(), rng);
    res.path_j = space::sample_uniform(net.space(), rng);

    const nn::ForwardContext train_ctx{nn::BnMode::batch_stats, true, nullptr};
    GradStore grads;

    if (flags.supervised_spos) {
        // Supervised training keeps only the geometric part of the policy.
        data::AugmentPolicy sup = data::AugmentPolicy::crop_flip(cfg.policy.crop_scale_min);
        sup.random_resize_crop = cfg.policy.random_resize_crop;
        sup.crop_scale_max = cfg.policy.crop_scale_max;
        sup.flip_prob = cfg.policy.flip_prob;
        std::vector<Tensor> imgs;
        std::vector<int> labels;
        for (int idx : indices) {
            imgs.push_back(data::augment(ds.image(idx), sup, rng));
            labels.push_back(ds.labels.at(idx));
        }
        const Tensor x = data::make_batch(imgs, cfg.norm_mean, cfg.norm_std);
        auto net_i = net.classifier_net(res.path_i);
        nn::Tape tape;
        const Tensor logits = net_i->forward(state.student, x, train_ctx, &tape);
        auto ce = nn::softmax_cross_entropy(logits, labels);
        if (!std::isfinite(ce.loss)) throw NumericError("non-finite loss at step " + std::to_string(state.step));
        net_i->backward(state.student, tape, ce.grad, grads);
        nn::sgd_step(state.student, grads, state.sgd);
        res.loss.total = ce.loss;
        res.collapse = std::numeric_limits<double>::quiet_NaN();
        ++state.step;
        return res;
    }

    std::array<std::vector<Tensor>, 4> views;
    for (int idx : indices) {
        auto v = data::four_views(ds.image(idx), cfg.policy, rng);
        for (int k = 0; k < 4; ++k) views[k].push_back(std::move(v[k]));
    }
    std::array<Tensor, 4> x;
    for (int k = 0; k < 4; ++k) x[k] = data::make_batch(views[k], cfg.norm_mean, cfg.norm_std);

    auto emb_i = net.embedder(res.path_i);
    auto emb_j = net.embedder(res.path_j);
    nn::Tape tape_i, tape_j;
    const Tensor z_i = emb_i->forward(state.student, x[0], train_ctx, &tape_i);
    const Tensor z_j = emb_j->forward(state.student, x[1], train_ctx, &tape_j);

    // Teacher: EMA weights, or the current student weights (stop-gradient)
    // when the mean teacher is disabled.
    const nn::ForwardContext teach_ctx{nn::BnMode::batch_stats, false, nullptr};
    ParameterStore& tw = flags.mean_teacher ? state.teacher : state.student;
    const Tensor zt_i = emb_i->forward(tw, x[2], teach_ctx, nullptr);
    const Tensor zt_j = emb_j->forward(tw, x[3], teach_ctx, nullptr);

    res.collapse = collapse_metric(z_i);
    const double threshold = cfg.collapse_factor / std::sqrt(static_cast<double>(net.embed_dim()));
    if (cfg.abort_on_collapse && res.collapse < threshold)
        throw CollapseError("collision: embeddings collapsed at step " + std::to_string(state.step) +
                                " (collapse_metric " + std::to_string(res.collapse) + " < " +
                                std::to_string(threshold) + ")",
                            state.step, res.collapse);

    const Tensor negatives = flags.nontrivial ? state.queue.contents() : Tensor({0, net.embed_dim()});
    LossGrads lg;
    // Cross-path pairs z_i with zt_j; without it each student output is
    // matched to the teacher on its own path.
    res.loss = flags.cross_path ? cross_path_loss(z_i, z_j, zt_i, zt_j, negatives, cfg.tau, flags.nontrivial, &lg)
                                : cross_path_loss(z_i, z_j, zt_j, zt_i, negatives, cfg.tau, flags.nontrivial, &lg);
    if (!std::isfinite(res.loss.total)) throw NumericError("non-finite loss at step " + std::to_string(state.step));

    emb_j->backward(state.student, tape_j, lg.d_zj, grads);
    emb_i->backward(state.student, tape_i, lg.d_zi, grads);
    nn::sgd_step(state.student, grads, state.sgd);
    if (flags.mean_teacher) ema_update(state.teacher, state.student, cfg.lambda);
    state.queue.enqueue(zt_i);
    state.queue.enqueue(zt_j);
    ++state.step;
    return res;
}

long steps_per_epoch(int dataset_size, int batch_size) {
    if (batch_size < 2) throw ConfigError("batch size must be at least 2");
    if (dataset_size < batch_size)
        throw ConfigError("training set (" + std::to_string(dataset_size) + ") smaller than one batch (" +
                          std::to_string(batch_size) + ")");
    return dataset_size / batch_size;
}

std::vector<int> epoch_order(int dataset_size, std::uint64_t seed, int epoch) {
    std::vector<int> order(dataset_size);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "data", static_cast<std::uint64_t>(epoch)));
    for (int i = dataset_size - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    return order;
}

double scheduled_lr(long step, long total_steps, const TrainConfig& cfg) {
    const long warm = static_cast<long>(cfg.warmup_fraction * total_steps);
    if (step < warm) return cfg.base_lr * static_cast<double>(step + 1) / warm;
    return nn::cosine_lr(step - warm, total_steps - warm, cfg.base_lr);
}

void train_supernet(const supernet::Supernet& net, TrainState& state, const data::Dataset& train,
                    const TrainConfig& cfg, long stop_step,
                    const std::function<void(const StepResult&, const TrainState&)>& on_step) {
    const long spe = steps_per_epoch(train.size(), cfg.batch_size);
    const long total = spe * cfg.epochs;
    const long end = stop_step < 0 ? total : std::min(stop_step, total);
    int cached_epoch = -1;
    std::vector<int> order;
    while (state.step < end) {
        const int epoch = static_cast<int>(state.step / spe);
        if (epoch != cached_epoch) {
            order = epoch_order(train.size(), cfg.seed, epoch);
            cached_epoch = epoch;
        }
        const long pos = (state.step % spe) * cfg.batch_size;
        std::vector<int> idx(order.begin() + pos, order.begin() + pos + cfg.batch_size);
        Rng rng(derive_seed(cfg.seed, "step", static_cast<std::uint64_t>(state.step)));
        state.sgd.lr = scheduled_lr(state.step, total, cfg);
        StepResult r = pi_train_step(net, state, train, idx, rng, cfg.step);
        if (on_step) on_step(r, state);
    }
}

}  // namespace pinas::pi
