#include "pinas/nn/layers.hpp"

#include "pinas/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace pinas::nn {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void expect_rank(const Module& m, const Tensor& x, std::size_t rank) {
    if (x.ndim() != rank)
        throw ConfigError("layer '" + m.name() + "' (" + std::string(m.kind()) + ") expects a rank-" +
                          std::to_string(rank) + " input, got " + shape_str(x.shape()));
}

void expect_dim(const Module& m, const Tensor& x, std::size_t axis, int want) {
    if (x.dim(axis) != want)
        throw ConfigError("layer '" + m.name() + "' (" + std::string(m.kind()) + ") expects size " +
                          std::to_string(want) + " on axis " + std::to_string(axis) + ", got input " +
                          shape_str(x.shape()));
}

void expect_grad_shape(const Module& m, const Tensor& dy, const Shape& want) {
    if (dy.shape() != want)
        throw ConfigError("layer '" + m.name() + "' received gradient " + shape_str(dy.shape()) + ", expected " +
                          shape_str(want));
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, ConvSpec spec) : Module(std::move(name)), spec_(spec) {
    if (spec_.groups <= 0 || spec_.in_channels % spec_.groups || spec_.out_channels % spec_.groups)
        throw ConfigError("conv '" + this->name() + "': channels not divisible by groups");
    if (spec_.kernel <= 0 || spec_.stride <= 0 || spec_.dilation <= 0 || spec_.padding < 0)
        throw ConfigError("conv '" + this->name() + "': invalid geometry");
}

int Conv2d::out_size(int in) const {
    return (in + 2 * spec_.padding - spec_.dilation * (spec_.kernel - 1) - 1) / spec_.stride + 1;
}

void Conv2d::declare(std::vector<ParamDecl>& out) const {
    const int cin_g = spec_.in_channels / spec_.groups;
    const int fan_in = cin_g * spec_.kernel * spec_.kernel;
    out.push_back({name() + ".weight", EntryKind::param,
                   {spec_.out_channels, cin_g, spec_.kernel, spec_.kernel}, Init::fan_in_uniform, fan_in});
    if (spec_.bias)
        out.push_back({name() + ".bias", EntryKind::param, {spec_.out_channels}, Init::fan_in_uniform, fan_in});
}

Tensor Conv2d::forward(ParameterStore& ps, const Tensor& x, const ForwardContext&, Tape* tape) const {
    expect_rank(*this, x, 4);
    expect_dim(*this, x, 1, spec_.in_channels);
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = out_size(h), wo = out_size(w);
    if (ho <= 0 || wo <= 0) throw ConfigError("conv '" + name() + "': input " + shape_str(x.shape()) + " too small");
    const int k = spec_.kernel, g = spec_.groups;
    const int cg = c / g, og = spec_.out_channels / g;
    const int kk = cg * k * k;
    const int hw = ho * wo;
    const long p = static_cast<long>(n) * hw;

    Tensor cols({g, kk, static_cast<int>(p)});
    float* colp = cols.data();
    const float* xp = x.data();
    for (int gi = 0; gi < g; ++gi) {
        for (int ci = 0; ci < cg; ++ci) {
            const int ch = gi * cg + ci;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    float* row = colp + (static_cast<long>(gi) * kk + (ci * k + ky) * k + kx) * p;
                    for (int ni = 0; ni < n; ++ni) {
                        const float* plane = xp + (static_cast<long>(ni) * c + ch) * h * w;
                        float* dst = row + static_cast<long>(ni) * hw;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * spec_.stride - spec_.padding + ky * spec_.dilation;
                            float* drow = dst + oy * wo;
                            if (iy < 0 || iy >= h) {
                                std::fill(drow, drow + wo, 0.0f);
                                continue;
                            }
                            const float* srow = plane + iy * w;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * spec_.stride - spec_.padding + kx * spec_.dilation;
                                drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : 0.0f;
                            }
                        }
                    }
                }
            }
        }
    }

    const Tensor& weight = ps.get(name() + ".weight");
    Tensor y({n, spec_.out_channels, ho, wo});
    MatRM yg(og, p);
    for (int gi = 0; gi < g; ++gi) {
        CMapRM wg(weight.data() + static_cast<long>(gi) * og * kk, og, kk);
        CMapRM cg_mat(colp + static_cast<long>(gi) * kk * p, kk, p);
        yg.noalias() = wg * cg_mat;
        for (int o = 0; o < og; ++o) {
            const int oc = gi * og + o;
            const float b = spec_.bias ? ps.get(name() + ".bias")[oc] : 0.0f;
            for (int ni = 0; ni < n; ++ni) {
                float* dst = y.data() + (static_cast<long>(ni) * spec_.out_channels + oc) * hw;
                const float* src = yg.data() + static_cast<long>(o) * p + static_cast<long>(ni) * hw;
                for (int i = 0; i < hw; ++i) dst[i] = src[i] + b;
            }
        }
    }
    if (tape) tape->push({{std::move(cols)}, x.shape()});
    return y;
}

Tensor Conv2d::backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const {
    auto frame = tape.pop(name());
    const Shape& xs = frame.shape;
    const Tensor& cols = frame.tensors.at(0);
    const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    const int ho = out_size(h), wo = out_size(w);
    expect_grad_shape(*this, dy, {n, spec_.out_channels, ho, wo});
    const int k = spec_.kernel, g = spec_.groups;
    const int cg = c / g, og = spec_.out_channels / g;
    const int kk = cg * k * k;
    const int hw = ho * wo;
    const long p = static_cast<long>(n) * hw;

    const Tensor& weight = ps.get(name() + ".weight");
    Tensor dweight(weight.shape());
    Tensor dbias;
    if (spec_.bias) dbias = Tensor({spec_.out_channels});
    Tensor dx(xs);
    MatRM dyg(og, p);
    MatRM dcols(kk, p);
    for (int gi = 0; gi < g; ++gi) {
        for (int o = 0; o < og; ++o) {
            const int oc = gi * og + o;
            double bsum = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const float* src = dy.data() + (static_cast<long>(ni) * spec_.out_channels + oc) * hw;
                float* dst = dyg.data() + static_cast<long>(o) * p + static_cast<long>(ni) * hw;
                for (int i = 0; i < hw; ++i) {
                    dst[i] = src[i];
                    bsum += src[i];
                }
            }
            if (spec_.bias) dbias[oc] = static_cast<float>(bsum);
        }
        CMapRM cg_mat(cols.data() + static_cast<long>(gi) * kk * p, kk, p);
        MapRM dwg(dweight.data() + static_cast<long>(gi) * og * kk, og, kk);
        dwg.noalias() = dyg * cg_mat.transpose();
        CMapRM wg(weight.data() + static_cast<long>(gi) * og * kk, og, kk);
        dcols.noalias() = wg.transpose() * dyg;

        for (int ci = 0; ci < cg; ++ci) {
            const int ch = gi * cg + ci;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const float* row = dcols.data() + static_cast<long>((ci * k + ky) * k + kx) * p;
                    for (int ni = 0; ni < n; ++ni) {
                        float* plane = dx.data() + (static_cast<long>(ni) * c + ch) * h * w;
                        const float* src = row + static_cast<long>(ni) * hw;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * spec_.stride - spec_.padding + ky * spec_.dilation;
                            if (iy < 0 || iy >= h) continue;
                            float* drow = plane + iy * w;
                            const float* srow = src + oy * wo;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * spec_.stride - spec_.padding + kx * spec_.dilation;
                                if (ix >= 0 && ix < w) drow[ix] += srow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    accumulate(grads, name() + ".weight", dweight);
    if (spec_.bias) accumulate(grads, name() + ".bias", dbias);
    return dx;
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, float eps, float momentum)
    : Module(std::move(name)), channels_(channels), eps_(eps), momentum_(momentum) {}

void BatchNorm::declare(std::vector<ParamDecl>& out) const {
    out.push_back({name() + ".gamma", EntryKind::param, {channels_}, Init::ones});
    out.push_back({name() + ".beta", EntryKind::param, {channels_}, Init::zeros});
    out.push_back({name() + ".running_mean", EntryKind::buffer, {channels_}, Init::zeros});
    out.push_back({name() + ".running_var", EntryKind::buffer, {channels_}, Init::ones});
    out.push_back({name() + ".num_batches", EntryKind::buffer, {1}, Init::zeros});
}

// Frame layout: tensors = {xhat, invstd}, shape = input shape; an empty
// frame shape marks the tracked (constant-statistics) path.
Tensor BatchNorm::forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const {
    if (x.ndim() < 2) expect_rank(*this, x, 2);
    expect_dim(*this, x, 1, channels_);
    const int n = x.dim(0);
    const long spatial = static_cast<long>(x.size()) / (static_cast<long>(n) * channels_);
    const long m = static_cast<long>(n) * spatial;
    const Tensor& gamma = ps.get(name() + ".gamma");
    const Tensor& beta = ps.get(name() + ".beta");

    const bool use_batch = ctx.bn_mode == BnMode::batch_stats || ctx.train;
    std::vector<double> mean(channels_, 0.0), var(channels_, 0.0);
    if (use_batch) {
        if (m <= 0) throw ConfigError("batch norm '" + name() + "' received an empty batch");
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < channels_; ++ci) {
                const float* p = x.data() + (static_cast<long>(ni) * channels_ + ci) * spatial;
                double s = 0.0;
                for (long i = 0; i < spatial; ++i) s += p[i];
                mean[ci] += s;
            }
        for (auto& v : mean) v /= static_cast<double>(m);
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < channels_; ++ci) {
                const float* p = x.data() + (static_cast<long>(ni) * channels_ + ci) * spatial;
                double s = 0.0;
                for (long i = 0; i < spatial; ++i) {
                    const double d = p[i] - mean[ci];
                    s += d * d;
                }
                var[ci] += s;
            }
        for (auto& v : var) v /= static_cast<double>(m);
        if (ctx.bn_mode == BnMode::tracked && ctx.train) {
            Tensor& rm = ps.mut(name() + ".running_mean");
            Tensor& rv = ps.mut(name() + ".running_var");
            for (int ci = 0; ci < channels_; ++ci) {
                rm[ci] = static_cast<float>((1.0 - momentum_) * rm[ci] + momentum_ * mean[ci]);
                rv[ci] = static_cast<float>((1.0 - momentum_) * rv[ci] + momentum_ * var[ci]);
            }
            ps.mut(name() + ".num_batches")[0] += 1.0f;
        }
        if (ctx.bn_mode == BnMode::batch_stats && ctx.recorder) ctx.recorder->record(name(), mean, var);
    } else {
        const Tensor& rm = ps.get(name() + ".running_mean");
        const Tensor& rv = ps.get(name() + ".running_var");
        for (int ci = 0; ci < channels_; ++ci) {
            mean[ci] = rm[ci];
            var[ci] = rv[ci];
        }
    }

    Tensor invstd({channels_});
    for (int ci = 0; ci < channels_; ++ci) invstd[ci] = static_cast<float>(1.0 / std::sqrt(var[ci] + eps_));
    Tensor y(x.shape());
    Tensor xhat;
    if (tape && use_batch) xhat = Tensor(x.shape());
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < channels_; ++ci) {
            const long off = (static_cast<long>(ni) * channels_ + ci) * spatial;
            const float mu = static_cast<float>(mean[ci]);
            const float is = invstd[ci];
            const float gm = gamma[ci], bt = beta[ci];
            for (long i = 0; i < spatial; ++i) {
                const float xh = (x[off + i] - mu) * is;
                if (!xhat.empty()) xhat[off + i] = xh;
                y[off + i] = gm * xh + bt;
            }
        }
    if (tape) {
        if (use_batch)
            tape->push({{std::move(xhat), std::move(invstd)}, x.shape()});
        else
            tape->push({{x, std::move(invstd), Tensor({channels_}, std::vector<float>(mean.begin(), mean.end()))},
                        {}});
    }
    return y;
}

Tensor BatchNorm::backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const {
    auto frame = tape.pop(name());
    const Tensor& gamma = ps.get(name() + ".gamma");
    Tensor dgamma({channels_}), dbeta({channels_});
    if (frame.shape.empty()) {
        // Constant statistics: y = gamma * (x - mean) * invstd + beta.
        const Tensor& x = frame.tensors.at(0);
        const Tensor& invstd = frame.tensors.at(1);
        const Tensor& mean = frame.tensors.at(2);
        expect_grad_shape(*this, dy, x.shape());
        const int n = x.dim(0);
        const long spatial = static_cast<long>(x.size()) / (static_cast<long>(n) * channels_);
        Tensor dx(x.shape());
        std::vector<double> dg(channels_, 0.0), db(channels_, 0.0);
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < channels_; ++ci) {
                const long off = (static_cast<long>(ni) * channels_ + ci) * spatial;
                for (long i = 0; i < spatial; ++i) {
                    const float g = dy[off + i];
                    dg[ci] += g * (x[off + i] - mean[ci]) * invstd[ci];
                    db[ci] += g;
                    dx[off + i] = g * gamma[ci] * invstd[ci];
                }
            }
        for (int ci = 0; ci < channels_; ++ci) {
            dgamma[ci] = static_cast<float>(dg[ci]);
            dbeta[ci] = static_cast<float>(db[ci]);
        }
        accumulate(grads, name() + ".gamma", dgamma);
        accumulate(grads, name() + ".beta", dbeta);
        return dx;
    }

    const Tensor& xhat = frame.tensors.at(0);
    const Tensor& invstd = frame.tensors.at(1);
    expect_grad_shape(*this, dy, frame.shape);
    const int n = frame.shape[0];
    const long spatial = static_cast<long>(xhat.size()) / (static_cast<long>(n) * channels_);
    const double m = static_cast<double>(n) * spatial;
    std::vector<double> sum_dy(channels_, 0.0), sum_dy_xhat(channels_, 0.0);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < channels_; ++ci) {
            const long off = (static_cast<long>(ni) * channels_ + ci) * spatial;
            for (long i = 0; i < spatial; ++i) {
                sum_dy[ci] += dy[off + i];
                sum_dy_xhat[ci] += static_cast<double>(dy[off + i]) * xhat[off + i];
            }
        }
    Tensor dx(frame.shape);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < channels_; ++ci) {
            const long off = (static_cast<long>(ni) * channels_ + ci) * spatial;
            const double scale = gamma[ci] * invstd[ci] / m;
            for (long i = 0; i < spatial; ++i)
                dx[off + i] =
                    static_cast<float>(scale * (m * dy[off + i] - sum_dy[ci] - xhat[off + i] * sum_dy_xhat[ci]));
        }
    for (int ci = 0; ci < channels_; ++ci) {
        dgamma[ci] = static_cast<float>(sum_dy_xhat[ci]);
        dbeta[ci] = static_cast<float>(sum_dy[ci]);
    }
    accumulate(grads, name() + ".gamma", dgamma);
    accumulate(grads, name() + ".beta", dbeta);
    return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, int in_features, int out_features, bool bias)
    : Module(std::move(name)), in_(in_features), out_(out_features), bias_(bias) {}

void Linear::declare(std::vector<ParamDecl>& out) const {
    out.push_back({name() + ".weight", EntryKind::param, {out_, in_}, Init::fan_in_uniform, in_});
    if (bias_) out.push_back({name() + ".bias", EntryKind::param, {out_}, Init::fan_in_uniform, in_});
}

Tensor Linear::forward(ParameterStore& ps, const Tensor& x, const ForwardContext&, Tape* tape) const {
    expect_rank(*this, x, 2);
    expect_dim(*this, x, 1, in_);
    const int n = x.dim(0);
    const Tensor& wt = ps.get(name() + ".weight");
    Tensor y({n, out_});
    MapRM ym(y.data(), n, out_);
    ym.noalias() = CMapRM(x.data(), n, in_) * CMapRM(wt.data(), out_, in_).transpose();
    if (bias_) {
        const Tensor& b = ps.get(name() + ".bias");
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_; ++j) y.at(i, j) += b[j];
    }
    if (tape) tape->push({{x}, x.shape()});
    return y;
}

Tensor Linear::backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const {
    auto frame = tape.pop(name());
    const Tensor& x = frame.tensors.at(0);
    const int n = x.dim(0);
    expect_grad_shape(*this, dy, {n, out_});
    const Tensor& wt = ps.get(name() + ".weight");
    CMapRM dym(dy.data(), n, out_);
    Tensor dw({out_, in_});
    MapRM(dw.data(), out_, in_).noalias() = dym.transpose() * CMapRM(x.data(), n, in_);
    accumulate(grads, name() + ".weight", dw);
    if (bias_) {
        Tensor db({out_});
        for (int j = 0; j < out_; ++j) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += dy.at(i, j);
            db[j] = static_cast<float>(s);
        }
        accumulate(grads, name() + ".bias", db);
    }
    Tensor dx({n, in_});
    MapRM(dx.data(), n, in_).noalias() = dym * CMapRM(wt.data(), out_, in_);
    return dx;
}

// ---------------------------------------------------------------- ReLU

Tensor ReLU::forward(ParameterStore&, const Tensor& x, const ForwardContext&, Tape* tape) const {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
    if (tape) tape->push({{y}, x.shape()});
    return y;
}

Tensor ReLU::backward(const ParameterStore&, Tape& tape, const Tensor& dy, GradStore&) const {
    auto frame = tape.pop(name());
    const Tensor& y = frame.tensors.at(0);
    expect_grad_shape(*this, dy, y.shape());
    Tensor dx(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > 0.0f ? dy[i] : 0.0f;
    return dx;
}

// ---------------------------------------------------------------- pooling

AvgPool2d::AvgPool2d(std::string name, int kernel, int stride, int padding)
    : Module(std::move(name)), kernel_(kernel), stride_(stride), padding_(padding) {}

Tensor AvgPool2d::forward(ParameterStore&, const Tensor& x, const ForwardContext&, Tape* tape) const {
    expect_rank(*this, x, 4);
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = (h + 2 * padding_ - kernel_) / stride_ + 1;
    const int wo = (w + 2 * padding_ - kernel_) / stride_ + 1;
    Tensor y({n, c, ho, wo});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    const int y0 = std::max(oy * stride_ - padding_, 0);
                    const int y1 = std::min(oy * stride_ - padding_ + kernel_, h);
                    const int x0 = std::max(ox * stride_ - padding_, 0);
                    const int x1 = std::min(ox * stride_ - padding_ + kernel_, w);
                    float s = 0.0f;
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix) s += x.at(ni, ci, iy, ix);
                    y.at(ni, ci, oy, ox) = s / static_cast<float>((y1 - y0) * (x1 - x0));
                }
    if (tape) tape->push({{}, x.shape()});
    return y;
}

Tensor AvgPool2d::backward(const ParameterStore&, Tape& tape, const Tensor& dy, GradStore&) const {
    auto frame = tape.pop(name());
    const Shape& xs = frame.shape;
    const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    const int ho = (h + 2 * padding_ - kernel_) / stride_ + 1;
    const int wo = (w + 2 * padding_ - kernel_) / stride_ + 1;
    expect_grad_shape(*this, dy, {n, c, ho, wo});
    Tensor dx(xs);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    const int y0 = std::max(oy * stride_ - padding_, 0);
                    const int y1 = std::min(oy * stride_ - padding_ + kernel_, h);
                    const int x0 = std::max(ox * stride_ - padding_, 0);
                    const int x1 = std::min(ox * stride_ - padding_ + kernel_, w);
                    const float g = dy.at(ni, ci, oy, ox) / static_cast<float>((y1 - y0) * (x1 - x0));
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix) dx.at(ni, ci, iy, ix) += g;
                }
    return dx;
}

MaxPool2d::MaxPool2d(std::string name, int kernel, int stride, int padding)
    : Module(std::move(name)), kernel_(kernel), stride_(stride), padding_(padding) {}

Tensor MaxPool2d::forward(ParameterStore&, const Tensor& x, const ForwardContext&, Tape* tape) const {
    expect_rank(*this, x, 4);
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = (h + 2 * padding_ - kernel_) / stride_ + 1;
    const int wo = (w + 2 * padding_ - kernel_) / stride_ + 1;
    Tensor y({n, c, ho, wo});
    Tensor argmax({n, c, ho, wo});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    float best = -std::numeric_limits<float>::infinity();
                    int best_idx = -1;
                    for (int ky = 0; ky < kernel_; ++ky)
                        for (int kx = 0; kx < kernel_; ++kx) {
                            const int iy = oy * stride_ - padding_ + ky, ix = ox * stride_ - padding_ + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            const float v = x.at(ni, ci, iy, ix);
                            if (best_idx < 0 || v > best) {
                                best = v;
                                best_idx = iy * w + ix;
                            }
                        }
                    y.at(ni, ci, oy, ox) = best;
                    argmax.at(ni, ci, oy, ox) = static_cast<float>(best_idx);
                }
    if (tape) tape->push({{std::move(argmax)}, x.shape()});
    return y;
}

Tensor MaxPool2d::backward(const ParameterStore&, Tape& tape, const Tensor& dy, GradStore&) const {
    auto frame = tape.pop(name());
    const Tensor& argmax = frame.tensors.at(0);
    expect_grad_shape(*this, dy, argmax.shape());
    const Shape& xs = frame.shape;
    const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    const int ho = dy.dim(2), wo = dy.dim(3);
    Tensor dx(xs);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            float* plane = dx.data() + (static_cast<long>(ni) * c + ci) * h * w;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox)
                    plane[static_cast<int>(argmax.at(ni, ci, oy, ox))] += dy.at(ni, ci, oy, ox);
        }
    return dx;
}

Tensor GlobalAvgPool::forward(ParameterStore&, const Tensor& x, const ForwardContext&, Tape* tape) const {
    expect_rank(*this, x, 4);
    const int n = x.dim(0), c = x.dim(1);
    const int hw = x.dim(2) * x.dim(3);
    Tensor y({n, c});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const float* p = x.data() + (static_cast<long>(ni) * c + ci) * hw;
            double s = 0.0;
            for (int i = 0; i < hw; ++i) s += p[i];
            y.at(ni, ci) = static_cast<float>(s / hw);
        }
    if (tape) tape->push({{}, x.shape()});
    return y;
}

Tensor GlobalAvgPool::backward(const ParameterStore&, Tape& tape, const Tensor& dy, GradStore&) const {
    auto frame = tape.pop(name());
    const Shape& xs = frame.shape;
    const int n = xs[0], c = xs[1];
    const int hw = xs[2] * xs[3];
    expect_grad_shape(*this, dy, {n, c});
    Tensor dx(xs);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const float g = dy.at(ni, ci) / static_cast<float>(hw);
            float* p = dx.data() + (static_cast<long>(ni) * c + ci) * hw;
            for (int i = 0; i < hw; ++i) p[i] = g;
        }
    return dx;
}

// ---------------------------------------------------------------- identity / zero / l2norm

Tensor Identity::forward(ParameterStore&, const Tensor& x, const ForwardContext&, Tape* tape) const {
    if (tape) tape->push({{}, x.shape()});
    return x;
}

Tensor Identity::backward(const ParameterStore&, Tape& tape, const Tensor& dy, GradStore&) const {
    auto frame = tape.pop(name());
    expect_grad_shape(*this, dy, frame.shape);
    return dy;
}

Tensor Zero::forward(ParameterStore&, const Tensor& x, const ForwardContext&, Tape* tape) const {
    if (tape) tape->push({{}, x.shape()});
    return Tensor(x.shape());
}

Tensor Zero::backward(const ParameterStore&, Tape& tape, const Tensor& dy, GradStore&) const {
    auto frame = tape.pop(name());
    expect_grad_shape(*this, dy, frame.shape);
    return Tensor(frame.shape);
}

Tensor L2Normalize::forward(ParameterStore&, const Tensor& x, const ForwardContext&, Tape* tape) const {
    expect_rank(*this, x, 2);
    const int n = x.dim(0), d = x.dim(1);
    Tensor y(x.shape());
    Tensor norms({n});
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += static_cast<double>(x.at(i, j)) * x.at(i, j);
        const double nrm = std::max(std::sqrt(s), 1e-12);
        norms[i] = static_cast<float>(nrm);
        for (int j = 0; j < d; ++j) y.at(i, j) = static_cast<float>(x.at(i, j) / nrm);
    }
    if (tape) tape->push({{y, std::move(norms)}, x.shape()});
    return y;
}

Tensor L2Normalize::backward(const ParameterStore&, Tape& tape, const Tensor& dy, GradStore&) const {
    auto frame = tape.pop(name());
    const Tensor& y = frame.tensors.at(0);
    const Tensor& norms = frame.tensors.at(1);
    expect_grad_shape(*this, dy, y.shape());
    const int n = y.dim(0), d = y.dim(1);
    Tensor dx(y.shape());
    for (int i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += static_cast<double>(y.at(i, j)) * dy.at(i, j);
        for (int j = 0; j < d; ++j)
            dx.at(i, j) = static_cast<float>((dy.at(i, j) - y.at(i, j) * dot) / norms[i]);
    }
    return dx;
}

// ---------------------------------------------------------------- containers

Sequential::Sequential(std::string name, std::vector<ModulePtr> children)
    : Module(std::move(name)), children_(std::move(children)) {
    for (const auto& c : children_)
        if (!c) throw ConfigError("sequential '" + this->name() + "' has a null child");
}

Tensor Sequential::forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const {
    Tensor h = x;
    for (std::size_t i = 0; i < children_.size(); ++i) {
        h = children_[i]->forward(ps, h, ctx, tape);
        if (!h.all_finite())
            throw NumericError("non-finite activation after layer " + std::to_string(i) + " ('" +
                               children_[i]->name() + "') of '" + name() + "'");
    }
    return h;
}

Tensor Sequential::backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const {
    Tensor g = dy;
    for (auto it = children_.rbegin(); it != children_.rend(); ++it) g = (*it)->backward(ps, tape, g, grads);
    return g;
}

void Sequential::declare(std::vector<ParamDecl>& out) const {
    for (const auto& c : children_) c->declare(out);
}

Residual::Residual(std::string name, ModulePtr body, ModulePtr shortcut, bool relu_after)
    : Module(std::move(name)), body_(std::move(body)), shortcut_(std::move(shortcut)), relu_after_(relu_after) {
    if (!body_) throw ConfigError("residual '" + this->name() + "' has no body");
}

Tensor Residual::forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const {
    Tensor y = body_->forward(ps, x, ctx, tape);
    Tensor s = shortcut_ ? shortcut_->forward(ps, x, ctx, tape) : x;
    if (s.shape() != y.shape())
        throw ConfigError("residual '" + name() + "': body output " + shape_str(y.shape()) +
                          " does not match shortcut " + shape_str(s.shape()));
    for (std::size_t i = 0; i < y.size(); ++i) {
        const float v = y[i] + s[i];
        y[i] = (relu_after_ && v < 0.0f) ? 0.0f : v;
    }
    if (tape) {
        if (relu_after_)
            tape->push({{y}, x.shape()});
        else
            tape->push({{}, x.shape()});
    }
    return y;
}

Tensor Residual::backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const {
    auto frame = tape.pop(name());
    Tensor g = dy;
    if (relu_after_) {
        const Tensor& y = frame.tensors.at(0);
        expect_grad_shape(*this, dy, y.shape());
        for (std::size_t i = 0; i < g.size(); ++i)
            if (y[i] <= 0.0f) g[i] = 0.0f;
    }
    Tensor dx = shortcut_ ? shortcut_->backward(ps, tape, g, grads) : g;
    Tensor db = body_->backward(ps, tape, g, grads);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += db[i];
    return dx;
}

void Residual::declare(std::vector<ParamDecl>& out) const {
    body_->declare(out);
    if (shortcut_) shortcut_->declare(out);
}

Cell::Cell(std::string name, int num_nodes, std::vector<ModulePtr> edges)
    : Module(std::move(name)), num_nodes_(num_nodes), edges_(std::move(edges)) {
    if (num_nodes_ < 2 || static_cast<int>(edges_.size()) != edge_count(num_nodes_))
        throw ConfigError("cell '" + this->name() + "' needs " + std::to_string(edge_count(num_nodes_)) + " edges");
}

Tensor Cell::forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const {
    std::vector<Tensor> nodes;
    nodes.reserve(num_nodes_);
    nodes.push_back(x);
    int e = 0;
    for (int j = 1; j < num_nodes_; ++j) {
        Tensor acc(x.shape());
        for (int i = 0; i < j; ++i, ++e) {
            if (edges_[e]->kind() == "zero") continue;
            Tensor out = edges_[e]->forward(ps, nodes[i], ctx, tape);
            if (out.shape() != acc.shape())
                throw ConfigError("cell '" + name() + "': edge '" + edges_[e]->name() + "' changes shape");
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += out[k];
        }
        nodes.push_back(std::move(acc));
    }
    if (tape) tape->push({{}, x.shape()});
    return nodes.back();
}

Tensor Cell::backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const {
    auto frame = tape.pop(name());
    expect_grad_shape(*this, dy, frame.shape);
    std::vector<Tensor> node_grads(num_nodes_, Tensor(frame.shape));
    node_grads.back() = dy;
    // Walk edges in reverse forward order so every target node's gradient is
    // complete before it is propagated to its sources.
    int e = edge_count(num_nodes_) - 1;
    for (int j = num_nodes_ - 1; j >= 1; --j) {
        for (int i = j - 1; i >= 0; --i, --e) {
            if (edges_[e]->kind() == "zero") continue;
            Tensor g = edges_[e]->backward(ps, tape, node_grads[j], grads);
            for (std::size_t k = 0; k < g.size(); ++k) node_grads[i][k] += g[k];
        }
    }
    return node_grads[0];
}

void Cell::declare(std::vector<ParamDecl>& out) const {
    for (const auto& e : edges_) e->declare(out);
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size())
        throw ConfigError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                          std::to_string(labels.size()) + " labels");
    const int n = logits.dim(0), k = logits.dim(1);
    CrossEntropyResult r{0.0, Tensor(logits.shape()), 0};
    for (int i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= k) throw ContractError("label out of range");
        double mx = logits.at(i, 0);
        int arg = 0;
        for (int j = 1; j < k; ++j)
            if (logits.at(i, j) > mx) {
                mx = logits.at(i, j);
                arg = j;
            }
        if (arg == labels[i]) ++r.correct;
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(logits.at(i, j) - mx);
        const double lz = std::log(z) + mx;
        r.loss += lz - logits.at(i, labels[i]);
        for (int j = 0; j < k; ++j) {
            const double p = std::exp(logits.at(i, j) - lz);
            r.grad.at(i, j) = static_cast<float>((p - (j == labels[i] ? 1.0 : 0.0)) / n);
        }
    }
    r.loss /= n;
    return r;
}

}  // namespace pinas::nn
