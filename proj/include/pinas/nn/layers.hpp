#pragma once

#include "pinas/nn/module.hpp"

#include <vector>

namespace pinas::nn {

struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel = 3;
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    int groups = 1;
    bool bias = false;
};

class Conv2d final : public Module {
public:
    Conv2d(std::string name, ConvSpec spec);
    std::string_view kind() const override { return "conv"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;
    void declare(std::vector<ParamDecl>& out) const override;
    const ConvSpec& spec() const noexcept { return spec_; }
    int out_size(int in) const;

private:
    ConvSpec spec_;
};

// Batch normalization over axis 1 of (N, C, ...) inputs. Buffers:
// running_mean, running_var (biased batch variance), num_batches.
class BatchNorm final : public Module {
public:
    static constexpr float kDefaultEps = 1e-5f;
    static constexpr float kDefaultMomentum = 0.1f;

    BatchNorm(std::string name, int channels, float eps = kDefaultEps, float momentum = kDefaultMomentum);
    std::string_view kind() const override { return "bn"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;
    void declare(std::vector<ParamDecl>& out) const override;
    int channels() const noexcept { return channels_; }

private:
    int channels_;
    float eps_;
    float momentum_;
};

class Linear final : public Module {
public:
    Linear(std::string name, int in_features, int out_features, bool bias = true);
    std::string_view kind() const override { return "linear"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;
    void declare(std::vector<ParamDecl>& out) const override;

private:
    int in_;
    int out_;
    bool bias_;
};

class ReLU final : public Module {
public:
    using Module::Module;
    std::string_view kind() const override { return "relu"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;
};

// Average pooling; padded positions are excluded from the divisor.
class AvgPool2d final : public Module {
public:
    AvgPool2d(std::string name, int kernel, int stride, int padding);
    std::string_view kind() const override { return "avgpool"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;

private:
    int kernel_, stride_, padding_;
};

class MaxPool2d final : public Module {
public:
    MaxPool2d(std::string name, int kernel, int stride, int padding);
    std::string_view kind() const override { return "maxpool"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;

private:
    int kernel_, stride_, padding_;
};

// (N, C, H, W) -> (N, C)
class GlobalAvgPool final : public Module {
public:
    using Module::Module;
    std::string_view kind() const override { return "global_pool"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;
};

class Identity final : public Module {
public:
    using Module::Module;
    std::string_view kind() const override { return "identity"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;
};

// Maps any input to zeros of the same shape.
class Zero final : public Module {
public:
    using Module::Module;
    std::string_view kind() const override { return "zero"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;
};

// Row-wise L2 normalization of (N, D) inputs.
class L2Normalize final : public Module {
public:
    using Module::Module;
    std::string_view kind() const override { return "l2norm"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;
};

class Sequential final : public Module {
public:
    Sequential(std::string name, std::vector<ModulePtr> children);
    std::string_view kind() const override { return "sequential"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;
    void declare(std::vector<ParamDecl>& out) const override;
    const std::vector<ModulePtr>& children() const noexcept { return children_; }

private:
    std::vector<ModulePtr> children_;
};

// y = body(x) + shortcut(x), optionally followed by ReLU. A null shortcut is
// the identity.
class Residual final : public Module {
public:
    Residual(std::string name, ModulePtr body, ModulePtr shortcut, bool relu_after);
    std::string_view kind() const override { return "residual"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;
    void declare(std::vector<ParamDecl>& out) const override;

private:
    ModulePtr body_;
    ModulePtr shortcut_;
    bool relu_after_;
};

// DAG cell: node 0 is the input; node j is the sum of edge(i->j)(node i) over
// i < j; the output is the last node. Edges are ordered by target node, then
// source: (0->1), (0->2), (1->2), (0->3), (1->3), (2->3), ...
// Edges of kind "zero" are skipped entirely.
class Cell final : public Module {
public:
    Cell(std::string name, int num_nodes, std::vector<ModulePtr> edges);
    std::string_view kind() const override { return "cell"; }
    Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const override;
    Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const override;
    void declare(std::vector<ParamDecl>& out) const override;

    static int edge_count(int num_nodes) { return num_nodes * (num_nodes - 1) / 2; }

private:
    int num_nodes_;
    std::vector<ModulePtr> edges_;
};

struct CrossEntropyResult {
    double loss;
    Tensor grad;  // d loss / d logits
    int correct;
};

// Mean softmax cross-entropy over rows of (N, K) logits.
CrossEntropyResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace pinas::nn
