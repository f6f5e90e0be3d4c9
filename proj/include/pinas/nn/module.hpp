#pragma once

#include "pinas/params.hpp"
#include "pinas/rng.hpp"
#include "pinas/tensor.hpp"

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace pinas::nn {

enum class BnMode {
    tracked,      // normalize with running buffers (updated when training)
    batch_stats,  // normalize with the current batch; buffers never touched
};

// Accumulates per-batch BN moments during a calibration pass. Only consulted
// in batch_stats mode, so recording never writes parameter buffers.
class MomentRecorder {
public:
    struct Sums {
        std::vector<double> mean_sum;
        std::vector<double> var_sum;
        int batches = 0;
    };

    void record(const std::string& bn_name, const std::vector<double>& mean, const std::vector<double>& var);
    const std::map<std::string, Sums>& sums() const noexcept { return sums_; }

private:
    std::map<std::string, Sums> sums_;
};

struct ForwardContext {
    BnMode bn_mode = BnMode::batch_stats;
    bool train = false;
    MomentRecorder* recorder = nullptr;
};

// Saved activations for backward. Modules push one frame per forward call and
// pop in exact reverse order during backward.
class Tape {
public:
    struct Frame {
        std::vector<Tensor> tensors;
        Shape shape;
    };

    void push(Frame frame) { frames_.push_back(std::move(frame)); }
    Frame pop(std::string_view who);
    std::size_t depth() const noexcept { return frames_.size(); }

private:
    std::vector<Frame> frames_;
};

enum class Init { fan_in_uniform, ones, zeros };

struct ParamDecl {
    std::string name;
    EntryKind kind;
    Shape shape;
    Init init;
    int fan_in = 1;
};

class Module {
public:
    explicit Module(std::string name) : name_(std::move(name)) {}
    virtual ~Module() = default;

    const std::string& name() const noexcept { return name_; }
    virtual std::string_view kind() const = 0;

    // Pass tape=nullptr for inference-only forwards.
    virtual Tensor forward(ParameterStore& ps, const Tensor& x, const ForwardContext& ctx, Tape* tape) const = 0;
    virtual Tensor backward(const ParameterStore& ps, Tape& tape, const Tensor& dy, GradStore& grads) const = 0;
    virtual void declare(std::vector<ParamDecl>& out) const { (void)out; }

private:
    std::string name_;
};

using ModulePtr = std::shared_ptr<const Module>;

// Declarations reachable from `m`, deduplicated by name in first-seen order.
std::vector<ParamDecl> collect_decls(const Module& m);
std::vector<std::string> param_names(const Module& m);
// Adds every declared entry that is not yet present, drawing from `rng` in
// declaration order.
void init_params(const Module& m, ParameterStore& ps, Rng& rng);

}  // namespace pinas::nn
