#pragma once

#include "pinas/rng.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pinas::space {

// ---- chain space: a stack of decision sites, each choosing one residual
// block among cost-matched options.
struct BlockOption {
    int kernel = 3;
    int dilation = 1;
    int groups = 1;
    int hidden = 0;  // width of the block's inner layer
    std::string label;
};

struct ChainLayer {
    int in_width = 0;
    int out_width = 0;
    int stride = 1;
    std::vector<BlockOption> options;

    bool reduces() const { return stride != 1 || in_width != out_width; }
};

struct ChainSpace {
    int in_channels = 2;
    int stem_width = 8;
    std::vector<ChainLayer> layers;
    // One reduction shortcut per reducing layer, shared by every option.
    bool downsample_shared = true;
};

// Option labels: "k<K>d<D>" (e.g. k3d1, k3d2) or "k1" (pointwise block whose
// inner width is solved to match the k3d1 parameter count). Reductions (stride
// 2, width x2) happen at the listed layer indices.
ChainSpace make_chain_space(int in_channels, int stem_width, int num_layers, const std::vector<std::string>& options,
                            const std::vector<int>& reduce_at, bool downsample_shared);

// Trainable scalar parameters of one block option (excluding any reduction
// shortcut).
std::size_t option_param_count(const ChainLayer& layer, const BlockOption& option);

// ---- cell space (NAS-Bench-201 style DAG).
enum class CellOp : std::uint8_t { zero, skip, conv1x1, conv3x3, avgpool3x3 };

// Benchmark notation: none, skip_connect, nor_conv_1x1, nor_conv_3x3, avg_pool_3x3.
std::string_view cell_op_name(CellOp op);
CellOp parse_cell_op(std::string_view name);

struct CellSpace {
    int in_channels = 2;
    int stem_width = 8;
    int num_nodes = 4;
    std::vector<CellOp> op_set = {CellOp::zero, CellOp::skip, CellOp::conv1x1, CellOp::conv3x3, CellOp::avgpool3x3};
    int stages = 2;
    int cells_per_stage = 1;

    int num_edges() const { return num_nodes * (num_nodes - 1) / 2; }
};

class SearchSpace {
public:
    SearchSpace() = default;
    SearchSpace(ChainSpace c) : def_(std::move(c)) {}
    SearchSpace(CellSpace c) : def_(std::move(c)) {}

    bool is_chain() const { return std::holds_alternative<ChainSpace>(def_); }
    const ChainSpace& chain() const { return std::get<ChainSpace>(def_); }
    const CellSpace& cell() const { return std::get<CellSpace>(def_); }
    ChainSpace& chain() { return std::get<ChainSpace>(def_); }

    // "chain" or "cell"
    std::string id() const { return is_chain() ? "chain" : "cell"; }
    int num_sites() const;
    std::vector<int> option_counts() const;
    // Number of architectures, saturating at UINT64_MAX.
    std::uint64_t size() const;
    // Human-readable description stored with checkpoints.
    std::string describe() const;

private:
    std::variant<ChainSpace, CellSpace> def_ = ChainSpace{};
};

struct ArchEncoding {
    std::vector<int> choices;
    std::string space_id;

    bool operator==(const ArchEncoding&) const = default;
};

// Throws ContractError naming the first invalid site.
void validate(const SearchSpace& space, const ArchEncoding& arch);

// Mixed-radix integer of the choice vector; the first site is most significant.
std::uint64_t arch_id(const SearchSpace& space, const ArchEncoding& arch);
ArchEncoding arch_from_id(const SearchSpace& space, std::uint64_t id);

// Chain: "1-3-0-2". Cell: "|nor_conv_3x3~0|+|skip_connect~0|none~1|+|...|".
std::string to_string(const SearchSpace& space, const ArchEncoding& arch);
ArchEncoding parse_arch(const SearchSpace& space, std::string_view text);

using ArchFilter = std::function<bool(const ArchEncoding&)>;

// Cell spaces: keep only architectures containing none of `ops`.
ArchFilter exclude_cell_ops(const SearchSpace& space, const std::vector<CellOp>& ops);

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

// Every (filtered) architecture exactly once, in lexicographic order.
std::vector<ArchEncoding> enumerate(const SearchSpace& space, const ArchFilter& filter = {},
                                    std::uint64_t cap = kDefaultEnumerationCap);

ArchEncoding sample_uniform(const SearchSpace& space, Rng& rng);

// Changes exactly k distinct sites, each to a different valid option.
ArchEncoding mutate(const SearchSpace& space, const ArchEncoding& arch, Rng& rng, int k = 1);

}  // namespace pinas::space
