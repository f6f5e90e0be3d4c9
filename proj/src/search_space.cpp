#include "pinas/search_space.hpp"

#include "pinas/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace pinas::space {

namespace {

BlockOption parse_option(const std::string& label, int in_width, int out_width) {
    BlockOption o;
    o.label = label;
    o.hidden = out_width;
    if (label == "k1") {
        o.kernel = 1;
        // Match the k3d1 block: 9*in*out + out*out conv weights + 2*(out + out) BN.
        const double ref = 9.0 * in_width * out_width + static_cast<double>(out_width) * out_width + 4.0 * out_width;
        o.hidden = std::max(1, static_cast<int>(std::lround((ref - 2.0 * out_width) / (in_width + out_width + 2.0))));
        return o;
    }
    int k = 0, d = 0, g = 1;
    char tail = 0;
    const int got = std::sscanf(label.c_str(), "k%dd%dg%d%c", &k, &d, &g, &tail);
    if (got < 2 || got > 3 || k <= 0 || d <= 0 || g <= 0)
        throw ConfigError("unknown block option '" + label + "' (expected k1, k<K>d<D> or k<K>d<D>g<G>)");
    if (in_width % g || out_width % g) throw ConfigError("block option '" + label + "': widths not divisible by groups");
    o.kernel = k;
    o.dilation = d;
    o.groups = g;
    return o;
}

}  // namespace

ChainSpace make_chain_space(int in_channels, int stem_width, int num_layers, const std::vector<std::string>& options,
                            const std::vector<int>& reduce_at, bool downsample_shared) {
    if (num_layers <= 0) throw ConfigError("chain space needs at least one layer");
    if (options.empty()) throw ConfigError("chain space needs at least one option per layer");
    ChainSpace s;
    s.in_channels = in_channels;
    s.stem_width = stem_width;
    s.downsample_shared = downsample_shared;
    int width = stem_width;
    for (int l = 0; l < num_layers; ++l) {
        ChainLayer layer;
        layer.in_width = width;
        const bool reduce = std::find(reduce_at.begin(), reduce_at.end(), l) != reduce_at.end();
        layer.stride = reduce ? 2 : 1;
        layer.out_width = reduce ? width * 2 : width;
        for (const auto& label : options) layer.options.push_back(parse_option(label, layer.in_width, layer.out_width));
        width = layer.out_width;
        s.layers.push_back(std::move(layer));
    }
    return s;
}

std::size_t option_param_count(const ChainLayer& layer, const BlockOption& o) {
    const std::size_t conv_a = static_cast<std::size_t>(layer.in_width / o.groups) * o.hidden * o.kernel * o.kernel;
    const std::size_t conv_b = static_cast<std::size_t>(o.hidden) * layer.out_width;
    return conv_a + 2 * o.hidden + conv_b + 2 * layer.out_width;
}

std::string_view cell_op_name(CellOp op) {
    switch (op) {
        case CellOp::zero: return "none";
        case CellOp::skip: return "skip_connect";
        case CellOp::conv1x1: return "nor_conv_1x1";
        case CellOp::conv3x3: return "nor_conv_3x3";
        case CellOp::avgpool3x3: return "avg_pool_3x3";
    }
    return "?";
}

CellOp parse_cell_op(std::string_view name) {
    for (auto op : {CellOp::zero, CellOp::skip, CellOp::conv1x1, CellOp::conv3x3, CellOp::avgpool3x3})
        if (cell_op_name(op) == name) return op;
    if (name == "zero") return CellOp::zero;
    if (name == "skip") return CellOp::skip;
    throw ConfigError("unknown cell operation '" + std::string(name) + "'");
}

int SearchSpace::num_sites() const {
    return is_chain() ? static_cast<int>(chain().layers.size()) : cell().num_edges();
}

std::vector<int> SearchSpace::option_counts() const {
    std::vector<int> counts;
    if (is_chain()) {
        for (const auto& l : chain().layers) counts.push_back(static_cast<int>(l.options.size()));
    } else {
        counts.assign(cell().num_edges(), static_cast<int>(cell().op_set.size()));
    }
    return counts;
}

std::uint64_t SearchSpace::size() const {
    std::uint64_t n = 1;
    for (int c : option_counts()) {
        if (n > std::numeric_limits<std::uint64_t>::max() / static_cast<std::uint64_t>(c))
            return std::numeric_limits<std::uint64_t>::max();
        n *= static_cast<std::uint64_t>(c);
    }
    return n;
}

std::string SearchSpace::describe() const {
    std::ostringstream os;
    if (is_chain()) {
        const auto& c = chain();
        os << "chain in=" << c.in_channels << " stem=" << c.stem_width << " ds=" << c.downsample_shared;
        for (std::size_t l = 0; l < c.layers.size(); ++l) {
            const auto& L = c.layers[l];
            os << " | L" << l << " " << L.in_width << "->" << L.out_width << " s" << L.stride << " [";
            for (std::size_t k = 0; k < L.options.size(); ++k) os << (k ? "," : "") << L.options[k].label;
            os << "]";
        }
    } else {
        const auto& c = cell();
        os << "cell in=" << c.in_channels << " stem=" << c.stem_width << " nodes=" << c.num_nodes
           << " stages=" << c.stages << " cells_per_stage=" << c.cells_per_stage << " ops=[";
        for (std::size_t k = 0; k < c.op_set.size(); ++k) os << (k ? "," : "") << cell_op_name(c.op_set[k]);
        os << "]";
    }
    return os.str();
}

void validate(const SearchSpace& space, const ArchEncoding& arch) {
    if (!arch.space_id.empty() && arch.space_id != space.id())
        throw ContractError("architecture belongs to space '" + arch.space_id + "', not '" + space.id() + "'");
    const auto counts = space.option_counts();
    if (arch.choices.size() != counts.size())
        throw ContractError("architecture has " + std::to_string(arch.choices.size()) + " sites, space has " +
                            std::to_string(counts.size()));
    for (std::size_t i = 0; i < counts.size(); ++i)
        if (arch.choices[i] < 0 || arch.choices[i] >= counts[i])
            throw ContractError("invalid choice " + std::to_string(arch.choices[i]) + " at site " + std::to_string(i) +
                                " (site has " + std::to_string(counts[i]) + " options)");
}

std::uint64_t arch_id(const SearchSpace& space, const ArchEncoding& arch) {
    validate(space, arch);
    const auto counts = space.option_counts();
    std::uint64_t id = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) id = id * counts[i] + static_cast<std::uint64_t>(arch.choices[i]);
    return id;
}

ArchEncoding arch_from_id(const SearchSpace& space, std::uint64_t id) {
    if (id >= space.size()) throw ContractError("architecture id " + std::to_string(id) + " out of range");
    const auto counts = space.option_counts();
    ArchEncoding a{std::vector<int>(counts.size()), space.id()};
    for (std::size_t i = counts.size(); i-- > 0;) {
        a.choices[i] = static_cast<int>(id % counts[i]);
        id /= counts[i];
    }
    return a;
}

std::string to_string(const SearchSpace& space, const ArchEncoding& arch) {
    validate(space, arch);
    std::ostringstream os;
    if (space.is_chain()) {
        for (std::size_t i = 0; i < arch.choices.size(); ++i) os << (i ? "-" : "") << arch.choices[i];
        return os.str();
    }
    const auto& c = space.cell();
    int e = 0;
    for (int j = 1; j < c.num_nodes; ++j) {
        if (j > 1) os << '+';
        os << '|';
        for (int i = 0; i < j; ++i, ++e) os << cell_op_name(c.op_set[arch.choices[e]]) << '~' << i << '|';
    }
    return os.str();
}

ArchEncoding parse_arch(const SearchSpace& space, std::string_view text) {
    ArchEncoding a;
    a.space_id = space.id();
    if (space.is_chain()) {
        std::string s(text);
        std::stringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, '-')) {
            if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
                throw ConfigError("malformed chain architecture '" + s + "'");
            a.choices.push_back(std::stoi(tok));
        }
    } else {
        const auto& c = space.cell();
        std::string s(text);
        std::vector<std::string> groups;
        std::stringstream ss(s);
        std::string g;
        while (std::getline(ss, g, '+')) groups.push_back(g);
        if (static_cast<int>(groups.size()) != c.num_nodes - 1)
            throw ConfigError("cell architecture '" + s + "' must have " + std::to_string(c.num_nodes - 1) + " nodes");
        for (int j = 1; j < c.num_nodes; ++j) {
            const std::string& grp = groups[j - 1];
            if (grp.size() < 2 || grp.front() != '|' || grp.back() != '|')
                throw ConfigError("malformed node group '" + grp + "'");
            std::stringstream gs(grp.substr(1, grp.size() - 2));
            std::string item;
            int i = 0;
            while (std::getline(gs, item, '|')) {
                const auto tilde = item.find('~');
                if (tilde == std::string::npos) throw ConfigError("malformed edge '" + item + "'");
                const int src = std::stoi(item.substr(tilde + 1));
                if (src != i) throw ConfigError("edge '" + item + "' out of order (expected source " + std::to_string(i) + ")");
                const CellOp op = parse_cell_op(item.substr(0, tilde));
                const auto it = std::find(c.op_set.begin(), c.op_set.end(), op);
                if (it == c.op_set.end())
                    throw ConfigError("operation '" + std::string(cell_op_name(op)) + "' not in this space");
                a.choices.push_back(static_cast<int>(it - c.op_set.begin()));
                ++i;
            }
            if (i != j) throw ConfigError("node " + std::to_string(j) + " needs " + std::to_string(j) + " edges");
        }
    }
    try {
        validate(space, a);
    } catch (const ContractError& e) {
        throw ConfigError(std::string("invalid architecture string: ") + e.what());
    }
    return a;
}

ArchFilter exclude_cell_ops(const SearchSpace& space, const std::vector<CellOp>& ops) {
    if (space.is_chain()) throw ConfigError("operation filters apply to cell spaces only");
    std::vector<int> banned;
    const auto& set = space.cell().op_set;
    for (auto op : ops) {
        auto it = std::find(set.begin(), set.end(), op);
        if (it != set.end()) banned.push_back(static_cast<int>(it - set.begin()));
    }
    return [banned](const ArchEncoding& a) {
        return std::none_of(a.choices.begin(), a.choices.end(), [&](int c) {
            return std::find(banned.begin(), banned.end(), c) != banned.end();
        });
    };
}

std::vector<ArchEncoding> enumerate(const SearchSpace& space, const ArchFilter& filter, std::uint64_t cap) {
    const std::uint64_t n = space.size();
    if (n > cap)
        throw ConfigError("search space has " + (n == std::numeric_limits<std::uint64_t>::max() ? std::string("too many")
                                                                                            : std::to_string(n)) +
                          " architectures, above the enumeration cap of " + std::to_string(cap) +
                          "; use sampling (sample_uniform / evolutionary search) instead");
    std::vector<ArchEncoding> out;
    const auto counts = space.option_counts();
    ArchEncoding a{std::vector<int>(counts.size(), 0), space.id()};
    for (std::uint64_t id = 0; id < n; ++id) {
        if (!filter || filter(a)) out.push_back(a);
        for (std::size_t i = counts.size(); i-- > 0;) {
            if (++a.choices[i] < counts[i]) break;
            a.choices[i] = 0;
        }
    }
    return out;
}

ArchEncoding sample_uniform(const SearchSpace& space, Rng& rng) {
    const auto counts = space.option_counts();
    ArchEncoding a{std::vector<int>(counts.size()), space.id()};
    for (std::size_t i = 0; i < counts.size(); ++i) a.choices[i] = static_cast<int>(rng.below(counts[i]));
    return a;
}

ArchEncoding mutate(const SearchSpace& space, const ArchEncoding& arch, Rng& rng, int k) {
    validate(space, arch);
    const auto counts = space.option_counts();
    if (k < 0 || k > static_cast<int>(counts.size()))
        throw ContractError("mutate: k=" + std::to_string(k) + " outside [0, " + std::to_string(counts.size()) + "]");
    if (k == 0) return arch;
    std::vector<int> mutable_sites;
    for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] > 1) mutable_sites.push_back(static_cast<int>(i));
    if (static_cast<int>(mutable_sites.size()) < k)
        throw ContractError("mutate: only " + std::to_string(mutable_sites.size()) +
                            " sites have more than one option, cannot change " + std::to_string(k));
    // Partial Fisher-Yates picks k distinct sites.
    for (int i = 0; i < k; ++i) std::swap(mutable_sites[i], mutable_sites[i + rng.below(mutable_sites.size() - i)]);
    ArchEncoding out = arch;
    for (int i = 0; i < k; ++i) {
        const int site = mutable_sites[i];
        const int shift = 1 + static_cast<int>(rng.below(counts[site] - 1));
        out.choices[site] = (arch.choices[site] + shift) % counts[site];
    }
    return out;
}

}  // namespace pinas::space
