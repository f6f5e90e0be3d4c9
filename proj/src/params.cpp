#include "pinas/params.hpp"

#include "pinas/error.hpp"
#include "pinas/rng.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pinas {

namespace {

constexpr char kMagic[8] = {'P', 'I', 'N', 'A', 'S', 'P', 'S', '1'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

template <typename T>
void write_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    template <typename T>
    T read(const char* what) {
        T v{};
        bytes(reinterpret_cast<char*>(&v), sizeof(T), what);
        return v;
    }

    void bytes(char* dst, std::size_t n, const char* what) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw IngestionError(std::string("parameter file truncated while reading ") + what + " at byte offset " +
                                 std::to_string(offset_ + static_cast<std::size_t>(in_.gcount())));
        offset_ += n;
    }

private:
    std::istream& in_;
    std::size_t offset_ = 0;
};

}  // namespace

void accumulate(GradStore& grads, const std::string& name, const Tensor& g) {
    auto it = grads.find(name);
    if (it == grads.end()) {
        grads.emplace(name, g);
        return;
    }
    if (it->second.shape() != g.shape())
        throw ConfigError("gradient shape mismatch for " + name + ": " + shape_str(it->second.shape()) + " vs " +
                          shape_str(g.shape()));
    float* dst = it->second.data();
    const float* src = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

void ParameterStore::add(const std::string& name, EntryKind kind, Tensor value) {
    if (frozen_) throw ContractError("write guard violation: cannot add '" + name + "' to a frozen store");
    if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({name, kind, std::move(value)});
}

const ParameterStore::Entry& ParameterStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return entries_[it->second];
}

const Tensor& ParameterStore::get(const std::string& name) const { return entry(name).value; }

Tensor& ParameterStore::mut(const std::string& name) {
    if (frozen_) throw ContractError("write guard violation: attempted write to frozen parameter '" + name + "'");
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return entries_[it->second].value;
}

std::size_t ParameterStore::param_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
        if (e.kind == EntryKind::param) n += e.value.size();
    return n;
}

ParameterStore ParameterStore::subset(const std::vector<std::string>& names) const {
    std::unordered_map<std::string, bool> wanted;
    for (const auto& n : names) {
        if (!contains(n)) throw ConfigError("unknown parameter '" + n + "'");
        wanted[n] = true;
    }
    ParameterStore out;
    for (const auto& e : entries_)
        if (wanted.count(e.name)) out.add(e.name, e.kind, e.value);
    return out;
}

bool ParameterStore::same_schema(const ParameterStore& other) const { return first_schema_difference(other).empty(); }

std::string ParameterStore::first_schema_difference(const ParameterStore& other) const {
    const std::size_t n = std::max(entries_.size(), other.entries_.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (i >= entries_.size()) return other.entries_[i].name;
        if (i >= other.entries_.size()) return entries_[i].name;
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.name != b.name || a.kind != b.kind || a.value.shape() != b.value.shape()) return a.name;
    }
    return {};
}

void ParameterStore::save(std::ostream& out) const {
    out.write(kMagic, sizeof(kMagic));
    write_raw(out, kFormatVersion);
    write_raw(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        write_raw(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_raw(out, kDtypeF32);
        write_raw(out, static_cast<std::uint8_t>(e.kind));
        write_raw(out, static_cast<std::uint32_t>(e.value.ndim()));
        for (int d : e.value.shape()) write_raw(out, static_cast<std::uint32_t>(d));
    }
    for (const auto& e : entries_)
        out.write(reinterpret_cast<const char*>(e.value.data()), static_cast<std::streamsize>(e.value.size() * 4));
    if (!out) throw IngestionError("failed writing parameter store");
}

ParameterStore ParameterStore::load(std::istream& in) {
    Reader r(in);
    char magic[8];
    r.bytes(magic, sizeof(magic), "magic");
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw IngestionError("not a parameter store (bad magic)");
    const auto version = r.read<std::uint32_t>("version");
    if (version != kFormatVersion)
        throw IngestionError("unsupported parameter store version " + std::to_string(version));
    const auto count = r.read<std::uint32_t>("entry count");

    struct Header {
        std::string name;
        EntryKind kind;
        Shape shape;
    };
    std::vector<Header> headers;
    headers.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Header h;
        const auto len = r.read<std::uint32_t>("name length");
        if (len > (1u << 16)) throw IngestionError("implausible parameter name length");
        h.name.resize(len);
        r.bytes(h.name.data(), len, "name");
        const auto dtype = r.read<std::uint8_t>("dtype");
        if (dtype != kDtypeF32) throw IngestionError("unsupported dtype tag for '" + h.name + "'");
        const auto kind = r.read<std::uint8_t>("kind");
        if (kind > 1) throw IngestionError("bad entry kind for '" + h.name + "'");
        h.kind = static_cast<EntryKind>(kind);
        const auto ndim = r.read<std::uint32_t>("ndim");
        if (ndim > 8) throw IngestionError("implausible rank for '" + h.name + "'");
        for (std::uint32_t d = 0; d < ndim; ++d) h.shape.push_back(static_cast<int>(r.read<std::uint32_t>("dim")));
        headers.push_back(std::move(h));
    }
    ParameterStore store;
    for (auto& h : headers) {
        Tensor t(h.shape);
        r.bytes(reinterpret_cast<char*>(t.data()), t.size() * 4, h.name.c_str());
        store.add(h.name, h.kind, std::move(t));
    }
    return store;
}

std::string ParameterStore::serialize() const {
    std::ostringstream os(std::ios::binary);
    save(os);
    return os.str();
}

ParameterStore ParameterStore::deserialize(const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    return load(is);
}

void ParameterStore::save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot open " + path + " for writing");
    save(out);
}

ParameterStore ParameterStore::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open " + path);
    return load(in);
}

std::uint64_t ParameterStore::checksum() const { return fnv1a64(serialize()); }

bool ParameterStore::operator==(const ParameterStore& other) const {
    if (!same_schema(other)) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (std::memcmp(entries_[i].value.data(), other.entries_[i].value.data(), entries_[i].value.size() * 4) != 0)
            return false;
    return true;
}

}  // namespace pinas
