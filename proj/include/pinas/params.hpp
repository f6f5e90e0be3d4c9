#pragma once

#include "pinas/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace pinas {

enum class EntryKind : std::uint8_t { param = 0, buffer = 1 };

// Gradients keyed by parameter name. Parameters not reached by a backward
// pass have no entry.
using GradStore = std::map<std::string, Tensor>;

void accumulate(GradStore& grads, const std::string& name, const Tensor& g);

// Named, ordered collection of tensors: trainable weights and non-trainable
// buffers (BN running statistics). Insertion order is the serialization order.
class ParameterStore {
public:
    struct Entry {
        std::string name;
        EntryKind kind;
        Tensor value;
    };

    void add(const std::string& name, EntryKind kind, Tensor value);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    const Entry& entry(const std::string& name) const;
    // Mutable access. Throws ContractError while the store is frozen.
    Tensor& mut(const std::string& name);

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    // Number of scalar trainable parameters.
    std::size_t param_count() const;

    void freeze() noexcept { frozen_ = true; }
    void unfreeze() noexcept { frozen_ = false; }
    bool frozen() const noexcept { return frozen_; }

    // Copy of the named entries, in this store's order.
    ParameterStore subset(const std::vector<std::string>& names) const;
    // Same names, kinds, shapes and order.
    bool same_schema(const ParameterStore& other) const;
    // Name of the first entry where schemas diverge, empty when identical.
    std::string first_schema_difference(const ParameterStore& other) const;

    void save(std::ostream& out) const;
    static ParameterStore load(std::istream& in);
    std::string serialize() const;
    static ParameterStore deserialize(const std::string& bytes);
    void save_file(const std::string& path) const;
    static ParameterStore load_file(const std::string& path);

    // FNV-1a over the serialized bytes.
    std::uint64_t checksum() const;

    bool operator==(const ParameterStore& other) const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    bool frozen_ = false;
};

// RAII write guard: freezes a store for the lifetime of the guard.
class FreezeGuard {
public:
    explicit FreezeGuard(ParameterStore& store) : store_(store), was_frozen_(store.frozen()) { store_.freeze(); }
    ~FreezeGuard() {
        if (!was_frozen_) store_.unfreeze();
    }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    ParameterStore& store_;
    bool was_frozen_;
};

}  // namespace pinas
