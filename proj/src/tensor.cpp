#include "pinas/tensor.hpp"

#include "pinas/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pinas {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ConfigError("negative dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_numel(shape_) != data_.size())
        throw ConfigError("tensor shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                          " values");
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
        throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor Tensor::slice_rows(int begin, int end) const {
    if (shape_.empty() || begin < 0 || end > shape_[0] || begin > end)
        throw ContractError("slice_rows out of range for " + shape_str(shape_));
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
    return Tensor(std::move(s), std::vector<float>(data_.begin() + begin * row, data_.begin() + end * row));
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) return {};
    Shape s = parts.front().shape();
    int rows = 0;
    for (const auto& p : parts) {
        if (p.ndim() != s.size() || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1))
            throw ConfigError("concat_rows: incompatible shapes " + shape_str(s) + " and " + shape_str(p.shape()));
        rows += p.dim(0);
    }
    s[0] = rows;
    std::vector<float> v;
    v.reserve(shape_numel(s));
    for (const auto& p : parts) v.insert(v.end(), p.storage().begin(), p.storage().end());
    return Tensor(std::move(s), std::move(v));
}

}  // namespace pinas
