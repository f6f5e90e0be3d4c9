#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pinas {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 array. Value type; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    const Shape& shape() const noexcept { return shape_; }
    int dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t ndim() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    std::vector<float>& storage() noexcept { return data_; }
    const std::vector<float>& storage() const noexcept { return data_; }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    // Row-major element access for 2-D and 4-D tensors.
    float& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    float at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    float& at(int n, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    float at(int n, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    Tensor reshaped(Shape shape) const;
    void fill(float v);
    bool all_finite() const noexcept;

    // Rows [begin, end) along the first axis.
    Tensor slice_rows(int begin, int end) const;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

// Concatenate tensors along the first axis; trailing dims must agree.
Tensor concat_rows(std::span<const Tensor> parts);

}  // namespace pinas
