#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace planesam {

// Dense row-major float32 tensor. Owns its storage; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, float fill = 0.0f);
    Tensor(std::vector<int> shape, std::vector<float> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const std::vector<int>& shape() const noexcept { return shape_; }
    int dim(int i) const;
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> span() noexcept { return data_; }
    std::span<const float> span() const noexcept { return data_; }
    std::vector<float>& storage() noexcept { return data_; }
    const std::vector<float>& storage() const noexcept { return data_; }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    // Same storage, new shape; numel must match.
    Tensor reshaped(std::vector<int> shape) const;
    void reshape(std::vector<int> shape);

    void fill(float v);
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    bool all_finite() const noexcept;

    std::string shape_string() const;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

std::size_t shape_numel(const std::vector<int>& shape);

// Throws ShapeError with `what` as context when shapes differ.
void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what);

float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace planesam
