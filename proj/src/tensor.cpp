#include "planesam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "planesam/errors.hpp"

namespace planesam {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("tensor data size does not match shape " + shape_string());
    }
}

int Tensor::dim(int i) const {
    if (i < 0) i += rank();
    if (i < 0 || i >= rank()) throw ShapeError("dimension index out of range for " + shape_string());
    return shape_[static_cast<std::size_t>(i)];
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
}

void Tensor::reshape(std::vector<int> shape) {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_string() + " to a different element count");
    }
    shape_ = std::move(shape);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
    if (t.shape() != shape) {
        Tensor expect(shape);
        throw ShapeError(std::string(what) + ": expected " + expect.shape_string() + ", got " +
                         t.shape_string());
    }
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    float m = 0.0f;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace planesam
