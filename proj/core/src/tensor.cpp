#include "dsam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsam/error.hpp"

namespace dsam {

std::size_t shape_numel(const Tensor::Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) fail(Errc::BadShape, "negative dimension in " + dsam::shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Tensor::Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, const std::vector<double>& values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    if (data_.size() != shape_numel(shape_))
        fail(Errc::BadShape, "value count " + std::to_string(data_.size()) + " does not match " + shape_str());
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
        fail(Errc::BadShape, "cannot reshape " + shape_str() + " to " + dsam::shape_str(shape));
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
}

std::string Tensor::shape_str() const { return dsam::shape_str(shape_); }

double Tensor::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::mean() const noexcept { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

double Tensor::min() const noexcept { return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end()); }

double Tensor::max() const noexcept { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) fail(Errc::BadShape, "max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace dsam
