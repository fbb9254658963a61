#include "xseg/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "xseg/error.hpp"

namespace xseg {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ConfigError("tensor shape has non-positive extent " + shape_to_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape))
        throw ConfigError("tensor value count " + std::to_string(data.size()) + " does not match shape " +
                          shape_to_string(shape));
}

double& Tensor::at(int n, int c, int h, int w) {
    const int C = shape[1], H = shape[2], W = shape[3];
    return data[static_cast<std::size_t>(((n * C + c) * H + h) * W + w)];
}

double Tensor::at(int n, int c, int h, int w) const {
    const int C = shape[1], H = shape[2], W = shape[3];
    return data[static_cast<std::size_t>(((n * C + c) * H + h) * W + w)];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace xseg
