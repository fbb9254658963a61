#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xseg {

// Dense n-dimensional array of doubles, row-major. Image batches follow the
// N x C x H x W layout convention. grad is empty unless a backward pass (or a
// caller) allocated it; when present it has exactly data.size() elements.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    Tensor(std::vector<int> s, double fill);
    Tensor(std::vector<int> s, std::vector<double> values);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s), 0.0); }
    static Tensor full(std::vector<int> s, double v) { return Tensor(std::move(s), v); }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::size_t numel() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    // 4-d accessors for N x C x H x W tensors.
    double& at(int n, int c, int h, int w);
    double at(int n, int c, int h, int w) const;

    void ensure_grad();        // allocate zero grad if absent
    void zero_grad();          // allocate if needed, then clear
    void clear_grad() { grad.clear(); }
    bool has_grad() const { return !grad.empty(); }

    bool all_finite() const;
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

}  // namespace xseg
