#pragma once

#include <vector>

#include "xseg/unet.hpp"

namespace xseg {

struct OptimizerConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double plateau_factor = 0.5;
    int plateau_patience = 5;
    double min_lr = 1e-6;

    void validate() const;
};

// ADAM with bias correction. One shared step counter; m/v buffers per
// parameter. step() consumes grads left in the bound tensors and rejects
// parameters that have none.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<ParamRef> params, const OptimizerConfig& config);

    void step();
    void zero_grads();

    void set_learning_rate(double lr) { lr_ = lr; }
    double learning_rate() const { return lr_; }
    long long step_count() const { return t_; }

    // raw first/second moments, exposed for tests
    const std::vector<double>& first_moment(std::size_t i) const { return moments_[i].m; }
    const std::vector<double>& second_moment(std::size_t i) const { return moments_[i].v; }

private:
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<ParamRef> params_;
    std::vector<Slot> moments_;
    OptimizerConfig config_;
    double lr_;
    long long t_ = 0;
};

}  // namespace xseg
