#include "xseg/adam.hpp"

#include <cmath>

#include "xseg/error.hpp"

namespace xseg {

void OptimizerConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("adam betas must lie in [0, 1)");
    if (epsilon <= 0.0) throw ConfigError("adam epsilon must be positive");
    if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
        throw ConfigError("plateau_factor must lie in (0, 1)");
    if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
    if (min_lr <= 0.0 || min_lr > learning_rate)
        throw ConfigError("min_lr must be positive and not exceed learning_rate");
}

AdamOptimizer::AdamOptimizer(std::vector<ParamRef> params, const OptimizerConfig& config)
    : params_(std::move(params)), config_(config), lr_(config.learning_rate) {
    config_.validate();
    moments_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        moments_[i].m.assign(params_[i].tensor->numel(), 0.0);
        moments_[i].v.assign(params_[i].tensor->numel(), 0.0);
    }
}

void AdamOptimizer::step() {
    for (const ParamRef& p : params_)
        if (!p.tensor->has_grad())
            throw ConfigError("adam step: parameter '" + p.name + "' has no gradient");

    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i].tensor;
        Slot& s = moments_[i];
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const double g = p.grad[j];
            s.m[j] = config_.beta1 * s.m[j] + (1.0 - config_.beta1) * g;
            s.v[j] = config_.beta2 * s.v[j] + (1.0 - config_.beta2) * g * g;
            const double m_hat = s.m[j] / bc1;
            const double v_hat = s.v[j] / bc2;
            p.data[j] -= lr_ * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
    }
}

void AdamOptimizer::zero_grads() {
    for (const ParamRef& p : params_) p.tensor->zero_grad();
}

}  // namespace xseg
