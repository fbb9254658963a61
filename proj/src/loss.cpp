#include "xseg/loss.hpp"

#include "xseg/error.hpp"

namespace xseg {

DiceSums dice_sums(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw ConfigError("dice loss shape mismatch: pred " + shape_to_string(pred.shape) +
                          " vs target " + shape_to_string(target.shape));
    DiceSums s;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        s.sum_pt += pred.data[i] * target.data[i];
        s.sum_p += pred.data[i];
        s.sum_t += target.data[i];
    }
    return s;
}

double smooth_dice_loss_value(const DiceSums& s, const DiceConfig& cfg) {
    if (cfg.lambda <= 0.0) throw ConfigError("dice smoothing factor must be positive");
    const double denom = s.sum_p + s.sum_t + cfg.lambda;
    const double numer = cfg.form == DiceConfig::Form::PaperEq1 ? 2.0 * (s.sum_pt + cfg.lambda)
                                                                : 2.0 * s.sum_pt + cfg.lambda;
    return 1.0 - numer / denom;
}

double smooth_dice_loss(const Tensor& pred, const Tensor& target, const DiceConfig& cfg) {
    return smooth_dice_loss_value(dice_sums(pred, target), cfg);
}

void smooth_dice_loss_backward(const Tensor& pred, const Tensor& target, const DiceConfig& cfg,
                               double upstream, std::vector<double>& grad_pred) {
    const DiceSums s = dice_sums(pred, target);
    const double denom = s.sum_p + s.sum_t + cfg.lambda;
    const double numer = cfg.form == DiceConfig::Form::PaperEq1 ? 2.0 * (s.sum_pt + cfg.lambda)
                                                                : 2.0 * s.sum_pt + cfg.lambda;
    // loss = 1 - numer/denom; d(numer)/dp_i = 2*t_i; d(denom)/dp_i = 1
    const double inv_d2 = 1.0 / (denom * denom);
    for (std::size_t i = 0; i < pred.data.size(); ++i)
        grad_pred[i] += upstream * (-(2.0 * target.data[i] * denom - numer) * inv_d2);
}

}  // namespace xseg
