#pragma once

#include "xseg/tensor.hpp"

namespace xseg {

// Smoothed Dice overlap loss. The "paper_eq1" form multiplies the whole
// smoothed fraction by 2: 1 - 2*(sum(p*t)+lambda)/(sum(p)+sum(t)+lambda).
// The "standard" form smooths numerator and denominator symmetrically:
// 1 - (2*sum(p*t)+lambda)/(sum(p)+sum(t)+lambda). They differ at the
// extremes: perfect match gives -1/9 (4 px, lambda 1) vs ~0, both-empty
// gives -1 vs 0.
struct DiceConfig {
    enum class Form { PaperEq1, Standard };
    double lambda = 1.0;
    Form form = Form::PaperEq1;
};

struct DiceSums {
    double sum_pt = 0.0;
    double sum_p = 0.0;
    double sum_t = 0.0;
};

DiceSums dice_sums(const Tensor& pred, const Tensor& target);
double smooth_dice_loss_value(const DiceSums& s, const DiceConfig& cfg);
double smooth_dice_loss(const Tensor& pred, const Tensor& target, const DiceConfig& cfg);

// d(loss)/d(pred_i), accumulated into grad_pred (pre-sized).
void smooth_dice_loss_backward(const Tensor& pred, const Tensor& target, const DiceConfig& cfg,
                               double upstream, std::vector<double>& grad_pred);

}  // namespace xseg
