#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xseg {

struct GradCheckReport {
    std::string op_name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct GradCheckOptions {
    double tolerance = 1e-4;
    double step = 1e-5;
    // Negative-control hook: skews the analytic gradients so the checker
    // must report failure.
    bool corrupt_backward = false;
};

// Checkable op names: conv2d, conv_transpose2d, maxpool2d, batchnorm2d,
// relu, sigmoid, concat, smooth_dice_loss_paper, smooth_dice_loss_standard.
std::vector<std::string> grad_check_op_names();

// Compares tape gradients of a scalar projection of the op output against
// central finite differences on seeded random inputs. relu is probed away
// from the kink, maxpool away from in-block ties. Relative error uses
// max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckReport grad_check(const std::string& op_name, std::uint64_t seed,
                           const GradCheckOptions& options = {});

std::vector<GradCheckReport> grad_check_all(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace xseg
