#pragma once

#include <vector>

#include "xseg/tensor.hpp"

namespace xseg::kernels {

// Two implementations of every kernel: a plain serial reference and an
// OpenMP-parallel version. Both use the same per-element accumulation order,
// so outputs are bit-identical regardless of mode or thread count (each
// output element is computed by exactly one thread, no cross-thread
// reductions). Tests compare the two; the dispatchers below pick by mode().
//
// Backward kernels accumulate (+=) into caller-provided, pre-sized buffers.

enum class Mode { Serial, Parallel };

void set_mode(Mode m);
Mode mode();

// Applies XSEG_THREADS (if set and > 0) as the OpenMP thread cap.
void configure_threads_from_env();
int thread_count();

#define XSEG_DECLARE_KERNELS                                                                        \
    /* conv2d: square odd kernel k x k, stride 1, padding k/2 (same-size output) */                 \
    void conv2d_forward(const Tensor& in, const Tensor& kernel, const Tensor& bias, Tensor& out);   \
    void conv2d_backward_input(const Tensor& grad_out, const Tensor& kernel, Tensor& grad_in);      \
    void conv2d_backward_kernel(const Tensor& grad_out, const Tensor& in, Tensor& grad_kernel);     \
    void conv2d_backward_bias(const Tensor& grad_out, Tensor& grad_bias);                           \
    /* transposed conv: kernel Cin x Cout x 2 x 2, stride 2, no padding */                          \
    void convt2d_forward(const Tensor& in, const Tensor& kernel, Tensor& out);                      \
    void convt2d_backward_input(const Tensor& grad_out, const Tensor& kernel, Tensor& grad_in);     \
    void convt2d_backward_kernel(const Tensor& grad_out, const Tensor& in, Tensor& grad_kernel);    \
    /* maxpool 2x2 stride 2; argmax holds flat input indices, first hit wins ties */                \
    void maxpool2d_forward(const Tensor& in, Tensor& out, std::vector<int>& argmax);                \
    void maxpool2d_backward(const Tensor& grad_out, const std::vector<int>& argmax,                 \
                            Tensor& grad_in);                                                       \
    /* per-channel biased mean/variance over N x H x W */                                           \
    void batchnorm_stats(const Tensor& in, std::vector<double>& mean, std::vector<double>& var);    \
    void batchnorm_normalize(const Tensor& in, const std::vector<double>& mean,                     \
                             const std::vector<double>& invstd, const Tensor& gamma,                \
                             const Tensor& beta, Tensor& out, std::vector<double>* xhat_out);       \
    void batchnorm_backward(const Tensor& grad_out, const std::vector<double>& xhat,                \
                            const std::vector<double>& invstd, const Tensor& gamma,                 \
                            Tensor& grad_in, Tensor& grad_gamma, Tensor& grad_beta);                \
    void relu_forward(const Tensor& in, Tensor& out);                                               \
    void relu_backward(const Tensor& grad_out, const Tensor& in, Tensor& grad_in);                  \
    void sigmoid_forward(const Tensor& in, Tensor& out);                                            \
    void sigmoid_backward(const Tensor& grad_out, const Tensor& value, Tensor& grad_in);            \
    void concat_forward(const Tensor& a, const Tensor& b, Tensor& out);                             \
    void concat_backward(const Tensor& grad_out, int channels_a, Tensor& grad_a, Tensor& grad_b);

namespace serial {
XSEG_DECLARE_KERNELS
}
namespace par {
XSEG_DECLARE_KERNELS
}
XSEG_DECLARE_KERNELS

#undef XSEG_DECLARE_KERNELS

}  // namespace xseg::kernels
