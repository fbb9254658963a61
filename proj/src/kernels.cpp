#include "xseg/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <cstdlib>

namespace xseg::kernels {

namespace {
std::atomic<Mode> g_mode{Mode::Parallel};
}

void set_mode(Mode m) { g_mode.store(m); }
Mode mode() { return g_mode.load(); }

void configure_threads_from_env() {
    const char* env = std::getenv("XSEG_THREADS");
    if (!env) return;
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
}

int thread_count() { return omp_get_max_threads(); }

#define XSEG_DISPATCH(fn, ...)                \
    if (mode() == Mode::Serial) {             \
        serial::fn(__VA_ARGS__);              \
    } else {                                  \
        par::fn(__VA_ARGS__);                 \
    }

void conv2d_forward(const Tensor& in, const Tensor& kernel, const Tensor& bias, Tensor& out) {
    XSEG_DISPATCH(conv2d_forward, in, kernel, bias, out)
}
void conv2d_backward_input(const Tensor& grad_out, const Tensor& kernel, Tensor& grad_in) {
    XSEG_DISPATCH(conv2d_backward_input, grad_out, kernel, grad_in)
}
void conv2d_backward_kernel(const Tensor& grad_out, const Tensor& in, Tensor& grad_kernel) {
    XSEG_DISPATCH(conv2d_backward_kernel, grad_out, in, grad_kernel)
}
void conv2d_backward_bias(const Tensor& grad_out, Tensor& grad_bias) {
    XSEG_DISPATCH(conv2d_backward_bias, grad_out, grad_bias)
}
void convt2d_forward(const Tensor& in, const Tensor& kernel, Tensor& out) {
    XSEG_DISPATCH(convt2d_forward, in, kernel, out)
}
void convt2d_backward_input(const Tensor& grad_out, const Tensor& kernel, Tensor& grad_in) {
    XSEG_DISPATCH(convt2d_backward_input, grad_out, kernel, grad_in)
}
void convt2d_backward_kernel(const Tensor& grad_out, const Tensor& in, Tensor& grad_kernel) {
    XSEG_DISPATCH(convt2d_backward_kernel, grad_out, in, grad_kernel)
}
void maxpool2d_forward(const Tensor& in, Tensor& out, std::vector<int>& argmax) {
    XSEG_DISPATCH(maxpool2d_forward, in, out, argmax)
}
void maxpool2d_backward(const Tensor& grad_out, const std::vector<int>& argmax, Tensor& grad_in) {
    XSEG_DISPATCH(maxpool2d_backward, grad_out, argmax, grad_in)
}
void batchnorm_stats(const Tensor& in, std::vector<double>& mean, std::vector<double>& var) {
    XSEG_DISPATCH(batchnorm_stats, in, mean, var)
}
void batchnorm_normalize(const Tensor& in, const std::vector<double>& mean,
                         const std::vector<double>& invstd, const Tensor& gamma, const Tensor& beta,
                         Tensor& out, std::vector<double>* xhat_out) {
    XSEG_DISPATCH(batchnorm_normalize, in, mean, invstd, gamma, beta, out, xhat_out)
}
void batchnorm_backward(const Tensor& grad_out, const std::vector<double>& xhat,
                        const std::vector<double>& invstd, const Tensor& gamma, Tensor& grad_in,
                        Tensor& grad_gamma, Tensor& grad_beta) {
    XSEG_DISPATCH(batchnorm_backward, grad_out, xhat, invstd, gamma, grad_in, grad_gamma, grad_beta)
}
void relu_forward(const Tensor& in, Tensor& out) { XSEG_DISPATCH(relu_forward, in, out) }
void relu_backward(const Tensor& grad_out, const Tensor& in, Tensor& grad_in) {
    XSEG_DISPATCH(relu_backward, grad_out, in, grad_in)
}
void sigmoid_forward(const Tensor& in, Tensor& out) { XSEG_DISPATCH(sigmoid_forward, in, out) }
void sigmoid_backward(const Tensor& grad_out, const Tensor& value, Tensor& grad_in) {
    XSEG_DISPATCH(sigmoid_backward, grad_out, value, grad_in)
}
void concat_forward(const Tensor& a, const Tensor& b, Tensor& out) {
    XSEG_DISPATCH(concat_forward, a, b, out)
}
void concat_backward(const Tensor& grad_out, int channels_a, Tensor& grad_a, Tensor& grad_b) {
    XSEG_DISPATCH(concat_backward, grad_out, channels_a, grad_a, grad_b)
}

#undef XSEG_DISPATCH

}  // namespace xseg::kernels
