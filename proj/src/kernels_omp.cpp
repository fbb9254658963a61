#include <algorithm>
#include <cmath>

#include "xseg/kernels.hpp"

// OpenMP kernels. Work is split so each output element is owned by exactly
// one thread and accumulated in the same order as the serial reference;
// results are bit-identical to kernels_serial.cpp for any thread count.

namespace xseg::kernels::par {

void conv2d_forward(const Tensor& in, const Tensor& kernel, const Tensor& bias, Tensor& out) {
    const int N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
    const int Cout = kernel.shape[0], K = kernel.shape[2];
    const int pad = K / 2;
#pragma omp parallel for collapse(3) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            for (int oh = 0; oh < H; ++oh) {
                double* orow = &out.data[static_cast<std::size_t>(((n * Cout + co) * H + oh) * W)];
                for (int ow = 0; ow < W; ++ow) orow[ow] = bias.data[static_cast<std::size_t>(co)];
                for (int ci = 0; ci < Cin; ++ci) {
                    for (int kh = 0; kh < K; ++kh) {
                        const int ih = oh + kh - pad;
                        if (ih < 0 || ih >= H) continue;
                        const double* irow =
                            &in.data[static_cast<std::size_t>(((n * Cin + ci) * H + ih) * W)];
                        for (int kw = 0; kw < K; ++kw) {
                            const double kv =
                                kernel.data[static_cast<std::size_t>(((co * Cin + ci) * K + kh) * K + kw)];
                            const int lo = std::max(0, pad - kw);
                            const int hi = std::min(W, W + pad - kw);
                            for (int ow = lo; ow < hi; ++ow) orow[ow] += irow[ow + kw - pad] * kv;
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const Tensor& grad_out, const Tensor& kernel, Tensor& grad_in) {
    const int N = grad_in.shape[0], Cin = grad_in.shape[1], H = grad_in.shape[2], W = grad_in.shape[3];
    const int Cout = kernel.shape[0], K = kernel.shape[2];
    const int pad = K / 2;
#pragma omp parallel for collapse(3) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int ci = 0; ci < Cin; ++ci) {
            for (int ih = 0; ih < H; ++ih) {
                double* grow = &grad_in.data[static_cast<std::size_t>(((n * Cin + ci) * H + ih) * W)];
                for (int co = 0; co < Cout; ++co) {
                    for (int kh = 0; kh < K; ++kh) {
                        const int oh = ih + pad - kh;
                        if (oh < 0 || oh >= H) continue;
                        const double* gorow =
                            &grad_out.data[static_cast<std::size_t>(((n * Cout + co) * H + oh) * W)];
                        for (int kw = 0; kw < K; ++kw) {
                            const double kv =
                                kernel.data[static_cast<std::size_t>(((co * Cin + ci) * K + kh) * K + kw)];
                            const int lo = std::max(0, kw - pad);
                            const int hi = std::min(W, W + kw - pad);
                            for (int iw = lo; iw < hi; ++iw) grow[iw] += gorow[iw + pad - kw] * kv;
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_kernel(const Tensor& grad_out, const Tensor& in, Tensor& grad_kernel) {
    const int N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
    const int Cout = grad_out.shape[1], K = grad_kernel.shape[2];
    const int pad = K / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < Cout; ++co) {
        for (int ci = 0; ci < Cin; ++ci) {
            for (int kh = 0; kh < K; ++kh) {
                for (int kw = 0; kw < K; ++kw) {
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n) {
                        for (int oh = 0; oh < H; ++oh) {
                            const int ih = oh + kh - pad;
                            if (ih < 0 || ih >= H) continue;
                            const double* gorow =
                                &grad_out.data[static_cast<std::size_t>(((n * Cout + co) * H + oh) * W)];
                            const double* irow =
                                &in.data[static_cast<std::size_t>(((n * Cin + ci) * H + ih) * W)];
                            const int lo = std::max(0, pad - kw);
                            const int hi = std::min(W, W + pad - kw);
                            for (int ow = lo; ow < hi; ++ow) acc += gorow[ow] * irow[ow + kw - pad];
                        }
                    }
                    grad_kernel.data[static_cast<std::size_t>(((co * Cin + ci) * K + kh) * K + kw)] += acc;
                }
            }
        }
    }
}

void conv2d_backward_bias(const Tensor& grad_out, Tensor& grad_bias) {
    const int N = grad_out.shape[0], Cout = grad_out.shape[1];
    const int HW = grad_out.shape[2] * grad_out.shape[3];
#pragma omp parallel for schedule(static)
    for (int co = 0; co < Cout; ++co) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) {
            const double* base = &grad_out.data[static_cast<std::size_t>((n * Cout + co) * HW)];
            for (int i = 0; i < HW; ++i) acc += base[i];
        }
        grad_bias.data[static_cast<std::size_t>(co)] += acc;
    }
}

void convt2d_forward(const Tensor& in, const Tensor& kernel, Tensor& out) {
    const int N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
    const int Cout = kernel.shape[1];
    const int OH = 2 * H, OW = 2 * W;
#pragma omp parallel for collapse(3) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            for (int oh = 0; oh < OH; ++oh) {
                const int ih = oh >> 1, a = oh & 1;
                double* orow = &out.data[static_cast<std::size_t>(((n * Cout + co) * OH + oh) * OW)];
                for (int ow = 0; ow < OW; ++ow) {
                    const int iw = ow >> 1, b = ow & 1;
                    double acc = 0.0;
                    for (int ci = 0; ci < Cin; ++ci) {
                        acc += in.data[static_cast<std::size_t>(((n * Cin + ci) * H + ih) * W + iw)] *
                               kernel.data[static_cast<std::size_t>(((ci * Cout + co) * 2 + a) * 2 + b)];
                    }
                    orow[ow] = acc;
                }
            }
        }
    }
}

void convt2d_backward_input(const Tensor& grad_out, const Tensor& kernel, Tensor& grad_in) {
    const int N = grad_in.shape[0], Cin = grad_in.shape[1], H = grad_in.shape[2], W = grad_in.shape[3];
    const int Cout = grad_out.shape[1];
    const int OH = 2 * H, OW = 2 * W;
#pragma omp parallel for collapse(3) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int ci = 0; ci < Cin; ++ci) {
            for (int ih = 0; ih < H; ++ih) {
                for (int iw = 0; iw < W; ++iw) {
                    double acc = 0.0;
                    for (int co = 0; co < Cout; ++co) {
                        for (int a = 0; a < 2; ++a) {
                            for (int b = 0; b < 2; ++b) {
                                acc += grad_out.data[static_cast<std::size_t>(
                                           ((n * Cout + co) * OH + 2 * ih + a) * OW + 2 * iw + b)] *
                                       kernel.data[static_cast<std::size_t>(((ci * Cout + co) * 2 + a) * 2 + b)];
                            }
                        }
                    }
                    grad_in.data[static_cast<std::size_t>(((n * Cin + ci) * H + ih) * W + iw)] += acc;
                }
            }
        }
    }
}

void convt2d_backward_kernel(const Tensor& grad_out, const Tensor& in, Tensor& grad_kernel) {
    const int N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
    const int Cout = grad_out.shape[1];
    const int OH = 2 * H, OW = 2 * W;
    (void)OH;
#pragma omp parallel for collapse(2) schedule(static)
    for (int ci = 0; ci < Cin; ++ci) {
        for (int co = 0; co < Cout; ++co) {
            for (int a = 0; a < 2; ++a) {
                for (int b = 0; b < 2; ++b) {
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n) {
                        for (int ih = 0; ih < H; ++ih) {
                            const double* irow =
                                &in.data[static_cast<std::size_t>(((n * Cin + ci) * H + ih) * W)];
                            const double* gorow = &grad_out.data[static_cast<std::size_t>(
                                ((n * Cout + co) * OH + 2 * ih + a) * OW)];
                            for (int iw = 0; iw < W; ++iw) acc += irow[iw] * gorow[2 * iw + b];
                        }
                    }
                    grad_kernel.data[static_cast<std::size_t>(((ci * Cout + co) * 2 + a) * 2 + b)] += acc;
                }
            }
        }
    }
}

void maxpool2d_forward(const Tensor& in, Tensor& out, std::vector<int>& argmax) {
    const int N = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
    const int OH = H / 2, OW = W / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    int best = ((n * C + c) * H + 2 * oh) * W + 2 * ow;
                    double bv = in.data[static_cast<std::size_t>(best)];
                    for (int a = 0; a < 2; ++a) {
                        for (int b = 0; b < 2; ++b) {
                            const int idx = ((n * C + c) * H + 2 * oh + a) * W + 2 * ow + b;
                            const double v = in.data[static_cast<std::size_t>(idx)];
                            if (v > bv) {
                                bv = v;
                                best = idx;
                            }
                        }
                    }
                    const std::size_t o = static_cast<std::size_t>(((n * C + c) * OH + oh) * OW + ow);
                    out.data[o] = bv;
                    argmax[o] = best;
                }
            }
        }
    }
}

void maxpool2d_backward(const Tensor& grad_out, const std::vector<int>& argmax, Tensor& grad_in) {
    const std::size_t total = grad_out.data.size();
    // distinct output elements map to disjoint input blocks, so writes never collide
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(total); ++i)
        grad_in.data[static_cast<std::size_t>(argmax[static_cast<std::size_t>(i)])] +=
            grad_out.data[static_cast<std::size_t>(i)];
}

void batchnorm_stats(const Tensor& in, std::vector<double>& mean, std::vector<double>& var) {
    const int N = in.shape[0], C = in.shape[1];
    const int HW = in.shape[2] * in.shape[3];
    const double inv_m = 1.0 / (static_cast<double>(N) * HW);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int n = 0; n < N; ++n) {
            const double* base = &in.data[static_cast<std::size_t>((n * C + c) * HW)];
            for (int i = 0; i < HW; ++i) s += base[i];
        }
        const double mu = s * inv_m;
        double sq = 0.0;
        for (int n = 0; n < N; ++n) {
            const double* base = &in.data[static_cast<std::size_t>((n * C + c) * HW)];
            for (int i = 0; i < HW; ++i) {
                const double d = base[i] - mu;
                sq += d * d;
            }
        }
        mean[static_cast<std::size_t>(c)] = mu;
        var[static_cast<std::size_t>(c)] = sq * inv_m;
    }
}

void batchnorm_normalize(const Tensor& in, const std::vector<double>& mean,
                         const std::vector<double>& invstd, const Tensor& gamma, const Tensor& beta,
                         Tensor& out, std::vector<double>* xhat_out) {
    const int N = in.shape[0], C = in.shape[1];
    const int HW = in.shape[2] * in.shape[3];
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::size_t base = static_cast<std::size_t>((n * C + c) * HW);
            const double mu = mean[static_cast<std::size_t>(c)];
            const double is = invstd[static_cast<std::size_t>(c)];
            const double g = gamma.data[static_cast<std::size_t>(c)];
            const double b = beta.data[static_cast<std::size_t>(c)];
            for (int i = 0; i < HW; ++i) {
                const double xh = (in.data[base + i] - mu) * is;
                if (xhat_out) (*xhat_out)[base + i] = xh;
                out.data[base + i] = g * xh + b;
            }
        }
    }
}

void batchnorm_backward(const Tensor& grad_out, const std::vector<double>& xhat,
                        const std::vector<double>& invstd, const Tensor& gamma, Tensor& grad_in,
                        Tensor& grad_gamma, Tensor& grad_beta) {
    const int N = grad_out.shape[0], C = grad_out.shape[1];
    const int HW = grad_out.shape[2] * grad_out.shape[3];
    const double inv_m = 1.0 / (static_cast<double>(N) * HW);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        double s1 = 0.0, s2 = 0.0;
        for (int n = 0; n < N; ++n) {
            const std::size_t base = static_cast<std::size_t>((n * C + c) * HW);
            for (int i = 0; i < HW; ++i) {
                s1 += grad_out.data[base + i];
                s2 += grad_out.data[base + i] * xhat[base + i];
            }
        }
        grad_beta.data[static_cast<std::size_t>(c)] += s1;
        grad_gamma.data[static_cast<std::size_t>(c)] += s2;
        const double g_is = gamma.data[static_cast<std::size_t>(c)] * invstd[static_cast<std::size_t>(c)];
        const double m1 = s1 * inv_m, m2 = s2 * inv_m;
        for (int n = 0; n < N; ++n) {
            const std::size_t base = static_cast<std::size_t>((n * C + c) * HW);
            for (int i = 0; i < HW; ++i)
                grad_in.data[base + i] += g_is * (grad_out.data[base + i] - m1 - xhat[base + i] * m2);
        }
    }
}

void relu_forward(const Tensor& in, Tensor& out) {
    const long long total = static_cast<long long>(in.data.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < total; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        out.data[k] = in.data[k] > 0.0 ? in.data[k] : 0.0;
    }
}

void relu_backward(const Tensor& grad_out, const Tensor& in, Tensor& grad_in) {
    const long long total = static_cast<long long>(in.data.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < total; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        if (in.data[k] > 0.0) grad_in.data[k] += grad_out.data[k];
    }
}

void sigmoid_forward(const Tensor& in, Tensor& out) {
    const long long total = static_cast<long long>(in.data.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < total; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        const double x = in.data[k];
        if (x >= 0.0) {
            out.data[k] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            out.data[k] = e / (1.0 + e);
        }
    }
}

void sigmoid_backward(const Tensor& grad_out, const Tensor& value, Tensor& grad_in) {
    const long long total = static_cast<long long>(value.data.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < total; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        grad_in.data[k] += grad_out.data[k] * value.data[k] * (1.0 - value.data[k]);
    }
}

void concat_forward(const Tensor& a, const Tensor& b, Tensor& out) {
    const int N = a.shape[0], Ca = a.shape[1], Cb = b.shape[1];
    const int HW = a.shape[2] * a.shape[3];
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
        std::copy_n(&a.data[static_cast<std::size_t>(n * Ca * HW)], static_cast<std::size_t>(Ca) * HW,
                    &out.data[static_cast<std::size_t>(n * (Ca + Cb) * HW)]);
        std::copy_n(&b.data[static_cast<std::size_t>(n * Cb * HW)], static_cast<std::size_t>(Cb) * HW,
                    &out.data[static_cast<std::size_t>((n * (Ca + Cb) + Ca) * HW)]);
    }
}

void concat_backward(const Tensor& grad_out, int channels_a, Tensor& grad_a, Tensor& grad_b) {
    const int N = grad_out.shape[0], C = grad_out.shape[1];
    const int Ca = channels_a, Cb = C - channels_a;
    const int HW = grad_out.shape[2] * grad_out.shape[3];
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
        const double* ga = &grad_out.data[static_cast<std::size_t>(n * C * HW)];
        const double* gb = &grad_out.data[static_cast<std::size_t>((n * C + Ca) * HW)];
        for (std::size_t i = 0; i < static_cast<std::size_t>(Ca) * HW; ++i)
            grad_a.data[static_cast<std::size_t>(n * Ca * HW) + i] += ga[i];
        for (std::size_t i = 0; i < static_cast<std::size_t>(Cb) * HW; ++i)
            grad_b.data[static_cast<std::size_t>(n * Cb * HW) + i] += gb[i];
    }
}

}  // namespace xseg::kernels::par
