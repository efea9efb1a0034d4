#pragma once

// Numeric primitives behind the layer vocabulary: convolution (im2col + GEMM),
// depthwise convolution, dense, batch norm, pooling. Forward and the matching
// reverse-mode gradients live side by side so each pair can be checked against
// finite differences in isolation.
//
// Convolution convention, used everywhere: zero padding (k-1)/2 on each side
// ("same" at stride 1), output size floor((H + 2p - k)/s) + 1. Kernels must be
// odd. Pooling never pads.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "monas/tensor.hpp"

namespace monas {

inline int conv_out_dim(int in, int kernel, int stride) {
    const int pad = (kernel - 1) / 2;
    return (in + 2 * pad - kernel) / stride + 1;
}

inline int pool_out_dim(int in, int kernel, int stride) {
    return (in - kernel) / stride + 1;
}

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

// Expand one batch item into a [Cin*k*k, Hout*Wout] column matrix.
template <typename T>
void im2col(const T* x, int channels, int height, int width, int kernel, int stride,
            int out_h, int out_w, T* col) {
    const int pad = (kernel - 1) / 2;
    const int patch = channels * kernel * kernel;
    for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow) {
            T* dst = col + static_cast<std::size_t>(oh * out_w + ow) * patch;
            for (int c = 0; c < channels; ++c) {
                const T* plane = x + static_cast<std::size_t>(c) * height * width;
                for (int ky = 0; ky < kernel; ++ky) {
                    const int ih = oh * stride - pad + ky;
                    for (int kx = 0; kx < kernel; ++kx) {
                        const int iw = ow * stride - pad + kx;
                        *dst++ = (ih >= 0 && ih < height && iw >= 0 && iw < width)
                                     ? plane[ih * width + iw]
                                     : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add of a column matrix back into one batch item.
template <typename T>
void col2im_add(const T* col, int channels, int height, int width, int kernel, int stride,
                int out_h, int out_w, T* x) {
    const int pad = (kernel - 1) / 2;
    const int patch = channels * kernel * kernel;
    for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow) {
            const T* src = col + static_cast<std::size_t>(oh * out_w + ow) * patch;
            for (int c = 0; c < channels; ++c) {
                T* plane = x + static_cast<std::size_t>(c) * height * width;
                for (int ky = 0; ky < kernel; ++ky) {
                    const int ih = oh * stride - pad + ky;
                    for (int kx = 0; kx < kernel; ++kx) {
                        const int iw = ow * stride - pad + kx;
                        if (ih >= 0 && ih < height && iw >= 0 && iw < width)
                            plane[ih * width + iw] += *src;
                        ++src;
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>* bias,
                          int stride) {
    const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cout = weight.dim(0), kernel = weight.dim(2);
    const int oh = conv_out_dim(h, kernel, stride), ow = conv_out_dim(w, kernel, stride);
    const int patch = cin * kernel * kernel;
    const int spatial = oh * ow;

    TensorT<T> out({batch, cout, oh, ow});
    std::vector<T> col(static_cast<std::size_t>(patch) * spatial);
    Eigen::Map<const detail::MatRM<T>> wmat(weight.data(), cout, patch);
    for (int b = 0; b < batch; ++b) {
        detail::im2col(x.data() + static_cast<std::size_t>(b) * cin * h * w, cin, h, w, kernel,
                       stride, oh, ow, col.data());
        Eigen::Map<const detail::MatCM<T>> cmat(col.data(), patch, spatial);
        Eigen::Map<detail::MatRM<T>> omat(out.data() + static_cast<std::size_t>(b) * cout * spatial,
                                          cout, spatial);
        omat.noalias() = wmat * cmat;
    }
    if (bias) {
        for (int b = 0; b < batch; ++b)
            for (int c = 0; c < cout; ++c) {
                T* row = out.data() + (static_cast<std::size_t>(b) * cout + c) * spatial;
                const T bv = (*bias)[c];
                for (int s = 0; s < spatial; ++s) row[s] += bv;
            }
    }
    return out;
}

template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& weight, int stride,
                     const TensorT<T>& grad_out, TensorT<T>* grad_x, TensorT<T>* grad_weight,
                     TensorT<T>* grad_bias) {
    const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cout = weight.dim(0), kernel = weight.dim(2);
    const int oh = grad_out.dim(2), ow = grad_out.dim(3);
    const int patch = cin * kernel * kernel;
    const int spatial = oh * ow;

    std::vector<T> col(static_cast<std::size_t>(patch) * spatial);
    Eigen::Map<const detail::MatRM<T>> wmat(weight.data(), cout, patch);
    for (int b = 0; b < batch; ++b) {
        Eigen::Map<const detail::MatRM<T>> gmat(
            grad_out.data() + static_cast<std::size_t>(b) * cout * spatial, cout, spatial);
        if (grad_weight) {
            detail::im2col(x.data() + static_cast<std::size_t>(b) * cin * h * w, cin, h, w, kernel,
                           stride, oh, ow, col.data());
            Eigen::Map<const detail::MatCM<T>> cmat(col.data(), patch, spatial);
            Eigen::Map<detail::MatRM<T>> gw(grad_weight->data(), cout, patch);
            gw.noalias() += gmat * cmat.transpose();
        }
        if (grad_x) {
            Eigen::Map<detail::MatCM<T>> dcol(col.data(), patch, spatial);
            dcol.noalias() = wmat.transpose() * gmat;
            detail::col2im_add(col.data(), cin, h, w, kernel, stride, oh, ow,
                               grad_x->data() + static_cast<std::size_t>(b) * cin * h * w);
        }
    }
    if (grad_bias) {
        for (int b = 0; b < batch; ++b)
            for (int c = 0; c < cout; ++c) {
                const T* row = grad_out.data() + (static_cast<std::size_t>(b) * cout + c) * spatial;
                T acc = T(0);
                for (int s = 0; s < spatial; ++s) acc += row[s];
                (*grad_bias)[c] += acc;
            }
    }
}

// ---------------------------------------------------------------------------
// Depthwise conv (one k x k filter per input channel)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> depthwise_forward(const TensorT<T>& x, const TensorT<T>& weight, int stride) {
    const int batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int kernel = weight.dim(2);
    const int pad = (kernel - 1) / 2;
    const int oh = conv_out_dim(h, kernel, stride), ow = conv_out_dim(w, kernel, stride);
    TensorT<T> out({batch, channels, oh, ow});
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
            const T* plane = &x.at4(b, c, 0, 0);
            const T* filt = weight.data() + static_cast<std::size_t>(c) * kernel * kernel;
            for (int y = 0; y < oh; ++y)
                for (int z = 0; z < ow; ++z) {
                    T acc = T(0);
                    for (int ky = 0; ky < kernel; ++ky) {
                        const int ih = y * stride - pad + ky;
                        if (ih < 0 || ih >= h) continue;
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int iw = z * stride - pad + kx;
                            if (iw < 0 || iw >= w) continue;
                            acc += filt[ky * kernel + kx] * plane[ih * w + iw];
                        }
                    }
                    out.at4(b, c, y, z) = acc;
                }
        }
    return out;
}

template <typename T>
void depthwise_backward(const TensorT<T>& x, const TensorT<T>& weight, int stride,
                        const TensorT<T>& grad_out, TensorT<T>* grad_x, TensorT<T>* grad_weight) {
    const int batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int kernel = weight.dim(2);
    const int pad = (kernel - 1) / 2;
    const int oh = grad_out.dim(2), ow = grad_out.dim(3);
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
            const T* plane = &x.at4(b, c, 0, 0);
            const T* filt = weight.data() + static_cast<std::size_t>(c) * kernel * kernel;
            T* gw = grad_weight ? grad_weight->data() + static_cast<std::size_t>(c) * kernel * kernel
                                : nullptr;
            T* gx = grad_x ? &grad_x->at4(b, c, 0, 0) : nullptr;
            for (int y = 0; y < oh; ++y)
                for (int z = 0; z < ow; ++z) {
                    const T g = grad_out.at4(b, c, y, z);
                    for (int ky = 0; ky < kernel; ++ky) {
                        const int ih = y * stride - pad + ky;
                        if (ih < 0 || ih >= h) continue;
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int iw = z * stride - pad + kx;
                            if (iw < 0 || iw >= w) continue;
                            if (gw) gw[ky * kernel + kx] += g * plane[ih * w + iw];
                            if (gx) gx[ih * w + iw] += g * filt[ky * kernel + kx];
                        }
                    }
                }
        }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> dense_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>* bias) {
    const int batch = x.dim(0), features = x.dim(1), out_units = weight.dim(0);
    TensorT<T> out({batch, out_units});
    Eigen::Map<const detail::MatRM<T>> xm(x.data(), batch, features);
    Eigen::Map<const detail::MatRM<T>> wm(weight.data(), out_units, features);
    Eigen::Map<detail::MatRM<T>> om(out.data(), batch, out_units);
    om.noalias() = xm * wm.transpose();
    if (bias)
        for (int b = 0; b < batch; ++b)
            for (int o = 0; o < out_units; ++o) out.at2(b, o) += (*bias)[o];
    return out;
}

template <typename T>
void dense_backward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& grad_out,
                    TensorT<T>* grad_x, TensorT<T>* grad_weight, TensorT<T>* grad_bias) {
    const int batch = x.dim(0), features = x.dim(1), out_units = weight.dim(0);
    Eigen::Map<const detail::MatRM<T>> xm(x.data(), batch, features);
    Eigen::Map<const detail::MatRM<T>> wm(weight.data(), out_units, features);
    Eigen::Map<const detail::MatRM<T>> gm(grad_out.data(), batch, out_units);
    if (grad_weight) {
        Eigen::Map<detail::MatRM<T>> gw(grad_weight->data(), out_units, features);
        gw.noalias() += gm.transpose() * xm;
    }
    if (grad_x) {
        Eigen::Map<detail::MatRM<T>> gx(grad_x->data(), batch, features);
        gx.noalias() += gm * wm;
    }
    if (grad_bias)
        for (int b = 0; b < batch; ++b)
            for (int o = 0; o < out_units; ++o) (*grad_bias)[o] += gm(b, o);
}

// ---------------------------------------------------------------------------
// Batch normalization (4-D NCHW, per-channel)
// ---------------------------------------------------------------------------

struct BatchNormCache {
    std::vector<double> mean;     // batch mean (train) or moving mean (infer)
    std::vector<double> inv_std;  // 1/sqrt(var + eps) actually used
};

template <typename T>
TensorT<T> batchnorm_forward(const TensorT<T>& x, const TensorT<T>& scale, const TensorT<T>& shift,
                             TensorT<T>& moving_mean, TensorT<T>& moving_var, bool training,
                             double momentum, double epsilon, BatchNormCache* cache) {
    const int batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const double count = static_cast<double>(batch) * h * w;
    TensorT<T> out(x.shape());
    std::vector<double> mean(channels), inv_std(channels);
    for (int c = 0; c < channels; ++c) {
        double mu, var;
        if (training) {
            double sum = 0.0, sq = 0.0;
            for (int b = 0; b < batch; ++b) {
                const T* p = &x.at4(b, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    sum += static_cast<double>(p[i]);
                    sq += static_cast<double>(p[i]) * static_cast<double>(p[i]);
                }
            }
            mu = sum / count;
            var = std::max(0.0, sq / count - mu * mu);
            moving_mean[c] = static_cast<T>(momentum * static_cast<double>(moving_mean[c]) +
                                            (1.0 - momentum) * mu);
            moving_var[c] = static_cast<T>(momentum * static_cast<double>(moving_var[c]) +
                                           (1.0 - momentum) * var);
        } else {
            mu = static_cast<double>(moving_mean[c]);
            var = static_cast<double>(moving_var[c]);
        }
        mean[c] = mu;
        inv_std[c] = 1.0 / std::sqrt(var + epsilon);
        const double g = static_cast<double>(scale[c]) * inv_std[c];
        const double b0 = static_cast<double>(shift[c]) - g * mu;
        for (int b = 0; b < batch; ++b) {
            const T* p = &x.at4(b, c, 0, 0);
            T* q = &out.at4(b, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i)
                q[i] = static_cast<T>(g * static_cast<double>(p[i]) + b0);
        }
    }
    if (cache) {
        cache->mean = std::move(mean);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

template <typename T>
void batchnorm_backward(const TensorT<T>& x, const TensorT<T>& scale, const BatchNormCache& cache,
                        bool training, const TensorT<T>& grad_out, TensorT<T>* grad_x,
                        TensorT<T>* grad_scale, TensorT<T>* grad_shift) {
    const int batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const double count = static_cast<double>(batch) * h * w;
    for (int c = 0; c < channels; ++c) {
        const double mu = cache.mean[c], is = cache.inv_std[c];
        double sum_g = 0.0, sum_gx = 0.0;
        for (int b = 0; b < batch; ++b) {
            const T* gp = &grad_out.at4(b, c, 0, 0);
            const T* xp = &x.at4(b, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                const double g = static_cast<double>(gp[i]);
                const double xhat = (static_cast<double>(xp[i]) - mu) * is;
                sum_g += g;
                sum_gx += g * xhat;
            }
        }
        if (grad_scale) (*grad_scale)[c] += static_cast<T>(sum_gx);
        if (grad_shift) (*grad_shift)[c] += static_cast<T>(sum_g);
        if (!grad_x) continue;
        const double gam = static_cast<double>(scale[c]);
        if (training) {
            const double mg = sum_g / count, mgx = sum_gx / count;
            for (int b = 0; b < batch; ++b) {
                const T* gp = &grad_out.at4(b, c, 0, 0);
                const T* xp = &x.at4(b, c, 0, 0);
                T* dp = &grad_x->at4(b, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    const double xhat = (static_cast<double>(xp[i]) - mu) * is;
                    dp[i] += static_cast<T>(gam * is *
                                            (static_cast<double>(gp[i]) - mg - xhat * mgx));
                }
            }
        } else {
            // Moving statistics are constants at inference.
            const double k = gam * is;
            for (int b = 0; b < batch; ++b) {
                const T* gp = &grad_out.at4(b, c, 0, 0);
                T* dp = &grad_x->at4(b, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i)
                    dp[i] += static_cast<T>(k * static_cast<double>(gp[i]));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> maxpool_forward(const TensorT<T>& x, int kernel, int stride,
                           std::vector<std::int32_t>* argmax) {
    const int batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = pool_out_dim(h, kernel, stride), ow = pool_out_dim(w, kernel, stride);
    TensorT<T> out({batch, channels, oh, ow});
    if (argmax) argmax->assign(out.numel(), 0);
    std::size_t oi = 0;
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
            const T* plane = &x.at4(b, c, 0, 0);
            for (int y = 0; y < oh; ++y)
                for (int z = 0; z < ow; ++z, ++oi) {
                    int best = (y * stride) * w + (z * stride);
                    T bv = plane[best];
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int idx = (y * stride + ky) * w + (z * stride + kx);
                            if (plane[idx] > bv) {
                                bv = plane[idx];
                                best = idx;
                            }
                        }
                    out[oi] = bv;
                    if (argmax) (*argmax)[oi] = best;
                }
        }
    return out;
}

template <typename T>
void maxpool_backward(const Shape& x_shape, const std::vector<std::int32_t>& argmax,
                      const TensorT<T>& grad_out, TensorT<T>* grad_x) {
    const int channels = x_shape[1], h = x_shape[2], w = x_shape[3];
    const int oh = grad_out.dim(2), ow = grad_out.dim(3);
    std::size_t oi = 0;
    for (int b = 0; b < grad_out.dim(0); ++b)
        for (int c = 0; c < channels; ++c) {
            T* plane = grad_x->data() + (static_cast<std::size_t>(b) * channels + c) * h * w;
            for (int i = 0; i < oh * ow; ++i, ++oi) plane[argmax[oi]] += grad_out[oi];
        }
}

template <typename T>
TensorT<T> global_avgpool_forward(const TensorT<T>& x) {
    const int batch = x.dim(0), channels = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    TensorT<T> out({batch, channels});
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
            const T* p = &x.at4(b, c, 0, 0);
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
            out.at2(b, c) = static_cast<T>(acc / static_cast<double>(plane));
        }
    return out;
}

template <typename T>
void global_avgpool_backward(const Shape& x_shape, const TensorT<T>& grad_out, TensorT<T>* grad_x) {
    const int batch = x_shape[0], channels = x_shape[1];
    const std::size_t plane = static_cast<std::size_t>(x_shape[2]) * x_shape[3];
    const double inv = 1.0 / static_cast<double>(plane);
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
            T* p = grad_x->data() + (static_cast<std::size_t>(b) * channels + c) * plane;
            const T g = static_cast<T>(static_cast<double>(grad_out.at2(b, c)) * inv);
            for (std::size_t i = 0; i < plane; ++i) p[i] += g;
        }
}

}  // namespace monas
