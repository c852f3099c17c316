#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "swcl/tensor.hpp"

namespace swcl {

// Differentiable primitives. Every op is a pure function; backward variants
// take the forward inputs (and gradients w.r.t. outputs) and return or
// accumulate input gradients. Summations run in fixed index order.

// ---------------------------------------------------------------------------
// conv2d: cross-correlation (no kernel flip), zero padding.
// input [Cin,H,W], kernel [Cout,Cin,kh,kw] -> [Cout,H',W'],
// H' = floor((H + 2*pad - kh)/stride) + 1.
// ---------------------------------------------------------------------------

inline void conv2d_check(const Tensor& input, const Tensor& kernel, std::size_t stride,
                         std::size_t pad) {
    if (input.rank() != 3)
        throw ValidationError("conv2d: input must be [Cin,H,W], got " + input.shape_str());
    if (kernel.rank() != 4)
        throw ValidationError("conv2d: kernel must be [Cout,Cin,kh,kw], got " +
                              kernel.shape_str());
    if (kernel.extent(1) != input.extent(0))
        throw ValidationError("conv2d: channel mismatch, input " + input.shape_str() +
                              " vs kernel " + kernel.shape_str());
    if (stride == 0) throw ValidationError("conv2d: stride must be positive");
    if (kernel.extent(2) > input.extent(1) + 2 * pad ||
        kernel.extent(3) > input.extent(2) + 2 * pad)
        throw ValidationError("conv2d: kernel " + kernel.shape_str() +
                              " exceeds padded input " + input.shape_str());
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
                     std::size_t pad) {
    conv2d_check(input, kernel, stride, pad);
    const std::size_t cin = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t cout = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
    Tensor out({cout, ho, wo});
    const double* in = input.data();
    const double* k = kernel.data();
    double* o = out.data();
    for (std::size_t oc = 0; oc < cout; ++oc) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) -
                                          static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) -
                                          static_cast<std::ptrdiff_t>(pad);
                for (std::size_t ic = 0; ic < cin; ++ic) {
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ky);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kx);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += in[(ic * h + iy) * w + ix] *
                                   k[((oc * cin + ic) * kh + ky) * kw + kx];
                        }
                    }
                }
                o[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    return out;
}

/// Accumulates into grad_input / grad_kernel (must be zero- or grad-initialized
/// with the right shapes; pass nullptr to skip either).
inline void conv2d_backward(const Tensor& input, const Tensor& kernel, std::size_t stride,
                            std::size_t pad, const Tensor& grad_out, Tensor* grad_input,
                            Tensor* grad_kernel) {
    conv2d_check(input, kernel, stride, pad);
    const std::size_t cin = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t cout = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
    const std::size_t ho = grad_out.extent(1), wo = grad_out.extent(2);
    const double* in = input.data();
    const double* k = kernel.data();
    const double* go = grad_out.data();
    double* gi = grad_input ? grad_input->data() : nullptr;
    double* gk = grad_kernel ? grad_kernel->data() : nullptr;
    for (std::size_t oc = 0; oc < cout; ++oc) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const double g = go[(oc * ho + oy) * wo + ox];
                if (g == 0.0) continue;
                const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) -
                                          static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) -
                                          static_cast<std::ptrdiff_t>(pad);
                for (std::size_t ic = 0; ic < cin; ++ic) {
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ky);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kx);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            const std::size_t ii = (ic * h + iy) * w + ix;
                            const std::size_t ki = ((oc * cin + ic) * kh + ky) * kw + kx;
                            if (gi) gi[ii] += g * k[ki];
                            if (gk) gk[ki] += g * in[ii];
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// linear: out = W x + b, W [Dout,Din], x [Din], b [Dout].
// ---------------------------------------------------------------------------

inline Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.rank() != 1 || weight.rank() != 2 || bias.rank() != 1 ||
        weight.extent(1) != input.extent(0) || weight.extent(0) != bias.extent(0))
        throw ValidationError("linear: dimension mismatch, x " + input.shape_str() + " W " +
                              weight.shape_str() + " b " + bias.shape_str());
    const std::size_t dout = weight.extent(0), din = weight.extent(1);
    Tensor out({dout});
    for (std::size_t r = 0; r < dout; ++r) {
        double acc = bias[r];
        const double* wr = weight.data() + r * din;
        for (std::size_t c = 0; c < din; ++c) acc += wr[c] * input[c];
        out[r] = acc;
    }
    return out;
}

inline void linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                            Tensor* grad_input, Tensor* grad_weight, Tensor* grad_bias) {
    const std::size_t dout = weight.extent(0), din = weight.extent(1);
    for (std::size_t r = 0; r < dout; ++r) {
        const double g = grad_out[r];
        const double* wr = weight.data() + r * din;
        if (grad_bias) (*grad_bias)[r] += g;
        for (std::size_t c = 0; c < din; ++c) {
            if (grad_input) (*grad_input)[c] += g * wr[c];
            if (grad_weight) (*grad_weight)[r * din + c] += g * input[c];
        }
    }
}

// ---------------------------------------------------------------------------
// gap: global average pooling [C,H,W] -> [C].
// ---------------------------------------------------------------------------

inline Tensor gap(const Tensor& input) {
    if (input.rank() != 3 || input.extent(1) == 0 || input.extent(2) == 0)
        throw ValidationError("gap: input must be [C,H,W] with H,W >= 1, got " +
                              input.shape_str());
    const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
    Tensor out({c});
    const double inv = 1.0 / static_cast<double>(h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const double* p = input.data() + ch * h * w;
        for (std::size_t i = 0; i < h * w; ++i) acc += p[i];
        out[ch] = acc * inv;
    }
    return out;
}

inline Tensor gap_backward(const Tensor& grad_out, std::size_t h, std::size_t w) {
    const std::size_t c = grad_out.extent(0);
    Tensor grad_in({c, h, w});
    const double inv = 1.0 / static_cast<double>(h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = grad_out[ch] * inv;
        double* p = grad_in.data() + ch * h * w;
        for (std::size_t i = 0; i < h * w; ++i) p[i] = g;
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
    return out;
}

inline Tensor relu_backward(const Tensor& pre_act, const Tensor& grad_out) {
    Tensor grad_in(pre_act.shape());
    for (std::size_t i = 0; i < pre_act.size(); ++i)
        grad_in[i] = pre_act[i] > 0.0 ? grad_out[i] : 0.0;
    return grad_in;
}

// ---------------------------------------------------------------------------
// softmax_pair: (a,b) -> (e^a, e^b) / (e^a + e^b), max-subtracted.
// ---------------------------------------------------------------------------

inline std::pair<double, double> softmax_pair(double a, double b) {
    const double m = a > b ? a : b;
    const double ea = std::exp(a - m);
    const double eb = std::exp(b - m);
    const double s = ea + eb;
    return {ea / s, eb / s};
}

/// Given outputs (p,q) and upstream (dp,dq), returns (da,db).
inline std::pair<double, double> softmax_pair_backward(double p, double q, double dp,
                                                       double dq) {
    const double t = (dp - dq) * p * q;
    return {t, -t};
}

// ---------------------------------------------------------------------------
// l2_normalize
// ---------------------------------------------------------------------------

inline double l2_norm(const Tensor& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

inline Tensor l2_normalize(const Tensor& v) {
    const double n = l2_norm(v);
    if (n <= 1e-12)
        throw ValidationError("l2_normalize: degenerate input with norm " + std::to_string(n));
    Tensor out(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

/// d/dv of z = v/|v| applied to upstream grad: (g - z (z.g)) / |v|.
inline Tensor l2_normalize_backward(const Tensor& v, const Tensor& grad_out) {
    const double n = l2_norm(v);
    if (n <= 1e-12)
        throw ValidationError("l2_normalize_backward: degenerate input");
    Tensor grad_in(v.shape());
    double zg = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) zg += (v[i] / n) * grad_out[i];
    for (std::size_t i = 0; i < v.size(); ++i)
        grad_in[i] = (grad_out[i] - (v[i] / n) * zg) / n;
    return grad_in;
}

// ---------------------------------------------------------------------------
// two-class cross-entropy on raw logits (stable log-sum-exp form)
// ---------------------------------------------------------------------------

inline double cross_entropy2(const Tensor& logits, int label, Tensor* grad_logits) {
    if (logits.rank() != 1 || logits.extent(0) != 2)
        throw ValidationError("cross_entropy2: logits must be [2]");
    if (label != 0 && label != 1) throw ValidationError("cross_entropy2: label must be 0/1");
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
    const double lse = m + std::log(e0 + e1);
    const double loss = lse - logits[static_cast<std::size_t>(label)];
    if (grad_logits) {
        (*grad_logits)[0] += e0 / (e0 + e1) - (label == 0 ? 1.0 : 0.0);
        (*grad_logits)[1] += e1 / (e0 + e1) - (label == 1 ? 1.0 : 0.0);
    }
    return loss;
}

// ---------------------------------------------------------------------------
// small image helpers shared by synth / patchgen / augmentation
// ---------------------------------------------------------------------------

/// Reverses the last (column) axis of a [H,W] or [C,H,W] tensor.
inline Tensor flip_horizontal(const Tensor& t) {
    if (t.rank() == 2) {
        const std::size_t h = t.extent(0), w = t.extent(1);
        Tensor out({h, w});
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.at2(y, x) = t.at2(y, w - 1 - x);
        return out;
    }
    if (t.rank() == 3) {
        const std::size_t c = t.extent(0), h = t.extent(1), w = t.extent(2);
        Tensor out({c, h, w});
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    out.at3(ch, y, x) = t.at3(ch, y, w - 1 - x);
        return out;
    }
    throw ValidationError("flip_horizontal: expected rank 2 or 3, got " + t.shape_str());
}

}  // namespace swcl
