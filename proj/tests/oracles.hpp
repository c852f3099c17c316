// Independent test oracles. These deliberately re-derive each quantity from
// first principles (different loop structure, naive accumulation, long double
// where it helps) and must stay decoupled from the library implementations
// they check.
#pragma once

#include <cmath>
#include <vector>

#include "swcl/contrastive.hpp"
#include "swcl/tensor.hpp"

namespace oracles {

using swcl::LabelTuple;
using swcl::Tensor;

/// Cross-correlation via an explicitly padded copy of the input.
inline Tensor conv2d_oracle(const Tensor& input, const Tensor& kernel, std::size_t stride,
                            std::size_t pad) {
    const std::size_t cin = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t cout = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
    const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
    std::vector<double> padded(cin * hp * wp, 0.0);
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                padded[(c * hp + y + pad) * wp + x + pad] = input.at3(c, y, x);
    const std::size_t ho = (hp - kh) / stride + 1;
    const std::size_t wo = (wp - kw) / stride + 1;
    Tensor out({cout, ho, wo});
    for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (std::size_t ic = 0; ic < cin; ++ic)
                    for (std::size_t ky = 0; ky < kh; ++ky)
                        for (std::size_t kx = 0; kx < kw; ++kx)
                            acc += padded[(ic * hp + oy * stride + ky) * wp + ox * stride + kx] *
                                   kernel[((oc * cin + ic) * kh + ky) * kw + kx];
                out.at3(oc, oy, ox) = acc;
            }
    return out;
}

inline Tensor linear_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t dout = w.extent(0), din = w.extent(1);
    Tensor out({dout});
    for (std::size_t r = 0; r < dout; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < din; ++c) acc += w.at2(r, c) * x[c];
        out[r] = acc + b[r];
    }
    return out;
}

inline Tensor gap_oracle(const Tensor& x) {
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    Tensor out({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) acc += x.at3(ch, y, xx);
        out[ch] = acc / static_cast<double>(h * w);
    }
    return out;
}

inline Tensor cam_oracle(const Tensor& fmaps, const Tensor& head_w, int cls) {
    const std::size_t k = fmaps.extent(0), h = fmaps.extent(1), w = fmaps.extent(2);
    Tensor out({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::size_t ch = 0; ch < k; ++ch)
                acc += head_w.at2(static_cast<std::size_t>(cls), ch) * fmaps.at3(ch, y, x);
            out.at2(y, x) = acc;
        }
    return out;
}

/// Direct high-precision evaluation of the multi-label contrastive objective
/// as displayed: coefficient -1/(2 N_yi - 1) with N_yi counting source
/// instances (pairs of views) whose tuple matches the anchor's, naive
/// denominator, no max subtraction. Requires view-consistent tuples.
inline double multilabel_supcon_oracle(const Tensor& z, const std::vector<LabelTuple>& labels,
                                       double tau) {
    const std::size_t n2 = z.extent(0), d = z.extent(1);
    long double total = 0.0L;
    for (std::size_t i = 0; i < n2; ++i) {
        // N_yi: instances in the minibatch with the same labels as anchor i
        std::size_t n_yi = 0;
        for (std::size_t k = 0; k < n2 / 2; ++k)
            if (labels[2 * k] == labels[i]) ++n_yi;
        const long double coeff = -1.0L / (2.0L * static_cast<long double>(n_yi) - 1.0L);

        long double denom = 0.0L;
        std::vector<long double> e(n2, 0.0L);
        for (std::size_t k = 0; k < n2; ++k) {
            if (k == i) continue;
            long double dot = 0.0L;
            for (std::size_t t = 0; t < d; ++t)
                dot += static_cast<long double>(z.at2(i, t)) * z.at2(k, t);
            e[k] = std::exp(dot / static_cast<long double>(tau));
            denom += e[k];
        }
        long double inner = 0.0L;
        for (std::size_t j = 0; j < n2; ++j)
            if (j != i && labels[j] == labels[i]) inner += std::log(e[j] / denom);
        total += coeff * inner;
    }
    return static_cast<double>(total);
}

/// AUC by exhaustive pair counting, ties worth one half.
inline double auc_pair_count_oracle(const std::vector<double>& scores,
                                    const std::vector<int>& labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

}  // namespace oracles
