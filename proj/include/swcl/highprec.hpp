#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "swcl/contrastive.hpp"
#include "swcl/labeler.hpp"
#include "swcl/net.hpp"
#include "swcl/tensor.hpp"

namespace swcl::hp {

// Value-only forward paths in long double for the central-difference oracle.
// Parameters and inputs stay production doubles; only the probe arithmetic
// runs at extended precision, which keeps the finite-difference noise floor
// (~ulp(loss)/eps in double) far below the 1e-5 gate at eps=1e-6. Kept as a
// separate transcription on purpose: the checker's oracle should not share
// the code path it is checking.

using LD = long double;

struct LTensor {
    std::vector<std::size_t> shape;
    std::vector<LD> data;

    std::size_t extent(std::size_t i) const { return shape[i]; }
    std::size_t size() const { return data.size(); }
    LD& at3(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * shape[1] + y) * shape[2] + x];
    }
    LD at3(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * shape[1] + y) * shape[2] + x];
    }
};

inline LTensor widen(const Tensor& t) {
    LTensor out;
    out.shape = t.shape();
    out.data.assign(t.data(), t.data() + t.size());
    return out;
}

inline LTensor conv2d(const LTensor& input, const LTensor& kernel, std::size_t stride,
                      std::size_t pad) {
    const std::size_t cin = input.extent(0), h = input.extent(1), w = input.extent(2);
    const std::size_t cout = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
    LTensor out;
    out.shape = {cout, ho, wo};
    out.data.assign(cout * ho * wo, 0.0L);
    for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                LD acc = 0.0L;
                const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) -
                                          static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) -
                                          static_cast<std::ptrdiff_t>(pad);
                for (std::size_t ic = 0; ic < cin; ++ic)
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ky);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kx);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += input.data[(ic * h + iy) * w + ix] *
                                   kernel.data[((oc * cin + ic) * kh + ky) * kw + kx];
                        }
                    }
                out.data[(oc * ho + oy) * wo + ox] = acc;
            }
    return out;
}

inline std::vector<LD> trunk_embed(const NetworkParams& params, const TrunkConfig& cfg,
                                   const Tensor& image) {
    LTensor x = widen(image);
    for (LD& v : x.data) v = 2.0L * v - 1.0L;  // same centering as trunk_forward
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        const LTensor kernel = widen(params.at(trunk_layer_name(i, "weight")));
        const Tensor& bias = params.at(trunk_layer_name(i, "bias"));
        LTensor pre = conv2d(x, kernel, cfg.stride, cfg.pad);
        const std::size_t hw = pre.extent(1) * pre.extent(2);
        for (std::size_t c = 0; c < pre.extent(0); ++c)
            for (std::size_t j = 0; j < hw; ++j) {
                LD& v = pre.data[c * hw + j];
                v += static_cast<LD>(bias[c]);
                if (v < 0.0L) v = 0.0L;  // relu
            }
        x = std::move(pre);
    }
    // gap
    const std::size_t k = x.extent(0), hw = x.extent(1) * x.extent(2);
    std::vector<LD> h(k, 0.0L);
    for (std::size_t c = 0; c < k; ++c) {
        LD acc = 0.0L;
        for (std::size_t j = 0; j < hw; ++j) acc += x.data[c * hw + j];
        h[c] = acc / static_cast<LD>(hw);
    }
    return h;
}

inline std::vector<LD> linear_vec(const std::vector<LD>& x, const Tensor& w, const Tensor& b) {
    const std::size_t dout = w.extent(0), din = w.extent(1);
    std::vector<LD> out(dout);
    for (std::size_t r = 0; r < dout; ++r) {
        LD acc = static_cast<LD>(b[r]);
        for (std::size_t c = 0; c < din; ++c) acc += static_cast<LD>(w.at2(r, c)) * x[c];
        out[r] = acc;
    }
    return out;
}

inline std::vector<LD> encoder_projection(const NetworkParams& params,
                                          const EncoderConfig& cfg, const Tensor& image) {
    std::vector<LD> h = trunk_embed(params, cfg.trunk, image);
    std::vector<LD> f1 = linear_vec(h, params.at("proj.fc1.weight"), params.at("proj.fc1.bias"));
    for (LD& v : f1)
        if (v < 0.0L) v = 0.0L;
    std::vector<LD> z = linear_vec(f1, params.at("proj.fc2.weight"), params.at("proj.fc2.bias"));
    if (cfg.normalize_z) {
        LD norm = 0.0L;
        for (LD v : z) norm += v * v;
        norm = std::sqrt(norm);
        for (LD& v : z) v /= norm;
    }
    return z;
}

/// Multi-label supcon value on long-double rows.
inline LD supcon_value(const std::vector<std::vector<LD>>& z,
                       const std::vector<LabelTuple>& labels, double tau) {
    const std::size_t n = z.size();
    LD total = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t npos = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) ++npos;
        if (npos == 0) continue;
        LD m = -1e300L;
        std::vector<LD> s(n, 0.0L);
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i) continue;
            LD dot = 0.0L;
            for (std::size_t t = 0; t < z[i].size(); ++t) dot += z[i][t] * z[k][t];
            s[k] = dot / static_cast<LD>(tau);
            if (s[k] > m) m = s[k];
        }
        LD denom = 0.0L;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) denom += std::exp(s[k] - m);
        const LD lse = m + std::log(denom);
        const LD inv_pos = 1.0L / static_cast<LD>(npos);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) total += inv_pos * (lse - s[j]);
    }
    return total;
}

/// Loss of the full encoder + supcon objective for fixed views, as a function
/// of the (double) parameters, evaluated in long double.
inline LD encoder_supcon_value(const NetworkParams& params, const EncoderConfig& cfg,
                               const std::vector<Tensor>& views,
                               const std::vector<LabelTuple>& labels, double tau) {
    std::vector<std::vector<LD>> z;
    z.reserve(views.size());
    for (const Tensor& v : views) z.push_back(encoder_projection(params, cfg, v));
    return supcon_value(z, labels, tau);
}

/// S4L objective (CE over labeled views + w * batch-hard triplet over all
/// views) in long double.
inline LD s4l_value(const std::vector<LabeledView>& labeled,
                    const std::vector<UnlabeledView>& unlabeled, const NetworkParams& params,
                    const TrunkConfig& trunk, const S4LConfig& cfg) {
    const std::size_t n = labeled.size() + unlabeled.size();
    std::vector<std::vector<LD>> emb(n);
    std::vector<int> ids(n);
    LD ce = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor& px =
            i < labeled.size() ? labeled[i].pixels : unlabeled[i - labeled.size()].pixels;
        emb[i] = trunk_embed(params, trunk, px);
        ids[i] = i < labeled.size() ? labeled[i].instance
                                    : unlabeled[i - labeled.size()].instance;
        if (i < labeled.size()) {
            const std::vector<LD> logits =
                linear_vec(emb[i], params.at("head.weight"), params.at("head.bias"));
            const LD m = std::max(logits[0], logits[1]);
            const LD lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
            ce += lse - logits[static_cast<std::size_t>(labeled[i].label)];
        }
        // triplet embeddings are unit-normalized, matching s4l_loss
        LD norm = 0.0L;
        for (LD v : emb[i]) norm += v * v;
        norm = std::sqrt(norm);
        for (LD& v : emb[i]) v /= norm;
    }
    ce /= static_cast<LD>(labeled.size());

    LD triplet = 0.0L;
    std::vector<LD> dist(n * n, 0.0L);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            LD s = 0.0L;
            for (std::size_t k = 0; k < emb[i].size(); ++k) {
                const LD d = emb[i][k] - emb[j][k];
                s += d * d;
            }
            dist[i * n + j] = dist[j * n + i] = std::sqrt(s);
        }
    for (std::size_t a = 0; a < n; ++a) {
        LD d_ap = -1.0L, d_an = 0.0L;
        bool has_neg = false;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == a) continue;
            if (ids[j] == ids[a]) {
                d_ap = std::max(d_ap, dist[a * n + j]);
            } else if (!has_neg || dist[a * n + j] < d_an) {
                d_an = dist[a * n + j];
                has_neg = true;
            }
        }
        const LD arg = d_ap - d_an + static_cast<LD>(cfg.soft_margin);
        if (cfg.triplet_form == TripletForm::softplus_margin)
            triplet += arg > 0.0L ? arg + std::log1p(std::exp(-arg)) : std::log1p(std::exp(arg));
        else
            triplet += std::max(0.0L, arg);
    }
    triplet /= static_cast<LD>(n);
    return ce + static_cast<LD>(cfg.w) * triplet;
}

}  // namespace swcl::hp
