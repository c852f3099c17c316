#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "swcl/ops.hpp"
#include "swcl/rng.hpp"
#include "swcl/tensor.hpp"

namespace swcl {

/// Bilinear resize of [C,H,W] to [C,oh,ow] with corner-aligned sampling, so
/// a same-size resize is the exact identity.
inline Tensor resize_bilinear(const Tensor& img, std::size_t oh, std::size_t ow) {
    const std::size_t c = img.extent(0), h = img.extent(1), w = img.extent(2);
    if (oh == h && ow == w) return img;
    Tensor out({c, oh, ow});
    const double sy = oh > 1 ? static_cast<double>(h - 1) / (oh - 1) : 0.0;
    const double sx = ow > 1 ? static_cast<double>(w - 1) / (ow - 1) : 0.0;
    for (std::size_t y = 0; y < oh; ++y) {
        const double fy = y * sy;
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (std::size_t x = 0; x < ow; ++x) {
            const double fx = x * sx;
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v = (1 - wy) * ((1 - wx) * img.at3(ch, y0, x0) +
                                             wx * img.at3(ch, y0, x1)) +
                                 wy * ((1 - wx) * img.at3(ch, y1, x0) +
                                       wx * img.at3(ch, y1, x1));
                out.at3(ch, y, x) = v;
            }
        }
    }
    return out;
}

inline Tensor crop_chw(const Tensor& img, std::size_t row, std::size_t col, std::size_t side) {
    const std::size_t c = img.extent(0);
    Tensor out({c, side, side});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x)
                out.at3(ch, y, x) = img.at3(ch, row + y, col + x);
    return out;
}

struct AugmentConfig {
    double crop_frac = 0.875;   // random crop to this fraction of the side, resize back
    double jitter = 0.10;       // per-channel brightness/contrast jitter strength
    double gray_p = 0.0;
    double blur_p = 0.0;
    double solarize_p = 0.0;
    double flip_p = 0.0;

    /// Contrastive-pretraining scheme. Horizontal flip stays off by default:
    /// position labels distinguish left from right crops.
    static AugmentConfig pretrain_default() {
        AugmentConfig a;
        a.gray_p = 0.2;
        a.blur_p = 0.5;
        a.solarize_p = 0.1;
        a.flip_p = 0.0;
        return a;
    }

    /// Pseudo-labeler training scheme: crop + flip + color jitter.
    static AugmentConfig labeler_default() {
        AugmentConfig a;
        a.flip_p = 0.5;
        return a;
    }

    static AugmentConfig identity() {
        AugmentConfig a;
        a.crop_frac = 1.0;
        a.jitter = 0.0;
        return a;
    }
};

/// One augmented view. Draw order is fixed; every probabilistic branch
/// consumes its coin flip whether or not it fires, so downstream draws stay
/// aligned across configurations.
inline Tensor augment_view(const Tensor& patch, const AugmentConfig& cfg, RngStream& rng) {
    const std::size_t c = patch.extent(0), side = patch.extent(1);
    Tensor view = patch;

    // random crop + resize back
    const std::size_t crop_side =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.crop_frac * side)));
    if (crop_side < side) {
        const std::size_t row = rng.index(side - crop_side + 1);
        const std::size_t col = rng.index(side - crop_side + 1);
        view = resize_bilinear(crop_chw(view, row, col, crop_side), side, side);
    } else {
        rng.index(1);
        rng.index(1);
    }

    if (rng.bernoulli(cfg.flip_p)) view = flip_horizontal(view);

    // per-channel contrast about the channel mean, plus brightness shift
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double contrast = 1.0 + rng.uniform(-cfg.jitter, cfg.jitter);
        const double bright = rng.uniform(-cfg.jitter, cfg.jitter);
        double mean = 0.0;
        double* p = view.data() + ch * side * side;
        for (std::size_t i = 0; i < side * side; ++i) mean += p[i];
        mean /= static_cast<double>(side * side);
        for (std::size_t i = 0; i < side * side; ++i)
            p[i] = std::clamp((p[i] - mean) * contrast + mean + bright, 0.0, 1.0);
    }

    if (rng.bernoulli(cfg.gray_p)) {
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) {
                const double luma = 0.299 * view.at3(0, y, x) + 0.587 * view.at3(1, y, x) +
                                    0.114 * view.at3(2, y, x);
                for (std::size_t ch = 0; ch < c; ++ch) view.at3(ch, y, x) = luma;
            }
    }

    {
        const bool do_blur = rng.bernoulli(cfg.blur_p);
        const double sigma = rng.uniform(0.3, 0.9);
        if (do_blur) {
            double k[3];
            k[0] = std::exp(-1.0 / (2.0 * sigma * sigma));
            k[1] = 1.0;
            k[2] = k[0];
            const double ksum = k[0] + k[1] + k[2];
            Tensor blurred(view.shape());
            auto clampi = [&](int v) {
                return static_cast<std::size_t>(std::clamp(v, 0, static_cast<int>(side) - 1));
            };
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < side; ++y)
                    for (std::size_t x = 0; x < side; ++x) {
                        double acc = 0.0;
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx)
                                acc += k[dy + 1] * k[dx + 1] *
                                       view.at3(ch, clampi(static_cast<int>(y) + dy),
                                                clampi(static_cast<int>(x) + dx));
                        blurred.at3(ch, y, x) = acc / (ksum * ksum);
                    }
            view = std::move(blurred);
        }
    }

    if (rng.bernoulli(cfg.solarize_p)) {
        for (std::size_t i = 0; i < view.size(); ++i)
            if (view[i] >= 0.5) view[i] = 1.0 - view[i];
    }

    return view;
}

/// Two independently augmented views of one patch.
inline std::pair<Tensor, Tensor> augment_patch(const Tensor& patch, const AugmentConfig& cfg,
                                               RngStream& rng) {
    if (patch.extent(1) < 8)
        throw ValidationError("augment_patch: patch side must be >= 8");
    Tensor a = augment_view(patch, cfg, rng);
    Tensor b = augment_view(patch, cfg, rng);
    return {std::move(a), std::move(b)};
}

}  // namespace swcl
