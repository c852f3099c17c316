#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "swcl/ops.hpp"
#include "swcl/rng.hpp"
#include "swcl/tensor.hpp"

namespace swcl {

// ---------------------------------------------------------------------------
// Shared conv trunk: three (conv stride 2 + relu) blocks. At S=64 the feature
// maps come out 8x8, which the patch pipeline crops into five 4x4 regions.
// ---------------------------------------------------------------------------

struct TrunkConfig {
    std::size_t in_channels = 3;
    std::vector<std::size_t> channels = {8, 16, 16};
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t pad = 1;

    std::size_t out_channels() const { return channels.back(); }

    std::size_t out_extent(std::size_t s) const {
        for (std::size_t i = 0; i < channels.size(); ++i)
            s = (s + 2 * pad - kernel) / stride + 1;
        return s;
    }
};

/// He-uniform weight init (limit sqrt(6/fan_in)), zero biases. Each tensor
/// draws from its own (seed, name) stream so initialization is
/// order-independent.
inline Tensor he_uniform(const std::vector<std::size_t>& shape, std::size_t fan_in,
                         std::uint64_t seed, const std::string& name) {
    RngStream rng(seed, "init:" + name);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

inline std::string trunk_layer_name(std::size_t i, const char* leaf) {
    return "trunk.conv" + std::to_string(i + 1) + "." + leaf;
}

inline void init_trunk_params(NetworkParams& params, const TrunkConfig& cfg,
                              std::uint64_t seed) {
    std::size_t cin = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        const std::size_t cout = cfg.channels[i];
        const std::string wname = trunk_layer_name(i, "weight");
        params[wname] = he_uniform({cout, cin, cfg.kernel, cfg.kernel},
                                   cin * cfg.kernel * cfg.kernel, seed, wname);
        params[trunk_layer_name(i, "bias")] = Tensor({cout});
        cin = cout;
    }
}

struct TrunkCache {
    Tensor input;              // centered input actually fed to conv1
    std::vector<Tensor> pre;   // conv+bias outputs, before relu
    std::vector<Tensor> post;  // after relu
};

/// Pixels arrive in [0,1]; the trunk sees them centered to [-1,1]. Keeping
/// the shift inside the model makes every consumer (training, CAMs, probes)
/// agree and keeps first-layer activations zero-mean.
inline Tensor center_input(const Tensor& image) {
    Tensor x(image.shape());
    for (std::size_t i = 0; i < image.size(); ++i) x[i] = 2.0 * image[i] - 1.0;
    return x;
}

inline Tensor trunk_forward(const NetworkParams& params, const TrunkConfig& cfg,
                            const Tensor& image, TrunkCache* cache) {
    Tensor x = center_input(image);
    if (cache) cache->input = x;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        Tensor pre = conv2d(x, params.at(trunk_layer_name(i, "weight")), cfg.stride, cfg.pad);
        const Tensor& bias = params.at(trunk_layer_name(i, "bias"));
        const std::size_t hw = pre.extent(1) * pre.extent(2);
        for (std::size_t c = 0; c < pre.extent(0); ++c) {
            double* p = pre.data() + c * hw;
            for (std::size_t j = 0; j < hw; ++j) p[j] += bias[c];
        }
        Tensor post = relu(pre);
        if (cache) {
            cache->pre.push_back(pre);
            cache->post.push_back(post);
        }
        x = std::move(post);
    }
    return x;
}

/// Backward through the trunk; accumulates parameter gradients into `grads`.
inline void trunk_backward(const NetworkParams& params, const TrunkConfig& cfg,
                           const TrunkCache& cache, const Tensor& grad_fmaps,
                           Gradients& grads) {
    Tensor g = grad_fmaps;
    for (std::size_t ri = cfg.channels.size(); ri-- > 0;) {
        g = relu_backward(cache.pre[ri], g);
        // bias grad: sum over spatial
        Tensor& gb = grads.at(trunk_layer_name(ri, "bias"));
        const std::size_t hw = g.extent(1) * g.extent(2);
        for (std::size_t c = 0; c < g.extent(0); ++c) {
            double acc = 0.0;
            const double* p = g.data() + c * hw;
            for (std::size_t j = 0; j < hw; ++j) acc += p[j];
            gb[c] += acc;
        }
        const Tensor& in = ri == 0 ? cache.input : cache.post[ri - 1];
        const Tensor& w = params.at(trunk_layer_name(ri, "weight"));
        Tensor grad_in(in.shape());
        conv2d_backward(in, w, cfg.stride, cfg.pad, g, &grad_in,
                        &grads.at(trunk_layer_name(ri, "weight")));
        g = std::move(grad_in);
    }
}

// ---------------------------------------------------------------------------
// LabelerNet: trunk + gap + linear head K->2. Head row 0 is the normal
// class, row 1 the abnormal class.
// ---------------------------------------------------------------------------

inline NetworkParams init_labeler_params(const TrunkConfig& cfg, std::uint64_t seed) {
    NetworkParams params;
    init_trunk_params(params, cfg, seed);
    const std::size_t k = cfg.out_channels();
    params["head.weight"] = he_uniform({2, k}, k, seed, "head.weight");
    params["head.bias"] = Tensor({2});
    return params;
}

struct LabelerForward {
    TrunkCache trunk;
    Tensor fmaps;   // [K,H',W']
    Tensor h;       // gap embedding [K]
    Tensor logits;  // [2]
};

inline LabelerForward labeler_forward(const NetworkParams& params, const TrunkConfig& cfg,
                                      const Tensor& image) {
    LabelerForward f;
    f.fmaps = trunk_forward(params, cfg, image, &f.trunk);
    f.h = gap(f.fmaps);
    f.logits = linear(f.h, params.at("head.weight"), params.at("head.bias"));
    return f;
}

/// Backward from (dlogits, dh); either may be empty to skip that path.
inline void labeler_backward(const NetworkParams& params, const TrunkConfig& cfg,
                             const LabelerForward& f, const Tensor& dlogits,
                             const Tensor& dh_extra, Gradients& grads) {
    Tensor dh({f.h.extent(0)});
    if (!dlogits.empty())
        linear_backward(f.h, params.at("head.weight"), dlogits, &dh,
                        &grads.at("head.weight"), &grads.at("head.bias"));
    if (!dh_extra.empty())
        for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh_extra[i];
    Tensor dfmaps = gap_backward(dh, f.fmaps.extent(1), f.fmaps.extent(2));
    trunk_backward(params, cfg, f.trunk, dfmaps, grads);
}

// ---------------------------------------------------------------------------
// EncoderNet: trunk + gap -> h, then 2-layer MLP projection head and
// l2 normalization. z is what the contrastive loss sees.
// ---------------------------------------------------------------------------

struct EncoderConfig {
    TrunkConfig trunk;
    std::size_t proj_dim = 16;  // output dim of the projection head
    bool normalize_z = true;    // ablation flag; tau assumes unit vectors

    std::size_t embed_dim() const { return trunk.out_channels(); }
};

inline NetworkParams init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed) {
    NetworkParams params;
    init_trunk_params(params, cfg.trunk, seed);
    const std::size_t k = cfg.embed_dim();
    params["proj.fc1.weight"] = he_uniform({k, k}, k, seed, "proj.fc1.weight");
    params["proj.fc1.bias"] = Tensor({k});
    params["proj.fc2.weight"] = he_uniform({cfg.proj_dim, k}, k, seed, "proj.fc2.weight");
    params["proj.fc2.bias"] = Tensor({cfg.proj_dim});
    return params;
}

struct EncoderForward {
    TrunkCache trunk;
    Tensor fmaps;
    Tensor h;         // [K] embedding used by linear probes
    Tensor fc1_pre;   // [K]
    Tensor fc1_post;  // [K]
    Tensor v;         // [d_proj] pre-normalization
    Tensor z;         // [d_proj] unit norm (when normalize_z)
};

inline EncoderForward encoder_forward(const NetworkParams& params, const EncoderConfig& cfg,
                                      const Tensor& image) {
    EncoderForward f;
    f.fmaps = trunk_forward(params, cfg.trunk, image, &f.trunk);
    f.h = gap(f.fmaps);
    f.fc1_pre = linear(f.h, params.at("proj.fc1.weight"), params.at("proj.fc1.bias"));
    f.fc1_post = relu(f.fc1_pre);
    f.v = linear(f.fc1_post, params.at("proj.fc2.weight"), params.at("proj.fc2.bias"));
    f.z = cfg.normalize_z ? l2_normalize(f.v) : f.v;
    return f;
}

inline void encoder_backward(const NetworkParams& params, const EncoderConfig& cfg,
                             const EncoderForward& f, const Tensor& dz, Gradients& grads) {
    Tensor dv = cfg.normalize_z ? l2_normalize_backward(f.v, dz) : dz;
    Tensor dfc1_post({f.fc1_post.extent(0)});
    linear_backward(f.fc1_post, params.at("proj.fc2.weight"), dv, &dfc1_post,
                    &grads.at("proj.fc2.weight"), &grads.at("proj.fc2.bias"));
    Tensor dfc1_pre = relu_backward(f.fc1_pre, dfc1_post);
    Tensor dh({f.h.extent(0)});
    linear_backward(f.h, params.at("proj.fc1.weight"), dfc1_pre, &dh,
                    &grads.at("proj.fc1.weight"), &grads.at("proj.fc1.bias"));
    Tensor dfmaps = gap_backward(dh, f.fmaps.extent(1), f.fmaps.extent(2));
    trunk_backward(params, cfg.trunk, f.trunk, dfmaps, grads);
}

/// Embedding-only forward (linear probes, frozen encoder).
inline Tensor encoder_embed(const NetworkParams& params, const TrunkConfig& cfg,
                            const Tensor& image) {
    return gap(trunk_forward(params, cfg, image, nullptr));
}

// ---------------------------------------------------------------------------
// SGD with Nesterov momentum; one optimizer serves both training loops.
// ---------------------------------------------------------------------------

struct SgdNesterov {
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::map<std::string, Tensor> velocity;

    void step(NetworkParams& params, const Gradients& grads, double lr) {
        check_same_keys(params, grads, "SgdNesterov::step");
        for (auto& [name, p] : params) {
            const Tensor& g = grads.at(name);
            Tensor& v = velocity.try_emplace(name, Tensor(p.shape())).first->second;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = g[i] + weight_decay * p[i];
                v[i] = momentum * v[i] + gi;
                p[i] -= lr * (gi + momentum * v[i]);
            }
        }
    }
};

/// Step decay: x0.1 at 70%, 80% and 90% of the run.
inline double step_decay_lr(double base, std::size_t epoch, std::size_t total_epochs) {
    double lr = base;
    if (total_epochs == 0) return lr;
    const double f = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    if (f >= 0.7) lr *= 0.1;
    if (f >= 0.8) lr *= 0.1;
    if (f >= 0.9) lr *= 0.1;
    return lr;
}

/// Linear warmup to base over `warmup` epochs, then cosine decay to 0.
inline double warmup_cosine_lr(double base, std::size_t epoch, std::size_t total_epochs,
                               std::size_t warmup) {
    if (warmup > 0 && epoch < warmup)
        return base * static_cast<double>(epoch + 1) / static_cast<double>(warmup);
    if (total_epochs <= warmup) return base;
    const double t = static_cast<double>(epoch - warmup) /
                     static_cast<double>(total_epochs - warmup);
    return base * 0.5 * (1.0 + std::cos(3.141592653589793 * t));
}

}  // namespace swcl
