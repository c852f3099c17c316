#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "swcl/augment.hpp"
#include "swcl/contrastive.hpp"
#include "swcl/net.hpp"
#include "swcl/patchgen.hpp"

namespace swcl {

// Minibatch sampler: patches are drawn as (left, right) pairs matched on
// (patient, position), so every batch carries inter-image positives under
// the patient-constrained label set.

struct PairedSampler {
    struct Key {
        std::size_t left_idx;
        std::size_t right_idx;
    };
    std::vector<Key> keys;                   // eligible (patient, position) pairs
    std::map<std::string, int> patient_index;  // dense patient ids for label tuples

    explicit PairedSampler(const PatchManifest& manifest) {
        std::map<std::pair<std::string, int>, std::pair<std::ptrdiff_t, std::ptrdiff_t>> slots;
        for (std::size_t i = 0; i < manifest.records.size(); ++i) {
            const PatchRecord& r = manifest.records[i];
            auto key = std::make_pair(r.patient_id, static_cast<int>(r.position));
            auto& slot = slots.try_emplace(key, std::make_pair(-1, -1)).first->second;
            if (r.laterality == Laterality::left)
                slot.first = static_cast<std::ptrdiff_t>(i);
            else
                slot.second = static_cast<std::ptrdiff_t>(i);
            patient_index.try_emplace(r.patient_id, 0);
        }
        int next = 0;
        for (auto& [pid, idx] : patient_index) idx = next++;
        // patients lacking a matching counterpart patch are simply never
        // drawn, which realizes the resample-on-missing-counterpart rule
        for (const auto& [key, slot] : slots)
            if (slot.first >= 0 && slot.second >= 0)
                keys.push_back({static_cast<std::size_t>(slot.first),
                                static_cast<std::size_t>(slot.second)});
    }
};

struct MinibatchDraw {
    std::vector<std::size_t> indices;  // into manifest.records, shuffled
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // positions within `indices`
};

inline MinibatchDraw sample_minibatch(const PairedSampler& sampler, std::size_t n_patches,
                                      RngStream& rng) {
    if (n_patches == 0 || n_patches % 2 != 0)
        throw ValidationError("sample_minibatch: N must be positive and even");
    if (sampler.keys.empty())
        throw ValidationError("sample_minibatch: no patient has a matched left/right patch");

    const std::size_t n_pairs = n_patches / 2;
    std::vector<std::size_t> key_order(sampler.keys.size());
    std::iota(key_order.begin(), key_order.end(), 0);
    rng.shuffle(key_order);

    MinibatchDraw draw;
    draw.indices.reserve(n_patches);
    for (std::size_t p = 0; p < n_pairs; ++p) {
        const auto& key = sampler.keys[key_order[p % key_order.size()]];
        draw.indices.push_back(key.left_idx);
        draw.indices.push_back(key.right_idx);
    }

    // shuffle batch order after pairing, keeping the pair bookkeeping intact
    std::vector<std::size_t> perm(n_patches);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<std::size_t> shuffled(n_patches);
    std::vector<std::size_t> slot_of(n_patches);
    for (std::size_t i = 0; i < n_patches; ++i) {
        shuffled[i] = draw.indices[perm[i]];
        slot_of[perm[i]] = i;
    }
    draw.indices = std::move(shuffled);
    for (std::size_t p = 0; p < n_pairs; ++p)
        draw.pairs.emplace_back(slot_of[2 * p], slot_of[2 * p + 1]);
    return draw;
}

inline MinibatchDraw sample_minibatch(const PatchManifest& manifest, std::size_t n_patches,
                                      RngStream& rng) {
    return sample_minibatch(PairedSampler(manifest), n_patches, rng);
}

/// Label tuple for one patch under the active label set.
inline LabelTuple make_label_tuple(const PatchRecord& r, const LabelSet& labels,
                                   const std::map<std::string, int>& patient_index,
                                   double threshold) {
    LabelTuple t;
    t.reserve(labels.size());
    const bool abnormal =
        threshold >= 0.0 ? threshold_label(r.lesion_score, threshold) : r.abnormal;
    for (LabelKind k : labels) {
        switch (k) {
            case LabelKind::position: t.push_back(static_cast<int>(r.position)); break;
            case LabelKind::abnormality: t.push_back(abnormal ? 1 : 0); break;
            case LabelKind::patient: t.push_back(patient_index.at(r.patient_id)); break;
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// pretraining loop: SGD + Nesterov with linear warmup then cosine decay
// ---------------------------------------------------------------------------

struct PretrainConfig {
    EncoderConfig encoder;
    LossConfig loss;
    AugmentConfig augment = AugmentConfig::pretrain_default();
    double base_lr = 0.3;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t epochs = 40;
    std::size_t warmup_epochs = 5;
    double threshold = -1.0;  // >= 0: re-threshold abnormality labels from scores
    std::uint64_t seed = 42;
    int threads = 1;
};

struct PretrainResult {
    NetworkParams params;
    std::vector<double> epoch_loss;  // per-anchor mean
    bool trend_ok = true;            // median(last 5) < median(first 5)
};

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline PretrainResult pretrain(const PatchManifest& manifest, const PretrainConfig& cfg) {
    cfg.loss.validate();
    if (manifest.records.empty()) throw ValidationError("pretrain: empty patch manifest");
    for (const auto& r : manifest.records)
        if (r.pixels.empty())
            throw ValidationError("pretrain: patch " + r.patch_id + " has no pixel data");

    const PairedSampler sampler(manifest);
    const std::size_t n_patches = cfg.loss.batch_patches;
    const std::size_t n_views = 2 * n_patches;
    const std::size_t steps_per_epoch =
        std::max<std::size_t>(1, manifest.records.size() / std::max<std::size_t>(1, n_patches));

    PretrainResult out;
    out.params = init_encoder_params(cfg.encoder, cfg.seed);

    SgdNesterov opt;
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = warmup_cosine_lr(cfg.base_lr, epoch, cfg.epochs, cfg.warmup_epochs);
        RngStream erng(cfg.seed, "pretrain-epoch:" + std::to_string(epoch));
        double epoch_loss = 0.0;

        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const MinibatchDraw draw = sample_minibatch(sampler, n_patches, erng);

            // two augmented views per patch; per-view streams keep the result
            // independent of the forward/backward execution order
            std::vector<Tensor> views(n_views);
            std::vector<LabelTuple> labels(n_views);
            std::vector<std::uint64_t> view_seeds(n_patches);
            for (std::size_t p = 0; p < n_patches; ++p) view_seeds[p] = erng.next_u64();
            parallel_for(n_patches, cfg.threads, [&](std::size_t p) {
                const PatchRecord& rec = manifest.records[draw.indices[p]];
                RngStream vrng(view_seeds[p]);
                auto [a, b] = augment_patch(rec.pixels, cfg.augment, vrng);
                views[2 * p] = std::move(a);
                views[2 * p + 1] = std::move(b);
                const LabelTuple t =
                    make_label_tuple(rec, cfg.loss.labels, sampler.patient_index, cfg.threshold);
                labels[2 * p] = t;
                labels[2 * p + 1] = t;
            });

            std::vector<EncoderForward> fwd(n_views);
            parallel_for(n_views, cfg.threads, [&](std::size_t i) {
                fwd[i] = encoder_forward(out.params, cfg.encoder, views[i]);
            });
            const std::size_t d = cfg.encoder.proj_dim;
            Tensor z({n_views, d});
            for (std::size_t i = 0; i < n_views; ++i)
                for (std::size_t j = 0; j < d; ++j) z.at2(i, j) = fwd[i].z[j];

            const SupconResult loss = multilabel_supcon_loss(z, labels, cfg.loss.tau);
            if (!std::isfinite(loss.loss))
                throw NumericalError("pretrain: non-finite loss at epoch " +
                                     std::to_string(epoch) + " step " + std::to_string(step));
            epoch_loss += loss.loss / static_cast<double>(n_views);

            // per-view gradients, reduced in fixed view order
            std::vector<Gradients> view_grads(n_views);
            const double scale = 1.0 / static_cast<double>(n_views);
            parallel_for(n_views, cfg.threads, [&](std::size_t i) {
                Tensor dz({d});
                for (std::size_t j = 0; j < d; ++j) dz[j] = loss.grad_z.at2(i, j) * scale;
                view_grads[i] = zeros_like(out.params);
                encoder_backward(out.params, cfg.encoder, fwd[i], dz, view_grads[i]);
            });
            Gradients grads = std::move(view_grads[0]);
            for (std::size_t i = 1; i < n_views; ++i)
                for (auto& [name, g] : grads) {
                    const Tensor& vg = view_grads[i].at(name);
                    for (std::size_t k = 0; k < g.size(); ++k) g[k] += vg[k];
                }
            opt.step(out.params, grads, lr);
        }
        out.epoch_loss.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
    }

    const std::size_t k = std::min<std::size_t>(5, out.epoch_loss.size() / 2);
    if (k >= 1) {
        const std::vector<double> first(out.epoch_loss.begin(),
                                        out.epoch_loss.begin() + static_cast<std::ptrdiff_t>(k));
        const std::vector<double> last(out.epoch_loss.end() - static_cast<std::ptrdiff_t>(k),
                                       out.epoch_loss.end());
        out.trend_ok = median_of(last) < median_of(first);
    }
    return out;
}

}  // namespace swcl
