#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "swcl/augment.hpp"
#include "swcl/metrics.hpp"
#include "swcl/net.hpp"
#include "swcl/synth.hpp"

namespace swcl {

// Semi-supervised pseudo-labeler: cross-entropy on labeled views plus a
// weighted self-supervised term on all views, realized as batch-hard triplet
// instance discrimination (views of one source image share an instance id).

enum class TripletForm { softplus_margin, hinge };

struct S4LConfig {
    double w = 1.0;
    double soft_margin = 0.5;
    TripletForm triplet_form = TripletForm::softplus_margin;
    std::size_t views_per_image = 4;
    double base_lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t batch_images = 8;  // half labeled, half unlabeled per step
    std::size_t epochs = 18;
    std::uint64_t seed = 42;
    double holdout_fraction = 0.25;
    AugmentConfig augment = AugmentConfig::labeler_default();

    void validate() const {
        if (w < 0.0) throw ValidationError("S4LConfig: w must be non-negative");
        if (views_per_image < 2)
            throw ValidationError("S4LConfig: views_per_image must be >= 2");
        if (batch_images < 2) throw ValidationError("S4LConfig: batch_images must be >= 2");
    }
};

inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Batch-hard triplet loss over a batch of embeddings: per anchor, the
/// farthest same-id embedding and the nearest other-id embedding form the
/// triplet; the margin sits inside a softplus (default) or a hinge.
/// If `grad` is non-null it receives d(loss)/d(embeddings), accumulated.
inline double batch_hard_triplet(const Tensor& emb, const std::vector<int>& instance_ids,
                                 double margin, TripletForm form = TripletForm::softplus_margin,
                                 Tensor* grad = nullptr) {
    if (emb.rank() != 2) throw ValidationError("batch_hard_triplet: embeddings must be [B,D]");
    const std::size_t b = emb.extent(0), d = emb.extent(1);
    if (instance_ids.size() != b)
        throw ValidationError("batch_hard_triplet: id count mismatch");
    std::set<int> distinct(instance_ids.begin(), instance_ids.end());
    if (distinct.size() < 2)
        throw ValidationError("batch_hard_triplet: need >= 2 distinct instance ids, got " +
                              std::to_string(distinct.size()));
    for (int id : distinct) {
        const auto cnt = std::count(instance_ids.begin(), instance_ids.end(), id);
        if (cnt < 2)
            throw ValidationError("batch_hard_triplet: anchor id " + std::to_string(id) +
                                  " has no positive (appears once)");
    }

    std::vector<double> dist(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = i + 1; j < b; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = emb.at2(i, k) - emb.at2(j, k);
                s += diff * diff;
            }
            dist[i * b + j] = dist[j * b + i] = std::sqrt(s);
        }

    double total = 0.0;
    for (std::size_t a = 0; a < b; ++a) {
        std::size_t hardest_pos = a, hardest_neg = b;
        double d_ap = -1.0, d_an = 0.0;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == a) continue;
            if (instance_ids[j] == instance_ids[a]) {
                if (dist[a * b + j] > d_ap) {
                    d_ap = dist[a * b + j];
                    hardest_pos = j;
                }
            } else if (hardest_neg == b || dist[a * b + j] < d_an) {
                d_an = dist[a * b + j];
                hardest_neg = j;
            }
        }
        const double arg = d_ap - d_an + margin;
        double loss_a, darg;
        if (form == TripletForm::softplus_margin) {
            loss_a = softplus(arg);
            darg = 1.0 / (1.0 + std::exp(-arg));
        } else {
            loss_a = std::max(0.0, arg);
            darg = arg > 0.0 ? 1.0 : 0.0;
        }
        total += loss_a;
        if (grad && darg != 0.0) {
            const double scale = darg / static_cast<double>(b);
            // d d(a,p)/d a = (a-p)/d(a,p); guard zero distances
            const double inv_ap = d_ap > 1e-12 ? 1.0 / d_ap : 0.0;
            const double inv_an = d_an > 1e-12 ? 1.0 / d_an : 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double ap = (emb.at2(a, k) - emb.at2(hardest_pos, k)) * inv_ap;
                const double an = (emb.at2(a, k) - emb.at2(hardest_neg, k)) * inv_an;
                grad->at2(a, k) += scale * (ap - an);
                grad->at2(hardest_pos, k) -= scale * ap;
                grad->at2(hardest_neg, k) += scale * an;
            }
        }
    }
    return total / static_cast<double>(b);
}

struct LabeledView {
    Tensor pixels;
    int label = 0;  // 0 normal, 1 abnormal
    int instance = 0;
};

struct UnlabeledView {
    Tensor pixels;
    int instance = 0;
};

struct S4LBatchResult {
    double loss = 0.0;
    double ce = 0.0;
    double triplet = 0.0;
    Gradients grads;
};

/// S4L objective on one batch of augmented views: CE averaged over labeled
/// views plus w times the triplet term over all views (labeled included).
inline S4LBatchResult s4l_loss(const std::vector<LabeledView>& labeled,
                               const std::vector<UnlabeledView>& unlabeled,
                               const NetworkParams& params, const TrunkConfig& trunk,
                               const S4LConfig& cfg) {
    if (labeled.empty()) throw ValidationError("s4l_loss: labeled batch is empty");
    const std::size_t n_views = labeled.size() + unlabeled.size();

    std::vector<int> ids;
    ids.reserve(n_views);
    for (const auto& v : labeled) ids.push_back(v.instance);
    for (const auto& v : unlabeled) ids.push_back(v.instance);
    if (std::set<int>(ids.begin(), ids.end()).size() < 2)
        throw ValidationError("s4l_loss: batch holds a single distinct image; "
                              "triplet term undefined");

    S4LBatchResult out;
    out.grads = zeros_like(params);

    // triplet mining runs on unit-norm embeddings; mining on raw h admits a
    // trivial minimum where the network shrinks every embedding to zero
    std::vector<LabelerForward> fwd(n_views);
    const std::size_t k = trunk.out_channels();
    Tensor emb({n_views, k});
    for (std::size_t i = 0; i < n_views; ++i) {
        const Tensor& px =
            i < labeled.size() ? labeled[i].pixels : unlabeled[i - labeled.size()].pixels;
        fwd[i] = labeler_forward(params, trunk, px);
        const Tensor z = l2_normalize(fwd[i].h);
        for (std::size_t j = 0; j < k; ++j) emb.at2(i, j) = z[j];
    }

    // CE over labeled views
    std::vector<Tensor> dlogits(n_views);
    const double inv_labeled = 1.0 / static_cast<double>(labeled.size());
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        Tensor dl({2});
        out.ce += cross_entropy2(fwd[i].logits, labeled[i].label, &dl) * inv_labeled;
        for (std::size_t j = 0; j < 2; ++j) dl[j] *= inv_labeled;
        dlogits[i] = std::move(dl);
    }

    // triplet over all views
    Tensor demb({n_views, k});
    out.triplet = batch_hard_triplet(emb, ids, cfg.soft_margin, cfg.triplet_form,
                                     cfg.w != 0.0 ? &demb : nullptr);
    out.loss = out.ce + cfg.w * out.triplet;

    for (std::size_t i = 0; i < n_views; ++i) {
        Tensor dh;
        if (cfg.w != 0.0) {
            Tensor dz({k});
            for (std::size_t j = 0; j < k; ++j) dz[j] = cfg.w * demb.at2(i, j);
            dh = l2_normalize_backward(fwd[i].h, dz);
        }
        labeler_backward(params, trunk, fwd[i], dlogits[i], dh, out.grads);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CAM: M_c(i,j) = sum_k w_k^c f_k(i,j), no bias term, then a pointwise
// two-class softmax turns (M_a, M_n) into the normalized abnormality map.
// ---------------------------------------------------------------------------

inline Tensor compute_cam(const Tensor& fmaps, const Tensor& head_weight, int cls) {
    if (fmaps.rank() != 3) throw ValidationError("compute_cam: fmaps must be [K,H,W]");
    if (head_weight.rank() != 2 || head_weight.extent(1) != fmaps.extent(0))
        throw ValidationError("compute_cam: head weight " + head_weight.shape_str() +
                              " does not match fmaps " + fmaps.shape_str());
    if (cls < 0 || static_cast<std::size_t>(cls) >= head_weight.extent(0))
        throw ValidationError("compute_cam: class index out of range");
    const std::size_t k = fmaps.extent(0), h = fmaps.extent(1), w = fmaps.extent(2);
    Tensor cam({h, w});
    for (std::size_t ch = 0; ch < k; ++ch) {
        const double wc = head_weight.at2(static_cast<std::size_t>(cls), ch);
        const double* f = fmaps.data() + ch * h * w;
        for (std::size_t i = 0; i < h * w; ++i) cam[i] += wc * f[i];
    }
    return cam;
}

/// Pointwise softmax of the abnormal map against the normal map. Entries are
/// clamped to the open interval (0,1) so extreme logit gaps cannot round to
/// an exact 0 or 1.
inline Tensor normalize_cam(const Tensor& cam_abnormal, const Tensor& cam_normal) {
    if (!cam_abnormal.same_shape(cam_normal))
        throw ValidationError("normalize_cam: shape mismatch " + cam_abnormal.shape_str() +
                              " vs " + cam_normal.shape_str());
    Tensor out(cam_abnormal.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double p = softmax_pair(cam_abnormal[i], cam_normal[i]).first;
        out[i] = std::clamp(p, 1e-15, 1.0 - 1e-15);
    }
    return out;
}

/// Full CAM path for one image: trunk forward, abnormal/normal CAMs, softmax.
inline Tensor extract_normalized_cam(const NetworkParams& params, const TrunkConfig& trunk,
                                     const Tensor& image) {
    const Tensor fmaps = trunk_forward(params, trunk, image, nullptr);
    const Tensor& hw = params.at("head.weight");
    return normalize_cam(compute_cam(fmaps, hw, 1), compute_cam(fmaps, hw, 0));
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct LabelerTrainResult {
    NetworkParams params;
    double holdout_auc = 0.5;
    std::vector<std::array<double, 3>> epoch_losses;  // loss, ce, triplet
    std::size_t holdout_images = 0;
};

inline double labeler_abnormal_score(const NetworkParams& params, const TrunkConfig& trunk,
                                     const Tensor& image) {
    const LabelerForward f = labeler_forward(params, trunk, image);
    return softmax_pair(f.logits[1], f.logits[0]).first;
}

/// Trains the pseudo-labeler with SGD + Nesterov momentum and the 70/80/90%
/// step-decay schedule. The labeled set is split into train/holdout by
/// patient; hold-out AUC-ROC is computed on full (un-augmented) images.
inline LabelerTrainResult train_labeler(const std::vector<ImageRecord>& labeled,
                                        const std::vector<ImageRecord>& unlabeled,
                                        const TrunkConfig& trunk, const S4LConfig& cfg) {
    cfg.validate();
    if (labeled.empty()) throw ValidationError("train_labeler: labeled set is empty");
    const std::size_t s = labeled.front().pixels.extent(1);
    if (trunk.out_extent(s) < 2)
        throw ValidationError("train_labeler: final spatial extent < 2x2 at S=" +
                              std::to_string(s));

    // patient-level holdout split (never by eye)
    std::vector<std::string> patients;
    for (const auto& r : labeled) patients.push_back(r.patient_id);
    std::sort(patients.begin(), patients.end());
    patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
    RngStream split_rng(cfg.seed, "labeler-holdout-split");
    split_rng.shuffle(patients);
    const std::size_t n_holdout = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.holdout_fraction * patients.size())));
    std::set<std::string> holdout_patients(patients.end() - static_cast<std::ptrdiff_t>(n_holdout),
                                           patients.end());

    std::vector<std::size_t> train_idx, holdout_idx;
    for (std::size_t i = 0; i < labeled.size(); ++i)
        (holdout_patients.count(labeled[i].patient_id) ? holdout_idx : train_idx).push_back(i);
    if (train_idx.empty())
        throw ValidationError("train_labeler: no labeled patients left after holdout split");

    LabelerTrainResult out;
    out.params = init_labeler_params(trunk, cfg.seed);
    out.holdout_images = holdout_idx.size();

    SgdNesterov opt;
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;

    const std::size_t lab_per_step = std::max<std::size_t>(1, cfg.batch_images / 2);
    const std::size_t unlab_per_step =
        unlabeled.empty() ? 0 : cfg.batch_images - lab_per_step;
    const std::size_t steps_per_epoch = std::max<std::size_t>(
        1, (train_idx.size() + unlabeled.size() + cfg.batch_images - 1) / cfg.batch_images);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream erng(cfg.seed, "labeler-epoch:" + std::to_string(epoch));
        std::vector<std::size_t> lab_order = train_idx;
        erng.shuffle(lab_order);
        std::vector<std::size_t> unlab_order(unlabeled.size());
        std::iota(unlab_order.begin(), unlab_order.end(), 0);
        erng.shuffle(unlab_order);

        const double lr = step_decay_lr(cfg.base_lr, epoch, cfg.epochs);
        double epoch_loss = 0.0, epoch_ce = 0.0, epoch_tri = 0.0;
        std::size_t lab_cursor = 0, unlab_cursor = 0;

        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            std::vector<LabeledView> lviews;
            std::vector<UnlabeledView> uviews;
            int next_instance = 0;
            for (std::size_t i = 0; i < lab_per_step; ++i) {
                const ImageRecord& r = labeled[lab_order[lab_cursor++ % lab_order.size()]];
                const int inst = next_instance++;
                for (std::size_t v = 0; v < cfg.views_per_image; ++v)
                    lviews.push_back({augment_view(r.pixels, cfg.augment, erng),
                                      r.abnormal ? 1 : 0, inst});
            }
            for (std::size_t i = 0; i < unlab_per_step; ++i) {
                const ImageRecord& r = unlabeled[unlab_order[unlab_cursor++ % unlab_order.size()]];
                const int inst = next_instance++;
                for (std::size_t v = 0; v < cfg.views_per_image; ++v)
                    uviews.push_back({augment_view(r.pixels, cfg.augment, erng), inst});
            }

            S4LBatchResult r = s4l_loss(lviews, uviews, out.params, trunk, cfg);
            if (!std::isfinite(r.loss))
                throw NumericalError("train_labeler: non-finite loss at epoch " +
                                     std::to_string(epoch) + " step " + std::to_string(step));
            opt.step(out.params, r.grads, lr);
            epoch_loss += r.loss;
            epoch_ce += r.ce;
            epoch_tri += r.triplet;
        }
        const double inv = 1.0 / static_cast<double>(steps_per_epoch);
        out.epoch_losses.push_back({epoch_loss * inv, epoch_ce * inv, epoch_tri * inv});
    }

    // hold-out AUC
    std::vector<double> scores;
    std::vector<int> ys;
    for (std::size_t i : holdout_idx) {
        scores.push_back(labeler_abnormal_score(out.params, trunk, labeled[i].pixels));
        ys.push_back(labeled[i].abnormal ? 1 : 0);
    }
    bool both = false;
    if (!ys.empty()) {
        const int first = ys.front();
        for (int y : ys)
            if (y != first) both = true;
    }
    out.holdout_auc = both ? auc_roc(scores, ys) : 0.5;
    return out;
}

}  // namespace swcl
