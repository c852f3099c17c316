#pragma once

#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "swcl/contrastive.hpp"
#include "swcl/eval.hpp"
#include "swcl/gradcheck.hpp"
#include "swcl/highprec.hpp"
#include "swcl/labeler.hpp"
#include "swcl/patchgen.hpp"
#include "swcl/pretrain.hpp"
#include "swcl/synth.hpp"

namespace swcl {

// The `verify` subcommand: every module's invariants as one self-contained
// suite. Prints one line per check; returns the number of failures.

namespace verify_detail {

inline Tensor random_tensor(std::vector<std::size_t> shape, RngStream& rng, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline Tensor random_unit_rows(std::size_t n, std::size_t d, RngStream& rng) {
    Tensor z({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = rng.normal();
            z.at2(i, j) = v;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < d; ++j) z.at2(i, j) /= norm;
    }
    return z;
}

/// Fixed encoder + fixed views; loss as a function of params only.
inline LossFn encoder_supcon_fn(const EncoderConfig& enc, std::vector<Tensor> views,
                                std::vector<LabelTuple> labels, double tau) {
    return [enc, views = std::move(views), labels = std::move(labels),
            tau](const NetworkParams& params) {
        LossWithGrad out;
        const std::size_t n = views.size(), d = enc.proj_dim;
        std::vector<EncoderForward> fwd(n);
        Tensor z({n, d});
        for (std::size_t i = 0; i < n; ++i) {
            fwd[i] = encoder_forward(params, enc, views[i]);
            for (std::size_t j = 0; j < d; ++j) z.at2(i, j) = fwd[i].z[j];
        }
        const SupconResult loss = multilabel_supcon_loss(z, labels, tau);
        out.value = loss.loss;
        out.grads = zeros_like(params);
        for (std::size_t i = 0; i < n; ++i) {
            Tensor dz({d});
            for (std::size_t j = 0; j < d; ++j) dz[j] = loss.grad_z.at2(i, j);
            encoder_backward(params, enc, fwd[i], dz, out.grads);
        }
        return out;
    };
}

/// 8-view batch (4 patches, 2 views each) with a full-label-set pattern:
/// two patients x two positions, abnormality split across patients.
inline std::vector<LabelTuple> eight_view_labels() {
    std::vector<LabelTuple> labels;
    const int pattern[4][3] = {{0, 0, 0}, {0, 0, 1}, {1, 1, 0}, {0, 0, 0}};
    for (const auto& p : pattern) {
        labels.push_back({p[0], p[1], p[2]});
        labels.push_back({p[0], p[1], p[2]});
    }
    return labels;
}

}  // namespace verify_detail

inline int run_verify(int threads, std::ostream& os) {
    using namespace verify_detail;
    int failures = 0;
    const auto check = [&](const std::string& name, const std::function<bool(std::string&)>& fn) {
        std::string detail;
        bool ok = false;
        try {
            ok = fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        os << (ok ? "[ok]   " : "[FAIL] ") << name;
        if (!detail.empty()) os << "  (" << detail << ")";
        os << "\n";
        if (!ok) ++failures;
    };

    const double kGradTol = 1e-5;
    const double kEps = 1e-6;

    // --- primitive op gradients -------------------------------------------
    check("conv2d matches central differences", [&](std::string& detail) {
        double worst = 0.0;
        for (std::uint64_t seed : {11u, 12u, 13u}) {
            RngStream rng(seed, "verify-conv");
            const Tensor input = random_tensor({2, 5, 5}, rng);
            const Tensor coeffs = random_tensor({3, 3, 3}, rng);  // output projection
            NetworkParams p;
            p["kernel"] = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
            LossFn fn = [&](const NetworkParams& params) {
                LossWithGrad r;
                const Tensor out = conv2d(input, params.at("kernel"), 2, 1);
                for (std::size_t i = 0; i < out.size(); ++i) r.value += out[i] * coeffs[i];
                r.grads = zeros_like(params);
                Tensor dout = coeffs;
                conv2d_backward(input, params.at("kernel"), 2, 1, dout, nullptr,
                                &r.grads.at("kernel"));
                return r;
            };
            worst = std::max(worst, finite_diff_check(fn, p, kEps, nullptr, threads));
        }
        detail = "max rel err " + std::to_string(worst);
        return worst < kGradTol;
    });

    check("linear/gap/relu/l2_normalize match central differences", [&](std::string& detail) {
        double worst = 0.0;
        for (std::uint64_t seed : {21u, 22u, 23u}) {
            RngStream rng(seed, "verify-prims");
            {
                const Tensor w = random_tensor({3, 4}, rng);
                const Tensor b = random_tensor({3}, rng);
                const Tensor coeffs = random_tensor({3}, rng);
                worst = std::max(worst, finite_diff_check_tensor(
                    [&](const Tensor& x, Tensor* grad) {
                        const Tensor out = linear(x, w, b);
                        double v = 0.0;
                        for (std::size_t i = 0; i < out.size(); ++i) v += out[i] * coeffs[i];
                        Tensor dout = coeffs;
                        linear_backward(x, w, dout, grad, nullptr, nullptr);
                        return v;
                    },
                    random_tensor({4}, rng), kEps, threads));
            }
            {
                const Tensor coeffs = random_tensor({3}, rng);
                worst = std::max(worst, finite_diff_check_tensor(
                    [&](const Tensor& x, Tensor* grad) {
                        const Tensor out = gap(x);
                        double v = 0.0;
                        for (std::size_t i = 0; i < out.size(); ++i) v += out[i] * coeffs[i];
                        const Tensor gin = gap_backward(coeffs, x.extent(1), x.extent(2));
                        for (std::size_t i = 0; i < gin.size(); ++i) (*grad)[i] += gin[i];
                        return v;
                    },
                    random_tensor({3, 4, 4}, rng), kEps, threads));
            }
            {
                Tensor x = random_tensor({6}, rng);
                for (std::size_t i = 0; i < x.size(); ++i)
                    if (std::fabs(x[i]) < 1e-3) x[i] = 0.1;  // keep clear of the relu kink
                const Tensor coeffs = random_tensor({6}, rng);
                worst = std::max(worst, finite_diff_check_tensor(
                    [&](const Tensor& v, Tensor* grad) {
                        const Tensor out = relu(v);
                        double val = 0.0;
                        for (std::size_t i = 0; i < out.size(); ++i) val += out[i] * coeffs[i];
                        const Tensor gin = relu_backward(v, coeffs);
                        for (std::size_t i = 0; i < gin.size(); ++i) (*grad)[i] += gin[i];
                        return val;
                    },
                    x, kEps, threads));
            }
            {
                const Tensor coeffs = random_tensor({5}, rng);
                worst = std::max(worst, finite_diff_check_tensor(
                    [&](const Tensor& v, Tensor* grad) {
                        const Tensor out = l2_normalize(v);
                        double val = 0.0;
                        for (std::size_t i = 0; i < out.size(); ++i) val += out[i] * coeffs[i];
                        const Tensor gin = l2_normalize_backward(v, coeffs);
                        for (std::size_t i = 0; i < gin.size(); ++i) (*grad)[i] += gin[i];
                        return val;
                    },
                    random_tensor({5}, rng), kEps, threads));
            }
        }
        detail = "max rel err " + std::to_string(worst);
        return worst < kGradTol;
    });

    check("softmax_pair sums to 1 and is shift-invariant", [&](std::string&) {
        RngStream rng(31, "verify-softmax");
        for (int i = 0; i < 1000; ++i) {
            const double a = rng.uniform(-30.0, 30.0), b = rng.uniform(-30.0, 30.0);
            const double c = rng.uniform(-50.0, 50.0);
            const auto [p, q] = softmax_pair(a, b);
            const auto [ps, qs] = softmax_pair(a + c, b + c);
            if (std::fabs(p + q - 1.0) > 1e-12) return false;
            if (std::fabs(p - ps) > 1e-12 || std::fabs(q - qs) > 1e-12) return false;
        }
        return true;
    });

    check("forward passes are deterministic (bitwise)", [&](std::string&) {
        RngStream rng(41, "verify-det");
        const Tensor input = random_tensor({2, 6, 6}, rng);
        const Tensor kernel = random_tensor({3, 2, 3, 3}, rng);
        const Tensor a = conv2d(input, kernel, 1, 1);
        const Tensor b = conv2d(input, kernel, 1, 1);
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] != b[i]) return false;
        NetworkParams p1, p2;
        TrunkConfig tc;
        init_trunk_params(p1, tc, 7);
        init_trunk_params(p2, tc, 7);
        for (const auto& [name, t] : p1)
            for (std::size_t i = 0; i < t.size(); ++i)
                if (t[i] != p2.at(name)[i]) return false;
        return true;
    });

    // --- contrastive loss ---------------------------------------------------
    check("multilabel supcon gradient w.r.t. z", [&](std::string& detail) {
        double worst = 0.0;
        for (std::uint64_t seed : {51u, 52u, 53u}) {
            RngStream rng(seed, "verify-supcon-z");
            Tensor z = random_unit_rows(8, 6, rng);
            const auto labels = eight_view_labels();
            NetworkParams p;
            p["z"] = z;
            LossFn fn = [&](const NetworkParams& params) {
                LossWithGrad r;
                const SupconResult s =
                    multilabel_supcon_loss(params.at("z"), labels, 0.1);
                r.value = s.loss;
                r.grads["z"] = s.grad_z;
                return r;
            };
            worst = std::max(worst, finite_diff_check(fn, p, kEps, nullptr, threads));
        }
        detail = "max rel err " + std::to_string(worst);
        return worst < kGradTol;
    });

    check("multilabel supcon gradient through the full encoder", [&](std::string& detail) {
        RngStream rng(61, "verify-supcon-encoder");
        EncoderConfig enc;
        NetworkParams params = init_encoder_params(enc, 61);
        std::vector<Tensor> views;
        for (int i = 0; i < 8; ++i) views.push_back(random_tensor({3, 16, 16}, rng, 0.0, 1.0));
        const auto labels = eight_view_labels();
        const LossFn fn = encoder_supcon_fn(enc, views, labels, 0.1);
        const HighPrecLossFn hp = [&](const NetworkParams& p) {
            return hp::encoder_supcon_value(p, enc, views, labels, 0.1);
        };
        FiniteDiffWorst worst;
        const double err = finite_diff_check(fn, params, kEps, &worst, threads, hp);
        detail = "max rel err " + std::to_string(err) + " at " + worst.param;
        return err < kGradTol;
    });

    check("s4l loss gradient through the labeler", [&](std::string& detail) {
        RngStream rng(71, "verify-s4l");
        TrunkConfig trunk;
        S4LConfig cfg;
        cfg.views_per_image = 2;
        NetworkParams params = init_labeler_params(trunk, 71);
        std::vector<LabeledView> lv;
        std::vector<UnlabeledView> uv;
        for (int i = 0; i < 2; ++i) {
            lv.push_back({random_tensor({3, 16, 16}, rng, 0.0, 1.0), i % 2, i});
            lv.push_back({random_tensor({3, 16, 16}, rng, 0.0, 1.0), i % 2, i});
        }
        uv.push_back({random_tensor({3, 16, 16}, rng, 0.0, 1.0), 2});
        uv.push_back({random_tensor({3, 16, 16}, rng, 0.0, 1.0), 2});
        LossFn fn = [&](const NetworkParams& p) {
            const S4LBatchResult r = s4l_loss(lv, uv, p, trunk, cfg);
            return LossWithGrad{r.loss, r.grads};
        };
        const HighPrecLossFn hp = [&](const NetworkParams& p) {
            return hp::s4l_value(lv, uv, p, trunk, cfg);
        };
        const double err = finite_diff_check(fn, params, kEps, nullptr, threads, hp);
        detail = "max rel err " + std::to_string(err);
        return err < kGradTol;
    });

    check("batch-hard triplet closed forms", [&](std::string&) {
        // two ids, within-pair distance 0, across distance 10, margin 0.5
        Tensor emb({4, 1});
        emb.at2(0, 0) = 0.0;
        emb.at2(1, 0) = 0.0;
        emb.at2(2, 0) = 10.0;
        emb.at2(3, 0) = 10.0;
        const double far = batch_hard_triplet(emb, {0, 0, 1, 1}, 0.5);
        if (std::fabs(far - softplus(-9.5)) > 1e-12) return false;
        Tensor same({4, 2});
        const double collapsed = batch_hard_triplet(same, {0, 0, 1, 1}, 0.5);
        return std::fabs(collapsed - softplus(0.5)) < 1e-12;
    });

    check("reduction to NT-Xent and single-label SupCon", [&](std::string&) {
        RngStream rng(81, "verify-reduction");
        for (double tau : {0.05, 0.1, 0.5}) {
            const Tensor z = random_unit_rows(8, 8, rng);
            std::vector<LabelTuple> unique_labels;
            for (int k = 0; k < 4; ++k) {
                unique_labels.push_back({k});
                unique_labels.push_back({k});
            }
            if (!reduction_check(ViewBatch::make(z, unique_labels), tau)) return false;
            const std::vector<LabelTuple> same(8, LabelTuple{7});
            if (!reduction_check(ViewBatch::make(z, same), tau)) return false;
        }
        return true;
    });

    check("positives mask: symmetric, zero diagonal, monotone under label growth",
          [&](std::string&) {
              RngStream rng(91, "verify-mask");
              for (int trial = 0; trial < 50; ++trial) {
                  std::vector<LabelTuple> small, big;
                  const std::size_t n = 8;
                  for (std::size_t i = 0; i < n; ++i) {
                      const int a = static_cast<int>(rng.index(3));
                      const int b = static_cast<int>(rng.index(2));
                      const int c = static_cast<int>(rng.index(3));
                      small.push_back({a, b});
                      big.push_back({a, b, c});
                  }
                  const PositivesMask ms = positives_mask(small);
                  const PositivesMask mb = positives_mask(big);
                  for (std::size_t i = 0; i < n; ++i) {
                      if (ms.at(i, i) || mb.at(i, i)) return false;
                      for (std::size_t j = 0; j < n; ++j) {
                          if (ms.at(i, j) != ms.at(j, i)) return false;
                          if (mb.at(i, j) && !ms.at(i, j)) return false;  // growth only removes
                      }
                  }
              }
              return true;
          });

    check("loss is invariant under batch permutation", [&](std::string&) {
        RngStream rng(101, "verify-perm");
        const Tensor z = random_unit_rows(8, 6, rng);
        const auto labels = eight_view_labels();
        const double base = multilabel_supcon_loss(z, labels, 0.1).loss;
        std::vector<std::size_t> perm(8);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        Tensor zp({8, 6});
        std::vector<LabelTuple> lp(8);
        for (std::size_t i = 0; i < 8; ++i) {
            for (std::size_t j = 0; j < 6; ++j) zp.at2(i, j) = z.at2(perm[i], j);
            lp[i] = labels[perm[i]];
        }
        return std::fabs(base - multilabel_supcon_loss(zp, lp, 0.1).loss) <= 1e-12;
    });

    // --- CAM ---------------------------------------------------------------
    check("CAM is linear in head weights; normalized CAM sums to 1, shift-invariant",
          [&](std::string&) {
              RngStream rng(111, "verify-cam");
              for (int trial = 0; trial < 20; ++trial) {
                  const Tensor f = random_tensor({4, 5, 5}, rng);
                  const Tensor w1 = random_tensor({2, 4}, rng);
                  const Tensor w2 = random_tensor({2, 4}, rng);
                  const double alpha = rng.uniform(-2.0, 2.0), beta = rng.uniform(-2.0, 2.0);
                  Tensor wmix({2, 4});
                  for (std::size_t i = 0; i < wmix.size(); ++i)
                      wmix[i] = alpha * w1[i] + beta * w2[i];
                  const Tensor c1 = compute_cam(f, w1, 1);
                  const Tensor c2 = compute_cam(f, w2, 1);
                  const Tensor cm = compute_cam(f, wmix, 1);
                  for (std::size_t i = 0; i < cm.size(); ++i)
                      if (std::fabs(cm[i] - (alpha * c1[i] + beta * c2[i])) > 1e-10)
                          return false;
                  const Tensor ma = random_tensor({5, 5}, rng, -4.0, 4.0);
                  const Tensor mn = random_tensor({5, 5}, rng, -4.0, 4.0);
                  const Tensor na = normalize_cam(ma, mn);
                  const Tensor nn = normalize_cam(mn, ma);
                  Tensor ma_shift(ma.shape()), mn_shift(mn.shape());
                  const double c = rng.uniform(-10.0, 10.0);
                  for (std::size_t i = 0; i < ma.size(); ++i) {
                      ma_shift[i] = ma[i] + c;
                      mn_shift[i] = mn[i] + c;
                  }
                  const Tensor na_shift = normalize_cam(ma_shift, mn_shift);
                  for (std::size_t i = 0; i < na.size(); ++i) {
                      if (std::fabs(na[i] + nn[i] - 1.0) > 1e-12) return false;
                      if (std::fabs(na[i] - na_shift[i]) > 1e-12) return false;
                      if (!(na[i] > 0.0 && na[i] < 1.0)) return false;
                  }
              }
              return true;
          });

    // --- patch pipeline ------------------------------------------------------
    check("five_crop anchors, cardinality and corner tiling", [&](std::string&) {
        const auto a = crop_anchor(PatchPosition::tr, 64, 32);
        const auto c = crop_anchor(PatchPosition::c, 64, 32);
        if (a.row != 0 || a.col != 32 || c.row != 16 || c.col != 16) return false;
        Tensor counts({64, 64});
        for (PatchPosition p :
             {PatchPosition::tl, PatchPosition::tr, PatchPosition::bl, PatchPosition::br}) {
            const CropAnchor anchor = crop_anchor(p, 64, 32);
            for (std::size_t y = 0; y < 32; ++y)
                for (std::size_t x = 0; x < 32; ++x)
                    counts.at2(anchor.row + y, anchor.col + x) += 1.0;
        }
        for (std::size_t i = 0; i < counts.size(); ++i)
            if (counts[i] != 1.0) return false;  // corner crops tile exactly once
        return true;
    });

    check("threshold boundary is inclusive; override forces score 0", [&](std::string&) {
        if (!threshold_label(0.4, 0.4)) return false;
        if (threshold_label(0.0, 0.1)) return false;
        const Tensor crop = Tensor::full({2, 2}, 0.7);
        if (score_patch(crop, Split::labeled, false) != 0.0) return false;
        if (std::fabs(score_patch(crop, Split::unlabeled, false) - 0.7) > 1e-15) return false;
        return true;
    });

    check("abnormal patch count non-increasing over the t sweep", [&](std::string&) {
        SynthConfig scfg;
        scfg.patients_labeled = 4;
        scfg.patients_unlabeled = 8;
        scfg.seed = 5;
        const auto images = generate_dataset(scfg);
        RngStream rng(121, "verify-sweep");
        std::map<std::string, Tensor> cams;
        for (const auto& img : images)
            cams[img.image_id] = random_tensor({8, 8}, rng, 0.01, 0.99);
        std::size_t prev = images.size() * 5 + 1;
        for (int tenths = 0; tenths <= 10; ++tenths) {
            const BuildResult built =
                build_dataset(images, cams, tenths / 10.0, scfg.image_size / 2);
            if (built.manifest.records.size() != images.size() * 5) return false;
            std::size_t abnormal = 0;
            for (const auto& r : built.manifest.records) abnormal += r.abnormal ? 1 : 0;
            if (abnormal > prev) return false;
            prev = abnormal;
        }
        return true;
    });

    // --- sampler -------------------------------------------------------------
    check("paired sampler: equal lateralities, positions matched within pairs",
          [&](std::string&) {
              SynthConfig scfg;
              scfg.patients_labeled = 2;
              scfg.patients_unlabeled = 6;
              scfg.seed = 9;
              const auto images = generate_dataset(scfg);
              std::map<std::string, Tensor> cams;
              for (const auto& img : images) cams[img.image_id] = Tensor::full({8, 8}, 0.5);
              const BuildResult built = build_dataset(images, cams, 0.4, scfg.image_size / 2);
              const PairedSampler sampler(built.manifest);
              RngStream rng(131, "verify-sampler");
              for (int draw = 0; draw < 200; ++draw) {
                  const MinibatchDraw mb = sample_minibatch(sampler, 8, rng);
                  std::size_t left = 0;
                  for (std::size_t idx : mb.indices)
                      left += built.manifest.records[idx].laterality == Laterality::left;
                  if (left * 2 != mb.indices.size()) return false;
                  for (const auto& [a, b] : mb.pairs) {
                      const PatchRecord& ra = built.manifest.records[mb.indices[a]];
                      const PatchRecord& rb = built.manifest.records[mb.indices[b]];
                      if (ra.patient_id != rb.patient_id || ra.position != rb.position)
                          return false;
                      if (ra.laterality == rb.laterality) return false;
                  }
              }
              return true;
          });

    // --- metrics / synth -----------------------------------------------------
    check("auc_roc frozen cases", [&](std::string&) {
        if (std::fabs(auc_roc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) - 0.75) > 1e-15)
            return false;
        if (std::fabs(auc_roc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) - 1.0) > 1e-15) return false;
        return std::fabs(auc_roc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) - 0.5) <= 1e-15;
    });

    check("per-image generation is order-independent and bitwise reproducible",
          [&](std::string&) {
              SynthConfig scfg;
              scfg.patients_labeled = 1;
              scfg.patients_unlabeled = 2;
              const ImageRecord late = generate_eye(scfg, 2, Laterality::right);
              const ImageRecord early = generate_eye(scfg, 0, Laterality::left);
              const auto all = generate_dataset(scfg);
              const auto match = [](const ImageRecord& a, const ImageRecord& b) {
                  if (a.image_id != b.image_id) return false;
                  for (std::size_t i = 0; i < a.pixels.size(); ++i)
                      if (a.pixels[i] != b.pixels[i]) return false;
                  return true;
              };
              if (!match(all[0], early) || !match(all[5], late)) return false;
              for (const auto& r : all) {
                  bool any = false;
                  for (std::size_t i = 0; i < r.lesion_mask.size(); ++i)
                      if (r.lesion_mask[i] != 0.0) any = true;
                  if (any != r.abnormal) return false;
              }
              return true;
          });

    check("augmentation chains preserve the [0,1] pixel range", [&](std::string&) {
        RngStream rng(141, "verify-augment");
        const AugmentConfig cfg = AugmentConfig::pretrain_default();
        Tensor patch({3, 16, 16});
        for (std::size_t i = 0; i < patch.size(); ++i) patch[i] = rng.uniform();
        for (int chain = 0; chain < 1000; ++chain) {
            const Tensor view = augment_view(patch, cfg, rng);
            for (std::size_t i = 0; i < view.size(); ++i)
                if (view[i] < 0.0 || view[i] > 1.0) return false;
        }
        return true;
    });

    return failures;
}

}  // namespace swcl
