#include <gtest/gtest.h>

#include "oracles.hpp"
#include "swcl/gradcheck.hpp"
#include "swcl/highprec.hpp"
#include "swcl/labeler.hpp"
#include "swcl/synth.hpp"

using namespace swcl;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, RngStream& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// --- batch-hard triplet ---------------------------------------------------

TEST(Triplet, WellSeparatedClustersGiveSoftplusTail) {
    // two ids, within-pair distance 0, across distance 10, m = 0.5
    Tensor emb({4, 1});
    emb.at2(2, 0) = 10.0;
    emb.at2(3, 0) = 10.0;
    const double loss = batch_hard_triplet(emb, {0, 0, 1, 1}, 0.5);
    EXPECT_NEAR(loss, softplus(-9.5), 1e-12);
    EXPECT_NEAR(loss, 7.4849e-5, 1e-8);
    EXPECT_LT(loss, 1e-3);
}

TEST(Triplet, AllIdenticalEmbeddingsGiveSoftplusOfMargin) {
    Tensor emb({6, 3});
    const double loss = batch_hard_triplet(emb, {0, 0, 1, 1, 2, 2}, 0.5);
    EXPECT_NEAR(loss, softplus(0.5), 1e-12);
    EXPECT_NEAR(loss, 0.9741, 1e-4);
}

TEST(Triplet, PermutationInvariant) {
    RngStream rng(7);
    Tensor emb = random_tensor({6, 4}, rng);
    const std::vector<int> ids = {0, 1, 0, 2, 2, 1};
    const double base = batch_hard_triplet(emb, ids, 0.5);
    const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
    Tensor emb_p({6, 4});
    std::vector<int> ids_p(6);
    for (std::size_t i = 0; i < 6; ++i) {
        ids_p[i] = ids[perm[i]];
        for (std::size_t j = 0; j < 4; ++j) emb_p.at2(i, j) = emb.at2(perm[i], j);
    }
    EXPECT_DOUBLE_EQ(base, batch_hard_triplet(emb_p, ids_p, 0.5));
}

TEST(Triplet, RejectsDegenerateIdSets) {
    Tensor emb({4, 2});
    EXPECT_THROW(batch_hard_triplet(emb, {0, 0, 0, 0}, 0.5), ValidationError);
    EXPECT_THROW(batch_hard_triplet(emb, {0, 0, 1, 2}, 0.5), ValidationError);
}

TEST(Triplet, HingeFormMatchesHingeFormula) {
    Tensor emb({4, 1});
    emb.at2(2, 0) = 2.0;
    emb.at2(3, 0) = 2.0;
    // d_ap = 0, d_an = 2: hinge max(0, 0 - 2 + 0.5) = 0
    EXPECT_DOUBLE_EQ(batch_hard_triplet(emb, {0, 0, 1, 1}, 0.5, TripletForm::hinge), 0.0);
    // margin 3: max(0, 0 - 2 + 3) = 1
    EXPECT_DOUBLE_EQ(batch_hard_triplet(emb, {0, 0, 1, 1}, 3.0, TripletForm::hinge), 1.0);
}

TEST(Triplet, GradientMatchesFiniteDifferences) {
    RngStream rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor emb = random_tensor({6, 3}, rng);
        const std::vector<int> ids = {0, 0, 1, 1, 2, 2};
        const double err = finite_diff_check_tensor(
            [&](const Tensor& e, Tensor* grad) {
                Tensor g({6, 3});
                const double loss =
                    batch_hard_triplet(e, ids, 0.5, TripletForm::softplus_margin, &g);
                for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] += g[i];
                return loss;
            },
            emb, 1e-6);
        EXPECT_LT(err, 1e-5);
    }
}

// --- s4l loss ----------------------------------------------------------------

std::vector<LabeledView> make_labeled_views(RngStream& rng, int n_images, int views_each) {
    std::vector<LabeledView> out;
    for (int i = 0; i < n_images; ++i)
        for (int v = 0; v < views_each; ++v)
            out.push_back({random_tensor({3, 16, 16}, rng, 0.0, 1.0), i % 2, i});
    return out;
}

TEST(S4L, WZeroReducesToPlainCrossEntropy) {
    RngStream rng(9);
    TrunkConfig trunk;
    S4LConfig cfg;
    cfg.w = 0.0;
    NetworkParams params = init_labeler_params(trunk, 5);
    const auto lv = make_labeled_views(rng, 2, 2);
    const S4LBatchResult r = s4l_loss(lv, {}, params, trunk, cfg);
    double expected_ce = 0.0;
    for (const auto& v : lv) {
        const LabelerForward f = labeler_forward(params, trunk, v.pixels);
        expected_ce += cross_entropy2(f.logits, v.label, nullptr) / lv.size();
    }
    EXPECT_NEAR(r.loss, expected_ce, 1e-12);
    EXPECT_NEAR(r.ce, expected_ce, 1e-12);
}

TEST(S4L, TotalEqualsComponentOraclesAtWOne) {
    RngStream rng(10);
    TrunkConfig trunk;
    S4LConfig cfg;
    NetworkParams params = init_labeler_params(trunk, 6);
    const auto lv = make_labeled_views(rng, 2, 2);
    std::vector<UnlabeledView> uv;
    for (int i = 0; i < 2; ++i)
        for (int v = 0; v < 2; ++v)
            uv.push_back({random_tensor({3, 16, 16}, rng, 0.0, 1.0), 2 + i});
    const S4LBatchResult r = s4l_loss(lv, uv, params, trunk, cfg);

    // independent CE oracle
    double ce = 0.0;
    for (const auto& v : lv) {
        const LabelerForward f = labeler_forward(params, trunk, v.pixels);
        ce += cross_entropy2(f.logits, v.label, nullptr);
    }
    ce /= lv.size();
    // independent triplet oracle on gap embeddings
    const std::size_t n = lv.size() + uv.size();
    Tensor emb({n, trunk.out_channels()});
    std::vector<int> ids;
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor& px = i < lv.size() ? lv[i].pixels : uv[i - lv.size()].pixels;
        const Tensor h = gap(trunk_forward(params, trunk, px, nullptr));
        for (std::size_t j = 0; j < h.size(); ++j) emb.at2(i, j) = h[j];
        ids.push_back(i < lv.size() ? lv[i].instance : uv[i - lv.size()].instance);
    }
    const double tri = batch_hard_triplet(emb, ids, cfg.soft_margin);
    EXPECT_NEAR(r.loss, ce + cfg.w * tri, 1e-10);
}

TEST(S4L, SingleDistinctImageRejected) {
    RngStream rng(11);
    TrunkConfig trunk;
    S4LConfig cfg;
    NetworkParams params = init_labeler_params(trunk, 7);
    std::vector<LabeledView> lv;
    for (int v = 0; v < 4; ++v)
        lv.push_back({random_tensor({3, 16, 16}, rng, 0.0, 1.0), 1, 0});
    EXPECT_THROW(s4l_loss(lv, {}, params, trunk, cfg), ValidationError);
    EXPECT_THROW(s4l_loss({}, {}, params, trunk, cfg), ValidationError);
}

TEST(S4L, GradientsPassFiniteDifferences) {
    RngStream rng(12);
    TrunkConfig trunk;
    S4LConfig cfg;
    cfg.views_per_image = 2;
    NetworkParams params = init_labeler_params(trunk, 8);
    const auto lv = make_labeled_views(rng, 2, 2);
    std::vector<UnlabeledView> uv;
    uv.push_back({random_tensor({3, 16, 16}, rng, 0.0, 1.0), 2});
    uv.push_back({random_tensor({3, 16, 16}, rng, 0.0, 1.0), 2});
    LossFn fn = [&](const NetworkParams& p) {
        const S4LBatchResult r = s4l_loss(lv, uv, p, trunk, cfg);
        return LossWithGrad{r.loss, r.grads};
    };
    HighPrecLossFn hp = [&](const NetworkParams& p) {
        return hp::s4l_value(lv, uv, p, trunk, cfg);
    };
    EXPECT_LT(finite_diff_check(fn, params, 1e-6, nullptr, 4, hp), 1e-5);
}

// --- CAM ---------------------------------------------------------------------

TEST(Cam, ZeroWeightsAndIdentityCases) {
    RngStream rng(13);
    const Tensor f = random_tensor({4, 3, 3}, rng);
    const Tensor zero_w({2, 4});
    const Tensor cam = compute_cam(f, zero_w, 1);
    for (std::size_t i = 0; i < cam.size(); ++i) EXPECT_EQ(cam[i], 0.0);

    const Tensor f1 = random_tensor({1, 3, 3}, rng);
    Tensor w1({2, 1});
    w1.at2(1, 0) = 1.0;
    const Tensor cam1 = compute_cam(f1, w1, 1);
    for (std::size_t i = 0; i < cam1.size(); ++i) EXPECT_DOUBLE_EQ(cam1[i], f1[i]);
}

TEST(Cam, HandWorkedWeightedSum) {
    Tensor f({2, 2, 2}, {1, 2, 3, 4, 0, 1, 1, 0});
    Tensor w({2, 2});
    w.at2(1, 0) = 0.5;
    w.at2(1, 1) = -1.0;
    const Tensor cam = compute_cam(f, w, 1);
    EXPECT_DOUBLE_EQ(cam.at2(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(cam.at2(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(cam.at2(1, 0), 0.5);
    EXPECT_DOUBLE_EQ(cam.at2(1, 1), 2.0);
}

TEST(Cam, MatchesWeightedSumOracleAndIsLinear) {
    RngStream rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor f = random_tensor({5, 4, 4}, rng);
        const Tensor w = random_tensor({2, 5}, rng);
        const Tensor cam = compute_cam(f, w, 0);
        const Tensor expect = oracles::cam_oracle(f, w, 0);
        for (std::size_t i = 0; i < cam.size(); ++i) ASSERT_NEAR(cam[i], expect[i], 1e-12);
    }
}

TEST(Cam, RejectsShapeMismatch) {
    EXPECT_THROW(compute_cam(Tensor({4, 3, 3}), Tensor({2, 5}), 1), ValidationError);
    EXPECT_THROW(compute_cam(Tensor({4, 3, 3}), Tensor({2, 4}), 2), ValidationError);
}

TEST(NormalizeCam, SymmetryKnownValueAndShiftInvariance) {
    const Tensor equal_a = Tensor::full({3, 3}, 1.7);
    const Tensor na = normalize_cam(equal_a, equal_a);
    for (std::size_t i = 0; i < na.size(); ++i) EXPECT_DOUBLE_EQ(na[i], 0.5);

    const Tensor one = Tensor::full({1, 1}, 1.0);
    const Tensor zero = Tensor({1, 1});
    EXPECT_NEAR(normalize_cam(one, zero)[0], 0.73106, 1e-5);

    RngStream rng(15);
    const Tensor ma = random_tensor({4, 4}, rng, -3.0, 3.0);
    const Tensor mn = random_tensor({4, 4}, rng, -3.0, 3.0);
    Tensor ma_c(ma.shape()), mn_c(mn.shape());
    for (std::size_t i = 0; i < ma.size(); ++i) {
        ma_c[i] = ma[i] + 2.31;
        mn_c[i] = mn[i] + 2.31;
    }
    const Tensor base = normalize_cam(ma, mn);
    const Tensor shifted = normalize_cam(ma_c, mn_c);
    for (std::size_t i = 0; i < base.size(); ++i) {
        EXPECT_NEAR(base[i], shifted[i], 1e-12);
        EXPECT_GT(base[i], 0.0);
        EXPECT_LT(base[i], 1.0);
    }
    EXPECT_THROW(normalize_cam(Tensor({2, 2}), Tensor({3, 2})), ValidationError);
}

TEST(Cam, MeanCamDecisionAgreesWithClassifierWhenBiasesEqual) {
    // argmax of gap-then-linear logits == argmax of spatially averaged CAMs
    RngStream rng(16);
    TrunkConfig trunk;
    NetworkParams params = init_labeler_params(trunk, 77);
    params.at("head.bias") = Tensor({2});  // equal biases
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
        const LabelerForward f = labeler_forward(params, trunk, image);
        const Tensor cam_n = compute_cam(f.fmaps, params.at("head.weight"), 0);
        const Tensor cam_a = compute_cam(f.fmaps, params.at("head.weight"), 1);
        double mean_n = 0.0, mean_a = 0.0;
        for (std::size_t i = 0; i < cam_n.size(); ++i) {
            mean_n += cam_n[i];
            mean_a += cam_a[i];
        }
        const bool classifier_abnormal = f.logits[1] > f.logits[0];
        const bool cam_abnormal = mean_a > mean_n;
        EXPECT_EQ(classifier_abnormal, cam_abnormal);
    }
}

// --- training ------------------------------------------------------------------

TEST(TrainLabeler, UntrainedNetworkScoresNearChance) {
    SynthConfig scfg;
    scfg.patients_labeled = 30;
    scfg.patients_unlabeled = 0;
    scfg.seed = 19;
    const auto records = generate_dataset(scfg, 4);
    TrunkConfig trunk;
    S4LConfig cfg;
    cfg.epochs = 0;
    const LabelerTrainResult r = train_labeler(records, {}, trunk, cfg);
    EXPECT_GE(r.holdout_auc, 0.2);
    EXPECT_LE(r.holdout_auc, 0.8);  // statistically ~0.5 for an untrained net
}

TEST(TrainLabeler, SameSeedGivesIdenticalParams) {
    SynthConfig scfg;
    scfg.patients_labeled = 6;
    scfg.patients_unlabeled = 6;
    const auto records = generate_dataset(scfg, 4);
    std::vector<ImageRecord> labeled, unlabeled;
    for (const auto& r : records)
        (r.split == Split::labeled ? labeled : unlabeled).push_back(r);
    TrunkConfig trunk;
    S4LConfig cfg;
    cfg.epochs = 2;
    const LabelerTrainResult a = train_labeler(labeled, unlabeled, trunk, cfg);
    const LabelerTrainResult b = train_labeler(labeled, unlabeled, trunk, cfg);
    for (const auto& [name, t] : a.params) {
        const Tensor& other = b.params.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) ASSERT_EQ(t[i], other[i]);
    }
    EXPECT_EQ(a.holdout_auc, b.holdout_auc);
}

TEST(TrainLabeler, DeskScaleRunReachesUsefulAuc) {
    SynthConfig scfg;
    scfg.patients_labeled = 40;
    scfg.patients_unlabeled = 60;
    scfg.seed = 20;
    const auto records = generate_dataset(scfg, 4);
    std::vector<ImageRecord> labeled, unlabeled;
    for (const auto& r : records)
        (r.split == Split::labeled ? labeled : unlabeled).push_back(r);
    TrunkConfig trunk;
    S4LConfig cfg;
    cfg.epochs = 12;
    cfg.seed = 3;
    const LabelerTrainResult r = train_labeler(labeled, unlabeled, trunk, cfg);
    EXPECT_GE(r.holdout_auc, 0.90);
}

}  // namespace
