#include <gtest/gtest.h>

#include <filesystem>

#include "swcl/patchgen.hpp"
#include "swcl/synth.hpp"

using namespace swcl;

namespace {

TEST(Synth, LesionRateZeroGivesAllNormals) {
    SynthConfig cfg;
    cfg.patients_labeled = 3;
    cfg.patients_unlabeled = 5;
    cfg.lesion_rate = 0.0;
    for (const auto& rec : generate_dataset(cfg)) {
        EXPECT_FALSE(rec.abnormal);
        for (std::size_t i = 0; i < rec.lesion_mask.size(); ++i)
            ASSERT_EQ(rec.lesion_mask[i], 0.0);
    }
}

TEST(Synth, SameConfigTwiceIsBitIdentical) {
    SynthConfig cfg;
    cfg.patients_labeled = 2;
    cfg.patients_unlabeled = 3;
    const auto a = generate_dataset(cfg);
    const auto b = generate_dataset(cfg, 3);  // thread count must not matter
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t r = 0; r < a.size(); ++r) {
        ASSERT_EQ(a[r].image_id, b[r].image_id);
        for (std::size_t i = 0; i < a[r].pixels.size(); ++i)
            ASSERT_EQ(a[r].pixels[i], b[r].pixels[i]);
    }
}

TEST(Synth, AbnormalFractionNearLesionRate) {
    SynthConfig cfg;
    cfg.patients_labeled = 15;
    cfg.patients_unlabeled = 35;  // 50 patients -> 100 eyes
    cfg.lesion_rate = 0.5;
    cfg.seed = 17;
    std::size_t abnormal = 0;
    const auto records = generate_dataset(cfg);
    for (const auto& r : records) abnormal += r.abnormal ? 1 : 0;
    const double fraction = static_cast<double>(abnormal) / static_cast<double>(records.size());
    EXPECT_GE(fraction, 0.35);
    EXPECT_LE(fraction, 0.65);
}

TEST(Synth, PixelsInRangeAndLabelMatchesMask) {
    SynthConfig cfg;
    cfg.patients_labeled = 2;
    cfg.patients_unlabeled = 2;
    cfg.lesion_rate = 1.0;
    for (const auto& rec : generate_dataset(cfg)) {
        for (std::size_t i = 0; i < rec.pixels.size(); ++i) {
            ASSERT_GE(rec.pixels[i], 0.0);
            ASSERT_LE(rec.pixels[i], 1.0);
        }
        bool any = false;
        for (std::size_t i = 0; i < rec.lesion_mask.size(); ++i)
            if (rec.lesion_mask[i] != 0.0) any = true;
        EXPECT_EQ(any, rec.abnormal);
    }
}

TEST(Synth, MirrorCheckHoldsForGeneratedPairs) {
    SynthConfig cfg;
    cfg.patients_labeled = 3;
    cfg.patients_unlabeled = 2;
    const auto records = generate_dataset(cfg);
    for (std::size_t p = 0; p < 5; ++p) {
        const ImageRecord& left = records[2 * p];
        const ImageRecord& right = records[2 * p + 1];
        ASSERT_EQ(left.laterality, Laterality::left);
        ASSERT_EQ(right.laterality, Laterality::right);
        EXPECT_TRUE(mirror_check(left, right));
    }
}

TEST(Synth, MirrorCheckRejectsCrossPatientAndDetectsAsymmetry) {
    SynthConfig cfg;
    cfg.patients_labeled = 2;
    cfg.patients_unlabeled = 0;
    const auto records = generate_dataset(cfg);
    EXPECT_THROW(mirror_check(records[0], records[3]), ValidationError);
    // unrelated templates are no mirrors of each other
    EXPECT_FALSE(template_mirror_equal(records[0].template_pixels,
                                       records[3].template_pixels));
    // a template is not its own mirror (anatomy is asymmetric)
    EXPECT_FALSE(template_mirror_equal(records[0].template_pixels,
                                       records[0].template_pixels));
}

TEST(Synth, LesionPlacementIsPositionDependent) {
    // center-region lesion frequency must exceed corner-region frequency by a
    // clear margin, counted over >= 1000 eyes
    SynthConfig cfg;
    cfg.patients_labeled = 0;
    cfg.patients_unlabeled = 550;
    cfg.lesion_rate = 1.0;
    cfg.seed = 23;
    const auto records = generate_dataset(cfg, 4);
    ASSERT_GE(records.size(), 1000u);
    const std::size_t s = cfg.image_size, p = s / 2;
    std::size_t center_hits = 0, corner_hits = 0, abnormal = 0;
    for (const auto& rec : records) {
        if (!rec.abnormal) continue;
        ++abnormal;
        const auto center = crop_anchor(PatchPosition::c, s, p);
        const auto corner = crop_anchor(PatchPosition::tl, s, p);
        bool in_center = false, in_corner = false;
        for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x) {
                if (rec.lesion_mask.at2(center.row + y, center.col + x) != 0.0)
                    in_center = true;
                if (rec.lesion_mask.at2(corner.row + y, corner.col + x) != 0.0)
                    in_corner = true;
            }
        center_hits += in_center;
        corner_hits += in_corner;
    }
    ASSERT_GT(abnormal, 500u);
    const double center_freq = static_cast<double>(center_hits) / abnormal;
    const double corner_freq = static_cast<double>(corner_hits) / abnormal;
    EXPECT_GT(center_freq, corner_freq + 0.15);
}

TEST(Synth, DatasetRoundTripThroughDisk) {
    const auto dir = std::filesystem::temp_directory_path() / "swcl_tests" / "synth_io";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    SynthConfig cfg;
    cfg.patients_labeled = 2;
    cfg.patients_unlabeled = 1;
    const auto records = generate_dataset(cfg);
    write_dataset(dir, records);
    const auto loaded = load_dataset(dir);
    ASSERT_EQ(loaded.size(), records.size());
    for (std::size_t r = 0; r < records.size(); ++r) {
        EXPECT_EQ(loaded[r].image_id, records[r].image_id);
        EXPECT_EQ(loaded[r].patient_id, records[r].patient_id);
        EXPECT_EQ(loaded[r].laterality, records[r].laterality);
        EXPECT_EQ(loaded[r].split, records[r].split);
        EXPECT_EQ(loaded[r].abnormal, records[r].abnormal);
        for (std::size_t i = 0; i < records[r].pixels.size(); ++i)
            ASSERT_EQ(loaded[r].pixels[i],
                      static_cast<double>(static_cast<float>(records[r].pixels[i])));
    }
}

TEST(Synth, ConfigValidation) {
    SynthConfig cfg;
    cfg.image_size = 30;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg.image_size = 33;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg.image_size = 64;
    cfg.lesion_rate = 1.5;
    EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Synth, JitterFlagShiftsTemplates) {
    SynthConfig base;
    base.patients_labeled = 1;
    base.patients_unlabeled = 0;
    SynthConfig jittered = base;
    jittered.alignment_jitter = true;
    const auto a = generate_dataset(base);
    const auto b = generate_dataset(jittered);
    bool any_diff = false;
    for (std::size_t r = 0; r < a.size(); ++r)
        for (std::size_t i = 0; i < a[r].template_pixels.size(); ++i)
            if (a[r].template_pixels[i] != b[r].template_pixels[i]) any_diff = true;
    EXPECT_TRUE(any_diff);
}

}  // namespace
