#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "swcl/augment.hpp"
#include "swcl/io.hpp"
#include "swcl/synth.hpp"

namespace swcl {

// Five fixed crops per image with flip alignment, CAM-derived lesion scores,
// the labeled-normal override, and inclusive thresholding.

enum class PatchPosition { tl, tr, c, bl, br };

inline constexpr std::array<PatchPosition, 5> kPatchPositions = {
    PatchPosition::tl, PatchPosition::tr, PatchPosition::c, PatchPosition::bl,
    PatchPosition::br};

inline const char* to_string(PatchPosition p) {
    switch (p) {
        case PatchPosition::tl: return "tl";
        case PatchPosition::tr: return "tr";
        case PatchPosition::c: return "c";
        case PatchPosition::bl: return "bl";
        case PatchPosition::br: return "br";
    }
    return "?";
}

inline PatchPosition patch_position_from(const std::string& s) {
    for (PatchPosition p : kPatchPositions)
        if (s == to_string(p)) return p;
    throw ValidationError("unknown patch position: " + s);
}

struct CropAnchor {
    std::size_t row = 0, col = 0;
};

/// Anchor of a `side`-sized crop at one of the five positions within an
/// `extent`-sized square: corners flush with the borders, center at
/// floor((extent-side)/2).
inline CropAnchor crop_anchor(PatchPosition p, std::size_t extent, std::size_t side) {
    if (side > extent)
        throw ValidationError("crop_anchor: patch side " + std::to_string(side) +
                              " exceeds extent " + std::to_string(extent));
    const std::size_t lo = 0, hi = extent - side, mid = (extent - side) / 2;
    switch (p) {
        case PatchPosition::tl: return {lo, lo};
        case PatchPosition::tr: return {lo, hi};
        case PatchPosition::c: return {mid, mid};
        case PatchPosition::bl: return {hi, lo};
        case PatchPosition::br: return {hi, hi};
    }
    return {};
}

inline Tensor crop_any(const Tensor& t, std::size_t row, std::size_t col, std::size_t side) {
    if (t.rank() == 3) return crop_chw(t, row, col, side);
    if (t.rank() == 2) {
        Tensor out({side, side});
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) out.at2(y, x) = t.at2(row + y, col + x);
        return out;
    }
    throw ValidationError("crop_any: expected rank 2 or 3");
}

inline std::array<std::pair<PatchPosition, Tensor>, 5> five_crop(const Tensor& image,
                                                                 std::size_t patch_side) {
    const std::size_t extent = image.extent(image.rank() - 1);
    if (image.extent(image.rank() - 2) != extent)
        throw ValidationError("five_crop: image must be square");
    std::array<std::pair<PatchPosition, Tensor>, 5> out;
    for (std::size_t i = 0; i < 5; ++i) {
        const PatchPosition p = kPatchPositions[i];
        const CropAnchor a = crop_anchor(p, extent, patch_side);
        out[i] = {p, crop_any(image, a.row, a.col, patch_side)};
    }
    return out;
}

/// Right-eye images and their CAMs are flipped horizontally before cropping;
/// left eyes pass through unchanged.
struct AlignedImage {
    Tensor pixels;
    Tensor cam;
    Tensor mask;  // empty when the record has no mask
};

inline AlignedImage align_flip(const ImageRecord& rec, const Tensor& cam) {
    AlignedImage a;
    if (rec.laterality == Laterality::right) {
        a.pixels = flip_horizontal(rec.pixels);
        a.cam = flip_horizontal(cam);
        a.mask = rec.lesion_mask.empty() ? Tensor() : flip_horizontal(rec.lesion_mask);
    } else {
        a.pixels = rec.pixels;
        a.cam = cam;
        a.mask = rec.lesion_mask;
    }
    return a;
}

/// Mean of the CAM crop; forced to exactly 0 for labeled-split images whose
/// ground truth is normal. Unlabeled-split images are never overridden.
inline double score_patch(const Tensor& cam_crop, Split split, bool gt_abnormal) {
    if (cam_crop.empty()) throw ValidationError("score_patch: empty CAM crop");
    if (split == Split::labeled && !gt_abnormal) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < cam_crop.size(); ++i) s += cam_crop[i];
    return s / static_cast<double>(cam_crop.size());
}

/// Abnormal iff score >= t (inclusive boundary).
inline bool threshold_label(double score, double t) {
    if (!(score >= 0.0 && score <= 1.0))
        throw ValidationError("threshold_label: score out of [0,1]: " + std::to_string(score));
    if (!(t >= 0.0 && t <= 1.0))
        throw ValidationError("threshold_label: threshold out of [0,1]: " + std::to_string(t));
    return score >= t;
}

struct PatchRecord {
    std::string patch_id;
    std::string image_id;
    std::string patient_id;
    Laterality laterality = Laterality::left;
    PatchPosition position = PatchPosition::tl;
    Tensor pixels;  // [3,p,p]
    double lesion_score = 0.0;
    bool abnormal = false;
    bool gt_patch_abnormal = false;  // from the synthetic mask; evaluation only
};

struct PatchManifest {
    std::vector<PatchRecord> records;
    double threshold = 0.4;
    std::size_t patch_side = 32;
    std::string source_hash;
};

struct ScoreHistogram {
    std::array<std::size_t, 10> counts{};  // bin i covers [i/10,(i+1)/10); 1.0 in the last

    std::size_t total() const {
        std::size_t t = 0;
        for (std::size_t c : counts) t += c;
        return t;
    }
};

inline std::size_t histogram_bin(double score) {
    const int b = static_cast<int>(score * 10.0);
    return static_cast<std::size_t>(std::clamp(b, 0, 9));
}

struct BuildResult {
    PatchManifest manifest;
    ScoreHistogram histogram;
};

/// Builds the semi-weakly annotated patch dataset: flip-align, five-crop
/// image and CAM (CAM cropped at its native resolution with the same
/// fractional anchors), score, threshold. Records are sorted by image_id
/// then position order.
inline BuildResult build_dataset(const std::vector<ImageRecord>& images,
                                 const std::map<std::string, Tensor>& cams, double t,
                                 std::size_t patch_side, const std::string& source_hash = "") {
    if (!(t >= 0.0 && t <= 1.0))
        throw ValidationError("build_dataset: threshold out of [0,1]");
    std::string missing;
    for (const auto& img : images)
        if (!cams.count(img.image_id)) missing += (missing.empty() ? "" : ", ") + img.image_id;
    if (!missing.empty())
        throw ValidationError("build_dataset: missing CAMs for: " + missing);

    BuildResult out;
    out.manifest.threshold = t;
    out.manifest.patch_side = patch_side;
    out.manifest.source_hash = source_hash;

    std::vector<const ImageRecord*> ordered;
    for (const auto& img : images) ordered.push_back(&img);
    std::sort(ordered.begin(), ordered.end(),
              [](const ImageRecord* a, const ImageRecord* b) { return a->image_id < b->image_id; });

    for (const ImageRecord* img : ordered) {
        const std::size_t s = img->pixels.extent(1);
        if (patch_side > s)
            throw ValidationError("build_dataset: patch side exceeds image size");
        const AlignedImage aligned = align_flip(*img, cams.at(img->image_id));
        const std::size_t cam_extent = aligned.cam.extent(0);
        const std::size_t cam_side = std::min(
            cam_extent,
            std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                         static_cast<double>(patch_side * cam_extent) / s))));
        for (PatchPosition pos : kPatchPositions) {
            const CropAnchor ia = crop_anchor(pos, s, patch_side);
            const CropAnchor ca = crop_anchor(pos, cam_extent, cam_side);
            PatchRecord rec;
            rec.patch_id = img->image_id + "_" + to_string(pos);
            rec.image_id = img->image_id;
            rec.patient_id = img->patient_id;
            rec.laterality = img->laterality;
            rec.position = pos;
            rec.pixels = crop_chw(aligned.pixels, ia.row, ia.col, patch_side);
            const Tensor cam_crop = crop_any(aligned.cam, ca.row, ca.col, cam_side);
            rec.lesion_score = score_patch(cam_crop, img->split, img->abnormal);
            rec.abnormal = threshold_label(rec.lesion_score, t);
            if (!aligned.mask.empty()) {
                const Tensor mask_crop = crop_any(aligned.mask, ia.row, ia.col, patch_side);
                for (std::size_t i = 0; i < mask_crop.size(); ++i)
                    if (mask_crop[i] > 0.5) rec.gt_patch_abnormal = true;
            }
            out.histogram.counts[histogram_bin(rec.lesion_score)]++;
            out.manifest.records.push_back(std::move(rec));
        }
    }
    return out;
}

/// Re-derives abnormality labels from stored lesion scores at a new
/// threshold; scores themselves are threshold-independent.
inline void rethreshold(PatchManifest& manifest, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("rethreshold: t out of [0,1]");
    manifest.threshold = t;
    for (auto& r : manifest.records) r.abnormal = threshold_label(r.lesion_score, t);
}

// ---------------------------------------------------------------------------
// manifest I/O: JSON-lines metadata plus one tensor file per patch
// ---------------------------------------------------------------------------

inline void write_patch_manifest(const std::filesystem::path& dir,
                                 const PatchManifest& manifest, int threads = 1) {
    std::filesystem::create_directories(dir / "tensors");
    std::vector<json> lines(manifest.records.size());
    parallel_for(manifest.records.size(), threads, [&](std::size_t i) {
        const PatchRecord& r = manifest.records[i];
        const std::string rel = "tensors/" + r.patch_id + ".f32t";
        atomic_save_tensor(dir / rel, r.pixels);
        json j;
        j["patch_id"] = r.patch_id;
        j["image_id"] = r.image_id;
        j["patient_id"] = r.patient_id;
        j["laterality"] = to_string(r.laterality);
        j["position"] = to_string(r.position);
        j["lesion_score"] = r.lesion_score;
        j["abnormality"] = r.abnormal ? "abnormal" : "normal";
        j["gt_patch_abnormal"] = r.gt_patch_abnormal;
        j["pixel_path"] = rel;
        lines[i] = std::move(j);
    });
    atomic_write_text(dir / "patches.jsonl", to_jsonl(lines));
    json build;
    build["threshold"] = manifest.threshold;
    build["patch_side"] = manifest.patch_side;
    build["source_hash"] = manifest.source_hash;
    atomic_write_text(dir / "build.json", build.dump(2) + "\n");
}

inline PatchManifest load_patch_manifest(const std::filesystem::path& dir,
                                         bool load_pixels = true, int threads = 1) {
    require_exists(dir / "patches.jsonl", "patch manifest");
    require_exists(dir / "build.json", "patch build parameters");
    const json build = json::parse(read_text(dir / "build.json"));
    PatchManifest m;
    m.threshold = build.at("threshold").get<double>();
    m.patch_side = build.at("patch_side").get<std::size_t>();
    m.source_hash = build.at("source_hash").get<std::string>();
    const auto lines = read_jsonl(dir / "patches.jsonl");
    m.records.resize(lines.size());
    parallel_for(lines.size(), threads, [&](std::size_t i) {
        const json& j = lines[i];
        PatchRecord r;
        r.patch_id = j.at("patch_id").get<std::string>();
        r.image_id = j.at("image_id").get<std::string>();
        r.patient_id = j.at("patient_id").get<std::string>();
        r.laterality = j.at("laterality").get<std::string>() == "right" ? Laterality::right
                                                                        : Laterality::left;
        r.position = patch_position_from(j.at("position").get<std::string>());
        r.lesion_score = j.at("lesion_score").get<double>();
        r.abnormal = j.at("abnormality").get<std::string>() == "abnormal";
        r.gt_patch_abnormal = j.at("gt_patch_abnormal").get<bool>();
        if (load_pixels) r.pixels = load_tensor_f32(dir / j.at("pixel_path").get<std::string>());
        m.records[i] = std::move(r);
    });
    return m;
}

inline std::string histogram_csv(const ScoreHistogram& h) {
    std::string out = "bin_start,bin_end,count\n";
    char buf[64];
    for (std::size_t i = 0; i < 10; ++i) {
        std::snprintf(buf, sizeof(buf), "%.1f,%.1f,%zu\n", i / 10.0, (i + 1) / 10.0,
                      h.counts[i]);
        out += buf;
    }
    return out;
}

}  // namespace swcl
