#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "swcl/io.hpp"
#include "swcl/ops.hpp"
#include "swcl/rng.hpp"
#include "swcl/tensor.hpp"
#include "swcl/threading.hpp"

namespace swcl {

// Seeded fundus-like synthetic patients. Each patient has one left and one
// right eye; the right eye's structural template is the exact horizontal
// mirror of the left's, with independent per-eye appearance jitter, noise
// and lesions on top. Per-image RNG streams are derived from
// (seed, image_id), so generation is order-independent.

enum class Laterality { left, right };
enum class Split { labeled, unlabeled };

inline const char* to_string(Laterality l) { return l == Laterality::left ? "left" : "right"; }
inline const char* to_string(Split s) { return s == Split::labeled ? "labeled" : "unlabeled"; }

struct ImageRecord {
    std::string image_id;
    std::string patient_id;
    Laterality laterality = Laterality::left;
    Tensor pixels;       // [3,S,S] in [0,1]
    bool abnormal = false;
    Tensor lesion_mask;  // [S,S] binary
    Split split = Split::labeled;
    // Pre-noise anatomy; in-memory only (mirror oracle), never serialized.
    Tensor template_pixels;
};

struct SynthConfig {
    std::size_t patients_labeled = 60;
    std::size_t patients_unlabeled = 140;
    std::size_t image_size = 64;
    double lesion_rate = 0.5;
    std::uint64_t seed = 42;
    bool alignment_jitter = false;  // +-2px template shift, misalignment ablation

    void validate() const {
        if (image_size < 32 || image_size % 2 != 0)
            throw ValidationError("SynthConfig: image_size must be even and >= 32");
        if (lesion_rate < 0.0 || lesion_rate > 1.0)
            throw ValidationError("SynthConfig: lesion_rate must be in [0,1]");
        if (patients_labeled + patients_unlabeled == 0)
            throw ValidationError("SynthConfig: no patients requested");
    }
};

namespace synth_detail {

struct EyeGeometry {
    double field_cx, field_cy, field_r;
    double disc_x, disc_y, disc_r;
    double mac_x, mac_y, mac_r;
    double arc_amp_sup, arc_amp_inf, arc_len, vessel_w;
    double base[3];
    double vignette, grad_gx, grad_gy;
    double disc_gain[3], mac_gain[3], vessel_gain[3];
};

/// Patient anatomy in the left-eye frame. Appearance parameters vary a lot
/// across patients on purpose: within-position appearance variance has to
/// swamp cross-position mean differences, otherwise untrained features
/// already solve the position probe.
inline EyeGeometry sample_geometry(RngStream& rng, std::size_t s) {
    const double S = static_cast<double>(s);
    EyeGeometry g{};
    g.field_cx = S * rng.uniform(0.48, 0.52);
    g.field_cy = S * rng.uniform(0.48, 0.52);
    g.field_r = S * rng.uniform(0.46, 0.52);
    g.disc_x = S * rng.uniform(0.26, 0.38);
    g.disc_y = S * rng.uniform(0.40, 0.60);
    g.disc_r = S * rng.uniform(0.055, 0.095);
    g.mac_x = S * rng.uniform(0.58, 0.72);
    g.mac_y = S * rng.uniform(0.42, 0.58);
    g.mac_r = S * rng.uniform(0.08, 0.13);
    g.arc_amp_sup = S * rng.uniform(0.14, 0.24);
    g.arc_amp_inf = S * rng.uniform(0.14, 0.24);
    g.arc_len = S * rng.uniform(0.45, 0.60);
    g.vessel_w = rng.uniform(0.7, 1.1) * S / 64.0;
    g.base[0] = rng.uniform(0.42, 0.68);
    g.base[1] = rng.uniform(0.18, 0.34);
    g.base[2] = rng.uniform(0.05, 0.14);
    g.vignette = rng.uniform(0.10, 0.35);
    const double ga = rng.uniform(0.0, 6.283185307179586);
    const double gm = rng.uniform(0.0, 0.10);
    g.grad_gx = gm * std::cos(ga);
    g.grad_gy = gm * std::sin(ga);
    g.disc_gain[0] = rng.uniform(0.22, 0.34);
    g.disc_gain[1] = rng.uniform(0.20, 0.32);
    g.disc_gain[2] = rng.uniform(0.06, 0.14);
    g.mac_gain[0] = -rng.uniform(0.06, 0.12);
    g.mac_gain[1] = -rng.uniform(0.04, 0.09);
    g.mac_gain[2] = -rng.uniform(0.01, 0.04);
    g.vessel_gain[0] = -rng.uniform(0.16, 0.30);
    g.vessel_gain[1] = -rng.uniform(0.08, 0.16);
    g.vessel_gain[2] = -rng.uniform(0.02, 0.06);
    return g;
}

inline EyeGeometry mirror_geometry(const EyeGeometry& g, std::size_t s) {
    const double W = static_cast<double>(s - 1);
    EyeGeometry m = g;
    m.field_cx = W - g.field_cx;
    m.disc_x = W - g.disc_x;
    m.mac_x = W - g.mac_x;
    m.grad_gx = -g.grad_gx;
    m.arc_len = -g.arc_len;  // arcs extend toward the other side
    return m;
}

inline Tensor render_template(const EyeGeometry& g, std::size_t s) {
    const double S = static_cast<double>(s);
    Tensor img({3, s, s});
    // vessel intensity map, max-blended gaussian tubes along two arcs
    Tensor vmap({s, s});
    const int n_pts = 160;
    for (int arc = 0; arc < 2; ++arc) {
        const double amp = arc == 0 ? g.arc_amp_sup : -g.arc_amp_inf;
        for (int i = 0; i < n_pts; ++i) {
            const double t = static_cast<double>(i) / (n_pts - 1);
            const double px = g.disc_x + t * g.arc_len;
            const double py = g.disc_y - amp * std::sin(3.141592653589793 * t);
            const int x0 = static_cast<int>(std::floor(px)) - 3;
            const int y0 = static_cast<int>(std::floor(py)) - 3;
            for (int y = y0; y <= y0 + 6; ++y) {
                if (y < 0 || y >= static_cast<int>(s)) continue;
                for (int x = x0; x <= x0 + 6; ++x) {
                    if (x < 0 || x >= static_cast<int>(s)) continue;
                    const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
                    const double v = std::exp(-d2 / (2.0 * g.vessel_w * g.vessel_w));
                    auto& cell = vmap.at2(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                    if (v > cell) cell = v;
                }
            }
        }
    }
    const double outside[3] = {0.02, 0.012, 0.01};
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            const double dx = x - g.field_cx, dy = y - g.field_cy;
            const double r = std::sqrt(dx * dx + dy * dy);
            const double edge = std::clamp((g.field_r - r) / 1.5, 0.0, 1.0);
            const double rr = r / g.field_r;
            const double illum =
                1.0 - g.vignette * rr * rr + (dx * g.grad_gx + dy * g.grad_gy) / S;
            const double ddx = x - g.disc_x, ddy = y - g.disc_y;
            const double disc = std::exp(-(ddx * ddx + ddy * ddy) / (g.disc_r * g.disc_r) * 1.6);
            const double mdx = x - g.mac_x, mdy = y - g.mac_y;
            const double mac = std::exp(-(mdx * mdx + mdy * mdy) / (g.mac_r * g.mac_r) * 1.4);
            const double ves = vmap.at2(y, x);
            for (std::size_t c = 0; c < 3; ++c) {
                double v = g.base[c] * illum + g.disc_gain[c] * disc + g.mac_gain[c] * mac +
                           g.vessel_gain[c] * ves;
                v = v * edge + outside[c] * (1.0 - edge);
                img.at3(c, y, x) = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return img;
}

struct Lesion {
    double cx, cy, rx, ry, cosa, sina;
    bool exudate;
};

/// Exudates cluster near the field center, hemorrhages sit on the vessel
/// arcs; corners stay lesion-free, which makes the position/abnormality
/// interaction learnable.
inline Lesion sample_lesion(RngStream& rng, const EyeGeometry& g, std::size_t s) {
    const double S = static_cast<double>(s);
    Lesion l{};
    l.exudate = rng.bernoulli(0.5);
    if (l.exudate) {
        const double ang = rng.uniform(0.0, 6.283185307179586);
        const double rad = S * rng.uniform(0.0, 0.16);
        l.cx = g.field_cx + rad * std::cos(ang);
        l.cy = g.field_cy + rad * std::sin(ang);
    } else {
        const double t = rng.uniform(0.15, 0.85);
        const double amp = rng.bernoulli(0.5) ? g.arc_amp_sup : -g.arc_amp_inf;
        l.cx = g.disc_x + t * g.arc_len + rng.normal() * 1.5;
        l.cy = g.disc_y - amp * std::sin(3.141592653589793 * t) + rng.normal() * 1.5;
    }
    l.rx = rng.uniform(1.3, 2.6) * S / 64.0;
    l.ry = rng.uniform(1.3, 2.6) * S / 64.0;
    const double a = rng.uniform(0.0, 3.141592653589793);
    l.cosa = std::cos(a);
    l.sina = std::sin(a);
    return l;
}

inline void stamp_lesion(const Lesion& l, const EyeGeometry& g, Tensor& pixels, Tensor& mask) {
    const std::size_t s = mask.extent(0);
    const double exu_gain[3] = {0.30, 0.27, 0.02};
    const double hem_gain[3] = {-0.30, -0.20, -0.08};
    const double* gain = l.exudate ? exu_gain : hem_gain;
    const int reach = static_cast<int>(std::ceil(std::max(l.rx, l.ry) * 2.5)) + 1;
    const int x0 = static_cast<int>(std::floor(l.cx)) - reach;
    const int y0 = static_cast<int>(std::floor(l.cy)) - reach;
    for (int y = y0; y <= y0 + 2 * reach; ++y) {
        if (y < 0 || y >= static_cast<int>(s)) continue;
        for (int x = x0; x <= x0 + 2 * reach; ++x) {
            if (x < 0 || x >= static_cast<int>(s)) continue;
            const double fdx = x - g.field_cx, fdy = y - g.field_cy;
            if (fdx * fdx + fdy * fdy > (g.field_r - 1.0) * (g.field_r - 1.0))
                continue;  // mask support stays inside the field
            const double dx = x - l.cx, dy = y - l.cy;
            const double u = (dx * l.cosa + dy * l.sina) / l.rx;
            const double v = (-dx * l.sina + dy * l.cosa) / l.ry;
            const double gv = std::exp(-(u * u + v * v) * 1.8);
            if (gv < 0.05) continue;
            for (std::size_t c = 0; c < 3; ++c) {
                auto& px = pixels.at3(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                px = std::clamp(px + gain[c] * gv, 0.0, 1.0);
            }
            if (gv > 0.35) mask.at2(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1.0;
        }
    }
}

inline Tensor shift_template(const Tensor& tpl, int dy, int dx) {
    const std::size_t c = tpl.extent(0), h = tpl.extent(1), w = tpl.extent(2);
    Tensor out({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t sy = static_cast<std::size_t>(
                    std::clamp<int>(static_cast<int>(y) + dy, 0, static_cast<int>(h) - 1));
                const std::size_t sx = static_cast<std::size_t>(
                    std::clamp<int>(static_cast<int>(x) + dx, 0, static_cast<int>(w) - 1));
                out.at3(ch, y, x) = tpl.at3(ch, sy, sx);
            }
    return out;
}

}  // namespace synth_detail

inline std::string patient_id_for(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%05zu", index);
    return buf;
}

/// Generates one eye. Deterministic given (config, patient index, laterality)
/// regardless of generation order.
inline ImageRecord generate_eye(const SynthConfig& cfg, std::size_t patient_index,
                                Laterality lat) {
    using namespace synth_detail;
    const std::size_t s = cfg.image_size;
    ImageRecord rec;
    rec.patient_id = patient_id_for(patient_index);
    rec.image_id = rec.patient_id + (lat == Laterality::left ? "L" : "R");
    rec.laterality = lat;
    rec.split = patient_index < cfg.patients_labeled ? Split::labeled : Split::unlabeled;

    RngStream prng(cfg.seed, "patient:" + rec.patient_id);
    const EyeGeometry left_geom = sample_geometry(prng, s);
    Tensor left_tpl = render_template(left_geom, s);

    // right eye: exact column-mirror of the left template
    Tensor tpl = lat == Laterality::right ? flip_horizontal(left_tpl) : left_tpl;
    const EyeGeometry geom =
        lat == Laterality::right ? mirror_geometry(left_geom, s) : left_geom;

    RngStream erng(cfg.seed, "image:" + rec.image_id);
    if (cfg.alignment_jitter) {
        const int dy = static_cast<int>(erng.index(5)) - 2;
        const int dx = static_cast<int>(erng.index(5)) - 2;
        tpl = shift_template(tpl, dy, dx);
    }
    rec.template_pixels = tpl;

    Tensor pixels = tpl;
    Tensor mask({s, s});
    if (erng.bernoulli(cfg.lesion_rate)) {
        const std::size_t n_lesions = 1 + erng.index(3);
        for (std::size_t i = 0; i < n_lesions; ++i)
            stamp_lesion(sample_lesion(erng, geom, s), geom, pixels, mask);
    }

    // per-eye global appearance jitter, then pixel noise
    double gain[3], offset[3];
    for (std::size_t c = 0; c < 3; ++c) {
        gain[c] = erng.uniform(0.88, 1.12);
        offset[c] = erng.uniform(-0.04, 0.04);
    }
    const double sigma = erng.uniform(0.012, 0.02);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < s * s; ++i) {
            double v = pixels[c * s * s + i] * gain[c] + offset[c] + sigma * erng.normal();
            pixels[c * s * s + i] = std::clamp(v, 0.0, 1.0);
        }

    rec.pixels = std::move(pixels);
    rec.lesion_mask = std::move(mask);
    bool any = false;
    for (std::size_t i = 0; i < rec.lesion_mask.size(); ++i)
        if (rec.lesion_mask[i] != 0.0) any = true;
    rec.abnormal = any;  // gt_label == normal iff the mask is all-zero
    return rec;
}

inline std::vector<ImageRecord> generate_dataset(const SynthConfig& cfg, int threads = 1) {
    cfg.validate();
    const std::size_t n_patients = cfg.patients_labeled + cfg.patients_unlabeled;
    std::vector<ImageRecord> records(2 * n_patients);
    parallel_for(2 * n_patients, threads, [&](std::size_t i) {
        const std::size_t patient = i / 2;
        const Laterality lat = i % 2 == 0 ? Laterality::left : Laterality::right;
        records[i] = generate_eye(cfg, patient, lat);
    });
    return records;
}

/// Exact mirror-equality of two pre-noise templates.
inline bool template_mirror_equal(const Tensor& left_tpl, const Tensor& right_tpl) {
    if (!left_tpl.same_shape(right_tpl) || left_tpl.empty()) return false;
    const Tensor flipped = flip_horizontal(left_tpl);
    for (std::size_t i = 0; i < flipped.size(); ++i)
        if (flipped[i] != right_tpl[i]) return false;
    return true;
}

/// True iff the right eye's pre-noise template is exactly the column-reversed
/// left template. Only meaningful on freshly generated records (templates are
/// not serialized).
inline bool mirror_check(const ImageRecord& left, const ImageRecord& right) {
    if (left.patient_id != right.patient_id)
        throw ValidationError("mirror_check: records from different patients: " +
                              left.patient_id + " vs " + right.patient_id);
    if (left.laterality != Laterality::left || right.laterality != Laterality::right)
        throw ValidationError("mirror_check: expected (left, right) pair");
    if (left.template_pixels.empty() || right.template_pixels.empty())
        throw ValidationError("mirror_check: templates unavailable (loaded from disk?)");
    return template_mirror_equal(left.template_pixels, right.template_pixels);
}

// ---------------------------------------------------------------------------
// dataset directory: tensors/<image_id>.f32t (+ .mask.f32t) and a JSON-lines
// manifest with one record per line.
// ---------------------------------------------------------------------------

inline void write_dataset(const std::filesystem::path& dir,
                          const std::vector<ImageRecord>& records, int threads = 1) {
    std::filesystem::create_directories(dir / "tensors");
    std::vector<json> lines(records.size());
    parallel_for(records.size(), threads, [&](std::size_t i) {
        const ImageRecord& r = records[i];
        const std::string pixel_rel = "tensors/" + r.image_id + ".f32t";
        const std::string mask_rel = "tensors/" + r.image_id + ".mask.f32t";
        atomic_save_tensor(dir / pixel_rel, r.pixels);
        atomic_save_tensor(dir / mask_rel, r.lesion_mask);
        json j;
        j["image_id"] = r.image_id;
        j["patient_id"] = r.patient_id;
        j["laterality"] = to_string(r.laterality);
        j["gt_label"] = r.abnormal ? "abnormal" : "normal";
        j["split"] = to_string(r.split);
        j["pixel_path"] = pixel_rel;
        j["mask_path"] = mask_rel;
        lines[i] = std::move(j);
    });
    atomic_write_text(dir / "manifest.jsonl", to_jsonl(lines));
}

inline std::vector<ImageRecord> load_dataset(const std::filesystem::path& dir,
                                             int threads = 1) {
    require_exists(dir / "manifest.jsonl", "dataset manifest");
    const auto lines = read_jsonl(dir / "manifest.jsonl");
    std::vector<ImageRecord> records(lines.size());
    parallel_for(lines.size(), threads, [&](std::size_t i) {
        const json& j = lines[i];
        ImageRecord r;
        r.image_id = j.at("image_id").get<std::string>();
        r.patient_id = j.at("patient_id").get<std::string>();
        r.laterality = j.at("laterality").get<std::string>() == "right" ? Laterality::right
                                                                        : Laterality::left;
        r.abnormal = j.at("gt_label").get<std::string>() == "abnormal";
        r.split = j.at("split").get<std::string>() == "labeled" ? Split::labeled
                                                                : Split::unlabeled;
        r.pixels = load_tensor_f32(dir / j.at("pixel_path").get<std::string>());
        r.lesion_mask = load_tensor_f32(dir / j.at("mask_path").get<std::string>());
        records[i] = std::move(r);
    });
    return records;
}

}  // namespace swcl
