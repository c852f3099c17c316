#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "swcl/eval.hpp"
#include "swcl/io.hpp"
#include "swcl/labeler.hpp"
#include "swcl/patchgen.hpp"
#include "swcl/pretrain.hpp"
#include "swcl/synth.hpp"

namespace swcl {

// File-based stage handoffs under one workdir:
//   dataset/  labeler/  cams/  patches/  encoder/  probe/  ablation/
// Every artifact gets a .meta.json sidecar with (stage, seed, config, hash).

struct Workdir {
    std::filesystem::path root;

    std::filesystem::path dataset_dir() const { return root / "dataset"; }
    std::filesystem::path labeler_dir() const { return root / "labeler"; }
    std::filesystem::path cams_dir() const { return root / "cams"; }
    std::filesystem::path patches_dir() const { return root / "patches"; }
    std::filesystem::path encoder_dir() const { return root / "encoder"; }
    std::filesystem::path probe_dir() const { return root / "probe"; }
    std::filesystem::path ablation_dir() const { return root / "ablation"; }
};

/// One CLI invocation owns its workdir; guarded by an exclusive lock file.
class WorkdirLock {
public:
    explicit WorkdirLock(const std::filesystem::path& root) : path_(root / ".lock") {
        std::filesystem::create_directories(root);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw ValidationError("workdir is locked by another invocation (remove " +
                                  path_.string() + " if stale)");
    }
    ~WorkdirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            std::filesystem::remove(path_, ec);
        }
    }
    WorkdirLock(const WorkdirLock&) = delete;
    WorkdirLock& operator=(const WorkdirLock&) = delete;

private:
    std::filesystem::path path_;
    int fd_ = -1;
};

// ---------------------------------------------------------------------------
// config <-> json (file values override defaults, CLI flags override both)
// ---------------------------------------------------------------------------

template <typename T>
void maybe_get(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline json to_json(const SynthConfig& c) {
    return json{{"patients_labeled", c.patients_labeled},
                {"patients_unlabeled", c.patients_unlabeled},
                {"image_size", c.image_size},
                {"lesion_rate", c.lesion_rate},
                {"seed", c.seed},
                {"alignment_jitter", c.alignment_jitter}};
}

inline SynthConfig synth_from_json(const json& j, SynthConfig c) {
    maybe_get(j, "patients_labeled", c.patients_labeled);
    maybe_get(j, "patients_unlabeled", c.patients_unlabeled);
    maybe_get(j, "image_size", c.image_size);
    maybe_get(j, "lesion_rate", c.lesion_rate);
    maybe_get(j, "seed", c.seed);
    maybe_get(j, "alignment_jitter", c.alignment_jitter);
    return c;
}

inline json to_json(const TrunkConfig& c) {
    return json{{"in_channels", c.in_channels},
                {"channels", c.channels},
                {"kernel", c.kernel},
                {"stride", c.stride},
                {"pad", c.pad}};
}

inline TrunkConfig trunk_from_json(const json& j, TrunkConfig c) {
    maybe_get(j, "in_channels", c.in_channels);
    maybe_get(j, "channels", c.channels);
    maybe_get(j, "kernel", c.kernel);
    maybe_get(j, "stride", c.stride);
    maybe_get(j, "pad", c.pad);
    return c;
}

inline json to_json(const S4LConfig& c) {
    return json{{"w", c.w},
                {"soft_margin", c.soft_margin},
                {"triplet_form",
                 c.triplet_form == TripletForm::softplus_margin ? "softplus-margin" : "hinge"},
                {"views_per_image", c.views_per_image},
                {"base_lr", c.base_lr},
                {"momentum", c.momentum},
                {"weight_decay", c.weight_decay},
                {"batch_images", c.batch_images},
                {"epochs", c.epochs},
                {"seed", c.seed},
                {"holdout_fraction", c.holdout_fraction}};
}

inline S4LConfig s4l_from_json(const json& j, S4LConfig c) {
    maybe_get(j, "w", c.w);
    maybe_get(j, "soft_margin", c.soft_margin);
    if (j.contains("triplet_form"))
        c.triplet_form = j.at("triplet_form").get<std::string>() == "hinge"
                             ? TripletForm::hinge
                             : TripletForm::softplus_margin;
    maybe_get(j, "views_per_image", c.views_per_image);
    maybe_get(j, "base_lr", c.base_lr);
    maybe_get(j, "momentum", c.momentum);
    maybe_get(j, "weight_decay", c.weight_decay);
    maybe_get(j, "batch_images", c.batch_images);
    maybe_get(j, "epochs", c.epochs);
    maybe_get(j, "seed", c.seed);
    maybe_get(j, "holdout_fraction", c.holdout_fraction);
    return c;
}

inline LabelSet parse_label_set(const std::string& csv) {
    LabelSet out;
    std::string token;
    std::istringstream is(csv);
    while (std::getline(is, token, ',')) {
        if (token.empty()) continue;
        if (token == "position") out.push_back(LabelKind::position);
        else if (token == "abnormality") out.push_back(LabelKind::abnormality);
        else if (token == "patient") out.push_back(LabelKind::patient);
        else throw ValidationError("unknown label kind: " + token);
    }
    if (out.empty()) throw ValidationError("label set must be nonempty");
    return out;
}

inline std::string label_set_csv(const LabelSet& s) {
    std::string out;
    for (LabelKind k : s) out += (out.empty() ? "" : ",") + std::string(to_string(k));
    return out;
}

inline json to_json(const PretrainConfig& c) {
    return json{{"trunk", to_json(c.encoder.trunk)},
                {"proj_dim", c.encoder.proj_dim},
                {"normalize_z", c.encoder.normalize_z},
                {"tau", c.loss.tau},
                {"labels", label_set_csv(c.loss.labels)},
                {"batch_patches", c.loss.batch_patches},
                {"base_lr", c.base_lr},
                {"momentum", c.momentum},
                {"weight_decay", c.weight_decay},
                {"epochs", c.epochs},
                {"warmup_epochs", c.warmup_epochs},
                {"threshold", c.threshold},
                {"flip_p", c.augment.flip_p},
                {"seed", c.seed}};
}

inline PretrainConfig pretrain_from_json(const json& j, PretrainConfig c) {
    if (j.contains("trunk")) c.encoder.trunk = trunk_from_json(j.at("trunk"), c.encoder.trunk);
    maybe_get(j, "proj_dim", c.encoder.proj_dim);
    maybe_get(j, "normalize_z", c.encoder.normalize_z);
    maybe_get(j, "tau", c.loss.tau);
    if (j.contains("labels")) c.loss.labels = parse_label_set(j.at("labels").get<std::string>());
    maybe_get(j, "batch_patches", c.loss.batch_patches);
    maybe_get(j, "base_lr", c.base_lr);
    maybe_get(j, "momentum", c.momentum);
    maybe_get(j, "weight_decay", c.weight_decay);
    maybe_get(j, "epochs", c.epochs);
    maybe_get(j, "warmup_epochs", c.warmup_epochs);
    maybe_get(j, "threshold", c.threshold);
    maybe_get(j, "flip_p", c.augment.flip_p);
    maybe_get(j, "seed", c.seed);
    return c;
}

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

inline void stage_synth(const Workdir& wd, const SynthConfig& cfg, int threads) {
    const auto records = generate_dataset(cfg, threads);
    std::filesystem::create_directories(wd.dataset_dir());
    write_dataset(wd.dataset_dir(), records, threads);
    write_meta_sidecar(wd.dataset_dir() / "manifest.jsonl", "synth", cfg.seed, to_json(cfg));
}

inline LabelerTrainResult stage_train_labeler(const Workdir& wd, const TrunkConfig& trunk,
                                              const S4LConfig& cfg, int threads) {
    require_exists(wd.dataset_dir() / "manifest.jsonl", "dataset manifest");
    const auto records = load_dataset(wd.dataset_dir(), threads);
    std::vector<ImageRecord> labeled, unlabeled;
    for (const auto& r : records)
        (r.split == Split::labeled ? labeled : unlabeled).push_back(r);

    const LabelerTrainResult result = train_labeler(labeled, unlabeled, trunk, cfg);

    std::filesystem::create_directories(wd.labeler_dir());
    atomic_save_checkpoint(wd.labeler_dir() / "checkpoint.ckpt", result.params);
    std::string log = "epoch,loss,ce,triplet\n";
    char buf[128];
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.8f,%.8f,%.8f\n", e, result.epoch_losses[e][0],
                      result.epoch_losses[e][1], result.epoch_losses[e][2]);
        log += buf;
    }
    atomic_write_text(wd.labeler_dir() / "train_log.csv", log);
    json res{{"holdout_auc", result.holdout_auc}, {"holdout_images", result.holdout_images}};
    atomic_write_text(wd.labeler_dir() / "result.json", res.dump(2) + "\n");
    json cfg_json = to_json(cfg);
    cfg_json["trunk"] = to_json(trunk);
    write_meta_sidecar(wd.labeler_dir() / "checkpoint.ckpt", "train-labeler", cfg.seed,
                       cfg_json);
    return result;
}

inline std::size_t stage_extract_cams(const Workdir& wd, const TrunkConfig& trunk,
                                      std::uint64_t seed, int threads) {
    require_exists(wd.dataset_dir() / "manifest.jsonl", "dataset manifest");
    require_exists(wd.labeler_dir() / "checkpoint.ckpt", "labeler checkpoint");
    const NetworkParams params = load_checkpoint(wd.labeler_dir() / "checkpoint.ckpt");
    const auto records = load_dataset(wd.dataset_dir(), threads);
    std::filesystem::create_directories(wd.cams_dir());

    std::vector<json> lines(records.size());
    parallel_for(records.size(), threads, [&](std::size_t i) {
        const Tensor cam = extract_normalized_cam(params, trunk, records[i].pixels);
        const std::string rel = records[i].image_id + ".cam";
        atomic_save_tensor(wd.cams_dir() / rel, cam);
        lines[i] = json{{"image_id", records[i].image_id}, {"cam_path", rel}};
    });
    atomic_write_text(wd.cams_dir() / "index.jsonl", to_jsonl(lines));
    write_meta_sidecar(wd.cams_dir() / "index.jsonl", "extract-cams", seed,
                       json{{"trunk", to_json(trunk)}});
    return records.size();
}

inline std::map<std::string, Tensor> load_cams(const std::filesystem::path& cams_dir,
                                               int threads = 1) {
    require_exists(cams_dir / "index.jsonl", "CAM index");
    const auto lines = read_jsonl(cams_dir / "index.jsonl");
    std::vector<std::pair<std::string, Tensor>> loaded(lines.size());
    parallel_for(lines.size(), threads, [&](std::size_t i) {
        loaded[i] = {lines[i].at("image_id").get<std::string>(),
                     load_tensor_f32(cams_dir / lines[i].at("cam_path").get<std::string>())};
    });
    return {loaded.begin(), loaded.end()};
}

inline BuildResult stage_gen_patches(const Workdir& wd, double threshold, double patch_frac,
                                     bool emit_histogram, std::uint64_t seed, int threads) {
    require_exists(wd.dataset_dir() / "manifest.jsonl", "dataset manifest");
    require_exists(wd.cams_dir() / "index.jsonl", "CAM index");
    if (!(patch_frac > 0.0 && patch_frac <= 1.0))
        throw ValidationError("gen-patches: patch fraction must be in (0,1]");

    const auto records = load_dataset(wd.dataset_dir(), threads);
    const auto cams = load_cams(wd.cams_dir(), threads);
    const std::size_t s = records.empty() ? 0 : records.front().pixels.extent(1);
    const std::size_t patch_side = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(patch_frac * static_cast<double>(s))));
    const std::string source_hash =
        hash_text(read_text(wd.dataset_dir() / "manifest.jsonl") +
                  read_text(wd.cams_dir() / "index.jsonl"));

    BuildResult built = build_dataset(records, cams, threshold, patch_side, source_hash);
    std::filesystem::create_directories(wd.patches_dir());
    write_patch_manifest(wd.patches_dir(), built.manifest, threads);
    if (emit_histogram)
        atomic_write_text(wd.patches_dir() / "histogram.csv", histogram_csv(built.histogram));
    write_meta_sidecar(wd.patches_dir() / "patches.jsonl", "gen-patches", seed,
                       json{{"threshold", threshold},
                            {"patch_frac", patch_frac},
                            {"patch_side", patch_side},
                            {"source_hash", source_hash}});
    return built;
}

inline PretrainResult stage_pretrain(const Workdir& wd, const PretrainConfig& cfg,
                                     int threads) {
    require_exists(wd.patches_dir() / "patches.jsonl", "patch manifest");
    const PatchManifest manifest = load_patch_manifest(wd.patches_dir(), true, threads);
    PretrainConfig effective = cfg;
    effective.threads = threads;
    const PretrainResult result = pretrain(manifest, effective);

    std::filesystem::create_directories(wd.encoder_dir());
    atomic_save_checkpoint(wd.encoder_dir() / "checkpoint.ckpt", result.params);
    std::string log = "epoch,mean_loss\n";
    char buf[64];
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.8f\n", e, result.epoch_loss[e]);
        log += buf;
    }
    atomic_write_text(wd.encoder_dir() / "loss_log.csv", log);
    json cfg_json = to_json(cfg);
    cfg_json["trend_ok"] = result.trend_ok;
    write_meta_sidecar(wd.encoder_dir() / "checkpoint.ckpt", "pretrain", cfg.seed, cfg_json);
    return result;
}

inline EncoderConfig encoder_config_from_meta(const Workdir& wd) {
    const auto meta_path = wd.encoder_dir() / "checkpoint.ckpt.meta.json";
    require_exists(meta_path, "encoder checkpoint meta");
    const json meta = json::parse(read_text(meta_path));
    PretrainConfig defaults;
    return pretrain_from_json(meta.at("config"), defaults).encoder;
}

inline std::vector<ProbeResult> stage_probe(const Workdir& wd, std::uint64_t seed,
                                            int threads) {
    require_exists(wd.encoder_dir() / "checkpoint.ckpt", "encoder checkpoint");
    require_exists(wd.patches_dir() / "patches.jsonl", "patch manifest");
    const NetworkParams params = load_checkpoint(wd.encoder_dir() / "checkpoint.ckpt");
    const EncoderConfig enc = encoder_config_from_meta(wd);
    const PatchManifest manifest = load_patch_manifest(wd.patches_dir(), true, threads);

    std::vector<ProbeResult> results;
    for (ProbeTarget target : {ProbeTarget::position, ProbeTarget::abnormality})
        results.push_back(
            linear_probe(params, enc, manifest.records, target, seed, threads));

    std::filesystem::create_directories(wd.probe_dir());
    std::string csv = "target,metric,value,n_eval\n";
    char buf[128];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%zu\n", to_string(r.target),
                      r.metric.c_str(), r.value, r.n_eval);
        csv += buf;
    }
    atomic_write_text(wd.probe_dir() / "results.csv", csv);
    write_meta_sidecar(wd.probe_dir() / "results.csv", "probe", seed, json{{"seed", seed}});
    return results;
}

enum class AblateMode { threshold, labels };

inline AblationGrid stage_ablate(const Workdir& wd, AblateMode mode, std::size_t n_seeds,
                                 const PretrainConfig& base, double threshold,
                                 double patch_frac, int threads) {
    require_exists(wd.dataset_dir() / "manifest.jsonl", "dataset manifest");
    require_exists(wd.cams_dir() / "index.jsonl", "CAM index");
    const auto records = load_dataset(wd.dataset_dir(), threads);
    const auto cams = load_cams(wd.cams_dir(), threads);
    const std::size_t s = records.empty() ? 0 : records.front().pixels.extent(1);

    AblationContext ctx;
    ctx.images = &records;
    ctx.cams = &cams;
    ctx.patch_side = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(patch_frac * static_cast<double>(s))));
    ctx.pretrain = base;
    ctx.threads = threads;
    ctx.seeds.clear();
    for (std::size_t i = 0; i < n_seeds; ++i) ctx.seeds.push_back(base.seed + i);

    const AblationGrid grid =
        mode == AblateMode::threshold
            ? ablate_thresholds({0.3, 0.4, 0.5}, ctx)
            : ablate_label_schemes(all_label_schemes(), threshold, ctx);

    std::filesystem::create_directories(wd.ablation_dir());
    atomic_write_text(wd.ablation_dir() / "grid.csv", grid_csv(grid));
    json cfg_json = to_json(base);
    cfg_json["mode"] = mode == AblateMode::threshold ? "threshold" : "labels";
    cfg_json["n_seeds"] = n_seeds;
    cfg_json["patch_frac"] = patch_frac;
    write_meta_sidecar(wd.ablation_dir() / "grid.csv", "ablate", base.seed, cfg_json);
    return grid;
}

}  // namespace swcl
