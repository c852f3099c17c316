// swcl: end-to-end pipeline driver.
//   synth -> train-labeler -> extract-cams -> gen-patches -> pretrain ->
//   probe / ablate, plus a self-contained `verify` invariant suite.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "swcl/pipeline.hpp"
#include "swcl/verify.hpp"

namespace {

using swcl::json;

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    return json::parse(swcl::read_text(path));
}

// CLI flags > config file > defaults. CLI11 tells us which flags were set
// explicitly; file values are applied first, then re-overridden.
struct Cli {
    CLI::App app{"semi-weakly supervised contrastive pretraining pipeline"};
    int threads = 1;
    std::string workdir = "swcl-run";
    std::string config_path;

    Cli() {
        app.require_subcommand(1);
        app.add_option("--threads", threads, "worker cap; does not change results");
        app.fallthrough();
    }
};

double parse_or(const json& cfg, const char* key, double fallback) {
    return cfg.contains(key) ? cfg.at(key).get<double>() : fallback;
}

}  // namespace

int main(int argc, char** argv) {
    Cli cli;
    CLI::App& app = cli.app;

    // --- synth ---------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate the synthetic paired-eye dataset");
    std::size_t patients_total = 200;
    swcl::SynthConfig synth_cfg;
    std::string synth_workdir = cli.workdir, synth_config;
    synth->add_option("--workdir", synth_workdir, "pipeline working directory");
    synth->add_option("--config", synth_config, "JSON config file");
    auto* opt_total = synth->add_option("--patients", patients_total,
                                        "total patients (30% labeled, 70% unlabeled)");
    auto* opt_lab = synth->add_option("--patients-labeled", synth_cfg.patients_labeled);
    auto* opt_unlab = synth->add_option("--patients-unlabeled", synth_cfg.patients_unlabeled);
    auto* opt_size = synth->add_option("--image-size", synth_cfg.image_size);
    auto* opt_rate = synth->add_option("--lesion-rate", synth_cfg.lesion_rate);
    auto* opt_sseed = synth->add_option("--seed", synth_cfg.seed);
    auto* opt_jitter = synth->add_flag("--jitter", synth_cfg.alignment_jitter,
                                       "±2px template shift (misalignment ablation)");

    // --- train-labeler ---------------------------------------------------------
    auto* tl = app.add_subcommand("train-labeler", "train the semi-supervised pseudo-labeler");
    swcl::S4LConfig s4l_cfg;
    std::string tl_workdir = cli.workdir, tl_config, tl_triplet = "softplus-margin";
    tl->add_option("--workdir", tl_workdir);
    tl->add_option("--config", tl_config);
    auto* opt_w = tl->add_option("--w", s4l_cfg.w, "unlabeled-loss weight");
    auto* opt_margin = tl->add_option("--margin", s4l_cfg.soft_margin);
    auto* opt_tform = tl->add_option("--triplet-formulation", tl_triplet)
                          ->check(CLI::IsMember({"softplus-margin", "hinge"}));
    auto* opt_views = tl->add_option("--views", s4l_cfg.views_per_image);
    auto* opt_tlr = tl->add_option("--lr", s4l_cfg.base_lr);
    auto* opt_tbatch = tl->add_option("--batch", s4l_cfg.batch_images);
    auto* opt_tepochs = tl->add_option("--epochs", s4l_cfg.epochs);
    auto* opt_tseed = tl->add_option("--seed", s4l_cfg.seed);

    // --- extract-cams ------------------------------------------------------------
    auto* ec = app.add_subcommand("extract-cams", "dump normalized abnormality CAMs");
    std::string ec_workdir = cli.workdir;
    std::uint64_t ec_seed = 42;
    ec->add_option("--workdir", ec_workdir);
    ec->add_option("--seed", ec_seed);

    // --- gen-patches -------------------------------------------------------------
    auto* gp = app.add_subcommand("gen-patches", "build the semi-weak five-patch dataset");
    std::string gp_workdir = cli.workdir, gp_config;
    double gp_threshold = 0.4, gp_patch_frac = 0.5;
    std::uint64_t gp_seed = 42;
    bool gp_hist = false;
    gp->add_option("--workdir", gp_workdir);
    gp->add_option("--config", gp_config);
    auto* opt_gpt = gp->add_option("--threshold", gp_threshold, "abnormality threshold t");
    auto* opt_gpf = gp->add_option("--patch-frac", gp_patch_frac, "patch side / image side");
    gp->add_flag("--emit-histogram", gp_hist, "write the 10-bin lesion-score histogram");
    gp->add_option("--seed", gp_seed);

    // --- pretrain ------------------------------------------------------------------
    auto* pt = app.add_subcommand("pretrain", "contrastive pretraining on the patch dataset");
    swcl::PretrainConfig pt_cfg;
    std::string pt_workdir = cli.workdir, pt_config, pt_labels;
    pt->add_option("--workdir", pt_workdir);
    pt->add_option("--config", pt_config);
    auto* opt_tau = pt->add_option("--tau", pt_cfg.loss.tau, "temperature");
    auto* opt_labels = pt->add_option("--labels", pt_labels,
                                      "comma list of position,abnormality,patient");
    auto* opt_pbatch = pt->add_option("--batch", pt_cfg.loss.batch_patches, "N source patches");
    auto* opt_pepochs = pt->add_option("--epochs", pt_cfg.epochs);
    auto* opt_warmup = pt->add_option("--warmup", pt_cfg.warmup_epochs);
    auto* opt_plr = pt->add_option("--lr", pt_cfg.base_lr);
    auto* opt_pthr = pt->add_option("--threshold", pt_cfg.threshold,
                                    "re-threshold abnormality labels from stored scores");
    auto* opt_proj = pt->add_option("--proj-dim", pt_cfg.encoder.proj_dim);
    auto* opt_flip = pt->add_option("--flip-p", pt_cfg.augment.flip_p,
                                    "horizontal flip probability (default off)");
    auto* opt_nonorm = pt->add_flag("--no-normalize-z", "skip z normalization (ablation)");
    auto* opt_pseed = pt->add_option("--seed", pt_cfg.seed);

    // --- probe --------------------------------------------------------------------
    auto* pr = app.add_subcommand("probe", "linear probes on the frozen encoder");
    std::string pr_workdir = cli.workdir;
    std::uint64_t pr_seed = 42;
    pr->add_option("--workdir", pr_workdir);
    pr->add_option("--seed", pr_seed);

    // --- ablate --------------------------------------------------------------------
    auto* ab = app.add_subcommand("ablate", "threshold / label-scheme ablation grids");
    std::string ab_workdir = cli.workdir, ab_mode = "labels", ab_labels;
    std::size_t ab_seeds = 5;
    double ab_threshold = 0.4, ab_patch_frac = 0.5;
    swcl::PretrainConfig ab_cfg;
    ab->add_option("--workdir", ab_workdir);
    ab->add_option("--mode", ab_mode)->check(CLI::IsMember({"threshold", "labels"}));
    ab->add_option("--seeds", ab_seeds, "number of seeds per configuration");
    ab->add_option("--threshold", ab_threshold);
    ab->add_option("--patch-frac", ab_patch_frac);
    ab->add_option("--tau", ab_cfg.loss.tau);
    ab->add_option("--batch", ab_cfg.loss.batch_patches);
    ab->add_option("--epochs", ab_cfg.epochs);
    ab->add_option("--lr", ab_cfg.base_lr);
    ab->add_option("--seed", ab_cfg.seed);

    // --- verify --------------------------------------------------------------------
    auto* vf = app.add_subcommand("verify", "run the full invariant suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) {
            const json file_cfg = load_config_file(synth_config);
            swcl::SynthConfig cfg = swcl::synth_from_json(file_cfg, swcl::SynthConfig{});
            if (*opt_total) {
                patients_total = std::max<std::size_t>(1, patients_total);
                cfg.patients_labeled = std::max<std::size_t>(1, patients_total * 3 / 10);
                cfg.patients_unlabeled = patients_total - cfg.patients_labeled;
            }
            if (*opt_lab) cfg.patients_labeled = synth_cfg.patients_labeled;
            if (*opt_unlab) cfg.patients_unlabeled = synth_cfg.patients_unlabeled;
            if (*opt_size) cfg.image_size = synth_cfg.image_size;
            if (*opt_rate) cfg.lesion_rate = synth_cfg.lesion_rate;
            if (*opt_sseed) cfg.seed = synth_cfg.seed;
            if (*opt_jitter) cfg.alignment_jitter = synth_cfg.alignment_jitter;
            cfg.validate();
            swcl::Workdir wd{synth_workdir};
            swcl::WorkdirLock lock(wd.root);
            swcl::stage_synth(wd, cfg, cli.threads);
            std::printf("synth: wrote %zu images to %s\n",
                        2 * (cfg.patients_labeled + cfg.patients_unlabeled),
                        wd.dataset_dir().c_str());
        } else if (*tl) {
            const json file_cfg = load_config_file(tl_config);
            swcl::S4LConfig cfg = swcl::s4l_from_json(file_cfg, swcl::S4LConfig{});
            if (*opt_w) cfg.w = s4l_cfg.w;
            if (*opt_margin) cfg.soft_margin = s4l_cfg.soft_margin;
            if (*opt_tform)
                cfg.triplet_form = tl_triplet == "hinge" ? swcl::TripletForm::hinge
                                                         : swcl::TripletForm::softplus_margin;
            if (*opt_views) cfg.views_per_image = s4l_cfg.views_per_image;
            if (*opt_tlr) cfg.base_lr = s4l_cfg.base_lr;
            if (*opt_tbatch) cfg.batch_images = s4l_cfg.batch_images;
            if (*opt_tepochs) cfg.epochs = s4l_cfg.epochs;
            if (*opt_tseed) cfg.seed = s4l_cfg.seed;
            swcl::Workdir wd{tl_workdir};
            swcl::WorkdirLock lock(wd.root);
            const auto result =
                swcl::stage_train_labeler(wd, swcl::TrunkConfig{}, cfg, cli.threads);
            std::printf("train-labeler: holdout AUC %.4f over %zu images\n",
                        result.holdout_auc, result.holdout_images);
        } else if (*ec) {
            swcl::Workdir wd{ec_workdir};
            swcl::WorkdirLock lock(wd.root);
            const std::size_t n =
                swcl::stage_extract_cams(wd, swcl::TrunkConfig{}, ec_seed, cli.threads);
            std::printf("extract-cams: wrote %zu CAMs\n", n);
        } else if (*gp) {
            const json file_cfg = load_config_file(gp_config);
            double threshold = *opt_gpt ? gp_threshold : parse_or(file_cfg, "threshold", 0.4);
            double frac = *opt_gpf ? gp_patch_frac : parse_or(file_cfg, "patch_frac", 0.5);
            swcl::Workdir wd{gp_workdir};
            swcl::WorkdirLock lock(wd.root);
            const auto built =
                swcl::stage_gen_patches(wd, threshold, frac, gp_hist, gp_seed, cli.threads);
            std::size_t abnormal = 0;
            for (const auto& r : built.manifest.records) abnormal += r.abnormal ? 1 : 0;
            std::printf("gen-patches: %zu patches (%zu abnormal at t=%.2f)\n",
                        built.manifest.records.size(), abnormal, threshold);
        } else if (*pt) {
            const json file_cfg = load_config_file(pt_config);
            swcl::PretrainConfig cfg = swcl::pretrain_from_json(file_cfg, swcl::PretrainConfig{});
            if (*opt_tau) cfg.loss.tau = pt_cfg.loss.tau;
            if (*opt_labels) cfg.loss.labels = swcl::parse_label_set(pt_labels);
            if (*opt_pbatch) cfg.loss.batch_patches = pt_cfg.loss.batch_patches;
            if (*opt_pepochs) cfg.epochs = pt_cfg.epochs;
            if (*opt_warmup) cfg.warmup_epochs = pt_cfg.warmup_epochs;
            if (*opt_plr) cfg.base_lr = pt_cfg.base_lr;
            if (*opt_pthr) cfg.threshold = pt_cfg.threshold;
            if (*opt_proj) cfg.encoder.proj_dim = pt_cfg.encoder.proj_dim;
            if (*opt_flip) cfg.augment.flip_p = pt_cfg.augment.flip_p;
            if (*opt_nonorm) cfg.encoder.normalize_z = false;
            if (*opt_pseed) cfg.seed = pt_cfg.seed;
            swcl::Workdir wd{pt_workdir};
            swcl::WorkdirLock lock(wd.root);
            const auto result = swcl::stage_pretrain(wd, cfg, cli.threads);
            std::printf("pretrain: %zu epochs, final mean loss %.4f, trend %s\n",
                        result.epoch_loss.size(),
                        result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back(),
                        result.trend_ok ? "decreasing" : "NOT decreasing");
        } else if (*pr) {
            swcl::Workdir wd{pr_workdir};
            swcl::WorkdirLock lock(wd.root);
            const auto results = swcl::stage_probe(wd, pr_seed, cli.threads);
            for (const auto& r : results)
                std::printf("probe: %s %s = %.4f (n=%zu)\n", swcl::to_string(r.target),
                            r.metric.c_str(), r.value, r.n_eval);
        } else if (*ab) {
            swcl::Workdir wd{ab_workdir};
            swcl::WorkdirLock lock(wd.root);
            const auto grid = swcl::stage_ablate(
                wd, ab_mode == "threshold" ? swcl::AblateMode::threshold : swcl::AblateMode::labels,
                ab_seeds, ab_cfg, ab_threshold, ab_patch_frac, cli.threads);
            std::printf("ablate: %zu grid rows -> %s\n", grid.rows.size(),
                        (wd.ablation_dir() / "grid.csv").c_str());
        } else if (*vf) {
            const int failures = swcl::run_verify(cli.threads, std::cout);
            if (failures > 0) {
                std::printf("verify: %d invariant(s) FAILED\n", failures);
                return 3;
            }
            std::printf("verify: all invariants passed\n");
        }
    } catch (const swcl::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const swcl::NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
