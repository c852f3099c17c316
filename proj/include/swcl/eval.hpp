#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "swcl/metrics.hpp"
#include "swcl/net.hpp"
#include "swcl/patchgen.hpp"
#include "swcl/pretrain.hpp"
#include "swcl/threading.hpp"

namespace swcl {

// Representation evaluation: linear probes on frozen gap embeddings, plus
// the threshold / label-scheme ablation harness.

enum class ProbeTarget { position, abnormality };

inline const char* to_string(ProbeTarget t) {
    return t == ProbeTarget::position ? "position" : "abnormality";
}

struct ProbeResult {
    ProbeTarget target = ProbeTarget::position;
    std::string metric;  // "accuracy" or "auc_roc"
    double value = 0.0;
    std::size_t n_eval = 0;
};

namespace probe_detail {

// Multinomial logistic regression on fixed features, trained to the unique
// optimum of the L2-regularized convex objective by full-batch gradient
// descent with Armijo backtracking.
struct LogReg {
    std::size_t n_classes = 2, dim = 0;
    std::vector<double> w;  // [n_classes, dim] then [n_classes] biases

    double& weight(std::size_t c, std::size_t j) { return w[c * dim + j]; }
    double weight(std::size_t c, std::size_t j) const { return w[c * dim + j]; }
    double& bias(std::size_t c) { return w[n_classes * dim + c]; }
    double bias(std::size_t c) const { return w[n_classes * dim + c]; }

    std::vector<double> scores(const std::vector<double>& x) const {
        std::vector<double> s(n_classes);
        for (std::size_t c = 0; c < n_classes; ++c) {
            double acc = bias(c);
            for (std::size_t j = 0; j < dim; ++j) acc += weight(c, j) * x[j];
            s[c] = acc;
        }
        return s;
    }

    std::vector<double> probs(const std::vector<double>& x) const {
        std::vector<double> s = scores(x);
        const double m = *std::max_element(s.begin(), s.end());
        double denom = 0.0;
        for (double& v : s) {
            v = std::exp(v - m);
            denom += v;
        }
        for (double& v : s) v /= denom;
        return s;
    }
};

inline double logreg_loss_grad(const LogReg& model, const std::vector<std::vector<double>>& xs,
                               const std::vector<int>& ys, double lambda,
                               std::vector<double>* grad) {
    const std::size_t n = xs.size();
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> p = model.probs(xs[i]);
        loss += -std::log(std::max(p[static_cast<std::size_t>(ys[i])], 1e-300));
        if (grad) {
            for (std::size_t c = 0; c < model.n_classes; ++c) {
                const double d = (p[c] - (static_cast<int>(c) == ys[i] ? 1.0 : 0.0)) /
                                 static_cast<double>(n);
                for (std::size_t j = 0; j < model.dim; ++j)
                    (*grad)[c * model.dim + j] += d * xs[i][j];
                (*grad)[model.n_classes * model.dim + c] += d;
            }
        }
    }
    loss /= static_cast<double>(n);
    // L2 on weights only, keeps the optimum unique even for separable data
    for (std::size_t c = 0; c < model.n_classes; ++c)
        for (std::size_t j = 0; j < model.dim; ++j) {
            loss += 0.5 * lambda * model.weight(c, j) * model.weight(c, j);
            if (grad) (*grad)[c * model.dim + j] += lambda * model.weight(c, j);
        }
    return loss;
}

inline LogReg train_logreg(const std::vector<std::vector<double>>& xs,
                           const std::vector<int>& ys, std::size_t n_classes,
                           double lambda = 1e-3, std::size_t max_iters = 500) {
    LogReg model;
    model.n_classes = n_classes;
    model.dim = xs.front().size();
    model.w.assign(n_classes * model.dim + n_classes, 0.0);
    std::vector<double> grad(model.w.size(), 0.0);

    double loss = logreg_loss_grad(model, xs, ys, lambda, &grad);
    for (std::size_t it = 0; it < max_iters; ++it) {
        double gnorm2 = 0.0, gmax = 0.0;
        for (double g : grad) {
            gnorm2 += g * g;
            gmax = std::max(gmax, std::fabs(g));
        }
        if (gmax < 1e-7) break;
        double alpha = 1.0;
        LogReg trial = model;
        for (int halvings = 0; halvings < 60; ++halvings) {
            for (std::size_t j = 0; j < model.w.size(); ++j)
                trial.w[j] = model.w[j] - alpha * grad[j];
            const double trial_loss = logreg_loss_grad(trial, xs, ys, lambda, nullptr);
            if (trial_loss <= loss - 0.5 * alpha * gnorm2) break;
            alpha *= 0.5;
        }
        model.w = trial.w;
        loss = logreg_loss_grad(model, xs, ys, lambda, &grad);
    }
    return model;
}

}  // namespace probe_detail

/// Train/eval patient split, embed with the frozen trunk, fit a linear head.
/// Position: 5-way accuracy. Abnormality: AUC-ROC against the synthetic
/// ground-truth patch labels.
inline ProbeResult linear_probe(const NetworkParams& encoder_params, const EncoderConfig& cfg,
                                const std::vector<PatchRecord>& patches, ProbeTarget target,
                                std::uint64_t split_seed, int threads = 1) {
    if (patches.empty()) throw ValidationError("linear_probe: no patches");

    std::vector<std::string> patients;
    for (const auto& p : patches) patients.push_back(p.patient_id);
    std::sort(patients.begin(), patients.end());
    patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
    RngStream srng(split_seed, "probe-split");
    srng.shuffle(patients);
    const std::size_t n_train_patients = std::max<std::size_t>(1, patients.size() * 7 / 10);
    std::set<std::string> train_patients(patients.begin(),
                                         patients.begin() + static_cast<std::ptrdiff_t>(
                                                                n_train_patients));

    std::vector<std::vector<double>> embeds(patches.size());
    parallel_for(patches.size(), threads, [&](std::size_t i) {
        const Tensor h = encoder_embed(encoder_params, cfg.trunk, patches[i].pixels);
        embeds[i].assign(h.data(), h.data() + h.size());
    });

    auto label_of = [&](const PatchRecord& r) {
        return target == ProbeTarget::position ? static_cast<int>(r.position)
                                               : (r.gt_patch_abnormal ? 1 : 0);
    };

    std::vector<std::vector<double>> train_x, eval_x;
    std::vector<int> train_y, eval_y;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const bool in_train = train_patients.count(patches[i].patient_id) > 0;
        (in_train ? train_x : eval_x).push_back(embeds[i]);
        (in_train ? train_y : eval_y).push_back(label_of(patches[i]));
    }
    auto distinct = [](const std::vector<int>& ys) {
        return std::set<int>(ys.begin(), ys.end()).size();
    };
    if (train_x.empty() || eval_x.empty() || distinct(train_y) < 2 || distinct(eval_y) < 2)
        throw ValidationError("linear_probe: degenerate label distribution in split");

    const std::size_t n_classes = target == ProbeTarget::position ? 5 : 2;
    const probe_detail::LogReg model =
        probe_detail::train_logreg(train_x, train_y, n_classes);

    ProbeResult out;
    out.target = target;
    out.n_eval = eval_x.size();
    if (target == ProbeTarget::position) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < eval_x.size(); ++i) {
            const std::vector<double> s = model.scores(eval_x[i]);
            const std::size_t argmax = static_cast<std::size_t>(
                std::max_element(s.begin(), s.end()) - s.begin());
            if (static_cast<int>(argmax) == eval_y[i]) ++correct;
        }
        out.metric = "accuracy";
        out.value = static_cast<double>(correct) / static_cast<double>(eval_x.size());
    } else {
        std::vector<double> scores;
        for (const auto& x : eval_x) scores.push_back(model.probs(x)[1]);
        out.metric = "auc_roc";
        out.value = auc_roc(scores, eval_y);
    }
    return out;
}

// ---------------------------------------------------------------------------
// ablation harness: grid cells are independent (pretrain + probe) runs
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string config;
    std::string metric;
    double value = 0.0;
    std::size_t n_eval = 0;
    std::uint64_t seed = 0;
};

struct AblationGrid {
    std::vector<AblationRow> rows;
};

struct AblationContext {
    const std::vector<ImageRecord>* images = nullptr;
    const std::map<std::string, Tensor>* cams = nullptr;
    std::size_t patch_side = 32;
    PretrainConfig pretrain;
    std::vector<std::uint64_t> seeds = {42};
    int threads = 1;
};

namespace eval_detail {

struct Cell {
    std::string config;
    double threshold;
    LabelSet labels;
    std::uint64_t seed;
};

inline std::vector<AblationRow> run_cell(const Cell& cell, const AblationContext& ctx) {
    BuildResult built =
        build_dataset(*ctx.images, *ctx.cams, cell.threshold, ctx.patch_side);
    PretrainConfig pcfg = ctx.pretrain;
    pcfg.loss.labels = cell.labels;
    pcfg.seed = cell.seed;
    pcfg.threads = 1;  // cells already run in parallel
    const PretrainResult trained = pretrain(built.manifest, pcfg);
    std::vector<AblationRow> rows;
    for (ProbeTarget target : {ProbeTarget::abnormality, ProbeTarget::position}) {
        const ProbeResult r = linear_probe(trained.params, pcfg.encoder,
                                           built.manifest.records, target, cell.seed);
        rows.push_back({cell.config, std::string(to_string(target)) + "_" + r.metric, r.value,
                        r.n_eval, cell.seed});
    }
    return rows;
}

inline AblationGrid run_cells(const std::vector<Cell>& cells, const AblationContext& ctx) {
    std::vector<std::vector<AblationRow>> results(cells.size());
    parallel_for(cells.size(), ctx.threads,
                 [&](std::size_t i) { results[i] = run_cell(cells[i], ctx); });
    AblationGrid grid;
    std::set<std::string> seen;
    for (const auto& rows : results)
        for (const auto& r : rows) {
            const std::string key = r.config + "|" + r.metric + "|" + std::to_string(r.seed);
            if (!seen.insert(key).second)
                throw ValidationError("ablation grid: duplicate configuration " + key);
            grid.rows.push_back(r);
        }
    return grid;
}

}  // namespace eval_detail

inline AblationGrid ablate_thresholds(const std::vector<double>& t_values,
                                      const AblationContext& ctx) {
    std::vector<eval_detail::Cell> cells;
    for (double t : t_values) {
        if (!(t >= 0.0 && t <= 1.0))
            throw ValidationError("ablate_thresholds: t out of [0,1]");
        char buf[32];
        std::snprintf(buf, sizeof(buf), "t=%.2f", t);
        for (std::uint64_t seed : ctx.seeds)
            cells.push_back({buf, t, ctx.pretrain.loss.labels, seed});
    }
    return eval_detail::run_cells(cells, ctx);
}

inline AblationGrid ablate_label_schemes(const std::vector<LabelSet>& schemes, double t,
                                         const AblationContext& ctx) {
    std::vector<eval_detail::Cell> cells;
    for (const LabelSet& scheme : schemes) {
        if (scheme.empty())
            throw ValidationError("ablate_label_schemes: empty label set");
        for (std::uint64_t seed : ctx.seeds)
            cells.push_back({"labels=" + to_string(scheme), t, scheme, seed});
    }
    return eval_detail::run_cells(cells, ctx);
}

/// All seven Table-style schemes: the full set, three single removals and
/// three double removals.
inline std::vector<LabelSet> all_label_schemes() {
    using K = LabelKind;
    return {
        {K::position, K::abnormality, K::patient},
        {K::abnormality, K::patient},
        {K::position, K::patient},
        {K::position, K::abnormality},
        {K::patient},
        {K::abnormality},
        {K::position},
    };
}

inline std::string grid_csv(const AblationGrid& grid) {
    std::string out = "config,metric_name,value,n_eval,seed\n";
    char buf[160];
    for (const auto& r : grid.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%zu,%llu\n", r.config.c_str(),
                      r.metric.c_str(), r.value, r.n_eval,
                      static_cast<unsigned long long>(r.seed));
        out += buf;
    }
    return out;
}

}  // namespace swcl
