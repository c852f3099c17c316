#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "swcl/ops.hpp"
#include "swcl/tensor.hpp"

namespace swcl {

// Multi-label supervised contrastive loss over 2N projected views. Views
// 2k and 2k+1 come from source patch k and carry identical label tuples;
// two views are positives iff their tuples match elementwise.

enum class LabelKind { position, abnormality, patient };

inline const char* to_string(LabelKind k) {
    switch (k) {
        case LabelKind::position: return "position";
        case LabelKind::abnormality: return "abnormality";
        case LabelKind::patient: return "patient";
    }
    return "?";
}

using LabelSet = std::vector<LabelKind>;
using LabelTuple = std::vector<int>;

inline LabelSet full_label_set() {
    return {LabelKind::position, LabelKind::abnormality, LabelKind::patient};
}

inline std::string to_string(const LabelSet& s) {
    std::string out;
    for (LabelKind k : s) out += (out.empty() ? "" : "+") + std::string(to_string(k));
    return out.empty() ? "none" : out;
}

struct LossConfig {
    double tau = 0.1;
    LabelSet labels = full_label_set();
    std::size_t batch_patches = 32;  // N: source patches per minibatch

    void validate() const {
        if (tau <= 0.0) throw ValidationError("LossConfig: tau must be positive");
        if (labels.empty()) throw ValidationError("LossConfig: label set must be nonempty");
    }
};

struct ViewBatch {
    Tensor z;                        // [2N, d], unit-norm rows
    std::vector<LabelTuple> labels;  // one tuple per view

    static ViewBatch make(Tensor z, std::vector<LabelTuple> labels) {
        if (z.rank() != 2) throw ValidationError("ViewBatch: z must be [2N,d]");
        const std::size_t rows = z.extent(0);
        if (rows == 0 || rows % 2 != 0)
            throw ValidationError("ViewBatch: row count must be a positive even number");
        if (labels.size() != rows)
            throw ValidationError("ViewBatch: label count does not match rows");
        const std::size_t arity = labels.front().size();
        for (const auto& t : labels)
            if (t.size() != arity)
                throw ValidationError("ViewBatch: ragged label tuples");
        for (std::size_t k = 0; k < rows / 2; ++k)
            if (labels[2 * k] != labels[2 * k + 1])
                throw ValidationError("ViewBatch: paired views must share label tuples");
        for (std::size_t i = 0; i < rows; ++i) {
            double n = 0.0;
            for (std::size_t j = 0; j < z.extent(1); ++j) n += z.at2(i, j) * z.at2(i, j);
            if (std::fabs(std::sqrt(n) - 1.0) > 1e-8)
                throw ValidationError("ViewBatch: row " + std::to_string(i) +
                                      " is not unit norm");
        }
        return {std::move(z), std::move(labels)};
    }
};

/// mask[i][j] true iff i != j and the tuples match elementwise. Symmetric,
/// zero diagonal.
class PositivesMask {
public:
    PositivesMask(std::size_t n) : n_(n), bits_(n * n, 0) {}
    bool at(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
    void set(std::size_t i, std::size_t j) { bits_[i * n_ + j] = 1; }
    std::size_t size() const { return n_; }

    std::size_t row_count(std::size_t i) const {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n_; ++j) c += bits_[i * n_ + j];
        return c;
    }

private:
    std::size_t n_;
    std::vector<unsigned char> bits_;
};

inline PositivesMask positives_mask(const std::vector<LabelTuple>& labels) {
    const std::size_t n = labels.size();
    if (n == 0) throw ValidationError("positives_mask: empty label list");
    const std::size_t arity = labels.front().size();
    for (const auto& t : labels)
        if (t.size() != arity) throw ValidationError("positives_mask: ragged label tuples");
    PositivesMask mask(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (labels[i] == labels[j]) {
                mask.set(i, j);
                mask.set(j, i);
            }
    return mask;
}

struct SupconResult {
    double loss = 0.0;
    Tensor grad_z;  // same shape as z
};

/// The multi-label supervised contrastive objective: each anchor i with
/// positive set P(i) contributes
///   (-1/|P(i)|) * sum_{j in P(i)} log( exp(z_i.z_j/tau) /
///                                      sum_{k != i} exp(z_i.z_k/tau) ),
/// summed over the 2N anchors. Anchors without positives contribute 0.
/// Log-sum-exp is max-subtracted. Returns the loss and d(loss)/dz.
inline SupconResult multilabel_supcon_loss(const Tensor& z,
                                           const std::vector<LabelTuple>& labels, double tau) {
    if (tau <= 0.0) throw ValidationError("multilabel_supcon_loss: tau must be positive");
    if (z.rank() != 2) throw ValidationError("multilabel_supcon_loss: z must be [2N,d]");
    const std::size_t n = z.extent(0), d = z.extent(1);
    if (labels.size() != n)
        throw ValidationError("multilabel_supcon_loss: label count mismatch");
    const PositivesMask mask = positives_mask(labels);

    // similarity logits s_ij = z_i . z_j / tau
    std::vector<double> s(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += z.at2(i, k) * z.at2(j, k);
            s[i * n + j] = s[j * n + i] = dot / tau;
        }

    SupconResult out;
    out.grad_z = Tensor({n, d});
    // g[i*n+k] = dL/ds_ik (for k != i)
    std::vector<double> g(n * n, 0.0);

    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t npos = mask.row_count(i);
        if (npos == 0) continue;
        double m = -1e300;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i && s[i * n + k] > m) m = s[i * n + k];
        double denom = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) denom += std::exp(s[i * n + k] - m);
        const double lse = m + std::log(denom);

        const double inv_pos = 1.0 / static_cast<double>(npos);
        for (std::size_t j = 0; j < n; ++j)
            if (mask.at(i, j)) out.loss += inv_pos * (lse - s[i * n + j]);
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i) continue;
            const double p = std::exp(s[i * n + k] - m) / denom;
            g[i * n + k] = (p - (mask.at(i, k) ? inv_pos : 0.0)) / tau;
        }
    }

    // dL/dz_a = sum_k g[a,k] z_k + sum_i g[i,a] z_i
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t k = 0; k < n; ++k) {
            const double c = g[a * n + k];
            if (c != 0.0)
                for (std::size_t t = 0; t < d; ++t) {
                    out.grad_z.at2(a, t) += c * z.at2(k, t);
                    out.grad_z.at2(k, t) += c * z.at2(a, t);
                }
        }
    return out;
}

inline SupconResult multilabel_supcon_loss(const ViewBatch& batch, const LossConfig& cfg) {
    cfg.validate();
    return multilabel_supcon_loss(batch.z, batch.labels, cfg.tau);
}

// ---------------------------------------------------------------------------
// Independent reference losses. These are deliberately separate, direct
// evaluations (naive denominators, long-double accumulation) used by
// reduction_check and the verify suite; they must not share the code path
// above.
// ---------------------------------------------------------------------------

/// NT-Xent (SimCLR) with sibling pairing (2k, 2k+1), summed over all 2N
/// anchors: l(i) = -log( exp(z_i.z_sib/tau) / sum_{k != i} exp(z_i.z_k/tau) ).
inline double ntxent_reference(const Tensor& z, double tau) {
    const std::size_t n = z.extent(0), d = z.extent(1);
    if (n % 2 != 0) throw ValidationError("ntxent_reference: need an even number of rows");
    long double total = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t sib = i % 2 == 0 ? i + 1 : i - 1;
        long double denom = 0.0L;
        long double num = 0.0L;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i) continue;
            long double dot = 0.0L;
            for (std::size_t t = 0; t < d; ++t)
                dot += static_cast<long double>(z.at2(i, t)) * z.at2(k, t);
            const long double e = std::exp(dot / static_cast<long double>(tau));
            denom += e;
            if (k == sib) num = e;
        }
        total += -std::log(num / denom);
    }
    return static_cast<double>(total);
}

/// Single-label supervised contrastive loss (Khosla et al. L_out), summed
/// over anchors; anchors with no positive contribute 0.
inline double supcon_reference(const Tensor& z, const std::vector<int>& labels, double tau) {
    const std::size_t n = z.extent(0), d = z.extent(1);
    if (labels.size() != n) throw ValidationError("supcon_reference: label count mismatch");
    long double total = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t npos = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) ++npos;
        if (npos == 0) continue;
        long double denom = 0.0L;
        std::vector<long double> e(n, 0.0L);
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i) continue;
            long double dot = 0.0L;
            for (std::size_t t = 0; t < d; ++t)
                dot += static_cast<long double>(z.at2(i, t)) * z.at2(k, t);
            e[k] = std::exp(dot / static_cast<long double>(tau));
            denom += e[k];
        }
        long double acc = 0.0L;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) acc += -std::log(e[j] / denom);
        total += acc / static_cast<long double>(npos);
    }
    return static_cast<double>(total);
}

/// Degenerate-configuration consistency: with per-patch-unique tuples the
/// only positive is the sibling view and the loss must equal NT-Xent; with
/// one shared tuple it must equal single-label SupCon. Tolerance 1e-9.
inline bool reduction_check(const ViewBatch& batch, double tau) {
    const std::size_t n = batch.z.extent(0);
    bool all_same = true;
    for (const auto& t : batch.labels)
        if (t != batch.labels.front()) all_same = false;

    bool unique_per_patch = true;
    for (std::size_t i = 0; i < n && unique_per_patch; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (i / 2 != j / 2 && batch.labels[i] == batch.labels[j]) {
                unique_per_patch = false;
                break;
            }

    const double ours = multilabel_supcon_loss(batch.z, batch.labels, tau).loss;
    if (all_same) {
        const std::vector<int> single(n, 0);
        return std::fabs(ours - supcon_reference(batch.z, single, tau)) <= 1e-9;
    }
    if (unique_per_patch)
        return std::fabs(ours - ntxent_reference(batch.z, tau)) <= 1e-9;
    throw ValidationError(
        "reduction_check: labels must be per-patch unique or all identical");
}

}  // namespace swcl
