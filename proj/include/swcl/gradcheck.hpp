#pragma once

#include <functional>
#include <string>

#include "swcl/tensor.hpp"
#include "swcl/threading.hpp"

namespace swcl {

struct LossWithGrad {
    double value = 0.0;
    Gradients grads;
};

/// A deterministic scalar loss of the parameters, together with its analytic
/// gradient. Must be pure: calling it twice on the same params gives
/// bitwise-identical results.
using LossFn = std::function<LossWithGrad(const NetworkParams&)>;

struct FiniteDiffWorst {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

/// Optional extended-precision probe: evaluates the same loss on the same
/// double parameters but carries the arithmetic in long double, so the
/// central-difference quotient is not limited by ulp(loss)/eps in double.
using HighPrecLossFn = std::function<long double(const NetworkParams&)>;

/// Central-difference gradient check: compares (f(p+eps)-f(p-eps))/(2 eps)
/// per coordinate against the analytic gradient and returns the max relative
/// error, with denominator max(|analytic|,|numeric|,1e-8).
inline double finite_diff_check(const LossFn& fn, const NetworkParams& params, double epsilon,
                                FiniteDiffWorst* worst = nullptr, int threads = 1,
                                const HighPrecLossFn& hp_fn = {}) {
    if (!(epsilon >= 1e-8 && epsilon <= 1e-4))
        throw ValidationError("finite_diff_check: epsilon must be in [1e-8, 1e-4]");

    LossWithGrad base = fn(params);
    if (!std::isfinite(base.value))
        throw NumericalError("finite_diff_check: non-finite loss at base point");
    check_same_keys(params, base.grads, "finite_diff_check");

    struct Coord {
        std::string name;
        std::size_t index;
    };
    std::vector<Coord> coords;
    for (const auto& [name, t] : params)
        for (std::size_t i = 0; i < t.size(); ++i) coords.push_back({name, i});

    std::vector<double> rel(coords.size(), 0.0);
    std::vector<double> numeric(coords.size(), 0.0);

    parallel_for(coords.size(), threads, [&](std::size_t ci) {
        const Coord& c = coords[ci];
        NetworkParams p = params;  // private copy per coordinate
        Tensor& t = p.at(c.name);
        const double orig = t[c.index];
        t[c.index] = orig + epsilon;
        const double hi = t[c.index];
        const long double fp = hp_fn ? hp_fn(p) : static_cast<long double>(fn(p).value);
        t[c.index] = orig - epsilon;
        const double lo = t[c.index];
        const long double fm = hp_fn ? hp_fn(p) : static_cast<long double>(fn(p).value);
        if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
            throw NumericalError("finite_diff_check: non-finite loss perturbing '" + c.name +
                                 "'[" + std::to_string(c.index) + "]");
        // divide by the perturbation actually applied after double rounding
        const long double span = static_cast<long double>(hi) - static_cast<long double>(lo);
        const double num = static_cast<double>((fp - fm) / span);
        const double ana = base.grads.at(c.name)[c.index];
        const double denom = std::max({std::fabs(ana), std::fabs(num), 1e-8});
        numeric[ci] = num;
        rel[ci] = std::fabs(ana - num) / denom;
    });

    double max_rel = 0.0;
    for (std::size_t ci = 0; ci < coords.size(); ++ci) {
        if (rel[ci] > max_rel) {
            max_rel = rel[ci];
            if (worst) {
                worst->param = coords[ci].name;
                worst->index = coords[ci].index;
                worst->analytic = base.grads.at(coords[ci].name)[coords[ci].index];
                worst->numeric = numeric[ci];
                worst->rel_err = rel[ci];
            }
        }
    }
    return max_rel;
}

/// Convenience wrapper for checking a gradient w.r.t. a single tensor input.
inline double finite_diff_check_tensor(
    const std::function<double(const Tensor&, Tensor* grad)>& fn, const Tensor& input,
    double epsilon, int threads = 1) {
    NetworkParams p;
    p.emplace("x", input);
    LossFn wrapped = [&fn](const NetworkParams& params) {
        LossWithGrad r;
        Tensor grad(params.at("x").shape());
        r.value = fn(params.at("x"), &grad);
        r.grads.emplace("x", std::move(grad));
        return r;
    };
    return finite_diff_check(wrapped, p, epsilon, nullptr, threads);
}

}  // namespace swcl
