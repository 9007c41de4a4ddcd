#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fidrank/errors.hpp"
#include "fidrank/numerics/autograd.hpp"
#include "fidrank/numerics/tensor.hpp"

namespace fidrank {

template <typename T>
using TracedScalarFn = std::function<Var<T>(std::span<const Var<T>>)>;

struct GradCheckOptions {
    double step = 1e-5;
    /// Entries probed per tensor; 0 probes every entry.
    std::size_t max_entries_per_tensor = 0;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t probes = 0;
};

namespace detail {

// Central differences of `f` (evaluated in precision R) against `analytic`.
template <typename T, typename R>
GradCheckReport compare_gradients(const TracedScalarFn<R>& f, const std::vector<Tensor<T>>& point,
                                  const std::vector<Tensor<T>>& analytic, const GradCheckOptions& opts)
{
    std::vector<Tensor<R>> base;
    base.reserve(point.size());
    for (const auto& p : point) {
        base.push_back(p.template cast<R>());
    }
    auto evaluate = [&](std::size_t which, std::size_t index, R delta) {
        NoGradGuard guard;
        std::vector<Var<R>> shifted;
        shifted.reserve(base.size());
        for (std::size_t i = 0; i < base.size(); ++i) {
            Tensor<R> v = base[i];
            if (i == which) {
                v[index] += delta;
            }
            shifted.push_back(Var<R>::constant(std::move(v)));
        }
        return f(shifted).value().item();
    };

    GradCheckReport report;
    std::mt19937_64 rng(opts.seed);
    const R h = static_cast<R>(opts.step);
    for (std::size_t which = 0; which < point.size(); ++which) {
        std::vector<std::size_t> indices(point[which].size());
        std::iota(indices.begin(), indices.end(), std::size_t{0});
        if (opts.max_entries_per_tensor != 0 && indices.size() > opts.max_entries_per_tensor) {
            std::shuffle(indices.begin(), indices.end(), rng);
            indices.resize(opts.max_entries_per_tensor);
            std::sort(indices.begin(), indices.end());
        }
        for (std::size_t index : indices) {
            const R diff = evaluate(which, index, h) - evaluate(which, index, -h);
            const double numeric = static_cast<double>(diff / (R{2} * h));
            const double a = static_cast<double>(analytic[which][index]);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
            const double rel = std::abs(a - numeric) / denom;
            ++report.probes;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_tensor = which;
                report.worst_index = index;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

template <typename T>
std::vector<Tensor<T>> reverse_mode_gradients(const TracedScalarFn<T>& f, const std::vector<Tensor<T>>& point)
{
    std::vector<Var<T>> leaves;
    leaves.reserve(point.size());
    for (const auto& p : point) {
        leaves.push_back(Var<T>::leaf(p, true));
    }
    backward(f(leaves));
    std::vector<Tensor<T>> grads;
    grads.reserve(leaves.size());
    for (const auto& leaf : leaves) {
        grads.push_back(leaf.grad());
    }
    return grads;
}

}  // namespace detail

/// Compares reverse-mode gradients of `f` at `point` against central differences.
/// Relative error per entry is |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
template <typename T>
GradCheckReport grad_check(const TracedScalarFn<T>& f, const std::vector<Tensor<T>>& point,
                           const GradCheckOptions& opts = {})
{
    if (!(opts.step > 0.0)) {
        throw ContractError("grad_check: step must be positive");
    }
    return detail::compare_gradients<T, T>(f, point, detail::reverse_mode_gradients(f, point), opts);
}

/// As above, but the central differences come from `reference`, the same function in a
/// wider type R. Differencing a loss near 5 in double loses about one ulp / step, which
/// swamps gradient entries near 1e-6; in long double the reference stays accurate.
template <typename T, typename R>
GradCheckReport grad_check(const TracedScalarFn<T>& f, const TracedScalarFn<R>& reference,
                           const std::vector<Tensor<T>>& point, const GradCheckOptions& opts = {})
{
    if (!(opts.step > 0.0)) {
        throw ContractError("grad_check: step must be positive");
    }
    return detail::compare_gradients<T, R>(reference, point, detail::reverse_mode_gradients(f, point), opts);
}

}  // namespace fidrank
