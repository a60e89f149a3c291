#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cact/graph.hpp"
#include "cact/tensor.hpp"

namespace cact {

// Central-difference verification of reverse-mode gradients, run in double.
// `build` reconstructs the computation from scratch on every call: it
// receives a fresh tape plus one leaf per input tensor and returns a scalar.
// Returns max over all coordinates of |a - n| / max(|a|, |n|, 1e-8).
using BuildFn = std::function<VarId(Tape<double>&, const std::vector<VarId>&)>;

inline double finite_difference_check(std::vector<Tensor<double>*> inputs, const BuildFn& build,
                                      double eps = 1e-5) {
    auto eval = [&]() {
        Tape<double> tape;
        std::vector<VarId> vars;
        vars.reserve(inputs.size());
        for (Tensor<double>* in : inputs) vars.push_back(tape.constant(*in));
        return tape.val(build(tape, vars))[0];
    };

    // Analytic gradients.
    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        std::vector<VarId> vars;
        vars.reserve(inputs.size());
        for (Tensor<double>* in : inputs) vars.push_back(tape.leaf(*in));
        VarId out = build(tape, vars);
        if (tape.val(out).size() != 1) throw ValidationError("finite_difference_check: output must be scalar");
        tape.backward(out);
        for (VarId v : vars)
            analytic.push_back(tape.has_grad(v) ? tape.grad(v)
                                                : Tensor<double>(tape.val(v).rows(), tape.val(v).cols()));
    }

    double max_rel = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        Tensor<double>& x = *inputs[t];
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + eps;
            const double fp = eval();
            x[i] = saved - eps;
            const double fm = eval();
            x[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[t][i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace cact
