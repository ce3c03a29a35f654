#pragma once

#include <functional>
#include <vector>

#include "stlm/ops.hpp"

namespace stlm {

// Verifies analytic gradients against central finite differences.
// The callable must map the given inputs to a tensor; non-scalar outputs
// are reduced with sum() so the whole Jacobian is exercised through one
// backward pass. Returns the max over all input entries of
// |analytic - numeric| / max(1, |analytic|).
template <typename S>
double grad_check(const std::function<TensorPtr<S>(Tape<S>&, const std::vector<TensorPtr<S>>&)>& fn,
                  const std::vector<TensorPtr<S>>& inputs, double epsilon) {
    if (epsilon < 1e-6 || epsilon > 1e-2)
        throw ConfigError("grad_check: epsilon must be in [1e-6, 1e-2], got " + std::to_string(epsilon));

    auto eval_scalar = [&fn](const std::vector<TensorPtr<S>>& ins) -> double {
        Tape<S> tape;
        NoGradGuard<S> guard(tape);
        auto out = fn(tape, ins);
        double total = 0.0;
        for (S v : out->values) total += static_cast<double>(v);
        return total;
    };

    // Analytic pass.
    std::vector<TensorPtr<S>> tracked;
    tracked.reserve(inputs.size());
    for (const auto& in : inputs) {
        auto t = make_tensor<S>(in->shape, true);
        t->values = in->values;
        t->ensure_grad();
        tracked.push_back(t);
    }
    Tape<S> tape;
    auto out = fn(tape, tracked);
    auto loss = out->numel() == 1 ? out : sum(tape, out);
    tape.backward(loss);

    double max_rel = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        auto probe = inputs; // shared ptrs; entry i is swapped for a perturbed copy
        for (size_t j = 0; j < inputs[i]->values.size(); ++j) {
            auto bumped = make_tensor<S>(inputs[i]->shape);
            bumped->values = inputs[i]->values;

            bumped->values[j] = inputs[i]->values[j] + static_cast<S>(epsilon);
            probe[i] = bumped;
            const double up = eval_scalar(probe);

            bumped = make_tensor<S>(inputs[i]->shape);
            bumped->values = inputs[i]->values;
            bumped->values[j] = inputs[i]->values[j] - static_cast<S>(epsilon);
            probe[i] = bumped;
            const double down = eval_scalar(probe);

            probe[i] = inputs[i];
            const double numeric = (up - down) / (2.0 * epsilon);
            const double analytic =
                tracked[i]->grad.empty() ? 0.0 : static_cast<double>(tracked[i]->grad[j]);
            const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace stlm
