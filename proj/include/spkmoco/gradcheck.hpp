#pragma once

#include <functional>

#include "spkmoco/autodiff.hpp"

namespace spkmoco {

// Builds a scalar expression of its input inside the given graph. Must be
// deterministic (seed any dropout inside the callable).
using ScalarFn = std::function<Var(Graph&, Var)>;

// Max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-8),
// with central differences of step eps.
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-4);

}  // namespace spkmoco
