#include "spkmoco/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "spkmoco/errors.hpp"

namespace spkmoco {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
  Graph g;
  const Var out = f(g, g.constant(x));
  if (out.value().size() != 1) throw ContractError("grad_check: function is not scalar-valued");
  return out.value()[0];
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ParameterError("grad_check: eps must be positive");
  Tensor analytic;
  {
    Graph g;
    const Var in = g.input(x);
    const Var out = f(g, in);
    g.backward(out);
    analytic = in.grad().empty() ? Tensor(x.shape()) : in.grad();
  }
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double fp = evaluate(f, probe);
    probe[i] = x[i] - eps;
    const double fm = evaluate(f, probe);
    probe[i] = x[i];
    const double central = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - central) / denom);
  }
  return worst;
}

}  // namespace spkmoco
