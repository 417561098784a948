#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "depthref/autodiff.hpp"

namespace depthref::ad {

namespace {

double evaluate(const GraphFn& graph, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) vars.push_back(tape.parameter(k, params[k]));
  const Var loss = graph(tape, vars);
  return tape.value(loss)[0];
}

}  // namespace

GradCheckResult grad_check(const GraphFn& graph, std::vector<Tensor> params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step h must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t k = 0; k < params.size(); ++k) vars.push_back(tape.parameter(k, params[k]));
    const Var loss = graph(tape, vars);
    analytic = tape.backward(loss, params.size());
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].numel(); ++i) {
      const double saved = params[k][i];
      params[k][i] = saved + h;
      const double up = evaluate(graph, params);
      params[k][i] = saved - h;
      const double down = evaluate(graph, params);
      params[k][i] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error || (k == 0 && i == 0)) {
        result = GradCheckResult{std::max(rel, result.max_rel_error), k, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace depthref::ad
