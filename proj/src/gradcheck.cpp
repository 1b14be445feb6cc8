#include "musanet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "musanet/errors.hpp"

namespace musanet {
namespace {

double evaluate(const ScalarFunction& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  const double value = f(tape, vars).value().item();
  if (!std::isfinite(value)) throw NumericError("gradient check: loss is not finite");
  return value;
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarFunction& f, std::vector<Tensor> params,
                                  double h, double floor) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.parameter(p));
    Var loss = f(tape, vars);
    if (!std::isfinite(loss.value().item())) {
      throw NumericError("gradient check: loss is not finite");
    }
    tape.backward(loss);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double original = params[p][i];
      params[p][i] = original + h;
      const double plus = evaluate(f, params);
      params[p][i] = original - h;
      const double minus = evaluate(f, params);
      params[p][i] = original;

      const double numeric = (plus - minus) / (2.0 * h);
      const double exact = analytic[p][i];
      const double abs_err = std::abs(exact - numeric);
      const double denom = std::max({std::abs(exact), std::abs(numeric), floor});
      report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
      report.max_relative_error = std::max(report.max_relative_error, abs_err / denom);
      ++report.entries_checked;
    }
  }
  return report;
}

}  // namespace musanet
