#include "vtu/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace vtu {

namespace {

std::vector<Index> entries_to_check(Index n, Index max_entries) {
  std::vector<Index> idx;
  if (max_entries <= 0 || n <= max_entries) {
    idx.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  for (Index k = 0; k < max_entries; ++k) idx.push_back((k * n) / max_entries + (n / max_entries) / 2);
  return idx;
}

GradCheckReport run_check(const std::function<Tensord()>& f, std::vector<Tensord>& params,
                          const GradCheckOptions& opts) {
  GradCheckReport report;
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensord y = f();
    if (y.size() != 1) throw ShapeError("grad_check: function must be scalar-valued, got " + shape_str(y.shape()));
    if (!std::isfinite(y.item())) report.finite = false;
    tape.backward(y);
  }

  struct Pair {
    double analytic, numeric;
  };
  std::vector<Pair> pairs;
  for (auto& p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    double* data = p.mutable_ptr();
    for (Index i : entries_to_check(p.size(), opts.max_entries)) {
      const double saved = data[i];
      data[i] = saved + opts.eps;
      const double up = f().item();
      data[i] = saved - opts.eps;
      const double down = f().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) report.finite = false;
      pairs.push_back({analytic[i], numeric});
      ++report.checked;
    }
  }

  double scale = 0.0;
  for (const auto& pr : pairs) scale = std::max(scale, std::abs(pr.numeric));
  const double floor = std::max(opts.floor_fraction * scale, 1e-12);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double abs_err = std::abs(pairs[i].analytic - pairs[i].numeric);
    const double denom = std::max({std::abs(pairs[i].analytic), std::abs(pairs[i].numeric), floor});
    const double rel = abs_err / denom;
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    if (rel > report.max_rel_err || report.worst_index < 0) {
      report.max_rel_err = rel;
      report.worst_index = static_cast<Index>(i);
    }
  }
  report.passed = report.finite && report.max_rel_err <= opts.tol;
  for (auto& p : params) p.zero_grad();
  return report;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensord> inputs, const GradCheckOptions& opts) {
  for (auto& x : inputs) x = x.clone();
  return run_check([&] { return f(inputs); }, inputs, opts);
}

GradCheckReport grad_check(const std::function<Tensord(const Tensord&)>& f, const Tensord& x, double eps,
                           double tol) {
  GradCheckOptions opts;
  opts.eps = eps;
  opts.tol = tol;
  return grad_check([&](const std::vector<Tensord>& in) { return f(in[0]); }, {x}, opts);
}

GradCheckReport grad_check_params(const std::function<Tensord()>& f, std::vector<Tensord> params,
                                  const GradCheckOptions& opts) {
  std::vector<bool> previous;
  for (const auto& p : params) previous.push_back(p.requires_grad());
  GradCheckReport report = run_check(f, params, opts);
  for (std::size_t i = 0; i < params.size(); ++i) params[i].set_requires_grad(previous[i]);
  return report;
}

}  // namespace vtu
