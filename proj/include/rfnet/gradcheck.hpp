#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "rfnet/tensor.hpp"

namespace rfnet {

// Result of a finite-difference sweep. The error measure is
//   err = |analytic - numeric| / max(1, |analytic|, |numeric|)
// i.e. relative error with an absolute-error fallback near zero, which keeps
// the metric meaningful for tiny gradients where pure relative error explodes
// on FD rounding noise.
struct FdReport {
  double max_err = 0.0;
  std::string where;       // "<param-name>[<flat-index>]" of the worst element
  double analytic = 0.0;   // analytic gradient at the worst element
  double numeric = 0.0;    // central difference at the worst element
};

// Central finite-difference check. Each parameter's grad buffer must already
// hold the analytic gradient (run forward + backward before calling). `f`
// recomputes the scalar loss from the parameters' current values; it is called
// 2·(total elements) times with one element perturbed by ±h.
template <typename F>
FdReport finite_difference_check(std::vector<Tensor>& params, F f, double h) {
  FdReport rep;
  for (auto& p : params) {
    if (!p.has_grad()) p.ensure_grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      double orig = p.at(i);
      p.at(i) = orig + h;
      double lp = f();
      p.at(i) = orig - h;
      double lm = f();
      p.at(i) = orig;
      double num = (lp - lm) / (2.0 * h);
      double ana = p.grad()[i];
      double err = std::abs(ana - num) /
                   std::max({1.0, std::abs(ana), std::abs(num)});
      if (err > rep.max_err) {
        rep.max_err = err;
        rep.where = p.name() + "[" + std::to_string(i) + "]";
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  return rep;
}

}  // namespace rfnet
