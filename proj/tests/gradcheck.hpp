// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef STYLEMOTION_TESTS_GRADCHECK_HPP_
#define STYLEMOTION_TESTS_GRADCHECK_HPP_

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "stylemotion/autograd.hpp"

namespace stylemotion::testing {

using DMat = ag::Mat<double>;
using GradFn =
    std::function<ag::Var<double>(ag::Tape<double>&,
                                  const std::vector<ag::Var<double>>&)>;
using ParamFn = std::function<ag::Var<double>(ag::Tape<double>&)>;

// Central-difference comparison in double precision. An entry passes when
// |analytic - numeric| <= tol * max(|analytic|, |numeric|) + 1e-8.
struct GradReport {
  bool ok = true;
  double worst_err = 0;
  double worst_allowed = 0;
  std::string where;

  void record(const std::string& site, double analytic, double numeric,
              double tol) {
    const double err = std::abs(analytic - numeric);
    const double allowed =
        tol * std::max(std::abs(analytic), std::abs(numeric)) + 1e-8;
    if (err > allowed && err > worst_err) {
      ok = false;
      worst_err = err;
      worst_allowed = allowed;
      std::ostringstream os;
      os << site << ": analytic " << analytic << " vs numeric " << numeric;
      where = os.str();
    }
  }
};

inline double fd_step(double x) { return 1e-5 * std::max(1.0, std::abs(x)); }

inline double eval_scalar(const GradFn& f, const std::vector<DMat>& xs) {
  ag::Tape<double> t(false);
  std::vector<ag::Var<double>> vars;
  vars.reserve(xs.size());
  for (const auto& m : xs) vars.push_back(t.constant(m));
  return t.val(f(t, vars))(0, 0);
}

// Gradients with respect to free inputs.
inline GradReport grad_check(const GradFn& f, std::vector<DMat> xs,
                             double tol = 1e-4) {
  ag::Tape<double> t(true);
  std::vector<ag::Var<double>> vars;
  vars.reserve(xs.size());
  for (const auto& m : xs) vars.push_back(t.input(m));
  t.backward(f(t, vars));
  std::vector<DMat> grads;
  grads.reserve(vars.size());
  for (auto v : vars) grads.push_back(t.grad_of(v));

  GradReport rep;
  for (size_t i = 0; i < xs.size(); ++i)
    for (Eigen::Index r = 0; r < xs[i].rows(); ++r)
      for (Eigen::Index c = 0; c < xs[i].cols(); ++c) {
        const double x0 = xs[i](r, c);
        const double h = fd_step(x0);
        xs[i](r, c) = x0 + h;
        const double fp = eval_scalar(f, xs);
        xs[i](r, c) = x0 - h;
        const double fm = eval_scalar(f, xs);
        xs[i](r, c) = x0;
        std::ostringstream site;
        site << "input " << i << " (" << r << "," << c << ")";
        rep.record(site.str(), grads[i](r, c), (fp - fm) / (2 * h), tol);
      }
  return rep;
}

// Gradients with respect to named parameters mutated in place. The loss
// closure must rebuild the forward pass from the current parameter values.
inline GradReport grad_check_params(const ParamFn& f,
                                    const std::vector<ag::Param<double>*>& ps,
                                    double tol = 1e-4) {
  for (auto* p : ps) p->zero_grad();
  {
    ag::Tape<double> t(true);
    t.backward(f(t));
  }
  std::vector<DMat> grads;
  grads.reserve(ps.size());
  for (auto* p : ps) grads.push_back(p->grad);

  auto eval = [&]() {
    ag::Tape<double> t(false);
    return t.val(f(t))(0, 0);
  };

  GradReport rep;
  for (size_t i = 0; i < ps.size(); ++i)
    for (Eigen::Index r = 0; r < ps[i]->value.rows(); ++r)
      for (Eigen::Index c = 0; c < ps[i]->value.cols(); ++c) {
        const double x0 = ps[i]->value(r, c);
        const double h = fd_step(x0);
        ps[i]->value(r, c) = x0 + h;
        const double fp = eval();
        ps[i]->value(r, c) = x0 - h;
        const double fm = eval();
        ps[i]->value(r, c) = x0;
        std::ostringstream site;
        site << ps[i]->name << " (" << r << "," << c << ")";
        rep.record(site.str(), grads[i](r, c), (fp - fm) / (2 * h), tol);
      }
  return rep;
}

}  // namespace stylemotion::testing

#endif  // STYLEMOTION_TESTS_GRADCHECK_HPP_
