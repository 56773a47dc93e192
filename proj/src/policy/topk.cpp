#include "dips/policy/topk.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dips::policy {

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double mass(std::span<const double> f, double nu) {
  double s = 0.0;
  for (double x : f) {
    if (std::isfinite(x)) s += sigmoid(x + nu);
  }
  return s;
}

}  // namespace

TopKResult topk_project(std::span<const double> f, Index k) {
  Index finite = 0;
  double lo_f = std::numeric_limits<double>::infinity();
  double hi_f = -std::numeric_limits<double>::infinity();
  for (double x : f) {
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
      throw NumericalError("topk_project: scores must be finite or -inf");
    }
    if (std::isfinite(x)) {
      ++finite;
      lo_f = std::min(lo_f, x);
      hi_f = std::max(hi_f, x);
    }
  }
  if (k < 1) throw InvalidArgument(fmt::format("topk_project: K = {} must be >= 1", k));
  if (k >= finite) {
    throw InvalidArgument(fmt::format(
        "topk_project: K = {} must be smaller than the number of finite scores ({})", k, finite));
  }
  const double target = static_cast<double>(k);
  double lo = -hi_f - 20.0;
  double hi = -lo_f + 20.0;
  for (double width = 20.0; mass(f, lo) > target; width *= 2) lo -= width;
  for (double width = 20.0; mass(f, hi) < target; width *= 2) hi += width;

  TopKResult r;
  double nu = 0.5 * (lo + hi);
  for (r.iterations = 0; r.iterations < 2000; ++r.iterations) {
    nu = 0.5 * (lo + hi);
    const double m = mass(f, nu);
    if (std::abs(m - target) <= 1e-3 * kTopKSumTolerance) break;
    if (m < target) {
      lo = nu;
    } else {
      hi = nu;
    }
    if (hi - lo <= 1e-15 * std::max(1.0, std::abs(nu))) break;
  }
  r.nu = nu;
  r.u.resize(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    r.u[i] = std::isfinite(f[i]) ? sigmoid(f[i] + nu) : 0.0;
  }
  const double total = mass(f, nu);
  if (std::abs(total - target) > kTopKSumTolerance) {
    throw NumericalError(
        fmt::format("topk_project: bisection ended with |sum(u) - K| = {:.3g}", total - target));
  }
  return r;
}

std::vector<double> topk_vjp(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw InvalidArgument(fmt::format("topk_vjp: u has {} entries, v has {}", u.size(), v.size()));
  }
  std::vector<double> s(u.size());
  double total = 0.0, vs = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    s[i] = u[i] * (1.0 - u[i]);
    total += s[i];
    vs += v[i] * s[i];
  }
  if (total <= 1e-12) {
    throw NumericalError(
        fmt::format("topk_vjp: degenerate projection, sum u(1-u) = {:.3g}", total));
  }
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = v[i] * s[i] - s[i] * vs / total;
  return out;
}

ad::Tensor topk(const ad::Tensor& f, Index k, TopKVjp vjp) {
  if (f.rows() != 1) {
    throw InvalidArgument(fmt::format("topk: scores must be a row, got {}", f.shape_str()));
  }
  const ad::Matrix& fv = f.value();
  TopKResult r = topk_project(std::span<const double>(fv.data(), fv.size()), k);
  ad::Matrix u = Eigen::Map<const ad::Matrix>(r.u.data(), 1, fv.cols());
  if (!vjp) vjp = topk_vjp;
  return ad::make_op_result(
      std::move(u), "topk", {f},
      [vjp](const ad::Tensor& out, const ad::Tensor& g, std::span<const bool>) {
        const ad::Matrix& uv = out.value();
        const ad::Matrix& gv = g.value();
        std::vector<double> gf = vjp(std::span<const double>(uv.data(), uv.size()),
                                     std::span<const double>(gv.data(), gv.size()));
        ad::Matrix m = Eigen::Map<const ad::Matrix>(gf.data(), 1, uv.cols());
        return std::vector<ad::Tensor>{ad::Tensor(std::move(m))};
      });
}

}  // namespace dips::policy
