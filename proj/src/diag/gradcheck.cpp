#include "dips/diag/gradcheck.hpp"

#include "dips/ad/autograd.hpp"
#include "dips/ad/ops.hpp"
#include "dips/policy/policy_net.hpp"
#include "dips/policy/selection.hpp"
#include "dips/rec/model.hpp"
#include "dips/train/bilevel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dips::diag {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

namespace {

constexpr double kStep = 1e-5;
constexpr double kFloor = 1e-6;

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kFloor});
}

double max_rel_err(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a.data()[i], b.data()[i]));
  return worst;
}

Matrix uniform(Index r, Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

template <class F>
Matrix central_diff(F&& f, Matrix x) {
  Matrix g(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + kStep;
    const double up = f(x);
    x.data()[i] = saved - kStep;
    const double down = f(x);
    x.data()[i] = saved;
    g.data()[i] = (up - down) / (2 * kStep);
  }
  return g;
}

// Analytic gradients of `loss()` with respect to `params` against central
// differences obtained by perturbing the parameter values in place.
double check_params(const std::vector<Tensor>& params, const std::function<Tensor()>& loss) {
  const auto g = ad::grad(loss(), params);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i];
    const Matrix saved = t.value();
    const Matrix fd = central_diff(
        [&](const Matrix& x) {
          t.mutable_value() = x;
          const double v = loss().item();
          t.mutable_value() = saved;
          return v;
        },
        saved);
    worst = std::max(worst, max_rel_err(g[i].value(), fd));
  }
  return worst;
}

// Top-K projection solved by bisection in extended precision, so that
// differences of it are not dominated by the solver tolerance.
std::vector<double> oracle_topk(const Matrix& f, Index k) {
  auto mass = [&](long double nu) {
    long double s = 0;
    for (Index i = 0; i < f.size(); ++i) s += 1.0L / (1.0L + std::exp(-(f.data()[i] + nu)));
    return s;
  };
  long double lo = -60.0L - f.maxCoeff(), hi = 60.0L - f.minCoeff();
  for (int it = 0; it < 200; ++it) {
    const long double mid = (lo + hi) / 2;
    (mass(mid) < k ? lo : hi) = mid;
  }
  const long double nu = (lo + hi) / 2;
  std::vector<double> u(static_cast<std::size_t>(f.size()));
  for (Index i = 0; i < f.size(); ++i) {
    u[i] = static_cast<double>(1.0L / (1.0L + std::exp(-(f.data()[i] + nu))));
  }
  return u;
}

struct OpSpec {
  std::string name;
  std::vector<std::pair<Index, Index>> shapes;
  std::function<Tensor(const std::vector<Tensor>&)> build;
  double lo = -2.0;
};

std::vector<OpSpec> op_specs() {
  static const std::vector<Index> idx{2, 0, 2, 1};
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](auto& in) { return ad::matmul(in[0], in[1]); }},
      {"matmul_transposed",
       {{4, 3}, {2, 4}},
       [](auto& in) { return ad::matmul(in[0], in[1], true, true); }},
      {"transpose", {{3, 2}}, [](auto& in) { return ad::transpose(in[0]); }},
      {"add", {{2, 3}, {2, 3}}, [](auto& in) { return ad::add(in[0], in[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](auto& in) { return ad::sub(in[0], in[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](auto& in) { return ad::mul(in[0], in[1]); }},
      {"scale", {{2, 3}}, [](auto& in) { return ad::scale(in[0], -1.7); }},
      {"square", {{2, 3}}, [](auto& in) { return ad::square(in[0]); }},
      {"relu", {{3, 3}}, [](auto& in) { return ad::relu(in[0]); }},
      {"sigmoid", {{2, 3}}, [](auto& in) { return ad::sigmoid(in[0]); }},
      {"log", {{2, 3}}, [](auto& in) { return ad::log(in[0]); }, 0.2},
      {"exp", {{2, 3}}, [](auto& in) { return ad::exp(in[0]); }},
      {"add_row", {{3, 2}, {1, 2}}, [](auto& in) { return ad::add_row(in[0], in[1]); }},
      {"mul_col", {{3, 2}, {3, 1}}, [](auto& in) { return ad::mul_col(in[0], in[1]); }},
      {"broadcast_to", {{1, 3}}, [](auto& in) { return ad::broadcast_to(in[0], 4, 3); }},
      {"sum_rows", {{3, 2}}, [](auto& in) { return ad::sum_rows(in[0]); }},
      {"sum_cols", {{3, 2}}, [](auto& in) { return ad::sum_cols(in[0]); }},
      {"mean", {{3, 2}}, [](auto& in) { return ad::mean(in[0]); }},
      {"softmax", {{2, 4}}, [](auto& in) { return ad::softmax(in[0]); }},
      {"log_softmax", {{2, 4}}, [](auto& in) { return ad::log_softmax(in[0]); }},
      {"logsumexp", {{3, 4}}, [](auto& in) { return ad::logsumexp(in[0]); }},
      {"concat_cols", {{2, 3}, {2, 1}}, [](auto& in) { return ad::concat_cols(in[0], in[1]); }},
      {"slice_cols", {{2, 5}}, [](auto& in) { return ad::slice_cols(in[0], 1, 3); }},
      {"reshape", {{2, 6}}, [](auto& in) { return ad::reshape(in[0], 3, 4); }},
      {"gather_rows", {{3, 2}}, [](auto& in) { return ad::gather_rows(in[0], idx); }},
      {"scatter_rows", {{4, 2}}, [](auto& in) { return ad::scatter_rows(in[0], idx, 3); }},
      {"pick_cols", {{4, 3}}, [](auto& in) { return ad::pick_cols(in[0], idx); }},
      {"sparse_matmul",
       {{4, 3}},
       [](auto& in) {
         ad::SparseRows s;
         s.num_rows = 2;
         s.num_cols = 4;
         s.rows = {{{0, 1.5}, {3, -0.5}}, {{2, 2.0}}};
         return ad::sparse_matmul(s, in[0]);
       }},
      {"dropout",
       {{2, 3}},
       [](auto& in) {
         Matrix mask(2, 3);
         mask << 0, 2, 2, 2, 0, 2;
         return ad::dropout(in[0], mask);
       }},
  };
}

double run_op(const OpSpec& op, const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed + 1);
  double worst = 0.0;
  for (int trial = 0; trial < o.trials; ++trial) {
    std::vector<Tensor> in;
    for (auto [r, c] : op.shapes) {
      Matrix m = uniform(r, c, rng, op.lo, 2.0);
      // Keep relu inputs away from the kink.
      for (Index i = 0; i < m.size(); ++i) {
        if (std::abs(m.data()[i]) < 1e-3) m.data()[i] = 0.5;
      }
      in.emplace_back(m, true);
    }
    const Tensor probe = op.build(in);
    const Tensor w(uniform(probe.rows(), probe.cols(), rng));
    worst = std::max(worst, check_params(in, [&] { return ad::sum(ad::mul(op.build(in), w)); }));
  }
  return worst;
}

// Hessian-vector product of a small nonlinear loss against differences of
// its gradient.
double run_double_backward(const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed + 2);
  double worst = 0.0;
  for (int trial = 0; trial < o.trials; ++trial) {
    const Tensor a(uniform(3, 4, rng));
    const Tensor b(uniform(4, 1, rng));
    const Matrix dir = uniform(1, 3, rng);
    auto loss = [&](const Tensor& x) {
      return ad::sum(ad::square(ad::matmul(ad::sigmoid(ad::matmul(x, a)), b)));
    };
    auto grad_dot = [&](const Matrix& xv) {
      const Tensor x(xv, true);
      const Tensor xs[] = {x};
      return ad::grad(loss(x), xs)[0].value().cwiseProduct(dir).sum();
    };
    const Tensor x(uniform(1, 3, rng), true);
    const Tensor xs[] = {x};
    const Tensor g = ad::grad(loss(x), xs, {.create_graph = true})[0];
    const Matrix hv = ad::grad(ad::sum(ad::mul(g, Tensor(dir))), xs)[0].value();
    worst = std::max(worst, max_rel_err(hv, central_diff(grad_dot, x.value())));
  }
  return worst;
}

rec::ModelDims tiny(rec::Setting s, rec::LossKind loss) {
  rec::ModelDims d;
  d.num_items = 5;
  d.dim = 3;
  d.hidden = 4;
  d.setting = s;
  d.loss = loss;
  return d;
}

rec::RecParams random_rec(const rec::ModelDims& dims, std::mt19937_64& rng) {
  rec::RecParams p = rec::RecParams::init(dims, rng());
  for (auto& t : p.all()) t.mutable_value() = uniform(t.rows(), t.cols(), rng, -0.8, 0.8);
  p.set_requires_grad(true);
  return p;
}

double run_item_loss(rec::Setting s, rec::LossKind kind, const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed + 3);
  double worst = 0.0;
  for (int trial = 0; trial < o.trials; ++trial) {
    const rec::RecParams p = random_rec(tiny(s, kind), rng);
    const Index item = static_cast<Index>(rng() % 5);
    const double rating = kind == rec::LossKind::bce ? double(rng() % 2) : 0.5 + (rng() % 5);
    worst = std::max(worst,
                     check_params(p.all(), [&] { return rec::item_loss(p, p.user, item, rating); }));
  }
  return worst;
}

double run_sketch_dz(const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed + 4);
  double worst = 0.0;
  for (int trial = 0; trial < o.trials; ++trial) {
    const rec::RecParams p = random_rec(tiny(rec::Setting::explicit_feedback, rec::LossKind::mse),
                                        rng);
    rec::RatingVector y(5);
    for (Index j = 0; j < 5; ++j) y.set(j, 1.0 + static_cast<double>(rng() % 5));
    const Tensor z(uniform(1, 5, rng, 0.2, 1.0), true);
    const auto th = rec::LocalParams::from_global(p);
    worst = std::max(worst, check_params({z}, [&] { return rec::sketch_loss(z, y, th); }));
  }
  return worst;
}

struct BilevelCase {
  rec::RecParams p;
  std::vector<Index> items;
  std::vector<double> ratings;
  Index next = 0;
  double next_rating = 0.0;
};

BilevelCase bilevel_case(rec::Setting s, std::mt19937_64& rng, Index n) {
  const auto loss = s == rec::Setting::explicit_feedback ? rec::LossKind::mse : rec::LossKind::cce;
  BilevelCase c{random_rec(tiny(s, loss), rng), {}, {}, 0, 0.0};
  std::vector<Index> perm{0, 1, 2, 3, 4};
  std::shuffle(perm.begin(), perm.end(), rng);
  for (Index i = 0; i < n; ++i) {
    c.items.push_back(perm[i]);
    c.ratings.push_back(uniform(1, 1, rng)(0, 0));
  }
  c.next = perm[n];
  c.next_rating = uniform(1, 1, rng)(0, 0);
  return c;
}

constexpr double kAlpha = 0.3;
constexpr Index kInner = 2;

// Meta-gradient through two inner steps on a K = 2 sketch.
double run_meta_grad(rec::Setting s, const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed + 5);
  double worst = 0.0;
  for (int trial = 0; trial < o.trials; ++trial) {
    BilevelCase c = bilevel_case(s, rng, 2);
    const Matrix w = Matrix::Ones(1, 2);
    const auto block = rec::prepare_block(c.p, c.items, c.ratings);
    const auto r = train::outer_grads(c.p, block, w, kAlpha, kInner, c.next, c.next_rating, false);
    const auto params = c.p.all();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i];
      const Matrix saved = t.value();
      const Matrix fd = central_diff(
          [&](const Matrix& x) {
            t.mutable_value() = x;
            const auto b = rec::prepare_block(c.p, c.items, c.ratings);
            const Tensor u = train::inner_adapt(c.p, b, Tensor(w), kAlpha, kInner, false);
            const double v = rec::item_loss(c.p, u, c.next, c.next_rating).item();
            t.mutable_value() = saved;
            return v;
          },
          saved);
      worst = std::max(worst, max_rel_err(r.theta[i], fd));
    }
  }
  return worst;
}

// d loss(x_{t+1}) / d z over sketch weights in the interior of [0, 1].
double run_grad_wrt_sketch(rec::Setting s, const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed + 6);
  double worst = 0.0;
  for (int trial = 0; trial < o.trials; ++trial) {
    BilevelCase c = bilevel_case(s, rng, 3);
    const Matrix w = uniform(1, 3, rng, 0.3, 1.0);
    const auto block = rec::prepare_block(c.p, c.items, c.ratings);
    const auto r = train::outer_grads(c.p, block, w, kAlpha, kInner, c.next, c.next_rating, true);
    const Matrix fd = central_diff(
        [&](const Matrix& x) {
          const Tensor u = train::inner_adapt(c.p, block, Tensor(x), kAlpha, kInner, false);
          return rec::item_loss(c.p, u, c.next, c.next_rating).item();
        },
        w);
    worst = std::max(worst, max_rel_err(r.v, fd));
  }
  return worst;
}

double run_topk_vjp(const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed + 7);
  const policy::TopKVjp vjp = o.topk_vjp ? o.topk_vjp : policy::TopKVjp(policy::topk_vjp);
  double worst = 0.0;
  for (int trial = 0; trial < o.trials; ++trial) {
    const Index c = 3 + static_cast<Index>(rng() % 6);
    const Index k = 1 + static_cast<Index>(rng() % (c - 1));
    const Matrix f = uniform(1, c, rng, -2.0, 2.0);
    const Matrix v = uniform(1, c, rng);
    const auto u = policy::topk_project({f.data(), static_cast<std::size_t>(c)}, k).u;
    const auto g = vjp(u, {v.data(), static_cast<std::size_t>(c)});
    const Matrix analytic = Eigen::Map<const Matrix>(g.data(), 1, c);
    const Matrix fd = central_diff(
        [&](const Matrix& x) {
          const auto ux = oracle_topk(x, k);
          double s = 0;
          for (Index i = 0; i < c; ++i) s += v(0, i) * ux[i];
          return s;
        },
        f);
    worst = std::max(worst, max_rel_err(analytic, fd));
  }
  return worst;
}

double run_keep_surrogate(const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed + 8);
  double worst = 0.0;
  for (int trial = 0; trial < o.trials; ++trial) {
    const Index c = 4 + static_cast<Index>(rng() % 4);
    const Index k = 2;
    const Tensor f(uniform(1, c, rng, -2.0, 2.0), true);
    const Matrix v = uniform(1, c, rng);
    Matrix w = Matrix::Zero(1, c);
    w(0, 0) = w(0, 2) = 1.0;
    const Tensor fs[] = {f};
    const Matrix g = ad::grad(policy::keep_surrogate(f, k, w, v, o.topk_vjp), fs)[0].value();
    const Matrix fd = central_diff(
        [&](const Matrix& x) {
          const auto u = oracle_topk(x, k);
          double s = 0;
          for (Index i = 0; i < c; ++i) s += v(0, i) * u[i];
          return s;
        },
        f.value());
    worst = std::max(worst, max_rel_err(g, fd));
  }
  return worst;
}

double run_removal_surrogate(const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed + 9);
  double worst = 0.0;
  for (int trial = 0; trial < o.trials; ++trial) {
    const Index c = 3 + static_cast<Index>(rng() % 5);
    const Tensor f(uniform(1, c, rng, -2.0, 2.0), true);
    const Matrix v = uniform(1, c, rng);
    Matrix w = Matrix::Zero(1, c);
    w(0, static_cast<Index>(rng() % c)) = 1.0;
    const Tensor fs[] = {f};
    const Matrix g = ad::grad(policy::removal_surrogate(f, w, v), fs)[0].value();
    const Matrix fd = central_diff(
        [&](const Matrix& x) {
          const Matrix p = (x.array() - x.maxCoeff()).exp().matrix();
          return (v.array() * (1.0 - p.array() / p.sum())).sum();
        },
        f.value());
    worst = std::max(worst, max_rel_err(g, fd));
  }
  return worst;
}

policy::IntermediateSketch random_inter(Index m, Index c, std::mt19937_64& rng) {
  std::vector<Index> perm(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  policy::IntermediateSketch s;
  s.num_items = m;
  for (Index i = 0; i < c; ++i) s.entries.push_back({perm[i], 1.0 + double(rng() % 5), i + 1});
  return s;
}

void randomize(policy::PolicyParams& phi, std::mt19937_64& rng) {
  for (auto& t : phi.all()) t.mutable_value() = uniform(t.rows(), t.cols(), rng, -0.5, 0.5);
}

double run_candidate_scores(const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed + 10);
  double worst = 0.0;
  for (int trial = 0; trial < o.trials; ++trial) {
    auto phi = policy::PolicyParams::init(8, rng(), 6, 0.0);
    randomize(phi, rng);
    const auto inter = random_inter(8, 4, rng);
    const Tensor w(uniform(1, 4, rng));
    worst = std::max(worst, check_params(phi.all(), [&] {
      return ad::sum(ad::mul(policy::candidate_scores(inter, phi), w));
    }));
  }
  return worst;
}

// Batched queue gradient against differences of the relaxed objective
// sum_e v . z_e(Phi), with z the softmax-removal or Top-K relaxation.
double run_policy_surrogate(const GradcheckOptions& o) {
  std::mt19937_64 rng(o.seed + 11);
  double worst = 0.0;
  const Index m = 9;
  for (int trial = 0; trial < o.trials; ++trial) {
    auto phi = policy::PolicyParams::init(m, rng(), 6, 0.0);
    randomize(phi, rng);
    std::vector<train::SelectionEntry> entries(3);
    for (std::size_t e = 0; e < entries.size(); ++e) {
      auto& s = entries[e];
      s.inter = random_inter(m, 4, rng);
      s.removal_head = e % 2 == 0;
      s.keep = 2;
      s.w = Matrix::Zero(1, 4);
      if (s.removal_head) s.w(0, 1) = 1.0;
      else s.w(0, 0) = s.w(0, 3) = 1.0;
    }
    const Matrix v = uniform(1, m, rng);
    std::vector<const train::SelectionEntry*> ptrs;
    for (const auto& e : entries) ptrs.push_back(&e);
    const std::vector<const policy::DropoutMasks*> masks(ptrs.size(), nullptr);
    const auto g = train::surrogate_policy_grad(ptrs, masks, phi, v, o.topk_vjp);

    auto relaxed = [&] {
      double total = 0.0;
      for (const auto& s : entries) {
        const Matrix f = policy::candidate_scores(s.inter, phi).value();
        const Index c = f.cols();
        Matrix z(1, c);
        if (s.removal_head) {
          const Matrix p = (f.array() - f.maxCoeff()).exp().matrix();
          z = (1.0 - p.array() / p.sum()).matrix();
        } else {
          const auto u = oracle_topk(f, s.keep);
          for (Index i = 0; i < c; ++i) z(0, i) = u[i];
        }
        for (Index i = 0; i < c; ++i) total += v(0, s.inter.entries[i].item) * z(0, i);
      }
      return total;
    };
    const auto params = phi.all();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i];
      const Matrix saved = t.value();
      const Matrix fd = central_diff(
          [&](const Matrix& x) {
            t.mutable_value() = x;
            const double r = relaxed();
            t.mutable_value() = saved;
            return r;
          },
          saved);
      worst = std::max(worst, max_rel_err(g[i], fd));
    }
  }
  return worst;
}

std::vector<GradCheck> build_registry() {
  std::vector<GradCheck> r;
  for (const auto& op : op_specs()) {
    r.push_back({"op." + op.name, 1e-4, [op](const GradcheckOptions& o) { return run_op(op, o); }});
  }
  r.push_back({"op.double_backward", 1e-4, run_double_backward});
  const auto ex = rec::Setting::explicit_feedback;
  const auto im = rec::Setting::implicit_feedback;
  r.push_back({"rec.item_loss.mse", 1e-4,
               [=](const GradcheckOptions& o) { return run_item_loss(ex, rec::LossKind::mse, o); }});
  r.push_back({"rec.item_loss.bce", 1e-4,
               [=](const GradcheckOptions& o) { return run_item_loss(ex, rec::LossKind::bce, o); }});
  r.push_back({"rec.item_loss.cce", 1e-4,
               [=](const GradcheckOptions& o) { return run_item_loss(im, rec::LossKind::cce, o); }});
  r.push_back({"rec.sketch_loss.dz", 1e-4, run_sketch_dz});
  r.push_back({"bilevel.meta_grad.explicit", 1e-3,
               [=](const GradcheckOptions& o) { return run_meta_grad(ex, o); }});
  r.push_back({"bilevel.meta_grad.implicit", 1e-3,
               [=](const GradcheckOptions& o) { return run_meta_grad(im, o); }});
  r.push_back({"bilevel.grad_wrt_sketch.explicit", 1e-3,
               [=](const GradcheckOptions& o) { return run_grad_wrt_sketch(ex, o); }});
  r.push_back({"bilevel.grad_wrt_sketch.implicit", 1e-3,
               [=](const GradcheckOptions& o) { return run_grad_wrt_sketch(im, o); }});
  r.push_back({"topk.vjp", 1e-4, run_topk_vjp});
  r.push_back({"topk.keep_surrogate", 1e-4, run_keep_surrogate});
  r.push_back({"selection.removal_surrogate", 1e-4, run_removal_surrogate});
  r.push_back({"policy.candidate_scores", 1e-4, run_candidate_scores});
  r.push_back({"policy.queue_surrogate", 1e-4, run_policy_surrogate});
  return r;
}

}  // namespace

const std::vector<GradCheck>& gradcheck_registry() {
  static const std::vector<GradCheck> registry = build_registry();
  return registry;
}

std::vector<CheckResult> run_gradchecks(const GradcheckOptions& options) {
  std::vector<CheckResult> out;
  for (const auto& c : gradcheck_registry()) {
    CheckResult r;
    r.name = c.name;
    r.tolerance = c.tolerance;
    try {
      r.error = c.run(options);
      r.passed = std::isfinite(r.error) && r.error <= c.tolerance;
    } catch (const std::exception& e) {
      r.error = std::numeric_limits<double>::infinity();
      r.message = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dips::diag
