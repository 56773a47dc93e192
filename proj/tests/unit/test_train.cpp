#include "dips/ad/autograd.hpp"
#include "dips/ad/ops.hpp"
#include "dips/common/error.hpp"
#include "dips/data/synth.hpp"
#include "dips/train/bilevel.hpp"
#include "dips/train/config.hpp"
#include "dips/train/episode.hpp"
#include "dips/train/optim.hpp"
#include "dips/train/trainer.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <sstream>

using namespace dips;
using namespace dips::train;
using ad::Index;
using ad::Matrix;
using ad::Tensor;

namespace {

rec::ModelDims tiny_dims(rec::Setting s) {
  rec::ModelDims d;
  d.num_items = 5;
  d.dim = 3;
  d.hidden = 4;
  d.setting = s;
  d.loss = s == rec::Setting::explicit_feedback ? rec::LossKind::mse : rec::LossKind::cce;
  return d;
}

rec::RecParams random_params(const rec::ModelDims& dims, std::uint64_t seed, double scale = 1.0) {
  rec::RecParams p = rec::RecParams::init(dims, seed);
  std::mt19937_64 rng(seed + 101);
  for (auto& t : p.all()) {
    t.mutable_value() = testing::random_matrix(t.rows(), t.cols(), rng, -scale, scale);
  }
  return p;
}

// Outer loss recomputed from scratch: prepare the block, adapt without graph,
// evaluate the next item.
double outer_value(const rec::RecParams& p, const std::vector<Index>& items,
                   const std::vector<double>& ratings, const Matrix& weights, double alpha,
                   Index steps, Index next, double next_r) {
  ad::NoGradGuard guard_off_for_block;
  rec::ItemBlock block;
  {
    ad::GradModeGuard on(true);
    block = rec::prepare_block(p, items, ratings);
  }
  ad::GradModeGuard on(true);
  Tensor u = inner_adapt(p, block, Tensor(weights), alpha, steps, false);
  return rec::item_loss(p, u, next, next_r).item();
}

TrainConfig small_config(PolicyKind kind) {
  TrainConfig c;
  c.policy = kind;
  c.K = 3;
  c.queue = 8;
  c.inner_steps = 3;
  c.inner_lr = 0.2;
  c.dim = 4;
  c.hidden = 8;
  c.policy_hidden = 16;
  c.batch_size = 4;
  c.epochs = 1;
  c.lr_user = 1e-2;
  c.lr_item = 1e-2;
  c.lr_policy = 1e-2;
  c.seed = 11;
  return c;
}

data::Dataset small_data(bool implicit, std::uint64_t seed, Index users = 12) {
  data::SynthConfig s;
  s.num_users = users;
  s.num_items = 30;
  s.length = 9;
  s.num_anchor_items = 6;
  s.anchors_per_user = 2;
  s.rank = 2;
  s.implicit = implicit;
  return data::synth_stream(s, seed);
}

TrainResult fit(const TrainConfig& c, const std::vector<data::UserStream>& users, Index m,
                const TrainHooks& hooks = {}, std::optional<TrainState> init = {}) {
  return dips::train::train(c, users, m, hooks, std::move(init));
}

bool same_params(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].value() != b[i].value()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config: defaults validate, keys round-trip, unknown keys are reported") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  TrainConfig d;
  for (const auto& [k, v] : c.entries()) CHECK(d.set(k, v));
  CHECK(d.entries() == c.entries());
  CHECK_FALSE(d.set("no_such_key", "1"));
  CHECK_THROWS_AS(d.set("K", "four"), ConfigError);
  CHECK_THROWS_AS(d.set("inner_lr", "0.2x"), ConfigError);
  d.K = 0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d = c;
  d.set("setting", "implicit");
  CHECK(d.loss == rec::LossKind::cce);
  d.set("loss", "mse");
  CHECK_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("config: key = value parsing") {
  const auto kv = parse_key_values("# comment\nK = 4\n\n tau=2 # trailing\n", "cfg");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0].key == "K");
  CHECK(kv[0].value == "4");
  CHECK(kv[1].key == "tau");
  CHECK(kv[1].value == "2");
  CHECK(kv[1].line == 4);
  CHECK_THROWS_AS(parse_key_values("K 4\n", "cfg"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("K=1\nK=2\n", "cfg"), ConfigError);
  CHECK(parse_override("queue=5").value == "5");
  CHECK_THROWS_AS(parse_override("queue"), ConfigError);
}

TEST_CASE("optim: sgd momentum and adam against hand-rolled updates") {
  Tensor p(Matrix::Constant(1, 2, 1.0), true);
  std::vector<Tensor> ps{p};
  SgdMomentum sgd(0.1, 0.9, 0.01);
  const Matrix g = (Matrix(1, 2) << 0.5, -1.0).finished();
  sgd.step(ps, {g});
  // buf = g + wd p; p = p - lr buf
  Matrix buf = g + 0.01 * Matrix::Constant(1, 2, 1.0);
  Matrix ref = Matrix::Constant(1, 2, 1.0) - 0.1 * buf;
  CHECK(testing::max_rel_err(p.value(), ref, 1e-15) < 1e-14);
  const Matrix before = p.value();
  sgd.step(ps, {g});
  buf = 0.9 * buf + g + 0.01 * before;
  ref = before - 0.1 * buf;
  CHECK(testing::max_rel_err(p.value(), ref, 1e-15) < 1e-14);

  Tensor q(Matrix::Constant(1, 1, 2.0), true);
  std::vector<Tensor> qs{q};
  Adam adam(0.01, 0.9, 0.999, 1e-8, 0.0);
  adam.step(qs, {Matrix::Constant(1, 1, 3.0)});
  // First Adam step moves by lr * sign(g) up to eps.
  CHECK(q.value()(0, 0) == doctest::Approx(2.0 - 0.01).epsilon(1e-9));

  Tensor r(Matrix::Constant(1, 1, 2.0), true);
  std::vector<Tensor> rs{r};
  Adam frozen(0.0, 0.9, 0.999, 1e-8, 2e-4);
  frozen.step(rs, {Matrix::Constant(1, 1, 3.0)});
  CHECK(r.value()(0, 0) == 2.0);
}

TEST_CASE("inner_adapt: zero steps, zero rate and zero weights leave the prior unchanged") {
  const auto dims = tiny_dims(rec::Setting::explicit_feedback);
  const rec::RecParams p = random_params(dims, 3);
  rec::RatingVector y(5);
  y.set(0, 4.0);
  y.set(2, 1.0);
  const Tensor z = Tensor::row({1.0, 0.0, 1.0, 0.0, 0.0});
  CHECK(inner_adapt(p, z, y, 0.2, 0).user.value() == p.user.value());
  CHECK(inner_adapt(p, z, y, 0.0, 10).user.value() == p.user.value());
  CHECK(inner_adapt(p, Tensor::zeros(1, 5), y, 0.2, 10).user.value() == p.user.value());
  CHECK(inner_adapt(p, Tensor::zeros(1, 5), y, 0.2, 10, false).user.value() == p.user.value());
}

TEST_CASE("inner_adapt: sketch loss is non-increasing on a convex toy") {
  // With b1 large every hidden unit is active, so the model is linear in the
  // user embedding and the mse sketch loss is a convex quadratic.
  auto dims = tiny_dims(rec::Setting::explicit_feedback);
  rec::RecParams p = random_params(dims, 5, 0.3);
  p.b1.mutable_value().setConstant(10.0);
  rec::RatingVector y(5);
  y.set(1, 2.0);
  y.set(3, -1.0);
  y.set(4, 0.5);
  const Tensor z = Tensor::row({0.0, 1.0, 0.0, 1.0, 1.0});
  double prev = 1e300;
  for (Index n = 0; n <= 10; ++n) {
    const rec::LocalParams th = inner_adapt(p, z, y, 0.2, n, false);
    const double loss = rec::sketch_loss(z, y, th).item();
    CHECK(loss <= prev + 1e-15);
    prev = loss;
  }
  CHECK(prev < rec::sketch_loss(z, y, rec::LocalParams::from_global(p)).item());
}

TEST_CASE("inner_adapt: item-side parameters are bit-identical afterwards") {
  for (auto s : {rec::Setting::explicit_feedback, rec::Setting::implicit_feedback}) {
    const auto dims = tiny_dims(s);
    const rec::RecParams p = random_params(dims, 8);
    const std::uint64_t before = item_side_checksum(p);
    rec::RatingVector y(5);
    y.set(0, 1.0);
    y.set(3, 1.0);
    const Tensor z = Tensor::row({1.0, 0.0, 0.0, 1.0, 0.0});
    const auto th = inner_adapt(p, z, y, 0.4, 10, true);
    const auto g = ad::grad(rec::item_loss(p, th.user, 2, 1.0), std::vector<Tensor>{p.user});
    (void)g;
    inner_adapt(p, z, y, 0.4, 10, false);
    CHECK(item_side_checksum(p) == before);
  }
}

TEST_CASE("outer_grads: meta-gradient matches finite differences (M=5, d=3, K=2, n=2)") {
  for (auto s : {rec::Setting::explicit_feedback, rec::Setting::implicit_feedback}) {
    CAPTURE(rec::to_string(s));
    const auto dims = tiny_dims(s);
    rec::RecParams p = random_params(dims, 21, 0.8);
    const std::vector<Index> items{1, 3};
    const std::vector<double> ratings{0.7, -0.4};
    const Matrix w = Matrix::Ones(1, 2);
    const double alpha = 0.3;
    const Index next = 4;
    const double next_r = 0.9;

    const rec::ItemBlock block = rec::prepare_block(p, items, ratings);
    const OuterResult r = outer_grads(p, block, w, alpha, 2, next, next_r, false);
    CHECK(r.loss == doctest::Approx(outer_value(p, items, ratings, w, alpha, 2, next, next_r)));

    const auto params = p.all();
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i];
      const Matrix saved = t.value();
      const Matrix fd = testing::central_diff(
          [&](const Matrix& x) {
            t.mutable_value() = x;
            const double v = outer_value(p, items, ratings, w, alpha, 2, next, next_r);
            t.mutable_value() = saved;
            return v;
          },
          saved);
      worst = std::max(worst, testing::max_rel_err(r.theta[i], fd, 1e-6));
    }
    CHECK(worst <= 1e-3);
  }
}

TEST_CASE("outer_grads: zero inner steps give the plain gradient at the prior") {
  const auto dims = tiny_dims(rec::Setting::explicit_feedback);
  const rec::RecParams p = random_params(dims, 4);
  const std::vector<Index> items{0, 2};
  const std::vector<double> ratings{1.0, 2.0};
  const rec::ItemBlock block = rec::prepare_block(p, items, ratings);
  const OuterResult r = outer_grads(p, block, Matrix::Ones(1, 2), 0.5, 0, 3, 1.5, false);
  const auto plain = ad::grad(rec::item_loss(p, p.user, 3, 1.5), p.all());
  for (std::size_t i = 0; i < plain.size(); ++i) CHECK(r.theta[i] == plain[i].value());
}

TEST_CASE("grad_wrt_sketch: v matches perturb-and-refit finite differences") {
  for (auto s : {rec::Setting::explicit_feedback, rec::Setting::implicit_feedback}) {
    CAPTURE(rec::to_string(s));
    const auto dims = tiny_dims(s);
    const rec::RecParams p = random_params(dims, 33, 0.8);
    // Interacted items 0..3; the sketch holds 1 and 3; v is wanted for all four.
    rec::RatingVector y(5);
    const std::vector<Index> items{0, 1, 2, 3};
    const std::vector<double> ratings{0.5, -0.3, 1.2, 0.1};
    for (std::size_t i = 0; i < items.size(); ++i) y.set(items[i], ratings[i]);
    Matrix z = Matrix::Zero(1, 5);
    z(0, 1) = 1.0;
    z(0, 3) = 1.0;
    const Index next = 4;
    const double alpha = 0.3;
    const Index steps = 2;

    const rec::ItemBlock block = rec::prepare_block(p, items, ratings);
    Matrix w(1, 4);
    for (Index i = 0; i < 4; ++i) w(0, i) = z(0, items[i]);
    const OuterResult r = outer_grads(p, block, w, alpha, steps, next, 0.4, true);
    const Matrix v = expand_v(r.v, items, 5);

    for (Index j : items) {
      const double h = 1e-4;
      auto loss_at = [&](double zj) {
        Matrix zz = z;
        zz(0, j) = zj;
        const auto th = inner_adapt(p, Tensor(zz), y, alpha, steps, false);
        return rec::item_loss(p, th.user, next, 0.4).item();
      };
      // Weights cannot go negative, so items outside the sketch use a
      // second-order one-sided difference.
      const double z0 = z(0, j);
      const double fd = z0 > 0 ? (loss_at(z0 + h) - loss_at(z0 - h)) / (2 * h)
                               : (-3 * loss_at(z0) + 4 * loss_at(z0 + h) - loss_at(z0 + 2 * h)) /
                                     (2 * h);
      CAPTURE(j);
      CHECK(testing::rel_err(v(0, j), fd, 1e-6) <= 1e-3);
    }
  }
}

TEST_CASE("grad_wrt_sketch: one inner step gives v_j = -alpha <g_next, g_j>") {
  const auto dims = tiny_dims(rec::Setting::explicit_feedback);
  rec::RecParams p = random_params(dims, 41, 0.8);
  const std::vector<Index> items{0, 1, 2};
  std::vector<double> ratings{0.5, 0.0, 1.0};
  // Item 1 is rated exactly as predicted at the prior, so its gradient is zero
  // and orthogonal to everything: v_1 = 0.
  ratings[1] = rec::predict_explicit(rec::LocalParams::from_global(p), 1);
  const double alpha = 0.25;
  const rec::ItemBlock block = rec::prepare_block(p, items, ratings);
  const Matrix w = (Matrix(1, 3) << 1.0, 0.0, 1.0).finished();
  const OuterResult r = outer_grads(p, block, w, alpha, 1, 4, 2.0, true);

  Tensor u(p.user.value(), true);
  auto grad_u = [&](const Tensor& at, Index item, double rating) {
    const Tensor x(at.value(), true);
    return ad::grad(rec::item_loss(p, x, item, rating), std::vector<Tensor>{x})[0].value();
  };
  Matrix step = Matrix::Zero(1, 3);
  for (Index i = 0; i < 3; ++i) step += w(0, i) * grad_u(u, items[i], ratings[i]);
  const Tensor u_star(u.value() - alpha * step);
  const Matrix g_next = grad_u(u_star, 4, 2.0);
  for (Index i = 0; i < 3; ++i) {
    const double expect = -alpha * g_next.cwiseProduct(grad_u(u, items[i], ratings[i])).sum();
    CHECK(r.v(0, i) == doctest::Approx(expect).epsilon(1e-10));
  }
  CHECK(std::abs(r.v(0, 1)) < 1e-12);
}

TEST_CASE("grad_wrt_sketch: duplicate items get equal v") {
  const auto dims = tiny_dims(rec::Setting::explicit_feedback);
  rec::RecParams p = random_params(dims, 51, 0.8);
  p.item_emb.mutable_value().row(2) = p.item_emb.value().row(0);
  const std::vector<Index> items{0, 1, 2};
  const std::vector<double> ratings{1.5, -0.5, 1.5};
  const rec::ItemBlock block = rec::prepare_block(p, items, ratings);
  const Matrix w = (Matrix(1, 3) << 1.0, 1.0, 0.0).finished();
  const OuterResult r = outer_grads(p, block, w, 0.3, 3, 4, 0.2, true);
  CHECK(r.v(0, 0) == doctest::Approx(r.v(0, 2)).epsilon(1e-12));
}

TEST_CASE("queue: FIFO with capacity") {
  auto entry = [](Index tag) {
    SelectionEntry e;
    e.inter.num_items = 100;
    e.inter.entries.push_back({tag, 1.0, tag});
    e.w = Matrix::Zero(1, 1);
    return e;
  };
  SketchQueue q(3);
  for (Index i = 0; i < 3; ++i) q.push(entry(i));
  CHECK(q.size() == 3);
  q.push(entry(3));
  REQUIRE(q.size() == 3);
  CHECK(q.entries()[0].inter.entries[0].item == 1);
  CHECK(q.entries()[1].inter.entries[0].item == 2);
  CHECK(q.entries()[2].inter.entries[0].item == 3);
  SketchQueue none(0);
  for (Index i = 0; i < 5; ++i) none.push(entry(i));
  CHECK(none.empty());
}

TEST_CASE("approx_policy_grad: empty queue is the current term; zero v gives zero") {
  const Index m = 12;
  const auto phi = policy::PolicyParams::init(m, 3, 16, 0.1);
  SelectionEntry cur;
  cur.inter.num_items = m;
  for (Index i = 0; i < 4; ++i) cur.inter.entries.push_back({2 * i + 1, 1.0 + i, i + 1});
  cur.removal_head = true;
  cur.w = Matrix::Zero(1, 4);
  cur.w(0, 2) = 1.0;
  Matrix v = Matrix::Zero(1, m);
  std::mt19937_64 rng(1);
  for (Index i = 0; i < 4; ++i) v(0, 2 * i + 1) = 0.3 * (i + 1) - 0.5;

  SketchQueue empty(10);
  const auto a = approx_policy_grad(empty, phi, v, cur, nullptr, false, rng);
  const SelectionEntry* one[] = {&cur};
  const policy::DropoutMasks* nomask[] = {nullptr};
  const auto b = surrogate_policy_grad(one, nomask, phi, v);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // Direct per-entry oracle: the un-batched candidate scores and surrogate.
  const auto params = phi.all();
  Matrix vc(1, 4);
  for (Index i = 0; i < 4; ++i) vc(0, i) = v(0, cur.inter.entries[i].item);
  const auto direct = ad::grad(
      policy::removal_surrogate(policy::candidate_scores(cur.inter, phi), cur.w, vc), params);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK((a[i] - direct[i].value()).cwiseAbs().maxCoeff() < 1e-12);
  }

  const auto z = approx_policy_grad(empty, phi, Matrix::Zero(1, m), cur, nullptr, false, rng);
  for (const auto& g : z) CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("approx_policy_grad: batched queue equals the sum of per-entry gradients") {
  const Index m = 15;
  const auto phi = policy::PolicyParams::init(m, 9, 16, 0.1);
  std::mt19937_64 rng(4);
  std::vector<SelectionEntry> entries;
  for (int e = 0; e < 4; ++e) {
    SelectionEntry s;
    s.inter.num_items = m;
    for (Index i = 0; i < 5; ++i) s.inter.entries.push_back({(3 * e + 2 * i) % m, 1.0, i + 1});
    s.removal_head = e % 2 == 0;
    s.keep = 3;
    s.w = Matrix::Zero(1, 5);
    if (s.removal_head) s.w(0, e % 5) = 1.0;
    else for (Index i : {0, 2, 4}) s.w(0, i) = 1.0;
    entries.push_back(s);
  }
  const Matrix v = testing::random_matrix(1, m, rng);
  std::vector<policy::DropoutMasks> masks;
  for (int e = 0; e < 4; ++e) masks.push_back(policy::DropoutMasks::sample(phi, rng));

  std::vector<const SelectionEntry*> ptrs;
  std::vector<const policy::DropoutMasks*> mptrs;
  for (int e = 0; e < 4; ++e) {
    ptrs.push_back(&entries[e]);
    mptrs.push_back(e == 1 ? nullptr : &masks[e]);
  }
  const auto batched = surrogate_policy_grad(ptrs, mptrs, phi, v);

  const auto params = phi.all();
  std::vector<Matrix> sum;
  for (const auto& p : params) sum.push_back(Matrix::Zero(p.rows(), p.cols()));
  for (int e = 0; e < 4; ++e) {
    const auto& s = entries[e];
    Matrix vc(1, 5);
    for (Index i = 0; i < 5; ++i) vc(0, i) = v(0, s.inter.entries[i].item);
    const Tensor f = policy::candidate_scores(s.inter, phi, mptrs[e]);
    const Tensor obj = s.removal_head ? policy::removal_surrogate(f, s.w, vc)
                                      : policy::keep_surrogate(f, s.keep, s.w, vc);
    const auto g = ad::grad(obj, params);
    for (std::size_t i = 0; i < g.size(); ++i) sum[i] += g[i].value();
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    CHECK((batched[i] - sum[i]).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("policy gradient is zero for weights feeding scores of items never in a sketch") {
  TrainConfig c = small_config(PolicyKind::dips);
  const auto d = small_data(false, 2, 4);
  std::vector<std::uint8_t> touched(static_cast<std::size_t>(d.num_items()), 0);
  Index checked = 0;
  TrainHooks hooks;
  hooks.on_step = [&](Index, const Episode& ep, const StepResult& r, const TrainState&) {
    if (r.phi_grads.empty()) return;
    std::fill(touched.begin(), touched.end(), 0);
    for (const auto& e : ep.queue().entries()) {
      for (const auto& en : e.inter.entries) touched[en.item] = 1;
    }
    // phi.all(): w1, b1, w2, b2, w3, b3
    const Matrix& w1 = r.phi_grads[0];
    const Matrix& w3 = r.phi_grads[4];
    const Matrix& b3 = r.phi_grads[5];
    for (Index j = 0; j < d.num_items(); ++j) {
      if (touched[j]) continue;
      CHECK(w1.row(j).cwiseAbs().maxCoeff() == 0.0);
      CHECK(w3.row(j).cwiseAbs().maxCoeff() == 0.0);
      CHECK(b3(0, j) == 0.0);
      ++checked;
    }
  };
  fit(c, d.streams, d.num_items(), hooks);
  CHECK(checked > 0);
}

TEST_CASE("train: policy update count follows the step ordering") {
  TrainConfig c = small_config(PolicyKind::dips);
  c.K = 3;
  for (Index len : {Index(3), Index(4), Index(5), Index(7)}) {
    data::Dataset d = small_data(false, 5, 1);
    d.streams[0].events.resize(static_cast<std::size_t>(len));
    const TrainResult r = fit(c, d.streams, d.num_items());
    CAPTURE(len);
    // Selections happen at steps t = K+1 .. T-1.
    CHECK(r.policy_updates == std::max<Index>(0, len - 1 - c.K));
    CHECK(r.theta_updates == len - 1);
  }
  // Batch mode: one selection every tau steps once the sketch is full.
  c.mode = UpdateMode::batch;
  c.tau = 2;
  data::Dataset d = small_data(false, 5, 1);
  d.streams[0].events.resize(9);
  // t = 1..3 warm-up, pending at t = 4,5 -> select at 5; 6,7 -> 7; t = 8 pending.
  CHECK(fit(c, d.streams, d.num_items()).policy_updates == 2);
}

TEST_CASE("train: static policies never touch the policy network") {
  for (auto kind : {PolicyKind::random, PolicyKind::hardest, PolicyKind::influence,
                    PolicyKind::earliest}) {
    CAPTURE(to_string(kind));
    const TrainConfig c = small_config(kind);
    const auto d = small_data(false, 6);
    const TrainState init = init_state(c, d.num_items());
    const auto phi0 = init.phi.clone();
    const TrainResult r = fit(c, d.streams, d.num_items(), {}, init);
    CHECK(r.policy_updates == 0);
    CHECK(same_params(r.state.phi.all(), phi0.all()));
  }
}

TEST_CASE("train: zero outer rates leave every parameter unchanged") {
  TrainConfig c = small_config(PolicyKind::dips);
  c.lr_user = c.lr_item = c.lr_policy = 0.0;
  const auto d = small_data(false, 7);
  const TrainState init = init_state(c, d.num_items());
  const auto theta0 = init.theta.clone();
  const auto phi0 = init.phi.clone();
  const TrainResult r = fit(c, d.streams, d.num_items(), {}, init);
  CHECK(r.policy_updates > 0);
  CHECK(same_params(r.state.theta.all(), theta0.all()));
  CHECK(same_params(r.state.phi.all(), phi0.all()));
}

TEST_CASE("train: recommender loss decreases over epochs with the random policy") {
  std::vector<double> first, last;
  std::vector<std::vector<double>> curves;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig c = small_config(PolicyKind::random);
    c.seed = seed;
    c.epochs = 4;
    c.lr_user = 2e-2;
    c.lr_item = 2e-2;
    const auto d = small_data(false, 100 + seed, 40);
    const TrainResult r = fit(c, d.streams, d.num_items());
    std::vector<double> curve;
    for (const auto& rec : r.log) {
      if (rec.split == "train") curve.push_back(rec.value);
    }
    REQUIRE(curve.size() == 4);
    CHECK(curve.back() < curve.front());
    curves.push_back(curve);
  }
  for (std::size_t e = 1; e < 4; ++e) {
    double prev = 0.0, cur = 0.0;
    for (const auto& c : curves) {
      prev += c[e - 1];
      cur += c[e];
    }
    CHECK(cur < prev);
  }
}

TEST_CASE("train: batch mode with tau = 1 reproduces online mode bit for bit") {
  for (bool implicit : {false, true}) {
    TrainConfig online = small_config(PolicyKind::dips);
    if (implicit) online.set("setting", "implicit");
    TrainConfig batch = online;
    batch.mode = UpdateMode::batch;
    batch.tau = 1;
    const auto d = small_data(implicit, 8);

    auto run = [&](const TrainConfig& c, std::vector<StepTrace>& traces) {
      TrainHooks hooks;
      hooks.on_step = [&](Index, const Episode&, const StepResult& r, const TrainState&) {
        traces.push_back(r.trace);
      };
      return fit(c, d.streams, d.num_items(), hooks);
    };
    std::vector<StepTrace> ta, tb;
    const TrainResult a = run(online, ta);
    const TrainResult b = run(batch, tb);
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
      CHECK(ta[i].sketch == tb[i].sketch);
      CHECK(ta[i].removed == tb[i].removed);
    }
    std::ostringstream la, lb;
    write_metric_log(la, a.log);
    write_metric_log(lb, b.log);
    CHECK(la.str() == lb.str());
    CHECK(same_params(a.state.theta.all(), b.state.theta.all()));
    CHECK(same_params(a.state.phi.all(), b.state.phi.all()));
  }
}

TEST_CASE("train: deterministic across runs and thread counts") {
  TrainConfig c = small_config(PolicyKind::dips);
  c.epochs = 2;
  const auto d = small_data(false, 9);
  auto run_with = [&](const char* threads) {
    setenv("DIPS_THREADS", threads, 1);
    const TrainResult r = fit(c, d.streams, d.num_items());
    std::ostringstream log;
    write_metric_log(log, r.log);
    return std::make_pair(log.str(), r.state.theta.clone());
  };
  const auto a = run_with("1");
  const auto b = run_with("1");
  const auto e = run_with("3");
  unsetenv("DIPS_THREADS");
  CHECK(a.first == b.first);
  CHECK(a.first == e.first);
  CHECK(same_params(a.second.all(), e.second.all()));
}

TEST_CASE("train: short streams are skipped with a warning") {
  TrainConfig c = small_config(PolicyKind::random);
  auto d = small_data(false, 10, 3);
  d.streams[1].events.resize(1);
  std::vector<std::string> warnings;
  TrainHooks hooks;
  hooks.warn = [&](const std::string& w) { warnings.push_back(w); };
  const TrainResult r = fit(c, d.streams, d.num_items(), hooks);
  CHECK(r.skipped_users == 1);
  CHECK(warnings.size() == 1);
}

TEST_CASE("metric records round-trip through their json form") {
  MetricRecord r{3, "valid", "rmse", 0.8125, 4, 1, "dips", 7};
  const MetricRecord back = MetricRecord::from_json(r.to_json());
  CHECK(back.epoch == 3);
  CHECK(back.split == "valid");
  CHECK(back.metric == "rmse");
  CHECK(back.value == 0.8125);
  CHECK(back.K == 4);
  CHECK(back.tau == 1);
  CHECK(back.policy == "dips");
  CHECK(back.seed == 7);
  CHECK_THROWS_AS(MetricRecord::from_json("{\"epoch\": 1}"), DataError);
}

TEST_CASE("a non-finite training loss stops training with a numerical error") {
  const TrainConfig c = small_config(PolicyKind::random);
  data::Dataset d = small_data(false, 4, 3);
  d.streams[1].events[2].rating = 1e200;
  CHECK_THROWS_AS(fit(c, d.streams, d.num_items()), NumericalError);
}
