#include "dips/ad/autograd.hpp"
#include "dips/ad/ops.hpp"
#include "dips/common/error.hpp"
#include "dips/common/params_io.hpp"
#include "dips/rec/model.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace dips;
using namespace dips::rec;
using ad::Index;
using ad::Matrix;
using ad::Tensor;

namespace {

ModelDims tiny(Setting s) {
  ModelDims d;
  d.num_items = 5;
  d.dim = 3;
  d.hidden = 4;
  d.setting = s;
  d.loss = s == Setting::explicit_feedback ? LossKind::mse : LossKind::cce;
  return d;
}

// Randomizes every parameter, including biases that init leaves at zero.
RecParams random_params(const ModelDims& dims, std::uint64_t seed) {
  RecParams p = RecParams::init(dims, seed);
  std::mt19937_64 rng(seed + 17);
  for (auto& t : p.all()) t.mutable_value() = testing::random_matrix(t.rows(), t.cols(), rng);
  return p;
}

// Straight-line explicit forward with plain loops.
double oracle_explicit(const RecParams& p, Index item) {
  const Index d = p.dims.dim, h = p.dims.hidden;
  double out = p.b2.at(0, 0);
  for (Index k = 0; k < h; ++k) {
    double a = p.b1.at(0, k);
    for (Index i = 0; i < d; ++i) {
      a += p.user.at(0, i) * p.w1_user.at(i, k);
      a += p.item_emb.at(item, i) * p.w1_item.at(i, k);
    }
    out += std::max(a, 0.0) * p.w2.at(k, 0);
  }
  return out;
}

std::vector<double> oracle_implicit(const RecParams& p) {
  const Index d = p.dims.dim, h = p.dims.hidden;
  std::vector<double> hid(h), tower(d);
  for (Index k = 0; k < h; ++k) {
    double a = p.b1.at(0, k);
    for (Index i = 0; i < d; ++i) a += p.user.at(0, i) * p.w1_user.at(i, k);
    hid[k] = std::max(a, 0.0);
  }
  for (Index i = 0; i < d; ++i) {
    double a = p.b2.at(0, i);
    for (Index k = 0; k < h; ++k) a += hid[k] * p.w2.at(k, i);
    tower[i] = a;
  }
  std::vector<double> s(p.dims.num_items);
  for (Index j = 0; j < p.dims.num_items; ++j) {
    for (Index i = 0; i < d; ++i) s[j] += tower[i] * p.item_emb.at(j, i);
  }
  return s;
}

RatingVector full_ratings(Index m, std::mt19937_64& rng, bool implicit) {
  RatingVector y(m);
  std::uniform_int_distribution<int> r(1, 5);
  for (Index j = 0; j < m; ++j) y.set(j, implicit ? 1.0 : r(rng));
  return y;
}

}  // namespace

TEST_CASE("explicit prediction with zero parameters equals the output bias") {
  RecParams p = RecParams::init(tiny(Setting::explicit_feedback), 1);
  for (auto& t : p.all()) t.mutable_value().setZero();
  p.b2.mutable_value()(0, 0) = 0.7;
  for (Index j = 0; j < 5; ++j) {
    CHECK(predict_explicit(LocalParams::from_global(p), j) == 0.7);
  }
}

TEST_CASE("items with identical embeddings get identical predictions") {
  for (Setting s : {Setting::explicit_feedback, Setting::implicit_feedback}) {
    RecParams p = random_params(tiny(s), 3);
    p.item_emb.mutable_value().row(3) = p.item_emb.value().row(1);
    LocalParams theta = LocalParams::from_global(p);
    if (s == Setting::explicit_feedback) {
      CHECK(predict_explicit(theta, 1) == predict_explicit(theta, 3));
    } else {
      Tensor sc = predict_implicit(theta);
      CHECK(sc.at(0, 1) == sc.at(0, 3));
    }
  }
}

TEST_CASE("tiny models match a straight-line forward oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RecParams pe = random_params(tiny(Setting::explicit_feedback), seed);
    for (Index j = 0; j < 5; ++j) {
      CHECK(std::abs(predict_explicit(LocalParams::from_global(pe), j) - oracle_explicit(pe, j)) <=
            1e-12);
    }
    RecParams pi = random_params(tiny(Setting::implicit_feedback), seed);
    Tensor sc = predict_implicit(LocalParams::from_global(pi));
    std::vector<double> want = oracle_implicit(pi);
    for (Index j = 0; j < 5; ++j) CHECK(std::abs(sc.at(0, j) - want[j]) <= 1e-12);
  }
}

TEST_CASE("out-of-range items are rejected") {
  RecParams p = RecParams::init(tiny(Setting::explicit_feedback), 1);
  CHECK_THROWS_AS(predict_explicit(LocalParams::from_global(p), 5), InvalidArgument);
  CHECK_THROWS_AS(predict_explicit(LocalParams::from_global(p), -1), InvalidArgument);
}

TEST_CASE("implicit softmax is invariant to a constant score shift") {
  RecParams p = random_params(tiny(Setting::implicit_feedback), 5);
  Tensor sc = predict_implicit(LocalParams::from_global(p));
  Matrix a = ad::softmax(sc).value();
  Matrix b = ad::softmax(ad::add_scalar(sc, 123.0)).value();
  CHECK(testing::max_rel_err(a, b, 1e-12) <= 1e-12);
}

TEST_CASE("pointwise losses on analytic cases") {
  CHECK(pointwise_loss(2.0, Tensor::scalar(2.0), LossKind::mse).item() == 0.0);
  CHECK(pointwise_loss(1.0, Tensor::scalar(0.0), LossKind::bce).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(pointwise_loss(2.0, Tensor::row({0.3, 0.3, 0.3, 0.3}), LossKind::cce).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK_THROWS_AS(pointwise_loss(4.0, Tensor::row({0, 0, 0, 0}), LossKind::cce), InvalidArgument);
  CHECK_THROWS_AS(pointwise_loss(1.5, Tensor::row({0, 0, 0, 0}), LossKind::cce), InvalidArgument);
  CHECK_THROWS_AS(pointwise_loss(0.5, Tensor::scalar(0.0), LossKind::bce), InvalidArgument);
  // Large logits stay finite.
  CHECK(pointwise_loss(0.0, Tensor::scalar(800.0), LossKind::bce).item() ==
        doctest::Approx(800.0));
}

TEST_CASE("sketch loss reductions") {
  std::mt19937_64 rng(11);
  for (Setting s : {Setting::explicit_feedback, Setting::implicit_feedback}) {
    const bool implicit = s == Setting::implicit_feedback;
    RecParams p = random_params(tiny(s), 7);
    RatingVector y = full_ratings(5, rng, implicit);
    LocalParams theta = LocalParams::from_global(p);
    CHECK(sketch_loss(Tensor::zeros(1, 5), y, theta).item() == 0.0);
    for (Index j = 0; j < 5; ++j) {
      Matrix z = Matrix::Zero(1, 5);
      z(0, j) = 1;
      const double got = sketch_loss(Tensor(z), y, theta).item();
      const double want =
          implicit ? pointwise_loss(double(j), predict_implicit(theta), LossKind::cce).item()
                   : pointwise_loss(y.values[j], Tensor::scalar(predict_explicit(theta, j)),
                                    LossKind::mse)
                         .item();
      CHECK(std::abs(got - want) <= 1e-12);
    }
    // Linearity in z.
    Matrix z = testing::random_matrix(1, 5, rng, 0.0, 1.0);
    const double once = sketch_loss(Tensor(z), y, theta).item();
    const double twice = sketch_loss(Tensor(Matrix(2 * z)), y, theta).item();
    CHECK(testing::rel_err(twice, 2 * once) <= 1e-14);
  }
}

TEST_CASE("sketch loss rejects weight outside the interaction mask") {
  RecParams p = RecParams::init(tiny(Setting::explicit_feedback), 1);
  RatingVector y(5);
  y.set(0, 4.0);
  y.set(2, 3.0);
  Matrix z = Matrix::Zero(1, 5);
  z(0, 0) = 1;
  CHECK_NOTHROW(sketch_loss(Tensor(z), y, LocalParams::from_global(p)));
  z(0, 1) = 1;
  CHECK_THROWS_AS(sketch_loss(Tensor(z), y, LocalParams::from_global(p)), InvalidArgument);
  z(0, 1) = -1;
  CHECK_THROWS_AS(sketch_loss(Tensor(z), y, LocalParams::from_global(p)), InvalidArgument);
}

TEST_CASE("d sketch_loss / d z_j equals the pointwise loss, by finite differences") {
  std::mt19937_64 rng(21);
  for (Setting s : {Setting::explicit_feedback, Setting::implicit_feedback}) {
    RecParams p = random_params(tiny(s), 9);
    RatingVector y = full_ratings(5, rng, s == Setting::implicit_feedback);
    LocalParams theta = LocalParams::from_global(p);
    Matrix z0 = testing::random_matrix(1, 5, rng, 0.2, 1.0);
    Tensor z(z0, true);
    Tensor loss = sketch_loss(z, y, theta);
    const Tensor zs[] = {z};
    Matrix g = ad::grad(loss, zs)[0].value();
    Matrix fd = testing::central_diff(
        [&](const Matrix& zz) { return sketch_loss(Tensor(zz), y, theta).item(); }, z0, 1e-4);
    for (Index j = 0; j < 5; ++j) {
      Matrix one = Matrix::Zero(1, 5);
      one(0, j) = 1;
      const double pl = sketch_loss(Tensor(one), y, theta).item();
      CHECK(testing::rel_err(g(0, j), pl) <= 1e-12);
      CHECK(testing::rel_err(fd(0, j), pl) <= 1e-6);
    }
  }
}

TEST_CASE("user gradient of the sketch loss is the weighted sum of per-item gradients") {
  std::mt19937_64 rng(31);
  for (Setting s : {Setting::explicit_feedback, Setting::implicit_feedback}) {
    RecParams p = random_params(tiny(s), 13);
    RatingVector y = full_ratings(5, rng, s == Setting::implicit_feedback);
    LocalParams theta = LocalParams::from_global(p);
    Matrix z = testing::random_matrix(1, 5, rng, 0.0, 2.0);
    const Tensor us[] = {p.user};
    Matrix total = ad::grad(sketch_loss(Tensor(z), y, theta), us)[0].value();
    Matrix sum = Matrix::Zero(1, 3);
    for (Index j = 0; j < 5; ++j) {
      Matrix one = Matrix::Zero(1, 5);
      one(0, j) = 1;
      sum += z(0, j) * ad::grad(sketch_loss(Tensor(one), y, theta), us)[0].value();
    }
    CHECK((total - sum).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("block losses agree with item losses") {
  std::mt19937_64 rng(41);
  for (Setting s : {Setting::explicit_feedback, Setting::implicit_feedback}) {
    RecParams p = random_params(tiny(s), 17);
    const std::vector<Index> items{4, 0, 2};
    const std::vector<double> ratings{1.0, 5.0, 3.0};
    ItemBlock block = prepare_block(p, items, ratings);
    Matrix l = block_losses(p, block, p.user).value();
    for (std::size_t i = 0; i < items.size(); ++i) {
      CHECK(std::abs(l(i, 0) - item_loss(p, p.user, items[i], ratings[i]).item()) <= 1e-12);
    }
  }
}

TEST_CASE("initialization ranges") {
  ModelDims dims;
  dims.num_items = 50;
  RecParams p = RecParams::init(dims, 3);
  CHECK(p.item_emb.value().cwiseAbs().maxCoeff() <= 0.1);
  CHECK(p.user.value().cwiseAbs().maxCoeff() <= 0.1);
  CHECK(p.w1_user.value().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(64.0));
  CHECK(p.w2.value().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(64.0));
  CHECK(p.b1.value().isZero());
  CHECK(p.b2.value().isZero());
  RecParams q = RecParams::init(dims, 3);
  CHECK(p.item_emb.value() == q.item_emb.value());
}

TEST_CASE("checkpoint round trip is exact") {
  const auto path = std::filesystem::temp_directory_path() / "dips_rec_roundtrip.txt";
  for (Setting s : {Setting::explicit_feedback, Setting::implicit_feedback}) {
    RecParams p = random_params(tiny(s), 23);
    write_params(path.string(), p.to_param_file());
    RecParams q = RecParams::from_param_file(read_params(path.string()));
    auto a = p.named();
    auto b = q.named();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(a[i].second.value() == b[i].second.value());
    }
    CHECK(q.dims.setting == s);
  }
  std::filesystem::remove(path);
}

TEST_CASE("malformed parameter files are rejected with a location") {
  const auto path = std::filesystem::temp_directory_path() / "dips_bad_params.txt";
  {
    std::ofstream out(path);
    out << "format dips-params\nversion 1\narray w 2 2\n1 2 3\nend\n";
  }
  try {
    read_params(path.string());
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":4") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "format dips-params\nversion 99\nend\n";
  }
  CHECK_THROWS_AS(read_params(path.string()), DataError);
  std::filesystem::remove(path);
}
