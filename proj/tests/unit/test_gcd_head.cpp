#include <cmath>
#include <numbers>

#include "doctest.h"
#include "debgcd/errors.hpp"
#include "debgcd/gcd_head.hpp"
#include "oracles.hpp"

using namespace debgcd;
using namespace debgcd::compute;
using namespace debgcd::gcd;

namespace {

Matrix rows2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

double sup_con_at(double theta, double temperature) {
  Matrix z(3, 2);
  z << 1, 0, std::cos(theta), std::sin(theta), -1, 0;
  Tape t;
  const std::vector<std::int32_t> labels{0, 0, 1};
  return sup_con(t.constant(z), labels, temperature).item();
}

}  // namespace

TEST_CASE("gcd_forward") {
  Tape t;
  SUBCASE("opposite prototypes") {
    Matrix c(2, 3);
    c << 2, 0, 0, -5, 0, 0;
    Matrix h(1, 3);
    h << 1, 0, 0;
    Var p = gcd_forward(t.constant(h), t.constant(c), 0.1);
    const double ref = oracle::sigmoid(2.0 / 0.1);
    CHECK(std::abs(p.value()(0, 0) - ref) < 1e-12);
    CHECK(std::abs((1.0 - p.value()(0, 0)) - 2.06e-9) < 1e-11);
  }
  SUBCASE("equidistant row is uniform") {
    Matrix c = Matrix::Identity(3, 3);
    Matrix h = Matrix::Constant(1, 3, 1.0 / std::sqrt(3.0));
    Var p = gcd_forward(t.constant(h), t.constant(c), 0.1);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(p.value()(0, k) - 1.0 / 3.0) < 1e-15);
  }
}

TEST_CASE("cls_unsup_loss") {
  Tape t;
  SUBCASE("uniform students") {
    Var p = t.constant(Matrix::Constant(3, 4, 0.25));
    const Matrix q = softmax_rows(Matrix::Random(3, 4), 0.1);
    CHECK(std::abs(cls_unsup_loss(p, p, q, q, 0.0).item() - std::log(4.0)) < 1e-12);
  }
  SUBCASE("matched near one-hot") {
    Matrix p(1, 2);
    p << 1.0 - 1e-9, 1e-9;
    Matrix q(1, 2);
    q << 1.0, 0.0;
    Var s = t.constant(p);
    CHECK(cls_unsup_loss(s, s, q, q, 0.0).item() < 1e-8);
  }
  SUBCASE("two-sample hand case") {
    const Matrix s1 = rows2(0.8, 0.2, 0.3, 0.7);
    const Matrix s2 = rows2(0.6, 0.4, 0.1, 0.9);
    const Matrix q1 = rows2(0.9, 0.1, 0.2, 0.8);
    const Matrix q2 = rows2(0.7, 0.3, 0.05, 0.95);
    const double xi = 2.0;
    double ce21 = 0, ce12 = 0;
    for (int i = 0; i < 2; ++i) {
      for (int k = 0; k < 2; ++k) {
        ce21 -= q2(i, k) * std::log(s1(i, k));
        ce12 -= q1(i, k) * std::log(s2(i, k));
      }
    }
    const double distill = 0.5 * (ce21 / 2 + ce12 / 2);
    const double m0 = (0.8 + 0.3 + 0.6 + 0.1) / 4, m1 = 1 - m0;
    const double h = -(m0 * std::log(m0) + m1 * std::log(m1));
    const double expected = distill - xi * h;
    CHECK(std::abs(cls_unsup_loss(t.constant(s1), t.constant(s2), q1, q2, xi).item() - expected) < 1e-10);

    const double one_sided = ce21 / 2 - xi * h;
    CHECK(std::abs(cls_unsup_loss(t.constant(s1), t.constant(s2), q1, q2, xi, false).item() - one_sided) <
          1e-10);
  }
}

TEST_CASE("cls_sup_loss") {
  Tape t;
  Matrix p(1, 2);
  p << 0.7, 0.3;
  const std::vector<std::int32_t> y{0};
  const auto term = cls_sup_loss(t.constant(p), t.constant(p), y);
  CHECK_FALSE(term.empty);
  CHECK(std::abs(term.value.item() - (-std::log(0.7))) < 1e-12);
  CHECK(std::abs(term.value.item() - 0.35667) < 1e-5);

  Var u = t.constant(Matrix::Constant(2, 5, 0.2));
  const std::vector<std::int32_t> y2{1, 4};
  CHECK(std::abs(cls_sup_loss(u, u, y2).value.item() - std::log(5.0)) < 1e-12);

  Var one_hot = t.constant(Matrix::Identity(2, 2));
  const std::vector<std::int32_t> y3{0, 1};
  CHECK(cls_sup_loss(one_hot, one_hot, y3).value.item() < 1e-15);

  const auto empty = cls_sup_loss(t.constant(Matrix(0, 2)), t.constant(Matrix(0, 2)), {});
  CHECK(empty.empty);
  CHECK(empty.value.item() == 0.0);
}

TEST_CASE("info_nce") {
  Tape t;
  Matrix z(2, 2);
  z << 1, 0, 0, 1;
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(std::abs(info_nce(t.constant(z), t.constant(z), 1.0).item() - expected) < 1e-12);
  CHECK(info_nce(t.constant(Matrix::Ones(1, 2)), t.constant(Matrix::Ones(1, 2)), 0.07).item() == 0.0);
}

TEST_CASE("sup_con") {
  const double tau = 0.07;
  SUBCASE("scalar value at the colinear arrangement") {
    const double a = std::exp(1.0 / tau), b = std::exp(-1.0 / tau);
    const double expected = 2.0 * -std::log(a / (a + b)) / 3.0;
    CHECK(std::abs(sup_con_at(0.0, tau) - expected) < 1e-12);
  }
  SUBCASE("colinear positives minimise the loss over a grid of angles") {
    const int steps = 720;
    double best = std::numeric_limits<double>::infinity();
    int best_i = -1;
    for (int i = 0; i < steps; ++i) {
      const double v = sup_con_at(2.0 * std::numbers::pi * i / steps, 0.5);
      if (v < best) {
        best = v;
        best_i = i;
      }
    }
    CHECK(best_i == 0);
  }
  SUBCASE("anchor without positives contributes zero") {
    Tape t;
    const std::vector<std::int32_t> labels{0, 1};
    CHECK(sup_con(t.constant(Matrix::Identity(2, 2)), labels, tau).item() == 0.0);
  }
}

TEST_CASE("rep_loss mixes the two terms") {
  Tape t;
  Rng rng(4);
  const Matrix z1 = l2_normalize_rows(random_normal(rng, 4, 3, 1.0));
  const Matrix z2 = l2_normalize_rows(random_normal(rng, 4, 3, 1.0));
  const std::vector<std::uint8_t> mask{1, 1, 0, 0};
  const std::vector<std::int32_t> labels{0, 0, -1, -1};
  Var a = t.constant(z1), b = t.constant(z2);
  const double unsup = info_nce(a, b, 0.07).item();
  Matrix pooled(4, 3);
  pooled << z1.topRows(2), z2.topRows(2);
  const std::vector<std::int32_t> pl{0, 0, 0, 0};
  const double sup = sup_con(t.constant(pooled), pl, 0.07).item();
  CHECK(std::abs(rep_loss(a, b, mask, labels, 0.07, 0.07, 0.35).item() - (0.65 * unsup + 0.35 * sup)) < 1e-12);

  const std::vector<std::uint8_t> none{0, 0, 0, 0};
  CHECK(std::abs(rep_loss(a, b, none, labels, 0.07, 0.07, 0.35).item() - 0.65 * unsup) < 1e-12);
  CHECK_THROWS_AS(rep_loss(a, b, std::vector<std::uint8_t>{1}, labels, 0.07, 0.07, 0.35), DimensionError);
}

TEST_CASE("gcd_loss") {
  Tape t;
  Var cu = t.constant(Matrix::Constant(1, 1, 2.0));
  Var cs = t.constant(Matrix::Constant(1, 1, 3.0));
  Var rep = t.constant(Matrix::Constant(1, 1, 0.5));
  CHECK(std::abs(gcd_loss(cu, cs, rep, 0.35).item() - (0.65 * 2.0 + 0.35 * 3.0 + 0.5)) < 1e-15);
}
