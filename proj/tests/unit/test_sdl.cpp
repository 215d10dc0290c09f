#include <cmath>

#include "doctest.h"
#include "debgcd/errors.hpp"
#include "debgcd/sdl.hpp"
#include "oracles.hpp"

using namespace debgcd;
using namespace debgcd::compute;
using namespace debgcd::sdl;

namespace {

OvaVars from_plus(Tape& t, const Matrix& o_plus) {
  return {t.constant(o_plus), t.constant((1.0 - o_plus.array()).matrix())};
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

}  // namespace

TEST_CASE("sdl_forward") {
  Tape t;
  SUBCASE("equal banks give one half") {
    Rng rng(1);
    const Matrix w = random_normal(rng, 3, 4, 1.0);
    const Matrix f = l2_normalize_rows(random_normal(rng, 2, 4, 1.0));
    auto o = sdl_forward(t.constant(f), t.constant(w), t.constant(w), 0.1);
    CHECK((o.pos.value().array() - 0.5).abs().maxCoeff() < 1e-15);
    CHECK((o.neg.value().array() - 0.5).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("aligned positive, orthogonal negative") {
    auto o = sdl_forward(t.constant(row({1, 0})), t.constant(row({3, 0})), t.constant(row({0, 2})), 0.1);
    CHECK(std::abs(o.pos.value()(0, 0) - oracle::sigmoid(10.0)) < 1e-12);
    CHECK(std::abs(o.pos.value()(0, 0) - 0.9999546) < 1e-7);
  }
  SUBCASE("complement") {
    Rng rng(2);
    auto o = sdl_forward(t.constant(l2_normalize_rows(random_normal(rng, 5, 3, 1.0))),
                         t.constant(random_normal(rng, 4, 3, 1.0)), t.constant(random_normal(rng, 4, 3, 1.0)),
                         0.1);
    CHECK(((o.pos.value() + o.neg.value()).array() - 1.0).abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("sdl_sup_loss") {
  Tape t;
  SUBCASE("two classifiers") {
    const std::vector<std::int32_t> y{0};
    const auto term = sdl_sup_loss(from_plus(t, row({0.8, 0.3})), y);
    CHECK(std::abs(term.value.item() - (-std::log(0.8) - std::log(0.7))) < 1e-12);
    CHECK(std::abs(term.value.item() - 0.57982) < 1e-5);
  }
  SUBCASE("hardest negative is the largest other o+") {
    const std::vector<std::int32_t> y{1};
    const Matrix op = row({0.6, 0.9, 0.2});
    CHECK(hardest_negatives(op, y)[0] == 0);
    const auto term = sdl_sup_loss(from_plus(t, op), y);
    CHECK(std::abs(term.value.item() - (-std::log(0.9) - std::log(0.4))) < 1e-12);
  }
  SUBCASE("perfect detector") {
    const std::vector<std::int32_t> y{2};
    CHECK(sdl_sup_loss(from_plus(t, row({0.0, 0.0, 1.0})), y).value.item() < 1e-15);
  }
  SUBCASE("ties pick the lowest index") {
    const std::vector<std::int32_t> y{2};
    CHECK(hardest_negatives(row({0.4, 0.4, 0.1}), y)[0] == 0);
  }
  SUBCASE("single classifier is rejected") {
    const std::vector<std::int32_t> y{0};
    CHECK_THROWS_AS(sdl_sup_loss(from_plus(t, row({0.5})), y), ConfigError);
  }
}

TEST_CASE("sdl_unsup_loss") {
  Tape t;
  CHECK(std::abs(sdl_unsup_loss(from_plus(t, row({0.9}))).value.item() -
                 -(0.9 * std::log(0.9) + 0.1 * std::log(0.1))) < 1e-12);
  CHECK(std::abs(sdl_unsup_loss(from_plus(t, row({0.9}))).value.item() - 0.32508) < 1e-5);
  CHECK(std::abs(sdl_unsup_loss(from_plus(t, Matrix::Constant(2, 4, 0.5))).value.item() - 4 * std::log(2.0)) <
        1e-12);
  CHECK(sdl_unsup_loss(from_plus(t, row({0.0, 1.0}))).value.item() < 1e-9);
}

TEST_CASE("ood score and certainty") {
  Matrix op(3, 3);
  op << 0.9, 0.1, 0.2,  //
      0.1, 0.2, 0.15,   //
      0.5, 0.5, 0.1;
  const Matrix om = (1.0 - op.array()).matrix();
  const auto s = ood_score(op, om);
  CHECK(s.top_class == std::vector<std::size_t>{0, 1, 0});
  CHECK(std::abs(s.score[0] - 0.1) < 1e-15);
  CHECK(std::abs(s.score[1] - 0.8) < 1e-15);
  const auto out = summarize(op, om);
  CHECK(std::abs(out.certainty[0] - 0.8) < 1e-12);
  CHECK(std::abs(out.certainty[1] - 0.6) < 1e-12);
  CHECK(out.certainty[2] == 0.0);
}
