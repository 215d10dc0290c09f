#include <cmath>

#include "doctest.h"
#include "debgcd/errors.hpp"
#include "debgcd/model.hpp"

using namespace debgcd;
using namespace debgcd::model;
using compute::Matrix;
using compute::Tape;
using compute::Var;

namespace {

Config small_config() {
  Config c;
  c.proj_hidden = 8;
  c.rep_dim = 6;
  c.sdl_dim = 5;
  return c;
}

}  // namespace

TEST_CASE("parameters and shapes") {
  Model m({12, 4, 2}, small_config(), 1);
  CHECK(m.params().at(kGcdPrototypes).value.rows() == 4);
  CHECK(m.params().at(kGcdPrototypes).value.cols() == 12);
  CHECK(m.params().at(kAdlPrototypes).value.rows() == 4);
  CHECK(m.params().at(kOvaPositive).value.rows() == 2);
  CHECK(m.params().at(kOvaNegative).value.cols() == 5);
  CHECK(m.rep_spec().layer_count() == 3);
  CHECK(m.sdl_spec().layer_count() == 5);

  Tape t;
  compute::Rng rng(2);
  Var raw = t.constant(compute::l2_normalize_rows(compute::random_normal(rng, 3, 12, 1.0)));
  Var a = m.adapter(t, raw);
  CHECK((a.value() - raw.value()).cwiseAbs().maxCoeff() < 1e-15);
  Var h = m.forward_backbone(t, raw);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(std::abs(h.value().row(i).norm() - 1.0) < 1e-12);
  Var cos = m.gcd_cosines(t, h);
  CHECK(cos.value().cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
  Var z = m.rep_projection(t, a);
  CHECK(z.cols() == 6);
  CHECK(std::abs(z.value().row(0).norm() - 1.0) < 1e-12);
  Var f = m.sdl_embedding(t, a);
  CHECK(f.cols() == 5);
  CHECK_THROWS_AS(m.adapter(t, t.constant(Matrix::Ones(1, 11))), DimensionError);
}

TEST_CASE("invalid partitions") {
  CHECK_THROWS_AS(Model({4, 1, 1}, small_config(), 0), ConfigError);
  CHECK_THROWS_AS(Model({4, 3, 0}, small_config(), 0), ConfigError);
  CHECK_THROWS_AS(Model({4, 3, 4}, small_config(), 0), ConfigError);
}

TEST_CASE("seeded initialisation is reproducible") {
  Model a({8, 3, 2}, small_config(), 5), b({8, 3, 2}, small_config(), 5), c({8, 3, 2}, small_config(), 6);
  CHECK(encode_checkpoint(a, small_config()) == encode_checkpoint(b, small_config()));
  CHECK(encode_checkpoint(a, small_config()) != encode_checkpoint(c, small_config()));
}

TEST_CASE("checkpoint round trip") {
  Config cfg = small_config();
  cfg.seed = 99;
  Model m({8, 3, 2}, cfg, 5);
  m.params().at(kGcdPrototypes).value(0, 0) = 0.123456789;
  const auto bytes = encode_checkpoint(m, cfg);
  auto [cfg2, m2] = decode_checkpoint(bytes);
  CHECK(cfg2.to_text() == cfg.to_text());
  CHECK(m2.dims().dim == 8);
  CHECK(m2.dims().num_classes == 3);
  CHECK(m2.dims().num_old == 2);
  CHECK(encode_checkpoint(m2, cfg2) == bytes);

  auto broken = bytes;
  broken[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(broken), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
}
