#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "debgcd/data.hpp"
#include "debgcd/errors.hpp"

using namespace debgcd;
using namespace debgcd::data;

namespace {

EmbeddingDataset tiny() {
  EmbeddingDataset ds;
  ds.features = Matrix(4, 2);
  ds.features << 1, 0, 0, 1, 0.5, 0.75, -1, 0;
  ds.labels = {0, kUnlabelled, kUnlabelled, 1};
  ds.ground_truth = std::vector<std::int32_t>{0, 2, 0, 1};
  ds.num_old = 2;
  ds.num_classes = 3;
  return ds;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

}  // namespace

TEST_CASE("codec round trip is exact") {
  const auto ds = tiny();
  const auto back = decode_dataset(encode_features(ds.features), encode_labels(ds));
  CHECK(back.features == ds.features);
  CHECK(back.labels == ds.labels);
  CHECK(*back.ground_truth == *ds.ground_truth);
  CHECK(back.num_old == 2);
  CHECK(back.num_classes == 3);
}

TEST_CASE("feature file layout") {
  const auto bytes = encode_features(tiny().features);
  REQUIRE(bytes.size() == 4 + 4 + 4 + 4 + 4 * 2 * 4);
  CHECK(std::memcmp(bytes.data(), "DGCE", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 4);
  CHECK(bytes[12] == 2);
  float first;
  std::memcpy(&first, bytes.data() + 16, 4);
  CHECK(first == 1.0f);
}

TEST_CASE("format errors") {
  const auto ds = tiny();
  auto f = encode_features(ds.features);
  auto l = encode_labels(ds);

  SUBCASE("bad magic") {
    f[0] = 'X';
    CHECK_THROWS_AS(decode_dataset(f, l), FormatError);
  }
  SUBCASE("bad version") {
    put_u32(l, 4, 2);
    CHECK_THROWS_AS(decode_dataset(f, l), FormatError);
  }
  SUBCASE("truncated") {
    f.pop_back();
    CHECK_THROWS_AS(decode_dataset(f, l), FormatError);
  }
  SUBCASE("trailing bytes") {
    l.push_back(0);
    CHECK_THROWS_AS(decode_dataset(f, l), FormatError);
  }
  SUBCASE("mask byte out of range") {
    l.back() = 2;
    CHECK_THROWS_AS(decode_dataset(f, l), FormatError);
  }
  SUBCASE("non-finite feature") {
    const float nan = std::nanf("");
    std::memcpy(f.data() + 16, &nan, 4);
    CHECK_THROWS_AS(decode_dataset(f, l), DataError);
  }
  SUBCASE("row count mismatch") {
    auto other = ds;
    other.features.conservativeResize(3, 2);
    CHECK_THROWS_AS(decode_dataset(encode_features(other.features), l), ConsistencyError);
  }
  SUBCASE("class id out of range") {
    put_u32(l, 24, 3);
    CHECK_THROWS_AS(decode_dataset(f, l), ConsistencyError);
  }
  SUBCASE("labelled row of a New class") {
    put_u32(l, 20, 2);
    CHECK_THROWS_AS(decode_dataset(f, l), ConsistencyError);
  }
}

TEST_CASE("file round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "debgcd_data_test";
  std::filesystem::create_directories(dir);
  const auto ds = tiny();
  save_embeddings(ds, dir / "t.dgce", dir / "t.dgcl");
  const auto back = load_embeddings(dir / "t.dgce", dir / "t.dgcl");
  CHECK(back.features == ds.features);
  CHECK_THROWS_AS(load_embeddings(dir / "missing.dgce", dir / "t.dgcl"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training view hides ground truth") {
  const auto ds = tiny();
  const auto view = ds.training_view();
  CHECK(view.labelled_rows() == std::vector<std::size_t>{0, 3});
  CHECK(view.unlabelled_rows() == std::vector<std::size_t>{1, 2});
  CHECK(view.labels()[1] == kUnlabelled);
}

TEST_CASE("synthetic generator") {
  SynthSpec spec;
  spec.seed = 4;
  const auto ds = synth_generate(spec);
  CHECK(ds.size() == 2000);
  CHECK(ds.dim() == 64);
  CHECK(ds.num_classes == 10);
  CHECK(ds.num_old == 5);
  CHECK(ds.labelled_count() == 500);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    CHECK(std::abs(ds.features.row(r).norm() - 1.0) < 1e-6);
    if (ds.labels[i] != kUnlabelled) CHECK(ds.labels[i] < 5);
  }
  const auto again = synth_generate(spec);
  CHECK(again.features == ds.features);
  CHECK(again.labels == ds.labels);

  SynthSpec all_old;
  all_old.num_classes = 2;
  all_old.num_old = 2;
  const auto degenerate = synth_generate(all_old);
  CHECK(degenerate.labelled_count() == 200);
  CHECK_THROWS_AS(synth_generate(SynthSpec{3, 4, 10, 8, 0.1, 0}), ConfigError);
}

TEST_CASE("synthetic features survive float32 storage") {
  SynthSpec spec;
  spec.per_class = 10;
  const auto ds = synth_generate(spec);
  const auto back = decode_dataset(encode_features(ds.features), encode_labels(ds));
  CHECK(back.features == ds.features);
}

TEST_CASE("views") {
  Rng rng(3);
  RowVector h = RowVector::Zero(16);
  h(0) = 1.0;
  const auto [a, b] = make_views(h, AugConfig{}, rng);
  CHECK(std::abs(a.norm() - 1.0) < 1e-12);
  CHECK(std::abs(b.norm() - 1.0) < 1e-12);
  CHECK(a != b);
  const auto [c, d] = make_views(h, AugConfig{0.0, 0.0, true}, rng);
  CHECK(c == h);
  CHECK(d == h);
  CHECK_THROWS_AS((AugConfig{-1.0, 0.0, true}.validate()), ConfigError);
  CHECK_THROWS_AS((AugConfig{0.0, 1.0, true}.validate()), ConfigError);
}

TEST_CASE("batch sampling") {
  SynthSpec spec;
  spec.per_class = 20;
  const auto ds = synth_generate(spec);
  const auto view = ds.training_view();
  Rng rng(8);
  const auto batch = sample_batch(view, 32, 0.5, AugConfig{}, rng);
  CHECK(batch.size() == 32);
  CHECK(batch.labelled_count() == 16);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const bool lab = batch.labelled_mask[i] != 0;
    CHECK(lab == (i < 16));
    CHECK((batch.labels[i] != kUnlabelled) == lab);
    CHECK(batch.labels[i] == view.labels()[batch.indices[i]]);
  }
  std::set<std::size_t> seen(batch.indices.begin(), batch.indices.end());
  CHECK(seen.size() == 32);

  const auto big = sample_batch(view, 300, 0.5, AugConfig{}, rng);
  CHECK(big.labelled_count() == 150);

  Rng r1(5), r2(5);
  const auto x = sample_batch(view, 16, 0.25, AugConfig{}, r1);
  const auto y = sample_batch(view, 16, 0.25, AugConfig{}, r2);
  CHECK(x.indices == y.indices);
  CHECK(x.view1 == y.view1);
  CHECK(x.labelled_count() == 4);
}
