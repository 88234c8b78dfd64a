#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "../support/oracles.hpp"
#include "../support/toy_pipeline.hpp"
#include "ris/error.hpp"
#include "ris/retrieval.hpp"
#include "ris/toy_generator.hpp"

using namespace ris;
using ris::testing::region_name;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::InvalidArgument;
}

double naive_distance(std::span<const float> u, std::span<const float> v) {
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += double(u[i]) * v[i];
    uu += double(u[i]) * u[i];
    vv += double(v[i]) * v[i];
  }
  if (std::sqrt(uu) < 1e-12 || std::sqrt(vv) < 1e-12) return 2.0;
  return 1.0 - uv / (std::sqrt(uu) * std::sqrt(vv));
}

RetrievalIndex random_index(std::size_t n, std::size_t dims, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("i" + std::to_string(i));
  RetrievalIndex index(ids, {"f"}, dims);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  std::vector<float> v(dims);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& x : v) x = g(rng);
    index.set_row(0, i, v);
  }
  return index;
}

}  // namespace

TEST_CASE("normalization statistics") {
  const auto layout = LayerLayout::from_sizes({{"L", 2, 4, 0}}, 0);
  std::vector<StyleVector> styles{{"a", {0, 2}}, {"b", {2, 4}}};
  const auto stats = compute_norm_stats(styles, layout);
  CHECK(stats.mean[0] == doctest::Approx(2.0));
  CHECK(stats.stddev[0] == doctest::Approx(std::sqrt(2.0)));

  std::vector<StyleVector> unit{{"a", {-1, 1}}, {"b", {1, -1}}};
  const auto us = compute_norm_stats(unit, layout);
  CHECK(us.mean[0] == 0.0);
  CHECK(us.stddev[0] == 1.0);
  CHECK(normalize(StyleVector{"x", {0.25f, -3}}, us, layout).values == std::vector<float>{0.25f, -3});

  std::vector<StyleVector> flat{{"a", {1, 1}}, {"b", {1, 1}}};
  CHECK(code_of([&] { compute_norm_stats(flat, layout); }) == Errc::DegenerateLayer);

  NormalizationStats s22{{"L"}, {2.0}, {2.0}};
  CHECK(normalize(StyleVector{"x", {4, 2}}, s22, layout).values == std::vector<float>{1, 0});
  const auto other = LayerLayout::from_sizes({{"M", 2, 4, 0}}, 0);
  CHECK(code_of([&] { normalize(StyleVector{"x", {4, 2}}, s22, other); }) == Errc::LayoutMismatch);

  const auto round = NormalizationStats::from_json(stats.to_json());
  CHECK(round.mean == stats.mean);
  CHECK(round.stddev == stats.stddev);
}

TEST_CASE("normalize is affine") {
  const auto layout = LayerLayout::from_sizes({{"a", 3, 4, 0}, {"b", 2, 8, 0}}, 1);
  NormalizationStats stats{{"a", "b"}, {0.5, -1.0}, {2.0, 0.25}};
  const StyleVector s1{"1", {1, 2, 3, 4, 5}}, s2{"2", {-2, 0, 7, 1, 1}};
  StyleVector mix{"m", std::vector<float>(5)};
  for (std::size_t c = 0; c < 5; ++c) mix.values[c] = 0.25f * s1.values[c] + 0.75f * s2.values[c];
  const auto n1 = normalize(s1, stats, layout), n2 = normalize(s2, stats, layout), nm = normalize(mix, stats, layout);
  for (std::size_t c = 0; c < 5; ++c) {
    CHECK(nm.values[c] == doctest::Approx(0.25 * n1.values[c] + 0.75 * n2.values[c]).epsilon(1e-6));
  }
}

TEST_CASE("embed is the elementwise product") {
  const StyleVector s{"x", {2, -1, 3}};
  CHECK(embed(s, MaskRow{"f", {1, 0, 0.5}}).values == std::vector<float>{2, 0, 1.5});
  CHECK(embed(s, MaskRow{"f", {1, 1, 1}}).values == s.values);
  for (float v : embed(s, MaskRow{"f", {0, 0, 0}}).values) CHECK(v == 0.0f);
  CHECK(code_of([&] { embed(s, MaskRow{"f", {1, 1}}); }) == Errc::LengthMismatch);
}

TEST_CASE("cosine distance cases") {
  const std::vector<float> u{1, 2, 3}, neg{-1, -2, -3}, e0{1, 0}, e1{0, 1}, z{0, 0, 0};
  CHECK(cosine_distance(u, u) == doctest::Approx(0.0));
  CHECK(cosine_distance(e0, e1) == doctest::Approx(1.0));
  CHECK(cosine_distance(u, neg) == doctest::Approx(2.0));
  CHECK(cosine_distance(u, z) == 2.0);
  CHECK(code_of([&] { cosine_distance(u, e0); }) == Errc::LengthMismatch);

  std::mt19937_64 rng(2);
  std::normal_distribution<float> g;
  for (int t = 0; t < 100; ++t) {
    std::vector<float> a(7), b(7), a3(7);
    for (std::size_t i = 0; i < 7; ++i) {
      a[i] = g(rng);
      b[i] = g(rng);
      a3[i] = 3.5f * a[i];
    }
    const double d = cosine_distance(a, b);
    CHECK(d >= 0.0);
    CHECK(d <= 2.0);
    CHECK(d == doctest::Approx(cosine_distance(b, a)).epsilon(1e-12));
    CHECK(d == doctest::Approx(cosine_distance(a3, b)).epsilon(1e-6));
    CHECK(d == doctest::Approx(naive_distance(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("query scan matches a naive sort and furthest reverses nearest") {
  const auto index = random_index(300, 24, 5);
  std::mt19937_64 rng(6);
  std::normal_distribution<float> g;
  for (int t = 0; t < 10; ++t) {
    std::vector<float> q(24);
    for (auto& x : q) x = g(rng);
    std::vector<std::pair<double, std::size_t>> naive;
    for (std::size_t i = 0; i < index.size(); ++i) naive.emplace_back(naive_distance(q, index.row(0, i)), i);
    std::ranges::sort(naive);
    const auto hits = query(index, q, "f", 10);
    REQUIRE(hits.size() == 10);
    for (std::size_t r = 0; r < 10; ++r) {
      CHECK(hits[r].row == naive[r].second);
      CHECK(hits[r].distance == doctest::Approx(naive[r].first).epsilon(1e-5));
    }
    const auto all = query(index, q, "f", index.size());
    const auto far = query(index, q, "f", index.size(), Direction::furthest);
    for (std::size_t r = 0; r < all.size(); ++r) CHECK(far[r].row == all[all.size() - 1 - r].row);
    CHECK(query(index, q, "f", 10, Direction::nearest, 4).front().row == hits.front().row);
  }
  const std::vector<float> q(24, 1.0f);
  CHECK(code_of([&] { query(index, q, "f", 0); }) == Errc::BadK);
  CHECK(code_of([&] { query(index, q, "f", 301); }) == Errc::BadK);
  CHECK(code_of([&] { query(index, q, "g", 1); }) == Errc::UnknownFeature);
}

TEST_CASE("rows closer together than float rounding keep their exact order") {
  // a 2000-dim cluster of rows spaced ~1e-7 apart in distance
  const std::size_t dims = 2000, n = 64;
  std::mt19937_64 rng(12);
  std::normal_distribution<float> g;
  std::vector<float> centre(dims);
  for (auto& x : centre) x = g(rng);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("r" + std::to_string(i));
  RetrievalIndex index(ids, {"f"}, dims);
  std::vector<std::vector<float>> rows;
  for (std::size_t i = 0; i < n; ++i) {
    auto v = centre;
    for (auto& x : v) x += 1e-4f * g(rng);
    index.set_row(0, i, v);
    const auto stored = index.row(0, i);
    rows.emplace_back(stored.begin(), stored.end());
  }
  std::vector<float> q = centre;
  for (auto& x : q) x += 1e-3f * g(rng);
  std::vector<std::pair<double, std::size_t>> naive;
  for (std::size_t i = 0; i < n; ++i) naive.emplace_back(naive_distance(q, rows[i]), i);
  std::ranges::sort(naive);
  for (std::size_t k : {1u, 5u, 64u}) {
    const auto hits = query(index, q, "f", k);
    for (std::size_t r = 0; r < k; ++r) CHECK(hits[r].row == naive[r].second);
    const auto far = query(index, q, "f", k, Direction::furthest);
    for (std::size_t r = 0; r < k; ++r) CHECK(far[r].row == naive[n - 1 - r].second);
  }
}

TEST_CASE("ties break by canonical order") {
  RetrievalIndex index({"a", "b", "c"}, {"f"}, 2);
  const std::vector<float> same{1, 1};
  for (std::size_t i = 0; i < 3; ++i) index.set_row(0, i, same);
  const auto near = query(index, same, "f", 3);
  CHECK(near[0].row == 0);
  CHECK(near[1].row == 1);
  CHECK(near[2].row == 2);
  const auto far = query(index, same, "f", 3, Direction::furthest);
  CHECK(far[0].row == 2);
  CHECK(far[2].row == 0);
}

TEST_CASE("near-duplicates rank behind the exact match") {
  // b differs from a by one ulp in one entry; 1 - cos rounds both to 0
  std::vector<float> a(64);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 1.0f + 0.01f * float(i);
  auto b = a;
  b[5] = std::nextafter(b[5], 2.0f);
  RetrievalIndex index({"b", "a"}, {"f"}, a.size());
  index.set_row(0, 0, b);
  index.set_row(0, 1, a);
  const auto self = index.row(0, 1);
  const auto hits = query(index, std::vector<float>(self.begin(), self.end()), "f", 2);
  CHECK(hits[0].row == 1);
  CHECK(hits[0].distance == 0.0);
  CHECK(hits[1].distance > 0.0);
  CHECK(hits[1].distance < 1e-12);
  CHECK(cosine_distance(a, b) > 0.0);
}

TEST_CASE("planted 4-image fixture retrieves the partner image") {
  const auto gen = make_toy(2, {{4, 4}, {8, 4}, {16, 4}}, 7);
  const std::vector<GroupSpec> groups{{{0, 1}, {0}}, {{2, 3}, {0}}};
  const Bundle bundle = make_fixture(gen, 4, groups, 8);
  const auto toy = ris::testing::fit_toy_model(bundle, gen, 0);
  const auto features = ris::testing::region_features(2);
  IndexOptions opt;
  const auto index = build_index(bundle, toy.model, toy.labeling, features, opt);
  CHECK(index.matrix(0).size() == 4 * gen.layout.total_channels());

  for (std::size_t i = 0; i < 4; ++i) {
    for (const auto& f : features) {
      const auto self = query_image(index, bundle.images()[i], f, 1);
      CHECK(self[0].row == i);
      CHECK(self[0].distance <= 1e-6);
    }
  }
  const auto hit = neighbours_excluding_self(index, "img0000", region_name(0), 1);
  CHECK(hit[0].image_id == "img0001");
  CHECK(neighbours_excluding_self(index, "img0002", region_name(0), 1)[0].image_id == "img0003");

  // brute force over the raw embeddings
  const auto e0 = embed_image(index, read_style(bundle, "img0000"), read_activations(bundle, "img0000"), region_name(0));
  double best = 3.0;
  std::size_t best_row = 0;
  for (std::size_t i = 1; i < 4; ++i) {
    const auto ei = embed_image(index, read_style(bundle, bundle.images()[i]),
                                read_activations(bundle, bundle.images()[i]), region_name(0));
    const double d = naive_distance(e0.values, ei.values);
    if (d < best) best = d, best_row = i;
  }
  CHECK(best_row == 1);
}

TEST_CASE("build is deterministic, persists, and reports missing activations") {
  const auto gen = make_toy(2, {{4, 4}, {8, 4}}, 11);
  Bundle bundle = make_fixture(gen, 3, {}, 12);
  const auto toy = ris::testing::fit_toy_model(bundle, gen, 1);
  const auto features = ris::testing::region_features(2);
  IndexOptions opt;
  const auto a = build_index(bundle, toy.model, toy.labeling, features, opt);
  opt.threads = 3;
  const auto b = build_index(bundle, toy.model, toy.labeling, features, opt);
  REQUIRE(a.features().size() == 2);
  for (std::size_t f = 0; f < 2; ++f) {
    CHECK(a.matrix(f).size() == 3 * gen.layout.total_channels());
    CHECK(std::memcmp(a.matrix(f).data(), b.matrix(f).data(), a.matrix(f).size_bytes()) == 0);
  }
  CHECK(a.provenance.contains("cluster_model"));
  CHECK(a.provenance["tau"] == 0.1);
  CHECK(a.provenance["labels"] == toy.labeling.to_json());

  ris::testing::TempDir dir("index");
  save_index(a, dir.path());
  const auto loaded = load_index(dir.path());
  CHECK(loaded.ids() == a.ids());
  CHECK(loaded.features() == a.features());
  for (std::size_t f = 0; f < 2; ++f) {
    CHECK(std::memcmp(loaded.matrix(f).data(), a.matrix(f).data(), a.matrix(f).size_bytes()) == 0);
  }
  CHECK(loaded.model.has_value());
  CHECK(loaded.labeling.names() == toy.labeling.names());
  CHECK(loaded.stats.mean == a.stats.mean);
  const auto q = embed_image(loaded, read_style(bundle, "img0001"), read_activations(bundle, "img0001"), features[1]);
  CHECK(query(loaded, q.values, features[1], 1)[0].image_id == "img0001");

  Bundle broken(gen.layout);
  for (const auto& id : bundle.images()) {
    broken.add_image(id);
    write_style(broken, read_style(bundle, id));
    const auto acts = read_activations(bundle, id);
    if (id != "img0002") write_activations(broken, acts);
  }
  CHECK(code_of([&] { build_index(broken, toy.model, toy.labeling, features, IndexOptions{}); }) ==
        Errc::MissingActivations);
}

TEST_CASE("zero embeddings are flagged and never match") {
  RetrievalIndex index({"a", "b"}, {"f"}, 2);
  index.set_row(0, 0, std::vector<float>{0, 0});
  index.set_row(0, 1, std::vector<float>{1, 0});
  CHECK(index.zero_row(0, 0));
  CHECK_FALSE(index.zero_row(0, 1));
  const auto hits = query(index, std::vector<float>{1, 0}, "f", 2);
  CHECK(hits[0].row == 1);
  CHECK(hits[1].distance == 2.0);
}
