#include <doctest.h>

#include <cstring>

#include "../support/oracles.hpp"
#include "../support/toy_pipeline.hpp"
#include "ris/error.hpp"
#include "ris/toy_generator.hpp"

using namespace ris;

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

const std::vector<ToyLayerSpec> kLayers{{4, 8}, {8, 8}, {16, 8}};

}  // namespace

TEST_CASE("layer spec parsing") {
  const auto l = parse_toy_layers("4:8,8:6");
  REQUIRE(l.size() == 2);
  CHECK(l[1].resolution == 8);
  CHECK(l[1].channels == 6);
  CHECK(code_of([] { parse_toy_layers("4x8"); }) == Errc::InvalidArgument);
  CHECK(code_of([] { parse_toy_layers("4:8,"); }) == Errc::InvalidArgument);
}

TEST_CASE("k=4 on a 4x4 layer gives quadrants, nested across layers") {
  const auto gen = make_toy(4, kLayers, 0);
  for (std::size_t h = 0; h < 4; ++h) {
    for (std::size_t w = 0; w < 4; ++w) CHECK(gen.region_at(0, h, w) == (h / 2) * 2 + w / 2);
  }
  for (std::size_t l = 1; l < 3; ++l) {
    const std::size_t res = gen.layout.layers()[l].resolution;
    for (std::size_t h = 0; h < res; ++h) {
      for (std::size_t w = 0; w < res; ++w) CHECK(gen.region_at(l, h, w) == gen.region_at(0, h * 4 / res, w * 4 / res));
    }
  }
}

TEST_CASE("basis respects region locality and bounds") {
  const auto gen = make_toy(4, kLayers, 5);
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& spec = gen.layout.layers()[l];
    const std::size_t plane = spec.resolution * spec.resolution;
    std::vector<int> owned(4, 0);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      const auto owner = gen.channel_region[spec.style_offset + c];
      ++owned[owner];
      for (std::size_t i = 0; i < plane; ++i) {
        const float v = gen.basis[l].data[c * plane + i];
        if (gen.region_map[l][i] == owner) {
          CHECK(v >= 0.5f);
          CHECK(v <= 1.5f);
        } else {
          CHECK(v == 0.0f);
        }
      }
    }
    for (int n : owned) CHECK(n >= 1);
  }
}

TEST_CASE("same seed gives an identical basis") {
  const auto a = make_toy(4, kLayers, 9), b = make_toy(4, kLayers, 9), c = make_toy(4, kLayers, 10);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(std::memcmp(a.basis[l].data.data(), b.basis[l].data.data(), a.basis[l].data.size() * 4) == 0);
  }
  CHECK(a.basis[0].data != c.basis[0].data);
}

TEST_CASE("infeasible partitions") {
  CHECK(code_of([] { make_toy(17, kLayers, 0); }) == Errc::InfeasiblePartition);
  CHECK(code_of([] { make_toy(1, kLayers, 0); }) == Errc::InfeasiblePartition);
  CHECK(code_of([] { make_toy(4, {{4, 3}}, 0); }) == Errc::InfeasiblePartition);
  CHECK(code_of([] { make_toy(4, {{4, 8}, {6, 8}}, 0); }) == Errc::InfeasiblePartition);
  CHECK_NOTHROW(make_toy(6, kLayers, 0));
}

TEST_CASE("synthesize scales the basis by sigma") {
  const auto gen = make_toy(4, kLayers, 2);
  const std::size_t total = gen.layout.total_channels();
  const auto ones = synthesize(gen, StyleVector{"o", std::vector<float>(total, 1.0f)});
  const auto zeros = synthesize(gen, StyleVector{"z", std::vector<float>(total, 0.0f)});
  StyleVector bumped{"b", std::vector<float>(total, 1.0f)};
  bumped.values[9] = 2.0f;  // layer L1, channel 1
  const auto doubled = synthesize(gen, bumped);
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& name = gen.layout.layers()[l].name;
    const auto a = ones.layer(name).data(), z = zeros.layer(name).data(), d = doubled.layer(name).data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i] == gen.basis[l].data[i]);
      CHECK(z[i] == 0.0f);
      const std::size_t plane = gen.layout.layers()[l].resolution * gen.layout.layers()[l].resolution;
      const bool hit = l == 1 && i / plane == 1;
      CHECK(d[i] == (hit ? 2.0f * a[i] : a[i]));
    }
  }
  CHECK(code_of([&] { synthesize(gen, StyleVector{"x", {1, 2}}); }) == Errc::LengthMismatch);
}

TEST_CASE("fixtures share group blocks and record ground truth") {
  const auto gen = make_toy(4, kLayers, 1);
  const std::vector<GroupSpec> groups{{{0, 1}, {1}}, {{2, 3}, {1}}};
  const Bundle b = make_fixture(gen, 4, groups, 3);
  CHECK(b.images() == std::vector<std::string>{"img0000", "img0001", "img0002", "img0003"});
  const auto s0 = read_style(b, "img0000"), s1 = read_style(b, "img0001"), s2 = read_style(b, "img0002");
  for (std::size_t c = 0; c < gen.layout.total_channels(); ++c) {
    if (gen.channel_region[c] == 1) {
      CHECK(s0.values[c] == s1.values[c]);
      CHECK(s0.values[c] != s2.values[c]);
    } else {
      CHECK(s0.values[c] != s1.values[c]);
    }
  }
  const auto& fx = b.metadata()["fixture"];
  CHECK(fx["regions"] == 4);
  CHECK(fx["region_groups"][1][0] == 0);
  CHECK(fx["region_groups"][1][3] == 1);
  CHECK(fx["region_groups"][0][0] == -1);

  const Bundle independent = make_fixture(gen, 3, {}, 3);
  CHECK(independent.images().size() == 3);
  CHECK(code_of([&] { make_fixture(gen, 4, {{{0, 1}, {99}}}, 0); }) == Errc::BadGroupSpec);
  CHECK(code_of([&] { make_fixture(gen, 4, {{{0, 7}, {0}}}, 0); }) == Errc::BadGroupSpec);
  CHECK(code_of([&] { make_fixture(gen, 4, {{{0, 1}, {0}}, {{1, 2}, {0}}}, 0); }) == Errc::BadGroupSpec);

  ris::testing::TempDir dir("fixture");
  save_bundle(b, dir.path());
  CHECK(load_bundle(dir.path()).metadata()["fixture"] == fx);
}

TEST_CASE("planted groups partition every region independently") {
  const auto groups = planted_groups(16, 4, 4, 0);
  CHECK(groups.size() == 16);
  std::vector<std::vector<int>> seen(4, std::vector<int>(16, 0));
  for (const auto& g : groups) {
    CHECK(g.members.size() == 4);
    for (auto m : g.members) ++seen[g.regions[0]][m];
  }
  for (const auto& r : seen) {
    for (int n : r) CHECK(n == 1);
  }
  CHECK(groups[0].members != groups[4].members);
  const auto parsed = parse_group_spec(nlohmann::json::parse(R"({"planted":{"group_size":4}})"), 16, 4, 0);
  CHECK(parsed.size() == groups.size());
  CHECK(parsed[3].members == groups[3].members);
  CHECK(code_of([] { parse_group_spec(nlohmann::json::parse(R"({"groups":[{"members":[0]}]})"), 4, 4, 0); }) ==
        Errc::BadGroupSpec);
}

TEST_CASE("clustering recovers the region partition") {
  const auto gen = make_toy(4, kLayers, 6);
  const Bundle b = make_fixture(gen, 8, {}, 7);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto toy = ris::testing::fit_toy_model(b, gen, seed);
    const std::size_t li = gen.layout.layer_index(toy.model.clustering_layer);
    for (const auto& id : b.images()) {
      const auto m = assign(toy.model, read_activations(b, id), toy.model.clustering_layer);
      for (std::size_t i = 0; i < m.labels.size(); ++i) {
        CHECK(toy.cluster_region[m.labels[i]] == gen.region_map[li][i]);
      }
    }
    auto regions = toy.cluster_region;
    std::ranges::sort(regions);
    CHECK(regions == std::vector<std::size_t>{0, 1, 2, 3});
  }
}
