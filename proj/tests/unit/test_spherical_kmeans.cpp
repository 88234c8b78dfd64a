#include <doctest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "ris/error.hpp"
#include "ris/spherical_kmeans.hpp"

using namespace ris;

namespace {

Matrix<float> rows(std::initializer_list<std::initializer_list<float>> values) {
  Matrix<float> m(values.size(), values.begin()->size());
  std::size_t r = 0;
  for (auto row : values) {
    std::size_t c = 0;
    for (float v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

ClusterModel model_with(Matrix<float> centroids) {
  ClusterModel m;
  m.k = centroids.rows();
  m.centroids = std::move(centroids);
  m.clustering_layer = "L";
  return m;
}

ActivationStack stack_from_points(const Matrix<float>& pts, std::size_t h, std::size_t w) {
  Tensor t({pts.cols(), h, w});
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    for (std::size_t c = 0; c < pts.cols(); ++c) t.data[c * h * w + i] = pts(i, c);
  }
  ActivationStack s;
  s.image_id = "img";
  s.layers.emplace("L", make_view(std::move(t)));
  return s;
}

}  // namespace

TEST_CASE("two duplicated basis vectors split into their own clusters") {
  const auto pts = rows({{1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 1, 0}});
  const double oracle = ris::testing::brute_force_spherical_objective(pts, 2);
  CHECK(oracle == doctest::Approx(4.0));

  KMeansOptions opt;
  opt.k = 2;
  const auto model = fit(pts, opt);
  CHECK(model.objective == doctest::Approx(oracle).epsilon(1e-9));
  const auto labels = assign_points(model, pts);
  CHECK(labels[0] == labels[1]);
  CHECK(labels[2] == labels[3]);
  CHECK(labels[0] != labels[2]);
}

TEST_CASE("k=1 centroid is the normalized sum of unit points") {
  const auto pts = rows({{3, 0, 0}, {0, 2, 0}, {1, 1, 1}, {0, 0, 5}});
  KMeansOptions opt;
  opt.k = 1;
  const auto model = fit(pts, opt);
  std::vector<double> sum(3, 0.0);
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    double n = 0;
    for (float v : pts.row(i)) n += double(v) * v;
    for (std::size_t c = 0; c < 3; ++c) sum[c] += pts(i, c) / std::sqrt(n);
  }
  const double norm = std::sqrt(sum[0] * sum[0] + sum[1] * sum[1] + sum[2] * sum[2]);
  for (std::size_t c = 0; c < 3; ++c) CHECK(model.centroids(0, c) == doctest::Approx(sum[c] / norm).epsilon(1e-6));
}

TEST_CASE("P = k distinct unit points fit perfectly") {
  const auto pts = rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  KMeansOptions opt;
  opt.k = 3;
  const auto model = fit(pts, opt);
  CHECK(model.objective == doctest::Approx(3.0));
}

TEST_CASE("fit precondition errors") {
  KMeansOptions opt;
  opt.k = 3;
  CHECK_THROWS_AS(fit(rows({{1, 0}, {0, 1}}), opt), Error);
  try {
    fit(rows({{1, 0}, {0, 1}}), opt);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TooFewPoints);
  }
  opt.k = 1;
  try {
    fit(rows({{0, 0}, {0, 0}}), opt);
    FAIL("expected DegenerateInput");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateInput);
  }
}

TEST_CASE("fit is monotone, unit-norm, deterministic and independent of threads") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Matrix<float> pts(200, 6);
    for (auto& v : pts.values()) v = static_cast<float>(g(rng));
    KMeansOptions opt;
    opt.k = 5;
    opt.seed = seed;
    const auto a = fit(pts, opt);
    opt.threads = 4;
    const auto b = fit(pts, opt);
    CHECK(a.centroids == b.centroids);
    CHECK(a.objective == b.objective);
    for (std::size_t i = 1; i < a.objective_trace.size(); ++i) {
      CHECK(a.objective_trace[i] >= a.objective_trace[i - 1] - 1e-9);
    }
    CHECK(a.objective <= 200.0);
    for (std::size_t c = 0; c < a.k; ++c) {
      double n = 0;
      for (float v : a.centroids.row(c)) n += double(v) * v;
      CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("identical points still produce k unit centroids") {
  Matrix<float> pts(6, 2, 1.0f);
  KMeansOptions opt;
  opt.k = 3;
  const auto model = fit(pts, opt);
  CHECK(model.objective == doctest::Approx(6.0));
}

TEST_CASE("planted caps are recovered") {
  int recovered = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<std::size_t> truth;
    const auto pts = ris::testing::planted_caps(3, 40, 8, 10.0, 100 + seed, truth);
    KMeansOptions opt;
    opt.k = 3;
    opt.seed = seed;
    const auto labels = assign_points(fit(pts, opt), pts);
    recovered += ris::testing::adjusted_rand_index(labels, truth) == 1.0;
  }
  CHECK(recovered >= 9);
}

TEST_CASE("assign follows argmax cosine with lowest-index ties and zero-vector fallback") {
  const auto model = model_with(rows({{1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}}));
  SUBCASE("every cell equals centroid 2") {
    const auto m = assign(model, stack_from_points(rows({{0, -1, 0}, {0, -3, 0}, {0, -1, 0}, {0, -2, 0}}), 2, 2), "L");
    for (auto l : m.labels) CHECK(l == 2);
  }
  SUBCASE("zero vector goes to cluster 0") {
    const auto m = assign(model, stack_from_points(rows({{0, 0, 0}}), 1, 1), "L");
    CHECK(m.labels[0] == 0);
  }
  SUBCASE("tie between centroids 1 and 3") {
    const auto m = assign(model, stack_from_points(rows({{0, 1, 1}}), 1, 1), "L");
    CHECK(m.labels[0] == 1);
  }
  SUBCASE("layer width mismatch") {
    try {
      assign(model, stack_from_points(rows({{0, 1}}), 1, 1), "L");
      FAIL("expected LayerMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::LayerMismatch);
    }
  }
}

TEST_CASE("resample_membership uses floor(t * H0 / target)") {
  MembershipMap m;
  m.k = 4;
  m.height = m.width = 2;
  m.labels = {0, 1, 2, 3};

  SUBCASE("identity") { CHECK(resample_membership(m, 2, 2).labels == m.labels); }
  SUBCASE("2x2 -> 4x4 replicates blocks") {
    const auto up = resample_membership(m, 4, 4);
    const std::vector<std::uint32_t> expected{0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3};
    CHECK(up.labels == expected);
  }
  SUBCASE("4x4 -> 2x2 samples even cells") {
    MembershipMap big;
    big.k = 16;
    big.height = big.width = 4;
    for (std::uint32_t i = 0; i < 16; ++i) big.labels.push_back(i);
    const auto down = resample_membership(big, 2, 2);
    CHECK(down.labels == std::vector<std::uint32_t>{0, 2, 8, 10});
  }
  SUBCASE("one-hot at every size") {
    for (std::size_t h = 1; h <= 7; ++h) {
      for (std::size_t w = 1; w <= 7; w += 3) {
        const Tensor t = resample_membership(m, h, w).one_hot();
        for (std::size_t i = 0; i < h * w; ++i) {
          float s = 0;
          for (std::size_t k = 0; k < 4; ++k) s += t.data[k * h * w + i];
          CHECK(s == 1.0f);
        }
      }
    }
  }
}

TEST_CASE("cluster model and labeling persist") {
  ris::testing::TempDir dir("model");
  std::vector<std::size_t> truth;
  const auto pts = ris::testing::planted_caps(3, 10, 4, 5.0, 1, truth);
  KMeansOptions opt;
  opt.k = 3;
  auto model = fit(pts, opt);
  model.clustering_layer = "L1";
  save_cluster_model(model, dir.path());
  const auto back = load_cluster_model(dir.path());
  CHECK(back.centroids == model.centroids);
  CHECK(back.clustering_layer == "L1");
  CHECK(back.objective == model.objective);

  const auto labels = SemanticLabeling::from_json(nlohmann::json::parse(R"({"clusters":{"0":"eyes","2":"hair"}})"), 3);
  CHECK(labels.names() == std::vector<std::string>{"eyes", "cluster_1", "hair"});
  CHECK_THROWS_AS(SemanticLabeling::from_json(nlohmann::json::parse(R"({"clusters":{"0":"a","1":"a"}})"), 3), Error);
  CHECK_THROWS_AS(SemanticLabeling::from_json(nlohmann::json::parse(R"({"clusters":{"5":"a"}})"), 3), Error);
}
