#include "ris/spherical_kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "ris/error.hpp"
#include "ris/parallel.hpp"

namespace ris {

namespace {

constexpr double kZeroNorm = 1e-12;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

// Greedy k-means++: each step draws several D^2-weighted candidates and keeps
// the one that lowers the total potential most. On the unit sphere the squared
// chord length is 2(1 - cos), so 1 - cos serves as the weight.
Matrix<double> seed_centroids(const Matrix<double>& x, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = x.rows();
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  Matrix<double> centroids(k, x.cols());

  auto distance_to = [&](std::size_t i, std::span<const double> c) {
    return std::max(0.0, 1.0 - dot(x.row(i), c));
  };

  std::size_t first = uniform_index(rng, n);
  std::ranges::copy(x.row(first), centroids.row(0).begin());
  std::vector<double> closest(n);
  for (std::size_t i = 0; i < n; ++i) closest[i] = distance_to(i, centroids.row(0));

  std::vector<double> prefix(n);
  std::vector<double> candidate_closest(n);
  std::vector<double> best_closest(n);
  for (std::size_t c = 1; c < k; ++c) {
    std::partial_sum(closest.begin(), closest.end(), prefix.begin());
    const double total = prefix.back();
    double best_potential = std::numeric_limits<double>::infinity();
    std::size_t best = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      std::size_t cand;
      if (total <= 0.0) {
        cand = uniform_index(rng, n);
      } else {
        const double r = uniform01(rng) * total;
        cand = static_cast<std::size_t>(std::upper_bound(prefix.begin(), prefix.end(), r) - prefix.begin());
        cand = std::min(cand, n - 1);
      }
      double potential = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        candidate_closest[i] = std::min(closest[i], distance_to(i, x.row(cand)));
        potential += candidate_closest[i];
      }
      if (potential < best_potential) {
        best_potential = potential;
        best = cand;
        best_closest.swap(candidate_closest);
      }
    }
    std::ranges::copy(x.row(best), centroids.row(c).begin());
    closest.swap(best_closest);
  }
  return centroids;
}

struct Assignment {
  std::vector<std::size_t> label;
  std::vector<double> similarity;
  double objective = 0.0;
};

Assignment assign_unit_points(const Matrix<double>& x, const Matrix<double>& centroids, unsigned threads) {
  Assignment a;
  a.label.resize(x.rows());
  a.similarity.resize(x.rows());
  parallel_for(x.rows(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::size_t best = 0;
      double best_sim = dot(x.row(i), centroids.row(0));
      for (std::size_t c = 1; c < centroids.rows(); ++c) {
        const double s = dot(x.row(i), centroids.row(c));
        if (s > best_sim) {
          best_sim = s;
          best = c;
        }
      }
      a.label[i] = best;
      a.similarity[i] = best_sim;
    }
  });
  // Serial sum keeps the objective independent of the worker count.
  for (double s : a.similarity) a.objective += s;
  return a;
}

}  // namespace

ClusterModel fit(const Matrix<float>& points, const KMeansOptions& options) {
  if (options.k < 1) throw Error(Errc::BadK, "k must be at least 1");
  if (!(options.tol > 0.0)) throw Error(Errc::InvalidArgument, "tol must be positive");
  if (points.rows() < options.k) {
    throw Error(Errc::TooFewPoints, std::to_string(points.rows()) + " points for k=" + std::to_string(options.k));
  }

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double n2 = 0.0;
    for (float v : points.row(i)) n2 += double(v) * double(v);
    if (std::sqrt(n2) >= kZeroNorm) usable.push_back(i);
  }
  if (usable.empty()) throw Error(Errc::DegenerateInput, "all points have zero norm");
  if (usable.size() < options.k) {
    throw Error(Errc::TooFewPoints, std::to_string(usable.size()) + " nonzero points for k=" +
                                        std::to_string(options.k));
  }

  const std::size_t dims = points.cols();
  Matrix<double> x(usable.size(), dims);
  for (std::size_t r = 0; r < usable.size(); ++r) {
    auto src = points.row(usable[r]);
    double n2 = 0.0;
    for (float v : src) n2 += double(v) * double(v);
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t c = 0; c < dims; ++c) x(r, c) = double(src[c]) * inv;
  }

  std::mt19937_64 rng(options.seed);
  Matrix<double> centroids = seed_centroids(x, options.k, rng);

  ClusterModel model;
  model.k = options.k;
  model.seed = options.seed;
  model.max_iter = options.max_iter;
  model.tol = options.tol;

  for (std::size_t iter = 0; iter < options.max_iter; ++iter) {
    const Assignment a = assign_unit_points(x, centroids, options.threads);
    model.objective_trace.push_back(a.objective);

    Matrix<double> sums(options.k, dims, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto row = sums.row(a.label[i]);
      auto xi = x.row(i);
      for (std::size_t c = 0; c < dims; ++c) row[c] += xi[c];
    }

    std::vector<std::size_t> empty;
    for (std::size_t c = 0; c < options.k; ++c) {
      double n2 = 0.0;
      for (double v : sums.row(c)) n2 += v * v;
      const double norm = std::sqrt(n2);
      if (norm < kZeroNorm) {
        empty.push_back(c);
        continue;
      }
      for (double& v : sums.row(c)) v /= norm;
    }
    if (!empty.empty()) {
      // Worst-served points become the new centroids of empty clusters.
      std::vector<std::size_t> order(x.rows());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t l, std::size_t r) { return a.similarity[l] < a.similarity[r]; });
      for (std::size_t e = 0; e < empty.size(); ++e) {
        std::ranges::copy(x.row(order[e % order.size()]), sums.row(empty[e]).begin());
      }
    }

    double displacement = 0.0;
    for (std::size_t c = 0; c < options.k; ++c) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dims; ++j) {
        const double d = sums(c, j) - centroids(c, j);
        d2 += d * d;
      }
      displacement = std::max(displacement, std::sqrt(d2));
    }
    centroids = std::move(sums);
    model.iterations_run = iter + 1;
    if (displacement < options.tol) break;
  }

  model.centroids = Matrix<float>(options.k, dims);
  for (std::size_t c = 0; c < options.k; ++c) {
    for (std::size_t j = 0; j < dims; ++j) model.centroids(c, j) = static_cast<float>(centroids(c, j));
  }
  model.objective = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < options.k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < dims; ++j) s += x(i, j) * double(model.centroids(c, j));
      best = std::max(best, s);
    }
    model.objective += best;
  }
  return model;
}

std::size_t nearest_centroid(const ClusterModel& model, std::span<const float> x) {
  double n2 = 0.0;
  for (float v : x) n2 += double(v) * double(v);
  if (std::sqrt(n2) < kZeroNorm) return 0;
  std::size_t best = 0;
  double best_dot = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < model.centroids.rows(); ++c) {
    auto centroid = model.centroids.row(c);
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += double(x[j]) * double(centroid[j]);
    if (s > best_dot) {
      best_dot = s;
      best = c;
    }
  }
  return best;
}

std::vector<std::size_t> assign_points(const ClusterModel& model, const Matrix<float>& points, unsigned threads) {
  if (points.cols() != model.dims()) {
    throw Error(Errc::LayerMismatch, "points have " + std::to_string(points.cols()) + " dims, model has " +
                                         std::to_string(model.dims()));
  }
  std::vector<std::size_t> labels(points.rows());
  parallel_for(points.rows(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) labels[i] = nearest_centroid(model, points.row(i));
  });
  return labels;
}

Tensor MembershipMap::one_hot() const {
  Tensor t({k, height, width});
  const std::size_t plane = height * width;
  for (std::size_t i = 0; i < plane; ++i) t.data[labels[i] * plane + i] = 1.0f;
  return t;
}

MembershipMap MembershipMap::from_one_hot(std::string image_id, const TensorView& grid) {
  if (grid.shape().size() != 3) throw Error(Errc::ShapeMismatch, "membership grid must be K x H x W");
  MembershipMap m;
  m.image_id = std::move(image_id);
  m.k = grid.shape()[0];
  m.height = grid.shape()[1];
  m.width = grid.shape()[2];
  const std::size_t plane = m.height * m.width;
  m.labels.assign(plane, 0);
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t hits = 0;
    for (std::size_t c = 0; c < m.k; ++c) {
      const float v = grid[c * plane + i];
      if (v == 1.0f) {
        m.labels[i] = static_cast<std::uint32_t>(c);
        ++hits;
      } else if (v != 0.0f) {
        hits = 2;
      }
    }
    if (hits != 1) throw Error(Errc::InvalidBundle, "membership '" + m.image_id + "' is not one-hot");
  }
  return m;
}

Matrix<float> spatial_points(const TensorView& activation) {
  const Shape& s = activation.shape();
  if (s.size() != 3) throw Error(Errc::ShapeMismatch, "activation must be C x H x W");
  const std::size_t channels = s[0];
  const std::size_t plane = s[1] * s[2];
  Matrix<float> out(plane, channels);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) out(i, c) = activation[c * plane + i];
  }
  return out;
}

MembershipMap assign(const ClusterModel& model, const ActivationStack& activations, std::string_view layer) {
  const TensorView& a = activations.layer(layer);
  if (a.shape().size() != 3 || a.shape()[0] != model.dims()) {
    throw Error(Errc::LayerMismatch, "layer '" + std::string(layer) + "' has shape " + shape_string(a.shape()) +
                                         ", model expects " + std::to_string(model.dims()) + " channels");
  }
  const Matrix<float> points = spatial_points(a);
  MembershipMap m;
  m.image_id = activations.image_id;
  m.k = model.k;
  m.height = a.shape()[1];
  m.width = a.shape()[2];
  m.labels.resize(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    m.labels[i] = static_cast<std::uint32_t>(nearest_centroid(model, points.row(i)));
  }
  return m;
}

MembershipMap resample_membership(const MembershipMap& m, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0) throw Error(Errc::InvalidArgument, "target size must be positive");
  MembershipMap out;
  out.image_id = m.image_id;
  out.k = m.k;
  out.height = target_h;
  out.width = target_w;
  out.labels.resize(target_h * target_w);
  for (std::size_t th = 0; th < target_h; ++th) {
    const std::size_t sh = th * m.height / target_h;
    for (std::size_t tw = 0; tw < target_w; ++tw) {
      out.labels[th * target_w + tw] = m.at(sh, tw * m.width / target_w);
    }
  }
  return out;
}

std::string default_clustering_layer(const LayerLayout& layout) {
  if (layout.layer_count() == 0) throw Error(Errc::InvalidArgument, "layout has no layers");
  for (const auto& l : layout.layers()) {
    if (l.resolution == 32) return l.name;
  }
  return layout.layers()[layout.layer_count() / 2].name;
}

SemanticLabeling::SemanticLabeling(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw Error(Errc::InvalidArgument, "empty feature name");
    if (!seen.insert(n).second) throw Error(Errc::InvalidArgument, "feature '" + n + "' labels two clusters");
  }
}

SemanticLabeling SemanticLabeling::unnamed(std::size_t k) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("cluster_" + std::to_string(i));
  return SemanticLabeling(std::move(names));
}

SemanticLabeling SemanticLabeling::from_json(const nlohmann::json& j, std::size_t k) {
  if (!j.is_object() || !j.contains("clusters") || !j["clusters"].is_object()) {
    throw Error(Errc::InvalidArgument, "labels must look like {\"clusters\": {\"0\": \"name\"}}");
  }
  std::vector<std::string> names(k);
  for (const auto& [key, value] : j["clusters"].items()) {
    std::size_t idx = 0;
    try {
      std::size_t used = 0;
      idx = std::stoul(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw Error(Errc::InvalidArgument, "cluster key '" + key + "' is not an index");
    }
    if (idx >= k) throw Error(Errc::InvalidArgument, "cluster " + key + " out of range for k=" + std::to_string(k));
    if (!value.is_string()) throw Error(Errc::InvalidArgument, "cluster " + key + " name must be a string");
    names[idx] = value.get<std::string>();
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (names[i].empty()) names[i] = "cluster_" + std::to_string(i);
  }
  return SemanticLabeling(std::move(names));
}

SemanticLabeling SemanticLabeling::load(const std::filesystem::path& file, std::size_t k) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::IoFailure, "cannot read labels " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, "labels do not parse: " + std::string(e.what()));
  }
  return from_json(j, k);
}

nlohmann::json SemanticLabeling::to_json() const {
  nlohmann::json clusters = nlohmann::json::object();
  for (std::size_t i = 0; i < names_.size(); ++i) clusters[std::to_string(i)] = names_[i];
  return {{"clusters", clusters}};
}

std::optional<std::size_t> SemanticLabeling::index_of(std::string_view feature) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == feature) return i;
  }
  return std::nullopt;
}

nlohmann::json cluster_model_scalars(const ClusterModel& model) {
  return {{"k", model.k},
          {"objective", model.objective},
          {"iterations_run", model.iterations_run},
          {"seed", model.seed},
          {"max_iter", model.max_iter},
          {"tol", model.tol},
          {"clustering_layer", model.clustering_layer},
          {"objective_trace", model.objective_trace}};
}

void save_cluster_model(const ClusterModel& model, const std::filesystem::path& dir) {
  Bundle b;
  b.put("centroids", Tensor({model.centroids.rows(), model.centroids.cols()}, model.centroids.values()));
  b.metadata()["cluster_model"] = cluster_model_scalars(model);
  save_bundle(b, dir);
}

ClusterModel load_cluster_model(const std::filesystem::path& dir) {
  const Bundle b = load_bundle(dir);
  if (!b.metadata().contains("cluster_model") || !b.contains("centroids")) {
    throw Error(Errc::InvalidBundle, dir.string() + " is not a cluster model");
  }
  const auto& s = b.metadata()["cluster_model"];
  const TensorView c = b.get("centroids");
  if (c.shape().size() != 2) throw Error(Errc::ShapeMismatch, "centroids must be k x C");
  ClusterModel m;
  try {
    m.k = s.at("k").get<std::size_t>();
    m.objective = s.at("objective").get<double>();
    m.iterations_run = s.at("iterations_run").get<std::size_t>();
    m.seed = s.at("seed").get<std::uint64_t>();
    m.max_iter = s.at("max_iter").get<std::size_t>();
    m.tol = s.at("tol").get<double>();
    m.clustering_layer = s.at("clustering_layer").get<std::string>();
    m.objective_trace = s.value("objective_trace", std::vector<double>{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidBundle, std::string("malformed cluster model: ") + e.what());
  }
  if (c.shape()[0] != m.k) throw Error(Errc::ShapeMismatch, "centroid rows do not match k");
  m.centroids = Matrix<float>(c.shape()[0], c.shape()[1]);
  std::ranges::copy(c.data(), m.centroids.values().begin());
  return m;
}

}  // namespace ris
