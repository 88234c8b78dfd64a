#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ris/bundle.hpp"
#include "ris/tensor.hpp"

namespace ris {

struct KMeansOptions {
  std::size_t k = 2;
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  double tol = 1e-4;  // on max centroid displacement
  unsigned threads = 1;
};

/// Unit-norm centroids from spherical k-means, immutable after fit.
struct ClusterModel {
  Matrix<float> centroids;  // k x C_ref
  std::size_t k = 0;
  double objective = 0.0;   // sum of point/centroid cosine similarities
  std::size_t iterations_run = 0;
  std::uint64_t seed = 0;
  std::size_t max_iter = 0;
  double tol = 0.0;
  std::string clustering_layer;
  std::vector<double> objective_trace;  // one entry per assignment pass

  std::size_t dims() const { return centroids.cols(); }
};

/// Spherical k-means with seeded greedy k-means++ seeding (distance 1 - cos).
/// Zero-norm rows are ignored. Throws TooFewPoints, DegenerateInput.
ClusterModel fit(const Matrix<float>& points, const KMeansOptions& options);

/// Index of the most similar centroid; ties and zero-norm vectors go to the
/// lowest index.
std::size_t nearest_centroid(const ClusterModel& model, std::span<const float> x);
std::vector<std::size_t> assign_points(const ClusterModel& model, const Matrix<float>& points,
                                       unsigned threads = 1);

/// Hard cluster assignment of every spatial cell of one image.
struct MembershipMap {
  std::string image_id;
  std::size_t k = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> labels;  // height x width, row-major

  std::uint32_t at(std::size_t h, std::size_t w) const { return labels[h * width + w]; }
  /// K x H x W binary tensor.
  Tensor one_hot() const;
  static MembershipMap from_one_hot(std::string image_id, const TensorView& grid);
};

/// Throws LayerMismatch when the layer's channel count differs from the model.
MembershipMap assign(const ClusterModel& model, const ActivationStack& activations, std::string_view layer);

/// Nearest-neighbour resize with source index floor(t * H0 / target).
MembershipMap resample_membership(const MembershipMap& m, std::size_t target_h, std::size_t target_w);

/// Rows are the H*W spatial vectors of a C x H x W activation tensor.
Matrix<float> spatial_points(const TensorView& activation);

/// The layer at resolution 32 if the layout has one, otherwise the middle layer.
std::string default_clustering_layer(const LayerLayout& layout);

/// Cluster index to feature name. Unlabeled clusters are named "cluster_<i>".
class SemanticLabeling {
 public:
  SemanticLabeling() = default;
  explicit SemanticLabeling(std::vector<std::string> names);

  static SemanticLabeling unnamed(std::size_t k);
  /// Parses {"clusters": {"0": "background", ...}}. Throws InvalidArgument.
  static SemanticLabeling from_json(const nlohmann::json& j, std::size_t k);
  static SemanticLabeling load(const std::filesystem::path& file, std::size_t k);
  nlohmann::json to_json() const;

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<std::size_t> index_of(std::string_view feature) const;

 private:
  std::vector<std::string> names_;
};

/// Model stored as a bundle: "centroids" tensor plus scalars under "cluster_model".
void save_cluster_model(const ClusterModel& model, const std::filesystem::path& dir);
ClusterModel load_cluster_model(const std::filesystem::path& dir);
nlohmann::json cluster_model_scalars(const ClusterModel& model);

}  // namespace ris
