#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ris/attribution.hpp"
#include "ris/bundle.hpp"
#include "ris/spherical_kmeans.hpp"
#include "ris/transfer.hpp"

namespace ris {

/// One (mean, std) pair per layer over all indexed images and that layer's channels.
struct NormalizationStats {
  std::vector<std::string> layers;
  std::vector<double> mean;
  std::vector<double> stddev;

  nlohmann::json to_json() const;
  static NormalizationStats from_json(const nlohmann::json& j);
};

/// Population statistics. Throws DegenerateLayer when a layer has zero spread.
NormalizationStats compute_norm_stats(std::span<const StyleVector> styles, const LayerLayout& layout);

/// Per-layer (value - mean) / std. Throws LayoutMismatch.
StyleVector normalize(const StyleVector& sigma, const NormalizationStats& stats, const LayerLayout& layout);

struct FeatureEmbedding {
  std::string image_id;
  std::string feature;
  std::vector<float> values;
};

/// q_k (.) sigma_hat. Throws LengthMismatch.
FeatureEmbedding embed(const StyleVector& sigma_norm, const MaskRow& mask);

/// 1 - cos(u, v); 2.0 when either norm is below 1e-12. Throws LengthMismatch.
double cosine_distance(std::span<const float> u, std::span<const float> v);

enum class Direction { nearest, furthest };

struct Hit {
  std::size_t row = 0;
  std::string image_id;
  double distance = 0.0;
};

struct IndexOptions {
  double tau = 0.1;
  ScoreNormalize normalize = ScoreNormalize::none;
  bool hard = false;
  unsigned threads = 1;
  /// When set, every image uses this one score matrix (dataset-averaged
  /// baseline) instead of its own single-image scores.
  std::optional<ContributionMatrix> shared_scores;
};

/// Per-feature N x C matrices of unit-norm embeddings in canonical image order.
/// Immutable once built or loaded; concurrent queries are safe.
class RetrievalIndex {
 public:
  RetrievalIndex() = default;
  RetrievalIndex(std::vector<std::string> ids, std::vector<std::string> features, std::size_t dims);

  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::string>& features() const { return features_; }
  std::size_t size() const { return ids_.size(); }
  std::size_t dims() const { return dims_; }

  std::size_t feature_index(std::string_view feature) const;  // throws UnknownFeature
  std::optional<std::size_t> image_index(std::string_view id) const;

  std::span<const float> row(std::size_t feature, std::size_t image) const;
  std::span<const float> matrix(std::size_t feature) const { return matrices_[feature]; }
  bool zero_row(std::size_t feature, std::size_t image) const { return zero_[feature][image] != 0; }
  /// Norm of the stored (rounded) row; 1 up to float precision, 0 for zero rows.
  double row_norm(std::size_t feature, std::size_t image) const { return norms_[feature][image]; }

  /// Stores embedding / ||embedding||; zero-norm rows are stored as zeros and flagged.
  /// Only valid while building.
  void set_row(std::size_t feature, std::size_t image, std::span<const float> embedding);

  LayerLayout layout;
  NormalizationStats stats;
  std::optional<ClusterModel> model;
  SemanticLabeling labeling;
  nlohmann::json provenance = nlohmann::json::object();

 private:
  friend void save_index(const RetrievalIndex& index, const std::filesystem::path& dir);
  friend RetrievalIndex load_index(const std::filesystem::path& dir);

  std::vector<std::string> ids_;
  std::vector<std::string> features_;
  std::size_t dims_ = 0;
  std::vector<std::shared_ptr<std::vector<float>>> owned_;
  std::vector<std::span<const float>> matrices_;
  std::vector<std::shared_ptr<const void>> keepalive_;
  std::vector<std::vector<std::uint8_t>> zero_;
  std::vector<std::vector<double>> norms_;
};

/// Per-image inputs for index assembly.
struct IndexSource {
  std::vector<std::string> ids;
  LayerLayout layout;
  std::function<StyleVector(std::size_t)> style;
  std::function<ContributionMatrix(std::size_t)> scores;
};

/// Masks, normalizes and embeds every image of `source` for each feature.
/// Deterministic and independent of the worker count.
RetrievalIndex assemble_index(const IndexSource& source, const NormalizationStats& stats,
                              const std::vector<std::string>& features, const IndexOptions& options);

/// Full build from a bundle of styles and activations. Throws MissingActivations,
/// DegenerateLayer, UnknownFeature.
RetrievalIndex build_index(const Bundle& bundle, const ClusterModel& model, const SemanticLabeling& labeling,
                           const std::vector<std::string>& features, const IndexOptions& options);

/// Embeds an image that is not in the index using the index's stats, model and labeling.
FeatureEmbedding embed_image(const RetrievalIndex& index, const StyleVector& style,
                             const ActivationStack& activations, std::string_view feature);

/// Exact scan. Nearest sorts by (distance, row); furthest is its exact reverse.
/// Throws UnknownFeature, BadK.
std::vector<Hit> query(const RetrievalIndex& index, std::span<const float> embedding, std::string_view feature,
                       std::size_t k, Direction direction = Direction::nearest, unsigned threads = 1);

/// Query with an indexed image's own embedding.
std::vector<Hit> query_image(const RetrievalIndex& index, std::string_view image_id, std::string_view feature,
                             std::size_t k, Direction direction = Direction::nearest, unsigned threads = 1);

/// Top `count` neighbours of an indexed image, excluding the image itself.
std::vector<Hit> neighbours_excluding_self(const RetrievalIndex& index, std::string_view image_id,
                                           std::string_view feature, std::size_t count, unsigned threads = 1);

void save_index(const RetrievalIndex& index, const std::filesystem::path& dir);
RetrievalIndex load_index(const std::filesystem::path& dir);

}  // namespace ris
