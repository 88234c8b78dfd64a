#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ris/retrieval.hpp"
#include "ris/tensor.hpp"

namespace ris {

/// Classifier scores in [0,1] per image and attribute, read from
/// `image_id,<attr1>,<attr2>,...` CSV.
struct AttributePredictions {
  std::vector<std::string> ids;
  std::vector<std::string> attributes;
  Matrix<double> scores;  // ids x attributes
  double threshold = 0.5;

  static AttributePredictions parse_csv(std::istream& in);
  static AttributePredictions load_csv(const std::filesystem::path& file);

  std::optional<std::size_t> row_of(std::string_view id) const;
  std::optional<std::size_t> attribute_index(std::string_view name) const;
  /// Thresholded prediction: score > threshold.
  bool present(std::size_t row, std::size_t attribute) const { return scores(row, attribute) > threshold; }

 private:
  std::map<std::string, std::size_t, std::less<>> row_lookup_;
};

/// Feature name -> attributes judged by that feature.
struct AttributeGroups {
  std::map<std::string, std::vector<std::string>, std::less<>> groups;

  /// The CelebA attribute groups for eyes, nose, mouth and hair.
  static AttributeGroups celeba_defaults();
  /// {"eyes": ["Arched_Eyebrows", ...], ...}
  static AttributeGroups load(const std::filesystem::path& file);
};

struct IdentityLabels {
  std::map<std::string, std::string, std::less<>> identity;

  /// `image_id,identity_id` CSV (header optional).
  static IdentityLabels parse_csv(std::istream& in);
  static IdentityLabels load_csv(const std::filesystem::path& file);
  const std::string& of(std::string_view image_id) const;  // throws MissingPrediction
};

/// Fraction of thresholded group-attribute agreements between each query and
/// its top `top` neighbours (self excluded). Throws UnknownFeature,
/// MissingPrediction, EmptyGroup.
double ams(const RetrievalIndex& index, std::span<const std::string> queries, std::string_view feature,
           const AttributePredictions& predictions, const AttributeGroups& groups, std::size_t top = 5,
           unsigned threads = 1);

/// |A n B| / |A u B|; 1.0 when both are empty.
double set_iou(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// IoU of the identity sets retrieved for one query under two features.
double trsi_iou(const RetrievalIndex& index, std::string_view query, std::string_view feature_a,
                std::string_view feature_b, std::size_t set_size, const IdentityLabels& identities,
                unsigned threads = 1);

struct SubmembershipReport {
  std::string feature;
  std::vector<std::size_t> cluster_counts;
  std::vector<double> ratios;
  std::size_t top_n = 0;
  std::size_t sample_size = 0;
  std::uint64_t seed = 0;
};

/// Clusters per-image score rows (N x C) with spherical k-means for each K,
/// averages rows per cluster, and reports |intersection of top-n channel sets| / n.
/// Throws BadK, BadN.
SubmembershipReport intersection_ratio(const Matrix<double>& rows, std::span<const std::size_t> cluster_counts,
                                       std::size_t top_n, std::uint64_t seed, unsigned threads = 1);

/// Indices of the `n` largest values, ties to the lowest index.
std::vector<std::size_t> top_n_indices(std::span<const double> values, std::size_t n);

}  // namespace ris
