#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ris/bundle.hpp"
#include "ris/spherical_kmeans.hpp"
#include "ris/tensor.hpp"

namespace ris {

enum class ScoreMode { batch, pair, single };
enum class ScoreNormalize { none, per_layer_mean };

std::string_view to_string(ScoreMode mode);
std::string_view to_string(ScoreNormalize normalize);
ScoreNormalize parse_normalize(std::string_view text);

/// Per-feature, per-channel contribution scores (K x C_total). Rows follow
/// `features`, which is the cluster order of the shared ClusterModel.
struct ContributionMatrix {
  Matrix<double> scores;
  ScoreMode mode = ScoreMode::single;
  ScoreNormalize normalize = ScoreNormalize::none;
  std::vector<std::string> features;

  std::size_t feature_count() const { return scores.rows(); }
  std::size_t channel_count() const { return scores.cols(); }
  std::size_t feature_index(std::string_view feature) const;  // throws UnknownFeature
};

/// Squared activations of one image gated by its (resampled) memberships,
/// summed per cluster. per_layer_mean divides each layer by H_l * W_l.
/// Throws ShapeMismatch.
ContributionMatrix contribution_single(const ActivationStack& activations, const MembershipMap& membership,
                                       const LayerLayout& layout,
                                       ScoreNormalize normalize = ScoreNormalize::none,
                                       std::vector<std::string> features = {});

/// Elementwise max of a source and reference score. Throws ModeMismatch, ShapeMismatch.
ContributionMatrix contribution_pair(const ContributionMatrix& src, const ContributionMatrix& ref);

struct ScoredImage {
  const ActivationStack* activations = nullptr;
  const MembershipMap* membership = nullptr;
};

/// Mean over N images of the per-layer-mean single scores. Throws EmptyBatch, ShapeMismatch.
ContributionMatrix contribution_batch(std::span<const ScoredImage> images, const LayerLayout& layout,
                                      std::vector<std::string> features = {});

/// Stores `contrib/<image_id>` plus mode/normalize/features under the "contrib" manifest section.
void write_contribution(Bundle& bundle, std::string_view image_id, const ContributionMatrix& m);
ContributionMatrix read_contribution(const Bundle& bundle, std::string_view image_id);

}  // namespace ris
