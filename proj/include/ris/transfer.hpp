#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ris/attribution.hpp"
#include "ris/bundle.hpp"
#include "ris/layout.hpp"

namespace ris {

inline constexpr std::string_view kHairFeature = "hair";
inline constexpr std::string_view kPoseFeature = "pose";

struct TransferConfig {
  double tau = 0.1;
  double alpha = 1.3;
  bool restrict_coarse = true;
};

/// One feature's channel mask.
struct MaskRow {
  std::string feature;
  std::vector<double> values;
};

/// Soft (column-stochastic) or hard (one-hot per column) channel-to-feature assignment.
struct FeatureMask {
  Matrix<double> q;  // K x C_total
  std::vector<std::string> features;
  double tau = 0.1;
  bool hard = false;

  /// Throws UnknownFeature.
  MaskRow row(std::string_view feature) const;
};

/// Column-wise softmax of scores / tau, or its argmax one-hot when `hard`.
/// Throws NonPositiveTau.
FeatureMask feature_mask(const ContributionMatrix& m, double tau, bool hard = false);

/// Zeroes the coarse channel range for every feature except hair and pose.
MaskRow restrict_mask(MaskRow row, const LayerLayout& layout);

/// 1 - q_hair on the coarse range, 0 elsewhere.
MaskRow pose_mask(const MaskRow& hair, const LayerLayout& layout);

/// The mask applied when transferring `feature`: pose is derived from the hair
/// row, other features are read from `mask` and optionally coarse-restricted.
MaskRow transfer_mask(const FeatureMask& mask, std::string_view feature, const LayerLayout& layout,
                      bool restrict_coarse);

struct TransferResult {
  StyleVector generated;
  std::vector<double> direction;  // q (.) (sigma_r - sigma_s)
};

/// sigma_s + alpha * q (.) (sigma_r - sigma_s). Throws LengthMismatch.
TransferResult transfer_style(const StyleVector& source, const StyleVector& reference,
                              std::span<const double> mask, double alpha);

}  // namespace ris
