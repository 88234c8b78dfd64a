#include "ris/transfer.hpp"

#include <cmath>

#include "ris/error.hpp"

namespace ris {

MaskRow FeatureMask::row(std::string_view feature) const {
  for (std::size_t k = 0; k < features.size(); ++k) {
    if (features[k] == feature) {
      auto r = q.row(k);
      return {features[k], {r.begin(), r.end()}};
    }
  }
  throw Error(Errc::UnknownFeature, "mask has no feature '" + std::string(feature) + "'");
}

FeatureMask feature_mask(const ContributionMatrix& m, double tau, bool hard) {
  if (!(tau > 0.0)) throw Error(Errc::NonPositiveTau, "tau = " + std::to_string(tau));
  const std::size_t k = m.scores.rows();
  const std::size_t channels = m.scores.cols();
  FeatureMask out;
  out.q = Matrix<double>(k, channels, 0.0);
  out.features = m.features;
  out.tau = tau;
  out.hard = hard;
  if (k == 0) return out;

  std::vector<double> e(k);
  for (std::size_t c = 0; c < channels; ++c) {
    std::size_t arg = 0;
    for (std::size_t r = 1; r < k; ++r) {
      if (m.scores(r, c) > m.scores(arg, c)) arg = r;
    }
    if (hard) {
      out.q(arg, c) = 1.0;
      continue;
    }
    const double top = m.scores(arg, c) / tau;
    double sum = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      e[r] = std::exp(m.scores(r, c) / tau - top);
      sum += e[r];
    }
    for (std::size_t r = 0; r < k; ++r) out.q(r, c) = e[r] / sum;
  }
  return out;
}

MaskRow restrict_mask(MaskRow row, const LayerLayout& layout) {
  if (row.values.size() != layout.total_channels()) {
    throw Error(Errc::LengthMismatch, "mask length " + std::to_string(row.values.size()));
  }
  if (row.feature == kHairFeature || row.feature == kPoseFeature) return row;
  const ChannelRange coarse = layout.coarse_range();
  std::fill(row.values.begin() + coarse.begin, row.values.begin() + coarse.end, 0.0);
  return row;
}

MaskRow pose_mask(const MaskRow& hair, const LayerLayout& layout) {
  if (hair.values.size() != layout.total_channels()) {
    throw Error(Errc::LengthMismatch, "hair mask length " + std::to_string(hair.values.size()));
  }
  MaskRow pose{std::string(kPoseFeature), std::vector<double>(hair.values.size(), 0.0)};
  const ChannelRange coarse = layout.coarse_range();
  for (std::size_t c = coarse.begin; c < coarse.end; ++c) {
    const double h = hair.values[c];
    if (!(h >= 0.0 && h <= 1.0)) throw Error(Errc::InvalidArgument, "hair mask entry outside [0,1]");
    pose.values[c] = 1.0 - h;
  }
  return pose;
}

MaskRow transfer_mask(const FeatureMask& mask, std::string_view feature, const LayerLayout& layout,
                      bool restrict_coarse) {
  if (feature == kPoseFeature) return pose_mask(mask.row(kHairFeature), layout);
  MaskRow row = mask.row(feature);
  return restrict_coarse ? restrict_mask(std::move(row), layout) : row;
}

TransferResult transfer_style(const StyleVector& source, const StyleVector& reference,
                              std::span<const double> mask, double alpha) {
  const std::size_t n = source.values.size();
  if (reference.values.size() != n || mask.size() != n) {
    throw Error(Errc::LengthMismatch, "source " + std::to_string(n) + ", reference " +
                                          std::to_string(reference.values.size()) + ", mask " +
                                          std::to_string(mask.size()));
  }
  TransferResult out;
  out.generated.image_id = source.image_id;
  out.generated.values.resize(n);
  out.direction.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    const double s = source.values[c];
    const double r = reference.values[c];
    out.direction[c] = mask[c] * (r - s);
    // lerp is exact at both endpoints, so a zero step keeps sigma_s and a full
    // step reproduces sigma_r bit-for-bit.
    const double t = alpha * mask[c];
    out.generated.values[c] = t == 0.0 ? source.values[c] : static_cast<float>(std::lerp(s, r, t));
  }
  return out;
}

}  // namespace ris
