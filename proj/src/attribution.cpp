#include "ris/attribution.hpp"

#include <algorithm>

#include "ris/error.hpp"

namespace ris {

std::string_view to_string(ScoreMode mode) {
  switch (mode) {
    case ScoreMode::batch: return "batch";
    case ScoreMode::pair: return "pair";
    case ScoreMode::single: return "single";
  }
  return "single";
}

std::string_view to_string(ScoreNormalize normalize) {
  return normalize == ScoreNormalize::none ? "none" : "per_layer_mean";
}

ScoreNormalize parse_normalize(std::string_view text) {
  if (text == "none") return ScoreNormalize::none;
  if (text == "per_layer_mean") return ScoreNormalize::per_layer_mean;
  throw Error(Errc::InvalidArgument, "normalize must be none or per_layer_mean, got '" + std::string(text) + "'");
}

std::size_t ContributionMatrix::feature_index(std::string_view feature) const {
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i] == feature) return i;
  }
  throw Error(Errc::UnknownFeature, "no feature '" + std::string(feature) + "'");
}

namespace {

std::vector<std::string> default_features(std::vector<std::string> features, std::size_t k) {
  if (features.empty()) return SemanticLabeling::unnamed(k).names();
  if (features.size() != k) {
    throw Error(Errc::ShapeMismatch, std::to_string(features.size()) + " feature names for " + std::to_string(k) +
                                         " clusters");
  }
  return features;
}

// Adds sum_{h,w} A^2 * U into `scores`, scaled by `scale(layer)`.
template <typename Scale>
void accumulate(const ActivationStack& a, const MembershipMap& m, const LayerLayout& layout,
                Matrix<double>& scores, Scale scale) {
  check_activation_shapes(a, layout);
  if (m.k != scores.rows()) {
    throw Error(Errc::ShapeMismatch, "membership has " + std::to_string(m.k) + " clusters, expected " +
                                         std::to_string(scores.rows()));
  }
  for (const auto& l : layout.layers()) {
    const TensorView& t = a.layer(l.name);
    const MembershipMap u = resample_membership(m, l.resolution, l.resolution);
    const std::size_t plane = l.resolution * l.resolution;
    const double s = scale(l);
    std::vector<double> per_cluster(m.k);
    for (std::size_t c = 0; c < l.channels; ++c) {
      std::ranges::fill(per_cluster, 0.0);
      const float* values = t.data().data() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = values[i];
        per_cluster[u.labels[i]] += v * v;
      }
      for (std::size_t k = 0; k < m.k; ++k) scores(k, l.style_offset + c) += per_cluster[k] * s;
    }
  }
}

}  // namespace

ContributionMatrix contribution_single(const ActivationStack& activations, const MembershipMap& membership,
                                       const LayerLayout& layout, ScoreNormalize normalize,
                                       std::vector<std::string> features) {
  ContributionMatrix out;
  out.mode = ScoreMode::single;
  out.normalize = normalize;
  out.features = default_features(std::move(features), membership.k);
  out.scores = Matrix<double>(membership.k, layout.total_channels(), 0.0);
  accumulate(activations, membership, layout, out.scores, [&](const LayerSpec& l) {
    return normalize == ScoreNormalize::per_layer_mean ? 1.0 / double(l.resolution * l.resolution) : 1.0;
  });
  return out;
}

ContributionMatrix contribution_pair(const ContributionMatrix& src, const ContributionMatrix& ref) {
  if (src.mode != ScoreMode::single || ref.mode != ScoreMode::single) {
    throw Error(Errc::ModeMismatch, "pair scores need two single-image scores");
  }
  if (src.normalize != ref.normalize) throw Error(Errc::ModeMismatch, "source and reference normalize differ");
  if (src.scores.rows() != ref.scores.rows() || src.scores.cols() != ref.scores.cols()) {
    throw Error(Errc::ShapeMismatch, "source and reference score shapes differ");
  }
  if (src.features != ref.features) throw Error(Errc::ShapeMismatch, "source and reference feature orders differ");
  ContributionMatrix out = src;
  out.mode = ScoreMode::pair;
  auto& dst = out.scores.values();
  const auto& other = ref.scores.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::max(dst[i], other[i]);
  return out;
}

ContributionMatrix contribution_batch(std::span<const ScoredImage> images, const LayerLayout& layout,
                                      std::vector<std::string> features) {
  if (images.empty()) throw Error(Errc::EmptyBatch, "batch scores need at least one image");
  const std::size_t k = images.front().membership->k;
  ContributionMatrix out;
  out.mode = ScoreMode::batch;
  out.normalize = ScoreNormalize::per_layer_mean;
  out.features = default_features(std::move(features), k);
  out.scores = Matrix<double>(k, layout.total_channels(), 0.0);
  const double n = static_cast<double>(images.size());
  for (const auto& img : images) {
    accumulate(*img.activations, *img.membership, layout, out.scores,
               [&](const LayerSpec& l) { return 1.0 / (n * double(l.resolution * l.resolution)); });
  }
  return out;
}

void write_contribution(Bundle& bundle, std::string_view image_id, const ContributionMatrix& m) {
  std::vector<float> values(m.scores.values().begin(), m.scores.values().end());
  bundle.put(contribution_tensor_name(image_id), Tensor({m.scores.rows(), m.scores.cols()}, std::move(values)));
  auto& section = bundle.metadata()["contrib"];
  section["features"] = m.features;
  section["images"][std::string(image_id)] = {{"mode", to_string(m.mode)}, {"normalize", to_string(m.normalize)}};
}

ContributionMatrix read_contribution(const Bundle& bundle, std::string_view image_id) {
  const auto name = contribution_tensor_name(image_id);
  if (!bundle.contains(name) || !bundle.metadata().contains("contrib")) {
    throw Error(Errc::InvalidBundle, "no contribution scores for '" + std::string(image_id) + "'");
  }
  const auto& section = bundle.metadata()["contrib"];
  const TensorView t = bundle.get(name);
  if (t.shape().size() != 2) throw Error(Errc::ShapeMismatch, name + " must be K x C");
  ContributionMatrix m;
  m.scores = Matrix<double>(t.shape()[0], t.shape()[1]);
  std::ranges::copy(t.data(), m.scores.values().begin());
  try {
    m.features = section.at("features").get<std::vector<std::string>>();
    const auto& info = section.at("images").at(std::string(image_id));
    const auto mode = info.at("mode").get<std::string>();
    m.mode = mode == "batch" ? ScoreMode::batch : mode == "pair" ? ScoreMode::pair : ScoreMode::single;
    m.normalize = parse_normalize(info.at("normalize").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidBundle, std::string("malformed contrib section: ") + e.what());
  }
  if (m.features.size() != m.scores.rows()) throw Error(Errc::ShapeMismatch, name + " rows do not match features");
  return m;
}

}  // namespace ris
