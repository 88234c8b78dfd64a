#include "ris/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ris/error.hpp"
#include "ris/parallel.hpp"

namespace ris {

namespace {

constexpr double kZeroNorm = 1e-12;

// Hot loop of the scan; -fopenmp-simd lets the reduction vectorize.
double dot_f32(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

// Float partial sums over short blocks, double across blocks. Each block's
// rounding is at most ~(kBlock+1)*2^-24 of sum|a_i b_i| <= |a||b|, so the
// cosine is off by less than kApproxError.
constexpr std::size_t kBlock = 256;
constexpr double kApproxError = 2e-5;

double dot_f32_blocked(const float* a, const float* b, std::size_t n) {
  double total = 0.0;
  for (std::size_t s = 0; s < n; s += kBlock) {
    const std::size_t e = std::min(n, s + kBlock);
    float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
    for (std::size_t i = s; i < e; ++i) acc += a[i] * b[i];
    total += acc;
  }
  return total;
}

// 1 - cos loses everything below ~1e-16 to cancellation; near-duplicates are
// rescored as half the squared chord between the unit vectors.
constexpr double kRescoreBelow = 1e-8;

double chord_distance(const float* a, double na, const float* b, double nb, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(a[i]) / na - double(b[i]) / nb;
    acc += d * d;
  }
  return 0.5 * acc;
}

double scan_distance(const float* row, double row_norm, const float* q, double qnorm, std::size_t n) {
  const double d = std::clamp(1.0 - dot_f32(row, q, n) / (qnorm * row_norm), 0.0, 2.0);
  return d < kRescoreBelow ? chord_distance(row, row_norm, q, qnorm, n) : d;
}

void check_stats(const NormalizationStats& stats, const LayerLayout& layout) {
  bool ok = stats.layers.size() == layout.layer_count() && stats.mean.size() == stats.layers.size() &&
            stats.stddev.size() == stats.layers.size();
  for (std::size_t l = 0; ok && l < stats.layers.size(); ++l) ok = stats.layers[l] == layout.layers()[l].name;
  if (!ok) throw Error(Errc::LayoutMismatch, "normalization stats do not match the layout");
}

}  // namespace

nlohmann::json NormalizationStats::to_json() const {
  return {{"layers", layers}, {"mean", mean}, {"std", stddev}};
}

NormalizationStats NormalizationStats::from_json(const nlohmann::json& j) {
  NormalizationStats s;
  try {
    s.layers = j.at("layers").get<std::vector<std::string>>();
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stddev = j.at("std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidBundle, std::string("malformed normalization stats: ") + e.what());
  }
  return s;
}

NormalizationStats compute_norm_stats(std::span<const StyleVector> styles, const LayerLayout& layout) {
  if (styles.size() < 2) throw Error(Errc::InvalidArgument, "normalization stats need at least 2 images");
  for (const auto& s : styles) {
    if (s.values.size() != layout.total_channels()) {
      throw Error(Errc::LengthMismatch, "style '" + s.image_id + "' has " + std::to_string(s.values.size()) +
                                            " values");
    }
  }
  NormalizationStats stats;
  for (std::size_t l = 0; l < layout.layer_count(); ++l) {
    const ChannelRange r = layout.channel_range(l);
    const double count = double(styles.size()) * double(r.size());
    double sum = 0.0;
    for (const auto& s : styles) {
      for (std::size_t c = r.begin; c < r.end; ++c) sum += s.values[c];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (const auto& s : styles) {
      for (std::size_t c = r.begin; c < r.end; ++c) {
        const double d = s.values[c] - mean;
        sq += d * d;
      }
    }
    const double sd = std::sqrt(sq / count);
    if (!(sd > 0.0)) {
      throw Error(Errc::DegenerateLayer, "layer '" + layout.layers()[l].name + "' has zero standard deviation");
    }
    stats.layers.push_back(layout.layers()[l].name);
    stats.mean.push_back(mean);
    stats.stddev.push_back(sd);
  }
  return stats;
}

StyleVector normalize(const StyleVector& sigma, const NormalizationStats& stats, const LayerLayout& layout) {
  check_stats(stats, layout);
  if (sigma.values.size() != layout.total_channels()) {
    throw Error(Errc::LayoutMismatch, "style length " + std::to_string(sigma.values.size()) + " vs layout " +
                                          std::to_string(layout.total_channels()));
  }
  StyleVector out{sigma.image_id, std::vector<float>(sigma.values.size())};
  for (std::size_t l = 0; l < layout.layer_count(); ++l) {
    const ChannelRange r = layout.channel_range(l);
    for (std::size_t c = r.begin; c < r.end; ++c) {
      out.values[c] = static_cast<float>((double(sigma.values[c]) - stats.mean[l]) / stats.stddev[l]);
    }
  }
  return out;
}

FeatureEmbedding embed(const StyleVector& sigma_norm, const MaskRow& mask) {
  if (sigma_norm.values.size() != mask.values.size()) {
    throw Error(Errc::LengthMismatch, "style " + std::to_string(sigma_norm.values.size()) + " vs mask " +
                                          std::to_string(mask.values.size()));
  }
  FeatureEmbedding e{sigma_norm.image_id, mask.feature, std::vector<float>(mask.values.size())};
  for (std::size_t c = 0; c < e.values.size(); ++c) {
    e.values[c] = static_cast<float>(mask.values[c] * double(sigma_norm.values[c]));
  }
  return e;
}

double cosine_distance(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) {
    throw Error(Errc::LengthMismatch, std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  const double nu = std::sqrt(dot_f32(u.data(), u.data(), u.size()));
  const double nv = std::sqrt(dot_f32(v.data(), v.data(), v.size()));
  if (nu < kZeroNorm || nv < kZeroNorm) return 2.0;
  return scan_distance(u.data(), nu, v.data(), nv, u.size());
}

RetrievalIndex::RetrievalIndex(std::vector<std::string> ids, std::vector<std::string> features, std::size_t dims)
    : ids_(std::move(ids)), features_(std::move(features)), dims_(dims) {
  for (std::size_t f = 0; f < features_.size(); ++f) {
    auto m = std::make_shared<std::vector<float>>(ids_.size() * dims_, 0.0f);
    matrices_.emplace_back(m->data(), m->size());
    owned_.push_back(std::move(m));
    zero_.emplace_back(ids_.size(), std::uint8_t{0});
    norms_.emplace_back(ids_.size(), 0.0);
  }
}

std::size_t RetrievalIndex::feature_index(std::string_view feature) const {
  for (std::size_t f = 0; f < features_.size(); ++f) {
    if (features_[f] == feature) return f;
  }
  throw Error(Errc::UnknownFeature, "index has no feature '" + std::string(feature) + "'");
}

std::optional<std::size_t> RetrievalIndex::image_index(std::string_view id) const {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] == id) return i;
  }
  return std::nullopt;
}

std::span<const float> RetrievalIndex::row(std::size_t feature, std::size_t image) const {
  return matrices_.at(feature).subspan(image * dims_, dims_);
}

void RetrievalIndex::set_row(std::size_t feature, std::size_t image, std::span<const float> embedding) {
  if (feature >= owned_.size() || !owned_[feature]) throw Error(Errc::InvalidArgument, "index is read-only");
  if (embedding.size() != dims_) {
    throw Error(Errc::LengthMismatch, "embedding length " + std::to_string(embedding.size()));
  }
  const double norm = std::sqrt(dot_f32(embedding.data(), embedding.data(), embedding.size()));
  float* dst = owned_[feature]->data() + image * dims_;
  if (norm < kZeroNorm) {
    std::fill(dst, dst + dims_, 0.0f);
    zero_[feature][image] = 1;
    norms_[feature][image] = 0.0;
    return;
  }
  for (std::size_t c = 0; c < dims_; ++c) dst[c] = static_cast<float>(double(embedding[c]) / norm);
  zero_[feature][image] = 0;
  norms_[feature][image] = std::sqrt(dot_f32(dst, dst, dims_));
}

RetrievalIndex assemble_index(const IndexSource& source, const NormalizationStats& stats,
                              const std::vector<std::string>& features, const IndexOptions& options) {
  RetrievalIndex index(source.ids, features, source.layout.total_channels());
  index.layout = source.layout;
  index.stats = stats;
  parallel_for(source.ids.size(), resolve_threads(options.threads), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const ContributionMatrix scores = options.shared_scores ? *options.shared_scores : source.scores(i);
      const FeatureMask mask = feature_mask(scores, options.tau, options.hard);
      const StyleVector sigma_norm = normalize(source.style(i), stats, source.layout);
      for (std::size_t f = 0; f < features.size(); ++f) {
        index.set_row(f, i, embed(sigma_norm, mask.row(features[f])).values);
      }
    }
  });
  index.provenance = {{"tau", options.tau},
                      {"normalize", to_string(options.normalize)},
                      {"hard", options.hard},
                      {"mask_source", options.shared_scores ? "shared" : "per_image"}};
  return index;
}

RetrievalIndex build_index(const Bundle& bundle, const ClusterModel& model, const SemanticLabeling& labeling,
                           const std::vector<std::string>& features, const IndexOptions& options) {
  if (labeling.size() != model.k) {
    throw Error(Errc::InvalidArgument, "labeling has " + std::to_string(labeling.size()) + " names for k=" +
                                           std::to_string(model.k));
  }
  for (const auto& f : features) {
    if (!labeling.index_of(f)) throw Error(Errc::UnknownFeature, "labeling has no feature '" + f + "'");
  }
  const LayerLayout& layout = bundle.layout();
  const auto& ids = bundle.images();
  std::vector<StyleVector> styles;
  styles.reserve(ids.size());
  for (const auto& id : ids) {
    styles.push_back(read_style(bundle, id));
    if (!options.shared_scores) read_activations(bundle, id);  // fail early on missing layers
  }
  const NormalizationStats stats = compute_norm_stats(styles, layout);

  IndexSource source;
  source.ids = ids;
  source.layout = layout;
  source.style = [&](std::size_t i) { return styles[i]; };
  source.scores = [&](std::size_t i) {
    const ActivationStack acts = read_activations(bundle, ids[i]);
    const MembershipMap m = assign(model, acts, model.clustering_layer);
    return contribution_single(acts, m, layout, options.normalize, labeling.names());
  };
  RetrievalIndex index = assemble_index(source, stats, features, options);
  index.model = model;
  index.labeling = labeling;
  index.provenance["cluster_model"] = cluster_model_scalars(model);
  index.provenance["labels"] = labeling.to_json();
  return index;
}

FeatureEmbedding embed_image(const RetrievalIndex& index, const StyleVector& style,
                             const ActivationStack& activations, std::string_view feature) {
  if (!index.model) throw Error(Errc::InvalidArgument, "index carries no cluster model");
  index.feature_index(feature);
  const ClusterModel& model = *index.model;
  const MembershipMap m = assign(model, activations, model.clustering_layer);
  const auto normalize_mode = parse_normalize(index.provenance.value("normalize", "none"));
  const ContributionMatrix scores =
      contribution_single(activations, m, index.layout, normalize_mode, index.labeling.names());
  const FeatureMask mask =
      feature_mask(scores, index.provenance.value("tau", 0.1), index.provenance.value("hard", false));
  return embed(normalize(style, index.stats, index.layout), mask.row(feature));
}

std::vector<Hit> query(const RetrievalIndex& index, std::span<const float> embedding, std::string_view feature,
                       std::size_t k, Direction direction, unsigned threads) {
  const std::size_t f = index.feature_index(feature);
  const std::size_t n = index.size();
  if (k < 1 || k > n) throw Error(Errc::BadK, "k=" + std::to_string(k) + " for " + std::to_string(n) + " images");
  if (embedding.size() != index.dims()) {
    throw Error(Errc::LengthMismatch, "query length " + std::to_string(embedding.size()) + " vs index " +
                                          std::to_string(index.dims()));
  }
  const double qnorm = std::sqrt(dot_f32(embedding.data(), embedding.data(), embedding.size()));
  const bool live = qnorm >= kZeroNorm;
  const float* base = index.matrix(f).data();
  const std::size_t dims = index.dims();
  const unsigned workers = resolve_threads(threads);
  auto exact = [&](std::size_t i) {
    if (!live || index.zero_row(f, i)) return 2.0;
    return scan_distance(base + i * dims, index.row_norm(f, i), embedding.data(), qnorm, dims);
  };

  // Pass 1: float scan, within kApproxError of the exact distance.
  std::vector<double> approx(n, 2.0);
  if (live) {
    parallel_for(n, workers, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        if (index.zero_row(f, i)) continue;
        const double c = dot_f32_blocked(base + i * dims, embedding.data(), dims) / (qnorm * index.row_norm(f, i));
        approx[i] = std::clamp(1.0 - c, 0.0, 2.0);
      }
    });
  }
  // Pass 2: every row that could reach the top k is rescored exactly.
  std::vector<double> sorted = approx;
  const auto kth = sorted.begin() + static_cast<std::ptrdiff_t>(direction == Direction::nearest ? k - 1 : n - k);
  std::nth_element(sorted.begin(), kth, sorted.end());
  const double bound = *kth;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    const bool reachable = direction == Direction::nearest ? approx[i] <= bound + 2 * kApproxError
                                                           : approx[i] >= bound - 2 * kApproxError;
    if (reachable) order.push_back(i);
  }
  std::vector<double> dist(order.size());
  parallel_for(order.size(), workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) dist[j] = exact(order[j]);
  });
  std::vector<std::size_t> pos(order.size());
  std::iota(pos.begin(), pos.end(), 0);
  auto nearer = [&](std::size_t a, std::size_t b) {
    return dist[a] < dist[b] || (dist[a] == dist[b] && order[a] < order[b]);
  };
  const auto top = pos.begin() + static_cast<std::ptrdiff_t>(k);
  if (direction == Direction::nearest) {
    std::partial_sort(pos.begin(), top, pos.end(), nearer);
  } else {
    std::partial_sort(pos.begin(), top, pos.end(), [&](std::size_t a, std::size_t b) { return nearer(b, a); });
  }
  std::vector<Hit> hits;
  hits.reserve(k);
  for (std::size_t r = 0; r < k; ++r) hits.push_back({order[pos[r]], index.ids()[order[pos[r]]], dist[pos[r]]});
  return hits;
}

std::vector<Hit> query_image(const RetrievalIndex& index, std::string_view image_id, std::string_view feature,
                             std::size_t k, Direction direction, unsigned threads) {
  const auto row = index.image_index(image_id);
  if (!row) throw Error(Errc::InvalidArgument, "image '" + std::string(image_id) + "' is not indexed");
  return query(index, index.row(index.feature_index(feature), *row), feature, k, direction, threads);
}

std::vector<Hit> neighbours_excluding_self(const RetrievalIndex& index, std::string_view image_id,
                                           std::string_view feature, std::size_t count, unsigned threads) {
  if (count < 1 || count + 1 > index.size()) {
    throw Error(Errc::BadK, "cannot retrieve " + std::to_string(count) + " neighbours from " +
                                std::to_string(index.size()) + " images");
  }
  auto hits = query_image(index, image_id, feature, count + 1, Direction::nearest, threads);
  std::erase_if(hits, [&](const Hit& h) { return h.image_id == image_id; });
  hits.resize(count);
  return hits;
}

void save_index(const RetrievalIndex& index, const std::filesystem::path& dir) {
  Bundle b(index.layout, index.ids());
  nlohmann::json zero_rows = nlohmann::json::object();
  for (std::size_t f = 0; f < index.features().size(); ++f) {
    const auto& feature = index.features()[f];
    if (f < index.owned_.size() && index.owned_[f]) {
      b.put_shared(embedding_tensor_name(feature), {index.size(), index.dims()}, index.owned_[f]);
    } else {
      auto m = index.matrix(f);
      b.put(embedding_tensor_name(feature), Tensor({index.size(), index.dims()}, {m.begin(), m.end()}));
    }
    std::vector<std::size_t> zeros;
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index.zero_row(f, i)) zeros.push_back(i);
    }
    zero_rows[feature] = zeros;
  }
  nlohmann::json meta = {{"features", index.features()},
                         {"zero_rows", zero_rows},
                         {"norm_stats", index.stats.to_json()},
                         {"provenance", index.provenance}};
  if (index.model) {
    b.put("centroids", Tensor({index.model->centroids.rows(), index.model->centroids.cols()},
                              index.model->centroids.values()));
    meta["cluster_model"] = cluster_model_scalars(*index.model);
    meta["labels"] = index.labeling.to_json();
  }
  b.metadata()["index"] = std::move(meta);
  save_bundle(b, dir);
}

RetrievalIndex load_index(const std::filesystem::path& dir) {
  const Bundle b = load_bundle(dir);
  if (!b.metadata().contains("index")) throw Error(Errc::InvalidBundle, dir.string() + " is not a retrieval index");
  const auto& meta = b.metadata()["index"];
  RetrievalIndex index;
  try {
    index.ids_ = b.images();
    index.features_ = meta.at("features").get<std::vector<std::string>>();
    index.dims_ = b.layout().total_channels();
    index.layout = b.layout();
    index.stats = NormalizationStats::from_json(meta.at("norm_stats"));
    index.provenance = meta.at("provenance");
    for (const auto& feature : index.features_) {
      const TensorView v = b.get(embedding_tensor_name(feature));
      if (v.shape() != Shape{index.ids_.size(), index.dims_}) {
        throw Error(Errc::ShapeMismatch, embedding_tensor_name(feature) + " has shape " + shape_string(v.shape()));
      }
      index.matrices_.push_back(v.data());
      index.keepalive_.push_back(std::make_shared<TensorView>(v));
      std::vector<std::uint8_t> zero(index.ids_.size(), 0);
      for (std::size_t i : meta.at("zero_rows").at(feature).get<std::vector<std::size_t>>()) zero.at(i) = 1;
      std::vector<double> norms(index.ids_.size(), 0.0);
      const float* base = v.data().data();
      for (std::size_t i = 0; i < norms.size(); ++i) {
        if (!zero[i]) norms[i] = std::sqrt(dot_f32(base + i * index.dims_, base + i * index.dims_, index.dims_));
      }
      index.zero_.push_back(std::move(zero));
      index.norms_.push_back(std::move(norms));
    }
    if (meta.contains("cluster_model")) {
      ClusterModel m;
      const auto& s = meta["cluster_model"];
      m.k = s.at("k").get<std::size_t>();
      m.objective = s.at("objective").get<double>();
      m.iterations_run = s.at("iterations_run").get<std::size_t>();
      m.seed = s.at("seed").get<std::uint64_t>();
      m.max_iter = s.at("max_iter").get<std::size_t>();
      m.tol = s.at("tol").get<double>();
      m.clustering_layer = s.at("clustering_layer").get<std::string>();
      const TensorView c = b.get("centroids");
      m.centroids = Matrix<float>(c.shape().at(0), c.shape().at(1));
      std::ranges::copy(c.data(), m.centroids.values().begin());
      index.labeling = SemanticLabeling::from_json(meta.at("labels"), m.k);
      index.model = std::move(m);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidBundle, std::string("malformed index manifest: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw Error(Errc::InvalidBundle, std::string("malformed index manifest: ") + e.what());
  }
  return index;
}

}  // namespace ris
