#include "ris/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "ris/attribution.hpp"
#include "ris/bundle.hpp"
#include "ris/error.hpp"
#include "ris/evaluation.hpp"
#include "ris/parallel.hpp"
#include "ris/retrieval.hpp"
#include "ris/spherical_kmeans.hpp"
#include "ris/toy_generator.hpp"
#include "ris/transfer.hpp"

namespace ris {

namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = std::min(text.find(',', start), text.size());
    if (comma > start) out.push_back(text.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(9) << v;
  return ss.str();
}

SemanticLabeling labels_for(const std::string& file, std::size_t k) {
  return file.empty() ? SemanticLabeling::unnamed(k) : SemanticLabeling::load(file, k);
}

std::vector<std::string> first_images(const std::vector<std::string>& ids, std::size_t limit) {
  if (limit == 0 || limit >= ids.size()) return ids;
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(limit)};
}

void write_f32(const fs::path& file, std::span<const float> values) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw Error(Errc::IoFailure, "cannot write " + file.string());
}

std::vector<float> read_f32(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot read " + file.string());
  const auto bytes = fs::file_size(file);
  if (bytes % 4 != 0) throw Error(Errc::ShapeMismatch, file.string() + " is not a whole number of f32 values");
  std::vector<float> v(bytes / 4);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  return v;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::trunc);
  out << text;
  if (!out) throw Error(Errc::IoFailure, "cannot write " + file.string());
}

ContributionMatrix image_scores(const Bundle& bundle, const ClusterModel& model, const SemanticLabeling& labels,
                                std::string_view id, ScoreNormalize normalize) {
  const ActivationStack acts = read_activations(bundle, id);
  const MembershipMap m = assign(model, acts, model.clustering_layer);
  return contribution_single(acts, m, bundle.layout(), normalize, labels.names());
}

ContributionMatrix batch_scores(const Bundle& bundle, const ClusterModel& model, const SemanticLabeling& labels,
                                const std::vector<std::string>& ids, unsigned threads) {
  std::vector<ActivationStack> acts(ids.size());
  std::vector<MembershipMap> members(ids.size());
  parallel_for(ids.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      acts[i] = read_activations(bundle, ids[i]);
      members[i] = assign(model, acts[i], model.clustering_layer);
    }
  });
  std::vector<ScoredImage> scored;
  for (std::size_t i = 0; i < ids.size(); ++i) scored.push_back({&acts[i], &members[i]});
  return contribution_batch(scored, bundle.layout(), labels.names());
}

std::string layer_of(const LayerLayout& layout, std::size_t channel) {
  return layout.layers()[layout.layer_of_channel(channel)].name;
}

struct Common {
  unsigned threads = 0;
  std::string format = "tsv";
};

void add_threads(CLI::App* app, Common& c) {
  app->add_option("--threads", c.threads, "worker count (default RIS_THREADS or all cores)");
}

void add_format(CLI::App* app, Common& c) {
  app->add_option("--format", c.format, "output format")->check(CLI::IsMember({"tsv", "json"}));
}

// ---------------------------------------------------------------- fixture

struct FixtureArgs {
  std::size_t regions = 4;
  std::string layers = "4:8,8:8,16:8";
  std::size_t images = 64;
  std::string groups;
  std::size_t group_size = 0;
  std::size_t coarse_layers = 1;
  std::uint64_t seed = 0;
  std::string out;
};

void run_fixture(const FixtureArgs& a, std::ostream& out, std::ostream& err) {
  const ToyGenerator gen = make_toy(a.regions, parse_toy_layers(a.layers), a.seed, a.coarse_layers);
  std::vector<GroupSpec> groups;
  if (!a.groups.empty()) {
    std::ifstream in(a.groups);
    if (!in) throw Error(Errc::IoFailure, "cannot read " + a.groups);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::BadGroupSpec, a.groups + ": " + e.what());
    }
    groups = parse_group_spec(j, a.images, a.regions, a.seed);
  } else if (a.group_size > 0) {
    groups = planted_groups(a.images, a.regions, a.group_size, a.seed);
  }
  Bundle bundle = make_fixture(gen, a.images, groups, a.seed + 1);
  save_bundle(bundle, a.out);

  // identity = group in region 0 when there is one
  const auto& region_groups = bundle.metadata()["fixture"]["region_groups"];
  std::ostringstream ids;
  ids << "image_id,identity_id\n";
  for (std::size_t i = 0; i < a.images; ++i) {
    const long g = region_groups[0][i].get<long>();
    ids << bundle.images()[i] << "," << (g >= 0 ? "group" + std::to_string(g) : bundle.images()[i]) << "\n";
  }
  write_text(fs::path(a.out) / "identities.csv", ids.str());

  // one attribute per region: scaled mean style on that region's channels
  std::ostringstream attrs;
  attrs << "image_id";
  for (std::size_t r = 0; r < a.regions; ++r) attrs << ",region" << r << "_high";
  attrs << "\n";
  for (const auto& id : bundle.images()) {
    const StyleVector s = read_style(bundle, id);
    attrs << id;
    for (std::size_t r = 0; r < a.regions; ++r) {
      double sum = 0;
      const auto channels = gen.channels_of_region(r);
      for (std::size_t c : channels) sum += s.values[c];
      const double score = std::clamp((sum / double(channels.size()) - 0.25) / 1.75, 0.0, 1.0);
      attrs << "," << fmt(score);
    }
    attrs << "\n";
  }
  write_text(fs::path(a.out) / "attributes.csv", attrs.str());

  err << "wrote " << a.images << " images, " << groups.size() << " groups to " << a.out << "\n";
  out << "images\t" << a.images << "\nregions\t" << a.regions << "\nchannels\t" << gen.layout.total_channels()
      << "\ngroups\t" << groups.size() << "\n";
}

// ---------------------------------------------------------------- cluster

struct ClusterArgs {
  Common common;
  std::string bundle;
  std::string layer;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  double tol = 1e-4;
  std::size_t images = 0;
  std::string out;
  std::string labels_out;
};

void run_cluster(const ClusterArgs& a, std::ostream& out, std::ostream& err) {
  const Bundle bundle = load_bundle(a.bundle);
  const std::string layer = a.layer.empty() ? default_clustering_layer(bundle.layout()) : a.layer;
  const LayerSpec& spec = bundle.layout().layer(layer);
  const auto ids = first_images(bundle.images(), a.images);
  const std::size_t cells = spec.resolution * spec.resolution;
  Matrix<float> points(ids.size() * cells, spec.channels);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TensorView view = bundle.get(activation_tensor_name(ids[i], layer));
    if (view.shape() != Shape{spec.channels, spec.resolution, spec.resolution}) {
      throw Error(Errc::ShapeMismatch, "activation " + ids[i] + "/" + layer + " is " + shape_string(view.shape()));
    }
    const Matrix<float> p = spatial_points(view);
    std::copy(p.values().begin(), p.values().end(), points.values().begin() + static_cast<std::ptrdiff_t>(i * p.values().size()));
  }
  err << "clustering " << points.rows() << " points of layer " << layer << "\n";
  KMeansOptions opt;
  opt.k = a.k;
  opt.seed = a.seed;
  opt.max_iter = a.max_iter;
  opt.tol = a.tol;
  opt.threads = resolve_threads(a.common.threads);
  ClusterModel model = fit(points, opt);
  model.clustering_layer = layer;
  save_cluster_model(model, a.out);
  if (!a.labels_out.empty()) write_text(a.labels_out, SemanticLabeling::unnamed(model.k).to_json().dump(2) + "\n");

  if (a.common.format == "json") {
    out << cluster_model_scalars(model).dump(2) << "\n";
  } else {
    out << "k\t" << model.k << "\nlayer\t" << layer << "\npoints\t" << points.rows() << "\nobjective\t"
        << fmt(model.objective) << "\niterations\t" << model.iterations_run << "\n";
  }
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
  Common common;
  std::string bundle;
  std::string clusters;
  std::string labels;
  std::string mode = "single";
  std::string image;
  std::string reference;
  std::size_t images = 0;
  std::string normalize = "none";
  std::size_t top = 0;
  bool save = false;
};

void run_score(const ScoreArgs& a, std::ostream& out, std::ostream& err) {
  Bundle bundle = load_bundle(a.bundle);
  const ClusterModel model = load_cluster_model(a.clusters);
  const SemanticLabeling labels = labels_for(a.labels, model.k);
  const ScoreNormalize normalize = parse_normalize(a.normalize);
  ContributionMatrix m;
  std::string key;
  if (a.mode == "batch") {
    const auto ids = first_images(bundle.images(), a.images);
    if (ids.empty()) throw Error(Errc::EmptyBatch, "bundle has no images");
    err << "batch scores over " << ids.size() << " images\n";
    m = batch_scores(bundle, model, labels, ids, resolve_threads(a.common.threads));
    key = "batch";
  } else {
    if (a.image.empty()) throw Error(Errc::InvalidArgument, "--image is required for mode " + a.mode);
    m = image_scores(bundle, model, labels, a.image, normalize);
    key = a.image;
    if (a.mode == "pair") {
      if (a.reference.empty()) throw Error(Errc::InvalidArgument, "--reference is required for mode pair");
      m = contribution_pair(m, image_scores(bundle, model, labels, a.reference, normalize));
      key = a.image + "+" + a.reference;
    }
  }
  if (a.save) {
    write_contribution(bundle, key, m);
    save_bundle(bundle, a.bundle);
    err << "stored " << contribution_tensor_name(key) << "\n";
  }

  nlohmann::json rows = nlohmann::json::array();
  if (a.common.format == "tsv") out << "feature\tchannel\tlayer\tscore\n";
  for (std::size_t k = 0; k < m.feature_count(); ++k) {
    std::vector<std::size_t> order(m.channel_count());
    for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
    if (a.top > 0) order = top_n_indices(m.scores.row(k), a.top);
    for (std::size_t c : order) {
      const std::string layer = layer_of(bundle.layout(), c);
      if (a.common.format == "tsv") {
        out << m.features[k] << "\t" << c << "\t" << layer << "\t" << fmt(m.scores(k, c)) << "\n";
      } else {
        rows.push_back({{"feature", m.features[k]}, {"channel", c}, {"layer", layer}, {"score", m.scores(k, c)}});
      }
    }
  }
  if (a.common.format == "json") {
    out << nlohmann::json{{"mode", to_string(m.mode)}, {"normalize", to_string(m.normalize)}, {"scores", rows}}.dump(2)
        << "\n";
  }
}

// ---------------------------------------------------------------- transfer

struct TransferArgs {
  Common common;
  std::string bundle;
  std::string clusters;
  std::string labels;
  std::string source;
  std::string reference;
  std::string feature;
  double alpha = 1.3;
  double tau = 0.1;
  bool hard = false;
  bool no_restrict = false;
  std::string normalize = "none";
  std::string out;
};

void run_transfer(const TransferArgs& a, std::ostream& out, std::ostream& err) {
  if (a.alpha < -2.0 || a.alpha > 3.0) err << "warning: alpha " << a.alpha << " is outside [-2, 3]\n";
  if (!(a.tau > 0.0)) throw Error(Errc::NonPositiveTau, "tau must be positive");
  const Bundle bundle = load_bundle(a.bundle);
  const ClusterModel model = load_cluster_model(a.clusters);
  const SemanticLabeling labels = labels_for(a.labels, model.k);
  const ScoreNormalize normalize = parse_normalize(a.normalize);
  const StyleVector s = read_style(bundle, a.source);
  const StyleVector r = read_style(bundle, a.reference);
  const ContributionMatrix m = contribution_pair(image_scores(bundle, model, labels, a.source, normalize),
                                                 image_scores(bundle, model, labels, a.reference, normalize));
  const FeatureMask mask = feature_mask(m, a.tau, a.hard);
  const MaskRow row = transfer_mask(mask, a.feature, bundle.layout(), !a.no_restrict);
  const TransferResult result = transfer_style(s, r, row.values, a.alpha);
  write_f32(a.out, result.generated.values);

  std::vector<std::size_t> order(s.values.size());
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
  std::vector<double> moved(s.values.size());
  for (std::size_t c = 0; c < moved.size(); ++c) moved[c] = std::abs(double(result.generated.values[c]) - s.values[c]);
  order = top_n_indices(moved, 20);
  nlohmann::json rows = nlohmann::json::array();
  if (a.common.format == "tsv") out << "rank\tchannel\tlayer\tmask\tsource\tgenerated\tdelta\n";
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t c = order[i];
    const double delta = double(result.generated.values[c]) - s.values[c];
    if (a.common.format == "tsv") {
      out << i + 1 << "\t" << c << "\t" << layer_of(bundle.layout(), c) << "\t" << fmt(row.values[c]) << "\t"
          << fmt(s.values[c]) << "\t" << fmt(result.generated.values[c]) << "\t" << fmt(delta) << "\n";
    } else {
      rows.push_back({{"rank", i + 1},
                      {"channel", c},
                      {"layer", layer_of(bundle.layout(), c)},
                      {"mask", row.values[c]},
                      {"source", s.values[c]},
                      {"generated", result.generated.values[c]},
                      {"delta", delta}});
    }
  }
  if (a.common.format == "json") out << nlohmann::json{{"feature", a.feature}, {"alpha", a.alpha}, {"moved", rows}}.dump(2) << "\n";
  err << "wrote " << result.generated.values.size() << " coefficients to " << a.out << "\n";
}

// ---------------------------------------------------------------- index

struct IndexBuildArgs {
  Common common;
  std::string bundle;
  std::string clusters;
  std::string labels;
  std::string features;
  double tau = 0.1;
  std::string normalize = "none";
  bool hard = false;
  std::size_t batch_baseline = 0;
  std::string out;
};

void run_index_build(const IndexBuildArgs& a, std::ostream& out, std::ostream& err) {
  if (!(a.tau > 0.0)) throw Error(Errc::NonPositiveTau, "tau must be positive");
  const Bundle bundle = load_bundle(a.bundle);
  const ClusterModel model = load_cluster_model(a.clusters);
  const SemanticLabeling labels = labels_for(a.labels, model.k);
  const auto features = a.features.empty() ? labels.names() : split_list(a.features);
  IndexOptions opt;
  opt.tau = a.tau;
  opt.normalize = parse_normalize(a.normalize);
  opt.hard = a.hard;
  opt.threads = resolve_threads(a.common.threads);
  if (a.batch_baseline > 0) {
    const auto ids = first_images(bundle.images(), a.batch_baseline);
    err << "dataset-averaged masks over " << ids.size() << " images\n";
    opt.shared_scores = batch_scores(bundle, model, labels, ids, opt.threads);
  }
  err << "indexing " << bundle.images().size() << " images, " << features.size() << " features\n";
  const RetrievalIndex index = build_index(bundle, model, labels, features, opt);
  save_index(index, a.out);
  out << "images\t" << index.size() << "\nfeatures\t" << features.size() << "\ndims\t" << index.dims() << "\n";
}

struct IndexQueryArgs {
  Common common;
  std::string index;
  std::string query;
  std::string query_bundle;
  std::string feature;
  std::size_t top = 5;
  bool furthest = false;
  bool exclude_self = false;
};

void run_index_query(const IndexQueryArgs& a, std::ostream& out, std::ostream& err) {
  const RetrievalIndex index = load_index(a.index);
  const std::size_t f = index.feature_index(a.feature);
  const unsigned threads = resolve_threads(a.common.threads);
  const Direction dir = a.furthest ? Direction::furthest : Direction::nearest;

  std::vector<float> embedding;
  std::optional<std::size_t> self;
  if (!a.query_bundle.empty()) {
    const Bundle qb = load_bundle(a.query_bundle);
    embedding = embed_image(index, read_style(qb, a.query), read_activations(qb, a.query), a.feature).values;
  } else if (auto row = index.image_index(a.query)) {
    const auto r = index.row(f, *row);
    embedding.assign(r.begin(), r.end());
    self = row;
  } else if (a.query.ends_with(".f32") && fs::is_regular_file(a.query)) {
    embedding = read_f32(a.query);
  } else {
    throw Error(Errc::InvalidArgument, "query '" + a.query + "' is neither an indexed image nor an .f32 file");
  }

  std::vector<Hit> hits;
  if (a.exclude_self && self) {
    if (a.top + 1 > index.size()) throw Error(Errc::BadK, "top " + std::to_string(a.top) + " exceeds the other images");
    hits = query(index, embedding, a.feature, a.top + 1, dir, threads);
    std::erase_if(hits, [&](const Hit& h) { return h.row == *self; });
    hits.resize(a.top);
  } else {
    hits = query(index, embedding, a.feature, a.top, dir, threads);
  }
  if (a.exclude_self && !self) err << "note: query is not an indexed image, nothing to exclude\n";

  if (a.common.format == "tsv") {
    out << "rank\timage_id\tdistance\n";
    for (std::size_t i = 0; i < hits.size(); ++i) {
      out << i + 1 << "\t" << hits[i].image_id << "\t" << fmt(hits[i].distance) << "\n";
    }
  } else {
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t i = 0; i < hits.size(); ++i) {
      j.push_back({{"rank", i + 1}, {"image_id", hits[i].image_id}, {"distance", hits[i].distance}});
    }
    out << j.dump(2) << "\n";
  }
}

// ---------------------------------------------------------------- eval

std::vector<std::string> query_ids(const RetrievalIndex& index, std::size_t count) {
  return first_images(index.ids(), count);
}

struct AmsArgs {
  Common common;
  std::string index;
  std::string predictions;
  std::string groups;
  std::string attributes;
  std::string features;
  std::size_t queries = 0;
  std::size_t top = 5;
  double threshold = 0.5;
};

void run_ams(const AmsArgs& a, std::ostream& out, std::ostream&) {
  const RetrievalIndex index = load_index(a.index);
  AttributePredictions preds = AttributePredictions::load_csv(a.predictions);
  preds.threshold = a.threshold;
  const auto features = a.features.empty() ? index.features() : split_list(a.features);
  AttributeGroups groups;
  if (!a.attributes.empty()) {
    for (const auto& f : features) groups.groups[f] = split_list(a.attributes);
  } else if (!a.groups.empty()) {
    groups = AttributeGroups::load(a.groups);
  } else {
    groups = AttributeGroups::celeba_defaults();
  }
  const auto queries = query_ids(index, a.queries);
  const unsigned threads = resolve_threads(a.common.threads);
  nlohmann::json j = nlohmann::json::object();
  if (a.common.format == "tsv") out << "feature\tams\n";
  for (const auto& f : features) {
    const double score = ams(index, queries, f, preds, groups, a.top, threads);
    if (a.common.format == "tsv") {
      out << f << "\t" << fmt(score) << "\n";
    } else {
      j[f] = score;
    }
  }
  if (a.common.format == "json") out << j.dump(2) << "\n";
}

struct TrsiArgs {
  Common common;
  std::string index;
  std::string identities;
  std::string features;
  std::size_t queries = 100;
  std::size_t set_size = 10;
};

void run_trsi(const TrsiArgs& a, std::ostream& out, std::ostream& err) {
  const RetrievalIndex index = load_index(a.index);
  const IdentityLabels ids = IdentityLabels::load_csv(a.identities);
  const auto features = a.features.empty() ? index.features() : split_list(a.features);
  for (const auto& f : features) index.feature_index(f);
  const auto queries = query_ids(index, a.queries);
  const unsigned threads = resolve_threads(a.common.threads);
  std::vector<double> all;
  nlohmann::json j = nlohmann::json::array();
  if (a.common.format == "tsv") out << "query\tfeature_a\tfeature_b\tiou\n";
  for (const auto& q : queries) {
    for (std::size_t x = 0; x < features.size(); ++x) {
      for (std::size_t y = x + 1; y < features.size(); ++y) {
        const double iou = trsi_iou(index, q, features[x], features[y], a.set_size, ids, threads);
        all.push_back(iou);
        if (a.common.format == "tsv") {
          out << q << "\t" << features[x] << "\t" << features[y] << "\t" << fmt(iou) << "\n";
        } else {
          j.push_back({{"query", q}, {"feature_a", features[x]}, {"feature_b", features[y]}, {"iou", iou}});
        }
      }
    }
  }
  if (a.common.format == "json") out << j.dump(2) << "\n";
  if (!all.empty()) {
    std::ranges::sort(all);
    const double median = all.size() % 2 ? all[all.size() / 2] : 0.5 * (all[all.size() / 2 - 1] + all[all.size() / 2]);
    err << "median TRSI-IoU " << fmt(median) << " over " << all.size() << " pairs\n";
  }
}

// ---------------------------------------------------------------- analyze

struct SubmembershipArgs {
  Common common;
  std::string bundle;
  std::string clusters;
  std::string labels;
  std::string feature;
  std::string k_list = "2,5,10,20,50,100";
  std::size_t top_n = 100;
  std::size_t samples = 0;
  std::string normalize = "none";
  std::uint64_t seed = 0;
};

void run_submembership(const SubmembershipArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<std::size_t> ks;
  for (const auto& item : split_list(a.k_list)) {
    try {
      std::size_t used = 0;
      ks.push_back(std::stoul(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(Errc::InvalidArgument, "bad K '" + item + "' in --k-list");
    }
  }
  const Bundle bundle = load_bundle(a.bundle);
  const ClusterModel model = load_cluster_model(a.clusters);
  const SemanticLabeling labels = labels_for(a.labels, model.k);
  const auto fk = labels.index_of(a.feature);
  if (!fk) throw Error(Errc::UnknownFeature, "labeling has no feature '" + a.feature + "'");
  const ScoreNormalize normalize = parse_normalize(a.normalize);
  const auto ids = first_images(bundle.images(), a.samples);
  const unsigned threads = resolve_threads(a.common.threads);
  Matrix<double> rows(ids.size(), bundle.layout().total_channels());
  parallel_for(ids.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const ContributionMatrix m = image_scores(bundle, model, labels, ids[i], normalize);
      const auto src = m.scores.row(*fk);
      std::copy(src.begin(), src.end(), rows.row(i).begin());
    }
  });
  err << "intersection ratios over " << ids.size() << " images\n";
  const SubmembershipReport report = intersection_ratio(rows, ks, a.top_n, a.seed, threads);
  if (a.common.format == "tsv") {
    out << "K\tratio\n";
    for (std::size_t i = 0; i < ks.size(); ++i) out << ks[i] << "\t" << fmt(report.ratios[i]) << "\n";
  } else {
    nlohmann::json j{{"feature", a.feature},
                     {"top_n", report.top_n},
                     {"sample_size", report.sample_size},
                     {"seed", report.seed},
                     {"K", report.cluster_counts},
                     {"ratio", report.ratios}};
    out << j.dump(2) << "\n";
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Region-aware style transfer and retrieval over exported latent bundles", "ris"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  std::function<void()> action;

  FixtureArgs fx;
  auto* fixture = app.add_subcommand("fixture", "write a synthetic toy bundle with planted groups");
  fixture->add_option("--regions", fx.regions, "region count")->check(CLI::Range(2, 1 << 20));
  fixture->add_option("--layers", fx.layers, "resolution:channels per layer");
  fixture->add_option("--images", fx.images, "image count")->check(CLI::PositiveNumber);
  fixture->add_option("--groups", fx.groups, "group spec JSON")->check(CLI::ExistingFile);
  fixture->add_option("--group-size", fx.group_size, "planted groups of this size per region");
  fixture->add_option("--coarse-layers", fx.coarse_layers, "layers counted as coarse");
  fixture->add_option("--seed", fx.seed, "random seed");
  fixture->add_option("--out", fx.out, "output bundle directory")->required();
  fixture->callback([&] { action = [&] { run_fixture(fx, out, err); }; });

  ClusterArgs cl;
  auto* cluster = app.add_subcommand("cluster", "fit spherical k-means on one layer's spatial activations");
  cluster->add_option("--bundle", cl.bundle, "input bundle")->required()->check(CLI::ExistingDirectory);
  cluster->add_option("--k", cl.k, "cluster count")->required()->check(CLI::PositiveNumber);
  cluster->add_option("--layer", cl.layer, "clustering layer (default: resolution 32 or the middle layer)");
  cluster->add_option("--seed", cl.seed, "random seed");
  cluster->add_option("--max-iter", cl.max_iter, "iteration cap")->check(CLI::PositiveNumber);
  cluster->add_option("--tol", cl.tol, "centroid movement tolerance")->check(CLI::NonNegativeNumber);
  cluster->add_option("--images", cl.images, "use only the first N images (0 = all)");
  cluster->add_option("--out", cl.out, "output model directory")->required();
  cluster->add_option("--labels-out", cl.labels_out, "write a labeling template");
  add_threads(cluster, cl.common);
  add_format(cluster, cl.common);
  cluster->callback([&] { action = [&] { run_cluster(cl, out, err); }; });

  ScoreArgs sc;
  auto* score = app.add_subcommand("score", "channel contribution scores");
  score->add_option("--bundle", sc.bundle, "input bundle")->required()->check(CLI::ExistingDirectory);
  score->add_option("--clusters", sc.clusters, "cluster model")->required()->check(CLI::ExistingDirectory);
  score->add_option("--labels", sc.labels, "cluster labeling JSON")->check(CLI::ExistingFile);
  score->add_option("--mode", sc.mode, "single, pair or batch")->check(CLI::IsMember({"single", "pair", "batch"}));
  score->add_option("--image", sc.image, "image id (single, pair)");
  score->add_option("--reference", sc.reference, "reference id (pair)");
  score->add_option("--images", sc.images, "batch over the first N images (0 = all)");
  score->add_option("--normalize", sc.normalize, "none or per_layer_mean")
      ->check(CLI::IsMember({"none", "per_layer_mean"}));
  score->add_option("--top", sc.top, "only the top N channels per feature");
  score->add_flag("--save", sc.save, "store the matrix in the bundle");
  add_threads(score, sc.common);
  add_format(score, sc.common);
  score->callback([&] { action = [&] { run_score(sc, out, err); }; });

  TransferArgs tr;
  auto* transfer = app.add_subcommand("transfer", "move one feature of a source image toward a reference");
  transfer->add_option("--bundle", tr.bundle, "input bundle")->required()->check(CLI::ExistingDirectory);
  transfer->add_option("--clusters", tr.clusters, "cluster model")->required()->check(CLI::ExistingDirectory);
  transfer->add_option("--labels", tr.labels, "cluster labeling JSON")->check(CLI::ExistingFile);
  transfer->add_option("--source", tr.source, "source image id")->required();
  transfer->add_option("--reference", tr.reference, "reference image id")->required();
  transfer->add_option("--feature", tr.feature, "feature name (or pose)")->required();
  transfer->add_option("--alpha", tr.alpha, "step size");
  transfer->add_option("--tau", tr.tau, "softmax temperature");
  transfer->add_flag("--hard", tr.hard, "argmax masks");
  transfer->add_flag("--no-restrict", tr.no_restrict, "keep coarse channels for non-hair features");
  transfer->add_option("--normalize", tr.normalize, "none or per_layer_mean")
      ->check(CLI::IsMember({"none", "per_layer_mean"}));
  transfer->add_option("--out", tr.out, "output raw f32 style vector")->required();
  add_format(transfer, tr.common);
  transfer->callback([&] { action = [&] { run_transfer(tr, out, err); }; });

  auto* index = app.add_subcommand("index", "feature-specific retrieval index");
  index->require_subcommand(1);
  IndexBuildArgs ib;
  auto* build = index->add_subcommand("build", "embed every image of a bundle");
  build->add_option("--bundle", ib.bundle, "input bundle")->required()->check(CLI::ExistingDirectory);
  build->add_option("--clusters", ib.clusters, "cluster model")->required()->check(CLI::ExistingDirectory);
  build->add_option("--labels", ib.labels, "cluster labeling JSON")->check(CLI::ExistingFile);
  build->add_option("--features", ib.features, "comma-separated features (default: all)");
  build->add_option("--tau", ib.tau, "softmax temperature");
  build->add_option("--normalize", ib.normalize, "none or per_layer_mean")
      ->check(CLI::IsMember({"none", "per_layer_mean"}));
  build->add_flag("--hard", ib.hard, "argmax masks");
  build->add_option("--batch-baseline", ib.batch_baseline, "use one mask averaged over the first N images");
  build->add_option("--out", ib.out, "output index directory")->required();
  add_threads(build, ib.common);
  build->callback([&] { action = [&] { run_index_build(ib, out, err); }; });

  IndexQueryArgs iq;
  auto* q = index->add_subcommand("query", "nearest or furthest images for one feature");
  q->add_option("--index", iq.index, "index directory")->required()->check(CLI::ExistingDirectory);
  q->add_option("--query", iq.query, "indexed image id, raw .f32 embedding, or id in --query-bundle")->required();
  q->add_option("--query-bundle", iq.query_bundle, "bundle holding an external query image")
      ->check(CLI::ExistingDirectory);
  q->add_option("--feature", iq.feature, "feature name")->required();
  q->add_option("--top", iq.top, "result count")->check(CLI::PositiveNumber);
  q->add_flag("--furthest", iq.furthest, "furthest instead of nearest");
  q->add_flag("--exclude-self", iq.exclude_self, "drop the query image from its results");
  add_threads(q, iq.common);
  add_format(q, iq.common);
  q->callback([&] { action = [&] { run_index_query(iq, out, err); }; });

  auto* eval = app.add_subcommand("eval", "retrieval metrics");
  eval->require_subcommand(1);
  AmsArgs am;
  auto* ams_cmd = eval->add_subcommand("ams", "attribute matching score");
  ams_cmd->add_option("--index", am.index, "index directory")->required()->check(CLI::ExistingDirectory);
  ams_cmd->add_option("--predictions", am.predictions, "attribute CSV")->required()->check(CLI::ExistingFile);
  ams_cmd->add_option("--groups", am.groups, "feature to attributes JSON")->check(CLI::ExistingFile);
  ams_cmd->add_option("--attributes", am.attributes, "comma-separated attributes used for every feature");
  ams_cmd->add_option("--features", am.features, "comma-separated features (default: all)");
  ams_cmd->add_option("--queries", am.queries, "first N images as queries (0 = all)");
  ams_cmd->add_option("--top", am.top, "retrieved images per query")->check(CLI::PositiveNumber);
  ams_cmd->add_option("--threshold", am.threshold, "attribute threshold");
  add_threads(ams_cmd, am.common);
  add_format(ams_cmd, am.common);
  ams_cmd->callback([&] { action = [&] { run_ams(am, out, err); }; });

  TrsiArgs ts;
  auto* trsi = eval->add_subcommand("trsi", "identity-set IoU between feature pairs");
  trsi->add_option("--index", ts.index, "index directory")->required()->check(CLI::ExistingDirectory);
  trsi->add_option("--identities", ts.identities, "identity CSV")->required()->check(CLI::ExistingFile);
  trsi->add_option("--features", ts.features, "comma-separated features (default: all)");
  trsi->add_option("--queries", ts.queries, "first N images as queries (0 = all)");
  trsi->add_option("--set-size", ts.set_size, "retrieved images per feature")->check(CLI::PositiveNumber);
  add_threads(trsi, ts.common);
  add_format(trsi, ts.common);
  trsi->callback([&] { action = [&] { run_trsi(ts, out, err); }; });

  auto* analyze = app.add_subcommand("analyze", "score analyses");
  analyze->require_subcommand(1);
  SubmembershipArgs sm;
  auto* sub = analyze->add_subcommand("submembership", "top-n channel overlap across sub-clusters");
  sub->add_option("--bundle", sm.bundle, "input bundle")->required()->check(CLI::ExistingDirectory);
  sub->add_option("--clusters", sm.clusters, "cluster model")->required()->check(CLI::ExistingDirectory);
  sub->add_option("--labels", sm.labels, "cluster labeling JSON")->check(CLI::ExistingFile);
  sub->add_option("--feature", sm.feature, "feature name")->required();
  sub->add_option("--k-list", sm.k_list, "comma-separated cluster counts");
  sub->add_option("--top-n", sm.top_n, "leading channels per cluster")->check(CLI::PositiveNumber);
  sub->add_option("--samples", sm.samples, "first N images (0 = all)");
  sub->add_option("--normalize", sm.normalize, "none or per_layer_mean")
      ->check(CLI::IsMember({"none", "per_layer_mean"}));
  sub->add_option("--seed", sm.seed, "random seed");
  add_threads(sub, sm.common);
  add_format(sub, sm.common);
  sub->callback([&] { action = [&] { run_submembership(sm, out, err); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace ris
