#include "ris/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ris/error.hpp"
#include "ris/parallel.hpp"
#include "ris/spherical_kmeans.hpp"

namespace ris {

namespace {

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ifstream open_input(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::IoFailure, "cannot read " + file.string());
  return in;
}

}  // namespace

AttributePredictions AttributePredictions::parse_csv(std::istream& in) {
  AttributePredictions p;
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::InvalidArgument, "predictions file is empty");
  auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "image_id") {
    throw Error(Errc::InvalidArgument, "predictions header must start with image_id and name attributes");
  }
  p.attributes.assign(header.begin() + 1, header.end());
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw Error(Errc::InvalidArgument, "predictions line " + std::to_string(line_no) + " has " +
                                             std::to_string(fields.size()) + " fields");
    }
    for (std::size_t a = 1; a < fields.size(); ++a) {
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(fields[a], &used);
        if (used != fields[a].size()) throw std::invalid_argument(fields[a]);
      } catch (const std::exception&) {
        throw Error(Errc::InvalidArgument, "predictions line " + std::to_string(line_no) + ": bad value '" +
                                               fields[a] + "'");
      }
      if (!std::isfinite(v)) throw Error(Errc::InvalidArgument, "non-finite prediction on line " + std::to_string(line_no));
      values.push_back(v);
    }
    if (!p.row_lookup_.emplace(fields[0], p.ids.size()).second) {
      throw Error(Errc::InvalidArgument, "duplicate prediction row for '" + fields[0] + "'");
    }
    p.ids.push_back(fields[0]);
  }
  p.scores = Matrix<double>(p.ids.size(), p.attributes.size());
  std::ranges::copy(values, p.scores.values().begin());
  return p;
}

AttributePredictions AttributePredictions::load_csv(const std::filesystem::path& file) {
  auto in = open_input(file);
  return parse_csv(in);
}

std::optional<std::size_t> AttributePredictions::row_of(std::string_view id) const {
  auto it = row_lookup_.find(id);
  if (it == row_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> AttributePredictions::attribute_index(std::string_view name) const {
  for (std::size_t a = 0; a < attributes.size(); ++a) {
    if (attributes[a] == name) return a;
  }
  return std::nullopt;
}

AttributeGroups AttributeGroups::celeba_defaults() {
  AttributeGroups g;
  g.groups["eyes"] = {"Arched_Eyebrows", "Bags_Under_Eyes", "Bushy_Eyebrows", "Narrow_Eyes"};
  g.groups["nose"] = {"Big_Nose", "Pointy_Nose"};
  g.groups["mouth"] = {"5_o_Clock_Shadow", "Big_Lips", "Goatee", "Mouth_Slightly_Open",
                       "Mustache", "No_Beard", "Smiling", "Wearing_Lipstick"};
  g.groups["hair"] = {"Bald", "Bangs", "Black_Hair", "Blond_Hair", "Brown_Hair",
                      "Gray_Hair", "Receding_Hairline", "Sideburns", "Straight_Hair", "Wavy_Hair"};
  return g;
}

AttributeGroups AttributeGroups::load(const std::filesystem::path& file) {
  auto in = open_input(file);
  AttributeGroups g;
  try {
    nlohmann::json j;
    in >> j;
    for (const auto& [feature, attrs] : j.items()) g.groups[feature] = attrs.get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, "attribute groups do not parse: " + std::string(e.what()));
  }
  return g;
}

IdentityLabels IdentityLabels::parse_csv(std::istream& in) {
  IdentityLabels labels;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (first && fields.size() == 2 && fields[0] == "image_id") {
      first = false;
      continue;
    }
    first = false;
    if (fields.size() != 2) throw Error(Errc::InvalidArgument, "identity line must be image_id,identity_id");
    labels.identity[fields[0]] = fields[1];
  }
  return labels;
}

IdentityLabels IdentityLabels::load_csv(const std::filesystem::path& file) {
  auto in = open_input(file);
  return parse_csv(in);
}

const std::string& IdentityLabels::of(std::string_view image_id) const {
  auto it = identity.find(image_id);
  if (it == identity.end()) throw Error(Errc::MissingPrediction, "no identity for '" + std::string(image_id) + "'");
  return it->second;
}

double ams(const RetrievalIndex& index, std::span<const std::string> queries, std::string_view feature,
           const AttributePredictions& predictions, const AttributeGroups& groups, std::size_t top,
           unsigned threads) {
  index.feature_index(feature);
  auto g = groups.groups.find(feature);
  if (g == groups.groups.end()) throw Error(Errc::UnknownFeature, "no attribute group for '" + std::string(feature) + "'");
  if (g->second.empty()) throw Error(Errc::EmptyGroup, "attribute group '" + std::string(feature) + "' is empty");
  if (queries.empty()) throw Error(Errc::InvalidArgument, "AMS needs at least one query");
  std::vector<std::size_t> attrs;
  for (const auto& name : g->second) {
    auto a = predictions.attribute_index(name);
    if (!a) throw Error(Errc::InvalidArgument, "attribute '" + name + "' missing from predictions");
    attrs.push_back(*a);
  }
  auto row_of = [&](const std::string& id) {
    auto r = predictions.row_of(id);
    if (!r) throw Error(Errc::MissingPrediction, "no predictions for '" + id + "'");
    return *r;
  };

  std::vector<std::size_t> matches(queries.size(), 0);
  parallel_for(queries.size(), resolve_threads(threads), [&](std::size_t begin, std::size_t end) {
    for (std::size_t q = begin; q < end; ++q) {
      const std::size_t qrow = row_of(queries[q]);
      for (const Hit& hit : neighbours_excluding_self(index, queries[q], feature, top)) {
        const std::size_t rrow = row_of(hit.image_id);
        for (std::size_t a : attrs) matches[q] += predictions.present(qrow, a) == predictions.present(rrow, a);
      }
    }
  });
  const double total = std::accumulate(matches.begin(), matches.end(), 0.0);
  return total / (double(queries.size()) * double(top) * double(attrs.size()));
}

double set_iou(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> sa(a.begin(), a.end());
  const std::set<std::string> sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (const auto& x : sa) inter += sb.count(x);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

double trsi_iou(const RetrievalIndex& index, std::string_view query, std::string_view feature_a,
                std::string_view feature_b, std::size_t set_size, const IdentityLabels& identities,
                unsigned threads) {
  if (set_size < 1) throw Error(Errc::BadK, "set size must be at least 1");
  auto identity_set = [&](std::string_view feature) {
    std::vector<std::string> out;
    for (const Hit& h : neighbours_excluding_self(index, query, feature, set_size, threads)) {
      out.push_back(identities.of(h.image_id));
    }
    return out;
  };
  return set_iou(identity_set(feature_a), identity_set(feature_b));
}

std::vector<std::size_t> top_n_indices(std::span<const double> values, std::size_t n) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  n = std::min(n, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                    [&](std::size_t a, std::size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
  idx.resize(n);
  return idx;
}

SubmembershipReport intersection_ratio(const Matrix<double>& rows, std::span<const std::size_t> cluster_counts,
                                       std::size_t top_n, std::uint64_t seed, unsigned threads) {
  if (top_n < 1 || top_n > rows.cols()) {
    throw Error(Errc::BadN, "top-n " + std::to_string(top_n) + " for " + std::to_string(rows.cols()) + " channels");
  }
  for (std::size_t k : cluster_counts) {
    if (k < 1 || k > rows.rows()) {
      throw Error(Errc::BadK, "K=" + std::to_string(k) + " for " + std::to_string(rows.rows()) + " images");
    }
  }
  Matrix<float> points(rows.rows(), rows.cols());
  for (std::size_t i = 0; i < rows.values().size(); ++i) points.values()[i] = static_cast<float>(rows.values()[i]);

  SubmembershipReport report;
  report.cluster_counts.assign(cluster_counts.begin(), cluster_counts.end());
  report.top_n = top_n;
  report.sample_size = rows.rows();
  report.seed = seed;
  for (std::size_t k : cluster_counts) {
    KMeansOptions opt;
    opt.k = k;
    opt.seed = seed;
    opt.threads = threads;
    const ClusterModel model = fit(points, opt);
    const auto labels = assign_points(model, points, threads);

    Matrix<double> means(k, rows.cols(), 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      auto dst = means.row(labels[i]);
      auto src = rows.row(i);
      for (std::size_t c = 0; c < rows.cols(); ++c) dst[c] += src[c];
      ++counts[labels[i]];
    }
    std::vector<std::size_t> common;
    bool first = true;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (double& v : means.row(c)) v /= double(counts[c]);
      auto top = top_n_indices(means.row(c), top_n);
      std::ranges::sort(top);
      if (first) {
        common = std::move(top);
        first = false;
      } else {
        std::vector<std::size_t> kept;
        std::ranges::set_intersection(common, top, std::back_inserter(kept));
        common = std::move(kept);
      }
    }
    report.ratios.push_back(double(common.size()) / double(top_n));
  }
  return report;
}

}  // namespace ris
