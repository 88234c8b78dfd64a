#pragma once

// Independent reference implementations used by the test suites. None of these
// call into the library code paths they are compared against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "ris/bundle.hpp"
#include "ris/layout.hpp"
#include "ris/spherical_kmeans.hpp"

namespace ris::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ris_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Naive reference for the gated squared-activation score of one image:
/// M[k][c] = sum_{h,w} A[c,h,w]^2 * [label(floor(h*H0/H), floor(w*W0/W)) == k] * scale.
inline std::vector<std::vector<double>> naive_scores(const ActivationStack& a,
                                                     const std::vector<std::uint32_t>& labels, std::size_t h0,
                                                     std::size_t w0, std::size_t k, const LayerLayout& layout,
                                                     bool per_layer_mean) {
  std::vector<std::vector<double>> m(k, std::vector<double>(layout.total_channels(), 0.0));
  for (const auto& l : layout.layers()) {
    const auto& t = a.layer(l.name);
    const std::size_t res = l.resolution;
    for (std::size_t kk = 0; kk < k; ++kk) {
      for (std::size_t c = 0; c < l.channels; ++c) {
        double s = 0.0;
        for (std::size_t h = 0; h < res; ++h) {
          for (std::size_t w = 0; w < res; ++w) {
            const std::size_t src = (h * h0 / res) * w0 + (w * w0 / res);
            const double u = labels[src] == kk ? 1.0 : 0.0;
            const double v = t[(c * res + h) * res + w];
            s += v * v * u;
          }
        }
        m[kk][l.style_offset + c] = per_layer_mean ? s / double(res * res) : s;
      }
    }
  }
  return m;
}

/// Adjusted Rand index of two labelings.
inline double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ca[a[i]] += 1;
    cb[b[i]] += 1;
  }
  auto c2 = [](double n) { return n * (n - 1) / 2; };
  double sum_joint = 0, sum_a = 0, sum_b = 0;
  for (auto& [_, n] : joint) sum_joint += c2(n);
  for (auto& [_, n] : ca) sum_a += c2(n);
  for (auto& [_, n] : cb) sum_b += c2(n);
  const double expected = sum_a * sum_b / c2(double(a.size()));
  const double max_index = (sum_a + sum_b) / 2;
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

/// Best spherical k-means objective over every assignment of the points to k
/// non-empty clusters: for a fixed partition the optimum is sum of |sum of unit points|.
inline double brute_force_spherical_objective(const Matrix<float>& points, std::size_t k) {
  const std::size_t n = points.rows();
  std::vector<std::vector<double>> unit(n, std::vector<double>(points.cols()));
  for (std::size_t i = 0; i < n; ++i) {
    double n2 = 0;
    for (float v : points.row(i)) n2 += double(v) * v;
    for (std::size_t c = 0; c < points.cols(); ++c) unit[i][c] = points(i, c) / std::sqrt(n2);
  }
  double best = -1e300;
  std::vector<std::size_t> label(n, 0);
  while (true) {
    std::vector<std::vector<double>> sums(k, std::vector<double>(points.cols(), 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[label[i]];
      for (std::size_t c = 0; c < points.cols(); ++c) sums[label[i]][c] += unit[i][c];
    }
    if (std::ranges::all_of(counts, [](std::size_t x) { return x > 0; })) {
      double obj = 0;
      for (auto& s : sums) {
        double n2 = 0;
        for (double v : s) n2 += v * v;
        obj += std::sqrt(n2);
      }
      best = std::max(best, obj);
    }
    std::size_t i = 0;
    while (i < n && ++label[i] == k) label[i++] = 0;
    if (i == n) break;
  }
  return best;
}

/// Points scattered within `max_angle_deg` of orthogonal axes e_0..e_{k-1}.
inline Matrix<float> planted_caps(std::size_t clusters, std::size_t per_cluster, std::size_t dims,
                                  double max_angle_deg, std::uint64_t seed, std::vector<std::size_t>& truth) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, max_angle_deg * M_PI / 180.0);
  Matrix<float> pts(clusters * per_cluster, dims);
  truth.clear();
  std::size_t row = 0;
  for (std::size_t k = 0; k < clusters; ++k) {
    for (std::size_t p = 0; p < per_cluster; ++p, ++row) {
      // random unit direction orthogonal to e_k
      std::vector<double> d(dims);
      double n2 = 0;
      for (std::size_t c = 0; c < dims; ++c) {
        d[c] = c == k ? 0.0 : gauss(rng);
        n2 += d[c] * d[c];
      }
      const double theta = angle(rng);
      for (std::size_t c = 0; c < dims; ++c) {
        const double axis = c == k ? 1.0 : 0.0;
        pts(row, c) = static_cast<float>(std::cos(theta) * axis + std::sin(theta) * d[c] / std::sqrt(n2));
      }
      truth.push_back(k);
    }
  }
  return pts;
}

}  // namespace ris::testing
