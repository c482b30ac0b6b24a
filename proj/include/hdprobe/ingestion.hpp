#pragma once

// Residual-stream ingestion: k-means over the stored layer rows of the last
// token followed by sum pooling of the centroids, plus the redundancy
// diagnostics used to pick k (silhouette, layer correlation, Gram spectrum).

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "hdprobe/error.hpp"
#include "hdprobe/log.hpp"
#include "hdprobe/random.hpp"

namespace hdprobe::ingestion {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct TokenProb {
  std::string token;
  double prob = 0.0;
};

// Next-token metadata captured alongside the embeddings.
struct NextTokenMeta {
  std::vector<TokenProb> topk;  // descending probability
  std::string target;
  long long target_rank = -1;
  double target_prob = 0.0;
  std::string text;
  std::string domain;
  std::string tmpl;
  // QA runs: "before" / "after" generation, and the generated answer text.
  std::string phase;
  std::string prediction;
};

struct EmbeddingRecord {
  std::string input_id;
  Eigen::MatrixXf matrix;  // layers x d
  std::string model_name;
  NextTokenMeta meta;
};

// Throws InvalidArgument unless the record has >= 2 finite rows and sorted top-k.
void validate(const EmbeddingRecord& record);

struct CompressedEmbedding {
  Eigen::VectorXf vector;
  std::string input_id;
  std::size_t k_used = 0;
};

struct KMeansConfig {
  std::uint64_t seed = 0;
  int max_iters = 100;
  double tol = 1e-6;
};

template <typename Scalar>
struct KMeansResult {
  Matrix<Scalar> centroids;          // k x d
  std::vector<std::size_t> assignments;
  std::vector<double> inertia;       // objective after each assignment step
  int iterations = 0;
};

struct IngestConfig {
  std::size_t k = 5;
  KMeansConfig kmeans;
  // Sort rows lexicographically before clustering so the output does not
  // depend on row order.
  bool canonicalize = true;
  // Ablation: sum all layer rows without clustering.
  bool skip_clustering = false;
};

namespace detail {

template <typename Scalar>
double assign(const Matrix<Scalar>& rows, const Matrix<Scalar>& centroids, std::vector<std::size_t>& out) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_c = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = static_cast<double>((rows.row(i) - centroids.row(c)).squaredNorm());
      if (d < best) {
        best = d;
        best_c = static_cast<std::size_t>(c);
      }
    }
    out[static_cast<std::size_t>(i)] = best_c;
    total += best;
  }
  return total;
}

}  // namespace detail

// k-means++ seeding followed by Lloyd iterations until the largest centroid
// shift drops below tol or max_iters is reached. An empty cluster is
// re-seeded with the point farthest from its former centroid.
template <typename Scalar>
KMeansResult<Scalar> kmeans(const Matrix<Scalar>& rows, std::size_t k, const KMeansConfig& cfg = {}) {
  const auto n = static_cast<std::size_t>(rows.rows());
  if (k < 1 || k > n) throw InvalidArgument("kmeans: need 1 <= k <= rows");
  SplitMix64 rng(cfg.seed);
  KMeansResult<Scalar> res;
  res.centroids.resize(static_cast<Eigen::Index>(k), rows.cols());

  std::vector<bool> chosen(n, false);
  std::size_t first = rng.below(n);
  res.centroids.row(0) = rows.row(static_cast<Eigen::Index>(first));
  chosen[first] = true;
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = static_cast<double>((rows.row(static_cast<Eigen::Index>(i)) - res.centroids.row(0)).squaredNorm());
  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && r < acc) {
          pick = i;
          break;
        }
      }
      while (d2[pick] == 0.0 && pick > 0) --pick;
    } else {
      // Every point coincides with a centroid: take the first unused row.
      while (pick < n && chosen[pick]) ++pick;
      if (pick == n) pick = 0;
    }
    chosen[pick] = true;
    res.centroids.row(static_cast<Eigen::Index>(c)) = rows.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], static_cast<double>((rows.row(static_cast<Eigen::Index>(i)) - res.centroids.row(static_cast<Eigen::Index>(c))).squaredNorm()));
    }
  }

  res.assignments.assign(n, 0);
  for (int iter = 0; iter < std::max(cfg.max_iters, 1); ++iter) {
    res.inertia.push_back(detail::assign(rows, res.centroids, res.assignments));
    res.iterations = iter + 1;
    Matrix<Scalar> next = Matrix<Scalar>::Zero(res.centroids.rows(), res.centroids.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      next.row(static_cast<Eigen::Index>(res.assignments[i])) += rows.row(static_cast<Eigen::Index>(i));
      ++counts[res.assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (counts[c] > 0) {
        next.row(ci) /= static_cast<Scalar>(counts[c]);
      } else {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = static_cast<double>((rows.row(static_cast<Eigen::Index>(i)) - res.centroids.row(ci)).squaredNorm());
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        next.row(ci) = rows.row(static_cast<Eigen::Index>(far));
      }
    }
    double shift = 0.0;
    for (Eigen::Index c = 0; c < next.rows(); ++c) {
      shift = std::max(shift, static_cast<double>((next.row(c) - res.centroids.row(c)).norm()));
    }
    res.centroids = std::move(next);
    if (shift < cfg.tol) break;
  }
  res.inertia.push_back(detail::assign(rows, res.centroids, res.assignments));
  return res;
}

// Mean silhouette coefficient (Euclidean) of a labelling. Singleton clusters
// contribute 0.
template <typename Scalar>
double silhouette_score(const Matrix<Scalar>& rows, const std::vector<std::size_t>& labels) {
  const auto n = static_cast<std::size_t>(rows.rows());
  if (labels.size() != n) throw InvalidArgument("silhouette: label count mismatch");
  const std::size_t n_clusters = n == 0 ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> sizes(n_clusters, 0);
  for (auto l : labels) ++sizes[l];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sizes[labels[i]] <= 1) continue;
    std::vector<double> sum(n_clusters, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sum[labels[j]] += static_cast<double>((rows.row(static_cast<Eigen::Index>(i)) - rows.row(static_cast<Eigen::Index>(j))).norm());
    }
    const double a = sum[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_clusters; ++c) {
      if (c != labels[i] && sizes[c] > 0) b = std::min(b, sum[c] / static_cast<double>(sizes[c]));
    }
    if (!std::isfinite(b)) continue;
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

struct SilhouettePoint {
  std::size_t k = 0;
  double score = 0.0;
};

// Silhouette of k-means clusterings for each k in [k_min, k_max].
template <typename Scalar>
std::vector<SilhouettePoint> silhouette(const Matrix<Scalar>& rows, std::size_t k_min, std::size_t k_max,
                                        std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(rows.rows());
  if (k_min < 2 || k_max < k_min || k_max + 1 > n) {
    throw InvalidArgument("silhouette: need 2 <= k <= rows - 1");
  }
  std::vector<SilhouettePoint> out;
  bool degenerate = true;
  for (Eigen::Index i = 1; i < rows.rows() && degenerate; ++i) degenerate = rows.row(i) == rows.row(0);
  if (degenerate) {
    warn("silhouette: all points are identical; scores reported as 0");
    for (std::size_t k = k_min; k <= k_max; ++k) out.push_back({k, 0.0});
    return out;
  }
  for (std::size_t k = k_min; k <= k_max; ++k) {
    const auto km = kmeans(rows, k, KMeansConfig{seed, 100, 1e-6});
    out.push_back({k, silhouette_score(rows, km.assignments)});
  }
  return out;
}

// Pearson correlation between every pair of rows (each row is one layer).
// Constant rows get zero off-diagonal correlations and a warning.
template <typename Scalar>
Eigen::MatrixXd layer_correlation(const Matrix<Scalar>& rows) {
  if (rows.rows() < 2) throw InvalidArgument("layer_correlation: need >= 2 rows");
  const Eigen::MatrixXd x = rows.template cast<double>();
  Eigen::MatrixXd centered = x.colwise() - x.rowwise().mean();
  Eigen::VectorXd norms = centered.rowwise().norm();
  std::vector<bool> constant(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    constant[static_cast<std::size_t>(i)] = norms(i) == 0.0;
    if (norms(i) == 0.0) {
      warn("layer_correlation: row " + std::to_string(i) + " is constant; its correlations are reported as 0");
    } else {
      centered.row(i) /= norms(i);
    }
  }
  Eigen::MatrixXd corr = centered * centered.transpose();
  for (Eigen::Index i = 0; i < corr.rows(); ++i) {
    for (Eigen::Index j = 0; j < corr.cols(); ++j) {
      if (i == j) {
        corr(i, j) = 1.0;
      } else if (constant[static_cast<std::size_t>(i)] || constant[static_cast<std::size_t>(j)]) {
        corr(i, j) = 0.0;
      } else {
        corr(i, j) = std::clamp(corr(i, j), -1.0, 1.0);
      }
    }
  }
  return corr;
}

struct GramSpectrum {
  Eigen::VectorXd eigenvalues;  // descending
  Eigen::VectorXd shares;       // eigenvalues / sum
};

// Spectrum of G = H H^T.
template <typename Scalar>
GramSpectrum gram_spectrum(const Matrix<Scalar>& rows) {
  if (rows.rows() < 1) throw InvalidArgument("gram_spectrum: need >= 1 row");
  const Eigen::MatrixXd h = rows.template cast<double>();
  const Eigen::MatrixXd g = h * h.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(g, Eigen::EigenvaluesOnly);
  GramSpectrum out;
  out.eigenvalues = solver.eigenvalues().reverse();
  const double sum = out.eigenvalues.sum();
  out.shares = sum > 0.0 ? Eigen::VectorXd(out.eigenvalues / sum) : Eigen::VectorXd::Zero(out.eigenvalues.size());
  return out;
}

// Rows sorted lexicographically.
template <typename Scalar>
Matrix<Scalar> canonical_rows(const Matrix<Scalar>& rows) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      if (rows(a, j) != rows(b, j)) return rows(a, j) < rows(b, j);
    }
    return false;
  });
  Matrix<Scalar> out(rows.rows(), rows.cols());
  for (std::size_t i = 0; i < order.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows.row(order[i]);
  return out;
}

// e_s = sum of the k centroids of the record's layer rows.
CompressedEmbedding ingest(const EmbeddingRecord& record, const IngestConfig& cfg = {});

// Stored layer range for a model with `num_layers` hidden layers:
// floor(L/2) .. L inclusive.
struct LayerRange {
  int start = 0;
  int end = 0;
  int count() const noexcept { return end - start + 1; }
};
LayerRange stored_layer_range(int num_layers);

}  // namespace hdprobe::ingestion
