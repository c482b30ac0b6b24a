#include <doctest.h>

#include <cmath>

#include "hdprobe/ingestion.hpp"
#include "hdprobe/log.hpp"
#include "hdprobe/random.hpp"

using namespace hdprobe;
using namespace hdprobe::ingestion;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  SplitMix64 rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  }
  return m;
}

// Two tight, far-apart blobs of `n` rows each.
Eigen::MatrixXd blobs(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Eigen::MatrixXd m = gaussian(2 * n, d, seed, 0.05);
  m.topRows(n).array() += 5.0;
  m.bottomRows(n).array() -= 5.0;
  return m;
}

EmbeddingRecord record_of(const Eigen::MatrixXd& m) {
  EmbeddingRecord r;
  r.input_id = "r";
  r.matrix = m.cast<float>();
  return r;
}

}  // namespace

TEST_CASE("k-means objective never increases") {
  for (std::uint64_t t = 0; t < 25; ++t) {
    const auto rows = gaussian(10 + static_cast<Eigen::Index>(t % 7) * 5, 3 + static_cast<Eigen::Index>(t % 4), t);
    for (std::size_t k : {1u, 2u, 4u}) {
      const auto res = kmeans<double>(rows, k, {t, 100, 0.0});
      REQUIRE(!res.inertia.empty());
      for (std::size_t i = 1; i < res.inertia.size(); ++i) CHECK(res.inertia[i] <= res.inertia[i - 1] + 1e-9);
      CHECK(res.centroids.rows() == static_cast<Eigen::Index>(k));
      CHECK(res.assignments.size() == static_cast<std::size_t>(rows.rows()));
    }
  }
}

TEST_CASE("k-means assignments are nearest centroids") {
  const auto rows = gaussian(40, 4, 17);
  const auto res = kmeans<double>(rows, 3, {1});
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    Eigen::Index best = 0;
    (res.centroids.rowwise() - rows.row(i)).rowwise().squaredNorm().minCoeff(&best);
    CHECK(res.assignments[static_cast<std::size_t>(i)] == static_cast<std::size_t>(best));
  }
}

TEST_CASE("k-means with k = 1 gives the mean") {
  const auto rows = gaussian(12, 5, 3);
  const auto res = kmeans<double>(rows, 1);
  CHECK((res.centroids.row(0) - rows.colwise().mean()).norm() < 1e-12);
  CHECK_THROWS_AS(kmeans<double>(rows, 13), InvalidArgument);
  CHECK_THROWS_AS(kmeans<double>(rows, 0), InvalidArgument);
}

TEST_CASE("silhouette peaks at the true cluster count") {
  const auto rows = blobs(10, 6, 4);
  const auto s = silhouette<double>(rows, 2, 6, 0);
  REQUIRE(s.size() == 5);
  CHECK(s[0].k == 2);
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[0].score > s[i].score);
  CHECK(s[0].score > 0.9);
}

TEST_CASE("silhouette score oracle") {
  // 1-d points {0, 1} and {10}: a(0)=1, b(0)=10 -> s=0.9; a(1)=1, b(1)=9 -> 8/9;
  // singleton scores 0.
  Eigen::MatrixXd rows(3, 1);
  rows << 0, 1, 10;
  const double expected = (0.9 + 8.0 / 9.0 + 0.0) / 3.0;
  CHECK(silhouette_score<double>(rows, {0, 0, 1}) == doctest::Approx(expected));
}

TEST_CASE("layer correlation") {
  Eigen::MatrixXd rows(3, 4);
  rows << 1, 2, 3, 4,  //
      2, 4, 6, 8,      //
      4, 3, 2, 1;
  const auto c = layer_correlation<double>(rows);
  CHECK(c(0, 1) == doctest::Approx(1.0));
  CHECK(c(0, 2) == doctest::Approx(-1.0));
  CHECK(c(1, 1) == doctest::Approx(1.0));

  Eigen::MatrixXd with_const(2, 3);
  with_const << 1, 2, 3, 5, 5, 5;
  WarningCapture capture;
  const auto cc = layer_correlation<double>(with_const);
  CHECK(cc(0, 1) == 0.0);
  CHECK(capture.count() >= 1);
}

TEST_CASE("Gram spectrum of a rank-one matrix") {
  const Eigen::VectorXd u = gaussian(8, 1, 1).col(0);
  const Eigen::VectorXd v = gaussian(30, 1, 2).col(0);
  const Eigen::MatrixXd h = u * v.transpose();
  const auto g = gram_spectrum<double>(h);
  CHECK(g.shares(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(g.eigenvalues.sum() == doctest::Approx(h.squaredNorm()));

  const auto r = gaussian(6, 20, 9);
  const auto gr = gram_spectrum<double>(r);
  CHECK(gr.eigenvalues.sum() == doctest::Approx(r.squaredNorm()));
  for (Eigen::Index i = 1; i < gr.eigenvalues.size(); ++i) CHECK(gr.eigenvalues(i) <= gr.eigenvalues(i - 1));
  CHECK(gr.shares.sum() == doctest::Approx(1.0));
}

TEST_CASE("ingest sums the centroids") {
  const auto rows = blobs(6, 10, 5);
  const auto e = ingest(record_of(rows), {2, {}, true, false});
  CHECK(e.k_used == 2);
  const Eigen::VectorXd centroid_sum = (rows.topRows(6).colwise().mean() + rows.bottomRows(6).colwise().mean()).transpose();
  CHECK((e.vector.cast<double>() - centroid_sum).norm() < 1e-4);

  const auto all = ingest(record_of(rows), {2, {}, true, true});
  CHECK((all.vector.cast<double>() - rows.colwise().sum().transpose()).norm() < 1e-3);
  CHECK_THROWS_AS(ingest(record_of(rows), {13, {}, true, false}), InvalidArgument);
}

TEST_CASE("canonical ingestion ignores row order") {
  for (std::uint64_t t = 0; t < 10; ++t) {
    const auto rows = gaussian(9, 7, 40 + t);
    Eigen::MatrixXd reversed = rows.colwise().reverse();
    const auto a = ingest(record_of(rows), {3, {t}, true});
    const auto b = ingest(record_of(reversed), {3, {t}, true});
    CHECK(a.vector == b.vector);
    CHECK(ingest(record_of(rows), {3, {t}, true}).vector == a.vector);
  }
}

TEST_CASE("record validation") {
  EmbeddingRecord r = record_of(gaussian(1, 4, 1));
  CHECK_THROWS_AS(validate(r), InvalidArgument);
  r = record_of(gaussian(3, 4, 1));
  r.matrix(1, 2) = std::nanf("");
  CHECK_THROWS_AS(validate(r), InvalidArgument);
  r = record_of(gaussian(3, 4, 1));
  r.meta.topk = {{"a", 0.2}, {"b", 0.5}};
  CHECK_THROWS_AS(validate(r), InvalidArgument);
  r.meta.topk = {{"a", 0.5}, {"b", 0.2}};
  CHECK_NOTHROW(validate(r));
}

TEST_CASE("stored layer range") {
  CHECK(stored_layer_range(64).start == 32);
  CHECK(stored_layer_range(64).count() == 33);
  CHECK(stored_layer_range(7).start == 3);
  CHECK(stored_layer_range(7).count() == 5);
  CHECK_THROWS_AS(stored_layer_range(0), InvalidArgument);
}
