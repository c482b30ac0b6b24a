#pragma once

// MAP-B (multiply-add-permute, bipolar) hypervector algebra and seeded
// codebooks.
//
// A Hypervector stores D signs packed one bit per element (bit set = +1).
// Binding is the Hadamard product, which on packed signs is XNOR; cosine
// between two bipolar vectors is (matches - mismatches) / D and reduces to a
// popcount. Bundling produces an integer Accumulator that is turned back
// into a hypervector by polarize().

#include <Eigen/Core>

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hdprobe/error.hpp"
#include "hdprobe/random.hpp"

namespace hdprobe::vsa {

class Hypervector {
 public:
  Hypervector() = default;

  // All-ones vector of dimension `dim`.
  explicit Hypervector(std::size_t dim);

  // Throws InvalidArgument unless every entry is exactly -1 or +1.
  static Hypervector from_signs(std::span<const int> signs);

  // Bits beyond `dim` in the last word are ignored.
  static Hypervector from_words(std::vector<std::uint64_t> words, std::size_t dim);

  // x >= 0 maps to +1 and x < 0 to -1.
  template <typename Derived>
  static Hypervector sign_of(const Eigen::DenseBase<Derived>& values);

  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return dim_ == 0; }

  int operator[](std::size_t j) const noexcept {
    return ((words_[j >> 6] >> (j & 63)) & 1U) ? 1 : -1;
  }

  std::span<const std::uint64_t> words() const noexcept { return words_; }

  template <typename Scalar = float>
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dense() const;

  std::vector<int> signs() const;

  Hypervector operator-() const;

  friend bool operator==(const Hypervector&, const Hypervector&) = default;

 private:
  Hypervector(std::vector<std::uint64_t> words, std::size_t dim);
  void mask_tail() noexcept;

  std::size_t dim_ = 0;
  std::vector<std::uint64_t> words_;
};

// Element-wise integer sums of bundled hypervectors.
class Accumulator {
 public:
  explicit Accumulator(std::size_t dim) : sums_(Eigen::VectorXi::Zero(static_cast<Eigen::Index>(dim))) {}

  void add(const Hypervector& v);
  Accumulator& operator+=(const Hypervector& v) {
    add(v);
    return *this;
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(sums_.size()); }
  std::size_t count() const noexcept { return count_; }
  const Eigen::VectorXi& sums() const noexcept { return sums_; }

 private:
  Eigen::VectorXi sums_;
  std::size_t count_ = 0;
};

// Zero sums become +1.
struct PlusOne {};
// Zero sums become a pseudo-random sign derived from (seed, element index).
struct Seeded {
  std::uint64_t seed = 0;
};
using TieBreak = std::variant<PlusOne, Seeded>;

Hypervector bind(const Hypervector& a, const Hypervector& b);
// Identical to bind: every MAP-B hypervector is its own inverse.
Hypervector unbind(const Hypervector& c, const Hypervector& a);

Accumulator bundle(std::span<const Hypervector> vs);
Accumulator bundle(std::initializer_list<Hypervector> vs);

Hypervector polarize(const Accumulator& acc, const TieBreak& tie_break);

double cosine(const Hypervector& a, const Hypervector& b);

template <typename DerivedA, typename DerivedB>
double cosine(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine: dimension mismatch");
  const double na = a.template cast<double>().norm();
  const double nb = b.template cast<double>().norm();
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine: zero vector");
  return a.template cast<double>().dot(b.template cast<double>()) / (na * nb);
}

struct Match {
  std::string name;
  double similarity = 0.0;
  std::size_t index = 0;

  friend bool operator==(const Match&, const Match&) = default;
};

// Immutable concept -> hypervector map. Vectors are a pure function of
// (master_seed, dim, concepts): concept i uses a SplitMix64 stream seeded
// with splitmix64_mix(master_seed ^ (i + 1) * golden), and its k-th output
// supplies elements 64k .. 64k + 63 (bit j mod 64, set = +1).
class Codebook {
 public:
  static Codebook build(std::vector<std::string> concepts, std::size_t dim, std::uint64_t master_seed);

  std::size_t dim() const noexcept { return data_->dim; }
  std::size_t size() const noexcept { return data_->concepts.size(); }
  std::uint64_t master_seed() const noexcept { return data_->master_seed; }
  const std::vector<std::string>& concepts() const noexcept { return data_->concepts; }

  const Hypervector& vector(std::size_t index) const { return data_->vectors.at(index); }
  // Throws InvalidArgument naming the concept if absent.
  const Hypervector& vector(std::string_view name) const;

  std::optional<std::size_t> index_of(std::string_view name) const;
  bool contains(std::string_view name) const { return index_of(name).has_value(); }

 private:
  struct Data {
    std::uint64_t master_seed = 0;
    std::size_t dim = 0;
    std::vector<std::string> concepts;
    std::vector<Hypervector> vectors;
    std::map<std::string, std::size_t, std::less<>> index;
  };
  std::shared_ptr<const Data> data_;
};

// Hypervector for concept `index` under the codebook construction rule.
Hypervector concept_vector(std::uint64_t master_seed, std::size_t index, std::size_t dim);

// Top-k concepts by cosine with similarity >= min_sim, descending, ties by
// codebook index.
std::vector<Match> nearest(const Codebook& cb, const Hypervector& v, std::size_t k, double min_sim);

std::vector<Match> nearest(const Codebook& cb, std::span<const float> v, std::size_t k, double min_sim);

template <typename Derived>
std::vector<Match> nearest(const Codebook& cb, const Eigen::MatrixBase<Derived>& v, std::size_t k,
                           double min_sim) {
  const Eigen::VectorXf dense = v.template cast<float>();
  return nearest(cb, std::span<const float>(dense.data(), static_cast<std::size_t>(dense.size())), k, min_sim);
}

// "dim"/"master_seed"/"concepts" JSON description (vectors are regenerated).
std::string codebook_to_json(const Codebook& cb);
Codebook codebook_from_json(std::string_view text);
void save_codebook(const Codebook& cb, const std::string& path);
Codebook load_codebook(const std::string& path);

// Inspection dump: "HDPB", u32 version, u32 header length, JSON header, then
// n_c rows of packed sign bits (LSB-first within a byte, rows byte-padded).
void save_codebook_binary(const Codebook& cb, const std::string& path);
Codebook load_codebook_binary(const std::string& path);

// ---------------------------------------------------------------------------

template <typename Derived>
Hypervector Hypervector::sign_of(const Eigen::DenseBase<Derived>& values) {
  const auto n = static_cast<std::size_t>(values.size());
  std::vector<std::uint64_t> words((n + 63) / 64, 0);
  for (std::size_t j = 0; j < n; ++j) {
    if (values(static_cast<Eigen::Index>(j)) >= 0) words[j >> 6] |= std::uint64_t{1} << (j & 63);
  }
  return Hypervector(std::move(words), n);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> Hypervector::dense() const {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(static_cast<Eigen::Index>(dim_));
  for (std::size_t j = 0; j < dim_; ++j) out(static_cast<Eigen::Index>(j)) = static_cast<Scalar>((*this)[j]);
  return out;
}

}  // namespace hdprobe::vsa
