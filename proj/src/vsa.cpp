#include "hdprobe/vsa.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hdprobe/binary_io.hpp"

namespace hdprobe::vsa {
namespace {

std::size_t word_count(std::size_t dim) { return (dim + 63) / 64; }

std::uint64_t tail_mask(std::size_t dim) {
  const std::size_t rem = dim & 63;
  return rem == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << rem) - 1;
}

void require_same_dim(const Hypervector& a, const Hypervector& b, const char* op) {
  if (a.dim() != b.dim()) {
    throw InvalidArgument(std::string(op) + ": dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                          std::to_string(b.dim()) + ")");
  }
}

// Keeps the k best entries ordered by (similarity desc, index asc).
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}

  void offer(double sim, std::size_t index) {
    if (k_ == 0) return;
    if (best_.size() == k_ && !better(sim, index, best_.back())) return;
    auto pos = std::find_if(best_.begin(), best_.end(),
                            [&](const auto& e) { return better(sim, index, e); });
    best_.insert(pos, {sim, index});
    if (best_.size() > k_) best_.pop_back();
  }

  std::vector<Match> matches(const Codebook& cb) const {
    std::vector<Match> out;
    out.reserve(best_.size());
    for (const auto& [sim, idx] : best_) out.push_back(Match{cb.concepts()[idx], sim, idx});
    return out;
  }

 private:
  static bool better(double sim, std::size_t index, const std::pair<double, std::size_t>& e) {
    return sim > e.first || (sim == e.first && index < e.second);
  }

  std::size_t k_;
  std::vector<std::pair<double, std::size_t>> best_;
};

}  // namespace

Hypervector::Hypervector(std::size_t dim) : dim_(dim), words_(word_count(dim), ~std::uint64_t{0}) { mask_tail(); }

Hypervector::Hypervector(std::vector<std::uint64_t> words, std::size_t dim) : dim_(dim), words_(std::move(words)) {
  mask_tail();
}

void Hypervector::mask_tail() noexcept {
  if (!words_.empty()) words_.back() &= tail_mask(dim_);
}

Hypervector Hypervector::from_signs(std::span<const int> signs) {
  std::vector<std::uint64_t> words(word_count(signs.size()), 0);
  for (std::size_t j = 0; j < signs.size(); ++j) {
    if (signs[j] == 1) {
      words[j >> 6] |= std::uint64_t{1} << (j & 63);
    } else if (signs[j] != -1) {
      throw InvalidArgument("hypervector element " + std::to_string(j) + " is not bipolar");
    }
  }
  return Hypervector(std::move(words), signs.size());
}

Hypervector Hypervector::from_words(std::vector<std::uint64_t> words, std::size_t dim) {
  if (words.size() != word_count(dim)) throw InvalidArgument("hypervector: word count does not match dim");
  return Hypervector(std::move(words), dim);
}

std::vector<int> Hypervector::signs() const {
  std::vector<int> out(dim_);
  for (std::size_t j = 0; j < dim_; ++j) out[j] = (*this)[j];
  return out;
}

Hypervector Hypervector::operator-() const {
  std::vector<std::uint64_t> w(words_.size());
  std::transform(words_.begin(), words_.end(), w.begin(), [](std::uint64_t x) { return ~x; });
  return Hypervector(std::move(w), dim_);
}

void Accumulator::add(const Hypervector& v) {
  if (v.dim() != dim()) throw InvalidArgument("bundle: dimension mismatch");
  for (std::size_t j = 0; j < v.dim(); ++j) sums_(static_cast<Eigen::Index>(j)) += v[j];
  ++count_;
}

Hypervector bind(const Hypervector& a, const Hypervector& b) {
  require_same_dim(a, b, "bind");
  std::vector<std::uint64_t> w(a.words().size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = ~(a.words()[i] ^ b.words()[i]);
  return Hypervector::from_words(std::move(w), a.dim());
}

Hypervector unbind(const Hypervector& c, const Hypervector& a) {
  require_same_dim(c, a, "unbind");
  return bind(c, a);
}

Accumulator bundle(std::span<const Hypervector> vs) {
  if (vs.empty()) throw InvalidArgument("bundle: no input vectors");
  Accumulator acc(vs.front().dim());
  for (const auto& v : vs) acc.add(v);
  return acc;
}

Accumulator bundle(std::initializer_list<Hypervector> vs) {
  return bundle(std::span<const Hypervector>(vs.begin(), vs.size()));
}

Hypervector polarize(const Accumulator& acc, const TieBreak& tie_break) {
  const std::size_t dim = acc.dim();
  std::vector<std::uint64_t> words(word_count(dim), 0);
  const auto& sums = acc.sums();
  for (std::size_t j = 0; j < dim; ++j) {
    const int s = sums(static_cast<Eigen::Index>(j));
    bool positive = s > 0;
    if (s == 0) {
      positive = std::visit(
          [j](const auto& tb) {
            using T = std::decay_t<decltype(tb)>;
            if constexpr (std::is_same_v<T, PlusOne>) {
              return true;
            } else {
              return (derive_seed(tb.seed, j) >> 63) != 0;
            }
          },
          tie_break);
    }
    if (positive) words[j >> 6] |= std::uint64_t{1} << (j & 63);
  }
  return Hypervector::from_words(std::move(words), dim);
}

double cosine(const Hypervector& a, const Hypervector& b) {
  require_same_dim(a, b, "cosine");
  if (a.dim() == 0) throw InvalidArgument("cosine: zero vector");
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < a.words().size(); ++i) mismatches += std::popcount(a.words()[i] ^ b.words()[i]);
  const auto d = static_cast<double>(a.dim());
  return (d - 2.0 * static_cast<double>(mismatches)) / d;
}

Hypervector concept_vector(std::uint64_t master_seed, std::size_t index, std::size_t dim) {
  SplitMix64 stream(derive_seed(master_seed, index));
  std::vector<std::uint64_t> words(word_count(dim));
  for (auto& w : words) w = stream.next();
  return Hypervector::from_words(std::move(words), dim);
}

Codebook Codebook::build(std::vector<std::string> concepts, std::size_t dim, std::uint64_t master_seed) {
  if (concepts.empty()) throw InvalidArgument("codebook: no concepts");
  if (dim < 2) throw InvalidArgument("codebook: dim must be >= 2");
  auto data = std::make_shared<Data>();
  data->master_seed = master_seed;
  data->dim = dim;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    if (!data->index.emplace(concepts[i], i).second) {
      throw InvalidArgument("codebook: duplicate concept '" + concepts[i] + "'");
    }
  }
  data->vectors.reserve(concepts.size());
  for (std::size_t i = 0; i < concepts.size(); ++i) data->vectors.push_back(concept_vector(master_seed, i, dim));
  data->concepts = std::move(concepts);
  Codebook cb;
  cb.data_ = std::move(data);
  return cb;
}

const Hypervector& Codebook::vector(std::string_view name) const {
  const auto idx = index_of(name);
  if (!idx) throw InvalidArgument("codebook: unknown concept '" + std::string(name) + "'");
  return data_->vectors[*idx];
}

std::optional<std::size_t> Codebook::index_of(std::string_view name) const {
  const auto it = data_->index.find(name);
  if (it == data_->index.end()) return std::nullopt;
  return it->second;
}

std::vector<Match> nearest(const Codebook& cb, const Hypervector& v, std::size_t k, double min_sim) {
  if (v.dim() != cb.dim()) throw InvalidArgument("nearest: dimension mismatch");
  if (k == 0) throw InvalidArgument("nearest: k must be >= 1");
  TopK top(k);
  for (std::size_t i = 0; i < cb.size(); ++i) {
    const double sim = cosine(cb.vector(i), v);
    if (sim >= min_sim) top.offer(sim, i);
  }
  return top.matches(cb);
}

std::vector<Match> nearest(const Codebook& cb, std::span<const float> v, std::size_t k, double min_sim) {
  if (v.size() != cb.dim()) throw InvalidArgument("nearest: dimension mismatch");
  if (k == 0) throw InvalidArgument("nearest: k must be >= 1");
  double total = 0.0;
  double norm2 = 0.0;
  for (float x : v) {
    total += x;
    norm2 += static_cast<double>(x) * x;
  }
  if (norm2 == 0.0) throw InvalidArgument("nearest: zero query vector");
  const double scale = 1.0 / (std::sqrt(norm2) * std::sqrt(static_cast<double>(cb.dim())));
  TopK top(k);
  for (std::size_t i = 0; i < cb.size(); ++i) {
    // <v, s> = 2 * sum_{s_j = +1} v_j - sum_j v_j
    double positive = 0.0;
    const auto words = cb.vector(i).words();
    for (std::size_t w = 0; w < words.size(); ++w) {
      std::uint64_t bits = words[w];
      while (bits) {
        const int b = std::countr_zero(bits);
        positive += v[w * 64 + static_cast<std::size_t>(b)];
        bits &= bits - 1;
      }
    }
    const double sim = (2.0 * positive - total) * scale;
    if (sim >= min_sim) top.offer(sim, i);
  }
  return top.matches(cb);
}

std::string codebook_to_json(const Codebook& cb) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["dim"] = cb.dim();
  j["master_seed"] = std::to_string(cb.master_seed());
  j["concepts"] = cb.concepts();
  return j.dump();
}

Codebook codebook_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("codebook: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != 1) throw FormatError("codebook: unsupported version");
    const auto seed_text = j.at("master_seed").get<std::string>();
    std::size_t used = 0;
    const std::uint64_t seed = std::stoull(seed_text, &used);
    if (used != seed_text.size()) throw FormatError("codebook: master_seed is not an integer");
    return Codebook::build(j.at("concepts").get<std::vector<std::string>>(), j.at("dim").get<std::size_t>(), seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("codebook: ") + e.what());
  } catch (const std::logic_error&) {
    throw FormatError("codebook: master_seed is not an integer");
  }
}

void save_codebook(const Codebook& cb, const std::string& path) {
  auto out = io::open_output(path);
  out << codebook_to_json(cb) << '\n';
}

Codebook load_codebook(const std::string& path) {
  auto in = io::open_input(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return codebook_from_json(ss.str());
}

void save_codebook_binary(const Codebook& cb, const std::string& path) {
  auto out = io::open_output(path);
  io::write_frame_header(out, "HDPB", 1, codebook_to_json(cb));
  const std::size_t row_bytes = (cb.dim() + 7) / 8;
  std::vector<char> row(row_bytes);
  for (std::size_t i = 0; i < cb.size(); ++i) {
    const auto words = cb.vector(i).words();
    for (std::size_t b = 0; b < row_bytes; ++b) row[b] = static_cast<char>((words[b / 8] >> ((b % 8) * 8)) & 0xFF);
    out.write(row.data(), static_cast<std::streamsize>(row_bytes));
  }
}

Codebook load_codebook_binary(const std::string& path) {
  auto in = io::open_input(path);
  const auto header = io::read_frame_header(in, "HDPB");
  if (header.version != 1) throw FormatError("HDPB: unsupported version " + std::to_string(header.version));
  Codebook cb = codebook_from_json(header.json);
  const std::size_t row_bytes = (cb.dim() + 7) / 8;
  std::vector<unsigned char> row(row_bytes);
  for (std::size_t i = 0; i < cb.size(); ++i) {
    if (!in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row_bytes))) {
      throw FormatError("HDPB: truncated payload");
    }
    std::vector<std::uint64_t> words((cb.dim() + 63) / 64, 0);
    for (std::size_t b = 0; b < row_bytes; ++b) words[b / 8] |= static_cast<std::uint64_t>(row[b]) << ((b % 8) * 8);
    if (Hypervector::from_words(std::move(words), cb.dim()) != cb.vector(i)) {
      throw FormatError("HDPB: payload row " + std::to_string(i) + " does not match the regenerated codebook");
    }
  }
  return cb;
}

}  // namespace hdprobe::vsa
