#include "hdprobe/dla.hpp"

#include <algorithm>
#include <set>

namespace hdprobe::dla {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::size_t class_index(probing::ExtractionClass c) {
  const auto it = std::find(probing::kAllClasses.begin(), probing::kAllClasses.end(), c);
  return static_cast<std::size_t>(it - probing::kAllClasses.begin());
}

}  // namespace

std::vector<TokenLogit> project(const Eigen::VectorXf& v, const formats::Unembedding& u, std::size_t k,
                                bool final_norm, double norm_eps) {
  if (v.size() != u.matrix.cols()) {
    throw InvalidArgument("project: vector of dimension " + std::to_string(v.size()) + ", unembedding expects " +
                          std::to_string(u.matrix.cols()));
  }
  if (k == 0) throw InvalidArgument("project: k must be positive");
  Eigen::VectorXd x = v.cast<double>();
  if (final_norm) {
    x.array() -= x.mean();
    x /= std::sqrt(x.squaredNorm() / static_cast<double>(x.size()) + norm_eps);
  }
  const Eigen::VectorXd logits = u.matrix.cast<double>() * x;
  std::vector<std::size_t> idx(static_cast<std::size_t>(logits.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const std::size_t n = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double la = logits(static_cast<Eigen::Index>(a));
                      const double lb = logits(static_cast<Eigen::Index>(b));
                      return la != lb ? la > lb : a < b;
                    });
  std::vector<TokenLogit> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({idx[i], u.vocab[idx[i]], logits(static_cast<Eigen::Index>(idx[i]))});
  }
  return out;
}

ConceptMatcher::ConceptMatcher(const std::vector<std::string>& concepts) {
  sorted_.reserve(concepts.size());
  for (const auto& c : concepts) sorted_.emplace_back(lower(c), c);
  // Duplicate lowercase keys keep the earliest concept.
  std::stable_sort(sorted_.begin(), sorted_.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  sorted_.erase(std::unique(sorted_.begin(), sorted_.end(),
                            [](const auto& a, const auto& b) { return a.first == b.first; }),
                sorted_.end());
}

std::optional<std::string> ConceptMatcher::match(std::string_view token) const {
  const std::string t = probing::normalize_token(token);
  if (t.empty()) return std::nullopt;
  auto it = std::lower_bound(sorted_.begin(), sorted_.end(), t,
                             [](const auto& entry, const std::string& key) { return entry.first < key; });
  if (it == sorted_.end()) return std::nullopt;
  if (it->first == t) return it->second;
  if (t.size() < 3 || !it->first.starts_with(t)) return std::nullopt;
  const auto next = std::next(it);
  if (next != sorted_.end() && next->first.starts_with(t)) return std::nullopt;
  return it->second;
}

std::optional<std::string> fuzzy_match(std::string_view token, const std::vector<std::string>& concepts) {
  return ConceptMatcher(concepts).match(token);
}

DlaResult dla_extract(const ingestion::EmbeddingRecord& record, int layer_start, const formats::Unembedding& u,
                      const ConceptMatcher& matcher, const probing::ProbeCase& c,
                      const corpus::ConceptLinkageIndex& linkage, const DlaConfig& config) {
  DlaResult out;
  out.id = record.input_id;
  std::set<std::string> seen;
  for (Eigen::Index r = 0; r < record.matrix.rows(); ++r) {
    LayerResult layer;
    layer.layer = layer_start + static_cast<int>(r);
    layer.top = project(record.matrix.row(r).transpose(), u, config.k, config.final_norm, config.norm_eps);
    std::set<std::string> in_layer;
    for (const auto& t : layer.top) {
      if (auto m = matcher.match(t.token); m && in_layer.insert(*m).second) {
        layer.concepts.push_back(*m);
        if (seen.insert(*m).second) out.concepts.push_back(*m);
      }
    }
    out.layers.push_back(std::move(layer));
  }
  out.class_label = probing::classify(out.concepts, c, linkage);
  return out;
}

Contingency compare(const std::vector<LabeledCase>& vsa, const std::vector<LabeledCase>& dla) {
  std::map<std::string, probing::ExtractionClass> by_id;
  for (const auto& d : dla) {
    if (!by_id.emplace(d.id, d.label).second) throw InvalidArgument("compare: duplicate DLA id '" + d.id + "'");
  }
  if (by_id.size() != vsa.size()) throw InvalidArgument("compare: VSA and DLA cover different cases");
  const auto n_classes = static_cast<Eigen::Index>(probing::kAllClasses.size());
  Contingency t;
  t.counts = Eigen::MatrixXi::Zero(n_classes, n_classes);
  for (auto c : probing::kAllClasses) {
    t.vsa_given_dla_none[c] = 0;
    t.dla_given_vsa_none[c] = 0;
  }
  std::set<std::string> seen;
  for (const auto& v : vsa) {
    const auto it = by_id.find(v.id);
    if (it == by_id.end()) throw InvalidArgument("compare: case '" + v.id + "' has no DLA result");
    if (!seen.insert(v.id).second) throw InvalidArgument("compare: duplicate VSA id '" + v.id + "'");
    const auto d = it->second;
    ++t.counts(static_cast<Eigen::Index>(class_index(v.label)), static_cast<Eigen::Index>(class_index(d)));
    if (d == probing::ExtractionClass::None) {
      ++t.dla_none;
      ++t.vsa_given_dla_none[v.label];
    }
    if (v.label == probing::ExtractionClass::None) {
      ++t.vsa_none;
      ++t.dla_given_vsa_none[d];
    }
    ++t.n;
  }
  return t;
}

}  // namespace hdprobe::dla
