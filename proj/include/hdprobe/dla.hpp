#pragma once

// Direct logit attribution baseline: per-layer unembedding projection,
// fuzzy token-to-concept matching and VSA-vs-DLA contingency tables.

#include <Eigen/Core>

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hdprobe/formats.hpp"
#include "hdprobe/probing.hpp"

namespace hdprobe::dla {

struct TokenLogit {
  std::size_t index = 0;
  std::string token;
  double logit = 0.0;
};

struct DlaConfig {
  std::size_t k = 5;
  // Parameter-free LayerNorm on each layer vector before projection.
  bool final_norm = false;
  double norm_eps = 1e-5;
};

// logits = matrix * v; top-k descending, lower index wins ties.
std::vector<TokenLogit> project(const Eigen::VectorXf& v, const formats::Unembedding& unembedding, std::size_t k,
                                bool final_norm = false, double norm_eps = 1e-5);

// Token -> concept lookup. A normalized token matches a concept exactly
// (case-insensitive), or else is a prefix of exactly one concept and at
// least 3 characters long.
class ConceptMatcher {
 public:
  explicit ConceptMatcher(const std::vector<std::string>& concepts);

  std::optional<std::string> match(std::string_view token) const;

 private:
  std::vector<std::pair<std::string, std::string>> sorted_;  // (lowercase, concept)
};

std::optional<std::string> fuzzy_match(std::string_view token, const std::vector<std::string>& concepts);

struct LayerResult {
  int layer = 0;
  std::vector<TokenLogit> top;
  std::vector<std::string> concepts;  // matched, in rank order, unique
};

struct DlaResult {
  std::string id;
  std::vector<LayerResult> layers;
  std::vector<std::string> concepts;  // union over layers, first-seen order
  probing::ExtractionClass class_label = probing::ExtractionClass::None;
};

// `record.matrix` row i is the stored layer layer_start + i.
DlaResult dla_extract(const ingestion::EmbeddingRecord& record, int layer_start,
                      const formats::Unembedding& unembedding, const ConceptMatcher& matcher,
                      const probing::ProbeCase& c, const corpus::ConceptLinkageIndex& linkage,
                      const DlaConfig& config = {});

struct LabeledCase {
  std::string id;
  probing::ExtractionClass label = probing::ExtractionClass::None;
};

struct Contingency {
  // counts(i, j): VSA label kAllClasses[i] and DLA label kAllClasses[j].
  Eigen::MatrixXi counts;
  std::size_t n = 0;
  // VSA labels on the cases where DLA found nothing, and vice versa.
  std::map<probing::ExtractionClass, std::size_t> vsa_given_dla_none;
  std::map<probing::ExtractionClass, std::size_t> dla_given_vsa_none;
  std::size_t dla_none = 0;
  std::size_t vsa_none = 0;
};

// Cases are aligned by id; any id present on one side only is rejected.
Contingency compare(const std::vector<LabeledCase>& vsa, const std::vector<LabeledCase>& dla);

}  // namespace hdprobe::dla
