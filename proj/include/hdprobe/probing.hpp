#pragma once

// Concept extraction from predicted VSA encodings: candidate unbinding,
// extraction classes, precision metrics, control baselines and QA probing.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hdprobe/corpus.hpp"
#include "hdprobe/ingestion.hpp"
#include "hdprobe/vsa.hpp"

namespace hdprobe::probing {

enum class ExtractionClass {
  KeyTarget,
  None,
  Key,
  Example,
  ContextTarget,
  KeyKeyValues,
  OutOfContext,
  ExampleValueKeyValues,
  KeyValuesTarget,
  Target,
};

inline constexpr std::array<ExtractionClass, 10> kAllClasses = {
    ExtractionClass::KeyTarget,    ExtractionClass::None,
    ExtractionClass::Key,          ExtractionClass::Example,
    ExtractionClass::ContextTarget, ExtractionClass::KeyKeyValues,
    ExtractionClass::OutOfContext, ExtractionClass::ExampleValueKeyValues,
    ExtractionClass::KeyValuesTarget, ExtractionClass::Target,
};

std::string_view to_string(ExtractionClass c);
ExtractionClass extraction_class_from_string(std::string_view s);

enum class CandidateKind { None, Key, ExampleKey, ExampleValue, Example, Context, Greedy };

std::string_view to_string(CandidateKind k);

struct UnbindCandidate {
  CandidateKind kind = CandidateKind::None;
  // Concepts whose bound product is unbound; empty for None.
  std::vector<std::string> factors;

  std::string label() const;  // "Key(mexico)", "None", ...

  friend bool operator==(const UnbindCandidate&, const UnbindCandidate&) = default;
};

struct ProbeCase {
  std::string id;
  // Normalized codebook keys; a1, a2, b1 may be empty (e.g. QA).
  std::string a1, a2, b1, b2;
  std::string domain;
  std::string category;
  std::string model;
  Eigen::VectorXf prediction;  // raw encoder output, not polarized
  Eigen::VectorXf embedding;   // encoder input, needed only by the permuted baseline
  std::optional<ingestion::NextTokenMeta> meta;

  std::vector<std::string> in_context() const;  // non-empty a1, a2, b1
};

ProbeCase make_case(const corpus::AnalogyExample& example, Eigen::VectorXf prediction);

struct ProbeConfig {
  double threshold = 0.1;
  std::size_t k = 5;
  bool greedy = true;
  // Maximum codebook concepts tried by Greedy; 0 scans the whole codebook.
  std::size_t greedy_cap = 0;
};

struct ExtractionResult {
  std::string id;
  UnbindCandidate candidate;
  std::vector<vsa::Match> matches;  // sim >= threshold, at most k, descending
  ExtractionClass class_label = ExtractionClass::None;
  std::optional<double> noise;      // similarity of the retrieved target
};

// None first, then the structured candidates whose factors are all present.
std::vector<UnbindCandidate> enumerate_candidates(const ProbeCase& c);

vsa::Hypervector candidate_vector(const UnbindCandidate& candidate, const vsa::Codebook& codebook);

// Candidates are ranked target-first: one whose residual reaches the
// threshold against b2 beats any that does not, higher b2 similarity
// breaks ties; below that, the best similarity to an in-context concept
// that is not one of the candidate's own factors. Greedy runs only when no
// structured candidate reaches b2.
ExtractionResult probe(const ProbeCase& c, const vsa::Codebook& codebook,
                       const corpus::ConceptLinkageIndex& linkage, const ProbeConfig& config = {});

// Class of an extraction with concept set `extracted`.
ExtractionClass classify(const std::vector<std::string>& extracted, const ProbeCase& c,
                         const corpus::ConceptLinkageIndex& linkage);
ExtractionClass classify(const ExtractionResult& result, const ProbeCase& c,
                         const corpus::ConceptLinkageIndex& linkage);

// Lowercase and strip surrounding whitespace and tokenizer space markers.
std::string normalize_token(std::string_view token);

// 1 if the target is among the top-k tokens, 0.5 if a top-k token is a
// proper prefix of it (length >= 2), else 0.
double next_token_precision(const ingestion::NextTokenMeta& meta, std::string_view target, std::size_t k);

bool target_in_top_k(const ExtractionResult& result, std::string_view target, std::size_t k);

struct CaseScores {
  std::string id;
  std::string domain;
  std::string category;
  std::string model;
  std::string candidate;
  ExtractionClass class_label = ExtractionClass::None;
  double probing1 = 0.0;
  double probing5 = 0.0;
  std::optional<double> next_token1;
  std::optional<double> next_token5;
  std::optional<long long> target_rank;
  std::optional<double> target_prob;
};

struct Breakdown {
  std::size_t n = 0;
  double probing1 = 0.0;
  double probing5 = 0.0;
  std::optional<double> next_token1;
  std::optional<double> next_token5;
};

struct MetricsReport {
  std::size_t n = 0;
  double probing1 = 0.0;
  double probing5 = 0.0;
  std::optional<double> next_token1;  // over cases carrying next-token metadata
  std::optional<double> next_token5;
  std::optional<double> target_rank_mean;
  std::optional<double> target_prob_mean;
  std::map<std::string, Breakdown> per_category;
  std::map<std::string, Breakdown> per_model;
  std::map<ExtractionClass, std::size_t> class_counts;
  std::vector<CaseScores> rows;
};

// Fraction of results with the case's target among the top-k matches.
double probing_precision(const std::vector<ExtractionResult>& results, const std::vector<ProbeCase>& cases,
                         std::size_t k);

MetricsReport summarize(const std::vector<ProbeCase>& cases, const std::vector<ExtractionResult>& results);

std::vector<ExtractionResult> probe_all(const std::vector<ProbeCase>& cases, const vsa::Codebook& codebook,
                                        const corpus::ConceptLinkageIndex& linkage, const ProbeConfig& config);

using Predictor = std::function<Eigen::VectorXf(const Eigen::VectorXf&)>;

// Seeded coordinate permutation for case `index`; nullopt seed gives identity.
std::vector<Eigen::Index> case_permutation(Eigen::Index dim, std::optional<std::uint64_t> seed, std::size_t index);

// Re-predicts every case from its permuted embedding, then probes as usual.
MetricsReport permuted_baseline(const std::vector<ProbeCase>& cases, const Predictor& predictor,
                                const vsa::Codebook& codebook, const corpus::ConceptLinkageIndex& linkage,
                                const ProbeConfig& config, std::optional<std::uint64_t> seed);

// Replaces a1, a2, b1, b2 with distinct seeded-random codebook concepts
// drawn from outside the case's own concepts.
ProbeCase unrelated_case(const ProbeCase& c, const vsa::Codebook& codebook, std::uint64_t seed, std::size_t index);

MetricsReport unrelated_baseline(const std::vector<ProbeCase>& cases, const vsa::Codebook& codebook,
                                 const corpus::ConceptLinkageIndex& linkage, const ProbeConfig& config,
                                 std::uint64_t seed);

// Direct codebook comparison, no unbinding.
std::vector<vsa::Match> qa_probe(const Eigen::VectorXf& encoding, const vsa::Codebook& codebook,
                                 double threshold = 0.1, std::size_t k = 10);

// Extractive-QA normalization: lowercase, drop punctuation and the
// articles a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);

struct QaScores {
  double f1 = 0.0;
  bool exact_match = false;
  bool mention = false;  // normalized target occurs inside the normalized prediction
};

QaScores qa_metrics(std::string_view prediction, std::string_view target);

class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  // word2vec text format; an optional "<count> <dim>" first line is skipped.
  static EmbeddingTable load_text(const std::string& path);

  void add(std::string word, Eigen::VectorXf vector);
  const Eigen::VectorXf* find(std::string_view word) const;
  std::size_t size() const noexcept { return vectors_.size(); }
  Eigen::Index dim() const noexcept { return dim_; }

 private:
  std::map<std::string, Eigen::VectorXf, std::less<>> vectors_;
  Eigen::Index dim_ = 0;
};

struct DriftStats {
  double question_before = 0.0;
  double question_after = 0.0;
  double answer_before = 0.0;
  double answer_after = 0.0;
  double question_delta = 0.0;  // after - before
  double answer_delta = 0.0;
  std::size_t missing = 0;      // distinct words without an embedding
};

// Relatedness of a concept set to a feature set: mean over embedded concepts
// of the best cosine to any embedded feature (0 when either side is empty).
double relatedness(const std::vector<std::string>& concepts, const std::vector<std::string>& features,
                   const EmbeddingTable& table);

DriftStats concept_drift(const std::vector<std::string>& before, const std::vector<std::string>& after,
                         const std::vector<std::string>& question_features,
                         const std::vector<std::string>& answer_features, const EmbeddingTable& table);

}  // namespace hdprobe::probing
