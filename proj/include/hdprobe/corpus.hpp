#pragma once

// Analogy knowledge bases, templated rendering, augmentation, splits and the
// VSA target encodings built from them.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hdprobe/vsa.hpp"

namespace hdprobe::corpus {

enum class Category {
  MorphologicalModifiers,
  VerbalGrammaticalForms,
  FactualKnowledge,
  SemanticRelations,
  Mathematics,
  SemanticHierarchies,
};

enum class Source { GoogleAnalogy, Bats, MathSynth };

enum class Template { Colon, Verbose };

std::string_view to_string(Category c);
std::string_view to_string(Source s);
std::string_view to_string(Template t);
Category category_from_string(std::string_view s);
Template template_from_string(std::string_view s);

struct Domain {
  std::string name;
  Category category = Category::SemanticRelations;
  Source source = Source::GoogleAnalogy;
};

struct AnalogyPair {
  std::string key;
  std::string value;
  std::string domain;

  friend bool operator==(const AnalogyPair&, const AnalogyPair&) = default;
};

struct DomainPairs {
  Domain domain;
  std::vector<AnalogyPair> pairs;
};

struct AnalogyExample {
  std::string id;
  AnalogyPair pair_a;  // a1 : a2
  AnalogyPair pair_b;  // b1 : b2 (b2 is the target)
  Template tmpl = Template::Colon;
  Category category = Category::SemanticRelations;
  std::string rendered;
  std::string target;

  const std::string& a1() const noexcept { return pair_a.key; }
  const std::string& a2() const noexcept { return pair_a.value; }
  const std::string& b1() const noexcept { return pair_b.key; }
  const std::string& b2() const noexcept { return pair_b.value; }
  const std::string& domain() const noexcept { return pair_b.domain; }

  // Rendered text with the trailing target removed, as fed to a language model.
  std::string prompt() const;
};

struct QaExample {
  std::string id;
  std::string question_text;
  std::string context_text;
  std::vector<std::string> question_features;
  std::vector<std::string> answer_features;
  std::string target_answer;
};

// concept -> {(linked concept, domain)} over every pair, in both directions.
class ConceptLinkageIndex {
 public:
  ConceptLinkageIndex() = default;
  explicit ConceptLinkageIndex(const std::vector<DomainPairs>& domains);

  void add(const AnalogyPair& pair);

  const std::set<std::pair<std::string, std::string>>& links(std::string_view name) const;

  // True if `a` and `b` are linked by a pair from a domain other than `domain`.
  bool linked_outside(std::string_view a, std::string_view b, std::string_view domain) const;

  std::size_t size() const noexcept { return links_.size(); }

 private:
  std::map<std::string, std::set<std::pair<std::string, std::string>>, std::less<>> links_;
};

// Codebook key for a word or phrase: lowercase, with multi-word phrases
// joined in camel case ("the Black Sea" -> "theBlackSea").
std::string normalize_concept(std::string_view text);

// Upstream domain label -> snake_case name ("gram3-comparative" ->
// "comparative", "male - female" -> "male_female").
std::string normalize_domain_name(std::string_view raw);

// Category of a known domain; unknown names yield nullopt.
std::optional<Category> known_category(std::string_view domain_name);

// Lines starting with ": " open a section; other non-blank lines must hold 4
// tokens "a1 a2 b1 b2". Pairs are deduplicated per section in first-seen order.
std::vector<DomainPairs> load_google_analogy(const std::string& path);

// One domain per *.txt file (sorted by filename), lines "key<TAB>value[/alt...]".
// Only the first slash alternate is kept.
std::vector<DomainPairs> load_bats(const std::string& dir);

struct MathOptions {
  // Maximum pairs per math domain; keys are picked evenly across the valid range.
  std::map<std::string, std::size_t> caps = default_caps();

  static std::map<std::string, std::size_t> default_caps();
};

// math_double, math_squares, math_cubes, math_division2/5/10, math_root.
std::vector<DomainPairs> gen_math_pairs(const MathOptions& options = {});

std::string render(std::string_view a1, std::string_view a2, std::string_view b1, std::string_view b2,
                   Template tmpl);

// Inverse of render for single-token slots; nullopt if `text` does not fit the template.
std::optional<std::array<std::string, 4>> parse_rendered(std::string_view text, Template tmpl);

// All ordered pairs (pair_a != pair_b) within every domain, deduplicated on
// rendered text. Domains with fewer than two pairs are skipped with a warning.
std::vector<AnalogyExample> generate_examples(const std::vector<DomainPairs>& domains,
                                              Template tmpl = Template::Colon);

// Adds the key/value-swapped and the pair-order-swapped variant of every
// example, then deduplicates. Inputs come first, in their original order.
std::vector<AnalogyExample> augment(const std::vector<AnalogyExample>& examples);

struct Split {
  std::vector<AnalogyExample> train;
  std::vector<AnalogyExample> val;
  std::vector<AnalogyExample> test;
};

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

// Seeded shuffle of indices followed by contiguous cuts.
std::vector<std::size_t> split_indices(std::size_t n, SplitRatios ratios, std::uint64_t seed,
                                       std::size_t* n_train, std::size_t* n_val);
Split split(const std::vector<AnalogyExample>& examples, SplitRatios ratios, std::uint64_t seed);

// Unique normalized concepts of the four slots, in first-occurrence order.
std::vector<std::string> vocabulary(const std::vector<AnalogyExample>& examples);

// polarize((a1 (*) a2) + (b1 (*) b2))
vsa::Hypervector encode_analogy(const AnalogyExample& example, const vsa::Codebook& codebook,
                                const vsa::TieBreak& tie_break);

// Polarized bundle of the question features (plus the answer features when
// include_answer). Throws naming the first feature missing from the codebook.
vsa::Hypervector encode_qa(const QaExample& example, const vsa::Codebook& codebook, const vsa::TieBreak& tie_break,
                           bool include_answer);

// Incremental encodings A_1 .. A_n: the first i question features for
// i = 1..q, then the full question bundle plus the answer.
std::vector<vsa::Hypervector> encode_qa_incremental(const QaExample& example, const vsa::Codebook& codebook,
                                                    const vsa::TieBreak& tie_break);

// JSON Lines I/O.
std::string example_to_jsonl(const AnalogyExample& e);
AnalogyExample example_from_jsonl(std::string_view line);
void write_examples(const std::string& path, const std::vector<AnalogyExample>& examples);
std::vector<AnalogyExample> read_examples(const std::string& path);

std::vector<QaExample> read_qa_examples(const std::string& path);
void write_qa_examples(const std::string& path, const std::vector<QaExample>& examples);

}  // namespace hdprobe::corpus
