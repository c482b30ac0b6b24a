#include "hdprobe/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "hdprobe/binary_io.hpp"
#include "hdprobe/log.hpp"

namespace hdprobe::corpus {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void push_unique(std::vector<AnalogyPair>& pairs, AnalogyPair p) {
  if (std::find(pairs.begin(), pairs.end(), p) == pairs.end()) pairs.push_back(std::move(p));
}

Domain make_domain(const std::string& name, Source source) {
  Domain d{name, Category::SemanticRelations, source};
  if (auto c = known_category(name)) {
    d.category = *c;
  } else {
    warn("domain '" + name + "' has no known category; using Semantic Relations");
  }
  return d;
}

const std::map<std::string, Category, std::less<>>& category_table() {
  using C = Category;
  static const std::map<std::string, Category, std::less<>> table = {
      // Google analogy sections
      {"capital_common_countries", C::FactualKnowledge},
      {"capital_world", C::FactualKnowledge},
      {"currency", C::FactualKnowledge},
      {"city_in_state", C::FactualKnowledge},
      {"family", C::SemanticRelations},
      {"adjective_to_adverb", C::MorphologicalModifiers},
      {"opposite", C::SemanticRelations},
      {"comparative", C::MorphologicalModifiers},
      {"superlative", C::VerbalGrammaticalForms},
      {"present_participle", C::VerbalGrammaticalForms},
      {"nationality_adjective", C::SemanticRelations},
      {"past_tense", C::VerbalGrammaticalForms},
      {"plural", C::VerbalGrammaticalForms},
      {"plural_verbs", C::VerbalGrammaticalForms},
      // BATS inflectional
      {"noun_plural_reg", C::VerbalGrammaticalForms},
      {"noun_plural_irreg", C::VerbalGrammaticalForms},
      {"adj_comparative", C::MorphologicalModifiers},
      {"adj_superlative", C::MorphologicalModifiers},
      {"verb_inf_3pSg", C::VerbalGrammaticalForms},
      {"verb_inf_Ving", C::VerbalGrammaticalForms},
      {"verb_inf_Ved", C::VerbalGrammaticalForms},
      {"verb_Ving_3pSg", C::VerbalGrammaticalForms},
      {"verb_Ving_Ved", C::VerbalGrammaticalForms},
      {"verb_3pSg_Ved", C::VerbalGrammaticalForms},
      // BATS derivational
      {"noun+less_reg", C::MorphologicalModifiers},
      {"un+adj_reg", C::MorphologicalModifiers},
      {"adj+ly_reg", C::MorphologicalModifiers},
      {"over+adj_reg", C::MorphologicalModifiers},
      {"adj+ness_reg", C::MorphologicalModifiers},
      {"re+verb_reg", C::MorphologicalModifiers},
      {"verb+able_reg", C::MorphologicalModifiers},
      {"verb+er_irreg", C::MorphologicalModifiers},
      {"verb+tion_irreg", C::MorphologicalModifiers},
      {"verb+ment_irreg", C::MorphologicalModifiers},
      // BATS encyclopedic
      {"country_capital", C::FactualKnowledge},
      {"country_language", C::FactualKnowledge},
      {"UK_city_county", C::FactualKnowledge},
      {"name_nationality", C::FactualKnowledge},
      {"name_occupation", C::FactualKnowledge},
      {"animal_young", C::SemanticRelations},
      {"animal_sound", C::SemanticRelations},
      {"animal_shelter", C::SemanticRelations},
      {"things_color", C::SemanticRelations},
      {"male_female", C::SemanticRelations},
      // BATS lexicographic
      {"hypernyms_animals", C::SemanticHierarchies},
      {"hypernyms_misc", C::SemanticHierarchies},
      {"hyponyms_misc", C::SemanticHierarchies},
      {"meronyms_substance", C::SemanticHierarchies},
      {"meronyms_member", C::SemanticHierarchies},
      {"meronyms_part", C::SemanticHierarchies},
      {"synonyms_intensity", C::SemanticRelations},
      {"synonyms_exact", C::SemanticRelations},
      {"antonyms_gradable", C::SemanticRelations},
      {"antonyms_binary", C::SemanticRelations},
  };
  return table;
}

std::string number(long long n) { return std::to_string(n); }

// Evenly spaced selection of `cap` items out of `valid`.
std::vector<long long> pick_evenly(const std::vector<long long>& valid, std::size_t cap) {
  if (cap >= valid.size()) return valid;
  std::vector<long long> out;
  out.reserve(cap);
  for (std::size_t i = 0; i < cap; ++i) out.push_back(valid[i * valid.size() / cap]);
  return out;
}

bool is_perfect_square(long long n, long long* root) {
  auto r = static_cast<long long>(std::llround(std::sqrt(static_cast<double>(n))));
  while (r * r > n) --r;
  while ((r + 1) * (r + 1) <= n) ++r;
  if (r * r != n) return false;
  *root = r;
  return true;
}

AnalogyExample make_example(std::string id, const AnalogyPair& a, const AnalogyPair& b, Template tmpl,
                            Category category) {
  AnalogyExample e;
  e.id = std::move(id);
  e.pair_a = a;
  e.pair_b = b;
  e.tmpl = tmpl;
  e.category = category;
  e.rendered = render(a.key, a.value, b.key, b.value, tmpl);
  e.target = b.value;
  return e;
}

}  // namespace

std::string_view to_string(Category c) {
  switch (c) {
    case Category::MorphologicalModifiers: return "Morphological Modifiers";
    case Category::VerbalGrammaticalForms: return "Verbal & Grammatical Forms";
    case Category::FactualKnowledge: return "Factual Knowledge";
    case Category::SemanticRelations: return "Semantic Relations";
    case Category::Mathematics: return "Mathematics";
    case Category::SemanticHierarchies: return "Semantic Hierarchies";
  }
  return "Semantic Relations";
}

std::string_view to_string(Source s) {
  switch (s) {
    case Source::GoogleAnalogy: return "GoogleAnalogy";
    case Source::Bats: return "BATS";
    case Source::MathSynth: return "MathSynth";
  }
  return "GoogleAnalogy";
}

std::string_view to_string(Template t) { return t == Template::Colon ? "colon" : "verbose"; }

Category category_from_string(std::string_view s) {
  for (Category c : {Category::MorphologicalModifiers, Category::VerbalGrammaticalForms, Category::FactualKnowledge,
                     Category::SemanticRelations, Category::Mathematics, Category::SemanticHierarchies}) {
    if (to_string(c) == s) return c;
  }
  throw FormatError("unknown category '" + std::string(s) + "'");
}

Template template_from_string(std::string_view s) {
  if (s == "colon") return Template::Colon;
  if (s == "verbose") return Template::Verbose;
  throw FormatError("unknown template '" + std::string(s) + "'");
}

std::string AnalogyExample::prompt() const {
  const auto pos = rendered.rfind(' ');
  return pos == std::string::npos ? std::string() : rendered.substr(0, pos);
}

ConceptLinkageIndex::ConceptLinkageIndex(const std::vector<DomainPairs>& domains) {
  for (const auto& d : domains) {
    for (const auto& p : d.pairs) add(p);
  }
}

void ConceptLinkageIndex::add(const AnalogyPair& pair) {
  const std::string k = normalize_concept(pair.key);
  const std::string v = normalize_concept(pair.value);
  links_[k].emplace(v, pair.domain);
  links_[v].emplace(k, pair.domain);
}

const std::set<std::pair<std::string, std::string>>& ConceptLinkageIndex::links(std::string_view name) const {
  static const std::set<std::pair<std::string, std::string>> empty;
  const auto it = links_.find(name);
  return it == links_.end() ? empty : it->second;
}

bool ConceptLinkageIndex::linked_outside(std::string_view a, std::string_view b, std::string_view domain) const {
  for (const auto& [other, dom] : links(a)) {
    if (other == b && dom != domain) return true;
  }
  return false;
}

std::string normalize_concept(std::string_view text) {
  const auto words = split_ws(text);
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string w = lower(words[i]);
    if (i > 0 && !w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    out += w;
  }
  return out;
}

std::string normalize_domain_name(std::string_view raw) {
  std::string s = trim(raw);
  static const std::regex gram_prefix("^gram[0-9]+-");
  s = std::regex_replace(s, gram_prefix, "");
  std::string out;
  for (char c : s) {
    const bool sep = c == '-' || c == ' ' || c == '_';
    if (sep) {
      if (!out.empty() && out.back() != '_') out += '_';
    } else {
      out += c;
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

std::optional<Category> known_category(std::string_view domain_name) {
  if (domain_name.starts_with("math_")) return Category::Mathematics;
  const auto& table = category_table();
  const auto it = table.find(domain_name);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::vector<DomainPairs> load_google_analogy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read Google analogy file '" + path + "'");
  std::vector<DomainPairs> out;
  std::optional<DomainPairs> current;
  auto flush = [&] {
    if (!current) return;
    if (current->pairs.empty()) {
      warn("Google analogy section '" + current->domain.name + "' is empty; skipped");
    } else {
      out.push_back(std::move(*current));
    }
    current.reset();
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == ':') {
      flush();
      const std::string name = normalize_domain_name(t.substr(1));
      if (name.empty()) throw FormatError(path + ":" + std::to_string(line_no) + ": empty section name");
      current = DomainPairs{make_domain(name, Source::GoogleAnalogy), {}};
      continue;
    }
    const auto tok = split_ws(t);
    if (tok.size() != 4) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected 4 tokens, got " +
                        std::to_string(tok.size()));
    }
    if (!current) throw FormatError(path + ":" + std::to_string(line_no) + ": analogy line before any section");
    push_unique(current->pairs, AnalogyPair{tok[0], tok[1], current->domain.name});
    push_unique(current->pairs, AnalogyPair{tok[2], tok[3], current->domain.name});
  }
  flush();
  return out;
}

std::vector<DomainPairs> load_bats(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw FormatError("BATS directory '" + dir + "' is not readable");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

  std::vector<DomainPairs> out;
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw FormatError("cannot read BATS file '" + file.string() + "'");
    std::string stem = file.stem().string();
    const auto lb = stem.find('[');
    const auto rb = stem.rfind(']');
    if (lb != std::string::npos && rb != std::string::npos && rb > lb) stem = stem.substr(lb + 1, rb - lb - 1);
    const std::string name = normalize_domain_name(stem);
    DomainPairs dp{make_domain(name, Source::Bats), {}};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = trim(line);
      if (t.empty()) continue;
      std::string key;
      std::string rest;
      const auto tab = t.find('\t');
      if (tab != std::string::npos) {
        key = trim(t.substr(0, tab));
        rest = trim(t.substr(tab + 1));
      } else {
        const auto tok = split_ws(t);
        if (tok.size() != 2) {
          throw FormatError(file.string() + ":" + std::to_string(line_no) + ": expected 'key<TAB>value'");
        }
        key = tok[0];
        rest = tok[1];
      }
      const std::string value = trim(rest.substr(0, rest.find('/')));
      if (key.empty() || value.empty()) {
        throw FormatError(file.string() + ":" + std::to_string(line_no) + ": empty key or value");
      }
      push_unique(dp.pairs, AnalogyPair{key, value, name});
    }
    if (dp.pairs.empty()) {
      warn("BATS file '" + file.string() + "' has no pairs; skipped");
      continue;
    }
    out.push_back(std::move(dp));
  }
  return out;
}

std::map<std::string, std::size_t> MathOptions::default_caps() {
  return {{"math_double", 58},    {"math_squares", 18},   {"math_cubes", 5},      {"math_division2", 50},
          {"math_division5", 24}, {"math_division10", 16}, {"math_root", 6}};
}

std::vector<DomainPairs> gen_math_pairs(const MathOptions& options) {
  struct Rule {
    std::string name;
    std::vector<std::pair<long long, long long>> all;
  };
  std::vector<Rule> rules;

  Rule dbl{"math_double", {}};
  for (long long n = 100; n <= 999; ++n) dbl.all.emplace_back(n, 2 * n);
  rules.push_back(std::move(dbl));

  // The three-digit number of a square or cube pair is its value.
  Rule sq{"math_squares", {}};
  for (long long n = 1; n * n <= 999; ++n) {
    if (n * n >= 100) sq.all.emplace_back(n, n * n);
  }
  rules.push_back(std::move(sq));

  Rule cu{"math_cubes", {}};
  for (long long n = 1; n * n * n <= 999; ++n) {
    if (n * n * n >= 100) cu.all.emplace_back(n, n * n * n);
  }
  rules.push_back(std::move(cu));

  for (long long k : {2LL, 5LL, 10LL}) {
    Rule div{"math_division" + std::to_string(k), {}};
    for (long long n = 100; n <= 999; ++n) {
      if (n % k == 0) div.all.emplace_back(n, n / k);
    }
    rules.push_back(std::move(div));
  }

  Rule root{"math_root", {}};
  for (long long n = 100; n <= 999; ++n) {
    long long r = 0;
    if (is_perfect_square(n, &r)) root.all.emplace_back(n, r);
  }
  rules.push_back(std::move(root));

  std::vector<DomainPairs> out;
  for (const auto& rule : rules) {
    std::size_t cap = rule.all.size();
    if (const auto it = options.caps.find(rule.name); it != options.caps.end()) cap = it->second;
    if (cap == 0) continue;
    std::vector<long long> idx(rule.all.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<long long>(i);
    DomainPairs dp{Domain{rule.name, Category::Mathematics, Source::MathSynth}, {}};
    for (long long i : pick_evenly(idx, cap)) {
      const auto& [k, v] = rule.all[static_cast<std::size_t>(i)];
      dp.pairs.push_back(AnalogyPair{number(k), number(v), rule.name});
    }
    out.push_back(std::move(dp));
  }
  return out;
}

std::string render(std::string_view a1, std::string_view a2, std::string_view b1, std::string_view b2,
                   Template tmpl) {
  std::string out;
  if (tmpl == Template::Colon) {
    out.append(a1).append(" : ").append(a2).append(" = ").append(b1).append(" : ").append(b2);
  } else {
    out.append(a1).append(" is to ").append(a2).append(" as ").append(b1).append(" is to ").append(b2);
  }
  return out;
}

std::optional<std::array<std::string, 4>> parse_rendered(std::string_view text, Template tmpl) {
  const auto tok = split_ws(text);
  if (tmpl == Template::Colon) {
    if (tok.size() != 7 || tok[1] != ":" || tok[3] != "=" || tok[5] != ":") return std::nullopt;
    return std::array<std::string, 4>{tok[0], tok[2], tok[4], tok[6]};
  }
  if (tok.size() != 9 || tok[1] != "is" || tok[2] != "to" || tok[4] != "as" || tok[6] != "is" || tok[7] != "to") {
    return std::nullopt;
  }
  return std::array<std::string, 4>{tok[0], tok[3], tok[5], tok[8]};
}

std::vector<AnalogyExample> generate_examples(const std::vector<DomainPairs>& domains, Template tmpl) {
  std::vector<AnalogyExample> out;
  std::unordered_set<std::string> seen;
  const char* suffix = tmpl == Template::Colon ? "c" : "v";
  for (const auto& d : domains) {
    if (d.pairs.size() < 2) {
      warn("domain '" + d.domain.name + "' has fewer than 2 pairs; skipped");
      continue;
    }
    for (std::size_t i = 0; i < d.pairs.size(); ++i) {
      for (std::size_t j = 0; j < d.pairs.size(); ++j) {
        if (i == j || d.pairs[i] == d.pairs[j]) continue;
        auto e = make_example(d.domain.name + "/" + std::to_string(i) + "-" + std::to_string(j) + "/" + suffix,
                              d.pairs[i], d.pairs[j], tmpl, d.domain.category);
        if (seen.insert(e.rendered).second) out.push_back(std::move(e));
      }
    }
  }
  return out;
}

std::vector<AnalogyExample> augment(const std::vector<AnalogyExample>& examples) {
  std::vector<AnalogyExample> out;
  std::unordered_set<std::string> seen;
  out.reserve(examples.size() * 3);
  for (const auto& e : examples) {
    if (seen.insert(e.rendered).second) out.push_back(e);
  }
  for (const auto& e : examples) {
    const AnalogyPair sa{e.a2(), e.a1(), e.pair_a.domain};
    const AnalogyPair sb{e.b2(), e.b1(), e.pair_b.domain};
    for (auto v : {make_example(e.id + "+kv", sa, sb, e.tmpl, e.category),
                   make_example(e.id + "+po", e.pair_b, e.pair_a, e.tmpl, e.category)}) {
      if (seen.insert(v.rendered).second) out.push_back(std::move(v));
    }
  }
  return out;
}

std::vector<std::size_t> split_indices(std::size_t n, SplitRatios ratios, std::uint64_t seed, std::size_t* n_train,
                                       std::size_t* n_val) {
  const double total = ratios.train + ratios.val + ratios.test;
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9) {
    throw InvalidArgument("split: ratios must be non-negative and sum to 1");
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  SplitMix64 rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  const auto cut = [n](double r) {
    return std::min(n, static_cast<std::size_t>(std::llround(r * static_cast<double>(n))));
  };
  *n_train = cut(ratios.train);
  *n_val = std::min(n - *n_train, cut(ratios.val));
  return idx;
}

Split split(const std::vector<AnalogyExample>& examples, SplitRatios ratios, std::uint64_t seed) {
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  const auto idx = split_indices(examples.size(), ratios, seed, &n_train, &n_val);
  Split s;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto& dst = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
    dst.push_back(examples[idx[i]]);
  }
  return s;
}

std::vector<std::string> vocabulary(const std::vector<AnalogyExample>& examples) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& e : examples) {
    for (const auto* w : {&e.a1(), &e.a2(), &e.b1(), &e.b2()}) {
      std::string c = normalize_concept(*w);
      if (seen.insert(c).second) out.push_back(std::move(c));
    }
  }
  return out;
}

vsa::Hypervector encode_analogy(const AnalogyExample& example, const vsa::Codebook& codebook,
                                const vsa::TieBreak& tie_break) {
  const auto& a1 = codebook.vector(normalize_concept(example.a1()));
  const auto& a2 = codebook.vector(normalize_concept(example.a2()));
  const auto& b1 = codebook.vector(normalize_concept(example.b1()));
  const auto& b2 = codebook.vector(normalize_concept(example.b2()));
  return vsa::polarize(vsa::bundle({vsa::bind(a1, a2), vsa::bind(b1, b2)}), tie_break);
}

namespace {

const vsa::Hypervector& feature_vector(const vsa::Codebook& codebook, const std::string& feature) {
  const std::string key = normalize_concept(feature);
  if (!codebook.contains(key)) throw InvalidArgument("QA feature '" + feature + "' is not in the codebook");
  return codebook.vector(key);
}

}  // namespace

vsa::Hypervector encode_qa(const QaExample& example, const vsa::Codebook& codebook, const vsa::TieBreak& tie_break,
                           bool include_answer) {
  vsa::Accumulator acc(codebook.dim());
  for (const auto& f : example.question_features) acc += feature_vector(codebook, f);
  if (include_answer) {
    for (const auto& f : example.answer_features) acc += feature_vector(codebook, f);
  }
  if (acc.count() == 0) throw InvalidArgument("QA example '" + example.id + "' has no features");
  return vsa::polarize(acc, tie_break);
}

std::vector<vsa::Hypervector> encode_qa_incremental(const QaExample& example, const vsa::Codebook& codebook,
                                                    const vsa::TieBreak& tie_break) {
  std::vector<vsa::Hypervector> out;
  vsa::Accumulator acc(codebook.dim());
  for (const auto& f : example.question_features) {
    acc += feature_vector(codebook, f);
    out.push_back(vsa::polarize(acc, tie_break));
  }
  if (!example.answer_features.empty()) {
    for (const auto& f : example.answer_features) acc += feature_vector(codebook, f);
    out.push_back(vsa::polarize(acc, tie_break));
  }
  return out;
}

std::string example_to_jsonl(const AnalogyExample& e) {
  nlohmann::ordered_json j;
  j["id"] = e.id;
  j["domain"] = e.domain();
  j["category"] = to_string(e.category);
  j["a1"] = e.a1();
  j["a2"] = e.a2();
  j["b1"] = e.b1();
  j["b2"] = e.b2();
  j["template"] = to_string(e.tmpl);
  j["rendered"] = e.rendered;
  j["target"] = e.target;
  return j.dump();
}

AnalogyExample example_from_jsonl(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    const std::string domain = j.at("domain").get<std::string>();
    AnalogyExample e;
    e.id = j.at("id").get<std::string>();
    e.pair_a = AnalogyPair{j.at("a1").get<std::string>(), j.at("a2").get<std::string>(), domain};
    e.pair_b = AnalogyPair{j.at("b1").get<std::string>(), j.at("b2").get<std::string>(), domain};
    e.category = category_from_string(j.at("category").get<std::string>());
    e.tmpl = template_from_string(j.at("template").get<std::string>());
    e.rendered = j.at("rendered").get<std::string>();
    e.target = j.at("target").get<std::string>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("corpus line: ") + ex.what());
  }
}

void write_examples(const std::string& path, const std::vector<AnalogyExample>& examples) {
  auto out = io::open_output(path);
  for (const auto& e : examples) out << example_to_jsonl(e) << '\n';
}

std::vector<AnalogyExample> read_examples(const std::string& path) {
  auto in = io::open_input(path);
  std::vector<AnalogyExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(example_from_jsonl(line));
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<QaExample> read_qa_examples(const std::string& path) {
  auto in = io::open_input(path);
  std::vector<QaExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      QaExample q;
      q.id = j.at("id").get<std::string>();
      q.question_text = j.value("question", std::string());
      q.context_text = j.value("context", std::string());
      q.question_features = j.at("question_features").get<std::vector<std::string>>();
      q.answer_features = j.at("answer_features").get<std::vector<std::string>>();
      q.target_answer = j.value("answer", std::string());
      out.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_qa_examples(const std::string& path, const std::vector<QaExample>& examples) {
  auto out = io::open_output(path);
  for (const auto& q : examples) {
    nlohmann::ordered_json j;
    j["id"] = q.id;
    j["question"] = q.question_text;
    j["context"] = q.context_text;
    j["question_features"] = q.question_features;
    j["answer_features"] = q.answer_features;
    j["answer"] = q.target_answer;
    out << j.dump() << '\n';
  }
}

}  // namespace hdprobe::corpus
