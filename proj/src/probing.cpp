#include "hdprobe/probing.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "hdprobe/binary_io.hpp"
#include "hdprobe/random.hpp"

namespace hdprobe::probing {
namespace {

struct Scored {
  int tier = -1;  // 1: target reached, 0: in-context only, -1: nothing
  double score = -std::numeric_limits<double>::infinity();
};

bool better(const Scored& a, const Scored& b) {
  return a.tier != b.tier ? a.tier > b.tier : a.score > b.score;
}

double sim_to(const vsa::Hypervector& v, const vsa::Codebook& cb, const std::string& name) {
  return vsa::cosine(v, cb.vector(name));
}

Scored score_residual(const vsa::Hypervector& residual, const ProbeCase& c, const UnbindCandidate& cand,
                      const vsa::Codebook& cb, double threshold) {
  Scored s;
  if (!c.b2.empty()) {
    const double t = sim_to(residual, cb, c.b2);
    if (t >= threshold) return {1, t};
  }
  for (const auto& name : c.in_context()) {
    if (std::find(cand.factors.begin(), cand.factors.end(), name) != cand.factors.end()) continue;
    const double v = sim_to(residual, cb, name);
    if (v > s.score) s = {0, v};
  }
  return s;
}

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

void accumulate(Breakdown& b, const CaseScores& r) {
  ++b.n;
  b.probing1 += r.probing1;
  b.probing5 += r.probing5;
  if (r.next_token1) {
    b.next_token1 = b.next_token1.value_or(0.0) + *r.next_token1;
    b.next_token5 = b.next_token5.value_or(0.0) + *r.next_token5;
  }
}

void finish(Breakdown& b, std::size_t with_meta) {
  if (b.n == 0) return;
  b.probing1 /= static_cast<double>(b.n);
  b.probing5 /= static_cast<double>(b.n);
  if (b.next_token1 && with_meta > 0) {
    *b.next_token1 /= static_cast<double>(with_meta);
    *b.next_token5 /= static_cast<double>(with_meta);
  }
}

MetricsReport summarize_baseline(const std::vector<ProbeCase>& cases, const vsa::Codebook& cb,
                                 const corpus::ConceptLinkageIndex& linkage, const ProbeConfig& config) {
  return summarize(cases, probe_all(cases, cb, linkage, config));
}

}  // namespace

std::string_view to_string(ExtractionClass c) {
  switch (c) {
    case ExtractionClass::KeyTarget: return "Key|Target";
    case ExtractionClass::None: return "NONE";
    case ExtractionClass::Key: return "Key";
    case ExtractionClass::Example: return "Example";
    case ExtractionClass::ContextTarget: return "Context|Target";
    case ExtractionClass::KeyKeyValues: return "Key|KeyValues";
    case ExtractionClass::OutOfContext: return "Out-of-context";
    case ExtractionClass::ExampleValueKeyValues: return "ExampleValue|KeyValues";
    case ExtractionClass::KeyValuesTarget: return "KeyValues|Target";
    case ExtractionClass::Target: return "Target";
  }
  return "NONE";
}

ExtractionClass extraction_class_from_string(std::string_view s) {
  for (auto c : kAllClasses) {
    if (to_string(c) == s) return c;
  }
  throw InvalidArgument("unknown extraction class '" + std::string(s) + "'");
}

std::string_view to_string(CandidateKind k) {
  switch (k) {
    case CandidateKind::None: return "None";
    case CandidateKind::Key: return "Key";
    case CandidateKind::ExampleKey: return "ExampleKey";
    case CandidateKind::ExampleValue: return "ExampleValue";
    case CandidateKind::Example: return "Example";
    case CandidateKind::Context: return "Context";
    case CandidateKind::Greedy: return "Greedy";
  }
  return "None";
}

std::string UnbindCandidate::label() const {
  std::string out(to_string(kind));
  if (factors.empty()) return out;
  out += '(';
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (i) out += ',';
    out += factors[i];
  }
  return out + ')';
}

std::vector<std::string> ProbeCase::in_context() const {
  std::vector<std::string> out;
  for (const auto* s : {&a1, &a2, &b1}) {
    if (!s->empty()) out.push_back(*s);
  }
  return out;
}

ProbeCase make_case(const corpus::AnalogyExample& e, Eigen::VectorXf prediction) {
  ProbeCase c;
  c.id = e.id;
  c.a1 = corpus::normalize_concept(e.a1());
  c.a2 = corpus::normalize_concept(e.a2());
  c.b1 = corpus::normalize_concept(e.b1());
  c.b2 = corpus::normalize_concept(e.b2());
  c.domain = e.domain();
  c.category = std::string(corpus::to_string(e.category));
  c.prediction = std::move(prediction);
  return c;
}

std::vector<UnbindCandidate> enumerate_candidates(const ProbeCase& c) {
  std::vector<UnbindCandidate> out{{CandidateKind::None, {}}};
  auto add = [&](CandidateKind kind, std::vector<std::string> factors) {
    for (const auto& f : factors) {
      if (f.empty()) return;
    }
    out.push_back({kind, std::move(factors)});
  };
  add(CandidateKind::Key, {c.b1});
  add(CandidateKind::ExampleKey, {c.a1});
  add(CandidateKind::ExampleValue, {c.a2});
  add(CandidateKind::Example, {c.a1, c.a2});
  add(CandidateKind::Context, {c.a1, c.a2, c.b1});
  return out;
}

vsa::Hypervector candidate_vector(const UnbindCandidate& candidate, const vsa::Codebook& cb) {
  vsa::Hypervector v(cb.dim());
  for (const auto& f : candidate.factors) v = vsa::bind(v, cb.vector(f));
  return v;
}

ExtractionResult probe(const ProbeCase& c, const vsa::Codebook& cb, const corpus::ConceptLinkageIndex& linkage,
                       const ProbeConfig& config) {
  if (static_cast<std::size_t>(c.prediction.size()) != cb.dim()) {
    throw InvalidArgument("probe: prediction dimension " + std::to_string(c.prediction.size()) +
                          " does not match codebook dimension " + std::to_string(cb.dim()));
  }
  if (!c.prediction.allFinite()) throw InvalidArgument("probe: non-finite prediction for case '" + c.id + "'");
  const vsa::Hypervector polar = vsa::Hypervector::sign_of(c.prediction);

  UnbindCandidate chosen;
  vsa::Hypervector residual = polar;
  Scored best;
  for (const auto& cand : enumerate_candidates(c)) {
    vsa::Hypervector r = cand.kind == CandidateKind::None ? polar : vsa::bind(polar, candidate_vector(cand, cb));
    const Scored s = score_residual(r, c, cand, cb, config.threshold);
    if (better(s, best)) {
      best = s;
      chosen = cand;
      residual = std::move(r);
    }
  }

  const bool accepted = best.tier == 1 || (best.tier == 0 && best.score >= config.threshold);
  if (!accepted) {
    chosen = {};
    residual = polar;
    if (config.greedy && !c.b2.empty()) {
      const std::size_t n = config.greedy_cap == 0 ? cb.size() : std::min(config.greedy_cap, cb.size());
      Scored greedy_best;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& name = cb.concepts()[i];
        if (name == c.b2) continue;
        UnbindCandidate cand{CandidateKind::Greedy, {name}};
        vsa::Hypervector r = vsa::bind(polar, cb.vector(i));
        const Scored s = score_residual(r, c, cand, cb, config.threshold);
        if (s.score >= config.threshold && better(s, greedy_best)) {
          greedy_best = s;
          chosen = std::move(cand);
          residual = std::move(r);
        }
      }
    }
  }

  ExtractionResult out;
  out.id = c.id;
  out.candidate = std::move(chosen);
  out.matches = vsa::nearest(cb, residual, config.k, config.threshold);
  for (const auto& m : out.matches) {
    if (m.name == c.b2) out.noise = m.similarity;
  }
  out.class_label = classify(out, c, linkage);
  return out;
}

ExtractionClass classify(const std::vector<std::string>& extracted, const ProbeCase& c,
                         const corpus::ConceptLinkageIndex& linkage) {
  const std::set<std::string> e(extracted.begin(), extracted.end());
  if (e.empty()) return ExtractionClass::None;
  auto has = [&](const std::string& s) { return !s.empty() && e.contains(s); };
  const bool b2 = has(c.b2), b1 = has(c.b1), a = has(c.a1) || has(c.a2);

  const std::array<const std::string*, 4> slots = {&c.a1, &c.a2, &c.b1, &c.b2};
  bool kv = false;
  for (const auto& x : e) {
    if (std::any_of(slots.begin(), slots.end(), [&](const std::string* s) { return *s == x; })) continue;
    for (const auto* s : slots) {
      if (!s->empty() && linkage.linked_outside(x, *s, c.domain)) kv = true;
    }
  }

  if (b2 && b1 && a) return ExtractionClass::ContextTarget;
  if (b2 && b1) return ExtractionClass::KeyTarget;
  if (b2 && kv) return ExtractionClass::KeyValuesTarget;
  if (b2) return ExtractionClass::Target;
  if (b1 && kv) return ExtractionClass::KeyKeyValues;
  if (b1) return ExtractionClass::Key;
  if (a && kv) return ExtractionClass::ExampleValueKeyValues;
  if (a) return ExtractionClass::Example;
  return ExtractionClass::OutOfContext;
}

ExtractionClass classify(const ExtractionResult& result, const ProbeCase& c,
                         const corpus::ConceptLinkageIndex& linkage) {
  std::vector<std::string> extracted = result.candidate.factors;
  for (const auto& m : result.matches) extracted.push_back(m.name);
  return classify(extracted, c, linkage);
}

std::string normalize_token(std::string_view token) {
  std::string s(token);
  // Byte-level BPE and SentencePiece space markers.
  for (const std::string_view marker : {"\xC4\xA0", "\xE2\x96\x81"}) {
    std::size_t pos;
    while ((pos = s.find(marker)) != std::string::npos) s.replace(pos, marker.size(), " ");
  }
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

double next_token_precision(const ingestion::NextTokenMeta& meta, std::string_view target, std::size_t k) {
  if (meta.topk.empty()) throw InvalidArgument("next_token_precision: empty top-k");
  const std::string t = normalize_token(target);
  double best = 0.0;
  for (std::size_t i = 0; i < std::min(k, meta.topk.size()); ++i) {
    const std::string tok = normalize_token(meta.topk[i].token);
    if (tok == t) return 1.0;
    if (tok.size() >= 2 && tok.size() < t.size() && t.starts_with(tok)) best = 0.5;
  }
  return best;
}

bool target_in_top_k(const ExtractionResult& result, std::string_view target, std::size_t k) {
  const std::size_t n = std::min(k, result.matches.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (result.matches[i].name == target) return true;
  }
  return false;
}

double probing_precision(const std::vector<ExtractionResult>& results, const std::vector<ProbeCase>& cases,
                         std::size_t k) {
  if (results.empty()) throw InvalidArgument("probing_precision: no results");
  if (results.size() != cases.size()) throw InvalidArgument("probing_precision: results and cases differ in size");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < results.size(); ++i) hits += target_in_top_k(results[i], cases[i].b2, k);
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

std::vector<ExtractionResult> probe_all(const std::vector<ProbeCase>& cases, const vsa::Codebook& cb,
                                        const corpus::ConceptLinkageIndex& linkage, const ProbeConfig& config) {
  std::vector<ExtractionResult> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back(probe(c, cb, linkage, config));
  return out;
}

MetricsReport summarize(const std::vector<ProbeCase>& cases, const std::vector<ExtractionResult>& results) {
  if (results.size() != cases.size()) throw InvalidArgument("summarize: results and cases differ in size");
  MetricsReport rep;
  rep.n = cases.size();
  for (auto c : kAllClasses) rep.class_counts[c] = 0;
  std::size_t with_meta = 0, with_rank = 0;
  double nt1 = 0.0, nt5 = 0.0, rank_sum = 0.0, prob_sum = 0.0;
  std::map<std::string, std::size_t> cat_meta, model_meta;

  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const auto& r = results[i];
    CaseScores row;
    row.id = c.id;
    row.domain = c.domain;
    row.category = c.category;
    row.model = c.model;
    row.candidate = r.candidate.label();
    row.class_label = r.class_label;
    row.probing1 = target_in_top_k(r, c.b2, 1) ? 1.0 : 0.0;
    row.probing5 = target_in_top_k(r, c.b2, 5) ? 1.0 : 0.0;
    if (c.meta && !c.meta->topk.empty()) {
      const std::string& target = c.meta->target.empty() ? c.b2 : c.meta->target;
      row.next_token1 = next_token_precision(*c.meta, target, 1);
      row.next_token5 = next_token_precision(*c.meta, target, 5);
      nt1 += *row.next_token1;
      nt5 += *row.next_token5;
      ++with_meta;
      ++cat_meta[c.category];
      ++model_meta[c.model];
      if (c.meta->target_rank >= 0) {
        row.target_rank = c.meta->target_rank;
        row.target_prob = c.meta->target_prob;
        rank_sum += static_cast<double>(c.meta->target_rank);
        prob_sum += c.meta->target_prob;
        ++with_rank;
      }
    }
    rep.probing1 += row.probing1;
    rep.probing5 += row.probing5;
    ++rep.class_counts[row.class_label];
    accumulate(rep.per_category[c.category], row);
    accumulate(rep.per_model[c.model], row);
    rep.rows.push_back(std::move(row));
  }
  if (rep.n > 0) {
    rep.probing1 /= static_cast<double>(rep.n);
    rep.probing5 /= static_cast<double>(rep.n);
  }
  if (with_meta > 0) {
    rep.next_token1 = nt1 / static_cast<double>(with_meta);
    rep.next_token5 = nt5 / static_cast<double>(with_meta);
  }
  if (with_rank > 0) {
    rep.target_rank_mean = rank_sum / static_cast<double>(with_rank);
    rep.target_prob_mean = prob_sum / static_cast<double>(with_rank);
  }
  for (auto& [name, b] : rep.per_category) finish(b, cat_meta[name]);
  for (auto& [name, b] : rep.per_model) finish(b, model_meta[name]);
  return rep;
}

std::vector<Eigen::Index> case_permutation(Eigen::Index dim, std::optional<std::uint64_t> seed, std::size_t index) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(dim));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  if (seed) {
    SplitMix64 rng(derive_seed(*seed, index));
    rng.shuffle(std::span<Eigen::Index>(perm));
  }
  return perm;
}

MetricsReport permuted_baseline(const std::vector<ProbeCase>& cases, const Predictor& predictor,
                                const vsa::Codebook& cb, const corpus::ConceptLinkageIndex& linkage,
                                const ProbeConfig& config, std::optional<std::uint64_t> seed) {
  std::vector<ProbeCase> permuted = cases;
  for (std::size_t i = 0; i < permuted.size(); ++i) {
    auto& c = permuted[i];
    if (c.embedding.size() == 0) throw InvalidArgument("permuted baseline: case '" + c.id + "' has no embedding");
    const auto perm = case_permutation(c.embedding.size(), seed, i);
    Eigen::VectorXf shuffled(c.embedding.size());
    for (std::size_t j = 0; j < perm.size(); ++j) shuffled(static_cast<Eigen::Index>(j)) = c.embedding(perm[j]);
    c.prediction = predictor(shuffled);
    c.embedding = std::move(shuffled);
  }
  return summarize_baseline(permuted, cb, linkage, config);
}

ProbeCase unrelated_case(const ProbeCase& c, const vsa::Codebook& cb, std::uint64_t seed, std::size_t index) {
  std::set<std::string> used;
  for (const auto* s : {&c.a1, &c.a2, &c.b1, &c.b2}) {
    if (!s->empty()) used.insert(*s);
  }
  const std::size_t needed = used.size();
  if (cb.size() < 2 * needed) throw InvalidArgument("unrelated baseline: codebook too small");
  SplitMix64 rng(derive_seed(seed, index));
  ProbeCase out = c;
  for (auto* s : {&out.a1, &out.a2, &out.b1, &out.b2}) {
    if (s->empty()) continue;
    std::string pick;
    do {
      pick = cb.concepts()[rng.below(cb.size())];
    } while (used.contains(pick));
    used.insert(pick);
    *s = pick;
  }
  return out;
}

MetricsReport unrelated_baseline(const std::vector<ProbeCase>& cases, const vsa::Codebook& cb,
                                 const corpus::ConceptLinkageIndex& linkage, const ProbeConfig& config,
                                 std::uint64_t seed) {
  std::vector<ProbeCase> replaced;
  replaced.reserve(cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) replaced.push_back(unrelated_case(cases[i], cb, seed, i));
  return summarize_baseline(replaced, cb, linkage, config);
}

std::vector<vsa::Match> qa_probe(const Eigen::VectorXf& encoding, const vsa::Codebook& cb, double threshold,
                                 std::size_t k) {
  if (!encoding.allFinite()) throw InvalidArgument("qa_probe: non-finite encoding");
  if (static_cast<std::size_t>(encoding.size()) != cb.dim()) throw InvalidArgument("qa_probe: dimension mismatch");
  return vsa::nearest(cb, vsa::Hypervector::sign_of(encoding), k, threshold);
}

std::string normalize_answer(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::ispunct(u)) continue;
    cleaned += static_cast<char>(std::tolower(u));
  }
  std::string out;
  for (const auto& w : words(cleaned)) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

QaScores qa_metrics(std::string_view prediction, std::string_view target) {
  const std::string p = normalize_answer(prediction);
  const std::string t = normalize_answer(target);
  QaScores s;
  s.exact_match = p == t;
  s.mention = !t.empty() && p.find(t) != std::string::npos;
  const auto pw = words(p), tw = words(t);
  if (pw.empty() || tw.empty()) {
    s.f1 = s.exact_match ? 1.0 : 0.0;
    return s;
  }
  std::map<std::string, int> counts;
  for (const auto& w : tw) ++counts[w];
  int common = 0;
  for (const auto& w : pw) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return s;
  const double precision = static_cast<double>(common) / static_cast<double>(pw.size());
  const double recall = static_cast<double>(common) / static_cast<double>(tw.size());
  s.f1 = 2.0 * precision * recall / (precision + recall);
  return s;
}

EmbeddingTable EmbeddingTable::load_text(const std::string& path) {
  auto in = io::open_input(path);
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto toks = words(line);
    if (toks.empty()) continue;
    if (line_no == 1 && toks.size() == 2 &&
        std::all_of(toks[0].begin(), toks[0].end(), ::isdigit) && std::all_of(toks[1].begin(), toks[1].end(), ::isdigit)) {
      continue;
    }
    if (toks.size() < 2) throw FormatError(path + ":" + std::to_string(line_no) + ": expected a word and a vector");
    Eigen::VectorXf v(static_cast<Eigen::Index>(toks.size() - 1));
    for (std::size_t i = 1; i < toks.size(); ++i) {
      try {
        v(static_cast<Eigen::Index>(i - 1)) = std::stof(toks[i]);
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": bad number '" + toks[i] + "'");
      }
    }
    try {
      table.add(std::move(toks[0]), std::move(v));
    } catch (const InvalidArgument& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return table;
}

void EmbeddingTable::add(std::string word, Eigen::VectorXf vector) {
  if (dim_ == 0) dim_ = vector.size();
  if (vector.size() != dim_) throw InvalidArgument("embedding table: inconsistent vector dimension");
  vectors_.insert_or_assign(std::move(word), std::move(vector));
}

const Eigen::VectorXf* EmbeddingTable::find(std::string_view word) const {
  auto it = vectors_.find(word);
  return it == vectors_.end() ? nullptr : &it->second;
}

double relatedness(const std::vector<std::string>& concepts, const std::vector<std::string>& features,
                   const EmbeddingTable& table) {
  std::vector<const Eigen::VectorXf*> fv;
  for (const auto& f : features) {
    if (const auto* v = table.find(f)) fv.push_back(v);
  }
  if (fv.empty()) return 0.0;
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& c : concepts) {
    const auto* v = table.find(c);
    if (!v) continue;
    double best = -1.0;
    for (const auto* f : fv) {
      const double denom = static_cast<double>(v->norm()) * static_cast<double>(f->norm());
      best = std::max(best, denom > 0.0 ? static_cast<double>(v->dot(*f)) / denom : 0.0);
    }
    total += best;
    ++n;
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

DriftStats concept_drift(const std::vector<std::string>& before, const std::vector<std::string>& after,
                         const std::vector<std::string>& question_features,
                         const std::vector<std::string>& answer_features, const EmbeddingTable& table) {
  DriftStats s;
  s.question_before = relatedness(before, question_features, table);
  s.question_after = relatedness(after, question_features, table);
  s.answer_before = relatedness(before, answer_features, table);
  s.answer_after = relatedness(after, answer_features, table);
  s.question_delta = s.question_after - s.question_before;
  s.answer_delta = s.answer_after - s.answer_before;
  std::set<std::string> missing;
  for (const auto* list : {&before, &after, &question_features, &answer_features}) {
    for (const auto& w : *list) {
      if (!table.find(w)) missing.insert(w);
    }
  }
  s.missing = missing.size();
  return s;
}

}  // namespace hdprobe::probing
