#include "stages.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include "hdprobe/binary_io.hpp"
#include "hdprobe/dla.hpp"
#include "hdprobe/formats.hpp"
#include "hdprobe/log.hpp"

namespace hdprobe::cli {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

void require(const std::string& path, const std::string& key, const std::string& producer) {
  if (path.empty()) throw MissingInput("<" + key + " not set>", producer);
  if (!fs::exists(path)) throw MissingInput(path, producer);
}

std::string pick(const std::string& override_path, const std::string& configured) {
  return override_path.empty() ? configured : override_path;
}

std::string sidecar_for(const std::string& path) {
  fs::path p(path);
  p.replace_extension(".jsonl");
  return p.string();
}

std::string report_file(const config::PipelineConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.paths.reports);
  return (fs::path(cfg.paths.reports) / name).string();
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

class Stopwatch {
 public:
  explicit Stopwatch(std::string stage) : stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
  ~Stopwatch() {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::fprintf(stderr, "%s: %.2f s\n", stage_.c_str(), s);
  }

 private:
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

void write_lines(const std::string& path, const std::vector<ojson>& rows) {
  ensure_parent(path);
  auto out = io::open_output(path);
  for (const auto& r : rows) out << r.dump() << '\n';
  if (!out) throw FormatError("write failed for '" + path + "'");
}

void write_json(const std::string& path, const ojson& j) {
  ensure_parent(path);
  auto out = io::open_output(path);
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write failed for '" + path + "'");
}

std::vector<nlohmann::json> read_lines(const std::string& path) {
  auto in = io::open_input(path);
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, corpus::AnalogyExample> examples_by_id(const std::vector<corpus::AnalogyExample>& examples) {
  std::map<std::string, corpus::AnalogyExample> out;
  for (const auto& e : examples) out.emplace(e.id, e);
  return out;
}

corpus::ConceptLinkageIndex linkage_from(const std::vector<corpus::AnalogyExample>& examples) {
  corpus::ConceptLinkageIndex index;
  for (const auto& e : examples) {
    index.add(e.pair_a);
    index.add(e.pair_b);
  }
  return index;
}

struct Compressed {
  std::vector<ingestion::EmbeddingRecord> records;
  Eigen::MatrixXf inputs;  // d x N
};

Compressed load_compressed(const std::string& path) {
  require(path, "paths.compressed", "ingest");
  require(sidecar_for(path), "paths.compressed sidecar", "ingest");
  Compressed c;
  formats::CacheHeader header;
  c.records = formats::read_records(path, sidecar_for(path), &header);
  if (header.layers_stored != 1) {
    throw FormatError("'" + path + "' stores " + std::to_string(header.layers_stored) +
                      " layers per record; run `ingest` to compress it");
  }
  c.inputs.resize(static_cast<Eigen::Index>(header.dim), static_cast<Eigen::Index>(c.records.size()));
  for (std::size_t i = 0; i < c.records.size(); ++i) c.inputs.col(static_cast<Eigen::Index>(i)) = c.records[i].matrix.row(0).transpose();
  return c;
}

std::vector<std::size_t> select_split(const config::PipelineConfig& cfg, std::size_t n, const std::string& split,
                                      std::vector<std::size_t>* train_idx = nullptr,
                                      std::vector<std::size_t>* val_idx = nullptr) {
  std::size_t n_train = 0, n_val = 0;
  const auto order = corpus::split_indices(n, {cfg.corpus.train, cfg.corpus.val, cfg.corpus.test},
                                           cfg.corpus.split_seed, &n_train, &n_val);
  if (train_idx) train_idx->assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  if (val_idx) {
    val_idx->assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                    order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  }
  if (split == "all") {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  if (split != "test") throw ConfigError("--split: expected \"test\" or \"all\"");
  return {order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end()};
}

Eigen::MatrixXf columns(const Eigen::MatrixXf& m, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXf out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(idx[i]));
  return out;
}

const corpus::AnalogyExample& example_for(const std::map<std::string, corpus::AnalogyExample>& by_id,
                                          const std::string& id) {
  const auto it = by_id.find(id);
  if (it == by_id.end()) throw FormatError("record '" + id + "' has no example in the corpus file");
  return it->second;
}

// Everything the probing stages share.
struct ProbeInputs {
  vsa::Codebook codebook;
  std::vector<corpus::AnalogyExample> examples;
  corpus::ConceptLinkageIndex linkage;
  encoder::EncoderParams<float> params;
  std::vector<probing::ProbeCase> cases;
};

ProbeInputs load_probe_inputs(const config::PipelineConfig& cfg, const std::string& in, const std::string& split) {
  require(cfg.paths.weights, "paths.weights", "train");
  require(cfg.paths.codebook, "paths.codebook", "codebook-build");
  require(cfg.paths.corpus, "paths.corpus", "corpus-gen");
  ProbeInputs p{vsa::load_codebook(cfg.paths.codebook), corpus::read_examples(cfg.paths.corpus), {},
                encoder::load_params<float>(cfg.paths.weights, cfg.train.encoder), {}};
  p.linkage = linkage_from(p.examples);
  const Compressed data = load_compressed(pick(in, cfg.paths.compressed));
  if (p.params.config.input_dim != data.inputs.rows()) {
    throw FormatError("encoder expects input dimension " + std::to_string(p.params.config.input_dim) +
                      ", embeddings have " + std::to_string(data.inputs.rows()));
  }
  if (static_cast<std::size_t>(p.params.config.output_dim) != p.codebook.dim()) {
    throw FormatError("encoder output dimension does not match the codebook");
  }
  const auto idx = select_split(cfg, data.records.size(), split);
  const Eigen::MatrixXf x = columns(data.inputs, idx);
  const Eigen::MatrixXf y = encoder::predict(p.params, x);
  const auto by_id = examples_by_id(p.examples);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& rec = data.records[idx[i]];
    auto c = probing::make_case(example_for(by_id, rec.input_id), y.col(static_cast<Eigen::Index>(i)));
    c.model = rec.model_name;
    c.meta = rec.meta;
    c.embedding = x.col(static_cast<Eigen::Index>(i));
    p.cases.push_back(std::move(c));
  }
  return p;
}

ojson optional_number(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

ojson case_row(const probing::ProbeCase& c, const probing::ExtractionResult& r, const probing::CaseScores& s) {
  ojson j;
  j["id"] = c.id;
  j["model"] = c.model;
  j["domain"] = c.domain;
  j["category"] = c.category;
  j["a1"] = c.a1;
  j["a2"] = c.a2;
  j["b1"] = c.b1;
  j["b2"] = c.b2;
  j["candidate"] = r.candidate.label();
  j["class_label"] = std::string(probing::to_string(r.class_label));
  auto matches = ojson::array();
  for (const auto& m : r.matches) matches.push_back({{"concept", m.name}, {"similarity", m.similarity}});
  j["matches"] = std::move(matches);
  j["noise"] = optional_number(r.noise);
  j["probing@1"] = s.probing1;
  j["probing@5"] = s.probing5;
  j["next_token@1"] = optional_number(s.next_token1);
  j["next_token@5"] = optional_number(s.next_token5);
  j["target_rank"] = s.target_rank ? ojson(*s.target_rank) : ojson(nullptr);
  return j;
}

ojson breakdown_json(const probing::Breakdown& b) {
  return {{"n", b.n},
          {"probing@1", b.probing1},
          {"probing@5", b.probing5},
          {"next_token@1", optional_number(b.next_token1)},
          {"next_token@5", optional_number(b.next_token5)}};
}

ojson metrics_json(const probing::MetricsReport& m) {
  ojson j;
  j["n"] = m.n;
  j["probing@1"] = m.probing1;
  j["probing@5"] = m.probing5;
  j["next_token@1"] = optional_number(m.next_token1);
  j["next_token@5"] = optional_number(m.next_token5);
  j["target_rank_mean"] = optional_number(m.target_rank_mean);
  j["target_prob_mean"] = optional_number(m.target_prob_mean);
  ojson classes = ojson::object();
  for (auto c : probing::kAllClasses) classes[std::string(probing::to_string(c))] = m.class_counts.at(c);
  j["class_counts"] = std::move(classes);
  ojson cat = ojson::object();
  for (const auto& [k, b] : m.per_category) cat[k] = breakdown_json(b);
  j["per_category"] = std::move(cat);
  ojson model = ojson::object();
  for (const auto& [k, b] : m.per_model) model[k] = breakdown_json(b);
  j["per_model"] = std::move(model);
  return j;
}

void write_case_csv(const std::string& path, const probing::MetricsReport& m) {
  auto out = io::open_output(path);
  out << "id,domain,category,candidate,class_label,probing@1,probing@5,next_token@1,next_token@5,target_rank\n";
  auto field = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  auto num = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", *v);
    return std::string(buf);
  };
  for (const auto& r : m.rows) {
    out << field(r.id) << ',' << field(r.domain) << ',' << field(r.category) << ',' << field(r.candidate) << ','
        << field(std::string(probing::to_string(r.class_label))) << ',' << r.probing1 << ',' << r.probing5 << ','
        << num(r.next_token1) << ',' << num(r.next_token5) << ','
        << (r.target_rank ? std::to_string(*r.target_rank) : std::string()) << '\n';
  }
}

void write_probe_outputs(const std::string& rows_path, const std::vector<probing::ProbeCase>& cases,
                         const std::vector<probing::ExtractionResult>& results, const probing::MetricsReport& m) {
  std::vector<ojson> rows;
  for (std::size_t i = 0; i < cases.size(); ++i) rows.push_back(case_row(cases[i], results[i], m.rows[i]));
  write_lines(rows_path, rows);
  fs::path base(rows_path);
  write_case_csv(base.replace_extension(".csv").string(), m);
  base = rows_path;
  write_json(base.replace_extension(".metrics.json").string(), metrics_json(m));
}

void print_metrics(const char* what, const probing::MetricsReport& m) {
  std::printf("%s: %zu cases, probing@1 %.4f, probing@5 %.4f", what, m.n, m.probing1, m.probing5);
  if (m.next_token1) std::printf(", next_token@1 %.4f, next_token@5 %.4f", *m.next_token1, *m.next_token5);
  std::printf("\n");
}

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct ReportRow {
  std::string id;
  std::string model;
  std::string class_label;
  double probing1 = 0.0;
  double probing5 = 0.0;
  std::optional<double> next1;
  std::optional<double> next5;
};

std::vector<ReportRow> read_report_rows(const std::string& path) {
  std::vector<ReportRow> out;
  for (const auto& j : read_lines(path)) {
    try {
      ReportRow r;
      r.id = j.at("id").get<std::string>();
      r.model = j.value("model", std::string());
      r.class_label = j.at("class_label").get<std::string>();
      probing::extraction_class_from_string(r.class_label);
      r.probing1 = j.value("probing@1", 0.0);
      r.probing5 = j.value("probing@5", 0.0);
      if (j.contains("next_token@1") && j["next_token@1"].is_number()) r.next1 = j["next_token@1"].get<double>();
      if (j.contains("next_token@5") && j["next_token@5"].is_number()) r.next5 = j["next_token@5"].get<double>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw FormatError(path + ": " + e.what());
    }
  }
  return out;
}

std::string model_label(const std::string& m) { return m.empty() ? "model" : m; }

// Class-label percentages per model, plus an average column.
ojson class_table(const std::vector<ReportRow>& rows, const std::string& csv_path, const ojson* reference) {
  std::vector<std::string> models;
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  std::map<std::string, std::size_t> totals;
  for (const auto& r : rows) {
    const auto m = model_label(r.model);
    if (!totals.contains(m)) models.push_back(m);
    ++totals[m];
    ++counts[m][r.class_label];
  }
  ojson table = ojson::object();
  auto out = io::open_output(csv_path);
  out << "extracted_concepts";
  for (const auto& m : models) out << ',' << m;
  out << ",average";
  if (reference) out << ",delta_vsa";
  out << '\n';
  for (auto c : probing::kAllClasses) {
    const std::string label(probing::to_string(c));
    out << label;
    double sum = 0.0;
    ojson row = ojson::object();
    for (const auto& m : models) {
      const double pct = 100.0 * static_cast<double>(counts[m][label]) / static_cast<double>(totals[m]);
      sum += pct;
      row[m] = pct;
      out << ',' << fmt_pct(pct);
    }
    const double avg = models.empty() ? 0.0 : sum / static_cast<double>(models.size());
    row["average"] = avg;
    out << ',' << (models.empty() ? std::string() : fmt_pct(avg));
    if (reference) {
      const bool have = !models.empty() && reference->contains(label);
      const double delta = have ? avg - reference->at(label).at("average").get<double>() : 0.0;
      row["delta_vsa"] = have ? ojson(delta) : ojson(nullptr);
      out << ',' << (have ? fmt_pct(delta) : std::string());
    }
    out << '\n';
    if (!models.empty()) table[label] = std::move(row);
  }
  return table;
}

struct PrecisionRow {
  std::string name;
  std::optional<double> next1, next5;
  double probing1 = 0.0, probing5 = 0.0;
};

std::vector<PrecisionRow> precision_by_model(const std::vector<ReportRow>& rows, const std::string& fixed_name) {
  std::vector<std::string> order;
  std::map<std::string, PrecisionRow> acc;
  std::map<std::string, std::size_t> n, n_meta;
  for (const auto& r : rows) {
    const auto m = fixed_name.empty() ? model_label(r.model) : fixed_name;
    if (!acc.contains(m)) {
      order.push_back(m);
      acc[m].name = m;
    }
    auto& a = acc[m];
    ++n[m];
    a.probing1 += r.probing1;
    a.probing5 += r.probing5;
    if (r.next1 && r.next5) {
      a.next1 = a.next1.value_or(0.0) + *r.next1;
      a.next5 = a.next5.value_or(0.0) + *r.next5;
      ++n_meta[m];
    }
  }
  std::vector<PrecisionRow> out;
  for (const auto& m : order) {
    auto a = acc[m];
    a.probing1 /= static_cast<double>(n[m]);
    a.probing5 /= static_cast<double>(n[m]);
    if (a.next1) {
      *a.next1 /= static_cast<double>(n_meta[m]);
      *a.next5 /= static_cast<double>(n_meta[m]);
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::string baseline_name(const std::string& path) {
  const auto stem = fs::path(path).stem().string();
  if (stem.find("permuted") != std::string::npos) return "permuted baseline";
  if (stem.find("unrelated") != std::string::npos) return "unrelated baseline";
  return stem;
}

std::vector<std::string> existing_or(const std::vector<std::string>& given, const std::vector<std::string>& defaults) {
  if (!given.empty()) {
    for (const auto& p : given) require(p, "report input", "probe, baseline or dla");
    return given;
  }
  std::vector<std::string> out;
  for (const auto& p : defaults) {
    if (fs::exists(p)) out.push_back(p);
  }
  return out;
}

}  // namespace

void corpus_gen(const config::PipelineConfig& cfg, const CorpusGenOptions& opt) {
  Stopwatch sw("corpus-gen");
  std::vector<corpus::DomainPairs> domains;
  if (!cfg.paths.google.empty()) {
    require(cfg.paths.google, "paths.google", "the Google analogy download");
    auto g = corpus::load_google_analogy(cfg.paths.google);
    domains.insert(domains.end(), g.begin(), g.end());
  }
  if (!cfg.paths.bats.empty()) {
    require(cfg.paths.bats, "paths.bats", "the BATS download");
    auto b = corpus::load_bats(cfg.paths.bats);
    domains.insert(domains.end(), b.begin(), b.end());
  }
  if (cfg.corpus.math) {
    corpus::MathOptions math;
    for (const auto& [name, cap] : cfg.corpus.math_caps) math.caps[name] = cap;
    auto m = corpus::gen_math_pairs(math);
    domains.insert(domains.end(), m.begin(), m.end());
  }
  if (domains.empty()) throw ConfigError("corpus-gen: no knowledge base configured (paths.google, paths.bats, corpus.math)");

  std::vector<corpus::AnalogyExample> examples;
  const auto& t = cfg.corpus.templates;
  if (t == "colon" || t == "both") examples = corpus::generate_examples(domains, corpus::Template::Colon);
  if (t == "verbose" || t == "both") {
    auto v = corpus::generate_examples(domains, corpus::Template::Verbose);
    examples.insert(examples.end(), v.begin(), v.end());
  }
  const std::size_t base = examples.size();
  if (cfg.corpus.augment) examples = corpus::augment(examples);
  const std::string out = pick(opt.out, cfg.paths.corpus);
  ensure_parent(out);
  corpus::write_examples(out, examples);
  std::printf("corpus-gen: %zu domains, %zu examples, %zu after augmentation, %zu concepts -> %s\n", domains.size(),
              base, examples.size(), corpus::vocabulary(examples).size(), out.c_str());
}

void codebook_build(const config::PipelineConfig& cfg, const CodebookOptions& opt) {
  Stopwatch sw("codebook-build");
  require(cfg.paths.corpus, "paths.corpus", "corpus-gen");
  auto concepts = corpus::vocabulary(corpus::read_examples(cfg.paths.corpus));
  const auto cb = vsa::Codebook::build(std::move(concepts), cfg.vsa.dim, cfg.vsa.seed);
  const std::string out = pick(opt.out, cfg.paths.codebook);
  ensure_parent(out);
  vsa::save_codebook(cb, out);
  if (!opt.binary.empty()) {
    ensure_parent(opt.binary);
    vsa::save_codebook_binary(cb, opt.binary);
  }
  std::printf("codebook-build: %zu concepts, D=%zu -> %s\n", cb.size(), cb.dim(), out.c_str());
}

void ingest(const config::PipelineConfig& cfg, const IngestOptions& opt) {
  Stopwatch sw("ingest");
  const std::string cache = pick(opt.cache, cfg.paths.cache);
  // An overridden cache brings its own sidecar unless one is named too.
  const std::string default_sidecar =
      opt.cache.empty() && !cfg.paths.sidecar.empty() ? cfg.paths.sidecar : sidecar_for(cache);
  const std::string sidecar = pick(opt.sidecar, default_sidecar);
  require(cache, "paths.cache", "the extractor");
  require(sidecar, "paths.sidecar", "the extractor");
  formats::CacheHeader header;
  const auto records = formats::read_records(cache, sidecar, &header);

  ingestion::IngestConfig ic;
  ic.k = cfg.ingest.k;
  ic.kmeans.seed = cfg.ingest.kmeans_seed;
  ic.kmeans.max_iters = cfg.ingest.max_iters;
  ic.kmeans.tol = cfg.ingest.tol;
  ic.canonicalize = cfg.ingest.canonicalize;

  std::vector<ingestion::EmbeddingRecord> compressed;
  compressed.reserve(records.size());
  for (const auto& r : records) {
    auto e = ingestion::ingest(r, ic);
    if (!e.vector.allFinite()) throw NumericError("ingest: non-finite embedding for '" + r.input_id + "'");
    compressed.push_back({r.input_id, e.vector.transpose(), r.model_name, r.meta});
  }
  formats::CacheHeader out_header = header;
  out_header.layers_stored = 1;
  const std::string out = pick(opt.out, cfg.paths.compressed);
  ensure_parent(out);
  formats::write_records(out, sidecar_for(out), out_header, compressed);
  std::printf("ingest: %zu records, %zu x %zu -> %zu -> %s\n", records.size(), header.layers_stored, header.dim,
              header.dim, out.c_str());
}

void train(const config::PipelineConfig& cfg, const TrainOptions& opt) {
  Stopwatch sw("train");
  require(cfg.paths.corpus, "paths.corpus", "corpus-gen");
  require(cfg.paths.codebook, "paths.codebook", "codebook-build");
  const Compressed data = load_compressed(pick(opt.in, cfg.paths.compressed));
  const auto examples = corpus::read_examples(cfg.paths.corpus);
  const auto by_id = examples_by_id(examples);
  const auto cb = vsa::load_codebook(cfg.paths.codebook);
  const auto tie = cfg.vsa.make_tie_break();

  const auto n = data.records.size();
  Eigen::MatrixXf targets(static_cast<Eigen::Index>(cb.dim()), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    targets.col(static_cast<Eigen::Index>(i)) =
        corpus::encode_analogy(example_for(by_id, data.records[i].input_id), cb, tie).dense<float>();
  }
  std::vector<std::size_t> tr, va;
  const auto te = select_split(cfg, n, "test", &tr, &va);
  if (tr.empty() || va.empty()) throw ConfigError("train: split leaves no training or validation records");
  encoder::Dataset<float> train_set{columns(data.inputs, tr), columns(targets, tr)};
  encoder::Dataset<float> val_set{columns(data.inputs, va), columns(targets, va)};

  auto enc = cfg.train.encoder;
  enc.input_dim = data.inputs.rows();
  enc.output_dim = static_cast<Eigen::Index>(cb.dim());
  auto params = encoder::init<float>(enc, cfg.train.init_seed);
  auto tc = cfg.train.train;
  ojson rep;
  if (cfg.train.lr_finder) {
    const auto f = encoder::lr_finder(params, train_set, tc);
    tc.base_lr = f.suggestion;
    rep["lr_finder"] = {{"suggestion", f.suggestion}, {"fallback", f.fallback}, {"steps", f.lrs.size()}};
    std::printf("train: lr finder suggests %.3g\n", f.suggestion);
  }
  auto result = encoder::train(std::move(params), train_set, val_set, tc, [](const encoder::EpochRecord& e) {
    if (e.epoch % 10 == 0) {
      std::fprintf(stderr, "epoch %d lr %.3g train %.5f val %.5f\n", e.epoch, e.lr, e.train_loss, e.val_loss);
    }
  });
  if (!te.empty()) {
    result.report.test = encoder::evaluate(result.params, encoder::Dataset<float>{columns(data.inputs, te), columns(targets, te)});
  }
  ensure_parent(cfg.paths.weights);
  encoder::save_params(result.params, cfg.paths.weights);
  encoder::write_telemetry_csv(report_file(cfg, "telemetry.csv"), result.report.epochs);

  rep["base_lr"] = tc.base_lr;
  rep["epochs_run"] = result.report.epochs.size();
  rep["best_epoch"] = result.report.best_epoch;
  rep["best_val_loss"] = result.report.best_val_loss;
  rep["stopped_early"] = result.report.stopped_early;
  rep["n_train"] = tr.size();
  rep["n_val"] = va.size();
  rep["n_test"] = te.size();
  rep["parameters"] = result.params.parameter_count();
  if (result.report.test) {
    rep["test"] = {{"cosine_mean", result.report.test->cosine_mean},
                   {"binary_accuracy", result.report.test->binary_accuracy}};
  }
  write_json(report_file(cfg, "train_report.json"), rep);
  std::fprintf(stderr, "train: wall %.1f s\n", result.report.wall_seconds);
  std::printf("train: %zu epochs, best epoch %d (val loss %.5f)", result.report.epochs.size(), result.report.best_epoch,
              result.report.best_val_loss);
  if (result.report.test) {
    std::printf(", test cosine %.4f, binary accuracy %.4f", result.report.test->cosine_mean,
                result.report.test->binary_accuracy);
  }
  std::printf(" -> %s\n", cfg.paths.weights.c_str());
}

void probe(const config::PipelineConfig& cfg, const ProbeOptions& opt) {
  Stopwatch sw("probe");
  auto in = load_probe_inputs(cfg, opt.in, opt.split);
  const auto results = probing::probe_all(in.cases, in.codebook, in.linkage, cfg.probe.probe);
  const auto m = probing::summarize(in.cases, results);
  const std::string out = opt.out.empty() ? report_file(cfg, "probe.jsonl") : opt.out;
  write_probe_outputs(out, in.cases, results, m);
  print_metrics("probe", m);
}

void baseline(const config::PipelineConfig& cfg, const BaselineOptions& opt) {
  Stopwatch sw("baseline");
  if (opt.kind != "permuted" && opt.kind != "unrelated") {
    throw ConfigError("--baseline: expected \"permuted\" or \"unrelated\"");
  }
  auto in = load_probe_inputs(cfg, opt.in, opt.split);
  const auto seed = cfg.probe.baseline_seed;
  std::vector<probing::ProbeCase> cases;
  if (opt.kind == "permuted") {
    const auto& params = in.params;
    cases = in.cases;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      auto& c = cases[i];
      const auto perm = probing::case_permutation(c.embedding.size(), seed, i);
      Eigen::VectorXf shuffled(c.embedding.size());
      for (std::size_t j = 0; j < perm.size(); ++j) shuffled(static_cast<Eigen::Index>(j)) = c.embedding(perm[j]);
      c.prediction = encoder::forward<float>(params, encoder::Vector<float>(shuffled), encoder::ForwardMode::eval());
      c.embedding = std::move(shuffled);
    }
  } else {
    for (std::size_t i = 0; i < in.cases.size(); ++i) cases.push_back(probing::unrelated_case(in.cases[i], in.codebook, seed, i));
  }
  const auto results = probing::probe_all(cases, in.codebook, in.linkage, cfg.probe.probe);
  auto m = probing::summarize(cases, results);
  const std::string out = opt.out.empty() ? report_file(cfg, "baseline_" + opt.kind + ".jsonl") : opt.out;
  write_probe_outputs(out, cases, results, m);
  print_metrics(opt.kind == "permuted" ? "permuted baseline" : "unrelated baseline", m);
}

void dla(const config::PipelineConfig& cfg, const DlaOptions& opt) {
  Stopwatch sw("dla");
  require(cfg.paths.cache, "paths.cache", "the extractor");
  const std::string sidecar = cfg.paths.sidecar.empty() ? sidecar_for(cfg.paths.cache) : cfg.paths.sidecar;
  require(sidecar, "paths.sidecar", "the extractor");
  require(cfg.paths.unembedding, "paths.unembedding", "the extractor");
  require(cfg.paths.vocab, "paths.vocab", "the extractor");
  require(cfg.paths.codebook, "paths.codebook", "codebook-build");
  require(cfg.paths.corpus, "paths.corpus", "corpus-gen");

  formats::CacheHeader header;
  const auto records = formats::read_records(cfg.paths.cache, sidecar, &header);
  const auto u = formats::read_unembedding(cfg.paths.unembedding, cfg.paths.vocab);
  const auto cb = vsa::load_codebook(cfg.paths.codebook);
  const auto examples = corpus::read_examples(cfg.paths.corpus);
  const auto by_id = examples_by_id(examples);
  const auto linkage = linkage_from(examples);
  const dla::ConceptMatcher matcher(cb.concepts());
  const dla::DlaConfig dc{cfg.dla.k, cfg.dla.final_norm};

  std::vector<ojson> rows;
  std::size_t none = 0;
  for (const auto& r : records) {
    auto c = probing::make_case(example_for(by_id, r.input_id), {});
    c.model = r.model_name;
    const auto res = dla::dla_extract(r, header.layer_start, u, matcher, c, linkage, dc);
    none += res.class_label == probing::ExtractionClass::None;
    ojson j;
    j["id"] = res.id;
    j["model"] = r.model_name;
    j["domain"] = c.domain;
    j["category"] = c.category;
    j["class_label"] = std::string(probing::to_string(res.class_label));
    j["concepts"] = res.concepts;
    auto layers = ojson::array();
    for (const auto& l : res.layers) {
      auto top = ojson::array();
      for (const auto& t : l.top) top.push_back({{"token", t.token}, {"logit", t.logit}});
      layers.push_back({{"layer", l.layer}, {"top", std::move(top)}, {"concepts", l.concepts}});
    }
    j["layers"] = std::move(layers);
    rows.push_back(std::move(j));
  }
  const std::string out = opt.out.empty() ? report_file(cfg, "dla.jsonl") : opt.out;
  write_lines(out, rows);
  std::printf("dla: %zu records, NONE %.1f%% -> %s\n", records.size(),
              records.empty() ? 0.0 : 100.0 * static_cast<double>(none) / static_cast<double>(records.size()),
              out.c_str());
}

void qa(const config::PipelineConfig& cfg, const QaOptions& opt) {
  Stopwatch sw("qa");
  require(cfg.paths.qa, "paths.qa", "the QA feature file");
  require(cfg.paths.weights, "paths.weights", "train");
  require(cfg.paths.codebook, "paths.codebook", "codebook-build");
  const auto qa_examples = corpus::read_qa_examples(cfg.paths.qa);
  const auto cb = vsa::load_codebook(cfg.paths.codebook);
  const auto params = encoder::load_params<float>(cfg.paths.weights, cfg.train.encoder);
  const Compressed data = load_compressed(pick(opt.in, cfg.paths.compressed));
  std::optional<probing::EmbeddingTable> table;
  if (!cfg.paths.word_vectors.empty()) {
    require(cfg.paths.word_vectors, "paths.word_vectors", "an external word-vector download");
    table = probing::EmbeddingTable::load_text(cfg.paths.word_vectors);
  }
  const Eigen::MatrixXf y = encoder::predict(params, data.inputs);

  // Records are "<qa id>" (single state) or carry phase "before"/"after".
  struct States {
    std::vector<std::string> before, after;
    std::string prediction;
  };
  std::map<std::string, States> states;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& r = data.records[i];
    std::string id = r.input_id;
    for (const std::string suffix : {"/before", "/after"}) {
      if (id.ends_with(suffix)) id.resize(id.size() - suffix.size());
    }
    std::vector<std::string> names;
    for (const auto& m : probing::qa_probe(y.col(static_cast<Eigen::Index>(i)), cb, cfg.probe.probe.threshold,
                                           std::max<std::size_t>(cfg.probe.probe.k, 10))) {
      names.push_back(m.name);
    }
    auto& s = states[id];
    if (r.meta.phase == "after") {
      s.after = std::move(names);
      s.prediction = r.meta.prediction;
    } else {
      s.before = std::move(names);
      if (s.prediction.empty()) s.prediction = r.meta.prediction;
    }
  }

  std::vector<ojson> rows;
  double f1 = 0.0, em = 0.0, mention = 0.0;
  double qb = 0.0, qa_ = 0.0, ab = 0.0, aa = 0.0;
  std::size_t n = 0, missing = 0;
  for (const auto& ex : qa_examples) {
    const auto it = states.find(ex.id);
    if (it == states.end()) continue;
    const auto& s = it->second;
    const auto scores = probing::qa_metrics(s.prediction, ex.target_answer);
    ojson j;
    j["id"] = ex.id;
    j["before"] = s.before;
    j["after"] = s.after;
    j["prediction"] = s.prediction;
    j["answer"] = ex.target_answer;
    j["f1"] = scores.f1;
    j["exact_match"] = scores.exact_match;
    j["mention"] = scores.mention;
    if (table) {
      const auto d = probing::concept_drift(s.before, s.after, ex.question_features, ex.answer_features, *table);
      j["drift"] = {{"question_before", d.question_before}, {"question_after", d.question_after},
                    {"answer_before", d.answer_before},     {"answer_after", d.answer_after},
                    {"missing", d.missing}};
      qb += d.question_before;
      qa_ += d.question_after;
      ab += d.answer_before;
      aa += d.answer_after;
      missing += d.missing;
    }
    f1 += scores.f1;
    em += scores.exact_match;
    mention += scores.mention;
    ++n;
    rows.push_back(std::move(j));
  }
  const std::string out = opt.out.empty() ? report_file(cfg, "qa.jsonl") : opt.out;
  write_lines(out, rows);
  const double dn = n == 0 ? 1.0 : static_cast<double>(n);
  ojson m;
  m["n"] = n;
  m["f1"] = f1 / dn;
  m["exact_match"] = em / dn;
  m["mention"] = mention / dn;
  m["normalization"] = "lowercase, punctuation and the articles a/an/the removed, whitespace tokens";
  if (table) {
    m["drift"] = {{"question_before", qb / dn}, {"question_after", qa_ / dn}, {"question_delta", (qa_ - qb) / dn},
                  {"answer_before", ab / dn},   {"answer_after", aa / dn},    {"answer_delta", (aa - ab) / dn},
                  {"missing_embeddings", missing}};
  }
  fs::path mp(out);
  write_json(mp.replace_extension(".metrics.json").string(), m);
  if (n == 0) warn("qa: no QA example matched a record id");
  std::printf("qa: %zu questions, F1 %.4f, exact match %.4f -> %s\n", n, f1 / dn, em / dn, out.c_str());
}

void report(const config::PipelineConfig& cfg, const ReportOptions& opt) {
  Stopwatch sw("report");
  const fs::path dir = opt.out_dir.empty() ? fs::path(cfg.paths.reports) : fs::path(opt.out_dir);
  fs::create_directories(dir);
  const fs::path reports(cfg.paths.reports);
  const auto probe_files = existing_or(opt.probe, {(reports / "probe.jsonl").string()});
  const auto baseline_files = existing_or(
      opt.baseline, {(reports / "baseline_permuted.jsonl").string(), (reports / "baseline_unrelated.jsonl").string()});
  const auto dla_files = existing_or(opt.dla, {(reports / "dla.jsonl").string()});

  std::vector<ReportRow> probe_rows, dla_rows;
  for (const auto& f : probe_files) {
    auto r = read_report_rows(f);
    probe_rows.insert(probe_rows.end(), r.begin(), r.end());
  }
  for (const auto& f : dla_files) {
    auto r = read_report_rows(f);
    dla_rows.insert(dla_rows.end(), r.begin(), r.end());
  }
  if (probe_rows.empty()) warn("report: no probe results; tables are empty");

  ojson rep;
  rep["table1"] = class_table(probe_rows, (dir / "table1.csv").string(), nullptr);

  std::vector<PrecisionRow> precision;
  for (const auto& f : baseline_files) {
    auto rows = read_report_rows(f);
    if (rows.empty()) continue;
    auto p = precision_by_model(rows, baseline_name(f));
    p.front().next1.reset();
    p.front().next5.reset();
    precision.push_back(p.front());
  }
  const auto models = precision_by_model(probe_rows, "");
  precision.insert(precision.end(), models.begin(), models.end());
  {
    auto out = io::open_output((dir / "table5.csv").string());
    out << "model,next_token@1,next_token@5,probing@1,probing@5\n";
    ojson t5 = ojson::array();
    auto opt_num = [](const std::optional<double>& v) { return v ? fmt_num(*v) : std::string("-"); };
    for (const auto& r : precision) {
      out << r.name << ',' << opt_num(r.next1) << ',' << opt_num(r.next5) << ',' << fmt_num(r.probing1) << ','
          << fmt_num(r.probing5) << '\n';
      t5.push_back({{"model", r.name}, {"next_token@1", optional_number(r.next1)},
                    {"next_token@5", optional_number(r.next5)}, {"probing@1", r.probing1},
                    {"probing@5", r.probing5}});
    }
    if (!models.empty()) {
      PrecisionRow avg{"average", {}, {}, 0.0, 0.0};
      std::size_t with_meta = 0;
      for (const auto& m : models) {
        avg.probing1 += m.probing1 / static_cast<double>(models.size());
        avg.probing5 += m.probing5 / static_cast<double>(models.size());
        if (m.next1) {
          avg.next1 = avg.next1.value_or(0.0) + *m.next1;
          avg.next5 = avg.next5.value_or(0.0) + *m.next5;
          ++with_meta;
        }
      }
      if (avg.next1) {
        *avg.next1 /= static_cast<double>(with_meta);
        *avg.next5 /= static_cast<double>(with_meta);
      }
      out << avg.name << ',' << opt_num(avg.next1) << ',' << opt_num(avg.next5) << ',' << fmt_num(avg.probing1)
          << ',' << fmt_num(avg.probing5) << '\n';
      t5.push_back({{"model", avg.name}, {"next_token@1", optional_number(avg.next1)},
                    {"next_token@5", optional_number(avg.next5)}, {"probing@1", avg.probing1},
                    {"probing@5", avg.probing5}});
    }
    rep["table5"] = std::move(t5);
  }
  rep["table3"] = class_table(dla_rows, (dir / "table3.csv").string(), probe_rows.empty() ? nullptr : &rep["table1"]);

  if (!probe_rows.empty() && !dla_rows.empty()) {
    std::vector<dla::LabeledCase> v, d;
    for (const auto& r : probe_rows) v.push_back({r.model + "\n" + r.id, probing::extraction_class_from_string(r.class_label)});
    for (const auto& r : dla_rows) d.push_back({r.model + "\n" + r.id, probing::extraction_class_from_string(r.class_label)});
    try {
      const auto t = dla::compare(v, d);
      ojson cmp;
      cmp["n"] = t.n;
      cmp["dla_none"] = t.dla_none;
      cmp["vsa_none"] = t.vsa_none;
      ojson a = ojson::object(), b = ojson::object();
      for (auto c : probing::kAllClasses) {
        a[std::string(probing::to_string(c))] = t.vsa_given_dla_none.at(c);
        b[std::string(probing::to_string(c))] = t.dla_given_vsa_none.at(c);
      }
      cmp["vsa_given_dla_none"] = std::move(a);
      cmp["dla_given_vsa_none"] = std::move(b);
      rep["comparison"] = std::move(cmp);
    } catch (const InvalidArgument& e) {
      warn(std::string("report: VSA/DLA comparison skipped: ") + e.what());
    }
  }
  rep["notes"] = {
      "Cleaned Example Key/Value unbinding candidates are not implemented.",
      "Extraction classes use every match above the threshold, up to k.",
      "DLA concepts are the union of matched tokens over all stored layers.",
      "QA answers are compared after lowercasing and removing punctuation and the articles a/an/the."};
  write_json((dir / "report.json").string(), rep);

  ojson manifest;
  manifest["tool"] = "hdprobe";
  manifest["version"] = kVersion;
  const std::string canonical = cfg.to_json().dump();
  manifest["config_sha256"] = config::sha256_hex(canonical);
  if (!opt.config_path.empty()) manifest["config_file_sha256"] = config::sha256_file(opt.config_path);
  manifest["config"] = cfg.to_json();
  manifest["seeds"] = {{"vsa", cfg.vsa.seed},
                       {"split", cfg.corpus.split_seed},
                       {"kmeans", cfg.ingest.kmeans_seed},
                       {"init", cfg.train.init_seed},
                       {"train", cfg.train.train.seed},
                       {"baseline", cfg.probe.baseline_seed}};
  ojson inputs = ojson::array();
  std::vector<std::string> all = probe_files;
  all.insert(all.end(), baseline_files.begin(), baseline_files.end());
  all.insert(all.end(), dla_files.begin(), dla_files.end());
  for (const auto& p : {cfg.paths.corpus, cfg.paths.codebook, cfg.paths.compressed, cfg.paths.weights}) {
    if (!p.empty() && fs::exists(p)) all.push_back(p);
  }
  for (const auto& p : all) inputs.push_back({{"path", p}, {"sha256", config::sha256_file(p)}});
  manifest["inputs"] = std::move(inputs);
  write_json((dir / "manifest.json").string(), manifest);
  std::printf("report: %zu probe rows, %zu dla rows -> %s\n", probe_rows.size(), dla_rows.size(), dir.string().c_str());
}

}  // namespace hdprobe::cli
