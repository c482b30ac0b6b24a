#include "hdprobe/config.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace hdprobe::config {
namespace {

using json = nlohmann::json;

class TomlParser {
 public:
  explicit TomlParser(std::string_view text) : s_(text) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        table = &table_header(root);
      } else {
        const auto path = key_path();
        skip_ws();
        expect('=');
        skip_ws();
        assign(*table, path, value());
      }
      end_of_line();
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + what);
  }

  bool eof() const { return pos_ >= s_.size(); }
  char peek(std::size_t ahead = 0) const { return pos_ + ahead < s_.size() ? s_[pos_ + ahead] : '\0'; }
  char get() {
    const char c = s_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }
  void expect(char c) {
    if (eof() || peek() != c) fail(std::string("expected '") + c + "'");
    get();
  }
  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) get();
  }
  void skip_comment() {
    if (peek() == '#') {
      while (!eof() && peek() != '\n') get();
    }
  }
  // Also used between array elements, where newlines and comments are allowed.
  void skip_blank_lines() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\r' || peek() == '\n') {
        get();
      } else {
        break;
      }
    }
  }
  void end_of_line() {
    skip_ws();
    skip_comment();
    if (eof()) return;
    if (peek() == '\r') get();
    if (eof()) return;
    if (peek() != '\n') fail("unexpected text after value");
    get();
  }

  std::string key() {
    if (peek() == '"') return basic_string();
    if (peek() == '\'') return literal_string();
    std::string k;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) k += get();
    if (k.empty()) fail("expected a key");
    return k;
  }

  std::vector<std::string> key_path() {
    std::vector<std::string> path{key()};
    skip_ws();
    while (peek() == '.') {
      get();
      skip_ws();
      path.push_back(key());
      skip_ws();
    }
    return path;
  }

  json& table_header(json& root) {
    get();
    const bool array = peek() == '[';
    if (array) get();
    skip_ws();
    const auto path = key_path();
    expect(']');
    if (array) expect(']');
    json* node = &root;
    for (std::size_t i = 0; i < path.size(); ++i) {
      json& next = (*node)[path[i]];
      if (next.is_null()) next = json::object();
      const bool last = i + 1 == path.size();
      if (last && array) {
        if (!next.is_array()) {
          if (!next.empty()) fail("'" + path[i] + "' is already defined");
          next = json::array();
        }
        next.push_back(json::object());
        return next.back();
      }
      if (next.is_array() && !next.empty()) {
        node = &next.back();
      } else if (next.is_object()) {
        node = &next;
      } else {
        fail("'" + path[i] + "' is not a table");
      }
    }
    if (!array && defined_tables_.count(path) != 0) fail("table defined twice");
    defined_tables_.insert(path);
    return *node;
  }

  void assign(json& table, const std::vector<std::string>& path, json v) {
    json* node = &table;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      json& next = (*node)[path[i]];
      if (next.is_null()) next = json::object();
      if (!next.is_object()) fail("'" + path[i] + "' is not a table");
      node = &next;
    }
    if (node->contains(path.back())) fail("duplicate key '" + path.back() + "'");
    (*node)[path.back()] = std::move(v);
  }

  std::string basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = get();
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated escape");
      switch (const char e = get()) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(std::string("unsupported escape '\\") + e + "'");
      }
    }
    return out;
  }

  std::string literal_string() {
    expect('\'');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = get();
      if (c == '\'') break;
      out += c;
    }
    return out;
  }

  json number_or_bool() {
    std::string tok;
    while (!eof()) {
      const char c = peek();
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' || c == '_') {
        tok += get();
      } else {
        break;
      }
    }
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string digits;
    for (char c : tok) {
      if (c != '_') digits += c;
    }
    if (digits == "inf" || digits == "+inf") return std::numeric_limits<double>::infinity();
    if (digits == "-inf") return -std::numeric_limits<double>::infinity();
    if (digits.empty()) fail("expected a value");
    const bool is_float = digits.find_first_of(".eE") != std::string::npos;
    const char* first = digits.data() + (digits[0] == '+' ? 1 : 0);
    const char* last = digits.data() + digits.size();
    if (is_float) {
      double d = 0;
      auto [p, ec] = std::from_chars(first, last, d);
      if (ec != std::errc() || p != last) fail("bad number '" + tok + "'");
      return d;
    }
    if (digits[0] != '-') {
      std::uint64_t u = 0;
      auto [p, ec] = std::from_chars(first, last, u);
      if (ec != std::errc() || p != last) fail("bad number '" + tok + "'");
      return u;
    }
    std::int64_t i = 0;
    auto [p, ec] = std::from_chars(first, last, i);
    if (ec != std::errc() || p != last) fail("bad number '" + tok + "'");
    return i;
  }

  json value() {
    if (eof()) fail("expected a value");
    const char c = peek();
    if (c == '"') {
      if (peek(1) == '"' && peek(2) == '"') fail("multi-line strings are not supported");
      return basic_string();
    }
    if (c == '\'') return literal_string();
    if (c == '[') {
      get();
      json arr = json::array();
      while (true) {
        skip_blank_lines();
        if (peek() == ']') {
          get();
          break;
        }
        arr.push_back(value());
        skip_blank_lines();
        if (peek() == ',') {
          get();
        } else if (peek() != ']') {
          fail("expected ',' or ']' in array");
        }
      }
      return arr;
    }
    if (c == '{') {
      get();
      json obj = json::object();
      skip_ws();
      if (peek() == '}') {
        get();
        return obj;
      }
      while (true) {
        skip_ws();
        const auto path = key_path();
        skip_ws();
        expect('=');
        skip_ws();
        assign(obj, path, value());
        skip_ws();
        if (peek() == ',') {
          get();
        } else {
          expect('}');
          break;
        }
      }
      return obj;
    }
    return number_or_bool();
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::set<std::vector<std::string>> defined_tables_;
};

// Reads fields of one table, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      node_ = &root.at(name_);
      if (!node_->is_object()) throw ConfigError(name_ + ": expected a table");
    }
  }

  Section(const json* node, std::string name) : node_(node), name_(std::move(name)) {}

  void string(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) error(key, "expected a string");
      out = v->get<std::string>();
    }
  }

  void boolean(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) error(key, "expected true or false");
      out = v->get<bool>();
    }
  }

  void real(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) error(key, "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) error(key, "must be finite");
    }
  }

  template <typename T>
  void integer(const char* key, T& out, long long min_value = 0) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) error(key, "expected an integer");
      if (v->is_number_unsigned()) {
        const auto u = v->get<std::uint64_t>();
        if (u > static_cast<std::uint64_t>(std::numeric_limits<T>::max())) error(key, "out of range");
        if (min_value > 0 && u < static_cast<std::uint64_t>(min_value)) error(key, "must be >= " + std::to_string(min_value));
        out = static_cast<T>(u);
      } else {
        const auto i = v->get<std::int64_t>();
        if (i < min_value) error(key, "must be >= " + std::to_string(min_value));
        out = static_cast<T>(i);
      }
    }
  }

  // Seeds are unsigned 64-bit; decimal strings are accepted for JSON users.
  void seed(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::uint64_t>();
      } else if (v->is_string()) {
        const auto s = v->get<std::string>();
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (ec != std::errc() || p != s.data() + s.size()) error(key, "expected an unsigned 64-bit seed");
      } else {
        error(key, "expected an unsigned 64-bit seed");
      }
    }
  }

  const json* table(const char* key) {
    const json* v = find(key);
    if (v && !v->is_object()) error(key, "expected a table");
    return v;
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [k, v] : node_->items()) {
      if (!used_.contains(k)) throw ConfigError(name_ + "." + k + ": unknown key");
    }
  }

  [[noreturn]] void error(const std::string& key, const std::string& what) const {
    throw ConfigError(name_ + "." + key + ": " + what);
  }

  const std::string& name() const noexcept { return name_; }

 private:
  const json* find(const char* key) {
    used_.insert(key);
    if (!node_) return nullptr;
    const auto it = node_->find(key);
    return it == node_->end() ? nullptr : &*it;
  }

  const json* node_ = nullptr;
  std::string name_;
  std::set<std::string> used_;
};

template <typename Fn>
void rethrow_as_config(const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const InvalidArgument& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

}  // namespace

nlohmann::json parse_toml(std::string_view text) { return TomlParser(text).parse(); }

vsa::TieBreak VsaSection::make_tie_break() const {
  if (tie_break == "plus_one") return vsa::PlusOne{};
  return vsa::Seeded{derive_seed(seed, 0x7469)};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a table at top level");
  const std::set<std::string> known = {"paths", "vsa", "corpus", "ingest", "train", "probe", "dla"};
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ConfigError(k + ": unknown section");
  }
  PipelineConfig c;

  Section paths(j, "paths");
  paths.string("google", c.paths.google);
  paths.string("bats", c.paths.bats);
  paths.string("corpus", c.paths.corpus);
  paths.string("qa", c.paths.qa);
  paths.string("codebook", c.paths.codebook);
  paths.string("cache", c.paths.cache);
  paths.string("sidecar", c.paths.sidecar);
  paths.string("compressed", c.paths.compressed);
  paths.string("weights", c.paths.weights);
  paths.string("unembedding", c.paths.unembedding);
  paths.string("vocab", c.paths.vocab);
  paths.string("word_vectors", c.paths.word_vectors);
  paths.string("reports", c.paths.reports);
  paths.finish();

  Section vsa(j, "vsa");
  vsa.integer("dim", c.vsa.dim, 2);
  vsa.seed("seed", c.vsa.seed);
  vsa.string("tie_break", c.vsa.tie_break);
  vsa.finish();
  if (c.vsa.dim < 2) vsa.error("dim", "must be >= 2");
  if (c.vsa.tie_break != "seeded" && c.vsa.tie_break != "plus_one") {
    vsa.error("tie_break", "expected \"seeded\" or \"plus_one\"");
  }

  Section corpus(j, "corpus");
  corpus.string("templates", c.corpus.templates);
  corpus.boolean("augment", c.corpus.augment);
  corpus.boolean("math", c.corpus.math);
  corpus.real("train", c.corpus.train);
  corpus.real("val", c.corpus.val);
  corpus.real("test", c.corpus.test);
  corpus.seed("split_seed", c.corpus.split_seed);
  if (const json* caps = corpus.table("math_caps")) {
    const auto defaults = hdprobe::corpus::MathOptions::default_caps();
    for (const auto& [name, v] : caps->items()) {
      if (!defaults.contains(name)) corpus.error("math_caps", "unknown math domain '" + name + "'");
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        corpus.error("math_caps", "cap for '" + name + "' must be a non-negative integer");
      }
      c.corpus.math_caps[name] = v.get<std::size_t>();
    }
  }
  corpus.finish();
  if (c.corpus.templates != "colon" && c.corpus.templates != "verbose" && c.corpus.templates != "both") {
    corpus.error("templates", "expected \"colon\", \"verbose\" or \"both\"");
  }
  for (double r : {c.corpus.train, c.corpus.val, c.corpus.test}) {
    if (r < 0.0) corpus.error("train", "split ratios must be non-negative");
  }
  if (std::abs(c.corpus.train + c.corpus.val + c.corpus.test - 1.0) > 1e-9) {
    corpus.error("train", "split ratios must sum to 1");
  }

  Section ingest(j, "ingest");
  ingest.integer("k", c.ingest.k, 1);
  ingest.seed("kmeans_seed", c.ingest.kmeans_seed);
  ingest.integer("max_iters", c.ingest.max_iters, 1);
  ingest.real("tol", c.ingest.tol);
  ingest.boolean("canonicalize", c.ingest.canonicalize);
  ingest.finish();
  if (c.ingest.k == 0) ingest.error("k", "must be >= 1");
  if (c.ingest.tol < 0.0) ingest.error("tol", "must be non-negative");

  Section train(j, "train");
  auto& enc = c.train.encoder;
  auto& tc = c.train.train;
  train.integer("hidden_dim", enc.hidden_dim, 1);
  train.integer("residual_blocks", enc.residual_blocks, 0);
  train.real("dropout", enc.dropout);
  train.integer("batch_size", tc.batch_size, 1);
  train.real("base_lr", tc.base_lr);
  train.real("weight_decay", tc.weight_decay);
  train.real("mse_coeff", tc.mse_coeff);
  train.integer("patience", tc.patience, 1);
  train.integer("max_epochs", tc.max_epochs, 1);
  train.integer("restart_start_epoch", tc.restart_start_epoch, 0);
  train.integer("first_restart_period", tc.first_restart_period, 1);
  train.integer("restart_period_mult", tc.restart_period_mult, 1);
  train.real("lr_floor_ratio", tc.lr_floor_ratio);
  train.seed("seed", tc.seed);
  train.seed("init_seed", c.train.init_seed);
  train.boolean("lr_finder", c.train.lr_finder);
  if (const json* acc = train.table("accumulation")) {
    tc.accumulation.clear();
    for (const auto& [k, v] : acc->items()) {
      int epoch = 0;
      auto [p, ec] = std::from_chars(k.data(), k.data() + k.size(), epoch);
      if (ec != std::errc() || p != k.data() + k.size() || epoch < 0) {
        train.error("accumulation", "keys must be epoch numbers, got '" + k + "'");
      }
      if (!v.is_number_integer() || v.get<long long>() < 1) {
        train.error("accumulation", "factor for epoch " + k + " must be a positive integer");
      }
      tc.accumulation[epoch] = v.get<int>();
    }
  }
  train.finish();
  if (!(enc.dropout >= 0.0 && enc.dropout < 1.0)) train.error("dropout", "must be in [0, 1)");
  if (!(tc.base_lr > 0.0)) train.error("base_lr", "must be positive");
  if (tc.weight_decay < 0.0) train.error("weight_decay", "must be non-negative");
  if (tc.mse_coeff < 0.0) train.error("mse_coeff", "must be non-negative");
  if (!(tc.lr_floor_ratio >= 0.0 && tc.lr_floor_ratio <= 1.0)) train.error("lr_floor_ratio", "must be in [0, 1]");
  enc.output_dim = static_cast<Eigen::Index>(c.vsa.dim);
  rethrow_as_config("train", [&] { tc.validate(); });

  Section probe(j, "probe");
  probe.real("threshold", c.probe.probe.threshold);
  probe.integer("k", c.probe.probe.k, 1);
  probe.boolean("greedy", c.probe.probe.greedy);
  probe.integer("greedy_cap", c.probe.probe.greedy_cap, 0);
  probe.seed("baseline_seed", c.probe.baseline_seed);
  probe.finish();
  if (c.probe.probe.threshold < -1.0 || c.probe.probe.threshold > 1.0) probe.error("threshold", "must be in [-1, 1]");
  if (c.probe.probe.k == 0) probe.error("k", "must be >= 1");

  Section dla(j, "dla");
  dla.integer("k", c.dla.k, 1);
  dla.boolean("final_norm", c.dla.final_norm);
  dla.finish();
  if (c.dla.k == 0) dla.error("k", "must be >= 1");
  return c;
}

nlohmann::ordered_json PipelineConfig::to_json() const {
  nlohmann::ordered_json j;
  auto& p = j["paths"];
  p["google"] = paths.google;
  p["bats"] = paths.bats;
  p["corpus"] = paths.corpus;
  p["qa"] = paths.qa;
  p["codebook"] = paths.codebook;
  p["cache"] = paths.cache;
  p["sidecar"] = paths.sidecar;
  p["compressed"] = paths.compressed;
  p["weights"] = paths.weights;
  p["unembedding"] = paths.unembedding;
  p["vocab"] = paths.vocab;
  p["word_vectors"] = paths.word_vectors;
  p["reports"] = paths.reports;
  j["vsa"] = {{"dim", vsa.dim}, {"seed", vsa.seed}, {"tie_break", vsa.tie_break}};
  j["corpus"] = {{"templates", corpus.templates}, {"augment", corpus.augment}, {"math", corpus.math},
                 {"train", corpus.train},         {"val", corpus.val},         {"test", corpus.test},
                 {"split_seed", corpus.split_seed}};
  nlohmann::ordered_json caps = nlohmann::ordered_json::object();
  for (const auto& [name, cap] : corpus.math_caps) caps[name] = cap;
  j["corpus"]["math_caps"] = std::move(caps);
  j["ingest"] = {{"k", ingest.k},
                 {"kmeans_seed", ingest.kmeans_seed},
                 {"max_iters", ingest.max_iters},
                 {"tol", ingest.tol},
                 {"canonicalize", ingest.canonicalize}};
  auto& t = j["train"];
  const auto& tc = train.train;
  t["hidden_dim"] = train.encoder.hidden_dim;
  t["residual_blocks"] = train.encoder.residual_blocks;
  t["dropout"] = train.encoder.dropout;
  t["batch_size"] = tc.batch_size;
  t["base_lr"] = tc.base_lr;
  t["weight_decay"] = tc.weight_decay;
  t["mse_coeff"] = tc.mse_coeff;
  t["patience"] = tc.patience;
  t["max_epochs"] = tc.max_epochs;
  t["restart_start_epoch"] = tc.restart_start_epoch;
  t["first_restart_period"] = tc.first_restart_period;
  t["restart_period_mult"] = tc.restart_period_mult;
  t["lr_floor_ratio"] = tc.lr_floor_ratio;
  t["seed"] = tc.seed;
  t["init_seed"] = train.init_seed;
  t["lr_finder"] = train.lr_finder;
  nlohmann::ordered_json acc = nlohmann::ordered_json::object();
  for (const auto& [epoch, factor] : tc.accumulation) acc[std::to_string(epoch)] = factor;
  t["accumulation"] = std::move(acc);
  j["probe"] = {{"threshold", probe.probe.threshold},
                {"k", probe.probe.k},
                {"greedy", probe.probe.greedy},
                {"greedy_cap", probe.probe.greedy_cap},
                {"baseline_seed", probe.baseline_seed}};
  j["dla"] = {{"k", dla.k}, {"final_norm", dla.final_norm}};
  return j;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json j;
  if (std::filesystem::path(path).extension() == ".json") {
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  } else {
    j = parse_toml(text);
  }
  return PipelineConfig::from_json(j);
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput(path, "an earlier stage");
  std::stringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

}  // namespace hdprobe::config
