#pragma once

// Pipeline configuration. Files are TOML (the subset used by configs:
// tables, dotted keys, strings, numbers, booleans, arrays, inline tables)
// or JSON; both map onto the same JSON document before validation.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "hdprobe/corpus.hpp"
#include "hdprobe/encoder.hpp"
#include "hdprobe/ingestion.hpp"
#include "hdprobe/probing.hpp"
#include "hdprobe/vsa.hpp"

namespace hdprobe::config {

// Throws ConfigError with the offending line number.
nlohmann::json parse_toml(std::string_view text);

struct PathsConfig {
  std::string google;          // Google analogy questions file
  std::string bats;            // BATS directory
  std::string corpus = "corpus.jsonl";
  std::string qa;              // QA feature JSONL
  std::string codebook = "codebook.json";
  std::string cache;           // HDPC from the extractor
  std::string sidecar;         // JSONL metadata for `cache`
  std::string compressed = "compressed.hdpc";
  std::string weights = "encoder.hdpw";
  std::string unembedding;     // HDPU
  std::string vocab;           // HDPU vocab sidecar
  std::string word_vectors;    // word2vec text, for QA drift
  std::string reports = "reports";
};

struct VsaSection {
  std::size_t dim = 4096;
  std::uint64_t seed = 0;
  std::string tie_break = "seeded";  // "seeded" | "plus_one"

  vsa::TieBreak make_tie_break() const;
};

struct CorpusSection {
  std::string templates = "colon";  // "colon" | "verbose" | "both"
  bool augment = true;
  bool math = true;
  // Overrides of the default per-domain math pair caps; 0 drops a domain.
  std::map<std::string, std::size_t> math_caps;
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t split_seed = 0;
};

struct IngestSection {
  std::size_t k = 5;
  std::uint64_t kmeans_seed = 0;
  int max_iters = 100;
  double tol = 1e-6;
  bool canonicalize = true;
};

struct TrainSection {
  encoder::EncoderConfig encoder;  // input_dim comes from the data
  encoder::TrainConfig train;
  std::uint64_t init_seed = 0;
  bool lr_finder = false;
};

struct ProbeSection {
  probing::ProbeConfig probe;
  std::uint64_t baseline_seed = 0;
};

struct DlaSection {
  std::size_t k = 5;
  bool final_norm = false;
};

struct PipelineConfig {
  PathsConfig paths;
  VsaSection vsa;
  CorpusSection corpus;
  IngestSection ingest;
  TrainSection train;
  ProbeSection probe;
  DlaSection dla;

  // Unknown keys and type or range violations raise ConfigError naming the field.
  static PipelineConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

// TOML unless the path ends in ".json". An unreadable file is a ConfigError.
PipelineConfig load_config(const std::string& path);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::string& path);

}  // namespace hdprobe::config
