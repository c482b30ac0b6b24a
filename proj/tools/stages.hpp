#pragma once

#include <string>
#include <vector>

#include "hdprobe/config.hpp"

namespace hdprobe::cli {

inline constexpr const char* kVersion = "0.1.0";

struct CorpusGenOptions {
  std::string out;  // overrides paths.corpus
};

struct CodebookOptions {
  std::string out;     // overrides paths.codebook
  std::string binary;  // optional HDPB dump
};

struct IngestOptions {
  std::string cache;
  std::string sidecar;
  std::string out;
};

struct TrainOptions {
  std::string in;  // overrides paths.compressed
};

struct ProbeOptions {
  std::string split = "test";  // "test" | "all"
  std::string in;
  std::string out;  // defaults to <reports>/probe.jsonl
};

struct BaselineOptions {
  std::string kind;  // "permuted" | "unrelated"
  std::string split = "test";
  std::string in;
  std::string out;  // defaults to <reports>/baseline_<kind>.jsonl
};

struct DlaOptions {
  std::string out;  // defaults to <reports>/dla.jsonl
};

struct QaOptions {
  std::string in;
  std::string out;  // defaults to <reports>/qa.jsonl
};

struct ReportOptions {
  std::vector<std::string> probe;
  std::vector<std::string> baseline;
  std::vector<std::string> dla;
  std::string out_dir;
  std::string config_path;  // hashed into the manifest when given
};

void corpus_gen(const config::PipelineConfig& cfg, const CorpusGenOptions& opt);
void codebook_build(const config::PipelineConfig& cfg, const CodebookOptions& opt);
void ingest(const config::PipelineConfig& cfg, const IngestOptions& opt);
void train(const config::PipelineConfig& cfg, const TrainOptions& opt);
void probe(const config::PipelineConfig& cfg, const ProbeOptions& opt);
void baseline(const config::PipelineConfig& cfg, const BaselineOptions& opt);
void dla(const config::PipelineConfig& cfg, const DlaOptions& opt);
void qa(const config::PipelineConfig& cfg, const QaOptions& opt);
void report(const config::PipelineConfig& cfg, const ReportOptions& opt);

}  // namespace hdprobe::cli
