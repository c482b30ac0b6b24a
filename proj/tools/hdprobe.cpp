// hdprobe: command-line driver for the probing pipeline.
//
//   corpus-gen -> codebook-build -> (extractor) -> ingest -> train -> probe
//                                                                 -> baseline
//                                               dla, qa, report

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "hdprobe/error.hpp"
#include "stages.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kMissing = 3, kNumeric = 4 };

}  // namespace

int main(int argc, char** argv) {
  using namespace hdprobe;
  CLI::App app{"Hyperdimensional probe toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cli::kVersion));

  std::string config_path;
  int jobs = 1;
  app.add_option("-c,--config", config_path, "TOML or JSON pipeline configuration");
  app.add_option("--jobs", jobs, "Maximum worker count (stages currently run on one thread)")
      ->check(CLI::PositiveNumber);

  std::optional<double> threshold;
  std::optional<std::size_t> k;
  std::optional<std::uint64_t> seed;
  auto add_probe_flags = [&](CLI::App* sub) {
    sub->add_option("--threshold", threshold, "Minimum cosine similarity for a match");
    sub->add_option("--k", k, "Matches kept per case");
  };

  cli::CorpusGenOptions corpus_opt;
  auto* corpus_cmd = app.add_subcommand("corpus-gen", "Render analogy examples from the knowledge bases");
  corpus_cmd->add_option("-o,--out", corpus_opt.out, "Corpus JSONL (default paths.corpus)");

  cli::CodebookOptions codebook_opt;
  auto* codebook_cmd = app.add_subcommand("codebook-build", "Build the concept codebook from the corpus vocabulary");
  codebook_cmd->add_option("-o,--out", codebook_opt.out, "Codebook JSON (default paths.codebook)");
  codebook_cmd->add_option("--binary", codebook_opt.binary, "Also write an HDPB dump");

  cli::IngestOptions ingest_opt;
  auto* ingest_cmd = app.add_subcommand("ingest", "Compress cached residual streams to one vector per input");
  ingest_cmd->add_option("--cache", ingest_opt.cache, "HDPC cache (default paths.cache)");
  ingest_cmd->add_option("--sidecar", ingest_opt.sidecar, "Cache metadata JSONL");
  ingest_cmd->add_option("-o,--out", ingest_opt.out, "Compressed HDPC (default paths.compressed)");

  cli::TrainOptions train_opt;
  auto* train_cmd = app.add_subcommand("train", "Train the neural VSA encoder");
  train_cmd->add_option("--in", train_opt.in, "Compressed HDPC (default paths.compressed)");

  cli::ProbeOptions probe_opt;
  auto* probe_cmd = app.add_subcommand("probe", "Extract concepts from encoder predictions");
  probe_cmd->add_option("--split", probe_opt.split, "Records to probe")->check(CLI::IsMember({"test", "all"}));
  probe_cmd->add_option("--in", probe_opt.in, "Compressed HDPC (default paths.compressed)");
  probe_cmd->add_option("-o,--out", probe_opt.out, "Per-case JSONL (default <reports>/probe.jsonl)");
  add_probe_flags(probe_cmd);

  cli::BaselineOptions baseline_opt;
  auto* baseline_cmd = app.add_subcommand("baseline", "Run a control baseline");
  baseline_cmd->add_option("--baseline", baseline_opt.kind, "permuted or unrelated")
      ->required()
      ->check(CLI::IsMember({"permuted", "unrelated"}));
  baseline_cmd->add_option("--split", baseline_opt.split, "Records to probe")->check(CLI::IsMember({"test", "all"}));
  baseline_cmd->add_option("--in", baseline_opt.in, "Compressed HDPC (default paths.compressed)");
  baseline_cmd->add_option("-o,--out", baseline_opt.out, "Per-case JSONL");
  baseline_cmd->add_option("--seed", seed, "Baseline seed (default probe.baseline_seed)");
  add_probe_flags(baseline_cmd);

  cli::DlaOptions dla_opt;
  std::optional<std::size_t> dla_k;
  bool final_norm = false;
  auto* dla_cmd = app.add_subcommand("dla", "Direct logit attribution baseline");
  dla_cmd->add_option("-o,--out", dla_opt.out, "Per-case JSONL (default <reports>/dla.jsonl)");
  dla_cmd->add_option("--k", dla_k, "Tokens kept per layer");
  dla_cmd->add_flag("--final-norm", final_norm, "Normalize layer vectors before projection");

  cli::QaOptions qa_opt;
  auto* qa_cmd = app.add_subcommand("qa", "Probe question-answering states");
  qa_cmd->add_option("--in", qa_opt.in, "Compressed HDPC of QA states");
  qa_cmd->add_option("-o,--out", qa_opt.out, "Per-question JSONL (default <reports>/qa.jsonl)");
  add_probe_flags(qa_cmd);

  cli::ReportOptions report_opt;
  auto* report_cmd = app.add_subcommand("report", "Render summary tables and the run manifest");
  report_cmd->add_option("--probe", report_opt.probe, "Probe result JSONL files");
  report_cmd->add_option("--baseline-results", report_opt.baseline, "Baseline result JSONL files");
  report_cmd->add_option("--dla", report_opt.dla, "DLA result JSONL files");
  report_cmd->add_option("-o,--out-dir", report_opt.out_dir, "Output directory (default paths.reports)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    auto cfg = config_path.empty() ? config::PipelineConfig{} : config::load_config(config_path);
    if (threshold) {
      if (*threshold < -1.0 || *threshold > 1.0) throw ConfigError("--threshold: must be in [-1, 1]");
      cfg.probe.probe.threshold = *threshold;
    }
    if (k) {
      if (*k == 0) throw ConfigError("--k: must be >= 1");
      cfg.probe.probe.k = *k;
    }
    if (seed) cfg.probe.baseline_seed = *seed;
    if (dla_k) {
      if (*dla_k == 0) throw ConfigError("--k: must be >= 1");
      cfg.dla.k = *dla_k;
    }
    if (final_norm) cfg.dla.final_norm = true;
    report_opt.config_path = config_path;

    if (*corpus_cmd) cli::corpus_gen(cfg, corpus_opt);
    if (*codebook_cmd) cli::codebook_build(cfg, codebook_opt);
    if (*ingest_cmd) cli::ingest(cfg, ingest_opt);
    if (*train_cmd) cli::train(cfg, train_opt);
    if (*probe_cmd) cli::probe(cfg, probe_opt);
    if (*baseline_cmd) cli::baseline(cfg, baseline_opt);
    if (*dla_cmd) cli::dla(cfg, dla_opt);
    if (*qa_cmd) cli::qa(cfg, qa_opt);
    if (*report_cmd) cli::report(cfg, report_opt);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfig;
  } catch (const MissingInput& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMissing;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}
