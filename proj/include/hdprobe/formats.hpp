#pragma once

// On-disk containers exchanged with the embedding extractor:
//   HDPC  residual-stream cache (+ JSON Lines sidecar of next-token metadata)
//   HDPU  unembedding matrix (+ JSON Lines vocabulary sidecar)

#include <Eigen/Core>

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "hdprobe/ingestion.hpp"

namespace hdprobe::formats {

struct CacheHeader {
  std::string model;
  std::size_t dim = 0;
  std::size_t layers_stored = 0;
  int layer_start = 0;
  int layer_end = 0;
  std::string token_policy = "last";
  std::size_t count = 0;
  std::string dtype = "f32";
  std::string order = "record-major,layer-major";

  std::string to_json() const;
  static CacheHeader from_json(const std::string& text);
};

inline constexpr std::uint32_t kCacheVersion = 1;

// Writes header + count x layers_stored x dim float32 LE values. The header's
// count is taken from `matrices`; every matrix must be layers_stored x dim.
void write_cache(const std::string& path, CacheHeader header, std::span<const Eigen::MatrixXf> matrices);

// Random-access reader. Each instance owns its stream, so concurrent readers
// simply open separate instances.
class CacheReader {
 public:
  explicit CacheReader(const std::string& path);

  const CacheHeader& header() const noexcept { return header_; }
  std::size_t size() const noexcept { return header_.count; }
  Eigen::MatrixXf read(std::size_t index);

 private:
  std::string path_;
  std::ifstream in_;
  CacheHeader header_;
  std::streamoff payload_offset_ = 0;
};

std::vector<Eigen::MatrixXf> read_cache_matrices(const std::string& path, CacheHeader* header = nullptr);

// Sidecar: line i <-> record i.
std::string meta_to_jsonl(const std::string& id, const ingestion::NextTokenMeta& meta);
void write_sidecar(const std::string& path, std::span<const ingestion::EmbeddingRecord> records);
std::vector<std::pair<std::string, ingestion::NextTokenMeta>> read_sidecar(const std::string& path);

// Cache + sidecar joined into records. Count mismatch is a FormatError.
std::vector<ingestion::EmbeddingRecord> read_records(const std::string& cache_path, const std::string& sidecar_path,
                                                     CacheHeader* header = nullptr);
void write_records(const std::string& cache_path, const std::string& sidecar_path, const CacheHeader& header,
                   std::span<const ingestion::EmbeddingRecord> records);

struct Unembedding {
  std::vector<std::string> vocab;
  Eigen::MatrixXf matrix;  // vocab_size x dim
};

inline constexpr std::uint32_t kUnembeddingVersion = 1;

void write_unembedding(const std::string& path, const std::string& vocab_path, const Unembedding& u);
Unembedding read_unembedding(const std::string& path, const std::string& vocab_path);

}  // namespace hdprobe::formats
