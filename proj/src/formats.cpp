#include "hdprobe/formats.hpp"

#include <nlohmann/json.hpp>

#include "hdprobe/binary_io.hpp"

namespace hdprobe::formats {
namespace {

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
T field(const nlohmann::json& j, const char* name, const char* what) {
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string(what) + ": missing or invalid header field '" + name + "'");
  }
}

std::string read_line_json_string(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  return j.at("token").get<std::string>();
}

}  // namespace

std::string CacheHeader::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["dim"] = dim;
  j["layers_stored"] = layers_stored;
  j["layer_start"] = layer_start;
  j["layer_end"] = layer_end;
  j["token_policy"] = token_policy;
  j["count"] = count;
  j["dtype"] = dtype;
  j["order"] = order;
  return j.dump();
}

CacheHeader CacheHeader::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("HDPC header: ") + e.what());
  }
  CacheHeader h;
  h.model = field<std::string>(j, "model", "HDPC");
  h.dim = field<std::size_t>(j, "dim", "HDPC");
  h.layers_stored = field<std::size_t>(j, "layers_stored", "HDPC");
  h.layer_start = field<int>(j, "layer_start", "HDPC");
  h.layer_end = field<int>(j, "layer_end", "HDPC");
  h.token_policy = field<std::string>(j, "token_policy", "HDPC");
  h.count = field<std::size_t>(j, "count", "HDPC");
  h.dtype = field<std::string>(j, "dtype", "HDPC");
  h.order = field<std::string>(j, "order", "HDPC");
  if (h.dtype != "f32") throw FormatError("HDPC: unsupported dtype '" + h.dtype + "'");
  if (h.token_policy != "last") throw FormatError("HDPC: unsupported token policy '" + h.token_policy + "'");
  if (h.dim == 0 || h.layers_stored == 0) throw FormatError("HDPC: zero dim or layer count");
  return h;
}

void write_cache(const std::string& path, CacheHeader header, std::span<const Eigen::MatrixXf> matrices) {
  header.count = matrices.size();
  for (std::size_t i = 0; i < matrices.size(); ++i) {
    if (static_cast<std::size_t>(matrices[i].rows()) != header.layers_stored ||
        static_cast<std::size_t>(matrices[i].cols()) != header.dim) {
      throw InvalidArgument("HDPC: record " + std::to_string(i) + " shape does not match header");
    }
  }
  auto out = io::open_output(path);
  io::write_frame_header(out, "HDPC", kCacheVersion, header.to_json());
  for (const auto& m : matrices) {
    const RowMajorF rm = m;
    io::write_f32(out, std::span<const float>(rm.data(), static_cast<std::size_t>(rm.size())));
  }
  if (!out) throw FormatError("HDPC: write failed for '" + path + "'");
}

CacheReader::CacheReader(const std::string& path) : path_(path), in_(io::open_input(path)) {
  const auto frame = io::read_frame_header(in_, "HDPC");
  if (frame.version != kCacheVersion) throw FormatError("HDPC: unsupported version " + std::to_string(frame.version));
  header_ = CacheHeader::from_json(frame.json);
  payload_offset_ = static_cast<std::streamoff>(in_.tellg());
  in_.seekg(0, std::ios::end);
  const auto total = static_cast<std::streamoff>(in_.tellg());
  const auto expected = static_cast<std::streamoff>(header_.count * header_.layers_stored * header_.dim * sizeof(float));
  if (total - payload_offset_ != expected) {
    throw FormatError("HDPC: payload size " + std::to_string(total - payload_offset_) + " bytes, header implies " +
                      std::to_string(expected));
  }
}

Eigen::MatrixXf CacheReader::read(std::size_t index) {
  if (index >= header_.count) throw InvalidArgument("HDPC: record index out of range");
  const std::size_t n = header_.layers_stored * header_.dim;
  in_.clear();
  in_.seekg(payload_offset_ + static_cast<std::streamoff>(index * n * sizeof(float)));
  RowMajorF rm(static_cast<Eigen::Index>(header_.layers_stored), static_cast<Eigen::Index>(header_.dim));
  io::read_f32(in_, std::span<float>(rm.data(), n), "HDPC");
  return rm;
}

std::vector<Eigen::MatrixXf> read_cache_matrices(const std::string& path, CacheHeader* header) {
  CacheReader reader(path);
  std::vector<Eigen::MatrixXf> out;
  out.reserve(reader.size());
  for (std::size_t i = 0; i < reader.size(); ++i) out.push_back(reader.read(i));
  if (header) *header = reader.header();
  return out;
}

std::string meta_to_jsonl(const std::string& id, const ingestion::NextTokenMeta& meta) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["text"] = meta.text;
  j["target"] = meta.target;
  j["domain"] = meta.domain;
  j["template"] = meta.tmpl;
  auto topk = nlohmann::ordered_json::array();
  for (const auto& t : meta.topk) {
    nlohmann::ordered_json e;
    e["token"] = t.token;
    e["prob"] = t.prob;
    topk.push_back(std::move(e));
  }
  j["topk"] = std::move(topk);
  j["target_rank"] = meta.target_rank;
  j["target_prob"] = meta.target_prob;
  if (!meta.phase.empty()) j["phase"] = meta.phase;
  if (!meta.prediction.empty()) j["prediction"] = meta.prediction;
  return j.dump();
}

void write_sidecar(const std::string& path, std::span<const ingestion::EmbeddingRecord> records) {
  auto out = io::open_output(path);
  for (const auto& r : records) out << meta_to_jsonl(r.input_id, r.meta) << '\n';
}

std::vector<std::pair<std::string, ingestion::NextTokenMeta>> read_sidecar(const std::string& path) {
  auto in = io::open_input(path);
  std::vector<std::pair<std::string, ingestion::NextTokenMeta>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ingestion::NextTokenMeta m;
      m.text = j.value("text", std::string());
      m.target = j.value("target", std::string());
      m.domain = j.value("domain", std::string());
      m.tmpl = j.value("template", std::string());
      for (const auto& t : j.value("topk", nlohmann::json::array())) {
        m.topk.push_back({t.at("token").get<std::string>(), t.at("prob").get<double>()});
      }
      m.target_rank = j.value("target_rank", -1LL);
      m.target_prob = j.value("target_prob", 0.0);
      m.phase = j.value("phase", std::string());
      m.prediction = j.value("prediction", std::string());
      out.emplace_back(j.at("id").get<std::string>(), std::move(m));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<ingestion::EmbeddingRecord> read_records(const std::string& cache_path, const std::string& sidecar_path,
                                                     CacheHeader* header) {
  CacheHeader h;
  auto matrices = read_cache_matrices(cache_path, &h);
  auto meta = read_sidecar(sidecar_path);
  if (meta.size() != matrices.size()) {
    throw FormatError("sidecar '" + sidecar_path + "' has " + std::to_string(meta.size()) + " lines, cache has " +
                      std::to_string(matrices.size()) + " records");
  }
  std::vector<ingestion::EmbeddingRecord> out;
  out.reserve(matrices.size());
  for (std::size_t i = 0; i < matrices.size(); ++i) {
    out.push_back({std::move(meta[i].first), std::move(matrices[i]), h.model, std::move(meta[i].second)});
  }
  if (header) *header = h;
  return out;
}

void write_records(const std::string& cache_path, const std::string& sidecar_path, const CacheHeader& header,
                   std::span<const ingestion::EmbeddingRecord> records) {
  std::vector<Eigen::MatrixXf> matrices;
  matrices.reserve(records.size());
  for (const auto& r : records) matrices.push_back(r.matrix);
  write_cache(cache_path, header, matrices);
  write_sidecar(sidecar_path, records);
}

void write_unembedding(const std::string& path, const std::string& vocab_path, const Unembedding& u) {
  if (static_cast<std::size_t>(u.matrix.rows()) != u.vocab.size()) {
    throw InvalidArgument("HDPU: vocab size does not match matrix rows");
  }
  nlohmann::ordered_json h;
  h["dim"] = u.matrix.cols();
  h["vocab_size"] = u.vocab.size();
  auto out = io::open_output(path);
  io::write_frame_header(out, "HDPU", kUnembeddingVersion, h.dump());
  const RowMajorF rm = u.matrix;
  io::write_f32(out, std::span<const float>(rm.data(), static_cast<std::size_t>(rm.size())));
  auto vout = io::open_output(vocab_path);
  for (std::size_t i = 0; i < u.vocab.size(); ++i) {
    nlohmann::ordered_json line;
    line["id"] = i;
    line["token"] = u.vocab[i];
    vout << line.dump() << '\n';
  }
}

Unembedding read_unembedding(const std::string& path, const std::string& vocab_path) {
  auto in = io::open_input(path);
  const auto frame = io::read_frame_header(in, "HDPU");
  if (frame.version != kUnembeddingVersion) {
    throw FormatError("HDPU: unsupported version " + std::to_string(frame.version));
  }
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(frame.json);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("HDPU header: ") + e.what());
  }
  const auto dim = field<std::size_t>(h, "dim", "HDPU");
  const auto vocab_size = field<std::size_t>(h, "vocab_size", "HDPU");
  RowMajorF rm(static_cast<Eigen::Index>(vocab_size), static_cast<Eigen::Index>(dim));
  io::read_f32(in, std::span<float>(rm.data(), static_cast<std::size_t>(rm.size())), "HDPU");
  if (!io::at_eof(in)) throw FormatError("HDPU: trailing bytes after payload");

  Unembedding u;
  u.matrix = rm;
  auto vin = io::open_input(vocab_path);
  std::string line;
  while (std::getline(vin, line)) {
    if (line.empty()) continue;
    try {
      u.vocab.push_back(read_line_json_string(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("HDPU vocab '" + vocab_path + "': " + e.what());
    }
  }
  if (u.vocab.size() != vocab_size) {
    throw FormatError("HDPU: vocab sidecar has " + std::to_string(u.vocab.size()) + " entries, header says " +
                      std::to_string(vocab_size));
  }
  return u;
}

}  // namespace hdprobe::formats
