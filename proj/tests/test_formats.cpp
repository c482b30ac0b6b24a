#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "hdprobe/formats.hpp"
#include "hdprobe/random.hpp"

using namespace hdprobe;
using namespace hdprobe::formats;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("hdprobe_formats_" + name)).string();
}

Eigen::MatrixXf random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Eigen::MatrixXf m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal() * 3.0);
  return m;
}

bool bit_equal(const Eigen::MatrixXf& a, const Eigen::MatrixXf& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

std::vector<ingestion::EmbeddingRecord> sample_records(std::size_t n, Eigen::Index layers, Eigen::Index dim) {
  std::vector<ingestion::EmbeddingRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ingestion::EmbeddingRecord r;
    r.input_id = "rec/" + std::to_string(i);
    r.matrix = random_matrix(layers, dim, i + 1);
    r.model_name = "tiny-lm";
    r.meta.text = "a : b = c :";
    r.meta.target = "d";
    r.meta.domain = "dom";
    r.meta.tmpl = "colon";
    r.meta.topk = {{"Ġd", 0.5}, {"Ġx", 0.25}};
    r.meta.target_rank = 0;
    r.meta.target_prob = 0.5;
    out.push_back(std::move(r));
  }
  // Awkward but valid floats survive bit for bit.
  out[0].matrix(0, 0) = -0.0f;
  out[0].matrix(0, 1) = std::numeric_limits<float>::denorm_min();
  out[0].matrix(1, 0) = std::numeric_limits<float>::max();
  return out;
}

void overwrite(const std::string& path, std::streamoff at, const std::string& bytes) {
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(at);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("HDPC layout and round trip") {
  const auto recs = sample_records(4, 3, 5);
  CacheHeader h;
  h.model = "tiny-lm";
  h.dim = 5;
  h.layers_stored = 3;
  h.layer_start = 2;
  h.layer_end = 4;
  const auto cache = temp_path("a.hdpc"), side = temp_path("a.jsonl");
  write_records(cache, side, h, recs);

  CacheHeader back_h;
  const auto back = read_records(cache, side, &back_h);
  CHECK(back_h.count == 4);
  CHECK(back_h.layer_start == 2);
  CHECK(back_h.model == "tiny-lm");
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].input_id == recs[i].input_id);
    CHECK(bit_equal(back[i].matrix, recs[i].matrix));
    CHECK(back[i].meta.topk.size() == 2);
    CHECK(back[i].meta.topk[0].token == "Ġd");
    CHECK(back[i].meta.target_rank == 0);
    CHECK(back[i].model_name == "tiny-lm");
  }

  // Raw bytes: magic, u32 version, u32 header length, header, then
  // row-major float32 with layer rows contiguous.
  std::ifstream in(cache, std::ios::binary);
  char magic[4];
  std::uint32_t version = 0, hlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&hlen), 4);
  CHECK(std::string(magic, 4) == "HDPC");
  CHECK(version == 1);
  std::string json(hlen, '\0');
  in.read(json.data(), hlen);
  CHECK(CacheHeader::from_json(json).dim == 5);
  float first[6];
  in.read(reinterpret_cast<char*>(first), sizeof first);
  CHECK(std::memcmp(&first[1], &recs[0].matrix(0, 1), 4) == 0);
  CHECK(first[5] == recs[0].matrix(1, 0));

  // Random access agrees with the bulk reader.
  CacheReader reader(cache);
  CHECK(bit_equal(reader.read(2), recs[2].matrix));
  CHECK_THROWS_AS(reader.read(4), InvalidArgument);

  std::filesystem::remove(cache);
  std::filesystem::remove(side);
}

TEST_CASE("HDPC rejects corrupted files") {
  const auto recs = sample_records(2, 2, 3);
  CacheHeader h;
  h.model = "m";
  h.dim = 3;
  h.layers_stored = 2;
  const auto cache = temp_path("b.hdpc"), side = temp_path("b.jsonl");
  write_records(cache, side, h, recs);

  SUBCASE("bad magic") {
    overwrite(cache, 0, "HDPX");
    CHECK_THROWS_AS(CacheReader{cache}, FormatError);
  }
  SUBCASE("bad version") {
    overwrite(cache, 4, std::string("\x07\0\0\0", 4));
    CHECK_THROWS_AS(CacheReader{cache}, FormatError);
  }
  SUBCASE("truncated payload") {
    std::filesystem::resize_file(cache, std::filesystem::file_size(cache) - 4);
    CHECK_THROWS_AS(CacheReader{cache}, FormatError);
  }
  SUBCASE("sidecar count mismatch") {
    std::ofstream(side, std::ios::app) << formats::meta_to_jsonl("extra", {}) << '\n';
    CHECK_THROWS_AS(read_records(cache, side), FormatError);
  }
  SUBCASE("shape mismatch on write") {
    auto bad = recs;
    bad[1].matrix = random_matrix(3, 3, 9);
    CHECK_THROWS_AS(write_records(cache, side, h, bad), InvalidArgument);
  }
  SUBCASE("missing file") { CHECK_THROWS(CacheReader{cache + ".nope"}); }
  std::filesystem::remove(cache);
  std::filesystem::remove(side);
}

TEST_CASE("HDPU round trip") {
  Unembedding u;
  u.vocab = {"Ġparis", "▁rome", "\"quoted\"", "tab\there", "naïve"};
  u.matrix = random_matrix(5, 7, 3);
  const auto path = temp_path("u.hdpu"), vocab = temp_path("u_vocab.jsonl");
  write_unembedding(path, vocab, u);
  const auto back = read_unembedding(path, vocab);
  CHECK(back.vocab == u.vocab);
  CHECK(bit_equal(back.matrix, u.matrix));

  {
    std::ofstream(vocab, std::ios::app) << "{\"id\": 5, \"token\": \"x\"}\n";
  }
  CHECK_THROWS_AS(read_unembedding(path, vocab), FormatError);
  write_unembedding(path, vocab, u);
  overwrite(path, 0, "HDPC");
  CHECK_THROWS_AS(read_unembedding(path, vocab), FormatError);
  u.vocab.pop_back();
  CHECK_THROWS_AS(write_unembedding(path, vocab, u), InvalidArgument);
  std::filesystem::remove(path);
  std::filesystem::remove(vocab);
}
