#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hdprobe/config.hpp"

using namespace hdprobe;
using namespace hdprobe::config;
using nlohmann::json;

namespace {

std::string error_of(const std::string& toml) {
  try {
    PipelineConfig::from_json(parse_toml(toml));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string parse_error(const std::string& toml) {
  try {
    parse_toml(toml);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("TOML subset") {
  const auto j = parse_toml(R"(# leading comment
top = 1

[a]
s = "x\ty\"z"   # trailing comment
lit = 'C:\path'
f = 1.5e2
neg = -3
big = 1_000
yes = true
arr = [1, 2,
  3,  # comment inside
]
mixed = ["a", 'b']
inline = { k = 1, "q" = "w", d.e = 2 }
dotted.key = "v"

[b.c]
x = false
)");
  CHECK(j["top"] == 1);
  CHECK(j["a"]["s"] == "x\ty\"z");
  CHECK(j["a"]["lit"] == "C:\\path");
  CHECK(j["a"]["f"] == 150.0);
  CHECK(j["a"]["neg"] == -3);
  CHECK(j["a"]["big"] == 1000);
  CHECK(j["a"]["yes"] == true);
  CHECK(j["a"]["arr"] == json::array({1, 2, 3}));
  CHECK(j["a"]["mixed"] == json::array({"a", "b"}));
  CHECK(j["a"]["inline"]["q"] == "w");
  CHECK(j["a"]["inline"]["d"]["e"] == 2);
  CHECK(j["a"]["dotted"]["key"] == "v");
  CHECK(j["b"]["c"]["x"] == false);
  CHECK(parse_toml("").empty());
}

TEST_CASE("TOML errors carry the line number") {
  CHECK(parse_error("a = 1\nb = \n").find("line 2") != std::string::npos);
  CHECK(parse_error("a = 1\na = 2\n").find("duplicate key") != std::string::npos);
  CHECK(parse_error("[t]\n[t]\n").find("line 2") != std::string::npos);
  CHECK(parse_error("a = \"open\n").find("unterminated") != std::string::npos);
  CHECK(parse_error("a = 1 2\n").find("unexpected text") != std::string::npos);
  CHECK(parse_error("a = [1 2]\n") != "");
  CHECK(parse_error("a = 12abc\n").find("bad number") != std::string::npos);
  CHECK(parse_error("a = \"\\q\"\n").find("escape") != std::string::npos);
}

TEST_CASE("defaults") {
  const auto c = PipelineConfig::from_json(json::object());
  CHECK(c.vsa.dim == 4096);
  CHECK(c.vsa.tie_break == "seeded");
  CHECK(c.corpus.train == 0.70);
  CHECK(c.probe.probe.threshold == 0.1);
  CHECK(c.probe.probe.k == 5);
  CHECK(c.train.encoder.output_dim == 4096);
  CHECK(c.train.train.accumulation.at(110) == 2);
  CHECK(std::holds_alternative<vsa::Seeded>(c.vsa.make_tie_break()));
}

TEST_CASE("sections and fields") {
  const auto c = PipelineConfig::from_json(parse_toml(R"(
[vsa]
dim = 512
seed = 18446744073709551615
tie_break = "plus_one"
[corpus]
templates = "both"
math_caps = { math_double = 5, math_root = 0 }
train = 0.8
val = 0.1
test = 0.1
[train]
hidden_dim = 64
accumulation = { "5" = 2, "9" = 4 }
[probe]
greedy = false
greedy_cap = 100
[dla]
final_norm = true
)"));
  CHECK(c.vsa.dim == 512);
  CHECK(c.vsa.seed == 18446744073709551615ull);
  CHECK(std::holds_alternative<vsa::PlusOne>(c.vsa.make_tie_break()));
  CHECK(c.corpus.templates == "both");
  CHECK(c.corpus.math_caps.at("math_double") == 5);
  CHECK(c.corpus.math_caps.at("math_root") == 0);
  CHECK(c.train.encoder.hidden_dim == 64);
  CHECK(c.train.encoder.output_dim == 512);
  CHECK(c.train.train.accumulation == std::map<int, int>{{5, 2}, {9, 4}});
  CHECK_FALSE(c.probe.probe.greedy);
  CHECK(c.probe.probe.greedy_cap == 100);
  CHECK(c.dla.final_norm);

  // to_json round trips through from_json.
  const json back = json::parse(c.to_json().dump());
  const auto again = PipelineConfig::from_json(back);
  CHECK(again.to_json() == c.to_json());
}

TEST_CASE("validation names the field") {
  CHECK(error_of("[vsa]\ndimm = 3\n") == "vsa.dimm: unknown key");
  CHECK(error_of("[bogus]\n") == "bogus: unknown section");
  CHECK(error_of("[vsa]\ndim = 1\n").find("vsa.dim") == 0);
  CHECK(error_of("[vsa]\ndim = \"big\"\n") == "vsa.dim: expected an integer");
  CHECK(error_of("[vsa]\ntie_break = \"coin\"\n").find("vsa.tie_break") == 0);
  CHECK(error_of("[vsa]\nseed = -1\n").find("vsa.seed") == 0);
  CHECK(error_of("[corpus]\ntrain = 0.5\n").find("sum to 1") != std::string::npos);
  CHECK(error_of("[corpus]\nmath_caps = { math_cube = 1 }\n").find("unknown math domain") != std::string::npos);
  CHECK(error_of("[corpus]\nmath_caps = { math_double = -1 }\n").find("corpus.math_caps") == 0);
  CHECK(error_of("[train]\ndropout = 1.0\n").find("train.dropout") == 0);
  CHECK(error_of("[train]\nbase_lr = 0\n").find("train.base_lr") == 0);
  CHECK(error_of("[train]\naccumulation = { x = 2 }\n").find("train.accumulation") == 0);
  CHECK(error_of("[train]\naccumulation = { \"3\" = 0 }\n").find("train.accumulation") == 0);
  CHECK(error_of("[probe]\nthreshold = 2.0\n").find("probe.threshold") == 0);
  CHECK(error_of("[probe]\nk = 0\n").find("probe.k") == 0);
  CHECK(error_of("[dla]\nfinal_norm = 1\n") == "dla.final_norm: expected true or false");
  CHECK(error_of("vsa = 3\n") == "vsa: expected a table");
}

TEST_CASE("config files") {
  const auto dir = std::filesystem::temp_directory_path() / "hdprobe_config_test";
  std::filesystem::create_directories(dir);
  const auto toml = (dir / "c.toml").string(), js = (dir / "c.json").string();
  std::ofstream(toml) << "[vsa]\ndim = 256\n";
  std::ofstream(js) << R"({"vsa": {"dim": 128, "seed": "42"}})";
  CHECK(load_config(toml).vsa.dim == 256);
  const auto c = load_config(js);
  CHECK(c.vsa.dim == 128);
  CHECK(c.vsa.seed == 42);
  CHECK_THROWS_AS(load_config((dir / "absent.toml").string()), ConfigError);
  std::ofstream(js) << "{not json";
  CHECK_THROWS_AS(load_config(js), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sha256") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK_THROWS_AS(sha256_file("/nonexistent/hdprobe"), MissingInput);
}
