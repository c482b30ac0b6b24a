#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "hdprobe/corpus.hpp"
#include "hdprobe/log.hpp"

using namespace hdprobe;
using namespace hdprobe::corpus;

namespace {

const std::string kFixtures = HDPROBE_FIXTURES;

std::vector<DomainPairs> mini_kb() {
  auto domains = load_google_analogy(kFixtures + "/google_mini.txt");
  auto bats = load_bats(kFixtures + "/bats");
  domains.insert(domains.end(), bats.begin(), bats.end());
  MathOptions math;
  for (auto& [name, cap] : math.caps) cap = name == "math_double" ? 5 : 0;
  auto m = gen_math_pairs(math);
  domains.insert(domains.end(), m.begin(), m.end());
  return domains;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("hdprobe_corpus_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("fixture knowledge base loads") {
  const auto g = load_google_analogy(kFixtures + "/google_mini.txt");
  REQUIRE(g.size() == 1);
  CHECK(g[0].domain.name == "currency");
  CHECK(g[0].domain.category == Category::FactualKnowledge);
  REQUIRE(g[0].pairs.size() == 3);
  CHECK(g[0].pairs[2] == AnalogyPair{"europe", "euro", "currency"});

  const auto b = load_bats(kFixtures + "/bats");
  REQUIRE(b.size() == 1);
  CHECK(b[0].domain.name == "male_female");
  CHECK(b[0].domain.source == Source::Bats);
  REQUIRE(b[0].pairs.size() == 3);
  CHECK(b[0].pairs[2].value == "girl");  // first slash alternate only
}

TEST_CASE("fixture corpus counts") {
  const auto domains = mini_kb();
  REQUIRE(domains.size() == 3);
  const auto examples = generate_examples(domains);
  // 3 domains of 3, 3 and 5 pairs: 3*2 + 3*2 + 5*4 ordered pairs.
  CHECK(examples.size() == 32);
  const auto aug = augment(examples);
  CHECK(aug.size() == 64);
  CHECK(vocabulary(aug).size() == 22);
  for (std::size_t i = 0; i < examples.size(); ++i) CHECK(aug[i].id == examples[i].id);
  std::set<std::string> ids;
  for (const auto& e : aug) ids.insert(e.id);
  CHECK(ids.size() == aug.size());
}

TEST_CASE("math domains") {
  const auto all = gen_math_pairs();
  std::map<std::string, std::size_t> sizes;
  for (const auto& d : all) sizes[d.domain.name] = d.pairs.size();
  CHECK(sizes == MathOptions::default_caps());
  for (const auto& d : all) {
    CHECK(d.domain.category == Category::Mathematics);
    for (const auto& p : d.pairs) {
      const long long k = std::stoll(p.key), v = std::stoll(p.value);
      if (d.domain.name == "math_double") CHECK(v == 2 * k);
      if (d.domain.name == "math_squares") CHECK(v == k * k);
      if (d.domain.name == "math_cubes") CHECK(v == k * k * k);
      if (d.domain.name == "math_division5") CHECK(v * 5 == k);
      if (d.domain.name == "math_root") CHECK(v * v == k);
    }
  }
  // Every three-digit cube from 5^3 to 9^3.
  const auto cubes = std::find_if(all.begin(), all.end(), [](const auto& d) { return d.domain.name == "math_cubes"; });
  REQUIRE(cubes != all.end());
  CHECK(cubes->pairs.front().key == "5");
  CHECK(cubes->pairs.back().value == "729");
}

TEST_CASE("render and parse are inverse") {
  const char* words[] = {"paris", "france", "rome", "italy", "big", "bigger", "100", "200"};
  for (auto tmpl : {Template::Colon, Template::Verbose}) {
    for (int t = 0; t < 50; ++t) {
      const std::string a1 = words[t % 8], a2 = words[(t * 3 + 1) % 8], b1 = words[(t * 5 + 2) % 8],
                        b2 = words[(t * 7 + 3) % 8];
      const auto text = render(a1, a2, b1, b2, tmpl);
      const auto back = parse_rendered(text, tmpl);
      REQUIRE(back.has_value());
      CHECK((*back)[0] == a1);
      CHECK((*back)[1] == a2);
      CHECK((*back)[2] == b1);
      CHECK((*back)[3] == b2);
    }
  }
  CHECK(render("a", "b", "c", "d", Template::Colon) == "a : b = c : d");
  CHECK(render("a", "b", "c", "d", Template::Verbose) == "a is to b as c is to d");
  CHECK_FALSE(parse_rendered("a : b = c", Template::Colon).has_value());
  CHECK_FALSE(parse_rendered("a : b = c : d", Template::Verbose).has_value());
}

TEST_CASE("generated examples are well formed") {
  const auto examples = augment(generate_examples(mini_kb(), Template::Verbose));
  for (const auto& e : examples) {
    CHECK(e.target == e.b2());
    CHECK(e.pair_a != e.pair_b);
    CHECK(e.rendered == render(e.a1(), e.a2(), e.b1(), e.b2(), Template::Verbose));
    CHECK(e.prompt() + " " + e.target == e.rendered);
    CHECK(e.pair_a.domain == e.pair_b.domain);
  }
}

TEST_CASE("concept and domain normalization") {
  CHECK(normalize_concept("Paris") == "paris");
  CHECK(normalize_concept("the Black Sea") == "theBlackSea");
  CHECK(normalize_concept("  New   York ") == "newYork");
  CHECK(normalize_domain_name("gram3-comparative") == "comparative");
  CHECK(normalize_domain_name("male - female") == "male_female");
  CHECK(normalize_domain_name("capital-common-countries") == "capital_common_countries");
  CHECK(known_category("math_anything") == Category::Mathematics);
  CHECK_FALSE(known_category("no_such_domain").has_value());
}

TEST_CASE("malformed knowledge base input") {
  const auto path = temp_path("bad_google.txt");
  {
    std::ofstream(path) << ": capital\nathens greece baghdad\n";
  }
  CHECK_THROWS_WITH_AS(load_google_analogy(path), doctest::Contains(":2:"), FormatError);
  {
    std::ofstream(path) << "athens greece baghdad iraq\n";
  }
  CHECK_THROWS_AS(load_google_analogy(path), FormatError);
  CHECK_THROWS_AS(load_google_analogy(path + ".missing"), FormatError);
  CHECK_THROWS_AS(load_bats(path + ".missing"), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("single-pair domains are skipped with a warning") {
  std::vector<DomainPairs> d = {{Domain{"tiny"}, {AnalogyPair{"a", "b", "tiny"}}}};
  WarningCapture capture;
  CHECK(generate_examples(d).empty());
  CHECK_FALSE(capture.messages().empty());
}

TEST_CASE("corpus JSONL round trip is byte identical") {
  const auto examples = augment(generate_examples(mini_kb()));
  const auto p1 = temp_path("c1.jsonl"), p2 = temp_path("c2.jsonl");
  write_examples(p1, examples);
  const auto back = read_examples(p1);
  REQUIRE(back.size() == examples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == examples[i].id);
    CHECK(back[i].pair_a == examples[i].pair_a);
    CHECK(back[i].pair_b == examples[i].pair_b);
    CHECK(back[i].category == examples[i].category);
    CHECK(back[i].rendered == examples[i].rendered);
  }
  write_examples(p2, back);
  CHECK(slurp(p1) == slurp(p2));
  // A second run from scratch produces the same bytes.
  write_examples(p2, augment(generate_examples(mini_kb())));
  CHECK(slurp(p1) == slurp(p2));
  CHECK_THROWS_AS(example_from_jsonl("{\"id\": 3}"), FormatError);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("split partitions the indices") {
  for (std::size_t n : {0u, 1u, 2u, 7u, 20u, 101u}) {
    std::size_t ntr = 0, nva = 0;
    const auto idx = split_indices(n, {}, 5, &ntr, &nva);
    CHECK(idx.size() == n);
    auto sorted = idx;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n; ++i) CHECK(sorted[i] == i);
    CHECK(ntr + nva <= n);
    CHECK(idx == split_indices(n, {}, 5, &ntr, &nva));
  }
  std::size_t ntr = 0, nva = 0;
  split_indices(100, {}, 1, &ntr, &nva);
  CHECK(ntr == 70);
  CHECK(nva == 15);
}

TEST_CASE("linkage index") {
  ConceptLinkageIndex index(mini_kb());
  CHECK(index.links("japan").contains({"yen", "currency"}));
  CHECK(index.links("yen").contains({"japan", "currency"}));
  CHECK_FALSE(index.linked_outside("japan", "yen", "currency"));
  index.add({"japan", "yen", "other"});
  CHECK(index.linked_outside("japan", "yen", "currency"));
  CHECK(index.links("never-seen").empty());
}

TEST_CASE("analogy encoding") {
  const auto examples = generate_examples(mini_kb());
  const auto cb = vsa::Codebook::build(vocabulary(examples), 4096, 1);
  const vsa::TieBreak tie = vsa::Seeded{3};
  for (const auto& e : examples) {
    const auto a = vsa::bind(cb.vector(e.a1()), cb.vector(e.a2()));
    const auto b = vsa::bind(cb.vector(e.b1()), cb.vector(e.b2()));
    const auto enc = encode_analogy(e, cb, tie);
    CHECK(enc == vsa::polarize(vsa::bundle({a, b}), tie));
    // Unbinding the key leaves a target-like residual.
    const auto residual = vsa::unbind(enc, cb.vector(e.b1()));
    CHECK(vsa::cosine(residual, cb.vector(e.b2())) > 0.3);
  }
}

TEST_CASE("QA encoding") {
  QaExample q{"q1", "who wrote hamlet", "", {"who", "wrote", "hamlet"}, {"shakespeare"}, "Shakespeare"};
  const auto cb = vsa::Codebook::build({"who", "wrote", "hamlet", "shakespeare"}, 2048, 4);
  const vsa::TieBreak tie = vsa::PlusOne{};
  const auto with = encode_qa(q, cb, tie, true);
  const auto without = encode_qa(q, cb, tie, false);
  CHECK(vsa::cosine(with, cb.vector("shakespeare")) > 0.2);
  CHECK(std::abs(vsa::cosine(without, cb.vector("shakespeare"))) < 0.1);
  const auto inc = encode_qa_incremental(q, cb, tie);
  REQUIRE(inc.size() == 4);
  CHECK(inc[0] == cb.vector("who"));
  CHECK(inc.back() == with);
  q.question_features.push_back("macbeth");
  CHECK_THROWS_WITH(encode_qa(q, cb, tie, false), doctest::Contains("macbeth"));
}
