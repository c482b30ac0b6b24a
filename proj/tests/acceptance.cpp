// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <span>
#include <string>

#include "hdprobe/corpus.hpp"
#include "hdprobe/dla.hpp"
#include "hdprobe/encoder.hpp"
#include "hdprobe/formats.hpp"
#include "hdprobe/ingestion.hpp"
#include "hdprobe/probing.hpp"
#include "hdprobe/random.hpp"
#include "hdprobe/vsa.hpp"
#include "oracles.hpp"

using namespace hdprobe;

namespace {

const std::string kFixtures = HDPROBE_FIXTURES;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("hdprobe_acceptance_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------

Outcome algebra() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t bad = 0;
  for (std::size_t dim : {64u, 4096u}) {
    const vsa::Hypervector ones(dim);
    for (std::size_t i = 0; i < 1000; ++i) {
      const auto a = vsa::concept_vector(11, 2 * i, dim), b = vsa::concept_vector(11, 2 * i + 1, dim);
      if (!(vsa::unbind(vsa::bind(a, b), a) == b)) ++bad;
      if (!(vsa::bind(a, a) == ones)) ++bad;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {bad == 0 && secs < 5.0, fmt("%zu failures, %.3f s (limit 5 s)", bad, secs)};
}

Outcome codebook_orthogonality() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> names;
  for (int i = 0; i < 2996; ++i) names.push_back("concept_" + std::to_string(i));
  const auto cb = vsa::Codebook::build(names, 4096, 2024);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < cb.size(); ++i) {
    for (std::size_t j = i + 1; j < cb.size(); ++j) {
      const double c = vsa::cosine(cb.vector(i), cb.vector(j));
      sum += c;
      sq += c * c;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = std::abs(mean) < 0.005 && sd >= 0.012 && sd <= 0.020 && secs < 60.0;
  return {ok, fmt("%zu pairs, mean %.6f, std %.5f, %.1f s", n, mean, sd, secs)};
}

Outcome bundle_similarity() {
  double total = 0.0;
  for (std::size_t t = 0; t < 500; ++t) {
    const auto p = vsa::concept_vector(77, 3 * t, 4096), q = vsa::concept_vector(77, 3 * t + 1, 4096),
               r = vsa::concept_vector(77, 3 * t + 2, 4096);
    total += vsa::cosine(vsa::polarize(vsa::bundle({p, q, r}), vsa::PlusOne{}), p);
  }
  const double mean = total / 500.0;
  return {std::abs(mean - 0.5) <= 0.05, fmt("mean cosine %.4f (expected 0.5 +- 0.05)", mean)};
}

Outcome parameter_counts() {
  const std::pair<int, double> expected[] = {{1024, 55e6}, {2048, 59e6}, {4096, 67e6}, {5120, 71e6}};
  bool ok = true;
  std::string detail;
  for (const auto& [d, ref] : expected) {
    encoder::EncoderConfig c;
    c.input_dim = d;
    const double n = static_cast<double>(encoder::parameter_count(c));
    const double rel = std::abs(n - ref) / ref;
    ok = ok && rel < 0.01;
    detail += fmt("d=%d: %.0f (%.2f%%) ", d, n, 100.0 * rel);
  }
  return {ok, detail};
}

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  encoder::EncoderConfig c;
  c.input_dim = 8;
  c.hidden_dim = 16;
  c.output_dim = 8;
  const auto params = encoder::init<double>(c, 5);
  SplitMix64 rng(6);
  Eigen::MatrixXd x(8, 6), y(8, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.below(2) ? 1.0 : -1.0;
  const auto grads = encoder::backward<double>(params, x, y, encoder::ForwardMode::eval(), 0.1);
  const auto check = oracle::check_gradients(params, grads, x, y, 0.1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = check.checked == params.parameter_count() && check.max_rel_error < 1e-4 && secs < 10.0;
  return {ok, fmt("%zu parameters, max relative error %.3g (%s: analytic %.6g, numeric %.6g), %.2f s", check.checked,
                  check.max_rel_error, check.worst_tensor.c_str(), check.worst_analytic, check.worst_numeric, secs)};
}

// Synthetic knowledge base: 300 concepts in 10 domains of 15 key/value pairs.
// Encodings are the usual two-pair analogy bundles; embeddings are a fixed
// random linear image of the encoding plus gaussian noise.
Outcome synthetic_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr std::size_t kDim = 512, kDomains = 10, kPairs = 15, kExamples = 2000;
  constexpr Eigen::Index kEmbed = 128;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < 2 * kDomains * kPairs; ++i) names.push_back("c" + std::to_string(i));
  const auto cb = vsa::Codebook::build(names, kDim, 31);

  corpus::ConceptLinkageIndex linkage;
  auto key = [&](std::size_t dom, std::size_t p) { return names[2 * (dom * kPairs + p)]; };
  auto value = [&](std::size_t dom, std::size_t p) { return names[2 * (dom * kPairs + p) + 1]; };
  for (std::size_t d = 0; d < kDomains; ++d) {
    for (std::size_t p = 0; p < kPairs; ++p) linkage.add({key(d, p), value(d, p), "dom" + std::to_string(d)});
  }

  // Every ordered pair-of-pairs within a domain, shuffled, first 2000 kept.
  std::vector<std::array<std::size_t, 3>> combos;
  for (std::size_t d = 0; d < kDomains; ++d) {
    for (std::size_t i = 0; i < kPairs; ++i) {
      for (std::size_t j = 0; j < kPairs; ++j) {
        if (i != j) combos.push_back({d, i, j});
      }
    }
  }
  SplitMix64 rng(41);
  rng.shuffle(std::span<std::array<std::size_t, 3>>(combos));
  combos.resize(kExamples);

  Eigen::MatrixXf a(kEmbed, static_cast<Eigen::Index>(kDim));
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = static_cast<float>(rng.normal() / std::sqrt(double(kDim)));
  Eigen::MatrixXf targets(static_cast<Eigen::Index>(kDim), static_cast<Eigen::Index>(kExamples));
  std::vector<probing::ProbeCase> cases(kExamples);
  const vsa::TieBreak tie = vsa::Seeded{derive_seed(31, 0x7469)};
  for (std::size_t s = 0; s < kExamples; ++s) {
    const auto [d, i, j] = combos[s];
    auto& c = cases[s];
    c.a1 = key(d, i);
    c.a2 = value(d, i);
    c.b1 = key(d, j);
    c.b2 = value(d, j);
    c.domain = "dom" + std::to_string(d);
    c.id = c.a1 + ":" + c.a2 + "=" + c.b1 + ":" + c.b2;
    c.category = "synthetic";
    const auto y = vsa::polarize(vsa::bundle({vsa::bind(cb.vector(c.a1), cb.vector(c.a2)),
                                              vsa::bind(cb.vector(c.b1), cb.vector(c.b2))}),
                                 tie);
    targets.col(static_cast<Eigen::Index>(s)) = y.dense<float>();
  }
  Eigen::MatrixXf inputs = a * targets;
  for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] += static_cast<float>(0.05 * rng.normal());

  std::size_t n_train = 0, n_val = 0;
  const auto order = corpus::split_indices(kExamples, {0.70, 0.15, 0.15}, 3, &n_train, &n_val);
  auto take = [&](const Eigen::MatrixXf& m, std::size_t from, std::size_t to) {
    Eigen::MatrixXf out(m.rows(), static_cast<Eigen::Index>(to - from));
    for (std::size_t k = from; k < to; ++k) out.col(static_cast<Eigen::Index>(k - from)) = m.col(static_cast<Eigen::Index>(order[k]));
    return out;
  };
  const encoder::Dataset<float> tr{take(inputs, 0, n_train), take(targets, 0, n_train)};
  const encoder::Dataset<float> va{take(inputs, n_train, n_train + n_val), take(targets, n_train, n_train + n_val)};
  const encoder::Dataset<float> te{take(inputs, n_train + n_val, kExamples), take(targets, n_train + n_val, kExamples)};

  encoder::EncoderConfig ec;
  ec.input_dim = kEmbed;
  ec.hidden_dim = 512;
  ec.output_dim = static_cast<Eigen::Index>(kDim);
  encoder::TrainConfig tc;
  tc.max_epochs = 200;
  tc.base_lr = 1e-3;
  tc.patience = 30;
  tc.seed = 9;
  auto result = encoder::train(encoder::init<float>(ec, 8), tr, va, tc);
  const auto metrics = encoder::evaluate(result.params, te);

  std::vector<probing::ProbeCase> test_cases;
  const Eigen::MatrixXf pred = encoder::predict(result.params, te.inputs);
  for (std::size_t k = n_train + n_val; k < kExamples; ++k) {
    auto c = cases[order[k]];
    const auto col = static_cast<Eigen::Index>(k - n_train - n_val);
    c.prediction = pred.col(col);
    c.embedding = te.inputs.col(col);
    test_cases.push_back(std::move(c));
  }
  // Greedy unbinding is off: at D=512 a 0.1 threshold sits near 2.3 sigma
  // of chance similarity, so scanning 300 concepts finds spurious targets.
  probing::ProbeConfig pc;
  pc.greedy = false;
  const auto probed = probing::summarize(test_cases, probing::probe_all(test_cases, cb, linkage, pc));
  const probing::Predictor predictor = [&](const Eigen::VectorXf& e) {
    return encoder::forward<float>(result.params, encoder::Vector<float>(e), encoder::ForwardMode::eval());
  };
  const auto permuted = probing::permuted_baseline(test_cases, predictor, cb, linkage, pc, 17);
  const auto unrelated = probing::unrelated_baseline(test_cases, cb, linkage, pc, 19);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const bool ok = metrics.binary_accuracy >= 0.90 && probed.probing1 >= 0.80 && permuted.probing1 <= 0.15 &&
                  unrelated.probing1 <= 0.15 && secs < 600.0;
  return {ok, fmt("test binary accuracy %.4f, cosine %.4f, probing@1 %.4f, permuted %.4f, unrelated %.4f, "
                  "%zu epochs, %.0f s",
                  metrics.binary_accuracy, metrics.cosine_mean, probed.probing1, permuted.probing1,
                  unrelated.probing1, result.report.epochs.size(), secs)};
}

Outcome ingestion_shape() {
  SplitMix64 rng(12);
  ingestion::EmbeddingRecord r;
  r.input_id = "big";
  r.matrix.resize(33, 5120);
  for (Eigen::Index i = 0; i < r.matrix.size(); ++i) r.matrix.data()[i] = static_cast<float>(rng.normal());
  ingestion::IngestConfig cfg;
  cfg.kmeans.seed = 4;
  const auto e1 = ingestion::ingest(r, cfg), e2 = ingestion::ingest(r, cfg);
  const bool shape = e1.vector.size() == 5120 && e1.k_used == 5;
  const bool same = e1.vector == e2.vector;

  // Two planted blobs of 10 rows.
  Eigen::MatrixXd blobs(20, 16);
  for (Eigen::Index i = 0; i < blobs.size(); ++i) blobs.data()[i] = 0.1 * rng.normal();
  blobs.topRows(10).array() += 4.0;
  const auto km = ingestion::kmeans<double>(blobs, 2, {7});
  bool recovered = true;
  for (std::size_t i = 0; i < 20; ++i) recovered = recovered && ((km.assignments[i] == km.assignments[0]) == (i < 10));
  const auto sil = ingestion::silhouette<double>(blobs, 2, 8, 7);
  std::size_t best = 0;
  for (std::size_t i = 1; i < sil.size(); ++i) {
    if (sil[i].score > sil[best].score) best = i;
  }
  const bool peak = sil[best].k == 2;
  return {shape && same && recovered && peak,
          fmt("dim %ld, deterministic %s, blobs recovered %s, silhouette peak k=%zu (%.3f)",
              static_cast<long>(e1.vector.size()), same ? "yes" : "no", recovered ? "yes" : "no", sil[best].k,
              sil[best].score)};
}

Outcome gram_spectrum() {
  SplitMix64 rng(13);
  Eigen::VectorXd u(12), v(200);
  for (auto& x : u) x = rng.normal();
  for (auto& x : v) x = rng.normal();
  const Eigen::MatrixXd h = u * v.transpose();
  const auto g = ingestion::gram_spectrum<double>(h);
  const double top = g.eigenvalues(0);
  double rest = 0.0;
  for (Eigen::Index i = 1; i < g.eigenvalues.size(); ++i) rest = std::max(rest, std::abs(g.eigenvalues(i)));
  const double frob = h.squaredNorm();
  const double rel = std::abs(g.eigenvalues.sum() - frob) / frob;
  const bool ok = rest <= 1e-9 * top && rel <= 1e-6;
  return {ok, fmt("top %.4g, largest other %.3g, trace vs Frobenius relative error %.2g", top, rest, rel)};
}

Outcome metric_units() {
  ingestion::NextTokenMeta m;
  m.topk = {{"ack", 0.6}};
  const double nt = probing::next_token_precision(m, "acknowledge", 1);
  const double f1 = probing::qa_metrics("water and heat", "solar energy and water").f1;
  const auto fuzzy = dla::fuzzy_match("pes", {"peso", "mexico", "krone", "denmark"});
  const bool ok = nt == 0.5 && std::abs(f1 - 0.57) <= 0.005 && fuzzy == "peso";
  return {ok, fmt("ack/acknowledge %.2f, F1 %.4f, pes -> %s", nt, f1, fuzzy ? fuzzy->c_str() : "(none)")};
}

Outcome corpus_fixture() {
  auto build = [] {
    auto domains = corpus::load_google_analogy(kFixtures + "/google_mini.txt");
    auto bats = corpus::load_bats(kFixtures + "/bats");
    domains.insert(domains.end(), bats.begin(), bats.end());
    corpus::MathOptions math;
    for (auto& [name, cap] : math.caps) cap = name == "math_double" ? 5 : 0;
    auto m = corpus::gen_math_pairs(math);
    domains.insert(domains.end(), m.begin(), m.end());
    return domains;
  };
  const auto domains = build();
  const auto base = corpus::generate_examples(domains);
  const auto aug = corpus::augment(base);
  const auto vocab = corpus::vocabulary(aug);
  // 3*2 + 3*2 + 5*4 ordered pair-of-pairs; key/value swaps double them (the
  // pair-order swaps already exist); 6 + 6 + 10 concepts.
  const bool counts = base.size() == 32 && aug.size() == 64 && vocab.size() == 22;
  const auto p1 = temp_path("corpus1.jsonl"), p2 = temp_path("corpus2.jsonl");
  corpus::write_examples(p1, aug);
  corpus::write_examples(p2, corpus::augment(corpus::generate_examples(build())));
  const bool identical = slurp(p1) == slurp(p2) && !slurp(p1).empty();
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
  return {counts && identical, fmt("%zu examples, %zu augmented, %zu concepts, reruns identical %s", base.size(),
                                   aug.size(), vocab.size(), identical ? "yes" : "no")};
}

template <typename Fn>
bool rejects_magic(const std::string& path, const char* bad, Fn&& read) {
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.write(bad, 4);
  }
  try {
    read();
  } catch (const FormatError&) {
    return true;
  }
  return false;
}

Outcome format_round_trips() {
  SplitMix64 rng(14);
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  };
  auto bits_equal = [](const Eigen::MatrixXf& a, const Eigen::MatrixXf& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
  };

  // HDPC
  std::vector<ingestion::EmbeddingRecord> recs(3);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].input_id = "r" + std::to_string(i);
    recs[i].model_name = "m";
    recs[i].matrix.resize(4, 9);
    fill(recs[i].matrix);
  }
  recs[0].matrix(0, 0) = -0.0f;
  recs[0].matrix(0, 1) = std::numeric_limits<float>::denorm_min();
  formats::CacheHeader h;
  h.model = "m";
  h.dim = 9;
  h.layers_stored = 4;
  const auto cache = temp_path("c.hdpc"), side = temp_path("c.jsonl");
  formats::write_records(cache, side, h, recs);
  const auto back = formats::read_records(cache, side);
  bool hdpc = back.size() == recs.size();
  for (std::size_t i = 0; hdpc && i < recs.size(); ++i) hdpc = bits_equal(back[i].matrix, recs[i].matrix);
  const bool hdpc_magic = rejects_magic(cache, "XXXX", [&] { formats::read_records(cache, side); });

  // HDPW
  encoder::EncoderConfig ec;
  ec.input_dim = 7;
  ec.hidden_dim = 5;
  ec.output_dim = 6;
  const auto params = encoder::init<float>(ec, 3);
  const auto weights = temp_path("w.hdpw");
  encoder::save_params(params, weights);
  const bool hdpw = encoder::load_params<float>(weights, ec) == params;
  const bool hdpw_magic = rejects_magic(weights, "HDPC", [&] { encoder::load_params<float>(weights, ec); });

  // HDPU
  formats::Unembedding u;
  u.vocab = {"\xC4\xA0" "a", "b", "c"};
  u.matrix.resize(3, 4);
  fill(u.matrix);
  const auto un = temp_path("u.hdpu"), vocab = temp_path("u.jsonl");
  formats::write_unembedding(un, vocab, u);
  const auto ub = formats::read_unembedding(un, vocab);
  const bool hdpu = ub.vocab == u.vocab && bits_equal(ub.matrix, u.matrix);
  const bool hdpu_magic = rejects_magic(un, "HDPW", [&] { formats::read_unembedding(un, vocab); });

  for (const auto& p : {cache, side, weights, un, vocab}) std::filesystem::remove(p);
  const bool ok = hdpc && hdpw && hdpu && hdpc_magic && hdpw_magic && hdpu_magic;
  return {ok, fmt("HDPC %s/%s, HDPW %s/%s, HDPU %s/%s (round trip/magic)", hdpc ? "ok" : "no",
                  hdpc_magic ? "ok" : "no", hdpw ? "ok" : "no", hdpw_magic ? "ok" : "no", hdpu ? "ok" : "no",
                  hdpu_magic ? "ok" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"algebra exactness", algebra},
      {"codebook orthogonality", codebook_orthogonality},
      {"bundle similarity", bundle_similarity},
      {"encoder parameter counts", parameter_counts},
      {"gradient oracle", gradient_oracle},
      {"synthetic end-to-end", synthetic_end_to_end},
      {"ingestion shape and determinism", ingestion_shape},
      {"gram spectrum", gram_spectrum},
      {"metric units", metric_units},
      {"corpus fixture", corpus_fixture},
      {"format round trips", format_round_trips},
  };
  // Optional filter: run only criteria whose name contains argv[1].
  const std::string only = argc > 1 ? argv[1] : "";
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && name.find(only) == std::string::npos) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
