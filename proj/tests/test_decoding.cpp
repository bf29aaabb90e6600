#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "g2p/decoding.hpp"
#include "g2p/rng.hpp"

using namespace g2p;

namespace {

// ---------------------------------------------------------------------------
// Toy next-token models (hand-set or hashed distributions, no transformer)
// ---------------------------------------------------------------------------

uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Deterministic pseudo-random distribution per prefix; PAD/BOS carry no mass.
struct HashToy {
  uint64_t seed;
  int vocab;
  std::vector<double> operator()(const std::vector<int>& prefix) const {
    uint64_t h = mix64(seed ^ 0xA5A5A5A5ull);
    for (int t : prefix) h = mix64(h ^ static_cast<uint64_t>(t + 1));
    std::vector<double> p(static_cast<size_t>(vocab), 0.0);
    double z = 0.0;
    for (int i = kTgtEos; i < vocab; ++i) {
      p[static_cast<size_t>(i)] = 1.0 + static_cast<double>(mix64(h + static_cast<uint64_t>(i)) % 997);
      z += p[static_cast<size_t>(i)];
    }
    for (auto& x : p) x /= z;
    return p;
  }
};

struct TableToy {
  std::map<std::vector<int>, std::vector<double>> table;
  std::vector<double> fallback;
  std::vector<double> operator()(const std::vector<int>& prefix) const {
    auto it = table.find(prefix);
    return it == table.end() ? fallback : it->second;
  }
};

// Score a finished hypothesis on a toy by stepping it (the beam arithmetic).
template <class Next>
double stepped_score(const Next& next, const std::vector<int>& tokens, bool count_eos) {
  std::vector<int> prefix = {kTgtBos};
  double lp = 0.0;
  for (int t : tokens) {
    lp += std::log(next(prefix)[static_cast<size_t>(t)]);
    prefix.push_back(t);
  }
  if (count_eos) lp += std::log(next(prefix)[static_cast<size_t>(kTgtEos)]);
  return lp;
}

// Exhaustive enumeration of every hypothesis reachable within max_len:
// sequences shorter than max_len finish via EOS (EOS factor included),
// sequences at max_len finish as-is. Best under the beam ordering.
template <class Next>
void enumerate_rec(const Next& next, std::vector<int>& toks, double lp, int max_len, int vocab,
                   BeamHypothesis& best, bool& have) {
  const auto consider = [&](BeamHypothesis h) {
    if (!have || beam_better(h, best)) {
      best = std::move(h);
      have = true;
    }
  };
  if (static_cast<int>(toks.size()) == max_len) {
    consider({toks, lp, true});
    return;
  }
  std::vector<int> prefix = {kTgtBos};
  prefix.insert(prefix.end(), toks.begin(), toks.end());
  const auto p = next(prefix);
  consider({toks, lp + std::log(p[static_cast<size_t>(kTgtEos)]), true});
  for (int tok = kTgtEos + 1; tok < vocab; ++tok) {
    toks.push_back(tok);
    enumerate_rec(next, toks, lp + std::log(p[static_cast<size_t>(tok)]), max_len, vocab, best, have);
    toks.pop_back();
  }
}

template <class Next>
BeamHypothesis enumerate_best(const Next& next, int max_len, int vocab) {
  BeamHypothesis best;
  bool have = false;
  std::vector<int> toks;
  enumerate_rec(next, toks, 0.0, max_len, vocab, best, have);
  return best;
}

void check_clean(const std::vector<int>& out) {
  for (int t : out) {
    REQUIRE(t != kTgtPad);
    REQUIRE(t != kTgtBos);
    REQUIRE(t != kTgtEos);
  }
}

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.d_ffn = 32;
  cfg.dropout_rate = 0.1;
  cfg.max_src_len = 32;
  cfg.max_tgt_len = 64;
  cfg.tgt_vocab_size = 8;
  return cfg;
}

}  // namespace

TEST_CASE("greedy follows hand-set toy logits step by step") {
  // vocab 7: candidates are EOS(2) and content 3..6.
  TableToy toy;
  toy.fallback = {0, 0, 0.9, 0.025, 0.025, 0.025, 0.025};  // EOS-heavy
  toy.table[{1}] = {0, 0, 0.05, 0.10, 0.60, 0.05, 0.20};          // -> 4
  toy.table[{1, 4}] = {0, 0, 0.10, 0.15, 0.05, 0.20, 0.50};       // -> 6
  toy.table[{1, 4, 6}] = {0, 0, 0.20, 0.45, 0.15, 0.10, 0.10};    // -> 3
  toy.table[{1, 4, 6, 3}] = {0, 0, 0.70, 0.10, 0.10, 0.05, 0.05}; // -> EOS
  // hand simulation: BOS -> 4 -> 6 -> 3 -> EOS, output [4, 6, 3]
  REQUIRE(greedy_search(toy, 10, 100) == std::vector<int>{4, 6, 3});
  // truncation: max_len 2 cuts the same trajectory to [4, 6]
  REQUIRE(greedy_search(toy, 2, 100) == std::vector<int>{4, 6});
}

TEST_CASE("greedy breaks probability ties toward the lowest token id") {
  TableToy toy;
  toy.fallback = {0, 0, 0.9, 0.025, 0.025, 0.025, 0.025};
  toy.table[{1}] = {0, 0, 0.2, 0.3, 0.3, 0.1, 0.1};  // 3 and 4 tie
  REQUIRE(greedy_search(toy, 10, 100) == std::vector<int>{3});
}

TEST_CASE("EOS as first argmax yields an empty output in both searches") {
  TableToy toy;
  toy.fallback = {0, 0, 0.6, 0.1, 0.1, 0.1, 0.1};
  REQUIRE(greedy_search(toy, 10, 100).empty());
  const auto best = beam_search(toy, 3, 10, 100);
  REQUIRE(best.tokens.empty());
  REQUIRE(best.finished);
}

TEST_CASE("max_len and prefix cap bound the output length") {
  TableToy toy;  // never wants to stop
  toy.fallback = {0, 0, 1e-9, 0.5, 0.5 - 1e-9, 0, 0};
  auto g = greedy_search(toy, 5, 100);
  REQUIRE(g.size() == 5);
  check_clean(g);
  REQUIRE(beam_search(toy, 2, 5, 100).tokens.size() <= 5);
  // prefix cap of 5 admits at most 4 generated tokens regardless of max_len
  REQUIRE(greedy_search(toy, 50, 5).size() == 4);
  REQUIRE(beam_search(toy, 2, 50, 5).tokens.size() <= 4);
  REQUIRE(greedy_search(toy, 0, 100).empty());
}

TEST_CASE("beam equals exhaustive enumeration on toy fixtures") {
  // vocab 6: candidates EOS + three content tokens, max_len 3 -> 40
  // hypotheses in total; beam wide enough to retain every candidate.
  const int vocab = 6, max_len = 3;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    HashToy toy{seed, vocab};
    const auto oracle = enumerate_best(toy, max_len, vocab);
    const auto got = beam_search(toy, 128, max_len, 100);
    INFO("seed " << seed);
    REQUIRE(got.tokens == oracle.tokens);
    REQUIRE(got.logp == oracle.logp);  // identical summation order -> bitwise
    check_clean(got.tokens);
    // narrow beams never beat the enumeration optimum
    for (int b = 1; b <= 3; ++b)
      REQUIRE(beam_search(toy, b, max_len, 100).logp <= oracle.logp + 1e-15);
  }
}

TEST_CASE("enumeration fixture: widening the beam 1->3 never lowers the score") {
  // Beam search is not monotone in width in general; this fixture family is
  // part of the contract and is exercised seed by seed.
  const int vocab = 6, max_len = 3;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    HashToy toy{seed, vocab};
    const double s1 = beam_search(toy, 1, max_len, 100).logp;
    const double s2 = beam_search(toy, 2, max_len, 100).logp;
    const double s3 = beam_search(toy, 3, max_len, 100).logp;
    INFO("seed " << seed);
    REQUIRE(s2 >= s1 - 1e-15);
    REQUIRE(s3 >= s2 - 1e-15);
  }
}

TEST_CASE("beam_size 1 equals greedy on toys and on the transformer") {
  const int vocab = 6;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    HashToy toy{seed, vocab};
    REQUIRE(beam_search(toy, 1, 6, 100).tokens == greedy_search(toy, 6, 100));
  }

  auto m = init_model<double>(tiny_cfg(), 11);
  Rng rng = Rng::derive(99, {7});
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 3 + static_cast<int>(rng.uniform_int(10));
    std::vector<int> src(static_cast<size_t>(n));
    for (auto& b : src) b = static_cast<int>(rng.uniform_int(256));
    const auto g1 = greedy_decode(m, src);
    const auto b1 = beam_decode(m, src, 1);
    REQUIRE(g1 == b1);
    check_clean(g1);
    REQUIRE(static_cast<int>(g1.size()) <= default_max_len(src.size()));
    // decoding twice is deterministic
    REQUIRE(greedy_decode(m, src) == g1);
    REQUIRE(beam_decode(m, src, 3) == beam_decode(m, src, 3));
  }
}

TEST_CASE("beam score is at least the greedy score on the transformer") {
  auto m = init_model<double>(tiny_cfg(), 5);
  Rng rng = Rng::derive(123, {8});
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 3 + static_cast<int>(rng.uniform_int(8));
    std::vector<int> src(static_cast<size_t>(n));
    for (auto& b : src) b = static_cast<int>(rng.uniform_int(256));
    const int max_len = default_max_len(src.size());

    Graph<double> g(false);
    auto enc = encode(g, m, src);
    const auto greedy = greedy_decode(m, enc, max_len);
    // step the same per-prefix distributions the searches consume
    const auto next = [&](const std::vector<int>& prefix) {
      auto p = next_token_distribution(m, enc, prefix);
      return std::vector<double>(p.begin(), p.end());
    };
    const bool ended_by_eos = static_cast<int>(greedy.size()) < max_len;
    const double greedy_lp = stepped_score(next, greedy, ended_by_eos);
    for (int b = 1; b <= 3; ++b) {
      const auto hyp = beam_decode_scored(m, enc, b, max_len);
      REQUIRE(hyp.logp >= greedy_lp - 1e-12);
      check_clean(hyp.tokens);
    }
    // one-pass scorer agrees with the stepped score (causality cross-check)
    const double one_pass = sequence_logprob(m, enc, greedy, ended_by_eos);
    REQUIRE(std::abs(one_pass - greedy_lp) < 1e-6);
  }
}

TEST_CASE("beam_size below 1 is rejected") {
  TableToy toy;
  toy.fallback = {0, 0, 0.6, 0.4, 0, 0, 0};
  REQUIRE_THROWS_AS(beam_search(toy, 0, 5, 100), ContractError);
}
