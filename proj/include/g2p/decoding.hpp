#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "g2p/model.hpp"

namespace g2p {

// Auto-regressive inference. The search cores take a next-token callable
// (prefix including BOS -> probability vector) so searches run identically
// over the transformer or any toy distribution. Candidates never include PAD
// or BOS; EOS ends a hypothesis and is excluded from returned outputs. Ties
// break toward the lowest token id (greedy) / lexicographically smallest
// sequence (beam).

inline int default_max_len(size_t src_len) { return static_cast<int>(2 * src_len + 16); }

namespace detail {

// argmax over candidate tokens [EOS, V); lowest id wins ties
inline int argmax_token(const std::vector<double>& probs) {
  int best = kTgtEos;
  double best_p = probs[static_cast<size_t>(kTgtEos)];
  for (int j = kTgtEos + 1; j < static_cast<int>(probs.size()); ++j)
    if (probs[static_cast<size_t>(j)] > best_p) {
      best = j;
      best_p = probs[static_cast<size_t>(j)];
    }
  return best;
}

}  // namespace detail

// next_probs: (const std::vector<int>& prefix_with_bos) -> std::vector<double>
template <class NextProbs>
std::vector<int> greedy_search(NextProbs&& next_probs, int max_len, int prefix_cap) {
  std::vector<int> prefix = {kTgtBos};
  std::vector<int> out;
  while (static_cast<int>(out.size()) < max_len && static_cast<int>(prefix.size()) < prefix_cap) {
    const int tok = detail::argmax_token(next_probs(prefix));
    if (tok == kTgtEos) break;
    out.push_back(tok);
    prefix.push_back(tok);
  }
  return out;
}

struct BeamHypothesis {
  std::vector<int> tokens;  // content tokens, EOS excluded
  double logp = 0.0;
  bool finished = false;
};

// Ordering used for both beam pruning and final selection: higher score
// first, then lexicographically smaller token sequence.
inline bool beam_better(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.logp != b.logp) return a.logp > b.logp;
  return a.tokens < b.tokens;
}

// Summed log-probabilities, no length normalization. Finished hypotheses are
// set aside; the search ends when no active hypothesis can still beat the
// best finished one (extensions only lower scores, so this is exact) or when
// every beam has finished by EOS or max_len.
template <class NextProbs>
BeamHypothesis beam_search(NextProbs&& next_probs, int beam_size, int max_len, int prefix_cap) {
  if (beam_size < 1) throw ContractError("beam_size must be at least 1");
  std::vector<BeamHypothesis> active = {BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;

  const int cap = std::min(max_len, prefix_cap - 1);
  while (!active.empty()) {
    // length guard: hypotheses at the cap finish as-is
    std::vector<BeamHypothesis> still_active;
    for (auto& h : active) {
      if (static_cast<int>(h.tokens.size()) >= cap) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        still_active.push_back(std::move(h));
      }
    }
    active = std::move(still_active);
    if (active.empty()) break;

    if (!finished.empty()) {
      const auto& best_fin = *std::min_element(
          finished.begin(), finished.end(),
          [](const auto& a, const auto& b) { return beam_better(a, b); });
      const auto& best_act = *std::min_element(
          active.begin(), active.end(),
          [](const auto& a, const auto& b) { return beam_better(a, b); });
      if (!beam_better(best_act, best_fin)) break;
    }

    std::vector<BeamHypothesis> candidates;
    candidates.reserve(active.size() * 8);
    for (const auto& h : active) {
      std::vector<int> prefix;
      prefix.reserve(h.tokens.size() + 1);
      prefix.push_back(kTgtBos);
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      const auto probs = next_probs(prefix);
      for (int tok = kTgtEos; tok < static_cast<int>(probs.size()); ++tok) {
        BeamHypothesis nh;
        nh.tokens = h.tokens;
        nh.logp = h.logp + std::log(probs[static_cast<size_t>(tok)]);  // log 0 = -inf: pruned
        if (tok == kTgtEos) {
          nh.finished = true;
        } else {
          nh.tokens.push_back(tok);
        }
        candidates.push_back(std::move(nh));
      }
    }
    std::sort(candidates.begin(), candidates.end(), beam_better);
    if (static_cast<int>(candidates.size()) > beam_size)
      candidates.resize(static_cast<size_t>(beam_size));
    active.clear();
    for (auto& c : candidates) {
      if (c.finished)
        finished.push_back(std::move(c));
      else
        active.push_back(std::move(c));
    }
  }
  if (finished.empty()) throw ContractError("beam search ended with no hypotheses");
  return *std::min_element(finished.begin(), finished.end(),
                           [](const auto& a, const auto& b) { return beam_better(a, b); });
}

// --------------------------- model-facing wrappers -------------------------

namespace detail {

template <class T>
auto model_next_probs(Model<T>& m, const EncoderOutput<T>& enc) {
  return [&m, &enc](const std::vector<int>& prefix) {
    const auto p = next_token_distribution(m, enc, prefix);
    return std::vector<double>(p.begin(), p.end());
  };
}

}  // namespace detail

template <class T>
std::vector<int> greedy_decode(Model<T>& m, const EncoderOutput<T>& enc, int max_len) {
  return greedy_search(detail::model_next_probs(m, enc), max_len, m.cfg.max_tgt_len);
}

template <class T>
std::vector<int> greedy_decode(Model<T>& m, std::span<const int> src_bytes, int max_len = -1) {
  if (max_len < 0) max_len = default_max_len(src_bytes.size());
  Graph<T> g(false);
  auto enc = encode(g, m, src_bytes);
  return greedy_decode(m, enc, max_len);
}

template <class T>
BeamHypothesis beam_decode_scored(Model<T>& m, const EncoderOutput<T>& enc, int beam_size,
                                  int max_len) {
  return beam_search(detail::model_next_probs(m, enc), beam_size, max_len, m.cfg.max_tgt_len);
}

template <class T>
std::vector<int> beam_decode(Model<T>& m, std::span<const int> src_bytes, int beam_size,
                             int max_len = -1) {
  if (max_len < 0) max_len = default_max_len(src_bytes.size());
  Graph<T> g(false);
  auto enc = encode(g, m, src_bytes);
  return beam_decode_scored(m, enc, beam_size, max_len).tokens;
}

// Summed log-probability the model assigns to a content-token sequence,
// optionally counting a final EOS (the beam score of that hypothesis).
template <class T>
double sequence_logprob(Model<T>& m, const EncoderOutput<T>& enc, const std::vector<int>& tokens,
                        bool count_eos = true) {
  std::vector<int> dec_in;
  dec_in.reserve(tokens.size() + 1);
  dec_in.push_back(kTgtBos);
  dec_in.insert(dec_in.end(), tokens.begin(), tokens.end());
  Graph<T> g(false);
  auto logits = decoder_forward(g, m, enc, dec_in);
  auto probs = softmax_rows(g, logits);
  const auto V = static_cast<size_t>(m.cfg.tgt_vocab_size);
  double lp = 0.0;
  for (size_t i = 0; i < tokens.size(); ++i)
    lp += std::log(static_cast<double>(probs.data()[i * V + static_cast<size_t>(tokens[i])]));
  if (count_eos)
    lp += std::log(static_cast<double>(probs.data()[tokens.size() * V + static_cast<size_t>(kTgtEos)]));
  return lp;
}

}  // namespace g2p
