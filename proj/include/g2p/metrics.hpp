#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "g2p/corpus.hpp"
#include "g2p/decoding.hpp"

namespace g2p {

// ---------------------------------------------------------------------------
// Levenshtein edit distance with alignment backtrace
// ---------------------------------------------------------------------------

enum class EditOp { Match, Sub, Del, Ins };

struct EditStep {
  EditOp op;
  int ref_idx;  // -1 for insertions
  int hyp_idx;  // -1 for deletions
};

struct EditResult {
  int edits = 0;
  std::vector<EditStep> steps;  // in ref/hyp order
};

// Unit-cost edit distance. Tie preference during backtrace: diagonal
// (match/substitute), then deletion, then insertion — fixed so alignments
// are deterministic.
template <class Tok>
EditResult edit_distance(const std::vector<Tok>& ref, const std::vector<Tok>& hyp) {
  const size_t n = ref.size(), m = hyp.size();
  const size_t stride = m + 1;
  std::vector<int> d((n + 1) * stride);
  for (size_t j = 0; j <= m; ++j) d[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    d[i * stride] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int sub = d[(i - 1) * stride + (j - 1)] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const int del = d[(i - 1) * stride + j] + 1;
      const int ins = d[i * stride + (j - 1)] + 1;
      d[i * stride + j] = std::min(sub, std::min(del, ins));
    }
  }
  EditResult out;
  out.edits = d[n * stride + m];
  size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const int cur = d[i * stride + j];
    if (i > 0 && j > 0 &&
        cur == d[(i - 1) * stride + (j - 1)] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      out.steps.push_back({ref[i - 1] == hyp[j - 1] ? EditOp::Match : EditOp::Sub,
                           static_cast<int>(i - 1), static_cast<int>(j - 1)});
      --i, --j;
    } else if (i > 0 && cur == d[(i - 1) * stride + j] + 1) {
      out.steps.push_back({EditOp::Del, static_cast<int>(i - 1), -1});
      --i;
    } else {
      out.steps.push_back({EditOp::Ins, -1, static_cast<int>(j - 1)});
      --j;
    }
  }
  std::reverse(out.steps.begin(), out.steps.end());
  return out;
}

// ---------------------------------------------------------------------------
// Hypothesis tokenization (byte output may not be valid UTF-8)
// ---------------------------------------------------------------------------

inline constexpr const char* kBadSpanToken = "<bad>";

namespace detail {

// Length of the well-formed UTF-8 sequence starting at s[i]; 0 if malformed.
inline size_t utf8_sequence_length(const std::string& s, size_t i) {
  const auto b = [&](size_t k) { return static_cast<unsigned char>(s[k]); };
  const unsigned char b0 = b(i);
  if (b0 < 0x80) return 1;
  const auto cont = [&](size_t k) { return k < s.size() && (b(k) & 0xC0) == 0x80; };
  if (b0 >= 0xC2 && b0 <= 0xDF) return cont(i + 1) ? 2 : 0;
  if (b0 == 0xE0) return (i + 1 < s.size() && b(i + 1) >= 0xA0 && b(i + 1) <= 0xBF && cont(i + 2)) ? 3 : 0;
  if ((b0 >= 0xE1 && b0 <= 0xEC) || b0 == 0xEE || b0 == 0xEF)
    return (cont(i + 1) && cont(i + 2)) ? 3 : 0;
  if (b0 == 0xED) return (i + 1 < s.size() && b(i + 1) >= 0x80 && b(i + 1) <= 0x9F && cont(i + 2)) ? 3 : 0;
  if (b0 == 0xF0) return (i + 1 < s.size() && b(i + 1) >= 0x90 && b(i + 1) <= 0xBF && cont(i + 2) && cont(i + 3)) ? 4 : 0;
  if (b0 >= 0xF1 && b0 <= 0xF3) return (cont(i + 1) && cont(i + 2) && cont(i + 3)) ? 4 : 0;
  if (b0 == 0xF4) return (i + 1 < s.size() && b(i + 1) >= 0x80 && b(i + 1) <= 0x8F && cont(i + 2) && cont(i + 3)) ? 4 : 0;
  return 0;
}

}  // namespace detail

struct HypothesisTokens {
  std::vector<std::string> tokens;
  bool had_invalid_utf8 = false;
};

// Whitespace-split a decoded hypothesis. Each maximal malformed-UTF-8 run
// becomes a single unmatched token so undecodable output still scores as a
// bounded number of errors.
inline HypothesisTokens split_hypothesis(const std::string& raw) {
  HypothesisTokens out;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) out.tokens.push_back(std::move(cur));
    cur.clear();
  };
  size_t i = 0;
  while (i < raw.size()) {
    const unsigned char c = static_cast<unsigned char>(raw[i]);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      flush();
      ++i;
      continue;
    }
    const size_t len = detail::utf8_sequence_length(raw, i);
    if (len == 0) {
      flush();
      out.tokens.push_back(kBadSpanToken);
      out.had_invalid_utf8 = true;
      while (i < raw.size() && detail::utf8_sequence_length(raw, i) == 0) ++i;
    } else {
      cur.append(raw, i, len);
      i += len;
    }
  }
  flush();
  return out;
}

// Split a token stream into words at boundary markers. Empty segments from
// stray markers count as (empty) words so spurious structure is penalized.
inline std::vector<std::vector<std::string>> group_words(const std::vector<std::string>& toks) {
  std::vector<std::vector<std::string>> words(1);
  for (const auto& t : toks) {
    if (t == kBoundaryMarker)
      words.emplace_back();
    else
      words.back().push_back(t);
  }
  if (words.size() == 1 && words[0].empty()) words.clear();  // empty stream: no words
  return words;
}

inline std::vector<std::string> strip_markers(const std::vector<std::string>& toks) {
  std::vector<std::string> out;
  out.reserve(toks.size());
  for (const auto& t : toks)
    if (t != kBoundaryMarker) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Corpus-level scoring
// ---------------------------------------------------------------------------

struct EvalReport {
  double per = 0.0;                 // micro: total phoneme edits / total ref phonemes
  double wer = 0.0;                 // micro: total word edits / total ref words
  double heteronym_accuracy = 1.0;  // correct slots / total slots (1.0 when no slots)
  long long phoneme_edits = 0;
  long long ref_phonemes = 0;
  long long word_edits = 0;
  long long ref_words = 0;
  long long heteronym_correct = 0;
  long long heteronym_total = 0;
  long long n_examples = 0;
  long long n_invalid_utf8 = 0;  // hypotheses containing undecodable spans
};

inline EvalReport score_corpus(const std::vector<Example>& refs,
                               const std::vector<std::string>& hyps) {
  if (refs.size() != hyps.size())
    throw ContractError("score_corpus: " + std::to_string(refs.size()) + " references vs " +
                        std::to_string(hyps.size()) + " hypotheses");
  EvalReport r;
  r.n_examples = static_cast<long long>(refs.size());
  for (size_t e = 0; e < refs.size(); ++e) {
    const auto hyp = split_hypothesis(hyps[e]);
    if (hyp.had_invalid_utf8) ++r.n_invalid_utf8;

    const auto ref_ph = strip_markers(refs[e].phonemes);
    const auto hyp_ph = strip_markers(hyp.tokens);
    r.phoneme_edits += edit_distance(ref_ph, hyp_ph).edits;
    r.ref_phonemes += static_cast<long long>(ref_ph.size());

    const auto ref_words = group_words(refs[e].phonemes);
    const auto hyp_words = group_words(hyp.tokens);
    const auto word_align = edit_distance(ref_words, hyp_words);
    r.word_edits += word_align.edits;
    r.ref_words += static_cast<long long>(ref_words.size());

    for (const auto& [word_idx, id] : refs[e].heteronym_slots) {
      (void)id;  // the reference word already carries the expected reading
      ++r.heteronym_total;
      for (const auto& s : word_align.steps)
        if (s.op == EditOp::Match && s.ref_idx == word_idx) {
          ++r.heteronym_correct;
          break;
        }
    }
  }
  if (r.ref_phonemes > 0) r.per = static_cast<double>(r.phoneme_edits) / static_cast<double>(r.ref_phonemes);
  if (r.ref_words > 0) r.wer = static_cast<double>(r.word_edits) / static_cast<double>(r.ref_words);
  if (r.heteronym_total > 0)
    r.heteronym_accuracy = static_cast<double>(r.heteronym_correct) / static_cast<double>(r.heteronym_total);
  return r;
}

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  return nlohmann::json{{"per", r.per},
                        {"wer", r.wer},
                        {"heteronym_accuracy", r.heteronym_accuracy},
                        {"phoneme_edits", r.phoneme_edits},
                        {"ref_phonemes", r.ref_phonemes},
                        {"word_edits", r.word_edits},
                        {"ref_words", r.ref_words},
                        {"heteronym_correct", r.heteronym_correct},
                        {"heteronym_total", r.heteronym_total},
                        {"n_examples", r.n_examples},
                        {"n_invalid_utf8", r.n_invalid_utf8}};
}

// Greedy (beam_size <= 1) or beam hypotheses for a whole split, decoded to
// phoneme strings.
template <class T>
std::vector<std::string> decode_corpus(Model<T>& m, const std::vector<Example>& examples,
                                       int beam_size = 1, int max_len = -1) {
  std::vector<std::string> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto src = encode_source_bytes(ex.text);
    const auto toks = beam_size <= 1 ? greedy_decode(m, src, max_len)
                                     : beam_decode(m, src, beam_size, max_len);
    out.push_back(decode_target(toks, m.cfg.target_mode));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Accumulated-error curve
// ---------------------------------------------------------------------------

enum class StepLossMode { TeacherForced, Autoregressive };

// Per-step negative log-likelihood of the gold target. Step i (1-based,
// returned at index i-1) scores gold token y_{i-1}. Teacher-forced prefixes
// are gold; autoregressive prefixes are the model's own greedy tokens, so AR
// steps end when generation does: min(t+1, l_max, g+1) steps for g generated
// content tokens. Step 1 is prefix-free and identical in both modes.
template <class T>
std::vector<double> per_step_losses(Model<T>& m, const EncodedExample& ex, StepLossMode mode,
                                    int l_max) {
  if (ex.target.empty()) throw ContractError("per_step_losses on empty target");
  if (l_max < 1) throw ContractError("l_max must be at least 1");
  Graph<T> g(false);
  auto enc = encode(g, m, ex.src);

  int n_steps = std::min<int>(l_max, static_cast<int>(ex.target.size()));
  std::vector<int> dec_in = {kTgtBos};
  if (mode == StepLossMode::TeacherForced) {
    dec_in.insert(dec_in.end(), ex.target.begin(), ex.target.begin() + (n_steps - 1));
  } else {
    const auto hyp = greedy_decode(m, enc, n_steps - 1);
    n_steps = std::min<int>(n_steps, static_cast<int>(hyp.size()) + 1);
    dec_in.insert(dec_in.end(), hyp.begin(), hyp.begin() + (n_steps - 1));
  }

  auto logits = decoder_forward(g, m, enc, dec_in);
  std::vector<int> gold(ex.target.begin(), ex.target.begin() + n_steps);
  auto losses = cross_entropy_rows(g, logits, gold);
  return std::vector<double>(losses.data().begin(), losses.data().end());
}

struct AccErrValues {
  std::vector<double> ar_cum, tf_cum;  // cumulative sums of per-step means
  std::vector<double> accerr;
  std::vector<char> degenerate;  // denominator guard triggered at this l
};

inline constexpr double kAccErrDenomFloor = 1e-12;

// accerr[l-1] = l * (sum_{i<=l} ar[i]) / (sum_{i<=l} tf[i]); a vanishing
// teacher-forced denominator yields the neutral value l, flagged.
inline AccErrValues accerr_values(const std::vector<double>& ar_means,
                                  const std::vector<double>& tf_means) {
  if (ar_means.size() != tf_means.size())
    throw ContractError("accerr_values: mismatched mode lengths");
  AccErrValues out;
  double ar = 0.0, tf = 0.0;
  for (size_t i = 0; i < ar_means.size(); ++i) {
    ar += ar_means[i];
    tf += tf_means[i];
    out.ar_cum.push_back(ar);
    out.tf_cum.push_back(tf);
    const double l = static_cast<double>(i + 1);
    if (tf < kAccErrDenomFloor) {
      out.accerr.push_back(l);
      out.degenerate.push_back(1);
    } else {
      out.accerr.push_back(l * ar / tf);
      out.degenerate.push_back(0);
    }
  }
  return out;
}

struct ExposureBiasReport {
  std::vector<int> steps;  // l = 1..L, contiguous
  std::vector<double> l_ar, l_tf;  // per-step mean losses
  std::vector<long long> n_at_step;
  std::vector<double> ar_cum, tf_cum;
  std::vector<double> accerr;
  std::vector<char> degenerate;
  std::string token_mode;  // decoder-token positions: "bytes" or "phoneme-symbols"
};

// Curve over an evaluation set. A step contributes for an example only when
// both modes define it (AR can end before gold does), so every step has one
// contributor count; steps no example reaches are absent.
template <class T>
ExposureBiasReport accerr_curve(Model<T>& m, const std::vector<EncodedExample>& eval_set,
                                int l_max) {
  if (eval_set.empty()) throw ContractError("accerr_curve on empty evaluation set");
  std::vector<double> ar_sum, tf_sum;
  std::vector<long long> n;
  for (const auto& ex : eval_set) {
    const auto tf = per_step_losses(m, ex, StepLossMode::TeacherForced, l_max);
    const auto ar = per_step_losses(m, ex, StepLossMode::Autoregressive, l_max);
    const size_t steps = ar.size();  // AR never outruns TF
    if (steps > ar_sum.size()) {
      ar_sum.resize(steps, 0.0);
      tf_sum.resize(steps, 0.0);
      n.resize(steps, 0);
    }
    for (size_t i = 0; i < steps; ++i) {
      ar_sum[i] += ar[i];
      tf_sum[i] += tf[i];
      ++n[i];
    }
  }
  ExposureBiasReport r;
  r.token_mode = m.cfg.target_mode;
  for (size_t i = 0; i < n.size(); ++i) {
    r.steps.push_back(static_cast<int>(i + 1));
    r.l_ar.push_back(ar_sum[i] / static_cast<double>(n[i]));
    r.l_tf.push_back(tf_sum[i] / static_cast<double>(n[i]));
    r.n_at_step.push_back(n[i]);
  }
  auto v = accerr_values(r.l_ar, r.l_tf);
  r.ar_cum = std::move(v.ar_cum);
  r.tf_cum = std::move(v.tf_cum);
  r.accerr = std::move(v.accerr);
  r.degenerate = std::move(v.degenerate);
  return r;
}

inline std::string accerr_csv(const ExposureBiasReport& r) {
  std::ostringstream os;
  os << "l,L_AR_cum,L_TF_cum,AccErr,n_examples_at_l\n";
  os << std::setprecision(17);
  for (size_t i = 0; i < r.steps.size(); ++i)
    os << r.steps[i] << ',' << r.ar_cum[i] << ',' << r.tf_cum[i] << ',' << r.accerr[i] << ','
       << r.n_at_step[i] << '\n';
  return os.str();
}

inline void write_accerr_csv(const std::string& path, const ExposureBiasReport& r) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << accerr_csv(r);
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace g2p
