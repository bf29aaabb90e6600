#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "g2p/error.hpp"
#include "g2p/model.hpp"
#include "g2p/rng.hpp"

namespace g2p {

// ---------------------------------------------------------------------------
// The synthetic grapheme-to-phoneme task. A generated lexicon maps letter
// strings to pronunciations built from spelling rules plus irregular
// mutations. Sentence-level effects make context matter:
//   * heteronyms: pronunciation B iff the previous word IN THE SAME SENTENCE
//     is a cue word; sentence-initial occurrences always read A;
//   * liaison: when a word ends in a trigger consonant (T/D) and the next
//     word starts with a vowel phoneme, the flap DX is prepended to the next
//     word — across every word boundary, sentence junctions included. This is
//     the one way concatenating sentences alters their pronunciations.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& phoneme_inventory() {
  static const std::vector<std::string> inv = {
      "AA", "AE", "AH", "AO", "AW", "AY", "B",  "CH", "D",  "DH", "DX", "EH", "ER", "EY",
      "F",  "G",  "HH", "IH", "IY", "JH", "K",  "L",  "M",  "N",  "NG", "OW", "OY", "P",
      "R",  "S",  "SH", "T",  "TH", "UH", "UW", "V",  "W",  "Y",  "Z",  "ZH"};
  return inv;
}

inline const std::string kBoundaryMarker = "|";
inline const std::string kLiaisonSymbol = "DX";

inline bool is_vowel_phoneme(const std::string& p) {
  static const std::set<std::string> vowels = {"AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER",
                                               "EY", "IH", "IY", "OW", "OY", "UH", "UW"};
  return vowels.count(p) > 0;
}

struct Heteronym {
  std::vector<std::string> pron_a;  // default reading
  std::vector<std::string> pron_b;  // reading after a cue word
  bool operator==(const Heteronym&) const = default;
};

struct Lexicon {
  // regular words; heteronym words live only in `heteronyms`
  std::map<std::string, std::vector<std::string>> entries;
  std::map<std::string, Heteronym> heteronyms;
  std::set<std::string> cue_words;
  std::vector<std::string> liaison_triggers = {"T", "D"};

  bool has_word(const std::string& w) const {
    return entries.count(w) > 0 || heteronyms.count(w) > 0;
  }
  std::vector<std::string> all_words() const {
    std::vector<std::string> out;
    out.reserve(entries.size() + heteronyms.size());
    for (const auto& [w, _] : entries) out.push_back(w);
    for (const auto& [w, _] : heteronyms) out.push_back(w);
    std::sort(out.begin(), out.end());
    return out;
  }
  bool operator==(const Lexicon&) const = default;
};

struct Example {
  std::string text;
  std::vector<std::string> phonemes;  // symbols and "|" markers
  int n_sentences = 0;
  // (global word index, pronunciation id: 0 = A, 1 = B)
  std::vector<std::pair<int, int>> heteronym_slots;
  bool operator==(const Example&) const = default;
};

struct CorpusSplit {
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test_short;  // 1-3 sentences
  std::vector<Example> test_long;   // 4-5 sentences
  bool operator==(const CorpusSplit&) const = default;
};

// ---------------------------------------------------------------------------
// Letter-to-phoneme spelling rules (used when BUILDING the lexicon; the
// transducer itself only ever looks pronunciations up).
// ---------------------------------------------------------------------------

namespace rules {

inline const std::map<char, std::string>& consonant_map() {
  static const std::map<char, std::string> m = {
      {'b', "B"}, {'d', "D"}, {'f', "F"}, {'g', "G"}, {'h', "HH"}, {'j', "JH"},
      {'k', "K"}, {'l', "L"}, {'m', "M"}, {'n', "N"}, {'p', "P"},  {'r', "R"},
      {'s', "S"}, {'t', "T"}, {'v', "V"}, {'w', "W"}, {'z', "Z"}};
  return m;
}

inline const std::map<char, std::string>& short_vowel_map() {
  static const std::map<char, std::string> m = {
      {'a', "AE"}, {'e', "EH"}, {'i', "IH"}, {'o', "AA"}, {'u', "AH"}};
  return m;
}

inline const std::map<char, std::string>& long_vowel_map() {
  static const std::map<char, std::string> m = {
      {'a', "EY"}, {'e', "IY"}, {'i', "AY"}, {'o', "OW"}, {'u', "UW"}};
  return m;
}

inline bool is_vowel_letter(char c) { return short_vowel_map().count(c) > 0; }
inline bool is_consonant_letter(char c) { return consonant_map().count(c) > 0; }

// Total function over strings of the word alphabet:
//   - digraphs sh/ch/th/ng map to single phonemes;
//   - "magic e": ...V C e# silences the final e and lengthens the vowel;
//   - otherwise letter-wise consonant/short-vowel mapping.
inline std::vector<std::string> spell_out(const std::string& word) {
  const int n = static_cast<int>(word.size());
  if (n == 0) throw ContractError("spell_out on empty word");
  const bool silent_e = n >= 3 && word[static_cast<size_t>(n - 1)] == 'e' &&
                        is_consonant_letter(word[static_cast<size_t>(n - 2)]) &&
                        is_vowel_letter(word[static_cast<size_t>(n - 3)]);
  static const std::map<std::string, std::string> digraphs = {
      {"sh", "SH"}, {"ch", "CH"}, {"th", "TH"}, {"ng", "NG"}};
  std::vector<std::string> out;
  int i = 0;
  while (i < n) {
    if (silent_e && i == n - 1) break;  // final silent e
    if (i + 1 < n) {
      auto dg = digraphs.find(word.substr(static_cast<size_t>(i), 2));
      // a digraph whose second letter is the silent final e never occurs
      // (digraph second letters are consonants/g), so no interaction
      if (dg != digraphs.end()) {
        out.push_back(dg->second);
        i += 2;
        continue;
      }
    }
    const char c = word[static_cast<size_t>(i)];
    if (is_consonant_letter(c)) {
      out.push_back(consonant_map().at(c));
    } else if (is_vowel_letter(c)) {
      const bool magic = silent_e && i == n - 3;
      out.push_back(magic ? long_vowel_map().at(c) : short_vowel_map().at(c));
    } else {
      throw ContractError(std::string("letter outside word alphabet: '") + c + "'");
    }
    ++i;
  }
  return out;
}

}  // namespace rules

// ---------------------------------------------------------------------------
// Lexicon generation
// ---------------------------------------------------------------------------

namespace detail {

inline std::string random_word(Rng& rng) {
  // letter-shape templates, 2-4 letters (C consonant, V vowel, e magic e)
  static const std::vector<std::string> shapes = {"VC",  "CV",   "CVC", "CVC", "VCV",
                                                  "CVCe", "CVCC", "CVCV"};
  static const std::string consonants = "bdfghjklmnprstvwz";
  static const std::string vowels = "aeiou";
  const std::string& shape = shapes[rng.uniform_int(shapes.size())];
  std::string w;
  for (char s : shape) {
    if (s == 'C')
      w += consonants[rng.uniform_int(consonants.size())];
    else if (s == 'V')
      w += vowels[rng.uniform_int(vowels.size())];
    else
      w += 'e';
  }
  return w;
}

inline std::string mutate_pron(std::vector<std::string>& pron, Rng& rng) {
  static const std::vector<std::string> vset = {"AA", "AE", "AH", "AO", "EH", "ER", "EY",
                                                "IH", "IY", "OW", "UH", "UW", "AY", "AW", "OY"};
  static const std::vector<std::string> cset = {"B", "CH", "D",  "DH", "F",  "G", "HH", "JH",
                                                "K", "L",  "M",  "N",  "NG", "P", "R",  "S",
                                                "SH", "T", "TH", "V",  "W",  "Y", "Z",  "ZH"};
  const size_t idx = rng.uniform_int(pron.size());
  const bool was_vowel = is_vowel_phoneme(pron[idx]);
  const auto& pool = was_vowel ? vset : cset;
  std::string repl;
  do {
    repl = pool[rng.uniform_int(pool.size())];
  } while (repl == pron[idx]);
  pron[idx] = repl;
  return repl;
}

}  // namespace detail

// Deterministic per seed. Words come from the shape grammar; ~15% of regular
// words get one irregular mutation; heteronyms get a distinct B reading and
// share one cue-word set.
inline Lexicon build_lexicon(uint64_t seed, int n_words = 200, int n_heteronyms = 10) {
  if (n_words <= 0) throw ContractError("n_words must be positive");
  if (n_heteronyms < 0 || n_heteronyms >= n_words)
    throw ContractError("n_heteronyms must lie in [0, n_words)");
  Rng rng = Rng::derive(seed, {stream::kCorpus, 1});

  std::vector<std::string> words;
  std::set<std::string> seen;
  int64_t attempts = 0;
  const int64_t max_attempts = 200ll * n_words + 1000;
  while (static_cast<int>(words.size()) < n_words) {
    if (++attempts > max_attempts)
      throw GenerationError("could not generate " + std::to_string(n_words) +
                            " distinct words within attempt budget (grammar capacity)");
    std::string w = detail::random_word(rng);
    if (seen.insert(w).second) words.push_back(w);
  }

  Lexicon lex;
  // base pronunciations, with irregular mutations on ~15% of words
  std::map<std::string, std::vector<std::string>> base;
  for (const auto& w : words) {
    auto pron = rules::spell_out(w);
    if (rng.uniform() < 0.15) detail::mutate_pron(pron, rng);
    base[w] = std::move(pron);
  }
  // heteronyms: the first n_heteronyms words in generation order
  for (int i = 0; i < n_heteronyms; ++i) {
    const std::string& w = words[static_cast<size_t>(i)];
    Heteronym h;
    h.pron_a = base[w];
    h.pron_b = base[w];
    while (h.pron_b == h.pron_a) detail::mutate_pron(h.pron_b, rng);
    lex.heteronyms[w] = std::move(h);
  }
  for (const auto& w : words)
    if (!lex.heteronyms.count(w)) lex.entries[w] = base[w];

  // cue words: regular words drawn after the heteronym block
  const int n_cues = std::min<int>(12, std::max(1, (n_words - n_heteronyms) / 8));
  std::vector<std::string> regular(words.begin() + n_heteronyms, words.end());
  rng.shuffle(regular);
  for (int i = 0; i < n_cues && i < static_cast<int>(regular.size()); ++i)
    lex.cue_words.insert(regular[static_cast<size_t>(i)]);
  return lex;
}

// ---------------------------------------------------------------------------
// The gold transducer
// ---------------------------------------------------------------------------

struct TokenizedText {
  std::vector<std::string> words;        // in order, periods stripped
  std::vector<char> sentence_initial;    // per word
  int n_sentences = 0;
};

inline TokenizedText tokenize_text(const std::string& text) {
  TokenizedText out;
  std::string cur;
  bool next_initial = true;
  auto flush = [&](bool sentence_end) {
    if (!cur.empty()) {
      out.words.push_back(cur);
      out.sentence_initial.push_back(next_initial ? 1 : 0);
      next_initial = false;
      cur.clear();
    }
    if (sentence_end && !out.words.empty()) next_initial = true;
  };
  for (char c : text) {
    if (c == ' ')
      flush(false);
    else if (c == '.')
      flush(true);
    else
      cur += c;
  }
  flush(false);
  for (char f : out.sentence_initial) out.n_sentences += f ? 1 : 0;
  return out;
}

struct Transcription {
  std::vector<std::string> phonemes;                // with "|" markers
  std::vector<std::pair<int, int>> heteronym_slots;  // (word index, 0=A/1=B)
};

inline Transcription transcribe_full(const Lexicon& lex, const std::string& text) {
  const TokenizedText tok = tokenize_text(text);
  if (tok.words.empty()) throw ContractError("transcribe on empty text");
  Transcription out;
  std::vector<std::vector<std::string>> prons;
  prons.reserve(tok.words.size());
  for (size_t i = 0; i < tok.words.size(); ++i) {
    const std::string& w = tok.words[i];
    auto het = lex.heteronyms.find(w);
    if (het != lex.heteronyms.end()) {
      const bool cued = !tok.sentence_initial[i] && i > 0 && lex.cue_words.count(tok.words[i - 1]) > 0;
      prons.push_back(cued ? het->second.pron_b : het->second.pron_a);
      out.heteronym_slots.push_back({static_cast<int>(i), cued ? 1 : 0});
      continue;
    }
    auto ent = lex.entries.find(w);
    if (ent == lex.entries.end()) throw VocabularyError("word not in lexicon: '" + w + "'");
    prons.push_back(ent->second);
  }
  // liaison across every adjacent pair, sentence junctions included
  for (size_t i = 0; i + 1 < prons.size(); ++i) {
    const std::string& last = prons[i].back();
    const std::string& first = prons[i + 1].front();
    const bool trigger = std::find(lex.liaison_triggers.begin(), lex.liaison_triggers.end(),
                                   last) != lex.liaison_triggers.end();
    if (trigger && is_vowel_phoneme(first))
      prons[i + 1].insert(prons[i + 1].begin(), kLiaisonSymbol);
  }
  for (size_t i = 0; i < prons.size(); ++i) {
    if (i) out.phonemes.push_back(kBoundaryMarker);
    out.phonemes.insert(out.phonemes.end(), prons[i].begin(), prons[i].end());
  }
  return out;
}

inline std::vector<std::string> gold_transcribe(const Lexicon& lex, const std::string& text) {
  return transcribe_full(lex, text).phonemes;
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

namespace detail {

// One sentence: 3-9 words. With probability ~0.45 a heteronym construction is
// planted: cue word + heteronym (reading B) or plain predecessor (reading A).
inline std::vector<std::string> random_sentence(const Lexicon& lex,
                                                const std::vector<std::string>& words,
                                                const std::vector<std::string>& het_words,
                                                const std::vector<std::string>& cue_vec,
                                                Rng& rng) {
  const int n = 3 + static_cast<int>(rng.uniform_int(7));  // 3..9
  std::vector<std::string> s;
  s.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) s.push_back(words[rng.uniform_int(words.size())]);
  if (!het_words.empty() && !cue_vec.empty() && rng.uniform() < 0.45) {
    const std::string& het = het_words[rng.uniform_int(het_words.size())];
    // position of the heteronym within the sentence (never index 0: a cue
    // needs room; index 0 stays available via the uniform fill above)
    const int pos = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n - 1)));
    s[static_cast<size_t>(pos)] = het;
    if (rng.uniform() < 0.5)
      s[static_cast<size_t>(pos - 1)] = cue_vec[rng.uniform_int(cue_vec.size())];
    else if (lex.cue_words.count(s[static_cast<size_t>(pos - 1)]))
      s[static_cast<size_t>(pos - 1)] = words[rng.uniform_int(words.size())];
  }
  return s;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

inline std::string join_sentences(const std::vector<const std::vector<std::string>*>& sents) {
  std::string out;
  for (size_t i = 0; i < sents.size(); ++i) {
    if (i) out += ". ";
    out += join_words(*sents[i]);
  }
  return out;
}

}  // namespace detail

struct GenParams {
  uint64_t lexicon_seed = 1;
  uint64_t corpus_seed = 1;
  int n_words = 200;
  int n_heteronyms = 10;
  int n_train = 8000;
  int n_valid = 500;
  int n_test = 500;  // per test split
  int max_src_bytes = 320;
  int max_tgt_bytes = 760;  // leaves room for EOS within max_tgt_len
  bool operator==(const GenParams&) const = default;
};

// Sentence pools are disjoint across splits (dedup by word-sequence
// identity); examples concatenate pool sentences. Deterministic per seed.
inline CorpusSplit generate_corpus(const Lexicon& lex, uint64_t seed, int n_train, int n_valid,
                                   int n_test, int max_src_bytes = 320, int max_tgt_bytes = 760) {
  if (n_train <= 0 || n_valid <= 0 || n_test <= 0)
    throw ContractError("corpus split sizes must be positive");
  Rng rng = Rng::derive(seed, {stream::kCorpus, 2});

  const std::vector<std::string> words = lex.all_words();
  std::vector<std::string> het_words;
  for (const auto& [w, _] : lex.heteronyms) het_words.push_back(w);
  std::vector<std::string> cue_vec(lex.cue_words.begin(), lex.cue_words.end());

  // four disjoint sentence pools
  std::set<std::string> seen;
  auto make_pool = [&](int size) {
    std::vector<std::vector<std::string>> pool;
    int64_t attempts = 0;
    while (static_cast<int>(pool.size()) < size) {
      if (++attempts > 400ll * size + 2000)
        throw GenerationError("sentence pool generation exhausted attempt budget");
      auto s = detail::random_sentence(lex, words, het_words, cue_vec, rng);
      if (seen.insert(detail::join_words(s)).second) pool.push_back(std::move(s));
    }
    return pool;
  };
  const auto train_pool = make_pool(std::max(40, n_train / 4));
  const auto valid_pool = make_pool(std::max(20, n_valid / 4));
  const auto short_pool = make_pool(std::max(20, n_test / 4));
  const auto long_pool = make_pool(std::max(20, n_test / 4));

  auto make_examples = [&](const std::vector<std::vector<std::string>>& pool, int count,
                           int min_sent, int max_sent, bool enforce_quota) {
    std::vector<Example> out;
    out.reserve(static_cast<size_t>(count));
    int with_het = 0;
    int64_t attempts = 0;
    while (static_cast<int>(out.size()) < count) {
      if (++attempts > 200ll * count + 2000)
        throw GenerationError("example generation exhausted attempt budget");
      const int k = min_sent + static_cast<int>(rng.uniform_int(
                                   static_cast<uint64_t>(max_sent - min_sent + 1)));
      std::vector<const std::vector<std::string>*> sents;
      for (int i = 0; i < k; ++i)
        sents.push_back(&pool[rng.uniform_int(pool.size())]);
      Example ex;
      ex.text = detail::join_sentences(sents);
      ex.n_sentences = k;
      auto tr = transcribe_full(lex, ex.text);
      ex.phonemes = std::move(tr.phonemes);
      ex.heteronym_slots = std::move(tr.heteronym_slots);
      // length guard: skip examples that would not encode
      size_t tgt_bytes = 0;
      for (size_t i = 0; i < ex.phonemes.size(); ++i)
        tgt_bytes += ex.phonemes[i].size() + (i ? 1 : 0);
      if (static_cast<int>(ex.text.size()) > max_src_bytes ||
          static_cast<int>(tgt_bytes) > max_tgt_bytes)
        continue;
      // heteronym quota on test splits: with few examples left, only accept
      // heteronym-bearing ones until one-in-ten is secure
      if (enforce_quota && !het_words.empty()) {
        const int need = (count + 9) / 10;
        const int remaining = count - static_cast<int>(out.size());
        if (with_het < need && ex.heteronym_slots.empty() && remaining <= (need - with_het))
          continue;
      }
      if (!ex.heteronym_slots.empty()) ++with_het;
      out.push_back(std::move(ex));
    }
    return out;
  };

  CorpusSplit c;
  c.train = make_examples(train_pool, n_train, 1, 3, false);
  c.validation = make_examples(valid_pool, n_valid, 1, 3, false);
  c.test_short = make_examples(short_pool, n_test, 1, 3, true);
  c.test_long = make_examples(long_pool, n_test, 4, 5, true);
  return c;
}

// ---------------------------------------------------------------------------
// Token codecs and example encoding
// ---------------------------------------------------------------------------

inline std::string join_phonemes(const std::vector<std::string>& phonemes) {
  std::string out;
  for (size_t i = 0; i < phonemes.size(); ++i) {
    if (i) out += ' ';
    out += phonemes[i];
  }
  return out;
}

inline std::vector<std::string> split_phoneme_string(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Symbol-mode vocabulary: inventory symbols then the boundary marker.
inline const std::vector<std::string>& symbol_vocab() {
  static const std::vector<std::string> v = [] {
    auto out = phoneme_inventory();
    out.push_back(kBoundaryMarker);
    return out;
  }();
  return v;
}

inline int symbol_vocab_size() { return kTgtContentBase + static_cast<int>(symbol_vocab().size()); }
inline int bytes_vocab_size() { return kTgtContentBase + 256; }

struct EncodedExample {
  std::vector<int> src;     // byte tokens 0..255
  std::vector<int> target;  // content tokens then EOS (y_0..y_t)
};

inline std::vector<int> encode_source_bytes(const std::string& text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<int>(c));
  return out;
}

// Target token sequence for a phoneme string; EOS appended. BOS is the
// consumer's job (decoder input head).
inline std::vector<int> encode_target(const std::vector<std::string>& phonemes,
                                      const std::string& target_mode) {
  std::vector<int> out;
  if (target_mode == "bytes") {
    const std::string joined = join_phonemes(phonemes);
    out.reserve(joined.size() + 1);
    for (unsigned char c : joined) out.push_back(kTgtContentBase + static_cast<int>(c));
  } else if (target_mode == "phoneme-symbols") {
    const auto& vocab = symbol_vocab();
    out.reserve(phonemes.size() + 1);
    for (const auto& p : phonemes) {
      auto it = std::find(vocab.begin(), vocab.end(), p);
      if (it == vocab.end()) throw VocabularyError("symbol not in target vocabulary: '" + p + "'");
      out.push_back(kTgtContentBase + static_cast<int>(it - vocab.begin()));
    }
  } else {
    throw ConfigError("unknown target_mode: " + target_mode);
  }
  out.push_back(kTgtEos);
  return out;
}

// Inverse of encode_target up to EOS; PAD/BOS tokens are skipped.
inline std::string decode_target(const std::vector<int>& tokens, const std::string& target_mode) {
  std::string bytes_out;
  std::vector<std::string> syms;
  for (int t : tokens) {
    if (t == kTgtEos) break;
    if (t == kTgtPad || t == kTgtBos) continue;
    const int content = t - kTgtContentBase;
    if (target_mode == "bytes") {
      if (content < 0 || content > 255)
        throw VocabularyError("byte-mode token out of range: " + std::to_string(t));
      bytes_out += static_cast<char>(static_cast<unsigned char>(content));
    } else {
      const auto& vocab = symbol_vocab();
      if (content < 0 || content >= static_cast<int>(vocab.size()))
        throw VocabularyError("symbol-mode token out of range: " + std::to_string(t));
      syms.push_back(vocab[static_cast<size_t>(content)]);
    }
  }
  if (target_mode == "bytes") return bytes_out;
  return join_phonemes(syms);
}

inline EncodedExample encode_io(const Example& ex, const ModelConfig& cfg) {
  EncodedExample enc;
  enc.src = encode_source_bytes(ex.text);
  enc.target = encode_target(ex.phonemes, cfg.target_mode);
  if (static_cast<int>(enc.src.size()) > cfg.max_src_len)
    throw LengthError("encoded source length " + std::to_string(enc.src.size()) +
                      " exceeds max_src_len " + std::to_string(cfg.max_src_len));
  // decoder input (BOS + target[:-1]) has the same length as target
  if (static_cast<int>(enc.target.size()) > cfg.max_tgt_len)
    throw LengthError("encoded target length " + std::to_string(enc.target.size()) +
                      " exceeds max_tgt_len " + std::to_string(cfg.max_tgt_len));
  for (int t : enc.target)
    if (t >= cfg.tgt_vocab_size)
      throw VocabularyError("target token " + std::to_string(t) + " exceeds tgt_vocab_size " +
                            std::to_string(cfg.tgt_vocab_size));
  return enc;
}

// ---------------------------------------------------------------------------
// Corpus I/O: JSONL per split + lexicon.json + manifest.json in a directory.
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const Example& ex) {
  j = nlohmann::json{{"text", ex.text},
                     {"phonemes", join_phonemes(ex.phonemes)},
                     {"n_sentences", ex.n_sentences},
                     {"heteronym_slots", ex.heteronym_slots}};
}

inline void to_json(nlohmann::json& j, const Lexicon& lex) {
  j = nlohmann::json::object();
  j["entries"] = lex.entries;
  auto hets = nlohmann::json::object();
  for (const auto& [w, h] : lex.heteronyms) hets[w] = {{"a", h.pron_a}, {"b", h.pron_b}};
  j["heteronyms"] = std::move(hets);
  j["cue_words"] = lex.cue_words;
  j["liaison_triggers"] = lex.liaison_triggers;
  j["liaison_symbol"] = kLiaisonSymbol;
  j["boundary_marker"] = kBoundaryMarker;
  j["inventory"] = phoneme_inventory();
}

inline void from_json(const nlohmann::json& j, Lexicon& lex) {
  lex = Lexicon{};
  j.at("entries").get_to(lex.entries);
  for (const auto& [w, h] : j.at("heteronyms").items()) {
    Heteronym het;
    h.at("a").get_to(het.pron_a);
    h.at("b").get_to(het.pron_b);
    lex.heteronyms[w] = std::move(het);
  }
  j.at("cue_words").get_to(lex.cue_words);
  j.at("liaison_triggers").get_to(lex.liaison_triggers);
}

inline void to_json(nlohmann::json& j, const GenParams& p) {
  j = nlohmann::json{{"lexicon_seed", p.lexicon_seed},
                     {"corpus_seed", p.corpus_seed},
                     {"n_words", p.n_words},
                     {"n_heteronyms", p.n_heteronyms},
                     {"n_train", p.n_train},
                     {"n_valid", p.n_valid},
                     {"n_test", p.n_test},
                     {"max_src_bytes", p.max_src_bytes},
                     {"max_tgt_bytes", p.max_tgt_bytes}};
}

inline void from_json(const nlohmann::json& j, GenParams& p) {
  j.at("lexicon_seed").get_to(p.lexicon_seed);
  j.at("corpus_seed").get_to(p.corpus_seed);
  j.at("n_words").get_to(p.n_words);
  j.at("n_heteronyms").get_to(p.n_heteronyms);
  j.at("n_train").get_to(p.n_train);
  j.at("n_valid").get_to(p.n_valid);
  j.at("n_test").get_to(p.n_test);
  j.at("max_src_bytes").get_to(p.max_src_bytes);
  j.at("max_tgt_bytes").get_to(p.max_tgt_bytes);
}

namespace detail {

inline void write_split_jsonl(const std::string& path, const std::vector<Example>& split) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& ex : split) {
    nlohmann::json j = ex;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("short write: " + path);
}

inline std::vector<Example> read_split_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus split: " + path);
  std::vector<Example> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
    Example ex;
    for (const char* field : {"text", "phonemes", "n_sentences", "heteronym_slots"})
      if (!j.contains(field))
        throw ParseError(path + " line " + std::to_string(line_no) + ": missing field '" +
                         field + "'");
    try {
      ex.text = j["text"].get<std::string>();
      ex.phonemes = split_phoneme_string(j["phonemes"].get<std::string>());
      ex.n_sentences = j["n_sentences"].get<int>();
      ex.heteronym_slots = j["heteronym_slots"].get<std::vector<std::pair<int, int>>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace detail

struct LoadedCorpus {
  CorpusSplit corpus;
  Lexicon lexicon;
  GenParams params;
};

inline void save_corpus(const std::string& dir, const CorpusSplit& corpus, const Lexicon& lexicon,
                        const GenParams& params) {
  detail::write_split_jsonl(dir + "/train.jsonl", corpus.train);
  detail::write_split_jsonl(dir + "/validation.jsonl", corpus.validation);
  detail::write_split_jsonl(dir + "/test_short.jsonl", corpus.test_short);
  detail::write_split_jsonl(dir + "/test_long.jsonl", corpus.test_long);
  {
    std::ofstream out(dir + "/lexicon.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write lexicon.json in " + dir);
    nlohmann::json j = lexicon;
    out << j.dump(2) << "\n";
  }
  {
    std::ofstream out(dir + "/manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest.json in " + dir);
    nlohmann::json j = params;
    out << j.dump(2) << "\n";
  }
}

inline LoadedCorpus load_corpus(const std::string& dir) {
  LoadedCorpus lc;
  lc.corpus.train = detail::read_split_jsonl(dir + "/train.jsonl");
  lc.corpus.validation = detail::read_split_jsonl(dir + "/validation.jsonl");
  lc.corpus.test_short = detail::read_split_jsonl(dir + "/test_short.jsonl");
  lc.corpus.test_long = detail::read_split_jsonl(dir + "/test_long.jsonl");
  {
    std::ifstream in(dir + "/lexicon.json", std::ios::binary);
    if (!in) throw IoError("cannot open lexicon.json in " + dir);
    nlohmann::json j;
    try {
      in >> j;
      lc.lexicon = j.get<Lexicon>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(dir + "/lexicon.json: " + std::string(e.what()));
    }
  }
  {
    std::ifstream in(dir + "/manifest.json", std::ios::binary);
    if (!in) throw IoError("cannot open manifest.json in " + dir);
    nlohmann::json j;
    try {
      in >> j;
      lc.params = j.get<GenParams>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(dir + "/manifest.json: " + std::string(e.what()));
    }
  }
  return lc;
}

}  // namespace g2p
