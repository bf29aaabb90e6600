#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "g2p/error.hpp"
#include "g2p/rng.hpp"
#include "g2p/tensor.hpp"

namespace g2p {

// Source vocabulary: the 256 byte values plus a trailing PAD id.
inline constexpr int kSrcPad = 256;
inline constexpr int kSrcVocab = 257;

// Target vocabulary: PAD/BOS/EOS control ids, content tokens from 3 up.
inline constexpr int kTgtPad = 0;
inline constexpr int kTgtBos = 1;
inline constexpr int kTgtEos = 2;
inline constexpr int kTgtContentBase = 3;

inline constexpr double kAttnMaskValue = -1e9;

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int n_enc_layers = 3;
  int n_dec_layers = 3;
  int d_ffn = 256;
  double dropout_rate = 0.1;
  int max_src_len = 320;
  int max_tgt_len = 768;
  int tgt_vocab_size = 259;  // bytes mode: 3 control ids + 256 byte values
  std::string target_mode = "bytes";

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || n_enc_layers <= 0 || n_dec_layers <= 0 || d_ffn <= 0)
      throw ConfigError("model dimensions must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                        std::to_string(n_heads));
    if (tgt_vocab_size < 4)
      throw ConfigError("tgt_vocab_size must be at least 4 (PAD, BOS, EOS, content)");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("dropout_rate must lie in [0,1)");
    if (max_src_len <= 0 || max_tgt_len <= 0) throw ConfigError("max lengths must be positive");
    if (target_mode != "bytes" && target_mode != "phoneme-symbols")
      throw ConfigError("target_mode must be 'bytes' or 'phoneme-symbols'");
  }
};

// Ordered parameter registry: registration order is the initialization-draw
// order and the checkpoint layout order.
template <class T>
class Model {
 public:
  ModelConfig cfg;

  Tensor<T>& add_param(const std::string& name, Shape shape) {
    if (index_.count(name)) throw ContractError("duplicate parameter " + name);
    index_[name] = params_.size();
    params_.push_back({name, Tensor<T>::zeros(std::move(shape), true)});
    return params_.back().second;
  }

  Tensor<T>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return params_[it->second].second;
  }
  const Tensor<T>& param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return params_[it->second].second;
  }

  std::vector<std::pair<std::string, Tensor<T>>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }

  int64_t n_params() const {
    int64_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::unordered_map<std::string, size_t> index_;
};

namespace detail {

template <class T>
void register_attn(Model<T>& m, const std::string& prefix, int d) {
  for (const char* r : {"wq", "wk", "wv", "wo"}) m.add_param(prefix + "." + r, {d, d});
  for (const char* r : {"bq", "bk", "bv", "bo"}) m.add_param(prefix + "." + r, {d});
}

template <class T>
void register_ln(Model<T>& m, const std::string& prefix, int d) {
  m.add_param(prefix + ".gain", {d});
  m.add_param(prefix + ".bias", {d});
}

template <class T>
void register_ffn(Model<T>& m, const std::string& prefix, int d, int f) {
  m.add_param(prefix + ".w1", {d, f});
  m.add_param(prefix + ".b1", {f});
  m.add_param(prefix + ".w2", {f, d});
  m.add_param(prefix + ".b2", {d});
}

inline bool is_weight_matrix(const std::string& name) {
  // embeddings and 2-D projection weights get random init + weight decay;
  // biases and layer-norm parameters do not
  auto dot = name.rfind('.');
  std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf == "wq" || leaf == "wk" || leaf == "wv" || leaf == "wo" || leaf == "w1" ||
         leaf == "w2" || leaf == "w" || leaf == "embed";
}

inline bool is_ln_gain(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0 &&
         name.find(".ln") != std::string::npos;
}

}  // namespace detail

// Register every parameter tensor (zero-filled) in the fixed layout order
// shared by initialization and the checkpoint format.
template <class T>
Model<T> make_model(const ModelConfig& cfg) {
  cfg.validate();
  Model<T> m;
  m.cfg = cfg;
  const int d = cfg.d_model, f = cfg.d_ffn;

  m.add_param("src.embed", {kSrcVocab, d});
  m.add_param("tgt.embed", {cfg.tgt_vocab_size, d});
  for (int i = 0; i < cfg.n_enc_layers; ++i) {
    std::string p = "enc" + std::to_string(i);
    detail::register_ln(m, p + ".ln1", d);
    detail::register_attn(m, p + ".self", d);
    detail::register_ln(m, p + ".ln2", d);
    detail::register_ffn(m, p + ".ffn", d, f);
  }
  detail::register_ln(m, "enc.lnf", d);
  for (int i = 0; i < cfg.n_dec_layers; ++i) {
    std::string p = "dec" + std::to_string(i);
    detail::register_ln(m, p + ".ln1", d);
    detail::register_attn(m, p + ".self", d);
    detail::register_ln(m, p + ".ln2", d);
    detail::register_attn(m, p + ".cross", d);
    detail::register_ln(m, p + ".ln3", d);
    detail::register_ffn(m, p + ".ffn", d, f);
  }
  detail::register_ln(m, "dec.lnf", d);
  m.add_param("out.w", {d, cfg.tgt_vocab_size});
  m.add_param("out.b", {cfg.tgt_vocab_size});
  return m;
}

// Initialize a fresh model: weight matrices and embeddings Normal(0, 0.02),
// biases and layer-norm offsets zero, layer-norm gains one. Deterministic
// given (config, seed): one init stream consumed in registration order.
template <class T>
Model<T> init_model(const ModelConfig& cfg, uint64_t seed) {
  Model<T> m = make_model<T>(cfg);
  Rng rng = Rng::derive(seed, {stream::kInit});
  for (auto& [name, t] : m.params()) {
    if (name == "src.embed" || name == "tgt.embed" || detail::is_weight_matrix(name)) {
      for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, 0.02));
    } else if (detail::is_ln_gain(name)) {
      for (auto& v : t.data()) v = T(1);
    }  // biases stay zero
  }
  return m;
}

// Fixed sinusoidal absolute position encodings, rows 0..len-1.
template <class T>
Tensor<T> sinusoidal_positions(int len, int d_model) {
  Tensor<T> pe = Tensor<T>::zeros({len, d_model});
  for (int pos = 0; pos < len; ++pos)
    for (int i = 0; i < d_model / 2; ++i) {
      double freq = std::pow(10000.0, -2.0 * i / d_model);
      pe.data()[static_cast<size_t>(pos) * d_model + 2 * i] = static_cast<T>(std::sin(pos * freq));
      pe.data()[static_cast<size_t>(pos) * d_model + 2 * i + 1] =
          static_cast<T>(std::cos(pos * freq));
    }
  return pe;
}

// Dropout context: absent rng (or zero rate) means evaluation mode.
template <class T>
struct Dropout {
  Rng* rng = nullptr;
  T rate = T(0);
  bool active() const { return rng != nullptr && rate > T(0); }
};

template <class T>
Tensor<T> apply_dropout(Graph<T>& g, const Tensor<T>& x, Dropout<T>& drop) {
  if (!drop.active()) return x;
  Tensor<T> mask = Tensor<T>::zeros(x.shape());
  const T keep = T(1) - drop.rate;
  const T inv = T(1) / keep;
  for (auto& v : mask.data()) v = drop.rng->uniform() < static_cast<double>(drop.rate) ? T(0) : inv;
  return mul(g, x, mask);
}

template <class T>
struct EncoderOutput {
  Tensor<T> memory;               // [src_len, d_model]
  std::vector<char> src_is_pad;   // per-position PAD flag
};

namespace detail {

// Additive mask tensor [q_len, k_len]: blocked entries get kAttnMaskValue.
// causal: block j > i. pad: block columns flagged as PAD.
template <class T>
Tensor<T> build_mask(int q_len, int k_len, bool causal, const std::vector<char>* key_pad) {
  Tensor<T> mask = Tensor<T>::zeros({q_len, k_len});
  for (int i = 0; i < q_len; ++i)
    for (int j = 0; j < k_len; ++j) {
      bool blocked = (causal && j > i) || (key_pad && (*key_pad)[static_cast<size_t>(j)]);
      if (blocked) mask.data()[static_cast<size_t>(i) * k_len + j] = static_cast<T>(kAttnMaskValue);
    }
  return mask;
}

// Multi-head attention. q_in attends to kv_in. Heads are column slices of the
// shared projections; outputs concatenate back to d_model.
template <class T>
Tensor<T> multi_head_attention(Graph<T>& g, Model<T>& m, const std::string& prefix,
                               const Tensor<T>& q_in, const Tensor<T>& kv_in,
                               const Tensor<T>& mask, bool use_mask) {
  const int d = m.cfg.d_model;
  const int h = m.cfg.n_heads;
  const int dh = d / h;
  auto q = add_rowvec(g, matmul(g, q_in, m.param(prefix + ".wq")), m.param(prefix + ".bq"));
  auto k = add_rowvec(g, matmul(g, kv_in, m.param(prefix + ".wk")), m.param(prefix + ".bk"));
  auto v = add_rowvec(g, matmul(g, kv_in, m.param(prefix + ".wv")), m.param(prefix + ".bv"));
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<T>> heads;
  heads.reserve(static_cast<size_t>(h));
  for (int i = 0; i < h; ++i) {
    auto qi = slice_cols(g, q, i * dh, dh);
    auto ki = slice_cols(g, k, i * dh, dh);
    auto vi = slice_cols(g, v, i * dh, dh);
    auto scores = scale(g, matmul_nt(g, qi, ki), inv_sqrt);
    if (use_mask) scores = add(g, scores, mask);
    auto probs = softmax_rows(g, scores);
    heads.push_back(matmul(g, probs, vi));
  }
  auto cat = h == 1 ? heads[0] : concat_cols(g, heads);
  return add_rowvec(g, matmul(g, cat, m.param(prefix + ".wo")), m.param(prefix + ".bo"));
}

template <class T>
Tensor<T> ffn_block(Graph<T>& g, Model<T>& m, const std::string& prefix, const Tensor<T>& x) {
  auto hidden = relu(g, add_rowvec(g, matmul(g, x, m.param(prefix + ".w1")), m.param(prefix + ".b1")));
  return add_rowvec(g, matmul(g, hidden, m.param(prefix + ".w2")), m.param(prefix + ".b2"));
}

template <class T>
Tensor<T> ln(Graph<T>& g, Model<T>& m, const std::string& prefix, const Tensor<T>& x) {
  return layer_norm(g, x, m.param(prefix + ".gain"), m.param(prefix + ".bias"));
}

}  // namespace detail

// Encoder stack over byte tokens (values 0..255 plus kSrcPad).
template <class T>
EncoderOutput<T> encode(Graph<T>& g, Model<T>& m, std::span<const int> src_tokens,
                        Dropout<T> drop = {}) {
  const int n = static_cast<int>(src_tokens.size());
  if (n == 0) throw ContractError("encode on empty source");
  if (n > m.cfg.max_src_len)
    throw LengthError("source length " + std::to_string(n) + " exceeds max_src_len " +
                      std::to_string(m.cfg.max_src_len));
  for (int i = 0; i < n; ++i)
    if (src_tokens[i] < 0 || src_tokens[i] >= kSrcVocab)
      throw IndexError("source token " + std::to_string(src_tokens[i]) + " out of range");
  std::vector<char> is_pad(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) is_pad[static_cast<size_t>(i)] = src_tokens[i] == kSrcPad;

  auto x = add(g, embedding(g, m.param("src.embed"), src_tokens),
               sinusoidal_positions<T>(n, m.cfg.d_model));
  x = apply_dropout(g, x, drop);
  auto pad_mask = detail::build_mask<T>(n, n, false, &is_pad);
  bool any_pad = false;
  for (char p : is_pad) any_pad = any_pad || p;
  for (int l = 0; l < m.cfg.n_enc_layers; ++l) {
    std::string p = "enc" + std::to_string(l);
    auto normed = detail::ln(g, m, p + ".ln1", x);
    auto attn = detail::multi_head_attention(g, m, p + ".self", normed, normed, pad_mask, any_pad);
    x = add(g, x, apply_dropout(g, attn, drop));
    auto ff = detail::ffn_block(g, m, p + ".ffn", detail::ln(g, m, p + ".ln2", x));
    x = add(g, x, apply_dropout(g, ff, drop));
  }
  x = detail::ln(g, m, "enc.lnf", x);
  return {x, std::move(is_pad)};
}

// Full decoder stack: returns logits [len(dec_input), tgt_vocab_size]; row i
// conditions only on dec_input[0..i] and the encoder memory.
template <class T>
Tensor<T> decoder_hidden(Graph<T>& g, Model<T>& m, const EncoderOutput<T>& enc,
                         std::span<const int> dec_input, Dropout<T> drop = {}) {
  const int t = static_cast<int>(dec_input.size());
  if (t == 0) throw ContractError("decoder input empty");
  if (dec_input[0] != kTgtBos) throw ContractError("decoder input must begin with BOS");
  if (t > m.cfg.max_tgt_len)
    throw LengthError("decoder input length " + std::to_string(t) + " exceeds max_tgt_len " +
                      std::to_string(m.cfg.max_tgt_len));
  for (int i = 0; i < t; ++i)
    if (dec_input[i] < 0 || dec_input[i] >= m.cfg.tgt_vocab_size)
      throw IndexError("decoder token " + std::to_string(dec_input[i]) + " out of range");

  auto x = add(g, embedding(g, m.param("tgt.embed"), dec_input),
               sinusoidal_positions<T>(t, m.cfg.d_model));
  x = apply_dropout(g, x, drop);
  const int s = static_cast<int>(enc.src_is_pad.size());
  auto causal = detail::build_mask<T>(t, t, true, nullptr);
  auto cross_mask = detail::build_mask<T>(t, s, false, &enc.src_is_pad);
  bool any_pad = false;
  for (char p : enc.src_is_pad) any_pad = any_pad || p;
  for (int l = 0; l < m.cfg.n_dec_layers; ++l) {
    std::string p = "dec" + std::to_string(l);
    auto normed = detail::ln(g, m, p + ".ln1", x);
    auto self = detail::multi_head_attention(g, m, p + ".self", normed, normed, causal, true);
    x = add(g, x, apply_dropout(g, self, drop));
    auto cross = detail::multi_head_attention(g, m, p + ".cross", detail::ln(g, m, p + ".ln2", x),
                                              enc.memory, cross_mask, any_pad);
    x = add(g, x, apply_dropout(g, cross, drop));
    auto ff = detail::ffn_block(g, m, p + ".ffn", detail::ln(g, m, p + ".ln3", x));
    x = add(g, x, apply_dropout(g, ff, drop));
  }
  return detail::ln(g, m, "dec.lnf", x);
}

template <class T>
Tensor<T> decoder_forward(Graph<T>& g, Model<T>& m, const EncoderOutput<T>& enc,
                          std::span<const int> dec_input, Dropout<T> drop = {}) {
  auto h = decoder_hidden(g, m, enc, dec_input, drop);
  return add_rowvec(g, matmul(g, h, m.param("out.w")), m.param("out.b"));
}

// Logits for the final position only: runs the full stack but projects just
// the last hidden row (the projection dominates at vocab size ~259).
template <class T>
Tensor<T> decoder_last_logits(Graph<T>& g, Model<T>& m, const EncoderOutput<T>& enc,
                              std::span<const int> dec_input, Dropout<T> drop = {}) {
  auto h = decoder_hidden(g, m, enc, dec_input, drop);
  auto last = slice_rows(g, h, h.dim(0) - 1, 1);
  return add_rowvec(g, matmul(g, last, m.param("out.w")), m.param("out.b"));
}

// Softmax over the next-token logits after a prefix; never records gradients.
template <class T>
std::vector<T> next_token_distribution(Model<T>& m, const EncoderOutput<T>& enc,
                                       std::span<const int> prefix) {
  Graph<T> g(false);
  auto logits = decoder_last_logits(g, m, enc, prefix);
  auto probs = softmax_rows(g, logits);
  return probs.data();
}

}  // namespace g2p
