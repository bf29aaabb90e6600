#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "g2p/metrics.hpp"

namespace g2p {

// ---------------------------------------------------------------------------
// Policies and configuration
// ---------------------------------------------------------------------------

struct SamplingPolicy {
  enum class Method { TeacherForcing, Uniform, LossBased };
  enum class RatioMode { Fixed, Adaptive };

  Method method = Method::TeacherForcing;
  RatioMode ratio_mode = RatioMode::Fixed;
  double fixed_ratio = 0.3;
  double ratio_clamp_max = 0.9;

  void validate() const {
    if (fixed_ratio < 0.0 || fixed_ratio > 1.0)
      throw ConfigError("fixed_ratio must lie in [0,1]");
    if (ratio_clamp_max <= 0.0 || ratio_clamp_max > 1.0)
      throw ConfigError("ratio_clamp_max must lie in (0,1]");
  }
};

inline std::string to_string(SamplingPolicy::Method m) {
  switch (m) {
    case SamplingPolicy::Method::TeacherForcing: return "teacher_forcing";
    case SamplingPolicy::Method::Uniform: return "uniform";
    case SamplingPolicy::Method::LossBased: return "loss_based";
  }
  throw ContractError("unreachable sampling method");
}

inline SamplingPolicy::Method method_from_string(const std::string& s) {
  if (s == "teacher_forcing") return SamplingPolicy::Method::TeacherForcing;
  if (s == "uniform") return SamplingPolicy::Method::Uniform;
  if (s == "loss_based") return SamplingPolicy::Method::LossBased;
  throw ConfigError("unknown sampling method '" + s + "'");
}

inline std::string to_string(SamplingPolicy::RatioMode m) {
  return m == SamplingPolicy::RatioMode::Fixed ? "fixed" : "adaptive";
}

inline SamplingPolicy::RatioMode ratio_mode_from_string(const std::string& s) {
  if (s == "fixed") return SamplingPolicy::RatioMode::Fixed;
  if (s == "adaptive") return SamplingPolicy::RatioMode::Adaptive;
  throw ConfigError("unknown ratio mode '" + s + "'");
}

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 5e-3;
  double clip_norm = 5.0;
  uint64_t seed = 1;
  int eval_subset = 128;  // validation examples decoded for the per-epoch PER

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw ConfigError("betas must lie in [0,1)");
    if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
    if (clip_norm <= 0.0) throw ConfigError("clip_norm must be positive");
    if (eval_subset < 1) throw ConfigError("eval_subset must be positive");
  }
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline std::vector<int> decoder_input_of(const EncodedExample& ex) {
  if (ex.target.empty()) throw ContractError("example with empty target");
  std::vector<int> in;
  in.reserve(ex.target.size());
  in.push_back(kTgtBos);
  in.insert(in.end(), ex.target.begin(), ex.target.end() - 1);
  return in;
}

namespace detail {

// token-mean cross-entropy of one example under a given decoder input
template <class T>
Tensor<T> example_loss(Graph<T>& g, Model<T>& m, const EncodedExample& ex,
                       const std::vector<int>& dec_in, Dropout<T> drop) {
  auto enc = encode(g, m, ex.src, drop);
  auto logits = decoder_forward(g, m, enc, dec_in, drop);
  auto losses = cross_entropy_rows(g, logits, ex.target);
  return scale(g, sum(g, losses), T(1) / static_cast<T>(ex.target.size()));
}

template <class T>
Tensor<T> batch_mean(Graph<T>& g, std::vector<Tensor<T>>& per_example) {
  Tensor<T> acc = per_example[0];
  for (size_t i = 1; i < per_example.size(); ++i) acc = add(g, acc, per_example[i]);
  return scale(g, acc, T(1) / static_cast<T>(per_example.size()));
}

}  // namespace detail

// Batch loss under gold decoder inputs: the mean over examples of each
// example's token-mean cross-entropy. `drops` supplies one dropout stream per
// example (empty = no dropout).
template <class T>
Tensor<T> teacher_forcing_loss(Graph<T>& g, Model<T>& m, std::span<const EncodedExample> batch,
                               std::span<Dropout<T>> drops = {}) {
  if (batch.empty()) throw ContractError("teacher_forcing_loss on empty batch");
  if (!drops.empty() && drops.size() != batch.size())
    throw ContractError("dropout stream count does not match batch size");
  std::vector<Tensor<T>> per_ex;
  per_ex.reserve(batch.size());
  for (size_t e = 0; e < batch.size(); ++e)
    per_ex.push_back(detail::example_loss(g, m, batch[e], decoder_input_of(batch[e]),
                                          drops.empty() ? Dropout<T>{} : drops[e]));
  return detail::batch_mean(g, per_ex);
}

// ---------------------------------------------------------------------------
// Two-pass sampling (first pass: profile; second pass: the training loss)
// ---------------------------------------------------------------------------

struct LossProfile {
  std::vector<double> losses;  // per-position cross-entropy vs gold, length t+1
  std::vector<int> argmax;     // first-pass predictions, length t+1
};

// Teacher-forced probe of the current model: per-position losses and argmax
// predictions. No gradients are collected and dropout stays off, so the
// profile is a pure function of (params, example).
template <class T>
LossProfile first_pass_profile(Model<T>& m, const EncodedExample& ex) {
  Graph<T> g(false);
  auto enc = encode(g, m, ex.src);
  auto logits = decoder_forward(g, m, enc, decoder_input_of(ex));
  auto losses = cross_entropy_rows(g, logits, ex.target);

  LossProfile prof;
  prof.losses.assign(losses.data().begin(), losses.data().end());
  const auto V = static_cast<size_t>(m.cfg.tgt_vocab_size);
  prof.argmax.resize(ex.target.size());
  for (size_t i = 0; i < ex.target.size(); ++i) {
    const T* row = logits.data().data() + i * V;
    size_t best = 0;
    for (size_t j = 1; j < V; ++j)
      if (row[j] > row[best]) best = j;  // ties toward the lowest id
    prof.argmax[i] = static_cast<int>(best);
  }
  return prof;
}

inline constexpr double kPositionEps = 1e-8;

// Categorical distribution over eligible positions 0..t-1 (position t's token
// never re-enters the decoder). Epsilon-smoothed so all-zero losses still
// yield a (uniform) distribution.
inline std::vector<double> position_distribution(const LossProfile& prof) {
  if (prof.losses.empty()) throw ContractError("empty loss profile");
  const size_t n = prof.losses.size() - 1;
  std::vector<double> p(n);
  double z = 0.0;
  for (size_t i = 0; i < n; ++i) {
    p[i] = prof.losses[i] + kPositionEps;
    z += p[i];
  }
  for (auto& x : p) x /= z;
  return p;
}

inline std::vector<double> uniform_position_distribution(size_t n_eligible) {
  return std::vector<double>(n_eligible, n_eligible ? 1.0 / static_cast<double>(n_eligible) : 0.0);
}

// Number of replacements for a ratio: round half away from zero, capped.
inline int position_count(double ratio, int n_eligible) {
  const auto k = static_cast<int>(std::lround(ratio * static_cast<double>(n_eligible)));
  return std::clamp(k, 0, n_eligible);
}

// k distinct indices via iterative categorical draws, renormalizing over the
// remaining positions after each draw. Returned sorted ascending.
inline std::vector<int> sample_positions(Rng& rng, const std::vector<double>& dist, int k) {
  const int n = static_cast<int>(dist.size());
  if (k < 0 || k > n)
    throw ContractError("cannot sample " + std::to_string(k) + " of " + std::to_string(n) +
                        " positions");
  std::vector<char> taken(dist.size(), 0);
  std::vector<int> out;
  out.reserve(static_cast<size_t>(k));
  for (int draw = 0; draw < k; ++draw) {
    double z = 0.0;
    for (int i = 0; i < n; ++i)
      if (!taken[static_cast<size_t>(i)]) z += dist[static_cast<size_t>(i)];
    double u = rng.uniform() * z;
    int pick = -1;
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<size_t>(i)]) continue;
      pick = i;  // falls through to the last untaken index on fp exhaustion
      u -= dist[static_cast<size_t>(i)];
      if (u < 0.0) break;
    }
    taken[static_cast<size_t>(pick)] = 1;
    out.push_back(pick);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Replace the decoder-input slot i+1 (where gold y_i is consumed) with the
// first-pass prediction for position i. Slot 0 (BOS) is never touched.
inline std::vector<int> build_second_pass_input(const std::vector<int>& gold_input,
                                                const LossProfile& prof,
                                                const std::vector<int>& positions) {
  std::vector<int> out = gold_input;
  for (int i : positions) {
    if (i < 0 || i + 1 >= static_cast<int>(out.size()))
      throw ContractError("position " + std::to_string(i) + " is not eligible");
    out[static_cast<size_t>(i) + 1] = prof.argmax[static_cast<size_t>(i)];
  }
  return out;
}

// Two-pass training loss for a batch: per example, profile the model teacher-
// forced (no grad), sample positions by the policy's distribution, re-run
// with the partially replaced input, and score against the unchanged gold
// labels. Gradients flow only through the second pass.
template <class T>
Tensor<T> two_pass_loss(Graph<T>& g, Model<T>& m, std::span<const EncodedExample> batch,
                        const SamplingPolicy& policy, double ratio, std::span<Rng> sample_rngs,
                        std::span<Dropout<T>> drops = {}) {
  if (batch.empty()) throw ContractError("two_pass_loss on empty batch");
  if (policy.method == SamplingPolicy::Method::TeacherForcing)
    throw ContractError("two_pass_loss requires a sampling method");
  if (sample_rngs.size() != batch.size())
    throw ContractError("sampling stream count does not match batch size");
  if (!drops.empty() && drops.size() != batch.size())
    throw ContractError("dropout stream count does not match batch size");

  std::vector<Tensor<T>> per_ex;
  per_ex.reserve(batch.size());
  for (size_t e = 0; e < batch.size(); ++e) {
    const auto& ex = batch[e];
    auto dec_in = decoder_input_of(ex);
    const int n_eligible = static_cast<int>(ex.target.size()) - 1;
    const int k = position_count(ratio, n_eligible);
    if (k > 0) {
      const auto prof = first_pass_profile(m, ex);
      const auto dist = policy.method == SamplingPolicy::Method::Uniform
                            ? uniform_position_distribution(static_cast<size_t>(n_eligible))
                            : position_distribution(prof);
      const auto positions = sample_positions(sample_rngs[e], dist, k);
      dec_in = build_second_pass_input(dec_in, prof, positions);
    }
    per_ex.push_back(
        detail::example_loss(g, m, ex, dec_in, drops.empty() ? Dropout<T>{} : drops[e]));
  }
  return detail::batch_mean(g, per_ex);
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

inline double adaptive_ratio(double prev_per, double clamp_max = 0.9) {
  return std::clamp(prev_per, 0.0, clamp_max);
}

inline double resolve_ratio(const SamplingPolicy& policy, int epoch, double prev_val_per) {
  if (policy.method == SamplingPolicy::Method::TeacherForcing) return 0.0;
  if (policy.ratio_mode == SamplingPolicy::RatioMode::Fixed) return policy.fixed_ratio;
  return epoch <= 1 ? 0.0 : adaptive_ratio(prev_val_per, policy.ratio_clamp_max);
}

// Global L2-norm clipping over every parameter gradient. Returns the
// pre-clip norm.
template <class T>
double clip_gradients(Model<T>& m, double max_norm) {
  double sq = 0.0;
  for (auto& [name, p] : m.params())
    for (T gv : p.grad()) sq += static_cast<double>(gv) * static_cast<double>(gv);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [name, p] : m.params())
      for (T& gv : p.grad()) gv *= s;
  }
  return norm;
}

// Decoupled-weight-decay Adam with bias correction; the decay multiplies the
// parameter before the moment update is applied, and acts on every parameter.
// Moments are kept in double regardless of the parameter scalar type.
template <class T>
class AdamW {
 public:
  AdamW(const Model<T>& m, const TrainConfig& cfg)
      : lr_(cfg.lr),
        b1_(cfg.beta1),
        b2_(cfg.beta2),
        eps_(cfg.adam_eps),
        wd_(cfg.weight_decay) {
    for (const auto& [name, p] : m.params()) {
      m_.emplace_back(p.data().size(), 0.0);
      v_.emplace_back(p.data().size(), 0.0);
    }
  }

  void step(Model<T>& m) {
    if (m.params().size() != m_.size()) throw ContractError("optimizer bound to another model");
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    size_t pi = 0;
    for (auto& [name, p] : m.params()) {
      auto& mm = m_[pi];
      auto& vv = v_[pi];
      ++pi;
      for (size_t j = 0; j < p.data().size(); ++j) {
        const double gj = static_cast<double>(p.grad()[j]);
        mm[j] = b1_ * mm[j] + (1.0 - b1_) * gj;
        vv[j] = b2_ * vv[j] + (1.0 - b2_) * gj * gj;
        double x = static_cast<double>(p.data()[j]);
        x *= 1.0 - lr_ * wd_;
        x -= lr_ * (mm[j] / bc1) / (std::sqrt(vv[j] / bc2) + eps_);
        p.data()[j] = static_cast<T>(x);
      }
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_, wd_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_per = 0.0;
  double sample_ratio = 0.0;
};

inline std::string train_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_per,sample_ratio\n";
  os << std::setprecision(17);
  for (const auto& row : log)
    os << row.epoch << ',' << row.train_loss << ',' << row.val_loss << ',' << row.val_per << ','
       << row.sample_ratio << '\n';
  return os.str();
}

inline void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << train_log_csv(log);
  if (!f) throw IoError("write failed: " + path);
}

template <class T>
std::vector<std::vector<T>> snapshot_params(const Model<T>& m) {
  std::vector<std::vector<T>> out;
  out.reserve(m.params().size());
  for (const auto& [name, p] : m.params()) out.push_back(p.data());
  return out;
}

template <class T>
void restore_params(Model<T>& m, const std::vector<std::vector<T>>& snap) {
  if (snap.size() != m.params().size()) throw ContractError("snapshot does not match model");
  size_t i = 0;
  for (auto& [name, p] : m.params()) {
    if (snap[i].size() != p.data().size()) throw ContractError("snapshot shape mismatch");
    p.data() = snap[i++];
  }
}

inline std::vector<EncodedExample> encode_examples(const std::vector<Example>& exs,
                                                   const ModelConfig& cfg) {
  std::vector<EncodedExample> out;
  out.reserve(exs.size());
  for (const auto& ex : exs) out.push_back(encode_io(ex, cfg));
  return out;
}

struct TrainOutput {
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

// Full epoch loop: shuffled mini-batches, AdamW with global clipping,
// per-epoch validation loss and greedy-decode validation PER, adaptive ratio
// driven by the previous epoch's PER, best parameters (by validation loss)
// restored into the model on return. All randomness comes from substreams of
// (cfg.seed, purpose, epoch, example id), so results are independent of
// batching internals and reproducible bit for bit. `on_epoch`, when set, is
// called with each completed epoch's log row (progress reporting).
template <class T>
TrainOutput train(Model<T>& m, const std::vector<Example>& train_set,
                  const std::vector<Example>& val_set, const TrainConfig& cfg,
                  const SamplingPolicy& policy,
                  const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  policy.validate();
  if (train_set.empty() || val_set.empty())
    throw ContractError("training requires nonempty train and validation sets");

  const auto train_enc = encode_examples(train_set, m.cfg);
  const auto val_enc = encode_examples(val_set, m.cfg);
  const size_t n_eval = std::min<size_t>(static_cast<size_t>(cfg.eval_subset), val_set.size());
  const std::vector<Example> eval_refs(val_set.begin(),
                                       val_set.begin() + static_cast<long>(n_eval));

  AdamW<T> opt(m, cfg);
  TrainOutput out;
  std::vector<std::vector<T>> best;
  double prev_val_per = 0.0;
  const bool tf_only = policy.method == SamplingPolicy::Method::TeacherForcing;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double ratio = resolve_ratio(policy, epoch, prev_val_per);

    std::vector<size_t> order(train_enc.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = Rng::derive(cfg.seed, {stream::kShuffle, static_cast<uint64_t>(epoch)});
    shuffle_rng.shuffle(order);

    double loss_weighted = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<EncodedExample> batch;
      std::vector<Rng> drop_rngs, sample_rngs;
      batch.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) {
        const auto id = static_cast<uint64_t>(order[i]);
        batch.push_back(train_enc[order[i]]);
        drop_rngs.push_back(
            Rng::derive(cfg.seed, {stream::kDropout, static_cast<uint64_t>(epoch), id}));
        sample_rngs.push_back(
            Rng::derive(cfg.seed, {stream::kSample, static_cast<uint64_t>(epoch), id}));
      }
      std::vector<Dropout<T>> drops;
      for (size_t e = 0; e < batch.size(); ++e)
        drops.push_back(Dropout<T>{&drop_rngs[e], static_cast<T>(m.cfg.dropout_rate)});

      try {
        Graph<T> g(true);
        auto loss = tf_only ? teacher_forcing_loss<T>(g, m, batch, drops)
                            : two_pass_loss<T>(g, m, batch, policy, ratio, sample_rngs, drops);
        const double lv = static_cast<double>(loss.data()[0]);
        if (!std::isfinite(lv)) throw NumericalError("non-finite training loss");
        loss_weighted += lv * static_cast<double>(batch.size());
        m.zero_grads();
        g.backward(loss);
        clip_gradients(m, cfg.clip_norm);
        opt.step(m);
      } catch (const NumericalError& err) {
        throw NumericalError("diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(start / static_cast<size_t>(cfg.batch_size) + 1) +
                             ": " + err.what());
      }
    }

    EpochLog row;
    row.epoch = epoch;
    row.sample_ratio = ratio;
    row.train_loss = loss_weighted / static_cast<double>(train_enc.size());

    double val_sum = 0.0;
    for (const auto& ex : val_enc) {
      Graph<T> g(false);
      val_sum += static_cast<double>(
          detail::example_loss(g, m, ex, decoder_input_of(ex), Dropout<T>{}).data()[0]);
    }
    row.val_loss = val_sum / static_cast<double>(val_enc.size());
    row.val_per = score_corpus(eval_refs, decode_corpus(m, eval_refs)).per;
    prev_val_per = row.val_per;
    out.log.push_back(row);
    if (on_epoch) on_epoch(row);

    if (row.val_loss < out.best_val_loss) {
      out.best_val_loss = row.val_loss;
      out.best_epoch = epoch;
      best = snapshot_params(m);
    }
  }

  if (!best.empty()) restore_params(m, best);
  return out;
}

}  // namespace g2p
