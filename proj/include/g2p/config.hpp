#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "g2p/trainer.hpp"

// Run configuration (JSON file + programmatic overrides) and checkpoint I/O.
// Precedence everywhere: command-line flags > config file > built-in defaults;
// the file may be partial, unknown keys are rejected as usage errors.

namespace g2p {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const char* section,
                                std::initializer_list<const char*> known) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok)
      throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// JSON forms of the per-module configs
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},
                     {"n_heads", c.n_heads},
                     {"n_enc_layers", c.n_enc_layers},
                     {"n_dec_layers", c.n_dec_layers},
                     {"d_ffn", c.d_ffn},
                     {"dropout_rate", c.dropout_rate},
                     {"max_src_len", c.max_src_len},
                     {"max_tgt_len", c.max_tgt_len},
                     {"tgt_vocab_size", c.tgt_vocab_size},
                     {"target_mode", c.target_mode}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  detail::reject_unknown_keys(j, "model",
                              {"d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ffn",
                               "dropout_rate", "max_src_len", "max_tgt_len", "tgt_vocab_size",
                               "target_mode"});
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_enc_layers = j.value("n_enc_layers", c.n_enc_layers);
  c.n_dec_layers = j.value("n_dec_layers", c.n_dec_layers);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.max_src_len = j.value("max_src_len", c.max_src_len);
  c.max_tgt_len = j.value("max_tgt_len", c.max_tgt_len);
  c.tgt_vocab_size = j.value("tgt_vocab_size", c.tgt_vocab_size);
  c.target_mode = j.value("target_mode", c.target_mode);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"weight_decay", c.weight_decay},
                     {"clip_norm", c.clip_norm},
                     {"seed", c.seed},
                     {"eval_subset", c.eval_subset}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  detail::reject_unknown_keys(j, "train",
                              {"epochs", "batch_size", "lr", "beta1", "beta2", "adam_eps",
                               "weight_decay", "clip_norm", "seed", "eval_subset"});
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.eval_subset = j.value("eval_subset", c.eval_subset);
}

inline void to_json(nlohmann::json& j, const SamplingPolicy& p) {
  j = nlohmann::json{{"method", to_string(p.method)},
                     {"ratio_mode", to_string(p.ratio_mode)},
                     {"fixed_ratio", p.fixed_ratio},
                     {"ratio_clamp_max", p.ratio_clamp_max}};
}

inline void from_json(const nlohmann::json& j, SamplingPolicy& p) {
  detail::reject_unknown_keys(j, "policy",
                              {"method", "ratio_mode", "fixed_ratio", "ratio_clamp_max"});
  if (j.contains("method")) p.method = method_from_string(j["method"].get<std::string>());
  if (j.contains("ratio_mode"))
    p.ratio_mode = ratio_mode_from_string(j["ratio_mode"].get<std::string>());
  p.fixed_ratio = j.value("fixed_ratio", p.fixed_ratio);
  p.ratio_clamp_max = j.value("ratio_clamp_max", p.ratio_clamp_max);
}

struct DecodeConfig {
  int beam_size = 1;  // 1 = greedy
  int max_len = -1;   // -1 = derive from source length

  void validate() const {
    if (beam_size < 1) throw ConfigError("beam_size must be positive");
    if (max_len != -1 && max_len < 1) throw ConfigError("max_len must be -1 or positive");
  }
};

inline void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = nlohmann::json{{"beam_size", c.beam_size}, {"max_len", c.max_len}};
}

inline void from_json(const nlohmann::json& j, DecodeConfig& c) {
  detail::reject_unknown_keys(j, "decode", {"beam_size", "max_len"});
  c.beam_size = j.value("beam_size", c.beam_size);
  c.max_len = j.value("max_len", c.max_len);
}

// Experiment grid shape: which methods and ratio modes to cross with the run
// seeds, and how much of each test split the per-cell evaluation consumes.
struct ExperimentParams {
  std::vector<std::string> methods = {"teacher_forcing", "uniform", "loss_based"};
  std::vector<std::string> ratio_modes = {"fixed", "adaptive"};
  int beam_size = 3;         // the table's beam column
  int eval_limit_short = -1; // -1 = whole split
  int eval_limit_long = -1;
  int accerr_limit = 16;     // examples per AccErr curve
  int accerr_l_max = 120;
  int jobs = 1;              // >1 = cells in parallel worker processes

  void validate() const {
    if (methods.empty()) throw ConfigError("experiment.methods must be nonempty");
    for (const auto& m : methods) (void)method_from_string(m);
    if (ratio_modes.empty()) throw ConfigError("experiment.ratio_modes must be nonempty");
    for (const auto& r : ratio_modes) (void)ratio_mode_from_string(r);
    if (beam_size < 1) throw ConfigError("experiment.beam_size must be positive");
    for (int lim : {eval_limit_short, eval_limit_long})
      if (lim != -1 && lim < 1) throw ConfigError("eval limits must be -1 or positive");
    if (accerr_limit < 1) throw ConfigError("experiment.accerr_limit must be positive");
    if (accerr_l_max < 1) throw ConfigError("experiment.accerr_l_max must be positive");
    if (jobs < 1) throw ConfigError("experiment.jobs must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ExperimentParams& p) {
  j = nlohmann::json{{"methods", p.methods},
                     {"ratio_modes", p.ratio_modes},
                     {"beam_size", p.beam_size},
                     {"eval_limit_short", p.eval_limit_short},
                     {"eval_limit_long", p.eval_limit_long},
                     {"accerr_limit", p.accerr_limit},
                     {"accerr_l_max", p.accerr_l_max},
                     {"jobs", p.jobs}};
}

inline void from_json(const nlohmann::json& j, ExperimentParams& p) {
  detail::reject_unknown_keys(j, "experiment",
                              {"methods", "ratio_modes", "beam_size", "eval_limit_short",
                               "eval_limit_long", "accerr_limit", "accerr_l_max", "jobs"});
  if (j.contains("methods")) j["methods"].get_to(p.methods);
  if (j.contains("ratio_modes")) j["ratio_modes"].get_to(p.ratio_modes);
  p.beam_size = j.value("beam_size", p.beam_size);
  p.eval_limit_short = j.value("eval_limit_short", p.eval_limit_short);
  p.eval_limit_long = j.value("eval_limit_long", p.eval_limit_long);
  p.accerr_limit = j.value("accerr_limit", p.accerr_limit);
  p.accerr_l_max = j.value("accerr_l_max", p.accerr_l_max);
  p.jobs = j.value("jobs", p.jobs);
}

// ---------------------------------------------------------------------------
// RunConfig: one file drives every subcommand
// ---------------------------------------------------------------------------

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SamplingPolicy policy;
  GenParams gen;
  DecodeConfig decode;
  ExperimentParams experiment;
  std::string corpus_dir = "corpus";
  std::string out_dir = "out";
  std::vector<uint64_t> seeds = {1};

  // `check_paths`: subcommands that consume a corpus require it to exist;
  // `gen` creates it and validates with check_paths = false.
  void validate(bool check_paths) const {
    model.validate();
    train.validate();
    policy.validate();
    decode.validate();
    experiment.validate();
    if (gen.n_words < 1 || gen.n_train < 1 || gen.n_valid < 1 || gen.n_test < 1)
      throw ConfigError("corpus sizes must be positive");
    if (gen.n_heteronyms < 0) throw ConfigError("n_heteronyms must be nonnegative");
    if (seeds.empty()) throw ConfigError("seeds must be nonempty");
    if (corpus_dir.empty() || out_dir.empty())
      throw ConfigError("corpus_dir and out_dir must be nonempty");
    if (check_paths && !std::filesystem::is_directory(corpus_dir))
      throw ConfigError("corpus_dir does not exist: " + corpus_dir);
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"model", c.model},         {"train", c.train},
                     {"policy", c.policy},       {"gen", c.gen},
                     {"decode", c.decode},       {"experiment", c.experiment},
                     {"corpus_dir", c.corpus_dir}, {"out_dir", c.out_dir},
                     {"seeds", c.seeds}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  detail::reject_unknown_keys(j, "config",
                              {"model", "train", "policy", "gen", "decode", "experiment",
                               "corpus_dir", "out_dir", "seeds"});
  if (j.contains("model")) j["model"].get_to(c.model);
  if (j.contains("train")) j["train"].get_to(c.train);
  if (j.contains("policy")) j["policy"].get_to(c.policy);
  if (j.contains("gen")) {
    // parsed key by key: partial gen sections keep the desk defaults, unlike
    // the strict manifest reader
    const auto& g = j["gen"];
    detail::reject_unknown_keys(g, "gen",
                                {"lexicon_seed", "corpus_seed", "n_words", "n_heteronyms",
                                 "n_train", "n_valid", "n_test", "max_src_bytes",
                                 "max_tgt_bytes"});
    c.gen.lexicon_seed = g.value("lexicon_seed", c.gen.lexicon_seed);
    c.gen.corpus_seed = g.value("corpus_seed", c.gen.corpus_seed);
    c.gen.n_words = g.value("n_words", c.gen.n_words);
    c.gen.n_heteronyms = g.value("n_heteronyms", c.gen.n_heteronyms);
    c.gen.n_train = g.value("n_train", c.gen.n_train);
    c.gen.n_valid = g.value("n_valid", c.gen.n_valid);
    c.gen.n_test = g.value("n_test", c.gen.n_test);
    c.gen.max_src_bytes = g.value("max_src_bytes", c.gen.max_src_bytes);
    c.gen.max_tgt_bytes = g.value("max_tgt_bytes", c.gen.max_tgt_bytes);
  }
  if (j.contains("decode")) j["decode"].get_to(c.decode);
  if (j.contains("experiment")) j["experiment"].get_to(c.experiment);
  c.corpus_dir = j.value("corpus_dir", c.corpus_dir);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("seeds")) j["seeds"].get_to(c.seeds);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  RunConfig cfg;
  try {
    j.get_to(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return cfg;
}

inline void write_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write config: " + path);
  nlohmann::json j = cfg;
  out << j.dump(2) << "\n";
  if (!out) throw IoError("short write: " + path);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, length-prefixed JSON header, raw little-endian doubles
// in parameter-registry order.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'G', '2', 'P', 'C', 'K', 'P', 'T', '\n'};

namespace detail {
template <class T>
const char* scalar_name();
template <>
inline const char* scalar_name<float>() {
  return "f32";
}
template <>
inline const char* scalar_name<double>() {
  return "f64";
}
}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& m) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, p] : m.params())
    params.push_back({{"name", name}, {"shape", p.shape()}});
  const nlohmann::json header = {
      {"format", 1}, {"scalar", detail::scalar_name<T>()}, {"model", m.cfg}, {"params", params}};
  const std::string head = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const uint64_t hlen = head.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& [name, p] : m.params())
    out.write(reinterpret_cast<const char*>(p.data().data()),
              static_cast<std::streamsize>(p.data().size() * sizeof(T)));
  if (!out) throw IoError("short write: " + path);
}

template <class T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw ParseError(path + ": not a checkpoint file");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen == 0 || hlen > (1u << 20)) throw ParseError(path + ": corrupt header length");
  std::string head(hlen, '\0');
  in.read(head.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw ParseError(path + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(head);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad header: " + e.what());
  }
  if (header.value("format", 0) != 1)
    throw ParseError(path + ": unsupported checkpoint format");
  if (header.value("scalar", "") != detail::scalar_name<T>())
    throw ParseError(path + ": checkpoint scalar '" + header.value("scalar", "") +
                     "' does not match requested '" + detail::scalar_name<T>() + "'");

  ModelConfig cfg;
  try {
    header.at("model").get_to(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad model config: " + e.what());
  }
  cfg.validate();
  auto m = init_model<T>(cfg, 0);

  const auto& plist = header.at("params");
  if (plist.size() != m.params().size())
    throw ParseError(path + ": checkpoint/config mismatch: parameter count");
  size_t i = 0;
  for (auto& [name, p] : m.params()) {
    const auto& entry = plist[i++];
    if (entry.at("name").get<std::string>() != name)
      throw ParseError(path + ": checkpoint/config mismatch at '" + name + "'");
    if (entry.at("shape").get<Shape>() != p.shape())
      throw ParseError(path + ": shape mismatch at '" + name + "'");
    in.read(reinterpret_cast<char*>(p.data().data()),
            static_cast<std::streamsize>(p.data().size() * sizeof(T)));
    if (!in) throw ParseError(path + ": truncated parameter data at '" + name + "'");
  }
  char extra;
  if (in.read(&extra, 1)) throw ParseError(path + ": trailing bytes after parameter data");
  for (const auto& [name, p] : m.params())
    for (T v : p.data())
      if (!std::isfinite(static_cast<double>(v)))
        throw ParseError(path + ": non-finite value in parameter '" + name + "'");
  return m;
}

// ---------------------------------------------------------------------------
// Corpus orchestration
// ---------------------------------------------------------------------------

inline LoadedCorpus generate_from_params(const GenParams& p) {
  LoadedCorpus lc;
  lc.params = p;
  lc.lexicon = build_lexicon(p.lexicon_seed, p.n_words, p.n_heteronyms);
  lc.corpus = generate_corpus(lc.lexicon, p.corpus_seed, p.n_train, p.n_valid, p.n_test,
                              p.max_src_bytes, p.max_tgt_bytes);
  return lc;
}

}  // namespace g2p
