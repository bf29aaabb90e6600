#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "g2p/experiment.hpp"

// Subcommand bodies. Each takes a fully resolved RunConfig (file values
// already overridden by whatever flags were passed) and throws on failure;
// the entry point maps exception types to exit codes.

namespace g2p::cli {

inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitDiverged = 4;
inline constexpr int kExitOther = 1;

inline const std::vector<Example>& split_by_name(const CorpusSplit& corpus,
                                                 const std::string& name) {
  if (name == "train") return corpus.train;
  if (name == "validation") return corpus.validation;
  if (name == "test_short") return corpus.test_short;
  if (name == "test_long") return corpus.test_long;
  throw ConfigError("unknown split '" + name +
                    "' (expected train, validation, test_short, or test_long)");
}

inline void echo_config(const RunConfig& cfg, const std::string& dir) {
  write_run_config(dir + "/config_used.json", cfg);
}

// ---------------------------------------------------------------------------
// gen: corpus files + manifest into cfg.corpus_dir
// ---------------------------------------------------------------------------

inline void cmd_gen(const RunConfig& cfg) {
  cfg.validate(/*check_paths=*/false);
  std::filesystem::create_directories(cfg.corpus_dir);
  const auto lc = generate_from_params(cfg.gen);
  save_corpus(cfg.corpus_dir, lc.corpus, lc.lexicon, lc.params);
  std::printf("wrote corpus to %s: train %zu, validation %zu, test_short %zu, test_long %zu\n",
              cfg.corpus_dir.c_str(), lc.corpus.train.size(), lc.corpus.validation.size(),
              lc.corpus.test_short.size(), lc.corpus.test_long.size());
}

// ---------------------------------------------------------------------------
// train: checkpoint + training log under cfg.out_dir
// ---------------------------------------------------------------------------

inline void cmd_train(const RunConfig& cfg) {
  cfg.validate(/*check_paths=*/true);
  const auto lc = load_corpus(cfg.corpus_dir);
  std::filesystem::create_directories(cfg.out_dir);
  echo_config(cfg, cfg.out_dir);

  auto m = init_model<float>(cfg.model, cfg.train.seed);
  const auto out = train(m, lc.corpus.train, lc.corpus.validation, cfg.train, cfg.policy,
                         [](const EpochLog& row) {
                           std::fprintf(stderr,
                                        "epoch %d: train_loss %.6f val_loss %.6f val_per %.4f "
                                        "ratio %.2f\n",
                                        row.epoch, row.train_loss, row.val_loss, row.val_per,
                                        row.sample_ratio);
                         });

  save_checkpoint(cfg.out_dir + "/checkpoint.bin", m);
  write_train_log(cfg.out_dir + "/train_log.csv", out.log);
  nlohmann::json summary = {{"best_epoch", out.best_epoch},
                            {"best_val_loss", out.best_val_loss},
                            {"final_val_per", out.log.empty() ? 0.0 : out.log.back().val_per},
                            {"epochs", cfg.train.epochs},
                            {"policy", cfg.policy}};
  detail::write_text_file(cfg.out_dir + "/train_summary.json", summary.dump(2) + "\n");
  std::printf("trained %d epochs; best val loss %.6f at epoch %d; final val PER %.4f\n",
              cfg.train.epochs, out.best_val_loss, out.best_epoch,
              out.log.empty() ? 0.0 : out.log.back().val_per);
  std::printf("checkpoint: %s/checkpoint.bin\nlog: %s/train_log.csv\n", cfg.out_dir.c_str(),
              cfg.out_dir.c_str());
}

// ---------------------------------------------------------------------------
// eval: EvalReport JSON for one split
// ---------------------------------------------------------------------------

inline std::vector<std::string> read_hypothesis_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open hypothesis file: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

inline void cmd_eval(const RunConfig& cfg, const std::string& ckpt_path, const std::string& split,
                     int limit, const std::string& hyps_path) {
  cfg.validate(/*check_paths=*/true);
  const auto lc = load_corpus(cfg.corpus_dir);
  auto refs = detail::take(split_by_name(lc.corpus, split), limit);

  std::vector<std::string> hyps;
  std::string mode;
  if (!hyps_path.empty()) {
    hyps = read_hypothesis_lines(hyps_path);
    mode = "file";
  } else {
    auto m = load_checkpoint<float>(ckpt_path);
    hyps = decode_corpus(m, refs, cfg.decode.beam_size, cfg.decode.max_len);
    mode = cfg.decode.beam_size <= 1 ? "greedy" : "beam" + std::to_string(cfg.decode.beam_size);
  }
  const auto report = score_corpus(refs, hyps);

  std::filesystem::create_directories(cfg.out_dir);
  nlohmann::json j = eval_report_to_json(report);
  j["split"] = split;
  j["decode"] = mode;
  const std::string path = cfg.out_dir + "/eval_" + split + "_" + mode + ".json";
  detail::write_text_file(path, j.dump(2) + "\n");
  std::printf("%s %s: PER %.6f  WER %.6f  heteronym_accuracy %.6f  (%lld examples)\n",
              split.c_str(), mode.c_str(), report.per, report.wer, report.heteronym_accuracy,
              static_cast<long long>(report.n_examples));
  std::printf("report: %s\n", path.c_str());
}

// ---------------------------------------------------------------------------
// accerr: accumulated-error CSV for one split
// ---------------------------------------------------------------------------

inline void cmd_accerr(const RunConfig& cfg, const std::string& ckpt_path,
                       const std::string& split, int l_max, int limit) {
  cfg.validate(/*check_paths=*/true);
  if (l_max < 1) throw ConfigError("l_max must be positive");
  const auto lc = load_corpus(cfg.corpus_dir);
  const auto probe = detail::take(split_by_name(lc.corpus, split), limit);
  if (probe.empty()) throw ConfigError("split '" + split + "' is empty");

  auto m = load_checkpoint<float>(ckpt_path);
  const auto rep = accerr_curve(m, encode_examples(probe, m.cfg), l_max);

  std::ostringstream os;
  os << std::setprecision(17);
  os << "l,L_AR_cum,L_TF_cum,AccErr,n_examples_at_l,ideal\n";
  for (size_t k = 0; k < rep.steps.size(); ++k)
    os << rep.steps[k] << ',' << rep.ar_cum[k] << ',' << rep.tf_cum[k] << ',' << rep.accerr[k]
       << ',' << rep.n_at_step[k] << ',' << rep.steps[k] << '\n';

  std::filesystem::create_directories(cfg.out_dir);
  const std::string path = cfg.out_dir + "/accerr_" + split + ".csv";
  detail::write_text_file(path, os.str());
  const double last = rep.accerr.empty() ? 0.0 : rep.accerr.back();
  const int last_l = rep.steps.empty() ? 0 : rep.steps.back();
  std::printf("accerr on %s (%zu examples, token mode %s): AccErr(%d) = %.4f (ideal %d)\n",
              split.c_str(), probe.size(), rep.token_mode.c_str(), last_l, last, last_l);
  std::printf("curve: %s\n", path.c_str());
}

// ---------------------------------------------------------------------------
// experiment: the full grid
// ---------------------------------------------------------------------------

inline void cmd_experiment(const RunConfig& cfg) {
  cfg.validate(/*check_paths=*/true);
  const auto lc = load_corpus(cfg.corpus_dir);
  std::filesystem::create_directories(cfg.out_dir);
  echo_config(cfg, cfg.out_dir);

  const auto out = run_experiment(cfg, lc.corpus);
  int failures = 0;
  for (const auto& c : out.cells)
    if (!c.ok) {
      ++failures;
      std::fprintf(stderr, "cell %s_%s_seed%llu failed: %s\n", c.method.c_str(),
                   c.ratio_mode.c_str(), static_cast<unsigned long long>(c.seed),
                   c.error.c_str());
    }

  std::printf("%-16s %-9s %5s  %11s %11s %11s %11s\n", "method", "ratio", "seeds", "short-G PER",
              "short-B PER", "long-G PER", "long-B PER");
  for (const auto& r : out.table)
    std::printf("%-16s %-9s %2d/%-2d  %11.4f %11.4f %11.4f %11.4f\n", r.method.c_str(),
                r.ratio_mode.c_str(), r.seeds_ok, r.seeds_total, r.per_short_greedy,
                r.per_short_beam, r.per_long_greedy, r.per_long_beam);
  std::printf("table: %s/table.csv (full metrics in table.json)\n", cfg.out_dir.c_str());
  if (failures > 0)
    std::printf("%d of %zu cells failed; see cell files under %s/cells\n", failures,
                out.cells.size(), cfg.out_dir.c_str());
}

}  // namespace g2p::cli
