// Command-line entry point. Subcommand bodies live in g2p/cli.hpp; this file
// only parses flags, applies the flags > config > defaults precedence, and
// maps exception types to exit codes (0 ok, 2 usage, 3 I/O, 4 divergence,
// 1 anything else).
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "g2p/cli.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string corpus;
  std::string split;
  std::string ckpt;
  std::string hyps;
  uint64_t seed = 0;
  int beam = 0;
  int max_len = 0;
  int l_max = 0;
  int limit = -1;
  int jobs = 0;
  int epochs = 0;
  int n_train = 0, n_valid = 0, n_test = 0, n_words = 0, n_heteronyms = 0;
};

// Shared flags every subcommand understands.
void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file (flags override its fields)");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--corpus", f.corpus, "corpus directory");
}

bool given(const CLI::App* sub, const std::string& name) {
  const auto* opt = sub->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

g2p::RunConfig resolve(const CLI::App* sub, const Flags& f) {
  g2p::RunConfig cfg;
  if (given(sub, "--config")) cfg = g2p::load_run_config(f.config);
  if (given(sub, "--out")) cfg.out_dir = f.out;
  if (given(sub, "--corpus")) cfg.corpus_dir = f.corpus;
  if (given(sub, "--beam")) cfg.decode.beam_size = f.beam;
  if (given(sub, "--max-len")) cfg.decode.max_len = f.max_len;
  if (given(sub, "--seed")) {
    cfg.train.seed = f.seed;
    cfg.gen.lexicon_seed = f.seed;
    cfg.gen.corpus_seed = f.seed;
    cfg.seeds = {f.seed};
  }
  if (given(sub, "--epochs")) cfg.train.epochs = f.epochs;
  if (given(sub, "--jobs")) cfg.experiment.jobs = f.jobs;
  if (given(sub, "--n-train")) cfg.gen.n_train = f.n_train;
  if (given(sub, "--n-valid")) cfg.gen.n_valid = f.n_valid;
  if (given(sub, "--n-test")) cfg.gen.n_test = f.n_test;
  if (given(sub, "--n-words")) cfg.gen.n_words = f.n_words;
  if (given(sub, "--n-heteronyms")) cfg.gen.n_heteronyms = f.n_heteronyms;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tokenizer-free sentence-level G2P: training, decoding, and "
               "exposure-bias measurement"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus (files + manifest)");
  add_common(gen, f);
  gen->add_option("--seed", f.seed, "lexicon and corpus seed");
  gen->add_option("--n-train", f.n_train, "training examples");
  gen->add_option("--n-valid", f.n_valid, "validation examples");
  gen->add_option("--n-test", f.n_test, "examples per test split");
  gen->add_option("--n-words", f.n_words, "lexicon size");
  gen->add_option("--n-heteronyms", f.n_heteronyms, "heteronym count");

  auto* train = app.add_subcommand("train", "train a model; writes checkpoint + log CSV");
  add_common(train, f);
  train->add_option("--seed", f.seed, "initialization and shuffling seed");
  train->add_option("--epochs", f.epochs, "override epoch count");

  auto* eval = app.add_subcommand("eval", "decode a split and score it (EvalReport JSON)");
  add_common(eval, f);
  eval->add_option("--ckpt", f.ckpt, "checkpoint path (default <out>/checkpoint.bin)");
  eval->add_option("--split", f.split, "corpus split (default test_short)");
  eval->add_option("--beam", f.beam, "beam size (1 = greedy)");
  eval->add_option("--max-len", f.max_len, "decode length cap (-1 = from source length)");
  eval->add_option("--limit", f.limit, "evaluate only the first N examples");
  eval->add_option("--hyps", f.hyps, "score these hypothesis lines instead of decoding");

  auto* accerr = app.add_subcommand("accerr", "accumulated-error curve CSV for a split");
  add_common(accerr, f);
  accerr->add_option("--ckpt", f.ckpt, "checkpoint path (default <out>/checkpoint.bin)");
  accerr->add_option("--split", f.split, "corpus split (default test_long)");
  accerr->add_option("--l-max", f.l_max, "largest step index measured");
  accerr->add_option("--limit", f.limit, "use only the first N examples");

  auto* expr = app.add_subcommand("experiment", "train and evaluate the full method grid");
  add_common(expr, f);
  expr->add_option("--seed", f.seed, "run the grid on this single seed");
  expr->add_option("--epochs", f.epochs, "override epoch count");
  expr->add_option("--jobs", f.jobs, "cells trained in parallel worker processes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);  // prints help or the parse diagnostic
    return rc == 0 ? 0 : g2p::cli::kExitUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    const g2p::RunConfig cfg = resolve(sub, f);
    if (sub == gen) {
      g2p::cli::cmd_gen(cfg);
    } else if (sub == train) {
      g2p::cli::cmd_train(cfg);
    } else if (sub == eval) {
      const std::string ckpt = given(sub, "--ckpt") ? f.ckpt : cfg.out_dir + "/checkpoint.bin";
      const std::string split = given(sub, "--split") ? f.split : "test_short";
      g2p::cli::cmd_eval(cfg, ckpt, split, f.limit, f.hyps);
    } else if (sub == accerr) {
      const std::string ckpt = given(sub, "--ckpt") ? f.ckpt : cfg.out_dir + "/checkpoint.bin";
      const std::string split = given(sub, "--split") ? f.split : "test_long";
      const int l_max = given(sub, "--l-max") ? f.l_max : cfg.experiment.accerr_l_max;
      g2p::cli::cmd_accerr(cfg, ckpt, split, l_max, f.limit);
    } else {
      g2p::cli::cmd_experiment(cfg);
    }
    return 0;
  } catch (const g2p::ConfigError& e) {
    std::fprintf(stderr, "g2p: %s\n", e.what());
    return g2p::cli::kExitUsage;
  } catch (const g2p::NumericalError& e) {
    std::fprintf(stderr, "g2p: training diverged: %s\n", e.what());
    return g2p::cli::kExitDiverged;
  } catch (const g2p::IoError& e) {
    std::fprintf(stderr, "g2p: %s\n", e.what());
    return g2p::cli::kExitIo;
  } catch (const g2p::ParseError& e) {
    std::fprintf(stderr, "g2p: %s\n", e.what());
    return g2p::cli::kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "g2p: %s\n", e.what());
    return g2p::cli::kExitOther;
  }
}
