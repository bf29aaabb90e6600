#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "g2p/cli.hpp"

using namespace g2p;
namespace fs = std::filesystem;

namespace {

// Every binary-level test runs inside this scratch directory.
const fs::path& scratch_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::current_path() / "cli_scratch";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct RunResult {
  int code = -1;
  std::string out;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  const std::string cmd =
      "cd " + scratch_dir().string() + " && " + G2P_CLI_PATH + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  RunResult r;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  REQUIRE(out.good());
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

const char* kMicroConfig = R"({
  "model": {"d_model": 16, "n_heads": 2, "n_enc_layers": 1, "n_dec_layers": 1, "d_ffn": 32},
  "train": {"epochs": 2, "batch_size": 16, "lr": 1e-3, "eval_subset": 8},
  "gen": {"n_words": 40, "n_heteronyms": 4, "n_train": 64, "n_valid": 16, "n_test": 8},
  "corpus_dir": "corpus",
  "out_dir": "out"
})";

// Shared setup: corpus + one trained micro checkpoint, built once.
const fs::path& trained_fixture() {
  static const fs::path cfg_path = [] {
    write_file(scratch_dir() / "cfg.json", kMicroConfig);
    REQUIRE(run_cli("gen --config cfg.json").code == 0);
    REQUIRE(run_cli("train --config cfg.json").code == 0);
    return scratch_dir() / "cfg.json";
  }();
  return cfg_path;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig parsing and validation
// ---------------------------------------------------------------------------

TEST_CASE("run config starts from module defaults and round-trips JSON") {
  RunConfig cfg;
  REQUIRE(cfg.gen.n_train == 8000);
  REQUIRE(cfg.gen.n_valid == 500);
  REQUIRE(cfg.gen.n_test == 500);
  REQUIRE(cfg.train.eval_subset == 128);
  REQUIRE(cfg.model.d_model == 128);
  REQUIRE(cfg.seeds == std::vector<uint64_t>{1});

  cfg.model.d_model = 64;
  cfg.train.lr = 0.5;
  cfg.policy.method = SamplingPolicy::Method::LossBased;
  cfg.policy.ratio_mode = SamplingPolicy::RatioMode::Adaptive;
  cfg.seeds = {7, 8};
  cfg.experiment.jobs = 3;
  nlohmann::json j = cfg;
  const auto back = j.get<RunConfig>();
  REQUIRE(back.model.d_model == 64);
  REQUIRE(back.train.lr == 0.5);
  REQUIRE(back.policy.method == SamplingPolicy::Method::LossBased);
  REQUIRE(back.policy.ratio_mode == SamplingPolicy::RatioMode::Adaptive);
  REQUIRE(back.seeds == std::vector<uint64_t>{7, 8});
  REQUIRE(back.experiment.jobs == 3);
}

TEST_CASE("partial config files keep defaults for unset fields") {
  const auto j = nlohmann::json::parse(R"({"train": {"lr": 0.25}, "gen": {"n_train": 9}})");
  const auto cfg = j.get<RunConfig>();
  REQUIRE(cfg.train.lr == 0.25);
  REQUIRE(cfg.train.epochs == 30);      // untouched default
  REQUIRE(cfg.gen.n_train == 9);
  REQUIRE(cfg.gen.n_valid == 500);      // module default survives a partial gen
  REQUIRE(cfg.model.d_model == 128);
}

TEST_CASE("config typos and invalid values are usage errors") {
  REQUIRE_THROWS_AS(nlohmann::json::parse(R"({"trian": {}})").get<RunConfig>(), ConfigError);
  REQUIRE_THROWS_AS(nlohmann::json::parse(R"({"train": {"lrate": 1}})").get<RunConfig>(),
                    ConfigError);
  REQUIRE_THROWS_AS(nlohmann::json::parse(R"({"policy": {"method": "magic"}})").get<RunConfig>(),
                    ConfigError);

  RunConfig cfg;
  cfg.seeds.clear();
  REQUIRE_THROWS_AS(cfg.validate(false), ConfigError);
  cfg = RunConfig{};
  cfg.decode.beam_size = 0;
  REQUIRE_THROWS_AS(cfg.validate(false), ConfigError);
  cfg = RunConfig{};
  cfg.gen.n_train = 0;
  REQUIRE_THROWS_AS(cfg.validate(false), ConfigError);
  cfg = RunConfig{};
  cfg.experiment.methods = {"telepathy"};
  REQUIRE_THROWS_AS(cfg.validate(false), ConfigError);
  cfg = RunConfig{};
  cfg.corpus_dir = "definitely/not/there";
  REQUIRE_THROWS_AS(cfg.validate(true), ConfigError);
  REQUIRE_NOTHROW(cfg.validate(false));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("checkpoints round-trip parameters bitwise") {
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.n_enc_layers = 1;
  mc.n_dec_layers = 1;
  mc.d_ffn = 32;
  auto m = init_model<float>(mc, 5);
  const auto path = (scratch_dir() / "ckpt_roundtrip.bin").string();
  save_checkpoint(path, m);
  auto back = load_checkpoint<float>(path);
  REQUIRE(back.cfg.d_model == 16);
  REQUIRE(back.cfg.target_mode == m.cfg.target_mode);
  REQUIRE(back.params().size() == m.params().size());
  for (size_t i = 0; i < m.params().size(); ++i) {
    REQUIRE(back.params()[i].first == m.params()[i].first);
    REQUIRE(back.params()[i].second.data() == m.params()[i].second.data());
  }
}

TEST_CASE("corrupt checkpoints are load errors") {
  const auto good = (scratch_dir() / "ckpt_good.bin").string();
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.n_enc_layers = 1;
  mc.n_dec_layers = 1;
  mc.d_ffn = 32;
  save_checkpoint(good, init_model<float>(mc, 5));

  SECTION("wrong magic") {
    auto bytes = read_file(good);
    bytes[0] = 'X';
    const auto bad = scratch_dir() / "ckpt_magic.bin";
    write_file(bad, bytes);
    REQUIRE_THROWS_AS(load_checkpoint<float>(bad.string()), ParseError);
  }
  SECTION("truncated data") {
    auto bytes = read_file(good);
    bytes.resize(bytes.size() - 64);
    const auto bad = scratch_dir() / "ckpt_trunc.bin";
    write_file(bad, bytes);
    REQUIRE_THROWS_AS(load_checkpoint<float>(bad.string()), ParseError);
  }
  SECTION("trailing garbage") {
    auto bytes = read_file(good) + "extra";
    const auto bad = scratch_dir() / "ckpt_extra.bin";
    write_file(bad, bytes);
    REQUIRE_THROWS_AS(load_checkpoint<float>(bad.string()), ParseError);
  }
  SECTION("not a checkpoint at all") {
    const auto bad = scratch_dir() / "ckpt_junk.bin";
    write_file(bad, "hello");
    REQUIRE_THROWS_AS(load_checkpoint<float>(bad.string()), ParseError);
  }
}

// ---------------------------------------------------------------------------
// Binary: usage and exit codes
// ---------------------------------------------------------------------------

TEST_CASE("usage errors exit 2, help exits 0") {
  REQUIRE(run_cli("").code == cli::kExitUsage);             // missing subcommand
  REQUIRE(run_cli("frobnicate").code == cli::kExitUsage);   // unknown subcommand
  REQUIRE(run_cli("gen --bogus-flag").code == cli::kExitUsage);
  REQUIRE(run_cli("--help").code == 0);
  REQUIRE(run_cli("eval --help").code == 0);
}

TEST_CASE("missing or malformed inputs exit 3") {
  REQUIRE(run_cli("train --config nonexistent.json").code == cli::kExitIo);
  write_file(scratch_dir() / "broken.json", "{not json");
  REQUIRE(run_cli("train --config broken.json").code == cli::kExitIo);
  // unreadable corpus: config validates paths before use
  write_file(scratch_dir() / "noc.json", R"({"corpus_dir": "missing_corpus"})");
  REQUIRE(run_cli("train --config noc.json").code == cli::kExitUsage);
}

TEST_CASE("gen: deterministic files, usage guard on sizes") {
  write_file(scratch_dir() / "gen.json", kMicroConfig);
  auto r1 = run_cli("gen --config gen.json --corpus corpus_a");
  REQUIRE(r1.code == 0);
  REQUIRE(r1.out.find("train 64") != std::string::npos);
  for (const char* f :
       {"train.jsonl", "validation.jsonl", "test_short.jsonl", "test_long.jsonl",
        "lexicon.json", "manifest.json"})
    REQUIRE(fs::exists(scratch_dir() / "corpus_a" / f));

  // same seed: byte-identical; different seed: different examples
  REQUIRE(run_cli("gen --config gen.json --corpus corpus_b").code == 0);
  for (const char* f :
       {"train.jsonl", "validation.jsonl", "test_short.jsonl", "test_long.jsonl",
        "lexicon.json", "manifest.json"})
    REQUIRE(read_file(scratch_dir() / "corpus_a" / f) ==
            read_file(scratch_dir() / "corpus_b" / f));
  REQUIRE(run_cli("gen --config gen.json --corpus corpus_c --seed 99").code == 0);
  REQUIRE(read_file(scratch_dir() / "corpus_a" / "train.jsonl") !=
          read_file(scratch_dir() / "corpus_c" / "train.jsonl"));

  REQUIRE(run_cli("gen --config gen.json --corpus corpus_zero --n-train 0").code ==
          cli::kExitUsage);
}

// ---------------------------------------------------------------------------
// Binary: train / eval / accerr
// ---------------------------------------------------------------------------

TEST_CASE("train writes checkpoint, per-epoch log, and summary") {
  trained_fixture();
  REQUIRE(fs::exists(scratch_dir() / "out/checkpoint.bin"));
  REQUIRE(fs::exists(scratch_dir() / "out/train_summary.json"));
  REQUIRE(fs::exists(scratch_dir() / "out/config_used.json"));
  const auto log = read_file(scratch_dir() / "out/train_log.csv");
  REQUIRE(log.rfind("epoch,train_loss,val_loss,val_per,sample_ratio\n", 0) == 0);
  REQUIRE(count_lines(log) == 3);  // header + one row per epoch
}

TEST_CASE("identical config and seed reproduce every artifact bitwise") {
  trained_fixture();
  REQUIRE(run_cli("train --config cfg.json --out out_again").code == 0);
  REQUIRE(read_file(scratch_dir() / "out/train_log.csv") ==
          read_file(scratch_dir() / "out_again/train_log.csv"));
  REQUIRE(read_file(scratch_dir() / "out/checkpoint.bin") ==
          read_file(scratch_dir() / "out_again/checkpoint.bin"));
  REQUIRE(read_file(scratch_dir() / "out/train_summary.json") ==
          read_file(scratch_dir() / "out_again/train_summary.json"));
}

TEST_CASE("diverging training exits with the divergence code") {
  trained_fixture();
  const std::string bad = std::string(kMicroConfig);
  write_file(scratch_dir() / "diverge.json",
             nlohmann::json::parse(bad)
                 .patch(nlohmann::json::parse(
                     R"([{"op":"replace","path":"/train/lr","value":1e9}])"))
                 .dump());
  const auto r = run_cli("train --config diverge.json --out div_out --epochs 12");
  REQUIRE(r.code == cli::kExitDiverged);
  REQUIRE(r.out.find("diverged at epoch") != std::string::npos);
}

TEST_CASE("eval emits the report fields and honors --hyps") {
  trained_fixture();
  const auto r = run_cli("eval --config cfg.json --split validation --limit 8");
  REQUIRE(r.code == 0);
  const auto greedy_bytes = read_file(scratch_dir() / "out/eval_validation_greedy.json");
  const auto j = nlohmann::json::parse(greedy_bytes);
  for (const char* field : {"per", "wer", "heteronym_accuracy", "n_examples", "split", "decode"})
    REQUIRE(j.contains(field));
  REQUIRE(j["n_examples"] == 8);
  REQUIRE(j["decode"] == "greedy");

  // gold hypotheses score zero error through the same path
  const auto refs = detail::read_split_jsonl((scratch_dir() / "corpus/validation.jsonl").string());
  std::string gold;
  for (const auto& ex : refs) gold += join_phonemes(ex.phonemes) + "\n";
  write_file(scratch_dir() / "gold.txt", gold);
  const auto rg = run_cli("eval --config cfg.json --split validation --hyps gold.txt");
  REQUIRE(rg.code == 0);
  const auto jg = nlohmann::json::parse(read_file(scratch_dir() / "out/eval_validation_file.json"));
  REQUIRE(jg["per"] == 0.0);
  REQUIRE(jg["wer"] == 0.0);
  REQUIRE(jg["heteronym_accuracy"] == 1.0);

  // beam_size 1 goes through the greedy path and reproduces the same report
  const auto rb = run_cli("eval --config cfg.json --split validation --limit 8 --beam 1");
  REQUIRE(rb.code == 0);
  REQUIRE(read_file(scratch_dir() / "out/eval_validation_greedy.json") == greedy_bytes);

  REQUIRE(run_cli("eval --config cfg.json --split nowhere").code == cli::kExitUsage);
  REQUIRE(run_cli("eval --config cfg.json --ckpt no_such.bin").code == cli::kExitIo);
}

TEST_CASE("accerr caps rows at l_max, carries the ideal column, reruns identically") {
  trained_fixture();
  REQUIRE(run_cli("accerr --config cfg.json --split test_long --l-max 10 --limit 4").code == 0);
  const auto csv = read_file(scratch_dir() / "out/accerr_test_long.csv");
  REQUIRE(csv.rfind("l,L_AR_cum,L_TF_cum,AccErr,n_examples_at_l,ideal\n", 0) == 0);
  REQUIRE(count_lines(csv) <= 11);  // header + at most l_max rows

  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  int row = 0;
  while (std::getline(is, line)) {
    ++row;
    // first field l and last field ideal agree
    const auto first = line.substr(0, line.find(','));
    const auto last = line.substr(line.rfind(',') + 1);
    REQUIRE(first == std::to_string(row));
    REQUIRE(last == first);
  }
  REQUIRE(row >= 1);

  REQUIRE(run_cli("accerr --config cfg.json --split test_long --l-max 10 --limit 4").code == 0);
  REQUIRE(read_file(scratch_dir() / "out/accerr_test_long.csv") == csv);

  REQUIRE(run_cli("accerr --config cfg.json --l-max 0").code == cli::kExitUsage);
}

// ---------------------------------------------------------------------------
// Binary: experiment
// ---------------------------------------------------------------------------

TEST_CASE("a degenerate single-cell grid yields one table row") {
  trained_fixture();
  write_file(scratch_dir() / "exp1.json",
             nlohmann::json::parse(kMicroConfig)
                 .patch(nlohmann::json::parse(R"([
                   {"op":"add","path":"/out_dir","value":"exp1_out"},
                   {"op":"add","path":"/experiment","value":{
                     "methods":["teacher_forcing"],"ratio_modes":["fixed"],
                     "beam_size":2,"eval_limit_short":4,"eval_limit_long":4,
                     "accerr_limit":2,"accerr_l_max":20}}
                 ])"))
                 .dump());
  const auto r = run_cli("experiment --config exp1.json --seed 1");
  REQUIRE(r.code == 0);
  const auto table = read_file(scratch_dir() / "exp1_out/table.csv");
  REQUIRE(count_lines(table) == 2);  // header + exactly one row
  REQUIRE(table.find("teacher_forcing,none,1,1") != std::string::npos);

  const auto tj = nlohmann::json::parse(read_file(scratch_dir() / "exp1_out/table.json"));
  REQUIRE(tj["rows"].size() == 1);
  REQUIRE(tj["cells"].size() == 1);
  REQUIRE(tj["cells"][0]["ok"] == true);
  REQUIRE(tj["cells"][0]["log"].size() == 2);

  // the baseline tracks an AccErr curve
  REQUIRE(fs::exists(scratch_dir() / "exp1_out/accerr_teacher_forcing_none_seed1.csv"));
  REQUIRE(fs::exists(scratch_dir() / "exp1_out/accerr_summary.csv"));
}

TEST_CASE("parallel cells produce the same table as sequential cells") {
  trained_fixture();
  const auto base = nlohmann::json::parse(kMicroConfig);
  auto mk = [&](const std::string& out, int jobs) {
    auto j = base;
    j["out_dir"] = out;
    j["seeds"] = {1, 2};
    j["experiment"] = {{"methods", {"teacher_forcing", "loss_based"}},
                       {"ratio_modes", {"adaptive"}},
                       {"beam_size", 2},
                       {"eval_limit_short", 4},
                       {"eval_limit_long", 4},
                       {"accerr_limit", 2},
                       {"accerr_l_max", 20},
                       {"jobs", jobs}};
    return j.dump();
  };
  write_file(scratch_dir() / "exp_seq.json", mk("exp_seq", 1));
  write_file(scratch_dir() / "exp_par.json", mk("exp_par", 2));
  REQUIRE(run_cli("experiment --config exp_seq.json").code == 0);
  REQUIRE(run_cli("experiment --config exp_par.json").code == 0);
  REQUIRE(read_file(scratch_dir() / "exp_seq/table.csv") ==
          read_file(scratch_dir() / "exp_par/table.csv"));
  REQUIRE(read_file(scratch_dir() / "exp_seq/accerr_summary.csv") ==
          read_file(scratch_dir() / "exp_par/accerr_summary.csv"));
  // four cells, each recorded
  REQUIRE(nlohmann::json::parse(read_file(scratch_dir() / "exp_par/table.json"))["cells"].size() ==
          4);
}
