#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "g2p/config.hpp"
#include "g2p/decoding.hpp"

// Experiment grid: (method x ratio mode) x seeds, each cell an isolated
// training + evaluation run. Cells are written as JSON files and merged into
// a seed-averaged table; the teacher-forcing baseline and the loss-based
// adaptive variant additionally produce accumulated-error curves.

namespace g2p {

// ---------------------------------------------------------------------------
// JSON round-trips for the report types
// ---------------------------------------------------------------------------

inline void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("per").get_to(r.per);
  j.at("wer").get_to(r.wer);
  j.at("heteronym_accuracy").get_to(r.heteronym_accuracy);
  j.at("phoneme_edits").get_to(r.phoneme_edits);
  j.at("ref_phonemes").get_to(r.ref_phonemes);
  j.at("word_edits").get_to(r.word_edits);
  j.at("ref_words").get_to(r.ref_words);
  j.at("heteronym_correct").get_to(r.heteronym_correct);
  j.at("heteronym_total").get_to(r.heteronym_total);
  j.at("n_examples").get_to(r.n_examples);
  j.at("n_invalid_utf8").get_to(r.n_invalid_utf8);
}

inline void to_json(nlohmann::json& j, const ExposureBiasReport& r) {
  j = nlohmann::json{{"steps", r.steps},       {"l_ar", r.l_ar},
                     {"l_tf", r.l_tf},         {"n_at_step", r.n_at_step},
                     {"ar_cum", r.ar_cum},     {"tf_cum", r.tf_cum},
                     {"accerr", r.accerr},     {"degenerate", r.degenerate},
                     {"token_mode", r.token_mode}};
}

inline void from_json(const nlohmann::json& j, ExposureBiasReport& r) {
  j.at("steps").get_to(r.steps);
  j.at("l_ar").get_to(r.l_ar);
  j.at("l_tf").get_to(r.l_tf);
  j.at("n_at_step").get_to(r.n_at_step);
  j.at("ar_cum").get_to(r.ar_cum);
  j.at("tf_cum").get_to(r.tf_cum);
  j.at("accerr").get_to(r.accerr);
  j.at("degenerate").get_to(r.degenerate);
  j.at("token_mode").get_to(r.token_mode);
}

inline void to_json(nlohmann::json& j, const EpochLog& e) {
  j = nlohmann::json{{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"val_loss", e.val_loss},
                     {"val_per", e.val_per},
                     {"sample_ratio", e.sample_ratio}};
}

inline void from_json(const nlohmann::json& j, EpochLog& e) {
  j.at("epoch").get_to(e.epoch);
  j.at("train_loss").get_to(e.train_loss);
  j.at("val_loss").get_to(e.val_loss);
  j.at("val_per").get_to(e.val_per);
  j.at("sample_ratio").get_to(e.sample_ratio);
}

// ---------------------------------------------------------------------------
// Grid cells
// ---------------------------------------------------------------------------

struct CellSpec {
  SamplingPolicy policy;
  std::string ratio_label;  // "none" for teacher forcing
  uint64_t seed = 1;

  std::string name() const {
    return to_string(policy.method) + "_" + ratio_label + "_seed" + std::to_string(seed);
  }
};

// Teacher forcing has no ratio axis: it contributes one cell per seed, other
// methods one per (ratio mode, seed).
inline std::vector<CellSpec> grid_cells(const RunConfig& cfg) {
  std::vector<CellSpec> cells;
  for (const auto& ms : cfg.experiment.methods) {
    const auto method = method_from_string(ms);
    std::vector<std::string> modes;
    if (method == SamplingPolicy::Method::TeacherForcing)
      modes = {"none"};
    else
      modes = cfg.experiment.ratio_modes;
    for (const auto& mode : modes) {
      for (uint64_t seed : cfg.seeds) {
        CellSpec cell;
        cell.policy = cfg.policy;
        cell.policy.method = method;
        if (mode != "none") cell.policy.ratio_mode = ratio_mode_from_string(mode);
        cell.ratio_label = mode;
        cell.seed = seed;
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

struct CellResult {
  std::string method;
  std::string ratio_mode;
  uint64_t seed = 1;
  bool ok = false;
  std::string error;

  int best_epoch = 0;
  double best_val_loss = 0.0;
  double final_val_per = 0.0;
  std::vector<EpochLog> log;

  EvalReport short_greedy, short_beam, long_greedy, long_beam;
  bool has_accerr = false;
  ExposureBiasReport accerr;
};

inline void to_json(nlohmann::json& j, const CellResult& c) {
  j = nlohmann::json{{"method", c.method},
                     {"ratio_mode", c.ratio_mode},
                     {"seed", c.seed},
                     {"ok", c.ok},
                     {"error", c.error},
                     {"best_epoch", c.best_epoch},
                     {"best_val_loss", c.best_val_loss},
                     {"final_val_per", c.final_val_per},
                     {"log", c.log},
                     {"short_greedy", eval_report_to_json(c.short_greedy)},
                     {"short_beam", eval_report_to_json(c.short_beam)},
                     {"long_greedy", eval_report_to_json(c.long_greedy)},
                     {"long_beam", eval_report_to_json(c.long_beam)},
                     {"has_accerr", c.has_accerr}};
  if (c.has_accerr) j["accerr"] = c.accerr;
}

inline void from_json(const nlohmann::json& j, CellResult& c) {
  j.at("method").get_to(c.method);
  j.at("ratio_mode").get_to(c.ratio_mode);
  j.at("seed").get_to(c.seed);
  j.at("ok").get_to(c.ok);
  j.at("error").get_to(c.error);
  j.at("best_epoch").get_to(c.best_epoch);
  j.at("best_val_loss").get_to(c.best_val_loss);
  j.at("final_val_per").get_to(c.final_val_per);
  j.at("log").get_to(c.log);
  j.at("short_greedy").get_to(c.short_greedy);
  j.at("short_beam").get_to(c.short_beam);
  j.at("long_greedy").get_to(c.long_greedy);
  j.at("long_beam").get_to(c.long_beam);
  j.at("has_accerr").get_to(c.has_accerr);
  if (c.has_accerr) j.at("accerr").get_to(c.accerr);
}

namespace detail {

inline std::vector<Example> take(const std::vector<Example>& v, int limit) {
  if (limit < 0 || static_cast<size_t>(limit) >= v.size()) return v;
  return {v.begin(), v.begin() + limit};
}

}  // namespace detail

// AccErr curves are tracked for the paper's two headline variants.
inline bool cell_tracks_accerr(const CellSpec& cell) {
  return cell.policy.method == SamplingPolicy::Method::TeacherForcing ||
         (cell.policy.method == SamplingPolicy::Method::LossBased &&
          cell.ratio_label == "adaptive");
}

// One isolated run: init by the cell seed, train, evaluate both test splits
// with greedy and the table's beam size. Failures are captured, not thrown.
inline CellResult run_cell(const RunConfig& cfg, const CorpusSplit& corpus,
                           const CellSpec& cell) {
  CellResult res;
  res.method = to_string(cell.policy.method);
  res.ratio_mode = cell.ratio_label;
  res.seed = cell.seed;
  try {
    auto m = init_model<float>(cfg.model, cell.seed);
    TrainConfig tcfg = cfg.train;
    tcfg.seed = cell.seed;
    const auto out = train(m, corpus.train, corpus.validation, tcfg, cell.policy);
    res.best_epoch = out.best_epoch;
    res.best_val_loss = out.best_val_loss;
    res.final_val_per = out.log.empty() ? 0.0 : out.log.back().val_per;
    res.log = out.log;

    const auto shorts = detail::take(corpus.test_short, cfg.experiment.eval_limit_short);
    const auto longs = detail::take(corpus.test_long, cfg.experiment.eval_limit_long);
    const int beam = cfg.experiment.beam_size;
    res.short_greedy = score_corpus(shorts, decode_corpus(m, shorts, 1, cfg.decode.max_len));
    res.short_beam = score_corpus(shorts, decode_corpus(m, shorts, beam, cfg.decode.max_len));
    res.long_greedy = score_corpus(longs, decode_corpus(m, longs, 1, cfg.decode.max_len));
    res.long_beam = score_corpus(longs, decode_corpus(m, longs, beam, cfg.decode.max_len));

    if (cell_tracks_accerr(cell)) {
      const auto probe = detail::take(corpus.test_long, cfg.experiment.accerr_limit);
      res.accerr = accerr_curve(m, encode_examples(probe, m.cfg), cfg.experiment.accerr_l_max);
      res.has_accerr = true;
    }
    res.ok = true;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  return res;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct TableRow {
  std::string method;
  std::string ratio_mode;
  int seeds_ok = 0;
  int seeds_total = 0;
  // seed means over successful cells; NaN when no seed succeeded
  double per_short_greedy = 0, wer_short_greedy = 0;
  double per_short_beam = 0, wer_short_beam = 0;
  double per_long_greedy = 0, wer_long_greedy = 0;
  double per_long_beam = 0, wer_long_beam = 0;
  double het_short_greedy = 0, het_long_greedy = 0;
};

inline std::vector<TableRow> aggregate_cells(const std::vector<CellResult>& cells) {
  // row order follows first appearance, i.e. the configured grid order
  std::vector<TableRow> rows;
  const auto row_of = [&](const CellResult& c) -> TableRow& {
    for (auto& r : rows)
      if (r.method == c.method && r.ratio_mode == c.ratio_mode) return r;
    rows.push_back(TableRow{});
    rows.back().method = c.method;
    rows.back().ratio_mode = c.ratio_mode;
    return rows.back();
  };
  for (const auto& c : cells) {
    auto& r = row_of(c);
    ++r.seeds_total;
    if (!c.ok) continue;
    ++r.seeds_ok;
    r.per_short_greedy += c.short_greedy.per;
    r.wer_short_greedy += c.short_greedy.wer;
    r.per_short_beam += c.short_beam.per;
    r.wer_short_beam += c.short_beam.wer;
    r.per_long_greedy += c.long_greedy.per;
    r.wer_long_greedy += c.long_greedy.wer;
    r.per_long_beam += c.long_beam.per;
    r.wer_long_beam += c.long_beam.wer;
    r.het_short_greedy += c.short_greedy.heteronym_accuracy;
    r.het_long_greedy += c.long_greedy.heteronym_accuracy;
  }
  for (auto& r : rows) {
    const double n = r.seeds_ok;
    double* fields[] = {&r.per_short_greedy, &r.wer_short_greedy, &r.per_short_beam,
                        &r.wer_short_beam,   &r.per_long_greedy,  &r.wer_long_greedy,
                        &r.per_long_beam,    &r.wer_long_beam,    &r.het_short_greedy,
                        &r.het_long_greedy};
    for (double* f : fields) *f = r.seeds_ok ? *f / n : std::nan("");
  }
  return rows;
}

// Table-1 layout: one row per (method, ratio mode), PER/WER column groups for
// each (split, decoder) pair.
inline std::string table_csv(const std::vector<TableRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "method,ratio_mode,seeds_ok,seeds_total,"
        "per_short_greedy,wer_short_greedy,per_short_beam,wer_short_beam,"
        "per_long_greedy,wer_long_greedy,per_long_beam,wer_long_beam\n";
  for (const auto& r : rows)
    os << r.method << ',' << r.ratio_mode << ',' << r.seeds_ok << ',' << r.seeds_total << ','
       << r.per_short_greedy << ',' << r.wer_short_greedy << ',' << r.per_short_beam << ','
       << r.wer_short_beam << ',' << r.per_long_greedy << ',' << r.wer_long_greedy << ','
       << r.per_long_beam << ',' << r.wer_long_beam << '\n';
  return os.str();
}

inline void to_json(nlohmann::json& j, const TableRow& r) {
  j = nlohmann::json{{"method", r.method},
                     {"ratio_mode", r.ratio_mode},
                     {"seeds_ok", r.seeds_ok},
                     {"seeds_total", r.seeds_total},
                     {"per_short_greedy", r.per_short_greedy},
                     {"wer_short_greedy", r.wer_short_greedy},
                     {"per_short_beam", r.per_short_beam},
                     {"wer_short_beam", r.wer_short_beam},
                     {"per_long_greedy", r.per_long_greedy},
                     {"wer_long_greedy", r.wer_long_greedy},
                     {"per_long_beam", r.per_long_beam},
                     {"wer_long_beam", r.wer_long_beam},
                     {"het_short_greedy", r.het_short_greedy},
                     {"het_long_greedy", r.het_long_greedy}};
}

// Seed-mean AccErr curves for the two tracked variants over the common prefix
// of steps measured in every contributing cell. Columns carry the ideal
// no-compounding reference AccErr = l.
inline std::string accerr_summary_csv(const std::vector<CellResult>& cells) {
  std::vector<const ExposureBiasReport*> tf, lb;
  for (const auto& c : cells) {
    if (!c.ok || !c.has_accerr) continue;
    if (c.method == "teacher_forcing") tf.push_back(&c.accerr);
    if (c.method == "loss_based" && c.ratio_mode == "adaptive") lb.push_back(&c.accerr);
  }
  size_t n_steps = std::string::npos;
  for (const auto* r : tf) n_steps = std::min(n_steps, r->steps.size());
  for (const auto* r : lb) n_steps = std::min(n_steps, r->steps.size());
  if (n_steps == std::string::npos) n_steps = 0;

  const auto mean_at = [](const std::vector<const ExposureBiasReport*>& rs, size_t i) {
    if (rs.empty()) return std::nan("");
    double s = 0.0;
    for (const auto* r : rs) s += r->accerr[i];
    return s / static_cast<double>(rs.size());
  };

  std::ostringstream os;
  os << std::setprecision(17);
  os << "l,accerr_teacher_forcing,accerr_loss_based_adaptive,ideal\n";
  for (size_t i = 0; i < n_steps; ++i)
    os << (i + 1) << ',' << mean_at(tf, i) << ',' << mean_at(lb, i) << ',' << (i + 1) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Grid execution
// ---------------------------------------------------------------------------

struct ExperimentOutput {
  std::vector<CellResult> cells;
  std::vector<TableRow> table;
};

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("short write: " + path);
}

inline void write_cell_json(const std::string& path, const CellResult& res) {
  nlohmann::json j = res;
  write_text_file(path, j.dump(2) + "\n");
}

inline CellResult read_cell_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open cell result: " + path);
  nlohmann::json j;
  try {
    in >> j;
    return j.get<CellResult>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// Opt-in parallel mode: each pending cell runs in a forked worker that shares
// nothing with its siblings and reports through its result file.
inline void run_cells_parallel(const RunConfig& cfg, const CorpusSplit& corpus,
                               const std::vector<CellSpec>& cells,
                               const std::vector<std::string>& paths) {
  const size_t jobs = static_cast<size_t>(cfg.experiment.jobs);
  std::vector<std::pair<pid_t, size_t>> live;

  const auto reap_one = [&]() {
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) throw IoError("waitpid failed while running experiment cells");
    for (size_t k = 0; k < live.size(); ++k) {
      if (live[k].first != pid) continue;
      const size_t idx = live[k].second;
      live.erase(live.begin() + static_cast<long>(k));
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        CellResult crash;
        crash.method = to_string(cells[idx].policy.method);
        crash.ratio_mode = cells[idx].ratio_label;
        crash.seed = cells[idx].seed;
        crash.ok = false;
        crash.error = "worker process failed for cell " + cells[idx].name();
        write_cell_json(paths[idx], crash);
      }
      return;
    }
    // a child we did not spawn (none exist in this process) — ignore
  };

  for (size_t i = 0; i < cells.size(); ++i) {
    while (live.size() >= jobs) reap_one();
    const pid_t pid = fork();
    if (pid < 0) throw IoError("fork failed while running experiment cells");
    if (pid == 0) {
      int code = 0;
      try {
        write_cell_json(paths[i], run_cell(cfg, corpus, cells[i]));
      } catch (...) {
        code = 1;
      }
      _exit(code);
    }
    live.emplace_back(pid, i);
  }
  while (!live.empty()) reap_one();
}

}  // namespace detail

// Runs the whole grid and writes, under cfg.out_dir: cells/<cell>.json,
// logs/train_<cell>.csv, accerr_<cell>.csv for tracked variants,
// accerr_summary.csv, table.csv, and table.json.
inline ExperimentOutput run_experiment(const RunConfig& cfg, const CorpusSplit& corpus) {
  const auto cells = grid_cells(cfg);
  const std::string dir = cfg.out_dir;
  std::filesystem::create_directories(dir + "/cells");
  std::filesystem::create_directories(dir + "/logs");

  std::vector<std::string> paths;
  paths.reserve(cells.size());
  for (const auto& cell : cells) paths.push_back(dir + "/cells/" + cell.name() + ".json");

  if (cfg.experiment.jobs > 1) {
    detail::run_cells_parallel(cfg, corpus, cells, paths);
  } else {
    for (size_t i = 0; i < cells.size(); ++i)
      detail::write_cell_json(paths[i], run_cell(cfg, corpus, cells[i]));
  }

  ExperimentOutput out;
  out.cells.reserve(cells.size());
  for (size_t i = 0; i < cells.size(); ++i) {
    out.cells.push_back(detail::read_cell_json(paths[i]));
    const auto& res = out.cells.back();
    if (res.ok) {
      detail::write_text_file(dir + "/logs/train_" + cells[i].name() + ".csv",
                              train_log_csv(res.log));
      if (res.has_accerr) {
        std::ostringstream os;
        os << std::setprecision(17);
        os << "l,L_AR_cum,L_TF_cum,AccErr,n_examples_at_l,ideal\n";
        for (size_t k = 0; k < res.accerr.steps.size(); ++k)
          os << res.accerr.steps[k] << ',' << res.accerr.ar_cum[k] << ',' << res.accerr.tf_cum[k]
             << ',' << res.accerr.accerr[k] << ',' << res.accerr.n_at_step[k] << ','
             << res.accerr.steps[k] << '\n';
        detail::write_text_file(dir + "/accerr_" + cells[i].name() + ".csv", os.str());
      }
    }
  }

  out.table = aggregate_cells(out.cells);
  detail::write_text_file(dir + "/table.csv", table_csv(out.table));
  detail::write_text_file(dir + "/accerr_summary.csv", accerr_summary_csv(out.cells));

  nlohmann::json tj;
  tj["rows"] = out.table;
  tj["cells"] = out.cells;
  detail::write_text_file(dir + "/table.json", tj.dump(2) + "\n");
  return out;
}

}  // namespace g2p
