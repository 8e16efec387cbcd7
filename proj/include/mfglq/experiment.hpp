#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mfglq/analysis.hpp"
#include "mfglq/config.hpp"
#include "mfglq/csv.hpp"
#include "mfglq/errors.hpp"
#include "mfglq/fictitious_play.hpp"
#include "mfglq/noise.hpp"
#include "mfglq/parallel.hpp"
#include "mfglq/reference.hpp"

namespace mfglq {

inline constexpr const char* kVersion = "0.1.0";

struct RunOptions {
  std::string out_dir;  // overrides the config when non-empty
  int threads = 0;
  bool no_cache = false;
};

namespace detail {

struct PhaseTimer {
  std::vector<std::pair<std::string, double>> phases;
  std::chrono::steady_clock::time_point mark = std::chrono::steady_clock::now();

  void lap(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    phases.emplace_back(
        name, std::chrono::duration<double, std::milli>(now - mark).count());
    mark = now;
  }
};

inline std::filesystem::path out_dir(const ExperimentConfig& cfg,
                                     const RunOptions& opt) {
  return std::filesystem::path(opt.out_dir.empty() ? cfg.out_dir : opt.out_dir);
}

inline NoiseBank obtain_bank(const ExperimentConfig& cfg, const PlayConfig& play,
                             const RunOptions& opt,
                             const std::filesystem::path& dir) {
  const std::uint64_t key = Fnv1a{}
                                .str("bank-key")
                                .u64(play.seed)
                                .i64(play.M)
                                .i64(play.N)
                                .i64(play.p)
                                .i64(play.model.d)
                                .value();
  const auto file = dir / "cache" / ("bank_" + hex16(key) + ".bin");
  if (!opt.no_cache) {
    NoiseBank cached(0, 1, 1, 1, 1, {}, {});
    if (load_noise_bank(file, play.seed, play.M, play.N, play.p, play.model.d,
                        &cached))
      return cached;
  }
  NoiseBank bank =
      sample_noise_bank(play.seed, play.M, play.N, play.p, play.model.d);
  if (!opt.no_cache) {
    std::filesystem::create_directories(file.parent_path());
    save_noise_bank(bank, file);
  }
  return bank;
}

inline ReferenceConfig reference_config(const PlayConfig& play) {
  ReferenceConfig rc;
  rc.model = play.model;
  rc.p = play.p;
  rc.N = play.N;
  rc.D = play.D;
  rc.picard_iters = play.picard_iters;
  rc.clamp = play.clamp;
  rc.standardizer_mode = play.standardizer_mode;
  return rc;
}

inline ReferenceSolution obtain_reference(const PlayConfig& play,
                                          const NoiseBank& bank,
                                          const RunOptions& opt,
                                          const std::filesystem::path& dir) {
  const ReferenceConfig rc = reference_config(play);
  const std::uint64_t fp = rc.fingerprint(bank.fingerprint());
  const auto file = dir / "cache" / ("ref_" + hex16(fp) + ".bin");
  const int L = MultiIndexSet::total_degree(play.model.d, play.D).size();
  (void)L;
  if (!opt.no_cache) {
    ReferenceSolution cached;
    if (load_reference(file, fp, play.N, play.p, play.model.d, play.D, &cached))
      return cached;
  }
  const TimeGrid grid(play.model.T, play.p);
  const RiccatiTable eta = continuous_riccati(play.model.Q, play.model.R, grid);
  ReferenceSolution sol = solve_reference(rc, bank, eta);
  if (!opt.no_cache) {
    std::filesystem::create_directories(file.parent_path());
    save_reference(sol, file);
  }
  return sol;
}

inline void write_history_csv(const std::filesystem::path& file,
                              const ExperimentConfig& cfg,
                              const std::vector<IterationRecord>& history) {
  CsvWriter csv;
  csv.comment_header("config=" + hex16(cfg.fingerprint()) +
                     " experiment=" + cfg.name);
  csv.field(std::string("n"))
      .field(std::string("cost_raw"))
      .field(std::string("cost_renormalized"))
      .field(std::string("l2_error"));
  csv.end_row();
  for (const auto& rec : history) {
    csv.field(rec.n).field(rec.cost_raw).field(rec.cost_renormalized);
    csv.field(rec.l2_error);  // blank when NaN
    csv.end_row();
  }
  write_file_atomic(file, csv.str());
}

inline void write_manifest(const std::filesystem::path& file,
                           const ExperimentConfig& cfg,
                           const PhaseTimer& timer,
                           const std::vector<IterationRecord>* history) {
  std::ostringstream out;
  out << "experiment: " << cfg.name << "\n";
  out << "kind: " << cfg.kind << "\n";
  out << "config_fingerprint: " << hex16(cfg.fingerprint()) << "\n";
  out << "seed: " << cfg.play.seed << "\n";
  out << "version: " << kVersion << "\n";
  out << "workers: " << effective_workers() << "\n";
  for (const auto& [name, ms] : timer.phases)
    out << "wall_ms." << name << ": " << ms << "\n";
  if (history) {
    double total = 0.0;
    for (const auto& rec : *history) total += rec.wall_ms;
    out << "wall_ms.iterations_total: " << total << "\n";
  }
  write_file_atomic(file, out.str());
}

inline bool error_metric_enabled(const ExperimentConfig& cfg) {
  if (cfg.error_metric == "off") return false;
  const bool available =
      cfg.play.scheme != Scheme::idio_only && cfg.play.model.eps > 0.0;
  if (cfg.error_metric == "on") {
    if (!available)
      throw config_error(
          "run.error=on but no reference solution exists for this scheme");
    return true;
  }
  return available && cfg.schedule.empty();
}

}  // namespace detail

/// `run` verb for kind = play: bank, optional reference, fictitious play,
/// history CSV and manifest.
inline void run_play_experiment(const ExperimentConfig& cfg,
                                const RunOptions& opt) {
  const auto dir = detail::out_dir(cfg, opt);
  detail::PhaseTimer timer;
  const NoiseBank bank = detail::obtain_bank(cfg, cfg.play, opt, dir);
  timer.lap("bank");

  ErrorMetric metric;
  std::optional<ReferenceSolution> ref;
  if (detail::error_metric_enabled(cfg)) {
    ref = detail::obtain_reference(cfg.play, bank, opt, dir);
    timer.lap("reference");
    const std::uint64_t bank_fp = bank.fingerprint();
    metric = [&ref, bank_fp](const EnvironmentField& env,
                             const InterceptField& h) {
      return l2_error(env, h, *ref, bank_fp);
    };
  }

  const PlayState state = run_play(cfg.play, bank, metric);
  timer.lap("play");

  detail::write_history_csv(dir / (cfg.name + "_history.csv"), cfg,
                            state.history);
  if (ref) {
    CsvWriter csv;
    csv.comment_header("config=" + hex16(cfg.fingerprint()) +
                       " experiment=" + cfg.name);
    csv.field(std::string("cost_raw")).field(std::string("cost_renormalized"));
    csv.end_row();
    csv.field(ref->cost_raw).field(ref->cost_renormalized);
    csv.end_row();
    write_file_atomic(dir / (cfg.name + "_refcost.csv"), csv.str());
  }
  detail::write_manifest(dir / (cfg.name + "_manifest.txt"), cfg, timer,
                         &state.history);
}

/// `run` verb for kind = costcompare: the common-noise-only and the
/// idiosyncratic-only loops back to back on matched budgets, paired cost CSV.
inline void run_costcompare(const ExperimentConfig& cfg, const RunOptions& opt) {
  const auto dir = detail::out_dir(cfg, opt);
  detail::PhaseTimer timer;

  PlayConfig common = cfg.play;
  common.scheme = Scheme::common_only;
  common.M = 1;
  common.model.sigma = 0.0;
  if (!(common.model.eps > 0.0)) common.model.eps = 1.0;
  common.validate();

  PlayConfig idio = cfg.play;
  idio.scheme = Scheme::idio_only;
  idio.M = cfg.play.N;  // matched particle budget
  idio.N = 1;
  idio.D = 0;
  idio.model.sigma = cfg.play.model.sigma > 0.0 ? cfg.play.model.sigma : 1.0;
  idio.model.eps = 0.0;
  idio.validate();

  const NoiseBank bank_common = detail::obtain_bank(cfg, common, opt, dir);
  const ReferenceSolution ref =
      detail::obtain_reference(common, bank_common, opt, dir);
  timer.lap("reference");
  const std::uint64_t bank_fp = bank_common.fingerprint();
  const PlayState run3 = run_play(
      common, bank_common,
      [&ref, bank_fp](const EnvironmentField& env, const InterceptField& h) {
        return l2_error(env, h, ref, bank_fp);
      });
  timer.lap("common_only");

  const NoiseBank bank_idio = detail::obtain_bank(cfg, idio, opt, dir);
  const PlayState run4 = run_play(idio, bank_idio);
  timer.lap("idio_only");

  CsvWriter csv;
  csv.comment_header("config=" + hex16(cfg.fingerprint()) +
                     " experiment=" + cfg.name);
  csv.field(std::string("n"))
      .field(std::string("common_cost_raw"))
      .field(std::string("common_cost_renormalized"))
      .field(std::string("common_l2_error"))
      .field(std::string("idio_cost_raw"))
      .field(std::string("idio_cost_renormalized"));
  csv.end_row();
  const std::size_t rows =
      std::max(run3.history.size(), run4.history.size());
  for (std::size_t i = 0; i < rows; ++i) {
    csv.field(static_cast<long>(i + 1));
    if (i < run3.history.size()) {
      csv.field(run3.history[i].cost_raw)
          .field(run3.history[i].cost_renormalized)
          .field(run3.history[i].l2_error);
    } else {
      csv.field(std::numeric_limits<double>::quiet_NaN())
          .field(std::numeric_limits<double>::quiet_NaN())
          .field(std::numeric_limits<double>::quiet_NaN());
    }
    if (i < run4.history.size()) {
      csv.field(run4.history[i].cost_raw)
          .field(run4.history[i].cost_renormalized);
    } else {
      csv.field(std::numeric_limits<double>::quiet_NaN())
          .field(std::numeric_limits<double>::quiet_NaN());
    }
    csv.end_row();
  }
  write_file_atomic(dir / (cfg.name + "_costcompare.csv"), csv.str());

  CsvWriter rcsv;
  rcsv.comment_header("config=" + hex16(cfg.fingerprint()) +
                      " experiment=" + cfg.name);
  rcsv.field(std::string("cost_raw")).field(std::string("cost_renormalized"));
  rcsv.end_row();
  rcsv.field(ref.cost_raw).field(ref.cost_renormalized);
  rcsv.end_row();
  write_file_atomic(dir / (cfg.name + "_refcost.csv"), rcsv.str());
  detail::write_manifest(dir / (cfg.name + "_manifest.txt"), cfg, timer,
                         nullptr);
}

inline void run_experiment(const ExperimentConfig& cfg, const RunOptions& opt) {
  if (opt.threads > 0) set_worker_count(opt.threads);
  if (cfg.kind == "costcompare")
    run_costcompare(cfg, opt);
  else
    run_play_experiment(cfg, opt);
}

/// `reference` verb: compute (or load) the Picard solution and summarize it.
inline void run_reference_experiment(const ExperimentConfig& cfg,
                                     const RunOptions& opt) {
  if (opt.threads > 0) set_worker_count(opt.threads);
  const auto dir = detail::out_dir(cfg, opt);
  detail::PhaseTimer timer;
  const NoiseBank bank = detail::obtain_bank(cfg, cfg.play, opt, dir);
  const ReferenceSolution ref =
      detail::obtain_reference(cfg.play, bank, opt, dir);
  timer.lap("reference");
  CsvWriter csv;
  csv.comment_header("config=" + hex16(cfg.fingerprint()) +
                     " experiment=" + cfg.name);
  csv.field(std::string("cost_raw"))
      .field(std::string("cost_renormalized"))
      .field(std::string("last_picard_delta"))
      .field(std::string("converged"));
  csv.end_row();
  csv.field(ref.cost_raw)
      .field(ref.cost_renormalized)
      .field(ref.last_picard_delta)
      .field(static_cast<long>(ref.converged ? 1 : 0));
  csv.end_row();
  write_file_atomic(dir / (cfg.name + "_reference.csv"), csv.str());
  detail::write_manifest(dir / (cfg.name + "_manifest.txt"), cfg, timer,
                         nullptr);
}

/// `equilibria` verb: deterministic root scan, reconstructed trajectories,
/// and the potential curve.
inline void run_equilibria_experiment(const ExperimentConfig& cfg,
                                      const RunOptions& opt) {
  if (cfg.play.model.d != 1)
    throw config_error("equilibria: d = 1 analysis only");
  const auto dir = detail::out_dir(cfg, opt);
  const TimeGrid grid(cfg.play.model.T, cfg.play.p);
  const EquilibriumSet set =
      deterministic_equilibria(cfg.play.model.g, -2.0, 2.0, grid);
  const std::string header =
      "config=" + hex16(cfg.fingerprint()) + " experiment=" + cfg.name;

  CsvWriter csv;
  csv.comment_header(header);
  csv.field(std::string("root"))
      .field(std::string("residual"))
      .field(std::string("potential"));
  csv.end_row();
  for (const auto& e : set.roots) {
    csv.field(e.root).field(e.residual).field(e.potential);
    csv.end_row();
  }
  write_file_atomic(dir / (cfg.name + "_equilibria.csv"), csv.str());

  CsvWriter traj;
  traj.comment_header(header);
  traj.field(std::string("root"))
      .field(std::string("t"))
      .field(std::string("m"))
      .field(std::string("h"));
  traj.end_row();
  for (const auto& e : set.roots)
    for (std::size_t k = 0; k < e.m_nodes.size(); ++k) {
      traj.field(e.root)
          .field(grid.nodes()[k])
          .field(e.m_nodes[k])
          .field(e.h_nodes[k]);
      traj.end_row();
    }
  write_file_atomic(dir / (cfg.name + "_equilibria_traj.csv"), traj.str());

  const PotentialScan scan = potential_scan(cfg.play.model.g, -2.0, 2.0, 2001);
  CsvWriter pot;
  pot.comment_header(header);
  pot.field(std::string("beta"))
      .field(std::string("potential"))
      .field(std::string("derivative"));
  pot.end_row();
  for (std::size_t i = 0; i < scan.beta.size(); ++i) {
    pot.field(scan.beta[i]).field(scan.value[i]).field(scan.derivative[i]);
    pot.end_row();
  }
  write_file_atomic(dir / (cfg.name + "_potential.csv"), pot.str());
}

/// `validate` verb: train on the config seed, replay the stored coefficients
/// on a fresh bank, compare errors.
inline void run_validate_experiment(const ExperimentConfig& cfg,
                                    std::uint64_t seed2,
                                    const RunOptions& opt) {
  if (opt.threads > 0) set_worker_count(opt.threads);
  const auto dir = detail::out_dir(cfg, opt);
  detail::PhaseTimer timer;
  const NoiseBank bank = detail::obtain_bank(cfg, cfg.play, opt, dir);
  const ReferenceSolution ref =
      detail::obtain_reference(cfg.play, bank, opt, dir);
  const std::uint64_t bank_fp = bank.fingerprint();
  const PlayState trained = run_play(
      cfg.play, bank,
      [&ref, bank_fp](const EnvironmentField& env, const InterceptField& h) {
        return l2_error(env, h, ref, bank_fp);
      });
  timer.lap("train");
  const TimeGrid grid(cfg.play.model.T, cfg.play.p);
  const RiccatiTable eta =
      continuous_riccati(cfg.play.model.Q, cfg.play.model.R, grid);
  const double val_err = validation_error(trained, cfg.play, seed2, eta);
  timer.lap("validate");

  CsvWriter csv;
  csv.comment_header("config=" + hex16(cfg.fingerprint()) +
                     " experiment=" + cfg.name);
  csv.field(std::string("training_error"))
      .field(std::string("validation_error"))
      .field(std::string("seed"))
      .field(std::string("seed2"));
  csv.end_row();
  csv.field(trained.history.empty()
                ? std::numeric_limits<double>::quiet_NaN()
                : trained.history.back().l2_error)
      .field(val_err)
      .field(static_cast<long>(cfg.play.seed))
      .field(static_cast<long>(seed2));
  csv.end_row();
  write_file_atomic(dir / (cfg.name + "_validation.csv"), csv.str());
  detail::write_manifest(dir / (cfg.name + "_manifest.txt"), cfg, timer,
                         nullptr);
}

/// `anneal` verb: the vanishing-viscosity schedule with per-stage terminal
/// mean samples and histograms.
inline void run_anneal_experiment(const ExperimentConfig& cfg,
                                  const RunOptions& opt) {
  if (opt.threads > 0) set_worker_count(opt.threads);
  if (cfg.schedule.empty())
    throw config_error("anneal: config has no anneal.schedule");
  const auto dir = detail::out_dir(cfg, opt);
  detail::PhaseTimer timer;
  const NoiseBank bank = detail::obtain_bank(cfg, cfg.play, opt, dir);
  timer.lap("bank");
  const AnnealResult result =
      vanishing_viscosity(cfg.play, cfg.schedule, bank);
  timer.lap("anneal");
  if (result.aborted)
    throw numerical_error("annealing aborted: " + result.abort_reason +
                          " (partial stages: " +
                          std::to_string(result.stages.size()) + ")");

  const std::string header =
      "config=" + hex16(cfg.fingerprint()) + " experiment=" + cfg.name;
  for (std::size_t q = 0; q < result.stages.size(); ++q) {
    const AnnealStage& stage = result.stages[q];
    CsvWriter means;
    means.comment_header(header);
    means.field(std::string("j")).field(std::string("terminal_mean"));
    means.end_row();
    for (std::size_t j = 0; j < stage.terminal_means.size(); ++j) {
      means.field(static_cast<long>(j)).field(stage.terminal_means[j]);
      means.end_row();
    }
    write_file_atomic(dir / (cfg.name + "_means_stage" + std::to_string(q + 1) +
                             ".csv"),
                      means.str());

    if (cfg.play.model.d == 1) {
      const Histogram hist = terminal_histogram(stage.terminal_means, 40);
      CsvWriter hcsv;
      hcsv.comment_header(header);
      hcsv.field(std::string("bin_lo"))
          .field(std::string("bin_hi"))
          .field(std::string("count"));
      hcsv.end_row();
      for (std::size_t b = 0; b < hist.counts.size(); ++b) {
        hcsv.field(hist.edges[b]).field(hist.edges[b + 1]).field(hist.counts[b]);
        hcsv.end_row();
      }
      write_file_atomic(dir / (cfg.name + "_hist_stage" + std::to_string(q + 1) +
                               ".csv"),
                        hcsv.str());
    }
    detail::write_history_csv(dir / (cfg.name + "_history_stage" +
                                     std::to_string(q + 1) + ".csv"),
                              cfg, stage.history);
  }
  detail::write_manifest(dir / (cfg.name + "_manifest.txt"), cfg, timer,
                         nullptr);
}

}  // namespace mfglq
