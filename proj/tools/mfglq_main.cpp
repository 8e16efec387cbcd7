// Batch CLI for the mean-field-game learning experiments.
//
// Verbs: run, reference, equilibria, validate, anneal. Exit codes: 0 success,
// 2 config error, 3 numerical failure, 4 cache corruption.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "mfglq/mfglq.hpp"

namespace {

struct CommonArgs {
  std::string config_file;
  mfglq::RunOptions opt;
};

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("config", args->config_file, "experiment config file")
      ->required();
  cmd->add_option("--out", args->opt.out_dir, "output directory override");
  cmd->add_option("--threads", args->opt.threads, "worker count hint");
  cmd->add_flag("--no-cache", args->opt.no_cache,
                "recompute everything, skip cache files");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linear-quadratic mean-field-game learning experiments"};
  app.require_subcommand(1);

  CommonArgs run_args, ref_args, eq_args, val_args, anneal_args;
  std::uint64_t seed2 = 0;

  CLI::App* run = app.add_subcommand("run", "fictitious-play experiment");
  add_common(run, &run_args);
  CLI::App* ref = app.add_subcommand("reference", "Picard reference solution");
  add_common(ref, &ref_args);
  CLI::App* eq =
      app.add_subcommand("equilibria", "deterministic equilibria and potential");
  add_common(eq, &eq_args);
  CLI::App* val = app.add_subcommand("validate",
                                     "train, then re-evaluate on a fresh bank");
  add_common(val, &val_args);
  val->add_option("--seed2", seed2, "validation bank seed")->required();
  CLI::App* anneal =
      app.add_subcommand("anneal", "vanishing-viscosity schedule");
  add_common(anneal, &anneal_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const auto cfg = mfglq::parse_config(run_args.config_file);
      mfglq::run_experiment(cfg, run_args.opt);
    } else if (ref->parsed()) {
      const auto cfg = mfglq::parse_config(ref_args.config_file);
      mfglq::run_reference_experiment(cfg, ref_args.opt);
    } else if (eq->parsed()) {
      const auto cfg = mfglq::parse_config(eq_args.config_file);
      mfglq::run_equilibria_experiment(cfg, eq_args.opt);
    } else if (val->parsed()) {
      const auto cfg = mfglq::parse_config(val_args.config_file);
      mfglq::run_validate_experiment(cfg, seed2, val_args.opt);
    } else if (anneal->parsed()) {
      const auto cfg = mfglq::parse_config(anneal_args.config_file);
      mfglq::run_anneal_experiment(cfg, anneal_args.opt);
    }
  } catch (const mfglq::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const mfglq::numerical_error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const mfglq::cache_error& e) {
    std::fprintf(stderr, "cache failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
