#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mfglq/errors.hpp"
#include "mfglq/fields.hpp"
#include "mfglq/model.hpp"
#include "mfglq/noise.hpp"
#include "mfglq/policy.hpp"
#include "mfglq/riccati.hpp"
#include "mfglq/time_grid.hpp"

namespace mfglq {

enum class Scheme { two_noise, common_only, idio_only };
enum class Backend { adam, analytic };
enum class Variant { standard, averaged_guess };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::two_noise: return "two_noise";
    case Scheme::common_only: return "common_only";
    default: return "idio_only";
  }
}

struct PlayConfig {
  ModelSpec model;
  Scheme scheme = Scheme::common_only;
  Variant variant = Variant::standard;
  Backend backend = Backend::adam;
  int p = 10;
  int M = 1;
  int N = 1000;
  int D = 4;
  int n_iters = 10;
  int picard_iters = 10;
  double clamp = 1.0;
  AdamOptions adam;
  bool riccati_known = false;
  bool warm_start_policy = true;
  FeatureStandardizer::Mode standardizer_mode = FeatureStandardizer::Mode::diag;
  std::uint64_t seed = 1;
  bool keep_mean_history = false;

  void validate() const {
    if (model.d < 1 || p < 1 || M < 1 || N < 1 || D < 0 || n_iters < 0)
      throw config_error("play config: counts must be positive");
    if (model.eps < 0.0 || model.sigma < 0.0)
      throw config_error("play config: noise intensities must be >= 0");
    switch (scheme) {
      case Scheme::common_only:
        if (M != 1 || model.sigma != 0.0)
          throw config_error("common_only requires M = 1 and sigma = 0");
        break;
      case Scheme::idio_only:
        if (N != 1 || D != 0 || model.eps != 0.0)
          throw config_error("idio_only requires N = 1, D = 0 and eps = 0");
        break;
      case Scheme::two_noise:
        break;
    }
    if (scheme != Scheme::idio_only && !(model.eps > 0.0))
      throw config_error("eps must be > 0 unless scheme is idio_only");
  }
};

struct IterationRecord {
  int n = 0;
  double cost_raw = 0.0;
  double cost_renormalized = 0.0;
  double l2_error = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
  // Policy snapshot, enough to replay the iterate on fresh data.
  std::vector<double> a;
  std::vector<double> c;
  std::vector<FeatureStandardizer> standardizers;
};

struct PlayState {
  int n = 0;
  EnvironmentField env_bar;       // running average of the per-iteration means
  InterceptField intercept;       // h^n
  InterceptField baseline;        // annealing warm-start guess; empty if none
  InterceptField h_bar;           // average of h^1..h^n (variant bookkeeping)
  InterceptField variant_guess;   // averaged-guess tilting
  FeedbackPolicy policy;
  std::vector<IterationRecord> history;
  std::vector<EnvironmentField> mean_history;
  std::uint64_t bank_fingerprint = 0;

  bool has_baseline() const { return baseline.N > 0; }
};

struct PlayContext {
  TimeGrid grid;
  RiccatiTable eta_discrete;
  const NoiseBank* bank = nullptr;
};

inline PlayContext make_play_context(const PlayConfig& cfg,
                                     const NoiseBank& bank) {
  PlayContext ctx{TimeGrid(cfg.model.T, cfg.p),
                  discrete_riccati(cfg.model.Q, cfg.model.R,
                                   TimeGrid(cfg.model.T, cfg.p)),
                  &bank};
  if (bank.realizations() != cfg.N || bank.steps() != cfg.p ||
      bank.dim() != cfg.model.d || bank.particles() < cfg.M)
    throw config_error("noise bank does not match play config");
  return ctx;
}

/// Initialization m^0 = E(X_0), h^0 = 0.
inline PlayState init_state(const PlayConfig& cfg, const NoiseBank& bank) {
  cfg.validate();
  PlayState st;
  st.env_bar = EnvironmentField(cfg.N, cfg.p, cfg.model.d);
  for (int j = 0; j < cfg.N; ++j)
    for (int k = 0; k <= cfg.p; ++k)
      for (int c = 0; c < cfg.model.d; ++c)
        st.env_bar.at(j, k)[c] = cfg.model.x0[c];
  st.intercept = InterceptField(cfg.N, cfg.p, cfg.model.d, cfg.clamp);
  st.h_bar = InterceptField(cfg.N, cfg.p, cfg.model.d, cfg.clamp);
  st.variant_guess = InterceptField(cfg.N, cfg.p, cfg.model.d, cfg.clamp);
  st.policy = FeedbackPolicy::zeros(
      cfg.p, cfg.model.d, MultiIndexSet::total_degree(cfg.model.d, cfg.D));
  st.bank_fingerprint = bank.fingerprint();
  return st;
}

/// Rule h~^{n+1} = (1 + 1/(n+1)) h^{n+1} - (1/(n+1)) hbar^n. Expects the
/// freshly assigned intercept and the not-yet-updated running average; also
/// advances the average. Call once per step, after the intercept update.
inline InterceptField averaged_guess_update(PlayState& state) {
  if (state.n < 1)
    throw std::logic_error("averaged_guess_update: no completed step");
  const double inv = 1.0 / state.n;
  InterceptField guess = state.intercept;
  for (std::size_t i = 0; i < guess.h.size(); ++i)
    guess.h[i] = (1.0 + inv) * state.intercept.h[i] - inv * state.h_bar.h[i];
  for (std::size_t i = 0; i < state.h_bar.h.size(); ++i)
    state.h_bar.h[i] =
        ((state.n - 1) * state.h_bar.h[i] + state.intercept.h[i]) * inv;
  return guess;
}

using ErrorMetric = std::function<double(const EnvironmentField&,
                                         const InterceptField&)>;

/// One fictitious-play iteration: weights from the tilting, best response
/// against the averaged environment, per-realization means, averaging update,
/// and h^{n+1} = -C^{n+1}.
inline void play_step(PlayState& state, const PlayConfig& cfg,
                      const PlayContext& ctx,
                      const ErrorMetric& error_metric = {}) {
  const auto t_start = std::chrono::steady_clock::now();
  const int N = cfg.N, p = cfg.p, d = cfg.model.d;
  const double eps = cfg.model.eps;

  InterceptField tilt;
  if (eps > 0.0) {
    tilt = cfg.variant == Variant::averaged_guess ? state.variant_guess
                                                  : state.intercept;
    if (state.has_baseline())
      for (std::size_t i = 0; i < tilt.h.size(); ++i)
        tilt.h[i] -= state.baseline.h[i];
  }

  auto standardizers =
      fit_node_standardizers(state.env_bar, cfg.standardizer_mode);
  const MultiIndexSet& basis = state.policy.basis;
  StageData stage =
      make_stage(ctx.grid, *ctx.bank, state.env_bar, cfg.model, cfg.model.sigma,
                 eps, std::move(tilt), basis, standardizers);

  if (cfg.backend == Backend::analytic) {
    BestResponse br = analytic_best_response(stage, ctx.eta_discrete, standardizers);
    state.policy = std::move(br.policy);
  } else {
    if (!cfg.warm_start_policy) state.policy = FeedbackPolicy::zeros(p, d, basis);
    state.policy.standardizers = standardizers;
    AdamOptions opt = cfg.adam;
    if (cfg.riccati_known) {
      std::vector<double> gains;
      if (!ctx.eta_discrete.scalar_gains(&gains))
        throw config_error("riccati_known requires scalar gain matrices");
      for (int k = 0; k < p; ++k)
        state.policy.a[static_cast<std::size_t>(k)] =
            -gains[static_cast<std::size_t>(k)];
      opt.freeze_gain = true;
    }
    adam_optimize(state.policy, stage, opt);
  }

  RolloutBatch batch = rollout(state.policy, stage);

  // m^{n+1}: particle average per realization, then the 1/(n+1) mixing.
  EnvironmentField mean(N, p, d);
  const double inv_m = 1.0 / cfg.M;
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
    for (int k = 0; k <= p; ++k) {
      double* out = mean.at(static_cast<int>(j), k);
      for (int c = 0; c < d; ++c) out[c] = 0.0;
      for (int i = 0; i < cfg.M; ++i) {
        const double* xv = batch.x_at(i, static_cast<int>(j), k);
        for (int c = 0; c < d; ++c) out[c] += xv[c];
      }
      for (int c = 0; c < d; ++c) out[c] *= inv_m;
    }
  });
  const double w_new = 1.0 / (state.n + 1);
  const double w_old = static_cast<double>(state.n) / (state.n + 1);
  for (std::size_t i = 0; i < state.env_bar.m.size(); ++i)
    state.env_bar.m[i] = w_new * mean.m[i] + w_old * state.env_bar.m[i];
  if (cfg.keep_mean_history) state.mean_history.push_back(mean);

  const std::vector<double> C = policy_intercepts(state.policy, stage);
  for (std::size_t i = 0; i < state.intercept.h.size(); ++i)
    state.intercept.h[i] = -C[i];
  state.n += 1;
  if (cfg.variant == Variant::averaged_guess)
    state.variant_guess = averaged_guess_update(state);

  IterationRecord rec;
  rec.n = state.n;
  rec.cost_raw = batch.cost_raw;
  rec.cost_renormalized = batch.cost_renormalized;
  if (error_metric) rec.l2_error = error_metric(state.env_bar, state.intercept);
  rec.a = state.policy.a;
  rec.c = state.policy.c;
  rec.standardizers = state.policy.standardizers;
  rec.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t_start)
                    .count();
  state.history.push_back(std::move(rec));
}

/// n_iters steps from the standard initialization over one fixed bank.
inline PlayState run_play(const PlayConfig& cfg, const NoiseBank& bank,
                          const ErrorMetric& error_metric = {}) {
  const PlayContext ctx = make_play_context(cfg, bank);
  PlayState state = init_state(cfg, bank);
  for (int it = 0; it < cfg.n_iters; ++it)
    play_step(state, cfg, ctx, error_metric);
  return state;
}

// ---------------------------------------------------------------------------
// Vanishing viscosity

struct AnnealStage {
  double eps = 0.0;
  std::vector<double> terminal_means;  // env_bar at the horizon, (j, coord)
  std::vector<IterationRecord> history;
};

struct AnnealResult {
  std::vector<AnnealStage> stages;
  bool aborted = false;
  std::string abort_reason;
};

/// Decreasing-viscosity driver: each stage runs the fictitious play with the
/// previous stage's final intercept as both the warm start and the baseline
/// guess, so the tilting starts from zero. Stage divergence aborts the
/// schedule with partial results.
inline AnnealResult vanishing_viscosity(const PlayConfig& base,
                                        const std::vector<double>& schedule,
                                        const NoiseBank& bank) {
  if (schedule.empty())
    throw config_error("vanishing viscosity: empty schedule");
  for (std::size_t q = 0; q < schedule.size(); ++q) {
    if (!(schedule[q] > 0.0) ||
        (q > 0 && !(schedule[q] < schedule[q - 1])))
      throw config_error(
          "vanishing viscosity: schedule must be strictly decreasing and positive");
  }
  if (base.variant != Variant::standard)
    throw config_error("vanishing viscosity: averaged_guess variant unsupported");

  AnnealResult result;
  InterceptField carried_h;
  FeedbackPolicy carried_policy;
  bool have_carry = false;

  for (double eps_q : schedule) {
    PlayConfig cfg = base;
    cfg.model.eps = eps_q;
    const PlayContext ctx = make_play_context(cfg, bank);
    PlayState state = init_state(cfg, bank);
    if (have_carry) {
      state.intercept = carried_h;
      state.baseline = carried_h;
      if (cfg.warm_start_policy) state.policy = carried_policy;
    }
    try {
      for (int it = 0; it < cfg.n_iters; ++it) play_step(state, cfg, ctx);
    } catch (const numerical_error& err) {
      result.aborted = true;
      result.abort_reason = err.what();
      return result;
    }
    AnnealStage stage;
    stage.eps = eps_q;
    stage.terminal_means.resize(static_cast<std::size_t>(cfg.N) * cfg.model.d);
    for (int j = 0; j < cfg.N; ++j)
      for (int c = 0; c < cfg.model.d; ++c)
        stage.terminal_means[static_cast<std::size_t>(j) * cfg.model.d + c] =
            state.env_bar.at(j, cfg.p)[c];
    stage.history = state.history;
    result.stages.push_back(std::move(stage));
    carried_h = state.intercept;
    carried_policy = state.policy;
    have_carry = true;
  }
  return result;
}

}  // namespace mfglq
