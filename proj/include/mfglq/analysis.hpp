#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mfglq/errors.hpp"
#include "mfglq/fictitious_play.hpp"
#include "mfglq/model.hpp"
#include "mfglq/reference.hpp"

namespace mfglq {

// ---------------------------------------------------------------------------
// Deterministic (no-common-noise) equilibria of the unit-cost benchmark
// (Q = 0, R = I, T = 1): roots of 2x + g(x) = 0 with the closed-form
// trajectory reconstruction.

struct Equilibrium {
  double root = 0.0;
  double residual = 0.0;
  double potential = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> m_nodes;  // per grid node
  std::vector<double> h_nodes;
};

struct EquilibriumSet {
  std::vector<Equilibrium> roots;  // sorted ascending
  bool empty_bracket_warning = false;
};

namespace detail {

inline double potential_value(const Coupling& g, double beta) {
  if (g.has_primitive()) return beta * beta + g.primitive(beta);
  // Numerical primitive from 0 by composite Simpson.
  const int n = 512;
  const double h = beta / n;
  double acc = g.eval1(0.0) + g.eval1(beta);
  for (int i = 1; i < n; ++i)
    acc += (i % 2 ? 4.0 : 2.0) * g.eval1(i * h);
  return beta * beta + acc * h / 3.0;
}

}  // namespace detail

inline EquilibriumSet deterministic_equilibria(const Coupling& g,
                                               double bracket_lo,
                                               double bracket_hi,
                                               const TimeGrid& grid,
                                               int subintervals = 10000) {
  if (g.dim() != 1)
    throw std::invalid_argument("deterministic_equilibria: d = 1 only");
  if (!(bracket_hi > bracket_lo) || !std::isfinite(bracket_lo) ||
      !std::isfinite(bracket_hi))
    throw std::invalid_argument("deterministic_equilibria: bad bracket");
  auto eq = [&](double x) { return 2.0 * x + g.eval1(x); };

  EquilibriumSet set;
  const double width = (bracket_hi - bracket_lo) / subintervals;
  double prev_x = bracket_lo;
  double prev_v = eq(prev_x);
  for (int i = 1; i <= subintervals; ++i) {
    const double x = bracket_lo + i * width;
    const double v = eq(x);
    double root = std::numeric_limits<double>::quiet_NaN();
    if (prev_v == 0.0) {
      root = prev_x;
    } else if (prev_v * v < 0.0) {
      double a = prev_x, b = x, fa = prev_v;
      while (b - a > 1e-13) {
        const double mid = 0.5 * (a + b);
        const double fm = eq(mid);
        if (fa * fm <= 0.0)
          b = mid;
        else {
          a = mid;
          fa = fm;
        }
      }
      root = 0.5 * (a + b);
    }
    if (std::isfinite(root) &&
        (set.roots.empty() || root - set.roots.back().root > 1e-9)) {
      Equilibrium e;
      e.root = root;
      e.residual = std::abs(eq(root));
      e.potential = detail::potential_value(g, root);
      const double gv = g.eval1(root);
      e.m_nodes.resize(grid.nodes().size());
      e.h_nodes.resize(grid.nodes().size());
      for (std::size_t k = 0; k < grid.nodes().size(); ++k) {
        const double t = grid.nodes()[k];
        const double m_tilde = -gv * (1.0 / (2.0 - t) - 0.5);
        e.m_nodes[k] = (2.0 - t) * m_tilde;
        e.h_nodes[k] = gv / (2.0 - t);
      }
      set.roots.push_back(std::move(e));
    }
    prev_x = x;
    prev_v = v;
  }
  if (eq(bracket_hi) == 0.0 &&
      (set.roots.empty() || bracket_hi - set.roots.back().root > 1e-9)) {
    Equilibrium e;
    e.root = bracket_hi;
    e.residual = 0.0;
    e.potential = detail::potential_value(g, bracket_hi);
    set.roots.push_back(std::move(e));
  }
  set.empty_bracket_warning = set.roots.empty();
  return set;
}

// ---------------------------------------------------------------------------
// Potential scan of J(beta) = beta^2 + G(beta).

struct PotentialScan {
  std::vector<double> beta;
  std::vector<double> value;       // J
  std::vector<double> derivative;  // 2 beta + g(beta)
  std::vector<double> minimizers;
  std::vector<double> stationary_points;
  double global_minimizer = 0.0;
  double global_minimum = 0.0;
};

inline PotentialScan potential_scan(const Coupling& g, double lo, double hi,
                                    int samples) {
  if (g.dim() != 1) throw std::invalid_argument("potential_scan: d = 1 only");
  if (samples < 2) throw std::invalid_argument("potential_scan: samples >= 2");
  PotentialScan scan;
  scan.beta.resize(static_cast<std::size_t>(samples));
  scan.value.resize(static_cast<std::size_t>(samples));
  scan.derivative.resize(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    const double b = lo + (hi - lo) * i / (samples - 1);
    scan.beta[static_cast<std::size_t>(i)] = b;
    scan.value[static_cast<std::size_t>(i)] = detail::potential_value(g, b);
    scan.derivative[static_cast<std::size_t>(i)] = 2.0 * b + g.eval1(b);
  }
  auto dJ = [&](double b) { return 2.0 * b + g.eval1(b); };
  for (int i = 1; i < samples; ++i) {
    const double a = scan.beta[static_cast<std::size_t>(i - 1)];
    const double b = scan.beta[static_cast<std::size_t>(i)];
    double fa = scan.derivative[static_cast<std::size_t>(i - 1)];
    const double fb = scan.derivative[static_cast<std::size_t>(i)];
    if (fa == 0.0) {
      scan.stationary_points.push_back(a);
      continue;
    }
    if (fa * fb < 0.0) {
      double x0 = a, x1 = b;
      while (x1 - x0 > 1e-13) {
        const double mid = 0.5 * (x0 + x1);
        if (fa * dJ(mid) <= 0.0)
          x1 = mid;
        else {
          x0 = mid;
          fa = dJ(x0);
        }
      }
      scan.stationary_points.push_back(0.5 * (x0 + x1));
    }
  }
  // Local minimizers among the stationary points: derivative crosses upward.
  for (double s : scan.stationary_points) {
    const double eps = 1e-6 * (hi - lo);
    if (dJ(s - eps) < 0.0 && dJ(s + eps) > 0.0) scan.minimizers.push_back(s);
  }
  scan.global_minimizer = scan.beta[0];
  scan.global_minimum = scan.value[0];
  for (int i = 1; i < samples; ++i)
    if (scan.value[static_cast<std::size_t>(i)] < scan.global_minimum) {
      scan.global_minimum = scan.value[static_cast<std::size_t>(i)];
      scan.global_minimizer = scan.beta[static_cast<std::size_t>(i)];
    }
  for (double s : scan.minimizers) {
    const double v = detail::potential_value(g, s);
    if (v < scan.global_minimum) {
      scan.global_minimum = v;
      scan.global_minimizer = s;
    }
  }
  return scan;
}

// ---------------------------------------------------------------------------
// Error metric, exploitability, validation, histograms.

/// Root of the (j, k < p)-averaged squared differences of the mean and
/// intercept fields against the reference.
inline double l2_error(const EnvironmentField& env_bar,
                       const InterceptField& intercept,
                       const ReferenceSolution& ref,
                       std::uint64_t bank_fingerprint = 0) {
  if (env_bar.N != ref.m_field.N || env_bar.p != ref.m_field.p ||
      env_bar.d != ref.m_field.d)
    throw std::invalid_argument("l2_error: shape mismatch with reference");
  if (bank_fingerprint != 0 && ref.bank_fingerprint != 0 &&
      bank_fingerprint != ref.bank_fingerprint)
    throw std::invalid_argument("l2_error: reference built on a different bank");
  const int N = env_bar.N, p = env_bar.p, d = env_bar.d;
  double acc = 0.0;
  for (int j = 0; j < N; ++j) {
    for (int k = 0; k < p; ++k) {
      const double* ma = env_bar.at(j, k);
      const double* mr = ref.m_field.at(j, k);
      const double* ha = intercept.at(j, k);
      const double* hr = ref.h_field.at(j, k);
      for (int c = 0; c < d; ++c) {
        const double dm = ma[c] - mr[c];
        const double dh = ha[c] - hr[c];
        acc += dm * dm + dh * dh;
      }
    }
  }
  return std::sqrt(acc / (static_cast<double>(N) * p));
}

struct Exploitability {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Gap between the recorded policy's cost and one fresh best response against
/// the frozen environment, under the same tilting; paired per realization.
inline Exploitability exploitability(const PlayState& state,
                                     const PlayConfig& cfg,
                                     const PlayContext& ctx) {
  InterceptField tilt;
  if (cfg.model.eps > 0.0) {
    tilt = cfg.variant == Variant::averaged_guess ? state.variant_guess
                                                  : state.intercept;
    if (state.has_baseline())
      for (std::size_t i = 0; i < tilt.h.size(); ++i)
        tilt.h[i] -= state.baseline.h[i];
  }
  auto standardizers = state.policy.standardizers;
  for (auto& st : standardizers)
    if (st.mean.size() == 0) {
      // A state that never optimized carries empty standardizers.
      standardizers = fit_node_standardizers(state.env_bar, cfg.standardizer_mode);
      break;
    }
  StageData stage =
      make_stage(ctx.grid, *ctx.bank, state.env_bar, cfg.model, cfg.model.sigma,
                 cfg.model.eps, std::move(tilt), state.policy.basis, standardizers);

  const RolloutBatch current = rollout(state.policy, stage);

  FeedbackPolicy best;
  if (cfg.backend == Backend::analytic) {
    best = analytic_best_response(stage, ctx.eta_discrete, standardizers).policy;
  } else {
    best = state.policy;
    best.standardizers = standardizers;
    AdamOptions opt = cfg.adam;
    if (cfg.riccati_known) {
      std::vector<double> gains;
      ctx.eta_discrete.scalar_gains(&gains);
      for (int k = 0; k < cfg.p; ++k)
        best.a[static_cast<std::size_t>(k)] = -gains[static_cast<std::size_t>(k)];
      opt.freeze_gain = true;
    }
    adam_optimize(best, stage, opt);
  }
  const RolloutBatch fresh = rollout(best, stage);

  const int N = cfg.N;
  Exploitability out;
  double mean = 0.0;
  for (int j = 0; j < N; ++j)
    mean += current.per_j_cost[static_cast<std::size_t>(j)] -
            fresh.per_j_cost[static_cast<std::size_t>(j)];
  mean /= N;
  double var = 0.0;
  for (int j = 0; j < N; ++j) {
    const double dj = current.per_j_cost[static_cast<std::size_t>(j)] -
                      fresh.per_j_cost[static_cast<std::size_t>(j)] - mean;
    var += dj * dj;
  }
  out.value = mean;
  out.standard_error = N > 1 ? std::sqrt(var / (N - 1.0) / N) : 0.0;
  return out;
}

/// Replays stored per-iteration coefficients on a fresh bank (frozen
/// standardizers), recomputes the reference there, and returns the error.
inline double validation_error(const PlayState& trained, const PlayConfig& cfg,
                               std::uint64_t fresh_seed,
                               const RiccatiTable& eta_reference) {
  if (fresh_seed == cfg.seed)
    throw config_error("validation_error: fresh seed equals the training seed");
  const NoiseBank bank2 =
      sample_noise_bank(fresh_seed, cfg.M, cfg.N, cfg.p, cfg.model.d);
  const PlayContext ctx = make_play_context(cfg, bank2);

  PlayState replay = init_state(cfg, bank2);
  for (const IterationRecord& rec : trained.history) {
    InterceptField tilt;
    if (cfg.model.eps > 0.0) tilt = replay.intercept;
    FeedbackPolicy pol = FeedbackPolicy::zeros(cfg.p, cfg.model.d,
                                               replay.policy.basis);
    pol.a = rec.a;
    pol.c = rec.c;
    pol.standardizers = rec.standardizers;
    StageData stage = make_stage(ctx.grid, bank2, replay.env_bar, cfg.model,
                                 cfg.model.sigma, cfg.model.eps, std::move(tilt),
                                 pol.basis, pol.standardizers);
    RolloutBatch batch = rollout(pol, stage);
    EnvironmentField mean(cfg.N, cfg.p, cfg.model.d);
    const double inv_m = 1.0 / cfg.M;
    for (int j = 0; j < cfg.N; ++j)
      for (int k = 0; k <= cfg.p; ++k) {
        double* out = mean.at(j, k);
        for (int c = 0; c < cfg.model.d; ++c) out[c] = 0.0;
        for (int i = 0; i < cfg.M; ++i) {
          const double* xv = batch.x_at(i, j, k);
          for (int c = 0; c < cfg.model.d; ++c) out[c] += xv[c];
        }
        for (int c = 0; c < cfg.model.d; ++c) out[c] *= inv_m;
      }
    const double w_new = 1.0 / (replay.n + 1);
    const double w_old = static_cast<double>(replay.n) / (replay.n + 1);
    for (std::size_t i = 0; i < replay.env_bar.m.size(); ++i)
      replay.env_bar.m[i] = w_new * mean.m[i] + w_old * replay.env_bar.m[i];
    const std::vector<double> C = policy_intercepts(pol, stage);
    for (std::size_t i = 0; i < replay.intercept.h.size(); ++i)
      replay.intercept.h[i] = -C[i];
    replay.n += 1;
  }

  ReferenceConfig ref_cfg;
  ref_cfg.model = cfg.model;
  ref_cfg.p = cfg.p;
  ref_cfg.N = cfg.N;
  ref_cfg.D = cfg.D;
  ref_cfg.picard_iters = cfg.picard_iters;
  ref_cfg.clamp = cfg.clamp;
  ref_cfg.standardizer_mode = cfg.standardizer_mode;
  const ReferenceSolution ref2 = solve_reference(ref_cfg, bank2, eta_reference);
  return l2_error(replay.env_bar, replay.intercept, ref2, bank2.fingerprint());
}

struct Histogram {
  std::vector<double> edges;   // bins + 1
  std::vector<long> counts;    // bins
};

inline Histogram terminal_histogram(const std::vector<double>& samples,
                                    int bins) {
  if (bins < 1) throw std::invalid_argument("terminal_histogram: bins >= 1");
  if (samples.empty())
    throw std::invalid_argument("terminal_histogram: empty sample set");
  double lo = samples[0], hi = samples[0];
  for (double s : samples) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b)
    h.edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bins;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double s : samples) {
    int b = static_cast<int>((s - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace mfglq
