#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfglq/errors.hpp"
#include "mfglq/fields.hpp"
#include "mfglq/girsanov.hpp"
#include "mfglq/hermite.hpp"
#include "mfglq/model.hpp"
#include "mfglq/noise.hpp"
#include "mfglq/parallel.hpp"
#include "mfglq/regression.hpp"
#include "mfglq/riccati.hpp"
#include "mfglq/time_grid.hpp"

namespace mfglq {

/// Affine feedback alpha_{k+1} = a_k x_k + C_k, with C_k a Hermite expansion
/// of the standardized environment. Standardizers are frozen at fit time so
/// the objective stays smooth in (a, c) during an optimization run.
struct FeedbackPolicy {
  int p = 0;
  int d = 0;
  MultiIndexSet basis;
  std::vector<double> a;  // gain per node k = 0..p-1, shared across coords
  std::vector<double> c;  // (k, multi-index l, coord)
  std::vector<FeatureStandardizer> standardizers;  // per node k = 0..p-1

  static FeedbackPolicy zeros(int p, int d, MultiIndexSet basis) {
    FeedbackPolicy pol;
    pol.p = p;
    pol.d = d;
    pol.a.assign(static_cast<std::size_t>(p), 0.0);
    pol.c.assign(static_cast<std::size_t>(p) * basis.size() * d, 0.0);
    pol.basis = std::move(basis);
    pol.standardizers.resize(static_cast<std::size_t>(p));
    return pol;
  }

  int L() const { return basis.size(); }
  double* c_at(int k, int l) {
    return c.data() + (static_cast<std::size_t>(k) * L() + l) * d;
  }
  const double* c_at(int k, int l) const {
    return c.data() + (static_cast<std::size_t>(k) * L() + l) * d;
  }
};

/// Per-node standardizers fit from the environment proxy. Node 0 is always
/// degenerate (deterministic start); the scale floor keeps its features
/// finite.
inline std::vector<FeatureStandardizer> fit_node_standardizers(
    const EnvironmentField& env,
    FeatureStandardizer::Mode mode = FeatureStandardizer::Mode::diag) {
  std::vector<FeatureStandardizer> out(static_cast<std::size_t>(env.p));
  std::vector<double> samples(static_cast<std::size_t>(env.N) * env.d);
  for (int k = 0; k < env.p; ++k) {
    auto& st = out[static_cast<std::size_t>(k)];
    if (env.N == 1) {
      // A single realization carries no spread; center on it.
      st.mode = FeatureStandardizer::Mode::diag;
      st.mean = Eigen::Map<const Eigen::VectorXd>(env.at(0, k), env.d);
      st.scale = Eigen::VectorXd::Ones(env.d);
      st.degenerate = true;
      continue;
    }
    for (int j = 0; j < env.N; ++j)
      for (int c = 0; c < env.d; ++c)
        samples[static_cast<std::size_t>(j) * env.d + c] = env.at(j, k)[c];
    st = fit_standardizer(samples, env.d, mode);
  }
  return out;
}

/// Everything held fixed during one best-response solve: the environment,
/// the effective tilt and its weights, terminal/running coupling values, and
/// the Hermite features of the environment under frozen standardizers.
struct StageData {
  const TimeGrid* grid = nullptr;
  const NoiseBank* bank = nullptr;
  const EnvironmentField* env = nullptr;
  const ModelSpec* model = nullptr;
  const MultiIndexSet* basis = nullptr;
  double sigma = 0.0;
  double eps = 1.0;
  int M = 1;
  InterceptField tilt;       // empty when eps == 0
  GirsanovWeights weights;   // unit when eps == 0
  std::vector<double> gvals;  // g(m_T^{(j)}), (j, coord)
  std::vector<double> fvals;  // f(m_k^{(j)}), (j, k = 0..p-1, coord)
  bool running = false;
  std::vector<double> phi;  // (j, k = 0..p-1, l)

  int N() const { return env->N; }
  int p() const { return env->p; }
  int d() const { return env->d; }
  const double* phi_at(int j, int k) const {
    return phi.data() +
           (static_cast<std::size_t>(j) * env->p + k) * basis->size();
  }
  double renormalization() const {
    return 0.5 * eps * eps * d() * p();
  }
};

inline StageData make_stage(const TimeGrid& grid, const NoiseBank& bank,
                            const EnvironmentField& env, const ModelSpec& model,
                            double sigma, double eps, InterceptField tilt,
                            const MultiIndexSet& basis,
                            const std::vector<FeatureStandardizer>& standardizers) {
  StageData s;
  s.grid = &grid;
  s.bank = &bank;
  s.env = &env;
  s.model = &model;
  s.basis = &basis;
  s.sigma = sigma;
  s.eps = eps;
  s.M = sigma > 0.0 ? bank.particles() : 1;
  const int N = env.N, p = env.p, d = env.d, L = basis.size();
  if (bank.realizations() != N || bank.steps() != p || bank.dim() != d)
    throw std::invalid_argument("make_stage: bank/env shape mismatch");
  if (static_cast<int>(standardizers.size()) != p)
    throw std::invalid_argument("make_stage: one standardizer per node required");

  if (eps > 0.0) {
    require_same_shape(env, tilt);
    s.weights = girsanov_weights(tilt, bank, eps, grid);
    s.tilt = std::move(tilt);
  } else {
    s.weights = unit_weights(N, p);
  }

  s.gvals.resize(static_cast<std::size_t>(N) * d);
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
    model.g.eval(env.at(static_cast<int>(j), p),
                 s.gvals.data() + j * static_cast<std::size_t>(d));
  });
  s.running = model.has_running_cost();
  if (s.running) {
    s.fvals.resize(static_cast<std::size_t>(N) * p * d);
    parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
      for (int k = 0; k < p; ++k)
        model.f.eval(env.at(static_cast<int>(j), k),
                     s.fvals.data() + (j * p + k) * static_cast<std::size_t>(d));
    });
  }

  s.phi.resize(static_cast<std::size_t>(N) * p * L);
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
    std::vector<double> z(static_cast<std::size_t>(d));
    std::vector<double> hb(static_cast<std::size_t>(d) * (basis.D + 1));
    for (int k = 0; k < p; ++k)
      feature_row(basis, standardizers[static_cast<std::size_t>(k)],
                  env.at(static_cast<int>(j), k),
                  s.phi.data() + (j * p + k) * static_cast<std::size_t>(L),
                  z.data(), hb.data());
  });
  return s;
}

/// Hermite part of the feedback, one d-vector per (j, k).
inline std::vector<double> policy_intercepts(const FeedbackPolicy& pol,
                                             const StageData& stage) {
  const int N = stage.N(), p = stage.p(), d = stage.d(), L = pol.L();
  std::vector<double> C(static_cast<std::size_t>(N) * p * d);
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
    for (int k = 0; k < p; ++k) {
      const double* row = stage.phi_at(static_cast<int>(j), k);
      double* out = C.data() + (j * p + k) * static_cast<std::size_t>(d);
      for (int c = 0; c < d; ++c) out[c] = 0.0;
      for (int l = 0; l < L; ++l) {
        const double* cv = pol.c_at(k, l);
        for (int c = 0; c < d; ++c) out[c] += cv[c] * row[l];
      }
    }
  });
  return C;
}

/// Euler rollout of the randomized control
///   alpha_k = a_{k-1} x_{k-1} + C_{k-1} + u_{k-1} + eps sqrt(p/T) Dw_k,
///   x_k = x_{k-1} + (T/p) alpha_k + sigma sqrt(T/p) Db_k,
/// with u the effective tilt.
struct RolloutBatch {
  int M = 1, N = 0, p = 0, d = 0;
  std::vector<double> x;          // (i, j, k = 0..p, coord)
  std::vector<double> alpha;      // (i, j, k = 1..p at slot k-1, coord)
  std::vector<double> per_j_cost; // weighted realization contribution
  double cost_raw = 0.0;
  double cost_renormalized = 0.0;

  const double* x_at(int i, int j, int k) const {
    return x.data() +
           ((static_cast<std::size_t>(i) * N + j) * (p + 1) + k) * d;
  }
  const double* alpha_at(int i, int j, int k) const {
    return alpha.data() +
           ((static_cast<std::size_t>(i) * N + j) * p + (k - 1)) * d;
  }
};

namespace detail {

struct PathScratch {
  std::vector<double> x;      // (p+1) x d
  std::vector<double> alpha;  // p x d
};

// Forward pass for one (i, j); returns the unweighted path cost.
inline double forward_path(const FeedbackPolicy& pol, const StageData& stage,
                           const std::vector<double>& C, int i, int j,
                           PathScratch& sc) {
  const int p = stage.p(), d = stage.d();
  const TimeGrid& grid = *stage.grid;
  const double dt = grid.dt();
  const double expl = stage.eps > 0.0 ? stage.eps / std::sqrt(dt) : 0.0;
  const double idio = stage.sigma > 0.0 ? stage.sigma * std::sqrt(dt) : 0.0;
  const auto dw = stage.bank->common_path(j);
  const auto db = stage.sigma > 0.0 ? stage.bank->idio_path(i, j)
                                    : std::span<const double>{};
  const Eigen::MatrixXd& Q = stage.model->Q;

  double* x = sc.x.data();
  double* al = sc.alpha.data();
  for (int c = 0; c < d; ++c) x[c] = stage.model->x0[c];
  double run = 0.0;
  for (int k = 1; k <= p; ++k) {
    const double* xk = x + static_cast<std::size_t>(k - 1) * d;
    double* ak = al + static_cast<std::size_t>(k - 1) * d;
    const double* Cv = C.data() + (static_cast<std::size_t>(j) * p + (k - 1)) * d;
    if (stage.running) {
      const double* fv =
          stage.fvals.data() + (static_cast<std::size_t>(j) * p + (k - 1)) * d;
      double sq = 0.0;
      for (int r = 0; r < d; ++r) {
        double v = fv[r];
        for (int c = 0; c < d; ++c) v += Q(r, c) * xk[c];
        sq += v * v;
      }
      run += 0.5 * dt * sq;
    }
    const double gain = pol.a[static_cast<std::size_t>(k - 1)];
    for (int c = 0; c < d; ++c) {
      double av = gain * xk[c] + Cv[c];
      if (stage.eps > 0.0) {
        av += stage.tilt.at(j, k - 1)[c];
        av += expl * dw[static_cast<std::size_t>(k - 1) * d + c];
      }
      ak[c] = av;
    }
    double asq = 0.0;
    double* xn = x + static_cast<std::size_t>(k) * d;
    for (int c = 0; c < d; ++c) {
      asq += ak[c] * ak[c];
      xn[c] = xk[c] + dt * ak[c];
      if (stage.sigma > 0.0)
        xn[c] += idio * db[static_cast<std::size_t>(k - 1) * d + c];
    }
    run += 0.5 * dt * asq;
  }
  const double* xT = x + static_cast<std::size_t>(p) * d;
  const double* g = stage.gvals.data() + static_cast<std::size_t>(j) * d;
  const Eigen::MatrixXd& R = stage.model->R;
  double term = 0.0;
  for (int r = 0; r < d; ++r) {
    double v = g[r];
    for (int c = 0; c < d; ++c) v += R(r, c) * xT[c];
    term += v * v;
  }
  return run + 0.5 * term;
}

}  // namespace detail

inline RolloutBatch rollout(const FeedbackPolicy& pol, const StageData& stage) {
  const int M = stage.M, N = stage.N(), p = stage.p(), d = stage.d();
  if (pol.p != p || pol.d != d)
    throw std::invalid_argument("rollout: policy/stage shape mismatch");
  const std::vector<double> C = policy_intercepts(pol, stage);

  RolloutBatch batch;
  batch.M = M;
  batch.N = N;
  batch.p = p;
  batch.d = d;
  batch.x.resize(static_cast<std::size_t>(M) * N * (p + 1) * d);
  batch.alpha.resize(static_cast<std::size_t>(M) * N * p * d);
  batch.per_j_cost.assign(static_cast<std::size_t>(N), 0.0);

  parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
    detail::PathScratch sc;
    sc.x.resize(static_cast<std::size_t>(p + 1) * d);
    sc.alpha.resize(static_cast<std::size_t>(p) * d);
    double sum = 0.0;
    for (int i = 0; i < M; ++i) {
      sum += detail::forward_path(pol, stage, C, i, static_cast<int>(j), sc);
      std::memcpy(batch.x.data() +
                      ((static_cast<std::size_t>(i) * N + j) * (p + 1)) * d,
                  sc.x.data(), sc.x.size() * sizeof(double));
      std::memcpy(batch.alpha.data() +
                      ((static_cast<std::size_t>(i) * N + j) * p) * d,
                  sc.alpha.data(), sc.alpha.size() * sizeof(double));
    }
    batch.per_j_cost[j] = stage.weights.full[j] * sum / M;
  });
  double total = 0.0;
  for (double v : batch.per_j_cost) total += v;
  batch.cost_raw = total / N;
  batch.cost_renormalized = batch.cost_raw - stage.renormalization();
  return batch;
}

/// The weighted double average the optimizer minimizes, recomputed from a
/// stored batch (also available directly on RolloutBatch).
inline double empirical_cost(const RolloutBatch& batch, double* renormalized,
                             double renorm_const) {
  double total = 0.0;
  for (double v : batch.per_j_cost) total += v;
  const double raw = total / batch.N;
  if (renormalized) *renormalized = raw - renorm_const;
  return raw;
}

struct PolicyGradient {
  std::vector<double> a;  // per node
  std::vector<double> c;  // (k, l, coord)
  double cost_raw = 0.0;
  double cost_renormalized = 0.0;
};

/// Exact reverse-mode gradient of the empirical cost through the affine
/// Euler scheme. The coupling g is evaluated on the environment, constant in
/// the policy, so no derivative of g enters.
inline PolicyGradient cost_gradient(const FeedbackPolicy& pol,
                                    const StageData& stage) {
  const int M = stage.M, N = stage.N(), p = stage.p(), d = stage.d();
  const int L = pol.L();
  if (pol.p != p || pol.d != d)
    throw std::invalid_argument("cost_gradient: policy/stage shape mismatch");
  const std::vector<double> C = policy_intercepts(pol, stage);
  const TimeGrid& grid = *stage.grid;
  const double dt = grid.dt();
  const double inv_mn = 1.0 / (static_cast<double>(M) * N);
  const Eigen::MatrixXd& Q = stage.model->Q;
  const Eigen::MatrixXd& R = stage.model->R;

  const std::size_t n_chunks = chunk_count(static_cast<std::size_t>(N));
  const std::size_t gsize = static_cast<std::size_t>(p) * (1 + L * d);
  std::vector<double> partials(n_chunks * gsize, 0.0);
  std::vector<double> chunk_cost(n_chunks, 0.0);

  parallel_chunks(static_cast<std::size_t>(N), [&](std::size_t chunk,
                                                   std::size_t jb,
                                                   std::size_t je) {
    detail::PathScratch sc;
    sc.x.resize(static_cast<std::size_t>(p + 1) * d);
    sc.alpha.resize(static_cast<std::size_t>(p) * d);
    std::vector<double> lambda(static_cast<std::size_t>(d));
    std::vector<double> mu(static_cast<std::size_t>(d));
    double* ga = partials.data() + chunk * gsize;
    double* gc = ga + p;
    double cost_acc = 0.0;
    for (std::size_t j = jb; j < je; ++j) {
      const double omega = stage.weights.full[j] * inv_mn;
      for (int i = 0; i < M; ++i) {
        const double path_cost =
            detail::forward_path(pol, stage, C, i, static_cast<int>(j), sc);
        cost_acc += omega * path_cost;
        // lambda_p from the terminal cost.
        const double* xT = sc.x.data() + static_cast<std::size_t>(p) * d;
        const double* g = stage.gvals.data() + j * static_cast<std::size_t>(d);
        for (int r = 0; r < d; ++r) lambda[static_cast<std::size_t>(r)] = 0.0;
        for (int r = 0; r < d; ++r) {
          double v = g[r];
          for (int c = 0; c < d; ++c) v += R(r, c) * xT[c];
          for (int c = 0; c < d; ++c)
            lambda[static_cast<std::size_t>(c)] += omega * R(r, c) * v;
        }
        for (int k = p; k >= 1; --k) {
          const double* xk = sc.x.data() + static_cast<std::size_t>(k - 1) * d;
          const double* ak = sc.alpha.data() + static_cast<std::size_t>(k - 1) * d;
          double mu_dot_x = 0.0;
          for (int c = 0; c < d; ++c) {
            mu[static_cast<std::size_t>(c)] =
                dt * (omega * ak[c] + lambda[static_cast<std::size_t>(c)]);
            mu_dot_x += mu[static_cast<std::size_t>(c)] * xk[c];
          }
          ga[k - 1] += mu_dot_x;
          const double* row = stage.phi_at(static_cast<int>(j), k - 1);
          double* gck = gc + (static_cast<std::size_t>(k - 1) * L) * d;
          for (int l = 0; l < L; ++l)
            for (int c = 0; c < d; ++c)
              gck[static_cast<std::size_t>(l) * d + c] +=
                  row[l] * mu[static_cast<std::size_t>(c)];
          const double gain = pol.a[static_cast<std::size_t>(k - 1)];
          for (int c = 0; c < d; ++c)
            lambda[static_cast<std::size_t>(c)] +=
                gain * mu[static_cast<std::size_t>(c)];
          if (stage.running) {
            const double* fv =
                stage.fvals.data() + (j * static_cast<std::size_t>(p) + (k - 1)) * d;
            for (int r = 0; r < d; ++r) {
              double v = fv[r];
              for (int c = 0; c < d; ++c) v += Q(r, c) * xk[c];
              for (int c = 0; c < d; ++c)
                lambda[static_cast<std::size_t>(c)] += omega * dt * Q(r, c) * v;
            }
          }
        }
      }
    }
    chunk_cost[chunk] = cost_acc;
  });

  PolicyGradient grad;
  grad.a.assign(static_cast<std::size_t>(p), 0.0);
  grad.c.assign(static_cast<std::size_t>(p) * L * d, 0.0);
  double cost = 0.0;
  for (std::size_t ch = 0; ch < n_chunks; ++ch) {
    cost += chunk_cost[ch];
    const double* ga = partials.data() + ch * gsize;
    for (int k = 0; k < p; ++k) grad.a[static_cast<std::size_t>(k)] += ga[k];
    const double* gc = ga + p;
    for (std::size_t idx = 0; idx < static_cast<std::size_t>(p) * L * d; ++idx)
      grad.c[idx] += gc[idx];
  }
  grad.cost_raw = cost;
  grad.cost_renormalized = cost - stage.renormalization();
  return grad;
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamOptions {
  int epochs = 15;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  bool freeze_gain = false;
  double diverge_bound = 1e6;
};

/// First/second moment accumulators shaped like (a, c) plus the step counter.
struct AdamState {
  std::vector<double> m_a, v_a;
  std::vector<double> m_c, v_c;
  long t = 0;

  static AdamState zeros(const FeedbackPolicy& pol) {
    AdamState s;
    s.m_a.assign(pol.a.size(), 0.0);
    s.v_a.assign(pol.a.size(), 0.0);
    s.m_c.assign(pol.c.size(), 0.0);
    s.v_c.assign(pol.c.size(), 0.0);
    return s;
  }
};

namespace detail {

inline void adam_update(std::span<const double> grad, std::span<double> m,
                        std::span<double> v, std::span<double> theta, long t,
                        const AdamOptions& opt) {
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * grad[i];
    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
    theta[i] -= opt.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt.eps_adam);
  }
}

}  // namespace detail

struct AdamResult {
  std::vector<double> cost_history;  // raw cost per epoch plus the final value
  double final_cost_raw = 0.0;
  double final_cost_renormalized = 0.0;
};

/// Full-batch ADAM on (a, c); returns the final iterate in place. Aborts via
/// numerical_error if the cost leaves the divergence bound.
inline AdamResult adam_optimize(FeedbackPolicy& pol, const StageData& stage,
                                const AdamOptions& opt) {
  if (opt.epochs < 1)
    throw std::invalid_argument("adam_optimize: epochs must be >= 1");
  AdamState state = AdamState::zeros(pol);
  AdamResult res;
  for (int e = 0; e < opt.epochs; ++e) {
    PolicyGradient grad = cost_gradient(pol, stage);
    if (!std::isfinite(grad.cost_raw) || grad.cost_raw > opt.diverge_bound)
      throw numerical_error("adam_optimize: cost diverged");
    res.cost_history.push_back(grad.cost_raw);
    ++state.t;
    if (!opt.freeze_gain)
      detail::adam_update(grad.a, state.m_a, state.v_a, pol.a, state.t, opt);
    detail::adam_update(grad.c, state.m_c, state.v_c, pol.c, state.t, opt);
  }
  const PolicyGradient last = cost_gradient(pol, stage);
  if (!std::isfinite(last.cost_raw) || last.cost_raw > opt.diverge_bound)
    throw numerical_error("adam_optimize: cost diverged");
  res.cost_history.push_back(last.cost_raw);
  res.final_cost_raw = last.cost_raw;
  res.final_cost_renormalized = last.cost_renormalized;
  return res;
}

// ---------------------------------------------------------------------------
// Exact LQ best response

struct BestResponse {
  FeedbackPolicy policy;   // a = -eta^{(p)}, c = the negated recursion coeffs
  InterceptField h_next;   // the backward-recursion intercept per (j, k)
};

/// Solves the sampled-data control problem exactly: gain -eta^{(p)} from the
/// discrete Riccati table and intercept from the backward conditional-
/// expectation recursion, with each conditional expectation realized as a
/// tail-weighted Hermite regression on the environment.
inline BestResponse analytic_best_response(const StageData& stage,
                                           const RiccatiTable& eta_disc,
                                           const std::vector<FeatureStandardizer>& standardizers) {
  const int N = stage.N(), p = stage.p(), d = stage.d();
  const MultiIndexSet& basis = *stage.basis;
  const int L = basis.size();
  const TimeGrid& grid = *stage.grid;
  const double dt = grid.dt();
  const ModelSpec& model = *stage.model;

  std::vector<double> gains;
  if (!eta_disc.scalar_gains(&gains))
    throw std::invalid_argument(
        "analytic_best_response: gain table is not a multiple of the identity, "
        "no scalar-gain policy representation exists");

  const Eigen::MatrixXd QtQ = model.Q.transpose() * model.Q;
  const Eigen::MatrixXd Qt = model.Q.transpose();
  const Eigen::MatrixXd Rt = model.R.transpose();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);

  FeedbackPolicy pol = FeedbackPolicy::zeros(p, d, basis);
  pol.standardizers = standardizers;
  for (int k = 0; k < p; ++k)
    pol.a[static_cast<std::size_t>(k)] = -gains[static_cast<std::size_t>(k)];

  InterceptField h_next(N, p, d);

  // Terminal row R^T g(m_T).
  Eigen::MatrixXd htilde(N, d);
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
    Eigen::Map<const Eigen::VectorXd> g(
        stage.gvals.data() + j * static_cast<std::size_t>(d), d);
    htilde.row(static_cast<Eigen::Index>(j)) = (Rt * g).transpose();
  });

  for (int l = p - 1; l >= 0; --l) {
    const bool interior = l <= p - 2;
    Eigen::MatrixXd A = id + dt * eta_disc.eta[static_cast<std::size_t>(l + 1)];
    if (interior) A += dt * dt * QtQ;
    const Eigen::MatrixXd Ainv = A.partialPivLu().solve(id);

    Eigen::MatrixXd Z = htilde;
    if (interior && stage.running) {
      for (int j = 0; j < N; ++j) {
        Eigen::Map<const Eigen::VectorXd> fv(
            stage.fvals.data() +
                (static_cast<std::size_t>(j) * p + (l + 1)) * d, d);
        Z.row(j) += dt * (Qt * fv).transpose();
      }
    }

    Eigen::MatrixXd node_coeffs = Eigen::MatrixXd::Zero(L, d);
    if (l == 0) {
      Eigen::VectorXd num = Eigen::VectorXd::Zero(d);
      double den = 0.0;
      for (int j = 0; j < N; ++j) {
        const double w = stage.weights.tail_at(j, 0);
        num += w * Z.row(j).transpose();
        den += w;
      }
      if (den == 0.0)
        throw numerical_error("analytic_best_response: all-zero weights");
      node_coeffs.row(0) = (num / den).transpose();
    } else {
      Eigen::MatrixXd X(N, L);
      for (int j = 0; j < N; ++j) {
        const double* row = stage.phi_at(j, l);
        for (int li = 0; li < L; ++li) X(j, li) = row[li];
      }
      Eigen::VectorXd w(N);
      for (int j = 0; j < N; ++j) w[j] = stage.weights.tail_at(j, l);
      node_coeffs = weighted_least_squares(X, Z, w);
    }
    node_coeffs = node_coeffs * Ainv.transpose();

    // Evaluate through the same accumulation the rollout uses, so the policy
    // reproduces these values bitwise.
    for (int li = 0; li < L; ++li)
      for (int c = 0; c < d; ++c)
        pol.c_at(l, li)[c] = -node_coeffs(li, c);
    parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
      const double* row = stage.phi_at(static_cast<int>(j), l);
      double* out = h_next.at(static_cast<int>(j), l);
      for (int c = 0; c < d; ++c) out[c] = 0.0;
      for (int li = 0; li < L; ++li)
        for (int c = 0; c < d; ++c) out[c] += node_coeffs(li, c) * row[li];
      htilde.row(static_cast<Eigen::Index>(j)) =
          Eigen::Map<const Eigen::VectorXd>(out, d).transpose();
    });
  }

  BestResponse br;
  br.policy = std::move(pol);
  br.h_next = std::move(h_next);
  return br;
}

}  // namespace mfglq
