#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <optional>
#include <vector>

#include "mfglq/errors.hpp"
#include "mfglq/fields.hpp"
#include "mfglq/girsanov.hpp"
#include "mfglq/hash.hpp"
#include "mfglq/model.hpp"
#include "mfglq/noise.hpp"
#include "mfglq/parallel.hpp"
#include "mfglq/regression.hpp"
#include "mfglq/riccati.hpp"
#include "mfglq/time_grid.hpp"

namespace mfglq {

namespace detail {

// exp(A) for symmetric A via the spectral decomposition; the gain matrices
// are symmetric PSD so this is exact up to the eigensolve.
inline Eigen::MatrixXd symmetric_expm(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  return es.eigenvectors() *
         es.eigenvalues().array().exp().matrix().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace detail

/// Everything the Picard solver needs besides the bank.
struct ReferenceConfig {
  ModelSpec model;
  int p = 10;
  int N = 1000;
  int D = 4;
  int picard_iters = 10;
  double clamp = 1.0;
  double convergence_tol = 1e-2;
  FeatureStandardizer::Mode standardizer_mode = FeatureStandardizer::Mode::diag;

  std::uint64_t fingerprint(std::uint64_t bank_fp) const {
    Fnv1a h;
    h.str("reference-v1")
        .u64(bank_fp)
        .i64(model.d)
        .str(model.g.describe())
        .str(model.f.describe())
        .f64(model.sigma)
        .f64(model.eps)
        .f64(model.T)
        .i64(p)
        .i64(N)
        .i64(D)
        .i64(picard_iters)
        .f64(clamp)
        .i64(standardizer_mode == FeatureStandardizer::Mode::diag ? 0 : 1);
    for (int r = 0; r < model.d; ++r) {
      h.f64(model.x0[r]);
      for (int c = 0; c < model.d; ++c) h.f64(model.Q(r, c)).f64(model.R(r, c));
    }
    return h.value();
  }
};

/// Regression-represented equilibrium (m, h) from the Picard solver, plus the
/// equilibrium cost under the tilted simulation.
struct ReferenceSolution {
  EnvironmentField m_field;
  InterceptField h_field;
  MultiIndexSet basis;
  std::vector<RegressionCoefficients> coeffs;  // node k = 0..p-1
  double cost_raw = 0.0;
  double cost_renormalized = 0.0;
  double last_picard_delta = 0.0;
  bool converged = true;
  std::uint64_t fingerprint = 0;
  std::uint64_t bank_fingerprint = 0;
};

/// Euler scheme for the forward mean process dm = -eta m dt + eps dW driven
/// by the common increments, one path per realization.
inline EnvironmentField simulate_ou_forward(const RiccatiTable& eta,
                                            const NoiseBank& bank,
                                            const TimeGrid& grid, double eps,
                                            const Eigen::VectorXd& m0) {
  const int N = bank.realizations();
  const int p = grid.steps();
  const int d = bank.dim();
  if (p != bank.steps() || static_cast<int>(eta.eta.size()) != p + 1)
    throw std::invalid_argument("simulate_ou_forward: grid/bank/eta mismatch");
  EnvironmentField env(N, p, d);
  const double dt = grid.dt();
  const double noise_scale = eps * std::sqrt(dt);
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
    const auto dw = bank.common_path(static_cast<int>(j));
    Eigen::VectorXd m = m0;
    for (int c = 0; c < d; ++c) env.at(static_cast<int>(j), 0)[c] = m[c];
    for (int k = 0; k < p; ++k) {
      Eigen::VectorXd next = m - dt * (eta.eta[static_cast<std::size_t>(k)] * m);
      for (int c = 0; c < d; ++c)
        next[c] += noise_scale * dw[static_cast<std::size_t>(k) * d + c];
      m = next;
      for (int c = 0; c < d; ++c) env.at(static_cast<int>(j), k + 1)[c] = m[c];
    }
  });
  return env;
}

namespace detail {

// Discounted terminal targets exp(-(T/p) sum_{s>=k} eta_s) R^T g(m_T), the
// left-endpoint Riemann sum of the continuous discount. Returns one d-vector
// per (j, k in 0..p-1) plus the matrix discounts.
struct PicardTargets {
  std::vector<Eigen::MatrixXd> discount;  // per k
  std::vector<double> terminal;           // R^T g(m_T) per j, d-vector
};

inline PicardTargets picard_targets(const EnvironmentField& m_field,
                                    const RiccatiTable& eta,
                                    const TimeGrid& grid, const ModelSpec& model) {
  const int p = grid.steps();
  const int d = m_field.d;
  PicardTargets t;
  t.discount.resize(static_cast<std::size_t>(p));
  Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(d, d);
  for (int k = p - 1; k >= 0; --k) {
    acc = symmetric_expm(-grid.dt() * eta.eta[static_cast<std::size_t>(k)]) * acc;
    t.discount[static_cast<std::size_t>(k)] = acc;
  }
  t.terminal.resize(static_cast<std::size_t>(m_field.N) * d);
  const Eigen::MatrixXd Rt = model.R.transpose();
  parallel_for(static_cast<std::size_t>(m_field.N), [&](std::size_t j) {
    Eigen::VectorXd g(d);
    model.g.eval(m_field.at(static_cast<int>(j), p), g.data());
    Eigen::VectorXd v = Rt * g;
    for (int c = 0; c < d; ++c) t.terminal[j * d + c] = v[c];
  });
  return t;
}

inline void clamp_coords(double* v, int d, double bound) {
  for (int c = 0; c < d; ++c) v[c] = std::clamp(v[c], -bound, bound);
}

}  // namespace detail

/// One Picard iteration: tail-weighted Hermite regression of the discounted
/// terminal target on the forward mean at each node, then projection onto
/// [-clamp, clamp]. Node 0 uses the weighted mean only.
inline InterceptField picard_step(const InterceptField& h_prev,
                                  const EnvironmentField& m_field,
                                  const RiccatiTable& eta, const NoiseBank& bank,
                                  const TimeGrid& grid, const ModelSpec& model,
                                  int D, double clamp,
                                  FeatureStandardizer::Mode mode,
                                  MultiIndexSet* basis_out = nullptr,
                                  std::vector<RegressionCoefficients>* coeffs_out = nullptr) {
  require_same_shape(m_field, h_prev);
  if (!model.f.is_zero())
    throw std::invalid_argument(
        "picard_step: nonzero running coupling f is outside the reference "
        "solver's representation");
  const int N = m_field.N;
  const int p = m_field.p;
  const int d = m_field.d;
  const auto basis = MultiIndexSet::total_degree(d, D);
  const int L = basis.size();

  const GirsanovWeights weights =
      model.eps > 0.0 ? girsanov_weights(h_prev, bank, model.eps, grid)
                      : unit_weights(N, p);
  const auto targets = detail::picard_targets(m_field, eta, grid, model);

  InterceptField h_next(N, p, d, clamp);
  if (coeffs_out) coeffs_out->assign(static_cast<std::size_t>(p), {});
  if (basis_out) *basis_out = basis;

  // Node 0: the forward mean is deterministic, only the constant matters.
  {
    Eigen::VectorXd num = Eigen::VectorXd::Zero(d);
    double den = 0.0;
    const Eigen::MatrixXd& disc = targets.discount[0];
    for (int j = 0; j < N; ++j) {
      const double w = weights.tail_at(j, 0);
      Eigen::Map<const Eigen::VectorXd> y(targets.terminal.data() +
                                          static_cast<std::size_t>(j) * d, d);
      num += w * (disc * y);
      den += w;
    }
    if (den == 0.0) throw numerical_error("picard_step: all-zero weights");
    Eigen::VectorXd c0 = num / den;
    for (int j = 0; j < N; ++j) {
      for (int c = 0; c < d; ++c) h_next.at(j, 0)[c] = c0[c];
      detail::clamp_coords(h_next.at(j, 0), d, clamp);
    }
    if (coeffs_out) {
      RegressionCoefficients rc;
      rc.c = Eigen::MatrixXd::Zero(L, d);
      rc.c.row(0) = c0.transpose();
      rc.standardizer.mode = FeatureStandardizer::Mode::diag;
      rc.standardizer.mean = Eigen::VectorXd::Zero(d);
      rc.standardizer.scale = Eigen::VectorXd::Ones(d);
      (*coeffs_out)[0] = std::move(rc);
    }
  }

  std::vector<int> failed_nodes;
  std::mutex fail_mutex;
  parallel_for(static_cast<std::size_t>(p - 1), [&](std::size_t idx) {
    const int k = static_cast<int>(idx) + 1;
    std::vector<double> samples(static_cast<std::size_t>(N) * d);
    for (int j = 0; j < N; ++j)
      for (int c = 0; c < d; ++c)
        samples[static_cast<std::size_t>(j) * d + c] = m_field.at(j, k)[c];
    const auto st = fit_standardizer(samples, d, mode);

    Eigen::MatrixXd X(N, L);
    std::vector<double> z(static_cast<std::size_t>(d));
    std::vector<double> hb(static_cast<std::size_t>(d) * (D + 1));
    for (int j = 0; j < N; ++j) {
      std::vector<double> row(static_cast<std::size_t>(L));
      feature_row(basis, st, m_field.at(j, k), row.data(), z.data(), hb.data());
      for (int l = 0; l < L; ++l) X(j, l) = row[static_cast<std::size_t>(l)];
    }
    const Eigen::MatrixXd& disc = targets.discount[static_cast<std::size_t>(k)];
    Eigen::MatrixXd Y(N, d);
    Eigen::VectorXd w(N);
    for (int j = 0; j < N; ++j) {
      Eigen::Map<const Eigen::VectorXd> y(targets.terminal.data() +
                                          static_cast<std::size_t>(j) * d, d);
      Y.row(j) = (disc * y).transpose();
      w[j] = weights.tail_at(j, k);
    }
    Eigen::MatrixXd cmat;
    try {
      cmat = weighted_least_squares(X, Y, w);
    } catch (const std::exception&) {
      std::lock_guard<std::mutex> lock(fail_mutex);
      failed_nodes.push_back(k);
      return;
    }
    for (int j = 0; j < N; ++j) {
      for (int c = 0; c < d; ++c) {
        double v = 0.0;
        for (int l = 0; l < L; ++l) v += cmat(l, c) * X(j, l);
        h_next.at(j, k)[c] = v;
      }
      detail::clamp_coords(h_next.at(j, k), d, clamp);
    }
    if (coeffs_out) {
      RegressionCoefficients rc;
      rc.c = std::move(cmat);
      rc.standardizer = st;
      (*coeffs_out)[static_cast<std::size_t>(k)] = std::move(rc);
    }
  });
  if (!failed_nodes.empty())
    throw numerical_error("picard_step: regression failed at a time node");
  return h_next;
}

inline double field_l2_diff(const InterceptField& a, const InterceptField& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.h.size(); ++i) {
    const double dv = a.h[i] - b.h[i];
    acc += dv * dv;
  }
  return std::sqrt(acc / (static_cast<double>(a.N) * a.p));
}

double reference_cost_raw(const ReferenceSolution& sol, const RiccatiTable& eta,
                          const NoiseBank& bank, const TimeGrid& grid,
                          const ModelSpec& model, double sigma, double eps,
                          double* renormalized,
                          std::vector<double>* per_j_value = nullptr);

/// Algorithm: Picard iterations from h = 0 over one fixed bank; stores the
/// fields, the per-node regressions, and the equilibrium cost.
inline ReferenceSolution solve_reference(const ReferenceConfig& cfg,
                                         const NoiseBank& bank,
                                         const RiccatiTable& eta) {
  const TimeGrid grid(cfg.model.T, cfg.p);
  if (bank.realizations() != cfg.N || bank.steps() != cfg.p ||
      bank.dim() != cfg.model.d)
    throw std::invalid_argument("solve_reference: bank does not match config");

  ReferenceSolution sol;
  sol.m_field =
      simulate_ou_forward(eta, bank, grid, cfg.model.eps, cfg.model.x0);
  InterceptField h(cfg.N, cfg.p, cfg.model.d, cfg.clamp);
  double delta = 0.0;
  for (int it = 0; it < cfg.picard_iters; ++it) {
    const bool last = it + 1 == cfg.picard_iters;
    InterceptField next = picard_step(
        h, sol.m_field, eta, bank, grid, cfg.model, cfg.D, cfg.clamp,
        cfg.standardizer_mode, last ? &sol.basis : nullptr,
        last ? &sol.coeffs : nullptr);
    delta = field_l2_diff(next, h);
    h = std::move(next);
  }
  if (sol.coeffs.empty()) {
    sol.basis = MultiIndexSet::total_degree(cfg.model.d, cfg.D);
    RegressionCoefficients zero;
    zero.c = Eigen::MatrixXd::Zero(sol.basis.size(), cfg.model.d);
    zero.standardizer.mode = FeatureStandardizer::Mode::diag;
    zero.standardizer.mean = Eigen::VectorXd::Zero(cfg.model.d);
    zero.standardizer.scale = Eigen::VectorXd::Ones(cfg.model.d);
    sol.coeffs.assign(static_cast<std::size_t>(cfg.p), zero);
  }
  sol.h_field = std::move(h);
  sol.last_picard_delta = delta;
  sol.converged = cfg.picard_iters == 0 || delta <= cfg.convergence_tol;
  sol.bank_fingerprint = bank.fingerprint();
  sol.fingerprint = cfg.fingerprint(sol.bank_fingerprint);
  sol.cost_raw = reference_cost_raw(sol, eta, bank, grid, cfg.model,
                                    cfg.model.sigma, cfg.model.eps,
                                    &sol.cost_renormalized);
  return sol;
}

/// Monte-Carlo equilibrium cost of the feedback -(eta x + h) under the
/// unshifted simulation with Girsanov weights. The chosen feedback and the
/// tilt cancel in the realized control, so the state drift is -eta x plus
/// exploration. `raw` penalizes the full randomized control (the learner's
/// raw series); `renormalized` penalizes the chosen feedback alone, the
/// direct estimate of the tilted cost functional.
inline double reference_cost_raw(const ReferenceSolution& sol,
                                 const RiccatiTable& eta, const NoiseBank& bank,
                                 const TimeGrid& grid, const ModelSpec& model,
                                 double sigma, double eps, double* renormalized,
                                 std::vector<double>* per_j_value) {
  const int N = sol.m_field.N;
  const int p = sol.m_field.p;
  const int d = sol.m_field.d;
  const int M = sigma > 0.0 ? bank.particles() : 1;
  const double dt = grid.dt();
  const double expl = eps > 0.0 ? eps * std::sqrt(1.0 / dt) : 0.0;
  const double idio = sigma > 0.0 ? sigma * std::sqrt(dt) : 0.0;
  const bool running = model.has_running_cost();

  GirsanovWeights weights = eps > 0.0
                                ? girsanov_weights(sol.h_field, bank, eps, grid)
                                : unit_weights(N, p);

  const std::size_t n_chunks = chunk_count(static_cast<std::size_t>(N));
  std::vector<double> chunk_raw(n_chunks, 0.0);
  std::vector<double> chunk_val(n_chunks, 0.0);
  if (per_j_value) per_j_value->assign(static_cast<std::size_t>(N), 0.0);
  parallel_chunks(static_cast<std::size_t>(N), [&](std::size_t chunk,
                                                   std::size_t jb,
                                                   std::size_t je) {
    Eigen::VectorXd x(d), chosen(d), full(d), gterm(d);
    double acc_raw = 0.0, acc_val = 0.0;
    for (std::size_t j = jb; j < je; ++j) {
      const auto dw = bank.common_path(static_cast<int>(j));
      model.g.eval(sol.m_field.at(static_cast<int>(j), p), gterm.data());
      double inner_raw = 0.0, inner_val = 0.0;
      for (int i = 0; i < M; ++i) {
        const auto db = sigma > 0.0 ? bank.idio_path(i, static_cast<int>(j))
                                    : std::span<const double>{};
        x = model.x0;
        double run_raw = 0.0, run_val = 0.0, run_state = 0.0;
        for (int k = 1; k <= p; ++k) {
          if (running) run_state += 0.5 * dt * (model.Q * x).squaredNorm();
          const double* h = sol.h_field.at(static_cast<int>(j), k - 1);
          chosen = -(eta.eta[static_cast<std::size_t>(k - 1)] * x);
          full = chosen;
          for (int c = 0; c < d; ++c) chosen[c] -= h[c];
          if (eps > 0.0) {
            // The tilt cancels the intercept in the realized control.
            for (int c = 0; c < d; ++c)
              full[c] += expl * dw[static_cast<std::size_t>(k - 1) * d + c];
          } else {
            full = chosen;
          }
          run_raw += 0.5 * dt * full.squaredNorm();
          run_val += 0.5 * dt * chosen.squaredNorm();
          x += dt * full;
          if (sigma > 0.0)
            for (int c = 0; c < d; ++c)
              x[c] += idio * db[static_cast<std::size_t>(k - 1) * d + c];
        }
        const double term = 0.5 * (model.R * x + gterm).squaredNorm();
        inner_raw += run_raw + run_state + term;
        inner_val += run_val + run_state + term;
      }
      acc_raw += weights.full[j] * inner_raw / M;
      acc_val += weights.full[j] * inner_val / M;
      if (per_j_value) (*per_j_value)[j] = weights.full[j] * inner_val / M;
    }
    chunk_raw[chunk] = acc_raw;
    chunk_val[chunk] = acc_val;
  });
  double raw = 0.0, val = 0.0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    raw += chunk_raw[c];
    val += chunk_val[c];
  }
  raw /= N;
  val /= N;
  if (renormalized) *renormalized = val;
  return raw;
}

// ---------------------------------------------------------------------------
// Cache: same little-endian 64-bit header convention as the noise bank.

inline constexpr std::uint64_t kRefMagic = 0x4d46474c51524631ull;  // MFGLQRF1
inline constexpr std::uint64_t kRefVersion = 1;

inline void save_reference(const ReferenceSolution& sol,
                           const std::filesystem::path& file) {
  std::FILE* f = std::fopen(file.string().c_str(), "wb");
  if (!f)
    throw cache_error("cannot open reference cache for writing: " + file.string());
  const int N = sol.m_field.N, p = sol.m_field.p, d = sol.m_field.d;
  const int L = sol.basis.size();
  const std::uint64_t header[7] = {kRefMagic, kRefVersion, sol.fingerprint,
                                   sol.bank_fingerprint,
                                   static_cast<std::uint64_t>(N),
                                   static_cast<std::uint64_t>(p),
                                   (static_cast<std::uint64_t>(d) << 32) |
                                       static_cast<std::uint64_t>(L)};
  bool ok = std::fwrite(header, sizeof header, 1, f) == 1;
  auto put = [&](const double* ptr, std::size_t n) {
    ok = ok && std::fwrite(ptr, sizeof(double), n, f) == n;
  };
  const double scalars[4] = {sol.cost_raw, sol.cost_renormalized,
                             sol.last_picard_delta,
                             sol.converged ? 1.0 : 0.0};
  put(scalars, 4);
  put(sol.m_field.m.data(), sol.m_field.m.size());
  put(sol.h_field.h.data(), sol.h_field.h.size());
  const double clamp = sol.h_field.clamp;
  put(&clamp, 1);
  for (const auto& rc : sol.coeffs) {
    std::vector<double> buf;
    for (int l = 0; l < L; ++l)
      for (int c = 0; c < d; ++c) buf.push_back(rc.c(l, c));
    const auto& st = rc.standardizer;
    buf.push_back(st.mode == FeatureStandardizer::Mode::diag ? 0.0 : 1.0);
    buf.push_back(st.degenerate ? 1.0 : 0.0);
    for (int c = 0; c < d; ++c) buf.push_back(st.mean[c]);
    if (st.mode == FeatureStandardizer::Mode::diag) {
      for (int c = 0; c < d; ++c) buf.push_back(st.scale[c]);
    } else {
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) buf.push_back(st.chol(r, c));
    }
    put(buf.data(), buf.size());
  }
  if (std::fclose(f) != 0 || !ok)
    throw cache_error("failed writing reference cache: " + file.string());
}

inline bool load_reference(const std::filesystem::path& file,
                           std::uint64_t fingerprint, int N, int p, int d,
                           int D, ReferenceSolution* out) {
  std::FILE* f = std::fopen(file.string().c_str(), "rb");
  if (!f) return false;
  auto basis = MultiIndexSet::total_degree(d, D);
  const int L = basis.size();
  std::uint64_t header[7];
  bool ok = std::fread(header, sizeof header, 1, f) == 1;
  ok = ok && header[0] == kRefMagic && header[1] == kRefVersion &&
       header[2] == fingerprint && header[4] == static_cast<std::uint64_t>(N) &&
       header[5] == static_cast<std::uint64_t>(p) &&
       header[6] == ((static_cast<std::uint64_t>(d) << 32) |
                     static_cast<std::uint64_t>(L));
  if (!ok) {
    std::fclose(f);
    return false;
  }
  ReferenceSolution sol;
  sol.fingerprint = header[2];
  sol.bank_fingerprint = header[3];
  sol.basis = std::move(basis);
  auto get = [&](double* ptr, std::size_t n) {
    ok = ok && std::fread(ptr, sizeof(double), n, f) == n;
  };
  double scalars[4];
  get(scalars, 4);
  sol.m_field = EnvironmentField(N, p, d);
  sol.h_field = InterceptField(N, p, d);
  get(sol.m_field.m.data(), sol.m_field.m.size());
  get(sol.h_field.h.data(), sol.h_field.h.size());
  get(&sol.h_field.clamp, 1);
  sol.coeffs.resize(static_cast<std::size_t>(p));
  for (int k = 0; ok && k < p; ++k) {
    auto& rc = sol.coeffs[static_cast<std::size_t>(k)];
    rc.c = Eigen::MatrixXd(L, d);
    std::vector<double> buf(static_cast<std::size_t>(L) * d + 2 +
                            static_cast<std::size_t>(d));
    get(buf.data(), static_cast<std::size_t>(L) * d + 2);
    if (!ok) break;
    std::size_t pos = 0;
    for (int l = 0; l < L; ++l)
      for (int c = 0; c < d; ++c) rc.c(l, c) = buf[pos++];
    const bool chol = buf[pos++] != 0.0;
    rc.standardizer.degenerate = buf[pos++] != 0.0;
    rc.standardizer.mean = Eigen::VectorXd(d);
    get(rc.standardizer.mean.data(), static_cast<std::size_t>(d));
    if (chol) {
      rc.standardizer.mode = FeatureStandardizer::Mode::cholesky;
      rc.standardizer.chol = Eigen::MatrixXd(d, d);
      std::vector<double> cb(static_cast<std::size_t>(d) * d);
      get(cb.data(), cb.size());
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c)
          rc.standardizer.chol(r, c) = cb[static_cast<std::size_t>(r) * d + c];
    } else {
      rc.standardizer.mode = FeatureStandardizer::Mode::diag;
      rc.standardizer.scale = Eigen::VectorXd(d);
      get(rc.standardizer.scale.data(), static_cast<std::size_t>(d));
    }
  }
  if (ok) {
    sol.cost_raw = scalars[0];
    sol.cost_renormalized = scalars[1];
    sol.last_picard_delta = scalars[2];
    sol.converged = scalars[3] != 0.0;
    ok = std::fgetc(f) == EOF;
  }
  std::fclose(f);
  if (!ok) return false;
  *out = std::move(sol);
  return true;
}

}  // namespace mfglq
