#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mfglq/errors.hpp"
#include "mfglq/fictitious_play.hpp"
#include "mfglq/hash.hpp"
#include "mfglq/model.hpp"

namespace mfglq {

/// Parsed experiment description: the play configuration plus orchestration
/// choices (recipe kind, annealing schedule, error metric, output).
struct ExperimentConfig {
  std::string name;
  std::string kind = "play";  // play | costcompare
  PlayConfig play;
  std::vector<double> schedule;  // annealing stages, empty if none
  std::string error_metric = "auto";  // auto | on | off
  std::string out_dir;
  std::map<std::string, std::string> entries;  // file content, canonicalized

  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.str("config-v1");
    for (const auto& [k, v] : entries) h.str(k).str("=").str(v).str(";");
    return h.value();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "experiment", "kind", "scheme", "variant", "seed",
      "model.d", "model.coupling", "model.kappa", "model.x0",
      "model.custom_points", "model.sigma", "model.eps", "model.T",
      "model.x0_state",
      "numerics.p", "numerics.M", "numerics.N", "numerics.D",
      "numerics.n_iters", "numerics.picard_iters", "numerics.clamp",
      "numerics.riccati", "numerics.standardizer", "numerics.keep_means",
      "optimizer.backend", "optimizer.lr", "optimizer.epochs",
      "optimizer.beta1", "optimizer.beta2",
      "anneal.schedule", "anneal.warm_start_policy",
      "run.error", "output.dir"};
  return keys;
}

class ConfigReader {
 public:
  explicit ConfigReader(std::map<std::string, std::string> entries)
      : entries_(std::move(entries)) {}

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::string str(const std::string& key, const std::string& dflt) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? dflt : it->second;
  }
  double num(const std::string& key, double dflt) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      fail(key + ": not a number ('" + it->second + "')");
      return dflt;
    }
  }
  long integer(const std::string& key, long dflt) {
    const double v = num(key, static_cast<double>(dflt));
    if (v != static_cast<long>(v)) fail(key + ": not an integer");
    return static_cast<long>(v);
  }
  bool flag(const std::string& key, bool dflt) {
    const std::string v = str(key, dflt ? "true" : "false");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(key + ": expected true/false");
    return dflt;
  }
  void fail(const std::string& msg) { problems_.push_back(msg); }
  void expect(bool cond, const std::string& msg) {
    if (!cond) problems_.push_back(msg);
  }
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::map<std::string, std::string> entries_;
  std::vector<std::string> problems_;
};

}  // namespace detail

/// Flat key-value text with dotted section names and '#' comments. Unknown
/// keys are rejected with their line number; every constraint violation is
/// listed in the thrown message.
inline ExperimentConfig parse_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw config_error("config file not found: " + file.string());

  std::map<std::string, std::string> entries;
  std::string line;
  int lineno = 0;
  std::vector<std::string> problems;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!detail::known_keys().count(key)) {
      problems.push_back("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      continue;
    }
    if (entries.count(key)) {
      problems.push_back("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      continue;
    }
    entries[key] = value;
  }

  detail::ConfigReader r(entries);
  for (const auto& p : problems) r.fail(p);

  ExperimentConfig cfg;
  cfg.entries = entries;
  cfg.name = r.str("experiment", "");
  r.expect(!cfg.name.empty(), "experiment: name is required");
  cfg.kind = r.str("kind", "play");
  r.expect(cfg.kind == "play" || cfg.kind == "costcompare",
           "kind: expected play or costcompare");

  const std::string scheme = r.str("scheme", "common_only");
  if (scheme == "two_noise")
    cfg.play.scheme = Scheme::two_noise;
  else if (scheme == "common_only")
    cfg.play.scheme = Scheme::common_only;
  else if (scheme == "idio_only")
    cfg.play.scheme = Scheme::idio_only;
  else
    r.fail("scheme: expected two_noise, common_only or idio_only");

  const std::string variant = r.str("variant", "standard");
  if (variant == "standard")
    cfg.play.variant = Variant::standard;
  else if (variant == "averaged_guess")
    cfg.play.variant = Variant::averaged_guess;
  else
    r.fail("variant: expected standard or averaged_guess");

  cfg.play.seed = static_cast<std::uint64_t>(r.integer("seed", 1));

  // Model block.
  const int d = static_cast<int>(r.integer("model.d", 1));
  r.expect(d >= 1, "model.d: must be >= 1");
  const double kappa = r.num("model.kappa", 1.0);
  const std::string coupling = r.str("model.coupling", "cos_kappa");
  Coupling g = Coupling::zero(std::max(d, 1));
  if (coupling == "cos_kappa") {
    if (d == 1 || d == 2) g = Coupling::cosine(d, kappa);
    else r.fail("model.coupling: cos_kappa supports d = 1 or 2");
  } else if (coupling == "cos_shifted") {
    if (d == 1) {
      const double x0 = r.has("model.x0") ? r.num("model.x0", 0.0)
                                          : cosine_shift_root(kappa);
      g = Coupling::cosine_shifted(kappa, x0);
    } else {
      r.fail("model.coupling: cos_shifted is d = 1 only");
    }
  } else if (coupling == "custom") {
    const std::string pts = r.str("model.custom_points", "");
    std::vector<double> xs, ys;
    std::stringstream ss(pts);
    std::string tok;
    bool ok = !pts.empty();
    while (ok && std::getline(ss, tok, ';')) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) { ok = false; break; }
      try {
        xs.push_back(std::stod(tok.substr(0, colon)));
        ys.push_back(std::stod(tok.substr(colon + 1)));
      } catch (...) { ok = false; }
    }
    if (ok && xs.size() >= 2 && d == 1) {
      g = Coupling::table(std::move(xs), std::move(ys));
    } else {
      r.fail("model.custom_points: expected 'x:y;x:y;...' with >= 2 points, d = 1");
    }
  } else {
    r.fail("model.coupling: expected cos_kappa, cos_shifted or custom");
  }

  const double default_sigma = cfg.play.scheme == Scheme::idio_only ? 1.0 : 0.0;
  cfg.play.model = ModelSpec::benchmark(std::max(d, 1), g,
                                        r.num("model.sigma", default_sigma),
                                        r.num("model.eps",
                                              cfg.play.scheme == Scheme::idio_only
                                                  ? 0.0 : 1.0));
  cfg.play.model.T = r.num("model.T", 1.0);
  const double x0s = r.num("model.x0_state", 0.0);
  cfg.play.model.x0.setConstant(x0s);
  r.expect(cfg.play.model.T > 0.0, "model.T: must be > 0");
  r.expect(cfg.play.model.sigma >= 0.0, "model.sigma: must be >= 0");
  r.expect(cfg.play.model.eps >= 0.0, "model.eps: must be >= 0");

  // Numerics block.
  const bool idio = cfg.play.scheme == Scheme::idio_only;
  cfg.play.p = static_cast<int>(r.integer("numerics.p", 10));
  cfg.play.M = static_cast<int>(r.integer("numerics.M", 1));
  cfg.play.N = static_cast<int>(r.integer("numerics.N", idio ? 1 : 1000));
  cfg.play.D = static_cast<int>(r.integer("numerics.D", idio ? 0 : 4));
  cfg.play.n_iters = static_cast<int>(r.integer("numerics.n_iters", 10));
  cfg.play.picard_iters = static_cast<int>(r.integer("numerics.picard_iters", 10));
  cfg.play.clamp = r.num("numerics.clamp", 1.0);
  r.expect(cfg.play.p >= 1 && cfg.play.M >= 1 && cfg.play.N >= 1,
           "numerics: counts must be >= 1");
  r.expect(cfg.play.D >= 0, "numerics.D: must be >= 0");
  r.expect(cfg.play.n_iters >= 0, "numerics.n_iters: must be >= 0");
  r.expect(cfg.play.clamp > 0.0, "numerics.clamp: must be > 0");

  const std::string riccati = r.str("numerics.riccati", "learned");
  if (riccati == "known")
    cfg.play.riccati_known = true;
  else if (riccati == "learned")
    cfg.play.riccati_known = false;
  else
    r.fail("numerics.riccati: expected known or learned");

  const std::string std_mode = r.str("numerics.standardizer", "diag");
  if (std_mode == "diag")
    cfg.play.standardizer_mode = FeatureStandardizer::Mode::diag;
  else if (std_mode == "cholesky")
    cfg.play.standardizer_mode = FeatureStandardizer::Mode::cholesky;
  else
    r.fail("numerics.standardizer: expected diag or cholesky");
  cfg.play.keep_mean_history = r.flag("numerics.keep_means", false);

  // Optimizer block.
  const std::string backend = r.str("optimizer.backend", "adam");
  if (backend == "adam")
    cfg.play.backend = Backend::adam;
  else if (backend == "analytic")
    cfg.play.backend = Backend::analytic;
  else
    r.fail("optimizer.backend: expected adam or analytic");
  cfg.play.adam.lr = r.num("optimizer.lr", 0.01);
  cfg.play.adam.epochs = static_cast<int>(r.integer("optimizer.epochs", 15));
  cfg.play.adam.beta1 = r.num("optimizer.beta1", 0.9);
  cfg.play.adam.beta2 = r.num("optimizer.beta2", 0.999);
  r.expect(cfg.play.adam.lr > 0.0, "optimizer.lr: must be > 0");
  r.expect(cfg.play.adam.epochs >= 1, "optimizer.epochs: must be >= 1");

  // Annealing block.
  if (r.has("anneal.schedule")) {
    std::stringstream ss(r.str("anneal.schedule", ""));
    std::string tok;
    bool ok = true;
    while (std::getline(ss, tok, ',')) {
      try {
        cfg.schedule.push_back(std::stod(detail::trim(tok)));
      } catch (...) {
        ok = false;
      }
    }
    for (std::size_t q = 0; ok && q < cfg.schedule.size(); ++q)
      ok = cfg.schedule[q] > 0.0 &&
           (q == 0 || cfg.schedule[q] < cfg.schedule[q - 1]);
    if (!ok || cfg.schedule.empty())
      r.fail("anneal.schedule: expected a strictly decreasing positive list");
  }
  cfg.play.warm_start_policy = r.flag("anneal.warm_start_policy", true);

  cfg.error_metric = r.str("run.error", "auto");
  r.expect(cfg.error_metric == "auto" || cfg.error_metric == "on" ||
               cfg.error_metric == "off",
           "run.error: expected auto, on or off");

  const char* env_out = std::getenv("MFGLQ_OUT");
  cfg.out_dir = r.str("output.dir", env_out ? env_out : "out");

  if (!r.problems().empty()) {
    std::string msg = "invalid config " + file.string() + ":";
    for (const auto& p : r.problems()) msg += "\n  - " + p;
    throw config_error(msg);
  }
  cfg.play.validate();
  return cfg;
}

}  // namespace mfglq
