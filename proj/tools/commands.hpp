#pragma once

// Experiment commands behind the sksd executable. Each command reads a JSON
// config, writes CSV/JSON files into an output directory and returns an exit
// code: 0 on success, 2 for config errors, 1 for runtime errors.

#include "sksd/benchmarks.hpp"
#include "sksd/ica.hpp"
#include "sksd/samplers.hpp"
#include "sksd/sghmc.hpp"

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sksd::cli {

using nlohmann::json;
namespace fs = std::filesystem;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flag values; each overrides the config field of the same name.
struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
};

/// Reads fields from a JSON object, records the resolved values (defaults
/// included) and rejects fields nobody asked for.
class Config {
 public:
  explicit Config(json j) : j_(std::move(j)) {
    if (j_.is_null()) j_ = json::object();
    if (!j_.is_object()) throw ConfigError("config must be a JSON object");
  }

  double number(const std::string& key, double fallback) {
    const json* v = take(key);
    if (!v) return record(key, fallback);
    if (!v->is_number()) throw ConfigError("field '" + key + "' must be a number");
    return record(key, v->get<double>());
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    const json* v = take(key);
    if (!v) return record(key, fallback);
    if (!v->is_number_integer() || v->get<long long>() < 0)
      throw ConfigError("field '" + key + "' must be a non-negative integer");
    return record(key, v->get<std::size_t>());
  }

  bool flag(const std::string& key, bool fallback) {
    const json* v = take(key);
    if (!v) return record(key, fallback);
    if (!v->is_boolean()) throw ConfigError("field '" + key + "' must be true or false");
    return record(key, v->get<bool>());
  }

  std::string text(const std::string& key, const std::string& fallback) {
    const json* v = take(key);
    if (!v) return record(key, fallback);
    if (!v->is_string()) throw ConfigError("field '" + key + "' must be a string");
    return record(key, v->get<std::string>());
  }

  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) {
    const json* v = take(key);
    if (!v) return record(key, fallback);
    if (!v->is_array() || v->empty()) throw ConfigError("field '" + key + "' must be a non-empty array of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) throw ConfigError("field '" + key + "' must be a non-empty array of numbers");
      out.push_back(e.get<double>());
    }
    return record(key, out);
  }

  std::vector<std::size_t> counts(const std::string& key, const std::vector<std::size_t>& fallback) {
    const json* v = take(key);
    if (!v) return record(key, fallback);
    if (!v->is_array() || v->empty()) throw ConfigError("field '" + key + "' must be a non-empty array of integers");
    std::vector<std::size_t> out;
    for (const auto& e : *v) {
      if (!e.is_number_integer() || e.get<long long>() < 1)
        throw ConfigError("field '" + key + "' must be a non-empty array of positive integers");
      out.push_back(e.get<std::size_t>());
    }
    return record(key, out);
  }

  std::vector<std::string> texts(const std::string& key, const std::vector<std::string>& fallback) {
    const json* v = take(key);
    if (!v) return record(key, fallback);
    if (!v->is_array() || v->empty()) throw ConfigError("field '" + key + "' must be a non-empty array of strings");
    std::vector<std::string> out;
    for (const auto& e : *v) {
      if (!e.is_string()) throw ConfigError("field '" + key + "' must be a non-empty array of strings");
      out.push_back(e.get<std::string>());
    }
    return record(key, out);
  }

  /// Raw sub-document, or nullptr when absent.
  const json* object(const std::string& key) {
    const json* v = take(key);
    if (v) resolved_[key] = *v;
    return v;
  }

  void set_resolved(const std::string& key, json value) { resolved_[key] = std::move(value); }

  void finish() const {
    for (const auto& item : j_.items())
      if (!used_.count(item.key())) throw ConfigError("unknown field '" + item.key() + "'");
  }

  const json& resolved() const { return resolved_; }

 private:
  const json* take(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  template <typename T>
  T record(const std::string& key, T value) {
    resolved_[key] = value;
    return value;
  }

  json j_;
  json resolved_ = json::object();
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Output helpers. Numbers use the shortest round-trip form with '.' decimals.

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

struct Common {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  fs::path out;
};

inline Common read_common(Config& cfg, const RunOptions& opts) {
  Common c;
  const json* seed = cfg.object("seed");
  if (opts.seed) {
    c.seed = *opts.seed;
  } else if (seed) {
    if (!seed->is_number_unsigned()) throw ConfigError("field 'seed' must be a non-negative integer");
    c.seed = seed->get<std::uint64_t>();
  } else {
    throw ConfigError("field 'seed' is required (config or --seed)");
  }
  cfg.set_resolved("seed", c.seed);
  c.workers = cfg.count("workers", 1);
  if (opts.workers) c.workers = *opts.workers;
  if (c.workers < 1) throw ConfigError("field 'workers' must be at least 1");
  cfg.set_resolved("workers", c.workers);
  std::string out = cfg.text("out", "");
  if (opts.out) out = *opts.out;
  if (out.empty()) throw ConfigError("field 'out' is required (config or --out)");
  cfg.set_resolved("out", out);
  c.out = out;
  return c;
}

inline std::vector<DiscrepancyVariant> read_methods(Config& cfg) {
  std::vector<DiscrepancyVariant> out;
  for (const auto& m : cfg.texts("methods", {"ksd", "maxsksd-g", "maxsksd-rg"})) {
    try {
      out.push_back(variant_from_string(m));
    } catch (const InvalidArgument&) {
      throw ConfigError("field 'methods' has unknown method '" + m + "'");
    }
  }
  return out;
}

inline AdamConfig read_adam(Config& cfg, const std::string& prefix, AdamConfig fallback) {
  fallback.learning_rate = cfg.number(prefix + "learning_rate", fallback.learning_rate);
  fallback.beta1 = cfg.number(prefix + "beta1", fallback.beta1);
  fallback.beta2 = cfg.number(prefix + "beta2", fallback.beta2);
  if (!(fallback.learning_rate > 0.0)) throw ConfigError("field '" + prefix + "learning_rate' must be positive");
  if (!(fallback.beta1 >= 0.0 && fallback.beta1 < 1.0)) throw ConfigError("field '" + prefix + "beta1' must lie in [0, 1)");
  if (!(fallback.beta2 >= 0.0 && fallback.beta2 < 1.0)) throw ConfigError("field '" + prefix + "beta2' must lie in [0, 1)");
  return fallback;
}

inline BandwidthPolicy read_policy(Config& cfg, const std::string& key, double fallback) {
  const double f = cfg.number(key, fallback);
  if (!(f > 0.0)) throw ConfigError("field '" + key + "' must be positive");
  return {f, kDefaultBandwidthFloor};
}

inline void write_trial_csv(const fs::path& path, const std::vector<TrialRecord>& recs, const std::string& level_name,
                            bool integer_level) {
  CsvWriter csv(path, {"method", "benchmark", level_name, "trial", "statistic", "p_value", "reject"});
  for (const auto& r : recs)
    csv.row({to_string(r.method), r.benchmark,
             integer_level ? std::to_string(static_cast<long long>(r.level)) : num(r.level), std::to_string(r.trial),
             num(r.statistic), num(r.p_value), r.reject ? "1" : "0"});
}

inline void write_summary_csv(const fs::path& path, const std::vector<TrialRecord>& recs,
                              const std::string& level_name, bool integer_level) {
  CsvWriter csv(path, {"method", "benchmark", level_name, "rejection_rate", "mean_statistic", "sd_statistic"});
  for (const auto& s : summarize(recs))
    csv.row({to_string(s.method), s.benchmark,
             integer_level ? std::to_string(static_cast<long long>(s.level)) : num(s.level), num(s.rejection_rate),
             num(s.mean_statistic), num(s.sd_statistic)});
}

/// A parsed command, ready to run.
struct Prepared {
  Common common;
  std::function<void(std::ostream&)> run;
};

// ---------------------------------------------------------------------------
// gof-benchmark: trials.csv, summary.csv

inline Prepared prepare_gof_benchmark(Config& cfg, const RunOptions& opts) {
  Prepared p;
  p.common = read_common(cfg, opts);
  BenchmarkSpec spec;
  try {
    spec.alternative = alternative_from_string(cfg.text("alternative", "null"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("field 'alternative': ") + e.what());
  }
  const auto dims = cfg.counts("dims", {2});
  const auto methods = read_methods(cfg);
  spec.n_samples = cfg.count("n_samples", spec.n_samples);
  spec.n_train = cfg.count("n_train", spec.n_train);
  spec.n_test = cfg.count("n_test", spec.n_test);
  spec.trials = cfg.count("trials", spec.trials);
  spec.alpha = cfg.number("alpha", spec.alpha);
  spec.bootstrap = cfg.count("bootstrap", spec.bootstrap);
  spec.direction_steps = cfg.count("direction_steps", spec.direction_steps);
  spec.adam = read_adam(cfg, "", spec.adam);
  spec.policy = read_policy(cfg, "bandwidth_factor", 1.0);
  spec.policy.floor.reset();
  spec.rg_slices = static_cast<Index>(cfg.count("rg_slices", 1));
  spec.validate();
  p.run = [spec, dims, methods, c = p.common](std::ostream& log) mutable {
    std::vector<TrialRecord> all;
    for (auto d : dims) {
      spec.dim = static_cast<Index>(d);
      auto recs = run_benchmark(spec, methods, c.seed, c.workers);
      for (const auto& m : methods)
        log << to_string(spec.alternative) << " D=" << d << " " << to_string(m)
            << " rejection_rate=" << num(rejection_rate(recs, m)) << '\n';
      for (auto& r : recs) all.push_back(std::move(r));
    }
    write_trial_csv(c.out / "trials.csv", all, "dim", true);
    write_summary_csv(c.out / "summary.csv", all, "dim", true);
  };
  return p;
}

// ---------------------------------------------------------------------------
// gof-rbm: trials.csv, summary.csv (level column is the perturbation level)

inline Prepared prepare_gof_rbm(Config& cfg, const RunOptions& opts) {
  Prepared p;
  p.common = read_common(cfg, opts);
  RbmGofSpec spec;
  spec.dim = static_cast<Index>(cfg.count("dim", 50));
  spec.hidden = static_cast<Index>(cfg.count("hidden", 40));
  spec.weight_scale = cfg.number("weight_scale", spec.weight_scale);
  spec.levels = cfg.numbers("levels", spec.levels);
  spec.trials = cfg.count("trials", spec.trials);
  spec.chains = cfg.count("chains", spec.chains);
  spec.burn_in = cfg.count("burn_in", spec.burn_in);
  spec.n_train = cfg.count("n_train", spec.n_train);
  spec.alpha = cfg.number("alpha", spec.alpha);
  spec.bootstrap = cfg.count("bootstrap", spec.bootstrap);
  spec.adam = read_adam(cfg, "", spec.adam);
  spec.policy = read_policy(cfg, "bandwidth_factor", 1.0);
  spec.policy.floor.reset();
  spec.rg_slices = static_cast<Index>(cfg.count("rg_slices", 1));
  const auto methods = read_methods(cfg);
  spec.validate();
  p.run = [spec, methods, c = p.common](std::ostream& log) {
    const auto recs = run_rbm_gof(spec, methods, c.seed, c.workers);
    for (const auto& s : summarize(recs))
      log << "rbm level=" << num(s.level) << " " << to_string(s.method) << " rejection_rate=" << num(s.rejection_rate)
          << '\n';
    write_trial_csv(c.out / "trials.csv", recs, "level", false);
    write_summary_csv(c.out / "summary.csv", recs, "level", false);
  };
  return p;
}

// ---------------------------------------------------------------------------
// Sampler options shared by svgd and variance.

inline SamplerConfig read_sampler(Config& cfg, SamplerConfig s) {
  s.step_size = cfg.number("step_size", s.step_size);
  s.policy = read_policy(cfg, "bandwidth_factor", s.policy.factor);
  s.slice_policy = read_policy(cfg, "slice_bandwidth_factor", s.slice_policy.factor);
  s.repulsive_start = cfg.number("repulsive_start", s.repulsive_start);
  s.repulsive_ramp = cfg.count("repulsive_ramp", s.repulsive_ramp);
  s.g_update_every = cfg.count("g_update_every", s.g_update_every);
  s.adam_steps_per_update = cfg.count("adam_steps", s.adam_steps_per_update);
  s.adam = read_adam(cfg, "", s.adam);
  s.staleness = cfg.flag("staleness", s.staleness);
  s.staleness_delta = cfg.number("staleness_delta", s.staleness_delta);
  s.validate();
  return s;
}

inline SamplerKind read_sampler_kind(Config& cfg, const std::string& key, const std::string& fallback) {
  const auto name = cfg.text(key, fallback);
  try {
    return sampler_from_string(name);
  } catch (const InvalidArgument&) {
    throw ConfigError("field '" + key + "' must be svgd or ssvgd");
  }
}

inline ScoreModel read_model(Config& cfg, const std::string& key, const std::function<ScoreModel()>& fallback) {
  const json* t = cfg.object(key);
  if (!t) {
    ScoreModel m = fallback();
    cfg.set_resolved(key, to_json(m));
    return m;
  }
  try {
    return model_from_json(*t);
  } catch (const Error& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  } catch (const json::exception&) {
    throw ConfigError("field '" + key + "' is malformed");
  }
}

inline void write_diagnostics(const fs::path& path, const std::vector<VarianceTracePoint>& trace) {
  CsvWriter csv(path, {"iter", "parf", "var_avg"});
  for (const auto& t : trace) csv.row({std::to_string(t.iteration), num(t.parf), num(t.var_avg)});
}

// ---------------------------------------------------------------------------
// svgd: one sampler run; diagnostics.csv and particles.csv

inline Prepared prepare_svgd(Config& cfg, const RunOptions& opts) {
  Prepared p;
  p.common = read_common(cfg, opts);
  const auto kind = read_sampler_kind(cfg, "sampler", "ssvgd");
  const Index dim = static_cast<Index>(cfg.count("dim", 2));
  if (dim < 1) throw ConfigError("field 'dim' must be at least 1");
  const ScoreModel model = read_model(cfg, "target", [dim] { return standard_gaussian(dim); });
  if (model.dim() != dim) throw ConfigError("field 'dim' does not match the target dimension");
  const std::size_t n = cfg.count("particles", 50);
  if (n < 1) throw ConfigError("field 'particles' must be at least 1");
  const std::size_t steps = cfg.count("steps", 1000);
  const std::size_t trace_every = cfg.count("trace_every", 100);
  const double init_mean = cfg.number("init_mean", 2.0);
  const double init_std = cfg.number("init_std", std::sqrt(2.0));
  if (!(init_std >= 0.0)) throw ConfigError("field 'init_std' must be non-negative");
  const SamplerConfig sampler = read_sampler(cfg, SamplerConfig{});
  p.run = [=, c = p.common](std::ostream& log) {
    Rng rng(c.seed);
    const Matrix init = (init_std * rng.normal_matrix(static_cast<Index>(n), dim)).array() + init_mean;
    ParticleSampler s(model, init, kind, sampler);
    std::vector<VarianceTracePoint> trace;
    auto record = [&](const ParticleSampler& ps) {
      trace.push_back({ps.iteration(), ps.current_parf(), average_variance(ps.particles())});
    };
    if (trace_every > 0) record(s);
    s.run(steps, [&](const ParticleSampler& ps) {
      if (trace_every > 0 && ps.iteration() % trace_every == 0) record(ps);
    });
    write_diagnostics(c.out / "diagnostics.csv", trace);
    std::vector<std::string> header;
    for (Index d = 0; d < dim; ++d) header.push_back("x" + std::to_string(d));
    CsvWriter csv(c.out / "particles.csv", header);
    for (Index i = 0; i < s.particles().rows(); ++i) {
      std::vector<std::string> cells;
      for (Index d = 0; d < dim; ++d) cells.push_back(num(s.particles()(i, d)));
      csv.row(cells);
    }
    log << to_string(kind) << " D=" << dim << " N=" << n << " steps=" << steps
        << " var_avg=" << num(average_variance(s.particles())) << " parf=" << num(s.current_parf()) << '\n';
  };
  return p;
}

// ---------------------------------------------------------------------------
// variance: variance.csv plus diagnostics_<sampler>_d<D>_n<N>.csv

inline Prepared prepare_variance(Config& cfg, const RunOptions& opts) {
  Prepared p;
  p.common = read_common(cfg, opts);
  VarianceSpec spec;
  spec.dims.clear();
  for (auto d : cfg.counts("dims", {2, 20, 50, 100})) spec.dims.push_back(static_cast<Index>(d));
  spec.particles.clear();
  for (auto n : cfg.counts("particles", {50})) spec.particles.push_back(static_cast<Index>(n));
  spec.samplers.clear();
  for (const auto& s : cfg.texts("samplers", {"svgd", "ssvgd"})) {
    try {
      spec.samplers.push_back(sampler_from_string(s));
    } catch (const InvalidArgument&) {
      throw ConfigError("field 'samplers' has unknown sampler '" + s + "'");
    }
  }
  spec.steps = cfg.count("steps", spec.steps);
  spec.trace_every = cfg.count("trace_every", spec.trace_every);
  spec.sampler = read_sampler(cfg, VarianceSpec::default_sampler());
  spec.validate();
  p.run = [spec, c = p.common](std::ostream& log) {
    const auto results = run_variance_experiment(spec, c.seed, c.workers);
    CsvWriter csv(c.out / "variance.csv", {"sampler", "dim", "particles", "var_avg", "parf", "mean_abs_mean"});
    for (const auto& r : results) {
      csv.row({to_string(r.sampler), std::to_string(r.dim), std::to_string(r.particles), num(r.var_avg), num(r.parf),
               num(r.mean_abs_mean)});
      if (spec.trace_every > 0)
        write_diagnostics(c.out / ("diagnostics_" + to_string(r.sampler) + "_d" + std::to_string(r.dim) + "_n" +
                                   std::to_string(r.particles) + ".csv"),
                          r.trace);
      log << to_string(r.sampler) << " D=" << r.dim << " N=" << r.particles << " var_avg=" << num(r.var_avg)
          << " parf=" << num(r.parf) << '\n';
    }
  };
  return p;
}

// ---------------------------------------------------------------------------
// sghmc-select: discrepancy.csv, selection.json

inline std::vector<double> default_step_grid() { return {0.04, 0.06, 0.08, 0.10, 0.12, 0.14, 0.16}; }

inline Prepared prepare_sghmc_select(Config& cfg, const RunOptions& opts) {
  Prepared p;
  p.common = read_common(cfg, opts);
  const Index dim = static_cast<Index>(cfg.count("dim", 15));
  if (dim < 1) throw ConfigError("field 'dim' must be at least 1");
  const double min_eig = cfg.number("min_eig", 0.01);
  const double max_eig = cfg.number("max_eig", 1.0);
  if (!(min_eig > 0.0 && max_eig >= min_eig)) throw ConfigError("field 'min_eig' must satisfy 0 < min_eig <= max_eig");
  const std::uint64_t seed = p.common.seed;
  const ScoreModel model = read_model(cfg, "target", [=] {
    Rng trng = Rng(seed).split(7);
    return ScoreModel(correlated_gaussian(dim, trng, min_eig, max_eig));
  });
  StepSizeSpec spec;
  spec.candidates = cfg.numbers("candidates", default_step_grid());
  spec.sghmc.friction = cfg.number("friction", spec.sghmc.friction);
  spec.sghmc.chains = cfg.count("chains", spec.sghmc.chains);
  spec.sghmc.burn_in = cfg.count("burn_in", spec.sghmc.burn_in);
  spec.sghmc.thinning = cfg.count("thinning", spec.sghmc.thinning);
  spec.sghmc.n_samples = cfg.count("n_samples", spec.sghmc.n_samples);
  spec.init_mean = cfg.number("init_mean", spec.init_mean);
  spec.init_scale = cfg.number("init_scale", spec.init_scale);
  spec.adam = read_adam(cfg, "", spec.adam);
  spec.policy = read_policy(cfg, "bandwidth_factor", 1.0);
  spec.rg_slices = static_cast<Index>(cfg.count("rg_slices", 1));
  spec.validate();
  if (spec.sghmc.n_samples < 2) throw ConfigError("field 'n_samples' must be at least 2");
  SghmcConfig probe = spec.sghmc;
  probe.step_size = spec.candidates.front();
  probe.validate();
  p.run = [model, spec, c = p.common](std::ostream& log) {
    const auto sel = select_step_size(model, spec, c.seed, c.workers);
    CsvWriter csv(c.out / "discrepancy.csv", {"step_size", "diverged", "ksd", "maxsksd_g", "maxsksd_rg", "kl"});
    for (const auto& r : sel.rows)
      csv.row({num(r.step_size), r.diverged ? "1" : "0", num(r.ksd), num(r.maxsksd_g), num(r.maxsksd_rg), num(r.kl)});
    const bool has_kl = model.as<GaussianTarget>() != nullptr;
    json out = {{"ksd", sel.chosen_ksd},
                {"maxsksd-g", sel.chosen_maxsksd_g},
                {"maxsksd-rg", sel.chosen_maxsksd_rg},
                {"kl", has_kl ? json(sel.chosen_kl) : json(nullptr)}};
    write_json(c.out / "selection.json", out);
    log << "selected ksd=" << num(sel.chosen_ksd) << " maxsksd-g=" << num(sel.chosen_maxsksd_g)
        << " maxsksd-rg=" << num(sel.chosen_maxsksd_rg);
    if (has_kl) log << " kl=" << num(sel.chosen_kl);
    log << '\n';
  };
  return p;
}

// ---------------------------------------------------------------------------
// ica: trace.csv, checkpoint.json, summary.json

inline Prepared prepare_ica(Config& cfg, const RunOptions& opts) {
  Prepared p;
  p.common = read_common(cfg, opts);
  const Index dim = static_cast<Index>(cfg.count("dim", 10));
  if (dim < 1) throw ConfigError("field 'dim' must be at least 1");
  const std::size_t n_train = cfg.count("n_train", 20000);
  const std::size_t n_test = cfg.count("n_test", 5000);
  if (n_train < 2) throw ConfigError("field 'n_train' must be at least 2");
  if (n_test < 1) throw ConfigError("field 'n_test' must be at least 1");
  IcaTrainConfig tc;
  try {
    tc.objective = ica_objective_from_string(cfg.text("objective", "maxsksd-g"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  tc.steps = cfg.count("steps", tc.steps);
  tc.batch_size = cfg.count("batch_size", tc.batch_size);
  tc.adam_w = read_adam(cfg, "", tc.adam_w);
  tc.adam_g = read_adam(cfg, "g_", tc.adam_g);
  tc.g_steps_per_w_step = cfg.count("g_steps_per_w_step", tc.g_steps_per_w_step);
  tc.sliced_bandwidth_factor = cfg.number("bandwidth_factor", tc.sliced_bandwidth_factor);
  tc.ksd_bandwidth_factor = cfg.number("ksd_bandwidth_factor", tc.ksd_bandwidth_factor);
  tc.rg_slices = static_cast<Index>(cfg.count("rg_slices", 0));
  tc.eval_every = cfg.count("eval_every", tc.eval_every);
  tc.eval_rows = cfg.count("eval_rows", tc.eval_rows);
  tc.divergence_factor = cfg.number("divergence_factor", tc.divergence_factor);
  tc.validate();
  p.run = [=, c = p.common](std::ostream& log) {
    Rng rng(c.seed);
    Rng data_rng = rng.split(10);
    const IcaData data = make_ica_data(dim, n_train, n_test, data_rng);
    IcaTrainer trainer(data.train, data.test, tc, rng.split(11));
    trainer.run(tc.steps);
    const auto& st = trainer.state();
    CsvWriter csv(c.out / "trace.csv", {"step", "objective", "test_nll"});
    for (const auto& r : st.trace) csv.row({std::to_string(r.step), num(r.objective), num(r.test_nll)});
    write_json(c.out / "checkpoint.json", to_json(st, tc.objective));
    const double final_nll = test_nll(st.w, data.test);
    const double truth_nll = test_nll(data.mixing, data.test);
    write_json(c.out / "summary.json", {{"objective", to_string(tc.objective)},
                                        {"steps", st.step},
                                        {"initial_test_nll", trainer.initial_nll()},
                                        {"final_test_nll", final_nll},
                                        {"data_generating_test_nll", truth_nll}});
    log << "ica D=" << dim << " " << to_string(tc.objective) << " steps=" << st.step
        << " test_nll=" << num(final_nll) << " (data-generating W: " << num(truth_nll) << ")\n";
  };
  return p;
}

// ---------------------------------------------------------------------------

inline const std::map<std::string, std::function<Prepared(Config&, const RunOptions&)>>& registry() {
  static const std::map<std::string, std::function<Prepared(Config&, const RunOptions&)>> commands{
      {"gof-benchmark", prepare_gof_benchmark}, {"gof-rbm", prepare_gof_rbm},
      {"svgd", prepare_svgd},                   {"variance", prepare_variance},
      {"sghmc-select", prepare_sghmc_select},   {"ica", prepare_ica}};
  return commands;
}

/// Parses, validates and runs one command. Errors go to `err` as one line.
inline int run_command(const std::string& name, const json& config, const RunOptions& opts, std::ostream& log,
                       std::ostream& err) {
  const auto it = registry().find(name);
  if (it == registry().end()) {
    err << "config error: unknown command '" << name << "'\n";
    return 2;
  }
  Prepared prepared;
  Config cfg(json::object());
  try {
    cfg = Config(config);
    prepared = it->second(cfg, opts);
    cfg.finish();
    fs::create_directories(prepared.common.out);
    json run = {{"command", name}, {"config", cfg.resolved()}};
    write_json(prepared.common.out / "run.json", run);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "config error: field 'out' is not writable (" << e.code().message() << ")\n";
    return 2;
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  }
  try {
    prepared.run(log);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

/// Loads a config file; an empty path means an empty config.
inline json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    throw ConfigError("config file '" + path + "' is not valid JSON: " + msg);
  }
}

}  // namespace sksd::cli
