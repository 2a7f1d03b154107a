#pragma once

// Config-driven experiment runs: parse/validate a JSON run config, train one
// or more methods over a list of seeds, and write metrics.csv / report.json.
//
// Method comparisons are paired: for a given seed every method draws the same
// initial parameters and the same batch order, so per-seed accuracy
// differences are due to the method alone.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "companion/data.hpp"
#include "companion/dcp.hpp"
#include "companion/engine.hpp"
#include "companion/error.hpp"
#include "companion/metrics.hpp"

namespace companion {

using json = nlohmann::json;

enum class Method { Ce, Dcl, Dcp };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Ce: return "ce";
    case Method::Dcl: return "dcl";
    case Method::Dcp: return "dcp";
  }
  return "?";
}

inline Method parse_method(const std::string& s, const std::string& key = "method") {
  if (s == "ce") return Method::Ce;
  if (s == "dcl") return Method::Dcl;
  if (s == "dcp") return Method::Dcp;
  throw ConfigError(key, "unknown method '" + s + "' (expected ce|dcl|dcp)");
}

struct CsvSource {
  std::string train, test;
};
struct IdxSource {
  std::string train_images, train_labels, test_images, test_labels;
  bool normalize = true;
};
struct SyntheticSource {
  SyntheticSpec spec;
  std::optional<std::uint64_t> seed;  // unset: regenerate from each run seed
};
using DataSource = std::variant<SyntheticSource, CsvSource, IdxSource>;

struct RunConfig {
  std::vector<Method> methods;  // one for `train`, several for `compare`
  DclConfig dcl;
  DataSource data = SyntheticSource{};
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";
  std::string grid_key;            // compare only: which knob the grid sweeps
  std::vector<json> grid_values;
  std::map<Method, json> overrides;  // compare only: per-method config patches
  json echo;                         // normalized config, written into report.json
};

// ---------------------------------------------------------------------------
// Config parsing

namespace detail {

inline const std::set<std::string>& top_level_keys() {
  static const std::set<std::string> k{"method", "methods", "seeds", "epochs", "batch_size", "eta_theta", "eta_omega",
                                       "lr_schedule", "momentum", "weight_decay", "alpha", "alpha_mode", "lambda",
                                       "distance", "infonce_tau", "companion_fraction", "model", "companion_model",
                                       "data", "output_dir", "record_wall_clock", "grid", "overrides"};
  return k;
}

// Knobs a single DclConfig patch (override or grid point) may touch.
inline const std::set<std::string>& tunable_keys() {
  static const std::set<std::string> k{"epochs", "batch_size", "eta_theta", "eta_omega", "lr_schedule", "momentum",
                                       "weight_decay", "alpha", "alpha_mode", "lambda", "distance", "infonce_tau",
                                       "companion_fraction", "model", "companion_model", "record_wall_clock"};
  return k;
}

// Companion-only knobs; the CE baseline has no use for them.
inline const std::set<std::string>& companion_keys() {
  static const std::set<std::string> k{"alpha", "alpha_mode", "lambda", "distance", "infonce_tau",
                                       "eta_omega", "companion_fraction", "companion_model"};
  return k;
}

template <class T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(key, std::string("wrong type: ") + e.what());
  }
}

inline double get_number(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError(key, "expected a number");
  return j.get<double>();
}

inline std::size_t get_count(const json& j, const std::string& key) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
    throw ConfigError(key, "expected a non-negative integer");
  return j.get<std::size_t>();
}

inline std::vector<std::size_t> get_hidden(const json& j, const std::string& key) {
  if (!j.is_object()) throw ConfigError(key, "expected an object {\"hidden\": [...]}");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "hidden") throw ConfigError(it.key(), "unknown key in " + key);
  if (!j.contains("hidden") || !j["hidden"].is_array()) throw ConfigError(key + ".hidden", "expected an array of widths");
  std::vector<std::size_t> h;
  for (const auto& v : j["hidden"]) {
    const auto w = get_count(v, key + ".hidden");
    if (w < 1) throw ConfigError(key + ".hidden", "widths must be >= 1");
    h.push_back(w);
  }
  return h;
}

// Applies every knob present in `j` onto `cfg`.
inline void apply_knobs(DclConfig& cfg, const json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (!tunable_keys().count(k)) continue;
    if (k == "epochs") cfg.epochs = get_count(v, k);
    else if (k == "batch_size") {
      cfg.batch_size = get_count(v, k);
      if (cfg.batch_size < 1) throw ConfigError(k, "must be >= 1");
    } else if (k == "eta_theta") cfg.eta_theta = get_number(v, k);
    else if (k == "eta_omega") cfg.eta_omega = get_number(v, k);
    else if (k == "lr_schedule") {
      const auto s = get_as<std::string>(v, k);
      if (s == "constant") cfg.lr_schedule = LrSchedule::Constant;
      else if (s == "cosine") cfg.lr_schedule = LrSchedule::Cosine;
      else throw ConfigError(k, "expected constant|cosine");
    } else if (k == "momentum") cfg.momentum = get_number(v, k);
    else if (k == "weight_decay") cfg.weight_decay = get_number(v, k);
    else if (k == "alpha") cfg.alpha = get_number(v, k);
    else if (k == "alpha_mode") {
      const auto s = get_as<std::string>(v, k);
      if (s == "fixed") cfg.alpha_mode = AlphaMode::Fixed;
      else if (s == "harmonic") cfg.alpha_mode = AlphaMode::Harmonic;
      else throw ConfigError(k, "expected fixed|harmonic");
    } else if (k == "lambda") cfg.lambda = get_number(v, k);
    else if (k == "distance") {
      try {
        cfg.distance = parse_distance(get_as<std::string>(v, k), cfg.distance.tau);
      } catch (const InputError& e) {
        throw ConfigError(k, e.what());
      }
    } else if (k == "infonce_tau") {
      cfg.distance.tau = get_number(v, k);
      if (!(cfg.distance.tau > 0.0)) throw ConfigError(k, "must be > 0");
    } else if (k == "companion_fraction") cfg.companion_fraction = get_number(v, k);
    else if (k == "model") cfg.hidden_dims = get_hidden(v, k);
    else if (k == "companion_model") cfg.companion_hidden_dims = get_hidden(v, k);
    else if (k == "record_wall_clock") cfg.record_wall_clock = get_as<bool>(v, k);
  }
  try {
    cfg.validate();
  } catch (const InputError& e) {
    // Name the first knob from `j` the message mentions; fall back to the message.
    std::string key = "config";
    for (auto it = j.begin(); it != j.end(); ++it)
      if (std::string(e.what()).find(it.key()) != std::string::npos) key = it.key();
    throw ConfigError(key, e.what());
  }
}

inline DataSource parse_data(const json& j) {
  if (!j.is_object()) throw ConfigError("data", "expected an object");
  const std::string source = j.contains("source") ? get_as<std::string>(j["source"], "data.source") : "synthetic";
  auto check_keys = [&](std::set<std::string> allowed) {
    allowed.insert("source");
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!allowed.count(it.key())) throw ConfigError(it.key(), "unknown key in data (source '" + source + "')");
  };
  auto req_str = [&](const char* k) {
    if (!j.contains(k)) throw ConfigError(std::string("data.") + k, "required");
    return get_as<std::string>(j[k], std::string("data.") + k);
  };

  if (source == "synthetic") {
    check_keys({"num_classes", "input_dim", "samples_per_class", "test_samples_per_class", "cluster_mean_scale",
                "noise_sigma", "label_noise_rate", "seed"});
    SyntheticSource s;
    if (j.contains("num_classes")) s.spec.num_classes = get_count(j["num_classes"], "num_classes");
    if (j.contains("input_dim")) s.spec.input_dim = get_count(j["input_dim"], "input_dim");
    if (j.contains("samples_per_class")) s.spec.samples_per_class = get_count(j["samples_per_class"], "samples_per_class");
    if (j.contains("test_samples_per_class"))
      s.spec.test_samples_per_class = get_count(j["test_samples_per_class"], "test_samples_per_class");
    if (j.contains("cluster_mean_scale")) s.spec.cluster_mean_scale = get_number(j["cluster_mean_scale"], "cluster_mean_scale");
    if (j.contains("noise_sigma")) s.spec.noise_sigma = get_number(j["noise_sigma"], "noise_sigma");
    if (j.contains("label_noise_rate")) s.spec.label_noise_rate = get_number(j["label_noise_rate"], "label_noise_rate");
    if (j.contains("seed")) s.seed = get_count(j["seed"], "data.seed");
    try {
      s.spec.validate();
    } catch (const InputError& e) {
      throw ConfigError("data", e.what());
    }
    return s;
  }
  if (source == "csv") {
    check_keys({"train", "test"});
    return CsvSource{req_str("train"), req_str("test")};
  }
  if (source == "idx") {
    check_keys({"train_images", "train_labels", "test_images", "test_labels", "normalize"});
    IdxSource s{req_str("train_images"), req_str("train_labels"), req_str("test_images"), req_str("test_labels"), true};
    if (j.contains("normalize")) s.normalize = get_as<bool>(j["normalize"], "data.normalize");
    return s;
  }
  throw ConfigError("data.source", "unknown source '" + source + "' (expected synthetic|csv|idx)");
}

inline void reject_companion_keys(const json& j, Method m, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (m == Method::Ce && companion_keys().count(k))
      throw ConfigError(k, "not allowed for method 'ce'" + where);
    if (m == Method::Dcp && (k == "eta_omega" || k == "companion_fraction" || k == "companion_model"))
      throw ConfigError(k, "not allowed for method 'dcp' (no companion network)" + where);
    if (m == Method::Dcp && k == "distance" && it.value() != "mse")
      throw ConfigError(k, "dcp uses the squared-error distance only" + where);
  }
}

}  // namespace detail

enum class ConfigMode { Train, Compare };

inline RunConfig parse_run_config(const json& j, ConfigMode mode) {
  if (!j.is_object()) throw ConfigError("config", "top level must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!detail::top_level_keys().count(it.key())) throw ConfigError(it.key(), "unknown key");

  RunConfig rc;
  if (mode == ConfigMode::Train) {
    if (j.contains("methods") || j.contains("grid") || j.contains("overrides"))
      throw ConfigError(j.contains("methods") ? "methods" : j.contains("grid") ? "grid" : "overrides",
                        "only valid for compare");
    if (!j.contains("method")) throw ConfigError("method", "required");
    rc.methods.push_back(parse_method(detail::get_as<std::string>(j["method"], "method")));
    detail::reject_companion_keys(j, rc.methods[0], "");
  } else {
    if (j.contains("method")) throw ConfigError("method", "compare takes 'methods' (a list)");
    if (!j.contains("methods") || !j["methods"].is_array()) throw ConfigError("methods", "required list of methods");
    for (const auto& m : j["methods"]) rc.methods.push_back(parse_method(detail::get_as<std::string>(m, "methods"), "methods"));
    if (rc.methods.empty()) throw ConfigError("methods", "must not be empty");
    std::set<Method> uniq(rc.methods.begin(), rc.methods.end());
    if (uniq.size() != rc.methods.size()) throw ConfigError("methods", "duplicate method");
  }

  detail::apply_knobs(rc.dcl, j);

  if (j.contains("seeds")) {
    if (!j["seeds"].is_array() || j["seeds"].empty()) throw ConfigError("seeds", "expected a non-empty list");
    rc.seeds.clear();
    for (const auto& s : j["seeds"]) rc.seeds.push_back(detail::get_count(s, "seeds"));
  }
  if (j.contains("data")) rc.data = detail::parse_data(j["data"]);
  if (j.contains("output_dir")) rc.output_dir = detail::get_as<std::string>(j["output_dir"], "output_dir");

  if (j.contains("grid")) {
    const json& g = j["grid"];
    if (!g.is_object() || g.size() != 1) throw ConfigError("grid", "expected an object with exactly one knob");
    rc.grid_key = g.begin().key();
    if (!detail::tunable_keys().count(rc.grid_key)) throw ConfigError(rc.grid_key, "not a tunable knob");
    if (!g.begin().value().is_array() || g.begin().value().empty())
      throw ConfigError(rc.grid_key, "grid values must be a non-empty list");
    for (const auto& v : g.begin().value()) {
      DclConfig probe = rc.dcl;
      detail::apply_knobs(probe, json{{rc.grid_key, v}});
      rc.grid_values.push_back(v);
    }
  }
  if (j.contains("overrides")) {
    const json& o = j["overrides"];
    if (!o.is_object()) throw ConfigError("overrides", "expected {method: {knob: value}}");
    for (auto it = o.begin(); it != o.end(); ++it) {
      const Method m = parse_method(it.key(), "overrides");
      if (!it.value().is_object()) throw ConfigError(it.key(), "override must be an object");
      for (auto kv = it.value().begin(); kv != it.value().end(); ++kv)
        if (!detail::tunable_keys().count(kv.key())) throw ConfigError(kv.key(), "unknown key in overrides." + it.key());
      detail::reject_companion_keys(it.value(), m, " (in overrides)");
      DclConfig probe = rc.dcl;
      detail::apply_knobs(probe, it.value());
      rc.overrides[m] = it.value();
    }
  }

  // Normalized echo: the input with defaults filled in.
  json echo = j;
  const DclConfig& c = rc.dcl;
  auto fill = [&](const char* k, json v) {
    if (!echo.contains(k)) echo[k] = std::move(v);
  };
  fill("seeds", rc.seeds);
  fill("epochs", c.epochs);
  fill("batch_size", c.batch_size);
  fill("eta_theta", c.eta_theta);
  fill("lr_schedule", c.lr_schedule == LrSchedule::Cosine ? "cosine" : "constant");
  fill("momentum", c.momentum);
  fill("weight_decay", c.weight_decay);
  fill("model", json{{"hidden", c.hidden_dims}});
  fill("output_dir", rc.output_dir);
  fill("record_wall_clock", c.record_wall_clock);
  const bool any_companion = std::any_of(rc.methods.begin(), rc.methods.end(), [](Method m) { return m != Method::Ce; });
  if (any_companion) {
    fill("alpha", c.alpha);
    fill("alpha_mode", c.alpha_mode == AlphaMode::Fixed ? "fixed" : "harmonic");
    fill("lambda", c.lambda);
    fill("distance", std::string(to_string(c.distance.kind)));
  }
  rc.echo = std::move(echo);
  return rc;
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Data

struct SplitPair {
  DatasetSplit train, test;
};

inline SplitPair load_data(const DataSource& src, std::uint64_t run_seed) {
  return std::visit(
      [&](const auto& s) -> SplitPair {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SyntheticSource>) {
          auto d = generate_clusters(s.spec, s.seed.value_or(run_seed));
          return {std::move(d.train), std::move(d.test)};
        } else if constexpr (std::is_same_v<T, CsvSource>) {
          SplitPair p{load_csv(s.train), load_csv(s.test)};
          p.train.num_classes = p.test.num_classes = std::max(p.train.num_classes, p.test.num_classes);
          return p;
        } else {
          SplitPair p{load_idx(s.train_images, s.train_labels, s.normalize), load_idx(s.test_images, s.test_labels, s.normalize)};
          p.train.num_classes = p.test.num_classes = std::max(p.train.num_classes, p.test.num_classes);
          return p;
        }
      },
      src);
}

// ---------------------------------------------------------------------------
// Output

inline std::string format_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_metrics_csv(std::ostream& os, std::span<const EpochLog> logs) {
  os << "epoch,train_loss,train_acc,test_acc,mean_consistency,mean_perplexity,logit_variation,seconds\n";
  for (const auto& l : logs) {
    os << l.epoch << ',' << format_g9(l.train_loss) << ',' << format_g9(l.train_acc) << ',' << format_g9(l.test_acc) << ','
       << format_g9(l.mean_consistency) << ',' << format_g9(l.mean_perplexity) << ',' << format_g9(l.logit_variation) << ','
       << format_g9(l.seconds) << '\n';
  }
}

inline void emit_metrics_csv(std::span<const EpochLog> logs, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_metrics_csv(os, logs);
  if (!os) throw IoError("write failed: " + path);
}

inline json histogram_json(const NonTargetHistogram& h) {
  json out = json::object();
  for (std::size_t c = 0; c < h.num_classes(); ++c) {
    json row = json::object();
    for (std::size_t k = 0; k < h.num_classes(); ++k)
      if (k != c) row[std::to_string(k)] = h.count(c, k);
    out[std::to_string(c)] = std::move(row);
  }
  return out;
}

inline json epoch_json(const EpochLog& l, bool with_seconds) {
  json j{{"epoch", l.epoch},
         {"train_loss", l.train_loss},
         {"train_acc", l.train_acc},
         {"test_acc", l.test_acc},
         {"mean_consistency", l.mean_consistency},
         {"mean_perplexity", l.mean_perplexity},
         {"logit_variation", l.logit_variation}};
  if (with_seconds) j["seconds"] = l.seconds;
  return j;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  TrainResult result;
  std::optional<PrototypeBank> bank;
  double wall_seconds = 0.0;

  double final_test_acc() const { return result.logs.empty() ? result.init_test_acc : result.logs.back().test_acc; }
  double final_train_acc() const { return result.logs.empty() ? result.init_train_acc : result.logs.back().train_acc; }
};

struct MeanStderr {
  double mean = 0.0;
  std::optional<double> stderr_;  // absent with fewer than two samples
};

inline MeanStderr mean_stderr(std::span<const double> xs) {
  MeanStderr out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    out.stderr_ = sd / std::sqrt(static_cast<double>(xs.size()));
  }
  return out;
}

inline json mean_stderr_json(const MeanStderr& m) {
  json j{{"mean", m.mean}};
  if (m.stderr_) j["stderr"] = *m.stderr_;
  return j;
}

inline json seed_json(const SeedOutcome& s, bool with_seconds) {
  json epochs = json::array();
  for (const auto& l : s.result.logs) epochs.push_back(epoch_json(l, with_seconds));
  json j{{"seed", s.seed},
         {"init_train_acc", s.result.init_train_acc},
         {"init_test_acc", s.result.init_test_acc},
         {"final_train_acc", s.final_train_acc()},
         {"final_test_acc", s.final_test_acc()},
         {"steps", s.result.steps},
         {"epochs", std::move(epochs)}};
  if (!s.result.logs.empty()) j["final_histogram"] = histogram_json(s.result.logs.back().histogram);
  if (with_seconds) j["wall_seconds"] = s.wall_seconds;
  return j;
}

inline json summary_json(std::span<const SeedOutcome> outcomes) {
  std::vector<double> test, train;
  for (const auto& o : outcomes) {
    test.push_back(o.final_test_acc());
    train.push_back(o.final_train_acc());
  }
  return json{{"test_acc", mean_stderr_json(mean_stderr(test))}, {"train_acc", mean_stderr_json(mean_stderr(train))}};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed: " + p.string());
}

inline void make_dirs(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Orchestration

enum class LogLevel { Debug, Info };
using LogSink = std::function<void(LogLevel, const std::string&)>;

inline SeedOutcome run_one(Method method, const DclConfig& base, std::uint64_t seed, const SplitPair& data) {
  DclConfig cfg = base;
  cfg.seed = seed;
  SeedOutcome out;
  out.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  switch (method) {
    case Method::Ce: out.result = train_ce(cfg, data.train, data.test); break;
    case Method::Dcl: out.result = train(cfg, data.train, data.test); break;
    case Method::Dcp: {
      auto r = dcp_train(cfg, data.train, data.test);
      out.result = std::move(r.result);
      out.bank = std::move(r.bank);
      break;
    }
  }
  if (cfg.record_wall_clock) out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline void write_seed_outputs(const std::filesystem::path& dir, const SeedOutcome& o) {
  make_dirs(dir);
  emit_metrics_csv(o.result.logs, (dir / "metrics.csv").string());
  save_checkpoint((dir / "theta.bin").string(), o.result.theta);
  if (o.result.omega) save_checkpoint((dir / "omega.bin").string(), *o.result.omega);
  if (o.bank) save_bank((dir / "bank.bin").string(), *o.bank);
}

// `train` subcommand: one method, every seed. Returns the report JSON.
inline json run(const RunConfig& rc, std::uint64_t seed_offset = 0, const LogSink& log = {}) {
  const Method method = rc.methods.at(0);
  const std::filesystem::path out_dir(rc.output_dir);
  make_dirs(out_dir);
  std::vector<SeedOutcome> outcomes;
  for (std::uint64_t s : rc.seeds) {
    const std::uint64_t seed = s + seed_offset;
    if (log) log(LogLevel::Info, std::string(to_string(method)) + ": seed " + std::to_string(seed));
    const SplitPair data = load_data(rc.data, seed);
    outcomes.push_back(run_one(method, rc.dcl, seed, data));
    write_seed_outputs(out_dir / ("seed-" + std::to_string(seed)), outcomes.back());
    if (log) log(LogLevel::Debug, "final test acc " + format_g9(outcomes.back().final_test_acc()));
  }

  json seeds = json::array();
  for (const auto& o : outcomes) seeds.push_back(seed_json(o, rc.dcl.record_wall_clock));
  json report{{"config", rc.echo},
              {"method", std::string(to_string(method))},
              {"seed_offset", seed_offset},
              {"seeds", std::move(seeds)},
              {"summary", summary_json(outcomes)}};
  if (rc.dcl.record_wall_clock) {
    double total = 0.0;
    for (const auto& o : outcomes) total += o.wall_seconds;
    report["wall_seconds_total"] = total;
  }
  write_text(out_dir / "report.json", report.dump(2) + "\n");
  return report;
}

struct CompareRow {
  std::string label;
  Method method;
  std::optional<json> grid_value;
  DclConfig config;
  std::vector<SeedOutcome> outcomes;
  std::size_t wins = 0;
};

inline std::string grid_label(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

// Rows of a compare run: each method once, or once per grid value when the
// knob applies to it (the CE baseline ignores companion knobs).
inline std::vector<CompareRow> plan_compare(const RunConfig& rc) {
  std::vector<CompareRow> rows;
  for (Method m : rc.methods) {
    DclConfig base = rc.dcl;
    if (auto it = rc.overrides.find(m); it != rc.overrides.end()) detail::apply_knobs(base, it->second);
    const bool swept = !rc.grid_key.empty() &&
                       !(m == Method::Ce && detail::companion_keys().count(rc.grid_key)) &&
                       !(m == Method::Dcp && (rc.grid_key == "distance" || rc.grid_key == "eta_omega" ||
                                              rc.grid_key == "companion_fraction" || rc.grid_key == "companion_model"));
    if (!swept) {
      rows.push_back({std::string(to_string(m)), m, std::nullopt, base, {}, 0});
      continue;
    }
    for (const auto& v : rc.grid_values) {
      DclConfig c = base;
      detail::apply_knobs(c, json{{rc.grid_key, v}});
      rows.push_back({std::string(to_string(m)) + "[" + rc.grid_key + "=" + grid_label(v) + "]", m, v, c, {}, 0});
    }
  }
  return rows;
}

inline std::string comparison_csv(std::span<const CompareRow> rows, const std::string& grid_key) {
  std::ostringstream os;
  os << "label,method," << (grid_key.empty() ? "grid" : grid_key)
     << ",seeds,test_acc_mean,test_acc_stderr,train_acc_mean,final_perplexity_mean,final_variation_mean,wins\n";
  for (const auto& r : rows) {
    std::vector<double> test, train, pp, var;
    for (const auto& o : r.outcomes) {
      test.push_back(o.final_test_acc());
      train.push_back(o.final_train_acc());
      if (!o.result.logs.empty()) {
        pp.push_back(o.result.logs.back().mean_perplexity);
        var.push_back(o.result.logs.back().logit_variation);
      }
    }
    const auto t = mean_stderr(test);
    os << r.label << ',' << to_string(r.method) << ',' << (r.grid_value ? grid_label(*r.grid_value) : "") << ','
       << r.outcomes.size() << ',' << format_g9(t.mean) << ',' << (t.stderr_ ? format_g9(*t.stderr_) : "") << ','
       << format_g9(mean_stderr(train).mean) << ',' << (pp.empty() ? "" : format_g9(mean_stderr(pp).mean)) << ','
       << (var.empty() ? "" : format_g9(mean_stderr(var).mean)) << ',' << r.wins << '\n';
  }
  return os.str();
}

// `compare` subcommand. Wins count seeds where a row's final test accuracy
// strictly beats the baseline row (the CE row when present, else the first).
inline json compare(const RunConfig& rc, const LogSink& log = {}) {
  if (rc.seeds.empty()) throw ConfigError("seeds", "need at least one seed");
  if (rc.methods.size() < 2 && rc.grid_values.empty())
    throw ConfigError("methods", "compare needs >= 2 methods or a grid");
  std::vector<CompareRow> rows = plan_compare(rc);
  const std::filesystem::path out_dir(rc.output_dir);
  make_dirs(out_dir);

  for (std::uint64_t seed : rc.seeds) {
    const SplitPair data = load_data(rc.data, seed);
    for (auto& row : rows) {
      if (log) log(LogLevel::Info, row.label + ": seed " + std::to_string(seed));
      row.outcomes.push_back(run_one(row.method, row.config, seed, data));
      write_seed_outputs(out_dir / row.label / ("seed-" + std::to_string(seed)), row.outcomes.back());
    }
  }

  std::size_t baseline = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].method == Method::Ce) {
      baseline = i;
      break;
    }
  for (auto& row : rows)
    for (std::size_t s = 0; s < rc.seeds.size(); ++s)
      if (row.outcomes[s].final_test_acc() > rows[baseline].outcomes[s].final_test_acc()) ++row.wins;

  const std::string table = comparison_csv(rows, rc.grid_key);
  write_text(out_dir / "comparison.csv", table);

  json jrows = json::array();
  for (const auto& row : rows) {
    json seeds = json::array();
    for (const auto& o : row.outcomes) seeds.push_back(seed_json(o, row.config.record_wall_clock));
    json jr{{"label", row.label},
            {"method", std::string(to_string(row.method))},
            {"seeds", std::move(seeds)},
            {"summary", summary_json(row.outcomes)},
            {"wins_vs_baseline", row.wins}};
    if (row.grid_value) jr["grid_value"] = *row.grid_value;
    jrows.push_back(std::move(jr));
  }
  json report{{"config", rc.echo}, {"baseline", rows[baseline].label}, {"rows", std::move(jrows)}};
  if (!rc.grid_key.empty()) report["grid_key"] = rc.grid_key;
  write_text(out_dir / "report.json", report.dump(2) + "\n");
  if (log) log(LogLevel::Info, "\n" + table);
  return report;
}

}  // namespace companion
