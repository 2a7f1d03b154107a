// Command-line front end: train, compare, gen-data, metrics.
//
// Exit codes: 0 ok, 2 invalid config, 3 training fault, 4 I/O or input file error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "companion/experiment.hpp"

namespace {

using namespace companion;

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kFault = 3;
constexpr int kIo = 4;

void setup_logging() {
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("COMPANION_LOG")) {
    const std::string v(env);
    if (v == "debug") spdlog::set_level(spdlog::level::debug);
    else if (v == "info") spdlog::set_level(spdlog::level::info);
  }
}

void log_sink(LogLevel level, const std::string& msg) {
  if (level == LogLevel::Debug) spdlog::debug(msg);
  else spdlog::info(msg);
}

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const TrainingFault& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFault;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
}

int cmd_train(const std::string& config_path, const std::string& out, std::uint64_t seed_offset) {
  return guarded([&] {
    RunConfig rc = parse_run_config(read_json_file(config_path), ConfigMode::Train);
    if (!out.empty()) {
      rc.output_dir = out;
      rc.echo["output_dir"] = out;
    }
    const json report = run(rc, seed_offset, log_sink);
    const auto& s = report["summary"]["test_acc"];
    std::cout << "test_acc mean " << format_g9(s["mean"].get<double>());
    if (s.contains("stderr")) std::cout << " +- " << format_g9(s["stderr"].get<double>());
    std::cout << "\nwrote " << (std::filesystem::path(rc.output_dir) / "report.json").string() << '\n';
    return kOk;
  });
}

int cmd_compare(const std::string& config_path) {
  return guarded([&] {
    const RunConfig rc = parse_run_config(read_json_file(config_path), ConfigMode::Compare);
    compare(rc, log_sink);
    std::ifstream table(std::filesystem::path(rc.output_dir) / "comparison.csv");
    std::cout << table.rdbuf();
    return kOk;
  });
}

// Writes the train split to `out` and the test split next to it as <stem>.test<ext>.
int cmd_gen_data(const std::string& config_path, const std::string& out) {
  return guarded([&] {
    const json j = read_json_file(config_path);
    const json data = j.contains("data") ? j["data"] : j;
    const DataSource src = detail::parse_data(data);
    const auto* syn = std::get_if<SyntheticSource>(&src);
    if (!syn) throw ConfigError("data.source", "gen-data needs a synthetic source");
    std::uint64_t seed = syn->seed.value_or(0);
    if (!syn->seed && j.contains("seeds") && j["seeds"].is_array() && !j["seeds"].empty())
      seed = detail::get_count(j["seeds"][0], "seeds");
    const ClusterData d = generate_clusters(syn->spec, seed);
    std::filesystem::path train_path(out);
    std::filesystem::path test_path = train_path;
    test_path.replace_filename(train_path.stem().string() + ".test" + train_path.extension().string());
    save_csv(train_path.string(), d.train);
    save_csv(test_path.string(), d.test);
    std::cout << "wrote " << train_path.string() << " (" << d.train.size() << " rows) and " << test_path.string() << " ("
              << d.test.size() << " rows)\n";
    return kOk;
  });
}

int cmd_metrics(const std::string& checkpoint, const std::string& data_path, const std::string& histogram_out) {
  return guarded([&] {
    const ParamSet theta = load_checkpoint(checkpoint);
    DatasetSplit d = load_csv(data_path);
    if (d.input_dim() != theta.spec.input_dim) throw InputError("data width does not match checkpoint input_dim");
    if (d.num_classes > theta.spec.num_classes) throw InputError("data has labels beyond the checkpoint's classes");
    d.num_classes = theta.spec.num_classes;
    const Tensor logits = forward(theta, d.features);
    const NonTargetHistogram h = nontarget_histogram(logits, d.labels);

    json per_class = json::array();
    for (std::size_t c = 0; c < h.num_classes(); ++c) {
      json row{{"class", c}, {"n", h.total(c)}};
      if (h.total(c) > 0) {
        row["consistency"] = class_consistency(h, c);
        row["perplexity"] = class_perplexity(h, c);
      }
      per_class.push_back(std::move(row));
    }
    const json out{{"accuracy", accuracy(logits, d.labels)},
                   {"mean_consistency", mean_consistency(h)},
                   {"mean_perplexity", mean_perplexity(h)},
                   {"per_class", std::move(per_class)}};
    std::cout << out.dump(2) << '\n';
    if (!histogram_out.empty()) write_text(histogram_out, histogram_json(h).dump(2) + "\n");
    return kOk;
  });
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"companion: deep companion learning experiments"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, data, histogram_out;
  std::uint64_t seed_offset = 0;

  auto* train = app.add_subcommand("train", "train one method over the configured seeds");
  train->add_option("--config", config, "run config (JSON)")->required();
  train->add_option("--out", out, "output directory (overrides output_dir)");
  train->add_option("--seed-offset", seed_offset, "added to every configured seed");

  auto* cmp = app.add_subcommand("compare", "paired comparison of several methods or a knob grid");
  cmp->add_option("--config", config, "compare config (JSON)")->required();

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as CSV");
  gen->add_option("--config", config, "config with a synthetic data section")->required();
  gen->add_option("--out", out, "train CSV path; test split goes to <stem>.test.csv")->required();

  auto* met = app.add_subcommand("metrics", "recompute metrics from a checkpoint and a CSV dataset");
  met->add_option("--checkpoint", checkpoint, "parameter checkpoint")->required();
  met->add_option("--data", data, "CSV dataset")->required();
  met->add_option("--histogram-out", histogram_out, "optional JSON dump of the non-target histogram");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  if (*train) return cmd_train(config, out, seed_offset);
  if (*cmp) return cmd_compare(config);
  if (*gen) return cmd_gen_data(config, out);
  return cmd_metrics(checkpoint, data, histogram_out);
}
