#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "survuq/bench.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using survuq::Error;

namespace {

std::string resolve_out(const std::string& cli_out, const std::string& cfg_out) {
  if (!cli_out.empty()) return cli_out;
  if (!cfg_out.empty()) return cfg_out;
  if (const char* env = std::getenv("SURVUQ_OUT"); env && *env) return env;
  return "./survuq_out";
}

json read_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw Error(std::string(what) + ": cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::exception& e) {
    throw Error(std::string(what) + ": invalid JSON in '" + path.string() + "': " + e.what());
  }
}

json model_config_doc(const survuq::bench::ModelConfig& m) {
  json j = {{"name", m.name},
            {"backend", survuq::prob::backend_name(m.backend)},
            {"hidden", m.hidden},
            {"learning_rate", m.learning_rate},
            {"decay", m.decay},
            {"l2", m.l2},
            {"batch_size", m.batch_size},
            {"max_epochs", m.max_epochs},
            {"patience", m.patience}};
  if (m.seed) j["seed"] = *m.seed;
  switch (m.backend) {
    case survuq::prob::Backend::Mcd: j["dropout_rate"] = m.dropout_rate; break;
    case survuq::prob::Backend::Vi: j["prior_std"] = m.prior_std; break;
    case survuq::prob::Backend::Sngp:
      j["rff_features"] = m.rff_features;
      j["ridge"] = m.ridge;
      break;
    default: break;
  }
  return j;
}

int cmd_run(const std::string& config_path, bool seed_set, std::uint64_t seed,
            const std::string& out) {
  survuq::bench::ExperimentConfig cfg = survuq::bench::ExperimentConfig::from_file(config_path);
  if (seed_set) cfg.split_seed = seed;
  cfg.output_dir = resolve_out(out, cfg.output_dir);
  survuq::bench::RunManifest manifest = survuq::bench::run_experiment(cfg);
  std::cout << "run " << manifest.config_hash << " -> " << manifest.output_dir << " ("
            << manifest.files.size() << " files)\n";
  for (const auto& m : manifest.models) {
    std::cout << "  " << m.name << ": ci_td=" << m.report.ci_td << " ibs=" << m.report.ibs
              << " epochs=" << m.epochs_run << " (" << m.train_seconds << "s)\n";
  }
  return 0;
}

int cmd_search(const std::string& config_path, bool seed_set, std::uint64_t seed,
               const std::string& out) {
  survuq::bench::ExperimentConfig cfg = survuq::bench::ExperimentConfig::from_file(config_path);
  if (seed_set) cfg.split_seed = seed;
  cfg.output_dir = resolve_out(out, cfg.output_dir);
  const std::uint64_t search_seed = seed_set ? seed : cfg.split_seed;
  std::vector<survuq::bench::SearchResult> results = survuq::bench::hyper_search(cfg, search_seed);

  json doc = json::array();
  for (const auto& r : results) {
    doc.push_back({{"model", r.model},
                   {"valid_ci_td", r.valid_ci_td},
                   {"valid_loss", r.valid_loss},
                   {"evaluated", r.evaluated},
                   {"best", model_config_doc(r.best)}});
    std::cout << "search " << r.model << ": best ci_td=" << r.valid_ci_td << " over "
              << r.evaluated << " candidates\n";
  }
  fs::create_directories(cfg.output_dir);
  const fs::path out_path = fs::path(cfg.output_dir) / "search_result.json";
  std::ofstream outf(out_path);
  if (!outf) throw Error("search: cannot open '" + out_path.string() + "'");
  outf << doc.dump(2);
  if (!outf) throw Error("search: write to '" + out_path.string() + "' failed");
  std::cout << "wrote " << out_path.string() << "\n";
  return 0;
}

int cmd_plot(const std::string& manifest_path, const std::string& model_name, std::size_t index,
             std::uint64_t seed, std::size_t n_samples, const std::string& out) {
  const fs::path mpath(manifest_path);
  json manifest = read_json_file(mpath, "plot");
  const fs::path root = mpath.parent_path();

  const fs::path model_file = root / "models" / (model_name + ".json");
  if (!fs::exists(model_file)) {
    std::string known;
    for (const auto& jm : manifest.at("models"))
      known += (known.empty() ? "" : ", ") + jm.at("name").get<std::string>();
    throw Error("plot: unknown model '" + model_name + "' (have: " + known + ")");
  }
  json fitted = read_json_file(model_file, "plot");
  survuq::prob::SurvivalModel model =
      survuq::prob::SurvivalModel::from_json(fitted.at("model").dump());
  survuq::cox::BaselineHazard base;
  base.event_times = fitted.at("baseline").at("event_times").get<std::vector<double>>();
  base.cumulative_hazard =
      fitted.at("baseline").at("cumulative_hazard").get<std::vector<double>>();
  survuq::cox::TimeGrid grid;
  grid.times = fitted.at("grid").get<std::vector<double>>();

  survuq::data::CsvSchema schema;
  schema.time_col = "time";
  schema.event_col = "event";
  for (const auto& jf : manifest.at("features"))
    schema.features.emplace_back(jf.get<std::string>(), survuq::data::FeatureKind::Real);
  survuq::data::Dataset test = survuq::data::load_csv((root / "splits" / "test.csv").string(), schema);
  if (index >= test.size())
    throw Error("plot: index " + std::to_string(index) + " is out of range (test split has " +
                std::to_string(test.size()) + " rows)");
  const Eigen::VectorXd x = test.matrix().row(static_cast<Eigen::Index>(index)).transpose();

  const std::string dest = out.empty() ? (root / "plots").string() : out;
  const std::string token = model_name + "_i" + std::to_string(index);
  std::vector<std::string> files =
      survuq::bench::emit_plot_data(model, base, grid, x, token, n_samples, seed, dest);
  for (const auto& f : files) std::cout << "wrote " << (fs::path(dest) / f).string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"survuq — survival analysis with uncertainty quantification"};
  app.require_subcommand(1);

  std::string config_path, manifest_path, model_name, out;
  std::uint64_t seed = 0;
  std::size_t index = 0, n_samples = 1000;

  CLI::App* run = app.add_subcommand("run", "Run a full experiment from a JSON config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  CLI::Option* run_seed = run->add_option("--seed", seed, "Override the split seed");
  run->add_option("--out", out, "Output directory (overrides config and SURVUQ_OUT)");

  CLI::App* search = app.add_subcommand("search", "Hyperparameter search on the validation split");
  search->add_option("config", config_path, "Experiment config with a search section")->required();
  CLI::Option* search_seed = search->add_option("--seed", seed, "Search seed (default: split seed)");
  search->add_option("--out", out, "Output directory (overrides config and SURVUQ_OUT)");

  CLI::App* plot = app.add_subcommand("plot", "Emit band + histogram CSVs for one individual");
  plot->add_option("manifest", manifest_path, "manifest.json of a finished run")->required();
  plot->add_option("--model", model_name, "Model name from the manifest")->required();
  plot->add_option("--index", index, "Row index in the test split");
  plot->add_option("--seed", seed, "Sampling seed");
  plot->add_option("--samples", n_samples, "Number of posterior draws");
  plot->add_option("--out", out, "Destination directory (default: <run>/plots)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, !run_seed->empty(), seed, out);
    if (search->parsed()) return cmd_search(config_path, !search_seed->empty(), seed, out);
    if (plot->parsed()) return cmd_plot(manifest_path, model_name, index, seed, n_samples, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
