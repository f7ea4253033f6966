#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "survuq/common.hpp"
#include "survuq/coxcore.hpp"
#include "survuq/dataio.hpp"
#include "survuq/evalmetrics.hpp"
#include "survuq/probmodels.hpp"

namespace survuq::bench {

struct ModelConfig {
  std::string name;
  prob::Backend backend = prob::Backend::Mlp;
  std::vector<std::size_t> hidden;
  double learning_rate = 1e-3;
  double decay = 0.0;
  double l2 = 0.0;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::optional<std::uint64_t> seed;  // derived from the split seed if absent
  double dropout_rate = 0.1;          // mcd
  double prior_std = 1.0;             // vi
  std::size_t rff_features = 128;     // sngp
  double ridge = 1.0;                 // sngp

  void validate() const;
};

struct SearchSpec {
  std::size_t budget = 10;
  // Per-field candidate lists; empty lists mean "keep the base value".
  std::vector<double> learning_rate;
  std::vector<double> l2;
  std::vector<double> decay;
  std::vector<std::size_t> batch_size;
  std::vector<std::vector<std::size_t>> hidden;
  std::vector<double> dropout_rate;
  std::vector<double> prior_std;
};

struct ExperimentConfig {
  // Exactly one of the two dataset sources is set.
  std::optional<data::SynthConfig> synth;
  std::optional<std::string> csv_path;
  data::CsvSchema csv_schema;

  std::uint64_t split_seed = 0;
  std::array<double, 3> fractions{0.7, 0.1, 0.2};
  std::vector<ModelConfig> models;
  std::size_t n_posterior_samples = 100;
  std::size_t plot_samples = 1000;
  std::size_t plot_index = 0;
  std::string output_dir;  // may stay empty; the CLI fills it in
  std::optional<SearchSpec> search;

  std::string canonical_json;  // the parsed config, reserialized

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  void validate() const;
};

// FNV-1a over the canonical config serialization.
std::string config_hash(const std::string& canonical_json);

struct ModelRunInfo {
  std::string name;
  prob::Backend backend = prob::Backend::Mlp;
  std::size_t parameter_count = 0;
  std::uint64_t seed = 0;
  double train_seconds = 0.0;
  std::size_t epochs_run = 0;
  metrics::MetricReport report;
};

struct RunManifest {
  std::string config_hash;
  std::uint64_t split_seed = 0;
  std::vector<std::string> feature_names;
  std::vector<ModelRunInfo> models;
  std::vector<std::string> files;  // relative to the output directory
  std::string output_dir;

  std::string to_json() const;
};

RunManifest run_experiment(const ExperimentConfig& cfg);

struct SearchResult {
  std::string model;
  ModelConfig best;
  double valid_ci_td = 0.0;
  double valid_loss = 0.0;
  std::size_t evaluated = 0;
};

std::vector<SearchResult> hyper_search(const ExperimentConfig& cfg, std::uint64_t seed);

// Band + histogram CSVs for one individual; returns the paths written
// (relative to out_dir).
std::vector<std::string> emit_plot_data(const prob::SurvivalModel& model,
                                        const cox::BaselineHazard& base,
                                        const cox::TimeGrid& grid, const Eigen::VectorXd& x,
                                        const std::string& model_name, std::size_t n_samples,
                                        std::uint64_t seed, const std::string& out_dir);

}  // namespace survuq::bench
