#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "survuq/common.hpp"

namespace survuq::data {

enum class FeatureKind { Real, Categorical };

// Columnar covariate storage. A column is either numeric or label-valued;
// `missing` marks empty cells awaiting imputation. `indicator` tags one-hot
// output columns, which are excluded from z-scoring.
struct Column {
  std::string name;
  FeatureKind kind = FeatureKind::Real;
  bool indicator = false;
  std::vector<double> numeric;
  std::vector<std::string> labels;
  std::vector<std::uint8_t> missing;

  std::size_t size() const {
    return kind == FeatureKind::Real ? numeric.size() : labels.size();
  }
};

struct SurvivalRecord {
  double time = 0.0;
  int event = 0;
  std::vector<double> covariates;
};

class Dataset {
 public:
  std::vector<double> time;
  std::vector<int> event;
  std::vector<Column> columns;

  std::size_t size() const { return time.size(); }
  std::size_t n_features() const { return columns.size(); }
  int n_events() const;
  double censor_rate() const;
  bool all_real() const;
  bool has_missing() const;

  // Dense covariate matrix (rows = records). Requires all-real, no missing.
  Eigen::MatrixXd matrix() const;
  // Row view; requires all-real, no missing.
  SurvivalRecord record(std::size_t i) const;

  void validate() const;
};

struct CsvSchema {
  std::string time_col;
  std::string event_col;
  std::vector<std::pair<std::string, FeatureKind>> features;
};

Dataset load_csv(const std::string& path, const CsvSchema& schema);
void save_csv(const Dataset& ds, const std::string& path);

// Missing real cells -> column mean over observed cells; missing categorical
// cells -> column mode (ties broken by smallest label).
Dataset impute(const Dataset& ds);

// Imputation statistics fitted on one dataset (the training split) and
// applied to others.
struct Imputer {
  std::vector<double> fill_numeric;
  std::vector<std::string> fill_label;

  static Imputer fit(const Dataset& ds);
  Dataset apply(const Dataset& ds) const;
};

// Z-scoring parameters fitted on one dataset and applied to others, so
// valid/test are transformed with train statistics. Indicator columns and
// constant columns pass through centred (stddev kept at 1).
struct Scaler {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::uint8_t> skip;  // indicator columns, left untouched

  Dataset transform(const Dataset& ds) const;
};

std::pair<Dataset, Scaler> standardize(const Dataset& ds);
Scaler fit_scaler(const Dataset& ds);

// One-hot vocabulary learned from a fit dataset; levels are sorted so the
// expansion is deterministic. Unseen levels map to all-zero rows.
struct OneHotEncoder {
  std::map<std::string, std::vector<std::string>> vocab;  // column -> levels

  static OneHotEncoder fit(const Dataset& ds);
  Dataset transform(const Dataset& ds) const;
};

Dataset one_hot(const Dataset& ds);

struct SplitSet {
  Dataset train;
  Dataset valid;
  Dataset test;
  std::uint64_t seed = 0;
};

// Stratified on event flag x quartile of observed time. Censoring counts per
// split follow largest-remainder quotas, so each split's censoring rate
// tracks the full-data rate. Deterministic for a fixed seed.
SplitSet stratified_split(const Dataset& ds, const std::array<double, 3>& fractions,
                          std::uint64_t seed);

struct SynthConfig {
  std::size_t n = 0;
  int d = 0;
  std::vector<double> true_weights;
  double baseline_rate = 1.0;
  double censor_rate_target = 0.0;
  std::uint64_t seed = 0;
};

// Per-record ground truth retained for oracle tests: the uncensored event
// time and the true linear predictor w.x (the true survival function is
// exp(-baseline_rate * exp(w.x) * t)).
struct SynthTruth {
  std::vector<double> event_time;
  std::vector<double> linear_predictor;
  double baseline_rate = 1.0;
};

// Covariates ~ N(0, I); event time ~ Exponential(baseline_rate * exp(w.x));
// censoring uniform on a horizon calibrated so the expected censoring
// fraction equals the target. Bit-reproducible per seed.
std::pair<Dataset, SynthTruth> synth_generate(const SynthConfig& cfg);

void save_truth_csv(const SynthTruth& truth, const std::string& path);

}  // namespace survuq::data
