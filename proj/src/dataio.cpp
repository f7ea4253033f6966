#include "survuq/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace survuq::data {

namespace {

// Round-trip-exact float formatting shared by every CSV writer.
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_double(const std::string& s, const std::string& what, std::size_t row) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("row " + std::to_string(row) + ": cannot parse '" + s + "' as a number for " + what);
  }
}

}  // namespace

int Dataset::n_events() const {
  int n = 0;
  for (int e : event) n += e;
  return n;
}

double Dataset::censor_rate() const {
  if (time.empty()) return 0.0;
  return 1.0 - static_cast<double>(n_events()) / static_cast<double>(time.size());
}

bool Dataset::all_real() const {
  for (const auto& c : columns)
    if (c.kind != FeatureKind::Real) return false;
  return true;
}

bool Dataset::has_missing() const {
  for (const auto& c : columns)
    for (std::uint8_t m : c.missing)
      if (m) return true;
  return false;
}

Eigen::MatrixXd Dataset::matrix() const {
  if (!all_real()) throw Error("matrix(): categorical columns present; encode first");
  if (has_missing()) throw Error("matrix(): missing values present; impute first");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j)
    for (std::size_t i = 0; i < size(); ++i)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = columns[j].numeric[i];
  return X;
}

SurvivalRecord Dataset::record(std::size_t i) const {
  if (i >= size()) throw Error("record(): index out of range");
  if (!all_real()) throw Error("record(): categorical columns present; encode first");
  SurvivalRecord r;
  r.time = time[i];
  r.event = event[i];
  r.covariates.reserve(columns.size());
  for (const auto& c : columns) {
    if (c.missing.size() > i && c.missing[i]) throw Error("record(): missing value; impute first");
    r.covariates.push_back(c.numeric[i]);
  }
  return r;
}

void Dataset::validate() const {
  const std::size_t n = time.size();
  if (event.size() != n) throw Error("dataset: time/event length mismatch");
  for (const auto& c : columns) {
    if (c.size() != n) throw Error("dataset: column '" + c.name + "' length mismatch");
    if (!c.missing.empty() && c.missing.size() != n)
      throw Error("dataset: column '" + c.name + "' missing-mask length mismatch");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(time[i]) || time[i] < 0.0)
      throw Error("dataset: non-finite or negative time at row " + std::to_string(i));
    if (event[i] != 0 && event[i] != 1)
      throw Error("dataset: event flag must be 0 or 1 at row " + std::to_string(i));
  }
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("load_csv: cannot open '" + path + "'");

  std::string header_line;
  if (!std::getline(in, header_line)) throw Error("load_csv: '" + path + "' is empty");
  std::vector<std::string> header = split_line(header_line);

  auto find_col = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error("load_csv: column '" + name + "' not found in '" + path + "'");
  };

  const std::size_t time_idx = find_col(schema.time_col);
  const std::size_t event_idx = find_col(schema.event_col);
  std::vector<std::size_t> feat_idx;
  feat_idx.reserve(schema.features.size());
  for (const auto& [name, kind] : schema.features) feat_idx.push_back(find_col(name));

  Dataset ds;
  ds.columns.resize(schema.features.size());
  for (std::size_t j = 0; j < schema.features.size(); ++j) {
    ds.columns[j].name = schema.features[j].first;
    ds.columns[j].kind = schema.features[j].second;
  }

  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() && in.eof()) break;
    std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size())
      throw Error("load_csv: row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                  " fields, header has " + std::to_string(header.size()));

    const std::string& tcell = cells[time_idx];
    if (tcell.empty()) throw Error("row " + std::to_string(row) + ": time value is empty");
    double t = parse_double(tcell, "time", row);
    if (!std::isfinite(t) || t < 0.0)
      throw Error("row " + std::to_string(row) + ": time must be finite and non-negative");
    ds.time.push_back(t);

    const std::string& ecell = cells[event_idx];
    if (ecell == "0")
      ds.event.push_back(0);
    else if (ecell == "1")
      ds.event.push_back(1);
    else
      throw Error("row " + std::to_string(row) + ": event must be '0' or '1', got '" + ecell + "'");

    for (std::size_t j = 0; j < feat_idx.size(); ++j) {
      Column& col = ds.columns[j];
      const std::string& cell = cells[feat_idx[j]];
      bool miss = cell.empty();
      col.missing.push_back(miss ? 1 : 0);
      if (col.kind == FeatureKind::Real) {
        col.numeric.push_back(miss ? std::numeric_limits<double>::quiet_NaN()
                                   : parse_double(cell, "feature '" + col.name + "'", row));
      } else {
        col.labels.push_back(miss ? std::string() : cell);
      }
    }
  }
  if (ds.time.empty()) throw Error("load_csv: '" + path + "' has no data rows");
  ds.validate();
  return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw Error("save_csv: cannot open '" + path + "' for writing");
  out << "time,event";
  for (const auto& c : ds.columns) out << ',' << c.name;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << fmt_double(ds.time[i]) << ',' << ds.event[i];
    for (const auto& c : ds.columns) {
      out << ',';
      bool miss = !c.missing.empty() && c.missing[i];
      if (miss) continue;
      if (c.kind == FeatureKind::Real)
        out << fmt_double(c.numeric[i]);
      else
        out << c.labels[i];
    }
    out << '\n';
  }
  if (!out) throw Error("save_csv: write to '" + path + "' failed");
}

Imputer Imputer::fit(const Dataset& ds) {
  ds.validate();
  Imputer imp;
  imp.fill_numeric.resize(ds.columns.size(), 0.0);
  imp.fill_label.resize(ds.columns.size());
  for (std::size_t j = 0; j < ds.columns.size(); ++j) {
    const Column& col = ds.columns[j];
    if (col.kind == FeatureKind::Real) {
      double sum = 0.0;
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < col.numeric.size(); ++i) {
        if (col.missing.empty() || !col.missing[i]) {
          sum += col.numeric[i];
          ++cnt;
        }
      }
      if (cnt == 0) throw Error("impute: column '" + col.name + "' has no observed values");
      imp.fill_numeric[j] = sum / static_cast<double>(cnt);
    } else {
      std::map<std::string, std::size_t> freq;
      for (std::size_t i = 0; i < col.labels.size(); ++i)
        if (col.missing.empty() || !col.missing[i]) ++freq[col.labels[i]];
      if (freq.empty()) throw Error("impute: column '" + col.name + "' has no observed values");
      // Highest count wins; the map order makes ties go to the smallest label.
      std::string mode;
      std::size_t best = 0;
      for (const auto& [label, cnt] : freq) {
        if (cnt > best) {
          best = cnt;
          mode = label;
        }
      }
      imp.fill_label[j] = mode;
    }
  }
  return imp;
}

Dataset Imputer::apply(const Dataset& ds) const {
  ds.validate();
  if (ds.columns.size() != fill_numeric.size())
    throw Error("impute: dataset has " + std::to_string(ds.columns.size()) +
                " columns, imputer was fitted on " + std::to_string(fill_numeric.size()));
  Dataset out = ds;
  for (std::size_t j = 0; j < out.columns.size(); ++j) {
    Column& col = out.columns[j];
    for (std::size_t i = 0; i < col.missing.size(); ++i) {
      if (!col.missing[i]) continue;
      if (col.kind == FeatureKind::Real)
        col.numeric[i] = fill_numeric[j];
      else
        col.labels[i] = fill_label[j];
    }
    std::fill(col.missing.begin(), col.missing.end(), std::uint8_t{0});
  }
  return out;
}

Dataset impute(const Dataset& ds) { return Imputer::fit(ds).apply(ds); }

Scaler fit_scaler(const Dataset& ds) {
  ds.validate();
  if (!ds.all_real()) throw Error("fit_scaler: categorical columns present; encode first");
  if (ds.has_missing()) throw Error("fit_scaler: missing values present; impute first");
  const auto n = static_cast<double>(ds.size());
  if (ds.size() < 2) throw Error("fit_scaler: need at least 2 rows");
  Scaler sc;
  for (const auto& col : ds.columns) {
    if (col.indicator) {
      sc.mean.push_back(0.0);
      sc.stddev.push_back(1.0);
      sc.skip.push_back(1);
      continue;
    }
    double mean = std::accumulate(col.numeric.begin(), col.numeric.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : col.numeric) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / (n - 1.0));
    sc.mean.push_back(mean);
    sc.stddev.push_back(sd > 0.0 ? sd : 1.0);
    sc.skip.push_back(0);
  }
  return sc;
}

Dataset Scaler::transform(const Dataset& ds) const {
  ds.validate();
  if (!ds.all_real()) throw Error("Scaler: categorical columns present; encode first");
  if (ds.has_missing()) throw Error("Scaler: missing values present; impute first");
  if (ds.columns.size() != mean.size())
    throw Error("Scaler: dataset has " + std::to_string(ds.columns.size()) +
                " columns, scaler was fitted on " + std::to_string(mean.size()));
  Dataset out = ds;
  for (std::size_t j = 0; j < out.columns.size(); ++j) {
    if (skip[j]) continue;
    for (double& v : out.columns[j].numeric) v = (v - mean[j]) / stddev[j];
  }
  return out;
}

std::pair<Dataset, Scaler> standardize(const Dataset& ds) {
  Scaler sc = fit_scaler(ds);
  return {sc.transform(ds), sc};
}

OneHotEncoder OneHotEncoder::fit(const Dataset& ds) {
  ds.validate();
  if (ds.has_missing()) throw Error("OneHotEncoder: missing values present; impute first");
  OneHotEncoder enc;
  for (const auto& col : ds.columns) {
    if (col.kind != FeatureKind::Categorical) continue;
    std::set<std::string> levels(col.labels.begin(), col.labels.end());
    enc.vocab[col.name] = std::vector<std::string>(levels.begin(), levels.end());
  }
  return enc;
}

Dataset OneHotEncoder::transform(const Dataset& ds) const {
  ds.validate();
  if (ds.has_missing()) throw Error("OneHotEncoder: missing values present; impute first");
  Dataset out;
  out.time = ds.time;
  out.event = ds.event;
  for (const auto& col : ds.columns) {
    if (col.kind == FeatureKind::Real) {
      out.columns.push_back(col);
      continue;
    }
    auto it = vocab.find(col.name);
    if (it == vocab.end())
      throw Error("OneHotEncoder: column '" + col.name + "' was not seen at fit time");
    for (const std::string& level : it->second) {
      Column ind;
      ind.name = col.name + "=" + level;
      ind.kind = FeatureKind::Real;
      ind.indicator = true;
      ind.numeric.reserve(col.labels.size());
      for (const std::string& label : col.labels)
        ind.numeric.push_back(label == level ? 1.0 : 0.0);  // unseen labels -> all zeros
      ind.missing.assign(col.labels.size(), 0);
      out.columns.push_back(std::move(ind));
    }
  }
  return out;
}

Dataset one_hot(const Dataset& ds) { return OneHotEncoder::fit(ds).transform(ds); }

namespace {

// Largest-remainder allotment of `total` into quotas proportional to
// weights; guarantees the parts sum to total.
std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> parts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double exact = wsum > 0.0 ? total * weights[i] / wsum : 0.0;
    parts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += parts[i];
    rema.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) parts[rema[k % rema.size()].second]++;
  return parts;
}

Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.columns.resize(ds.columns.size());
  for (std::size_t j = 0; j < ds.columns.size(); ++j) {
    out.columns[j].name = ds.columns[j].name;
    out.columns[j].kind = ds.columns[j].kind;
    out.columns[j].indicator = ds.columns[j].indicator;
  }
  for (std::size_t i : rows) {
    out.time.push_back(ds.time[i]);
    out.event.push_back(ds.event[i]);
    for (std::size_t j = 0; j < ds.columns.size(); ++j) {
      const Column& src = ds.columns[j];
      Column& dst = out.columns[j];
      if (src.kind == FeatureKind::Real)
        dst.numeric.push_back(src.numeric[i]);
      else
        dst.labels.push_back(src.labels[i]);
      dst.missing.push_back(src.missing.empty() ? 0 : src.missing[i]);
    }
  }
  return out;
}

}  // namespace

SplitSet stratified_split(const Dataset& ds, const std::array<double, 3>& fractions,
                          std::uint64_t seed) {
  ds.validate();
  const std::size_t n = ds.size();
  double fsum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9) throw Error("stratified_split: fractions must sum to 1");
  for (double f : fractions)
    if (f <= 0.0) throw Error("stratified_split: fractions must be positive");

  // Split-level totals, then per-event-class totals within each split.
  std::vector<std::size_t> totals =
      largest_remainder(n, {fractions[0], fractions[1], fractions[2]});
  for (std::size_t j = 0; j < 3; ++j)
    if (totals[j] == 0)
      throw Error("stratified_split: split " + std::to_string(j) + " would be empty");

  std::vector<std::size_t> ev_rows, cn_rows;
  for (std::size_t i = 0; i < n; ++i) (ds.event[i] ? ev_rows : cn_rows).push_back(i);
  const std::size_t n_cens = cn_rows.size();

  // Censored quota per split by largest remainder on the same fractions,
  // capped by the split totals; events take the rest. This pins each split's
  // censoring rate to the global one as closely as integers allow.
  std::vector<std::size_t> cens_quota =
      largest_remainder(n_cens, {fractions[0], fractions[1], fractions[2]});
  for (std::size_t j = 0; j < 3; ++j) {
    if (cens_quota[j] > totals[j]) {
      std::size_t excess = cens_quota[j] - totals[j];
      cens_quota[j] = totals[j];
      for (std::size_t k = 0; k < 3 && excess > 0; ++k) {
        if (k == j) continue;
        std::size_t room = totals[k] - std::min(totals[k], cens_quota[k]);
        std::size_t move = std::min(room, excess);
        cens_quota[k] += move;
        excess -= move;
      }
    }
  }
  std::array<std::array<std::size_t, 3>, 2> class_quota{};  // [class][split]
  for (std::size_t j = 0; j < 3; ++j) {
    class_quota[0][j] = cens_quota[j];
    class_quota[1][j] = totals[j] - cens_quota[j];
  }
  for (int cls = 0; cls < 2; ++cls) {
    const std::size_t class_count = cls ? ev_rows.size() : cn_rows.size();
    if (class_count == 0) continue;
    for (std::size_t j = 0; j < 3; ++j)
      if (class_quota[static_cast<std::size_t>(cls)][j] == 0)
        throw Error("stratified_split: too few records to populate every split with both classes");
  }

  // Within each event class, stratify over time quartiles so the survival
  // time distribution is balanced too, then deal shuffled strata into splits
  // against the class quotas.
  auto rng = make_rng(seed, 17);
  std::vector<std::size_t> assign(n, 3);
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t>& rows = cls ? ev_rows : cn_rows;
    if (rows.empty()) continue;
    std::vector<std::size_t> sorted_rows = rows;
    std::stable_sort(sorted_rows.begin(), sorted_rows.end(),
                     [&](std::size_t a, std::size_t b) { return ds.time[a] < ds.time[b]; });
    const std::size_t m = sorted_rows.size();
    std::array<std::vector<std::size_t>, 4> strata;
    for (std::size_t k = 0; k < m; ++k) strata[std::min<std::size_t>(4 * k / m, 3)].push_back(sorted_rows[k]);

    std::array<std::size_t, 3> left = class_quota[cls];
    for (auto& stratum : strata) {
      std::shuffle(stratum.begin(), stratum.end(), rng);
      // Stratum-level quotas proportional to what each split still needs.
      std::vector<std::size_t> want = largest_remainder(
          stratum.size(), {static_cast<double>(left[0]), static_cast<double>(left[1]),
                           static_cast<double>(left[2])});
      for (std::size_t j = 0; j < 3; ++j)
        if (want[j] > left[j]) {
          std::size_t excess = want[j] - left[j];
          want[j] = left[j];
          for (std::size_t k = 0; k < 3 && excess > 0; ++k) {
            if (k == j) continue;
            std::size_t room = left[k] - want[k];
            std::size_t move = std::min(room, excess);
            want[k] += move;
            excess -= move;
          }
        }
      std::size_t pos = 0;
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t c = 0; c < want[j]; ++c, ++pos) {
          assign[stratum[pos]] = j;
          --left[j];
        }
    }
  }

  std::array<std::vector<std::size_t>, 3> split_rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (assign[i] > 2) throw Error("stratified_split: internal quota accounting failure");
    split_rows[assign[i]].push_back(i);
  }

  SplitSet out;
  out.train = take_rows(ds, split_rows[0]);
  out.valid = take_rows(ds, split_rows[1]);
  out.test = take_rows(ds, split_rows[2]);
  out.seed = seed;
  return out;
}

std::pair<Dataset, SynthTruth> synth_generate(const SynthConfig& cfg) {
  if (cfg.n < 2) throw Error("synth_generate: n must be at least 2");
  if (cfg.d <= 0) throw Error("synth_generate: d must be positive");
  if (cfg.true_weights.size() != static_cast<std::size_t>(cfg.d))
    throw Error("synth_generate: true_weights must have length d");
  if (cfg.baseline_rate <= 0.0) throw Error("synth_generate: baseline_rate must be positive");
  if (cfg.censor_rate_target < 0.0 || cfg.censor_rate_target >= 1.0)
    throw Error("synth_generate: censor_rate_target must lie in [0, 1)");

  auto rng_x = make_rng(cfg.seed, 1);
  auto rng_t = make_rng(cfg.seed, 2);
  auto rng_c = make_rng(cfg.seed, 3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset ds;
  ds.columns.resize(static_cast<std::size_t>(cfg.d));
  for (int j = 0; j < cfg.d; ++j) {
    ds.columns[static_cast<std::size_t>(j)].name = "x" + std::to_string(j);
    ds.columns[static_cast<std::size_t>(j)].kind = FeatureKind::Real;
  }
  SynthTruth truth;
  truth.baseline_rate = cfg.baseline_rate;

  std::vector<double> event_time(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    double lp = 0.0;
    for (int j = 0; j < cfg.d; ++j) {
      double x = gauss(rng_x);
      ds.columns[static_cast<std::size_t>(j)].numeric.push_back(x);
      lp += cfg.true_weights[static_cast<std::size_t>(j)] * x;
    }
    truth.linear_predictor.push_back(lp);
    double rate = cfg.baseline_rate * std::exp(lp);
    double u = unit(rng_t);
    if (u <= 0.0) u = std::numeric_limits<double>::min();
    event_time[i] = -std::log(u) / rate;
  }
  truth.event_time = event_time;
  for (auto& col : ds.columns) col.missing.assign(cfg.n, 0);

  if (cfg.censor_rate_target == 0.0) {
    ds.time = event_time;
    ds.event.assign(cfg.n, 1);
    ds.validate();
    return {ds, truth};
  }

  // With C ~ U(0, h), P(censored | T) = 1 - min(T/h, 1); calibrate h by
  // bisection so the mean censoring probability hits the target.
  auto expected_censor = [&](double h) {
    double acc = 0.0;
    for (double t : event_time) acc += std::min(t / h, 1.0);
    return acc / static_cast<double>(cfg.n);
  };
  double lo = 1e-12, hi = 1e-12;
  for (double t : event_time) hi = std::max(hi, t);
  hi *= 2.0;
  while (expected_censor(hi) > cfg.censor_rate_target) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (expected_censor(mid) > cfg.censor_rate_target)
      lo = mid;
    else
      hi = mid;
  }
  const double horizon = 0.5 * (lo + hi);

  ds.time.resize(cfg.n);
  ds.event.resize(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    double c = horizon * unit(rng_c);
    if (event_time[i] <= c) {
      ds.time[i] = event_time[i];
      ds.event[i] = 1;
    } else {
      ds.time[i] = c;
      ds.event[i] = 0;
    }
  }
  ds.validate();
  return {ds, truth};
}

void save_truth_csv(const SynthTruth& truth, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_truth_csv: cannot open '" + path + "' for writing");
  out << "event_time,linear_predictor,baseline_rate\n";
  for (std::size_t i = 0; i < truth.event_time.size(); ++i) {
    out << fmt_double(truth.event_time[i]) << ',' << fmt_double(truth.linear_predictor[i]) << ','
        << fmt_double(truth.baseline_rate) << '\n';
  }
  if (!out) throw Error("save_truth_csv: write to '" + path + "' failed");
}

}  // namespace survuq::data
