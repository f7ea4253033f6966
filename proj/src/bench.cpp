#include "survuq/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace survuq::bench {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void check_keys(const json& obj, const std::string& ctx,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        ok = true;
        break;
      }
    if (!ok) throw Error("config: unknown key '" + item.key() + "' in " + ctx);
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return obj.at(key).get<T>();
}

std::vector<std::size_t> parse_widths(const json& arr, const std::string& ctx) {
  if (!arr.is_array()) throw Error("config: " + ctx + " must be an array of layer widths");
  std::vector<std::size_t> w;
  for (const auto& v : arr) {
    const auto x = v.get<long long>();
    if (x <= 0) throw Error("config: " + ctx + " widths must be positive");
    w.push_back(static_cast<std::size_t>(x));
  }
  return w;
}

std::string default_model_name(prob::Backend b, double dropout_rate) {
  if (b != prob::Backend::Mcd) return prob::backend_name(b);
  char buf[48];
  std::snprintf(buf, sizeof(buf), "mcd_p%g", dropout_rate);
  return buf;
}

ModelConfig parse_model(const json& jm) {
  check_keys(jm, "models[]",
             {"name", "backend", "hidden", "optimizer", "activation", "learning_rate", "decay",
              "l2", "batch_size", "max_epochs", "patience", "seed", "dropout_rate", "prior_std",
              "rff_features", "ridge"});
  ModelConfig mc;
  mc.backend = prob::backend_from_name(jm.at("backend").get<std::string>());
  const std::string optimizer = get_or<std::string>(jm, "optimizer", "adam");
  if (optimizer != "adam") throw Error("config: only the adam optimizer is supported");
  const std::string activation = get_or<std::string>(jm, "activation", "relu");
  if (activation != "relu") throw Error("config: only the relu activation is supported");
  if (jm.contains("hidden")) mc.hidden = parse_widths(jm.at("hidden"), "hidden");
  mc.learning_rate = get_or(jm, "learning_rate", mc.learning_rate);
  mc.decay = get_or(jm, "decay", mc.decay);
  mc.l2 = get_or(jm, "l2", mc.l2);
  mc.batch_size = get_or<std::size_t>(jm, "batch_size", mc.batch_size);
  mc.max_epochs = get_or<std::size_t>(jm, "max_epochs", mc.max_epochs);
  mc.patience = get_or<std::size_t>(jm, "patience", mc.patience);
  if (jm.contains("seed")) mc.seed = jm.at("seed").get<std::uint64_t>();
  mc.dropout_rate = get_or(jm, "dropout_rate", mc.dropout_rate);
  mc.prior_std = get_or(jm, "prior_std", mc.prior_std);
  mc.rff_features = get_or<std::size_t>(jm, "rff_features", mc.rff_features);
  mc.ridge = get_or(jm, "ridge", mc.ridge);
  mc.name = get_or<std::string>(jm, "name", default_model_name(mc.backend, mc.dropout_rate));
  mc.validate();
  return mc;
}

std::vector<double> parse_doubles(const json& arr, const std::string& ctx) {
  if (!arr.is_array()) throw Error("config: " + ctx + " must be an array");
  std::vector<double> out;
  for (const auto& v : arr) out.push_back(v.get<double>());
  return out;
}

SearchSpec parse_search(const json& js) {
  check_keys(js, "search",
             {"budget", "learning_rate", "l2", "decay", "batch_size", "hidden", "dropout_rate",
              "prior_std"});
  SearchSpec spec;
  spec.budget = get_or<std::size_t>(js, "budget", spec.budget);
  if (spec.budget == 0) throw Error("config: search budget must be positive");
  if (js.contains("learning_rate")) spec.learning_rate = parse_doubles(js.at("learning_rate"), "search.learning_rate");
  if (js.contains("l2")) spec.l2 = parse_doubles(js.at("l2"), "search.l2");
  if (js.contains("decay")) spec.decay = parse_doubles(js.at("decay"), "search.decay");
  if (js.contains("batch_size")) {
    for (const auto& v : js.at("batch_size")) {
      const auto b = v.get<long long>();
      if (b <= 0) throw Error("config: search.batch_size values must be positive");
      spec.batch_size.push_back(static_cast<std::size_t>(b));
    }
  }
  if (js.contains("hidden")) {
    for (const auto& v : js.at("hidden")) spec.hidden.push_back(parse_widths(v, "search.hidden"));
  }
  if (js.contains("dropout_rate")) spec.dropout_rate = parse_doubles(js.at("dropout_rate"), "search.dropout_rate");
  if (js.contains("prior_std")) spec.prior_std = parse_doubles(js.at("prior_std"), "search.prior_std");
  return spec;
}

}  // namespace

void ModelConfig::validate() const {
  if (name.empty()) throw Error("config: model name must not be empty");
  if (learning_rate <= 0.0) throw Error("config: learning_rate must be positive");
  if (decay < 0.0 || l2 < 0.0) throw Error("config: decay and l2 must be non-negative");
  if (batch_size == 0 || max_epochs == 0) throw Error("config: batch_size and max_epochs must be positive");
  if (patience == 0) throw Error("config: patience must be at least 1");
  for (std::size_t h : hidden)
    if (h == 0) throw Error("config: hidden widths must be positive");
  if (backend == prob::Backend::Mcd && (dropout_rate < 0.0 || dropout_rate >= 1.0))
    throw Error("config: dropout_rate must lie in [0,1)");
  if (backend == prob::Backend::Vi && prior_std <= 0.0)
    throw Error("config: prior_std must be positive");
  if (backend == prob::Backend::Sngp) {
    if (rff_features == 0) throw Error("config: rff_features must be positive");
    if (ridge <= 0.0) throw Error("config: ridge must be positive");
  }
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(doc, "the top level",
             {"dataset", "split_seed", "fractions", "models", "n_posterior_samples",
              "plot_samples", "plot_index", "output_dir", "search"});
  ExperimentConfig cfg;

  const json& jd = doc.at("dataset");
  const std::string kind = jd.at("kind").get<std::string>();
  if (kind == "synth") {
    check_keys(jd, "dataset",
               {"kind", "n", "d", "true_weights", "baseline_rate", "censor_rate_target", "seed"});
    data::SynthConfig sc;
    sc.n = jd.at("n").get<std::size_t>();
    sc.d = jd.at("d").get<int>();
    sc.true_weights = parse_doubles(jd.at("true_weights"), "dataset.true_weights");
    sc.baseline_rate = get_or(jd, "baseline_rate", 1.0);
    sc.censor_rate_target = get_or(jd, "censor_rate_target", 0.0);
    sc.seed = get_or<std::uint64_t>(jd, "seed", 1);
    cfg.synth = sc;
  } else if (kind == "csv") {
    check_keys(jd, "dataset", {"kind", "path", "time_col", "event_col", "features"});
    cfg.csv_path = jd.at("path").get<std::string>();
    cfg.csv_schema.time_col = jd.at("time_col").get<std::string>();
    cfg.csv_schema.event_col = jd.at("event_col").get<std::string>();
    for (const auto& jf : jd.at("features")) {
      check_keys(jf, "dataset.features[]", {"name", "kind"});
      const std::string fk = jf.at("kind").get<std::string>();
      data::FeatureKind k;
      if (fk == "real")
        k = data::FeatureKind::Real;
      else if (fk == "categorical")
        k = data::FeatureKind::Categorical;
      else
        throw Error("config: feature kind must be 'real' or 'categorical'");
      cfg.csv_schema.features.emplace_back(jf.at("name").get<std::string>(), k);
    }
    if (cfg.csv_schema.features.empty()) throw Error("config: dataset.features must not be empty");
  } else {
    throw Error("config: dataset.kind must be 'synth' or 'csv'");
  }

  cfg.split_seed = get_or<std::uint64_t>(doc, "split_seed", 0);
  if (doc.contains("fractions")) {
    const auto f = parse_doubles(doc.at("fractions"), "fractions");
    if (f.size() != 3) throw Error("config: fractions must have 3 entries");
    cfg.fractions = {f[0], f[1], f[2]};
  }
  for (const auto& jm : doc.at("models")) cfg.models.push_back(parse_model(jm));
  cfg.n_posterior_samples = get_or<std::size_t>(doc, "n_posterior_samples", 100);
  cfg.plot_samples = get_or<std::size_t>(doc, "plot_samples", 1000);
  cfg.plot_index = get_or<std::size_t>(doc, "plot_index", 0);
  cfg.output_dir = get_or<std::string>(doc, "output_dir", "");
  if (doc.contains("search")) cfg.search = parse_search(doc.at("search"));

  cfg.canonical_json = doc.dump();
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

void ExperimentConfig::validate() const {
  if (synth.has_value() == csv_path.has_value())
    throw Error("config: exactly one dataset source (synth or csv) must be given");
  if (models.empty()) throw Error("config: at least one model is required");
  std::set<std::string> names;
  for (const auto& m : models) {
    m.validate();
    if (!names.insert(m.name).second) throw Error("config: duplicate model name '" + m.name + "'");
  }
  if (n_posterior_samples < 2) throw Error("config: n_posterior_samples must be at least 2");
  if (plot_samples < 2) throw Error("config: plot_samples must be at least 2");
}

std::string config_hash(const std::string& canonical_json) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical_json) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

struct Prepared {
  data::Dataset train, valid, test;
  std::optional<data::SynthTruth> truth;
};

Prepared prepare_data(const ExperimentConfig& cfg, std::string& stage) {
  stage = "load";
  data::Dataset raw;
  Prepared prep;
  if (cfg.synth) {
    auto [ds, truth] = data::synth_generate(*cfg.synth);
    raw = std::move(ds);
    prep.truth = std::move(truth);
  } else {
    raw = data::load_csv(*cfg.csv_path, cfg.csv_schema);
  }

  stage = "split";
  data::SplitSet split = data::stratified_split(raw, cfg.fractions, cfg.split_seed);

  stage = "preprocess";
  data::Imputer imp = data::Imputer::fit(split.train);
  data::Dataset train = imp.apply(split.train);
  data::Dataset valid = imp.apply(split.valid);
  data::Dataset test = imp.apply(split.test);
  data::OneHotEncoder enc = data::OneHotEncoder::fit(train);
  train = enc.transform(train);
  valid = enc.transform(valid);
  test = enc.transform(test);
  data::Scaler scaler = data::fit_scaler(train);
  prep.train = scaler.transform(train);
  prep.valid = scaler.transform(valid);
  prep.test = scaler.transform(test);
  return prep;
}

net::TrainConfig to_train_config(const ModelConfig& mc, std::uint64_t seed) {
  net::TrainConfig tc;
  tc.learning_rate = mc.learning_rate;
  tc.weight_decay = mc.decay;
  tc.l2_lambda = mc.l2;
  tc.batch_size = mc.batch_size;
  tc.max_epochs = mc.max_epochs;
  tc.patience = mc.patience;
  tc.seed = seed;
  return tc;
}

prob::SurvivalModel train_backend(const ModelConfig& mc, const data::Dataset& train,
                                  const data::Dataset& valid, std::uint64_t seed) {
  const net::TrainConfig tc = to_train_config(mc, seed);
  switch (mc.backend) {
    case prob::Backend::Mlp: return prob::train_mlp(train, valid, mc.hidden, tc);
    case prob::Backend::Vi: return prob::train_vi(train, valid, mc.hidden, tc, mc.prior_std);
    case prob::Backend::Mcd: {
      prob::MCDConfig mcd;
      mcd.p_drop = mc.dropout_rate;
      return prob::train_mcd(train, valid, mc.hidden, tc, mcd);
    }
    case prob::Backend::Sngp: {
      prob::SNGPConfig sc;
      sc.m = mc.rff_features;
      sc.ridge = mc.ridge;
      return prob::train_sngp(train, valid, mc.hidden, tc, sc);
    }
  }
  throw Error("train_backend: bad backend tag");
}

struct FittedModel {
  prob::SurvivalModel model;
  cox::BaselineHazard base;
  cox::TimeGrid grid;
};

FittedModel fit_model(const ModelConfig& mc, const data::Dataset& train,
                      const data::Dataset& valid, std::uint64_t seed) {
  FittedModel fm;
  fm.model = train_backend(mc, train, valid, seed);
  Eigen::VectorXd train_risks = fm.model.point_risk_batch(train.matrix());
  fm.base = cox::breslow_baseline(train_risks, train.time, train.event);
  fm.grid = cox::event_time_grid(train.time, train.event);
  return fm;
}

metrics::MetricReport evaluate_model(const FittedModel& fm, const data::Dataset& test,
                                     std::size_t n_samples, std::uint64_t seed) {
  const Eigen::MatrixXd X = test.matrix();
  const std::size_t n = test.size();
  const bool sampling = fm.model.stochastic();

  std::vector<cox::SurvivalCurve> curves;
  std::vector<double> medians;
  std::vector<std::vector<double>> time_draws;
  curves.reserve(n);
  medians.reserve(n);
  if (sampling) time_draws.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd x = X.row(static_cast<Eigen::Index>(i)).transpose();
    if (sampling) {
      prob::SurvivalBand band = prob::predict_survival_band(fm.model, fm.base, fm.grid, x,
                                                            n_samples, 0.9,
                                                            derive_seed(seed, 9000 + i));
      medians.push_back(cox::median_survival_time(band.mean));
      time_draws[i] = std::move(band.draws.median_times);
      curves.push_back(std::move(band.mean));
    } else {
      cox::SurvivalCurve curve = cox::survival_curve(fm.model.point_risk(x), fm.base, fm.grid);
      medians.push_back(cox::median_survival_time(curve));
      curves.push_back(std::move(curve));
    }
  }

  const double horizon = *std::max_element(test.time.begin(), test.time.end());
  cox::TimeGrid eval_grid;
  for (double t : fm.grid.times)
    if (t <= horizon) eval_grid.times.push_back(t);
  if (eval_grid.times.empty())
    throw Error("evaluation grid is empty: no training event time within the test horizon");

  metrics::MetricReport report;
  report.ci_td = metrics::concordance_td(curves, test.time, test.event);
  report.ibs = metrics::integrated_brier(curves, test.time, test.event, eval_grid);
  report.mae_hinge = metrics::mae_hinge(medians, test.time, test.event);
  report.mae_po = metrics::mae_pseudo_obs(medians, test.time, test.event);
  const double t_star = prob::quantile_linear(test.time, 0.5);
  std::vector<double> probs(n);
  for (std::size_t i = 0; i < n; ++i) probs[i] = 1.0 - curves[i].at(t_star);
  report.ici = metrics::ici(probs, test.time, test.event, t_star);
  report.dcal_p = metrics::d_calibration(curves, test.time, test.event).p_value;
  if (sampling)
    report.ccal_p = metrics::c_calibration(time_draws, test.time, test.event).p_value;
  return report;
}

json baseline_to_doc(const cox::BaselineHazard& base) {
  json ev = json::array(), ch = json::array();
  for (double t : base.event_times) ev.push_back(t);
  for (double h : base.cumulative_hazard) ch.push_back(h);
  return {{"event_times", std::move(ev)}, {"cumulative_hazard", std::move(ch)}};
}

void write_text(const fs::path& path, const std::string& text, std::vector<fs::path>& created) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("write to '" + path.string() + "' failed");
  created.push_back(path);
}

}  // namespace

std::string RunManifest::to_json() const {
  json jmodels = json::array();
  for (const auto& m : models) {
    jmodels.push_back({{"name", m.name},
                       {"backend", prob::backend_name(m.backend)},
                       {"parameter_count", m.parameter_count},
                       {"seed", m.seed},
                       {"train_seconds", m.train_seconds},
                       {"epochs_run", m.epochs_run},
                       {"metrics", json::parse(m.report.to_json())}});
  }
  json jfiles = json::array();
  for (const auto& f : files) jfiles.push_back(f);
  json jfeat = json::array();
  for (const auto& f : feature_names) jfeat.push_back(f);
  json doc = {{"format", "survuq-manifest"}, {"version", 1},
              {"config_hash", config_hash},  {"split_seed", split_seed},
              {"features", std::move(jfeat)}, {"models", std::move(jmodels)},
              {"files", std::move(jfiles)}};
  return doc.dump(2);
}

std::vector<std::string> emit_plot_data(const prob::SurvivalModel& model,
                                        const cox::BaselineHazard& base,
                                        const cox::TimeGrid& grid, const Eigen::VectorXd& x,
                                        const std::string& model_name, std::size_t n_samples,
                                        std::uint64_t seed, const std::string& out_dir) {
  if (!model.stochastic())
    std::fprintf(stderr, "warning: model '%s' is a point predictor; band collapses to the mean\n",
                 model_name.c_str());
  prob::SurvivalBand band =
      prob::predict_survival_band(model, base, grid, x, n_samples, 0.90, seed);

  fs::create_directories(out_dir);
  std::vector<std::string> written;

  const std::string band_name = model_name + "_band.csv";
  {
    std::ofstream out(fs::path(out_dir) / band_name);
    if (!out) throw Error("cannot open plot file '" + band_name + "'");
    out << "time,mean,lo,hi\n";
    for (std::size_t k = 0; k < grid.times.size(); ++k)
      out << fmt(grid.times[k]) << ',' << fmt(band.mean.values[k]) << ','
          << fmt(band.lower.values[k]) << ',' << fmt(band.upper.values[k]) << '\n';
    if (!out) throw Error("write to plot file '" + band_name + "' failed");
  }
  written.push_back(band_name);

  const std::string hist_name = model_name + "_hist.csv";
  {
    const auto& med = band.draws.median_times;
    double lo = 0.0, hi = 0.0;
    bool any_finite = false;
    for (double v : med) {
      if (!std::isfinite(v)) continue;
      if (!any_finite) {
        lo = hi = v;
        any_finite = true;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (!any_finite) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi <= lo) hi = lo + 1.0;
    constexpr std::size_t kBins = 30;
    std::vector<std::size_t> counts(kBins, 0);
    for (double v : med) {
      if (!std::isfinite(v)) {
        ++counts[kBins - 1];  // overflow draws land in the top bin
        continue;
      }
      auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * kBins);
      ++counts[std::min(b, kBins - 1)];
    }
    std::ofstream out(fs::path(out_dir) / hist_name);
    if (!out) throw Error("cannot open plot file '" + hist_name + "'");
    out << "bin_left,count\n";
    for (std::size_t b = 0; b < kBins; ++b)
      out << fmt(lo + static_cast<double>(b) * (hi - lo) / kBins) << ',' << counts[b] << '\n';
    if (!out) throw Error("write to plot file '" + hist_name + "' failed");
  }
  written.push_back(hist_name);
  return written;
}

RunManifest run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.output_dir.empty()) throw Error("run_experiment: output directory not set");

  std::string stage = "setup";
  std::vector<fs::path> created_files;
  std::vector<fs::path> created_dirs;
  try {
    Prepared prep = prepare_data(cfg, stage);

    stage = "train";
    std::vector<FittedModel> fitted;
    std::vector<std::uint64_t> seeds;
    std::vector<double> train_seconds;
    for (std::size_t k = 0; k < cfg.models.size(); ++k) {
      const ModelConfig& mc = cfg.models[k];
      const std::uint64_t seed =
          mc.seed ? *mc.seed : derive_seed(cfg.split_seed, 100 + k);
      seeds.push_back(seed);
      const auto t0 = std::chrono::steady_clock::now();
      fitted.push_back(fit_model(mc, prep.train, prep.valid, seed));
      const auto t1 = std::chrono::steady_clock::now();
      train_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }

    stage = "evaluate";
    RunManifest manifest;
    manifest.config_hash = bench::config_hash(cfg.canonical_json);
    manifest.split_seed = cfg.split_seed;
    manifest.output_dir = cfg.output_dir;
    for (const auto& col : prep.train.columns) manifest.feature_names.push_back(col.name);
    for (std::size_t k = 0; k < cfg.models.size(); ++k) {
      ModelRunInfo info;
      info.name = cfg.models[k].name;
      info.backend = cfg.models[k].backend;
      info.parameter_count = fitted[k].model.parameter_count();
      info.seed = seeds[k];
      info.train_seconds = train_seconds[k];
      info.epochs_run = fitted[k].model.log.epochs_run;
      info.report = evaluate_model(fitted[k], prep.test, cfg.n_posterior_samples,
                                   derive_seed(seeds[k], 77));
      manifest.models.push_back(std::move(info));
    }

    stage = "write";
    const fs::path out_root(cfg.output_dir);
    for (const fs::path& dir :
         {out_root, out_root / "models", out_root / "splits", out_root / "plots"}) {
      if (!fs::exists(dir)) {
        fs::create_directories(dir);
        created_dirs.push_back(dir);
      }
    }

    data::save_csv(prep.train, (out_root / "splits" / "train.csv").string());
    created_files.push_back(out_root / "splits" / "train.csv");
    manifest.files.push_back("splits/train.csv");
    data::save_csv(prep.valid, (out_root / "splits" / "valid.csv").string());
    created_files.push_back(out_root / "splits" / "valid.csv");
    manifest.files.push_back("splits/valid.csv");
    data::save_csv(prep.test, (out_root / "splits" / "test.csv").string());
    created_files.push_back(out_root / "splits" / "test.csv");
    manifest.files.push_back("splits/test.csv");

    if (prep.truth) {
      data::save_truth_csv(*prep.truth, (out_root / "truth.csv").string());
      created_files.push_back(out_root / "truth.csv");
      manifest.files.push_back("truth.csv");
    }

    for (std::size_t k = 0; k < manifest.models.size(); ++k) {
      json jgrid = json::array();
      for (double t : fitted[k].grid.times) jgrid.push_back(t);
      json doc = {{"format", "survuq-fitted"},
                  {"version", 1},
                  {"model", json::parse(fitted[k].model.to_json())},
                  {"baseline", baseline_to_doc(fitted[k].base)},
                  {"grid", std::move(jgrid)}};
      const std::string rel = "models/" + manifest.models[k].name + ".json";
      write_text(out_root / rel, doc.dump(2), created_files);
      manifest.files.push_back(rel);
    }

    {
      std::ostringstream csv;
      csv << metrics::MetricReport::csv_header() << '\n';
      for (const auto& m : manifest.models) csv << m.report.csv_row(m.name) << '\n';
      write_text(out_root / "metrics.csv", csv.str(), created_files);
      manifest.files.push_back("metrics.csv");

      json jm = json::object();
      for (const auto& m : manifest.models) jm[m.name] = json::parse(m.report.to_json());
      write_text(out_root / "metrics.json", json(jm).dump(2), created_files);
      manifest.files.push_back("metrics.json");
    }

    if (cfg.plot_index >= prep.test.size())
      throw Error("plot_index " + std::to_string(cfg.plot_index) + " is out of range for the test split");
    const Eigen::VectorXd x_plot =
        prep.test.matrix().row(static_cast<Eigen::Index>(cfg.plot_index)).transpose();
    for (std::size_t k = 0; k < manifest.models.size(); ++k) {
      const std::string token =
          manifest.models[k].name + "_i" + std::to_string(cfg.plot_index);
      std::vector<std::string> plot_files =
          emit_plot_data(fitted[k].model, fitted[k].base, fitted[k].grid, x_plot, token,
                         cfg.plot_samples, derive_seed(seeds[k], 88), (out_root / "plots").string());
      for (const auto& f : plot_files) {
        created_files.push_back(out_root / "plots" / f);
        manifest.files.push_back("plots/" + f);
      }
    }

    manifest.files.push_back("manifest.json");
    write_text(out_root / "manifest.json", manifest.to_json(), created_files);

    for (const auto& rel : manifest.files)
      if (!fs::exists(out_root / rel))
        throw Error("declared output '" + rel + "' is missing");
    return manifest;
  } catch (const std::exception& e) {
    std::error_code ec;
    for (auto it = created_files.rbegin(); it != created_files.rend(); ++it) fs::remove(*it, ec);
    for (auto it = created_dirs.rbegin(); it != created_dirs.rend(); ++it) fs::remove(*it, ec);
    throw Error("stage '" + stage + "': " + e.what());
  }
}

namespace {

// All grid points for one base model config: the cartesian product over the
// non-empty candidate lists that apply to its backend.
std::vector<ModelConfig> grid_candidates(const ModelConfig& base, const SearchSpec& spec) {
  struct Dim {
    std::size_t size;
    std::function<void(ModelConfig&, std::size_t)> apply;
  };
  std::vector<Dim> dims;
  if (!spec.learning_rate.empty())
    dims.push_back({spec.learning_rate.size(),
                    [&](ModelConfig& m, std::size_t i) { m.learning_rate = spec.learning_rate[i]; }});
  if (!spec.l2.empty())
    dims.push_back({spec.l2.size(), [&](ModelConfig& m, std::size_t i) { m.l2 = spec.l2[i]; }});
  if (!spec.decay.empty())
    dims.push_back({spec.decay.size(), [&](ModelConfig& m, std::size_t i) { m.decay = spec.decay[i]; }});
  if (!spec.batch_size.empty())
    dims.push_back({spec.batch_size.size(),
                    [&](ModelConfig& m, std::size_t i) { m.batch_size = spec.batch_size[i]; }});
  if (!spec.hidden.empty())
    dims.push_back({spec.hidden.size(), [&](ModelConfig& m, std::size_t i) { m.hidden = spec.hidden[i]; }});
  if (base.backend == prob::Backend::Mcd && !spec.dropout_rate.empty())
    dims.push_back({spec.dropout_rate.size(),
                    [&](ModelConfig& m, std::size_t i) { m.dropout_rate = spec.dropout_rate[i]; }});
  if (base.backend == prob::Backend::Vi && !spec.prior_std.empty())
    dims.push_back({spec.prior_std.size(),
                    [&](ModelConfig& m, std::size_t i) { m.prior_std = spec.prior_std[i]; }});
  if (dims.empty()) throw Error("hyper_search: empty grid");

  std::size_t total = 1;
  for (const auto& d : dims) total *= d.size;
  std::vector<ModelConfig> out;
  for (std::size_t flat = 0; flat < total; ++flat) {
    ModelConfig mc = base;
    std::size_t rem = flat;
    for (const auto& d : dims) {
      d.apply(mc, rem % d.size);
      rem /= d.size;
    }
    mc.validate();
    out.push_back(std::move(mc));
  }
  return out;
}

std::string candidate_key(const ModelConfig& mc) {
  std::ostringstream key;
  key << mc.learning_rate << '|' << mc.l2 << '|' << mc.decay << '|' << mc.batch_size << '|';
  for (std::size_t h : mc.hidden) key << h << ',';
  key << '|' << mc.dropout_rate << '|' << mc.prior_std;
  return key.str();
}

}  // namespace

std::vector<SearchResult> hyper_search(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!cfg.search) throw Error("hyper_search: config has no search section");
  std::string stage;
  Prepared prep = prepare_data(cfg, stage);
  if (prep.valid.size() == 0) throw Error("hyper_search: validation split is empty");

  std::vector<SearchResult> results;
  for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
    const ModelConfig& base = cfg.models[mi];
    std::vector<ModelConfig> candidates = grid_candidates(base, *cfg.search);
    if (candidates.size() > cfg.search->budget) {
      std::vector<std::size_t> order(candidates.size());
      std::iota(order.begin(), order.end(), 0);
      auto rng = make_rng(seed, 61 + mi);
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(cfg.search->budget);
      std::sort(order.begin(), order.end());
      std::vector<ModelConfig> picked;
      for (std::size_t i : order) picked.push_back(candidates[i]);
      candidates = std::move(picked);
    }

    const std::uint64_t train_seed = base.seed ? *base.seed : derive_seed(seed, 500 + mi);
    SearchResult best;
    best.model = base.name;
    bool have_best = false;
    std::string best_key;
    for (const auto& cand : candidates) {
      FittedModel fm = fit_model(cand, prep.train, prep.valid, train_seed);
      Eigen::VectorXd risks = fm.model.point_risk_batch(prep.valid.matrix());
      std::vector<cox::SurvivalCurve> curves;
      curves.reserve(prep.valid.size());
      for (Eigen::Index i = 0; i < risks.size(); ++i)
        curves.push_back(cox::survival_curve(risks(i), fm.base, fm.grid));
      const double ci = metrics::concordance_td(curves, prep.valid.time, prep.valid.event);
      const double vloss = fm.model.log.valid_loss[fm.model.log.best_epoch - 1];
      const std::string key = candidate_key(cand);

      const bool wins = !have_best || ci > best.valid_ci_td ||
                        (ci == best.valid_ci_td && vloss < best.valid_loss) ||
                        (ci == best.valid_ci_td && vloss == best.valid_loss && key < best_key);
      if (wins) {
        best.best = cand;
        best.valid_ci_td = ci;
        best.valid_loss = vloss;
        best_key = key;
        have_best = true;
      }
    }
    best.evaluated = candidates.size();
    results.push_back(std::move(best));
  }
  return results;
}

}  // namespace survuq::bench
