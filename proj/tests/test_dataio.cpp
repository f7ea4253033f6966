#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "survuq/dataio.hpp"

using namespace survuq;
using namespace survuq::data;
namespace fs = std::filesystem;

namespace {

fs::path tmp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "survuq_dataio_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

Dataset make_real(const std::vector<double>& time, const std::vector<int>& event,
                  const std::vector<std::vector<double>>& cols) {
  Dataset ds;
  ds.time = time;
  ds.event = event;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    Column col;
    col.name = "x" + std::to_string(c);
    col.numeric = cols[c];
    ds.columns.push_back(col);
  }
  return ds;
}

std::string err_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("load_csv parses a small file") {
  auto p = tmp_file("basic.csv");
  write_file(p, "t,e,x1\n1.5,1,0.25\n2.0,0,-1.0\n3.25,1,4.5\n");
  CsvSchema schema{"t", "e", {{"x1", FeatureKind::Real}}};
  Dataset ds = load_csv(p.string(), schema);
  CHECK(ds.size() == 3);
  CHECK(ds.n_features() == 1);
  CHECK(ds.time == std::vector<double>{1.5, 2.0, 3.25});
  CHECK(ds.event == std::vector<int>{1, 0, 1});
  CHECK(ds.columns[0].numeric == std::vector<double>{0.25, -1.0, 4.5});
  CHECK_FALSE(ds.has_missing());
}

TEST_CASE("load_csv rejects bad event indicators") {
  auto p = tmp_file("badevent.csv");
  write_file(p, "t,e,x1\n1.0,2,0.5\n");
  CsvSchema schema{"t", "e", {{"x1", FeatureKind::Real}}};
  const std::string msg = err_of([&] { load_csv(p.string(), schema); });
  CHECK(msg.find("event") != std::string::npos);
}

TEST_CASE("load_csv flags empty cells as missing") {
  auto p = tmp_file("missing.csv");
  write_file(p, "t,e,x1,g\n1.0,1,,A\n2.0,0,3.5,\n3.0,1,1.5,B\n");
  CsvSchema schema{"t", "e", {{"x1", FeatureKind::Real}, {"g", FeatureKind::Categorical}}};
  Dataset ds = load_csv(p.string(), schema);
  CHECK(ds.has_missing());
  CHECK(ds.columns[0].missing[0] == 1);
  CHECK(ds.columns[0].missing[1] == 0);
  CHECK(ds.columns[1].missing[1] == 1);
  Dataset full = impute(ds);
  CHECK_FALSE(full.has_missing());
}

TEST_CASE("load_csv error cases") {
  CsvSchema schema{"t", "e", {{"x1", FeatureKind::Real}}};
  CHECK_THROWS_AS(load_csv("/nonexistent/nope.csv", schema), Error);

  auto p = tmp_file("badtime.csv");
  write_file(p, "t,e,x1\nabc,1,0.5\n");
  CHECK_THROWS_AS(load_csv(p.string(), schema), Error);

  auto q = tmp_file("badheader.csv");
  write_file(q, "time,e,x1\n1.0,1,0.5\n");
  CHECK_THROWS_AS(load_csv(q.string(), schema), Error);
}

TEST_CASE("impute fills means and modes") {
  Dataset ds = make_real({1, 2, 3}, {1, 0, 1}, {{1.0, 0.0, 3.0}});
  ds.columns[0].missing = {0, 1, 0};
  Dataset out = impute(ds);
  CHECK(out.columns[0].numeric == std::vector<double>{1.0, 2.0, 3.0});

  Dataset cat;
  cat.time = {1, 2, 3, 4};
  cat.event = {1, 1, 0, 1};
  Column g;
  g.name = "g";
  g.kind = FeatureKind::Categorical;
  g.labels = {"A", "A", "", "B"};
  g.missing = {0, 0, 1, 0};
  cat.columns.push_back(g);
  Dataset out2 = impute(cat);
  CHECK(out2.columns[0].labels == std::vector<std::string>{"A", "A", "A", "B"});
}

TEST_CASE("impute mode ties break toward the smallest label") {
  Dataset cat;
  cat.time = {1, 2, 3};
  cat.event = {1, 1, 1};
  Column g;
  g.name = "g";
  g.kind = FeatureKind::Categorical;
  g.labels = {"B", "A", ""};
  g.missing = {0, 0, 1};
  cat.columns.push_back(g);
  Dataset out = impute(cat);
  CHECK(out.columns[0].labels[2] == "A");
}

TEST_CASE("impute rejects an all-missing column") {
  Dataset ds = make_real({1, 2}, {1, 1}, {{0.0, 0.0}});
  ds.columns[0].missing = {1, 1};
  CHECK_THROWS_AS(impute(ds), Error);
}

TEST_CASE("imputer fitted on train fills other splits with train statistics") {
  Dataset train = make_real({1, 2, 3}, {1, 0, 1}, {{2.0, 4.0, 6.0}});
  Imputer imp = Imputer::fit(train);
  Dataset test = make_real({4, 5}, {1, 1}, {{0.0, 10.0}});
  test.columns[0].missing = {1, 0};
  Dataset out = imp.apply(test);
  CHECK(out.columns[0].numeric[0] == 4.0);  // train mean, not test mean
  CHECK(out.columns[0].numeric[1] == 10.0);
}

TEST_CASE("standardize centers and scales with sample stddev") {
  Dataset ds = make_real({1, 2, 3}, {1, 1, 0}, {{1.0, 2.0, 3.0}});
  auto [scaled, scaler] = standardize(ds);
  CHECK(scaled.columns[0].numeric[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(scaled.columns[0].numeric[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(scaled.columns[0].numeric[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(scaler.mean[0] == doctest::Approx(2.0));
  CHECK(scaler.stddev[0] == doctest::Approx(1.0));
}

TEST_CASE("standardize maps constant columns to zero") {
  Dataset ds = make_real({1, 2, 3}, {1, 1, 0}, {{5.0, 5.0, 5.0}});
  auto [scaled, scaler] = standardize(ds);
  for (double v : scaled.columns[0].numeric) CHECK(v == 0.0);
}

TEST_CASE("train scaler applied to a test row at the train mean gives zeros") {
  Dataset train = make_real({1, 2, 3, 4}, {1, 1, 0, 1}, {{1.0, 3.0, 5.0, 7.0}});
  Scaler scaler = fit_scaler(train);
  Dataset test = make_real({9}, {1}, {{4.0}});  // the train mean
  Dataset out = scaler.transform(test);
  CHECK(out.columns[0].numeric[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("standardize is idempotent on its own output") {
  Dataset ds = make_real({1, 2, 3, 4}, {1, 0, 1, 1}, {{0.5, -1.5, 2.0, 4.0}});
  auto [once, s1] = standardize(ds);
  auto [twice, s2] = standardize(once);
  for (std::size_t i = 0; i < once.size(); ++i)
    CHECK(twice.columns[0].numeric[i] ==
          doctest::Approx(once.columns[0].numeric[i]).epsilon(1e-9));
}

TEST_CASE("standardize skips indicator columns") {
  Dataset ds = make_real({1, 2, 3}, {1, 1, 0}, {{0.0, 1.0, 0.0}});
  ds.columns[0].indicator = true;
  auto [scaled, scaler] = standardize(ds);
  CHECK(scaled.columns[0].numeric == std::vector<double>{0.0, 1.0, 0.0});
  CHECK(scaler.skip[0] == 1);
}

TEST_CASE("one_hot expands categorical columns with sorted levels") {
  Dataset ds;
  ds.time = {1, 2, 3};
  ds.event = {1, 1, 1};
  Column g;
  g.name = "g";
  g.kind = FeatureKind::Categorical;
  g.labels = {"A", "B", "A"};
  ds.columns.push_back(g);
  Dataset out = one_hot(ds);
  REQUIRE(out.n_features() == 2);
  CHECK(out.columns[0].name == "g=A");
  CHECK(out.columns[1].name == "g=B");
  CHECK(out.columns[0].numeric == std::vector<double>{1.0, 0.0, 1.0});
  CHECK(out.columns[1].numeric == std::vector<double>{0.0, 1.0, 0.0});
  CHECK(out.columns[0].indicator);
  CHECK(out.all_real());
}

TEST_CASE("one_hot single level and unseen test level") {
  Dataset train;
  train.time = {1, 2};
  train.event = {1, 1};
  Column g;
  g.name = "g";
  g.kind = FeatureKind::Categorical;
  g.labels = {"A", "A"};
  train.columns.push_back(g);
  OneHotEncoder enc = OneHotEncoder::fit(train);
  Dataset tr = enc.transform(train);
  REQUIRE(tr.n_features() == 1);
  CHECK(tr.columns[0].numeric == std::vector<double>{1.0, 1.0});

  Dataset test = train;
  test.columns[0].labels = {"C", "A"};
  Dataset te = enc.transform(test);
  CHECK(te.columns[0].numeric == std::vector<double>{0.0, 1.0});
}

TEST_CASE("stratified_split sizes, censor rates, determinism") {
  // 100 records, 30% censored, spread of times
  Dataset ds;
  for (int i = 0; i < 100; ++i) {
    ds.time.push_back(1.0 + 0.37 * i);
    ds.event.push_back(i % 10 < 7 ? 1 : 0);
  }
  Column x;
  x.name = "x0";
  for (int i = 0; i < 100; ++i) x.numeric.push_back(static_cast<double>(i));
  ds.columns.push_back(x);

  SplitSet s = stratified_split(ds, {0.7, 0.1, 0.2}, 7);
  CHECK(s.train.size() == 70);
  CHECK(s.valid.size() == 10);
  CHECK(s.test.size() == 20);
  CHECK(std::abs(s.train.censor_rate() - 0.30) <= 0.05);
  CHECK(std::abs(s.valid.censor_rate() - 0.30) <= 0.05);
  CHECK(std::abs(s.test.censor_rate() - 0.30) <= 0.05);

  SplitSet s2 = stratified_split(ds, {0.7, 0.1, 0.2}, 7);
  CHECK(s2.train.time == s.train.time);
  CHECK(s2.valid.time == s.valid.time);
  CHECK(s2.test.time == s.test.time);
  CHECK(s2.train.columns[0].numeric == s.train.columns[0].numeric);

  SplitSet s3 = stratified_split(ds, {0.7, 0.1, 0.2}, 8);
  CHECK(s3.train.time != s.train.time);  // seed moves records around

  // union of splits == input multiset, via the covariate id column
  std::multiset<double> all;
  for (const auto* part : {&s.train, &s.valid, &s.test})
    for (double v : part->columns[0].numeric) all.insert(v);
  std::multiset<double> want(x.numeric.begin(), x.numeric.end());
  CHECK(all == want);
}

TEST_CASE("stratified_split quota arithmetic follows largest remainders") {
  Dataset ds;
  for (int i = 0; i < 23; ++i) {
    ds.time.push_back(1.0 + i);
    ds.event.push_back(1);
  }
  SplitSet s = stratified_split(ds, {0.7, 0.1, 0.2}, 3);
  CHECK(s.train.size() == 16);
  CHECK(s.valid.size() == 2);
  CHECK(s.test.size() == 5);
}

TEST_CASE("stratified_split rejects cohorts too small to fill every split") {
  Dataset ds = make_real({1, 2, 3, 4, 5}, {1, 1, 0, 1, 0}, {{1, 2, 3, 4, 5}});
  CHECK_THROWS_AS(stratified_split(ds, {0.7, 0.1, 0.2}, 1), Error);
}

TEST_CASE("synth_generate censor target zero observes every event") {
  SynthConfig cfg;
  cfg.n = 50;
  cfg.d = 2;
  cfg.true_weights = {1.0, -0.5};
  cfg.censor_rate_target = 0.0;
  cfg.seed = 3;
  auto [ds, truth] = synth_generate(cfg);
  CHECK(ds.size() == 50);
  for (int e : ds.event) CHECK(e == 1);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(ds.time[i] == truth.event_time[i]);
}

TEST_CASE("synth_generate hits the censoring target at scale") {
  SynthConfig cfg;
  cfg.n = 10000;
  cfg.d = 3;
  cfg.true_weights = {0.5, -0.5, 0.25};
  cfg.censor_rate_target = 0.5;
  cfg.seed = 1;
  auto [ds, truth] = synth_generate(cfg);
  CHECK(ds.censor_rate() >= 0.45);
  CHECK(ds.censor_rate() <= 0.55);
}

TEST_CASE("synth_generate with zero weights is exponential at the baseline rate") {
  SynthConfig cfg;
  cfg.n = 10000;
  cfg.d = 2;
  cfg.true_weights = {0.0, 0.0};
  cfg.baseline_rate = 2.0;
  cfg.censor_rate_target = 0.0;
  cfg.seed = 11;
  auto [ds, truth] = synth_generate(cfg);
  double mean = 0.0;
  for (double t : ds.time) mean += t;
  mean /= static_cast<double>(ds.size());
  CHECK(std::abs(mean - 0.5) <= 0.025);  // 1/rate within 5%
}

TEST_CASE("synth_generate is bit-reproducible and rejects n<2") {
  SynthConfig cfg;
  cfg.n = 100;
  cfg.d = 2;
  cfg.true_weights = {1.0, 1.0};
  cfg.censor_rate_target = 0.3;
  cfg.seed = 9;
  auto [a, ta] = synth_generate(cfg);
  auto [b, tb] = synth_generate(cfg);
  CHECK(a.time == b.time);
  CHECK(a.event == b.event);
  CHECK(a.columns[0].numeric == b.columns[0].numeric);
  CHECK(ta.event_time == tb.event_time);

  cfg.n = 1;
  CHECK_THROWS_AS(synth_generate(cfg), Error);
}

TEST_CASE("csv round-trip is bit-exact") {
  Dataset ds;
  ds.time = {0.1, 2.7182818284590452, 31.0};
  ds.event = {1, 0, 1};
  Column x;
  x.name = "x0";
  x.numeric = {1.0 / 3.0, -2.5e-17, 4.0};
  x.missing = {0, 1, 0};
  ds.columns.push_back(x);
  Column g;
  g.name = "g";
  g.kind = FeatureKind::Categorical;
  g.labels = {"A", "B", ""};
  g.missing = {0, 0, 1};
  ds.columns.push_back(g);

  auto p = tmp_file("roundtrip.csv");
  save_csv(ds, p.string());
  CsvSchema schema{"time", "event",
                   {{"x0", FeatureKind::Real}, {"g", FeatureKind::Categorical}}};
  Dataset back = load_csv(p.string(), schema);
  CHECK(back.time == ds.time);
  CHECK(back.event == ds.event);
  CHECK(back.columns[0].numeric[0] == ds.columns[0].numeric[0]);
  CHECK(back.columns[0].numeric[2] == ds.columns[0].numeric[2]);
  CHECK(back.columns[0].missing == ds.columns[0].missing);
  CHECK(back.columns[1].labels == ds.columns[1].labels);
}

TEST_CASE("dataset validate catches malformed shapes") {
  Dataset ds = make_real({1, 2}, {1}, {{1.0, 2.0}});
  CHECK_THROWS_AS(ds.validate(), Error);
  Dataset neg = make_real({-1, 2}, {1, 1}, {{1.0, 2.0}});
  CHECK_THROWS_AS(neg.validate(), Error);
  Dataset bad_event = make_real({1, 2}, {1, 2}, {{1.0, 2.0}});
  CHECK_THROWS_AS(bad_event.validate(), Error);
}
