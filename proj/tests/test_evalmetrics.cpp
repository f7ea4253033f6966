#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "survuq/evalmetrics.hpp"

using namespace survuq;
using namespace survuq::metrics;

namespace {

cox::SurvivalCurve mk(std::vector<double> t, std::vector<double> s) {
  cox::SurvivalCurve c;
  c.grid.times = std::move(t);
  c.values = std::move(s);
  return c;
}

cox::TimeGrid grid_of(std::vector<double> t) {
  cox::TimeGrid g;
  g.times = std::move(t);
  return g;
}

// the five-record ranking fixture shared by several cases
struct Fixture5 {
  std::vector<cox::SurvivalCurve> curves;
  std::vector<double> y{1.0, 2.0, 2.0, 3.0, 4.0};
  std::vector<int> d{1, 1, 0, 1, 0};
  Fixture5() {
    curves.push_back(mk({1, 2, 3}, {0.9, 0.7, 0.5}));
    curves.push_back(mk({1, 2, 3}, {0.8, 0.6, 0.4}));
    curves.push_back(mk({1, 2, 3}, {0.7, 0.5, 0.3}));
    curves.push_back(mk({1, 2, 3}, {0.6, 0.4, 0.2}));
    curves.push_back(mk({1, 2, 3}, {0.9, 0.7, 0.5}));
  }
};

}  // namespace

TEST_CASE("time-dependent concordance on the frozen fixture") {
  Fixture5 f;
  CHECK(concordance_td(f.curves, f.y, f.d) ==
        doctest::Approx(0.35714285714285715).epsilon(1e-14));
}

TEST_CASE("concordance extremes and ties") {
  // earlier deaths get lower survival -> perfectly concordant
  std::vector<cox::SurvivalCurve> good = {
      mk({1, 2, 3}, {0.1, 0.05, 0.01}),
      mk({1, 2, 3}, {0.5, 0.3, 0.2}),
      mk({1, 2, 3}, {0.9, 0.8, 0.7}),
  };
  std::vector<double> y{1.0, 2.0, 3.0};
  std::vector<int> d{1, 1, 1};
  CHECK(concordance_td(good, y, d) == 1.0);

  std::vector<cox::SurvivalCurve> bad = {good[2], good[1], good[0]};
  CHECK(concordance_td(bad, y, d) == 0.0);

  std::vector<cox::SurvivalCurve> same = {good[1], good[1], good[1]};
  CHECK(concordance_td(same, y, d) == 0.5);
}

TEST_CASE("concordance ignores monotone rescaling of the curves") {
  Fixture5 f;
  const double base = concordance_td(f.curves, f.y, f.d);
  std::vector<cox::SurvivalCurve> squared = f.curves;
  for (auto& c : squared)
    for (double& v : c.values) v = v * v;  // order-preserving
  CHECK(concordance_td(squared, f.y, f.d) == base);
}

TEST_CASE("concordance is invariant to record order") {
  Fixture5 f;
  const double base = concordance_td(f.curves, f.y, f.d);
  std::vector<std::size_t> perm{4, 2, 0, 3, 1};
  std::vector<cox::SurvivalCurve> pc;
  std::vector<double> py;
  std::vector<int> pd;
  for (std::size_t i : perm) {
    pc.push_back(f.curves[i]);
    py.push_back(f.y[i]);
    pd.push_back(f.d[i]);
  }
  CHECK(concordance_td(pc, py, pd) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("concordance needs at least one comparable pair") {
  std::vector<cox::SurvivalCurve> c = {mk({1}, {0.5}), mk({1}, {0.5})};
  CHECK_THROWS_AS(concordance_td(c, {1.0, 2.0}, {0, 0}), Error);
  CHECK_THROWS_AS(concordance_td(c, {1.0}, {1, 1}), Error);
}

TEST_CASE("integrated brier score frozen values") {
  cox::SurvivalCurve half = mk({0.5}, {0.5});
  std::vector<cox::SurvivalCurve> c3 = {half, half, half};
  CHECK(integrated_brier(c3, {1, 2, 3}, {1, 1, 1}, grid_of({0.5, 1.5, 2.5})) ==
        doctest::Approx(0.25).epsilon(1e-14));

  std::vector<cox::SurvivalCurve> cm = {
      mk({1, 2}, {0.9, 0.5}),
      mk({1, 2}, {0.7, 0.3}),
      mk({1, 2}, {0.8, 0.6}),
      mk({1, 2}, {0.6, 0.2}),
  };
  std::vector<double> ym{1.5, 2.5, 0.7, 2.0};
  std::vector<int> dm{1, 0, 0, 1};
  cox::TimeGrid gm = grid_of({0.5, 1.0, 1.5, 2.0});
  CHECK(integrated_brier(cm, ym, dm, gm) == doctest::Approx(0.13125).epsilon(1e-14));
  CHECK(integrated_brier(cm, ym, dm, gm, true) == doctest::Approx(0.175).epsilon(1e-14));
}

TEST_CASE("oracle step curves get a zero brier score") {
  std::vector<double> y{1.0, 2.0, 3.0};
  std::vector<int> d{1, 1, 1};
  std::vector<cox::SurvivalCurve> oracle;
  for (double yi : y) oracle.push_back(mk({yi}, {0.0}));  // S drops at the death time
  CHECK(integrated_brier(oracle, y, d, grid_of({0.5, 1.5, 2.5})) == 0.0);
}

TEST_CASE("hinge mae and pseudo-observation mae") {
  std::vector<double> pred{1.5, 2.5, 2.0, 3.5};
  std::vector<double> y{1.0, 2.0, 3.0, 4.0};
  std::vector<int> d{1, 0, 1, 1};
  CHECK(mae_hinge(pred, y, d) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(mae_pseudo_obs(pred, y, d) == doctest::Approx(0.75).epsilon(1e-14));

  // with everything observed the hinge reduces to a plain MAE
  std::vector<int> all1{1, 1, 1, 1};
  CHECK(mae_hinge(pred, y, all1) == doctest::Approx(0.625).epsilon(1e-14));
  // over-prediction past a censoring time costs nothing
  CHECK(mae_hinge({10.0}, {2.0}, {0}) == 0.0);
  CHECK(mae_hinge({1.0}, {2.0}, {0}) == 1.0);
}

TEST_CASE("restricted mean survival integrates the step curve") {
  CHECK(restricted_mean_survival(mk({1, 2, 3}, {0.9, 0.6, 0.4}), 2.5) ==
        doctest::Approx(2.2).epsilon(1e-14));
  CHECK(restricted_mean_survival(mk({2}, {0.8}), 1.5) == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(restricted_mean_survival(mk({1}, {0.5}), 3.0) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("jackknife pseudo-observations match the frozen vector") {
  std::vector<double> po = pseudo_observations({1.0, 2.0, 3.0, 4.0}, {1, 0, 1, 1});
  REQUIRE(po.size() == 4);
  CHECK(po[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(po[1] == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(po[2] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(po[3] == doctest::Approx(4.5).epsilon(1e-12));
}

TEST_CASE("ici two-group construction") {
  std::vector<double> probs;
  std::vector<double> y;
  std::vector<int> d(20, 1);
  for (int i = 0; i < 10; ++i) probs.push_back(0.1);
  for (int i = 0; i < 10; ++i) probs.push_back(0.6);
  for (int i = 0; i < 8; ++i) y.push_back(3.0);
  for (int i = 0; i < 2; ++i) y.push_back(1.0);
  for (int i = 0; i < 3; ++i) y.push_back(3.0);
  for (int i = 0; i < 7; ++i) y.push_back(1.0);

  CHECK(ici(probs, y, d, 2.0, 2) == doctest::Approx(0.1).epsilon(1e-12));

  // two perfectly calibrated groups: each predicts its own death fraction
  std::vector<double> p2;
  std::vector<double> y2;
  for (int i = 0; i < 10; ++i) p2.push_back(0.2);
  for (int i = 0; i < 10; ++i) p2.push_back(0.8);
  for (int i = 0; i < 2; ++i) y2.push_back(1.0);
  for (int i = 0; i < 8; ++i) y2.push_back(3.0);
  for (int i = 0; i < 8; ++i) y2.push_back(1.0);
  for (int i = 0; i < 2; ++i) y2.push_back(3.0);
  std::vector<int> d2(20, 1);
  CHECK(ici(p2, y2, d2, 2.0, 2) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(ici({}, {}, {}, 1.0, 2), Error);
  CHECK_THROWS_AS(ici({0.5}, {1.0, 2.0}, {1, 1}, 1.0, 2), Error);
  CHECK_THROWS_AS(ici(p2, y2, d2, 2.0, 1), Error);
}

TEST_CASE("d-calibration of exactly uniform survival values") {
  std::vector<cox::SurvivalCurve> curves;
  std::vector<double> y;
  for (int i = 0; i < 10; ++i) {
    const double s = 0.05 + 0.1 * i;
    curves.push_back(mk({1.0}, {s}));
    y.push_back(2.0);  // evaluated at the observed time, past the jump
  }
  std::vector<int> d(10, 1);
  ChiSquareResult r = d_calibration(curves, y, d);
  CHECK(r.statistic == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.dof == 9);
  CHECK(r.p_value == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("d-calibration spreads censored mass and matches the oracle") {
  std::vector<cox::SurvivalCurve> curves;
  std::vector<double> y;
  std::vector<int> d;
  for (int i = 0; i < 10; ++i) {
    curves.push_back(mk({1.0}, {0.05 + 0.1 * i}));
    y.push_back(2.0);
    d.push_back(1);
  }
  curves.push_back(mk({1.0}, {0.35}));
  y.push_back(2.0);
  d.push_back(0);
  curves.push_back(mk({1.0}, {0.72}));
  y.push_back(2.0);
  d.push_back(0);

  ChiSquareResult r = d_calibration(curves, y, d);
  CHECK(r.statistic == doctest::Approx(0.23240530780213312).epsilon(1e-10));
  CHECK(r.p_value == doctest::Approx(0.9999989200777507).epsilon(1e-10));
}

TEST_CASE("d-calibration flags a point mass") {
  std::vector<cox::SurvivalCurve> curves(100, mk({1.0}, {0.05}));
  std::vector<double> y(100, 2.0);
  std::vector<int> d(100, 1);
  ChiSquareResult r = d_calibration(curves, y, d);
  CHECK(r.statistic == doctest::Approx(900.0).epsilon(1e-10));
  CHECK(r.p_value < 1e-6);
}

TEST_CASE("c-calibration of draws that generate the outcomes") {
  std::vector<double> draws;
  for (int k = 1; k <= 100; ++k) draws.push_back(static_cast<double>(k));
  std::vector<std::vector<double>> td(100, draws);
  std::vector<double> y;
  for (int k = 1; k <= 100; ++k) y.push_back(static_cast<double>(k));
  std::vector<int> d(100, 1);

  ChiSquareResult r = c_calibration(td, y, d);
  CHECK(r.statistic == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.dof == 9);
  CHECK(r.p_value == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> shifted;
  for (int k = 11; k <= 110; ++k) shifted.push_back(static_cast<double>(k));
  ChiSquareResult s = c_calibration(td, shifted, d);
  CHECK(s.statistic == doctest::Approx(2.777777777777778).epsilon(1e-10));
  CHECK(s.p_value == doctest::Approx(0.9724575932789753).epsilon(1e-10));
}

TEST_CASE("c-calibration rejects hopeless intervals") {
  std::vector<double> draws;
  for (int k = 1; k <= 100; ++k) draws.push_back(static_cast<double>(k));
  std::vector<std::vector<double>> td(200, draws);
  std::vector<double> y(200, 1000.0);  // never inside any interval
  std::vector<int> d(200, 1);
  ChiSquareResult r = c_calibration(td, y, d);
  CHECK(r.p_value < 1e-6);
}

TEST_CASE("c-calibration input guards") {
  std::vector<double> few(49, 1.0);
  CHECK_THROWS_AS(c_calibration({few}, {1.0}, {1}), Error);
  std::vector<double> draws(50, 1.0);
  CHECK_THROWS_AS(c_calibration({draws}, {1.0}, {0}), Error);  // nobody uncensored
}

TEST_CASE("chi-square survival function against frozen references") {
  CHECK(chi_square_p(16.919, 9) == doctest::Approx(0.049999640848349826).epsilon(1e-9));
  CHECK(chi_square_p(3.5, 1) == doctest::Approx(0.0613688291394023).epsilon(1e-9));
  CHECK(chi_square_p(0.3, 9) == doctest::Approx(0.9999966858902002).epsilon(1e-9));
  CHECK(chi_square_p(27.2, 10) == doctest::Approx(0.0024211334605166684).epsilon(1e-9));
  CHECK(chi_square_p(123.4, 5) == doctest::Approx(5.9749845730565945e-25).epsilon(1e-6));
  CHECK(chi_square_p(9.0, 4) == doctest::Approx(0.06109948096033269).epsilon(1e-9));

  // dof = 2 closes to exp(-x/2)
  CHECK(std::abs(chi_square_p(4.2, 2) - std::exp(-2.1)) < 1e-8);
  CHECK(chi_square_p(0.0, 5) == doctest::Approx(1.0).epsilon(1e-12));

  double prev = 1.0;
  for (double s = 0.5; s < 30.0; s += 0.5) {
    const double p = chi_square_p(s, 7);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("metric report serialization") {
  CHECK(MetricReport::csv_header() ==
        std::string("model,ci_td,mae_hinge,mae_po,ibs,ici,dcal_p,ccal_p"));
  MetricReport r;
  r.ci_td = 0.5;
  r.mae_hinge = 1.0;
  r.mae_po = 2.0;
  r.ibs = 0.25;
  r.ici = 0.125;
  r.dcal_p = 1.0;
  SUBCASE("without sampling the last cell stays empty") {
    CHECK(r.csv_row("mlp") == std::string("mlp,0.5,1,2,0.25,0.125,1,"));
    CHECK(r.to_json().find("\"ccal_p\"") == std::string::npos);
  }
  SUBCASE("with sampling the last cell is filled") {
    r.ccal_p = 0.75;
    CHECK(r.csv_row("vi") == std::string("vi,0.5,1,2,0.25,0.125,1,0.75"));
    CHECK(r.to_json().find("\"ccal_p\"") != std::string::npos);
  }
}
