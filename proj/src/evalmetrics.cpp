#include "survuq/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "survuq/probmodels.hpp"

namespace survuq::metrics {

namespace {

using json = nlohmann::json;

constexpr double kMachEps = 1.11022302462515654042e-16;
constexpr double kMaxLog = 709.782712893383996732;
constexpr double kBig = 4.503599627370496e15;
constexpr double kBigInv = 2.22044604925031308085e-16;

double igamc(double a, double x);

// Regularized lower incomplete gamma by power series.
double igam(double a, double x) {
  if (x <= 0.0 || a <= 0.0) return 0.0;
  if (x > 1.0 && x > a) return 1.0 - igamc(a, x);
  double ax = a * std::log(x) - x - std::lgamma(a);
  if (ax < -kMaxLog) return 0.0;
  ax = std::exp(ax);
  double r = a, c = 1.0, ans = 1.0;
  do {
    r += 1.0;
    c *= x / r;
    ans += c;
  } while (c / ans > kMachEps);
  return ans * ax / a;
}

// Regularized upper incomplete gamma by continued fraction.
double igamc(double a, double x) {
  if (x <= 0.0 || a <= 0.0) return 1.0;
  if (x < 1.0 || x < a) return 1.0 - igam(a, x);
  double ax = a * std::log(x) - x - std::lgamma(a);
  if (ax < -kMaxLog) return 0.0;
  ax = std::exp(ax);

  double y = 1.0 - a;
  double z = x + y + 1.0;
  double c = 0.0;
  double pkm2 = 1.0, qkm2 = x;
  double pkm1 = x + 1.0, qkm1 = z * x;
  double ans = pkm1 / qkm1;
  double t;
  do {
    c += 1.0;
    y += 1.0;
    z += 2.0;
    const double yc = y * c;
    const double pk = pkm1 * z - pkm2 * yc;
    const double qk = qkm1 * z - qkm2 * yc;
    if (qk != 0.0) {
      const double r = pk / qk;
      t = std::fabs((ans - r) / r);
      ans = r;
    } else {
      t = 1.0;
    }
    pkm2 = pkm1;
    pkm1 = pk;
    qkm2 = qkm1;
    qkm1 = qk;
    if (std::fabs(pk) > kBig) {
      pkm2 *= kBigInv;
      pkm1 *= kBigInv;
      qkm2 *= kBigInv;
      qkm1 *= kBigInv;
    }
  } while (t > kMachEps);
  return ans * ax;
}

void check_cohort(std::size_t n_curves, const std::vector<double>& times,
                  const std::vector<int>& events, const char* what) {
  if (n_curves != times.size() || times.size() != events.size())
    throw Error(std::string(what) + ": predictions/times/events length mismatch");
  if (times.empty()) throw Error(std::string(what) + ": empty cohort");
  for (std::size_t i = 0; i < events.size(); ++i)
    if (events[i] != 0 && events[i] != 1)
      throw Error(std::string(what) + ": event flag must be 0 or 1");
}

// Kaplan-Meier value just before t (left limit of the step function).
double km_left(const cox::SurvivalCurve& curve, double t) {
  const auto& grid = curve.grid.times;
  auto it = std::lower_bound(grid.begin(), grid.end(), t);
  if (it == grid.begin()) return 1.0;
  return curve.values[static_cast<std::size_t>(it - grid.begin()) - 1];
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double chi_square_p(double statistic, double dof) {
  if (statistic < 0.0) throw Error("chi_square_p: statistic must be non-negative");
  if (dof < 1.0) throw Error("chi_square_p: dof must be at least 1");
  if (statistic == 0.0) return 1.0;
  return igamc(dof / 2.0, statistic / 2.0);
}

double concordance_td(const std::vector<cox::SurvivalCurve>& curves,
                      const std::vector<double>& times, const std::vector<int>& events) {
  check_cohort(curves.size(), times, events, "concordance_td");
  const std::size_t n = times.size();
  double comparable = 0.0, concordant = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!events[i]) continue;
    const double si = curves[i].at(times[i]);
    for (std::size_t j = 0; j < n; ++j) {
      if (times[i] >= times[j] || i == j) continue;
      comparable += 1.0;
      const double sj = curves[j].at(times[i]);
      if (si < sj)
        concordant += 1.0;
      else if (si == sj)
        concordant += 0.5;
    }
  }
  if (comparable == 0.0) throw Error("concordance_td: no comparable pairs");
  return concordant / comparable;
}

double integrated_brier(const std::vector<cox::SurvivalCurve>& curves,
                        const std::vector<double>& times, const std::vector<int>& events,
                        const cox::TimeGrid& grid, bool ipcw) {
  check_cohort(curves.size(), times, events, "integrated_brier");
  grid.validate();
  const double horizon = *std::max_element(times.begin(), times.end());
  if (grid.times.back() > horizon)
    throw Error("integrated_brier: grid extends past the observed horizon");

  cox::SurvivalCurve G;
  if (ipcw) {
    std::vector<int> flipped(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) flipped[i] = 1 - events[i];
    G = cox::kaplan_meier(times, flipped);
  }

  const double N = static_cast<double>(times.size());
  double total = 0.0;
  for (double t : grid.times) {
    double acc = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      const double s = curves[i].at(t);
      if (times[i] > t) {
        double w = 1.0;
        if (ipcw) {
          const double g = G.at(t);
          if (g <= 0.0) continue;
          w = 1.0 / g;
        }
        acc += w * (1.0 - s) * (1.0 - s);
      } else if (events[i]) {
        double w = 1.0;
        if (ipcw) {
          const double g = km_left(G, times[i]);
          if (g <= 0.0) continue;
          w = 1.0 / g;
        }
        acc += w * s * s;
      }
      // censored and past observation: no contribution
    }
    total += acc / N;
  }
  return total / static_cast<double>(grid.times.size());
}

double mae_hinge(const std::vector<double>& pred_times, const std::vector<double>& times,
                 const std::vector<int>& events) {
  check_cohort(pred_times.size(), times, events, "mae_hinge");
  double acc = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i])
      acc += std::abs(pred_times[i] - times[i]);
    else
      acc += std::max(times[i] - pred_times[i], 0.0);
  }
  return acc / static_cast<double>(times.size());
}

double restricted_mean_survival(const cox::SurvivalCurve& curve, double tau) {
  if (tau < 0.0) throw Error("restricted_mean_survival: tau must be non-negative");
  double integral = 0.0;
  double prev_t = 0.0, prev_s = 1.0;
  for (std::size_t k = 0; k < curve.grid.times.size(); ++k) {
    const double t = std::min(curve.grid.times[k], tau);
    if (t > prev_t) integral += prev_s * (t - prev_t);
    if (curve.grid.times[k] >= tau) return integral;
    prev_t = curve.grid.times[k];
    prev_s = curve.values[k];
  }
  if (tau > prev_t) integral += prev_s * (tau - prev_t);
  return integral;
}

std::vector<double> pseudo_observations(const std::vector<double>& times,
                                        const std::vector<int>& events) {
  check_cohort(times.size(), times, events, "pseudo_observations");
  const std::size_t n = times.size();
  if (n < 2) throw Error("pseudo_observations: need at least 2 records");
  if (std::accumulate(events.begin(), events.end(), 0) == 0)
    throw Error("pseudo_observations: all records censored");
  const double tau = *std::max_element(times.begin(), times.end());
  const double theta = restricted_mean_survival(cox::kaplan_meier(times, events), tau);

  std::vector<double> po(n);
  std::vector<double> t_loo(n - 1);
  std::vector<int> e_loo(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      t_loo[k] = times[j];
      e_loo[k] = events[j];
      ++k;
    }
    const double theta_i = restricted_mean_survival(cox::kaplan_meier(t_loo, e_loo), tau);
    po[i] = static_cast<double>(n) * theta - static_cast<double>(n - 1) * theta_i;
  }
  return po;
}

double mae_pseudo_obs(const std::vector<double>& pred_times, const std::vector<double>& times,
                      const std::vector<int>& events) {
  check_cohort(pred_times.size(), times, events, "mae_pseudo_obs");
  std::vector<double> po = pseudo_observations(times, events);
  double acc = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double target = events[i] ? times[i] : po[i];
    acc += std::abs(pred_times[i] - target);
  }
  return acc / static_cast<double>(times.size());
}

double ici(const std::vector<double>& event_probs, const std::vector<double>& times,
           const std::vector<int>& events, double t_star, std::size_t n_groups) {
  check_cohort(event_probs.size(), times, events, "ici");
  if (n_groups < 2) throw Error("ici: need at least 2 groups");
  const std::size_t n = times.size();
  const double tmin = *std::min_element(times.begin(), times.end());
  const double tmax = *std::max_element(times.begin(), times.end());
  if (t_star < tmin || t_star > tmax)
    throw Error("ici: evaluation time outside the observed horizon");
  for (double p : event_probs)
    if (p < -1e-9 || p > 1.0 + 1e-9) throw Error("ici: predicted probability outside [0,1]");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return event_probs[a] < event_probs[b]; });

  std::size_t non_empty = 0;
  double index = 0.0;
  for (std::size_t g = 0; g < n_groups; ++g) {
    const std::size_t lo = g * n / n_groups;
    const std::size_t hi = (g + 1) * n / n_groups;
    if (hi == lo) continue;
    ++non_empty;
    double pred_sum = 0.0;
    std::vector<double> gt(hi - lo);
    std::vector<int> ge(hi - lo);
    for (std::size_t k = lo; k < hi; ++k) {
      pred_sum += event_probs[order[k]];
      gt[k - lo] = times[order[k]];
      ge[k - lo] = events[order[k]];
    }
    const double pred_mean = pred_sum / static_cast<double>(hi - lo);
    const double observed = 1.0 - cox::kaplan_meier(gt, ge).at(t_star);
    const double mass = static_cast<double>(hi - lo) / static_cast<double>(n);
    index += mass * std::abs(observed - pred_mean);
  }
  if (non_empty < 2) throw Error("ici: fewer than 2 non-empty groups");
  return index;
}

ChiSquareResult d_calibration(const std::vector<cox::SurvivalCurve>& curves,
                              const std::vector<double>& times, const std::vector<int>& events,
                              std::size_t n_bins) {
  check_cohort(curves.size(), times, events, "d_calibration");
  if (n_bins < 2) throw Error("d_calibration: need at least 2 bins");
  const std::size_t n = times.size();
  if (n < n_bins) throw Error("d_calibration: need at least as many records as bins");

  const double width = 1.0 / static_cast<double>(n_bins);
  std::vector<double> mass(n_bins, 0.0);
  auto bin_of = [&](double s) {
    auto b = static_cast<std::size_t>(s / width);
    return std::min(b, n_bins - 1);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const double s = std::clamp(curves[i].at(times[i]), 0.0, 1.0);
    if (events[i]) {
      mass[bin_of(s)] += 1.0;
      continue;
    }
    if (s <= 0.0) {
      mass[0] += 1.0;
      continue;
    }
    // Uniform blame over [0, s): each bin receives its overlap share.
    for (std::size_t b = 0; b < n_bins; ++b) {
      const double lo = static_cast<double>(b) * width;
      const double hi = lo + width;
      const double overlap = std::min(hi, s) - lo;
      if (overlap <= 0.0) break;
      mass[b] += overlap / s;
    }
  }

  const double expected = static_cast<double>(n) / static_cast<double>(n_bins);
  ChiSquareResult res;
  for (double o : mass) res.statistic += (o - expected) * (o - expected) / expected;
  res.dof = n_bins - 1;
  res.p_value = chi_square_p(res.statistic, static_cast<double>(res.dof));
  return res;
}

std::vector<double> default_ccal_levels() {
  return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

ChiSquareResult c_calibration(const std::vector<std::vector<double>>& time_draws,
                              const std::vector<double>& times, const std::vector<int>& events,
                              const std::vector<double>& levels) {
  check_cohort(time_draws.size(), times, events, "c_calibration");
  if (levels.empty()) throw Error("c_calibration: no coverage levels");
  for (double l : levels)
    if (l <= 0.0 || l >= 1.0) throw Error("c_calibration: levels must lie in (0,1)");

  std::vector<std::size_t> uncensored;
  for (std::size_t i = 0; i < events.size(); ++i)
    if (events[i]) uncensored.push_back(i);
  if (uncensored.empty()) throw Error("c_calibration: no uncensored individuals");
  for (std::size_t i : uncensored)
    if (time_draws[i].size() < 50)
      throw Error("c_calibration: every individual needs at least 50 draws");

  const double N = static_cast<double>(uncensored.size());
  ChiSquareResult res;
  for (double level : levels) {
    double covered = 0.0;
    for (std::size_t i : uncensored) {
      prob::CredibleInterval ci = prob::credible_interval(time_draws[i], level);
      if (times[i] >= ci.lower && times[i] <= ci.upper) covered += 1.0;
    }
    const double expected = N * level;
    res.statistic += (covered - expected) * (covered - expected) / (expected * (1.0 - level));
  }
  res.dof = levels.size();
  res.p_value = chi_square_p(res.statistic, static_cast<double>(res.dof));
  return res;
}

std::string MetricReport::to_json() const {
  json doc = {{"ci_td", ci_td},       {"mae_hinge", mae_hinge}, {"mae_po", mae_po},
              {"ibs", ibs},           {"ici", ici},             {"dcal_p", dcal_p}};
  if (ccal_p) doc["ccal_p"] = *ccal_p;
  return doc.dump(2);
}

std::string MetricReport::csv_header() {
  return "model,ci_td,mae_hinge,mae_po,ibs,ici,dcal_p,ccal_p";
}

std::string MetricReport::csv_row(const std::string& model_name) const {
  std::ostringstream row;
  row << model_name << ',' << fmt(ci_td) << ',' << fmt(mae_hinge) << ',' << fmt(mae_po) << ','
      << fmt(ibs) << ',' << fmt(ici) << ',' << fmt(dcal_p) << ',';
  if (ccal_p) row << fmt(*ccal_p);
  return row.str();
}

}  // namespace survuq::metrics
