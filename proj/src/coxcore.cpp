#include "survuq/coxcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace survuq::cox {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)) without overflow; -inf acts as the additive identity.
double logaddexp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

void check_cohort(const Eigen::VectorXd& risk, const std::vector<double>& times,
                  const std::vector<int>& events, bool need_event) {
  const auto n = static_cast<std::size_t>(risk.size());
  if (times.size() != n || events.size() != n)
    throw Error("cox: risk/times/events length mismatch");
  if (n == 0) throw Error("cox: empty cohort");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(risk[static_cast<Eigen::Index>(i)]))
      throw Error("cox: non-finite risk score at index " + std::to_string(i));
    if (events[i] != 0 && events[i] != 1) throw Error("cox: event flag must be 0 or 1");
  }
  if (need_event && std::accumulate(events.begin(), events.end(), 0) == 0)
    throw Error("cox: cohort contains no events");
}

// Indices sorted by descending time, so a prefix is exactly the risk set of
// any time at or below the prefix boundary.
std::vector<std::size_t> order_desc(const std::vector<double>& times) {
  std::vector<std::size_t> idx(times.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });
  return idx;
}

}  // namespace

void TimeGrid::validate() const {
  if (times.empty()) throw Error("TimeGrid: empty");
  if (times.front() < 0.0) throw Error("TimeGrid: times must be non-negative");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1])) throw Error("TimeGrid: times must be strictly increasing");
}

void SurvivalCurve::validate() const {
  grid.validate();
  if (values.size() != grid.times.size()) throw Error("SurvivalCurve: grid/value length mismatch");
  if (values.front() > 1.0 + 1e-12) throw Error("SurvivalCurve: S exceeds 1");
  for (std::size_t k = 1; k < values.size(); ++k)
    if (values[k] > values[k - 1] + 1e-12) throw Error("SurvivalCurve: values increase");
  for (double v : values)
    if (!(v >= -1e-12)) throw Error("SurvivalCurve: negative value");
}

double SurvivalCurve::at(double t) const {
  auto it = std::upper_bound(grid.times.begin(), grid.times.end(), t);
  if (it == grid.times.begin()) return 1.0;
  return values[static_cast<std::size_t>(it - grid.times.begin()) - 1];
}

double BaselineHazard::at(double t) const {
  auto it = std::upper_bound(event_times.begin(), event_times.end(), t);
  if (it == event_times.begin()) return 0.0;
  return cumulative_hazard[static_cast<std::size_t>(it - event_times.begin()) - 1];
}

double partial_log_likelihood(const Eigen::VectorXd& risk, const std::vector<double>& times,
                              const std::vector<int>& events) {
  check_cohort(risk, times, events, true);
  std::vector<std::size_t> idx = order_desc(times);

  double ll = 0.0;
  double log_cum = -kInf;  // log sum of exp(risk) over the running risk set
  std::size_t p = 0;
  const std::size_t n = idx.size();
  while (p < n) {
    // Absorb the whole tie group into the risk set before scoring it, so
    // tied events share one risk set.
    std::size_t q = p;
    while (q < n && times[idx[q]] == times[idx[p]]) {
      log_cum = logaddexp(log_cum, risk[static_cast<Eigen::Index>(idx[q])]);
      ++q;
    }
    for (std::size_t k = p; k < q; ++k)
      if (events[idx[k]]) ll += risk[static_cast<Eigen::Index>(idx[k])] - log_cum;
    p = q;
  }
  return ll;
}

Eigen::VectorXd plm_gradient(const Eigen::VectorXd& risk, const std::vector<double>& times,
                             const std::vector<int>& events) {
  check_cohort(risk, times, events, true);
  std::vector<std::size_t> idx = order_desc(times);
  const std::size_t n = idx.size();

  // First pass (descending time): log risk-set totals per tie group.
  std::vector<double> group_lse;  // per tie group with >= 1 event
  std::vector<double> group_logd;
  std::vector<double> group_time;
  double log_cum = -kInf;
  std::size_t p = 0;
  while (p < n) {
    std::size_t q = p;
    int d = 0;
    while (q < n && times[idx[q]] == times[idx[p]]) {
      log_cum = logaddexp(log_cum, risk[static_cast<Eigen::Index>(idx[q])]);
      d += events[idx[q]];
      ++q;
    }
    if (d > 0) {
      group_lse.push_back(log_cum);
      group_logd.push_back(std::log(static_cast<double>(d)));
      group_time.push_back(times[idx[p]]);
    }
    p = q;
  }

  // Second pass (ascending event time): running log sum of d_k / S_k over
  // event times <= y_i; the softmax term is exp(f_i + that log sum).
  std::vector<double> log_hsum(group_time.size());
  double acc = -kInf;
  for (std::size_t k = group_time.size(); k-- > 0;) {
    acc = logaddexp(acc, group_logd[k] - group_lse[k]);
    log_hsum[k] = acc;
  }
  // group_time is descending; for record i find groups with time <= y_i,
  // i.e. the suffix starting at the first group with time <= y_i.
  Eigen::VectorXd grad(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    // Binary search over descending times: first index with time <= y_i.
    std::size_t lo = 0, hi = group_time.size();
    while (lo < hi) {
      std::size_t mid = (lo + hi) / 2;
      if (group_time[mid] <= times[i])
        hi = mid;
      else
        lo = mid + 1;
    }
    double term = 0.0;
    if (lo < group_time.size())
      term = std::exp(risk[static_cast<Eigen::Index>(i)] + log_hsum[lo]);
    grad[static_cast<Eigen::Index>(i)] = static_cast<double>(events[i]) - term;
  }
  return grad;
}

BaselineHazard breslow_baseline(const Eigen::VectorXd& risk, const std::vector<double>& times,
                                const std::vector<int>& events) {
  check_cohort(risk, times, events, true);
  std::vector<std::size_t> idx = order_desc(times);
  const std::size_t n = idx.size();

  // max-shifted denominators: stable like logsumexp, and with all risks equal
  // the suffix sums stay exact integer counts (Nelson-Aalen reduction)
  const double shift = risk.size() > 0 ? risk.maxCoeff() : 0.0;
  std::vector<double> ev_times, increments;
  double cum = 0.0;
  std::size_t p = 0;
  while (p < n) {
    std::size_t q = p;
    int d = 0;
    while (q < n && times[idx[q]] == times[idx[p]]) {
      cum += std::exp(risk[static_cast<Eigen::Index>(idx[q])] - shift);
      d += events[idx[q]];
      ++q;
    }
    if (d > 0) {
      ev_times.push_back(times[idx[p]]);
      increments.push_back(static_cast<double>(d) / cum * std::exp(-shift));
    }
    p = q;
  }

  BaselineHazard base;
  base.event_times.assign(ev_times.rbegin(), ev_times.rend());
  base.cumulative_hazard.resize(increments.size());
  double h = 0.0;
  for (std::size_t k = 0; k < increments.size(); ++k) {
    h += increments[increments.size() - 1 - k];
    base.cumulative_hazard[k] = h;
  }
  return base;
}

SurvivalCurve survival_curve(double risk, const BaselineHazard& base, const TimeGrid& grid) {
  grid.validate();
  if (!std::isfinite(std::exp(risk)) && risk > 0.0)
    throw Error("survival_curve: risk overflows exp");
  SurvivalCurve curve;
  curve.grid = grid;
  curve.values.reserve(grid.times.size());
  const double scale = std::exp(risk);
  for (double t : grid.times) curve.values.push_back(std::exp(-base.at(t) * scale));
  return curve;
}

SurvivalCurve kaplan_meier(const std::vector<double>& times, const std::vector<int>& events) {
  if (times.empty() || times.size() != events.size())
    throw Error("kaplan_meier: empty input or length mismatch");
  for (std::size_t i = 0; i < times.size(); ++i)
    if (events[i] != 0 && events[i] != 1) throw Error("kaplan_meier: event flag must be 0 or 1");

  std::vector<std::size_t> idx(times.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  SurvivalCurve curve;
  double s = 1.0;
  std::size_t at_risk = times.size();
  std::size_t p = 0;
  const std::size_t n = idx.size();
  while (p < n) {
    std::size_t q = p;
    std::size_t d = 0;
    while (q < n && times[idx[q]] == times[idx[p]]) {
      d += static_cast<std::size_t>(events[idx[q]]);
      ++q;
    }
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      curve.grid.times.push_back(times[idx[p]]);
      curve.values.push_back(s);
    }
    at_risk -= q - p;
    p = q;
  }
  if (curve.grid.times.empty()) {
    // All censored: the estimator never drops below 1.
    curve.grid.times.push_back(times[idx[n - 1]]);
    curve.values.push_back(1.0);
  }
  curve.validate();
  return curve;
}

double median_survival_time(const SurvivalCurve& curve) {
  curve.validate();
  const auto& t = curve.grid.times;
  const auto& s = curve.values;
  double prev_t = 0.0, prev_s = 1.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] <= 0.5) {
      if (s[k] == 0.5 || prev_s == s[k]) return t[k];
      return prev_t + (prev_s - 0.5) * (t[k] - prev_t) / (prev_s - s[k]);
    }
    prev_t = t[k];
    prev_s = s[k];
  }
  // Never crossed: extend with a constant hazard equal to the hazard over
  // the last grid interval (first interval / whole span as fallbacks).
  const std::size_t K = s.size() - 1;
  double hazard = 0.0;
  if (K >= 1 && s[K] < s[K - 1] && t[K] > t[K - 1])
    hazard = std::log(s[K - 1] / s[K]) / (t[K] - t[K - 1]);
  else if (s[K] < 1.0 && t[K] > 0.0)
    hazard = -std::log(s[K]) / t[K];
  if (hazard <= 0.0) return kInf;
  return t[K] + std::log(s[K] / 0.5) / hazard;
}

TimeGrid event_time_grid(const std::vector<double>& times, const std::vector<int>& events) {
  if (times.size() != events.size()) throw Error("event_time_grid: length mismatch");
  std::vector<double> ev;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (events[i]) ev.push_back(times[i]);
  if (ev.empty()) throw Error("event_time_grid: no events");
  std::sort(ev.begin(), ev.end());
  ev.erase(std::unique(ev.begin(), ev.end()), ev.end());
  TimeGrid grid;
  grid.times = std::move(ev);
  grid.validate();
  return grid;
}

void save_curve_csv(const SurvivalCurve& curve, const std::string& path) {
  curve.validate();
  std::ofstream out(path);
  if (!out) throw Error("save_curve_csv: cannot open '" + path + "' for writing");
  out << "time,survival\n";
  char buf[96];
  for (std::size_t k = 0; k < curve.grid.times.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", curve.grid.times[k], curve.values[k]);
    out << buf;
  }
  if (!out) throw Error("save_curve_csv: write to '" + path + "' failed");
}

}  // namespace survuq::cox
