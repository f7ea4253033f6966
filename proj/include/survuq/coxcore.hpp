#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "survuq/common.hpp"

namespace survuq::cox {

// Strictly increasing event-horizon points t_0..t_K.
struct TimeGrid {
  std::vector<double> times;

  void validate() const;
  std::size_t size() const { return times.size(); }
};

// S(t_k) sampled on a grid; monotone non-increasing, S <= 1.
struct SurvivalCurve {
  TimeGrid grid;
  std::vector<double> values;

  void validate() const;
  // Step evaluation: S(t) = value at the last grid point <= t; 1 before the
  // first point.
  double at(double t) const;
};

// Step cumulative hazard H_0 over sorted distinct event times; 0 before the
// first event time.
struct BaselineHazard {
  std::vector<double> event_times;
  std::vector<double> cumulative_hazard;

  double at(double t) const;
};

double partial_log_likelihood(const Eigen::VectorXd& risk, const std::vector<double>& times,
                              const std::vector<int>& events);

Eigen::VectorXd plm_gradient(const Eigen::VectorXd& risk, const std::vector<double>& times,
                             const std::vector<int>& events);

BaselineHazard breslow_baseline(const Eigen::VectorXd& risk, const std::vector<double>& times,
                                const std::vector<int>& events);

SurvivalCurve survival_curve(double risk, const BaselineHazard& base, const TimeGrid& grid);

SurvivalCurve kaplan_meier(const std::vector<double>& times, const std::vector<int>& events);

// First crossing of 0.5 with linear interpolation; a curve that never
// reaches 0.5 is extended by a constant-hazard tail.
double median_survival_time(const SurvivalCurve& curve);

// Distinct observed event times of a cohort — the default evaluation grid.
TimeGrid event_time_grid(const std::vector<double>& times, const std::vector<int>& events);

void save_curve_csv(const SurvivalCurve& curve, const std::string& path);

}  // namespace survuq::cox
