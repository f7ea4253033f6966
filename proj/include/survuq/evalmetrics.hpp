#pragma once

#include <optional>
#include <string>
#include <vector>

#include "survuq/common.hpp"
#include "survuq/coxcore.hpp"

namespace survuq::metrics {

struct MetricReport {
  double ci_td = 0.0;
  double ibs = 0.0;
  double mae_hinge = 0.0;
  double mae_po = 0.0;
  double ici = 0.0;
  double dcal_p = 0.0;
  std::optional<double> ccal_p;  // absent for point models

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row(const std::string& model_name) const;
};

struct ChiSquareResult {
  double statistic = 0.0;
  std::size_t dof = 0;
  double p_value = 0.0;
};

// Time-dependent concordance: comparable pairs are (i,j) with y_i < y_j and
// the earlier record an event; concordant when S(y_i|x_i) < S(y_i|x_j),
// survival ties count one half.
double concordance_td(const std::vector<cox::SurvivalCurve>& curves,
                      const std::vector<double>& times, const std::vector<int>& events);

// Time-averaged squared error between survival indicators and predictions;
// censored records contribute only while under observation. ipcw switches
// to the inverse-censoring-weighted form.
double integrated_brier(const std::vector<cox::SurvivalCurve>& curves,
                        const std::vector<double>& times, const std::vector<int>& events,
                        const cox::TimeGrid& grid, bool ipcw = false);

double mae_hinge(const std::vector<double>& pred_times, const std::vector<double>& times,
                 const std::vector<int>& events);

// Integral of the step survival curve over [0, tau].
double restricted_mean_survival(const cox::SurvivalCurve& curve, double tau);

// Jackknife pseudo-observations of the restricted mean survival time,
// tau fixed at the largest observed time; one value per record.
std::vector<double> pseudo_observations(const std::vector<double>& times,
                                        const std::vector<int>& events);

// MAE against observed times for events, pseudo-observation targets for
// censored records.
double mae_pseudo_obs(const std::vector<double>& pred_times, const std::vector<double>& times,
                      const std::vector<int>& events);

// Integrated calibration index at horizon t_star: equal-count groups over
// sorted predicted probabilities, per-group observed proportion from a
// within-group Kaplan-Meier, mass-weighted absolute gaps.
double ici(const std::vector<double>& event_probs, const std::vector<double>& times,
           const std::vector<int>& events, double t_star, std::size_t n_groups = 10);

// Chi-square uniformity test of predicted survival values at observed
// times; censored mass spread uniformly over [0, S(c)).
ChiSquareResult d_calibration(const std::vector<cox::SurvivalCurve>& curves,
                              const std::vector<double>& times, const std::vector<int>& events,
                              std::size_t n_bins = 10);

std::vector<double> default_ccal_levels();

// Coverage test of equal-tailed credible intervals from survival-time draws
// at each level, uncensored records only.
ChiSquareResult c_calibration(const std::vector<std::vector<double>>& time_draws,
                              const std::vector<double>& times, const std::vector<int>& events,
                              const std::vector<double>& levels = default_ccal_levels());

// Survival function of the chi-square distribution (regularized upper
// incomplete gamma).
double chi_square_p(double statistic, double dof);

}  // namespace survuq::metrics
