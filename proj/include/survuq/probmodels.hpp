#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "survuq/common.hpp"
#include "survuq/coxcore.hpp"
#include "survuq/dataio.hpp"
#include "survuq/tensorcore.hpp"

namespace survuq::prob {

enum class Backend { Mlp, Vi, Mcd, Sngp };
enum class Head { CoxRisk, GaussianTime };

const char* backend_name(Backend b);
Backend backend_from_name(const std::string& s);

// Mean-field Gaussian parameters per layer; sigma = softplus(rho).
struct VariationalLayer {
  Eigen::MatrixXd Wmu, Wrho;
  Eigen::VectorXd bmu, brho;
  net::Activation act = net::Activation::Identity;
};

using VariationalNet = std::vector<VariationalLayer>;

struct MCDConfig {
  double p_drop = 0.1;
  std::size_t n_samples = 100;
  double tau = 1.0;

  void validate() const;
};

struct SNGPConfig {
  std::size_t m = 128;
  double ridge = 1.0;
  double spectral_bound = 1.0;
  bool reset_precision_each_epoch = false;

  void validate() const;
};

// Random-feature GP output layer. rff_weights/rff_bias are frozen at
// construction; beta is the only trainable part. precision holds the
// Laplace-approximation accumulation ridge*I + sum phi phi^T.
struct SNGPHead {
  Eigen::MatrixXd rff_weights;  // m x K_L
  Eigen::VectorXd rff_bias;     // m
  Eigen::VectorXd beta;         // m
  Eigen::MatrixXd precision;    // m x m
  double ridge = 1.0;

  std::size_t m() const { return static_cast<std::size_t>(beta.size()); }
  Eigen::VectorXd features(const Eigen::VectorXd& h) const;
  Eigen::MatrixXd features_batch(const Eigen::MatrixXd& H) const;
  double variance(const Eigen::VectorXd& phi) const;
};

struct PredictiveDraws {
  std::vector<double> risk_samples;
  std::vector<cox::SurvivalCurve> curves;  // filled by band prediction
  std::vector<double> median_times;        // one per curve
};

struct CredibleInterval {
  double level = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// Strict-improvement early stopping; stop once `patience` consecutive
// epochs fail to improve on the best validation loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  // Call once per epoch with that epoch's validation loss; true means this
  // epoch is the new best and its weights should be snapshotted.
  bool observe(double valid_loss);
  bool should_stop() const { return streak_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_value() const { return best_; }
  std::size_t epochs_seen() const { return epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t streak_ = 0;
  double best_ = 0.0;
};

struct TrainLog {
  std::vector<double> train_loss;  // per epoch, per training event
  std::vector<double> valid_loss;  // per epoch, per validation event
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;  // 1-based
  bool stopped_early = false;
};

struct SurvivalModel {
  Backend backend = Backend::Mlp;
  Head head = Head::CoxRisk;
  net::Net point;  // mlp/mcd network; sngp hidden trunk
  VariationalNet vnet;
  double prior_std = 1.0;
  MCDConfig mcd;
  SNGPHead sngp;
  TrainLog log;

  // Whether repeated draws differ (dropout active, weight posterior, GP).
  bool stochastic() const;
  double point_risk(const Eigen::VectorXd& x) const;
  Eigen::VectorXd point_risk_batch(const Eigen::MatrixXd& X) const;
  PredictiveDraws risk_draws(const Eigen::VectorXd& x, std::size_t n, std::uint64_t seed) const;
  std::size_t parameter_count() const;

  std::string to_json() const;
  static SurvivalModel from_json(const std::string& text);
};

SurvivalModel train_mlp(const data::Dataset& train, const data::Dataset& valid,
                        const std::vector<std::size_t>& hidden, const net::TrainConfig& cfg,
                        Head head = Head::CoxRisk);

SurvivalModel train_mcd(const data::Dataset& train, const data::Dataset& valid,
                        const std::vector<std::size_t>& hidden, const net::TrainConfig& cfg,
                        const MCDConfig& mcd, Head head = Head::CoxRisk);

SurvivalModel train_vi(const data::Dataset& train, const data::Dataset& valid,
                       const std::vector<std::size_t>& hidden, const net::TrainConfig& cfg,
                       double prior_std = 1.0);

SurvivalModel train_sngp(const data::Dataset& train, const data::Dataset& valid,
                         const std::vector<std::size_t>& hidden, const net::TrainConfig& cfg,
                         const SNGPConfig& scfg);

// --- pieces exposed for oracle tests -------------------------------------

// Build the weight sample mu + softplus(rho) .* eps; eps mirrors net shapes.
net::Net vi_realize(const VariationalNet& vnet, const net::NetGrads& eps);
net::Net vi_mean_net(const VariationalNet& vnet);
double vi_kl(const VariationalNet& vnet, double prior_std);

struct ViGrads {
  net::NetGrads mu, rho;
};

// Negative ELBO over a cohort with a frozen noise draw:
// -PLL(realized net) + kl_weight * KL(q || p). Gradients w.r.t. mu and rho.
double vi_loss(const VariationalNet& vnet, const Eigen::MatrixXd& X,
               const std::vector<double>& times, const std::vector<int>& events,
               const net::NetGrads& eps, double prior_std, double kl_weight,
               ViGrads* grads = nullptr);

// Gaussian-time head: columns (mean, log sigma); NLL over event records.
double gaussian_nll(const Eigen::MatrixXd& out, const std::vector<double>& times,
                    const std::vector<int>& events, Eigen::MatrixXd* dOut = nullptr);

// Deterministic event-stratified batch partition of [0, n): every batch
// holds at least one event.
std::vector<std::vector<std::size_t>> stratified_batches(const std::vector<int>& events,
                                                         std::size_t batch_size,
                                                         std::uint64_t seed, std::size_t epoch);

struct SurvivalBand {
  cox::SurvivalCurve mean, lower, upper;
  PredictiveDraws draws;
};

SurvivalBand predict_survival_band(const SurvivalModel& model, const cox::BaselineHazard& base,
                                   const cox::TimeGrid& grid, const Eigen::VectorXd& x,
                                   std::size_t n, double level, std::uint64_t seed);

CredibleInterval credible_interval(const std::vector<double>& samples, double level);

// Linear-interpolation quantile (the R type-7 definition).
double quantile_linear(std::vector<double> samples, double q);

}  // namespace survuq::prob
