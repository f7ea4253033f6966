#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "survuq/common.hpp"

namespace survuq::net {

enum class Activation { Relu, Identity };

struct DenseLayer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;
  Activation act = Activation::Identity;
};

using Net = std::vector<DenseLayer>;

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;  // decoupled
  double l2_lambda = 0.0;     // loss-side penalty
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

// He-normal weights, zero biases. ReLU on every layer except the last,
// which stays linear.
Net make_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed);

std::size_t parameter_count(const Net& net);
void check_shapes(const Net& net);

// Per-hidden-layer keep masks, entries 0 or 1/(1-p_drop) (inverted dropout).
// Row r of masks[i] is the mask for record r at hidden layer i.
struct DropoutMasks {
  double p_drop = 0.0;
  std::vector<Eigen::MatrixXd> masks;
};

// One mask row per record; pass n=1 for a single draw.
DropoutMasks sample_dropout_masks(const std::vector<std::size_t>& widths, std::size_t n,
                                  double p_drop, std::uint64_t seed);

// Activations retained for the matching backward call. inputs[i] feeds layer
// i; pre[i] is its pre-activation response.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre;
  const DropoutMasks* masks = nullptr;
};

// X is records-by-features; returns records-by-output. masks may be null.
Eigen::MatrixXd forward(const Net& net, const Eigen::MatrixXd& X, ForwardCache* cache = nullptr,
                        const DropoutMasks* masks = nullptr);

Eigen::VectorXd forward_one(const Net& net, const Eigen::VectorXd& x,
                            const DropoutMasks* masks = nullptr);

struct LayerGrads {
  Eigen::MatrixXd dW;
  Eigen::VectorXd db;
};

using NetGrads = std::vector<LayerGrads>;

NetGrads zero_grads(const Net& net);

// dY is the loss gradient at the network output (records-by-output). Returns
// parameter gradients; optionally also the gradient w.r.t. the input rows.
NetGrads backward(const Net& net, const ForwardCache& cache, const Eigen::MatrixXd& dY,
                  Eigen::MatrixXd* dX = nullptr);

// value = lambda * sum of squared weights and biases; gradient contribution
// is 2*lambda*param.
double l2_penalty(const Net& net, double lambda, NetGrads* grads = nullptr);

// Adam with bias correction; weight decay is decoupled from the gradient
// moments. State is keyed by a caller-chosen path string so several
// parameter groups can share one optimizer.
class Adam {
 public:
  explicit Adam(double learning_rate, double weight_decay = 0.0, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void begin_step() { ++t_; }
  long step() const { return t_; }
  void update(const std::string& path, Eigen::Ref<Eigen::MatrixXd> param,
              const Eigen::MatrixXd& grad);
  void update(const std::string& path, Eigen::Ref<Eigen::VectorXd> param,
              const Eigen::VectorXd& grad);

 private:
  struct Slot {
    Eigen::MatrixXd m, v;
  };
  double lr_, wd_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Slot> slots_;
};

void adam_step_net(Net& net, const NetGrads& grads, Adam& opt, const std::string& prefix = "net");

// Power-iteration estimate of the top singular value; scales W in place by
// min(1, c/sigma) and returns the estimate. u persists across calls.
double spectral_normalize(Eigen::MatrixXd& W, double c, int iters, Eigen::VectorXd& u);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<double> per_param;
};

// Central differences for every parameter of net against the analytic
// gradients; the loss closure must be deterministic. Differences within atol
// count as exact — gradients that cancel structurally (a Cox output bias)
// sit below the finite-difference noise floor.
GradCheckReport grad_check(Net& net, const std::function<double(const Net&)>& loss,
                           const NetGrads& analytic, double h = 1e-5, double atol = 1e-7);

std::string net_to_json(const Net& net);
Net net_from_json(const std::string& text);

}  // namespace survuq::net
