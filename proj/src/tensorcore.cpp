#include "survuq/tensorcore.hpp"

#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

namespace survuq::net {

namespace {

using json = nlohmann::json;

Eigen::MatrixXd apply_act(const Eigen::MatrixXd& pre, Activation act) {
  if (act == Activation::Identity) return pre;
  return pre.cwiseMax(0.0);
}

// Subgradient at the kink is 0.
Eigen::MatrixXd act_deriv(const Eigen::MatrixXd& pre, Activation act) {
  if (act == Activation::Identity) return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
  return (pre.array() > 0.0).cast<double>();
}

const char* act_name(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation act_from_name(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw Error("checkpoint: unknown activation '" + s + "'");
}

}  // namespace

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw Error("TrainConfig: learning_rate must be positive");
  if (weight_decay < 0.0 || l2_lambda < 0.0)
    throw Error("TrainConfig: decay terms must be non-negative");
  if (batch_size == 0) throw Error("TrainConfig: batch_size must be positive");
  if (max_epochs == 0) throw Error("TrainConfig: max_epochs must be positive");
  if (patience == 0) throw Error("TrainConfig: patience must be at least 1");
}

Net make_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw Error("make_mlp: need at least input and output widths");
  for (std::size_t w : widths)
    if (w == 0) throw Error("make_mlp: zero-width layer");
  auto rng = make_rng(seed, 11);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Net net;
  for (std::size_t i = 1; i < widths.size(); ++i) {
    DenseLayer layer;
    const auto out = static_cast<Eigen::Index>(widths[i]);
    const auto in = static_cast<Eigen::Index>(widths[i - 1]);
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    layer.W.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) layer.W(r, c) = scale * gauss(rng);
    layer.b = Eigen::VectorXd::Zero(out);
    layer.act = (i + 1 < widths.size()) ? Activation::Relu : Activation::Identity;
    net.push_back(std::move(layer));
  }
  return net;
}

std::size_t parameter_count(const Net& net) {
  std::size_t n = 0;
  for (const auto& l : net) n += static_cast<std::size_t>(l.W.size() + l.b.size());
  return n;
}

void check_shapes(const Net& net) {
  if (net.empty()) throw Error("net: empty");
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& l = net[i];
    if (l.W.rows() != l.b.size()) throw Error("net: layer " + std::to_string(i) + " W/b mismatch");
    if (!l.W.allFinite() || !l.b.allFinite())
      throw Error("net: layer " + std::to_string(i) + " has non-finite parameters");
    if (i > 0 && net[i - 1].W.rows() != l.W.cols())
      throw Error("net: layer " + std::to_string(i) + " input width mismatch");
  }
}

DropoutMasks sample_dropout_masks(const std::vector<std::size_t>& widths, std::size_t n,
                                  double p_drop, std::uint64_t seed) {
  if (p_drop < 0.0 || p_drop > 1.0) throw Error("dropout: p_drop must lie in [0,1]");
  if (widths.size() < 2) throw Error("dropout: need at least input and output widths");
  DropoutMasks plan;
  plan.p_drop = p_drop;
  auto rng = make_rng(seed, 23);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double scale = p_drop < 1.0 ? 1.0 / (1.0 - p_drop) : 0.0;
  // masks cover hidden-layer outputs only: widths[1..end-1)
  for (std::size_t i = 1; i + 1 < widths.size(); ++i) {
    const std::size_t w = widths[i];
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(w));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        m(r, c) = (p_drop > 0.0 && unit(rng) < p_drop) ? 0.0 : scale;
    plan.masks.push_back(std::move(m));
  }
  return plan;
}

Eigen::MatrixXd forward(const Net& net, const Eigen::MatrixXd& X, ForwardCache* cache,
                        const DropoutMasks* masks) {
  check_shapes(net);
  if (X.cols() != net.front().W.cols())
    throw Error("forward: input has " + std::to_string(X.cols()) + " features, net expects " +
                std::to_string(net.front().W.cols()));
  const std::size_t n_hidden = net.size() - 1;
  if (masks) {
    if (masks->masks.size() != n_hidden)
      throw Error("forward: mask plan covers " + std::to_string(masks->masks.size()) +
                  " layers, net has " + std::to_string(n_hidden) + " hidden layers");
    for (std::size_t i = 0; i < n_hidden; ++i)
      if (masks->masks[i].rows() != X.rows() || masks->masks[i].cols() != net[i].W.rows())
        throw Error("forward: mask shape mismatch at hidden layer " + std::to_string(i));
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
    cache->masks = masks;
  }
  Eigen::MatrixXd h = X;
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (cache) cache->inputs.push_back(h);
    Eigen::MatrixXd pre = (h * net[i].W.transpose()).rowwise() + net[i].b.transpose();
    if (cache) cache->pre.push_back(pre);
    h = apply_act(pre, net[i].act);
    if (masks && i < n_hidden) h = h.cwiseProduct(masks->masks[i]);
  }
  return h;
}

Eigen::VectorXd forward_one(const Net& net, const Eigen::VectorXd& x, const DropoutMasks* masks) {
  Eigen::MatrixXd out = forward(net, x.transpose(), nullptr, masks);
  return out.row(0).transpose();
}

NetGrads zero_grads(const Net& net) {
  NetGrads g;
  for (const auto& l : net)
    g.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()), Eigen::VectorXd::Zero(l.b.size())});
  return g;
}

NetGrads backward(const Net& net, const ForwardCache& cache, const Eigen::MatrixXd& dY,
                  Eigen::MatrixXd* dX) {
  if (cache.inputs.size() != net.size() || cache.pre.size() != net.size())
    throw Error("backward: cache does not match net");
  if (dY.rows() != cache.pre.back().rows() || dY.cols() != cache.pre.back().cols())
    throw Error("backward: upstream gradient shape mismatch");

  NetGrads grads(net.size());
  Eigen::MatrixXd up = dY;
  for (std::size_t i = net.size(); i-- > 0;) {
    if (cache.masks && i < net.size() - 1) up = up.cwiseProduct(cache.masks->masks[i]);
    Eigen::MatrixXd dpre = up.cwiseProduct(act_deriv(cache.pre[i], net[i].act));
    grads[i].dW = dpre.transpose() * cache.inputs[i];
    grads[i].db = dpre.colwise().sum().transpose();
    if (i > 0 || dX) up = dpre * net[i].W;
    if (i == 0 && dX) *dX = up;
  }
  return grads;
}

double l2_penalty(const Net& net, double lambda, NetGrads* grads) {
  if (lambda < 0.0) throw Error("l2_penalty: lambda must be non-negative");
  double value = 0.0;
  if (grads && grads->size() != net.size()) throw Error("l2_penalty: grads shape mismatch");
  for (std::size_t i = 0; i < net.size(); ++i) {
    value += net[i].W.squaredNorm() + net[i].b.squaredNorm();
    if (grads && lambda > 0.0) {
      (*grads)[i].dW += 2.0 * lambda * net[i].W;
      (*grads)[i].db += 2.0 * lambda * net[i].b;
    }
  }
  return lambda * value;
}

Adam::Adam(double learning_rate, double weight_decay, double beta1, double beta2, double eps)
    : lr_(learning_rate), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (learning_rate <= 0.0) throw Error("Adam: learning_rate must be positive");
  if (weight_decay < 0.0) throw Error("Adam: weight_decay must be non-negative");
}

void Adam::update(const std::string& path, Eigen::Ref<Eigen::MatrixXd> param,
                  const Eigen::MatrixXd& grad) {
  if (t_ < 1) throw Error("Adam: call begin_step() before update");
  if (param.rows() != grad.rows() || param.cols() != grad.cols())
    throw Error("Adam: gradient shape mismatch for '" + path + "'");
  if (!grad.allFinite()) throw Error("Adam: non-finite gradient for '" + path + "'");

  Slot& s = slots_[path];
  if (s.m.size() == 0) {
    s.m = Eigen::MatrixXd::Zero(param.rows(), param.cols());
    s.v = Eigen::MatrixXd::Zero(param.rows(), param.cols());
  }
  s.m = beta1_ * s.m + (1.0 - beta1_) * grad;
  s.v = beta2_ * s.v + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  Eigen::ArrayXXd mhat = s.m.array() / bc1;
  Eigen::ArrayXXd vhat = s.v.array() / bc2;
  if (wd_ > 0.0) param *= 1.0 - lr_ * wd_;  // decoupled decay, taken from the pre-step value
  param.array() -= lr_ * mhat / (vhat.sqrt() + eps_);
}

void Adam::update(const std::string& path, Eigen::Ref<Eigen::VectorXd> param,
                  const Eigen::VectorXd& grad) {
  Eigen::MatrixXd p = param;
  update(path, Eigen::Ref<Eigen::MatrixXd>(p), Eigen::MatrixXd(grad));
  param = p.col(0);
}

void adam_step_net(Net& net, const NetGrads& grads, Adam& opt, const std::string& prefix) {
  if (grads.size() != net.size()) throw Error("adam_step_net: grads shape mismatch");
  for (std::size_t i = 0; i < net.size(); ++i) {
    opt.update(prefix + ".layer" + std::to_string(i) + ".W", net[i].W, grads[i].dW);
    opt.update(prefix + ".layer" + std::to_string(i) + ".b", net[i].b, grads[i].db);
  }
}

double spectral_normalize(Eigen::MatrixXd& W, double c, int iters, Eigen::VectorXd& u) {
  if (c <= 0.0) throw Error("spectral_normalize: bound must be positive");
  if (W.size() == 0 || W.norm() == 0.0) throw Error("spectral_normalize: W must be nonzero");
  if (u.size() != W.rows()) {
    u = Eigen::VectorXd::Ones(W.rows());
    u.normalize();
  }
  Eigen::VectorXd v;
  for (int it = 0; it < std::max(iters, 1); ++it) {
    v = W.transpose() * u;
    double vn = v.norm();
    if (vn == 0.0) {
      v = Eigen::VectorXd::Ones(W.cols());
      vn = v.norm();
    }
    v /= vn;
    u = W * v;
    double un = u.norm();
    if (un == 0.0) {
      u = Eigen::VectorXd::Ones(W.rows());
      un = u.norm();
    }
    u /= un;
  }
  const double sigma = u.dot(W * v);
  if (sigma > c) W *= c / sigma;
  return sigma;
}

GradCheckReport grad_check(Net& net, const std::function<double(const Net&)>& loss,
                           const NetGrads& analytic, double h, double atol) {
  if (analytic.size() != net.size()) throw Error("grad_check: analytic grads shape mismatch");
  GradCheckReport report;
  auto probe = [&](double& slot, double a) {
    const double saved = slot;
    slot = saved + h;
    const double fp = loss(net);
    slot = saved - h;
    const double fm = loss(net);
    slot = saved;
    const double n = (fp - fm) / (2.0 * h);
    const double err = std::abs(a - n);
    const double rel = err <= atol ? 0.0 : err / std::max(std::abs(a), std::abs(n));
    report.per_param.push_back(rel);
    report.max_rel_err = std::max(report.max_rel_err, rel);
  };
  for (std::size_t i = 0; i < net.size(); ++i) {
    for (Eigen::Index r = 0; r < net[i].W.rows(); ++r)
      for (Eigen::Index c = 0; c < net[i].W.cols(); ++c)
        probe(net[i].W(r, c), analytic[i].dW(r, c));
    for (Eigen::Index r = 0; r < net[i].b.size(); ++r)
      probe(net[i].b(r), analytic[i].db(r));
  }
  return report;
}

std::string net_to_json(const Net& net) {
  check_shapes(net);
  json layers = json::array();
  for (const auto& l : net) {
    json weights = json::array();
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) weights.push_back(l.W(r, c));
    json biases = json::array();
    for (Eigen::Index r = 0; r < l.b.size(); ++r) biases.push_back(l.b(r));
    layers.push_back({{"out", l.W.rows()},
                      {"in", l.W.cols()},
                      {"activation", act_name(l.act)},
                      {"weights", std::move(weights)},
                      {"biases", std::move(biases)}});
  }
  json doc = {{"format", "survuq-net"}, {"version", 1}, {"layers", std::move(layers)}};
  return doc.dump(2);
}

Net net_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  if (doc.value("format", "") != "survuq-net") throw Error("checkpoint: wrong format tag");
  if (doc.value("version", 0) != 1) throw Error("checkpoint: unsupported version");
  Net net;
  for (const auto& jl : doc.at("layers")) {
    DenseLayer l;
    const auto out = jl.at("out").get<Eigen::Index>();
    const auto in = jl.at("in").get<Eigen::Index>();
    if (out <= 0 || in <= 0) throw Error("checkpoint: non-positive layer shape");
    l.act = act_from_name(jl.at("activation").get<std::string>());
    const auto& weights = jl.at("weights");
    const auto& biases = jl.at("biases");
    if (static_cast<Eigen::Index>(weights.size()) != out * in ||
        static_cast<Eigen::Index>(biases.size()) != out)
      throw Error("checkpoint: weight/bias count does not match layer shape");
    l.W.resize(out, in);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) l.W(r, c) = weights[static_cast<std::size_t>(k++)].get<double>();
    l.b.resize(out);
    for (Eigen::Index r = 0; r < out; ++r) l.b(r) = biases[static_cast<std::size_t>(r)].get<double>();
    net.push_back(std::move(l));
  }
  check_shapes(net);
  return net;
}

}  // namespace survuq::net
