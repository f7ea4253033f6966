#include "survuq/probmodels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

namespace survuq::prob {

namespace {

using json = nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

double softplus(double r) { return r > 30.0 ? r : std::log1p(std::exp(r)); }
double sigmoid(double r) { return 1.0 / (1.0 + std::exp(-r)); }

Eigen::MatrixXd softplus_m(const Eigen::MatrixXd& R) {
  return R.unaryExpr([](double r) { return softplus(r); });
}
Eigen::MatrixXd sigmoid_m(const Eigen::MatrixXd& R) {
  return R.unaryExpr([](double r) { return sigmoid(r); });
}

struct Cohort {
  Eigen::MatrixXd X;
  std::vector<double> times;
  std::vector<int> events;
  int n_events = 0;
};

Cohort make_cohort(const data::Dataset& ds, const char* what) {
  ds.validate();
  Cohort c;
  c.X = ds.matrix();
  c.times = ds.time;
  c.events = ds.event;
  c.n_events = ds.n_events();
  if (c.n_events == 0) throw Error(std::string(what) + ": cohort has no events");
  return c;
}

std::vector<std::size_t> widths_of(const net::Net& network) {
  std::vector<std::size_t> w;
  w.push_back(static_cast<std::size_t>(network.front().W.cols()));
  for (const auto& layer : network) w.push_back(static_cast<std::size_t>(layer.W.rows()));
  return w;
}

void gather_batch(const Cohort& c, const std::vector<std::size_t>& idx, Eigen::MatrixXd& Xb,
                  std::vector<double>& tb, std::vector<int>& evb) {
  Xb.resize(static_cast<Eigen::Index>(idx.size()), c.X.cols());
  tb.resize(idx.size());
  evb.resize(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    Xb.row(static_cast<Eigen::Index>(k)) = c.X.row(static_cast<Eigen::Index>(idx[k]));
    tb[k] = c.times[idx[k]];
    evb[k] = c.events[idx[k]];
  }
}

double cox_batch_loss(const Eigen::MatrixXd& out, const std::vector<double>& tb,
                      const std::vector<int>& evb, Eigen::MatrixXd* dOut) {
  Eigen::VectorXd risks = out.col(0);
  double loss = -cox::partial_log_likelihood(risks, tb, evb);
  if (dOut) {
    dOut->setZero(out.rows(), out.cols());
    dOut->col(0) = -cox::plm_gradient(risks, tb, evb);
  }
  return loss;
}

double data_loss(Head head, const Eigen::MatrixXd& out, const std::vector<double>& tb,
                 const std::vector<int>& evb, Eigen::MatrixXd* dOut) {
  if (head == Head::CoxRisk) return cox_batch_loss(out, tb, evb, dOut);
  return gaussian_nll(out, tb, evb, dOut);
}

double valid_loss_of(const net::Net& network, const Cohort& va, Head head) {
  Eigen::MatrixXd out = net::forward(network, va.X);
  return data_loss(head, out, va.times, va.events, nullptr) / va.n_events;
}

struct PointResult {
  net::Net network;
  TrainLog log;
};

// Shared mini-batch loop for the deterministic MLP and MC dropout: the two
// are the same trainer, dropout masks included or not. p_drop = 0 samples
// nothing, so the RNG stream (and the result) is identical to the plain MLP.
PointResult train_point(const Cohort& tr, const Cohort& va, const std::vector<std::size_t>& hidden,
                        const net::TrainConfig& cfg, double p_drop, Head head) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(tr.X.cols());
  std::vector<std::size_t> widths;
  widths.push_back(d);
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(head == Head::GaussianTime ? 2 : 1);

  net::Net network = net::make_mlp(widths, cfg.seed);
  const std::vector<std::size_t> hw = widths_of(network);
  net::Adam opt(cfg.learning_rate, cfg.weight_decay);
  EarlyStopping stopper(cfg.patience);
  net::Net best = network;
  TrainLog log;

  for (std::size_t e = 1; e <= cfg.max_epochs; ++e) {
    auto batches = stratified_batches(tr.events, cfg.batch_size, cfg.seed, e);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Eigen::MatrixXd Xb;
      std::vector<double> tb;
      std::vector<int> evb;
      gather_batch(tr, batches[b], Xb, tb, evb);

      net::DropoutMasks masks;
      const net::DropoutMasks* mp = nullptr;
      if (p_drop > 0.0) {
        masks = net::sample_dropout_masks(hw, batches[b].size(), p_drop,
                                          derive_seed(cfg.seed, 2000000 + e * 4096 + b));
        mp = &masks;
      }
      net::ForwardCache cache;
      Eigen::MatrixXd out = net::forward(network, Xb, &cache, mp);
      Eigen::MatrixXd dOut;
      double loss = data_loss(head, out, tb, evb, &dOut);
      net::NetGrads grads = net::backward(network, cache, dOut);
      loss += net::l2_penalty(network, cfg.l2_lambda, &grads);
      if (!std::isfinite(loss))
        throw Error("training diverged (non-finite loss) at epoch " + std::to_string(e));
      epoch_loss += loss;
      opt.begin_step();
      net::adam_step_net(network, grads, opt);
    }
    log.train_loss.push_back(epoch_loss / tr.n_events);
    const double vloss = valid_loss_of(network, va, head);
    if (!std::isfinite(vloss))
      throw Error("training diverged (non-finite validation loss) at epoch " + std::to_string(e));
    log.valid_loss.push_back(vloss);
    log.epochs_run = e;
    if (stopper.observe(vloss)) best = network;
    if (stopper.should_stop()) {
      log.stopped_early = true;
      break;
    }
  }
  log.best_epoch = stopper.best_epoch();
  // best-epoch weights are restored when early stopping halted the run;
  // a run that reaches max_epochs keeps its final weights
  if (log.stopped_early) network = std::move(best);
  return {std::move(network), std::move(log)};
}

VariationalNet vi_init(const std::vector<std::size_t>& widths, std::uint64_t seed) {
  net::Net base = net::make_mlp(widths, seed);
  VariationalNet v;
  for (auto& l : base) {
    VariationalLayer vl;
    vl.Wmu = l.W;
    vl.bmu = l.b;
    vl.Wrho = Eigen::MatrixXd::Constant(l.W.rows(), l.W.cols(), -5.0);
    vl.brho = Eigen::VectorXd::Constant(l.b.size(), -5.0);
    vl.act = l.act;
    v.push_back(std::move(vl));
  }
  return v;
}

net::NetGrads sample_noise(const VariationalNet& vnet, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  net::NetGrads eps;
  for (const auto& vl : vnet) {
    net::LayerGrads e;
    e.dW.resize(vl.Wmu.rows(), vl.Wmu.cols());
    for (Eigen::Index r = 0; r < e.dW.rows(); ++r)
      for (Eigen::Index c = 0; c < e.dW.cols(); ++c) e.dW(r, c) = gauss(rng);
    e.db.resize(vl.bmu.size());
    for (Eigen::Index r = 0; r < e.db.size(); ++r) e.db(r) = gauss(rng);
    eps.push_back(std::move(e));
  }
  return eps;
}

}  // namespace

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::Mlp: return "mlp";
    case Backend::Vi: return "vi";
    case Backend::Mcd: return "mcd";
    case Backend::Sngp: return "sngp";
  }
  throw Error("backend_name: bad tag");
}

Backend backend_from_name(const std::string& s) {
  if (s == "mlp") return Backend::Mlp;
  if (s == "vi") return Backend::Vi;
  if (s == "mcd") return Backend::Mcd;
  if (s == "sngp") return Backend::Sngp;
  throw Error("unknown backend '" + s + "'");
}

void MCDConfig::validate() const {
  if (p_drop < 0.0 || p_drop >= 1.0) throw Error("MCDConfig: p_drop must lie in [0,1)");
  if (n_samples == 0) throw Error("MCDConfig: n_samples must be at least 1");
  if (tau <= 0.0) throw Error("MCDConfig: tau must be positive");
}

void SNGPConfig::validate() const {
  if (m == 0) throw Error("SNGPConfig: m must be positive");
  if (ridge <= 0.0) throw Error("SNGPConfig: ridge must be positive");
  if (spectral_bound <= 0.0) throw Error("SNGPConfig: spectral bound must be positive");
}

Eigen::VectorXd SNGPHead::features(const Eigen::VectorXd& h) const {
  if (h.size() != rff_weights.cols()) throw Error("SNGPHead: feature width mismatch");
  const double sc = std::sqrt(2.0 / static_cast<double>(m()));
  return (sc * ((rff_weights * h + rff_bias).array().cos())).matrix();
}

Eigen::MatrixXd SNGPHead::features_batch(const Eigen::MatrixXd& H) const {
  if (H.cols() != rff_weights.cols()) throw Error("SNGPHead: feature width mismatch");
  const double sc = std::sqrt(2.0 / static_cast<double>(m()));
  Eigen::MatrixXd Z = (H * rff_weights.transpose()).rowwise() + rff_bias.transpose();
  return sc * Z.array().cos().matrix();
}

double SNGPHead::variance(const Eigen::VectorXd& phi) const {
  if (precision.rows() == 0) throw Error("SNGPHead: precision not accumulated");
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw Error("SNGPHead: precision is not positive definite");
  return phi.dot(llt.solve(phi));
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw Error("EarlyStopping: patience must be at least 1");
}

bool EarlyStopping::observe(double valid_loss) {
  ++epoch_;
  if (epoch_ == 1 || valid_loss < best_) {
    best_ = valid_loss;
    best_epoch_ = epoch_;
    streak_ = 0;
    return true;
  }
  ++streak_;
  return false;
}

double gaussian_nll(const Eigen::MatrixXd& out, const std::vector<double>& times,
                    const std::vector<int>& events, Eigen::MatrixXd* dOut) {
  if (out.cols() != 2) throw Error("gaussian_nll: head must emit (mean, log sigma)");
  if (static_cast<std::size_t>(out.rows()) != times.size() || times.size() != events.size())
    throw Error("gaussian_nll: length mismatch");
  if (std::none_of(events.begin(), events.end(), [](int e) { return e != 0; }))
    throw Error("gaussian_nll: no event records to fit");
  if (dOut) dOut->setZero(out.rows(), out.cols());
  double nll = 0.0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (!events[static_cast<std::size_t>(i)]) continue;
    const double mu = out(i, 0);
    const double logs = out(i, 1);
    const double s2 = std::exp(2.0 * logs);
    const double r = times[static_cast<std::size_t>(i)] - mu;
    nll += 0.5 * std::log(2.0 * kPi) + logs + r * r / (2.0 * s2);
    if (dOut) {
      (*dOut)(i, 0) = -r / s2;
      (*dOut)(i, 1) = 1.0 - r * r / s2;
    }
  }
  return nll;
}

std::vector<std::vector<std::size_t>> stratified_batches(const std::vector<int>& events,
                                                         std::size_t batch_size,
                                                         std::uint64_t seed, std::size_t epoch) {
  const std::size_t n = events.size();
  if (n == 0) throw Error("stratified_batches: empty cohort");
  if (batch_size == 0) throw Error("stratified_batches: batch_size must be positive");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed, 1000 + epoch);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<std::size_t> ev, cn;
  for (std::size_t i : perm) (events[i] ? ev : cn).push_back(i);
  if (ev.empty()) throw Error("stratified_batches: cohort has no events");

  const std::size_t by_size = (n + batch_size - 1) / batch_size;
  const std::size_t n_batches = std::max<std::size_t>(1, std::min(by_size, ev.size()));
  std::vector<std::vector<std::size_t>> batches(n_batches);
  for (std::size_t k = 0; k < ev.size(); ++k) batches[k % n_batches].push_back(ev[k]);
  for (std::size_t k = 0; k < cn.size(); ++k) batches[k % n_batches].push_back(cn[k]);
  return batches;
}

net::Net vi_realize(const VariationalNet& vnet, const net::NetGrads& eps) {
  if (eps.size() != vnet.size()) throw Error("vi_realize: noise shape mismatch");
  net::Net out;
  for (std::size_t i = 0; i < vnet.size(); ++i) {
    net::DenseLayer l;
    l.W = vnet[i].Wmu + softplus_m(vnet[i].Wrho).cwiseProduct(eps[i].dW);
    l.b = vnet[i].bmu + softplus_m(vnet[i].brho).cwiseProduct(eps[i].db);
    l.act = vnet[i].act;
    out.push_back(std::move(l));
  }
  return out;
}

net::Net vi_mean_net(const VariationalNet& vnet) {
  net::Net out;
  for (const auto& vl : vnet) out.push_back({vl.Wmu, vl.bmu, vl.act});
  return out;
}

double vi_kl(const VariationalNet& vnet, double prior_std) {
  if (prior_std <= 0.0) throw Error("vi_kl: prior_std must be positive");
  const double p2 = prior_std * prior_std;
  double kl = 0.0;
  auto add = [&](double mu, double rho) {
    const double s = softplus(rho);
    kl += std::log(prior_std / s) + (s * s + mu * mu) / (2.0 * p2) - 0.5;
  };
  for (const auto& vl : vnet) {
    for (Eigen::Index r = 0; r < vl.Wmu.rows(); ++r)
      for (Eigen::Index c = 0; c < vl.Wmu.cols(); ++c) add(vl.Wmu(r, c), vl.Wrho(r, c));
    for (Eigen::Index r = 0; r < vl.bmu.size(); ++r) add(vl.bmu(r), vl.brho(r));
  }
  return kl;
}

double vi_loss(const VariationalNet& vnet, const Eigen::MatrixXd& X,
               const std::vector<double>& times, const std::vector<int>& events,
               const net::NetGrads& eps, double prior_std, double kl_weight, ViGrads* grads) {
  net::Net realized = vi_realize(vnet, eps);
  net::ForwardCache cache;
  Eigen::MatrixXd out = net::forward(realized, X, &cache);
  Eigen::MatrixXd dOut;
  double loss = cox_batch_loss(out, times, events, grads ? &dOut : nullptr);
  loss += kl_weight * vi_kl(vnet, prior_std);
  if (!grads) return loss;

  net::NetGrads ng = net::backward(realized, cache, dOut);
  grads->mu.clear();
  grads->rho.clear();
  const double p2 = prior_std * prior_std;
  for (std::size_t i = 0; i < vnet.size(); ++i) {
    const Eigen::MatrixXd sW = softplus_m(vnet[i].Wrho);
    const Eigen::MatrixXd gW = sigmoid_m(vnet[i].Wrho);
    const Eigen::MatrixXd sB = softplus_m(vnet[i].brho);
    const Eigen::MatrixXd gB = sigmoid_m(vnet[i].brho);

    net::LayerGrads mu, rho;
    mu.dW = ng[i].dW + (kl_weight / p2) * vnet[i].Wmu;
    mu.db = ng[i].db + (kl_weight / p2) * vnet[i].bmu;
    // dKL/dsigma = sigma/p2 - 1/sigma; dsigma/drho = sigmoid(rho).
    rho.dW = (ng[i].dW.cwiseProduct(eps[i].dW) +
              kl_weight * (sW / p2 - sW.cwiseInverse()))
                 .cwiseProduct(gW);
    rho.db = (ng[i].db.cwiseProduct(eps[i].db) +
              kl_weight * (sB / p2 - sB.cwiseInverse()))
                 .cwiseProduct(Eigen::VectorXd(gB));
    grads->mu.push_back(std::move(mu));
    grads->rho.push_back(std::move(rho));
  }
  return loss;
}

SurvivalModel train_mlp(const data::Dataset& train, const data::Dataset& valid,
                        const std::vector<std::size_t>& hidden, const net::TrainConfig& cfg,
                        Head head) {
  Cohort tr = make_cohort(train, "train_mlp");
  Cohort va = make_cohort(valid, "train_mlp (validation)");
  PointResult res = train_point(tr, va, hidden, cfg, 0.0, head);
  SurvivalModel model;
  model.backend = Backend::Mlp;
  model.head = head;
  model.point = std::move(res.network);
  model.log = std::move(res.log);
  return model;
}

SurvivalModel train_mcd(const data::Dataset& train, const data::Dataset& valid,
                        const std::vector<std::size_t>& hidden, const net::TrainConfig& cfg,
                        const MCDConfig& mcd, Head head) {
  mcd.validate();
  Cohort tr = make_cohort(train, "train_mcd");
  Cohort va = make_cohort(valid, "train_mcd (validation)");
  PointResult res = train_point(tr, va, hidden, cfg, mcd.p_drop, head);
  SurvivalModel model;
  model.backend = Backend::Mcd;
  model.head = head;
  model.point = std::move(res.network);
  model.mcd = mcd;
  model.log = std::move(res.log);
  return model;
}

SurvivalModel train_vi(const data::Dataset& train, const data::Dataset& valid,
                       const std::vector<std::size_t>& hidden, const net::TrainConfig& cfg,
                       double prior_std) {
  cfg.validate();
  if (prior_std <= 0.0) throw Error("train_vi: prior_std must be positive");
  Cohort tr = make_cohort(train, "train_vi");
  Cohort va = make_cohort(valid, "train_vi (validation)");

  const auto d = static_cast<std::size_t>(tr.X.cols());
  std::vector<std::size_t> widths;
  widths.push_back(d);
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(1);

  VariationalNet vnet = vi_init(widths, cfg.seed);
  net::Adam opt(cfg.learning_rate, cfg.weight_decay);
  EarlyStopping stopper(cfg.patience);
  VariationalNet best = vnet;
  TrainLog log;
  const double N = static_cast<double>(tr.times.size());

  for (std::size_t e = 1; e <= cfg.max_epochs; ++e) {
    auto batches = stratified_batches(tr.events, cfg.batch_size, cfg.seed, e);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Eigen::MatrixXd Xb;
      std::vector<double> tb;
      std::vector<int> evb;
      gather_batch(tr, batches[b], Xb, tb, evb);

      auto rng = make_rng(cfg.seed, 3000000 + e * 4096 + b);
      net::NetGrads eps = sample_noise(vnet, rng);
      const double klw = static_cast<double>(batches[b].size()) / N;
      ViGrads grads;
      double loss = vi_loss(vnet, Xb, tb, evb, eps, prior_std, klw, &grads);
      if (!std::isfinite(loss))
        throw Error("training diverged (non-finite loss) at epoch " + std::to_string(e));
      epoch_loss += loss;
      opt.begin_step();
      for (std::size_t i = 0; i < vnet.size(); ++i) {
        const std::string tag = ".layer" + std::to_string(i);
        opt.update("mu" + tag + ".W", vnet[i].Wmu, grads.mu[i].dW);
        opt.update("mu" + tag + ".b", vnet[i].bmu, grads.mu[i].db);
        opt.update("rho" + tag + ".W", vnet[i].Wrho, grads.rho[i].dW);
        opt.update("rho" + tag + ".b", vnet[i].brho, grads.rho[i].db);
      }
    }
    log.train_loss.push_back(epoch_loss / tr.n_events);
    const double vloss = valid_loss_of(vi_mean_net(vnet), va, Head::CoxRisk);
    if (!std::isfinite(vloss))
      throw Error("training diverged (non-finite validation loss) at epoch " + std::to_string(e));
    log.valid_loss.push_back(vloss);
    log.epochs_run = e;
    if (stopper.observe(vloss)) best = vnet;
    if (stopper.should_stop()) {
      log.stopped_early = true;
      break;
    }
  }
  log.best_epoch = stopper.best_epoch();
  if (log.stopped_early) vnet = std::move(best);

  SurvivalModel model;
  model.backend = Backend::Vi;
  model.vnet = std::move(vnet);
  model.prior_std = prior_std;
  model.log = std::move(log);
  return model;
}

SurvivalModel train_sngp(const data::Dataset& train, const data::Dataset& valid,
                         const std::vector<std::size_t>& hidden, const net::TrainConfig& cfg,
                         const SNGPConfig& scfg) {
  cfg.validate();
  scfg.validate();
  Cohort tr = make_cohort(train, "train_sngp");
  Cohort va = make_cohort(valid, "train_sngp (validation)");

  const auto d = static_cast<std::size_t>(tr.X.cols());
  net::Net trunk;
  if (!hidden.empty()) {
    std::vector<std::size_t> widths;
    widths.push_back(d);
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    trunk = net::make_mlp(widths, cfg.seed);
    for (auto& l : trunk) l.act = net::Activation::Relu;
  }
  const std::size_t feat_width = hidden.empty() ? d : hidden.back();

  SNGPHead head;
  head.ridge = scfg.ridge;
  {
    auto rng_w = make_rng(cfg.seed, 7);
    std::normal_distribution<double> gauss(0.0, 1.0);
    head.rff_weights.resize(static_cast<Eigen::Index>(scfg.m),
                            static_cast<Eigen::Index>(feat_width));
    for (Eigen::Index r = 0; r < head.rff_weights.rows(); ++r)
      for (Eigen::Index c = 0; c < head.rff_weights.cols(); ++c)
        head.rff_weights(r, c) = gauss(rng_w);
    auto rng_b = make_rng(cfg.seed, 8);
    std::uniform_real_distribution<double> unif(0.0, 2.0 * kPi);
    head.rff_bias.resize(static_cast<Eigen::Index>(scfg.m));
    for (Eigen::Index r = 0; r < head.rff_bias.size(); ++r) head.rff_bias(r) = unif(rng_b);
  }
  head.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(scfg.m));

  net::Adam opt(cfg.learning_rate, cfg.weight_decay);
  EarlyStopping stopper(cfg.patience);
  std::vector<Eigen::VectorXd> u_state(trunk.size());
  net::Net best_trunk = trunk;
  Eigen::VectorXd best_beta = head.beta;
  TrainLog log;
  const double sc = std::sqrt(2.0 / static_cast<double>(scfg.m));

  auto valid_risks = [&]() {
    Eigen::MatrixXd H = trunk.empty() ? va.X : net::forward(trunk, va.X);
    return Eigen::VectorXd(head.features_batch(H) * head.beta);
  };

  auto accumulate_precision = [&]() {
    Eigen::MatrixXd H = trunk.empty() ? tr.X : net::forward(trunk, tr.X);
    Eigen::MatrixXd Phi = head.features_batch(H);
    head.precision = scfg.ridge * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(scfg.m),
                                                            static_cast<Eigen::Index>(scfg.m));
    head.precision.noalias() += Phi.transpose() * Phi;
  };

  for (std::size_t e = 1; e <= cfg.max_epochs; ++e) {
    auto batches = stratified_batches(tr.events, cfg.batch_size, cfg.seed, e);
    double epoch_loss = 0.0;
    for (const auto& bidx : batches) {
      Eigen::MatrixXd Xb;
      std::vector<double> tb;
      std::vector<int> evb;
      gather_batch(tr, bidx, Xb, tb, evb);

      net::ForwardCache cache;
      Eigen::MatrixXd H = trunk.empty() ? Xb : net::forward(trunk, Xb, &cache);
      Eigen::MatrixXd Z = (H * head.rff_weights.transpose()).rowwise() + head.rff_bias.transpose();
      Eigen::MatrixXd Phi = sc * Z.array().cos().matrix();
      Eigen::VectorXd risks = Phi * head.beta;

      double loss = -cox::partial_log_likelihood(risks, tb, evb);
      Eigen::VectorXd dRisk = -cox::plm_gradient(risks, tb, evb);
      Eigen::VectorXd dBeta = Phi.transpose() * dRisk;
      if (cfg.l2_lambda > 0.0) {
        loss += cfg.l2_lambda * head.beta.squaredNorm();
        dBeta += 2.0 * cfg.l2_lambda * head.beta;
      }
      net::NetGrads tgrads;
      if (!trunk.empty()) {
        Eigen::MatrixXd dZ =
            (dRisk * head.beta.transpose()).cwiseProduct((-sc * Z.array().sin()).matrix());
        Eigen::MatrixXd dH = dZ * head.rff_weights;
        tgrads = net::backward(trunk, cache, dH);
        loss += net::l2_penalty(trunk, cfg.l2_lambda, &tgrads);
      }
      if (!std::isfinite(loss))
        throw Error("training diverged (non-finite loss) at epoch " + std::to_string(e));
      epoch_loss += loss;
      opt.begin_step();
      opt.update("sngp.beta", head.beta, dBeta);
      if (!trunk.empty()) {
        net::adam_step_net(trunk, tgrads, opt, "trunk");
        for (std::size_t i = 0; i < trunk.size(); ++i)
          net::spectral_normalize(trunk[i].W, scfg.spectral_bound, 1, u_state[i]);
      }
    }
    log.train_loss.push_back(epoch_loss / tr.n_events);
    if (scfg.reset_precision_each_epoch) accumulate_precision();
    Eigen::VectorXd vr = valid_risks();
    const double vloss = -cox::partial_log_likelihood(vr, va.times, va.events) / va.n_events;
    if (!std::isfinite(vloss))
      throw Error("training diverged (non-finite validation loss) at epoch " + std::to_string(e));
    log.valid_loss.push_back(vloss);
    log.epochs_run = e;
    if (stopper.observe(vloss)) {
      best_trunk = trunk;
      best_beta = head.beta;
    }
    if (stopper.should_stop()) {
      log.stopped_early = true;
      break;
    }
  }
  log.best_epoch = stopper.best_epoch();

  if (log.stopped_early) {
    trunk = std::move(best_trunk);
    head.beta = std::move(best_beta);
  }
  // Tighten the spectral bound before the Laplace pass so the stored trunk
  // and its precision agree.
  for (std::size_t i = 0; i < trunk.size(); ++i)
    net::spectral_normalize(trunk[i].W, scfg.spectral_bound, 50, u_state[i]);
  accumulate_precision();

  SurvivalModel model;
  model.backend = Backend::Sngp;
  model.point = std::move(trunk);
  model.sngp = std::move(head);
  model.log = std::move(log);
  return model;
}

bool SurvivalModel::stochastic() const {
  switch (backend) {
    case Backend::Mlp: return false;
    case Backend::Mcd: return mcd.p_drop > 0.0;
    case Backend::Vi:
    case Backend::Sngp: return true;
  }
  throw Error("stochastic: bad backend tag");
}

double SurvivalModel::point_risk(const Eigen::VectorXd& x) const {
  return point_risk_batch(x.transpose())(0);
}

Eigen::VectorXd SurvivalModel::point_risk_batch(const Eigen::MatrixXd& X) const {
  switch (backend) {
    case Backend::Mlp:
    case Backend::Mcd: return net::forward(point, X).col(0);
    case Backend::Vi: return net::forward(vi_mean_net(vnet), X).col(0);
    case Backend::Sngp: {
      Eigen::MatrixXd H = point.empty() ? X : net::forward(point, X);
      return sngp.features_batch(H) * sngp.beta;
    }
  }
  throw Error("point_risk: bad backend tag");
}

PredictiveDraws SurvivalModel::risk_draws(const Eigen::VectorXd& x, std::size_t n,
                                          std::uint64_t seed) const {
  if (n == 0) throw Error("risk_draws: need at least one sample");
  PredictiveDraws out;
  out.risk_samples.reserve(n);
  switch (backend) {
    case Backend::Mlp: {
      const double r = point_risk(x);
      out.risk_samples.assign(n, r);
      break;
    }
    case Backend::Mcd: {
      if (mcd.p_drop == 0.0) {
        out.risk_samples.assign(n, point_risk(x));
        break;
      }
      const std::vector<std::size_t> hw = widths_of(point);
      for (std::size_t k = 0; k < n; ++k) {
        net::DropoutMasks masks =
            net::sample_dropout_masks(hw, 1, mcd.p_drop, derive_seed(seed, 100 + k));
        out.risk_samples.push_back(net::forward_one(point, x, &masks)(0));
      }
      break;
    }
    case Backend::Vi: {
      auto rng = make_rng(seed, 41);
      for (std::size_t k = 0; k < n; ++k) {
        net::NetGrads eps = sample_noise(vnet, rng);
        out.risk_samples.push_back(net::forward_one(vi_realize(vnet, eps), x)(0));
      }
      break;
    }
    case Backend::Sngp: {
      Eigen::VectorXd h = point.empty() ? x : net::forward_one(point, x);
      Eigen::VectorXd phi = sngp.features(h);
      const double mean = sngp.beta.dot(phi);
      const double sd = std::sqrt(std::max(sngp.variance(phi), 0.0));
      auto rng = make_rng(seed, 47);
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (std::size_t k = 0; k < n; ++k) out.risk_samples.push_back(mean + sd * gauss(rng));
      break;
    }
  }
  return out;
}

std::size_t SurvivalModel::parameter_count() const {
  switch (backend) {
    case Backend::Mlp:
    case Backend::Mcd: return net::parameter_count(point);
    case Backend::Vi: {
      std::size_t n = 0;
      for (const auto& vl : vnet)
        n += static_cast<std::size_t>(vl.Wmu.size() + vl.Wrho.size() + vl.bmu.size() +
                                      vl.brho.size());
      return n;
    }
    case Backend::Sngp:
      return (point.empty() ? 0 : net::parameter_count(point)) +
             static_cast<std::size_t>(sngp.beta.size());
  }
  throw Error("parameter_count: bad backend tag");
}

SurvivalBand predict_survival_band(const SurvivalModel& model, const cox::BaselineHazard& base,
                                   const cox::TimeGrid& grid, const Eigen::VectorXd& x,
                                   std::size_t n, double level, std::uint64_t seed) {
  if (level <= 0.0 || level >= 1.0) throw Error("predict_survival_band: level must lie in (0,1)");
  if (n < 2) throw Error("predict_survival_band: need at least 2 draws");
  grid.validate();

  SurvivalBand band;
  band.draws = model.risk_draws(x, n, seed);
  band.draws.curves.reserve(n);
  band.draws.median_times.reserve(n);
  for (double r : band.draws.risk_samples) {
    cox::SurvivalCurve curve = cox::survival_curve(r, base, grid);
    band.draws.median_times.push_back(cox::median_survival_time(curve));
    band.draws.curves.push_back(std::move(curve));
  }

  const std::size_t K = grid.times.size();
  band.mean.grid = grid;
  band.lower.grid = grid;
  band.upper.grid = grid;
  band.mean.values.resize(K);
  band.lower.values.resize(K);
  band.upper.values.resize(K);
  const double lo_q = (1.0 - level) / 2.0;
  const double hi_q = (1.0 + level) / 2.0;
  std::vector<double> column(n);
  for (std::size_t k = 0; k < K; ++k) {
    // mean centered on the first draw: exact when every draw coincides, so a
    // point model's band collapses onto its mean curve bit for bit
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      column[j] = band.draws.curves[j].values[k];
      sum += column[j] - column[0];
    }
    band.mean.values[k] = column[0] + sum / static_cast<double>(n);
    band.lower.values[k] = quantile_linear(column, lo_q);
    band.upper.values[k] = quantile_linear(column, hi_q);
  }
  band.mean.validate();
  band.lower.validate();
  band.upper.validate();
  return band;
}

double quantile_linear(std::vector<double> samples, double q) {
  if (samples.empty()) throw Error("quantile_linear: empty sample set");
  if (q < 0.0 || q > 1.0) throw Error("quantile_linear: q must lie in [0,1]");
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  if (n == 1) return samples[0];
  const double h = static_cast<double>(n - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= n) return samples[n - 1];
  const double frac = h - std::floor(h);
  return samples[lo] + frac * (samples[lo + 1] - samples[lo]);
}

CredibleInterval credible_interval(const std::vector<double>& samples, double level) {
  if (samples.empty()) throw Error("credible_interval: empty sample set");
  if (samples.size() < 2) throw Error("credible_interval: need at least 2 samples");
  if (level <= 0.0 || level >= 1.0) throw Error("credible_interval: level must lie in (0,1)");
  CredibleInterval ci;
  ci.level = level;
  ci.lower = quantile_linear(samples, (1.0 - level) / 2.0);
  ci.upper = quantile_linear(samples, (1.0 + level) / 2.0);
  return ci;
}

namespace {

json net_to_doc(const net::Net& network) {
  return json::parse(net::net_to_json(network));
}

json matrix_to_doc(const Eigen::MatrixXd& M) {
  json arr = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r)
    for (Eigen::Index c = 0; c < M.cols(); ++c) arr.push_back(M(r, c));
  return arr;
}

Eigen::MatrixXd matrix_from_doc(const json& arr, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(arr.size()) != rows * cols)
    throw Error("checkpoint: matrix size mismatch");
  Eigen::MatrixXd M(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = arr[static_cast<std::size_t>(k++)].get<double>();
  return M;
}

}  // namespace

std::string SurvivalModel::to_json() const {
  json doc;
  doc["format"] = "survuq-model";
  doc["version"] = 1;
  doc["backend"] = backend_name(backend);
  doc["head"] = head == Head::CoxRisk ? "cox" : "gauss_time";
  switch (backend) {
    case Backend::Mlp: doc["net"] = net_to_doc(point); break;
    case Backend::Mcd:
      doc["net"] = net_to_doc(point);
      doc["mcd"] = {{"p_drop", mcd.p_drop}, {"n_samples", mcd.n_samples}, {"tau", mcd.tau}};
      break;
    case Backend::Vi: {
      doc["prior_std"] = prior_std;
      json layers = json::array();
      for (const auto& vl : vnet) {
        layers.push_back({{"out", vl.Wmu.rows()},
                          {"in", vl.Wmu.cols()},
                          {"activation", vl.act == net::Activation::Relu ? "relu" : "identity"},
                          {"w_mu", matrix_to_doc(vl.Wmu)},
                          {"w_rho", matrix_to_doc(vl.Wrho)},
                          {"b_mu", matrix_to_doc(vl.bmu)},
                          {"b_rho", matrix_to_doc(vl.brho)}});
      }
      doc["vi_layers"] = std::move(layers);
      break;
    }
    case Backend::Sngp:
      if (!point.empty()) doc["net"] = net_to_doc(point);
      doc["sngp"] = {{"m", sngp.beta.size()},
                     {"ridge", sngp.ridge},
                     {"feat_width", sngp.rff_weights.cols()},
                     {"rff_weights", matrix_to_doc(sngp.rff_weights)},
                     {"rff_bias", matrix_to_doc(sngp.rff_bias)},
                     {"beta", matrix_to_doc(sngp.beta)},
                     {"precision", matrix_to_doc(sngp.precision)}};
      break;
  }
  return doc.dump(2);
}

SurvivalModel SurvivalModel::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  if (doc.value("format", "") != "survuq-model") throw Error("checkpoint: wrong format tag");
  if (doc.value("version", 0) != 1) throw Error("checkpoint: unsupported version");
  SurvivalModel model;
  model.backend = backend_from_name(doc.at("backend").get<std::string>());
  const std::string head_tag = doc.value("head", "cox");
  if (head_tag == "cox")
    model.head = Head::CoxRisk;
  else if (head_tag == "gauss_time")
    model.head = Head::GaussianTime;
  else
    throw Error("checkpoint: unknown head '" + head_tag + "'");

  switch (model.backend) {
    case Backend::Mlp: model.point = net::net_from_json(doc.at("net").dump()); break;
    case Backend::Mcd: {
      model.point = net::net_from_json(doc.at("net").dump());
      const auto& m = doc.at("mcd");
      model.mcd.p_drop = m.at("p_drop").get<double>();
      model.mcd.n_samples = m.at("n_samples").get<std::size_t>();
      model.mcd.tau = m.at("tau").get<double>();
      model.mcd.validate();
      break;
    }
    case Backend::Vi: {
      model.prior_std = doc.at("prior_std").get<double>();
      for (const auto& jl : doc.at("vi_layers")) {
        VariationalLayer vl;
        const auto out = jl.at("out").get<Eigen::Index>();
        const auto in = jl.at("in").get<Eigen::Index>();
        vl.act = jl.at("activation").get<std::string>() == "relu" ? net::Activation::Relu
                                                                  : net::Activation::Identity;
        vl.Wmu = matrix_from_doc(jl.at("w_mu"), out, in);
        vl.Wrho = matrix_from_doc(jl.at("w_rho"), out, in);
        vl.bmu = matrix_from_doc(jl.at("b_mu"), out, 1);
        vl.brho = matrix_from_doc(jl.at("b_rho"), out, 1);
        model.vnet.push_back(std::move(vl));
      }
      if (model.vnet.empty()) throw Error("checkpoint: vi model has no layers");
      break;
    }
    case Backend::Sngp: {
      if (doc.contains("net")) model.point = net::net_from_json(doc.at("net").dump());
      const auto& s = doc.at("sngp");
      const auto m = s.at("m").get<Eigen::Index>();
      const auto fw = s.at("feat_width").get<Eigen::Index>();
      if (m <= 0 || fw <= 0) throw Error("checkpoint: bad sngp dimensions");
      model.sngp.ridge = s.at("ridge").get<double>();
      model.sngp.rff_weights = matrix_from_doc(s.at("rff_weights"), m, fw);
      model.sngp.rff_bias = matrix_from_doc(s.at("rff_bias"), m, 1);
      model.sngp.beta = matrix_from_doc(s.at("beta"), m, 1);
      model.sngp.precision = matrix_from_doc(s.at("precision"), m, m);
      break;
    }
  }
  return model;
}

}  // namespace survuq::prob
