#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "survuq/tensorcore.hpp"

using namespace survuq;
using namespace survuq::net;

namespace {

Net identity_net(Eigen::Index d) {
  DenseLayer l;
  l.W = Eigen::MatrixXd::Identity(d, d);
  l.b = Eigen::VectorXd::Zero(d);
  l.act = Activation::Identity;
  return {l};
}

// Mean squared loss against fixed targets; used to drive grad checks.
struct SquaredLoss {
  Eigen::MatrixXd X, Y;

  double value(const Net& n) const {
    Eigen::MatrixXd out = forward(n, X);
    return (out - Y).squaredNorm();
  }
  NetGrads grads(const Net& n) const {
    ForwardCache cache;
    Eigen::MatrixXd out = forward(n, X, &cache);
    Eigen::MatrixXd dY = 2.0 * (out - Y);
    return backward(n, cache, dY);
  }
};

}  // namespace

TEST_CASE("forward identity and bias pathways") {
  Net id = identity_net(3);
  Eigen::MatrixXd X(2, 3);
  X << 1.0, -2.0, 0.5, 3.0, 0.0, -1.0;
  CHECK((forward(id, X) - X).norm() == doctest::Approx(0.0));

  DenseLayer zl;
  zl.W = Eigen::MatrixXd::Zero(2, 3);
  zl.b = Eigen::VectorXd(2);
  zl.b << 0.7, -0.3;
  zl.act = Activation::Identity;
  Eigen::MatrixXd out = forward({zl}, X);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    CHECK(out(r, 0) == doctest::Approx(0.7));
    CHECK(out(r, 1) == doctest::Approx(-0.3));
  }
}

TEST_CASE("two-layer relu net matches hand expansion") {
  DenseLayer l1;
  l1.W = Eigen::MatrixXd(2, 2);
  l1.W << 1.0, -2.0, -3.0, 1.0;
  l1.b = Eigen::VectorXd(2);
  l1.b << 0.5, -0.5;
  l1.act = Activation::Relu;
  DenseLayer l2;
  l2.W = Eigen::MatrixXd(1, 2);
  l2.W << 1.0, -2.0;
  l2.b = Eigen::VectorXd(1);
  l2.b << 0.25;
  l2.act = Activation::Identity;
  Net net{l1, l2};

  Eigen::VectorXd x(2);
  x << 1.0, -1.0;
  // pre1 = (3.5, -4.5) -> relu (3.5, 0) -> 1*3.5 - 2*0 + 0.25 = 3.75
  Eigen::VectorXd y = forward_one(net, x);
  CHECK(y(0) == doctest::Approx(3.75).epsilon(1e-12));
}

TEST_CASE("forward rejects shape mismatches") {
  Net id = identity_net(3);
  Eigen::MatrixXd wrong(2, 4);
  wrong.setZero();
  CHECK_THROWS_AS(forward(id, wrong), Error);
}

TEST_CASE("backward matches finite differences on a relu net") {
  Net net = make_mlp({4, 5, 3, 1}, 77);
  // Nudge biases off zero so no pre-activation can land exactly on the relu
  // kink (a sample with every upstream unit dead would otherwise hit it).
  for (auto& layer : net) layer.b.setConstant(0.1);
  Eigen::MatrixXd X(6, 4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index c = 0; c < X.cols(); ++c) X(r, c) = u(rng);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Constant(6, 1, 0.3);

  // The fixture must stay clear of the kink by more than the probe step.
  ForwardCache cache;
  forward(net, X, &cache);
  for (std::size_t i = 0; i + 1 < cache.pre.size(); ++i)
    REQUIRE(cache.pre[i].cwiseAbs().minCoeff() > 1e-3);

  SquaredLoss loss{X, Y};
  GradCheckReport rep =
      grad_check(net, [&](const Net& n) { return loss.value(n); }, loss.grads(net));
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("linear layer with squared loss has the classic gradient form") {
  Net lin = identity_net(1);
  lin[0].W(0, 0) = 0.8;
  lin[0].b(0) = 0.1;
  Eigen::MatrixXd X(3, 1), Y(3, 1);
  X << 1.0, -2.0, 0.5;
  Y << 0.5, 0.5, 0.5;

  SquaredLoss loss{X, Y};
  NetGrads g = loss.grads(lin);
  // d/dW sum (wx+b-y)^2 = sum 2(wx+b-y)x
  double want_w = 0.0, want_b = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double r = lin[0].W(0, 0) * X(i, 0) + lin[0].b(0) - Y(i, 0);
    want_w += 2.0 * r * X(i, 0);
    want_b += 2.0 * r;
  }
  CHECK(g[0].dW(0, 0) == doctest::Approx(want_w).epsilon(1e-12));
  CHECK(g[0].db(0) == doctest::Approx(want_b).epsilon(1e-12));

  GradCheckReport rep =
      grad_check(lin, [&](const Net& n) { return loss.value(n); }, g, 1e-5);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Net net = make_mlp({3, 4, 1}, 9);
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(5, 3);
  ForwardCache cache;
  forward(net, X, &cache);
  NetGrads g = backward(net, cache, Eigen::MatrixXd::Zero(5, 1));
  for (const auto& lg : g) {
    CHECK(lg.dW.norm() == 0.0);
    CHECK(lg.db.norm() == 0.0);
  }
}

TEST_CASE("dropout masks cover the degenerate rates") {
  DropoutMasks none = sample_dropout_masks({10, 6, 1}, 4, 0.0, 1);
  REQUIRE(none.masks.size() == 1);  // one hidden layer
  CHECK(none.masks[0].minCoeff() == 1.0);
  CHECK(none.masks[0].maxCoeff() == 1.0);

  DropoutMasks all = sample_dropout_masks({10, 6, 1}, 4, 1.0, 1);
  CHECK(all.masks[0].norm() == 0.0);
}

TEST_CASE("dropout keep fraction concentrates around 1-p") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    DropoutMasks m = sample_dropout_masks({5, 1000, 1}, 1, 0.5, seed);
    const double kept =
        (m.masks[0].array() != 0.0).cast<double>().sum() / static_cast<double>(m.masks[0].size());
    CHECK(kept >= 0.45);
    CHECK(kept <= 0.55);
  }
}

TEST_CASE("dropout masks scale kept units by 1/(1-p)") {
  DropoutMasks m = sample_dropout_masks({3, 50, 1}, 2, 0.25, 3);
  for (Eigen::Index r = 0; r < m.masks[0].rows(); ++r)
    for (Eigen::Index c = 0; c < m.masks[0].cols(); ++c) {
      const double v = m.masks[0](r, c);
      CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    }
}

TEST_CASE("frozen masks flow through forward and backward") {
  Net net = make_mlp({4, 8, 1}, 13);
  DropoutMasks masks = sample_dropout_masks({4, 8, 1}, 3, 0.5, 99);
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(3, 4);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(3, 1);

  auto value = [&](const Net& n) {
    return (forward(n, X, nullptr, &masks) - Y).squaredNorm();
  };
  ForwardCache cache;
  Eigen::MatrixXd out = forward(net, X, &cache, &masks);
  NetGrads g = backward(net, cache, 2.0 * (out - Y));
  GradCheckReport rep = grad_check(net, value, g);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("spectral normalization closed-form cases") {
  Eigen::MatrixXd I3 = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd u;
  const double s = spectral_normalize(I3, 1.0, 50, u);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  CHECK((I3 - Eigen::MatrixXd::Identity(3, 3)).norm() == doctest::Approx(0.0).epsilon(1e-9));

  Eigen::MatrixXd D(2, 2);
  D << 2.0, 0.0, 0.0, 1.0;
  Eigen::VectorXd u2;
  const double s2 = spectral_normalize(D, 1.0, 100, u2);
  CHECK(s2 == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(D(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(D(1, 1) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("spectral estimate matches the frozen svd oracle") {
  Eigen::MatrixXd W(5, 3);
  W << -0.8473834212520857, 0.5598375844802292, -0.123181537118213,
      0.44693035566188244, 0.9559790239932053, 0.07699174082086735,
      0.002240927319875796, -0.8558977332804769, -0.46312203979625766,
      -0.00023499834888007776, 0.35845999224188096, 0.6074780722087509,
      -0.23811773370292322, -0.8681273061881898, -0.4237088013840129;
  Eigen::MatrixXd Wc = W;
  Eigen::VectorXd u;
  const double sigma = spectral_normalize(Wc, 1.0, 50, u);
  CHECK(std::abs(sigma - 1.8063401649654502) < 1e-3);

  // after the hard bound, a fresh estimate stays under c + 1e-3
  Eigen::VectorXd u3;
  Eigen::MatrixXd probe = Wc;
  const double after = spectral_normalize(probe, 1.0, 50, u3);
  CHECK(after <= 1.0 + 1e-3);
}

TEST_CASE("adam holds still at zero gradient and steps by lr at first") {
  Adam opt(0.05);
  Eigen::VectorXd w(2);
  w << 1.0, -2.0;
  opt.begin_step();
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  opt.update("w", w, zero);
  CHECK(w(0) == 1.0);
  CHECK(w(1) == -2.0);

  // first nonzero step moves each coordinate by lr*sign(g); use a fresh
  // optimizer so the zero-gradient step above does not advance its clock
  Adam fresh(0.05);
  Eigen::VectorXd g(2);
  g << 0.3, -4.0;
  fresh.begin_step();
  fresh.update("w", w, g);
  CHECK(w(0) == doctest::Approx(1.0 - 0.05).epsilon(1e-6));
  CHECK(w(1) == doctest::Approx(-2.0 + 0.05).epsilon(1e-6));
}

TEST_CASE("adam ten-step trajectory matches the scalar oracle") {
  auto run = [](double wd) {
    Adam opt(0.1, wd);
    Eigen::VectorXd w(1);
    w << 1.0;
    for (int t = 0; t < 10; ++t) {
      Eigen::VectorXd g(1);
      g << 2.0 * w(0);
      opt.begin_step();
      opt.update("w", w, g);
    }
    return w(0);
  };
  CHECK(run(0.0) == doctest::Approx(0.07624915560691221).epsilon(1e-10));
  CHECK(run(0.01) == doctest::Approx(0.07169549708798666).epsilon(1e-10));
}

TEST_CASE("adam rejects non-finite gradients and names the parameter") {
  Adam opt(0.1);
  Eigen::VectorXd w(1);
  w << 1.0;
  Eigen::VectorXd g(1);
  g << std::numeric_limits<double>::infinity();
  opt.begin_step();
  try {
    opt.update("net.layer0.W", w, g);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("net.layer0.W") != std::string::npos);
  }
}

TEST_CASE("l2 penalty value and gradient") {
  Net net = make_mlp({2, 3, 1}, 4);
  NetGrads g = zero_grads(net);
  CHECK(l2_penalty(net, 0.0, &g) == 0.0);
  for (const auto& lg : g) CHECK(lg.dW.norm() == 0.0);

  DenseLayer single;
  single.W = Eigen::MatrixXd::Constant(1, 1, 3.0);
  single.b = Eigen::VectorXd::Zero(1);
  Net one{single};
  NetGrads g1 = zero_grads(one);
  CHECK(l2_penalty(one, 0.5, &g1) == doctest::Approx(4.5).epsilon(1e-12));
  CHECK(g1[0].dW(0, 0) == doctest::Approx(3.0).epsilon(1e-12));

  double direct = 0.0;
  for (const auto& l : net) direct += l.W.squaredNorm() + l.b.squaredNorm();
  CHECK(l2_penalty(net, 0.7) == doctest::Approx(0.7 * direct).epsilon(1e-12));
}

TEST_CASE("make_mlp is deterministic and counts parameters") {
  Net a = make_mlp({91, 32, 1}, 42);
  Net b = make_mlp({91, 32, 1}, 42);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK((a[i].W - b[i].W).norm() == 0.0);
    CHECK((a[i].b - b[i].b).norm() == 0.0);
  }
  CHECK(parameter_count(a) == 2977);  // 91*32+32 + 32*1+1
  CHECK(a[0].act == Activation::Relu);
  CHECK(a[1].act == Activation::Identity);

  Net c = make_mlp({91, 32, 1}, 43);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i].W - c[i].W).norm();
  CHECK(diff > 0.0);
}

TEST_CASE("net json round trip") {
  Net net = make_mlp({3, 4, 2}, 17);
  Net back = net_from_json(net_to_json(net));
  REQUIRE(back.size() == net.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    CHECK((back[i].W - net[i].W).norm() == 0.0);
    CHECK((back[i].b - net[i].b).norm() == 0.0);
    CHECK(back[i].act == net[i].act);
  }
  CHECK_THROWS_AS(net_from_json("{\"format\":\"wrong\"}"), Error);
}

TEST_CASE("train config validation") {
  TrainConfig ok;
  ok.validate();
  TrainConfig bad_lr = ok;
  bad_lr.learning_rate = 0.0;
  CHECK_THROWS_AS(bad_lr.validate(), Error);
  TrainConfig bad_pat = ok;
  bad_pat.patience = 0;
  CHECK_THROWS_AS(bad_pat.validate(), Error);
}
