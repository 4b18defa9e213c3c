#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "pufmoe/dataset.hpp"
#include "pufmoe/mope.hpp"
#include "pufmoe/nn.hpp"
#include "pufmoe/rng.hpp"
#include "pufmoe/training.hpp"

using namespace pufmoe;

namespace {

MatrixX random_pm1(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  MatrixX x(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) {
      x(i, j) = (rng.next_u64() & 1u) ? 1.0 : -1.0;
    }
  }
  return x;
}

MatrixX random_labels(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  MatrixX y(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) {
      y(i, j) = double(rng.next_u64() & 1u);
    }
  }
  return y;
}

}  // namespace

TEST_CASE("glorot_init stays inside its bounds") {
  const double limit32 = std::sqrt(6.0 / 64.0);
  const MatrixX w = glorot_init(32, 32, 5);
  CHECK(w.minCoeff() >= -limit32);
  CHECK(w.maxCoeff() <= limit32);
  CHECK(w == glorot_init(32, 32, 5));
  CHECK(w != glorot_init(32, 32, 6));

  const MatrixX tiny = glorot_init(1, 1, 7);
  CHECK(std::abs(tiny(0, 0)) <= std::sqrt(3.0));

  CHECK_THROWS_AS(glorot_init(0, 4, 1), std::invalid_argument);
}

TEST_CASE("sparse_softmax forward behaviour") {
  SUBCASE("uniform logits") {
    const VectorX out = sparse_softmax(VectorX::Zero(4), 1e-4);
    for (Index i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(0.25));
  }

  SUBCASE("tiny entries are zeroed with no renormalization") {
    VectorX logits(2);
    logits << 10.0, -10.0;
    // Plain softmax, evaluated independently.
    const double small = std::exp(-10.0) / (std::exp(10.0) + std::exp(-10.0));
    REQUIRE(small < 1e-4);
    const VectorX out = sparse_softmax(logits, 1e-4);
    CHECK(out[1] == 0.0);
    CHECK(out[0] == doctest::Approx(1.0 - small));
    CHECK(out[0] < 1.0);  // the survivor keeps its un-renormalized value
  }

  SUBCASE("tau = 0 equals plain softmax") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      VectorX logits(5);
      for (Index i = 0; i < 5; ++i) logits[i] = rng.uniform(-30.0, 30.0);
      CHECK(sparse_softmax(logits, 0.0) == softmax(logits));
    }
  }
}

TEST_CASE("sparse_softmax property suite (1000 random inputs)") {
  Rng rng(2024);
  const double tau = 1e-4;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index k = 1 + Index(rng.bounded(8));
    VectorX logits(k);
    for (Index i = 0; i < k; ++i) logits[i] = rng.uniform(-30.0, 30.0);
    const VectorX dense = softmax(logits);
    const VectorX out = sparse_softmax(logits, tau);

    Index argmax_dense = 0, argmax_sparse = 0;
    dense.maxCoeff(&argmax_dense);
    out.maxCoeff(&argmax_sparse);
    CHECK(argmax_dense == argmax_sparse);

    double sum = 0.0;
    for (Index i = 0; i < k; ++i) {
      CHECK(out[i] >= 0.0);
      CHECK((out[i] == 0.0 || out[i] >= tau));
      sum += out[i];
    }
    CHECK(sum >= 1.0 - double(k) * tau);
    CHECK(sum <= 1.0 + 1e-12);
  }
}

TEST_CASE("bce_loss closed-form cases") {
  MatrixX p(1, 2), y(1, 2);

  p << 1.0, 0.0;
  y << 1.0, 0.0;
  CHECK(bce_loss(p, y) >= 0.0);
  CHECK(bce_loss(p, y) <= 1.01e-7);  // clamp floor: -log(1 - 1e-7)

  p << 0.5, 0.5;
  y << 1.0, 0.0;
  CHECK(std::abs(bce_loss(p, y) - std::log(2.0)) <= 1e-12);

  p << 0.9, 0.1;
  y << 1.0, 0.0;
  CHECK(bce_loss(p, y) == doctest::Approx(-(std::log(0.9) + std::log(0.9)) / 2.0));
}

TEST_CASE("adam behaves like adam") {
  VectorX value = VectorX::Zero(3);
  VectorX grad = VectorX::Zero(3);
  std::vector<ParamView> params = {{value.data(), grad.data(), 3, "p"}};
  AdamState adam(0.01);

  SUBCASE("zero gradient leaves parameters unchanged") {
    adam.step(params);
    CHECK(value == VectorX::Zero(3));
  }

  SUBCASE("first step moves by about lr * sign(g)") {
    grad << 0.3, -2.0, 1e-3;
    adam.step(params);
    for (Index i = 0; i < 3; ++i) {
      const double expected = -0.01 * (grad[i] > 0 ? 1.0 : -1.0);
      CHECK(value[i] == doctest::Approx(expected).epsilon(1e-3));
    }
  }

  SUBCASE("constant gradient gives monotone motion") {
    grad << 0.5, -0.5, 0.25;
    VectorX prev = value;
    for (int step = 0; step < 50; ++step) {
      adam.step(params);
      CHECK(value[0] < prev[0]);
      CHECK(value[1] > prev[1]);
      CHECK(value[2] < prev[2]);
      prev = value;
    }
  }

  SUBCASE("non-finite gradient raises training-diverged") {
    grad << 1.0, std::numeric_limits<double>::quiet_NaN(), 0.0;
    CHECK_THROWS_AS(adam.step(params), TrainingDiverged);
  }
}

TEST_CASE("single sigmoid layer matches the textbook gradient") {
  DenseLayer layer = DenseLayer::make(3, 1, Activation::Sigmoid, 77);
  const MatrixX x = random_pm1(3, 5, 1);
  const MatrixX y = random_labels(1, 5, 2);

  DenseCache cache;
  dense_forward(layer, x, cache);
  MatrixX dprob;
  bce_grad(cache.a, y, dprob);
  layer.zero_grad();
  dense_backward(layer, x, cache, dprob, nullptr);

  const MatrixX expected_gw = ((cache.a - y) / 5.0) * x.transpose();
  const VectorX expected_gb = ((cache.a - y) / 5.0).rowwise().sum();
  CHECK((layer.gW - expected_gw).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((layer.gb - expected_gb).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("finite differences confirm the mlp backward pass") {
  Mlp mlp(6, {8, 8, 8}, 1, 42);
  const MatrixX x = random_pm1(6, 12, 3);
  const MatrixX y = random_labels(1, 12, 4);
  const GradCheckReport report = grad_check(mlp, x, y, 1e-5);
  CAPTURE(report.max_rel_error);
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("finite differences confirm the share-bottom (multi-head) backward pass") {
  Mlp mlp(5, {8, 6}, 3, 7);
  const MatrixX x = random_pm1(5, 9, 8);
  const MatrixX y = random_labels(3, 9, 9);
  const GradCheckReport report = grad_check(mlp, x, y, 1e-5);
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("finite differences confirm the full mope backward pass") {
  const MatrixX x = random_pm1(10, 8, 5);
  const MatrixX y = random_labels(1, 8, 6);

  SUBCASE("tau = 0") {
    MopeConfig cfg;
    cfg.num_experts = 3;
    cfg.expert_hidden = {6, 6};
    cfg.tower_hidden = 4;
    cfg.tau = 0.0;
    cfg.seed = 21;
    MopeNetwork net(10, cfg);
    const GradCheckReport report = grad_check(net, x, y, 1e-5);
    CAPTURE(report.max_rel_error);
    CHECK(report.max_rel_error <= 1e-4);
  }

  SUBCASE("tau = 1e-4 away from the mask boundary") {
    MopeConfig cfg;
    cfg.num_experts = 3;
    cfg.expert_hidden = {6, 6};
    cfg.tower_hidden = 4;
    cfg.tau = 1e-4;
    cfg.seed = 21;
    MopeNetwork net(10, cfg);
    // Precondition for differentiability: no gate entry within 10h of tau.
    const MatrixX g = net.gate_weights(x);
    double closest = 1.0;
    for (Index j = 0; j < g.cols(); ++j) {
      for (Index i = 0; i < g.rows(); ++i) {
        closest = std::min(closest, std::abs(g(i, j) - cfg.tau));
      }
    }
    REQUIRE(closest > 10.0 * 1e-5);
    const GradCheckReport report = grad_check(net, x, y, 1e-5);
    CAPTURE(report.max_rel_error);
    CHECK(report.max_rel_error <= 1e-4);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  const CrpSet data = generate_crps({parse_puf_spec("apuf", 16, 12)}, 34, 600);
  TrainSchedule sched;
  sched.max_epochs = 12;

  Mlp a(16, {8, 8}, 1, 55);
  Mlp b(16, {8, 8}, 1, 55);
  fit(a, data, sched, 91);
  fit(b, data, sched, 91);
  CHECK(snapshot(a.params()) == snapshot(b.params()));
}

TEST_CASE("mlp checkpoints round-trip bit-exactly") {
  Mlp mlp(7, {5, 4}, 2, 3);
  std::stringstream buffer;
  mlp.save(buffer);
  Mlp loaded = Mlp::load(buffer);
  CHECK(snapshot(mlp.params()) == snapshot(loaded.params()));

  const MatrixX x = random_pm1(7, 6, 10);
  CHECK(mlp.predict(x) == loaded.predict(x));
}

TEST_CASE("batch softmax agrees with the vector form") {
  Rng rng(14);
  MatrixX logits(6, 20);
  for (Index j = 0; j < logits.cols(); ++j) {
    for (Index i = 0; i < logits.rows(); ++i) logits(i, j) = rng.uniform(-25.0, 25.0);
  }
  MatrixX batch;
  softmax_columns(logits, batch);
  for (Index j = 0; j < logits.cols(); ++j) {
    CHECK(batch.col(j) == softmax(logits.col(j)));
  }
}
