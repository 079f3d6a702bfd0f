#include <doctest.h>

#include <cmath>

#include "fedsim/trainer.hpp"

using namespace fedsim;

namespace {

// Scalar model with loss w^2: linear regression, one weight, no bias, and a
// single example (x=1, y=0), so the gradient is exactly 2w every step.
ToyModel scalar_quadratic_model(double weight_decay = 0.0) {
  ToyModel::Shape s;
  s.kind = ModelKind::linear_regression;
  s.input_dim = 1;
  s.output_dim = 1;
  s.with_bias = false;
  s.weight_decay = weight_decay;
  return ToyModel(s);
}

Dataset single_example_dataset(double x, double y) {
  Dataset d;
  d.input_dim = 1;
  d.target_dim = 1;
  d.examples.push_back({{x}, {y}});
  return d;
}

// Independently hand-stepped Adam on the scalar quadratic.
double adam_oracle_scalar(double w0, const TrainerConfig& cfg, int steps) {
  double w = w0, m = 0.0, v = 0.0;
  for (int l = 1; l <= steps; ++l) {
    const double g = 2.0 * w;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double rate = cfg.eta *
                        std::sqrt(1.0 - std::pow(cfg.beta2, static_cast<double>(l))) /
                        (1.0 - std::pow(cfg.beta1, static_cast<double>(l)));
    w -= rate * m / (std::sqrt(v) + cfg.epsilon);
  }
  return w;
}

TrainerConfig default_cfg() {
  TrainerConfig cfg;
  cfg.eta = 1e-2;
  cfg.num_local_epochs = 1;
  cfg.batch_size = 1;
  cfg.momentum_mode = MomentumMode::restart;
  return cfg;
}

const PrivacyPolicy kGateOff{};

}  // namespace

TEST_CASE("single adam step matches the hand-stepped oracle") {
  const ToyModel model = scalar_quadratic_model();
  const Dataset data = single_example_dataset(1.0, 0.0);
  const TrainerConfig cfg = default_cfg();
  const double w0 = 0.7;
  OptimizerState state = OptimizerState::zeros(1);
  Rng train_rng(1), noise_rng(2);
  const LocalTrainResult res = local_training(model, {w0}, data, cfg, state,
                                              kGateOff, train_rng, noise_rng);
  REQUIRE(res.update.delta.size() == 1);
  const double w1 = w0 + res.update.delta.values[0];
  CHECK(w1 == doctest::Approx(adam_oracle_scalar(w0, cfg, 1)).epsilon(1e-14));

  // The first step is close to -eta * sign(g).
  const double c = 2.0 * w0;
  const double expected_step =
      -cfg.eta * std::sqrt(1.0 - cfg.beta2) / (1.0 - cfg.beta1) *
      (1.0 - cfg.beta1) * c /
      (std::sqrt(1.0 - cfg.beta2) * std::fabs(c) + cfg.epsilon);
  CHECK(res.update.delta.values[0] == doctest::Approx(expected_step).epsilon(1e-12));
}

TEST_CASE("bias-corrected rate at l=1 is eta * sqrt(1-beta2)/(1-beta1)") {
  const ToyModel model = scalar_quadratic_model();
  const Dataset data = single_example_dataset(1.0, 0.0);
  const TrainerConfig cfg = default_cfg();  // beta1=0.9, beta2=0.999
  const double w0 = 1.3;
  OptimizerState state = OptimizerState::zeros(1);
  Rng train_rng(1), noise_rng(2);
  const LocalTrainResult res = local_training(model, {w0}, data, cfg, state,
                                              kGateOff, train_rng, noise_rng);
  // Recover the applied rate from the observed step.
  const double c = 2.0 * w0;
  const double step = res.update.delta.values[0];
  const double m1 = (1.0 - cfg.beta1) * c;
  const double sqrt_v1 = std::sqrt(1.0 - cfg.beta2) * std::fabs(c);
  const double rate_observed = -step * (sqrt_v1 + cfg.epsilon) / m1;
  const double expected_ratio = std::sqrt(1.0 - cfg.beta2) / (1.0 - cfg.beta1);
  CHECK(std::fabs(rate_observed / cfg.eta - expected_ratio) < 1e-12);
  CHECK(expected_ratio == doctest::Approx(0.31622776601683794).epsilon(1e-12));
}

TEST_CASE("20-step trajectory matches the oracle to 1e-12") {
  const ToyModel model = scalar_quadratic_model();
  const Dataset data = single_example_dataset(1.0, 0.0);
  const double w0 = 0.9;
  for (int steps = 1; steps <= 20; ++steps) {
    TrainerConfig cfg = default_cfg();
    cfg.num_local_epochs = static_cast<std::uint32_t>(steps);
    OptimizerState state = OptimizerState::zeros(1);
    Rng train_rng(1), noise_rng(2);
    const LocalTrainResult res = local_training(model, {w0}, data, cfg, state,
                                                kGateOff, train_rng, noise_rng);
    const double w_end = w0 + res.update.delta.values[0];
    CHECK(std::fabs(w_end - adam_oracle_scalar(w0, cfg, steps)) < 1e-12);
  }
}

TEST_CASE("n_local is N_c times num_local_epochs") {
  Dataset data;
  data.input_dim = 1;
  data.target_dim = 1;
  for (int i = 0; i < 5; ++i) data.examples.push_back({{0.1 * i}, {0.0}});
  TrainerConfig cfg = default_cfg();
  cfg.num_local_epochs = 2;
  const ToyModel model = scalar_quadratic_model();
  OptimizerState state = OptimizerState::zeros(1);
  Rng train_rng(1), noise_rng(2);
  const LocalTrainResult res = local_training(model, {0.4}, data, cfg, state,
                                              kGateOff, train_rng, noise_rng);
  CHECK(res.update.n_local == 10);
}

TEST_CASE("constant loss leaves the model and moments at zero") {
  // Generating weights on noise-free data: every gradient is exactly zero.
  SynthSpec spec;
  spec.kind = ModelKind::linear_regression;
  spec.input_dim = 4;
  spec.noise = 0.0;
  auto synth = synth_dataset(spec, 5, 12);
  ToyModel::Shape shape;
  shape.kind = ModelKind::linear_regression;
  shape.input_dim = 4;
  shape.weight_decay = 0.0;
  const ToyModel model(shape);
  TrainerConfig cfg = default_cfg();
  cfg.num_local_epochs = 3;
  OptimizerState state = OptimizerState::zeros(model.param_count());
  Rng train_rng(1), noise_rng(2);
  const LocalTrainResult res =
      local_training(model, synth.generating_params, synth.data, cfg, state,
                     kGateOff, train_rng, noise_rng);
  for (double v : res.update.delta.values) CHECK(v == 0.0);
  for (double v : state.m) CHECK(v == 0.0);
  for (double v : state.v) CHECK(v == 0.0);
}

TEST_CASE("restart mode clears inherited moments") {
  const ToyModel model = scalar_quadratic_model();
  const Dataset data = single_example_dataset(1.0, 0.0);
  const TrainerConfig cfg = default_cfg();
  OptimizerState fresh = OptimizerState::zeros(1);
  OptimizerState polluted{{123.0}, {456.0}, 0};
  Rng rng_a(1), rng_b(1), noise_a(2), noise_b(2);
  const auto res_fresh =
      local_training(model, {0.5}, data, cfg, fresh, kGateOff, rng_a, noise_a);
  const auto res_polluted =
      local_training(model, {0.5}, data, cfg, polluted, kGateOff, rng_b, noise_b);
  CHECK(res_fresh.update.delta == res_polluted.update.delta);
  CHECK(polluted.step == 1);
}

TEST_CASE("restart counter semantics: keep continues l, reset re-warms") {
  const ToyModel model = scalar_quadratic_model();
  const Dataset data = single_example_dataset(1.0, 0.0);
  OptimizerState stale{{9.0}, {9.0}, 40};

  TrainerConfig keep = default_cfg();  // restart_resets_counter = false
  OptimizerState keep_state = stale;
  Rng rng_a(1), noise_a(2);
  local_training(model, {0.5}, data, keep, keep_state, kGateOff, rng_a, noise_a);
  CHECK(keep_state.step == 41);
  CHECK(keep_state.m[0] != 0.0);  // rebuilt from the fresh gradient

  TrainerConfig reset = default_cfg();
  reset.restart_resets_counter = true;
  OptimizerState reset_state = stale;
  Rng rng_b(1), noise_b(2);
  const auto res_reset = local_training(model, {0.5}, data, reset, reset_state,
                                        kGateOff, rng_b, noise_b);
  CHECK(reset_state.step == 1);
  // With l back at 1 the first step matches the fresh-state oracle exactly.
  CHECK(0.5 + res_reset.update.delta.values[0] ==
        doctest::Approx(adam_oracle_scalar(0.5, reset, 1)).epsilon(1e-14));
}

TEST_CASE("baseline_m carries moments and the step counter across rounds") {
  const ToyModel model = scalar_quadratic_model();
  const Dataset data = single_example_dataset(1.0, 0.0);
  TrainerConfig cfg = default_cfg();
  cfg.momentum_mode = MomentumMode::baseline_m;
  OptimizerState state = OptimizerState::zeros(1);
  Rng train_rng(1), noise_rng(2);
  double w = 0.8;
  const auto r1 = local_training(model, {w}, data, cfg, state, kGateOff,
                                 train_rng, noise_rng);
  const OptimizerState snapshot = state;
  w += r1.update.delta.values[0];
  const auto r2 = local_training(model, {w}, data, cfg, state, kGateOff,
                                 train_rng, noise_rng);
  CHECK(state.step == 2);
  // Continuous Adam from the oracle: two rounds of baseline_m on the same
  // data equal two uninterrupted steps.
  CHECK(w + r2.update.delta.values[0] ==
        doctest::Approx(adam_oracle_scalar(0.8, cfg, 2)).epsilon(1e-13));
  CHECK(snapshot.step == 1);
}

TEST_CASE("m_aggregation seeds moments from the server and uploads deltas") {
  // All-zero inputs on a bias-free model: the gradient is identically zero
  // no matter where warm momentum pushes the weights, so m decays as
  // beta1^n * m0 and the uploaded delta is exactly (beta1^n - 1) * m0.
  const ToyModel model = scalar_quadratic_model();
  Dataset data;
  data.input_dim = 1;
  data.target_dim = 1;
  for (int i = 0; i < 6; ++i) data.examples.push_back({{0.0}, {0.0}});
  TrainerConfig cfg = default_cfg();
  cfg.momentum_mode = MomentumMode::m_aggregation;
  AggregatedMoments server;
  server.m = {0.25};
  server.v = {0.5};
  OptimizerState state = OptimizerState::zeros(1);
  Rng train_rng(1), noise_rng(2);
  const auto res = local_training(model, {0.4}, data, cfg, state, kGateOff,
                                  train_rng, noise_rng, &server);
  REQUIRE(res.update.momentum_delta.has_value());
  const double n = 6.0;
  const double expect_dm = (std::pow(cfg.beta1, n) - 1.0) * 0.25;
  const double expect_dv = (std::pow(cfg.beta2, n) - 1.0) * 0.5;
  CHECK(res.update.momentum_delta->m[0] == doctest::Approx(expect_dm).epsilon(1e-13));
  CHECK(res.update.momentum_delta->v[0] == doctest::Approx(expect_dv).epsilon(1e-13));
  auto call_without_moments = [&] {
    OptimizerState s2 = OptimizerState::zeros(1);
    Rng a(1), b(2);
    local_training(model, {0.4}, data, cfg, s2, kGateOff, a, b, nullptr);
  };
  CHECK_THROWS_AS(call_without_moments(), std::invalid_argument);
}

TEST_CASE("fixed seeds give bit-identical updates") {
  SynthSpec spec;
  spec.kind = ModelKind::logistic_classifier;
  spec.input_dim = 6;
  spec.output_dim = 3;
  auto synth = synth_dataset(spec, 8, 30);
  ToyModel::Shape shape;
  shape.kind = ModelKind::logistic_classifier;
  shape.input_dim = 6;
  shape.output_dim = 3;
  const ToyModel model(shape);
  TrainerConfig cfg = default_cfg();
  cfg.num_local_epochs = 2;
  const ParamVector w0 = model.init_params(3);
  auto run_once = [&] {
    OptimizerState state = OptimizerState::zeros(model.param_count());
    Rng train_rng(derive_seed(77, 0, 1)), noise_rng(derive_seed(78, 0, 1));
    return local_training(model, w0, synth.data, cfg, state, kGateOff,
                          train_rng, noise_rng);
  };
  const auto a = run_once();
  const auto b = run_once();
  CHECK(a.update.delta == b.update.delta);
  CHECK(a.update.n_local == b.update.n_local);
  CHECK(a.stats.mean_train_loss == b.stats.mean_train_loss);
}

TEST_CASE("federated gradient basics") {
  CHECK(federated_gradient({1.0, 2.0}, {1.0, 2.0}) == ParamVector{0.0, 0.0});
  const ParamVector u{0.5, -0.25, 4.0};
  const ParamVector start{1.0, 1.0, 1.0};
  ParamVector end(3);
  for (int i = 0; i < 3; ++i) end[i] = start[i] + u[i];
  CHECK(federated_gradient(end, start) == u);
  CHECK_THROWS_AS(federated_gradient({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("federated gradient after k constant-gradient sgd steps") {
  // Hand-unrolled SGD: w <- w - eta * g, constant g.
  const double eta = 0.05, g = 0.3;
  ParamVector w{2.0, -1.0};
  const ParamVector w0 = w;
  const int k = 7;
  for (int step = 0; step < k; ++step) {
    for (double& x : w) x -= eta * g;
  }
  const ParamVector delta = federated_gradient(w, w0);
  for (double d : delta) CHECK(d == doctest::Approx(-k * eta * g).epsilon(1e-12));
}

TEST_CASE("empty shard and non-finite data are rejected") {
  const ToyModel model = scalar_quadratic_model();
  const TrainerConfig cfg = default_cfg();
  OptimizerState state = OptimizerState::zeros(1);
  Rng train_rng(1), noise_rng(2);
  Dataset empty;
  empty.input_dim = 1;
  empty.target_dim = 1;
  CHECK_THROWS_AS(local_training(model, {0.1}, empty, cfg, state, kGateOff,
                                 train_rng, noise_rng),
                  std::invalid_argument);
  const Dataset poisoned = single_example_dataset(
      std::numeric_limits<double>::infinity(), 0.0);
  OptimizerState s2 = OptimizerState::zeros(1);
  CHECK_THROWS_AS(local_training(model, {0.1}, poisoned, cfg, s2, kGateOff,
                                 train_rng, noise_rng),
                  std::runtime_error);
}
