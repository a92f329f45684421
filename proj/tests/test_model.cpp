#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fedplant/errors.hpp"
#include "fedplant/model.hpp"
#include "fedplant/rng.hpp"

using namespace fedplant;

namespace {

// Independent oracle: central finite differences of mse_loss(forward(.)).
Gradient finite_difference_gradient(const ParameterVector& params,
                                    const ModelArchitecture& arch,
                                    const Matrix& inputs, const Matrix& targets,
                                    double step = 1e-6) {
  auto loss_at = [&](const ParameterVector& p) {
    Matrix pred(inputs.rows(), targets.cols());
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
      const auto y = forward(p, arch, inputs.row(i));
      for (std::size_t j = 0; j < y.size(); ++j) pred.at(i, j) = y[j];
    }
    return mse_loss(pred, targets);
  };
  Gradient g;
  g.values.resize(params.values.size());
  ParameterVector probe = params;
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    probe.values[i] = params.values[i] + step;
    const double up = loss_at(probe);
    probe.values[i] = params.values[i] - step;
    const double down = loss_at(probe);
    probe.values[i] = params.values[i];
    g.values[i] = (up - down) / (2.0 * step);
  }
  return g;
}

ModelArchitecture random_small_arch(Rng& rng) {
  ModelArchitecture arch;
  arch.input_dim = 1 + static_cast<int>(rng.next_index(8));
  const int depth = static_cast<int>(rng.next_index(4));  // 0..3 hidden layers
  for (int l = 0; l < depth; ++l) {
    arch.hidden_layers.push_back(1 + static_cast<int>(rng.next_index(8)));
  }
  arch.output_dim = 1 + static_cast<int>(rng.next_index(4));
  arch.activation = rng.next_index(2) == 0 ? Activation::kRelu : Activation::kTanh;
  return arch;
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m.at(i, j) = rng.uniform(-scale, scale);
  }
  return m;
}

}  // namespace

TEST_CASE("parameter count follows (fan_in+1)*fan_out") {
  ModelArchitecture linear{1, {}, 1, Activation::kRelu};
  CHECK(linear.parameter_count() == 2);

  ModelArchitecture net{5, {8}, 2, Activation::kRelu};
  CHECK(net.parameter_count() == 66);  // 5*8+8 + 8*2+2
}

TEST_CASE("init_params is deterministic and Glorot-bounded with zero biases") {
  ModelArchitecture arch{5, {8}, 2, Activation::kRelu};
  const auto a = init_params(arch, 1234);
  const auto b = init_params(arch, 1234);
  REQUIRE(a.values.size() == arch.parameter_count());
  CHECK(std::memcmp(a.values.data(), b.values.data(), a.values.size() * 8) == 0);

  const auto c = init_params(arch, 1235);
  CHECK(a.values != c.values);

  // Layer 1: 40 weights bounded by sqrt(6/13), then 8 zero biases.
  const double limit1 = std::sqrt(6.0 / 13.0);
  for (int i = 0; i < 40; ++i) CHECK(std::abs(a.values[i]) < limit1);
  for (int i = 40; i < 48; ++i) CHECK(a.values[i] == 0.0);
  // Layer 2 biases are the last 2 entries.
  CHECK(a.values[64] == 0.0);
  CHECK(a.values[65] == 0.0);
}

TEST_CASE("forward: linear model") {
  ModelArchitecture arch{1, {}, 1, Activation::kRelu};
  ParameterVector params{{2.0, 1.0}, arch.hash()};
  const auto y = forward(params, arch, std::vector<double>{3.0});
  REQUIRE(y.size() == 1);
  CHECK(y[0] == doctest::Approx(7.0));
}

TEST_CASE("forward: all-zero parameters give zero output") {
  ModelArchitecture arch{3, {4}, 2, Activation::kTanh};
  ParameterVector params{std::vector<double>(arch.parameter_count(), 0.0), arch.hash()};
  const auto y = forward(params, arch, std::vector<double>{0.7, -2.0, 5.0});
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
}

TEST_CASE("forward: relu net with dead hidden layer passes only the bias") {
  // 2-2-1 net, W1=[[0.5,-0.25],[0.75,0.5]], b1=[0.1,-0.5], W2=[[1.5,-2.0]], b2=[0.3].
  ModelArchitecture arch{2, {2}, 1, Activation::kRelu};
  ParameterVector params{{0.5, -0.25, 0.75, 0.5, 0.1, -0.5, 1.5, -2.0, 0.3}, arch.hash()};

  // Input [-1,2]: both hidden pre-activations negative -> output = output bias.
  auto y = forward(params, arch, std::vector<double>{-1.0, 2.0});
  CHECK(y[0] == doctest::Approx(0.3));

  // Input [1,0.5]: hand-computed through the active path.
  y = forward(params, arch, std::vector<double>{1.0, 0.5});
  CHECK(y[0] == doctest::Approx(0.0125));
}

TEST_CASE("forward rejects dimension mismatches") {
  ModelArchitecture arch{2, {}, 1, Activation::kRelu};
  ParameterVector params{{1.0, 1.0, 0.0}, arch.hash()};
  CHECK_THROWS_AS(forward(params, arch, std::vector<double>{1.0}), ContractViolation);
  ParameterVector short_params{{1.0}, arch.hash()};
  CHECK_THROWS_AS(forward(short_params, arch, std::vector<double>{1.0, 2.0}),
                  ContractViolation);
}

TEST_CASE("mse_loss hand examples") {
  Matrix p1(1, 1), t1(1, 1);
  p1.at(0, 0) = 3.0;
  t1.at(0, 0) = 1.0;
  CHECK(mse_loss(p1, t1) == doctest::Approx(4.0));
  CHECK(mse_loss(t1, t1) == 0.0);

  Matrix p2(2, 2), t2(2, 2);
  p2.at(0, 0) = 1;
  p2.at(0, 1) = 2;
  p2.at(1, 0) = 0;
  p2.at(1, 1) = 0;
  t2.at(0, 0) = 1;
  t2.at(0, 1) = 0;
  t2.at(1, 0) = 0;
  t2.at(1, 1) = 2;
  CHECK(mse_loss(p2, t2) == doctest::Approx(4.0));  // (0+4+0+4)/2

  Matrix empty(0, 1);
  CHECK_THROWS_AS(mse_loss(empty, empty), ContractViolation);
}

TEST_CASE("loss_gradient: zero residual gives zero gradient") {
  ModelArchitecture arch{1, {}, 1, Activation::kRelu};
  ParameterVector params{{5.0, 0.0}, arch.hash()};  // w=5, b=0
  Matrix x(3, 1), y(3, 1);  // all zero inputs and targets -> pred == truth
  const auto lg = loss_gradient(params, arch, x, y);
  CHECK(lg.loss == 0.0);
  for (double g : lg.grad.values) CHECK(g == 0.0);
}

TEST_CASE("loss_gradient: linear model hand derivative") {
  // y = w*x + b with w=1, b=0; sample (x=1, y=0): loss (1)^2 = 1,
  // d/dw = 2*(pred-y)*x = 2, d/db = 2.
  ModelArchitecture arch{1, {}, 1, Activation::kRelu};
  ParameterVector params{{1.0, 0.0}, arch.hash()};
  Matrix x(1, 1), y(1, 1);
  x.at(0, 0) = 1.0;
  y.at(0, 0) = 0.0;
  const auto lg = loss_gradient(params, arch, x, y);
  CHECK(lg.loss == doctest::Approx(1.0));
  CHECK(lg.grad.values[0] == doctest::Approx(2.0));
  CHECK(lg.grad.values[1] == doctest::Approx(2.0));
}

TEST_CASE("gradient check: analytic matches central differences on 100 random nets") {
  Rng rng(20240601);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const ModelArchitecture arch = random_small_arch(rng);
    ParameterVector params = init_params(arch, rng.next_u64());
    // Perturb biases so relu derivative discontinuities are unlikely at 0.
    for (double& v : params.values) v += 0.01 * rng.uniform(-1.0, 1.0);
    const std::size_t batch = 1 + rng.next_index(4);
    const Matrix inputs = random_matrix(rng, batch, static_cast<std::size_t>(arch.input_dim));
    const Matrix targets = random_matrix(rng, batch, static_cast<std::size_t>(arch.output_dim));

    const auto lg = loss_gradient(params, arch, inputs, targets);
    const auto fd = finite_difference_gradient(params, arch, inputs, targets);
    for (std::size_t i = 0; i < lg.grad.values.size(); ++i) {
      const double a = lg.grad.values[i];
      const double b = fd.values[i];
      const double rel = std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("loss_gradient is deterministic") {
  Rng rng(7);
  const ModelArchitecture arch{4, {6, 5}, 2, Activation::kTanh};
  const ParameterVector params = init_params(arch, 99);
  const Matrix inputs = random_matrix(rng, 8, 4);
  const Matrix targets = random_matrix(rng, 8, 2);
  const auto a = loss_gradient(params, arch, inputs, targets);
  const auto b = loss_gradient(params, arch, inputs, targets);
  CHECK(a.loss == b.loss);
  CHECK(std::memcmp(a.grad.values.data(), b.grad.values.data(),
                    a.grad.values.size() * 8) == 0);
}

TEST_CASE("sgd_step arithmetic and divergence detection") {
  ParameterVector params{{1.0, 1.0}, 0};
  Gradient grad{{2.0, -2.0}};
  const auto next = sgd_step(params, grad, 0.5);
  CHECK(next.values[0] == doctest::Approx(0.0));
  CHECK(next.values[1] == doctest::Approx(2.0));
  CHECK(params.values[0] == 1.0);  // input untouched

  Gradient zero{{0.0, 0.0}};
  const auto same = sgd_step(params, zero, 0.1);
  CHECK(same.values == params.values);

  // Two successive equal-gradient steps compose linearly.
  const auto twice = sgd_step(sgd_step(params, grad, 0.25), grad, 0.25);
  CHECK(twice.values[0] == doctest::Approx(1.0 - 2 * 0.25 * 2.0));
  CHECK(twice.values[1] == doctest::Approx(1.0 + 2 * 0.25 * 2.0));

  ParameterVector huge{{1e308}, 0};
  Gradient blow{{-1e308}};
  CHECK_THROWS_AS(sgd_step(huge, blow, 1.0), DivergenceError);
  CHECK_THROWS_AS(sgd_step(params, Gradient{{1.0}}, 0.1), ContractViolation);
}

TEST_CASE("one-client descent: small step never increases batch loss") {
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    const ModelArchitecture arch = random_small_arch(rng);
    const ParameterVector params = init_params(arch, rng.next_u64());
    const std::size_t batch = 2 + rng.next_index(6);
    const Matrix inputs = random_matrix(rng, batch, static_cast<std::size_t>(arch.input_dim));
    const Matrix targets = random_matrix(rng, batch, static_cast<std::size_t>(arch.output_dim));
    const auto before = loss_gradient(params, arch, inputs, targets);
    const auto stepped = sgd_step(params, before.grad, 1e-4);
    const auto after = loss_gradient(stepped, arch, inputs, targets);
    CHECK(after.loss <= before.loss + 1e-12);
  }
}

TEST_CASE("serialization golden bytes for [1.0]") {
  ParameterVector params{{1.0}, 0};
  const auto bytes = serialize_params(params);
  REQUIRE(bytes.size() == 12);
  const uint8_t expected[12] = {0x01, 0x00, 0x00, 0x00,  // length 1, LE
                                0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xF0, 0x3F};
  CHECK(std::memcmp(bytes.data(), expected, 12) == 0);
}

TEST_CASE("serialization round-trips 1000 random vectors bit-exactly") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    ModelArchitecture arch{1 + static_cast<int>(rng.next_index(6)), {}, 1,
                           Activation::kRelu};
    ParameterVector params;
    params.arch_id = arch.hash();
    for (std::size_t i = 0; i < arch.parameter_count(); ++i) {
      params.values.push_back(rng.uniform(-1e6, 1e6));
    }
    const auto bytes = serialize_params(params);
    const auto back = deserialize_params(bytes, arch);
    REQUIRE(back.values.size() == params.values.size());
    CHECK(std::memcmp(back.values.data(), params.values.data(),
                      params.values.size() * 8) == 0);
  }
}

TEST_CASE("deserialization rejects malformed payloads") {
  ModelArchitecture arch{1, {}, 1, Activation::kRelu};  // q = 2
  ParameterVector params{{1.0, 2.0}, arch.hash()};
  auto bytes = serialize_params(params);

  // Truncated payload.
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(deserialize_params(truncated, arch), ProtocolError);

  // Zero-length vector.
  std::vector<uint8_t> zero_len = {0, 0, 0, 0};
  CHECK_THROWS_AS(deserialize_params(zero_len, arch), ProtocolError);

  // Length that disagrees with the architecture.
  ModelArchitecture bigger{2, {}, 1, Activation::kRelu};  // q = 3
  CHECK_THROWS_AS(deserialize_params(bytes, bigger), ProtocolError);

  CHECK_THROWS_AS(serialize_params(ParameterVector{}), ContractViolation);
}
