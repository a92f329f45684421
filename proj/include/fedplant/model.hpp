#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedplant/matrix.hpp"

namespace fedplant {

enum class Activation { kRelu, kTanh };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

// Feedforward regression net: hidden layers use the configured activation,
// the output layer is linear.
struct ModelArchitecture {
  int input_dim = 1;
  std::vector<int> hidden_layers;
  int output_dim = 1;
  Activation activation = Activation::kRelu;

  // Layer sizes including input and output: [input_dim, hidden..., output_dim].
  std::vector<int> layer_sizes() const;

  // Sum over layers of (fan_in + 1) * fan_out.
  std::size_t parameter_count() const;

  // Stable identifier binding ParameterVectors to this architecture; also
  // the arch_hash exchanged during the transport handshake.
  uint64_t hash() const;

  void validate() const;  // throws ContractViolation
};

// Flat parameters. Layout per layer: weight matrix (fan_out x fan_in,
// row-major), then biases (fan_out).
struct ParameterVector {
  std::vector<double> values;
  uint64_t arch_id = 0;

  std::size_t size() const { return values.size(); }
};

struct Gradient {
  std::vector<double> values;
};

// Glorot-uniform weights, zero biases. Bit-reproducible for a given seed.
ParameterVector init_params(const ModelArchitecture& arch, uint64_t seed);

// Single-sample forward pass.
std::vector<double> forward(const ParameterVector& params,
                            const ModelArchitecture& arch,
                            std::span<const double> input);

// Mean over samples of the squared L2 distance between prediction and truth.
double mse_loss(const Matrix& pred, const Matrix& truth);

struct LossAndGradient {
  double loss = 0.0;
  Gradient grad;
};

// Loss and its exact analytic gradient, averaged over the batch.
LossAndGradient loss_gradient(const ParameterVector& params,
                              const ModelArchitecture& arch,
                              const Matrix& batch_inputs,
                              const Matrix& batch_targets);

// theta - eta * grad. Throws DivergenceError if the result is non-finite.
ParameterVector sgd_step(const ParameterVector& params, const Gradient& grad,
                         double eta);

// u32 little-endian count, then one little-endian IEEE-754 double per value.
std::vector<uint8_t> serialize_params(const ParameterVector& params);
ParameterVector deserialize_params(std::span<const uint8_t> bytes,
                                   const ModelArchitecture& arch);

bool all_finite(std::span<const double> values);

}  // namespace fedplant
