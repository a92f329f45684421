#include "fedplant/model.hpp"

#include <cmath>
#include <cstring>

#include "fedplant/errors.hpp"
#include "fedplant/rng.hpp"

namespace fedplant {

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation: " + name);
}

std::string to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}

std::vector<int> ModelArchitecture::layer_sizes() const {
  std::vector<int> sizes;
  sizes.reserve(hidden_layers.size() + 2);
  sizes.push_back(input_dim);
  sizes.insert(sizes.end(), hidden_layers.begin(), hidden_layers.end());
  sizes.push_back(output_dim);
  return sizes;
}

std::size_t ModelArchitecture::parameter_count() const {
  const auto sizes = layer_sizes();
  std::size_t count = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    count += static_cast<std::size_t>(sizes[l] + 1) * static_cast<std::size_t>(sizes[l + 1]);
  }
  return count;
}

uint64_t ModelArchitecture::hash() const {
  // FNV-1a over the defining fields.
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<uint64_t>(input_dim));
  for (int hl : hidden_layers) mix(static_cast<uint64_t>(hl));
  mix(static_cast<uint64_t>(output_dim));
  mix(activation == Activation::kRelu ? 1u : 2u);
  return h;
}

void ModelArchitecture::validate() const {
  if (input_dim < 1 || output_dim < 1) {
    throw ContractViolation("architecture dims must be >= 1");
  }
  for (int hl : hidden_layers) {
    if (hl < 1) throw ContractViolation("hidden layer size must be >= 1");
  }
}

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

ParameterVector init_params(const ModelArchitecture& arch, uint64_t seed) {
  arch.validate();
  const auto sizes = arch.layer_sizes();
  ParameterVector params;
  params.arch_id = arch.hash();
  params.values.reserve(arch.parameter_count());
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const int fan_out = sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (int i = 0; i < fan_in * fan_out; ++i) {
      params.values.push_back(rng.uniform(-limit, limit));
    }
    for (int i = 0; i < fan_out; ++i) params.values.push_back(0.0);
  }
  return params;
}

namespace {

void check_binding(const ParameterVector& params, const ModelArchitecture& arch) {
  if (params.values.size() != arch.parameter_count()) {
    throw ContractViolation("parameter vector length does not match architecture");
  }
}

double activate(double x, Activation a) {
  return a == Activation::kRelu ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

double activate_derivative(double pre, Activation a) {
  if (a == Activation::kRelu) return pre > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(pre);
  return 1.0 - t * t;
}

// Affine step for layer l: out = W * in + b, reading W and b at `offset`.
void affine_forward(std::span<const double> theta, std::size_t offset,
                    int fan_in, int fan_out, std::span<const double> in,
                    std::span<double> out) {
  for (int j = 0; j < fan_out; ++j) {
    double acc = theta[offset + static_cast<std::size_t>(fan_in) * fan_out + j];  // bias
    const std::size_t w_row = offset + static_cast<std::size_t>(j) * fan_in;
    for (int i = 0; i < fan_in; ++i) acc += theta[w_row + i] * in[i];
    out[j] = acc;
  }
}

}  // namespace

std::vector<double> forward(const ParameterVector& params,
                            const ModelArchitecture& arch,
                            std::span<const double> input) {
  check_binding(params, arch);
  if (input.size() != static_cast<std::size_t>(arch.input_dim)) {
    throw ContractViolation("forward: input length does not match architecture");
  }
  const auto sizes = arch.layer_sizes();
  std::vector<double> current(input.begin(), input.end());
  std::vector<double> next;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const int fan_out = sizes[l + 1];
    next.assign(static_cast<std::size_t>(fan_out), 0.0);
    affine_forward(params.values, offset, fan_in, fan_out, current, next);
    const bool is_output = (l + 2 == sizes.size());
    if (!is_output) {
      for (double& v : next) v = activate(v, arch.activation);
    }
    current.swap(next);
    offset += static_cast<std::size_t>(fan_in + 1) * fan_out;
  }
  return current;
}

double mse_loss(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() == 0) throw ContractViolation("mse_loss: empty batch");
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw ContractViolation("mse_loss: shape mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pred.rows(); ++i) {
    for (std::size_t j = 0; j < pred.cols(); ++j) {
      const double d = pred.at(i, j) - truth.at(i, j);
      total += d * d;
    }
  }
  return total / static_cast<double>(pred.rows());
}

LossAndGradient loss_gradient(const ParameterVector& params,
                              const ModelArchitecture& arch,
                              const Matrix& batch_inputs,
                              const Matrix& batch_targets) {
  check_binding(params, arch);
  if (batch_inputs.rows() == 0) throw ContractViolation("loss_gradient: empty batch");
  if (batch_inputs.rows() != batch_targets.rows()) {
    throw ContractViolation("loss_gradient: input/target row mismatch");
  }
  if (batch_inputs.cols() != static_cast<std::size_t>(arch.input_dim) ||
      batch_targets.cols() != static_cast<std::size_t>(arch.output_dim)) {
    throw ContractViolation("loss_gradient: column mismatch with architecture");
  }

  const auto sizes = arch.layer_sizes();
  const std::size_t n_layers = sizes.size() - 1;
  const std::size_t n = batch_inputs.rows();
  const std::span<const double> theta(params.values);

  // Per-layer parameter offsets.
  std::vector<std::size_t> offsets(n_layers);
  {
    std::size_t off = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      offsets[l] = off;
      off += static_cast<std::size_t>(sizes[l] + 1) * sizes[l + 1];
    }
  }

  LossAndGradient out;
  out.grad.values.assign(params.values.size(), 0.0);
  double total_loss = 0.0;

  // Pre-activations per layer, activations per layer (index 0 = input).
  std::vector<std::vector<double>> acts(n_layers + 1);
  std::vector<std::vector<double>> pre(n_layers);
  std::vector<double> delta, delta_prev;

  for (std::size_t s = 0; s < n; ++s) {
    const auto x = batch_inputs.row(s);
    acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < n_layers; ++l) {
      const int fan_in = sizes[l];
      const int fan_out = sizes[l + 1];
      pre[l].assign(static_cast<std::size_t>(fan_out), 0.0);
      affine_forward(theta, offsets[l], fan_in, fan_out, acts[l], pre[l]);
      acts[l + 1] = pre[l];
      if (l + 1 < n_layers) {
        for (double& v : acts[l + 1]) v = activate(v, arch.activation);
      }
    }

    // Output residual: loss contribution sum_j (yhat_j - y_j)^2.
    const auto y = batch_targets.row(s);
    const auto& yhat = acts[n_layers];
    delta.assign(yhat.size(), 0.0);
    for (std::size_t j = 0; j < yhat.size(); ++j) {
      const double r = yhat[j] - y[j];
      total_loss += r * r;
      delta[j] = 2.0 * r;  // d loss_s / d yhat_j, output layer linear
    }

    // Backpropagate through layers.
    for (std::size_t l = n_layers; l-- > 0;) {
      const int fan_in = sizes[l];
      const int fan_out = sizes[l + 1];
      const std::size_t off = offsets[l];
      const std::size_t bias_off = off + static_cast<std::size_t>(fan_in) * fan_out;
      for (int j = 0; j < fan_out; ++j) {
        const double dj = delta[static_cast<std::size_t>(j)];
        const std::size_t w_row = off + static_cast<std::size_t>(j) * fan_in;
        for (int i = 0; i < fan_in; ++i) {
          out.grad.values[w_row + i] += dj * acts[l][static_cast<std::size_t>(i)];
        }
        out.grad.values[bias_off + j] += dj;
      }
      if (l == 0) break;
      delta_prev.assign(static_cast<std::size_t>(fan_in), 0.0);
      for (int i = 0; i < fan_in; ++i) {
        double acc = 0.0;
        for (int j = 0; j < fan_out; ++j) {
          acc += theta[off + static_cast<std::size_t>(j) * fan_in + i] *
                 delta[static_cast<std::size_t>(j)];
        }
        delta_prev[static_cast<std::size_t>(i)] =
            acc * activate_derivative(pre[l - 1][static_cast<std::size_t>(i)], arch.activation);
      }
      delta.swap(delta_prev);
    }
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss = total_loss * inv_n;
  for (double& g : out.grad.values) g *= inv_n;
  return out;
}

ParameterVector sgd_step(const ParameterVector& params, const Gradient& grad,
                         double eta) {
  if (params.values.size() != grad.values.size()) {
    throw ContractViolation("sgd_step: length mismatch");
  }
  if (!(eta > 0.0)) throw ContractViolation("sgd_step: eta must be > 0");
  ParameterVector next;
  next.arch_id = params.arch_id;
  next.values.resize(params.values.size());
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    next.values[i] = params.values[i] - eta * grad.values[i];
  }
  if (!all_finite(next.values)) {
    throw DivergenceError("sgd_step produced non-finite parameters");
  }
  return next;
}

std::vector<uint8_t> serialize_params(const ParameterVector& params) {
  if (params.values.empty()) {
    throw ContractViolation("serialize_params: empty parameter vector");
  }
  const uint32_t count = static_cast<uint32_t>(params.values.size());
  std::vector<uint8_t> bytes;
  bytes.reserve(4 + 8 * params.values.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(count >> (8 * i)));
  for (double v : params.values) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>(bits >> (8 * i)));
  }
  return bytes;
}

ParameterVector deserialize_params(std::span<const uint8_t> bytes,
                                   const ModelArchitecture& arch) {
  if (bytes.size() < 4) throw ProtocolError("parameter payload truncated (no length)");
  uint32_t count = 0;
  for (int i = 0; i < 4; ++i) count |= static_cast<uint32_t>(bytes[i]) << (8 * i);
  if (count == 0) throw ProtocolError("parameter payload has zero length");
  if (count != arch.parameter_count()) {
    throw ProtocolError("parameter count does not match architecture");
  }
  if (bytes.size() != 4 + 8 * static_cast<std::size_t>(count)) {
    throw ProtocolError("parameter payload truncated or oversized");
  }
  ParameterVector params;
  params.arch_id = arch.hash();
  params.values.resize(count);
  for (uint32_t k = 0; k < count; ++k) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<uint64_t>(bytes[4 + 8 * k + i]) << (8 * i);
    }
    double v;
    std::memcpy(&v, &bits, 8);
    params.values[k] = v;
  }
  return params;
}

}  // namespace fedplant
