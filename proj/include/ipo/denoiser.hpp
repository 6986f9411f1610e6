// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipo/random.hpp"

namespace ipo {

struct DenoiserArch {
  std::size_t input_dim = 2;
  std::size_t condition_dim = 6;
  std::vector<std::size_t> hidden_sizes{64, 64};
  std::size_t time_embedding_size = 16;

  bool operator==(const DenoiserArch&) const = default;
};

/// Anything the diffusion losses can train: a noise predictor with a
/// per-call tape for reverse-mode gradients over a flat parameter vector.
template <class M>
concept NoisePredictor = requires(const M& m, std::span<const double> x, int t,
                                  std::span<const double> c, typename M::Tape& tape,
                                  const typename M::Tape& ctape, std::span<double> grad) {
  { m.input_dim() } -> std::convertible_to<std::size_t>;
  { m.num_params() } -> std::convertible_to<std::size_t>;
  { m.predict(x, t, c, tape) } -> std::same_as<Vec>;
  m.backprop(ctape, x, grad);
  { m.arch() == m.arch() } -> std::convertible_to<bool>;
};

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // in elements
  std::size_t size = 0;
};

/// Sinusoidal embedding of a timestep index. The max period is fixed so a
/// checkpoint's forward pass does not depend on schedule length.
inline void time_embedding(int t, std::span<double> out) {
  constexpr double max_period = 1000.0;
  const std::size_t half = out.size() / 2;
  for (std::size_t j = 0; j < half; ++j) {
    const double freq =
        std::exp(-std::log(max_period) * static_cast<double>(j) / static_cast<double>(half));
    out[j] = std::sin(static_cast<double>(t) * freq);
    out[half + j] = std::cos(static_cast<double>(t) * freq);
  }
  if (out.size() % 2 == 1) out.back() = 0.0;
}

/// Fully connected epsilon-predictor: [x, emb(t), c] -> SiLU hidden layers -> eps.
/// Layer l stores a row-major (out x in) weight followed by its bias.
class MlpDenoiser {
 public:
  struct Tape {
    std::vector<Vec> activations;  // inputs to each layer
    std::vector<Vec> pre;          // pre-activations of hidden layers
  };

  MlpDenoiser() = default;

  explicit MlpDenoiser(DenoiserArch arch) : arch_(std::move(arch)) {
    if (arch_.input_dim == 0) throw std::invalid_argument("input_dim must be positive");
    std::size_t in = arch_.input_dim + arch_.time_embedding_size + arch_.condition_dim;
    std::size_t offset = 0;
    auto add_layer = [&](std::size_t out) {
      layers_.push_back({in, out, offset});
      offset += in * out + out;
      in = out;
    };
    for (std::size_t h : arch_.hidden_sizes) {
      if (h == 0) throw std::invalid_argument("hidden sizes must be positive");
      add_layer(h);
    }
    add_layer(arch_.input_dim);
    params_.assign(offset, 0.0);
  }

  /// Glorot-uniform weights, zero biases.
  static MlpDenoiser initialized(DenoiserArch arch, std::uint64_t seed) {
    MlpDenoiser m(std::move(arch));
    Rng rng(seed);
    for (const auto& layer : m.layers_) {
      const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
      for (std::size_t i = 0; i < layer.in * layer.out; ++i) {
        m.params_[layer.offset + i] = (2.0 * rng.uniform() - 1.0) * limit;
      }
    }
    return m;
  }

  const DenoiserArch& arch() const { return arch_; }
  std::size_t input_dim() const { return arch_.input_dim; }
  std::size_t num_params() const { return params_.size(); }

  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  void set_params(std::span<const double> p) {
    if (p.size() != params_.size()) throw std::invalid_argument("parameter count mismatch");
    params_.assign(p.begin(), p.end());
  }

  std::vector<TensorInfo> tensors() const {
    std::vector<TensorInfo> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      const std::string prefix = "layer" + std::to_string(l);
      out.push_back({prefix + ".weight", {layer.out, layer.in}, layer.offset, layer.in * layer.out});
      out.push_back({prefix + ".bias", {layer.out}, layer.offset + layer.in * layer.out, layer.out});
    }
    return out;
  }

  Vec predict(std::span<const double> x, int t, std::span<const double> c) const {
    Tape tape;
    return predict(x, t, c, tape);
  }

  Vec predict(std::span<const double> x, int t, std::span<const double> c, Tape& tape) const {
    if (x.size() != arch_.input_dim || c.size() != arch_.condition_dim) {
      throw std::invalid_argument("denoiser input dimension mismatch");
    }
    const std::size_t n_layers = layers_.size();
    tape.activations.resize(n_layers);
    tape.pre.resize(n_layers - 1);

    Vec& input = tape.activations[0];
    input.resize(layers_[0].in);
    std::copy(x.begin(), x.end(), input.begin());
    time_embedding(t, std::span(input).subspan(arch_.input_dim, arch_.time_embedding_size));
    std::copy(c.begin(), c.end(), input.begin() + static_cast<std::ptrdiff_t>(arch_.input_dim +
                                                                              arch_.time_embedding_size));

    Vec out;
    for (std::size_t l = 0; l < n_layers; ++l) {
      const auto& layer = layers_[l];
      const double* w = params_.data() + layer.offset;
      const double* b = w + layer.in * layer.out;
      const Vec& a = tape.activations[l];
      const bool last = l + 1 == n_layers;
      Vec& z = last ? out : tape.pre[l];
      z.resize(layer.out);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double* row = w + o * layer.in;
        double acc = b[o];
        for (std::size_t i = 0; i < layer.in; ++i) acc += row[i] * a[i];
        z[o] = acc;
      }
      if (!last) {
        Vec& next = tape.activations[l + 1];
        next.resize(layer.out);
        for (std::size_t o = 0; o < layer.out; ++o) next[o] = silu(z[o]);
      }
    }
    return out;
  }

  /// Accumulates d(out . grad_out)/d(params) into grad.
  void backprop(const Tape& tape, std::span<const double> grad_out, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw std::invalid_argument("gradient size mismatch");
    Vec delta(grad_out.begin(), grad_out.end());
    Vec prev;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& layer = layers_[l];
      const double* w = params_.data() + layer.offset;
      double* gw = grad.data() + layer.offset;
      double* gb = gw + layer.in * layer.out;
      const Vec& a = tape.activations[l];
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        double* grow = gw + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) grow[i] += d * a[i];
        gb[o] += d;
      }
      if (l == 0) break;
      prev.assign(layer.in, 0.0);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* row = w + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) prev[i] += row[i] * d;
      }
      const Vec& z = tape.pre[l - 1];
      for (std::size_t i = 0; i < layer.in; ++i) prev[i] *= silu_grad(z[i]);
      delta.swap(prev);
    }
  }

 private:
  struct Layer {
    std::size_t in;
    std::size_t out;
    std::size_t offset;
  };

  static double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
  static double silu(double z) { return z * sigmoid(z); }
  static double silu_grad(double z) {
    const double s = sigmoid(z);
    return s * (1.0 + z * (1.0 - s));
  }

  DenoiserArch arch_;
  std::vector<Layer> layers_;
  Vec params_;
};

static_assert(NoisePredictor<MlpDenoiser>);

}  // namespace ipo
