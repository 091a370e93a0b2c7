#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rlstack/tensor.hpp"

namespace rlstack {

enum class Activation { tanh, relu };

struct MlpConfig {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  Activation activation = Activation::tanh;
  bool dueling = false;
  /// Distributional support size; 0 means plain scalar outputs.
  std::size_t atoms = 0;
};

namespace kernels {

/// y[n, o] = b[o] + sum_i w[o, i] * x[n, i]
inline void linear_forward(const Tensor& w, const Tensor& b, std::span<const double> x, std::size_t rows,
                           std::span<double> y) {
  std::size_t out = w.shape[0], in = w.shape[1];
  for (std::size_t n = 0; n < rows; ++n) {
    const double* xr = x.data() + n * in;
    double* yr = y.data() + n * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = w.data.data() + o * in;
      double acc = b.data[o];
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      yr[o] = acc;
    }
  }
}

/// Accumulates dw, db and (optionally) writes dx.
inline void linear_backward(const Tensor& w, std::span<const double> x, std::span<const double> dy,
                            std::size_t rows, Tensor& dw, Tensor& db, std::span<double> dx) {
  std::size_t out = w.shape[0], in = w.shape[1];
  for (std::size_t n = 0; n < rows; ++n) {
    const double* xr = x.data() + n * in;
    const double* gr = dy.data() + n * out;
    for (std::size_t o = 0; o < out; ++o) {
      double g = gr[o];
      if (g == 0.0) continue;
      double* dwr = dw.data.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) dwr[i] += g * xr[i];
      db.data[o] += g;
    }
  }
  if (dx.empty()) return;
  for (std::size_t n = 0; n < rows; ++n) {
    const double* gr = dy.data() + n * out;
    double* dxr = dx.data() + n * in;
    for (std::size_t i = 0; i < in; ++i) dxr[i] = 0.0;
    for (std::size_t o = 0; o < out; ++o) {
      double g = gr[o];
      if (g == 0.0) continue;
      const double* wr = w.data.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) dxr[i] += g * wr[i];
    }
  }
}

inline double activate(Activation a, double v) { return a == Activation::tanh ? std::tanh(v) : (v > 0.0 ? v : 0.0); }

/// Derivative expressed through the activation output.
inline double activate_grad(Activation a, double y) { return a == Activation::tanh ? 1.0 - y * y : (y > 0.0 ? 1.0 : 0.0); }

inline void init_linear(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
                        double scale = 1.0) {
  double bound = scale / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor w({out, in});
  Tensor b({out});
  for (auto& v : w.data) v = u(rng);
  for (auto& v : b.data) v = u(rng);
  p.add(name + ".w", std::move(w));
  p.add(name + ".b", std::move(b));
}

}  // namespace kernels

/// Multi-layer perceptron with optional dueling and distributional heads.
///
/// Output width is output_dim * max(atoms, 1). With the dueling flag the head
/// splits into value and advantage streams aggregated as v + a - mean(a)
/// (per atom when distributional).
class Mlp {
 public:
  struct Cache {
    std::size_t rows = 0;
    std::vector<std::vector<double>> acts;  // acts[0] is the input
  };

  Mlp() = default;
  explicit Mlp(MlpConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.input_dim == 0 || cfg_.output_dim == 0) throw NumericError("mlp dims must be positive");
    for (auto h : cfg_.hidden_dims)
      if (h == 0) throw NumericError("mlp hidden dims must be positive");
  }

  const MlpConfig& config() const { return cfg_; }
  std::size_t atoms() const { return cfg_.atoms ? cfg_.atoms : 1; }
  std::size_t out_width() const { return cfg_.output_dim * atoms(); }
  std::size_t num_tensors() const { return 2 * cfg_.hidden_dims.size() + (cfg_.dueling ? 4 : 2); }
  std::size_t last_width() const { return cfg_.hidden_dims.empty() ? cfg_.input_dim : cfg_.hidden_dims.back(); }

  ParamSet init(std::mt19937_64& rng, const std::string& prefix = "", double out_scale = 1.0) const {
    ParamSet p;
    std::size_t prev = cfg_.input_dim;
    for (std::size_t l = 0; l < cfg_.hidden_dims.size(); ++l) {
      kernels::init_linear(p, prefix + "l" + std::to_string(l), prev, cfg_.hidden_dims[l], rng);
      prev = cfg_.hidden_dims[l];
    }
    if (cfg_.dueling) {
      kernels::init_linear(p, prefix + "value", prev, atoms(), rng, out_scale);
      kernels::init_linear(p, prefix + "adv", prev, out_width(), rng, out_scale);
    } else {
      kernels::init_linear(p, prefix + "out", prev, out_width(), rng, out_scale);
    }
    return p;
  }

  /// x has any leading dims and trailing extent input_dim; the result keeps the
  /// leading dims and has trailing extent out_width().
  Tensor forward(std::span<const Tensor> p, const Tensor& x, Cache* cache = nullptr) const {
    check_params(p);
    if (x.cols() != cfg_.input_dim)
      throw NumericError("mlp input width " + std::to_string(x.cols()) + ", expected " +
                         std::to_string(cfg_.input_dim));
    std::size_t rows = x.rows();
    std::vector<std::vector<double>> local;
    auto& acts = cache ? cache->acts : local;
    acts.clear();
    acts.push_back(x.data);
    std::size_t k = 0;
    for (std::size_t h : cfg_.hidden_dims) {
      std::vector<double> y(rows * h);
      kernels::linear_forward(p[k], p[k + 1], acts.back(), rows, y);
      for (auto& v : y) v = kernels::activate(cfg_.activation, v);
      acts.push_back(std::move(y));
      k += 2;
    }
    std::vector<std::size_t> shape(x.shape.begin(), x.shape.end() - 1);
    if (shape.empty() && x.rank() == 0) shape.clear();
    shape.push_back(out_width());
    Tensor out(shape);
    if (!cfg_.dueling) {
      kernels::linear_forward(p[k], p[k + 1], acts.back(), rows, out.data);
    } else {
      std::size_t a = atoms(), n = cfg_.output_dim;
      std::vector<double> v(rows * a), adv(rows * n * a);
      kernels::linear_forward(p[k], p[k + 1], acts.back(), rows, v);
      kernels::linear_forward(p[k + 2], p[k + 3], acts.back(), rows, adv);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t z = 0; z < a; ++z) {
          double mean = 0.0;
          for (std::size_t j = 0; j < n; ++j) mean += adv[(r * n + j) * a + z];
          mean /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j)
            out.data[(r * n + j) * a + z] = v[r * a + z] + adv[(r * n + j) * a + z] - mean;
        }
    }
    if (cache) cache->rows = rows;
    return out;
  }

  /// Accumulates parameter gradients into `grads`; returns the input gradient.
  Tensor backward(std::span<const Tensor> p, const Cache& cache, const Tensor& dy, std::span<Tensor> grads) const {
    check_params(p);
    std::size_t rows = cache.rows;
    if (dy.size() != rows * out_width()) throw NumericError("mlp upstream gradient shape mismatch");
    std::size_t k = 2 * cfg_.hidden_dims.size();
    std::size_t last = last_width();
    std::vector<double> dh(rows * last, 0.0);
    if (!cfg_.dueling) {
      kernels::linear_backward(p[k], cache.acts.back(), dy.data, rows, grads[k], grads[k + 1], dh);
    } else {
      std::size_t a = atoms(), n = cfg_.output_dim;
      std::vector<double> dv(rows * a, 0.0), dadv(rows * n * a);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t z = 0; z < a; ++z) {
          double sum = 0.0;
          for (std::size_t j = 0; j < n; ++j) sum += dy.data[(r * n + j) * a + z];
          dv[r * a + z] = sum;
          for (std::size_t j = 0; j < n; ++j)
            dadv[(r * n + j) * a + z] = dy.data[(r * n + j) * a + z] - sum / static_cast<double>(n);
        }
      std::vector<double> dh2(rows * last);
      kernels::linear_backward(p[k], cache.acts.back(), dv, rows, grads[k], grads[k + 1], dh);
      kernels::linear_backward(p[k + 2], cache.acts.back(), dadv, rows, grads[k + 2], grads[k + 3], dh2);
      for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh2[i];
    }
    for (std::size_t l = cfg_.hidden_dims.size(); l-- > 0;) {
      const auto& y = cache.acts[l + 1];
      for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= kernels::activate_grad(cfg_.activation, y[i]);
      std::size_t in = l == 0 ? cfg_.input_dim : cfg_.hidden_dims[l - 1];
      std::vector<double> dprev(rows * in);
      kernels::linear_backward(p[2 * l], cache.acts[l], dh, rows, grads[2 * l], grads[2 * l + 1], dprev);
      dh = std::move(dprev);
    }
    Tensor dx({rows, cfg_.input_dim});
    dx.data = std::move(dh);
    return dx;
  }

 private:
  void check_params(std::span<const Tensor> p) const {
    if (p.size() < num_tensors()) throw NumericError("mlp parameter count mismatch");
  }

  MlpConfig cfg_;
};

}  // namespace rlstack
