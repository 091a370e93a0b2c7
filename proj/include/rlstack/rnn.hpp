#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "rlstack/mlp.hpp"

namespace rlstack {

/// Recurrent state laid out [num_layers, batch, hidden].
struct RnnState {
  Tensor hidden;

  static RnnState zeros(std::size_t batch, std::size_t hidden_size, std::size_t layers = 1) {
    return RnnState{Tensor({layers, batch, hidden_size})};
  }
  std::size_t layers() const { return hidden.shape.at(0); }
  std::size_t batch() const { return hidden.shape.at(1); }
  std::size_t hidden_size() const { return hidden.shape.at(2); }

  /// [B, layers * H] sample layout, as stored per slot in sample buffers.
  Tensor to_batch_major() const {
    std::size_t L = layers(), B = batch(), H = hidden_size();
    Tensor out({B, L * H});
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h) out.data[b * L * H + l * H + h] = hidden.data[(l * B + b) * H + h];
    return out;
  }
  static RnnState from_batch_major(const Tensor& t, std::size_t layers) {
    std::size_t B = t.shape.at(0), H = t.shape.at(1) / layers;
    RnnState s = zeros(B, H, layers);
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h) s.hidden.data[(l * B + b) * H + h] = t.data[b * layers * H + l * H + h];
    return s;
  }
};

struct RnnConfig {
  std::size_t input_dim = 1;
  std::size_t hidden_size = 16;
  std::size_t output_dim = 1;
};

/// Single-layer tanh recurrence with a linear readout:
///   h_t = tanh(Wx x_t + Wh h_{t-1} + b),  y_t = Wo h_t + bo.
/// Optional per-(t, b) reset flags zero h_{t-1} before step t.
class Rnn {
 public:
  struct Cache {
    std::size_t T = 0, B = 0;
    std::vector<double> x;      // [T, B, in]
    std::vector<double> hprev;  // [T, B, H] effective previous hidden
    std::vector<double> h;      // [T, B, H]
    std::vector<std::uint8_t> resets;
  };

  struct Result {
    Tensor y;  // [T, B, out]
    RnnState final_state;
  };

  Rnn() = default;
  explicit Rnn(RnnConfig cfg) : cfg_(cfg) {
    if (!cfg.input_dim || !cfg.hidden_size || !cfg.output_dim) throw NumericError("rnn dims must be positive");
  }

  const RnnConfig& config() const { return cfg_; }
  static constexpr std::size_t num_tensors() { return 5; }

  ParamSet init(std::mt19937_64& rng, const std::string& prefix = "") const {
    ParamSet p;
    std::size_t H = cfg_.hidden_size;
    double bound = 1.0 / std::sqrt(static_cast<double>(H));
    std::uniform_real_distribution<double> u(-bound, bound);
    auto make = [&](std::vector<std::size_t> shape) {
      Tensor t(std::move(shape));
      for (auto& v : t.data) v = u(rng);
      return t;
    };
    p.add(prefix + "wx", make({H, cfg_.input_dim}));
    p.add(prefix + "wh", make({H, H}));
    p.add(prefix + "b", make({H}));
    p.add(prefix + "wo", make({cfg_.output_dim, H}));
    p.add(prefix + "bo", make({cfg_.output_dim}));
    return p;
  }

  Result forward(std::span<const Tensor> p, const Tensor& x_seq, const RnnState& h0,
                 std::span<const std::uint8_t> resets = {}, Cache* cache = nullptr) const {
    if (p.size() < num_tensors()) throw NumericError("rnn parameter count mismatch");
    if (x_seq.rank() != 3 || x_seq.shape[2] != cfg_.input_dim) throw NumericError("rnn input must be [T, B, in]");
    std::size_t T = x_seq.shape[0], B = x_seq.shape[1], H = cfg_.hidden_size, in = cfg_.input_dim;
    if (h0.layers() != 1 || h0.batch() != B || h0.hidden_size() != H) throw NumericError("rnn state shape mismatch");
    if (!resets.empty() && resets.size() != T * B) throw NumericError("rnn reset mask shape mismatch");
    const Tensor &wx = p[0], &wh = p[1], &b = p[2], &wo = p[3], &bo = p[4];

    Result res{Tensor({T, B, cfg_.output_dim}), h0};
    std::vector<double> h = h0.hidden.data;
    std::vector<double> pre(B * H), rec(B * H);
    if (cache) {
      cache->T = T;
      cache->B = B;
      cache->x = x_seq.data;
      cache->hprev.assign(T * B * H, 0.0);
      cache->h.assign(T * B * H, 0.0);
      cache->resets.assign(resets.begin(), resets.end());
    }
    for (std::size_t t = 0; t < T; ++t) {
      if (!resets.empty())
        for (std::size_t bb = 0; bb < B; ++bb)
          if (resets[t * B + bb]) std::fill(h.begin() + bb * H, h.begin() + (bb + 1) * H, 0.0);
      if (cache) std::copy(h.begin(), h.end(), cache->hprev.begin() + t * B * H);
      std::span<const double> xt(x_seq.data.data() + t * B * in, B * in);
      kernels::linear_forward(wx, b, xt, B, pre);
      for (std::size_t bb = 0; bb < B; ++bb) {
        for (std::size_t i = 0; i < H; ++i) {
          const double* whr = wh.data.data() + i * H;
          const double* hr = h.data() + bb * H;
          double acc = 0.0;
          for (std::size_t j = 0; j < H; ++j) acc += whr[j] * hr[j];
          rec[bb * H + i] = std::tanh(pre[bb * H + i] + acc);
        }
      }
      h.swap(rec);
      if (cache) std::copy(h.begin(), h.end(), cache->h.begin() + t * B * H);
      kernels::linear_forward(wo, bo, h, B, std::span(res.y.data).subspan(t * B * cfg_.output_dim, B * cfg_.output_dim));
    }
    res.final_state.hidden.data = h;
    return res;
  }

  struct Grads {
    Tensor dx;   // [T, B, in]
    Tensor dh0;  // [1, B, H]
  };

  /// Backpropagation through time. dhT may be empty (no gradient on the final state).
  Grads backward(std::span<const Tensor> p, const Cache& c, const Tensor& dy, std::span<Tensor> grads,
                 const Tensor* dhT = nullptr) const {
    std::size_t T = c.T, B = c.B, H = cfg_.hidden_size, in = cfg_.input_dim, out = cfg_.output_dim;
    if (dy.size() != T * B * out) throw NumericError("rnn upstream gradient shape mismatch");
    const Tensor &wx = p[0], &wh = p[1], &wo = p[3];
    Tensor &dwx = grads[0], &dwh = grads[1], &db = grads[2], &dwo = grads[3], &dbo = grads[4];
    Grads g{Tensor({T, B, in}), Tensor({1, B, H})};
    std::vector<double> dh(B * H, 0.0);
    if (dhT) dh = dhT->data;
    std::vector<double> dh_out(B * H), da(B * H), dhprev(B * H);
    for (std::size_t t = T; t-- > 0;) {
      std::span<const double> ht(c.h.data() + t * B * H, B * H);
      std::span<const double> hp(c.hprev.data() + t * B * H, B * H);
      std::span<const double> dyt(dy.data.data() + t * B * out, B * out);
      kernels::linear_backward(wo, ht, dyt, B, dwo, dbo, dh_out);
      for (std::size_t i = 0; i < B * H; ++i) da[i] = (dh[i] + dh_out[i]) * (1.0 - ht[i] * ht[i]);
      std::span<const double> xt(c.x.data() + t * B * in, B * in);
      kernels::linear_backward(wx, xt, da, B, dwx, db, std::span(g.dx.data).subspan(t * B * in, B * in));
      // recurrent weights: dWh += da hprev^T; dhprev = Wh^T da
      std::fill(dhprev.begin(), dhprev.end(), 0.0);
      for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t i = 0; i < H; ++i) {
          double gi = da[bb * H + i];
          if (gi == 0.0) continue;
          double* dwr = dwh.data.data() + i * H;
          const double* whr = wh.data.data() + i * H;
          for (std::size_t j = 0; j < H; ++j) {
            dwr[j] += gi * hp[bb * H + j];
            dhprev[bb * H + j] += gi * whr[j];
          }
        }
      if (!c.resets.empty())
        for (std::size_t bb = 0; bb < B; ++bb)
          if (c.resets[t * B + bb]) std::fill(dhprev.begin() + bb * H, dhprev.begin() + (bb + 1) * H, 0.0);
      dh = dhprev;
    }
    g.dh0.data = dh;
    return g;
  }

 private:
  RnnConfig cfg_;
};

}  // namespace rlstack
