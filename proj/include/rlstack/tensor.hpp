#pragma once

#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rlstack/struct_array.hpp"

namespace rlstack {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major float64 tensor.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
      : shape(std::move(s)), data(detail::product(shape), fill) {}
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != detail::product(shape)) throw NumericError("tensor data does not match shape");
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  /// Extent of the last axis.
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  /// Product of all but the last axis.
  std::size_t rows() const { return cols() ? size() / cols() : 0; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return std::span(data).subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const { return std::span(data).subspan(r * cols(), cols()); }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Ordered named tensors. Gradients use the same type with matching shapes.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  void add(std::string name, Tensor t) {
    names.push_back(std::move(name));
    tensors.push_back(std::move(t));
  }

  void append(const ParamSet& other) {
    names.insert(names.end(), other.names.begin(), other.names.end());
    tensors.insert(tensors.end(), other.tensors.begin(), other.tensors.end());
  }

  std::size_t count() const { return tensors.size(); }

  std::size_t flat_size() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(flat_size());
    for (const auto& t : tensors) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
  }

  void assign_flat(std::span<const double> flat) {
    if (flat.size() != flat_size()) throw NumericError("flat parameter length mismatch");
    std::size_t k = 0;
    for (auto& t : tensors)
      for (auto& v : t.data) v = flat[k++];
  }

  ParamSet zeros_like() const {
    ParamSet z;
    for (std::size_t i = 0; i < tensors.size(); ++i) z.add(names[i], Tensor(tensors[i].shape));
    return z;
  }

  void zero() {
    for (auto& t : tensors) t.fill(0.0);
  }

  bool same_shapes(const ParamSet& o) const {
    if (o.tensors.size() != tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].shape != o.tensors[i].shape) return false;
    return true;
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.all_finite()) return false;
    return true;
  }

  std::span<const Tensor> slice(std::size_t begin, std::size_t n) const {
    return std::span(tensors).subspan(begin, n);
  }
  std::span<Tensor> slice(std::size_t begin, std::size_t n) { return std::span(tensors).subspan(begin, n); }

  bool operator==(const ParamSet& o) const {
    if (!same_shapes(o)) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].data != o.tensors[i].data) return false;
    return true;
  }
};

using GradSet = ParamSet;

inline double global_norm(const GradSet& g) {
  double s = 0.0;
  for (const auto& t : g.tensors)
    for (double v : t.data) s += v * v;
  return std::sqrt(s);
}

/// Scales gradients so their global norm is at most max_norm; returns the pre-clip norm.
inline double clip_grad_norm(GradSet& g, double max_norm) {
  double n = global_norm(g);
  if (max_norm > 0.0 && n > max_norm) {
    double s = max_norm / (n + 1e-12);
    for (auto& t : g.tensors)
      for (auto& v : t.data) v *= s;
  }
  return n;
}

/// Checkpoint form: one float64 leaf per tensor (dotted names nest), leading dims [1].
inline StructArray to_struct_array(const ParamSet& p) {
  StructSpec spec;
  for (std::size_t i = 0; i < p.count(); ++i) spec.add_leaf(p.names[i], ElementKind::float64, p.tensors[i].shape);
  auto a = StructArray::allocate(spec, {1});
  for (std::size_t i = 0; i < p.count(); ++i) {
    auto dst = a.leaf<double>(p.names[i]);
    std::copy(p.tensors[i].data.begin(), p.tensors[i].data.end(), dst.begin());
  }
  return a;
}

inline ParamSet from_struct_array(const StructArray& a) {
  ParamSet p;
  for (std::size_t i = 0; i < a.num_leaves(); ++i) {
    const auto& info = a.spec().leaves()[i];
    auto src = a.leaf<double>(i);
    p.add(info.path, Tensor(info.shape, std::vector<double>(src.begin(), src.end())));
  }
  return p;
}

inline void save_checkpoint(std::ostream& os, const ParamSet& p) { dump(os, to_struct_array(p)); }
inline ParamSet load_checkpoint(std::istream& is) { return from_struct_array(load(is)); }

}  // namespace rlstack
