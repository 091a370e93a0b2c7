#pragma once

// Gradient averaging across learners. Every participant receives the
// identical mean, summed in rank order.

#include <atomic>
#include <barrier>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <vector>

#include "rlstack/tensor.hpp"

namespace rlstack {

inline GradSet allreduce_mean(const std::vector<GradSet>& grads) {
  if (grads.empty()) throw NumericError("allreduce_mean: no inputs");
  GradSet out = grads[0];
  for (std::size_t r = 1; r < grads.size(); ++r) {
    if (!grads[r].same_shapes(out)) throw NumericError("allreduce_mean: shape mismatch at rank " + std::to_string(r));
    for (std::size_t k = 0; k < out.count(); ++k)
      for (std::size_t i = 0; i < out.tensors[k].size(); ++i) out.tensors[k].data[i] += grads[r].tensors[k].data[i];
  }
  double inv = static_cast<double>(grads.size());
  for (auto& t : out.tensors)
    for (auto& v : t.data) v /= inv;
  return out;
}

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Collective rendezvous for K peer learner threads.
class AllReduceGroup {
 public:
  explicit AllReduceGroup(std::size_t size)
      : size_(size), inputs_(size), flats_(size), gather_(static_cast<std::ptrdiff_t>(size)), release_(static_cast<std::ptrdiff_t>(size)) {}

  std::size_t size() const { return size_; }

  /// Replaces `g` with the mean over all ranks. Blocks until every rank arrives.
  void reduce(std::size_t rank, GradSet& g) {
    inputs_[rank] = &g;
    gather_.arrive_and_wait();
    if (rank == 0 && !aborted_) {
      std::vector<GradSet> copies;
      copies.reserve(size_);
      for (auto* p : inputs_) copies.push_back(*p);
      try {
        result_ = allreduce_mean(copies);
        error_.clear();
      } catch (const std::exception& e) {
        error_ = e.what();
      }
    }
    release_.arrive_and_wait();
    if (aborted_) throw DivergenceError("all-reduce group aborted by a failed peer");
    // result_ and error_ are only rewritten after the next gather, which every
    // rank reaches after reading them here.
    if (!error_.empty()) throw NumericError(error_);
    g = result_;
  }

  /// Asserts that every rank holds bit-identical parameters.
  void check_equal(std::size_t rank, const ParamSet& p) {
    flats_[rank] = p.flatten();
    gather_.arrive_and_wait();
    bool equal = true;
    for (std::size_t r = 1; r < size_; ++r)
      if (flats_[r].size() != flats_[0].size() ||
          std::memcmp(flats_[r].data(), flats_[0].data(), flats_[0].size() * sizeof(double)) != 0)
        equal = false;
    release_.arrive_and_wait();
    if (aborted_) throw DivergenceError("all-reduce group aborted by a failed peer");
    if (rank == 0) ++checks_;
    if (!equal) throw DivergenceError("learner parameters diverged");
  }

  std::size_t checks() const { return checks_; }

  /// Called once by a rank that stops participating; its peers' pending and
  /// future collectives throw instead of blocking.
  void abort(std::size_t) {
    aborted_ = true;
    gather_.arrive_and_drop();
    release_.arrive_and_drop();
  }
  bool aborted() const { return aborted_; }

 private:
  std::size_t size_;
  std::vector<GradSet*> inputs_;
  std::vector<std::vector<double>> flats_;
  GradSet result_;
  std::string error_;
  std::barrier<> gather_;
  std::barrier<> release_;
  std::atomic<std::size_t> checks_{0};
  std::atomic<bool> aborted_{false};
};

}  // namespace rlstack
