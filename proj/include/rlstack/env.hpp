#pragma once

// Environment and space abstractions, plus per-trajectory diagnostics.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlstack/rng.hpp"
#include "rlstack/struct_array.hpp"

namespace rlstack {

class EnvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Discrete actions carry `index`; continuous actions carry `value`.
struct Action {
  std::int64_t index = 0;
  std::vector<float> value;
};

struct Space {
  enum class Kind : std::uint8_t { discrete, box };
  Kind kind = Kind::discrete;
  std::size_t n = 0;
  std::vector<double> low, high;

  static Space discrete(std::size_t n) {
    if (n == 0) throw EnvError("discrete space needs n > 0");
    return Space{Kind::discrete, n, {}, {}};
  }
  static Space box(std::vector<double> low, std::vector<double> high) {
    if (low.size() != high.size() || low.empty()) throw EnvError("box bounds must have equal non-zero length");
    for (std::size_t i = 0; i < low.size(); ++i)
      if (!(low[i] <= high[i])) throw EnvError("box requires low <= high");
    return Space{Kind::box, 0, std::move(low), std::move(high)};
  }

  bool is_discrete() const { return kind == Kind::discrete; }
  /// Flat width: n for discrete (one-hot), dims for box.
  std::size_t flat_dim() const { return is_discrete() ? n : low.size(); }

  bool contains(const Action& a) const {
    if (is_discrete()) return a.index >= 0 && static_cast<std::size_t>(a.index) < n;
    if (a.value.size() != low.size()) return false;
    for (std::size_t i = 0; i < low.size(); ++i)
      if (!(a.value[i] >= low[i] && a.value[i] <= high[i])) return false;
    return true;
  }

  Action sample(SlotRng& rng) const {
    Action a;
    if (is_discrete()) {
      a.index = static_cast<std::int64_t>(rng.below(n));
    } else {
      for (std::size_t i = 0; i < low.size(); ++i)
        a.value.push_back(static_cast<float>(low[i] + (high[i] - low[i]) * rng.uniform()));
    }
    return a;
  }

  /// Buffer leaf kind/shape used when storing samples of this space.
  std::pair<ElementKind, std::vector<std::size_t>> leaf() const {
    if (is_discrete()) return {ElementKind::int64, {}};
    return {ElementKind::float32, {low.size()}};
  }
};

/// Named tree of sub-spaces; pairs with StructSpec.
struct CompositeSpace {
  std::string name;
  std::optional<Space> space;
  std::vector<CompositeSpace> fields;

  StructSpec struct_spec() const {
    StructSpec s;
    add_to(s, "");
    return s;
  }

 private:
  void add_to(StructSpec& s, const std::string& prefix) const {
    for (const auto& f : fields) {
      std::string path = prefix.empty() ? f.name : prefix + "." + f.name;
      if (f.space) {
        auto [kind, shape] = f.space->leaf();
        s.add_leaf(path, kind, shape);
      } else {
        f.add_to(s, path);
      }
    }
  }
};

struct EnvStep {
  std::vector<float> observation;
  double reward = 0.0;
  bool done = false;
  /// One value per scalar leaf of the environment's info spec, in spec order.
  std::vector<double> env_info;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual std::string name() const = 0;
  virtual Space observation_space() const = 0;
  virtual Space action_space() const = 0;
  /// Fixed across the environment's lifetime. Every env reports `timeout`.
  virtual StructSpec info_spec() const {
    StructSpec s;
    s.add_leaf("timeout", ElementKind::boolean);
    return s;
  }

  virtual void seed(SlotRng rng) { rng_ = rng; }
  virtual std::vector<float> reset() = 0;
  virtual EnvStep step(const Action& a) = 0;

 protected:
  void check_action(const Action& a) const {
    if (!action_space().contains(a)) throw EnvError(name() + ": action outside the action space");
  }
  SlotRng rng_;
};

using EnvFactory = std::function<std::unique_ptr<Env>()>;

/// Completed-trajectory diagnostics.
struct TrajRecord {
  std::size_t length = 0;
  double return_ = 0.0;
  double discounted_return = 0.0;
  std::size_t slot = 0;
  bool timeout = false;
  /// Batch row at which the trajectory ended.
  std::size_t end_t = 0;
};

class TrajInfo {
 public:
  explicit TrajInfo(double discount = 1.0) : discount_(discount) {}

  void update(double reward) {
    ++length_;
    return_ += reward;
    discounted_ += cur_discount_ * reward;
    cur_discount_ *= discount_;
  }

  TrajRecord complete(std::size_t slot = 0, bool timeout = false) {
    TrajRecord r{length_, return_, discounted_, slot, timeout};
    *this = TrajInfo(discount_);
    return r;
  }

  std::size_t length() const { return length_; }
  double return_value() const { return return_; }
  double discounted_return() const { return discounted_; }

 private:
  double discount_;
  std::size_t length_ = 0;
  double return_ = 0.0;
  double discounted_ = 0.0;
  double cur_discount_ = 1.0;
};

}  // namespace rlstack
