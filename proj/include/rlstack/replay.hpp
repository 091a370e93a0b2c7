#pragma once

// Replay storage: sum tree, n-step transition replay (uniform or prioritized),
// sequence replay with periodically stored recurrent state, and a frame store
// that keeps single frames and rebuilds k-frame stacks on demand.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rlstack/rng.hpp"
#include "rlstack/struct_array.hpp"
#include "rlstack/tensor.hpp"

namespace rlstack {

class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------

class SumTree {
 public:
  explicit SumTree(std::size_t size) : size_(size) {
    if (size == 0) throw ReplayError("sum tree needs at least one leaf");
    cap_ = 1;
    while (cap_ < size) cap_ <<= 1;
    nodes_.assign(2 * cap_, 0.0);
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return cap_; }
  double total() const { return nodes_[1]; }
  double get(std::size_t leaf) const { return nodes_[cap_ + check(leaf)]; }

  void update(std::size_t leaf, double priority) {
    if (!(priority >= 0.0) || !std::isfinite(priority)) throw ReplayError("priority must be finite and non-negative");
    std::size_t i = cap_ + check(leaf);
    nodes_[i] = priority;
    // parents are recomputed from children, never adjusted by deltas
    for (i >>= 1; i >= 1; i >>= 1) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
  }

  /// Leaf where the running prefix sum first exceeds `prefix`.
  std::size_t find(double prefix) const {
    if (!(prefix >= 0.0 && prefix < total())) throw ReplayError("prefix outside [0, total)");
    std::size_t i = 1;
    while (i < cap_) {
      double left = nodes_[2 * i];
      if (prefix < left || nodes_[2 * i + 1] == 0.0) {
        i = 2 * i;
      } else {
        prefix -= left;
        i = 2 * i + 1;
      }
    }
    // rounding in the descent can land on an empty leaf; step to a neighbour with mass
    std::size_t leaf = i - cap_;
    if (nodes_[i] == 0.0) {
      for (std::size_t d = 1; d < size_; ++d) {
        if (leaf >= d && nodes_[cap_ + leaf - d] > 0.0) return leaf - d;
        if (leaf + d < size_ && nodes_[cap_ + leaf + d] > 0.0) return leaf + d;
      }
    }
    return leaf;
  }

  /// Node-sum invariant, for tests.
  bool consistent(double rel_tol = 1e-9) const {
    for (std::size_t i = 1; i < cap_; ++i) {
      double s = nodes_[2 * i] + nodes_[2 * i + 1];
      if (std::abs(nodes_[i] - s) > rel_tol * std::max(1.0, std::abs(s))) return false;
    }
    return true;
  }

 private:
  std::size_t check(std::size_t leaf) const {
    if (leaf >= size_) throw ReplayError("sum tree leaf out of range");
    return leaf;
  }
  std::size_t size_, cap_;
  std::vector<double> nodes_;
};

// ---------------------------------------------------------------------------

struct PrioritySpec {
  double alpha = 0.6;
  double beta = 0.4;
  /// When set, beta moves linearly to 1 over this many sampling calls.
  std::size_t beta_anneal_calls = 0;
  double floor = 1e-3;
};

/// Fingerprint of one row of every leaf except `checksum`.
inline std::int64_t row_checksum(const StructArray& a, std::size_t flat_row) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto& leaves = a.spec().leaves();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (leaves[i].path == "checksum" || a.is_none(i)) continue;
    const std::byte* p = a.leaf_bytes(i) + flat_row * leaves[i].elem_bytes;
    for (std::size_t k = 0; k < leaves[i].elem_bytes; ++k) {
      h ^= static_cast<std::uint64_t>(p[k]);
      h *= 1099511628211ULL;
    }
  }
  return static_cast<std::int64_t>(h);
}

/// Ring storage [capacity_T, B] shared by the replay variants. The stored spec
/// is the sample-batch spec plus an int64 `checksum` leaf written after the row.
class ReplayCore {
 public:
  ReplayCore(const StructSpec& batch_spec, std::size_t capacity_T, std::size_t B, Backing backing = Backing::local)
      : batch_spec_(batch_spec), cap_(capacity_T), B_(B) {
    if (capacity_T == 0 || B == 0) throw ReplayError("replay capacity and B must be positive");
    StructSpec s = batch_spec;
    s.add_leaf("checksum", ElementKind::int64);
    storage_ = StructArray::allocate(s, {capacity_T, B}, backing);
    checksum_leaf_ = s.require_leaf("checksum");
  }
  virtual ~ReplayCore() = default;

  std::size_t capacity_T() const { return cap_; }
  std::size_t B() const { return B_; }
  std::size_t cursor() const { return cursor_; }
  std::size_t size_T() const { return size_; }
  std::size_t size() const { return size_ * B_; }
  std::size_t total_appended_T() const { return appended_; }
  const StructArray& storage() const { return storage_; }

  /// Oldest retained row.
  std::size_t oldest() const { return size_ < cap_ ? 0 : cursor_; }
  /// Age rank of ring row t: 0 for the oldest retained row.
  std::size_t offset_of(std::size_t t) const { return (t + cap_ - oldest()) % cap_; }

  /// Copies a [T, B] batch in at the cursor; the checksum column goes last.
  virtual void append(const StructArray& batch) {
    auto ld = batch.leading_dims();
    if (ld.size() != 2 || ld[1] != B_) throw ReplayError("batch B does not match replay B");
    if (!(batch.spec() == batch_spec_)) throw ReplayError("batch spec does not match replay spec");
    std::size_t T = ld[0];
    if (T > cap_) throw ReplayError("batch longer than replay capacity");
    const auto& leaves = batch_spec_.leaves();
    for (std::size_t t = 0; t < T; ++t) {
      std::size_t dst_t = (cursor_ + t) % cap_;
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        if (batch.is_none(i)) continue;
        std::size_t rb = leaves[i].elem_bytes * B_;
        std::memcpy(storage_.leaf_bytes(i) + dst_t * rb, batch.leaf_bytes(i) + t * rb, rb);
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      std::size_t dst_t = (cursor_ + t) % cap_;
      for (std::size_t b = 0; b < B_; ++b)
        storage_.leaf<std::int64_t>(checksum_leaf_)[dst_t * B_ + b] = row_checksum(storage_, dst_t * B_ + b);
    }
    std::size_t first = cursor_;
    cursor_ = (cursor_ + T) % cap_;
    size_ = std::min(cap_, size_ + T);
    appended_ += T;
    on_append(first, T);
  }

  bool verify_row(std::size_t t, std::size_t b) const {
    return storage_.leaf<std::int64_t>(checksum_leaf_)[t * B_ + b] == row_checksum(storage_, t * B_ + b);
  }

 protected:
  virtual void on_append(std::size_t, std::size_t) {}

  StructSpec batch_spec_;
  std::size_t cap_, B_;
  StructArray storage_;
  std::size_t checksum_leaf_ = 0;
  std::size_t cursor_ = 0, size_ = 0, appended_ = 0;
};

struct NStepReturn {
  double return_n = 0.0;
  /// True when an actual (non-timeout) termination cut the return short.
  bool done_n = false;
  /// Discount applied to the bootstrap value: gamma^k, or 0 when done_n.
  double bootstrap_discount = 0.0;
  /// Ring row whose next_observation is the bootstrap state.
  std::size_t bootstrap_row = 0;
  std::size_t steps = 0;
};

/// Sampled transitions with n-step targets.
struct TransitionBatch {
  StructArray rows;  // [batch] copies of the sampled rows
  std::vector<double> returns, bootstrap_discounts, weights;
  std::vector<std::uint8_t> done_n;
  Tensor next_observation;  // [batch, obs_dim]
  std::vector<std::size_t> t, b;
  std::size_t checksum_failures = 0;
};

/// n-step transition replay. Requires leaves observation, reward, done,
/// next_observation and env_info.timeout in the batch spec.
class NStepReplay : public ReplayCore {
 public:
  NStepReplay(const StructSpec& spec, std::size_t capacity_T, std::size_t B, double gamma, std::size_t n_step,
              Backing backing = Backing::local)
      : ReplayCore(spec, capacity_T, B, backing), gamma_(gamma), n_(n_step) {
    if (n_step == 0 || n_step >= capacity_T) throw ReplayError("n_step must be in [1, capacity_T)");
    reward_ = spec.require_leaf("reward");
    done_ = spec.require_leaf("done");
    timeout_ = spec.require_leaf("env_info.timeout");
    next_obs_ = spec.require_leaf("next_observation");
    obs_dim_ = spec.leaves()[next_obs_].trailing_count;
  }

  std::size_t n_step() const { return n_; }
  double gamma() const { return gamma_; }

  /// Transitions whose whole n-step window is written.
  std::size_t valid_T() const { return size_ > n_ ? size_ - n_ : 0; }

  bool is_valid(std::size_t t) const { return t < cap_ && (size_ == cap_ || t < size_) && offset_of(t) < valid_T(); }

  NStepReturn n_step_return(std::size_t t, std::size_t b) const {
    if (!is_valid(t) || b >= B_) throw ReplayError("n-step return requested inside the excluded window");
    NStepReturn r;
    double disc = 1.0;
    for (std::size_t k = 0; k < n_; ++k) {
      std::size_t row = (t + k) % cap_;
      std::size_t flat = row * B_ + b;
      r.return_n += disc * static_cast<double>(storage_.leaf<float>(reward_)[flat]);
      disc *= gamma_;
      r.bootstrap_row = row;
      r.steps = k + 1;
      if (storage_.leaf<bool>(done_)[flat]) {
        if (storage_.leaf<bool>(timeout_)[flat]) {
          r.bootstrap_discount = disc;
        } else {
          r.done_n = true;
          r.bootstrap_discount = 0.0;
        }
        return r;
      }
    }
    r.bootstrap_discount = disc;
    return r;
  }

  TransitionBatch sample(std::size_t batch_size, SlotRng& rng) {
    if (valid_T() == 0) throw ReplayError("replay has no valid transitions yet");
    std::vector<std::size_t> ts(batch_size), bs(batch_size);
    std::vector<double> w(batch_size, 1.0);
    draw(batch_size, rng, ts, bs, w);
    return gather(ts, bs, std::move(w));
  }

 protected:
  virtual void draw(std::size_t n, SlotRng& rng, std::vector<std::size_t>& ts, std::vector<std::size_t>& bs,
                    std::vector<double>&) {
    std::size_t start = oldest();
    for (std::size_t i = 0; i < n; ++i) {
      ts[i] = (start + rng.below(valid_T())) % cap_;
      bs[i] = rng.below(B_);
    }
  }

  TransitionBatch gather(const std::vector<std::size_t>& ts, const std::vector<std::size_t>& bs,
                         std::vector<double> weights) const {
    std::size_t n = ts.size();
    TransitionBatch out;
    out.rows = StructArray::allocate(batch_spec_, {n});
    out.next_observation = Tensor({n, obs_dim_});
    out.returns.resize(n);
    out.bootstrap_discounts.resize(n);
    out.done_n.resize(n);
    const auto& leaves = batch_spec_.leaves();
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t flat = ts[i] * B_ + bs[i];
      if (!verify_row(ts[i], bs[i])) ++out.checksum_failures;
      for (std::size_t l = 0; l < leaves.size(); ++l)
        std::memcpy(out.rows.leaf_bytes(l) + i * leaves[l].elem_bytes,
                    storage_.leaf_bytes(l) + flat * leaves[l].elem_bytes, leaves[l].elem_bytes);
      auto r = n_step_return(ts[i], bs[i]);
      out.returns[i] = r.return_n;
      out.bootstrap_discounts[i] = r.bootstrap_discount;
      out.done_n[i] = r.done_n;
      auto no = storage_.row<float>(next_obs_, r.bootstrap_row * B_ + bs[i]);
      for (std::size_t k = 0; k < obs_dim_; ++k) out.next_observation.data[i * obs_dim_ + k] = no[k];
    }
    out.t = ts;
    out.b = bs;
    out.weights = std::move(weights);
    return out;
  }

  double gamma_;
  std::size_t n_;
  std::size_t reward_, done_, timeout_, next_obs_, obs_dim_;
};

/// Proportional prioritized variant. The tree holds p^alpha per (t, b);
/// rows inside the excluded window hold zero in the tree while their stored
/// priority is kept aside and restored once the window moves past them.
class PrioritizedReplay : public NStepReplay {
 public:
  PrioritizedReplay(const StructSpec& spec, std::size_t capacity_T, std::size_t B, double gamma, std::size_t n_step,
                    PrioritySpec ps = {}, Backing backing = Backing::local)
      : NStepReplay(spec, capacity_T, B, gamma, n_step, backing), ps_(ps), tree_(capacity_T * B),
        stored_(capacity_T * B, 0.0) {
    if (ps.alpha < 0.0 || ps.beta < 0.0 || !(ps.floor > 0.0)) throw ReplayError("invalid priority spec");
  }

  const SumTree& tree() const { return tree_; }
  const PrioritySpec& priority_spec() const { return ps_; }
  double max_priority() const { return max_seen_; }
  double current_beta() const {
    if (ps_.beta_anneal_calls == 0) return ps_.beta;
    double f = std::min(1.0, static_cast<double>(calls_) / static_cast<double>(ps_.beta_anneal_calls));
    return ps_.beta + f * (1.0 - ps_.beta);
  }
  double stored_priority(std::size_t t, std::size_t b) const { return stored_.at(t * B_ + b); }

  /// p = |delta| + floor; duplicate indices resolve to the last write.
  void update_priorities(std::span<const std::size_t> ts, std::span<const std::size_t> bs,
                         std::span<const double> td_abs) {
    if (ts.size() != bs.size() || ts.size() != td_abs.size()) throw ReplayError("priority update size mismatch");
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i] >= cap_ || bs[i] >= B_) throw ReplayError("priority update index out of range");
      double p = std::abs(td_abs[i]) + ps_.floor;
      max_seen_ = std::max(max_seen_, p);
      std::size_t leaf = ts[i] * B_ + bs[i];
      stored_[leaf] = p;
      tree_.update(leaf, is_valid(ts[i]) ? std::pow(p, ps_.alpha) : 0.0);
    }
  }

 protected:
  void on_append(std::size_t first, std::size_t T) override {
    for (std::size_t k = 0; k < T; ++k) {
      std::size_t t = (first + k) % cap_;
      for (std::size_t b = 0; b < B_; ++b) stored_[t * B_ + b] = max_seen_;
    }
    // rows whose validity may have changed: the newly written rows plus the
    // n rows before them (previous exclusion window)
    std::size_t span = std::min(cap_, T + n_);
    for (std::size_t k = 0; k < span; ++k) refresh((first + cap_ - n_ + k) % cap_);
  }

  void draw(std::size_t n, SlotRng& rng, std::vector<std::size_t>& ts, std::vector<std::size_t>& bs,
            std::vector<double>& w) override {
    double total = tree_.total();
    if (!(total > 0.0)) throw ReplayError("prioritized replay has zero total priority");
    double seg = total / static_cast<double>(n);
    double N = static_cast<double>(valid_T() * B_);
    double beta = current_beta();
    double max_w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double u = (static_cast<double>(i) + rng.uniform()) * seg;
      if (u >= total) u = std::nextafter(total, 0.0);
      std::size_t leaf = tree_.find(u);
      ts[i] = leaf / B_;
      bs[i] = leaf % B_;
      double P = tree_.get(leaf) / total;
      w[i] = std::pow(N * P, -beta);
      max_w = std::max(max_w, w[i]);
    }
    for (auto& x : w) x /= max_w;
    ++calls_;
  }

 private:
  void refresh(std::size_t t) {
    for (std::size_t b = 0; b < B_; ++b) {
      std::size_t leaf = t * B_ + b;
      tree_.update(leaf, is_valid(t) ? std::pow(stored_[leaf], ps_.alpha) : 0.0);
    }
  }

  PrioritySpec ps_;
  SumTree tree_;
  std::vector<double> stored_;
  double max_seen_ = 1.0;
  std::size_t calls_ = 0;
};

// ---------------------------------------------------------------------------

struct SequenceSpec {
  std::size_t warmup_T = 0;
  std::size_t train_T = 1;
  /// Recurrent state is stored every `period` rows; sequence starts align to it.
  std::size_t period = 1;
  /// Extra rows after the training segment for n-step targets.
  std::size_t lookahead_T = 0;

  std::size_t length() const { return warmup_T + train_T + lookahead_T; }
};

struct SequenceBatch {
  StructArray rows;          // [L, batch]
  Tensor init_state;         // [batch, state_dim]
  std::vector<std::uint8_t> resets;  // [L * batch]: 1 where a new episode starts at row t > 0
  std::vector<double> weights;
  std::vector<std::size_t> start_t, b;
  std::size_t checksum_failures = 0;
};

/// Sequence replay over [capacity_T, B]. The batch spec must contain `done`
/// and a float64 leaf holding each step's pre-step recurrent state (default
/// agent_info.prev_rnn_state); only rows aligned to the storage period keep it.
class SequenceReplay : public ReplayCore {
 public:
  SequenceReplay(const StructSpec& spec, std::size_t capacity_T, std::size_t B, SequenceSpec seq,
                 std::optional<PrioritySpec> prio = std::nullopt, double eta = 0.9,
                 const std::string& state_leaf = "agent_info.prev_rnn_state")
      : ReplayCore(without(spec, state_leaf), capacity_T, B), seq_(seq), prio_(prio), eta_(eta),
        tree_(std::max<std::size_t>(1, capacity_T / std::max<std::size_t>(seq.period, 1)) * B) {
    if (seq.period == 0 || capacity_T % seq.period) throw ReplayError("storage period must divide capacity_T");
    if (seq.length() == 0 || seq.length() > capacity_T) throw ReplayError("sequence length must be in [1, capacity_T]");
    full_spec_ = spec;
    state_leaf_ = spec.require_leaf(state_leaf);
    state_dim_ = spec.leaves()[state_leaf_].trailing_count;
    if (spec.leaves()[state_leaf_].kind != ElementKind::float64) throw ReplayError("recurrent state leaf must be float64");
    done_ = batch_spec_.require_leaf("done");
    n_starts_ = capacity_T / seq.period;
    states_.assign(n_starts_ * B * state_dim_, 0.0);
    stored_.assign(n_starts_ * B, 0.0);
  }

  const SequenceSpec& sequence_spec() const { return seq_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t num_starts() const { return n_starts_; }
  bool prioritized() const { return prio_.has_value(); }
  const SumTree& tree() const { return tree_; }
  double max_priority() const { return max_seen_; }

  /// Full-spec batch ([T, B] including the recurrent-state leaf).
  void append(const StructArray& batch) override {
    auto ld = batch.leading_dims();
    if (ld.size() != 2 || ld[1] != B_) throw ReplayError("batch B does not match replay B");
    if (!(batch.spec() == full_spec_)) throw ReplayError("batch spec does not match replay spec");
    std::size_t T = ld[0];
    if (T % seq_.period) throw ReplayError("storage period must divide the batch length");
    if (cursor_ % seq_.period) throw ReplayError("replay cursor lost alignment");
    auto st = batch.leaf<double>(state_leaf_);
    for (std::size_t t = 0; t < T; t += seq_.period) {
      std::size_t s = ((cursor_ + t) % cap_) / seq_.period;
      for (std::size_t b = 0; b < B_; ++b) {
        std::copy_n(st.begin() + static_cast<std::ptrdiff_t>((t * B_ + b) * state_dim_), state_dim_,
                    states_.begin() + static_cast<std::ptrdiff_t>((s * B_ + b) * state_dim_));
        stored_[s * B_ + b] = max_seen_;
      }
    }
    // project away the state leaf and copy the remaining fields
    ReplayCore::append(project(batch));
  }

  /// A start slot is valid when its whole sequence lies in written rows.
  bool start_valid(std::size_t s) const {
    std::size_t t = s * seq_.period;
    if (size_ < cap_ && t >= size_) return false;
    return offset_of(t) + seq_.length() <= size_;
  }

  std::size_t valid_starts() const {
    std::size_t n = 0;
    for (std::size_t s = 0; s < n_starts_; ++s) n += start_valid(s);
    return n;
  }

  SequenceBatch sample(std::size_t batch_size, SlotRng& rng) {
    std::vector<std::size_t> ss(batch_size), bs(batch_size);
    std::vector<double> w(batch_size, 1.0);
    if (prio_) {
      double total = tree_.total();
      if (!(total > 0.0)) throw ReplayError("sequence replay has no valid sequences yet");
      double seg = total / static_cast<double>(batch_size);
      double N = static_cast<double>(valid_starts() * B_);
      double max_w = 0.0;
      for (std::size_t i = 0; i < batch_size; ++i) {
        double u = (static_cast<double>(i) + rng.uniform()) * seg;
        if (u >= total) u = std::nextafter(total, 0.0);
        std::size_t leaf = tree_.find(u);
        ss[i] = leaf / B_;
        bs[i] = leaf % B_;
        w[i] = std::pow(N * tree_.get(leaf) / total, -prio_->beta);
        max_w = std::max(max_w, w[i]);
      }
      for (auto& x : w) x /= max_w;
    } else {
      std::vector<std::size_t> valid;
      for (std::size_t s = 0; s < n_starts_; ++s)
        if (start_valid(s)) valid.push_back(s);
      if (valid.empty()) throw ReplayError("sequence replay has no valid sequences yet");
      for (std::size_t i = 0; i < batch_size; ++i) {
        ss[i] = valid[rng.below(valid.size())];
        bs[i] = rng.below(B_);
      }
    }
    return gather(ss, bs, std::move(w));
  }

  /// Sequence priority: eta * max + (1 - eta) * mean of per-step |delta|.
  double aggregate_priority(std::span<const double> td_abs) const {
    if (td_abs.empty()) return prio_ ? prio_->floor : 0.0;
    double mx = 0.0, mean = 0.0;
    for (double d : td_abs) {
      mx = std::max(mx, std::abs(d));
      mean += std::abs(d);
    }
    mean /= static_cast<double>(td_abs.size());
    return eta_ * mx + (1.0 - eta_) * mean;
  }

  void update_priorities(std::span<const std::size_t> start_t, std::span<const std::size_t> bs,
                         std::span<const double> seq_priority) {
    if (!prio_) return;
    for (std::size_t i = 0; i < start_t.size(); ++i) {
      std::size_t s = start_t[i] / seq_.period;
      double p = seq_priority[i] + prio_->floor;
      max_seen_ = std::max(max_seen_, p);
      stored_[s * B_ + bs[i]] = p;
      tree_.update(s * B_ + bs[i], start_valid(s) ? std::pow(p, prio_->alpha) : 0.0);
    }
  }

 protected:
  void on_append(std::size_t, std::size_t) override {
    if (!prio_) return;
    for (std::size_t s = 0; s < n_starts_; ++s)
      for (std::size_t b = 0; b < B_; ++b)
        tree_.update(s * B_ + b, start_valid(s) ? std::pow(stored_[s * B_ + b], prio_->alpha) : 0.0);
  }

 private:
  static StructSpec without(const StructSpec& spec, const std::string& leaf) {
    spec.require_leaf(leaf);
    SpecNode root = spec.root();
    auto parts = detail::split_path(leaf);
    SpecNode* cur = &root;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i)
      for (auto& c : cur->children)
        if (c.name == parts[i]) cur = &c;
    std::erase_if(cur->children, [&](const SpecNode& c) { return c.name == parts.back(); });
    return StructSpec::from_root(root);
  }

  StructArray project(const StructArray& batch) const {
    auto ld = batch.leading_dims();
    StructArray out = StructArray::allocate(batch_spec_, {ld[0], ld[1]});
    for (std::size_t i = 0; i < batch_spec_.leaves().size(); ++i) {
      std::size_t j = full_spec_.require_leaf(batch_spec_.leaves()[i].path);
      std::size_t bytes = batch.leading_count() * batch_spec_.leaves()[i].elem_bytes;
      if (bytes) std::memcpy(out.leaf_bytes(i), batch.leaf_bytes(j), bytes);
    }
    return out;
  }

  SequenceBatch gather(const std::vector<std::size_t>& ss, const std::vector<std::size_t>& bs,
                       std::vector<double> w) const {
    std::size_t n = ss.size(), L = seq_.length();
    SequenceBatch out;
    out.rows = StructArray::allocate(batch_spec_, {L, n});
    out.init_state = Tensor({n, state_dim_});
    out.resets.assign(L * n, 0);
    const auto& leaves = batch_spec_.leaves();
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t t0 = ss[i] * seq_.period;
      std::copy_n(states_.begin() + static_cast<std::ptrdiff_t>((ss[i] * B_ + bs[i]) * state_dim_), state_dim_,
                  out.init_state.data.begin() + static_cast<std::ptrdiff_t>(i * state_dim_));
      for (std::size_t k = 0; k < L; ++k) {
        std::size_t t = (t0 + k) % cap_;
        std::size_t flat = t * B_ + bs[i];
        if (!verify_row(t, bs[i])) ++out.checksum_failures;
        for (std::size_t l = 0; l < leaves.size(); ++l)
          std::memcpy(out.rows.leaf_bytes(l) + (k * n + i) * leaves[l].elem_bytes,
                      storage_.leaf_bytes(l) + flat * leaves[l].elem_bytes, leaves[l].elem_bytes);
        if (k > 0) {
          std::size_t prev = ((t0 + k - 1) % cap_) * B_ + bs[i];
          out.resets[k * n + i] = storage_.leaf<bool>(done_)[prev] ? 1 : 0;
        }
      }
    }
    out.start_t.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.start_t[i] = ss[i] * seq_.period;
    out.b = bs;
    out.weights = std::move(w);
    return out;
  }

  StructSpec full_spec_;
  SequenceSpec seq_;
  std::optional<PrioritySpec> prio_;
  double eta_;
  SumTree tree_;
  std::size_t state_leaf_ = 0, state_dim_ = 0, done_ = 0, n_starts_ = 0;
  std::vector<double> states_;
  std::vector<double> stored_;
  double max_seen_ = 1.0;
};

// ---------------------------------------------------------------------------

/// Frame-dedup storage. Each row keeps one frame; row t lives at slot
/// t + k - 1 of a [capacity_T + k - 1, B] array. On wrap the last k - 1 rows
/// of the previous lap are copied into the first k - 1 slots, so every
/// retained row can rebuild its stack. Stacks pad with the episode's first
/// frame when the episode is younger than k.
template <class Frame = std::uint8_t>
class FrameStore {
 public:
  FrameStore(std::size_t capacity_T, std::size_t B, std::size_t k, std::size_t frame_dim)
      : cap_(capacity_T), B_(B), k_(k), fd_(frame_dim) {
    if (!capacity_T || !B || !k || !frame_dim) throw ReplayError("frame store dims must be positive");
    if (k > capacity_T) throw ReplayError("stack depth exceeds capacity");
    std::size_t slots = cap_ + k_ - 1;
    frames_.assign(slots * B_ * fd_, Frame{});
    starts_.assign(slots * B_, 1);
  }

  std::size_t frame_slots() const { return cap_ + k_ - 1; }
  std::size_t cursor() const { return cursor_; }
  std::size_t size_T() const { return size_; }
  std::size_t stack_depth() const { return k_; }

  /// frames: [T, B, frame_dim]; episode_start: [T, B], 1 where a new episode begins.
  void append(std::span<const Frame> frames, std::span<const std::uint8_t> episode_start, std::size_t T) {
    if (frames.size() != T * B_ * fd_ || episode_start.size() != T * B_) throw ReplayError("frame append shape mismatch");
    for (std::size_t t = 0; t < T; ++t) {
      if (cursor_ == 0 && size_ > 0) wrap();
      std::size_t slot = cursor_ + k_ - 1;
      std::copy_n(frames.begin() + static_cast<std::ptrdiff_t>(t * B_ * fd_), B_ * fd_,
                  frames_.begin() + static_cast<std::ptrdiff_t>(slot * B_ * fd_));
      for (std::size_t b = 0; b < B_; ++b) starts_[slot * B_ + b] = episode_start[t * B_ + b];
      cursor_ = (cursor_ + 1) % cap_;
      size_ = std::min(cap_, size_ + 1);
    }
  }

  /// Once full, the oldest k - 1 rows have lost their history frames.
  bool is_valid(std::size_t t) const {
    if (t >= cap_) return false;
    if (size_ < cap_) return t < size_;
    return (t + cap_ - cursor_) % cap_ >= k_ - 1;
  }

  /// Stacked observation at ring row t, oldest frame first: [k * frame_dim].
  std::vector<Frame> reconstruct(std::size_t t, std::size_t b) const {
    if (!is_valid(t) || b >= B_) throw ReplayError("frame reconstruct outside the written rows");
    std::vector<Frame> out(k_ * fd_);
    std::size_t slot = t + k_ - 1;
    for (std::size_t j = 0; j < k_; ++j) {
      std::copy_n(frames_.begin() + static_cast<std::ptrdiff_t>((slot * B_ + b) * fd_), fd_,
                  out.begin() + static_cast<std::ptrdiff_t>((k_ - 1 - j) * fd_));
      if (j + 1 < k_ && !starts_[slot * B_ + b]) --slot;
    }
    return out;
  }

 private:
  void wrap() {
    for (std::size_t j = 0; j + 1 < k_; ++j) {
      std::size_t from = cap_ + j;  // slots holding the last k - 1 rows of the lap
      std::copy_n(frames_.begin() + static_cast<std::ptrdiff_t>(from * B_ * fd_), B_ * fd_,
                  frames_.begin() + static_cast<std::ptrdiff_t>(j * B_ * fd_));
      std::copy_n(starts_.begin() + static_cast<std::ptrdiff_t>(from * B_), B_,
                  starts_.begin() + static_cast<std::ptrdiff_t>(j * B_));
    }
  }

  std::size_t cap_, B_, k_, fd_;
  std::vector<Frame> frames_;
  std::vector<std::uint8_t> starts_;
  std::size_t cursor_ = 0, size_ = 0;
};

}  // namespace rlstack
