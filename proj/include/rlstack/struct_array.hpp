#pragma once

// Nested, named collections of arrays that share leading dimensions.
//
// A StructSpec describes the tree of fields (names, element kinds, trailing
// shapes). A StructArray allocates one dense row-major leaf per spec leaf with
// shape leading_dims ++ trailing_shape, and supports structure-wide indexed or
// sliced reads and writes. Leaves may be "none" placeholders, which writes skip.

#include <sys/mman.h>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace rlstack {

class StructError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ElementKind : std::uint8_t { float32, float64, int64, boolean, uint8 };

inline std::size_t element_size(ElementKind kind) {
  switch (kind) {
    case ElementKind::float32: return 4;
    case ElementKind::float64: return 8;
    case ElementKind::int64: return 8;
    case ElementKind::boolean: return 1;
    case ElementKind::uint8: return 1;
  }
  return 0;
}

inline std::string_view kind_name(ElementKind kind) {
  switch (kind) {
    case ElementKind::float32: return "float32";
    case ElementKind::float64: return "float64";
    case ElementKind::int64: return "int64";
    case ElementKind::boolean: return "bool";
    case ElementKind::uint8: return "uint8";
  }
  return "?";
}

inline ElementKind parse_kind(std::string_view s) {
  if (s == "float32") return ElementKind::float32;
  if (s == "float64") return ElementKind::float64;
  if (s == "int64") return ElementKind::int64;
  if (s == "bool") return ElementKind::boolean;
  if (s == "uint8") return ElementKind::uint8;
  throw StructError("unsupported element kind '" + std::string(s) + "'");
}

template <class T>
constexpr ElementKind kind_of() {
  using U = std::remove_cv_t<T>;
  if constexpr (std::is_same_v<U, float>) return ElementKind::float32;
  else if constexpr (std::is_same_v<U, double>) return ElementKind::float64;
  else if constexpr (std::is_same_v<U, std::int64_t>) return ElementKind::int64;
  else if constexpr (std::is_same_v<U, bool>) return ElementKind::boolean;
  else if constexpr (std::is_same_v<U, std::uint8_t>) return ElementKind::uint8;
  else static_assert(sizeof(U) == 0, "unsupported element type");
}

namespace detail {

inline std::size_t product(std::span<const std::size_t> dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

inline std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto dot = path.find('.', start);
    parts.push_back(path.substr(start, dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

inline std::string dims_text(std::span<const std::size_t> dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

}  // namespace detail

struct SpecNode {
  std::string name;
  bool leaf = false;
  ElementKind kind = ElementKind::float32;
  std::vector<std::size_t> shape;
  std::vector<SpecNode> children;

  bool operator==(const SpecNode&) const = default;

  const SpecNode* child(std::string_view n) const {
    for (const auto& c : children)
      if (c.name == n) return &c;
    return nullptr;
  }
};

struct LeafInfo {
  std::string path;
  ElementKind kind;
  std::vector<std::size_t> shape;
  std::size_t trailing_count;
  std::size_t elem_bytes;
};

/// Schema of a StructArray: an ordered tree of named fields.
///
/// Canonical text form, one line per node, two spaces of indent per depth:
///   observation:float32[4]
///   env_info:
///     timeout:bool[]
class StructSpec {
 public:
  StructSpec() = default;

  /// Adds a leaf at a dotted path, creating interior nodes as needed.
  StructSpec& add_leaf(std::string_view path, ElementKind kind,
                       std::vector<std::size_t> shape = {}) {
    SpecNode& parent = ensure_parent(path);
    auto name = detail::split_path(path).back();
    check_name(name);
    if (parent.child(name)) throw StructError("duplicate field name '" + std::string(name) + "'");
    parent.children.push_back(SpecNode{std::string(name), true, kind, std::move(shape), {}});
    reindex();
    return *this;
  }

  /// Adds an (initially empty) interior node at a dotted path.
  StructSpec& add_node(std::string_view path) {
    SpecNode& parent = ensure_parent(path);
    auto name = detail::split_path(path).back();
    check_name(name);
    if (parent.child(name)) throw StructError("duplicate field name '" + std::string(name) + "'");
    parent.children.push_back(SpecNode{std::string(name), false, {}, {}, {}});
    reindex();
    return *this;
  }

  /// Grafts another spec's fields under `path` (or at the root when empty).
  StructSpec& add_subtree(std::string_view path, const StructSpec& other) {
    SpecNode* target = &root_;
    if (!path.empty()) {
      if (!find_node(path)) add_node(path);
      target = find_node(path);
    }
    for (const auto& c : other.root_.children) {
      if (target->child(c.name)) throw StructError("duplicate field name '" + c.name + "'");
      target->children.push_back(c);
    }
    reindex();
    return *this;
  }

  static StructSpec from_root(SpecNode root) {
    validate(root, true);
    StructSpec s;
    s.root_ = std::move(root);
    s.reindex();
    return s;
  }

  const SpecNode& root() const { return root_; }
  const std::vector<LeafInfo>& leaves() const { return leaves_; }

  std::optional<std::size_t> leaf_index(std::string_view path) const {
    for (std::size_t i = 0; i < leaves_.size(); ++i)
      if (leaves_[i].path == path) return i;
    return std::nullopt;
  }

  std::size_t require_leaf(std::string_view path) const {
    auto i = leaf_index(path);
    if (!i) throw StructError("no leaf named '" + std::string(path) + "'");
    return *i;
  }

  bool has(std::string_view path) const { return find_node_const(path) != nullptr; }

  /// Sub-spec rooted at an interior node.
  StructSpec subtree(std::string_view path) const {
    const SpecNode* n = find_node_const(path);
    if (!n || n->leaf) throw StructError("no interior node named '" + std::string(path) + "'");
    SpecNode root = *n;
    root.name.clear();
    return from_root(std::move(root));
  }

  std::string to_text() const {
    std::string out;
    for (const auto& c : root_.children) emit(out, c, 0);
    return out;
  }

  static StructSpec from_text(std::string_view text) {
    SpecNode root;
    std::vector<SpecNode*> stack{&root};
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto eol = text.find('\n', pos);
      auto line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
      pos = eol == std::string_view::npos ? text.size() : eol + 1;
      ++line_no;
      if (line.empty()) continue;
      std::size_t indent = 0;
      while (indent < line.size() && line[indent] == ' ') ++indent;
      auto fail = [&](const std::string& what) {
        throw StructError("spec line " + std::to_string(line_no) + ": " + what);
      };
      if (indent % 2) fail("odd indentation");
      std::size_t depth = indent / 2;
      if (depth + 1 > stack.size()) fail("indentation skips a level");
      stack.resize(depth + 1);
      line = line.substr(indent);
      auto colon = line.find(':');
      if (colon == std::string_view::npos) fail("missing ':'");
      SpecNode node;
      node.name = std::string(line.substr(0, colon));
      auto rest = line.substr(colon + 1);
      if (!rest.empty()) {
        auto br = rest.find('[');
        if (br == std::string_view::npos || rest.back() != ']') fail("malformed leaf");
        node.leaf = true;
        node.kind = parse_kind(rest.substr(0, br));
        auto dims = rest.substr(br + 1, rest.size() - br - 2);
        std::size_t dp = 0;
        while (dp < dims.size()) {
          auto comma = dims.find(',', dp);
          auto tok = dims.substr(dp, comma == std::string_view::npos ? std::string_view::npos : comma - dp);
          std::size_t v = 0;
          auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
          if (ec != std::errc() || p != tok.data() + tok.size()) fail("bad extent '" + std::string(tok) + "'");
          node.shape.push_back(v);
          dp = comma == std::string_view::npos ? dims.size() : comma + 1;
        }
      }
      SpecNode* parent = stack.back();
      if (parent->leaf) fail("leaf cannot have children");
      parent->children.push_back(std::move(node));
      stack.push_back(&parent->children.back());
    }
    return from_root(std::move(root));
  }

  bool operator==(const StructSpec& o) const { return root_ == o.root_; }

 private:
  static void check_name(std::string_view name) {
    if (name.empty()) throw StructError("empty field name");
    for (char c : name)
      if (c == '.' || c == ':' || c == ' ' || c == '[' || c == '\n')
        throw StructError("invalid character in field name '" + std::string(name) + "'");
  }

  static void validate(const SpecNode& node, bool is_root) {
    if (!is_root) check_name(node.name);
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j)
        if (node.children[i].name == node.children[j].name)
          throw StructError("duplicate field name '" + node.children[i].name + "'");
      validate(node.children[i], false);
    }
  }

  SpecNode* find_node(std::string_view path) {
    return const_cast<SpecNode*>(find_node_const(path));
  }

  const SpecNode* find_node_const(std::string_view path) const {
    const SpecNode* cur = &root_;
    for (auto part : detail::split_path(path)) {
      cur = cur->child(part);
      if (!cur) return nullptr;
    }
    return cur;
  }

  SpecNode& ensure_parent(std::string_view path) {
    auto parts = detail::split_path(path);
    SpecNode* cur = &root_;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      check_name(parts[i]);
      SpecNode* next = nullptr;
      for (auto& c : cur->children)
        if (c.name == parts[i]) next = &c;
      if (!next) {
        cur->children.push_back(SpecNode{std::string(parts[i]), false, {}, {}, {}});
        next = &cur->children.back();
      } else if (next->leaf) {
        throw StructError("'" + std::string(parts[i]) + "' is a leaf");
      }
      cur = next;
    }
    return *cur;
  }

  static void emit(std::string& out, const SpecNode& n, std::size_t depth) {
    out.append(depth * 2, ' ');
    out += n.name;
    out += ':';
    if (n.leaf) {
      out += kind_name(n.kind);
      out += detail::dims_text(n.shape);
    }
    out += '\n';
    for (const auto& c : n.children) emit(out, c, depth + 1);
  }

  void reindex() {
    leaves_.clear();
    collect(root_, "");
  }

  void collect(const SpecNode& n, const std::string& prefix) {
    for (const auto& c : n.children) {
      std::string path = prefix.empty() ? c.name : prefix + "." + c.name;
      if (c.leaf) {
        std::size_t tc = detail::product(c.shape);
        leaves_.push_back(LeafInfo{path, c.kind, c.shape, tc, tc * element_size(c.kind)});
      } else {
        collect(c, path);
      }
    }
  }

  SpecNode root_;
  std::vector<LeafInfo> leaves_;
};

// ---------------------------------------------------------------------------
// Building specs from example records.

struct ExampleValue {
  ElementKind kind = ElementKind::float32;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  template <class T>
  static ExampleValue scalar(T v) {
    return ExampleValue{kind_of<T>(), {}, {static_cast<double>(v)}};
  }
  template <class T>
  static ExampleValue array(std::vector<std::size_t> shape, std::vector<T> v) {
    ExampleValue e{kind_of<T>(), std::move(shape), {}};
    e.values.assign(v.begin(), v.end());
    return e;
  }
};

/// A nested named record of scalar-or-array values.
struct Example {
  std::string name;
  std::optional<ExampleValue> value;
  std::vector<Example> fields;

  static Example leaf(std::string name, ExampleValue v) { return Example{std::move(name), std::move(v), {}}; }
  static Example node(std::string name, std::vector<Example> fields) {
    return Example{std::move(name), std::nullopt, std::move(fields)};
  }
  static Example record(std::vector<Example> fields) { return node("", std::move(fields)); }
};

namespace detail {
inline SpecNode spec_node_from_example(const Example& ex) {
  SpecNode n;
  n.name = ex.name;
  if (ex.value) {
    const auto& v = *ex.value;
    if (v.values.size() != product(v.shape))
      throw StructError("example '" + ex.name + "' value count does not match shape");
    for (double x : v.values)
      if (!std::isfinite(x)) throw StructError("example '" + ex.name + "' has non-finite value");
    n.leaf = true;
    n.kind = v.kind;
    n.shape = v.shape;
    return n;
  }
  for (const auto& f : ex.fields) n.children.push_back(spec_node_from_example(f));
  return n;
}
}  // namespace detail

inline StructSpec build_spec_from_example(const Example& example) {
  SpecNode root = detail::spec_node_from_example(example);
  root.name.clear();
  return StructSpec::from_root(std::move(root));
}

// ---------------------------------------------------------------------------
// Index expressions over leading dimensions.

struct Sel {
  enum class Kind : std::uint8_t { index, range, full };
  Kind kind = Kind::full;
  std::size_t begin = 0;
  std::size_t end = 0;

  static Sel at(std::size_t i) { return Sel{Kind::index, i, i + 1}; }
  static Sel span(std::size_t b, std::size_t e) { return Sel{Kind::range, b, e}; }
  static Sel all() { return Sel{}; }
};

/// One selector per leading dimension; missing trailing selectors mean full.
using IndexExpr = std::vector<Sel>;

enum class Backing : std::uint8_t { local, shared };

class StructArray;
StructArray read(const StructArray& src, const IndexExpr& idx);

class StructArray {
 public:
  StructArray() = default;

  static StructArray allocate(const StructSpec& spec, std::vector<std::size_t> leading,
                              Backing backing = Backing::local) {
    for (auto d : leading)
      if (d == 0) throw StructError("leading extents must be positive, got " + detail::dims_text(leading));
    StructArray a;
    a.spec_ = std::make_shared<const StructSpec>(spec);
    a.leading_ = std::move(leading);
    a.backing_ = backing;
    std::size_t rows = detail::product(a.leading_);
    for (const auto& leaf : spec.leaves()) {
      std::size_t bytes = rows * leaf.elem_bytes;
      a.leaves_.push_back(Leaf{allocate_bytes(bytes, backing), 0});
    }
    return a;
  }

  /// An array whose every leaf is the "none" placeholder.
  static StructArray none_like(const StructSpec& spec, std::vector<std::size_t> leading) {
    StructArray a;
    a.spec_ = std::make_shared<const StructSpec>(spec);
    a.leading_ = std::move(leading);
    a.leaves_.resize(spec.leaves().size());
    return a;
  }

  const StructSpec& spec() const { return *spec_; }
  std::span<const std::size_t> leading_dims() const { return leading_; }
  std::size_t leading_count() const { return detail::product(leading_); }
  std::size_t num_leaves() const { return leaves_.size(); }
  Backing backing() const { return backing_; }
  bool empty() const { return !spec_; }

  bool is_none(std::size_t leaf) const { return !leaves_.at(leaf).storage; }
  void set_none(std::string_view path) { leaves_.at(spec_->require_leaf(path)).storage.reset(); }

  std::byte* leaf_bytes(std::size_t i) {
    auto& l = leaves_.at(i);
    if (!l.storage) throw StructError("leaf '" + spec_->leaves()[i].path + "' is a placeholder");
    return l.storage.get() + l.offset;
  }
  const std::byte* leaf_bytes(std::size_t i) const {
    return const_cast<StructArray*>(this)->leaf_bytes(i);
  }

  template <class T>
  std::span<T> leaf(std::size_t i) {
    check_kind<T>(i);
    return {reinterpret_cast<T*>(leaf_bytes(i)), leading_count() * spec_->leaves()[i].trailing_count};
  }
  template <class T>
  std::span<const T> leaf(std::size_t i) const {
    check_kind<T>(i);
    return {reinterpret_cast<const T*>(leaf_bytes(i)), leading_count() * spec_->leaves()[i].trailing_count};
  }
  template <class T>
  std::span<T> leaf(std::string_view path) { return leaf<T>(spec_->require_leaf(path)); }
  template <class T>
  std::span<const T> leaf(std::string_view path) const { return leaf<T>(spec_->require_leaf(path)); }

  /// Trailing elements of leaf `i` at flat leading position `row`.
  template <class T>
  std::span<T> row(std::string_view path, std::size_t flat_row) {
    return row<T>(spec_->require_leaf(path), flat_row);
  }
  template <class T>
  std::span<const T> row(std::string_view path, std::size_t flat_row) const {
    return row<T>(spec_->require_leaf(path), flat_row);
  }

  template <class T>
  std::span<T> row(std::size_t i, std::size_t flat_row) {
    std::size_t tc = spec_->leaves()[i].trailing_count;
    return leaf<T>(i).subspan(flat_row * tc, tc);
  }
  template <class T>
  std::span<const T> row(std::size_t i, std::size_t flat_row) const {
    std::size_t tc = spec_->leaves()[i].trailing_count;
    return leaf<T>(i).subspan(flat_row * tc, tc);
  }

  std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != leading_.size()) throw StructError("index rank does not match leading dims");
    std::size_t flat = 0;
    std::size_t d = 0;
    for (auto i : idx) {
      if (i >= leading_[d]) throw StructError("index out of range");
      flat = flat * leading_[d] + i;
      ++d;
    }
    return flat;
  }

  template <class T>
  std::span<T> at(std::string_view path, std::initializer_list<std::size_t> idx) {
    return row<T>(spec_->require_leaf(path), flat_index(idx));
  }
  template <class T>
  std::span<const T> at(std::string_view path, std::initializer_list<std::size_t> idx) const {
    return row<T>(spec_->require_leaf(path), flat_index(idx));
  }

  /// Zero-copy view of rows [begin, end) of the first leading dimension.
  StructArray view(std::size_t begin, std::size_t end) const {
    if (leading_.empty() || begin >= end || end > leading_[0])
      throw StructError("view range out of bounds");
    StructArray v = *this;
    std::size_t inner = detail::product(std::span(leading_).subspan(1));
    v.leading_[0] = end - begin;
    for (std::size_t i = 0; i < leaves_.size(); ++i)
      v.leaves_[i].offset += begin * inner * spec_->leaves()[i].elem_bytes;
    return v;
  }

  /// Zero-copy view of a single index of the first leading dimension (rank reduced).
  StructArray view_index(std::size_t i) const {
    StructArray v = view(i, i + 1);
    v.leading_.erase(v.leading_.begin());
    return v;
  }

  /// Deep copy with private backing.
  StructArray clone() const { return read(*this, {}); }

  bool shares_storage_with(const StructArray& o) const {
    for (const auto& a : leaves_)
      for (const auto& b : o.leaves_)
        if (a.storage && a.storage == b.storage) return true;
    return false;
  }

 private:
  struct Leaf {
    std::shared_ptr<std::byte> storage;
    std::size_t offset = 0;
  };

  template <class T>
  void check_kind(std::size_t i) const {
    if (spec_->leaves().at(i).kind != kind_of<T>())
      throw StructError("leaf '" + spec_->leaves()[i].path + "' has kind " +
                        std::string(kind_name(spec_->leaves()[i].kind)));
  }

  static std::shared_ptr<std::byte> allocate_bytes(std::size_t bytes, Backing backing) {
    std::size_t n = std::max<std::size_t>(bytes, 1);
    if (backing == Backing::shared) {
      void* p = ::mmap(nullptr, n, PROT_READ | PROT_WRITE, MAP_SHARED | MAP_ANONYMOUS, -1, 0);
      if (p == MAP_FAILED) throw StructError("shared allocation of " + std::to_string(n) + " bytes failed");
      return std::shared_ptr<std::byte>(static_cast<std::byte*>(p), [n](std::byte* q) { ::munmap(q, n); });
    }
    std::byte* p = new (std::nothrow) std::byte[n]();
    if (!p) throw StructError("allocation of " + std::to_string(n) + " bytes failed");
    return std::shared_ptr<std::byte>(p, std::default_delete<std::byte[]>());
  }

  std::shared_ptr<const StructSpec> spec_;
  std::vector<std::size_t> leading_;
  std::vector<Leaf> leaves_;
  Backing backing_ = Backing::local;

  friend StructArray read(const StructArray&, const IndexExpr&);
  friend void write(StructArray&, const IndexExpr&, const StructArray&);
  friend void copy_region(StructArray&, const IndexExpr&, const StructArray&, const IndexExpr&);
};

namespace detail {

struct Region {
  std::vector<std::size_t> begin;   // per leading dim
  std::vector<std::size_t> count;   // per leading dim
  std::vector<std::size_t> result;  // kept (non-index) extents
};

inline Region resolve(std::span<const std::size_t> leading, const IndexExpr& idx) {
  if (idx.size() > leading.size()) throw StructError("index has more selectors than leading dims");
  Region r;
  for (std::size_t d = 0; d < leading.size(); ++d) {
    Sel s = d < idx.size() ? idx[d] : Sel::all();
    std::size_t b = 0, c = leading[d];
    switch (s.kind) {
      case Sel::Kind::index:
        if (s.begin >= leading[d])
          throw StructError("index " + std::to_string(s.begin) + " out of range for extent " +
                            std::to_string(leading[d]));
        b = s.begin;
        c = 1;
        break;
      case Sel::Kind::range:
        if (s.begin >= s.end || s.end > leading[d])
          throw StructError("range " + std::to_string(s.begin) + ".." + std::to_string(s.end) +
                            " out of range for extent " + std::to_string(leading[d]));
        b = s.begin;
        c = s.end - s.begin;
        r.result.push_back(c);
        break;
      case Sel::Kind::full:
        r.result.push_back(c);
        break;
    }
    r.begin.push_back(b);
    r.count.push_back(c);
  }
  return r;
}

/// Calls fn(flat_row_in_array, ordinal_within_region) for every selected row.
template <class Fn>
void for_each_row(std::span<const std::size_t> leading, const Region& r, Fn&& fn) {
  std::size_t rank = leading.size();
  std::size_t total = product(r.count);
  std::vector<std::size_t> pos(rank, 0);
  for (std::size_t ord = 0; ord < total; ++ord) {
    std::size_t flat = 0;
    for (std::size_t d = 0; d < rank; ++d) flat = flat * leading[d] + r.begin[d] + pos[d];
    fn(flat, ord);
    for (std::size_t d = rank; d-- > 0;) {
      if (++pos[d] < r.count[d]) break;
      pos[d] = 0;
    }
  }
}

template <class T>
void store_as(std::byte* dst, double v) {
  T x = static_cast<T>(v);
  std::memcpy(dst, &x, sizeof(T));
}

inline void store_scalar(std::byte* dst, ElementKind kind, double v) {
  switch (kind) {
    case ElementKind::float32: store_as<float>(dst, v); break;
    case ElementKind::float64: store_as<double>(dst, v); break;
    case ElementKind::int64: store_as<std::int64_t>(dst, v); break;
    case ElementKind::boolean: store_as<bool>(dst, v != 0.0); break;
    case ElementKind::uint8: store_as<std::uint8_t>(dst, v); break;
  }
}

}  // namespace detail

/// Copies the selected region into a new private array.
inline StructArray read(const StructArray& src, const IndexExpr& idx) {
  auto region = detail::resolve(src.leading_, idx);
  StructArray out;
  out.spec_ = src.spec_;
  out.leading_ = region.result;
  std::size_t rows = detail::product(region.count);
  const auto& leaves = src.spec_->leaves();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (!src.leaves_[i].storage) {
      out.leaves_.push_back({});
      continue;
    }
    std::size_t eb = leaves[i].elem_bytes;
    auto storage = StructArray::allocate_bytes(rows * eb, Backing::local);
    const std::byte* s = src.leaf_bytes(i);
    std::byte* d = storage.get();
    detail::for_each_row(src.leading_, region, [&](std::size_t flat, std::size_t ord) {
      if (eb) std::memcpy(d + ord * eb, s + flat * eb, eb);
    });
    out.leaves_.push_back({std::move(storage), 0});
  }
  return out;
}

/// dest[idx] = src. Placeholder leaves in src are skipped.
inline void write(StructArray& dest, const IndexExpr& idx, const StructArray& src) {
  if (!(src.spec() == dest.spec())) throw StructError("structure mismatch in write");
  auto region = detail::resolve(dest.leading_, idx);
  if (region.result != src.leading_)
    throw StructError("shape mismatch in write: region " + detail::dims_text(region.result) +
                      " vs source " + detail::dims_text(src.leading_));
  StructArray tmp;
  const StructArray* from = &src;
  if (dest.shares_storage_with(src)) {
    tmp = read(src, {});
    from = &tmp;
  }
  const auto& leaves = dest.spec_->leaves();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (!from->leaves_[i].storage) continue;
    std::size_t eb = leaves[i].elem_bytes;
    std::byte* d = dest.leaf_bytes(i);
    const std::byte* s = from->leaf_bytes(i);
    detail::for_each_row(dest.leading_, region, [&](std::size_t flat, std::size_t ord) {
      if (eb) std::memcpy(d + flat * eb, s + ord * eb, eb);
    });
  }
}

/// Broadcasts one value to every element of every leaf in the region.
inline void fill(StructArray& dest, const IndexExpr& idx, double value) {
  auto region = detail::resolve(dest.leading_dims(), idx);
  const auto& leaves = dest.spec().leaves();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (dest.is_none(i)) continue;
    std::size_t es = element_size(leaves[i].kind);
    std::size_t tc = leaves[i].trailing_count;
    std::byte* d = dest.leaf_bytes(i);
    detail::for_each_row(dest.leading_dims(), region, [&](std::size_t flat, std::size_t) {
      for (std::size_t k = 0; k < tc; ++k) detail::store_scalar(d + (flat * tc + k) * es, leaves[i].kind, value);
    });
  }
}

/// dest[dest_idx] = src[src_idx]; overlapping self-copies go through a temporary.
inline void copy_region(StructArray& dest, const IndexExpr& dest_idx, const StructArray& src,
                        const IndexExpr& src_idx) {
  if (!(src.spec() == dest.spec())) throw StructError("structure mismatch in copy_region");
  auto dr = detail::resolve(dest.leading_, dest_idx);
  auto sr = detail::resolve(src.leading_, src_idx);
  if (detail::product(dr.count) != detail::product(sr.count) || dr.result != sr.result)
    throw StructError("shape mismatch in copy_region: " + detail::dims_text(dr.result) + " vs " +
                      detail::dims_text(sr.result));
  if (dest.shares_storage_with(src)) {
    write(dest, dest_idx, read(src, src_idx));
    return;
  }
  std::size_t rows = detail::product(sr.count);
  std::vector<std::size_t> src_rows(rows);
  detail::for_each_row(src.leading_, sr, [&](std::size_t flat, std::size_t ord) { src_rows[ord] = flat; });
  const auto& leaves = dest.spec_->leaves();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (!src.leaves_[i].storage) continue;
    std::size_t eb = leaves[i].elem_bytes;
    std::byte* d = dest.leaf_bytes(i);
    const std::byte* s = src.leaf_bytes(i);
    detail::for_each_row(dest.leading_, dr, [&](std::size_t flat, std::size_t ord) {
      if (eb) std::memcpy(d + flat * eb, s + src_rows[ord] * eb, eb);
    });
  }
}

/// Bitwise equality of structure, leading dims and leaf contents.
inline bool bit_equal(const StructArray& a, const StructArray& b) {
  if (!(a.spec() == b.spec())) return false;
  if (!std::ranges::equal(a.leading_dims(), b.leading_dims())) return false;
  std::size_t rows = a.leading_count();
  for (std::size_t i = 0; i < a.num_leaves(); ++i) {
    if (a.is_none(i) != b.is_none(i)) return false;
    if (a.is_none(i)) continue;
    std::size_t n = rows * a.spec().leaves()[i].elem_bytes;
    if (n && std::memcmp(a.leaf_bytes(i), b.leaf_bytes(i), n) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Raw dump: text header (spec + leading dims) then leaves in spec order,
// row-major, little-endian.

namespace detail {
template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}
}  // namespace detail

inline void dump(std::ostream& os, const StructArray& a) {
  std::string spec = a.spec().to_text();
  std::size_t spec_lines = static_cast<std::size_t>(std::count(spec.begin(), spec.end(), '\n'));
  os << "rlstack-struct-array 1\n";
  os << "leading";
  for (auto d : a.leading_dims()) os << ' ' << d;
  os << "\nspec " << spec_lines << "\n" << spec << "data\n";
  std::size_t rows = a.leading_count();
  for (std::size_t i = 0; i < a.num_leaves(); ++i) {
    const auto& info = a.spec().leaves()[i];
    std::size_t n = rows * info.trailing_count;
    const std::byte* p = a.leaf_bytes(i);
    if constexpr (std::endian::native == std::endian::little) {
      os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * element_size(info.kind)));
    } else {
      std::size_t es = element_size(info.kind);
      for (std::size_t k = 0; k < n; ++k) {
        std::array<char, 8> buf{};
        std::memcpy(buf.data(), p + k * es, es);
        std::reverse(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(es));
        os.write(buf.data(), static_cast<std::streamsize>(es));
      }
    }
  }
  if (!os) throw StructError("dump: write failed");
}

inline StructArray load(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "rlstack-struct-array 1") throw StructError("load: bad magic");
  if (!std::getline(is, line) || line.rfind("leading", 0) != 0) throw StructError("load: missing leading dims");
  std::vector<std::size_t> leading;
  {
    std::istringstream ls(line.substr(7));
    std::size_t d;
    while (ls >> d) leading.push_back(d);
  }
  if (!std::getline(is, line) || line.rfind("spec ", 0) != 0) throw StructError("load: missing spec");
  std::size_t n_lines = std::stoul(line.substr(5));
  std::string spec_text;
  for (std::size_t i = 0; i < n_lines; ++i) {
    if (!std::getline(is, line)) throw StructError("load: truncated spec");
    spec_text += line + "\n";
  }
  if (!std::getline(is, line) || line != "data") throw StructError("load: missing data marker");
  auto spec = StructSpec::from_text(spec_text);
  auto a = StructArray::allocate(spec, leading);
  std::size_t rows = a.leading_count();
  for (std::size_t i = 0; i < a.num_leaves(); ++i) {
    const auto& info = spec.leaves()[i];
    std::size_t es = element_size(info.kind);
    std::size_t n = rows * info.trailing_count;
    std::byte* p = a.leaf_bytes(i);
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * es));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t k = 0; k < n; ++k) std::reverse(p + k * es, p + (k + 1) * es);
    }
  }
  if (!is) throw StructError("load: truncated data");
  return a;
}

}  // namespace rlstack
