#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "rlstack/struct_array.hpp"

using namespace rlstack;

namespace {

StructSpec obs_act_spec() {
  StructSpec s;
  s.add_leaf("obs", ElementKind::float32, {4});
  s.add_leaf("act", ElementKind::int64);
  return s;
}

// Nested-map reference: every leaf is a flat vector of doubles over the full
// [leading ++ trailing] shape; selection is done by brute-force membership.
struct MapOracle {
  std::vector<std::size_t> leading;
  std::map<std::string, std::vector<double>> leaves;
  std::map<std::string, std::size_t> trailing;

  static bool selected(const IndexExpr& idx, const std::vector<std::size_t>& pos) {
    for (std::size_t d = 0; d < pos.size(); ++d) {
      if (d >= idx.size()) continue;
      const auto& s = idx[d];
      if (s.kind == Sel::Kind::full) continue;
      if (pos[d] < s.begin || pos[d] >= s.end) return false;
    }
    return true;
  }

  std::vector<std::vector<std::size_t>> all_positions() const {
    std::vector<std::vector<std::size_t>> out{{}};
    for (auto d : leading) {
      std::vector<std::vector<std::size_t>> next;
      for (const auto& p : out)
        for (std::size_t i = 0; i < d; ++i) {
          auto q = p;
          q.push_back(i);
          next.push_back(q);
        }
      out = next;
    }
    return out;
  }

  // Returns selected values of one leaf, in row-major order of the selection.
  std::vector<double> read_leaf(const std::string& name, const IndexExpr& idx) const {
    std::vector<double> out;
    auto tc = trailing.at(name);
    auto positions = all_positions();
    for (std::size_t r = 0; r < positions.size(); ++r)
      if (selected(idx, positions[r]))
        for (std::size_t k = 0; k < tc; ++k) out.push_back(leaves.at(name)[r * tc + k]);
    return out;
  }

  void write_leaf(const std::string& name, const IndexExpr& idx, const std::vector<double>& vals) {
    auto tc = trailing.at(name);
    auto positions = all_positions();
    std::size_t j = 0;
    for (std::size_t r = 0; r < positions.size(); ++r)
      if (selected(idx, positions[r]))
        for (std::size_t k = 0; k < tc; ++k) leaves[name][r * tc + k] = vals[j++];
  }
};

double get(const StructArray& a, std::size_t leaf, std::size_t i) {
  switch (a.spec().leaves()[leaf].kind) {
    case ElementKind::float32: return a.leaf<float>(leaf)[i];
    case ElementKind::float64: return a.leaf<double>(leaf)[i];
    case ElementKind::int64: return static_cast<double>(a.leaf<std::int64_t>(leaf)[i]);
    case ElementKind::boolean: return a.leaf<bool>(leaf)[i] ? 1.0 : 0.0;
    case ElementKind::uint8: return a.leaf<std::uint8_t>(leaf)[i];
  }
  return 0;
}

void set(StructArray& a, std::size_t leaf, std::size_t i, double v) {
  switch (a.spec().leaves()[leaf].kind) {
    case ElementKind::float32: a.leaf<float>(leaf)[i] = static_cast<float>(v); break;
    case ElementKind::float64: a.leaf<double>(leaf)[i] = v; break;
    case ElementKind::int64: a.leaf<std::int64_t>(leaf)[i] = static_cast<std::int64_t>(v); break;
    case ElementKind::boolean: a.leaf<bool>(leaf)[i] = v != 0.0; break;
    case ElementKind::uint8: a.leaf<std::uint8_t>(leaf)[i] = static_cast<std::uint8_t>(v); break;
  }
}

StructSpec random_spec(std::mt19937_64& rng) {
  StructSpec s;
  std::uniform_int_distribution<int> n_leaves(1, 6), depth(1, 3), kind(0, 4), dim(0, 3), rank(0, 2);
  int n = n_leaves(rng);
  for (int i = 0; i < n; ++i) {
    std::string path;
    int d = depth(rng);
    for (int j = 0; j + 1 < d; ++j) path += "n" + std::to_string(rng() % 2) + ".";
    path += "leaf" + std::to_string(i);
    std::vector<std::size_t> shape;
    int r = rank(rng);
    for (int j = 0; j < r; ++j) shape.push_back(static_cast<std::size_t>(dim(rng)) + 1);
    try {
      s.add_leaf(path, static_cast<ElementKind>(kind(rng)), shape);
    } catch (const StructError&) {
      // path collided with an existing leaf used as an interior node; skip it
    }
  }
  return s;
}

IndexExpr random_index(std::mt19937_64& rng, const std::vector<std::size_t>& leading) {
  IndexExpr idx;
  for (auto d : leading) {
    switch (rng() % 3) {
      case 0: idx.push_back(Sel::at(rng() % d)); break;
      case 1: {
        std::size_t b = rng() % d;
        std::size_t e = b + 1 + rng() % (d - b);
        idx.push_back(Sel::span(b, e));
        break;
      }
      default: idx.push_back(Sel::all());
    }
  }
  return idx;
}

}  // namespace

TEST(StructSpec, BuildFromExample) {
  auto ex = Example::record({Example::leaf("obs", ExampleValue::array<float>({4}, {0, 1, 2, 3})),
                             Example::leaf("act", ExampleValue::scalar<std::int64_t>(2))});
  auto spec = build_spec_from_example(ex);
  ASSERT_EQ(spec.leaves().size(), 2u);
  EXPECT_EQ(spec.leaves()[0].shape, std::vector<std::size_t>{4});
  EXPECT_TRUE(spec.leaves()[1].shape.empty());
  EXPECT_EQ(spec.leaves()[1].kind, ElementKind::int64);
}

TEST(StructSpec, NestedExamplePreservesDepth) {
  auto ex = Example::record({Example::node("a", {Example::leaf("b", ExampleValue::scalar(1.0))})});
  auto spec = build_spec_from_example(ex);
  EXPECT_EQ(spec.leaves()[0].path, "a.b");
  EXPECT_FALSE(spec.root().children[0].leaf);
  EXPECT_TRUE(spec.root().children[0].children[0].leaf);
}

TEST(StructSpec, DuplicateNamesRejected) {
  auto ex = Example::record({Example::leaf("x", ExampleValue::scalar(1.0)), Example::leaf("x", ExampleValue::scalar(2.0))});
  EXPECT_THROW(build_spec_from_example(ex), StructError);
  StructSpec s;
  s.add_leaf("x", ElementKind::float32);
  EXPECT_THROW(s.add_leaf("x", ElementKind::float32), StructError);
}

TEST(StructSpec, UnsupportedKindAndNonFinite) {
  EXPECT_THROW(parse_kind("complex64"), StructError);
  EXPECT_THROW(StructSpec::from_text("x:float16[2]\n"), StructError);
  auto ex = Example::record({Example::leaf("x", ExampleValue::scalar(std::nan("")))});
  EXPECT_THROW(build_spec_from_example(ex), StructError);
}

TEST(StructSpec, TextRoundTrip) {
  StructSpec s;
  s.add_leaf("observation", ElementKind::float32, {4});
  s.add_leaf("env_info.timeout", ElementKind::boolean);
  s.add_leaf("agent_info.q", ElementKind::float32, {2, 3});
  std::string text = s.to_text();
  EXPECT_EQ(text, "observation:float32[4]\nenv_info:\n  timeout:bool[]\nagent_info:\n  q:float32[2,3]\n");
  EXPECT_EQ(StructSpec::from_text(text), s);
}

TEST(StructArray, AllocateShapes) {
  auto a = StructArray::allocate(obs_act_spec(), {3, 2});
  EXPECT_EQ(a.leaf<float>("obs").size(), 3u * 2u * 4u);
  EXPECT_EQ(a.leaf<std::int64_t>("act").size(), 6u);
  for (float v : a.leaf<float>("obs")) EXPECT_EQ(v, 0.0f);
  StructSpec s;
  s.add_leaf("x", ElementKind::float64);
  EXPECT_EQ(StructArray::allocate(s, {1}).leaf<double>("x").size(), 1u);
  EXPECT_THROW(StructArray::allocate(s, {0, 2}), StructError);
}

TEST(StructArray, SharedBackingVisibleAcrossViews) {
  auto a = StructArray::allocate(obs_act_spec(), {2, 2}, Backing::shared);
  EXPECT_EQ(a.backing(), Backing::shared);
  auto v = a.view(1, 2);
  v.at<float>("obs", {0, 1})[2] = 7.0f;
  EXPECT_EQ(a.at<float>("obs", {1, 1})[2], 7.0f);
}

TEST(StructArray, ReadFullAndSingleIndex) {
  auto a = StructArray::allocate(obs_act_spec(), {3, 2});
  for (std::size_t i = 0; i < 24; ++i) a.leaf<float>("obs")[i] = static_cast<float>(i);
  auto full = read(a, {});
  EXPECT_TRUE(bit_equal(full, a));
  auto row = read(a, {Sel::at(1)});
  ASSERT_EQ(row.leading_dims().size(), 1u);
  EXPECT_EQ(row.leading_dims()[0], 2u);
  EXPECT_EQ(row.at<float>("obs", {0})[0], 8.0f);
  EXPECT_THROW(read(a, {Sel::at(3)}), StructError);
}

TEST(StructArray, ScalarBroadcastWrite) {
  auto a = StructArray::allocate(obs_act_spec(), {3, 2});
  fill(a, {}, 5.0);
  fill(a, {}, 0.0);
  for (float v : a.leaf<float>("obs")) EXPECT_EQ(v, 0.0f);
  for (auto v : a.leaf<std::int64_t>("act")) EXPECT_EQ(v, 0);
  fill(a, {Sel::at(2)}, 3.0);
  EXPECT_EQ(a.at<std::int64_t>("act", {2, 1})[0], 3);
  EXPECT_EQ(a.at<std::int64_t>("act", {1, 1})[0], 0);
}

TEST(StructArray, PlaceholderLeavesUntouched) {
  auto dest = StructArray::allocate(obs_act_spec(), {2});
  fill(dest, {}, 1.0);
  auto src = StructArray::allocate(obs_act_spec(), {2});
  fill(src, {}, 9.0);
  src.set_none("act");
  write(dest, {}, src);
  EXPECT_EQ(dest.at<float>("obs", {1})[3], 9.0f);
  EXPECT_EQ(dest.at<std::int64_t>("act", {1})[0], 1);

  auto before = dest.clone();
  write(dest, {}, StructArray::none_like(obs_act_spec(), {2}));
  EXPECT_TRUE(bit_equal(before, dest));
}

TEST(StructArray, StructureMismatchRejected) {
  auto dest = StructArray::allocate(obs_act_spec(), {2});
  auto spec = obs_act_spec();
  spec.add_leaf("extra", ElementKind::float32);
  auto src = StructArray::allocate(spec, {2});
  EXPECT_THROW(write(dest, {}, src), StructError);
  auto wrong_rows = StructArray::allocate(obs_act_spec(), {3});
  EXPECT_THROW(write(dest, {}, wrong_rows), StructError);
}

TEST(StructArray, CopyRegionIntoReplayRows) {
  std::size_t B = 3;
  auto batch = StructArray::allocate(obs_act_spec(), {40, B});
  for (std::size_t i = 0; i < batch.leaf<float>("obs").size(); ++i) batch.leaf<float>("obs")[i] = static_cast<float>(i);
  for (std::size_t i = 0; i < batch.leaf<std::int64_t>("act").size(); ++i) batch.leaf<std::int64_t>("act")[i] = static_cast<std::int64_t>(i);
  auto replay = StructArray::allocate(obs_act_spec(), {100, B});
  copy_region(replay, {Sel::span(50, 90)}, batch, {Sel::span(0, 40)});
  auto back = read(replay, {Sel::span(50, 90)});
  EXPECT_TRUE(bit_equal(back, batch));
  EXPECT_EQ(replay.at<float>("obs", {49, 0})[0], 0.0f);
}

TEST(StructArray, OverlappingSelfCopy) {
  auto a = StructArray::allocate(obs_act_spec(), {6});
  for (std::size_t i = 0; i < 6; ++i) a.at<std::int64_t>("act", {i})[0] = static_cast<std::int64_t>(i);
  copy_region(a, {Sel::span(1, 5)}, a, {Sel::span(0, 4)});
  std::vector<std::int64_t> got(a.leaf<std::int64_t>("act").begin(), a.leaf<std::int64_t>("act").end());
  EXPECT_EQ(got, (std::vector<std::int64_t>{0, 0, 1, 2, 3, 5}));
  auto before = a.clone();
  copy_region(a, {}, a, {});
  EXPECT_TRUE(bit_equal(before, a));
}

TEST(StructArray, DumpLoadRoundTrip) {
  auto a = StructArray::allocate(obs_act_spec(), {2, 3});
  for (std::size_t i = 0; i < 24; ++i) a.leaf<float>("obs")[i] = 0.5f * static_cast<float>(i);
  a.at<std::int64_t>("act", {1, 2})[0] = -7;
  std::stringstream ss;
  dump(ss, a);
  auto b = load(ss);
  EXPECT_TRUE(bit_equal(a, b));
  std::string text = ss.str();
  EXPECT_EQ(text.rfind("rlstack-struct-array 1\nleading 2 3\nspec 2\nobs:float32[4]\nact:int64[]\ndata\n", 0), 0u);
}

TEST(StructArray, ReadMatchesNestedMapOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    auto spec = random_spec(rng);
    std::vector<std::size_t> leading{1 + rng() % 5, 1 + rng() % 4};
    auto a = StructArray::allocate(spec, leading);
    MapOracle oracle{leading, {}, {}};
    for (std::size_t l = 0; l < spec.leaves().size(); ++l) {
      const auto& info = spec.leaves()[l];
      std::size_t n = a.leading_count() * info.trailing_count;
      oracle.trailing[info.path] = info.trailing_count;
      auto& vals = oracle.leaves[info.path];
      for (std::size_t i = 0; i < n; ++i) {
        double v = static_cast<double>(rng() % 2 ? rng() % 200 : rng() % 2);
        set(a, l, i, v);
        vals.push_back(get(a, l, i));
      }
    }
    // a few random writes, then a read
    for (int w = 0; w < 3; ++w) {
      auto idx = random_index(rng, leading);
      auto region = read(a, idx);
      for (std::size_t l = 0; l < spec.leaves().size(); ++l) {
        auto n = region.leading_count() * spec.leaves()[l].trailing_count;
        std::vector<double> vals;
        for (std::size_t i = 0; i < n; ++i) {
          set(region, l, i, static_cast<double>(rng() % 100));
          vals.push_back(get(region, l, i));
        }
        oracle.write_leaf(spec.leaves()[l].path, idx, vals);
      }
      write(a, idx, region);
    }
    auto idx = random_index(rng, leading);
    auto got = read(a, idx);
    for (std::size_t l = 0; l < spec.leaves().size(); ++l) {
      auto expect = oracle.read_leaf(spec.leaves()[l].path, idx);
      ASSERT_EQ(expect.size(), got.leading_count() * spec.leaves()[l].trailing_count);
      for (std::size_t i = 0; i < expect.size(); ++i) ASSERT_EQ(get(got, l, i), expect[i]) << "trial " << trial;
    }
  }
}

TEST(StructArray, WriteReadRoundTripProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto spec = random_spec(rng);
    std::vector<std::size_t> leading{1 + rng() % 6, 1 + rng() % 3};
    auto dest = StructArray::allocate(spec, leading);
    auto idx = random_index(rng, leading);
    auto src = read(dest, idx);
    for (std::size_t l = 0; l < spec.leaves().size(); ++l)
      for (std::size_t i = 0; i < src.leading_count() * spec.leaves()[l].trailing_count; ++i)
        set(src, l, i, static_cast<double>(rng() % 50));
    write(dest, idx, src);
    EXPECT_TRUE(bit_equal(read(dest, idx), src));
  }
}
