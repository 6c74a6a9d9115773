#include "scribvox/grid.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "scribvox/rng.hpp"

namespace scribvox {
namespace {

TEST(GridSpec, DefaultsMatchOutdoorVolume) {
  GridSpec spec;
  EXPECT_EQ(spec.dims, (Idx3{256, 256, 32}));
  EXPECT_DOUBLE_EQ(spec.voxel_size, 0.2);
  EXPECT_EQ(spec.origin, (Vec3{0.0, -25.6, -2.0}));
  EXPECT_EQ(spec.voxel_count(), 256u * 256u * 32u);
}

TEST(GridSpec, ValidateRejectsDegenerateSpecs) {
  GridSpec spec;
  spec.dims.y = 0;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = GridSpec{};
  spec.voxel_size = 0.0;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec.voxel_size = -0.2;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}

// Oracle: enumerate voxels in x-major nested-loop order and demand the flat
// index equal the running counter.
TEST(GridSpec, FlatIndexIsXMajorRowOrder) {
  GridSpec spec;
  spec.dims = {5, 7, 3};
  std::size_t counter = 0;
  for (int x = 0; x < spec.dims.x; ++x)
    for (int y = 0; y < spec.dims.y; ++y)
      for (int z = 0; z < spec.dims.z; ++z) {
        Idx3 i{x, y, z};
        ASSERT_EQ(spec.flat_index(i), counter);
        ASSERT_EQ(spec.unflatten(counter), i);
        ++counter;
      }
  EXPECT_EQ(counter, spec.voxel_count());
}

TEST(WorldToVoxel, KnownPointsOnDefaultGrid) {
  GridSpec spec;
  auto a = world_to_voxel({0.0, 0.0, 0.0}, spec);
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(*a, (Idx3{0, 128, 10}));

  EXPECT_FALSE(world_to_voxel({51.2, 0.0, 0.0}, spec).has_value());
  EXPECT_FALSE(world_to_voxel({-0.1, 0.0, 0.0}, spec).has_value());
  EXPECT_FALSE(world_to_voxel({0.0, 25.6, 0.0}, spec).has_value());
  EXPECT_FALSE(world_to_voxel({0.0, 0.0, 4.4}, spec).has_value());

  auto b = world_to_voxel({0.1, 0.1, -1.9}, spec);
  ASSERT_TRUE(b.has_value());
  EXPECT_EQ(*b, (Idx3{0, 128, 0}));

  auto c = world_to_voxel({51.199, 25.599, 4.399}, spec);
  ASSERT_TRUE(c.has_value());
  EXPECT_EQ(*c, (Idx3{255, 255, 31}));
}

// Voxel centers must map back to their own voxel for every cell of a grid
// whose origin exercises negative coordinates.
TEST(WorldToVoxel, CenterRoundTrip) {
  GridSpec spec;
  spec.dims = {17, 9, 13};
  spec.voxel_size = 0.3;
  spec.origin = {-1.7, 2.9, -0.4};
  for (int x = 0; x < spec.dims.x; ++x)
    for (int y = 0; y < spec.dims.y; ++y)
      for (int z = 0; z < spec.dims.z; ++z) {
        Idx3 i{x, y, z};
        auto back = world_to_voxel(spec.voxel_center(i), spec);
        ASSERT_TRUE(back.has_value());
        ASSERT_EQ(*back, i);
      }
}

TEST(WorldToVoxel, RandomInteriorPointsRoundTrip) {
  GridSpec spec;
  spec.dims = {31, 23, 11};
  spec.voxel_size = 0.25;
  spec.origin = {-3.0, -2.0, -1.0};
  CounterRng rng(7, RngStream::scene_objects);
  for (int trial = 0; trial < 2000; ++trial) {
    Idx3 want{rng.next_int(0, spec.dims.x - 1),
              rng.next_int(0, spec.dims.y - 1),
              rng.next_int(0, spec.dims.z - 1)};
    // Strictly interior offsets, away from faces shared with neighbours.
    Vec3 p{spec.origin.x + (want.x + 0.1 + 0.8 * rng.next_unit()) *
                               spec.voxel_size,
           spec.origin.y + (want.y + 0.1 + 0.8 * rng.next_unit()) *
                               spec.voxel_size,
           spec.origin.z + (want.z + 0.1 + 0.8 * rng.next_unit()) *
                               spec.voxel_size};
    auto got = world_to_voxel(p, spec);
    ASSERT_TRUE(got.has_value());
    ASSERT_EQ(*got, want);
  }
}

TEST(SplitRecombine, RoundTripsEveryCodeKind) {
  GridSpec spec;
  spec.dims = {8, 6, 4};
  LabelGrid v(spec);
  // Mix of empty, labeled, and unlabeled-occupied voxels.
  for (std::size_t f = 0; f < v.codes.size(); ++f) {
    switch (f % 4) {
      case 0: v.codes[f] = kEmpty; break;
      case 1: v.codes[f] = static_cast<std::uint16_t>(1 + (f % 19)); break;
      case 2: v.codes[f] = kUnlabeled; break;
      case 3: v.codes[f] = 19; break;
    }
  }
  SplitGrids parts = split_grid(v, 19);
  for (std::size_t f = 0; f < v.codes.size(); ++f) {
    EXPECT_EQ(parts.geometry.values[f] != 0, v.codes[f] != kEmpty);
    if (v.codes[f] != kEmpty && v.codes[f] != kUnlabeled)
      EXPECT_EQ(parts.semantics.codes[f], v.codes[f]);
    else
      EXPECT_EQ(parts.semantics.codes[f], kEmpty);
  }
  LabelGrid back = recombine(parts.geometry, parts.semantics);
  EXPECT_EQ(back.codes, v.codes);
}

TEST(SplitRecombine, RejectsCodesBeyondClassCount) {
  GridSpec spec;
  spec.dims = {2, 2, 2};
  LabelGrid v(spec);
  v.codes[3] = 20;
  EXPECT_THROW(split_grid(v, 19), std::invalid_argument);
  EXPECT_NO_THROW(split_grid(v, 20));
}

TEST(SplitRecombine, RecombineDropsSemanticsOnEmptyVoxels) {
  GridSpec spec;
  spec.dims = {2, 1, 1};
  BoolGrid g(spec);
  g.values[0] = 1;
  LabelGrid s(spec);
  s.codes[1] = 5;  // semantics without geometry: dropped
  LabelGrid v = recombine(g, s);
  EXPECT_EQ(v.codes[0], kUnlabeled);
  EXPECT_EQ(v.codes[1], kEmpty);
}

// Oracle: evaluate box membership for every threshold directly and take the
// smallest enclosing box.
int shell_oracle(const Vec3& c, const RangePartition& part) {
  double fwd = c.x - part.ego.x;
  double lat = std::abs(c.y - part.ego.y);
  for (std::size_t r = 0; r < part.thresholds.size(); ++r)
    if (fwd < part.thresholds[r] && lat < part.thresholds[r] / 2.0)
      return static_cast<int>(r) + 1;
  return static_cast<int>(part.thresholds.size());
}

TEST(RangePartition, ShellsMatchOracleAndPartitionTheGrid) {
  GridSpec spec;
  spec.dims = {64, 64, 16};
  spec.origin = {0.0, -6.4, -2.0};
  RangePartition part;
  part.thresholds = {3.2, 6.4, 12.8};
  std::vector<std::size_t> sizes(3, 0);
  for (std::size_t f = 0; f < spec.voxel_count(); ++f) {
    Idx3 i = spec.unflatten(f);
    int got = shell_of(i, part, spec);
    ASSERT_EQ(got, shell_oracle(spec.voxel_center(i), part));
    ++sizes[got - 1];
  }
  EXPECT_EQ(sizes[0] + sizes[1] + sizes[2], spec.voxel_count());
  // Shell voxel counts grow with range on this lattice.
  EXPECT_LT(sizes[0], sizes[1]);
  EXPECT_LT(sizes[1], sizes[2]);
}

TEST(RangePartition, MasksAreConsistentWithShellIds) {
  GridSpec spec;
  spec.dims = {32, 32, 8};
  spec.origin = {0.0, -3.2, -1.0};
  RangePartition part;
  part.thresholds = {1.6, 3.2, 6.4};
  part.ego = {0.4, 0.2, 0.0};

  std::vector<BoolGrid> shells;
  for (int r = 1; r <= 3; ++r) shells.push_back(shell_mask(part, spec, r));
  for (std::size_t f = 0; f < spec.voxel_count(); ++f) {
    int id = shell_of(spec.unflatten(f), part, spec);
    for (int r = 1; r <= 3; ++r)
      ASSERT_EQ(shells[r - 1].values[f] != 0, id == r);
  }

  for (int r = 1; r <= 3; ++r) {
    BoolGrid cum = cumulative_mask(part, spec, r);
    for (std::size_t f = 0; f < spec.voxel_count(); ++f) {
      int id = shell_of(spec.unflatten(f), part, spec);
      ASSERT_EQ(cum.values[f] != 0, id <= r);
    }
  }
  // Outermost cumulative mask covers everything.
  EXPECT_EQ(cumulative_mask(part, spec, 3).count(), spec.voxel_count());
}

TEST(RangePartition, ValidationAndBounds) {
  RangePartition part;
  part.thresholds = {3.2, 3.2};
  EXPECT_THROW(part.validate(), std::invalid_argument);
  part.thresholds = {};
  EXPECT_THROW(part.validate(), std::invalid_argument);
  part.thresholds = {-1.0, 2.0};
  EXPECT_THROW(part.validate(), std::invalid_argument);

  GridSpec spec;
  RangePartition good;
  EXPECT_THROW(shell_of({-1, 0, 0}, good, spec), std::invalid_argument);
  EXPECT_THROW(shell_mask(good, spec, 0), std::invalid_argument);
  EXPECT_THROW(cumulative_mask(good, spec, 4), std::invalid_argument);
}

TEST(CounterRng, DrawsAreOrderIndependentAndDeterministic) {
  // The hash form is a pure function, so shuffled evaluation order cannot
  // change any value.
  std::vector<std::uint64_t> forward, backward;
  for (int i = 0; i < 100; ++i)
    forward.push_back(hash_draw(42, RngStream::scribble_keep, i));
  for (int i = 99; i >= 0; --i)
    backward.push_back(hash_draw(42, RngStream::scribble_keep, i));
  for (int i = 0; i < 100; ++i) EXPECT_EQ(forward[i], backward[99 - i]);

  // Distinct streams decorrelate draws with identical counters.
  int same = 0;
  for (int i = 0; i < 100; ++i)
    same += hash_draw(42, RngStream::scribble_keep, i) ==
            hash_draw(42, RngStream::geometry_drop, i);
  EXPECT_EQ(same, 0);
}

TEST(CounterRng, UniformUnitStaysInHalfOpenRange) {
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = uniform_unit(7, RngStream::hint_noise, i);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LT(hi, 1.0);
  // Mean of 1e5 uniform draws concentrates near 0.5; bound is ~17 sigma.
  EXPECT_NEAR(sum / n, 0.5, 0.015);
}

}  // namespace
}  // namespace scribvox
