#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "scribvox/grid.hpp"
#include "scribvox/rng.hpp"

namespace scribvox {

enum class ObjectKind { box, column, blob };

// One family of procedural objects. Boxes and columns stand on the ground
// plane; blobs are ellipsoids floating above it.
struct ObjectSpec {
  ObjectKind kind = ObjectKind::box;
  int class_id = 1;
  int count = 0;
  Idx3 min_size{1, 1, 1};  // blob sizes are radii, others are extents
  Idx3 max_size{1, 1, 1};
};

inline std::vector<ObjectSpec> default_scene_objects() {
  std::vector<ObjectSpec> out;
  out.push_back({ObjectKind::box, 3, 5, {10, 10, 10}, {18, 18, 13}});
  out.push_back({ObjectKind::box, 5, 10, {4, 3, 2}, {7, 4, 3}});
  out.push_back({ObjectKind::column, 6, 12, {1, 1, 6}, {1, 1, 10}});
  out.push_back({ObjectKind::blob, 4, 10, {2, 2, 2}, {4, 4, 3}});
  return out;
}

struct SceneParams {
  std::uint64_t seed = 1;
  GridSpec spec{{64, 64, 16}, 0.2, {0.0, -6.4, -2.0}};
  int class_count = 8;
  int ground_class = 1;
  int ground_height = 2;  // voxels of ground slab above the grid floor
  double label_noise = 0.2;
  std::vector<ObjectSpec> objects = default_scene_objects();

  void validate() const {
    spec.validate();
    if (class_count < 2 || class_count >= kUnlabeled)
      throw std::invalid_argument("SceneParams: class_count out of range");
    if (ground_class < 1 || ground_class > class_count)
      throw std::invalid_argument("SceneParams: ground_class out of range");
    if (ground_height < 0 || ground_height > spec.dims.z)
      throw std::invalid_argument("SceneParams: ground_height out of range");
    if (!(label_noise >= 0.0 && label_noise <= 1.0))
      throw std::invalid_argument("SceneParams: label_noise outside [0, 1]");
    for (const ObjectSpec& o : objects) {
      if (o.class_id < 1 || o.class_id > class_count)
        throw std::invalid_argument("SceneParams: object class out of range");
      if (o.count < 0)
        throw std::invalid_argument("SceneParams: negative object count");
      if (o.min_size.x < 1 || o.min_size.y < 1 || o.min_size.z < 1 ||
          o.max_size.x < o.min_size.x || o.max_size.y < o.min_size.y ||
          o.max_size.z < o.min_size.z)
        throw std::invalid_argument("SceneParams: bad object size range");
    }
  }
};

// A generated scene: fully annotated truth plus a noisy per-voxel class
// hint (0 on empty voxels). Instances that found no spot are counted, not
// retried forever.
struct Scene {
  LabelGrid truth;
  std::vector<std::uint16_t> hints;
  int placed_objects = 0;
  int skipped_objects = 0;
};

namespace detail {

inline bool region_empty(const LabelGrid& g, const Idx3& lo, const Idx3& hi) {
  for (int x = lo.x; x < hi.x; ++x)
    for (int y = lo.y; y < hi.y; ++y)
      for (int z = lo.z; z < hi.z; ++z)
        if (g.at(Idx3{x, y, z}) != kEmpty) return false;
  return true;
}

inline void fill_region(LabelGrid& g, const Idx3& lo, const Idx3& hi,
                        std::uint16_t code) {
  for (int x = lo.x; x < hi.x; ++x)
    for (int y = lo.y; y < hi.y; ++y)
      for (int z = lo.z; z < hi.z; ++z) g.set(Idx3{x, y, z}, code);
}

// Visits the ellipsoid's voxels; returns false (without writing) when any
// is already taken and probe_only is set.
inline bool blob_voxels(LabelGrid& g, const Idx3& c, const Idx3& r,
                        std::uint16_t code, bool probe_only) {
  for (int x = c.x - r.x; x <= c.x + r.x; ++x)
    for (int y = c.y - r.y; y <= c.y + r.y; ++y)
      for (int z = c.z - r.z; z <= c.z + r.z; ++z) {
        double nx = static_cast<double>(x - c.x) / r.x;
        double ny = static_cast<double>(y - c.y) / r.y;
        double nz = static_cast<double>(z - c.z) / r.z;
        if (nx * nx + ny * ny + nz * nz > 1.0) continue;
        if (probe_only) {
          if (g.at(Idx3{x, y, z}) != kEmpty) return false;
        } else {
          g.set(Idx3{x, y, z}, code);
        }
      }
  return true;
}

}  // namespace detail

// Deterministic procedural scene: a ground slab, then object instances in
// declaration order. Each instance draws a size, then tries a few spots;
// instances that cannot fit or find only occupied space are skipped.
inline Scene gen_scene(const SceneParams& params) {
  params.validate();
  const GridSpec& spec = params.spec;
  const Idx3 d = spec.dims;
  Scene scene;
  scene.truth = LabelGrid(spec);

  for (int x = 0; x < d.x; ++x)
    for (int y = 0; y < d.y; ++y)
      for (int z = 0; z < params.ground_height; ++z)
        scene.truth.set(Idx3{x, y, z},
                        static_cast<std::uint16_t>(params.ground_class));

  const int floor_z = params.ground_height;
  CounterRng rng(params.seed, RngStream::scene_objects);
  constexpr int kAttempts = 8;

  for (const ObjectSpec& o : params.objects) {
    for (int inst = 0; inst < o.count; ++inst) {
      std::uint16_t code = static_cast<std::uint16_t>(o.class_id);
      if (o.kind == ObjectKind::blob) {
        Idx3 r{rng.next_int(o.min_size.x, o.max_size.x),
               rng.next_int(o.min_size.y, o.max_size.y),
               rng.next_int(o.min_size.z, o.max_size.z)};
        if (r.x > (d.x - 1) / 2 || r.y > (d.y - 1) / 2 ||
            floor_z + r.z > d.z - 1 - r.z) {
          ++scene.skipped_objects;
          continue;
        }
        bool placed = false;
        for (int a = 0; a < kAttempts && !placed; ++a) {
          Idx3 c{rng.next_int(r.x, d.x - 1 - r.x),
                 rng.next_int(r.y, d.y - 1 - r.y),
                 rng.next_int(floor_z + r.z, d.z - 1 - r.z)};
          if (!detail::blob_voxels(scene.truth, c, r, code, true)) continue;
          detail::blob_voxels(scene.truth, c, r, code, false);
          placed = true;
        }
        placed ? ++scene.placed_objects : ++scene.skipped_objects;
      } else {
        Idx3 s{rng.next_int(o.min_size.x, o.max_size.x),
               rng.next_int(o.min_size.y, o.max_size.y),
               rng.next_int(o.min_size.z, o.max_size.z)};
        if (o.kind == ObjectKind::column) s.x = s.y = 1;
        if (s.x > d.x || s.y > d.y || floor_z + s.z > d.z) {
          ++scene.skipped_objects;
          continue;
        }
        bool placed = false;
        for (int a = 0; a < kAttempts && !placed; ++a) {
          Idx3 lo{rng.next_int(0, d.x - s.x), rng.next_int(0, d.y - s.y),
                  floor_z};
          Idx3 hi{lo.x + s.x, lo.y + s.y, floor_z + s.z};
          if (!detail::region_empty(scene.truth, lo, hi)) continue;
          detail::fill_region(scene.truth, lo, hi, code);
          placed = true;
        }
        placed ? ++scene.placed_objects : ++scene.skipped_objects;
      }
    }
  }

  // Per-voxel hints: the true class, except a label_noise share of voxels
  // whose hint is a uniformly wrong class.
  scene.hints.assign(spec.voxel_count(), 0);
  const int k = params.class_count;
  for (std::size_t f = 0; f < scene.hints.size(); ++f) {
    std::uint16_t c = scene.truth.codes[f];
    if (c == kEmpty) continue;
    if (uniform_unit(params.seed, RngStream::hint_noise, f) <
        params.label_noise) {
      int w = 1 + static_cast<int>(hash_draw(params.seed,
                                             RngStream::hint_class, f) %
                                   static_cast<std::uint64_t>(k - 1));
      if (w >= c) ++w;
      scene.hints[f] = static_cast<std::uint16_t>(w);
    } else {
      scene.hints[f] = c;
    }
  }
  return scene;
}

// Thins a fully annotated volume down to sparse annotations: every labeled
// voxel independently keeps its class with probability rate, otherwise it
// becomes occupied-but-unlabeled. Draws are keyed per voxel, so for a fixed
// seed the kept set at a lower rate is a subset of the kept set at a higher
// rate.
inline LabelGrid scribblize(const LabelGrid& truth, double rate,
                            std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw std::invalid_argument("scribblize: rate outside [0, 1]");
  LabelGrid out = truth;
  for (std::size_t f = 0; f < out.codes.size(); ++f) {
    std::uint16_t c = out.codes[f];
    if (c == kEmpty || c == kUnlabeled) continue;
    if (uniform_unit(seed, RngStream::scribble_keep, f) >= rate)
      out.codes[f] = kUnlabeled;
  }
  return out;
}

// Independent per-voxel corruption: occupied voxels disappear with
// drop_rate, empty voxels appear with add_rate.
inline BoolGrid corrupt_geometry(const BoolGrid& g, double drop_rate,
                                 double add_rate, std::uint64_t seed) {
  if (!(drop_rate >= 0.0 && drop_rate <= 1.0) ||
      !(add_rate >= 0.0 && add_rate <= 1.0))
    throw std::invalid_argument("corrupt_geometry: rate outside [0, 1]");
  BoolGrid out = g;
  for (std::size_t f = 0; f < out.values.size(); ++f) {
    if (g.values[f]) {
      if (uniform_unit(seed, RngStream::geometry_drop, f) < drop_rate)
        out.values[f] = 0;
    } else {
      if (uniform_unit(seed, RngStream::geometry_add, f) < add_rate)
        out.values[f] = 1;
    }
  }
  return out;
}

// Evenly spread unit directions (spherical Fibonacci lattice).
inline std::vector<Vec3> sphere_directions(int n) {
  if (n < 1) throw std::invalid_argument("sphere_directions: n must be >= 1");
  constexpr double kGoldenAngle = 2.399963229728653;
  std::vector<Vec3> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    double z = 1.0 - 2.0 * (i + 0.5) / n;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = kGoldenAngle * i;
    out.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }
  return out;
}

// Marks the first occupied voxel hit by each ray, walking the lattice with
// integer steps. Rays that miss the volume mark nothing.
inline BoolGrid visible_surface(const BoolGrid& g, const Vec3& sensor,
                                std::span<const Vec3> directions) {
  g.spec.validate();
  const GridSpec& spec = g.spec;
  BoolGrid out(spec);
  const double inf = std::numeric_limits<double>::infinity();
  const double lo[3] = {spec.origin.x, spec.origin.y, spec.origin.z};
  const double hi[3] = {spec.origin.x + spec.dims.x * spec.voxel_size,
                        spec.origin.y + spec.dims.y * spec.voxel_size,
                        spec.origin.z + spec.dims.z * spec.voxel_size};
  const int dims[3] = {spec.dims.x, spec.dims.y, spec.dims.z};

  for (const Vec3& dir : directions) {
    const double s[3] = {sensor.x, sensor.y, sensor.z};
    const double d[3] = {dir.x, dir.y, dir.z};

    // Clip the ray against the volume box.
    double t0 = 0.0, t1 = inf;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (d[a] == 0.0) {
        if (s[a] < lo[a] || s[a] >= hi[a]) miss = true;
        continue;
      }
      double ta = (lo[a] - s[a]) / d[a];
      double tb = (hi[a] - s[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    if (miss || t0 > t1) continue;

    // Entry cell, nudged inward off the boundary face.
    double enter = t0 + 1e-9 * std::max(1.0, std::abs(t0));
    int ix[3];
    bool outside = false;
    for (int a = 0; a < 3; ++a) {
      double q = (s[a] + enter * d[a] - lo[a]) / spec.voxel_size;
      int i = static_cast<int>(std::floor(q));
      if (i < 0) i = 0;
      if (i >= dims[a]) i = dims[a] - 1;
      ix[a] = i;
      outside |= q < -0.5 || q > dims[a] + 0.5;
    }
    if (outside) continue;

    int step[3];
    double t_max[3], t_delta[3];
    for (int a = 0; a < 3; ++a) {
      if (d[a] > 0.0) {
        step[a] = 1;
        t_delta[a] = spec.voxel_size / d[a];
        t_max[a] = (lo[a] + (ix[a] + 1) * spec.voxel_size - s[a]) / d[a];
      } else if (d[a] < 0.0) {
        step[a] = -1;
        t_delta[a] = -spec.voxel_size / d[a];
        t_max[a] = (lo[a] + ix[a] * spec.voxel_size - s[a]) / d[a];
      } else {
        step[a] = 0;
        t_delta[a] = inf;
        t_max[a] = inf;
      }
    }

    while (true) {
      Idx3 cell{ix[0], ix[1], ix[2]};
      if (g.at(cell)) {
        out.set(cell, true);
        break;
      }
      int axis = 0;
      if (t_max[1] < t_max[axis]) axis = 1;
      if (t_max[2] < t_max[axis]) axis = 2;
      ix[axis] += step[axis];
      if (ix[axis] < 0 || ix[axis] >= dims[axis]) break;
      t_max[axis] += t_delta[axis];
    }
  }
  return out;
}

inline BoolGrid visible_surface(const BoolGrid& g, const Vec3& sensor,
                                int n_rays) {
  std::vector<Vec3> dirs = sphere_directions(n_rays);
  return visible_surface(g, sensor, dirs);
}

}  // namespace scribvox
