#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scribvox/error.hpp"

namespace scribvox {

// Voxel codes: 0 = empty, 1..K = semantic class, 255 = occupied but unlabeled.
constexpr std::uint16_t kEmpty = 0;
constexpr std::uint16_t kUnlabeled = 255;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  bool operator==(const Vec3&) const = default;
};

struct Idx3 {
  int x = 0;
  int y = 0;
  int z = 0;

  bool operator==(const Idx3&) const = default;
};

// Axis-aligned voxel lattice. Defaults match the usual outdoor completion
// volume: 51.2 m ahead, 25.6 m to each side, 6.4 m of height at 0.2 m cells.
struct GridSpec {
  Idx3 dims{256, 256, 32};
  double voxel_size = 0.2;
  Vec3 origin{0.0, -25.6, -2.0};

  bool operator==(const GridSpec&) const = default;

  void validate() const {
    if (dims.x < 1 || dims.y < 1 || dims.z < 1)
      throw std::invalid_argument("GridSpec: dims must be >= 1 on every axis");
    if (!(voxel_size > 0.0) || !std::isfinite(voxel_size))
      throw std::invalid_argument("GridSpec: voxel_size must be positive");
  }

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims.x) *
           static_cast<std::size_t>(dims.y) *
           static_cast<std::size_t>(dims.z);
  }

  bool in_bounds(const Idx3& i) const {
    return i.x >= 0 && i.x < dims.x && i.y >= 0 && i.y < dims.y && i.z >= 0 &&
           i.z < dims.z;
  }

  // x-major: x is the slowest axis, z the fastest.
  std::size_t flat_index(const Idx3& i) const {
    return (static_cast<std::size_t>(i.x) * dims.y +
            static_cast<std::size_t>(i.y)) *
               dims.z +
           static_cast<std::size_t>(i.z);
  }

  Idx3 unflatten(std::size_t flat) const {
    Idx3 i;
    i.z = static_cast<int>(flat % dims.z);
    flat /= dims.z;
    i.y = static_cast<int>(flat % dims.y);
    i.x = static_cast<int>(flat / dims.y);
    return i;
  }

  Vec3 voxel_center(const Idx3& i) const {
    return {origin.x + (i.x + 0.5) * voxel_size,
            origin.y + (i.y + 0.5) * voxel_size,
            origin.z + (i.z + 0.5) * voxel_size};
  }
};

// Maps a world point to the voxel containing it, or nullopt when the point
// lies outside the volume. Upper boundaries are exclusive. The snap constant
// pulls points that sit within a billionth of a voxel below a cell boundary
// up onto it, so decimal-exact coordinates land where exact arithmetic says.
inline std::optional<Idx3> world_to_voxel(const Vec3& p, const GridSpec& spec) {
  spec.validate();
  constexpr double kSnap = 1e-9;
  Idx3 out;
  const double px[3] = {p.x, p.y, p.z};
  const double ox[3] = {spec.origin.x, spec.origin.y, spec.origin.z};
  const int dx[3] = {spec.dims.x, spec.dims.y, spec.dims.z};
  int* ix[3] = {&out.x, &out.y, &out.z};
  for (int a = 0; a < 3; ++a) {
    double q = (px[a] - ox[a]) / spec.voxel_size;
    double f = std::floor(q + kSnap);
    if (f < 0.0 || f >= static_cast<double>(dx[a])) return std::nullopt;
    *ix[a] = static_cast<int>(f);
  }
  return out;
}

// Dense semantic volume: one code per voxel, x-major layout.
struct LabelGrid {
  GridSpec spec;
  std::vector<std::uint16_t> codes;

  LabelGrid() = default;

  explicit LabelGrid(const GridSpec& s, std::uint16_t fill = kEmpty)
      : spec(s) {
    spec.validate();
    codes.assign(spec.voxel_count(), fill);
  }

  std::uint16_t at(std::size_t flat) const { return codes[flat]; }
  std::uint16_t at(const Idx3& i) const { return codes[spec.flat_index(i)]; }
  void set(std::size_t flat, std::uint16_t v) { codes[flat] = v; }
  void set(const Idx3& i, std::uint16_t v) { codes[spec.flat_index(i)] = v; }

  bool operator==(const LabelGrid&) const = default;
};

// Dense binary volume over the same lattice: occupancy or a voxel mask.
struct BoolGrid {
  GridSpec spec;
  std::vector<std::uint8_t> values;

  BoolGrid() = default;

  explicit BoolGrid(const GridSpec& s, bool fill = false) : spec(s) {
    spec.validate();
    values.assign(spec.voxel_count(), fill ? 1 : 0);
  }

  bool at(std::size_t flat) const { return values[flat] != 0; }
  bool at(const Idx3& i) const { return values[spec.flat_index(i)] != 0; }
  void set(std::size_t flat, bool v) { values[flat] = v ? 1 : 0; }
  void set(const Idx3& i, bool v) { values[spec.flat_index(i)] = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (std::uint8_t v : values) n += (v != 0);
    return n;
  }

  bool operator==(const BoolGrid&) const = default;
};

inline void require_same_lattice(const GridSpec& a, const GridSpec& b,
                                 const char* who) {
  if (!(a == b))
    throw std::invalid_argument(std::string(who) +
                                ": grids live on different lattices");
}

struct SplitGrids {
  BoolGrid geometry;    // true where the voxel is occupied
  LabelGrid semantics;  // class code on labeled voxels, 0 elsewhere
};

// Splits a full volume into occupancy and sparse semantics. Codes above
// class_count (other than the unlabeled sentinel) are rejected.
inline SplitGrids split_grid(const LabelGrid& v, int class_count) {
  if (class_count < 1 || class_count >= kUnlabeled)
    throw std::invalid_argument("split_grid: class_count out of range");
  SplitGrids out{BoolGrid(v.spec), LabelGrid(v.spec)};
  for (std::size_t i = 0; i < v.codes.size(); ++i) {
    std::uint16_t c = v.codes[i];
    if (c == kEmpty) continue;
    out.geometry.values[i] = 1;
    if (c == kUnlabeled) continue;
    if (c > class_count)
      throw std::invalid_argument("split_grid: code " + std::to_string(c) +
                                  " exceeds class_count");
    out.semantics.codes[i] = c;
  }
  return out;
}

// Inverse of split_grid: occupied voxels with no semantic class come back
// as unlabeled, semantics on empty voxels are dropped.
inline LabelGrid recombine(const BoolGrid& g, const LabelGrid& s) {
  require_same_lattice(g.spec, s.spec, "recombine");
  LabelGrid out(g.spec);
  for (std::size_t i = 0; i < out.codes.size(); ++i) {
    if (!g.values[i]) continue;
    out.codes[i] = s.codes[i] == kEmpty ? kUnlabeled : s.codes[i];
  }
  return out;
}

inline BoolGrid occupancy_of(const LabelGrid& v) {
  BoolGrid g(v.spec);
  for (std::size_t i = 0; i < v.codes.size(); ++i)
    g.values[i] = v.codes[i] != kEmpty;
  return g;
}

// Nested axis-aligned range shells around the ego position. A voxel is
// inside box r when it is less than thresholds[r] ahead of ego and within
// half that laterally; the outermost shell catches everything else, so the
// shells partition the grid.
struct RangePartition {
  std::vector<double> thresholds{12.8, 25.6, 51.2};
  Vec3 ego{0.0, 0.0, 0.0};

  bool operator==(const RangePartition&) const = default;

  void validate() const {
    if (thresholds.empty())
      throw std::invalid_argument("RangePartition: no thresholds");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (!(thresholds[i] > 0.0))
        throw std::invalid_argument("RangePartition: thresholds must be > 0");
      if (i > 0 && !(thresholds[i] > thresholds[i - 1]))
        throw std::invalid_argument(
            "RangePartition: thresholds must be strictly ascending");
    }
  }

  int shell_count() const { return static_cast<int>(thresholds.size()); }
};

// 1-based shell id of a voxel: the smallest box containing its center.
inline int shell_of(const Idx3& idx, const RangePartition& part,
                    const GridSpec& spec) {
  part.validate();
  if (!spec.in_bounds(idx))
    throw std::invalid_argument("shell_of: voxel index out of bounds");
  Vec3 c = spec.voxel_center(idx);
  double fwd = c.x - part.ego.x;
  double lat = std::abs(c.y - part.ego.y);
  int n = part.shell_count();
  for (int r = 1; r < n; ++r) {
    double t = part.thresholds[r - 1];
    if (fwd < t && lat < t / 2.0) return r;
  }
  return n;
}

// Voxels whose shell id is exactly r. Disjoint across r.
inline BoolGrid shell_mask(const RangePartition& part, const GridSpec& spec,
                           int r) {
  part.validate();
  spec.validate();
  if (r < 1 || r > part.shell_count())
    throw std::invalid_argument("shell_mask: shell id out of range");
  BoolGrid out(spec);
  for (std::size_t f = 0; f < out.values.size(); ++f)
    out.values[f] = shell_of(spec.unflatten(f), part, spec) == r;
  return out;
}

// Voxels whose shell id is <= r. Nested: mask(r) implies mask(r+1), and the
// last mask covers the whole grid.
inline BoolGrid cumulative_mask(const RangePartition& part,
                                const GridSpec& spec, int r) {
  part.validate();
  spec.validate();
  if (r < 1 || r > part.shell_count())
    throw std::invalid_argument("cumulative_mask: shell id out of range");
  BoolGrid out(spec);
  for (std::size_t f = 0; f < out.values.size(); ++f)
    out.values[f] = shell_of(spec.unflatten(f), part, spec) <= r;
  return out;
}

}  // namespace scribvox
