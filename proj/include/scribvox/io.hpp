#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "scribvox/error.hpp"
#include "scribvox/grid.hpp"

namespace scribvox {

enum class Frame { sensor, world };

// Point cloud with optional per-point intensity and semantic label.
// Label 0 means the point carries no annotation.
struct LabeledPointCloud {
  std::vector<Vec3> points;
  std::vector<float> intensities;       // empty or one per point
  std::vector<std::uint16_t> labels;    // empty or one per point
  Frame frame = Frame::sensor;

  bool has_intensities() const { return !intensities.empty(); }
  bool has_labels() const { return !labels.empty(); }

  void validate() const {
    if (has_intensities() && intensities.size() != points.size())
      throw std::invalid_argument(
          "LabeledPointCloud: intensity count does not match point count");
    if (has_labels() && labels.size() != points.size())
      throw std::invalid_argument(
          "LabeledPointCloud: label count does not match point count");
  }
};

// Rigid sensor-to-world transform, row-major 3x4.
struct Pose {
  std::array<double, 12> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};

  Vec3 apply(const Vec3& p) const {
    return {m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3],
            m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
            m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11]};
  }

  // Largest deviation of R * R^T from identity.
  double orthonormality_error() const {
    double worst = 0.0;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) dot += m[r * 4 + k] * m[c * 4 + k];
        worst = std::max(worst, std::abs(dot - (r == c ? 1.0 : 0.0)));
      }
    return worst;
  }
};

namespace detail {

inline std::uint32_t read_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t read_u64le(const std::uint8_t* p) {
  return static_cast<std::uint64_t>(read_u32le(p)) |
         (static_cast<std::uint64_t>(read_u32le(p + 4)) << 32);
}

inline std::uint16_t read_u16le(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline float read_f32le(const std::uint8_t* p) {
  return std::bit_cast<float>(read_u32le(p));
}

inline double read_f64le(const std::uint8_t* p) {
  return std::bit_cast<double>(read_u64le(p));
}

inline void put_u16le(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f64le(std::vector<std::uint8_t>& out, double v) {
  put_u64le(out, std::bit_cast<std::uint64_t>(v));
}

}  // namespace detail

// Raw scan bytes: consecutive little-endian float32 (x, y, z, intensity)
// records, the usual lidar dump layout.
inline LabeledPointCloud read_scan(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 16 != 0)
    throw FormatError("scan: byte length " + std::to_string(bytes.size()) +
                      " is not a multiple of 16");
  LabeledPointCloud pc;
  std::size_t n = bytes.size() / 16;
  pc.points.reserve(n);
  pc.intensities.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * 16;
    float x = detail::read_f32le(rec);
    float y = detail::read_f32le(rec + 4);
    float z = detail::read_f32le(rec + 8);
    float w = detail::read_f32le(rec + 12);
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
      throw FormatError("scan: non-finite coordinate in record " +
                        std::to_string(i));
    pc.points.push_back({x, y, z});
    pc.intensities.push_back(w);
  }
  return pc;
}

// Remaps raw annotation ids to contiguous training codes. The default map is
// the identity; raw id 0 always stays 0 (no annotation).
class LabelMap {
 public:
  LabelMap() = default;

  explicit LabelMap(std::unordered_map<std::uint32_t, std::uint16_t> table)
      : table_(std::move(table)) {}

  // One "raw target" pair per line; '#' starts a comment.
  static LabelMap parse(std::string_view text) {
    std::unordered_map<std::uint32_t, std::uint16_t> table;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto pos = line.find('#'); pos != std::string::npos)
        line.resize(pos);
      std::istringstream fields(line);
      long long raw, target;
      if (!(fields >> raw)) continue;  // blank line
      std::string rest;
      if (!(fields >> target) || (fields >> rest))
        throw FormatError("label map: line " + std::to_string(line_no) +
                          " is not a raw/target pair");
      if (raw < 0 || raw > 0xffffffffLL || target < 0 || target > 0xffff)
        throw FormatError("label map: line " + std::to_string(line_no) +
                          " value out of range");
      table[static_cast<std::uint32_t>(raw)] =
          static_cast<std::uint16_t>(target);
    }
    return LabelMap(std::move(table));
  }

  bool is_identity() const { return !table_.has_value(); }

  std::uint16_t remap(std::uint32_t raw) const {
    if (raw == 0) return 0;
    if (!table_) {
      if (raw > 0xffff)
        throw FormatError("label map: raw id " + std::to_string(raw) +
                          " does not fit a 16-bit code");
      return static_cast<std::uint16_t>(raw);
    }
    auto it = table_->find(raw);
    if (it == table_->end())
      throw FormatError("label map: raw id " + std::to_string(raw) +
                        " has no mapping");
    return it->second;
  }

 private:
  std::optional<std::unordered_map<std::uint32_t, std::uint16_t>> table_;
};

// Per-point annotation file: one little-endian u32 per point, semantic id in
// the low 16 bits, instance id in the high 16 bits. The instance half is
// dropped after validation.
inline std::vector<std::uint16_t> read_point_labels(
    std::span<const std::uint8_t> bytes, std::size_t n_points,
    const LabelMap& map = LabelMap()) {
  if (bytes.size() % 4 != 0)
    throw FormatError("labels: byte length is not a multiple of 4");
  if (bytes.size() / 4 != n_points)
    throw FormatError("labels: " + std::to_string(bytes.size() / 4) +
                      " entries for " + std::to_string(n_points) + " points");
  std::vector<std::uint16_t> out;
  out.reserve(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    std::uint32_t v = detail::read_u32le(bytes.data() + i * 4);
    out.push_back(map.remap(v & 0xffffu));
  }
  return out;
}

struct PoseFile {
  std::vector<Pose> poses;
  std::vector<std::string> warnings;
};

// Trajectory text: one pose per line, 12 row-major floats. Rotations that
// drift from orthonormal produce warnings, not errors; garbage is an error.
inline PoseFile read_poses(std::string_view text) {
  PoseFile out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<double> vals;
    double v;
    while (fields >> v) vals.push_back(v);
    if (vals.empty()) continue;
    if (!fields.eof() || vals.size() != 12)
      throw FormatError("poses: line " + std::to_string(line_no) +
                        " does not hold 12 numbers");
    Pose p;
    for (int i = 0; i < 12; ++i) p.m[i] = vals[i];
    double err = p.orthonormality_error();
    if (err > 1e-3) {
      std::ostringstream w;
      w << "pose " << out.poses.size() << " rotation deviates from orthonormal by "
        << err;
      out.warnings.push_back(w.str());
    }
    out.poses.push_back(p);
  }
  return out;
}

// Voxel volume container format, little-endian throughout:
//   "SSCV" | u8 version=1 | u32 X,Y,Z | f64 voxel_size | f64 ox,oy,oz
// followed by X*Y*Z u16 codes in flat x-major order. 49-byte header.
constexpr std::size_t kGridHeaderSize = 49;
constexpr std::uint8_t kGridVersion = 1;

inline std::vector<std::uint8_t> write_grid(const LabelGrid& grid) {
  grid.spec.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kGridHeaderSize + grid.codes.size() * 2);
  out.push_back('S');
  out.push_back('S');
  out.push_back('C');
  out.push_back('V');
  out.push_back(kGridVersion);
  detail::put_u32le(out, static_cast<std::uint32_t>(grid.spec.dims.x));
  detail::put_u32le(out, static_cast<std::uint32_t>(grid.spec.dims.y));
  detail::put_u32le(out, static_cast<std::uint32_t>(grid.spec.dims.z));
  detail::put_f64le(out, grid.spec.voxel_size);
  detail::put_f64le(out, grid.spec.origin.x);
  detail::put_f64le(out, grid.spec.origin.y);
  detail::put_f64le(out, grid.spec.origin.z);
  for (std::uint16_t c : grid.codes) detail::put_u16le(out, c);
  return out;
}

inline LabelGrid read_grid(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kGridHeaderSize)
    throw FormatError("grid: file shorter than the 49-byte header");
  if (std::memcmp(bytes.data(), "SSCV", 4) != 0)
    throw FormatError("grid: bad magic bytes");
  if (bytes[4] != kGridVersion)
    throw FormatError("grid: unsupported version " + std::to_string(bytes[4]));
  GridSpec spec;
  std::uint32_t dx = detail::read_u32le(bytes.data() + 5);
  std::uint32_t dy = detail::read_u32le(bytes.data() + 9);
  std::uint32_t dz = detail::read_u32le(bytes.data() + 13);
  if (dx == 0 || dy == 0 || dz == 0 || dx > 0x7fffffff || dy > 0x7fffffff ||
      dz > 0x7fffffff)
    throw FormatError("grid: dimension out of range");
  spec.dims = {static_cast<int>(dx), static_cast<int>(dy),
               static_cast<int>(dz)};
  spec.voxel_size = detail::read_f64le(bytes.data() + 17);
  spec.origin = {detail::read_f64le(bytes.data() + 25),
                 detail::read_f64le(bytes.data() + 33),
                 detail::read_f64le(bytes.data() + 41)};
  if (!(spec.voxel_size > 0.0) || !std::isfinite(spec.voxel_size) ||
      !std::isfinite(spec.origin.x) || !std::isfinite(spec.origin.y) ||
      !std::isfinite(spec.origin.z))
    throw FormatError("grid: non-finite or non-positive geometry fields");
  // Two-step product with an early bail keeps the count from wrapping.
  std::uint64_t count = static_cast<std::uint64_t>(dx) * dy;
  if (count > (std::uint64_t(1) << 33) ||
      (count *= dz) > (std::uint64_t(1) << 33))
    throw FormatError("grid: voxel count implausibly large");
  std::size_t want = kGridHeaderSize + count * 2;
  if (bytes.size() < want) throw FormatError("grid: payload truncated");
  if (bytes.size() > want) throw FormatError("grid: trailing bytes after payload");
  LabelGrid grid(spec);
  for (std::size_t i = 0; i < count; ++i)
    grid.codes[i] = detail::read_u16le(bytes.data() + kGridHeaderSize + i * 2);
  return grid;
}

inline std::vector<std::uint8_t> read_file_bytes(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError("read failed on " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path,
                             std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed on " + path.string());
}

inline std::string read_file_text(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

inline LabelGrid load_grid(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return read_grid(bytes);
}

inline void save_grid(const std::filesystem::path& path,
                      const LabelGrid& grid) {
  write_file_bytes(path, write_grid(grid));
}

inline nlohmann::json load_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_json(const std::filesystem::path& path,
                      const nlohmann::json& j) {
  std::string text = j.dump(2);
  text.push_back('\n');
  write_file_bytes(path, std::span<const std::uint8_t>(
                             reinterpret_cast<const std::uint8_t*>(text.data()),
                             text.size()));
}

}  // namespace scribvox
