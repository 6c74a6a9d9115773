#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "scribvox/grid.hpp"
#include "scribvox/io.hpp"

namespace scribvox {

struct AccumulationWindow {
  int n_future = 70;           // scans after t to merge in
  bool include_current = true;
};

// Merges scan t with its future window into one world-frame cloud. Labels
// and intensities survive only when every scan in the window carries them.
inline LabeledPointCloud accumulate_scans(
    std::span<const LabeledPointCloud> scans, std::span<const Pose> poses,
    std::size_t t, const AccumulationWindow& window = {}) {
  if (scans.size() != poses.size())
    throw std::invalid_argument("accumulate_scans: scan/pose count mismatch");
  if (t >= scans.size())
    throw std::invalid_argument("accumulate_scans: frame index out of range");
  if (window.n_future < 0)
    throw std::invalid_argument("accumulate_scans: negative window");

  std::size_t first = window.include_current ? t : t + 1;
  std::size_t last = std::min(scans.size(), t + 1 + window.n_future);
  if (first >= last)
    throw std::invalid_argument("accumulate_scans: empty window");

  bool all_labels = true, all_intensities = true;
  std::size_t total = 0;
  for (std::size_t s = first; s < last; ++s) {
    scans[s].validate();
    if (scans[s].frame != Frame::sensor)
      throw std::invalid_argument(
          "accumulate_scans: input scans must be in the sensor frame");
    all_labels &= scans[s].has_labels();
    all_intensities &= scans[s].has_intensities();
    total += scans[s].points.size();
  }
  for (std::size_t s = first; s < last; ++s) {
    if (!all_labels && scans[s].has_labels())
      throw std::invalid_argument(
          "accumulate_scans: mixed labeled and unlabeled scans in window");
    if (!all_intensities && scans[s].has_intensities())
      throw std::invalid_argument(
          "accumulate_scans: mixed intensity presence in window");
  }

  LabeledPointCloud out;
  out.frame = Frame::world;
  out.points.reserve(total);
  if (all_labels) out.labels.reserve(total);
  if (all_intensities) out.intensities.reserve(total);
  for (std::size_t s = first; s < last; ++s) {
    const LabeledPointCloud& pc = scans[s];
    for (std::size_t i = 0; i < pc.points.size(); ++i) {
      out.points.push_back(poses[s].apply(pc.points[i]));
      if (all_labels) out.labels.push_back(pc.labels[i]);
      if (all_intensities) out.intensities.push_back(pc.intensities[i]);
    }
  }
  return out;
}

// Marks every voxel that contains at least one point. Points outside the
// volume are ignored.
inline BoolGrid voxelize_geometry(const LabeledPointCloud& pc,
                                  const GridSpec& spec) {
  pc.validate();
  if (pc.frame != Frame::world)
    throw std::invalid_argument("voxelize_geometry: cloud must be in world frame");
  BoolGrid out(spec);
  for (const Vec3& p : pc.points)
    if (auto i = world_to_voxel(p, spec)) out.set(*i, true);
  return out;
}

// Builds a full volume from an annotated cloud: occupied voxels take the
// majority label among their annotated points, ties break toward the
// smaller class id, and occupied voxels with no annotated points come out
// unlabeled.
inline LabelGrid majority_vote(const LabeledPointCloud& pc,
                               const GridSpec& spec, int class_count) {
  pc.validate();
  if (pc.frame != Frame::world)
    throw std::invalid_argument("majority_vote: cloud must be in world frame");
  if (class_count < 1 || class_count >= kUnlabeled)
    throw std::invalid_argument("majority_vote: class_count out of range");

  BoolGrid occ = voxelize_geometry(pc, spec);

  // (voxel << 16 | label) keys sort by voxel, then ascending label, so one
  // sorted sweep yields per-voxel counts with smallest-id tie wins.
  std::vector<std::uint64_t> keys;
  if (pc.has_labels()) {
    for (std::size_t i = 0; i < pc.points.size(); ++i) {
      std::uint16_t lab = pc.labels[i];
      if (lab == kEmpty) continue;
      if (lab == kUnlabeled || lab > class_count)
        throw std::invalid_argument("majority_vote: point label " +
                                    std::to_string(lab) +
                                    " outside 1..class_count");
      if (auto v = world_to_voxel(pc.points[i], spec))
        keys.push_back((static_cast<std::uint64_t>(spec.flat_index(*v)) << 16) |
                       lab);
    }
    std::sort(keys.begin(), keys.end());
  }

  LabelGrid out(spec);
  for (std::size_t f = 0; f < out.codes.size(); ++f)
    if (occ.values[f]) out.codes[f] = kUnlabeled;

  std::size_t i = 0;
  while (i < keys.size()) {
    std::size_t voxel = keys[i] >> 16;
    std::uint16_t best_label = 0;
    std::size_t best_count = 0;
    while (i < keys.size() && (keys[i] >> 16) == voxel) {
      std::uint16_t label = static_cast<std::uint16_t>(keys[i] & 0xffff);
      std::size_t count = 0;
      while (i < keys.size() && keys[i] == ((voxel << 16) | label)) {
        ++count;
        ++i;
      }
      if (count > best_count) {  // strict: earlier (smaller) label keeps ties
        best_count = count;
        best_label = label;
      }
    }
    out.codes[voxel] = best_label;
  }
  return out;
}

// Occupancy and annotation coverage of a volume, optionally against a
// reference volume whose labels are treated as complete.
struct LabelingStats {
  int class_count = 0;
  std::uint64_t empty = 0;
  std::uint64_t unlabeled = 0;
  std::uint64_t labeled = 0;
  std::vector<std::uint64_t> per_class;      // size class_count
  double labeled_fraction = 0.0;             // labeled / occupied
  bool has_reference = false;
  std::vector<double> per_class_coverage;    // labeled / reference labeled
  double overall_coverage = 0.0;
};

inline LabelingStats labeling_stats(const LabelGrid& grid, int class_count,
                                    const LabelGrid* reference = nullptr) {
  if (class_count < 1 || class_count >= kUnlabeled)
    throw std::invalid_argument("labeling_stats: class_count out of range");
  LabelingStats st;
  st.class_count = class_count;
  st.per_class.assign(class_count, 0);
  for (std::uint16_t c : grid.codes) {
    if (c == kEmpty)
      ++st.empty;
    else if (c == kUnlabeled)
      ++st.unlabeled;
    else if (c <= class_count) {
      ++st.labeled;
      ++st.per_class[c - 1];
    } else {
      throw std::invalid_argument("labeling_stats: code " + std::to_string(c) +
                                  " outside 1..class_count");
    }
  }
  std::uint64_t occupied = st.labeled + st.unlabeled;
  st.labeled_fraction =
      occupied == 0 ? 0.0 : static_cast<double>(st.labeled) / occupied;

  if (reference) {
    require_same_lattice(grid.spec, reference->spec, "labeling_stats");
    LabelingStats ref = labeling_stats(*reference, class_count);
    st.has_reference = true;
    st.per_class_coverage.assign(class_count, 0.0);
    for (int c = 0; c < class_count; ++c)
      st.per_class_coverage[c] =
          ref.per_class[c] == 0
              ? 0.0
              : static_cast<double>(st.per_class[c]) / ref.per_class[c];
    st.overall_coverage =
        ref.labeled == 0 ? 0.0
                         : static_cast<double>(st.labeled) / ref.labeled;
  }
  return st;
}

inline nlohmann::json to_json(const LabelingStats& st) {
  nlohmann::json j;
  j["class_count"] = st.class_count;
  j["empty_voxels"] = st.empty;
  j["unlabeled_voxels"] = st.unlabeled;
  j["labeled_voxels"] = st.labeled;
  j["per_class_voxels"] = st.per_class;
  j["labeled_fraction"] = st.labeled_fraction;
  if (st.has_reference) {
    j["per_class_coverage"] = st.per_class_coverage;
    j["overall_coverage"] = st.overall_coverage;
  }
  return j;
}

}  // namespace scribvox
