#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scribvox/error.hpp"
#include "scribvox/grid.hpp"

namespace scribvox {

// (K+1)^2 counts, rows indexed by the true code, columns by the predicted
// code; code 0 is "empty". Voxels whose truth is unlabeled are not counted.
struct ConfusionMatrix {
  int class_count = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(int k = 0) : class_count(k) {
    counts.assign(static_cast<std::size_t>(k + 1) * (k + 1), 0);
  }

  std::uint64_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt) * (class_count + 1) + pred];
  }
  std::uint64_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt) * (class_count + 1) + pred];
  }
};

inline ConfusionMatrix confusion(const LabelGrid& pred, const LabelGrid& gt,
                                 int class_count,
                                 const BoolGrid* mask = nullptr) {
  require_same_lattice(pred.spec, gt.spec, "confusion");
  if (mask) require_same_lattice(pred.spec, mask->spec, "confusion");
  if (class_count < 1 || class_count >= kUnlabeled)
    throw std::invalid_argument("confusion: class_count out of range");

  ConfusionMatrix m(class_count);
  for (std::size_t f = 0; f < gt.codes.size(); ++f) {
    if (mask && !mask->values[f]) continue;
    std::uint16_t t = gt.codes[f];
    if (t == kUnlabeled) continue;
    std::uint16_t p = pred.codes[f];
    if (p == kUnlabeled)
      throw std::invalid_argument(
          "confusion: prediction contains unlabeled voxels");
    if (t > class_count || p > class_count)
      throw std::invalid_argument("confusion: code out of range");
    ++m.at(t, p);
  }
  return m;
}

// Occupied-versus-empty IoU in percent, semantic classes collapsed. An
// evaluation with no occupied voxel on either side scores 100.
inline double geometric_iou(const ConfusionMatrix& m) {
  const int k = m.class_count;
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (int t = 1; t <= k; ++t)
    for (int p = 1; p <= k; ++p) tp += m.at(t, p);
  for (int p = 1; p <= k; ++p) fp += m.at(0, p);
  for (int t = 1; t <= k; ++t) fn += m.at(t, 0);
  std::uint64_t denom = tp + fp + fn;
  if (denom == 0) return 100.0;
  return 100.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

struct MiouResult {
  double miou = 0.0;              // percent, absent classes excluded
  double miou_absent_zero = 0.0;  // percent, absent classes scored zero
  std::vector<std::optional<double>> per_class;
  int present_classes = 0;
};

// Mean intersection-over-union across semantic classes. A class with an
// empty union is absent: it is excluded from the main mean and reported as
// null, while the companion mean scores it zero. Every class absent is an
// error since there is nothing to average.
inline MiouResult semantic_miou(const ConfusionMatrix& m) {
  const int k = m.class_count;
  MiouResult res;
  res.per_class.assign(k, std::nullopt);
  double sum = 0.0;
  for (int c = 1; c <= k; ++c) {
    std::uint64_t tp = m.at(c, c);
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j <= k; ++j) {
      row += m.at(c, j);
      col += m.at(j, c);
    }
    std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    double iou = 100.0 * static_cast<double>(tp) / static_cast<double>(uni);
    res.per_class[c - 1] = iou;
    sum += iou;
    ++res.present_classes;
  }
  if (res.present_classes == 0)
    throw std::invalid_argument("semantic_miou: every class is absent");
  res.miou = sum / res.present_classes;
  res.miou_absent_zero = sum / k;
  return res;
}

struct RangeMetrics {
  double threshold = 0.0;
  double iou = 0.0;
  double miou = 0.0;
  double miou_absent_zero = 0.0;
  std::vector<std::optional<double>> per_class;
  std::optional<double> ssfs;  // 100 * miou / reference miou
};

// Metrics evaluated on nested range volumes: entry r covers every voxel
// within the r-th threshold box, the last entry the whole grid.
struct RangeReport {
  int class_count = 0;
  RangePartition partition;
  std::vector<RangeMetrics> ranges;
  std::vector<std::string> warnings;
};

inline RangeReport range_report(const LabelGrid& pred, const LabelGrid& gt,
                                const RangePartition& partition,
                                int class_count,
                                const RangeReport* reference = nullptr) {
  require_same_lattice(pred.spec, gt.spec, "range_report");
  partition.validate();
  if (reference) {
    if (reference->class_count != class_count)
      throw std::invalid_argument("range_report: reference class count differs");
    if (reference->ranges.size() != partition.thresholds.size())
      throw std::invalid_argument("range_report: reference range count differs");
    for (std::size_t r = 0; r < partition.thresholds.size(); ++r)
      if (std::abs(reference->ranges[r].threshold - partition.thresholds[r]) >
          1e-9)
        throw std::invalid_argument("range_report: reference thresholds differ");
  }

  RangeReport rep;
  rep.class_count = class_count;
  rep.partition = partition;
  for (int r = 1; r <= partition.shell_count(); ++r) {
    BoolGrid mask = cumulative_mask(partition, pred.spec, r);
    ConfusionMatrix m = confusion(pred, gt, class_count, &mask);
    MiouResult sem = semantic_miou(m);
    RangeMetrics rm;
    rm.threshold = partition.thresholds[r - 1];
    rm.iou = geometric_iou(m);
    rm.miou = sem.miou;
    rm.miou_absent_zero = sem.miou_absent_zero;
    rm.per_class = sem.per_class;
    if (reference) {
      double ref = reference->ranges[r - 1].miou;
      if (ref > 0.0) {
        rm.ssfs = 100.0 * sem.miou / ref;
      } else {
        rep.warnings.push_back("range " + std::to_string(r) +
                               ": reference miou is zero, ratio omitted");
      }
    }
    rep.ranges.push_back(std::move(rm));
  }
  return rep;
}

inline nlohmann::json to_json(const RangeReport& rep) {
  nlohmann::json j;
  j["class_count"] = rep.class_count;
  j["ego"] = {rep.partition.ego.x, rep.partition.ego.y, rep.partition.ego.z};
  j["thresholds"] = rep.partition.thresholds;
  j["ranges"] = nlohmann::json::array();
  for (const RangeMetrics& rm : rep.ranges) {
    nlohmann::json e;
    e["threshold"] = rm.threshold;
    e["geometric_iou"] = rm.iou;
    e["miou"] = rm.miou;
    e["miou_absent_zero"] = rm.miou_absent_zero;
    e["per_class_iou"] = nlohmann::json::array();
    for (const auto& c : rm.per_class)
      e["per_class_iou"].push_back(c ? nlohmann::json(*c)
                                     : nlohmann::json(nullptr));
    if (rm.ssfs) e["ssfs"] = *rm.ssfs;
    j["ranges"].push_back(std::move(e));
  }
  j["warnings"] = rep.warnings;
  return j;
}

inline RangeReport range_report_from_json(const nlohmann::json& j) {
  try {
    RangeReport rep;
    rep.class_count = j.at("class_count").get<int>();
    auto ego = j.at("ego");
    rep.partition.ego = {ego.at(0).get<double>(), ego.at(1).get<double>(),
                         ego.at(2).get<double>()};
    rep.partition.thresholds =
        j.at("thresholds").get<std::vector<double>>();
    for (const auto& e : j.at("ranges")) {
      RangeMetrics rm;
      rm.threshold = e.at("threshold").get<double>();
      rm.iou = e.at("geometric_iou").get<double>();
      rm.miou = e.at("miou").get<double>();
      rm.miou_absent_zero = e.at("miou_absent_zero").get<double>();
      for (const auto& c : e.at("per_class_iou")) {
        if (c.is_null())
          rm.per_class.push_back(std::nullopt);
        else
          rm.per_class.push_back(c.get<double>());
      }
      if (e.contains("ssfs")) rm.ssfs = e.at("ssfs").get<double>();
      rep.ranges.push_back(std::move(rm));
    }
    if (j.contains("warnings"))
      rep.warnings = j.at("warnings").get<std::vector<std::string>>();
    rep.partition.validate();
    if (rep.ranges.size() != rep.partition.thresholds.size())
      throw FormatError("report: range count does not match thresholds");
    return rep;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

}  // namespace scribvox
