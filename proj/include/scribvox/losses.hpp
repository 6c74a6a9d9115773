#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "scribvox/error.hpp"
#include "scribvox/grid.hpp"

namespace scribvox {

// Per-voxel class scores. Channel 0 is "empty", channels 1..K are the
// semantic classes; values are voxel-major with channels contiguous.
struct LogitVolume {
  GridSpec spec;
  int channels = 0;
  std::vector<double> values;

  LogitVolume() = default;

  LogitVolume(const GridSpec& s, int c) : spec(s), channels(c) {
    spec.validate();
    if (c < 2) throw std::invalid_argument("LogitVolume: need >= 2 channels");
    values.assign(spec.voxel_count() * static_cast<std::size_t>(c), 0.0);
  }

  const double* at(std::size_t flat) const {
    return values.data() + flat * channels;
  }
  double* at(std::size_t flat) { return values.data() + flat * channels; }
};

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // same layout as the logit volume
};

enum class CeReduction { mean, sum };

namespace detail {

// Stable softmax. NaN input or a non-finite maximum is a hard error; a
// lone -inf among finite logits is representable and allowed.
inline void softmax(const double* logits, int c, double* out) {
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < c; ++i) {
    if (std::isnan(logits[i]))
      throw NumericalError("softmax: NaN logit");
    m = std::max(m, logits[i]);
  }
  if (!std::isfinite(m))
    throw NumericalError("softmax: no finite logit to normalize against");
  double sum = 0.0;
  for (int i = 0; i < c; ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (int i = 0; i < c; ++i) out[i] /= sum;
}

constexpr double kProbFloor = 1e-12;

inline double floored_log(double p) { return std::log(std::max(p, kProbFloor)); }

}  // namespace detail

inline std::vector<double> softmax_probs(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  detail::softmax(logits.data(), static_cast<int>(logits.size()), out.data());
  return out;
}

// Cross entropy over annotated voxels only (codes 1..K); empty and
// unlabeled voxels contribute nothing. Mean reduction divides by the
// annotated count, sum reduction does not.
inline LossResult partial_cross_entropy(const LogitVolume& o,
                                        const LabelGrid& s,
                                        CeReduction reduction =
                                            CeReduction::mean) {
  require_same_lattice(o.spec, s.spec, "partial_cross_entropy");
  const int c = o.channels;
  LossResult res;
  res.grad.assign(o.values.size(), 0.0);
  std::vector<double> p(c);
  std::size_t n = 0;
  double total = 0.0;
  for (std::size_t f = 0; f < s.codes.size(); ++f) {
    std::uint16_t y = s.codes[f];
    if (y == kEmpty || y == kUnlabeled) continue;
    if (y >= c)
      throw std::invalid_argument("partial_cross_entropy: label " +
                                  std::to_string(y) + " has no channel");
    detail::softmax(o.at(f), c, p.data());
    total -= detail::floored_log(p[y]);
    double* g = res.grad.data() + f * c;
    for (int i = 0; i < c; ++i) g[i] = p[i];
    g[y] -= 1.0;
    ++n;
  }
  if (n == 0)
    throw std::invalid_argument("partial_cross_entropy: no annotated voxels");
  if (reduction == CeReduction::mean) {
    total /= static_cast<double>(n);
    for (double& g : res.grad) g /= static_cast<double>(n);
  }
  res.value = total;
  return res;
}

// Class frequencies over non-ignored voxels mapped through 1/log(1.02 + f).
// Index c holds the weight for code c; code 0 (empty) participates.
inline std::vector<double> frequency_class_weights(const LabelGrid& labels,
                                                   int class_count,
                                                   std::uint16_t ignore_code =
                                                       kUnlabeled) {
  if (class_count < 1 || class_count >= kUnlabeled)
    throw std::invalid_argument(
        "frequency_class_weights: class_count out of range");
  std::vector<std::uint64_t> counts(class_count + 1, 0);
  std::uint64_t total = 0;
  for (std::uint16_t code : labels.codes) {
    if (code == ignore_code) continue;
    if (code > class_count)
      throw std::invalid_argument("frequency_class_weights: code " +
                                  std::to_string(code) + " out of range");
    ++counts[code];
    ++total;
  }
  if (total == 0)
    throw std::invalid_argument(
        "frequency_class_weights: every voxel is ignored");
  std::vector<double> weights(class_count + 1);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double freq = static_cast<double>(counts[i]) / total;
    weights[i] = 1.0 / std::log(1.02 + freq);
  }
  return weights;
}

// Weighted cross entropy over all voxels except the ignore code, normalized
// by the total weight mass of the targets. Zero mass yields a zero loss.
inline LossResult weighted_cross_entropy(const LogitVolume& o,
                                         const LabelGrid& labels,
                                         std::span<const double> weights,
                                         std::uint16_t ignore_code =
                                             kUnlabeled) {
  require_same_lattice(o.spec, labels.spec, "weighted_cross_entropy");
  const int c = o.channels;
  if (static_cast<int>(weights.size()) != c)
    throw std::invalid_argument(
        "weighted_cross_entropy: weight count must match channels");
  LossResult res;
  res.grad.assign(o.values.size(), 0.0);
  std::vector<double> p(c);
  double mass = 0.0, total = 0.0;
  for (std::size_t f = 0; f < labels.codes.size(); ++f) {
    std::uint16_t y = labels.codes[f];
    if (y == ignore_code) continue;
    if (y >= c)
      throw std::invalid_argument("weighted_cross_entropy: label " +
                                  std::to_string(y) + " has no channel");
    double w = weights[y];
    detail::softmax(o.at(f), c, p.data());
    total -= w * detail::floored_log(p[y]);
    double* g = res.grad.data() + f * c;
    for (int i = 0; i < c; ++i) g[i] = w * p[i];
    g[y] -= w;
    mass += w;
  }
  if (mass <= 0.0) {
    res.grad.assign(o.values.size(), 0.0);
    res.value = 0.0;
    return res;
  }
  res.value = total / mass;
  for (double& g : res.grad) g /= mass;
  return res;
}

// Occupancy affinity between predicted and true geometry: with
// q = 1 - p(empty), penalizes the logs of precision, recall, and
// specificity of q against the occupancy target.
inline LossResult scene_class_affinity_geo(const LogitVolume& o,
                                           const BoolGrid& g) {
  require_same_lattice(o.spec, g.spec, "scene_class_affinity_geo");
  const int c = o.channels;
  const std::size_t n = g.values.size();

  std::size_t n_occ = 0;
  for (std::uint8_t v : g.values) n_occ += (v != 0);
  const std::size_t n_empty = n - n_occ;
  if (n_occ == 0)
    throw NumericalError("scene_class_affinity_geo: target has no occupied voxels");
  if (n_empty == 0)
    throw NumericalError("scene_class_affinity_geo: target has no empty voxels");

  std::vector<double> q(n);
  std::vector<double> p(c);
  double sq = 0.0, sgq = 0.0, snq = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    detail::softmax(o.at(f), c, p.data());
    q[f] = 1.0 - p[0];
    sq += q[f];
    if (g.values[f])
      sgq += q[f];
    else
      snq += 1.0 - q[f];
  }

  const double precision = sgq / sq;
  const double recall = sgq / static_cast<double>(n_occ);
  const double specificity = snq / static_cast<double>(n_empty);

  LossResult res;
  res.value = -(detail::floored_log(precision) + detail::floored_log(recall) +
                detail::floored_log(specificity)) /
              3.0;
  res.grad.assign(o.values.size(), 0.0);

  // d/dq of each floored log term; terms pinned at the floor go flat.
  const double d_sgq =
      (precision > detail::kProbFloor ? 1.0 / sgq : 0.0) +
      (recall > detail::kProbFloor ? 1.0 / sgq : 0.0);
  const double d_sq = precision > detail::kProbFloor ? 1.0 / sq : 0.0;
  const double d_snq = specificity > detail::kProbFloor ? 1.0 / snq : 0.0;

  const double dldq_occ = -(d_sgq - d_sq) / 3.0;
  const double dldq_empty = (d_snq + d_sq) / 3.0;

  for (std::size_t f = 0; f < n; ++f) {
    double dldq = g.values[f] ? dldq_occ : dldq_empty;
    detail::softmax(o.at(f), c, p.data());
    double p0 = p[0];
    double* grad = res.grad.data() + f * c;
    for (int i = 0; i < c; ++i) {
      double dqdl = p0 * p[i] - (i == 0 ? p0 : 0.0);
      grad[i] = dldq * dqdl;
    }
  }
  return res;
}

}  // namespace scribvox
