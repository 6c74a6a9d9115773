#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "scribvox/error.hpp"
#include "scribvox/grid.hpp"
#include "scribvox/losses.hpp"

namespace scribvox {

// Coefficients of the distillation objective. Range weights are ordered
// near to far and deliberately favor far shells, where predictions are
// weakest.
struct DistillWeights {
  std::vector<double> range_weights{0.06, 0.15, 0.2};
  double alpha = 2.625;
  double beta = 0.375;
  double feature_weight = 1.0;
  double total_weight = 1.0;

  void validate() const {
    if (range_weights.empty())
      throw std::invalid_argument("DistillWeights: no range weights");
    for (double w : range_weights)
      if (!(w >= 0.0))
        throw std::invalid_argument("DistillWeights: negative range weight");
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(feature_weight >= 0.0) ||
        !(total_weight >= 0.0))
      throw std::invalid_argument("DistillWeights: negative coefficient");
  }
};

struct PearsonResult {
  double distance = 0.0;
  std::vector<double> grad_a;  // d distance / d a
};

// Pearson correlation distance 1 - rho(a, b) with the gradient with respect
// to a. Constant vectors have no direction: if both are constant the
// distance is 0, if exactly one is constant it is 1, and both cases carry
// zero gradient.
inline PearsonResult pearson_distance(std::span<const double> a,
                                      std::span<const double> b) {
  const std::size_t n = a.size();
  if (n != b.size() || n < 2)
    throw std::invalid_argument(
        "pearson_distance: need two equally sized vectors of length >= 2");

  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= n;
  mean_b /= n;

  double sab = 0.0, saa = 0.0, sbb = 0.0, max_a = 0.0, max_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double da = a[i] - mean_a;
    double db = b[i] - mean_b;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
    max_a = std::max(max_a, std::abs(a[i]));
    max_b = std::max(max_b, std::abs(b[i]));
  }

  PearsonResult res;
  res.grad_a.assign(n, 0.0);
  const bool const_a = saa <= 1e-24 * std::max(1.0, max_a * max_a);
  const bool const_b = sbb <= 1e-24 * std::max(1.0, max_b * max_b);
  if (const_a && const_b) return res;  // distance 0
  if (const_a || const_b) {
    res.distance = 1.0;
    return res;
  }

  const double sa = std::sqrt(saa);
  const double sb = std::sqrt(sbb);
  double rho = sab / (sa * sb);
  rho = std::clamp(rho, -1.0, 1.0);
  res.distance = 1.0 - rho;
  for (std::size_t i = 0; i < n; ++i) {
    double da = a[i] - mean_a;
    double db = b[i] - mean_b;
    res.grad_a[i] = -(db / (sa * sb) - sab * da / (saa * sa * sb));
  }
  return res;
}

// Class-summary matrix of a prediction inside one range shell: row i holds
// the mean renormalized semantic distribution over the shell's voxels
// annotated with class i+1. Rows with no annotated voxels are invalid.
// members records (voxel, row) pairs so losses can push gradients back
// through the means.
struct GslMatrix {
  int class_count = 0;
  std::vector<double> entries;            // class_count^2, row-major
  std::vector<std::uint8_t> row_valid;
  std::vector<int> row_count;
  std::vector<std::pair<std::size_t, int>> members;

  double entry(int i, int j) const { return entries[i * class_count + j]; }
  std::span<const double> row(int i) const {
    return {entries.data() + static_cast<std::size_t>(i) * class_count,
            static_cast<std::size_t>(class_count)};
  }
};

namespace detail {

// The renormalized semantic distribution is the softmax over the semantic
// channels alone; the empty channel does not influence it.
inline void semantic_probs(const double* logits, int channels, double* out) {
  softmax(logits + 1, channels - 1, out);
}

// Maps a gradient in semantic-probability space onto the logits of one
// voxel (channel 0 receives nothing).
inline void add_semantic_prob_grad(std::span<const double> probs,
                                   std::span<const double> dprobs,
                                   double* dlogits) {
  double inner = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c) inner += dprobs[c] * probs[c];
  for (std::size_t c = 0; c < probs.size(); ++c)
    dlogits[1 + c] += probs[c] * (dprobs[c] - inner);
}

}  // namespace detail

inline GslMatrix global_semantic_logits(const LogitVolume& o,
                                        const LabelGrid& s,
                                        const BoolGrid& shell) {
  require_same_lattice(o.spec, s.spec, "global_semantic_logits");
  require_same_lattice(o.spec, shell.spec, "global_semantic_logits");
  const int k = o.channels - 1;
  if (k < 2)
    throw std::invalid_argument(
        "global_semantic_logits: need at least two semantic channels");

  GslMatrix m;
  m.class_count = k;
  m.entries.assign(static_cast<std::size_t>(k) * k, 0.0);
  m.row_valid.assign(k, 0);
  m.row_count.assign(k, 0);

  std::vector<double> probs(k);
  for (std::size_t f = 0; f < s.codes.size(); ++f) {
    if (!shell.values[f]) continue;
    std::uint16_t code = s.codes[f];
    if (code == kEmpty || code == kUnlabeled) continue;
    if (code > k)
      throw std::invalid_argument("global_semantic_logits: annotation " +
                                  std::to_string(code) + " has no channel");
    int row = code - 1;
    detail::semantic_probs(o.at(f), o.channels, probs.data());
    for (int j = 0; j < k; ++j)
      m.entries[static_cast<std::size_t>(row) * k + j] += probs[j];
    ++m.row_count[row];
    m.members.emplace_back(f, row);
  }
  for (int i = 0; i < k; ++i) {
    if (m.row_count[i] == 0) continue;
    m.row_valid[i] = 1;
    for (int j = 0; j < k; ++j)
      m.entries[static_cast<std::size_t>(i) * k + j] /= m.row_count[i];
  }
  return m;
}

struct GlobalRelationLoss {
  double value = 0.0;
  std::vector<double> grad;  // student logit layout
  int used_rows = 0;
  int used_cols = 0;
  int dropped_rows = 0;  // valid on one side only
  int dropped_cols = 0;  // skipped for lack of shared rows
};

// Row- and column-wise correlation distance between the student's and the
// teacher's class-summary matrices, averaged over the class count. Rows are
// compared where both sides are valid; columns are restricted to those rows
// and need at least two of them. The gradient lands on the student logits
// through the row means.
inline GlobalRelationLoss global_relation_loss(const LogitVolume& o_s,
                                               const GslMatrix& gsl_s,
                                               const GslMatrix& gsl_t,
                                               double alpha, double beta) {
  const int k = gsl_s.class_count;
  if (k != gsl_t.class_count || k != o_s.channels - 1)
    throw std::invalid_argument(
        "global_relation_loss: class count mismatch between inputs");
  if (!(alpha >= 0.0) || !(beta >= 0.0))
    throw std::invalid_argument("global_relation_loss: negative coefficient");

  std::vector<int> shared;
  GlobalRelationLoss res;
  for (int i = 0; i < k; ++i) {
    bool vs = gsl_s.row_valid[i], vt = gsl_t.row_valid[i];
    if (vs && vt)
      shared.push_back(i);
    else if (vs || vt)
      ++res.dropped_rows;
  }

  // d value / d entries of the student matrix.
  std::vector<double> d_entries(static_cast<std::size_t>(k) * k, 0.0);
  double row_sum = 0.0, col_sum = 0.0;

  for (int i : shared) {
    PearsonResult pr = pearson_distance(gsl_s.row(i), gsl_t.row(i));
    row_sum += pr.distance;
    for (int j = 0; j < k; ++j)
      d_entries[static_cast<std::size_t>(i) * k + j] +=
          alpha / k * pr.grad_a[j];
  }
  res.used_rows = static_cast<int>(shared.size());

  if (shared.size() >= 2) {
    std::vector<double> col_s(shared.size()), col_t(shared.size());
    for (int j = 0; j < k; ++j) {
      for (std::size_t pos = 0; pos < shared.size(); ++pos) {
        col_s[pos] = gsl_s.entry(shared[pos], j);
        col_t[pos] = gsl_t.entry(shared[pos], j);
      }
      PearsonResult pc = pearson_distance(col_s, col_t);
      col_sum += pc.distance;
      for (std::size_t pos = 0; pos < shared.size(); ++pos)
        d_entries[static_cast<std::size_t>(shared[pos]) * k + j] +=
            beta / k * pc.grad_a[pos];
    }
    res.used_cols = k;
  } else {
    res.dropped_cols = k;
  }

  res.value = (alpha * row_sum + beta * col_sum) / k;

  // Entry gradients flow to member voxels through the row means, then
  // through the semantic softmax.
  res.grad.assign(o_s.values.size(), 0.0);
  std::vector<double> probs(k), dprobs(k);
  for (const auto& [f, row] : gsl_s.members) {
    if (!gsl_s.row_valid[row] || !gsl_t.row_valid[row]) continue;
    detail::semantic_probs(o_s.at(f), o_s.channels, probs.data());
    for (int j = 0; j < k; ++j)
      dprobs[j] = d_entries[static_cast<std::size_t>(row) * k + j] /
                  gsl_s.row_count[row];
    detail::add_semantic_prob_grad(probs, dprobs,
                                   res.grad.data() + f * o_s.channels);
  }
  return res;
}

// Cosine affinity between each shell voxel's renormalized semantic
// distribution and every valid class summary row.
struct AffinityMap {
  int class_count = 0;
  std::vector<std::size_t> voxels;      // flat ids, ascending
  std::vector<double> values;           // voxels.size() * class_count
  std::vector<std::uint8_t> col_valid;  // per summary row
};

namespace detail {

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

inline AffinityMap local_semantic_affinity(const LogitVolume& o,
                                           const GslMatrix& gsl,
                                           const BoolGrid& shell) {
  require_same_lattice(o.spec, shell.spec, "local_semantic_affinity");
  const int k = gsl.class_count;
  if (k != o.channels - 1)
    throw std::invalid_argument(
        "local_semantic_affinity: class count mismatch");

  AffinityMap a;
  a.class_count = k;
  a.col_valid = gsl.row_valid;
  for (std::size_t f = 0; f < shell.values.size(); ++f)
    if (shell.values[f]) a.voxels.push_back(f);
  a.values.assign(a.voxels.size() * static_cast<std::size_t>(k), 0.0);

  std::vector<double> row_norm(k, 0.0);
  for (int i = 0; i < k; ++i)
    if (gsl.row_valid[i]) row_norm[i] = detail::norm(gsl.row(i));

  std::vector<double> probs(k);
  for (std::size_t pos = 0; pos < a.voxels.size(); ++pos) {
    detail::semantic_probs(o.at(a.voxels[pos]), o.channels, probs.data());
    double un = detail::norm(probs);
    for (int i = 0; i < k; ++i) {
      if (!gsl.row_valid[i] || row_norm[i] <= 0.0) continue;
      double dot = 0.0;
      std::span<const double> g = gsl.row(i);
      for (int j = 0; j < k; ++j) dot += probs[j] * g[j];
      a.values[pos * k + i] = dot / (un * row_norm[i]);
    }
  }
  return a;
}

// Mean squared difference between two affinity maps over the same shell,
// with the gradient on the student logits. The student map must have been
// computed from o_s and gsl_s; both maps must agree on voxels and valid
// columns. Gradients flow through the per-voxel distributions and through
// the student summary rows.
inline LossResult local_affinity_loss(const LogitVolume& o_s,
                                      const GslMatrix& gsl_s,
                                      const AffinityMap& a_s,
                                      const AffinityMap& a_t) {
  const int k = gsl_s.class_count;
  if (a_s.class_count != k || a_t.class_count != k || k != o_s.channels - 1)
    throw std::invalid_argument("local_affinity_loss: class count mismatch");
  if (a_s.voxels != a_t.voxels)
    throw std::invalid_argument(
        "local_affinity_loss: affinity maps cover different voxel sets");
  if (a_s.col_valid != a_t.col_valid)
    throw std::invalid_argument(
        "local_affinity_loss: affinity maps disagree on valid columns");

  LossResult res;
  res.grad.assign(o_s.values.size(), 0.0);

  std::vector<int> valid;
  for (int i = 0; i < k; ++i)
    if (a_s.col_valid[i]) valid.push_back(i);
  const std::size_t n_terms = a_s.voxels.size() * valid.size();
  if (n_terms == 0) return res;

  std::vector<double> row_norm(k, 0.0);
  for (int i : valid) row_norm[i] = detail::norm(gsl_s.row(i));

  std::vector<double> d_rows(static_cast<std::size_t>(k) * k, 0.0);
  std::vector<double> probs(k), dprobs(k);
  double total = 0.0;
  for (std::size_t pos = 0; pos < a_s.voxels.size(); ++pos) {
    std::size_t f = a_s.voxels[pos];
    detail::semantic_probs(o_s.at(f), o_s.channels, probs.data());
    double un = detail::norm(probs);
    std::fill(dprobs.begin(), dprobs.end(), 0.0);
    for (int i : valid) {
      std::span<const double> g = gsl_s.row(i);
      double dot = 0.0;
      for (int j = 0; j < k; ++j) dot += probs[j] * g[j];
      double cosv = dot / (un * row_norm[i]);
      if (std::abs(cosv - a_s.values[pos * k + i]) > 1e-9)
        throw std::invalid_argument(
            "local_affinity_loss: student affinity map is stale");
      double diff = cosv - a_t.values[pos * k + i];
      total += diff * diff;
      double da = 2.0 * diff / static_cast<double>(n_terms);
      for (int j = 0; j < k; ++j) {
        dprobs[j] += da * (g[j] / (un * row_norm[i]) -
                           cosv * probs[j] / (un * un));
        d_rows[static_cast<std::size_t>(i) * k + j] +=
            da * (probs[j] / (un * row_norm[i]) -
                  cosv * g[j] / (row_norm[i] * row_norm[i]));
      }
    }
    detail::add_semantic_prob_grad(probs, dprobs,
                                   res.grad.data() + f * o_s.channels);
  }
  res.value = total / static_cast<double>(n_terms);

  // Student summary rows depend on the annotated member voxels.
  for (const auto& [f, row] : gsl_s.members) {
    if (!a_s.col_valid[row]) continue;
    detail::semantic_probs(o_s.at(f), o_s.channels, probs.data());
    for (int j = 0; j < k; ++j)
      dprobs[j] = d_rows[static_cast<std::size_t>(row) * k + j] /
                  gsl_s.row_count[row];
    detail::add_semantic_prob_grad(probs, dprobs,
                                   res.grad.data() + f * o_s.channels);
  }
  return res;
}

// Mean squared error between two flat feature blocks, gradient on the first.
inline LossResult feature_mse(std::span<const double> f_s,
                              std::span<const double> f_t) {
  if (f_s.size() != f_t.size() || f_s.empty())
    throw std::invalid_argument(
        "feature_mse: need two equally sized non-empty blocks");
  LossResult res;
  res.grad.assign(f_s.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < f_s.size(); ++i) {
    double d = f_s[i] - f_t[i];
    total += d * d;
    res.grad[i] = 2.0 * d / static_cast<double>(f_s.size());
  }
  res.value = total / static_cast<double>(f_s.size());
  return res;
}

// Weighted sum of the distillation terms: the feature term plus, per range
// shell, the global and local terms under that shell's weight.
inline double compose_distill(double feature_term,
                              std::span<const double> global_terms,
                              std::span<const double> local_terms,
                              const DistillWeights& w) {
  w.validate();
  if (global_terms.size() != w.range_weights.size() ||
      local_terms.size() != w.range_weights.size())
    throw std::invalid_argument(
        "compose_distill: term count does not match range weights");
  double total = w.feature_weight * feature_term;
  for (std::size_t r = 0; r < w.range_weights.size(); ++r)
    total += w.range_weights[r] * (global_terms[r] + local_terms[r]);
  return total;
}

}  // namespace scribvox
