#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scribvox/grid.hpp"
#include "scribvox/losses.hpp"
#include "scribvox/rng.hpp"

namespace scribvox {

// Dense per-voxel feature rows, voxel-major.
struct FeatureVolume {
  GridSpec spec;
  int width = 0;
  std::vector<double> values;

  FeatureVolume() = default;

  FeatureVolume(const GridSpec& s, int w) : spec(s), width(w) {
    spec.validate();
    if (w < 1) throw std::invalid_argument("FeatureVolume: width must be >= 1");
    values.assign(spec.voxel_count() * static_cast<std::size_t>(w), 0.0);
  }

  const double* at(std::size_t flat) const {
    return values.data() + flat * width;
  }
  double* at(std::size_t flat) { return values.data() + flat * width; }
};

inline constexpr int feature_width(int class_count) {
  return 27 + 3 + class_count;
}

// Per-voxel input row: the 3x3x3 occupancy neighborhood of the input
// geometry (zero padded at the borders, x-major within the block), the
// normalized voxel coordinates, and a one-hot class hint. Hints only fire
// on voxels the input geometry marks occupied, so a hint can never leak
// occupancy the geometry does not already show.
inline FeatureVolume build_features(const BoolGrid& geometry,
                                    const std::vector<std::uint16_t>* hints,
                                    int class_count) {
  geometry.spec.validate();
  if (class_count < 2 || class_count >= kUnlabeled)
    throw std::invalid_argument("build_features: class_count out of range");
  if (hints && hints->size() != geometry.values.size())
    throw std::invalid_argument("build_features: hint volume size mismatch");

  const GridSpec& spec = geometry.spec;
  FeatureVolume feats(spec, feature_width(class_count));
  const Idx3 d = spec.dims;
  std::size_t f = 0;
  for (int x = 0; x < d.x; ++x)
    for (int y = 0; y < d.y; ++y)
      for (int z = 0; z < d.z; ++z, ++f) {
        double* row = feats.at(f);
        int slot = 0;
        for (int dx = -1; dx <= 1; ++dx)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dz = -1; dz <= 1; ++dz, ++slot) {
              Idx3 n{x + dx, y + dy, z + dz};
              row[slot] = spec.in_bounds(n) && geometry.at(n) ? 1.0 : 0.0;
            }
        row[27] = static_cast<double>(x) / d.x;
        row[28] = static_cast<double>(y) / d.y;
        row[29] = static_cast<double>(z) / d.z;
        if (hints && geometry.values[f]) {
          std::uint16_t h = (*hints)[f];
          if (h > class_count)
            throw std::invalid_argument("build_features: hint class " +
                                        std::to_string(h) + " out of range");
          if (h != 0) row[30 + h - 1] = 1.0;
        }
      }
  return feats;
}

// Two-layer per-voxel perceptron: relu hidden layer, linear class scores.
// Weight blocks are row-major with the output index contiguous.
struct ToyModel {
  int f_in = 0;
  int f_hidden = 0;
  int c_total = 0;
  std::vector<double> w1;  // f_in x f_hidden
  std::vector<double> b1;  // f_hidden
  std::vector<double> w2;  // f_hidden x c_total
  std::vector<double> b2;  // c_total

  static ToyModel init(int f_in, int f_hidden, int c_total,
                       std::uint64_t seed) {
    if (f_in < 1 || f_hidden < 1 || c_total < 2)
      throw std::invalid_argument("ToyModel: bad layer sizes");
    ToyModel m;
    m.f_in = f_in;
    m.f_hidden = f_hidden;
    m.c_total = c_total;
    m.w1.resize(static_cast<std::size_t>(f_in) * f_hidden);
    m.b1.assign(f_hidden, 0.0);
    m.w2.resize(static_cast<std::size_t>(f_hidden) * c_total);
    m.b2.assign(c_total, 0.0);
    CounterRng rng(seed, RngStream::model_init);
    double s1 = 1.0 / std::sqrt(static_cast<double>(f_in));
    for (double& w : m.w1) w = rng.next_uniform(-s1, s1);
    for (double& w : m.b1) w = rng.next_uniform(-s1, s1);
    double s2 = 1.0 / std::sqrt(static_cast<double>(f_hidden));
    for (double& w : m.w2) w = rng.next_uniform(-s2, s2);
    for (double& w : m.b2) w = rng.next_uniform(-s2, s2);
    return m;
  }

  std::size_t param_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    out.insert(out.end(), w1.begin(), w1.end());
    out.insert(out.end(), b1.begin(), b1.end());
    out.insert(out.end(), w2.begin(), w2.end());
    out.insert(out.end(), b2.begin(), b2.end());
    return out;
  }

  void unflatten(std::span<const double> x) {
    if (x.size() != param_count())
      throw std::invalid_argument("ToyModel: flat parameter size mismatch");
    std::size_t p = 0;
    for (double& w : w1) w = x[p++];
    for (double& w : b1) w = x[p++];
    for (double& w : w2) w = x[p++];
    for (double& w : b2) w = x[p++];
  }
};

struct ForwardResult {
  LogitVolume logits;
  FeatureVolume hidden;
};

inline ForwardResult forward(const ToyModel& m, const FeatureVolume& input) {
  if (input.width != m.f_in)
    throw std::invalid_argument("forward: feature width mismatch");
  ForwardResult out{LogitVolume(input.spec, m.c_total),
                    FeatureVolume(input.spec, m.f_hidden)};
  const std::size_t n = input.spec.voxel_count();
  for (std::size_t v = 0; v < n; ++v) {
    const double* f = input.at(v);
    double* h = out.hidden.at(v);
    for (int j = 0; j < m.f_hidden; ++j) h[j] = m.b1[j];
    for (int i = 0; i < m.f_in; ++i) {
      double fi = f[i];
      if (fi == 0.0) continue;
      const double* w = m.w1.data() + static_cast<std::size_t>(i) * m.f_hidden;
      for (int j = 0; j < m.f_hidden; ++j) h[j] += fi * w[j];
    }
    for (int j = 0; j < m.f_hidden; ++j) h[j] = h[j] > 0.0 ? h[j] : 0.0;
    double* l = out.logits.at(v);
    for (int c = 0; c < m.c_total; ++c) l[c] = m.b2[c];
    for (int j = 0; j < m.f_hidden; ++j) {
      double hj = h[j];
      if (hj == 0.0) continue;
      const double* w = m.w2.data() + static_cast<std::size_t>(j) * m.c_total;
      for (int c = 0; c < m.c_total; ++c) l[c] += hj * w[c];
    }
  }
  return out;
}

struct ModelGrads {
  std::vector<double> w1, b1, w2, b2;

  explicit ModelGrads(const ToyModel& m) {
    w1.assign(m.w1.size(), 0.0);
    b1.assign(m.b1.size(), 0.0);
    w2.assign(m.w2.size(), 0.0);
    b2.assign(m.b2.size(), 0.0);
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(w1.size() + b1.size() + w2.size() + b2.size());
    out.insert(out.end(), w1.begin(), w1.end());
    out.insert(out.end(), b1.begin(), b1.end());
    out.insert(out.end(), w2.begin(), w2.end());
    out.insert(out.end(), b2.begin(), b2.end());
    return out;
  }
};

// Accumulates parameter gradients from upstream gradients on the logits
// and, optionally, on the hidden activations (both in volume layout).
// Dead relu units (stored activation zero) pass nothing back.
inline ModelGrads backward(const ToyModel& m, const FeatureVolume& input,
                           const ForwardResult& fwd,
                           std::span<const double> dlogits,
                           std::span<const double> dhidden = {}) {
  if (input.width != m.f_in)
    throw std::invalid_argument("backward: feature width mismatch");
  if (dlogits.size() != fwd.logits.values.size())
    throw std::invalid_argument("backward: logit gradient size mismatch");
  if (!dhidden.empty() && dhidden.size() != fwd.hidden.values.size())
    throw std::invalid_argument("backward: hidden gradient size mismatch");

  ModelGrads g(m);
  const std::size_t n = input.spec.voxel_count();
  std::vector<double> dpre(m.f_hidden);
  for (std::size_t v = 0; v < n; ++v) {
    const double* f = input.at(v);
    const double* h = fwd.hidden.at(v);
    const double* dl = dlogits.data() + v * m.c_total;

    for (int c = 0; c < m.c_total; ++c) g.b2[c] += dl[c];
    for (int j = 0; j < m.f_hidden; ++j) {
      double hj = h[j];
      double acc = 0.0;
      const double* w = m.w2.data() + static_cast<std::size_t>(j) * m.c_total;
      double* gw = g.w2.data() + static_cast<std::size_t>(j) * m.c_total;
      for (int c = 0; c < m.c_total; ++c) {
        gw[c] += hj * dl[c];
        acc += w[c] * dl[c];
      }
      if (!dhidden.empty()) acc += dhidden[v * m.f_hidden + j];
      dpre[j] = hj > 0.0 ? acc : 0.0;
    }
    for (int j = 0; j < m.f_hidden; ++j) g.b1[j] += dpre[j];
    for (int i = 0; i < m.f_in; ++i) {
      double fi = f[i];
      if (fi == 0.0) continue;
      double* gw = g.w1.data() + static_cast<std::size_t>(i) * m.f_hidden;
      for (int j = 0; j < m.f_hidden; ++j) gw[j] += fi * dpre[j];
    }
  }
  return g;
}

inline void apply_sgd(ToyModel& m, const ModelGrads& g, double step_size) {
  for (std::size_t i = 0; i < m.w1.size(); ++i) m.w1[i] -= step_size * g.w1[i];
  for (std::size_t i = 0; i < m.b1.size(); ++i) m.b1[i] -= step_size * g.b1[i];
  for (std::size_t i = 0; i < m.w2.size(); ++i) m.w2[i] -= step_size * g.w2[i];
  for (std::size_t i = 0; i < m.b2.size(); ++i) m.b2[i] -= step_size * g.b2[i];
}

}  // namespace scribvox
