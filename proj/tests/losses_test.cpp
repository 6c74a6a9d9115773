#include "scribvox/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "scribvox/gradcheck.hpp"
#include "scribvox/rng.hpp"

namespace scribvox {
namespace {

LogitVolume random_logits(const GridSpec& spec, int channels,
                          std::uint64_t seed) {
  LogitVolume o(spec, channels);
  CounterRng rng(seed, RngStream::model_init);
  for (double& v : o.values) v = rng.next_uniform(-2.0, 2.0);
  return o;
}

using LossFn = std::function<LossResult(const LogitVolume&)>;

// Adapts a loss over logit volumes to the flat-vector interface the
// finite-difference checker expects.
std::function<double(std::span<const double>, std::span<double>)> flatten_loss(
    const LogitVolume& shape, LossFn loss) {
  return [shape, loss](std::span<const double> x,
                       std::span<double> grad) -> double {
    LogitVolume o = shape;
    std::copy(x.begin(), x.end(), o.values.begin());
    LossResult r = loss(o);
    if (!grad.empty()) std::copy(r.grad.begin(), r.grad.end(), grad.begin());
    return r.value;
  };
}

TEST(Softmax, KnownValuesAndInvariance) {
  std::vector<double> p = softmax_probs(std::vector<double>{0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);

  std::vector<double> q =
      softmax_probs(std::vector<double>{0.0, std::log(3.0)});
  EXPECT_NEAR(q[0], 0.25, 1e-15);
  EXPECT_NEAR(q[1], 0.75, 1e-15);

  // Shift invariance and normalization on random input.
  CounterRng rng(5, RngStream::model_init);
  std::vector<double> logits(7), shifted(7);
  for (int i = 0; i < 7; ++i) {
    logits[i] = rng.next_uniform(-30.0, 30.0);
    shifted[i] = logits[i] + 123.5;
  }
  std::vector<double> a = softmax_probs(logits);
  std::vector<double> b = softmax_probs(shifted);
  double sum = 0.0;
  for (int i = 0; i < 7; ++i) {
    EXPECT_NEAR(a[i], b[i], 1e-12);
    sum += a[i];
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Softmax, RejectsNaNAndAllNegativeInfinity) {
  EXPECT_THROW(softmax_probs(std::vector<double>{0.0, std::nan("")}),
               NumericalError);
  double ninf = -std::numeric_limits<double>::infinity();
  EXPECT_THROW(softmax_probs(std::vector<double>{ninf, ninf}), NumericalError);
  EXPECT_THROW(
      softmax_probs(std::vector<double>{0.0,
                                        std::numeric_limits<double>::infinity()}),
      NumericalError);
  // A single -inf among finite logits is fine.
  std::vector<double> p = softmax_probs(std::vector<double>{0.0, ninf});
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(p[1], 0.0);
}

TEST(PartialCrossEntropy, UniformLogitsGiveLogC) {
  GridSpec spec;
  spec.dims = {1, 1, 1};
  LogitVolume o(spec, 3);
  LabelGrid s(spec);
  s.codes[0] = 2;
  LossResult r = partial_cross_entropy(o, s);
  EXPECT_DOUBLE_EQ(r.value, 1.0986122886681098);  // ln 3
  EXPECT_NEAR(r.grad[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.grad[1], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.grad[2], 1.0 / 3.0 - 1.0, 1e-15);
}

TEST(PartialCrossEntropy, SkipsEmptyAndUnlabeledAndSupportsSum) {
  GridSpec spec;
  spec.dims = {4, 1, 1};
  LogitVolume o = random_logits(spec, 4, 2);
  LabelGrid s(spec);
  s.codes = {0, 3, 255, 1};

  LossResult mean = partial_cross_entropy(o, s, CeReduction::mean);
  LossResult sum = partial_cross_entropy(o, s, CeReduction::sum);
  EXPECT_NEAR(sum.value, 2.0 * mean.value, 1e-12);
  for (std::size_t i = 0; i < mean.grad.size(); ++i)
    EXPECT_NEAR(sum.grad[i], 2.0 * mean.grad[i], 1e-12);

  // Non-annotated voxels must carry zero gradient.
  for (int ch = 0; ch < 4; ++ch) {
    EXPECT_EQ(mean.grad[0 * 4 + ch], 0.0);
    EXPECT_EQ(mean.grad[2 * 4 + ch], 0.0);
  }

  LabelGrid none(spec);
  none.codes = {0, 255, 0, 255};
  EXPECT_THROW(partial_cross_entropy(o, none), std::invalid_argument);

  LabelGrid big(spec);
  big.codes = {9, 0, 0, 0};
  EXPECT_THROW(partial_cross_entropy(o, big), std::invalid_argument);
}

TEST(PartialCrossEntropy, GradientMatchesFiniteDifferences) {
  GridSpec spec;
  spec.dims = {3, 2, 2};
  LogitVolume o = random_logits(spec, 4, 7);
  LabelGrid s(spec);
  CounterRng rng(8, RngStream::scene_objects);
  for (auto& code : s.codes) {
    int roll = rng.next_int(0, 5);
    code = roll <= 2 ? static_cast<std::uint16_t>(roll + 1)
                     : (roll == 3 ? kUnlabeled : kEmpty);
  }
  s.codes[0] = 1;  // at least one annotated voxel
  for (CeReduction red : {CeReduction::mean, CeReduction::sum}) {
    auto f = flatten_loss(o, [s, red](const LogitVolume& v) {
      return partial_cross_entropy(v, s, red);
    });
    GradCheckReport rep = gradcheck(f, o.values, 1e-5);
    EXPECT_LT(rep.max_rel_error, 1e-7);
  }
}

TEST(FrequencyClassWeights, MatchesFormula) {
  GridSpec spec;
  spec.dims = {5, 1, 1};
  LabelGrid labels(spec);
  labels.codes = {0, 0, 1, 1, 255};
  std::vector<double> w = frequency_class_weights(labels, 2);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_DOUBLE_EQ(w[0], 1.0 / std::log(1.02 + 0.5));
  EXPECT_DOUBLE_EQ(w[1], 1.0 / std::log(1.02 + 0.5));
  EXPECT_DOUBLE_EQ(w[2], 1.0 / std::log(1.02));
  // Rare classes weigh more.
  EXPECT_GT(w[2], w[0]);

  LabelGrid ignored(spec);
  for (auto& c : ignored.codes) c = kUnlabeled;
  EXPECT_THROW(frequency_class_weights(ignored, 2), std::invalid_argument);
}

TEST(WeightedCrossEntropy, HandCaseAndZeroMass) {
  GridSpec spec;
  spec.dims = {2, 1, 1};
  LogitVolume o(spec, 2);
  LabelGrid y(spec);
  y.codes = {1, 255};
  std::vector<double> w = {0.5, 2.0};
  LossResult r = weighted_cross_entropy(o, y, w);
  // Single live voxel with uniform logits: -log(0.5), weight cancels.
  EXPECT_DOUBLE_EQ(r.value, std::log(2.0));
  EXPECT_NEAR(r.grad[0], 0.5, 1e-15);
  EXPECT_NEAR(r.grad[1], -0.5, 1e-15);
  EXPECT_EQ(r.grad[2], 0.0);
  EXPECT_EQ(r.grad[3], 0.0);

  std::vector<double> zero = {0.0, 0.0};
  LossResult z = weighted_cross_entropy(o, y, zero);
  EXPECT_EQ(z.value, 0.0);
  for (double g : z.grad) EXPECT_EQ(g, 0.0);

  std::vector<double> short_w = {1.0};
  EXPECT_THROW(weighted_cross_entropy(o, y, short_w), std::invalid_argument);
}

TEST(WeightedCrossEntropy, WeightsScaleClassContributions) {
  GridSpec spec;
  spec.dims = {2, 1, 1};
  LogitVolume o = random_logits(spec, 3, 3);
  LabelGrid y(spec);
  y.codes = {0, 2};
  // Oracle: recompute from per-voxel softmax probabilities.
  std::vector<double> w = {0.25, 1.0, 4.0};
  auto p0 = softmax_probs(std::span<const double>(o.at(0), 3));
  auto p1 = softmax_probs(std::span<const double>(o.at(1), 3));
  double want =
      (-0.25 * std::log(p0[0]) - 4.0 * std::log(p1[2])) / (0.25 + 4.0);
  LossResult r = weighted_cross_entropy(o, y, w);
  EXPECT_NEAR(r.value, want, 1e-12);
}

TEST(WeightedCrossEntropy, GradientMatchesFiniteDifferences) {
  GridSpec spec;
  spec.dims = {3, 2, 2};
  LogitVolume o = random_logits(spec, 4, 9);
  LabelGrid y(spec);
  CounterRng rng(10, RngStream::scene_objects);
  for (auto& code : y.codes) {
    int roll = rng.next_int(0, 4);
    code = roll <= 3 ? static_cast<std::uint16_t>(roll) : kUnlabeled;
  }
  std::vector<double> w = {0.3, 1.0, 2.5, 7.0};
  auto f = flatten_loss(o, [y, w](const LogitVolume& v) {
    return weighted_cross_entropy(v, y, w);
  });
  GradCheckReport rep = gradcheck(f, o.values, 1e-5);
  EXPECT_LT(rep.max_rel_error, 1e-7);
}

TEST(GeoAffinity, SymmetricHandCase) {
  GridSpec spec;
  spec.dims = {2, 1, 1};
  LogitVolume o(spec, 2);
  BoolGrid g(spec);
  g.values = {1, 0};
  LossResult r = scene_class_affinity_geo(o, g);
  // q = 0.5 everywhere: precision = recall = specificity = 0.5.
  EXPECT_DOUBLE_EQ(r.value, std::log(2.0));
  EXPECT_NEAR(r.grad[0], 0.25, 1e-15);
  EXPECT_NEAR(r.grad[1], -0.25, 1e-15);
  EXPECT_NEAR(r.grad[2], -0.25, 1e-15);
  EXPECT_NEAR(r.grad[3], 0.25, 1e-15);
}

TEST(GeoAffinity, PerfectPredictionApproachesZero) {
  GridSpec spec;
  spec.dims = {4, 2, 1};
  LogitVolume o(spec, 3);
  BoolGrid g(spec);
  for (std::size_t f = 0; f < g.values.size(); ++f) {
    g.values[f] = f % 2;
    double* l = o.at(f);
    l[0] = g.values[f] ? -20.0 : 20.0;
    l[1] = g.values[f] ? 20.0 : -20.0;
    l[2] = -20.0;
  }
  LossResult r = scene_class_affinity_geo(o, g);
  EXPECT_NEAR(r.value, 0.0, 1e-8);
}

TEST(GeoAffinity, ValueMatchesDefinitionOnRandomInput) {
  GridSpec spec;
  spec.dims = {4, 3, 2};
  LogitVolume o = random_logits(spec, 3, 13);
  BoolGrid g(spec);
  CounterRng rng(14, RngStream::scene_objects);
  for (auto& v : g.values) v = rng.next_unit() < 0.4;
  g.values[0] = 1;
  g.values[1] = 0;

  double sq = 0, sgq = 0, snq = 0;
  std::size_t nocc = 0, nempty = 0;
  for (std::size_t f = 0; f < g.values.size(); ++f) {
    auto p = softmax_probs(std::span<const double>(o.at(f), 3));
    double q = 1.0 - p[0];
    sq += q;
    if (g.values[f]) {
      sgq += q;
      ++nocc;
    } else {
      snq += 1.0 - q;
      ++nempty;
    }
  }
  double want = -(std::log(sgq / sq) + std::log(sgq / nocc) +
                  std::log(snq / nempty)) /
                3.0;
  LossResult r = scene_class_affinity_geo(o, g);
  EXPECT_NEAR(r.value, want, 1e-12);
}

TEST(GeoAffinity, DegenerateTargetsThrow) {
  GridSpec spec;
  spec.dims = {2, 1, 1};
  LogitVolume o(spec, 2);
  BoolGrid all(spec, true);
  EXPECT_THROW(scene_class_affinity_geo(o, all), NumericalError);
  BoolGrid none(spec, false);
  EXPECT_THROW(scene_class_affinity_geo(o, none), NumericalError);
}

TEST(GeoAffinity, GradientMatchesFiniteDifferences) {
  GridSpec spec;
  spec.dims = {3, 2, 2};
  LogitVolume o = random_logits(spec, 4, 15);
  BoolGrid g(spec);
  CounterRng rng(16, RngStream::scene_objects);
  for (auto& v : g.values) v = rng.next_unit() < 0.5;
  g.values[0] = 1;
  g.values[1] = 0;
  auto f = flatten_loss(o, [g](const LogitVolume& v) {
    return scene_class_affinity_geo(v, g);
  });
  GradCheckReport rep = gradcheck(f, o.values, 1e-5);
  EXPECT_LT(rep.max_rel_error, 1e-7);
}

TEST(GradCheck, CatchesWrongGradients) {
  auto good = [](std::span<const double> x, std::span<double> g) {
    double v = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      v += (i + 1) * x[i] * x[i];
      if (!g.empty()) g[i] = 2.0 * (i + 1) * x[i];
    }
    return v;
  };
  auto bad = [&](std::span<const double> x, std::span<double> g) {
    double v = good(x, g);
    if (!g.empty()) g[0] += 0.5;
    return v;
  };
  std::vector<double> x = {0.3, -0.7, 1.1};
  EXPECT_LT(gradcheck(good, x).max_rel_error, 1e-9);
  EXPECT_GT(gradcheck(bad, x).max_rel_error, 0.1);
  EXPECT_THROW(gradcheck(good, x, -1.0), std::invalid_argument);
}

}  // namespace
}  // namespace scribvox
