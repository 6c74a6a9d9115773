#pragma once

#include <string>
#include <vector>

#include "scribvox/gradcheck.hpp"
#include "scribvox/pipeline.hpp"

namespace scribvox {

struct CertifyEntry {
  std::string name;
  GradCheckReport report;
};

struct CertifyReport {
  std::vector<CertifyEntry> entries;
  double threshold = 1e-4;

  bool passed() const {
    for (const CertifyEntry& e : entries)
      if (!(e.report.max_rel_error < threshold)) return false;
    return true;
  }
};

namespace detail {

inline LogitVolume random_logits(const GridSpec& spec, int channels,
                                 std::uint64_t seed) {
  LogitVolume o(spec, channels);
  CounterRng rng(seed, RngStream::model_init);
  for (double& v : o.values) v = rng.next_uniform(-2.0, 2.0);
  return o;
}

// Wraps a loss over a logit volume as a flat function for gradcheck.
template <typename Loss>
GradCheckReport check_logit_loss(const GridSpec& spec, int channels,
                                 std::uint64_t seed, double eps, Loss&& loss) {
  LogitVolume proto = random_logits(spec, channels, seed);
  auto f = [&](std::span<const double> x, std::span<double> grad) {
    LogitVolume o = proto;
    std::copy(x.begin(), x.end(), o.values.begin());
    LossResult res = loss(o);
    if (!grad.empty()) std::copy(res.grad.begin(), res.grad.end(), grad.begin());
    return res.value;
  };
  return gradcheck(f, proto.values, eps);
}

// The composite check trains nothing; it only needs a scene where every
// shell holds scribble members and the relu pre-activations sit clear of
// zero, so FD probes of size eps never cross a kink. Seeds are advanced
// deterministically until the margin holds.
inline TrainConfig certify_config() {
  TrainConfig cfg;
  cfg.scene.spec.dims = {6, 6, 4};
  cfg.scene.spec.voxel_size = 0.2;
  cfg.scene.spec.origin = {-0.6, -0.6, -0.2};
  cfg.scene.class_count = 4;
  cfg.scene.ground_class = 1;
  cfg.scene.ground_height = 1;
  cfg.scene.label_noise = 0.3;
  cfg.scene.objects = {
      {ObjectKind::box, 2, 3, {1, 1, 1}, {2, 2, 2}},
      {ObjectKind::column, 3, 3, {1, 1, 2}, {1, 1, 3}},
      {ObjectKind::blob, 4, 2, {1, 1, 1}, {2, 2, 1}},
  };
  cfg.scribble_rate = 0.5;
  cfg.drop_rate = 0.2;
  cfg.add_rate = 0.05;
  cfg.hidden_units = 8;
  cfg.partition.thresholds = {0.4, 0.8, 1.6};
  cfg.partition.ego = {0.0, 0.0, 0.0};
  return cfg;
}

inline double min_preactivation_margin(const ToyModel& m,
                                       const FeatureVolume& feats) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < feats.spec.voxel_count(); ++v) {
    const double* f = feats.at(v);
    for (int j = 0; j < m.f_hidden; ++j) {
      double pre = m.b1[j];
      for (int i = 0; i < m.f_in; ++i)
        pre += f[i] * m.w1[static_cast<std::size_t>(i) * m.f_hidden + j];
      margin = std::min(margin, std::abs(pre));
    }
  }
  return margin;
}

}  // namespace detail

// Finite-difference certification of every loss gradient and of the full
// composed objective through the model parameters. dims bounds the random
// volumes for the per-loss checks; the composite runs on its own 6x6x4
// scene.
inline CertifyReport run_gradient_certification(Idx3 dims, double eps = 1e-5) {
  GridSpec spec;
  spec.dims = dims;
  spec.voxel_size = 0.2;
  spec.origin = {0.0, 0.0, 0.0};
  spec.validate();
  const int k = 4;
  const int channels = k + 1;
  const std::size_t n = spec.voxel_count();

  CertifyReport rep;

  // Mixed annotation: empty, every class, unlabeled.
  LabelGrid labels(spec);
  for (std::size_t f = 0; f < n; ++f) {
    std::uint64_t d = hash_draw(11, RngStream::scene_objects, f);
    std::uint16_t code = static_cast<std::uint16_t>(d % (k + 2));
    labels.codes[f] = code == k + 1 ? kUnlabeled : code;
  }
  labels.codes[0] = 1;  // at least one annotated voxel

  rep.entries.push_back(
      {"partial_cross_entropy",
       detail::check_logit_loss(spec, channels, 101, eps, [&](const LogitVolume& o) {
         return partial_cross_entropy(o, labels);
       })});

  std::vector<double> weights = frequency_class_weights(labels, k);
  rep.entries.push_back(
      {"weighted_cross_entropy",
       detail::check_logit_loss(spec, channels, 102, eps, [&](const LogitVolume& o) {
         return weighted_cross_entropy(o, labels, weights);
       })});

  BoolGrid occ(spec);
  for (std::size_t f = 0; f < n; ++f)
    occ.values[f] = hash_draw(12, RngStream::geometry_add, f) % 3 == 0;
  occ.values[0] = true;
  occ.values[1] = false;
  rep.entries.push_back(
      {"scene_class_affinity_geo",
       detail::check_logit_loss(spec, channels, 103, eps, [&](const LogitVolume& o) {
         return scene_class_affinity_geo(o, occ);
       })});

  // Relation losses: the student chain runs through its own summary rows.
  BoolGrid shell(spec);
  LabelGrid members(spec);
  for (std::size_t f = 0; f < n; ++f) {
    shell.values[f] = f % 2 == 0;
    members.codes[f] = static_cast<std::uint16_t>(1 + f % k);
  }
  LogitVolume teacher = detail::random_logits(spec, channels, 104);
  GslMatrix gsl_t = global_semantic_logits(teacher, members, shell);
  AffinityMap aff_t = local_semantic_affinity(teacher, gsl_t, shell);

  rep.entries.push_back(
      {"global_relation_loss",
       detail::check_logit_loss(spec, channels, 105, eps, [&](const LogitVolume& o) {
         GslMatrix gsl_s = global_semantic_logits(o, members, shell);
         GlobalRelationLoss g =
             global_relation_loss(o, gsl_s, gsl_t, 2.625, 0.375);
         return LossResult{g.value, std::move(g.grad)};
       })});

  rep.entries.push_back(
      {"local_affinity_loss",
       detail::check_logit_loss(spec, channels, 106, eps, [&](const LogitVolume& o) {
         GslMatrix gsl_s = global_semantic_logits(o, members, shell);
         AffinityMap a_s = local_semantic_affinity(o, gsl_s, shell);
         return local_affinity_loss(o, gsl_s, a_s, aff_t);
       })});

  {
    CounterRng rng(107, RngStream::model_init);
    std::vector<double> target(n * 3);
    std::vector<double> x0(n * 3);
    for (double& v : target) v = rng.next_uniform(-1.0, 1.0);
    for (double& v : x0) v = rng.next_uniform(-1.0, 1.0);
    auto f = [&](std::span<const double> x, std::span<double> grad) {
      LossResult res = feature_mse(x, target);
      if (!grad.empty())
        std::copy(res.grad.begin(), res.grad.end(), grad.begin());
      return res.value;
    };
    rep.entries.push_back({"feature_mse", gradcheck(f, x0, eps)});
  }

  // Full composed objective through the model parameters.
  {
    TrainConfig cfg = detail::certify_config();
    BenchmarkScene bench = make_benchmark_scene(cfg);
    FeatureVolume feats =
        build_features(bench.student_geometry, &bench.scene.hints,
                       cfg.scene.class_count);
    ToyModel teacher_model =
        ToyModel::init(feats.width, cfg.hidden_units,
                       cfg.scene.class_count + 1, derive_seed(cfg.seed, 40));
    TeacherCaches caches = build_teacher_caches(cfg, bench, teacher_model);

    // Any dense semantic grid exercises the supervised path; truth is handy.
    const LabelGrid& pseudo = bench.scene.truth;
    std::vector<double> sup_weights =
        frequency_class_weights(pseudo, cfg.scene.class_count);

    ToyModel proto;
    for (std::uint64_t attempt = 0;; ++attempt) {
      proto = ToyModel::init(feats.width, cfg.hidden_units,
                             cfg.scene.class_count + 1,
                             derive_seed(cfg.seed, 50 + attempt));
      if (detail::min_preactivation_margin(proto, feats) > 50.0 * eps) break;
    }

    auto f = [&](std::span<const double> x, std::span<double> grad) {
      ToyModel m = proto;
      m.unflatten(x);
      ForwardResult fwd = forward(m, feats);
      StudentLoss loss =
          student_loss(cfg, bench, &caches, pseudo, sup_weights, fwd);
      if (!grad.empty()) {
        ModelGrads g = backward(m, feats, fwd, loss.dlogits, loss.dhidden);
        std::vector<double> flat = g.flatten();
        std::copy(flat.begin(), flat.end(), grad.begin());
      }
      return loss.value;
    };
    rep.entries.push_back({"composite_objective", gradcheck(f, proto.flatten(), eps)});
  }

  return rep;
}

}  // namespace scribvox
