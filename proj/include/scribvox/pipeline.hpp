#pragma once

#include <map>
#include <string>
#include <vector>

#include "scribvox/config.hpp"
#include "scribvox/distill.hpp"
#include "scribvox/grid.hpp"
#include "scribvox/io.hpp"
#include "scribvox/losses.hpp"
#include "scribvox/metrics.hpp"
#include "scribvox/model.hpp"
#include "scribvox/scene.hpp"

namespace scribvox {

namespace detail {
// Sub-seed salts; every derived stream hangs off cfg.seed through these.
inline constexpr std::uint64_t kSaltScribbles = 1;
inline constexpr std::uint64_t kSaltCorruption = 2;
inline constexpr std::uint64_t kSaltDeanInit = 3;
inline constexpr std::uint64_t kSaltTeacherInit = 4;
inline constexpr std::uint64_t kSaltStudentInit = 5;
}  // namespace detail

// One synthetic benchmark instance: the truth volume with hints, the sparse
// annotation derived from it, and the two geometry views. Offline stages see
// the clean occupancy; the online student sees the corrupted one.
struct BenchmarkScene {
  Scene scene;
  LabelGrid scribbles;
  BoolGrid clean_geometry;
  BoolGrid student_geometry;
};

// Drop severity grows with range: shell r of R keeps drop_rate * (2r+1)/R,
// so the configured rate is the middle-shell rate and the far shell loses
// the most geometry, the way depth estimates degrade with distance.
inline BoolGrid corrupt_by_range(const BoolGrid& clean,
                                 const RangePartition& partition,
                                 double drop_rate, double add_rate,
                                 std::uint64_t seed) {
  const int shells = partition.shell_count();
  BoolGrid out(clean.spec);
  for (int r = 0; r < shells; ++r) {
    double factor = (2.0 * r + 1.0) / shells;
    BoolGrid layer =
        corrupt_geometry(clean, std::min(1.0, drop_rate * factor), add_rate,
                         derive_seed(seed, static_cast<std::uint64_t>(r)));
    BoolGrid mask = shell_mask(partition, clean.spec, r + 1);
    for (std::size_t f = 0; f < out.values.size(); ++f)
      if (mask.values[f]) out.values[f] = layer.values[f];
  }
  return out;
}

inline BenchmarkScene make_benchmark_scene(const TrainConfig& cfg) {
  cfg.validate();
  BenchmarkScene b;
  b.scene = gen_scene(cfg.scene);
  b.scribbles = scribblize(b.scene.truth, cfg.scribble_rate,
                           derive_seed(cfg.seed, detail::kSaltScribbles));
  b.clean_geometry = occupancy_of(b.scene.truth);
  b.student_geometry =
      corrupt_by_range(b.clean_geometry, cfg.partition, cfg.drop_rate,
                       cfg.add_rate,
                       derive_seed(cfg.seed, detail::kSaltCorruption));
  return b;
}

// Argmax over all channels, empty class included.
inline LabelGrid predict_labels(const LogitVolume& logits) {
  LabelGrid out(logits.spec);
  for (std::size_t f = 0; f < out.codes.size(); ++f) {
    const double* l = logits.at(f);
    int best = 0;
    for (int c = 1; c < logits.channels; ++c)
      if (l[c] > l[best]) best = c;
    out.codes[f] = static_cast<std::uint16_t>(best);
  }
  return out;
}

struct DeanResult {
  ToyModel model;
  std::vector<double> loss_history;
  LabelGrid pseudo;
};

// Offline stage one: complete geometry in, no hints, sparse-annotation cross
// entropy only. The pseudo volume copies the input occupancy verbatim and
// fills every occupied voxel with the argmax over semantic channels, so its
// derived geometry matches the input exactly.
inline DeanResult train_dean(const TrainConfig& cfg,
                             const BenchmarkScene& bench) {
  cfg.validate();
  const int k = cfg.scene.class_count;
  FeatureVolume feats = build_features(bench.clean_geometry, nullptr, k);
  ToyModel model =
      ToyModel::init(feats.width, cfg.hidden_units, k + 1,
                     derive_seed(cfg.seed, detail::kSaltDeanInit));
  std::vector<double> history;
  history.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    ForwardResult fwd = forward(model, feats);
    LossResult ce = partial_cross_entropy(fwd.logits, bench.scribbles,
                                          cfg.partial_ce_reduction);
    history.push_back(ce.value);
    ModelGrads g = backward(model, feats, fwd, ce.grad);
    apply_sgd(model, g, cfg.step_size);
  }

  ForwardResult fwd = forward(model, feats);
  LabelGrid pseudo(bench.clean_geometry.spec);
  for (std::size_t f = 0; f < pseudo.codes.size(); ++f) {
    if (!bench.clean_geometry.values[f]) continue;
    const double* l = fwd.logits.at(f);
    int best = 1;
    for (int c = 2; c <= k; ++c)
      if (l[c] > l[best]) best = c;
    pseudo.codes[f] = static_cast<std::uint16_t>(best);
  }
  return {std::move(model), std::move(history), std::move(pseudo)};
}

struct TeacherResult {
  ToyModel model;
  std::vector<double> loss_history;
};

// Offline stage two: complete geometry plus class hints, trained with the
// sparse cross entropy and the occupancy affinity term.
inline TeacherResult train_teacher(const TrainConfig& cfg,
                                   const BenchmarkScene& bench) {
  cfg.validate();
  const int k = cfg.scene.class_count;
  FeatureVolume feats =
      build_features(bench.clean_geometry, &bench.scene.hints, k);
  ToyModel model =
      ToyModel::init(feats.width, cfg.hidden_units, k + 1,
                     derive_seed(cfg.seed, detail::kSaltTeacherInit));
  std::vector<double> history;
  history.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    ForwardResult fwd = forward(model, feats);
    LossResult ce = partial_cross_entropy(fwd.logits, bench.scribbles,
                                          cfg.partial_ce_reduction);
    LossResult geo = scene_class_affinity_geo(fwd.logits, bench.clean_geometry);
    history.push_back(ce.value + geo.value);
    for (std::size_t i = 0; i < ce.grad.size(); ++i) ce.grad[i] += geo.grad[i];
    ModelGrads g = backward(model, feats, fwd, ce.grad);
    apply_sgd(model, g, cfg.step_size);
  }
  return {std::move(model), std::move(history)};
}

// Frozen teacher outputs the student distills against: per disjoint shell,
// the class-summary matrix and the local affinity map, plus the cached
// forward volumes.
struct TeacherCaches {
  std::vector<BoolGrid> shells;
  std::vector<GslMatrix> gsl;
  std::vector<AffinityMap> affinity;
  LogitVolume logits;
  FeatureVolume hidden;
};

inline TeacherCaches build_teacher_caches(const TrainConfig& cfg,
                                          const BenchmarkScene& bench,
                                          const ToyModel& teacher) {
  cfg.validate();
  const int k = cfg.scene.class_count;
  FeatureVolume feats =
      build_features(bench.clean_geometry, &bench.scene.hints, k);
  ForwardResult fwd = forward(teacher, feats);

  TeacherCaches caches;
  const GridSpec& spec = bench.clean_geometry.spec;
  for (std::size_t r = 1; r <= cfg.partition.shell_count(); ++r) {
    BoolGrid shell = shell_mask(cfg.partition, spec, r);
    caches.gsl.push_back(
        global_semantic_logits(fwd.logits, bench.scribbles, shell));
    caches.affinity.push_back(
        local_semantic_affinity(fwd.logits, caches.gsl.back(), shell));
    caches.shells.push_back(std::move(shell));
  }
  caches.logits = std::move(fwd.logits);
  caches.hidden = std::move(fwd.hidden);
  return caches;
}

struct StudentResult {
  ToyModel model;
  std::vector<double> loss_history;
  LabelGrid prediction;
  RangeReport report;
};

namespace detail {

inline DistillWeights effective_distill_weights(const TrainConfig& cfg) {
  DistillWeights w = cfg.distill;
  if (!cfg.toggles.range_guided) {
    double mean = 0.0;
    for (double v : w.range_weights) mean += v;
    mean /= static_cast<double>(w.range_weights.size());
    std::fill(w.range_weights.begin(), w.range_weights.end(), mean);
  }
  return w;
}

inline void axpy(std::vector<double>& acc, double a,
                 std::span<const double> x) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += a * x[i];
}

}  // namespace detail

// One evaluation of the full student objective: supervised term, occupancy
// affinity term, and the composed transfer terms, with the upstream
// gradients on the logits and (when feature transfer is on) the hidden
// activations. Shared between the training loop and the gradient
// certification harness so both see the same composition.
struct StudentLoss {
  double value = 0.0;
  std::vector<double> dlogits;
  std::vector<double> dhidden;
};

inline StudentLoss student_loss(const TrainConfig& cfg,
                                const BenchmarkScene& bench,
                                const TeacherCaches* caches,
                                const LabelGrid& sup,
                                std::span<const double> weights,
                                const ForwardResult& fwd) {
  const StudentToggles& t = cfg.toggles;
  const std::size_t shells = cfg.partition.shell_count();

  LossResult sem = weighted_cross_entropy(fwd.logits, sup, weights);
  LossResult geo = scene_class_affinity_geo(fwd.logits, bench.clean_geometry);

  StudentLoss out;
  out.dlogits = std::move(sem.grad);
  detail::axpy(out.dlogits, 1.0, geo.grad);

  double distill_value = 0.0;
  if (t.distill) {
    DistillWeights w_eff = detail::effective_distill_weights(cfg);
    std::vector<double> global_terms(shells, 0.0), local_terms(shells, 0.0);
    for (std::size_t r = 0; r < shells; ++r) {
      double wr = w_eff.total_weight * w_eff.range_weights[r];
      GslMatrix gsl_s = global_semantic_logits(fwd.logits, bench.scribbles,
                                               caches->shells[r]);
      if (t.global_on) {
        GlobalRelationLoss g = global_relation_loss(
            fwd.logits, gsl_s, caches->gsl[r], w_eff.alpha, w_eff.beta);
        global_terms[r] = g.value;
        detail::axpy(out.dlogits, wr, g.grad);
      }
      if (t.local_on) {
        AffinityMap a_s =
            local_semantic_affinity(fwd.logits, gsl_s, caches->shells[r]);
        LossResult l =
            local_affinity_loss(fwd.logits, gsl_s, a_s, caches->affinity[r]);
        local_terms[r] = l.value;
        detail::axpy(out.dlogits, wr, l.grad);
      }
    }
    double feature_term = 0.0;
    if (t.feature_on) {
      LossResult mse = feature_mse(fwd.hidden.values, caches->hidden.values);
      feature_term = mse.value;
      out.dhidden = std::move(mse.grad);
      double scale = w_eff.total_weight * w_eff.feature_weight;
      for (double& v : out.dhidden) v *= scale;
    }
    distill_value =
        w_eff.total_weight *
        compose_distill(feature_term, global_terms, local_terms, w_eff);
  }
  out.value = sem.value + geo.value + distill_value;
  return out;
}

// Online stage: corrupted geometry and hints in, supervised by the dean's
// pseudo labels (or raw scribbles), the occupancy affinity term against the
// clean geometry, and the per-shell transfer terms against the frozen
// teacher. pseudo may be null only when the pseudo toggle is off; caches may
// be null only when distillation is off.
inline StudentResult train_student(const TrainConfig& cfg,
                                   const BenchmarkScene& bench,
                                   const LabelGrid* pseudo,
                                   const TeacherCaches* caches) {
  cfg.validate();
  const StudentToggles& t = cfg.toggles;
  if (t.use_pseudo && !pseudo)
    throw std::invalid_argument("train_student: pseudo labels required");
  if (t.distill && !caches)
    throw std::invalid_argument("train_student: teacher caches required");

  const int k = cfg.scene.class_count;
  FeatureVolume feats =
      build_features(bench.student_geometry, &bench.scene.hints, k);
  ToyModel model =
      ToyModel::init(feats.width, cfg.hidden_units, k + 1,
                     derive_seed(cfg.seed, detail::kSaltStudentInit));

  const LabelGrid& sup = t.use_pseudo ? *pseudo : bench.scribbles;
  std::vector<double> weights = frequency_class_weights(sup, k);

  std::vector<double> history;
  history.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    ForwardResult fwd = forward(model, feats);
    StudentLoss loss = student_loss(cfg, bench, caches, sup, weights, fwd);
    history.push_back(loss.value);
    ModelGrads g = backward(model, feats, fwd, loss.dlogits, loss.dhidden);
    apply_sgd(model, g, cfg.step_size);
  }

  ForwardResult fwd = forward(model, feats);
  StudentResult res;
  res.prediction = predict_labels(fwd.logits);
  res.report =
      range_report(res.prediction, bench.scene.truth, cfg.partition, k);
  res.model = std::move(model);
  res.loss_history = std::move(history);
  return res;
}

// ---------------------------------------------------------------------------
// Ablation table

namespace detail {

inline StudentToggles normalize_toggles(StudentToggles t) {
  if (t.distill && !t.global_on && !t.local_on && !t.feature_on)
    t.distill = false;
  if (!t.distill) {
    t.range_guided = false;
    t.global_on = t.local_on = t.feature_on = false;
  }
  return t;
}

inline std::string toggle_key(const StudentToggles& t) {
  std::string key;
  for (bool b : {t.use_pseudo, t.distill, t.range_guided, t.global_on,
                 t.local_on, t.feature_on})
    key += b ? '1' : '0';
  return key;
}

inline json toggles_to_json(const StudentToggles& t) {
  return json{{"use_pseudo", t.use_pseudo},   {"distill", t.distill},
              {"range_guided", t.range_guided}, {"global_on", t.global_on},
              {"local_on", t.local_on},       {"feature_on", t.feature_on}};
}

}  // namespace detail

// Runs the pseudo/transfer/range grid plus the leave-one-out rows over
// n_seeds seeds. The dean, the teacher, and any student whose normalized
// toggles repeat are trained once per seed and shared across rows.
inline json ablation_suite(const TrainConfig& base, int n_seeds) {
  base.validate();
  if (n_seeds < 1)
    throw std::invalid_argument("ablation_suite: n_seeds must be >= 1");

  struct Row {
    const char* name;
    StudentToggles t;
  };
  auto toggles = [](bool pseudo, bool distill, bool range, bool g, bool l,
                    bool f) {
    StudentToggles t;
    t.use_pseudo = pseudo;
    t.distill = distill;
    t.range_guided = range;
    t.global_on = g;
    t.local_on = l;
    t.feature_on = f;
    return t;
  };
  const Row rows[] = {
      {"scribbles_baseline", toggles(false, false, false, false, false, false)},
      {"scribbles_distill_uniform", toggles(false, true, false, true, true, true)},
      {"scribbles_distill_range", toggles(false, true, true, true, true, true)},
      {"pseudo_only", toggles(true, false, false, false, false, false)},
      {"pseudo_distill_uniform", toggles(true, true, false, true, true, true)},
      {"pseudo_distill_range", toggles(true, true, true, true, true, true)},
      {"no_global_distill", toggles(true, true, true, false, true, true)},
      {"no_local_distill", toggles(true, true, true, true, false, true)},
      {"no_feature_distill", toggles(true, true, true, true, true, false)},
      {"no_range_info", toggles(true, true, false, true, true, true)},
  };
  constexpr std::size_t n_rows = std::size(rows);

  struct Cell {
    double miou = 0.0;
    double iou = 0.0;
  };
  std::vector<std::vector<Cell>> results(n_rows);
  std::vector<std::uint64_t> seeds;

  for (int s = 0; s < n_seeds; ++s) {
    TrainConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(s);
    cfg.scene.seed = base.scene.seed + static_cast<std::uint64_t>(s);
    seeds.push_back(cfg.seed);

    BenchmarkScene bench = make_benchmark_scene(cfg);
    DeanResult dean = train_dean(cfg, bench);
    TeacherResult teacher = train_teacher(cfg, bench);
    TeacherCaches caches = build_teacher_caches(cfg, bench, teacher.model);

    std::map<std::string, Cell> cache;
    for (std::size_t r = 0; r < n_rows; ++r) {
      StudentToggles norm = detail::normalize_toggles(rows[r].t);
      std::string key = detail::toggle_key(norm);
      auto it = cache.find(key);
      if (it == cache.end()) {
        TrainConfig run = cfg;
        run.toggles = norm;
        StudentResult st =
            train_student(run, bench, norm.use_pseudo ? &dean.pseudo : nullptr,
                          norm.distill ? &caches : nullptr);
        const RangeMetrics& full = st.report.ranges.back();
        it = cache.emplace(key, Cell{full.miou, full.iou}).first;
      }
      results[r].push_back(it->second);
    }
  }

  json out;
  out["class_count"] = base.scene.class_count;
  out["seeds"] = seeds;
  out["steps"] = base.steps;
  out["rows"] = json::array();
  for (std::size_t r = 0; r < n_rows; ++r) {
    TrainConfig row_cfg = base;
    row_cfg.toggles = detail::normalize_toggles(rows[r].t);
    DistillWeights w = detail::effective_distill_weights(row_cfg);
    json per_seed = json::array();
    double sum_miou = 0.0, sum_iou = 0.0;
    for (int s = 0; s < n_seeds; ++s) {
      const Cell& c = results[r][s];
      per_seed.push_back(
          {{"seed", seeds[s]}, {"miou", c.miou}, {"iou", c.iou}});
      sum_miou += c.miou;
      sum_iou += c.iou;
    }
    out["rows"].push_back(
        {{"name", rows[r].name},
         {"toggles", detail::toggles_to_json(row_cfg.toggles)},
         {"range_weights",
          row_cfg.toggles.distill ? json(w.range_weights) : json::array()},
         {"per_seed", per_seed},
         {"mean_miou", sum_miou / n_seeds},
         {"mean_iou", sum_iou / n_seeds}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model serialization

inline json model_to_json(const ToyModel& m) {
  return json{{"f_in", m.f_in},   {"f_hidden", m.f_hidden},
              {"c_total", m.c_total}, {"w1", m.w1},
              {"b1", m.b1},       {"w2", m.w2},
              {"b2", m.b2}};
}

inline ToyModel model_from_json(const json& j) {
  ToyModel m;
  try {
    m.f_in = j.at("f_in").get<int>();
    m.f_hidden = j.at("f_hidden").get<int>();
    m.c_total = j.at("c_total").get<int>();
    m.w1 = j.at("w1").get<std::vector<double>>();
    m.b1 = j.at("b1").get<std::vector<double>>();
    m.w2 = j.at("w2").get<std::vector<double>>();
    m.b2 = j.at("b2").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  if (m.f_in < 1 || m.f_hidden < 1 || m.c_total < 2)
    throw FormatError("model: bad layer sizes");
  if (m.w1.size() != static_cast<std::size_t>(m.f_in) * m.f_hidden ||
      m.b1.size() != static_cast<std::size_t>(m.f_hidden) ||
      m.w2.size() != static_cast<std::size_t>(m.f_hidden) * m.c_total ||
      m.b2.size() != static_cast<std::size_t>(m.c_total))
    throw FormatError("model: parameter block sizes do not match layout");
  return m;
}

}  // namespace scribvox
