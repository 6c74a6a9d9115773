#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "scribvox/distill.hpp"
#include "scribvox/error.hpp"
#include "scribvox/grid.hpp"
#include "scribvox/io.hpp"
#include "scribvox/losses.hpp"
#include "scribvox/scene.hpp"

namespace scribvox {

using json = nlohmann::json;

struct StudentToggles {
  bool use_pseudo = true;    // dense pseudo labels instead of raw scribbles
  bool distill = true;       // any relation/feature transfer at all
  bool range_guided = true;  // per-shell weights; otherwise uniform mean
  bool global_on = true;
  bool local_on = true;
  bool feature_on = true;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  int steps = 160;
  double step_size = 0.05;
  int hidden_units = 16;
  SceneParams scene;
  double scribble_rate = 0.135;
  double drop_rate = 0.3;
  double add_rate = 0.02;
  DistillWeights distill;
  RangePartition partition;
  StudentToggles toggles;
  CeReduction partial_ce_reduction = CeReduction::mean;

  TrainConfig() {
    partition.thresholds = {1.6, 3.2, 12.8};
    partition.ego = {0.0, 0.0, 0.0};
  }

  void validate() const {
    scene.validate();
    distill.validate();
    partition.validate();
    if (steps < 0) throw std::invalid_argument("config: steps must be >= 0");
    if (!(step_size > 0.0) || !std::isfinite(step_size))
      throw std::invalid_argument("config: step_size must be positive");
    if (hidden_units < 1)
      throw std::invalid_argument("config: hidden_units must be >= 1");
    const std::pair<double, const char*> rates[] = {
        {scribble_rate, "scribble_rate"},
        {drop_rate, "drop_rate"},
        {add_rate, "add_rate"}};
    for (auto [v, name] : rates)
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument(std::string("config: ") + name +
                                    " must be in [0, 1]");
    if (distill.range_weights.size() != partition.shell_count())
      throw std::invalid_argument(
          "config: range_weights size must match partition shells");
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw FormatError("config: unknown key \"" + it.key() + "\" in " + where);
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: bad value for \"") + key + "\": " +
                      e.what());
  }
}

inline void maybe_vec3(const json& j, const char* key, Vec3& out) {
  if (!j.contains(key)) return;
  std::vector<double> v;
  maybe(j, key, v);
  if (v.size() != 3)
    throw FormatError(std::string("config: \"") + key +
                      "\" must have 3 entries");
  out = {v[0], v[1], v[2]};
}

inline ObjectKind object_kind_from_string(const std::string& s) {
  if (s == "box") return ObjectKind::box;
  if (s == "column") return ObjectKind::column;
  if (s == "blob") return ObjectKind::blob;
  throw FormatError("config: unknown object kind \"" + s + "\"");
}

inline const char* object_kind_name(ObjectKind k) {
  switch (k) {
    case ObjectKind::box: return "box";
    case ObjectKind::column: return "column";
    default: return "blob";
  }
}

}  // namespace detail

inline TrainConfig config_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("config: root must be a JSON object");
  detail::check_keys(j,
                     {"seed", "steps", "step_size", "hidden_units", "scene",
                      "scribble_rate", "drop_rate", "add_rate", "distill",
                      "partition", "toggles", "partial_ce_reduction"},
                     "root");
  TrainConfig cfg;
  detail::maybe(j, "seed", cfg.seed);
  detail::maybe(j, "steps", cfg.steps);
  detail::maybe(j, "step_size", cfg.step_size);
  detail::maybe(j, "hidden_units", cfg.hidden_units);
  detail::maybe(j, "scribble_rate", cfg.scribble_rate);
  detail::maybe(j, "drop_rate", cfg.drop_rate);
  detail::maybe(j, "add_rate", cfg.add_rate);

  if (j.contains("partial_ce_reduction")) {
    std::string s;
    detail::maybe(j, "partial_ce_reduction", s);
    if (s == "mean")
      cfg.partial_ce_reduction = CeReduction::mean;
    else if (s == "sum")
      cfg.partial_ce_reduction = CeReduction::sum;
    else
      throw FormatError("config: partial_ce_reduction must be mean or sum");
  }

  if (j.contains("scene")) {
    const json& s = j.at("scene");
    if (!s.is_object()) throw FormatError("config: scene must be an object");
    detail::check_keys(s,
                       {"seed", "dims", "voxel_size", "origin", "class_count",
                        "ground_class", "ground_height", "label_noise",
                        "objects"},
                       "scene");
    detail::maybe(s, "seed", cfg.scene.seed);
    if (s.contains("dims")) {
      std::vector<int> d;
      detail::maybe(s, "dims", d);
      if (d.size() != 3) throw FormatError("config: scene.dims needs 3 entries");
      cfg.scene.spec.dims = {d[0], d[1], d[2]};
    }
    detail::maybe(s, "voxel_size", cfg.scene.spec.voxel_size);
    detail::maybe_vec3(s, "origin", cfg.scene.spec.origin);
    detail::maybe(s, "class_count", cfg.scene.class_count);
    detail::maybe(s, "ground_class", cfg.scene.ground_class);
    detail::maybe(s, "ground_height", cfg.scene.ground_height);
    detail::maybe(s, "label_noise", cfg.scene.label_noise);
    if (s.contains("objects")) {
      const json& arr = s.at("objects");
      if (!arr.is_array())
        throw FormatError("config: scene.objects must be an array");
      cfg.scene.objects.clear();
      for (const json& o : arr) {
        if (!o.is_object())
          throw FormatError("config: scene.objects entries must be objects");
        detail::check_keys(
            o, {"kind", "class_id", "count", "min_size", "max_size"},
            "scene.objects");
        ObjectSpec os;
        std::string kind;
        detail::maybe(o, "kind", kind);
        if (kind.empty())
          throw FormatError("config: scene.objects entry needs a kind");
        os.kind = detail::object_kind_from_string(kind);
        detail::maybe(o, "class_id", os.class_id);
        detail::maybe(o, "count", os.count);
        auto size3 = [&](const char* key, Idx3& out) {
          if (!o.contains(key))
            throw FormatError(std::string("config: scene.objects entry needs ") +
                              key);
          std::vector<int> v;
          detail::maybe(o, key, v);
          if (v.size() != 3)
            throw FormatError(std::string("config: ") + key +
                              " needs 3 entries");
          out = {v[0], v[1], v[2]};
        };
        size3("min_size", os.min_size);
        size3("max_size", os.max_size);
        cfg.scene.objects.push_back(os);
      }
    }
  }

  if (j.contains("distill")) {
    const json& d = j.at("distill");
    if (!d.is_object()) throw FormatError("config: distill must be an object");
    detail::check_keys(d,
                       {"range_weights", "alpha", "beta", "feature_weight",
                        "total_weight"},
                       "distill");
    detail::maybe(d, "range_weights", cfg.distill.range_weights);
    detail::maybe(d, "alpha", cfg.distill.alpha);
    detail::maybe(d, "beta", cfg.distill.beta);
    detail::maybe(d, "feature_weight", cfg.distill.feature_weight);
    detail::maybe(d, "total_weight", cfg.distill.total_weight);
  }

  if (j.contains("partition")) {
    const json& p = j.at("partition");
    if (!p.is_object())
      throw FormatError("config: partition must be an object");
    detail::check_keys(p, {"thresholds", "ego"}, "partition");
    detail::maybe(p, "thresholds", cfg.partition.thresholds);
    detail::maybe_vec3(p, "ego", cfg.partition.ego);
  }

  if (j.contains("toggles")) {
    const json& t = j.at("toggles");
    if (!t.is_object()) throw FormatError("config: toggles must be an object");
    detail::check_keys(t,
                       {"use_pseudo", "distill", "range_guided", "global_on",
                        "local_on", "feature_on"},
                       "toggles");
    detail::maybe(t, "use_pseudo", cfg.toggles.use_pseudo);
    detail::maybe(t, "distill", cfg.toggles.distill);
    detail::maybe(t, "range_guided", cfg.toggles.range_guided);
    detail::maybe(t, "global_on", cfg.toggles.global_on);
    detail::maybe(t, "local_on", cfg.toggles.local_on);
    detail::maybe(t, "feature_on", cfg.toggles.feature_on);
  }

  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return cfg;
}

inline json to_json(const TrainConfig& cfg) {
  json objects = json::array();
  for (const ObjectSpec& o : cfg.scene.objects)
    objects.push_back(
        {{"kind", detail::object_kind_name(o.kind)},
         {"class_id", o.class_id},
         {"count", o.count},
         {"min_size", {o.min_size.x, o.min_size.y, o.min_size.z}},
         {"max_size", {o.max_size.x, o.max_size.y, o.max_size.z}}});
  return json{
      {"seed", cfg.seed},
      {"steps", cfg.steps},
      {"step_size", cfg.step_size},
      {"hidden_units", cfg.hidden_units},
      {"scribble_rate", cfg.scribble_rate},
      {"drop_rate", cfg.drop_rate},
      {"add_rate", cfg.add_rate},
      {"partial_ce_reduction",
       cfg.partial_ce_reduction == CeReduction::mean ? "mean" : "sum"},
      {"scene",
       {{"seed", cfg.scene.seed},
        {"dims",
         {cfg.scene.spec.dims.x, cfg.scene.spec.dims.y, cfg.scene.spec.dims.z}},
        {"voxel_size", cfg.scene.spec.voxel_size},
        {"origin",
         {cfg.scene.spec.origin.x, cfg.scene.spec.origin.y,
          cfg.scene.spec.origin.z}},
        {"class_count", cfg.scene.class_count},
        {"ground_class", cfg.scene.ground_class},
        {"ground_height", cfg.scene.ground_height},
        {"label_noise", cfg.scene.label_noise},
        {"objects", objects}}},
      {"distill",
       {{"range_weights", cfg.distill.range_weights},
        {"alpha", cfg.distill.alpha},
        {"beta", cfg.distill.beta},
        {"feature_weight", cfg.distill.feature_weight},
        {"total_weight", cfg.distill.total_weight}}},
      {"partition",
       {{"thresholds", cfg.partition.thresholds},
        {"ego",
         {cfg.partition.ego.x, cfg.partition.ego.y, cfg.partition.ego.z}}}},
      {"toggles",
       {{"use_pseudo", cfg.toggles.use_pseudo},
        {"distill", cfg.toggles.distill},
        {"range_guided", cfg.toggles.range_guided},
        {"global_on", cfg.toggles.global_on},
        {"local_on", cfg.toggles.local_on},
        {"feature_on", cfg.toggles.feature_on}}}};
}

inline TrainConfig load_config(const std::string& path) {
  return config_from_json(load_json(path));
}

}  // namespace scribvox
