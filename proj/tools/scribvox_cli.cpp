#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scribvox/certify.hpp"
#include "scribvox/config.hpp"
#include "scribvox/io.hpp"
#include "scribvox/labeling.hpp"
#include "scribvox/metrics.hpp"
#include "scribvox/pipeline.hpp"

namespace sv = scribvox;
namespace fs = std::filesystem;
using sv::json;

namespace {

int infer_class_count(std::initializer_list<const sv::LabelGrid*> grids) {
  std::uint16_t k = 1;
  for (const sv::LabelGrid* g : grids)
    for (std::uint16_t code : g->codes)
      if (code != sv::kUnlabeled && code > k) k = code;
  return k;
}

std::vector<fs::path> list_sorted(const fs::path& dir, const char* ext) {
  if (!fs::is_directory(dir))
    throw sv::FormatError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ext)
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  if (out.empty())
    throw sv::FormatError("no " + std::string(ext) + " files in " +
                          dir.string());
  return out;
}

sv::LabelGrid grid_from_bool(const sv::BoolGrid& g) {
  sv::LabelGrid out(g.spec);
  for (std::size_t f = 0; f < g.values.size(); ++f)
    out.codes[f] = g.values[f] ? 1 : 0;
  return out;
}

void print_range_summary(const sv::RangeReport& rep) {
  for (const sv::RangeMetrics& r : rep.ranges) {
    std::printf("range <= %.1f m: IoU %.2f, mIoU %.2f", r.threshold, r.iou,
                r.miou);
    if (r.ssfs) std::printf(", ratio vs reference %.2f%%", *r.ssfs);
    std::printf("\n");
  }
  for (const std::string& w : rep.warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());
}

void cmd_synth(const std::string& config_path, const std::string& out_path) {
  sv::TrainConfig cfg = sv::load_config(config_path);
  sv::BenchmarkScene bench = sv::make_benchmark_scene(cfg);

  fs::path out(out_path);
  fs::path base = out.parent_path() / out.stem();
  if (out.parent_path() != fs::path() )
    fs::create_directories(out.parent_path());

  sv::save_grid(out, bench.scene.truth);
  sv::save_grid(fs::path(base) += "_scribbles.sscv", bench.scribbles);
  sv::save_grid(fs::path(base) += "_input.sscv",
                grid_from_bool(bench.student_geometry));
  sv::LabelGrid hints(bench.scene.truth.spec);
  hints.codes = bench.scene.hints;
  sv::save_grid(fs::path(base) += "_hints.sscv", hints);

  sv::LabelingStats stats =
      sv::labeling_stats(bench.scribbles, cfg.scene.class_count,
                         &bench.scene.truth);
  json summary = {
      {"truth", out.string()},
      {"scribbles", (fs::path(base) += "_scribbles.sscv").string()},
      {"input_geometry", (fs::path(base) += "_input.sscv").string()},
      {"hints", (fs::path(base) += "_hints.sscv").string()},
      {"placed_objects", bench.scene.placed_objects},
      {"skipped_objects", bench.scene.skipped_objects},
      {"scribble_stats", sv::to_json(stats)},
  };
  std::cout << summary.dump(2) << "\n";
}

void cmd_build_labels(const std::string& scans_dir,
                      const std::string& labels_dir,
                      const std::string& poses_path, std::size_t frame,
                      int window, const std::string& label_map_path,
                      int class_count, const std::string& out_path) {
  std::vector<fs::path> scan_files = list_sorted(scans_dir, ".bin");
  std::vector<fs::path> label_files = list_sorted(labels_dir, ".label");
  if (scan_files.size() != label_files.size())
    throw sv::FormatError("scan/label file count mismatch: " +
                          std::to_string(scan_files.size()) + " vs " +
                          std::to_string(label_files.size()));

  sv::LabelMap map;
  if (!label_map_path.empty())
    map = sv::LabelMap::parse(sv::read_file_text(label_map_path));

  std::vector<sv::LabeledPointCloud> scans;
  scans.reserve(scan_files.size());
  for (std::size_t i = 0; i < scan_files.size(); ++i) {
    sv::LabeledPointCloud pc = sv::read_scan(sv::read_file_bytes(scan_files[i]));
    pc.labels = sv::read_point_labels(sv::read_file_bytes(label_files[i]),
                                      pc.points.size(), map);
    scans.push_back(std::move(pc));
  }

  sv::PoseFile poses = sv::read_poses(sv::read_file_text(poses_path));
  for (const std::string& w : poses.warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());

  sv::AccumulationWindow win;
  win.n_future = window;
  sv::LabeledPointCloud merged =
      sv::accumulate_scans(scans, poses.poses, frame, win);

  sv::GridSpec spec;  // default lattice
  sv::LabelGrid grid = sv::majority_vote(merged, spec, class_count);
  sv::save_grid(out_path, grid);

  sv::LabelingStats stats = sv::labeling_stats(grid, class_count);
  std::cout << sv::to_json(stats).dump(2) << "\n";
}

void cmd_train_dean(const std::string& config_path,
                    const std::string& out_dir) {
  sv::TrainConfig cfg = sv::load_config(config_path);
  sv::BenchmarkScene bench = sv::make_benchmark_scene(cfg);
  sv::DeanResult dean = sv::train_dean(cfg, bench);

  fs::create_directories(out_dir);
  fs::path dir(out_dir);
  sv::save_json(dir / "dean_model.json", sv::model_to_json(dean.model));
  sv::save_grid(dir / "pseudo.sscv", dean.pseudo);

  sv::RangeReport rep = sv::range_report(dean.pseudo, bench.scene.truth,
                                         cfg.partition,
                                         cfg.scene.class_count);
  json report = {{"steps", cfg.steps},
                 {"loss_history", dean.loss_history},
                 {"pseudo_report", sv::to_json(rep)}};
  sv::save_json(dir / "dean_report.json", report);

  const sv::RangeMetrics& full = rep.ranges.back();
  std::printf("dean: %d steps, final loss %.4f, pseudo IoU %.2f, mIoU %.2f\n",
              cfg.steps,
              dean.loss_history.empty() ? 0.0 : dean.loss_history.back(),
              full.iou, full.miou);
}

void cmd_train_teacher(const std::string& config_path,
                       const std::string& out_dir) {
  sv::TrainConfig cfg = sv::load_config(config_path);
  sv::BenchmarkScene bench = sv::make_benchmark_scene(cfg);
  sv::TeacherResult teacher = sv::train_teacher(cfg, bench);

  fs::create_directories(out_dir);
  fs::path dir(out_dir);
  sv::save_json(dir / "teacher_model.json", sv::model_to_json(teacher.model));

  sv::FeatureVolume feats = sv::build_features(
      bench.clean_geometry, &bench.scene.hints, cfg.scene.class_count);
  sv::LabelGrid pred =
      sv::predict_labels(sv::forward(teacher.model, feats).logits);
  sv::RangeReport rep = sv::range_report(pred, bench.scene.truth,
                                         cfg.partition,
                                         cfg.scene.class_count);
  json report = {{"steps", cfg.steps},
                 {"loss_history", teacher.loss_history},
                 {"prediction_report", sv::to_json(rep)}};
  sv::save_json(dir / "teacher_report.json", report);

  const sv::RangeMetrics& full = rep.ranges.back();
  std::printf("teacher: %d steps, final loss %.4f, IoU %.2f, mIoU %.2f\n",
              cfg.steps,
              teacher.loss_history.empty() ? 0.0 : teacher.loss_history.back(),
              full.iou, full.miou);
}

void cmd_train_student(const std::string& config_path,
                       const std::string& pseudo_path,
                       const std::string& teacher_path,
                       const std::string& out_dir) {
  sv::TrainConfig cfg = sv::load_config(config_path);
  sv::BenchmarkScene bench = sv::make_benchmark_scene(cfg);

  sv::LabelGrid pseudo = sv::load_grid(pseudo_path);
  sv::require_same_lattice(pseudo.spec, bench.scene.truth.spec,
                           "train-student");

  sv::ToyModel teacher = sv::model_from_json(sv::load_json(teacher_path));
  const int k = cfg.scene.class_count;
  if (teacher.f_in != sv::feature_width(k) ||
      teacher.f_hidden != cfg.hidden_units || teacher.c_total != k + 1)
    throw std::invalid_argument(
        "train-student: teacher model shape does not match config");

  sv::TeacherCaches caches = sv::build_teacher_caches(cfg, bench, teacher);
  sv::StudentResult st = sv::train_student(cfg, bench, &pseudo, &caches);

  fs::create_directories(out_dir);
  fs::path dir(out_dir);
  sv::save_json(dir / "student_model.json", sv::model_to_json(st.model));
  sv::save_grid(dir / "prediction.sscv", st.prediction);
  sv::save_json(dir / "report.json", sv::to_json(st.report));
  sv::save_json(dir / "training_log.json",
                json{{"steps", cfg.steps}, {"loss_history", st.loss_history}});

  std::printf("student: %d steps, final loss %.4f\n", cfg.steps,
              st.loss_history.empty() ? 0.0 : st.loss_history.back());
  print_range_summary(st.report);
}

void cmd_eval(const std::string& pred_path, const std::string& gt_path,
              const std::string& reference_path, const std::string& out_path) {
  sv::LabelGrid pred = sv::load_grid(pred_path);
  sv::LabelGrid gt = sv::load_grid(gt_path);

  sv::RangeReport reference;
  bool have_ref = !reference_path.empty();
  if (have_ref)
    reference = sv::range_report_from_json(sv::load_json(reference_path));

  int k = have_ref ? reference.class_count
                   : infer_class_count({&pred, &gt});
  sv::RangePartition partition =
      have_ref ? reference.partition : sv::RangePartition{};

  sv::RangeReport rep = sv::range_report(pred, gt, partition, k,
                                         have_ref ? &reference : nullptr);
  sv::save_json(out_path, sv::to_json(rep));
  print_range_summary(rep);
}

void cmd_stats(const std::string& grid_path,
               const std::string& reference_path) {
  sv::LabelGrid grid = sv::load_grid(grid_path);
  sv::LabelGrid reference;
  bool have_ref = !reference_path.empty();
  if (have_ref) reference = sv::load_grid(reference_path);

  int k = have_ref ? infer_class_count({&grid, &reference})
                   : infer_class_count({&grid});
  sv::LabelingStats stats =
      sv::labeling_stats(grid, k, have_ref ? &reference : nullptr);
  std::cout << sv::to_json(stats).dump(2) << "\n";
}

int cmd_gradcheck(const std::vector<int>& volume, double eps) {
  if (volume.size() != 3)
    throw std::invalid_argument("gradcheck: --volume needs X,Y,Z");
  sv::CertifyReport rep = sv::run_gradient_certification(
      {volume[0], volume[1], volume[2]}, eps);
  for (const sv::CertifyEntry& e : rep.entries)
    std::printf("%-26s max rel err %.3e over %zu probes  [%s]\n",
                e.name.c_str(), e.report.max_rel_error, e.report.checked,
                e.report.max_rel_error < rep.threshold ? "ok" : "FAIL");
  if (!rep.passed()) {
    std::fprintf(stderr, "gradient certification failed (threshold %.0e)\n",
                 rep.threshold);
    return 3;
  }
  std::printf("all gradients certified below %.0e\n", rep.threshold);
  return 0;
}

void cmd_ablate(const std::string& config_path, int seeds,
                const std::string& out_path) {
  sv::TrainConfig cfg = sv::load_config(config_path);
  json table = sv::ablation_suite(cfg, seeds);
  sv::save_json(out_path, table);
  for (const json& row : table.at("rows"))
    std::printf("%-28s mIoU %6.2f  IoU %6.2f\n",
                row.at("name").get<std::string>().c_str(),
                row.at("mean_miou").get<double>(),
                row.at("mean_iou").get<double>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scribble-supervised scene completion workbench"};
  app.require_subcommand(1);
  int rc = 0;

  std::string config_path, out_path, out_dir;
  std::string scans_dir, labels_dir, poses_path, label_map_path;
  std::string pseudo_path, teacher_path, pred_path, gt_path, reference_path,
      grid_path;
  std::size_t frame = 0;
  int window = 70;
  int class_count = 19;
  int seeds = 5;
  std::vector<int> volume = {6, 6, 4};
  double eps = 1e-5;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene");
  synth->add_option("--config", config_path, "config JSON")->required();
  synth->add_option("--out", out_path, "output .sscv path")->required();
  synth->callback([&] { cmd_synth(config_path, out_path); });

  CLI::App* build = app.add_subcommand(
      "build-labels", "accumulate scans and vote voxel labels");
  build->add_option("--scans", scans_dir, "directory of .bin scans")
      ->required();
  build->add_option("--labels", labels_dir, "directory of .label files")
      ->required();
  build->add_option("--poses", poses_path, "pose file")->required();
  build->add_option("--frame", frame, "reference frame index")->required();
  build->add_option("--window", window, "future scans to merge");
  build->add_option("--label-map", label_map_path, "raw-to-train id map");
  build->add_option("--class-count", class_count, "semantic class count");
  build->add_option("--out", out_path, "output .sscv path")->required();
  build->callback([&] {
    cmd_build_labels(scans_dir, labels_dir, poses_path, frame, window,
                     label_map_path, class_count, out_path);
  });

  CLI::App* dean = app.add_subcommand("train-dean", "offline stage one");
  dean->add_option("--config", config_path, "config JSON")->required();
  dean->add_option("--out-dir", out_dir, "output directory")->required();
  dean->callback([&] { cmd_train_dean(config_path, out_dir); });

  CLI::App* teacher = app.add_subcommand("train-teacher", "offline stage two");
  teacher->add_option("--config", config_path, "config JSON")->required();
  teacher->add_option("--out-dir", out_dir, "output directory")->required();
  teacher->callback([&] { cmd_train_teacher(config_path, out_dir); });

  CLI::App* student = app.add_subcommand("train-student", "online stage");
  student->add_option("--config", config_path, "config JSON")->required();
  student->add_option("--pseudo", pseudo_path, "pseudo-label .sscv from stage one")
      ->required();
  student->add_option("--teacher", teacher_path, "teacher model JSON")
      ->required();
  student->add_option("--out-dir", out_dir, "output directory")->required();
  student->callback([&] {
    cmd_train_student(config_path, pseudo_path, teacher_path, out_dir);
  });

  CLI::App* eval = app.add_subcommand("eval", "score a prediction");
  eval->add_option("--pred", pred_path, "prediction .sscv")->required();
  eval->add_option("--gt", gt_path, "ground-truth .sscv")->required();
  eval->add_option("--reference", reference_path,
                   "report JSON of a fully supervised run");
  eval->add_option("--out", out_path, "output report JSON")->required();
  eval->callback(
      [&] { cmd_eval(pred_path, gt_path, reference_path, out_path); });

  CLI::App* stats = app.add_subcommand("stats", "annotation statistics");
  stats->add_option("--grid", grid_path, "label grid .sscv")->required();
  stats->add_option("--reference", reference_path, "full annotation .sscv");
  stats->callback([&] { cmd_stats(grid_path, reference_path); });

  CLI::App* gc = app.add_subcommand("gradcheck", "certify loss gradients");
  gc->add_option("--volume", volume, "check volume dims X,Y,Z")
      ->delimiter(',')
      ->expected(3);
  gc->add_option("--eps", eps, "finite-difference step");
  gc->callback([&] { rc = cmd_gradcheck(volume, eps); });

  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation table");
  ablate->add_option("--config", config_path, "config JSON")->required();
  ablate->add_option("--seeds", seeds, "number of seeds");
  ablate->add_option("--out", out_path, "output table JSON")->required();
  ablate->callback([&] { cmd_ablate(config_path, seeds, out_path); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const sv::NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const sv::FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return rc;
}
