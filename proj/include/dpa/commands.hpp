#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpa/checkpoint.hpp"
#include "dpa/dataset.hpp"
#include "dpa/extract.hpp"
#include "dpa/gradcheck.hpp"
#include "dpa/metrics.hpp"
#include "dpa/openscad.hpp"
#include "dpa/optim.hpp"
#include "dpa/synthgen.hpp"

// Subcommand implementations behind the `dpa` binary. Each returns a process
// exit code; validation problems throw ValidationError (exit 1) and numeric
// failures NumericalError (exit 2), mapped in run_cli.

namespace dpa {

namespace detail {

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw ValidationError("write failed for " + path);
}

inline Camera scale_camera(const Camera& cam, Index resolution) {
  Camera scaled = cam;
  const double sx = double(resolution) / double(cam.width);
  const double sy = double(resolution) / double(cam.height);
  scaled.fx *= sx;
  scaled.fy *= sy;
  scaled.cx = (scaled.cx + 0.5) * sx - 0.5;
  scaled.cy = (scaled.cy + 0.5) * sy - 0.5;
  scaled.width = resolution;
  scaled.height = resolution;
  return scaled;
}

inline std::vector<Index> holdout_from_meta(const nlohmann::json& meta) {
  std::vector<Index> ids;
  if (meta.is_object() && meta.contains("holdout") && meta["holdout"].is_array())
    for (const auto& v : meta["holdout"]) ids.push_back(v.get<Index>());
  return ids;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth: analytic scene -> dataset directory + gt.ply

struct SynthOptions {
  std::string scene;
  std::string out_dir;
  Index resolution = 128;
  Index gt_resolution = 256;
  int threads = 0;
  bool quiet = false;
};

inline int cmd_synth(const SynthOptions& opt) {
  const SceneSpec spec = standard_scene(opt.scene, opt.resolution);
  GtRenderConfig render_cfg;
  render_cfg.threads = opt.threads;
  const std::vector<RenderedView> views = render_gt_views(spec.scene, spec.cameras,
                                                          render_cfg);

  std::vector<Image> images;
  std::vector<Mask> masks;
  for (const RenderedView& view : views) {
    images.push_back(view.image);
    masks.push_back(view.mask);
  }

  nlohmann::json meta;
  meta["scene"] = spec.name;
  meta["holdout"] = {spec.holdout_index};
  meta["resolution"] = opt.resolution;
  write_dataset(opt.out_dir, spec.cameras, images, masks, meta);

  const TriMesh gt = gt_mesh(spec.scene, opt.gt_resolution, opt.threads);
  namespace fs = std::filesystem;
  export_ply(gt, (fs::path(opt.out_dir) / "gt.ply").string());

  if (!opt.quiet)
    std::printf("synth: wrote %zu views of '%s' and gt.ply (%lld vertices) to %s\n",
                views.size(), spec.name.c_str(),
                static_cast<long long>(gt.vertex_count()), opt.out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// fit: dataset -> checkpoint + report + per-phase previews

struct FitOptions {
  std::string dataset_dir;
  std::string out_checkpoint;
  std::string config_path;             // optional key = value file
  std::vector<std::string> overrides;  // key=value pairs applied on top
  bool mask_only = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::vector<Index>> holdout;
  std::string report_path;   // default <checkpoint>.report.json
  std::string previews_dir;  // default <checkpoint dir>/previews, "none" disables
  Index preview_resolution = 64;
  bool quiet = false;
};

inline nlohmann::json fit_report_to_json(const FitReport& report, Phase completed) {
  nlohmann::json j;
  j["config_hash"] = report.config_digest;
  j["seed"] = report.seed;
  j["completed_phase"] = int(completed);
  j["wall_seconds"] = report.wall_seconds;
  j["active_primitive_rows"] = report.active_primitive_rows;
  j["nonempty_convexes"] = report.nonempty_convexes;
  j["rows_pre_dropout"] = report.rows_pre_dropout;
  j["rows_post_dropout"] = report.rows_post_dropout;
  j["final_mean_h_inside"] = report.final_mean_h_inside;
  j["under_constrained"] = report.under_constrained;
  j["train_view_ids"] = report.train_view_ids;
  j["psnr_per_view"] = report.psnr_per_view;
  j["ssim_per_view"] = report.ssim_per_view;
  j["iou_per_view"] = report.iou_per_view;
  for (int p = 0; p < 3; ++p) {
    const auto& curve = report.loss_curves[std::size_t(p)];
    nlohmann::json summary;
    summary["iters"] = curve.size();
    summary["first"] = curve.empty() ? 0.0 : curve.front();
    summary["last"] = curve.empty() ? 0.0 : curve.back();
    j["loss_phase" + std::to_string(p + 1)] = summary;
  }
  return j;
}

inline int cmd_fit(const FitOptions& opt) {
  FitConfig cfg;
  if (!opt.config_path.empty()) cfg = load_fit_config(opt.config_path, cfg);
  for (const std::string& kv : opt.overrides) cfg = parse_fit_config(kv, cfg);
  if (opt.mask_only) cfg.rgb = false;
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.threads) cfg.threads = *opt.threads;

  const Dataset data = load_dataset(opt.dataset_dir);
  if (opt.holdout)
    cfg.holdout_views = *opt.holdout;
  else if (cfg.holdout_views.empty())
    cfg.holdout_views = detail::holdout_from_meta(data.meta);
  cfg.validate();

  std::vector<FitView> views;
  for (Index i = 0; i < data.view_count(); ++i)
    views.push_back(FitView{data.cameras[i], data.images[i], data.masks[i]});

  namespace fs = std::filesystem;
  const fs::path ckpt_path(opt.out_checkpoint);
  if (ckpt_path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(ckpt_path.parent_path(), ec);
  }
  std::string previews = opt.previews_dir;
  if (previews.empty())
    previews = (ckpt_path.has_parent_path() ? ckpt_path.parent_path() : fs::path("."))
                   .string() +
               "/previews";
  if (previews != "none") {
    std::error_code ec;
    fs::create_directories(previews, ec);
    if (ec) throw ValidationError("cmd_fit: cannot create " + previews);
  }

  FitHooks hooks;
  const Index report_every = 200;
  hooks.on_phase_start = [&](const PhaseConfig& pc) {
    if (!opt.quiet)
      std::printf("fit: phase %d (%lld iters, opacity %s)\n", int(pc.phase),
                  static_cast<long long>(pc.iters), pc.opacity_rule.c_str());
  };
  hooks.on_step = [&](Index iter, const PhaseConfig& pc, double loss,
                      const PrimitiveBank& bank, const MatX3& colors) {
    if (!opt.quiet && ((iter + 1) % report_every == 0 || iter + 1 == pc.iters))
      std::printf("fit: phase %d iter %lld loss %.6f\n", int(pc.phase),
                  static_cast<long long>(iter + 1), loss);
    if (previews != "none" && iter + 1 == pc.iters && !views.empty()) {
      const Camera cam = detail::scale_camera(views[0].camera, opt.preview_resolution);
      const RenderedView shot = render_view(bank, colors, cam, 64, cfg.threads);
      write_png(previews + "/phase" + std::to_string(int(pc.phase)) + ".png", shot.image);
    }
  };
  hooks.on_dropout = [&](const DropoutEvent& event) {
    if (!opt.quiet)
      std::printf("fit: dropout at phase %d iter %lld: %lld -> %lld rows\n",
                  int(event.phase), static_cast<long long>(event.iter),
                  static_cast<long long>(event.result.rows_before),
                  static_cast<long long>(event.result.rows_after));
  };

  const FitResult result = run_fit(views, cfg, hooks);

  AssemblyCheckpoint ckpt;
  ckpt.bank = result.bank;
  ckpt.colors = result.colors;
  ckpt.phase = result.completed_phase;
  ckpt.config_hash = config_hash(cfg);
  ckpt.seed = cfg.seed;
  save_checkpoint(ckpt, opt.out_checkpoint);

  const std::string report_path =
      opt.report_path.empty() ? opt.out_checkpoint + ".report.json" : opt.report_path;
  detail::write_json_file(report_path, fit_report_to_json(result.report,
                                                          result.completed_phase));

  if (!opt.quiet) {
    double mean_iou = 0;
    for (double v : result.report.iou_per_view) mean_iou += v;
    if (!result.report.iou_per_view.empty())
      mean_iou /= double(result.report.iou_per_view.size());
    std::printf("fit: done in %.1fs, %lld active rows, %lld parts, train IoU %.3f\n",
                result.report.wall_seconds,
                static_cast<long long>(result.report.active_primitive_rows),
                static_cast<long long>(result.report.nonempty_convexes), mean_iou);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// extract: checkpoint -> meshes (+ optional OpenSCAD script)

struct ExtractOptions {
  std::string checkpoint;
  std::string out_dir;
  Index resolution = 128;
  std::string scad = "none";  // none | polyhedron | fitted-box
  int threads = 0;
  bool quiet = false;
};

inline int cmd_extract(const ExtractOptions& opt) {
  if (opt.scad != "none" && opt.scad != "polyhedron" && opt.scad != "fitted-box")
    throw ValidationError("cmd_extract: --scad must be none, polyhedron, or fitted-box");

  AssemblyCheckpoint ckpt = load_checkpoint(opt.checkpoint);
  if (ckpt.bank.mode == SelectionMode::Float) {
    warn("cmd_extract: checkpoint is pre-binarization; binarizing selection at 0.01");
    binarize_selection(ckpt.bank);
  }

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(opt.out_dir) / "parts", ec);
  if (ec) throw ValidationError("cmd_extract: cannot create " + opt.out_dir);

  const PartMesh shape =
      extract_parts(ckpt.bank, ckpt.colors, opt.resolution, 0.01, opt.threads);

  export_obj(shape.merged, (fs::path(opt.out_dir) / "merged.obj").string());
  export_ply(shape.merged, (fs::path(opt.out_dir) / "merged.ply").string());
  export_obj(shape, (fs::path(opt.out_dir) / "parts.obj").string());
  for (const Part& part : shape.parts) {
    PartMesh single;
    single.parts = {part};
    single.merged = part.mesh;
    export_obj(single, (fs::path(opt.out_dir) / "parts" /
                        ("part_" + std::to_string(part.convex_id) + ".obj"))
                           .string());
  }

  if (opt.scad != "none") {
    const bool fitted = opt.scad == "fitted-box";
    const std::string scad_path =
        (fs::path(opt.out_dir) / (fitted ? "boxes.scad" : "parts.scad")).string();
    export_openscad(shape, scad_path,
                    fitted ? ScadMode::FittedBox : ScadMode::Polyhedron);
    const ScadCheck check = check_openscad_file(scad_path);
    if (!check.ok)
      throw Error("cmd_extract: emitted script failed the grammar check: " + check.error);
  }

  if (!opt.quiet)
    std::printf("extract: %lld parts, merged mesh %lld vertices / %lld faces -> %s\n",
                static_cast<long long>(shape.part_count()),
                static_cast<long long>(shape.merged.vertex_count()),
                static_cast<long long>(shape.merged.face_count()), opt.out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval: checkpoint + dataset (+ gt mesh) -> EvalReport JSON

struct EvalOptions {
  std::string checkpoint;
  std::string dataset_dir;
  std::string gt_mesh_path;  // empty: image metrics only
  std::string report_path;   // default <checkpoint>.eval.json
  Index resolution = 128;
  Index samples = 10000;
  Index samples_per_ray = 96;
  std::uint64_t seed = 0;
  int threads = 0;
  std::optional<std::vector<Index>> holdout;
  bool quiet = false;
};

inline int cmd_eval(const EvalOptions& opt) {
  AssemblyCheckpoint ckpt = load_checkpoint(opt.checkpoint);
  if (ckpt.bank.mode == SelectionMode::Float) {
    warn("cmd_eval: checkpoint is pre-binarization; binarizing selection at 0.01");
    binarize_selection(ckpt.bank);
  }
  const Dataset data = load_dataset(opt.dataset_dir);

  std::vector<Index> eval_views;
  if (opt.holdout)
    eval_views = *opt.holdout;
  else
    eval_views = detail::holdout_from_meta(data.meta);
  if (eval_views.empty()) {
    warn("cmd_eval: no held-out views declared; evaluating every view");
    for (Index i = 0; i < data.view_count(); ++i) eval_views.push_back(i);
  }
  for (Index id : eval_views)
    if (id < 0 || id >= data.view_count())
      throw ValidationError("cmd_eval: eval view " + std::to_string(id) +
                            " is out of range");

  EvalReport report;
  for (Index id : eval_views) {
    const RenderedView shot = render_view(ckpt.bank, ckpt.colors, data.cameras[id],
                                          opt.samples_per_ray, opt.threads);
    Image masked = shot.image;
    apply_mask(masked, data.masks[id]);
    Image gt_image = data.images[id];
    apply_mask(gt_image, data.masks[id]);
    report.psnr_per_view.push_back(psnr(masked, gt_image));
    report.ssim_per_view.push_back(ssim(masked, gt_image));
    report.iou_per_view.push_back(mask_iou(shot.mask, data.masks[id]));
  }

  const TriMesh pred = extract_mesh(ckpt.bank, opt.resolution, 0.01, opt.threads);
  GridSpec census;
  census.resolution = 64;
  report.parts = Index(nonempty_convexes_on_grid(ckpt.bank, census, 0.01,
                                                 opt.threads).size());

  namespace fs = std::filesystem;
  if (!opt.gt_mesh_path.empty() && fs::exists(opt.gt_mesh_path)) {
    const TriMesh gt = import_ply(opt.gt_mesh_path);
    if (pred.empty()) {
      warn("cmd_eval: extracted mesh is empty; mesh metrics omitted");
    } else {
      report.has_mesh_metrics = true;
      report.cd = chamfer(pred, gt, opt.samples, opt.seed, opt.threads);
      report.ecd = edge_chamfer(pred, gt, opt.samples, 10, 0.1, opt.seed, opt.threads);
      report.nc = normal_consistency(pred, gt, opt.samples, opt.seed, opt.threads);
    }
  } else if (!opt.gt_mesh_path.empty()) {
    warn("cmd_eval: GT mesh " + opt.gt_mesh_path +
         " not found; reporting image metrics only");
  } else {
    warn("cmd_eval: no GT mesh given; reporting image metrics only");
  }

  nlohmann::json j;
  j["checkpoint"] = opt.checkpoint;
  j["config_hash"] = ckpt.config_hash;
  j["checkpoint_seed"] = ckpt.seed;
  j["eval_seed"] = opt.seed;
  j["eval_views"] = eval_views;
  j["psnr_per_view"] = report.psnr_per_view;
  j["ssim_per_view"] = report.ssim_per_view;
  j["iou_per_view"] = report.iou_per_view;
  j["parts"] = report.parts;
  j["mesh_resolution"] = opt.resolution;
  j["mesh_samples"] = opt.samples;
  j["has_mesh_metrics"] = report.has_mesh_metrics;
  if (report.has_mesh_metrics) {
    j["cd"] = report.cd;
    j["nc"] = report.nc;
    j["ecd_has_edges"] = report.ecd.has_edges;
    if (report.ecd.has_edges) j["ecd"] = report.ecd.value;
  }

  const std::string report_path =
      opt.report_path.empty() ? opt.checkpoint + ".eval.json" : opt.report_path;
  detail::write_json_file(report_path, j);

  if (!opt.quiet) {
    std::printf("eval: %zu views", eval_views.size());
    if (!report.iou_per_view.empty()) {
      double mean_iou = 0;
      for (double v : report.iou_per_view) mean_iou += v;
      std::printf(", mean IoU %.4f", mean_iou / double(report.iou_per_view.size()));
    }
    if (report.has_mesh_metrics) std::printf(", CD %.3f, NC %.3f", report.cd, report.nc);
    std::printf(" -> %s\n", report_path.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck: finite-difference suite across seeds

struct GradcheckOptions {
  std::uint64_t seed = 1;
  int n_seeds = 5;
  std::string report_path;  // optional JSON output
  bool quiet = false;
};

inline int cmd_gradcheck(const GradcheckOptions& opt) {
  if (opt.n_seeds < 1) throw ValidationError("cmd_gradcheck: need at least one seed");
  bool all_ok = true;
  nlohmann::json rows = nlohmann::json::array();
  if (!opt.quiet) std::printf("%-10s %-6s %8s %8s %8s %12s %8s\n", "seed", "phase",
                              "tested", "passed", "failed", "max_rel_dev", "status");
  for (int s = 0; s < opt.n_seeds; ++s) {
    const std::uint64_t seed = opt.seed + std::uint64_t(s);
    const GradCheckReport report = run_gradcheck(seed);
    all_ok = all_ok && report.ok();
    for (const GradCheckPhaseReport& phase : report.phases) {
      if (!opt.quiet)
        std::printf("%-10llu %-6d %8lld %8lld %8lld %12.3e %8s\n",
                    static_cast<unsigned long long>(seed), phase.phase,
                    static_cast<long long>(phase.tested),
                    static_cast<long long>(phase.passed),
                    static_cast<long long>(phase.failed), phase.max_rel_dev,
                    phase.ok() ? "pass" : "FAIL");
      nlohmann::json row;
      row["seed"] = seed;
      row["phase"] = phase.phase;
      row["tested"] = phase.tested;
      row["passed"] = phase.passed;
      row["skipped"] = phase.skipped;
      row["failed"] = phase.failed;
      row["max_abs_dev"] = phase.max_abs_dev;
      row["max_rel_dev"] = phase.max_rel_dev;
      rows.push_back(row);
    }
  }
  if (!opt.report_path.empty()) {
    nlohmann::json j;
    j["base_seed"] = opt.seed;
    j["n_seeds"] = opt.n_seeds;
    j["ok"] = all_ok;
    j["phases"] = rows;
    detail::write_json_file(opt.report_path, j);
  }
  if (!opt.quiet) std::printf("gradcheck: %s\n", all_ok ? "all checks passed" : "FAILED");
  if (!all_ok) throw NumericalError("gradcheck: finite-difference deviations exceeded tolerance");
  return 0;
}

}  // namespace dpa
