#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpa/commands.hpp"

// Argument surface of the `dpa` binary. Exit codes: 0 success, 1 validation
// error, 2 numerical failure.

namespace dpa {

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"Union-of-convexes shape abstraction from posed masked images"};
  app.require_subcommand(1);

  SynthOptions synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Render a catalog scene to a dataset");
  synth_cmd->add_option("scene", synth.scene, "Scene name from the catalog")->required();
  synth_cmd->add_option("out_dir", synth.out_dir, "Output dataset directory")->required();
  synth_cmd->add_option("--resolution", synth.resolution, "View resolution (default 128)");
  synth_cmd->add_option("--gt-resolution", synth.gt_resolution,
                        "Marching-cubes grid for gt.ply (default 256)");
  synth_cmd->add_option("--threads", synth.threads, "Worker threads (0 = hardware)");
  synth_cmd->add_flag("--quiet", synth.quiet, "Suppress progress output");

  FitOptions fit;
  std::vector<Index> fit_holdout;
  std::uint64_t fit_seed = 0;
  int fit_threads = 0;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit an assembly to a dataset");
  fit_cmd->add_option("dataset", fit.dataset_dir, "Dataset directory")->required();
  fit_cmd->add_option("checkpoint", fit.out_checkpoint, "Output checkpoint path")
      ->required();
  fit_cmd->add_option("--config", fit.config_path, "key = value config file");
  fit_cmd->add_option("--set", fit.overrides, "Config override, e.g. --set lr=3e-4");
  fit_cmd->add_flag("--mask-only", fit.mask_only, "Disable the color term");
  CLI::Option* seed_opt = fit_cmd->add_option("--seed", fit_seed, "Run seed");
  CLI::Option* threads_opt = fit_cmd->add_option("--threads", fit_threads,
                                                 "Worker threads (0 = hardware)");
  CLI::Option* holdout_opt =
      fit_cmd->add_option("--holdout", fit_holdout, "View ids excluded from training");
  fit_cmd->add_option("--report", fit.report_path,
                      "Report JSON path (default <checkpoint>.report.json)");
  fit_cmd->add_option("--previews", fit.previews_dir,
                      "Preview directory, or 'none' (default <checkpoint dir>/previews)");
  fit_cmd->add_flag("--quiet", fit.quiet, "Suppress progress output");

  ExtractOptions extract;
  CLI::App* extract_cmd =
      app.add_subcommand("extract", "Export meshes from a checkpoint");
  extract_cmd->add_option("checkpoint", extract.checkpoint, "Checkpoint path")
      ->required();
  extract_cmd->add_option("out_dir", extract.out_dir, "Output directory")->required();
  extract_cmd->add_option("--resolution", extract.resolution,
                          "Marching-cubes grid (default 128; lower is faster and coarser)");
  extract_cmd->add_option("--scad", extract.scad,
                          "OpenSCAD export: none, polyhedron, or fitted-box");
  extract_cmd->add_option("--threads", extract.threads, "Worker threads (0 = hardware)");
  extract_cmd->add_flag("--quiet", extract.quiet, "Suppress progress output");

  EvalOptions eval;
  std::vector<Index> eval_holdout;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("checkpoint", eval.checkpoint, "Checkpoint path")->required();
  eval_cmd->add_option("dataset", eval.dataset_dir, "Dataset directory")->required();
  eval_cmd->add_option("--gt", eval.gt_mesh_path, "Ground-truth PLY mesh");
  eval_cmd->add_option("--report", eval.report_path,
                       "Report JSON path (default <checkpoint>.eval.json)");
  eval_cmd->add_option("--resolution", eval.resolution, "Marching-cubes grid");
  eval_cmd->add_option("--samples", eval.samples, "Surface samples for mesh metrics");
  eval_cmd->add_option("--seed", eval.seed, "Sampling seed");
  eval_cmd->add_option("--threads", eval.threads, "Worker threads (0 = hardware)");
  CLI::Option* eval_holdout_opt =
      eval_cmd->add_option("--holdout", eval_holdout, "View ids to evaluate");
  eval_cmd->add_flag("--quiet", eval.quiet, "Suppress progress output");

  GradcheckOptions gradcheck;
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gradcheck_cmd->add_option("--seed", gradcheck.seed, "Base seed (default 1)");
  gradcheck_cmd->add_option("--seeds", gradcheck.n_seeds, "Number of seeds (default 5)");
  gradcheck_cmd->add_option("--report", gradcheck.report_path, "Report JSON path");
  gradcheck_cmd->add_flag("--quiet", gradcheck.quiet, "Suppress the table");

  // CLI11 wants argv order reversed, without the program name.
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth_cmd) return cmd_synth(synth);
    if (*fit_cmd) {
      if (*seed_opt) fit.seed = fit_seed;
      if (*threads_opt) fit.threads = fit_threads;
      if (*holdout_opt) fit.holdout = fit_holdout;
      return cmd_fit(fit);
    }
    if (*extract_cmd) return cmd_extract(extract);
    if (*eval_cmd) {
      if (*eval_holdout_opt) eval.holdout = eval_holdout;
      return cmd_eval(eval);
    }
    if (*gradcheck_cmd) return cmd_gradcheck(gradcheck);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(std::move(args));
}

}  // namespace dpa
