#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpa/cli.hpp"

using namespace dpa;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

nlohmann::json read_json(const std::string& path) {
  return nlohmann::json::parse(slurp(path));
}

std::string fresh_dir(const std::string& name) {
  const std::string dir = "/tmp/dpa_cli_" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Two tiny hand-made views: a centered disk mask over a gradient image.
struct TinyData {
  std::vector<Camera> cameras;
  std::vector<Image> images;
  std::vector<Mask> masks;
};

TinyData tiny_views(Index res = 16) {
  TinyData d;
  for (int v = 0; v < 2; ++v) {
    const double az = v * 0.8;
    const Vec3 eye(2.0 * std::sin(az), 0.4, -2.0 * std::cos(az));
    d.cameras.push_back(
        Camera::look_at(eye, Vec3::Zero(), Vec3(0, -1, 0), double(res), res, res));
    Image im = Image::zeros(res, res);
    Mask mask = Mask::Zero(res, res);
    const double c = (res - 1) / 2.0;
    for (Index y = 0; y < res; ++y)
      for (Index x = 0; x < res; ++x) {
        im.set_pixel(y, x, Vec3(double(x) / res, double(y) / res, 0.25 + 0.1 * v));
        const double dx = double(x) - c, dy = double(y) - c;
        mask(y, x) = dx * dx + dy * dy <= c * c * 0.5 ? 1.0 : 0.0;
      }
    d.images.push_back(im);
    d.masks.push_back(mask);
  }
  return d;
}

// Small but real fit budget: enough to run all three phases and dropout.
std::vector<std::string> tiny_fit_args(const std::string& dataset,
                                       const std::string& ckpt) {
  return {"fit",           dataset,
          ckpt,            "--mask-only",
          "--seed",        "11",
          "--threads",     "1",
          "--set",         "n_primitives=64",
          "--set",         "n_convexes=4",
          "--set",         "random_pixels=24",
          "--set",         "contour_pixels=40",
          "--set",         "samples_per_ray=16",
          "--set",         "phase1_iters=20",
          "--set",         "phase2_iters=30",
          "--set",         "phase3_iters=10",
          "--set",         "overlap_probes=512",
          "--set",         "overlap_batch=128",
          "--set",         "dropout_period=5",
          "--set",         "use_float32=true",
          "--quiet"};
}

}  // namespace

TEST_CASE("view names are zero-padded", "[dataset]") {
  REQUIRE(view_name(0) == "000");
  REQUIRE(view_name(7) == "007");
  REQUIRE(view_name(123) == "123");
}

TEST_CASE("dataset round-trips views and metadata", "[dataset]") {
  const std::string dir = fresh_dir("roundtrip");
  const TinyData d = tiny_views();
  nlohmann::json meta;
  meta["scene"] = "disk";
  meta["holdout"] = {1};
  write_dataset(dir, d.cameras, d.images, d.masks, meta);

  REQUIRE(fs::exists(dir + "/images/000.png"));
  REQUIRE(fs::exists(dir + "/images/001.png"));
  REQUIRE(fs::exists(dir + "/masks/001.png"));
  REQUIRE(fs::exists(dir + "/cameras.json"));
  REQUIRE(fs::exists(dir + "/meta.json"));

  const Dataset back = load_dataset(dir);
  REQUIRE(back.view_count() == 2);
  REQUIRE(back.meta["scene"] == "disk");
  REQUIRE(back.meta["holdout"][0] == 1);

  for (Index v = 0; v < 2; ++v) {
    const Camera& a = d.cameras[std::size_t(v)];
    const Camera& b = back.cameras[std::size_t(v)];
    REQUIRE(b.fx == a.fx);
    REQUIRE(b.cx == a.cx);
    REQUIRE(b.width == a.width);
    REQUIRE((b.world_to_camera - a.world_to_camera).cwiseAbs().maxCoeff() == 0.0);

    // PNG quantizes to 8 bits; masks are binary and survive exactly.
    REQUIRE((back.masks[std::size_t(v)] - d.masks[std::size_t(v)])
                .cwiseAbs()
                .maxCoeff() == 0.0);
    const Image& im = back.images[std::size_t(v)];
    double max_err = 0;
    for (Index y = 0; y < im.height; ++y)
      for (Index x = 0; x < im.width; ++x)
        max_err = std::max(
            max_err,
            (im.pixel(y, x) - d.images[std::size_t(v)].pixel(y, x)).cwiseAbs().maxCoeff());
    REQUIRE(max_err <= 0.5 / 255.0 + 1e-12);
  }

  SECTION("meta.json is optional") {
    const std::string bare = fresh_dir("roundtrip_bare");
    write_dataset(bare, d.cameras, d.images, d.masks);
    REQUIRE_FALSE(fs::exists(bare + "/meta.json"));
    REQUIRE(load_dataset(bare).meta.is_null());
  }

  SECTION("view count mismatch is rejected before any file is written") {
    std::vector<Image> fewer = {d.images[0]};
    REQUIRE_THROWS_WITH(write_dataset(dir, d.cameras, fewer, d.masks),
                        Catch::Matchers::ContainsSubstring("view counts"));
  }
}

TEST_CASE("dataset loader reports broken inputs by name", "[dataset]") {
  const std::string dir = fresh_dir("broken");
  const TinyData d = tiny_views();
  nlohmann::json meta;
  meta["holdout"] = {1};
  write_dataset(dir, d.cameras, d.images, d.masks, meta);

  SECTION("missing directory") {
    REQUIRE_THROWS_WITH(load_dataset("/tmp/dpa_cli_no_such_dir"),
                        Catch::Matchers::ContainsSubstring("not a directory"));
  }

  SECTION("missing cameras.json") {
    fs::remove(dir + "/cameras.json");
    REQUIRE_THROWS_WITH(load_dataset(dir),
                        Catch::Matchers::ContainsSubstring("cameras.json"));
  }

  SECTION("cameras.json parse error names the file") {
    spit(dir + "/cameras.json", "[{\"fx\": }]");
    REQUIRE_THROWS_WITH(load_dataset(dir),
                        Catch::Matchers::ContainsSubstring("cameras.json"));
  }

  SECTION("empty camera array") {
    spit(dir + "/cameras.json", "[]");
    REQUIRE_THROWS_WITH(load_dataset(dir),
                        Catch::Matchers::ContainsSubstring("non-empty"));
  }

  SECTION("missing intrinsic key names the key and the view") {
    nlohmann::json views = read_json(dir + "/cameras.json");
    views[0].erase("fy");
    spit(dir + "/cameras.json", views.dump());
    REQUIRE_THROWS_WITH(load_dataset(dir),
                        Catch::Matchers::ContainsSubstring("view 0") &&
                            Catch::Matchers::ContainsSubstring("'fy'"));
  }

  SECTION("short pose array") {
    nlohmann::json views = read_json(dir + "/cameras.json");
    views[1]["world_to_camera"] = {1.0, 0.0, 0.0};
    spit(dir + "/cameras.json", views.dump());
    REQUIRE_THROWS_WITH(load_dataset(dir),
                        Catch::Matchers::ContainsSubstring("view 1") &&
                            Catch::Matchers::ContainsSubstring("16"));
  }

  SECTION("invalid camera is caught at load") {
    nlohmann::json views = read_json(dir + "/cameras.json");
    views[0]["fx"] = 0.0;
    spit(dir + "/cameras.json", views.dump());
    REQUIRE_THROWS_WITH(load_dataset(dir),
                        Catch::Matchers::ContainsSubstring("view 0") &&
                            Catch::Matchers::ContainsSubstring("focal"));
  }

  SECTION("missing mask names the view and the path") {
    fs::remove(dir + "/masks/001.png");
    REQUIRE_THROWS_WITH(load_dataset(dir),
                        Catch::Matchers::ContainsSubstring("view 1") &&
                            Catch::Matchers::ContainsSubstring("masks/001.png"));
  }

  SECTION("image size disagreeing with the camera raster") {
    nlohmann::json views = read_json(dir + "/cameras.json");
    views[0]["width"] = 32;
    views[0]["height"] = 32;
    spit(dir + "/cameras.json", views.dump());
    REQUIRE_THROWS_WITH(load_dataset(dir),
                        Catch::Matchers::ContainsSubstring("image size"));
  }

  SECTION("mask size disagreeing with the image") {
    write_png_gray(dir + "/masks/000.png", Mask::Zero(8, 8));
    REQUIRE_THROWS_WITH(load_dataset(dir),
                        Catch::Matchers::ContainsSubstring("mask size"));
  }
}

TEST_CASE("fit config files parse, serialize, and hash stably", "[fitconfig]") {
  const FitConfig base;

  SECTION("overlay keeps untouched defaults") {
    const FitConfig cfg = parse_fit_config("n_convexes = 32\nlr = 5e-3\n", base);
    REQUIRE(cfg.n_convexes == 32);
    REQUIRE(cfg.lr == 5e-3);
    REQUIRE(cfg.n_primitives == base.n_primitives);
    REQUIRE(cfg.samples_per_ray == base.samples_per_ray);
  }

  SECTION("comments, blank lines, and spacing variants") {
    const FitConfig cfg = parse_fit_config(
        "# a comment\n\n  n_primitives=128  \nrgb = false # trailing\n", base);
    REQUIRE(cfg.n_primitives == 128);
    REQUIRE_FALSE(cfg.rgb);
  }

  SECTION("holdout list") {
    const FitConfig cfg = parse_fit_config("holdout_views = 1, 3\n", base);
    REQUIRE(cfg.holdout_views == std::vector<Index>({1, 3}));
  }

  SECTION("partial overlays may pass through inconsistent intermediates") {
    FitConfig cfg = parse_fit_config("overlap_probes = 512\n", base);
    cfg = parse_fit_config("overlap_batch = 128\n", cfg);
    REQUIRE_NOTHROW(cfg.validate());
    REQUIRE_THROWS_WITH(parse_fit_config("overlap_probes = 512\n", base).validate(),
                        Catch::Matchers::ContainsSubstring("probe pool"));
  }

  SECTION("bad inputs name the key") {
    REQUIRE_THROWS_WITH(parse_fit_config("lr = fast\n", base),
                        Catch::Matchers::ContainsSubstring("'lr'"));
    REQUIRE_THROWS_WITH(parse_fit_config("rgb = maybe\n", base),
                        Catch::Matchers::ContainsSubstring("'rgb'"));
    REQUIRE_THROWS_WITH(parse_fit_config("warp_drive = 9\n", base),
                        Catch::Matchers::ContainsSubstring("unknown key"));
    REQUIRE_THROWS_WITH(parse_fit_config("just words\n", base),
                        Catch::Matchers::ContainsSubstring("key = value"));
  }

  SECTION("hash covers every field and survives a serialize round trip") {
    const std::uint64_t h0 = config_hash(base);
    FitConfig cfg = base;
    cfg.seed = 99;
    REQUIRE(config_hash(cfg) != h0);
    const FitConfig back = parse_fit_config(serialize_fit_config(cfg));
    REQUIRE(config_hash(back) == config_hash(cfg));
  }
}

TEST_CASE("synth command writes a loadable dataset", "[cli][synthgen]") {
  const std::string dir = fresh_dir("synth");
  REQUIRE(run_cli({"synth", "sphere", dir, "--resolution", "48", "--gt-resolution",
                   "48", "--quiet"}) == 0);

  const Dataset data = load_dataset(dir);
  REQUIRE(data.view_count() == 4);
  REQUIRE(data.meta["scene"] == "sphere");
  REQUIRE(data.meta["holdout"][0] == 3);
  REQUIRE(data.meta["resolution"] == 48);
  REQUIRE(data.cameras[0].width == 48);
  for (const Mask& mask : data.masks) REQUIRE((mask.array() > 0.5).any());

  // gt.ply holds the r=0.6 sphere meshed at the requested grid resolution.
  const TriMesh gt = import_ply(dir + "/gt.ply");
  REQUIRE(gt.vertex_count() > 100);
  REQUIRE(surface_area(gt) == Approx(4.0 * M_PI * 0.36).epsilon(0.05));

  SECTION("unknown scene exits with the validation code") {
    REQUIRE(run_cli({"synth", "chair", dir, "--quiet"}) == 1);
  }
}

TEST_CASE("fit command runs the schedule and writes its artifacts", "[cli][optim]") {
  const std::string dir = fresh_dir("fit_ds");
  REQUIRE(run_cli({"synth", "sphere", dir, "--resolution", "32", "--gt-resolution",
                   "32", "--quiet"}) == 0);

  const std::string out = fresh_dir("fit_out");
  const std::string ckpt = out + "/checkpoint.dpa";
  REQUIRE(run_cli(tiny_fit_args(dir, ckpt)) == 0);

  REQUIRE(fs::exists(ckpt));
  REQUIRE(fs::exists(out + "/previews/phase1.png"));
  REQUIRE(fs::exists(out + "/previews/phase3.png"));

  const nlohmann::json report = read_json(ckpt + ".report.json");
  REQUIRE(report["seed"] == 11);
  REQUIRE(report["completed_phase"] == 3);
  REQUIRE(report["config_hash"].get<std::uint64_t>() != 0);
  REQUIRE(report["loss_phase1"]["iters"] == 20);
  REQUIRE(report["loss_phase2"]["iters"] == 30);
  REQUIRE(report["loss_phase3"]["iters"] == 10);
  // meta.json declares view 3 held out.
  REQUIRE(report["train_view_ids"] == nlohmann::json({0, 1, 2}));
  REQUIRE(report["iou_per_view"].size() == 3);
  REQUIRE(report["rows_pre_dropout"].get<Index>() > 0);

  const AssemblyCheckpoint loaded = load_checkpoint(ckpt);
  REQUIRE(loaded.bank.mode == SelectionMode::Binary);
  REQUIRE(loaded.phase == Phase::Three);
  REQUIRE(loaded.seed == 11);
  REQUIRE(loaded.config_hash == report["config_hash"].get<std::uint64_t>());

  SECTION("same seed reproduces the checkpoint bitwise") {
    const std::string ckpt2 = out + "/checkpoint2.dpa";
    REQUIRE(run_cli(tiny_fit_args(dir, ckpt2)) == 0);
    REQUIRE(slurp(ckpt2) == slurp(ckpt));
  }

  SECTION("--holdout overrides the dataset declaration") {
    std::vector<std::string> args = tiny_fit_args(dir, out + "/ho.dpa");
    args.push_back("--holdout");
    args.push_back("0");
    REQUIRE(run_cli(args) == 0);
    const nlohmann::json r = read_json(out + "/ho.dpa.report.json");
    REQUIRE(r["train_view_ids"] == nlohmann::json({1, 2, 3}));
  }

  SECTION("config file and --set overrides hash identically") {
    const std::string cfg_path = out + "/fit.cfg";
    spit(cfg_path,
         "n_primitives = 64\nn_convexes = 4\nrandom_pixels = 24\n"
         "contour_pixels = 40\nsamples_per_ray = 16\nphase1_iters = 20\n"
         "phase2_iters = 30\nphase3_iters = 10\noverlap_probes = 512\n"
         "overlap_batch = 128\ndropout_period = 5\nuse_float32 = true\n");
    REQUIRE(run_cli({"fit", dir, out + "/cfgfile.dpa", "--mask-only", "--seed", "11",
                     "--threads", "1", "--config", cfg_path, "--quiet"}) == 0);
    const nlohmann::json r = read_json(out + "/cfgfile.dpa.report.json");
    REQUIRE(r["config_hash"] == report["config_hash"]);
  }

  SECTION("mask-only mode freezes the color table at its seeded init") {
    const std::string dir2 = fresh_dir("fit_ds_box");
    REQUIRE(run_cli({"synth", "box", dir2, "--resolution", "32", "--gt-resolution",
                     "32", "--quiet"}) == 0);
    const std::string ckpt2 = out + "/box.dpa";
    REQUIRE(run_cli(tiny_fit_args(dir2, ckpt2)) == 0);
    const AssemblyCheckpoint a = load_checkpoint(ckpt);
    const AssemblyCheckpoint b = load_checkpoint(ckpt2);
    REQUIRE(a.colors == b.colors);          // never trained, same seed
    REQUIRE(a.bank.params != b.bank.params);  // the shapes did train
  }

  SECTION("preview rendering can be disabled") {
    const std::string out2 = fresh_dir("fit_out_noprev");
    std::vector<std::string> args = tiny_fit_args(dir, out2 + "/c.dpa");
    args.push_back("--previews");
    args.push_back("none");
    REQUIRE(run_cli(args) == 0);
    REQUIRE_FALSE(fs::exists(out2 + "/previews"));
  }

  SECTION("missing dataset exits with the validation code") {
    REQUIRE(run_cli(tiny_fit_args("/tmp/dpa_cli_nowhere", out + "/x.dpa")) == 1);
  }
}

TEST_CASE("extract and eval commands consume a checkpoint", "[cli][extract]") {
  const std::string dir = fresh_dir("eval_ds");
  REQUIRE(run_cli({"synth", "sphere", dir, "--resolution", "48", "--gt-resolution",
                   "64", "--quiet"}) == 0);

  // Hand-built checkpoint matching the scene: one convex, one sphere quadric.
  // Coefficients are scaled far above unit so the exp(-10 a*) opacity falls
  // off within a fraction of a pixel and the rendered silhouette tracks the
  // geometric one; at unit scale the soft boundary alone costs ~0.1 of IoU.
  AssemblyCheckpoint ckpt;
  ckpt.bank.params.resize(1, 7);
  ckpt.bank.params << 100, 100, 100, 0, 0, 0, -36;  // x^2+y^2+z^2 = 0.6^2
  ckpt.bank.selection = Mat::Ones(1, 1);
  ckpt.bank.weights = Vec::Ones(1);
  ckpt.bank.mode = SelectionMode::Binary;
  ckpt.colors.resize(1, 3);
  ckpt.colors << 0.85, 0.35, 0.25;
  ckpt.phase = Phase::Three;
  ckpt.seed = 5;
  const std::string out = fresh_dir("eval_out");
  const std::string ckpt_path = out + "/sphere.dpa";
  save_checkpoint(ckpt, ckpt_path);

  SECTION("extract writes meshes and a valid scad script") {
    REQUIRE(run_cli({"extract", ckpt_path, out + "/mesh", "--resolution", "48",
                     "--scad", "polyhedron", "--quiet"}) == 0);
    REQUIRE(fs::exists(out + "/mesh/merged.obj"));
    REQUIRE(fs::exists(out + "/mesh/merged.ply"));
    REQUIRE(fs::exists(out + "/mesh/parts.obj"));
    REQUIRE(fs::exists(out + "/mesh/parts/part_0.obj"));
    REQUIRE(check_openscad_file(out + "/mesh/parts.scad").ok);

    const TriMesh merged = import_ply(out + "/mesh/merged.ply");
    REQUIRE(surface_area(merged) == Approx(4.0 * M_PI * 0.36).epsilon(0.05));

    REQUIRE(run_cli({"extract", ckpt_path, out + "/boxes", "--resolution", "32",
                     "--scad", "fitted-box", "--quiet"}) == 0);
    REQUIRE(check_openscad_file(out + "/boxes/boxes.scad").ok);
  }

  SECTION("--scad value is validated") {
    REQUIRE(run_cli({"extract", ckpt_path, out + "/bad", "--scad", "stl",
                     "--quiet"}) == 1);
  }

  SECTION("eval reports image and mesh metrics on the held-out view") {
    REQUIRE(run_cli({"eval", ckpt_path, dir, "--gt", dir + "/gt.ply", "--resolution",
                     "48", "--samples", "2000", "--quiet"}) == 0);
    const nlohmann::json r = read_json(ckpt_path + ".eval.json");
    REQUIRE(r["eval_views"] == nlohmann::json({3}));
    REQUIRE(r["iou_per_view"].size() == 1);
    // The checkpoint is the exact scene sphere: near-perfect silhouette and
    // a chamfer distance dominated by the two meshing resolutions.
    REQUIRE(r["iou_per_view"][0].get<double>() > 0.95);
    REQUIRE(r["has_mesh_metrics"] == true);
    REQUIRE(r["cd"].get<double>() < 2.0);
    REQUIRE(r["parts"] == 1);
    REQUIRE(r["checkpoint_seed"] == 5);
  }

  SECTION("eval without a gt mesh still reports image metrics") {
    REQUIRE(run_cli({"eval", ckpt_path, dir, "--quiet"}) == 0);
    const nlohmann::json r = read_json(ckpt_path + ".eval.json");
    REQUIRE(r["has_mesh_metrics"] == false);
    REQUIRE_FALSE(r.contains("cd"));
    REQUIRE(r["iou_per_view"].size() == 1);
  }

  SECTION("eval view range is validated") {
    REQUIRE(run_cli({"eval", ckpt_path, dir, "--holdout", "9", "--quiet"}) == 1);
  }

  SECTION("a dataset with no holdout declaration evaluates every view") {
    const TinyData d = tiny_views(32);
    const std::string bare = fresh_dir("eval_bare");
    write_dataset(bare, d.cameras, d.images, d.masks);
    REQUIRE(run_cli({"eval", ckpt_path, bare, "--quiet"}) == 0);
    const nlohmann::json r = read_json(ckpt_path + ".eval.json");
    REQUIRE(r["eval_views"] == nlohmann::json({0, 1}));
  }
}

TEST_CASE("cli rejects malformed invocations", "[cli]") {
  SECTION("no subcommand") { REQUIRE(run_cli({}) != 0); }
  SECTION("unknown subcommand") { REQUIRE(run_cli({"frobnicate"}) != 0); }
  SECTION("missing positional") { REQUIRE(run_cli({"synth", "sphere"}) != 0); }
  SECTION("unknown flag") {
    REQUIRE(run_cli({"gradcheck", "--frequency", "3"}) != 0);
  }
  SECTION("corrupt checkpoint") {
    const std::string path = "/tmp/dpa_cli_corrupt.dpa";
    spit(path, "not a checkpoint at all");
    REQUIRE(run_cli({"extract", path, "/tmp/dpa_cli_corrupt_out", "--quiet"}) == 1);
  }
}
