#include <chrono>
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "ctdnet/harness.hpp"

// Exit codes: 0 success, 1 validation failure, 2 numeric failure.

namespace {

using ctdnet::harness::RunConfig;

RunConfig load_config(const std::string& path) { return ctdnet::harness::parse_config_file(path); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale cross-direction pyramid detector harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, resume, out_file;
  int scene_index = 0, level = 1, seeds = 20;
  double tol = 1e-3;

  auto* gen = app.add_subcommand("gen", "Emit synthetic scenes and the ground-truth file");
  gen->add_option("--config", config_path, "Run config file")->required();
  gen->add_option("--out", out_dir, "Output directory (defaults to the config's out_dir)");

  auto* train = app.add_subcommand("train", "Train the detector on the synthetic fixture");
  train->add_option("--config", config_path, "Run config file")->required();
  train->add_option("--out", out_dir, "Output directory (defaults to the config's out_dir)");
  train->add_option("--resume", resume, "Checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the synthetic scenes");
  eval->add_option("--config", config_path, "Run config file")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  eval->add_option("--out", out_dir, "Output directory (defaults to the config's out_dir)");

  auto* heatmap = app.add_subcommand("heatmap", "Write one CFP level as a PGM heatmap");
  heatmap->add_option("--config", config_path, "Run config file")->required();
  heatmap->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  heatmap->add_option("--scene", scene_index, "Scene index")->required();
  heatmap->add_option("--level", level, "Pyramid level, 1-based")->required();
  heatmap->add_option("--out", out_file, "Output PGM path")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Run the full finite-difference suite");
  gradcheck->add_option("--seeds", seeds, "Random seeds per operation (default 20)");
  gradcheck->add_option("--tol", tol, "Max relative error (default 1e-3)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const RunConfig cfg = load_config(config_path);
      ctdnet::harness::generate_scenes_cmd(cfg, out_dir.empty() ? cfg.out_dir : out_dir);
      return 0;
    }
    if (train->parsed()) {
      const RunConfig cfg = load_config(config_path);
      const auto res =
          ctdnet::harness::train(cfg, out_dir.empty() ? cfg.out_dir : out_dir, resume);
      std::printf("trained %d steps, loss %.6f -> %.6f\ncheckpoint: %s\n", res.steps,
                  res.first_total, res.last_total, res.checkpoint_path.c_str());
      return 0;
    }
    if (eval->parsed()) {
      const RunConfig cfg = load_config(config_path);
      ctdnet::harness::evaluate_cmd(cfg, checkpoint, out_dir.empty() ? cfg.out_dir : out_dir);
      return 0;
    }
    if (heatmap->parsed()) {
      const RunConfig cfg = load_config(config_path);
      ctdnet::harness::dump_heatmap(cfg, checkpoint, scene_index, level, out_file);
      std::printf("wrote %s\n", out_file.c_str());
      return 0;
    }
    if (gradcheck->parsed()) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto results = ctdnet::harness::run_gradient_suite(seeds, tol);
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      bool all_pass = true;
      for (const auto& r : results) {
        std::puts(ctdnet::format_report(r).c_str());
        all_pass = all_pass && r.pass;
      }
      std::printf("%zu operations, %d seeds each, %.1f s\n", results.size(), seeds, elapsed);
      if (!all_pass) {
        std::fputs("gradient suite FAILED\n", stderr);
        return 2;
      }
      return 0;
    }
  } catch (const ctdnet::harness::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
