#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctdnet/config.hpp"
#include "ctdnet/gradcheck.hpp"
#include "ctdnet/metrics.hpp"
#include "ctdnet/params.hpp"
#include "ctdnet/scene.hpp"

namespace ctdnet::harness {

/// Numeric breakdowns (non-finite loss, failed gradient suite) map to exit
/// code 2; plain validation problems stay std::invalid_argument (exit 1).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The assembled network: pyramid + decoupled head over one parameter store.
struct Detector {
  RunConfig cfg;
  ParamStore store;
  std::unique_ptr<cfp::CfpModel> pyramid;
  std::unique_ptr<head::HeadModel> head_model;

  int feature_stride() const { return cfg.cfp.stem_stride; }  // level-1 stride
};

std::unique_ptr<Detector> build_detector(const RunConfig& cfg);

struct TrainResult {
  int steps = 0;
  double first_total = 0.0;
  double last_total = 0.0;
  std::string checkpoint_path;
  std::string loss_log_path;
  std::string run_log_path;
};

/// Runs the fixed-seed training loop; per-step "step total fc conv" lines go
/// to loss_log.txt, scene regeneration notes to run.log, and the final
/// parameters to checkpoint.ctdk under out_dir. Aborts with NumericError on a
/// non-finite loss, recording the offending step.
TrainResult train(const RunConfig& cfg, const std::string& out_dir,
                  const std::string& resume_checkpoint = "");

/// Jitter-free proposals, decoded boxes, greedy per-class NMS, then the
/// metric protocol. Writes detections.txt and report.txt under out_dir.
metrics::EvalReport evaluate_cmd(const RunConfig& cfg, const std::string& checkpoint_path,
                                 const std::string& out_dir);

/// Channel-mean of absolute activations of one CFP level (1-based), min-max
/// normalized to [0,255] (flat maps render as 128), resized to the scene
/// size, written as binary PGM (P5).
void dump_heatmap(const RunConfig& cfg, const std::string& checkpoint_path, int scene_index,
                  int level, const std::string& out_path);

/// Emits scene PPMs and the ground-truth file for scene_count scenes.
void generate_scenes_cmd(const RunConfig& cfg, const std::string& out_dir);

void write_pgm(const std::string& path, const Tensor& gray);     // [H,W], values 0..255
void write_ppm(const std::string& path, const Tensor& image);    // [3,H,W], values 0..1

/// The full finite-difference suite: every differentiable kernel plus both
/// end-to-end head branches and the whole pyramid, `seeds` random draws each.
std::vector<GradCheckResult> run_gradient_suite(int seeds, double tol);

}  // namespace ctdnet::harness
