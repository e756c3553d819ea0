#pragma once

#include <cstdint>
#include <vector>

#include "ctdnet/box.hpp"
#include "ctdnet/metrics.hpp"
#include "ctdnet/tensor.hpp"

namespace ctdnet::harness {

/// Clustered small-logo scenes: class-distinct glyphs (filled square, ring,
/// cross) with per-class color, placed around a shared cluster center so the
/// boxes aggregate, plus additive Gaussian pixel noise.
struct SceneConfig {
  int image_size = 128;
  int num_classes = 3;
  int logos_min = 3;
  int logos_max = 6;
  int side_min = 6;
  int side_max = 14;
  int cluster_spread = 28;  // max |offset| of a logo center from the cluster center
  double noise_sigma = 0.05;
  std::uint64_t seed = 7;

  void validate() const;
};

struct Scene {
  Tensor image;  // [3,H,W], values in [0,1]
  std::vector<metrics::GroundTruthBox> gts;
  int regen_count = 0;  // whole-scene rejection-sampling restarts
};

/// Deterministic function of (cfg.seed, index). Every ground-truth box is the
/// tight bound of its glyph, pairwise GT IoU stays <= 0.3, and boxes lie
/// fully inside the image. An impossible placement after 100 attempts
/// regenerates the scene under an incremented sub-seed (counted in
/// regen_count for the run log).
Scene generate_synthetic_scene(const SceneConfig& cfg, int index);

/// Jittered positives (2 per GT: center shifted by up to jitter*side per
/// axis, sides scaled by factors in [1-jitter, 1+jitter]) followed by
/// uniform negatives with IoU < 0.3 to every GT. Deterministic per seed.
std::vector<Box> make_proposals(const std::vector<metrics::GroundTruthBox>& gts, double jitter,
                                int negatives, std::uint64_t seed, int image_size);

}  // namespace ctdnet::harness
