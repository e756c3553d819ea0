#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctdnet/autodiff.hpp"
#include "ctdnet/params.hpp"
#include "ctdnet/rng.hpp"
#include "ctdnet/tensor.hpp"

namespace ctdnet::cfp {

struct CfpConfig {
  int stages = 4;        // S
  int unrolls = 2;       // N, number of pyramid expansions
  int channels = 16;     // C, pyramid (and stand-in backbone) width
  int gc_ratio = 4;      // global-context bottleneck divisor
  bool share_unroll_params = false;
  int stem_stride = 4;

  void validate() const;
};

/// Pyramid outputs m_1..m_S (index 0 = highest resolution) plus the stage
/// features x_1..x_S of the final unroll.
struct FeaturePyramid {
  std::vector<ad::Var> levels;
  std::vector<ad::Var> stages;
  int level_count() const { return static_cast<int>(levels.size()); }
};

struct BalancedFeature {
  ad::Var value;     // R at the medium size
  int medium_level;  // 1-based
  int r_min = 1;
  int r_max = 1;
};

/// 1-based medium level index: floor((1 + S) / 2).
int medium_level_index(int stages);

/// The cross-direction pyramid: a tiny stand-in backbone, top-down FPN
/// merging, feedback-unrolled horizontal transmission, balanced-level
/// vertical transmission with global-context refinement, and residual
/// redistribution. Parameters are distinct per unroll unless shared.
class CfpModel {
 public:
  CfpModel(const CfpConfig& cfg, ParamStore& store, Rng& rng, const std::string& prefix = "cfp");

  const CfpConfig& config() const { return cfg_; }

  /// x_i = U_i(x_{i-1} [+ feedback_i]); stage 1 contains the stem. Feedback
  /// tensors, when present, must match each stage's input extents.
  std::vector<ad::Var> backbone_forward(const ad::Var& image,
                                        const std::vector<ad::Var>* feedback,
                                        int unroll = 0) const;

  /// m_S = lateral_S(x_S); m_i = smooth_i(lateral_i(x_i) + resize(m_{i+1})).
  std::vector<ad::Var> top_down_merge(const std::vector<ad::Var>& stages, int unroll = 0) const;

  /// Unroll 1 is the plain FPN path; unrolls n >= 2 inject 1x1-projected,
  /// resized feedback from the previous pyramid into every backbone stage.
  FeaturePyramid horizontal_transmission(const ad::Var& image) const;

  ad::Var global_context_refine(const ad::Var& balanced) const;

  FeaturePyramid cfp_forward(const ad::Var& image) const;

 private:
  int unroll_slot(int unroll) const { return cfg_.share_unroll_params ? 0 : unroll; }

  CfpConfig cfg_;
  struct StageParams {
    ad::Var down_w, down_b;      // stride-2 (stage 1: stem stride) conv
    ad::Var conv_w, conv_b;      // 3x3 refinement conv
  };
  struct FpnParams {
    std::vector<ad::Var> lateral_w, lateral_b;  // per level, 1x1
    std::vector<ad::Var> smooth_w, smooth_b;    // per level below the top, 3x3
  };
  struct FeedbackParams {
    std::vector<ad::Var> w, b;  // per stage, 1x1 projection C -> stage input channels
  };
  std::vector<std::vector<StageParams>> stages_;   // [unroll][stage]
  std::vector<FpnParams> fpn_;                     // [unroll]
  std::vector<FeedbackParams> feedback_;           // [unroll] (slot 0 unused)
  // Global context block.
  ad::Var gc_key_w_, gc_key_b_;
  ad::Var gc_t1_w_, gc_t1_b_, gc_ln_gamma_, gc_ln_beta_, gc_t2_w_, gc_t2_b_;
};

/// R = (1/S) * sum_r resize(m_r to the medium size). Parameter-free.
BalancedFeature balance_levels(const FeaturePyramid& pyramid);

/// out_i = m_i + resize(refined to level-i size).
FeaturePyramid redistribute_levels(const FeaturePyramid& pyramid, const ad::Var& refined);

}  // namespace ctdnet::cfp
