#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctdnet/autodiff.hpp"
#include "ctdnet/box.hpp"
#include "ctdnet/dct.hpp"
#include "ctdnet/params.hpp"
#include "ctdnet/rng.hpp"
#include "ctdnet/tensor.hpp"

namespace ctdnet::head {

/// Conv/FC layer counts of the two branches: cNfM means N convolutional
/// layers in the localization branch and M fully connected layers in the
/// classification branch.
enum class GroupNumber { kC4F2, kC6F4 };
GroupNumber group_number_from_string(const std::string& name);
std::string to_string(GroupNumber g);

struct HeadConfig {
  GroupNumber group_number = GroupNumber::kC4F2;
  double loss_weight_fc = 2.0;    // omega_fc
  double loss_weight_conv = 2.0;  // omega_conv
  int roi_size = 7;
  int num_classes = 3;
  int fc_hidden = 256;

  int conv_layers() const { return group_number == GroupNumber::kC4F2 ? 4 : 6; }
  int fc_layers() const { return group_number == GroupNumber::kC4F2 ? 2 : 4; }
  void validate() const;
};

struct LossReport {
  double total = 0.0;
  double fc = 0.0;    // classification branch loss (cross-entropy mean)
  double conv = 0.0;  // localization branch loss (smooth L1 mean over positives)
};

// ---------------------------------------------------------------------------
// RoI align: continuous-coordinate pooling, no rounding. Each output bin is
// sampled at a 2x2 grid (bin fractions 1/4 and 3/4) and averaged; samples
// interpolate bilinearly with the feature value f[h][w] located at pixel
// center (h+0.5, w+0.5), edges clamped.
// ---------------------------------------------------------------------------
Tensor roi_align(const Tensor& feat, const Box& box, int out_size);
Tensor roi_align_backward(const Box& box, int out_size, int feat_h, int feat_w,
                          const Tensor& grad_out);
ad::Var roi_align(const ad::Var& feat, const Box& box, int out_size);

// ---------------------------------------------------------------------------
// Box delta coding: dx=(gx-px)/pw, dy=(gy-py)/ph, dw=ln(gw/pw), dh=ln(gh/ph).
// ---------------------------------------------------------------------------
Tensor encode_box_deltas(const Box& proposal, const Box& gt);
/// dw/dh are clamped to ln(1000/16) before exponentiating; the result is
/// clipped to [0,W]x[0,H] when bounds are given.
Box decode_box_deltas(const Box& proposal, const Tensor& deltas,
                      std::optional<std::pair<double, double>> bounds = std::nullopt);

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------
/// Mean over elements of: 0.5*d^2 for |d|<1, |d|-0.5 otherwise.
double smooth_l1(const Tensor& pred, const Tensor& target);
ad::Var smooth_l1(const ad::Var& pred, const Tensor& target);

/// log-sum-exp(logits) - logits[label]; label must index into the logits.
double cross_entropy(const Tensor& logits, int label);
ad::Var cross_entropy(const ad::Var& logits, int label);

/// L_fc = mean of cls_losses (all sampled proposals); L_conv = mean of
/// reg_losses (positives only, 0 when empty); total = w_fc*fc + w_conv*conv.
LossReport total_loss(const std::vector<double>& cls_losses, const std::vector<double>& reg_losses,
                      const HeadConfig& cfg);
ad::Var total_loss(const std::vector<ad::Var>& cls_losses, const std::vector<ad::Var>& reg_losses,
                   const HeadConfig& cfg);

/// The task-decoupled head: an FC classification branch and a convolutional
/// localization branch whose final conv output runs through the
/// multi-frequency channel attention before pooling to class-agnostic deltas.
class HeadModel {
 public:
  HeadModel(const HeadConfig& cfg, int in_channels, dct::DctBasis basis,
            dct::FrequencyGroups groups, ParamStore& store, Rng& rng,
            const std::string& prefix = "head");

  const HeadConfig& config() const { return cfg_; }

  /// Raw logits over num_classes+1 (background last).
  ad::Var fc_classification_branch(const ad::Var& roi) const;

  /// (dx, dy, dw, dh). With identity_attention the multi-frequency block is
  /// replaced by all-ones weights, i.e. the plain conv branch.
  ad::Var conv_localization_branch(const ad::Var& roi, bool identity_attention = false) const;

  int background_class() const { return cfg_.num_classes; }

 private:
  HeadConfig cfg_;
  int in_channels_;
  dct::DctBasis basis_;
  dct::FrequencyGroups groups_;
  std::vector<ad::Var> conv_w_, conv_b_;  // localization conv stack
  ad::Var att_fc_w_, att_fc_b_;           // attention FC (C -> C)
  ad::Var loc_w_, loc_b_;                 // pooled features -> 4 deltas
  std::vector<ad::Var> cls_w_, cls_b_;    // classification FC stack
};

}  // namespace ctdnet::head
