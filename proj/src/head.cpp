#include "ctdnet/head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ctdnet/ops.hpp"

namespace ctdnet::head {

GroupNumber group_number_from_string(const std::string& name) {
  if (name == "c4f2") return GroupNumber::kC4F2;
  if (name == "c6f4") return GroupNumber::kC6F4;
  throw std::invalid_argument("group_number must be c4f2 or c6f4, got '" + name + "'");
}

std::string to_string(GroupNumber g) { return g == GroupNumber::kC4F2 ? "c4f2" : "c6f4"; }

void HeadConfig::validate() const {
  if (loss_weight_fc < 0.0 || loss_weight_conv < 0.0) {
    throw std::invalid_argument("loss weights must be nonnegative");
  }
  if (roi_size < 1) throw std::invalid_argument("roi_size must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  if (fc_hidden < 1) throw std::invalid_argument("fc_hidden must be >= 1");
}

// ---------------------------------------------------------------------------
// RoI align
// ---------------------------------------------------------------------------

namespace {

struct Sample {
  int y0, y1, x0, x1;
  double w00, w01, w10, w11;
};

// Bilinear weights at continuous point (sy, sx); f[h][w] sits at (h+.5, w+.5).
Sample sample_at(double sy, double sx, int h, int w) {
  const double uy = sy - 0.5;
  const double ux = sx - 0.5;
  const double fy = std::floor(uy);
  const double fx = std::floor(ux);
  const double dy = uy - fy;
  const double dx = ux - fx;
  Sample s;
  s.y0 = std::clamp(static_cast<int>(fy), 0, h - 1);
  s.y1 = std::clamp(static_cast<int>(fy) + 1, 0, h - 1);
  s.x0 = std::clamp(static_cast<int>(fx), 0, w - 1);
  s.x1 = std::clamp(static_cast<int>(fx) + 1, 0, w - 1);
  s.w00 = (1.0 - dy) * (1.0 - dx);
  s.w01 = (1.0 - dy) * dx;
  s.w10 = dy * (1.0 - dx);
  s.w11 = dy * dx;
  return s;
}

void check_roi_args(const Tensor& feat, const Box& box, int out_size) {
  if (feat.rank() != 3) throw std::invalid_argument("roi_align: feature must be [C,H,W]");
  require_valid(box, "roi_align");
  if (out_size < 1) throw std::invalid_argument("roi_align: output size must be >= 1");
  const double h = feat.extent(1), w = feat.extent(2);
  if (box.x2 <= 0.0 || box.y2 <= 0.0 || box.x1 >= w || box.y1 >= h) {
    throw std::invalid_argument("roi_align: box does not intersect the feature extent");
  }
}

}  // namespace

Tensor roi_align(const Tensor& feat, const Box& box, int out_size) {
  check_roi_args(feat, box, out_size);
  const int c = feat.extent(0), h = feat.extent(1), w = feat.extent(2);
  const double bin_h = box.height() / out_size;
  const double bin_w = box.width() / out_size;
  Tensor out({c, out_size, out_size});
  for (int oy = 0; oy < out_size; ++oy) {
    for (int ox = 0; ox < out_size; ++ox) {
      for (int sy = 0; sy < 2; ++sy) {
        const double py = box.y1 + (oy + (sy + 0.5) / 2.0) * bin_h;
        for (int sx = 0; sx < 2; ++sx) {
          const double px = box.x1 + (ox + (sx + 0.5) / 2.0) * bin_w;
          const Sample s = sample_at(py, px, h, w);
          for (int ci = 0; ci < c; ++ci) {
            out.at(ci, oy, ox) += 0.25 * (s.w00 * feat.at(ci, s.y0, s.x0) +
                                          s.w01 * feat.at(ci, s.y0, s.x1) +
                                          s.w10 * feat.at(ci, s.y1, s.x0) +
                                          s.w11 * feat.at(ci, s.y1, s.x1));
          }
        }
      }
    }
  }
  return out;
}

Tensor roi_align_backward(const Box& box, int out_size, int feat_h, int feat_w,
                          const Tensor& grad_out) {
  const int c = grad_out.extent(0);
  const double bin_h = box.height() / out_size;
  const double bin_w = box.width() / out_size;
  Tensor dx({c, feat_h, feat_w});
  for (int oy = 0; oy < out_size; ++oy) {
    for (int ox = 0; ox < out_size; ++ox) {
      for (int sy = 0; sy < 2; ++sy) {
        const double py = box.y1 + (oy + (sy + 0.5) / 2.0) * bin_h;
        for (int sx = 0; sx < 2; ++sx) {
          const double px = box.x1 + (ox + (sx + 0.5) / 2.0) * bin_w;
          const Sample s = sample_at(py, px, feat_h, feat_w);
          for (int ci = 0; ci < c; ++ci) {
            const double g = 0.25 * grad_out.at(ci, oy, ox);
            dx.at(ci, s.y0, s.x0) += s.w00 * g;
            dx.at(ci, s.y0, s.x1) += s.w01 * g;
            dx.at(ci, s.y1, s.x0) += s.w10 * g;
            dx.at(ci, s.y1, s.x1) += s.w11 * g;
          }
        }
      }
    }
  }
  return dx;
}

ad::Var roi_align(const ad::Var& feat, const Box& box, int out_size) {
  Tensor y = roi_align(feat->value, box, out_size);
  const int h = feat->value.extent(1), w = feat->value.extent(2);
  return ad::make(std::move(y), {feat}, [feat, box, out_size, h, w](ad::Node& self) {
    feat->accumulate(roi_align_backward(box, out_size, h, w, self.grad));
  });
}

// ---------------------------------------------------------------------------
// box deltas
// ---------------------------------------------------------------------------

Tensor encode_box_deltas(const Box& proposal, const Box& gt) {
  require_valid(proposal, "encode_box_deltas proposal");
  require_valid(gt, "encode_box_deltas ground truth");
  Tensor d({4});
  d.at(0) = (gt.cx() - proposal.cx()) / proposal.width();
  d.at(1) = (gt.cy() - proposal.cy()) / proposal.height();
  d.at(2) = std::log(gt.width() / proposal.width());
  d.at(3) = std::log(gt.height() / proposal.height());
  return d;
}

Box decode_box_deltas(const Box& proposal, const Tensor& deltas,
                      std::optional<std::pair<double, double>> bounds) {
  require_valid(proposal, "decode_box_deltas proposal");
  if (deltas.size() != 4) {
    throw std::invalid_argument("decode_box_deltas: want 4 deltas, got " + deltas.shape_str());
  }
  const double max_log = std::log(1000.0 / 16.0);
  const double dx = deltas[0], dy = deltas[1];
  const double dw = std::min(deltas[2], max_log);
  const double dh = std::min(deltas[3], max_log);
  const double cx = proposal.cx() + dx * proposal.width();
  const double cy = proposal.cy() + dy * proposal.height();
  const double w = proposal.width() * std::exp(dw);
  const double h = proposal.height() * std::exp(dh);
  Box out{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  if (bounds) {
    const auto [bw, bh] = *bounds;
    out.x1 = std::clamp(out.x1, 0.0, bw);
    out.x2 = std::clamp(out.x2, 0.0, bw);
    out.y1 = std::clamp(out.y1, 0.0, bh);
    out.y2 = std::clamp(out.y2, 0.0, bh);
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

double smooth_l1(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) {
    throw std::invalid_argument("smooth_l1: pred shape " + pred.shape_str() +
                                " does not match target shape " + target.shape_str());
  }
  double acc = 0.0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    const double a = std::fabs(d);
    acc += a < 1.0 ? 0.5 * d * d : a - 0.5;
  }
  return acc / static_cast<double>(pred.size());
}

ad::Var smooth_l1(const ad::Var& pred, const Tensor& target) {
  const double loss = smooth_l1(pred->value, target);
  return ad::make(Tensor::scalar(loss), {pred}, [pred, target](ad::Node& self) {
    const double g = self.grad.item() / static_cast<double>(target.size());
    Tensor dp = Tensor::zeros_like(pred->value);
    for (std::int64_t i = 0; i < dp.size(); ++i) {
      const double d = pred->value[i] - target[i];
      dp[i] = g * (std::fabs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0));
    }
    pred->accumulate(dp);
  }, "smooth_l1");
}

double cross_entropy(const Tensor& logits, int label) {
  if (logits.rank() != 1) throw std::invalid_argument("cross_entropy: logits must be rank-1");
  const int k = logits.extent(0);
  if (label < 0 || label >= k) {
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                " out of range [0," + std::to_string(k) + ")");
  }
  double mx = logits[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += std::exp(logits[i] - mx);
  return mx + std::log(sum) - logits[label];
}

ad::Var cross_entropy(const ad::Var& logits, int label) {
  const double loss = cross_entropy(logits->value, label);
  return ad::make(Tensor::scalar(loss), {logits}, [logits, label](ad::Node& self) {
    const double g = self.grad.item();
    Tensor soft = ops::activation_forward(ops::Activation::kSoftmax, logits->value);
    soft[label] -= 1.0;
    for (std::int64_t i = 0; i < soft.size(); ++i) soft[i] *= g;
    logits->accumulate(soft);
  });
}

LossReport total_loss(const std::vector<double>& cls_losses, const std::vector<double>& reg_losses,
                      const HeadConfig& cfg) {
  LossReport r;
  if (!cls_losses.empty()) {
    double acc = 0.0;
    for (double v : cls_losses) acc += v;
    r.fc = acc / static_cast<double>(cls_losses.size());
  }
  if (!reg_losses.empty()) {
    double acc = 0.0;
    for (double v : reg_losses) acc += v;
    r.conv = acc / static_cast<double>(reg_losses.size());
  }
  r.total = cfg.loss_weight_fc * r.fc + cfg.loss_weight_conv * r.conv;
  return r;
}

ad::Var total_loss(const std::vector<ad::Var>& cls_losses, const std::vector<ad::Var>& reg_losses,
                   const HeadConfig& cfg) {
  ad::Var fc = cls_losses.empty() ? ad::constant(Tensor::scalar(0.0)) : ops::mean_of(cls_losses);
  ad::Var conv = reg_losses.empty() ? ad::constant(Tensor::scalar(0.0)) : ops::mean_of(reg_losses);
  return ops::add(ops::scale(fc, cfg.loss_weight_fc), ops::scale(conv, cfg.loss_weight_conv));
}

// ---------------------------------------------------------------------------
// the head model
// ---------------------------------------------------------------------------

HeadModel::HeadModel(const HeadConfig& cfg, int in_channels, dct::DctBasis basis,
                     dct::FrequencyGroups groups, ParamStore& store, Rng& rng,
                     const std::string& prefix)
    : cfg_(cfg), in_channels_(in_channels), basis_(std::move(basis)), groups_(groups) {
  cfg_.validate();
  if (groups_.channels != in_channels_) {
    throw std::invalid_argument("head: frequency groups cover " +
                                std::to_string(groups_.channels) + " channels, head input has " +
                                std::to_string(in_channels_));
  }
  auto name = [&prefix](const std::string& rest) { return prefix + "." + rest; };
  const int c = in_channels_;
  for (int i = 0; i < cfg_.conv_layers(); ++i) {
    const std::string cn = "conv" + std::to_string(i + 1) + ".";
    conv_w_.push_back(store.create_uniform(name(cn + "w"), {c, c, 3, 3}, c * 9, rng));
    conv_b_.push_back(store.create_uniform(name(cn + "b"), {c}, c * 9, rng));
  }
  att_fc_w_ = store.create_uniform(name("att.fc.w"), {c, c}, c, rng);
  att_fc_b_ = store.create_uniform(name("att.fc.b"), {c}, c, rng);
  loc_w_ = store.create_uniform(name("loc.w"), {4, c}, c, rng);
  loc_b_ = store.create_uniform(name("loc.b"), {4}, c, rng);

  const int flat = c * cfg_.roi_size * cfg_.roi_size;
  const int out_dim = cfg_.num_classes + 1;
  int d_in = flat;
  for (int i = 0; i < cfg_.fc_layers(); ++i) {
    const bool last = i + 1 == cfg_.fc_layers();
    const int d_out = last ? out_dim : cfg_.fc_hidden;
    const std::string fn = "fc" + std::to_string(i + 1) + ".";
    cls_w_.push_back(store.create_uniform(name(fn + "w"), {d_out, d_in}, d_in, rng));
    cls_b_.push_back(store.create_uniform(name(fn + "b"), {d_out}, d_in, rng));
    d_in = d_out;
  }
}

ad::Var HeadModel::fc_classification_branch(const ad::Var& roi) const {
  if (roi->value.rank() != 3 || roi->value.extent(0) != in_channels_ ||
      roi->value.extent(1) != cfg_.roi_size || roi->value.extent(2) != cfg_.roi_size) {
    throw std::invalid_argument("classification branch: RoI must be [" +
                                std::to_string(in_channels_) + "," +
                                std::to_string(cfg_.roi_size) + "," +
                                std::to_string(cfg_.roi_size) + "], got " +
                                roi->value.shape_str());
  }
  ad::Var x = ops::flatten(roi);
  for (size_t i = 0; i < cls_w_.size(); ++i) {
    x = ops::linear(x, cls_w_[i], cls_b_[i]);
    if (i + 1 < cls_w_.size()) x = ops::relu(x);
  }
  return x;
}

ad::Var HeadModel::conv_localization_branch(const ad::Var& roi, bool identity_attention) const {
  if (roi->value.rank() != 3 || roi->value.extent(0) != in_channels_) {
    throw std::invalid_argument("localization branch: RoI must have " +
                                std::to_string(in_channels_) + " channels, got " +
                                roi->value.shape_str());
  }
  ad::Var x = roi;
  for (size_t i = 0; i < conv_w_.size(); ++i) {
    x = ops::relu(ops::conv2d(x, conv_w_[i], conv_b_[i], 1, 1));
  }
  if (identity_attention) {
    x = dct::apply_channel_attention(x, ad::constant(Tensor::full({in_channels_}, 1.0)));
  } else {
    // The DCT pool runs at the basis resolution so frequency selection is
    // independent of the RoI size; the raw Eq.-style sum is rescaled by the
    // plane area before the FC (absorbable, keeps the sigmoid unsaturated).
    ad::Var pooled = x;
    if (x->value.extent(1) != basis_.height || x->value.extent(2) != basis_.width) {
      pooled = ops::resize(x, basis_.height, basis_.width);
    }
    ad::Var mf = dct::multi_frequency_pool(pooled, basis_, groups_);
    mf = ops::scale(mf, 1.0 / (static_cast<double>(basis_.height) * basis_.width));
    ad::Var weights = dct::attention_weights(mf, att_fc_w_, att_fc_b_);
    x = dct::apply_channel_attention(x, weights);
  }
  ad::Var pooled = ops::global_avg_pool(x);
  return ops::linear(pooled, loc_w_, loc_b_);
}

}  // namespace ctdnet::head
