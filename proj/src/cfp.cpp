#include "ctdnet/cfp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ctdnet/ops.hpp"

namespace ctdnet::cfp {

void CfpConfig::validate() const {
  if (stages < 2) throw std::invalid_argument("stages must be >= 2");
  if (unrolls < 1) throw std::invalid_argument("unrolls must be >= 1");
  if (channels < 1) throw std::invalid_argument("channels must be >= 1");
  if (gc_ratio < 1 || channels % gc_ratio != 0) {
    throw std::invalid_argument("gc_ratio must divide channels");
  }
  if (stem_stride < 1) throw std::invalid_argument("stem_stride must be >= 1");
}

int medium_level_index(int stages) { return (1 + stages) / 2; }

namespace {

// out[c] = sum_hw attn[hw] * x[c,hw], with attn a flattened spatial softmax.
ad::Var spatial_attention_pool(const ad::Var& x, const ad::Var& attn) {
  const int c = x->value.extent(0), h = x->value.extent(1), w = x->value.extent(2);
  if (attn->value.size() != static_cast<std::int64_t>(h) * w) {
    throw std::invalid_argument("spatial_attention_pool: attention length mismatch");
  }
  Tensor y({c});
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0.0;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) acc += attn->value[i * w + j] * x->value.at(ci, i, j);
    y.at(ci) = acc;
  }
  return ad::make(std::move(y), {x, attn}, [x, attn, c, h, w](ad::Node& self) {
    if (x->requires_grad) {
      Tensor dx = Tensor::zeros_like(x->value);
      for (int ci = 0; ci < c; ++ci) {
        const double g = self.grad.at(ci);
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) dx.at(ci, i, j) = g * attn->value[i * w + j];
      }
      x->accumulate(dx);
    }
    if (attn->requires_grad) {
      Tensor da = Tensor::zeros_like(attn->value);
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          double acc = 0.0;
          for (int ci = 0; ci < c; ++ci) acc += self.grad.at(ci) * x->value.at(ci, i, j);
          da[i * w + j] = acc;
        }
      }
      attn->accumulate(da);
    }
  });
}

// Layer normalization over a rank-1 vector with affine parameters.
ad::Var layer_norm(const ad::Var& x, const ad::Var& gamma, const ad::Var& beta) {
  const int n = x->value.extent(0);
  constexpr double kEps = 1e-5;
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += x->value.at(i);
  mean /= n;
  double var = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = x->value.at(i) - mean;
    var += d * d;
  }
  var /= n;
  const double inv_std = 1.0 / std::sqrt(var + kEps);
  Tensor xhat({n});
  Tensor y({n});
  for (int i = 0; i < n; ++i) {
    xhat.at(i) = (x->value.at(i) - mean) * inv_std;
    y.at(i) = gamma->value.at(i) * xhat.at(i) + beta->value.at(i);
  }
  return ad::make(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, xhat, inv_std, n](ad::Node& self) {
    if (beta->requires_grad) beta->accumulate(self.grad);
    Tensor dgamma({n});
    for (int i = 0; i < n; ++i) dgamma.at(i) = self.grad.at(i) * xhat.at(i);
    if (gamma->requires_grad) gamma->accumulate(dgamma);
    if (x->requires_grad) {
      // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
      Tensor dxhat({n});
      double m1 = 0.0, m2 = 0.0;
      for (int i = 0; i < n; ++i) {
        dxhat.at(i) = self.grad.at(i) * gamma->value.at(i);
        m1 += dxhat.at(i);
        m2 += dxhat.at(i) * xhat.at(i);
      }
      m1 /= n;
      m2 /= n;
      Tensor dx({n});
      for (int i = 0; i < n; ++i) dx.at(i) = inv_std * (dxhat.at(i) - m1 - xhat.at(i) * m2);
      x->accumulate(dx);
    }
  });
}

}  // namespace

CfpModel::CfpModel(const CfpConfig& cfg, ParamStore& store, Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  const int s = cfg_.stages;
  const int c = cfg_.channels;
  const int slots = cfg_.share_unroll_params ? 1 : cfg_.unrolls;
  auto name = [&prefix](const std::string& rest) { return prefix + "." + rest; };

  stages_.resize(static_cast<size_t>(slots));
  fpn_.resize(static_cast<size_t>(slots));
  feedback_.resize(static_cast<size_t>(slots));
  for (int u = 0; u < slots; ++u) {
    const std::string un = "u" + std::to_string(u) + ".";
    for (int i = 0; i < s; ++i) {
      StageParams sp;
      const int in_ch = i == 0 ? 3 : c;
      const int k = i == 0 ? 5 : 3;
      const std::string sn = un + "stage" + std::to_string(i + 1) + ".";
      sp.down_w = store.create_uniform(name(sn + "down.w"), {c, in_ch, k, k}, in_ch * k * k, rng);
      sp.down_b = store.create_uniform(name(sn + "down.b"), {c}, in_ch * k * k, rng);
      sp.conv_w = store.create_uniform(name(sn + "conv.w"), {c, c, 3, 3}, c * 9, rng);
      sp.conv_b = store.create_uniform(name(sn + "conv.b"), {c}, c * 9, rng);
      stages_[u].push_back(sp);
    }
    for (int i = 0; i < s; ++i) {
      const std::string ln = un + "fpn.lat" + std::to_string(i + 1) + ".";
      fpn_[u].lateral_w.push_back(store.create_uniform(name(ln + "w"), {c, c, 1, 1}, c, rng));
      fpn_[u].lateral_b.push_back(store.create_uniform(name(ln + "b"), {c}, c, rng));
    }
    for (int i = 0; i + 1 < s; ++i) {
      const std::string sn = un + "fpn.smooth" + std::to_string(i + 1) + ".";
      fpn_[u].smooth_w.push_back(store.create_uniform(name(sn + "w"), {c, c, 3, 3}, c * 9, rng));
      fpn_[u].smooth_b.push_back(store.create_uniform(name(sn + "b"), {c}, c * 9, rng));
    }
    // Slot 0 carries feedback parameters only when sharing is on (the shared
    // set serves unrolls n >= 2); distinct slots skip the unused first set.
    if (u > 0 || (cfg_.share_unroll_params && cfg_.unrolls > 1)) {
      for (int i = 0; i < s; ++i) {
        const int in_ch = i == 0 ? 3 : c;
        const std::string fn = un + "fb" + std::to_string(i + 1) + ".";
        feedback_[u].w.push_back(store.create_uniform(name(fn + "w"), {in_ch, c, 1, 1}, c, rng));
        feedback_[u].b.push_back(store.create_uniform(name(fn + "b"), {in_ch}, c, rng));
      }
    }
  }

  const int cb = std::max(1, c / cfg_.gc_ratio);
  gc_key_w_ = store.create_uniform(name("gc.key.w"), {1, c, 1, 1}, c, rng);
  gc_key_b_ = store.create_uniform(name("gc.key.b"), {1}, c, rng);
  gc_t1_w_ = store.create_uniform(name("gc.t1.w"), {cb, c}, c, rng);
  gc_t1_b_ = store.create_uniform(name("gc.t1.b"), {cb}, c, rng);
  gc_ln_gamma_ = store.create_const(name("gc.ln.gamma"), {cb}, 1.0);
  gc_ln_beta_ = store.create_const(name("gc.ln.beta"), {cb}, 0.0);
  gc_t2_w_ = store.create_uniform(name("gc.t2.w"), {c, cb}, cb, rng);
  gc_t2_b_ = store.create_uniform(name("gc.t2.b"), {c}, cb, rng);
}

std::vector<ad::Var> CfpModel::backbone_forward(const ad::Var& image,
                                                const std::vector<ad::Var>* feedback,
                                                int unroll) const {
  if (image->value.rank() != 3 || image->value.extent(0) != 3) {
    throw std::invalid_argument("backbone: image must be [3,H,W], got " +
                                image->value.shape_str());
  }
  if (feedback && static_cast<int>(feedback->size()) != cfg_.stages) {
    throw std::invalid_argument("backbone: feedback must provide one tensor per stage");
  }
  const auto& params = stages_[static_cast<size_t>(unroll_slot(unroll))];
  std::vector<ad::Var> out;
  out.reserve(static_cast<size_t>(cfg_.stages));
  ad::Var x = image;
  for (int i = 0; i < cfg_.stages; ++i) {
    if (feedback) {
      const ad::Var& fb = (*feedback)[static_cast<size_t>(i)];
      if (!fb->value.same_shape(x->value)) {
        throw std::invalid_argument("backbone: feedback for stage " + std::to_string(i + 1) +
                                    " has shape " + fb->value.shape_str() + ", stage input is " +
                                    x->value.shape_str());
      }
      x = ops::add(x, fb);
    }
    const auto& sp = params[static_cast<size_t>(i)];
    const int stride = i == 0 ? cfg_.stem_stride : 2;
    const int pad = i == 0 ? 2 : 1;
    x = ops::relu(ops::conv2d(x, sp.down_w, sp.down_b, stride, pad));
    x = ops::relu(ops::conv2d(x, sp.conv_w, sp.conv_b, 1, 1));
    out.push_back(x);
  }
  return out;
}

std::vector<ad::Var> CfpModel::top_down_merge(const std::vector<ad::Var>& stages,
                                              int unroll) const {
  if (static_cast<int>(stages.size()) != cfg_.stages) {
    throw std::invalid_argument("top_down_merge: expected " + std::to_string(cfg_.stages) +
                                " stage features, got " + std::to_string(stages.size()));
  }
  const auto& p = fpn_[static_cast<size_t>(unroll_slot(unroll))];
  const int s = cfg_.stages;
  std::vector<ad::Var> levels(static_cast<size_t>(s));
  levels[s - 1] = ops::conv2d(stages[s - 1], p.lateral_w[s - 1], p.lateral_b[s - 1], 1, 0);
  for (int i = s - 2; i >= 0; --i) {
    ad::Var lat = ops::conv2d(stages[i], p.lateral_w[i], p.lateral_b[i], 1, 0);
    ad::Var up = ops::resize(levels[i + 1], lat->value.extent(1), lat->value.extent(2));
    levels[i] = ops::conv2d(ops::add(lat, up), p.smooth_w[i], p.smooth_b[i], 1, 1);
  }
  return levels;
}

FeaturePyramid CfpModel::horizontal_transmission(const ad::Var& image) const {
  FeaturePyramid prev;
  for (int n = 0; n < cfg_.unrolls; ++n) {
    std::vector<ad::Var> fb;
    std::vector<ad::Var>* fb_ptr = nullptr;
    if (n >= 1) {
      const auto& p = feedback_[static_cast<size_t>(unroll_slot(n))];
      fb.reserve(static_cast<size_t>(cfg_.stages));
      for (int i = 0; i < cfg_.stages; ++i) {
        const Tensor& input_shape =
            i == 0 ? image->value : prev.stages[static_cast<size_t>(i - 1)]->value;
        ad::Var proj = ops::conv2d(prev.levels[static_cast<size_t>(i)], p.w[i], p.b[i], 1, 0);
        fb.push_back(ops::resize(proj, input_shape.extent(1), input_shape.extent(2)));
      }
      fb_ptr = &fb;
    }
    FeaturePyramid cur;
    cur.stages = backbone_forward(image, fb_ptr, n);
    cur.levels = top_down_merge(cur.stages, n);
    prev = std::move(cur);
  }
  return prev;
}

BalancedFeature balance_levels(const FeaturePyramid& pyramid) {
  const int s = pyramid.level_count();
  if (s < 2) throw std::invalid_argument("balance_levels: pyramid needs at least 2 levels");
  const int medium = medium_level_index(s);
  const Tensor& mid = pyramid.levels[static_cast<size_t>(medium - 1)]->value;
  const int th = mid.extent(1), tw = mid.extent(2);
  std::vector<ad::Var> resized;
  resized.reserve(static_cast<size_t>(s));
  for (const auto& level : pyramid.levels) {
    resized.push_back(ops::resize(level, th, tw));
  }
  BalancedFeature out;
  out.value = ops::scale(ops::add_n(resized), 1.0 / s);
  out.medium_level = medium;
  out.r_min = 1;
  out.r_max = s;
  return out;
}

ad::Var CfpModel::global_context_refine(const ad::Var& balanced) const {
  ad::Var key = ops::conv2d(balanced, gc_key_w_, gc_key_b_, 1, 0);  // [1,H,W]
  ad::Var attn = ops::softmax(ops::flatten(key));
  ad::Var context = spatial_attention_pool(balanced, attn);
  ad::Var t = ops::linear(context, gc_t1_w_, gc_t1_b_);
  t = layer_norm(t, gc_ln_gamma_, gc_ln_beta_);
  t = ops::relu(t);
  t = ops::linear(t, gc_t2_w_, gc_t2_b_);
  return ops::add_channel_bias(balanced, t);
}

FeaturePyramid redistribute_levels(const FeaturePyramid& pyramid, const ad::Var& refined) {
  FeaturePyramid out;
  out.stages = pyramid.stages;
  out.levels.reserve(pyramid.levels.size());
  for (const auto& level : pyramid.levels) {
    ad::Var up = ops::resize(refined, level->value.extent(1), level->value.extent(2));
    out.levels.push_back(ops::add(level, up));
  }
  return out;
}

FeaturePyramid CfpModel::cfp_forward(const ad::Var& image) const {
  FeaturePyramid pyramid = horizontal_transmission(image);
  BalancedFeature balanced = balance_levels(pyramid);
  ad::Var refined = global_context_refine(balanced.value);
  return redistribute_levels(pyramid, refined);
}

}  // namespace ctdnet::cfp
