#include <functional>
#include <memory>

#include "ctdnet/harness.hpp"
#include "ctdnet/ops.hpp"
#include "ctdnet/rng.hpp"

// The finite-difference suite behind the `gradcheck` subcommand and the
// acceptance gate: every kernel, the attention block, and the three big
// compositions (both head branches to their losses, the whole pyramid).

namespace ctdnet::harness {

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Uniform in [-1,-margin] u [margin,1]; keeps relu/|.| kinks out of the
// central-difference window for the single-op checks.
Tensor rand_away_from_zero(std::vector<int> shape, Rng& rng, double margin) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const double u = rng.uniform(-1.0, 1.0);
    t[i] = u >= 0.0 ? margin + u * (1.0 - margin) : -margin + u * (1.0 - margin);
  }
  return t;
}

// Flattened concatenation; lets one DiffOp cover every pyramid level.
ad::Var concat_flat(const std::vector<ad::Var>& parts) {
  std::int64_t total = 0;
  for (const auto& p : parts) total += p->value.size();
  Tensor y({static_cast<int>(total)});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    for (std::int64_t i = 0; i < p->value.size(); ++i) y[off + i] = p->value[i];
    off += p->value.size();
  }
  return ad::make(std::move(y), parts, [parts](ad::Node& self) {
    std::int64_t off = 0;
    for (const auto& p : parts) {
      if (p->requires_grad) {
        Tensor g = Tensor::zeros_like(p->value);
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = self.grad[off + i];
        p->accumulate(g);
      }
      off += p->value.size();
    }
  });
}

// DiffOp over a parameter store plus one leaf input: inputs[0] is the leaf,
// inputs[1..] bind the store's parameters in order. Runs the real model code.
DiffOp model_op(std::string name, std::shared_ptr<ParamStore> store,
                std::function<ad::Var(const ad::Var&)> run) {
  auto assign = [store](const std::vector<Tensor>& inputs) {
    const auto& items = store->items();
    if (inputs.size() != items.size() + 1) {
      throw std::logic_error("model_op: input count mismatch");
    }
    for (size_t i = 0; i < items.size(); ++i) items[i].second->value = inputs[i + 1];
  };
  DiffOp op;
  op.name = std::move(name);
  op.forward = [assign, run](const std::vector<Tensor>& inputs) {
    assign(inputs);
    return run(ad::constant(inputs[0]))->value;
  };
  op.forward_signed = [assign, run](const std::vector<Tensor>& inputs,
                                    std::vector<signed char>* signs) {
    assign(inputs);
    ad::Var out = run(ad::constant(inputs[0]));
    if (signs) collect_relu_signs(out, *signs);
    return out->value;
  };
  op.backward = [store, assign, run](const std::vector<Tensor>& inputs, const Tensor& grad_out) {
    assign(inputs);
    store->zero_grads();
    ad::Var leaf = ad::parameter(inputs[0]);
    ad::Var out = run(leaf);
    ad::backward(out, grad_out);
    std::vector<Tensor> grads;
    grads.push_back(leaf->has_grad() ? leaf->grad : Tensor::zeros_like(leaf->value));
    for (const auto& [n, v] : store->items()) {
      grads.push_back(v->has_grad() ? v->grad : Tensor::zeros_like(v->value));
    }
    return grads;
  };
  return op;
}

std::vector<Tensor> draw_model_inputs(const ParamStore& store, const Tensor& leaf, Rng& rng,
                                      double param_scale) {
  std::vector<Tensor> inputs;
  inputs.reserve(store.items().size() + 1);
  inputs.push_back(leaf);
  for (const auto& [n, v] : store.items()) {
    inputs.push_back(rand_tensor(v->value.shape(), rng, -param_scale, param_scale));
  }
  return inputs;
}

void merge(std::vector<GradCheckResult>& agg, const GradCheckResult& r) {
  for (auto& a : agg) {
    if (a.op == r.op) {
      a.worst = std::max(a.worst, r.worst);
      a.pass = a.pass && r.pass;
      a.probes += r.probes;
      a.skipped_kinks += r.skipped_kinks;
      if (a.detail.empty()) a.detail = r.detail;
      for (size_t i = 0; i < a.max_rel_err.size() && i < r.max_rel_err.size(); ++i) {
        a.max_rel_err[i] = std::max(a.max_rel_err[i], r.max_rel_err[i]);
      }
      return;
    }
  }
  agg.push_back(r);
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(int seeds, double tol) {
  std::vector<GradCheckResult> agg;

  for (int s = 0; s < seeds; ++s) {
    Rng rng(mix64(0xC0DEULL + static_cast<std::uint64_t>(s) * 7919ULL));
    GradCheckOptions small;
    small.seed = mix64(static_cast<std::uint64_t>(s));
    GradCheckOptions big = small;
    big.max_probes_per_input = 6;

    // --- kernels ---------------------------------------------------------
    merge(agg, grad_check(
        graph_diff_op("conv2d_s1p1", [](const std::vector<ad::Var>& in) {
          return ops::conv2d(in[0], in[1], in[2], 1, 1);
        }),
        {rand_tensor({3, 6, 6}, rng), rand_tensor({4, 3, 3, 3}, rng), rand_tensor({4}, rng)},
        tol, small));

    merge(agg, grad_check(
        graph_diff_op("conv2d_s2p0", [](const std::vector<ad::Var>& in) {
          return ops::conv2d(in[0], in[1], in[2], 2, 0);
        }),
        {rand_tensor({3, 7, 7}, rng), rand_tensor({2, 3, 3, 3}, rng), rand_tensor({2}, rng)},
        tol, small));

    merge(agg, grad_check(
        graph_diff_op("conv2d_2x2", [](const std::vector<ad::Var>& in) {
          return ops::conv2d(in[0], in[1], in[2], 1, 0);
        }),
        {rand_tensor({1, 4, 4}, rng), rand_tensor({1, 1, 2, 2}, rng), rand_tensor({1}, rng)},
        tol, small));

    merge(agg, grad_check(
        graph_diff_op("linear", [](const std::vector<ad::Var>& in) {
          return ops::linear(in[0], in[1], in[2]);
        }),
        {rand_tensor({12}, rng), rand_tensor({8, 12}, rng), rand_tensor({8}, rng)}, tol, small));

    merge(agg, grad_check(
        graph_diff_op("linear_4x3", [](const std::vector<ad::Var>& in) {
          return ops::linear(in[0], in[1], in[2]);
        }),
        {rand_tensor({3}, rng), rand_tensor({4, 3}, rng), rand_tensor({4}, rng)}, tol, small));

    merge(agg, grad_check(
        graph_diff_op("relu", [](const std::vector<ad::Var>& in) { return ops::relu(in[0]); }),
        {rand_away_from_zero({40}, rng, 0.05)}, tol, small));

    merge(agg, grad_check(
        graph_diff_op("sigmoid",
                      [](const std::vector<ad::Var>& in) { return ops::sigmoid(in[0]); }),
        {rand_tensor({40}, rng)}, tol, small));

    merge(agg, grad_check(
        graph_diff_op("softmax",
                      [](const std::vector<ad::Var>& in) { return ops::softmax(in[0]); }),
        {rand_tensor({9}, rng)}, tol, small));

    merge(agg, grad_check(
        graph_diff_op("bilinear_resize_up", [](const std::vector<ad::Var>& in) {
          return ops::resize(in[0], 8, 9);
        }),
        {rand_tensor({2, 5, 7}, rng)}, tol, small));

    merge(agg, grad_check(
        graph_diff_op("bilinear_resize_down", [](const std::vector<ad::Var>& in) {
          return ops::resize(in[0], 3, 4);
        }),
        {rand_tensor({2, 7, 6}, rng)}, tol, small));

    merge(agg, grad_check(
        graph_diff_op("global_avg_pool", [](const std::vector<ad::Var>& in) {
          return ops::global_avg_pool(in[0]);
        }),
        {rand_tensor({3, 5, 5}, rng)}, tol, small));

    // --- dct attention ----------------------------------------------------
    {
      const auto basis = dct::build_dct_basis(7, 7, dct::default_freq_indices(4, 7, 7));
      const auto groups = dct::make_frequency_groups(4, 4);
      merge(agg, grad_check(
          graph_diff_op("multi_frequency_pool", [basis, groups](const std::vector<ad::Var>& in) {
            return dct::multi_frequency_pool(in[0], basis, groups);
          }),
          {rand_tensor({4, 7, 7}, rng)}, tol, small));

      merge(agg, grad_check(
          graph_diff_op("dct_attention_block", [basis, groups](const std::vector<ad::Var>& in) {
            ad::Var mf = dct::multi_frequency_pool(in[0], basis, groups);
            mf = ops::scale(mf, 1.0 / 49.0);
            ad::Var w = dct::attention_weights(mf, in[1], in[2]);
            return dct::apply_channel_attention(in[0], w);
          }),
          {rand_tensor({4, 7, 7}, rng), rand_tensor({4, 4}, rng), rand_tensor({4}, rng)}, tol,
          small));
    }

    merge(agg, grad_check(
        graph_diff_op("apply_channel_attention", [](const std::vector<ad::Var>& in) {
          return dct::apply_channel_attention(in[0], in[1]);
        }),
        {rand_tensor({3, 4, 4}, rng), rand_tensor({3}, rng)}, tol, small));

    merge(agg, grad_check(
        graph_diff_op("attention_weights", [](const std::vector<ad::Var>& in) {
          return dct::attention_weights(in[0], in[1], in[2]);
        }),
        {rand_tensor({6}, rng), rand_tensor({6, 6}, rng), rand_tensor({6}, rng)}, tol, small));

    // --- head pieces -------------------------------------------------------
    merge(agg, grad_check(
        graph_diff_op("roi_align", [](const std::vector<ad::Var>& in) {
          return head::roi_align(in[0], Box{1.3, 0.7, 6.9, 7.4}, 5);
        }),
        {rand_tensor({3, 8, 8}, rng)}, tol, small));

    {
      // Half the residuals in the quadratic region, half linear; both sides
      // clear of the |d|=1 knee.
      Tensor pred({6});
      Tensor target({6});
      for (int i = 0; i < 6; ++i) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        pred[i] = i < 3 ? sign * rng.uniform(0.05, 0.8) : sign * rng.uniform(1.2, 2.5);
      }
      merge(agg, grad_check(
          graph_diff_op("smooth_l1", [target](const std::vector<ad::Var>& in) {
            return head::smooth_l1(in[0], target);
          }),
          {pred}, tol, small));
    }

    merge(agg, grad_check(
        graph_diff_op("cross_entropy", [](const std::vector<ad::Var>& in) {
          return head::cross_entropy(in[0], 2);
        }),
        {rand_tensor({5}, rng)}, tol, small));

    // --- end-to-end branches (RoI input -> loss) ---------------------------
    {
      auto store = std::make_shared<ParamStore>();
      head::HeadConfig hc;
      hc.num_classes = 3;
      hc.fc_hidden = 16;
      auto basis = dct::build_dct_basis(7, 7, dct::default_freq_indices(4, 7, 7));
      auto groups = dct::make_frequency_groups(4, 4);
      Rng init(mix64(0xAB1E));
      auto model = std::make_shared<head::HeadModel>(hc, 4, basis, groups, *store, init);

      const Tensor roi = rand_tensor({4, 7, 7}, rng);
      auto cls_inputs = draw_model_inputs(*store, roi, rng, 0.3);
      merge(agg, grad_check(model_op("fc_classification_branch", store,
                                     [model](const ad::Var& x) {
                                       return head::cross_entropy(
                                           model->fc_classification_branch(x), 1);
                                     }),
                            cls_inputs, tol, big));

      // Regression target placed a safe distance from the smooth-L1 knee,
      // relative to this draw's base output.
      auto loc_inputs = draw_model_inputs(*store, roi, rng, 0.3);
      const auto& items = store->items();
      for (size_t i = 0; i < items.size(); ++i) items[i].second->value = loc_inputs[i + 1];
      const Tensor base = model->conv_localization_branch(ad::constant(roi))->value;
      Tensor target({4});
      const double offs[4] = {0.35, -0.3, 0.4, -0.45};
      for (int i = 0; i < 4; ++i) target[i] = base[i] - offs[i];
      merge(agg, grad_check(model_op("conv_localization_branch", store,
                                     [model, target](const ad::Var& x) {
                                       return head::smooth_l1(
                                           model->conv_localization_branch(x), target);
                                     }),
                            loc_inputs, tol, big));
    }

    // --- the whole pyramid --------------------------------------------------
    {
      auto store = std::make_shared<ParamStore>();
      cfp::CfpConfig cc;
      cc.stages = 3;
      cc.unrolls = 2;
      cc.channels = 4;
      cc.gc_ratio = 4;
      Rng init(mix64(0xCF9));
      auto model = std::make_shared<cfp::CfpModel>(cc, *store, init);
      const Tensor image = rand_tensor({3, 16, 16}, rng);
      auto inputs = draw_model_inputs(*store, image, rng, 0.3);
      merge(agg, grad_check(model_op("cfp_forward", store,
                                     [model](const ad::Var& x) {
                                       auto pyramid = model->cfp_forward(x);
                                       return concat_flat(pyramid.levels);
                                     }),
                            inputs, tol, big));
    }
  }
  return agg;
}

}  // namespace ctdnet::harness
