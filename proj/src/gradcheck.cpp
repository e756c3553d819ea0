#include "ctdnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>

#include "ctdnet/rng.hpp"

namespace ctdnet {

void collect_relu_signs(const ad::Var& root, std::vector<signed char>& signs) {
  ad::visit(root, [&signs](const ad::Node& n) {
    if (std::strcmp(n.op, "relu") != 0) return;
    const Tensor& pre = n.parents[0]->value;
    for (std::int64_t i = 0; i < pre.size(); ++i) {
      signs.push_back(pre[i] > 0.0 ? 1 : 0);
    }
  });
}

DiffOp graph_diff_op(std::string name,
                     std::function<ad::Var(const std::vector<ad::Var>&)> build) {
  DiffOp op;
  op.name = std::move(name);
  op.forward = [build](const std::vector<Tensor>& inputs) {
    std::vector<ad::Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(ad::constant(t));
    return build(leaves)->value;
  };
  op.forward_signed = [build](const std::vector<Tensor>& inputs,
                              std::vector<signed char>* signs) {
    std::vector<ad::Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(ad::constant(t));
    ad::Var out = build(leaves);
    if (signs) collect_relu_signs(out, *signs);
    return out->value;
  };
  op.backward = [build](const std::vector<Tensor>& inputs, const Tensor& grad_out) {
    std::vector<ad::Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(ad::parameter(t));
    ad::Var out = build(leaves);
    ad::backward(out, grad_out);
    std::vector<Tensor> grads;
    grads.reserve(leaves.size());
    for (const auto& l : leaves) {
      grads.push_back(l->has_grad() ? l->grad : Tensor::zeros_like(l->value));
    }
    return grads;
  };
  return op;
}

namespace {

double projected(const Tensor& y, const Tensor& proj) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < y.size(); ++i) acc += y[i] * proj[i];
  return acc;
}

double rel_err(double a, double n) {
  return std::fabs(a - n) / std::max({1.0, std::fabs(a), std::fabs(n)});
}

}  // namespace

GradCheckResult grad_check(const DiffOp& op, const std::vector<Tensor>& inputs, double tol,
                           const GradCheckOptions& opts) {
  GradCheckResult res;
  res.op = op.name;
  res.max_rel_err.assign(inputs.size(), 0.0);

  Rng rng(mix64(opts.seed));
  const Tensor y0 = op.forward(inputs);
  Tensor proj = Tensor::zeros_like(y0);
  for (std::int64_t i = 0; i < proj.size(); ++i) proj[i] = rng.uniform(-1.0, 1.0);

  const std::vector<Tensor> analytic = op.backward(inputs, proj);
  for (size_t k = 0; k < analytic.size(); ++k) {
    if (!analytic[k].all_finite()) {
      res.detail = "non-finite analytic gradient for input " + std::to_string(k);
      res.worst = std::numeric_limits<double>::infinity();
      return res;
    }
  }

  std::vector<Tensor> work = inputs;
  const double h = opts.step;
  std::vector<signed char> signs_p, signs_m;
  for (size_t k = 0; k < work.size(); ++k) {
    const std::int64_t n = work[k].size();
    std::vector<std::int64_t> probes(static_cast<size_t>(n));
    std::iota(probes.begin(), probes.end(), 0);
    if (opts.max_probes_per_input > 0 && n > opts.max_probes_per_input) {
      // Deterministic subsample for large composite inputs.
      for (size_t i = 0; i + 1 < probes.size(); ++i) {
        std::swap(probes[i], probes[i + rng.next_u64() % (probes.size() - i)]);
      }
      probes.resize(static_cast<size_t>(opts.max_probes_per_input));
    }
    for (std::int64_t idx : probes) {
      ++res.probes;
      const double saved = work[k][idx];
      double fp, fm;
      if (op.forward_signed) {
        signs_p.clear();
        signs_m.clear();
        work[k][idx] = saved + h;
        fp = projected(op.forward_signed(work, &signs_p), proj);
        work[k][idx] = saved - h;
        fm = projected(op.forward_signed(work, &signs_m), proj);
        work[k][idx] = saved;
        if (signs_p != signs_m) {
          ++res.skipped_kinks;
          continue;
        }
      } else {
        work[k][idx] = saved + h;
        fp = projected(op.forward(work), proj);
        work[k][idx] = saved - h;
        fm = projected(op.forward(work), proj);
        work[k][idx] = saved;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][idx];
      if (!std::isfinite(numeric)) {
        res.detail = "non-finite numeric gradient for input " + std::to_string(k) + " element " +
                     std::to_string(idx);
        res.worst = std::numeric_limits<double>::infinity();
        return res;
      }
      const double e = rel_err(a, numeric);
      if (e > res.max_rel_err[k]) res.max_rel_err[k] = e;
    }
    res.worst = std::max(res.worst, res.max_rel_err[k]);
  }
  res.pass = res.worst <= tol;
  return res;
}

std::string format_report(const GradCheckResult& r) {
  char buf[256];
  if (!r.detail.empty()) {
    std::snprintf(buf, sizeof(buf), "[FAIL] %-28s %s", r.op.c_str(), r.detail.c_str());
  } else if (r.skipped_kinks > 0) {
    std::snprintf(buf, sizeof(buf), "[%s] %-28s max rel err %.3e (%d/%d probes at kinks skipped)",
                  r.pass ? "PASS" : "FAIL", r.op.c_str(), r.worst, r.skipped_kinks, r.probes);
  } else {
    std::snprintf(buf, sizeof(buf), "[%s] %-28s max rel err %.3e", r.pass ? "PASS" : "FAIL",
                  r.op.c_str(), r.worst);
  }
  return buf;
}

}  // namespace ctdnet
