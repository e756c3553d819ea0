#include "ctdnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ctdnet::ops {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "softmax") return Activation::kSoftmax;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  require(x.rank() == 3, "conv2d: input must be [C,H,W], got " + x.shape_str());
  require(w.rank() == 4, "conv2d: weight must be [C_out,C_in,kH,kW], got " + w.shape_str());
  const int c_in = x.extent(0), h = x.extent(1), wdt = x.extent(2);
  const int c_out = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  require(w.extent(1) == c_in, "conv2d: weight C_in=" + std::to_string(w.extent(1)) +
                                   " does not match input channels=" + std::to_string(c_in));
  require(b.rank() == 1 && b.extent(0) == c_out,
          "conv2d: bias must be [C_out]=" + std::to_string(c_out) + ", got " + b.shape_str());
  require(stride >= 1, "conv2d: stride must be positive");
  require(pad >= 0, "conv2d: pad must be nonnegative");
  require(kh <= h + 2 * pad, "conv2d: kernel height " + std::to_string(kh) +
                                 " exceeds padded input height " + std::to_string(h + 2 * pad));
  require(kw <= wdt + 2 * pad, "conv2d: kernel width " + std::to_string(kw) +
                                   " exceeds padded input width " + std::to_string(wdt + 2 * pad));

  const int out_h = (h + 2 * pad - kh) / stride + 1;
  const int out_w = (wdt + 2 * pad - kw) / stride + 1;
  Tensor y({c_out, out_h, out_w});
  for (int co = 0; co < c_out; ++co) {
    const double bias = b.at(co);
    for (int oy = 0; oy < out_h; ++oy) {
      const int iy0 = oy * stride - pad;
      for (int ox = 0; ox < out_w; ++ox) {
        const int ix0 = ox * stride - pad;
        double acc = bias;
        for (int ci = 0; ci < c_in; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= wdt) continue;
              acc += x.at(ci, iy, ix) * w.at(co, ci, ky, kx);
            }
          }
        }
        y.at(co, oy, ox) = acc;
      }
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, int stride, int pad,
                          const Tensor& grad_out) {
  const int c_in = x.extent(0), h = x.extent(1), wdt = x.extent(2);
  const int c_out = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const int out_h = grad_out.extent(1), out_w = grad_out.extent(2);

  ConvGrads g;
  g.dx = Tensor::zeros_like(x);
  g.dw = Tensor::zeros_like(w);
  g.db = Tensor({c_out});
  for (int co = 0; co < c_out; ++co) {
    double db = 0.0;
    for (int oy = 0; oy < out_h; ++oy) {
      const int iy0 = oy * stride - pad;
      for (int ox = 0; ox < out_w; ++ox) {
        const int ix0 = ox * stride - pad;
        const double go = grad_out.at(co, oy, ox);
        db += go;
        if (go == 0.0) continue;
        for (int ci = 0; ci < c_in; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= wdt) continue;
              g.dx.at(ci, iy, ix) += w.at(co, ci, ky, kx) * go;
              g.dw.at(co, ci, ky, kx) += x.at(ci, iy, ix) * go;
            }
          }
        }
      }
    }
    g.db.at(co) = db;
  }
  return g;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 1, "linear: input must be rank-1, got " + x.shape_str());
  require(w.rank() == 2, "linear: weight must be [D_out,D_in], got " + w.shape_str());
  const int d_in = x.extent(0), d_out = w.extent(0);
  require(w.extent(1) == d_in, "linear: weight D_in=" + std::to_string(w.extent(1)) +
                                   " does not match input size=" + std::to_string(d_in));
  require(b.rank() == 1 && b.extent(0) == d_out,
          "linear: bias must be [D_out]=" + std::to_string(d_out) + ", got " + b.shape_str());

  Tensor y({d_out});
  for (int j = 0; j < d_out; ++j) {
    double acc = b.at(j);
    for (int k = 0; k < d_in; ++k) acc += w.at(j, k) * x.at(k);
    y.at(j) = acc;
  }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out) {
  const int d_in = x.extent(0), d_out = w.extent(0);
  LinearGrads g;
  g.dx = Tensor({d_in});
  g.dw = Tensor::zeros_like(w);
  g.db = grad_out;
  for (int k = 0; k < d_in; ++k) {
    double acc = 0.0;
    for (int j = 0; j < d_out; ++j) acc += w.at(j, k) * grad_out.at(j);
    g.dx.at(k) = acc;
  }
  for (int j = 0; j < d_out; ++j) {
    const double go = grad_out.at(j);
    for (int k = 0; k < d_in; ++k) g.dw.at(j, k) = go * x.at(k);
  }
  return g;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

Tensor activation_forward(Activation kind, const Tensor& x) {
  Tensor y = x;
  switch (kind) {
    case Activation::kRelu:
      for (std::int64_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
      return y;
    case Activation::kSigmoid:
      for (std::int64_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
      return y;
    case Activation::kSoftmax: {
      require(x.rank() >= 1, "softmax: rank-0 input has no axis to reduce");
      const int axis_len = x.extent(x.rank() - 1);
      const std::int64_t rows = x.size() / axis_len;
      for (std::int64_t r = 0; r < rows; ++r) {
        double* row = y.data() + r * axis_len;
        double mx = row[0];
        for (int i = 1; i < axis_len; ++i) mx = std::max(mx, row[i]);
        double sum = 0.0;
        for (int i = 0; i < axis_len; ++i) {
          row[i] = std::exp(row[i] - mx);
          sum += row[i];
        }
        for (int i = 0; i < axis_len; ++i) row[i] /= sum;
      }
      return y;
    }
  }
  throw std::logic_error("unreachable activation kind");
}

Tensor activation_backward(Activation kind, const Tensor& x, const Tensor& y,
                           const Tensor& grad_out) {
  Tensor dx = Tensor::zeros_like(x);
  switch (kind) {
    case Activation::kRelu:
      for (std::int64_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
      return dx;
    case Activation::kSigmoid:
      for (std::int64_t i = 0; i < x.size(); ++i) dx[i] = grad_out[i] * y[i] * (1.0 - y[i]);
      return dx;
    case Activation::kSoftmax: {
      const int axis_len = x.extent(x.rank() - 1);
      const std::int64_t rows = x.size() / axis_len;
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* yr = y.data() + r * axis_len;
        const double* gr = grad_out.data() + r * axis_len;
        double dot = 0.0;
        for (int i = 0; i < axis_len; ++i) dot += yr[i] * gr[i];
        double* dr = dx.data() + r * axis_len;
        for (int i = 0; i < axis_len; ++i) dr[i] = yr[i] * (gr[i] - dot);
      }
      return dx;
    }
  }
  throw std::logic_error("unreachable activation kind");
}

// ---------------------------------------------------------------------------
// bilinear resize
// ---------------------------------------------------------------------------

namespace {

struct Lerp {
  int lo, hi;
  double frac;
};

// Half-pixel mapping with edge clamp for one axis.
Lerp axis_lerp(int out_i, int out_n, int in_n) {
  const double src = (out_i + 0.5) * (static_cast<double>(in_n) / out_n) - 0.5;
  double base = std::floor(src);
  Lerp l;
  l.frac = src - base;
  l.lo = std::clamp(static_cast<int>(base), 0, in_n - 1);
  l.hi = std::clamp(static_cast<int>(base) + 1, 0, in_n - 1);
  return l;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  require(x.rank() == 3, "bilinear_resize: input must be [C,H,W], got " + x.shape_str());
  require(out_h >= 1 && out_w >= 1, "bilinear_resize: output extents must be >= 1");
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
  Tensor y({c, out_h, out_w});
  for (int oy = 0; oy < out_h; ++oy) {
    const Lerp ly = axis_lerp(oy, out_h, h);
    for (int ox = 0; ox < out_w; ++ox) {
      const Lerp lx = axis_lerp(ox, out_w, w);
      const double w00 = (1.0 - ly.frac) * (1.0 - lx.frac);
      const double w01 = (1.0 - ly.frac) * lx.frac;
      const double w10 = ly.frac * (1.0 - lx.frac);
      const double w11 = ly.frac * lx.frac;
      for (int ci = 0; ci < c; ++ci) {
        y.at(ci, oy, ox) = w00 * x.at(ci, ly.lo, lx.lo) + w01 * x.at(ci, ly.lo, lx.hi) +
                           w10 * x.at(ci, ly.hi, lx.lo) + w11 * x.at(ci, ly.hi, lx.hi);
      }
    }
  }
  return y;
}

Tensor bilinear_resize_backward(const Tensor& grad_out, int in_h, int in_w) {
  const int c = grad_out.extent(0), out_h = grad_out.extent(1), out_w = grad_out.extent(2);
  Tensor dx({c, in_h, in_w});
  for (int oy = 0; oy < out_h; ++oy) {
    const Lerp ly = axis_lerp(oy, out_h, in_h);
    for (int ox = 0; ox < out_w; ++ox) {
      const Lerp lx = axis_lerp(ox, out_w, in_w);
      const double w00 = (1.0 - ly.frac) * (1.0 - lx.frac);
      const double w01 = (1.0 - ly.frac) * lx.frac;
      const double w10 = ly.frac * (1.0 - lx.frac);
      const double w11 = ly.frac * lx.frac;
      for (int ci = 0; ci < c; ++ci) {
        const double go = grad_out.at(ci, oy, ox);
        dx.at(ci, ly.lo, lx.lo) += w00 * go;
        dx.at(ci, ly.lo, lx.hi) += w01 * go;
        dx.at(ci, ly.hi, lx.lo) += w10 * go;
        dx.at(ci, ly.hi, lx.hi) += w11 * go;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

Tensor global_avg_pool(const Tensor& x) {
  require(x.rank() == 3, "global_avg_pool: input must be [C,H,W], got " + x.shape_str());
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
  Tensor y({c});
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0.0;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) acc += x.at(ci, i, j);
    y.at(ci) = acc * inv;
  }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, int h, int w) {
  const int c = grad_out.extent(0);
  Tensor dx({c, h, w});
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ci = 0; ci < c; ++ci) {
    const double g = grad_out.at(ci) * inv;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) dx.at(ci, i, j) = g;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// graph wrappers
// ---------------------------------------------------------------------------

ad::Var conv2d(const ad::Var& x, const ad::Var& w, const ad::Var& b, int stride, int pad) {
  Tensor y = conv2d_forward(x->value, w->value, b->value, stride, pad);
  return ad::make(std::move(y), {x, w, b}, [x, w, b, stride, pad](ad::Node& self) {
    ConvGrads g = conv2d_backward(x->value, w->value, stride, pad, self.grad);
    if (x->requires_grad) x->accumulate(g.dx);
    if (w->requires_grad) w->accumulate(g.dw);
    if (b->requires_grad) b->accumulate(g.db);
  });
}

ad::Var linear(const ad::Var& x, const ad::Var& w, const ad::Var& b) {
  Tensor y = linear_forward(x->value, w->value, b->value);
  return ad::make(std::move(y), {x, w, b}, [x, w, b](ad::Node& self) {
    LinearGrads g = linear_backward(x->value, w->value, self.grad);
    if (x->requires_grad) x->accumulate(g.dx);
    if (w->requires_grad) w->accumulate(g.dw);
    if (b->requires_grad) b->accumulate(g.db);
  });
}

namespace {

ad::Var activation(Activation kind, const ad::Var& x) {
  Tensor y = activation_forward(kind, x->value);
  const char* tag = kind == Activation::kRelu      ? "relu"
                    : kind == Activation::kSigmoid ? "sigmoid"
                                                   : "softmax";
  return ad::make(std::move(y), {x}, [x, kind](ad::Node& self) {
    x->accumulate(activation_backward(kind, x->value, self.value, self.grad));
  }, tag);
}

}  // namespace

ad::Var relu(const ad::Var& x) { return activation(Activation::kRelu, x); }
ad::Var sigmoid(const ad::Var& x) { return activation(Activation::kSigmoid, x); }
ad::Var softmax(const ad::Var& x) { return activation(Activation::kSoftmax, x); }

ad::Var resize(const ad::Var& x, int out_h, int out_w) {
  const int in_h = x->value.extent(1), in_w = x->value.extent(2);
  Tensor y = bilinear_resize(x->value, out_h, out_w);
  return ad::make(std::move(y), {x}, [x, in_h, in_w](ad::Node& self) {
    x->accumulate(bilinear_resize_backward(self.grad, in_h, in_w));
  });
}

ad::Var global_avg_pool(const ad::Var& x) {
  const int h = x->value.extent(1), w = x->value.extent(2);
  Tensor y = global_avg_pool(x->value);
  return ad::make(std::move(y), {x}, [x, h, w](ad::Node& self) {
    x->accumulate(global_avg_pool_backward(self.grad, h, w));
  });
}

ad::Var add(const ad::Var& a, const ad::Var& b) {
  require(a->value.same_shape(b->value), "add: shape mismatch " + a->value.shape_str() + " vs " +
                                             b->value.shape_str());
  Tensor y = a->value;
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] += b->value[i];
  return ad::make(std::move(y), {a, b}, [a, b](ad::Node& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (b->requires_grad) b->accumulate(self.grad);
  });
}

ad::Var add_n(const std::vector<ad::Var>& terms) {
  require(!terms.empty(), "add_n: needs at least one term");
  Tensor y = terms[0]->value;
  for (size_t t = 1; t < terms.size(); ++t) {
    require(terms[t]->value.same_shape(y), "add_n: shape mismatch at term " + std::to_string(t));
    for (std::int64_t i = 0; i < y.size(); ++i) y[i] += terms[t]->value[i];
  }
  return ad::make(std::move(y), terms, [terms](ad::Node& self) {
    for (const auto& t : terms) {
      if (t->requires_grad) t->accumulate(self.grad);
    }
  });
}

ad::Var scale(const ad::Var& x, double factor) {
  Tensor y = x->value;
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] *= factor;
  return ad::make(std::move(y), {x}, [x, factor](ad::Node& self) {
    Tensor g = self.grad;
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= factor;
    x->accumulate(g);
  });
}

ad::Var mean_of(const std::vector<ad::Var>& scalars) {
  require(!scalars.empty(), "mean_of: needs at least one term");
  double acc = 0.0;
  for (const auto& s : scalars) acc += s->value.item();
  const double inv = 1.0 / static_cast<double>(scalars.size());
  return ad::make(Tensor::scalar(acc * inv), scalars, [scalars, inv](ad::Node& self) {
    const Tensor g = Tensor::scalar(self.grad.item() * inv);
    for (const auto& s : scalars) {
      if (s->requires_grad) s->accumulate(g);
    }
  });
}

ad::Var reshape(const ad::Var& x, std::vector<int> shape) {
  require(shape_product(shape) == x->value.size(),
          "reshape: element count mismatch for " + x->value.shape_str());
  Tensor y(shape, x->value.values());
  std::vector<int> old_shape = x->value.shape();
  return ad::make(std::move(y), {x}, [x, old_shape](ad::Node& self) {
    x->accumulate(Tensor(old_shape, self.grad.values()));
  });
}

ad::Var flatten(const ad::Var& x) {
  return reshape(x, {static_cast<int>(x->value.size())});
}

ad::Var add_channel_bias(const ad::Var& x, const ad::Var& v) {
  require(x->value.rank() == 3, "add_channel_bias: input must be [C,H,W]");
  const int c = x->value.extent(0), h = x->value.extent(1), w = x->value.extent(2);
  require(v->value.rank() == 1 && v->value.extent(0) == c,
          "add_channel_bias: bias length must equal channel count " + std::to_string(c));
  Tensor y = x->value;
  for (int ci = 0; ci < c; ++ci) {
    const double bias = v->value.at(ci);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) y.at(ci, i, j) += bias;
  }
  return ad::make(std::move(y), {x, v}, [x, v, c, h, w](ad::Node& self) {
    if (x->requires_grad) x->accumulate(self.grad);
    if (v->requires_grad) {
      Tensor dv({c});
      for (int ci = 0; ci < c; ++ci) {
        double acc = 0.0;
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) acc += self.grad.at(ci, i, j);
        dv.at(ci) = acc;
      }
      v->accumulate(dv);
    }
  });
}

}  // namespace ctdnet::ops
