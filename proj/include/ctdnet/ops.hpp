#pragma once

#include <string>
#include <vector>

#include "ctdnet/autodiff.hpp"
#include "ctdnet/tensor.hpp"

namespace ctdnet::ops {

enum class Activation { kRelu, kSigmoid, kSoftmax };
Activation activation_from_string(const std::string& name);

// ---------------------------------------------------------------------------
// Forward kernels. Shapes follow the single-image convention:
//   x [C,H,W], conv weight [C_out,C_in,kH,kW], linear weight [D_out,D_in].
// Accumulations run in double; zero padding; cross-correlation (no kernel
// flip). Output extent: floor((in + 2*pad - k)/stride) + 1.
// ---------------------------------------------------------------------------
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor activation_forward(Activation kind, const Tensor& x);  // softmax over last axis

/// Half-pixel-center sampling with edge clamping: source coordinate of output
/// row i is (i + 0.5) * H/outH - 0.5, so a same-size resize is exactly the
/// identity. Linear in x for a fixed output size.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

Tensor global_avg_pool(const Tensor& x);  // [C,H,W] -> [C]

// ---------------------------------------------------------------------------
// Analytic backward kernels (the DiffOp contracts).
// ---------------------------------------------------------------------------
struct ConvGrads {
  Tensor dx, dw, db;
};
ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, int stride, int pad,
                          const Tensor& grad_out);

struct LinearGrads {
  Tensor dx, dw, db;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out);

Tensor activation_backward(Activation kind, const Tensor& x, const Tensor& y,
                           const Tensor& grad_out);
Tensor bilinear_resize_backward(const Tensor& grad_out, int in_h, int in_w);
Tensor global_avg_pool_backward(const Tensor& grad_out, int h, int w);

// ---------------------------------------------------------------------------
// Graph wrappers. Each builds one node whose backward_fn applies the kernel
// adjoint above.
// ---------------------------------------------------------------------------
ad::Var conv2d(const ad::Var& x, const ad::Var& w, const ad::Var& b, int stride, int pad);
ad::Var linear(const ad::Var& x, const ad::Var& w, const ad::Var& b);
ad::Var relu(const ad::Var& x);
ad::Var sigmoid(const ad::Var& x);
ad::Var softmax(const ad::Var& x);
ad::Var resize(const ad::Var& x, int out_h, int out_w);
ad::Var global_avg_pool(const ad::Var& x);

ad::Var add(const ad::Var& a, const ad::Var& b);        // same shape
ad::Var add_n(const std::vector<ad::Var>& terms);       // same shape, n >= 1
ad::Var scale(const ad::Var& x, double factor);
ad::Var mean_of(const std::vector<ad::Var>& scalars);   // rank-0 inputs
ad::Var reshape(const ad::Var& x, std::vector<int> shape);
ad::Var flatten(const ad::Var& x);

/// [C,H,W] + [C] broadcast over the spatial extent.
ad::Var add_channel_bias(const ad::Var& x, const ad::Var& v);

}  // namespace ctdnet::ops
