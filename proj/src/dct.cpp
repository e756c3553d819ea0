#include "ctdnet/dct.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "ctdnet/ops.hpp"

namespace ctdnet::dct {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

DctBasis build_dct_basis(int height, int width,
                         const std::vector<std::pair<int, int>>& freq_indices, bool orthonormal) {
  if (height < 1 || width < 1) throw std::invalid_argument("DCT basis extents must be positive");
  std::set<std::pair<int, int>> seen;
  DctBasis basis;
  basis.height = height;
  basis.width = width;
  basis.freq_indices = freq_indices;
  basis.orthonormal = orthonormal;
  basis.planes.reserve(freq_indices.size());
  for (const auto& [u, v] : freq_indices) {
    if (u < 0 || u >= height || v < 0 || v >= width) {
      throw std::invalid_argument("DCT frequency (" + std::to_string(u) + "," + std::to_string(v) +
                                  ") out of range for " + std::to_string(height) + "x" +
                                  std::to_string(width));
    }
    if (!seen.insert({u, v}).second) {
      throw std::invalid_argument("duplicate DCT frequency (" + std::to_string(u) + "," +
                                  std::to_string(v) + ")");
    }
    const double su = orthonormal ? (u == 0 ? std::sqrt(1.0 / height) : std::sqrt(2.0 / height)) : 1.0;
    const double sv = orthonormal ? (v == 0 ? std::sqrt(1.0 / width) : std::sqrt(2.0 / width)) : 1.0;
    Tensor plane({height, width});
    for (int h = 0; h < height; ++h) {
      const double ch = std::cos(kPi * u * (h + 0.5) / height) * su;
      for (int w = 0; w < width; ++w) {
        plane.at(h, w) = ch * std::cos(kPi * v * (w + 0.5) / width) * sv;
      }
    }
    basis.planes.push_back(std::move(plane));
  }
  return basis;
}

std::vector<std::pair<int, int>> default_freq_indices(int count, int grid_h, int grid_w) {
  std::vector<std::pair<int, int>> all;
  all.reserve(static_cast<size_t>(grid_h) * grid_w);
  for (int u = 0; u < grid_h; ++u)
    for (int v = 0; v < grid_w; ++v) all.emplace_back(u, v);
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    const int sa = a.first + a.second, sb = b.first + b.second;
    if (sa != sb) return sa < sb;
    return a.first < b.first;
  });
  if (count < 1 || count > static_cast<int>(all.size())) {
    throw std::invalid_argument("frequency count " + std::to_string(count) +
                                " out of range for a " + std::to_string(grid_h) + "x" +
                                std::to_string(grid_w) + " grid");
  }
  all.resize(static_cast<size_t>(count));
  return all;
}

FrequencyGroups make_frequency_groups(int channels, int groups) {
  if (channels < 1 || groups < 1) {
    throw std::invalid_argument("channels and groups must be positive");
  }
  if (channels % groups != 0) {
    throw std::invalid_argument("group count " + std::to_string(groups) +
                                " does not divide channel count " + std::to_string(channels));
  }
  return FrequencyGroups{channels, groups};
}

namespace {

void check_pool_args(const Tensor& x, const DctBasis& basis, const FrequencyGroups& groups) {
  if (x.rank() != 3) throw std::invalid_argument("multi_frequency_pool: input must be [C,H,W]");
  if (x.extent(1) != basis.height || x.extent(2) != basis.width) {
    throw std::invalid_argument("multi_frequency_pool: basis is " + std::to_string(basis.height) +
                                "x" + std::to_string(basis.width) + " but feature map is " +
                                std::to_string(x.extent(1)) + "x" + std::to_string(x.extent(2)));
  }
  if (groups.channels != x.extent(0)) {
    throw std::invalid_argument("multi_frequency_pool: partition covers " +
                                std::to_string(groups.channels) + " channels, feature map has " +
                                std::to_string(x.extent(0)));
  }
  if (static_cast<int>(basis.planes.size()) < groups.groups) {
    throw std::invalid_argument("multi_frequency_pool: " + std::to_string(groups.groups) +
                                " groups need as many basis planes, got " +
                                std::to_string(basis.planes.size()));
  }
}

}  // namespace

Tensor multi_frequency_pool(const Tensor& x, const DctBasis& basis, const FrequencyGroups& groups) {
  check_pool_args(x, basis, groups);
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
  Tensor out({c});
  for (int ci = 0; ci < c; ++ci) {
    const Tensor& plane = basis.planes[static_cast<size_t>(groups.group_of(ci))];
    double acc = 0.0;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) acc += x.at(ci, i, j) * plane.at(i, j);
    out.at(ci) = acc;
  }
  return out;
}

Tensor multi_frequency_pool_backward(const DctBasis& basis, const FrequencyGroups& groups,
                                     int height, int width, const Tensor& grad_out) {
  const int c = grad_out.extent(0);
  Tensor dx({c, height, width});
  for (int ci = 0; ci < c; ++ci) {
    const Tensor& plane = basis.planes[static_cast<size_t>(groups.group_of(ci))];
    const double g = grad_out.at(ci);
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j) dx.at(ci, i, j) = g * plane.at(i, j);
  }
  return dx;
}

Tensor attention_weights(const Tensor& mf, const Tensor& fc_w, const Tensor& fc_b) {
  return ops::activation_forward(ops::Activation::kSigmoid,
                                 ops::linear_forward(mf, fc_w, fc_b));
}

Tensor apply_channel_attention(const Tensor& x, const Tensor& weights) {
  if (x.rank() != 3) throw std::invalid_argument("apply_channel_attention: input must be [C,H,W]");
  if (weights.rank() != 1 || weights.extent(0) != x.extent(0)) {
    throw std::invalid_argument("apply_channel_attention: weight length " + weights.shape_str() +
                                " does not match channel count " + std::to_string(x.extent(0)));
  }
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
  Tensor y = x;
  for (int ci = 0; ci < c; ++ci) {
    const double s = weights.at(ci);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) y.at(ci, i, j) *= s;
  }
  return y;
}

ad::Var multi_frequency_pool(const ad::Var& x, const DctBasis& basis,
                             const FrequencyGroups& groups) {
  Tensor y = multi_frequency_pool(x->value, basis, groups);
  const int h = x->value.extent(1), w = x->value.extent(2);
  // Basis copied into the closure so the graph never outlives its planes.
  return ad::make(std::move(y), {x}, [x, basis, groups, h, w](ad::Node& self) {
    x->accumulate(multi_frequency_pool_backward(basis, groups, h, w, self.grad));
  });
}

ad::Var attention_weights(const ad::Var& mf, const ad::Var& fc_w, const ad::Var& fc_b) {
  return ops::sigmoid(ops::linear(mf, fc_w, fc_b));
}

ad::Var apply_channel_attention(const ad::Var& x, const ad::Var& weights) {
  Tensor y = apply_channel_attention(x->value, weights->value);
  return ad::make(std::move(y), {x, weights}, [x, weights](ad::Node& self) {
    const int c = x->value.extent(0), h = x->value.extent(1), w = x->value.extent(2);
    if (x->requires_grad) {
      Tensor dx = Tensor::zeros_like(x->value);
      for (int ci = 0; ci < c; ++ci) {
        const double s = weights->value.at(ci);
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) dx.at(ci, i, j) = s * self.grad.at(ci, i, j);
      }
      x->accumulate(dx);
    }
    if (weights->requires_grad) {
      Tensor dw({c});
      for (int ci = 0; ci < c; ++ci) {
        double acc = 0.0;
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) acc += x->value.at(ci, i, j) * self.grad.at(ci, i, j);
        dw.at(ci) = acc;
      }
      weights->accumulate(dw);
    }
  });
}

}  // namespace ctdnet::dct
