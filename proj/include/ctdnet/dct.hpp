#pragma once

#include <utility>
#include <vector>

#include "ctdnet/autodiff.hpp"
#include "ctdnet/tensor.hpp"

namespace ctdnet::dct {

/// Precomputed 2D cosine planes, one per selected (u,v) frequency:
///   plane[h][w] = cos(pi*u*(h+0.5)/H) * cos(pi*v*(w+0.5)/W)
/// The attention path uses the unnormalized planes; the orthonormal variant
/// (DCT-II scaling) exists for basis verification.
struct DctBasis {
  int height = 0;
  int width = 0;
  std::vector<std::pair<int, int>> freq_indices;
  std::vector<Tensor> planes;  // each [H,W]
  bool orthonormal = false;
};

DctBasis build_dct_basis(int height, int width,
                         const std::vector<std::pair<int, int>>& freq_indices,
                         bool orthonormal = false);

/// The `count` lowest frequencies of a grid_h x grid_w (u,v) grid, ordered by
/// (u+v, then u). One-dimensional indexing of the 2D grid, in other words.
std::vector<std::pair<int, int>> default_freq_indices(int count, int grid_h, int grid_w);

/// Contiguous equal-size channel groups; group i pools with basis plane i.
struct FrequencyGroups {
  int channels = 0;
  int groups = 0;
  int group_size() const { return channels / groups; }
  int group_of(int channel) const { return channel / group_size(); }
};

FrequencyGroups make_frequency_groups(int channels, int groups);

/// Per-channel frequency component: for channel c in group i,
///   out[c] = sum_h sum_w x[c,h,w] * plane_i[h,w]
/// Components are concatenated in original channel order.
Tensor multi_frequency_pool(const Tensor& x, const DctBasis& basis, const FrequencyGroups& groups);
Tensor multi_frequency_pool_backward(const DctBasis& basis, const FrequencyGroups& groups,
                                     int height, int width, const Tensor& grad_out);

/// weights = sigmoid(fc_w * mf + fc_b); every entry lands in (0,1).
Tensor attention_weights(const Tensor& mf, const Tensor& fc_w, const Tensor& fc_b);

/// y[c,:,:] = weights[c] * x[c,:,:]
Tensor apply_channel_attention(const Tensor& x, const Tensor& weights);

// Graph wrappers.
ad::Var multi_frequency_pool(const ad::Var& x, const DctBasis& basis, const FrequencyGroups& groups);
ad::Var attention_weights(const ad::Var& mf, const ad::Var& fc_w, const ad::Var& fc_b);
ad::Var apply_channel_attention(const ad::Var& x, const ad::Var& weights);

}  // namespace ctdnet::dct
