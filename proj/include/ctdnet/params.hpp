#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ctdnet/autodiff.hpp"
#include "ctdnet/rng.hpp"
#include "ctdnet/tensor.hpp"

namespace ctdnet {

/// Owns every trainable parameter of a model, in deterministic insertion
/// order. Names are hierarchical ("cfp.u0.stage1.down.w") and unique.
class ParamStore {
 public:
  /// Uniform init in [-s, s] with s = sqrt(1/fan_in).
  ad::Var create_uniform(const std::string& name, std::vector<int> shape, int fan_in, Rng& rng);
  ad::Var create_const(const std::string& name, std::vector<int> shape, double value);

  const std::vector<std::pair<std::string, ad::Var>>& items() const { return items_; }
  std::vector<ad::Var> params() const;
  ad::Var find(const std::string& name) const;  // throws if missing

  void zero_grads();

 private:
  ad::Var insert(const std::string& name, Tensor value);
  std::vector<std::pair<std::string, ad::Var>> items_;
};

// Checkpoint container format: magic "CTDK", version u32, tensor count u32,
// then per tensor: name length u32 + UTF-8 name, rank u32, extents u32 each,
// little-endian float32 payload. All integers little-endian.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, ad::Var>>& items);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

/// Loads a checkpoint into an existing store; every name and shape must match
/// or the mismatch is reported in the thrown diagnostic.
void load_into_store(const std::string& path, ParamStore& store);

}  // namespace ctdnet
