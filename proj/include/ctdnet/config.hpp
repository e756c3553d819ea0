#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ctdnet/cfp.hpp"
#include "ctdnet/head.hpp"
#include "ctdnet/optim.hpp"
#include "ctdnet/scene.hpp"

namespace ctdnet::harness {

/// Everything a run needs. Parsed from a line-based "key = value" file with
/// '#' comments; unknown keys are rejected.
struct RunConfig {
  SceneConfig scene;
  cfp::CfpConfig cfp;
  head::HeadConfig head;
  double learning_rate = 0.002;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  int steps = 500;
  int eval_interval = 0;  // 0 disables periodic evaluation during training
  int scene_count = 8;
  double proposal_jitter = 0.1;
  int proposal_negatives = 8;
  double score_threshold = 0.05;
  double nms_threshold = 0.5;
  std::string out_dir = "out";

  // Multi-frequency attention: pool resolution and (u,v) selection. An empty
  // list means the default lowest-frequency ordering over the dct_size grid.
  int dct_size = 7;
  int freq_groups = 16;
  std::vector<std::pair<int, int>> freq_indices;

  void validate() const;
  OptimState make_optim_state() const;
};

RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<string>");

}  // namespace ctdnet::harness
