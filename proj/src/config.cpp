#include "ctdnet/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ctdnet::harness {

void RunConfig::validate() const {
  scene.validate();
  cfp.validate();
  head.validate();
  make_optim_state().validate();
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (eval_interval < 0) throw std::invalid_argument("eval_interval must be >= 0");
  if (scene_count < 1) throw std::invalid_argument("scenes must be >= 1");
  if (proposal_jitter < 0.0 || proposal_jitter > 0.25) {
    throw std::invalid_argument("proposal_jitter must lie in [0, 0.25]");
  }
  if (proposal_negatives < 0) throw std::invalid_argument("proposal_negatives must be >= 0");
  if (score_threshold < 0.0 || score_threshold > 1.0) {
    throw std::invalid_argument("score_threshold must lie in [0,1]");
  }
  if (nms_threshold <= 0.0 || nms_threshold > 1.0) {
    throw std::invalid_argument("nms_threshold must lie in (0,1]");
  }
  if (dct_size < 1) throw std::invalid_argument("dct_size must be >= 1");
  if (freq_groups < 1) throw std::invalid_argument("freq_groups must be >= 1");
  if (cfp.channels % freq_groups != 0) {
    throw std::invalid_argument("freq_groups must divide channels");
  }
  if (!freq_indices.empty() && static_cast<int>(freq_indices.size()) != freq_groups) {
    throw std::invalid_argument("freq_indices must list exactly freq_groups pairs");
  }
  if (head.num_classes != scene.num_classes) {
    throw std::invalid_argument("num_classes disagrees between head and scene configs");
  }
}

OptimState RunConfig::make_optim_state() const {
  OptimState s;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  return s;
}

namespace {

int to_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("key '" + key + "': '" + value + "' is not an integer");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("key '" + key + "': '" + value + "' is not a number");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw std::invalid_argument("key '" + key + "': '" + value + "' is not a boolean");
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return static_cast<std::uint64_t>(v);
  } catch (...) {
    throw std::invalid_argument("key '" + key + "': '" + value + "' is not an unsigned integer");
  }
}

// Whitespace-separated "u,v" pairs.
std::vector<std::pair<int, int>> to_freq_list(const std::string& key, const std::string& value) {
  std::vector<std::pair<int, int>> out;
  std::istringstream is(value);
  std::string tok;
  while (is >> tok) {
    const size_t comma = tok.find(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 == tok.size()) {
      throw std::invalid_argument("key '" + key + "': token '" + tok + "' is not of the form u,v");
    }
    out.emplace_back(to_int(key, tok.substr(0, comma)), to_int(key, tok.substr(comma + 1)));
  }
  if (out.empty()) throw std::invalid_argument("key '" + key + "': empty frequency list");
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) + ": empty key or value");
    }

    if (key == "image_size") cfg.scene.image_size = to_int(key, value);
    else if (key == "num_classes") {
      cfg.scene.num_classes = to_int(key, value);
      cfg.head.num_classes = cfg.scene.num_classes;
    }
    else if (key == "logos_min") cfg.scene.logos_min = to_int(key, value);
    else if (key == "logos_max") cfg.scene.logos_max = to_int(key, value);
    else if (key == "side_min") cfg.scene.side_min = to_int(key, value);
    else if (key == "side_max") cfg.scene.side_max = to_int(key, value);
    else if (key == "cluster_spread") cfg.scene.cluster_spread = to_int(key, value);
    else if (key == "noise_sigma") cfg.scene.noise_sigma = to_double(key, value);
    else if (key == "seed") cfg.scene.seed = to_u64(key, value);
    else if (key == "stages") cfg.cfp.stages = to_int(key, value);
    else if (key == "unrolls") cfg.cfp.unrolls = to_int(key, value);
    else if (key == "channels") cfg.cfp.channels = to_int(key, value);
    else if (key == "gc_ratio") cfg.cfp.gc_ratio = to_int(key, value);
    else if (key == "share_unroll_params") cfg.cfp.share_unroll_params = to_bool(key, value);
    else if (key == "stem_stride") cfg.cfp.stem_stride = to_int(key, value);
    else if (key == "group_number") cfg.head.group_number = head::group_number_from_string(value);
    else if (key == "loss_weight_fc") cfg.head.loss_weight_fc = to_double(key, value);
    else if (key == "loss_weight_conv") cfg.head.loss_weight_conv = to_double(key, value);
    else if (key == "roi_size") cfg.head.roi_size = to_int(key, value);
    else if (key == "fc_hidden") cfg.head.fc_hidden = to_int(key, value);
    else if (key == "learning_rate") cfg.learning_rate = to_double(key, value);
    else if (key == "momentum") cfg.momentum = to_double(key, value);
    else if (key == "weight_decay") cfg.weight_decay = to_double(key, value);
    else if (key == "steps") cfg.steps = to_int(key, value);
    else if (key == "eval_interval") cfg.eval_interval = to_int(key, value);
    else if (key == "scenes") cfg.scene_count = to_int(key, value);
    else if (key == "proposal_jitter") cfg.proposal_jitter = to_double(key, value);
    else if (key == "proposal_negatives") cfg.proposal_negatives = to_int(key, value);
    else if (key == "score_threshold") cfg.score_threshold = to_double(key, value);
    else if (key == "nms_threshold") cfg.nms_threshold = to_double(key, value);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "dct_size") cfg.dct_size = to_int(key, value);
    else if (key == "freq_groups") cfg.freq_groups = to_int(key, value);
    else if (key == "freq_indices") cfg.freq_indices = to_freq_list(key, value);
    else {
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) + ": unknown key '" +
                                  key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str(), path);
}

}  // namespace ctdnet::harness
