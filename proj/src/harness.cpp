#include "ctdnet/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ctdnet/ops.hpp"
#include "ctdnet/optim.hpp"

namespace ctdnet::harness {

namespace fs = std::filesystem;

std::unique_ptr<Detector> build_detector(const RunConfig& cfg) {
  cfg.validate();
  auto det = std::make_unique<Detector>();
  det->cfg = cfg;
  Rng init_rng(mix64(cfg.scene.seed ^ 0x1B5EEDULL));
  det->pyramid = std::make_unique<cfp::CfpModel>(cfg.cfp, det->store, init_rng);
  auto freq = cfg.freq_indices.empty()
                  ? dct::default_freq_indices(cfg.freq_groups, cfg.dct_size, cfg.dct_size)
                  : cfg.freq_indices;
  auto basis = dct::build_dct_basis(cfg.dct_size, cfg.dct_size, freq, false);
  auto groups = dct::make_frequency_groups(cfg.cfp.channels, cfg.freq_groups);
  det->head_model = std::make_unique<head::HeadModel>(cfg.head, cfg.cfp.channels,
                                                      std::move(basis), groups, det->store,
                                                      init_rng);
  return det;
}

namespace {

std::vector<Scene> make_scenes(const RunConfig& cfg) {
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<size_t>(cfg.scene_count));
  for (int i = 0; i < cfg.scene_count; ++i) {
    scenes.push_back(generate_synthetic_scene(cfg.scene, i));
  }
  return scenes;
}

void log_regens(std::ostream& os, const std::vector<Scene>& scenes) {
  for (size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].regen_count > 0) {
      os << "scene " << i << " regenerated " << scenes[i].regen_count
         << " time(s) with incremented sub-seed\n";
    }
  }
}

struct ProposalTarget {
  int label;     // class id, background = num_classes
  int gt_index;  // -1 for background
};

// Positive iff IoU >= 0.5 with some GT; matched to the highest-IoU GT, ties
// to the lowest GT index.
std::vector<ProposalTarget> assign_proposals(const std::vector<Box>& proposals,
                                             const std::vector<metrics::GroundTruthBox>& gts,
                                             int num_classes) {
  std::vector<ProposalTarget> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) {
    double best = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      const double v = metrics::iou(p, gts[g].box);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best >= 0.5 && best_gt >= 0) {
      out.push_back({gts[static_cast<size_t>(best_gt)].class_id, best_gt});
    } else {
      out.push_back({num_classes, -1});
    }
  }
  return out;
}

Box to_feature_coords(const Box& b, double stride) {
  return Box{b.x1 / stride, b.y1 / stride, b.x2 / stride, b.y2 / stride};
}

// Greedy NMS: keep by descending score (ties by input order), drop boxes of
// the same class overlapping a kept one with IoU > threshold.
std::vector<metrics::Detection> greedy_nms(std::vector<metrics::Detection> dets, double thresh) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&dets](size_t a, size_t b) { return dets[a].score > dets[b].score; });
  std::vector<bool> suppressed(dets.size(), false);
  std::vector<metrics::Detection> kept;
  for (size_t i = 0; i < order.size(); ++i) {
    if (suppressed[order[i]]) continue;
    const auto& top = dets[order[i]];
    kept.push_back(top);
    for (size_t j = i + 1; j < order.size(); ++j) {
      if (suppressed[order[j]]) continue;
      const auto& other = dets[order[j]];
      if (other.class_id != top.class_id) continue;
      if (metrics::iou(top.box, other.box) > thresh) suppressed[order[j]] = true;
    }
  }
  return kept;
}

std::vector<metrics::Detection> detect_scene(const Detector& det, const Scene& scene,
                                             int image_id) {
  const RunConfig& cfg = det.cfg;
  const double stride = det.feature_stride();
  const double img_w = cfg.scene.image_size, img_h = cfg.scene.image_size;

  ad::Var image = ad::constant(scene.image);
  cfp::FeaturePyramid pyramid = det.pyramid->cfp_forward(image);
  const ad::Var& feat = pyramid.levels[0];

  const auto proposals = make_proposals(scene.gts, 0.0, 0,
                                        mix64(cfg.scene.seed ^ (0xE7A1ULL + image_id)),
                                        cfg.scene.image_size);
  std::vector<metrics::Detection> candidates;
  for (const auto& prop : proposals) {
    ad::Var roi = head::roi_align(feat, to_feature_coords(prop, stride), cfg.head.roi_size);
    const Tensor logits = det.head_model->fc_classification_branch(roi)->value;
    const Tensor scores = ops::activation_forward(ops::Activation::kSoftmax, logits);
    const Tensor deltas = det.head_model->conv_localization_branch(roi)->value;
    const Box decoded = head::decode_box_deltas(prop, deltas, std::make_pair(img_w, img_h));
    if (!decoded.valid()) continue;
    for (int cls = 0; cls < cfg.head.num_classes; ++cls) {
      const double score = scores[cls];
      if (score < cfg.score_threshold) continue;
      candidates.push_back(metrics::Detection{image_id, cls, score, decoded});
    }
  }
  return greedy_nms(std::move(candidates), cfg.nms_threshold);
}

metrics::EvalReport evaluate_scenes(const Detector& det, const std::vector<Scene>& scenes,
                                    std::vector<metrics::Detection>* all_dets_out) {
  std::vector<metrics::Detection> all_dets;
  std::vector<metrics::GroundTruthBox> all_gts;
  for (size_t i = 0; i < scenes.size(); ++i) {
    auto dets = detect_scene(det, scenes[i], static_cast<int>(i));
    all_dets.insert(all_dets.end(), dets.begin(), dets.end());
    all_gts.insert(all_gts.end(), scenes[i].gts.begin(), scenes[i].gts.end());
  }
  if (all_dets_out) *all_dets_out = all_dets;
  return metrics::evaluate(all_dets, all_gts);
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::string& out_dir,
                  const std::string& resume_checkpoint) {
  cfg.validate();
  fs::create_directories(out_dir);
  auto det = build_detector(cfg);
  if (!resume_checkpoint.empty()) load_into_store(resume_checkpoint, det->store);

  const std::vector<Scene> scenes = make_scenes(cfg);

  TrainResult result;
  result.loss_log_path = (fs::path(out_dir) / "loss_log.txt").string();
  result.run_log_path = (fs::path(out_dir) / "run.log").string();
  result.checkpoint_path = (fs::path(out_dir) / "checkpoint.ctdk").string();

  std::ofstream loss_log(result.loss_log_path, std::ios::trunc);
  std::ofstream run_log(result.run_log_path, std::ios::trunc);
  if (!loss_log || !run_log) throw std::runtime_error("cannot open log files under " + out_dir);
  log_regens(run_log, scenes);

  OptimState optim = cfg.make_optim_state();
  const std::vector<ad::Var> params = det->store.params();

  char line[160];
  for (int step = 1; step <= cfg.steps; ++step) {
    const Scene& scene = scenes[static_cast<size_t>((step - 1) % cfg.scene_count)];
    const auto proposals =
        make_proposals(scene.gts, cfg.proposal_jitter, cfg.proposal_negatives,
                       mix64(cfg.scene.seed ^ (0x57E9ULL + static_cast<std::uint64_t>(step))),
                       cfg.scene.image_size);
    const auto targets = assign_proposals(proposals, scene.gts, cfg.head.num_classes);

    ad::Var image = ad::constant(scene.image);
    cfp::FeaturePyramid pyramid = det->pyramid->cfp_forward(image);
    const ad::Var& feat = pyramid.levels[0];
    const double stride = det->feature_stride();

    std::vector<ad::Var> cls_losses, reg_losses;
    std::vector<double> cls_values, reg_values;
    for (size_t i = 0; i < proposals.size(); ++i) {
      ad::Var roi =
          head::roi_align(feat, to_feature_coords(proposals[i], stride), cfg.head.roi_size);
      ad::Var ce = head::cross_entropy(det->head_model->fc_classification_branch(roi),
                                       targets[i].label);
      cls_losses.push_back(ce);
      cls_values.push_back(ce->value.item());
      if (targets[i].gt_index >= 0) {
        ad::Var deltas = det->head_model->conv_localization_branch(roi);
        const Tensor target = head::encode_box_deltas(
            proposals[i], scene.gts[static_cast<size_t>(targets[i].gt_index)].box);
        ad::Var sl = head::smooth_l1(deltas, target);
        reg_losses.push_back(sl);
        reg_values.push_back(sl->value.item());
      }
    }

    const head::LossReport report = head::total_loss(cls_values, reg_values, cfg.head);
    if (!std::isfinite(report.total)) {
      run_log << "step " << step << ": non-finite loss, aborting\n";
      run_log.flush();
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    if (step == 1) result.first_total = report.total;
    result.last_total = report.total;

    ad::Var total = head::total_loss(cls_losses, reg_losses, cfg.head);
    det->store.zero_grads();
    ad::backward(total);
    sgd_step(params, optim);

    std::snprintf(line, sizeof(line), "%d %.9f %.9f %.9f\n", step, report.total, report.fc,
                  report.conv);
    loss_log << line;

    if (cfg.eval_interval > 0 && step % cfg.eval_interval == 0) {
      const metrics::EvalReport er = evaluate_scenes(*det, scenes, nullptr);
      std::snprintf(line, sizeof(line), "eval step=%d mAP=%.6f\n", step, er.map);
      run_log << line;
    }
  }
  result.steps = cfg.steps;

  save_checkpoint(result.checkpoint_path, det->store.items());
  return result;
}

metrics::EvalReport evaluate_cmd(const RunConfig& cfg, const std::string& checkpoint_path,
                                 const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  auto det = build_detector(cfg);
  load_into_store(checkpoint_path, det->store);

  const std::vector<Scene> scenes = make_scenes(cfg);
  std::vector<metrics::Detection> all_dets;
  const metrics::EvalReport report = evaluate_scenes(*det, scenes, &all_dets);

  metrics::write_detections((fs::path(out_dir) / "detections.txt").string(), all_dets);
  const std::string text = metrics::format_report(report);
  std::ofstream rf((fs::path(out_dir) / "report.txt").string(), std::ios::trunc);
  if (!rf) throw std::runtime_error("cannot open report file under " + out_dir);
  rf << text;
  std::fputs(text.c_str(), stdout);
  return report;
}

void dump_heatmap(const RunConfig& cfg, const std::string& checkpoint_path, int scene_index,
                  int level, const std::string& out_path) {
  cfg.validate();
  if (scene_index < 0 || scene_index >= cfg.scene_count) {
    throw std::invalid_argument("scene index " + std::to_string(scene_index) +
                                " out of range [0," + std::to_string(cfg.scene_count) + ")");
  }
  if (level < 1 || level > cfg.cfp.stages) {
    throw std::invalid_argument("level " + std::to_string(level) + " out of range [1," +
                                std::to_string(cfg.cfp.stages) + "]");
  }
  auto det = build_detector(cfg);
  load_into_store(checkpoint_path, det->store);
  const Scene scene = generate_synthetic_scene(cfg.scene, scene_index);

  ad::Var image = ad::constant(scene.image);
  cfp::FeaturePyramid pyramid = det->pyramid->cfp_forward(image);
  const Tensor& act = pyramid.levels[static_cast<size_t>(level - 1)]->value;
  const int c = act.extent(0), h = act.extent(1), w = act.extent(2);

  Tensor heat({1, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ci = 0; ci < c; ++ci) acc += std::fabs(act.at(ci, y, x));
      heat.at(0, y, x) = acc / c;
    }
  }
  double lo = heat[0], hi = heat[0];
  for (std::int64_t i = 0; i < heat.size(); ++i) {
    lo = std::min(lo, heat[i]);
    hi = std::max(hi, heat[i]);
  }
  if (hi - lo < 1e-12) {
    for (std::int64_t i = 0; i < heat.size(); ++i) heat[i] = 128.0;
  } else {
    for (std::int64_t i = 0; i < heat.size(); ++i) heat[i] = (heat[i] - lo) / (hi - lo) * 255.0;
  }
  const Tensor full = ops::bilinear_resize(heat, cfg.scene.image_size, cfg.scene.image_size);
  Tensor gray({cfg.scene.image_size, cfg.scene.image_size}, full.values());
  write_pgm(out_path, gray);
}

void generate_scenes_cmd(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  const std::vector<Scene> scenes = make_scenes(cfg);
  std::ofstream run_log((fs::path(out_dir) / "run.log").string(), std::ios::trunc);
  log_regens(run_log, scenes);
  std::vector<metrics::GroundTruthBox> all_gts;
  char name[64];
  for (size_t i = 0; i < scenes.size(); ++i) {
    std::snprintf(name, sizeof(name), "scene_%03zu.ppm", i);
    write_ppm((fs::path(out_dir) / name).string(), scenes[i].image);
    all_gts.insert(all_gts.end(), scenes[i].gts.begin(), scenes[i].gts.end());
  }
  metrics::write_ground_truth((fs::path(out_dir) / "ground_truth.txt").string(), all_gts);
}

void write_pgm(const std::string& path, const Tensor& gray) {
  if (gray.rank() != 2) throw std::invalid_argument("write_pgm: tensor must be [H,W]");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open PGM for writing: " + path);
  os << "P5\n" << gray.extent(1) << " " << gray.extent(0) << "\n255\n";
  for (std::int64_t i = 0; i < gray.size(); ++i) {
    const long v = std::lround(std::clamp(gray[i], 0.0, 255.0));
    os.put(static_cast<char>(static_cast<unsigned char>(v)));
  }
  if (!os) throw std::runtime_error("write failure on PGM: " + path);
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.extent(0) != 3) {
    throw std::invalid_argument("write_ppm: tensor must be [3,H,W]");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open PPM for writing: " + path);
  const int h = image.extent(1), w = image.extent(2);
  os << "P6\n" << w << " " << h << "\n255\n";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const long v = std::lround(std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0);
        os.put(static_cast<char>(static_cast<unsigned char>(v)));
      }
    }
  }
  if (!os) throw std::runtime_error("write failure on PPM: " + path);
}

}  // namespace ctdnet::harness
