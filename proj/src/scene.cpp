#include "ctdnet/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ctdnet/rng.hpp"

namespace ctdnet::harness {

void SceneConfig::validate() const {
  if (image_size < 16) throw std::invalid_argument("image_size must be >= 16");
  if (num_classes < 1 || num_classes > 3) {
    throw std::invalid_argument("num_classes must be in [1,3] (three glyph kinds exist)");
  }
  if (logos_min < 1 || logos_max < logos_min) {
    throw std::invalid_argument("logo count range is empty");
  }
  if (side_min < 4 || side_max < side_min) throw std::invalid_argument("side range is empty");
  if (side_max >= image_size / 2) throw std::invalid_argument("side_max too large for the image");
  if (cluster_spread < 0) throw std::invalid_argument("cluster_spread must be >= 0");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
}

namespace {

// Per-class glyph colors, chosen far apart.
constexpr double kColors[3][3] = {
    {0.85, 0.25, 0.20},  // square: red-ish
    {0.20, 0.80, 0.30},  // ring: green-ish
    {0.25, 0.35, 0.90},  // cross: blue-ish
};

double pair_iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

// Pixel-center rasterization of the class glyph into an integer-aligned box.
// The glyph touches every edge of its box, so the box is the tight bound.
void draw_glyph(Tensor& image, int cls, int x0, int y0, int side) {
  const double* color = kColors[cls];
  const double cx = x0 + side / 2.0;
  const double cy = y0 + side / 2.0;
  const double outer = side / 2.0;
  const double inner = side / 4.0;
  const int bar = std::max(1, (side + 2) / 3);
  const int bar_lo = (side - bar) / 2;
  for (int y = y0; y < y0 + side; ++y) {
    for (int x = x0; x < x0 + side; ++x) {
      bool lit = false;
      switch (cls) {
        case 0:
          lit = true;  // filled square
          break;
        case 1: {  // ring
          const double dx = (x + 0.5) - cx;
          const double dy = (y + 0.5) - cy;
          const double r = std::sqrt(dx * dx + dy * dy);
          lit = r <= outer && r >= inner;
          break;
        }
        case 2: {  // cross
          const int lx = x - x0, ly = y - y0;
          lit = (lx >= bar_lo && lx < bar_lo + bar) || (ly >= bar_lo && ly < bar_lo + bar);
          break;
        }
        default:
          break;
      }
      if (lit) {
        for (int c = 0; c < 3; ++c) image.at(c, y, x) = color[c];
      }
    }
  }
}

bool try_place(const SceneConfig& cfg, Rng& rng, std::vector<metrics::GroundTruthBox>& gts,
               int image_id) {
  const int count = rng.uniform_int(cfg.logos_min, cfg.logos_max);
  const int margin = cfg.side_max / 2 + 1;
  const int ccx = rng.uniform_int(margin + cfg.cluster_spread,
                                  cfg.image_size - 1 - margin - cfg.cluster_spread);
  const int ccy = rng.uniform_int(margin + cfg.cluster_spread,
                                  cfg.image_size - 1 - margin - cfg.cluster_spread);
  gts.clear();
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const int side = rng.uniform_int(cfg.side_min, cfg.side_max);
      const int cx = ccx + rng.uniform_int(-cfg.cluster_spread, cfg.cluster_spread);
      const int cy = ccy + rng.uniform_int(-cfg.cluster_spread, cfg.cluster_spread);
      const int x0 = cx - side / 2;
      const int y0 = cy - side / 2;
      if (x0 < 0 || y0 < 0 || x0 + side > cfg.image_size || y0 + side > cfg.image_size) continue;
      const Box box{static_cast<double>(x0), static_cast<double>(y0),
                    static_cast<double>(x0 + side), static_cast<double>(y0 + side)};
      bool ok = true;
      for (const auto& g : gts) {
        if (pair_iou(box, g.box) > 0.3) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      metrics::GroundTruthBox g;
      g.image_id = image_id;
      g.class_id = rng.uniform_int(0, cfg.num_classes - 1);
      g.box = box;
      gts.push_back(g);
      placed = true;
    }
    if (!placed) return false;
  }
  return true;
}

}  // namespace

Scene generate_synthetic_scene(const SceneConfig& cfg, int index) {
  cfg.validate();
  Scene scene;
  for (int sub_seed = 0;; ++sub_seed) {
    Rng rng(mix64(cfg.seed ^ mix64(static_cast<std::uint64_t>(index) * 2654435761ULL +
                                   static_cast<std::uint64_t>(sub_seed))));
    if (!try_place(cfg, rng, scene.gts, index)) {
      ++scene.regen_count;
      continue;
    }
    // Mid-gray background with a mild per-scene tint, then glyphs, then noise.
    scene.image = Tensor({3, cfg.image_size, cfg.image_size});
    double tint[3];
    for (double& t : tint) t = 0.45 + 0.1 * rng.uniform();
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < cfg.image_size; ++y)
        for (int x = 0; x < cfg.image_size; ++x) scene.image.at(c, y, x) = tint[c];
    for (const auto& g : scene.gts) {
      draw_glyph(scene.image, g.class_id, static_cast<int>(g.box.x1), static_cast<int>(g.box.y1),
                 static_cast<int>(g.box.width()));
    }
    for (std::int64_t i = 0; i < scene.image.size(); ++i) {
      scene.image[i] = std::clamp(scene.image[i] + rng.normal(0.0, cfg.noise_sigma), 0.0, 1.0);
    }
    return scene;
  }
}

std::vector<Box> make_proposals(const std::vector<metrics::GroundTruthBox>& gts, double jitter,
                                int negatives, std::uint64_t seed, int image_size) {
  if (jitter < 0.0 || jitter > 0.25) {
    throw std::invalid_argument("proposal jitter must lie in [0, 0.25]");
  }
  if (negatives < 0) throw std::invalid_argument("negative count must be >= 0");
  Rng rng(mix64(seed));
  std::vector<Box> out;
  out.reserve(gts.size() * 2 + static_cast<size_t>(negatives));
  for (const auto& g : gts) {
    for (int rep = 0; rep < 2; ++rep) {
      const double w = g.box.width() * rng.uniform(1.0 - jitter, 1.0 + jitter);
      const double h = g.box.height() * rng.uniform(1.0 - jitter, 1.0 + jitter);
      const double cx = g.box.cx() + g.box.width() * rng.uniform(-jitter, jitter);
      const double cy = g.box.cy() + g.box.height() * rng.uniform(-jitter, jitter);
      out.push_back(Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
    }
  }
  for (int k = 0; k < negatives; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double side = rng.uniform(4.0, image_size / 4.0);
      const double x1 = rng.uniform(0.0, image_size - side);
      const double y1 = rng.uniform(0.0, image_size - side);
      const Box box{x1, y1, x1 + side, y1 + side};
      bool clear = true;
      for (const auto& g : gts) {
        if (pair_iou(box, g.box) >= 0.3) {
          clear = false;
          break;
        }
      }
      if (clear) {
        out.push_back(box);
        break;
      }
    }
  }
  return out;
}

}  // namespace ctdnet::harness
