#pragma once

#include <stdexcept>
#include <string>

namespace ctdnet {

/// Axis-aligned box in continuous coordinates, corners exclusive of nothing:
/// valid iff x2 > x1 and y2 > y1.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 > x1 && y2 > y1; }
};

inline void require_valid(const Box& b, const std::string& what) {
  if (!b.valid()) {
    throw std::invalid_argument(what + ": degenerate box [" + std::to_string(b.x1) + "," +
                                std::to_string(b.y1) + "," + std::to_string(b.x2) + "," +
                                std::to_string(b.y2) + "]");
  }
}

}  // namespace ctdnet
