#pragma once

// Boxes live in feature-grid units. Cell (p, q) is centred on the point
// (x = q, y = p) and covers [q - 0.5, q + 0.5) x [p - 0.5, p + 0.5), so an
// h x w grid spans [-0.5, w - 0.5] x [-0.5, h - 0.5].

#include <cstddef>

namespace saot {

struct Box {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }

  Box translated(double dx, double dy) const { return {x + dx, y + dy, w, h}; }
  bool operator==(const Box&) const = default;
};

struct GridPos {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const GridPos&) const = default;
};

double iou(const Box& a, const Box& b);
double center_error(const Box& a, const Box& b);

// True when the box has positive extent and lies inside the grid extent.
bool box_within_grid(const Box& b, std::size_t height, std::size_t width, double tol = 1e-9);

// Clips a box to the grid extent; extents are floored at min_extent.
Box clamp_box(const Box& b, std::size_t height, std::size_t width, double min_extent = 1e-3);

}  // namespace saot
