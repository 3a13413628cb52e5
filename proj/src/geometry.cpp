#include "saot/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace saot {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double center_error(const Box& a, const Box& b) { return std::hypot(a.cx() - b.cx(), a.cy() - b.cy()); }

bool box_within_grid(const Box& b, std::size_t height, std::size_t width, double tol) {
  if (!(b.w > 0) || !(b.h > 0)) return false;
  const double lo = -0.5 - tol;
  return b.x >= lo && b.y >= lo && b.right() <= static_cast<double>(width) - 0.5 + tol &&
         b.bottom() <= static_cast<double>(height) - 0.5 + tol;
}

Box clamp_box(const Box& b, std::size_t height, std::size_t width, double min_extent) {
  const double xmax = static_cast<double>(width) - 0.5;
  const double ymax = static_cast<double>(height) - 0.5;
  double x0 = std::clamp(b.x, -0.5, xmax - min_extent);
  double y0 = std::clamp(b.y, -0.5, ymax - min_extent);
  double x1 = std::clamp(b.right(), x0 + min_extent, xmax);
  double y1 = std::clamp(b.bottom(), y0 + min_extent, ymax);
  return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace saot
