#pragma once

#include <deque>
#include <vector>

#include "saot/geometry.hpp"
#include "saot/params.hpp"

namespace saot {

template <typename T>
void init_head_params(ParamSet<T>& params, std::size_t cin, std::size_t width, Rng& rng);

// Two 3x3 conv + ReLU layers, then a 1x1 projection.
template <typename T>
Var<T> cls_head(const Var<T>& corr, const BoundParams<T>& p);  // [h, w], sigmoid
template <typename T>
Var<T> reg_head(const Var<T>& corr, const BoundParams<T>& p);  // [h, w, 4] = exp(raw) as (l, t, r, b)

// beta * p_r + (1 - beta) * p_o
template <typename T>
Tensor<T> fuse_response(const Tensor<T>& p_r, const Tensor<T>& p_o, double beta);

struct Decoded {
  Box box;
  double confidence = 0;
  GridPos peak;
};

// Box at the argmax of p_cls (ties to the smallest row-major index),
// x = q - l, y = p - t, w = l + r, h = t + b, clipped to the grid.
template <typename T>
Decoded decode_box(const Tensor<T>& p_cls, const Tensor<T>& offsets);

double giou(const Box& a, const Box& b, double area_floor = 1e-6);
double giou_loss(const Box& pred, const Box& gt, double area_floor = 1e-6);

struct Location {
  std::size_t row = 0, col = 0;
};

// Mean of 1 - GIoU over `positives`, where the prediction at (p, q) is the
// box decoded from offsets[p, q, :].
template <typename T>
Var<T> giou_loss_op(const Var<T>& offsets, const std::vector<Location>& positives, const Box& gt,
                    double area_floor = 1e-6);

// Mean of -(pw * y * log p + (1 - y) * log(1 - p)), p clamped to [1e-7, 1 - 1e-7].
template <typename T>
Var<T> bce_loss(const Var<T>& p, const Tensor<T>& labels, double pos_weight);

// 1 inside radius `radius` of the centre, else 0.
template <typename T>
Tensor<T> center_labels(std::size_t h, std::size_t w, double cx, double cy, double radius = 1.5);

template <typename T>
Tensor<T> gaussian_label(std::size_t h, std::size_t w, double cx, double cy, double sigma = 2.0);

struct FilterConfig {
  std::size_t k = 5;
  double lambda = 0.1;
  double eta = 0.1;
  std::size_t n_cg = 5;
  std::size_t init_cg = 20;
  double label_sigma = 2.0;
  std::size_t max_samples = 8;

  void validate() const;
};

// Ridge-regression correlation filter: minimises
//   sum_s w_s ||k * F_s - y_s||^2 + lambda ||k||^2
// over a weighted sample memory whose weights sum to one.
struct OnlineFilterState {
  struct Sample {
    std::size_t h = 0, w = 0;
    std::vector<float> cols;   // im2col of the features, [h*w, k*k*d]
    std::vector<float> label;  // [h*w]
    double weight = 0;
  };
  std::size_t channels = 0;
  Tensor<float> kernel;  // [k, k, d, 1]
  std::deque<Sample> memory;
  std::size_t skipped_updates = 0;
  bool initialized = false;
};

// Objective value and data residual norm sqrt(sum_s w_s ||k*F_s - y_s||^2).
struct FilterObjective {
  double objective = 0;
  double residual = 0;
};

void online_filter_init(OnlineFilterState& st, const Tensor<float>& features, const Tensor<float>& label,
                        const FilterConfig& cfg);
// Returns false (and counts a skip) when the features are not finite.
bool online_filter_update(OnlineFilterState& st, const Tensor<float>& features, const Tensor<float>& label,
                          const FilterConfig& cfg);
// Runs n conjugate-gradient steps on the current memory; returns the
// objective after each step when `history` is given.
void online_filter_solve(OnlineFilterState& st, std::size_t steps, const FilterConfig& cfg,
                         std::vector<FilterObjective>* history = nullptr);
FilterObjective online_filter_objective(const OnlineFilterState& st, const FilterConfig& cfg);
Tensor<float> filter_response(const OnlineFilterState& st, const Tensor<float>& features);  // [h, w]

}  // namespace saot
