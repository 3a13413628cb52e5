#pragma once

// Deliberately naive reference implementations. They share no code with the
// library beyond the Tensor container and run in double precision.

#include <string>
#include <vector>

#include "saot/geometry.hpp"
#include "saot/tensor.hpp"

namespace saot::oracle {

template <typename T>
Tensor<double> naive_matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<double> naive_conv2d(const Tensor<T>& x, const Tensor<T>& k);

// [hx*wx, hs, ws] cosine similarities by a quadruple loop.
template <typename T>
Tensor<double> similarity(const Tensor<T>& fx, const Tensor<T>& fs, double eps = 1e-6);

// Peak's component of {v >= mean} by two-pass union-find labelling.
template <typename T>
std::vector<unsigned char> main_lobe_mask(const std::vector<T>& map, std::size_t h, std::size_t w);

template <typename T>
double gamma(const std::vector<T>& map, const std::vector<unsigned char>& lobe, double eps = 1e-6);

// Dense D^-1/2 (A + I) D^-1/2.
Tensor<double> normalize_dense(const Tensor<double>& a);

// sigma(sum_m w_m Â^m X Θ_m) with explicit dense matrix powers; act in {identity, relu}.
Tensor<double> gcn_dense(const Tensor<double>& x, const Tensor<double>& ahat, const std::vector<Tensor<double>>& thetas,
                         const std::vector<double>& ws, bool relu);

double spectral_radius(const Tensor<double>& sym, std::size_t iters = 500);

// Average of the piecewise-constant frame over each bin using `rate`
// samples per grid unit on each axis.
template <typename T>
Tensor<double> roi_pool_supersampled(const Tensor<T>& frame, const Box& box, std::size_t oh, std::size_t ow,
                                     std::size_t rate = 100);

struct BruteMetrics {
  double mean_iou = 0, auc = 0, precision = 0;
  std::vector<double> iou;
};

BruteMetrics metrics(const std::vector<Box>& pred, const std::vector<Box>& gt, const std::vector<std::size_t>& skip);

// max |a - b| / max(max |b|, 1e-30)
template <typename T>
double normwise_rel(const Tensor<T>& a, const Tensor<double>& b);

struct SuiteResult {
  std::string name;
  std::size_t cases = 0;
  double worst = 0;
  double tol = 0;
  bool pass = false;
};

std::vector<SuiteResult> run_suites(std::uint64_t seed);

}  // namespace saot::oracle
