#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "saot/autodiff.hpp"
#include "saot/geometry.hpp"
#include "saot/tensor.hpp"

namespace saot {

struct SaliencyConfig {
  double alpha = 0.5;
  double lambda = 1.0;
  double sigma_g = 2.0;
  std::size_t k = 48;
  double eps = 1e-6;

  void validate(std::size_t hx, std::size_t wx) const;
};

// Area-weighted average of the frame over each of out_h x out_w sub-rectangles
// of the box (the frame is piecewise constant over its cells).
template <typename T>
Tensor<T> roi_pool_exemplar(const Tensor<T>& frame, const Box& box, std::size_t out_h = 8, std::size_t out_w = 8);

// values[(u*wx + v), p, q] = cosine(F_x(u,v), F_s(p,q)); zero when either norm < eps.
template <typename T>
struct SimilarityVolume {
  std::size_t hx = 0, wx = 0, hs = 0, ws = 0;
  Tensor<T> values;

  std::size_t maps() const { return hx * wx; }
  std::span<const T> map(std::size_t idx) const { return values.data().subspan(idx * hs * ws, hs * ws); }
};

template <typename T>
SimilarityVolume<T> build_similarity_volume(const Tensor<T>& fx, const Tensor<T>& fs, double eps = 1e-6);

struct MainLobe {
  std::vector<std::uint8_t> mask;  // row-major h x w
  std::size_t area = 0;
  GridPos peak;
  double peak_value = 0;
  double threshold = 0;  // map mean (never above the peak)
};

// Peak = argmax with ties to the smallest row-major index; lobe = 8-connected
// flood fill from the peak over cells >= map mean.
template <typename T>
MainLobe main_lobe(std::span<const T> map, std::size_t h, std::size_t w);

// (max - mean_Phi) / max(std_Phi, eps) over the sidelobe Phi; 0 when Phi is empty.
template <typename T>
double intensity_gamma(std::span<const T> map, const MainLobe& lobe, double eps = 1e-6);

double concentration(const MainLobe& lobe);

double gaussian_prior(double u, double v, std::size_t hx, std::size_t wx, double sigma_g);

struct SaliencyTerms {
  double score = 0;
  double gamma = 0;
  double concentration = 0;
  double prior = 0;
  MainLobe lobe;
};

// s = gamma * c^alpha + lambda * g for exemplar cell (u, v).
template <typename T>
SaliencyTerms saliency_score(std::span<const T> map, std::size_t hs, std::size_t ws, std::size_t u, std::size_t v,
                             std::size_t hx, std::size_t wx, const SaliencyConfig& cfg);

struct SaliencySet {
  std::vector<GridPos> px;       // exemplar cells, best first
  std::vector<GridPos> ps;       // matched search cells (argmax of each map)
  std::vector<double> values;    // non-increasing
  std::vector<double> all_scores;  // every exemplar cell, row-major
};

template <typename T>
SaliencySet select_saliencies(const SimilarityVolume<T>& vol, const SaliencyConfig& cfg);

// Differentiable saliency of one map with the lobe/sidelobe regions taken
// from `lobe` and held fixed. The peak cell is lobe.peak.
template <typename T>
Var<T> saliency_score_op(const Var<T>& map, const MainLobe& lobe, double prior, const SaliencyConfig& cfg);

}  // namespace saot
