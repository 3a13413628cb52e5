#include "saot/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace saot {

void SaliencyConfig::validate(std::size_t hx, std::size_t wx) const {
  if (k < 1 || k > hx * wx) throw ValidationError("K must be in [1, h_x*w_x]");
  if (!(alpha >= 0)) throw ValidationError("alpha must be >= 0");
  if (!(sigma_g > 0)) throw ValidationError("sigma_g must be > 0");
  if (!(eps > 0)) throw ValidationError("eps must be > 0");
  if (!std::isfinite(lambda)) throw ValidationError("lambda must be finite");
}

namespace {

// Overlap lengths of [lo, hi) with each unit cell [i - 0.5, i + 0.5).
void axis_weights(double lo, double hi, std::size_t extent, std::vector<double>& w, std::size_t& first) {
  const long i0 = std::max<long>(0, static_cast<long>(std::floor(lo + 0.5)));
  const long i1 = std::min<long>(static_cast<long>(extent) - 1, static_cast<long>(std::ceil(hi + 0.5)) - 1);
  w.clear();
  first = static_cast<std::size_t>(i0);
  for (long i = i0; i <= i1; ++i) {
    const double a = std::max(lo, i - 0.5), b = std::min(hi, i + 0.5);
    w.push_back(std::max(0.0, b - a));
  }
}

}  // namespace

template <typename T>
Tensor<T> roi_pool_exemplar(const Tensor<T>& frame, const Box& box, std::size_t out_h, std::size_t out_w) {
  if (frame.rank() != 3) throw DimensionError("roi_pool_exemplar expects a [h,w,c] frame");
  if (out_h < 1 || out_w < 1) throw ContractError("roi_pool_exemplar output extents must be >= 1");
  if (!(box.w >= 1) || !(box.h >= 1)) throw ValidationError("exemplar box must be at least 1x1 grid units");
  const std::size_t H = frame.dim(0), W = frame.dim(1), C = frame.dim(2);
  if (!box_within_grid(box, H, W, 1e-6)) throw ValidationError("exemplar box lies outside the frame");

  Tensor<T> out({out_h, out_w, C});
  std::vector<double> wy, wx, acc(C);
  std::size_t fy = 0, fx = 0;
  const double bh = box.h / out_h, bw = box.w / out_w;
  for (std::size_t a = 0; a < out_h; ++a) {
    axis_weights(box.y + a * bh, box.y + (a + 1) * bh, H, wy, fy);
    for (std::size_t b = 0; b < out_w; ++b) {
      axis_weights(box.x + b * bw, box.x + (b + 1) * bw, W, wx, fx);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t i = 0; i < wy.size(); ++i)
        for (std::size_t j = 0; j < wx.size(); ++j) {
          const double wt = wy[i] * wx[j];
          if (wt == 0) continue;
          for (std::size_t ch = 0; ch < C; ++ch) acc[ch] += wt * frame.at(fy + i, fx + j, ch);
        }
      for (std::size_t ch = 0; ch < C; ++ch) out.at(a, b, ch) = static_cast<T>(acc[ch] / (bh * bw));
    }
  }
  return out;
}

template <typename T>
SimilarityVolume<T> build_similarity_volume(const Tensor<T>& fx, const Tensor<T>& fs, double eps) {
  if (fx.rank() != 3 || fs.rank() != 3) throw DimensionError("similarity volume expects [h,w,c] inputs");
  if (fx.dim(2) != fs.dim(2))
    throw DimensionError("similarity volume channel mismatch: " + std::to_string(fx.dim(2)) + " vs " +
                         std::to_string(fs.dim(2)));
  SimilarityVolume<T> vol;
  vol.hx = fx.dim(0);
  vol.wx = fx.dim(1);
  vol.hs = fs.dim(0);
  vol.ws = fs.dim(1);
  const std::size_t C = fx.dim(2), nx = vol.hx * vol.wx, ns = vol.hs * vol.ws;
  vol.values = Tensor<T>({nx, vol.hs, vol.ws});

  // Extended precision so an exact copy scores exactly 1 after rounding.
  auto norms = [C](const Tensor<T>& f, std::size_t n) {
    std::vector<long double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      long double s = 0;
      for (std::size_t ch = 0; ch < C; ++ch) s += static_cast<long double>(f[i * C + ch]) * f[i * C + ch];
      out[i] = std::sqrt(s);
    }
    return out;
  };
  const auto nxs = norms(fx, nx);
  const auto nss = norms(fs, ns);
  T* dst = vol.values.data().data();
  for (std::size_t a = 0; a < nx; ++a) {
    const T* xa = fx.data().data() + a * C;
    for (std::size_t b = 0; b < ns; ++b) {
      if (nxs[a] < eps || nss[b] < eps) {
        dst[a * ns + b] = T{0};
        continue;
      }
      const T* sb = fs.data().data() + b * C;
      long double dot = 0;
      for (std::size_t ch = 0; ch < C; ++ch) dot += static_cast<long double>(xa[ch]) * sb[ch];
      const long double cs = dot / (nxs[a] * nss[b]);
      dst[a * ns + b] = static_cast<T>(std::clamp(cs, -1.0L, 1.0L));
    }
  }
  return vol;
}

template <typename T>
MainLobe main_lobe(std::span<const T> map, std::size_t h, std::size_t w) {
  if (map.size() != h * w || map.empty()) throw DimensionError("main_lobe: map size does not match h*w");
  MainLobe lobe;
  std::size_t best = 0;
  long double sum = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    sum += map[i];
    if (map[i] > map[best]) best = i;
  }
  lobe.peak = {best / w, best % w};
  lobe.peak_value = map[best];
  // A constant map's rounded mean can land one ulp above its value.
  lobe.threshold = std::min(static_cast<double>(sum / map.size()), lobe.peak_value);
  const double thr = lobe.threshold;

  lobe.mask.assign(map.size(), 0);
  std::vector<std::size_t> stack{best};
  lobe.mask[best] = 1;
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    stack.pop_back();
    ++lobe.area;
    const long r = static_cast<long>(cur / w), c = static_cast<long>(cur % w);
    for (long dr = -1; dr <= 1; ++dr)
      for (long dc = -1; dc <= 1; ++dc) {
        const long nr = r + dr, nc = c + dc;
        if ((dr == 0 && dc == 0) || nr < 0 || nc < 0 || nr >= static_cast<long>(h) || nc >= static_cast<long>(w))
          continue;
        const std::size_t n = static_cast<std::size_t>(nr) * w + static_cast<std::size_t>(nc);
        if (lobe.mask[n] || static_cast<double>(map[n]) < thr) continue;
        lobe.mask[n] = 1;
        stack.push_back(n);
      }
  }
  return lobe;
}

template <typename T>
double intensity_gamma(std::span<const T> map, const MainLobe& lobe, double eps) {
  if (lobe.mask.size() != map.size()) throw DimensionError("intensity_gamma: lobe mask does not match map");
  const std::size_t n = map.size() - lobe.area;
  if (n == 0) return 0.0;
  double mu = 0;
  for (std::size_t i = 0; i < map.size(); ++i)
    if (!lobe.mask[i]) mu += map[i];
  mu /= static_cast<double>(n);
  double var = 0;
  for (std::size_t i = 0; i < map.size(); ++i)
    if (!lobe.mask[i]) var += (map[i] - mu) * (map[i] - mu);
  const double sd = std::sqrt(var / static_cast<double>(n));
  return (lobe.peak_value - mu) / std::max(sd, eps);
}

double concentration(const MainLobe& lobe) {
  if (lobe.area < 1) throw ContractError("concentration of an empty main lobe");
  return 1.0 / static_cast<double>(lobe.area);
}

double gaussian_prior(double u, double v, std::size_t hx, std::size_t wx, double sigma_g) {
  if (!(sigma_g > 0)) throw ValidationError("sigma_g must be > 0");
  const double cu = (static_cast<double>(hx) - 1) / 2, cv = (static_cast<double>(wx) - 1) / 2;
  return std::exp(-((u - cu) * (u - cu) + (v - cv) * (v - cv)) / (2 * sigma_g * sigma_g));
}

template <typename T>
SaliencyTerms saliency_score(std::span<const T> map, std::size_t hs, std::size_t ws, std::size_t u, std::size_t v,
                             std::size_t hx, std::size_t wx, const SaliencyConfig& cfg) {
  SaliencyTerms t;
  t.lobe = main_lobe(map, hs, ws);
  t.gamma = intensity_gamma(map, t.lobe, cfg.eps);
  t.concentration = concentration(t.lobe);
  t.prior = gaussian_prior(static_cast<double>(u), static_cast<double>(v), hx, wx, cfg.sigma_g);
  t.score = t.gamma * std::pow(t.concentration, cfg.alpha) + cfg.lambda * t.prior;
  return t;
}

template <typename T>
SaliencySet select_saliencies(const SimilarityVolume<T>& vol, const SaliencyConfig& cfg) {
  cfg.validate(vol.hx, vol.wx);
  const std::size_t n = vol.maps();
  SaliencySet set;
  set.all_scores.resize(n);
  std::vector<GridPos> peaks(n);
  for (std::size_t idx = 0; idx < n; ++idx) {
    const auto t = saliency_score(vol.map(idx), vol.hs, vol.ws, idx / vol.wx, idx % vol.wx, vol.hx, vol.wx, cfg);
    set.all_scores[idx] = t.score;
    peaks[idx] = t.lobe.peak;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return set.all_scores[a] > set.all_scores[b]; });
  for (std::size_t i = 0; i < cfg.k; ++i) {
    const std::size_t idx = order[i];
    set.px.push_back({idx / vol.wx, idx % vol.wx});
    set.ps.push_back(peaks[idx]);
    set.values.push_back(set.all_scores[idx]);
  }
  return set;
}

template <typename T>
Var<T> saliency_score_op(const Var<T>& map, const MainLobe& lobe, double prior, const SaliencyConfig& cfg) {
  const Tensor<T>& m = map.value();
  if (m.rank() != 2 || lobe.mask.size() != m.size())
    throw DimensionError("saliency_score_op: expects an [h,w] map matching the lobe mask");
  const std::size_t peak = lobe.peak.row * m.dim(1) + lobe.peak.col;
  const std::size_t n = m.size() - lobe.area;
  const double cpow = std::pow(1.0 / static_cast<double>(lobe.area), cfg.alpha);
  double mu = 0, sd = 0, gamma = 0;
  if (n > 0) {
    for (std::size_t i = 0; i < m.size(); ++i)
      if (!lobe.mask[i]) mu += m[i];
    mu /= static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (!lobe.mask[i]) var += (m[i] - mu) * (m[i] - mu);
    sd = std::sqrt(var / static_cast<double>(n));
    gamma = (m[peak] - mu) / std::max(sd, cfg.eps);
  }
  const double score = gamma * cpow + cfg.lambda * prior;
  return record_op<T>(
      Tensor<T>::scalar(static_cast<T>(score)), {map},
      [x = m, mask = lobe.mask, peak, n, mu, sd, gamma, cpow, eps = cfg.eps](const Tensor<T>& g,
                                                                              std::vector<Tensor<T>*>& gi) {
        if (!gi[0] || n == 0) return;
        Tensor<T>& d = *gi[0];
        const double go = g[0] * cpow;
        const double denom = std::max(sd, eps);
        d[peak] += static_cast<T>(go / denom);
        // sidelobe cells move the mean and, above the floor, the spread
        const double nn = static_cast<double>(n);
        for (std::size_t i = 0; i < mask.size(); ++i) {
          if (mask[i]) continue;
          double dv = -1.0 / (nn * denom);
          if (sd > eps) dv -= gamma / denom * (x[i] - mu) / (nn * sd);
          d[i] += static_cast<T>(go * dv);
        }
      });
}

#define SAOT_INSTANTIATE(T)                                                                                    \
  template Tensor<T> roi_pool_exemplar<T>(const Tensor<T>&, const Box&, std::size_t, std::size_t);            \
  template SimilarityVolume<T> build_similarity_volume<T>(const Tensor<T>&, const Tensor<T>&, double);         \
  template MainLobe main_lobe<T>(std::span<const T>, std::size_t, std::size_t);                               \
  template double intensity_gamma<T>(std::span<const T>, const MainLobe&, double);                            \
  template SaliencyTerms saliency_score<T>(std::span<const T>, std::size_t, std::size_t, std::size_t,         \
                                           std::size_t, std::size_t, std::size_t, const SaliencyConfig&);      \
  template SaliencySet select_saliencies<T>(const SimilarityVolume<T>&, const SaliencyConfig&);               \
  template Var<T> saliency_score_op<T>(const Var<T>&, const MainLobe&, double, const SaliencyConfig&);

SAOT_INSTANTIATE(float)
SAOT_INSTANTIATE(double)
#undef SAOT_INSTANTIATE

}  // namespace saot
