#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "saot/association.hpp"
#include "saot/saliency.hpp"
#include "saot/tracker.hpp"

namespace saot::oracle {

template <typename T>
Tensor<double> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(a.at(i, p)) * b.at(p, j);
      c.at(i, j) = s;
    }
  return c;
}

template <typename T>
Tensor<double> naive_conv2d(const Tensor<T>& x, const Tensor<T>& k) {
  const long h = static_cast<long>(x.dim(0)), w = static_cast<long>(x.dim(1));
  const std::size_t cin = x.dim(2), kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  Tensor<double> y({x.dim(0), x.dim(1), cout});
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j)
      for (std::size_t o = 0; o < cout; ++o) {
        double s = 0;
        for (std::size_t di = 0; di < kh; ++di)
          for (std::size_t dj = 0; dj < kw; ++dj) {
            const long si = i + static_cast<long>(di) - static_cast<long>(kh / 2);
            const long sj = j + static_cast<long>(dj) - static_cast<long>(kw / 2);
            if (si < 0 || sj < 0 || si >= h || sj >= w) continue;
            for (std::size_t c = 0; c < cin; ++c)
              s += static_cast<double>(x.at(si, sj, c)) * k[((di * kw + dj) * cin + c) * cout + o];
          }
        y.at(i, j, o) = s;
      }
  return y;
}

template <typename T>
Tensor<double> similarity(const Tensor<T>& fx, const Tensor<T>& fs, double eps) {
  const std::size_t hx = fx.dim(0), wx = fx.dim(1), hs = fs.dim(0), ws = fs.dim(1), c = fx.dim(2);
  Tensor<double> out({hx * wx, hs, ws});
  for (std::size_t u = 0; u < hx; ++u)
    for (std::size_t v = 0; v < wx; ++v)
      for (std::size_t p = 0; p < hs; ++p)
        for (std::size_t q = 0; q < ws; ++q) {
          double dot = 0, na = 0, nb = 0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double a = fx.at(u, v, ch), b = fs.at(p, q, ch);
            dot += a * b;
            na += a * a;
            nb += b * b;
          }
          na = std::sqrt(na);
          nb = std::sqrt(nb);
          out[(u * wx + v) * hs * ws + p * ws + q] = (na < eps || nb < eps) ? 0.0 : dot / (na * nb);
        }
  return out;
}

namespace {

std::size_t find(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) x = parent[x] = parent[parent[x]];
  return x;
}

}  // namespace

template <typename T>
std::vector<unsigned char> main_lobe_mask(const std::vector<T>& map, std::size_t h, std::size_t w) {
  long double sum = 0;
  for (T v : map) sum += v;
  const double mean = static_cast<double>(sum / map.size());
  const std::size_t n = map.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto above = [&](std::size_t i) { return static_cast<double>(map[i]) >= mean; };
  // first pass: union with already-visited 8-neighbours (W, NW, N, NE)
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t a = i * w + j;
      if (!above(a)) continue;
      const long nb[4][2] = {{0, -1}, {-1, -1}, {-1, 0}, {-1, 1}};
      for (const auto& d : nb) {
        const long r = static_cast<long>(i) + d[0], c = static_cast<long>(j) + d[1];
        if (r < 0 || c < 0 || c >= static_cast<long>(w)) continue;
        const std::size_t b = static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c);
        if (above(b)) parent[find(parent, a)] = find(parent, b);
      }
    }
  std::size_t peak = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (map[i] > map[peak]) peak = i;
  std::vector<unsigned char> mask(n, 0);
  const std::size_t root = find(parent, peak);
  for (std::size_t i = 0; i < n; ++i)
    if (above(i) && find(parent, i) == root) mask[i] = 1;
  mask[peak] = 1;
  return mask;
}

template <typename T>
double gamma(const std::vector<T>& map, const std::vector<unsigned char>& lobe, double eps) {
  std::vector<double> side;
  double mx = -INFINITY;
  for (std::size_t i = 0; i < map.size(); ++i) {
    mx = std::max(mx, static_cast<double>(map[i]));
    if (!lobe[i]) side.push_back(map[i]);
  }
  if (side.empty()) return 0.0;
  const double mu = std::accumulate(side.begin(), side.end(), 0.0) / side.size();
  double var = 0;
  for (double v : side) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / side.size());
  return (mx - mu) / std::max(sd, eps);
}

Tensor<double> normalize_dense(const Tensor<double>& a) {
  const std::size_t n = a.dim(0);
  Tensor<double> at = a;
  for (std::size_t i = 0; i < n; ++i) at.at(i, i) += 1.0;
  std::vector<double> d(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i] += at.at(i, j);
  Tensor<double> out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = at.at(i, j) / std::sqrt(d[i] * d[j]);
  return out;
}

Tensor<double> gcn_dense(const Tensor<double>& x, const Tensor<double>& ahat, const std::vector<Tensor<double>>& thetas,
                         const std::vector<double>& ws, bool relu) {
  const std::size_t n = x.dim(0), dout = thetas[0].dim(1);
  Tensor<double> out({n, dout});
  Tensor<double> power({n, n});
  for (std::size_t i = 0; i < n; ++i) power.at(i, i) = 1.0;
  for (std::size_t m = 0; m < thetas.size(); ++m) {
    power = naive_matmul(power, ahat);
    const Tensor<double> term = naive_matmul(naive_matmul(power, x), thetas[m]);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += ws[m] * term[i];
  }
  if (relu)
    for (auto& v : out.data()) v = std::max(v, 0.0);
  return out;
}

double spectral_radius(const Tensor<double>& sym, std::size_t iters) {
  const std::size_t n = sym.dim(0);
  std::vector<double> v(n), nv(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i % 7);
  double lambda = 0;
  for (std::size_t it = 0; it < iters; ++it) {
    double norm = 0;
    for (std::size_t i = 0; i < n; ++i) {
      nv[i] = 0;
      for (std::size_t j = 0; j < n; ++j) nv[i] += sym.at(i, j) * v[j];
      norm += nv[i] * nv[i];
    }
    norm = std::sqrt(norm);
    if (norm == 0) return 0;
    double vn = 0;
    for (double x : v) vn += x * x;
    lambda = norm / std::sqrt(vn);
    for (std::size_t i = 0; i < n; ++i) v[i] = nv[i] / norm;
  }
  return lambda;
}

template <typename T>
Tensor<double> roi_pool_supersampled(const Tensor<T>& frame, const Box& box, std::size_t oh, std::size_t ow,
                                     std::size_t rate) {
  const std::size_t H = frame.dim(0), W = frame.dim(1), C = frame.dim(2);
  Tensor<double> out({oh, ow, C});
  const double bh = box.h / oh, bw = box.w / ow;
  for (std::size_t a = 0; a < oh; ++a)
    for (std::size_t b = 0; b < ow; ++b) {
      const double y0 = box.y + a * bh, x0 = box.x + b * bw;
      const long ny = std::max(1L, std::lround(bh * rate)), nx = std::max(1L, std::lround(bw * rate));
      std::vector<double> acc(C, 0.0);
      for (long i = 0; i < ny; ++i) {
        const double y = y0 + (i + 0.5) * bh / ny;
        const long r = static_cast<long>(std::floor(y + 0.5));
        if (r < 0 || r >= static_cast<long>(H)) continue;
        for (long j = 0; j < nx; ++j) {
          const double x = x0 + (j + 0.5) * bw / nx;
          const long c = static_cast<long>(std::floor(x + 0.5));
          if (c < 0 || c >= static_cast<long>(W)) continue;
          for (std::size_t ch = 0; ch < C; ++ch) acc[ch] += frame.at(r, c, ch);
        }
      }
      for (std::size_t ch = 0; ch < C; ++ch) out.at(a, b, ch) = acc[ch] / static_cast<double>(nx * ny);
    }
  return out;
}

BruteMetrics metrics(const std::vector<Box>& pred, const std::vector<Box>& gt, const std::vector<std::size_t>& skip) {
  BruteMetrics m;
  std::vector<double> ce;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (std::count(skip.begin(), skip.end(), t)) continue;
    const Box& a = pred[t];
    const Box& b = gt[t];
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    m.iou.push_back(uni > 0 ? inter / uni : 0.0);
    const double dx = (a.x + a.w / 2) - (b.x + b.w / 2), dy = (a.y + a.h / 2) - (b.y + b.h / 2);
    ce.push_back(std::sqrt(dx * dx + dy * dy));
  }
  if (m.iou.empty()) return m;
  double auc = 0;
  for (int k = 0; k < 20; ++k) {
    std::size_t c = 0;
    for (double v : m.iou) c += v > k / 20.0;
    auc += static_cast<double>(c) / m.iou.size();
  }
  m.auc = auc / 20.0;
  m.mean_iou = std::accumulate(m.iou.begin(), m.iou.end(), 0.0) / m.iou.size();
  m.precision = static_cast<double>(std::count_if(ce.begin(), ce.end(), [](double e) { return e <= 2.0; })) /
                m.iou.size();
  return m;
}

template <typename T>
double normwise_rel(const Tensor<T>& a, const Tensor<double>& b) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / std::max(scale, 1e-30);
}

namespace {

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

template <typename T>
SuiteResult matmul_suite(Rng rng, double tol, const char* name) {
  SuiteResult r{name, 0, 0, tol, true};
  for (int i = 0; i < 50; ++i) {
    const std::size_t m = between(rng, 1, 8), k = between(rng, 1, 8), n = between(rng, 1, 8);
    const auto a = random_uniform<T>({m, k}, rng, -1, 1);
    const auto b = random_uniform<T>({k, n}, rng, -1, 1);
    r.worst = std::max(r.worst, normwise_rel(saot::matmul(a, b), naive_matmul(a, b)));
    ++r.cases;
  }
  r.pass = r.worst <= tol;
  return r;
}

template <typename T>
SuiteResult conv_suite(Rng rng, double tol, const char* name) {
  SuiteResult r{name, 0, 0, tol, true};
  const std::size_t ks[3] = {1, 3, 5};
  for (int i = 0; i < 50; ++i) {
    const std::size_t h = between(rng, 1, 8), w = between(rng, 1, 8), cin = between(rng, 1, 4),
                      cout = between(rng, 1, 4);
    const std::size_t kh = ks[rng.below(3)], kw = ks[rng.below(3)];
    const auto x = random_uniform<T>({h, w, cin}, rng, -1, 1);
    const auto k = random_uniform<T>({kh, kw, cin, cout}, rng, -1, 1);
    r.worst = std::max(r.worst, normwise_rel(saot::conv2d(x, k), naive_conv2d(x, k)));
    ++r.cases;
  }
  r.pass = r.worst <= tol;
  return r;
}

SuiteResult similarity_suite(Rng rng) {
  SuiteResult r{"similarity_volume_f32", 0, 0, 1e-6, true};
  for (int i = 0; i < 50; ++i) {
    const std::size_t hx = between(rng, 1, 8), wx = between(rng, 1, 8), hs = between(rng, 1, 8),
                      ws = between(rng, 1, 8), c = between(rng, 1, 16);
    auto fx = random_uniform<float>({hx, wx, c}, rng, -1, 1);
    auto fs = random_uniform<float>({hs, ws, c}, rng, -1, 1);
    // a few zero vectors exercise the norm floor
    for (std::size_t ch = 0; ch < c; ++ch) fs[ch] = 0.0f;
    const auto vol = build_similarity_volume(fx, fs);
    r.worst = std::max(r.worst, normwise_rel(vol.values, similarity(fx, fs)));
    ++r.cases;
  }
  r.pass = r.worst <= r.tol;
  return r;
}

template <typename T>
SuiteResult gcn_suite(Rng rng, double tol, const char* name) {
  SuiteResult r{name, 0, 0, tol, true};
  for (int i = 0; i < 50; ++i) {
    const std::size_t hs = between(rng, 1, 4), ws = between(rng, 2, 4);
    std::vector<GridPos> ps;
    const std::size_t k = between(rng, 0, 5);
    for (std::size_t j = 0; j < k; ++j) ps.push_back({rng.below(hs), rng.below(ws)});
    const EdgeSet c = build_edge_set(ps, hs, ws);
    const std::size_t n = c.nodes, din = between(rng, 1, 8), dout = between(rng, 1, 8), M = between(rng, 1, 3);
    const auto a = random_uniform<T>({c.edges.size()}, rng, 0.01, 0.99);
    const auto x = random_uniform<T>({n, din}, rng, -1, 1);
    std::vector<Var<T>> thetas, wv;
    std::vector<Tensor<double>> thetas_d;
    std::vector<double> wd;
    for (std::size_t m = 0; m < M; ++m) {
      thetas.push_back(random_uniform<T>({din, dout}, rng, -1, 1));
      thetas_d.push_back(thetas.back().value().template cast<double>());
      wd.push_back(rng.uniform(-1, 1));
      wv.push_back(Tensor<T>::scalar(static_cast<T>(wd.back())));
      wd.back() = static_cast<double>(static_cast<T>(wd.back()));
    }
    const bool relu = rng.below(2) == 1;
    Tensor<double> dense({n, n});
    for (std::size_t e = 0; e < c.edges.size(); ++e) {
      dense.at(c.edges[e].first, c.edges[e].second) = a[e];
      dense.at(c.edges[e].second, c.edges[e].first) = a[e];
    }
    const Var<T> ahat = c.edges.empty() ? Var<T>(Tensor<T>({n}, T{1})) : normalize_adjacency(Var<T>(a), c);
    const auto got = gcn_layer(Var<T>(x), ahat, c, thetas, wv, relu ? Activation::Relu : Activation::Identity);
    const auto norm = normalize_dense(dense);
    const auto want = gcn_dense(x.template cast<double>(), norm, thetas_d, wd, relu);
    // Mixed-sign w_m can cancel, so errors are scaled by the magnitude of the
    // terms rather than of the result.
    auto absd = [](Tensor<double> t) {
      for (auto& v : t.data()) v = std::abs(v);
      return t;
    };
    std::vector<Tensor<double>> thetas_abs;
    std::vector<double> wd_abs;
    for (std::size_t m = 0; m < M; ++m) {
      thetas_abs.push_back(absd(thetas_d[m]));
      wd_abs.push_back(std::abs(wd[m]));
    }
    const auto bound = gcn_dense(absd(x.template cast<double>()), norm, thetas_abs, wd_abs, false);
    double diff = 0, scale = 1e-30;
    for (std::size_t i = 0; i < want.size(); ++i) {
      diff = std::max(diff, std::abs(static_cast<double>(got.value()[i]) - want[i]));
      scale = std::max(scale, bound[i]);
    }
    r.worst = std::max(r.worst, diff / scale);
    ++r.cases;
  }
  r.pass = r.worst <= tol;
  return r;
}

SuiteResult metrics_suite(Rng rng) {
  SuiteResult r{"metrics_exact", 0, 0, 0, true};
  auto rand_box = [&rng]() {
    return Box{rng.uniform(-0.5, 20), rng.uniform(-0.5, 20), rng.uniform(0.5, 8), rng.uniform(0.5, 8)};
  };
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = between(rng, 1, 30);
    std::vector<Box> pred, gt;
    for (std::size_t t = 0; t < n; ++t) {
      gt.push_back(rand_box());
      // mix of exact hits, near misses and random boxes
      const auto kind = rng.below(3);
      pred.push_back(kind == 0 ? gt.back() : kind == 1 ? gt.back().translated(rng.uniform(-2, 2), rng.uniform(-2, 2))
                                                       : rand_box());
    }
    const std::vector<std::size_t> skip = rng.below(2) ? std::vector<std::size_t>{0} : std::vector<std::size_t>{};
    const auto got = evaluate(pred, gt, skip);
    const auto want = metrics(pred, gt, skip);
    const bool same = got.iou == want.iou && got.mean_iou == want.mean_iou && got.success_auc == want.auc &&
                      got.precision == want.precision;
    if (!same) r.worst = std::max(r.worst, std::abs(got.success_auc - want.auc) + std::abs(got.mean_iou - want.mean_iou) +
                                               std::abs(got.precision - want.precision) + 1e-300);
    r.pass = r.pass && same;
    ++r.cases;
  }
  return r;
}

SuiteResult roi_suite(Rng rng) {
  SuiteResult r{"roi_pool_supersampled", 0, 0, 1e-3, true};
  for (int i = 0; i < 50; ++i) {
    const std::size_t H = between(rng, 12, 16), W = between(rng, 12, 16), C = between(rng, 1, 4);
    const auto frame = random_uniform<float>({H, W, C}, rng, -1, 1);
    // corners on a 0.08 lattice keep every bin edge on the 0.01 sampling grid
    auto lattice = [&rng](double lo, double hi) { return std::round(rng.uniform(lo, hi) / 0.08) * 0.08; };
    const double w = std::max(1.04, lattice(1, 8)), h = std::max(1.04, lattice(1, 8));
    const double x = lattice(-0.5, W - 0.5 - w) , y = lattice(-0.5, H - 0.5 - h);
    const Box box{std::max(x, -0.48), std::max(y, -0.48), w, h};
    if (!box_within_grid(box, H, W)) continue;
    const auto got = roi_pool_exemplar(frame, box, 8, 8);
    const auto want = roi_pool_supersampled(frame, box, 8, 8);
    double worst = 0;
    for (std::size_t k = 0; k < want.size(); ++k) worst = std::max(worst, std::abs(got[k] - want[k]));
    r.worst = std::max(r.worst, worst);
    ++r.cases;
  }
  r.pass = r.worst <= r.tol && r.cases >= 40;
  return r;
}

SuiteResult lobe_suite(Rng rng) {
  SuiteResult r{"main_lobe_and_gamma", 0, 0, 1e-12, true};
  for (int i = 0; i < 200; ++i) {
    const std::size_t h = between(rng, 1, 12), w = between(rng, 1, 12);
    std::vector<double> map(h * w);
    // smooth-ish blobs so components are nontrivial
    const double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
    for (std::size_t p = 0; p < h; ++p)
      for (std::size_t q = 0; q < w; ++q)
        map[p * w + q] = std::exp(-((p - cy) * (p - cy) + (q - cx) * (q - cx)) / 6.0) + rng.uniform(-0.3, 0.3);
    const MainLobe lobe = main_lobe(std::span<const double>(map), h, w);
    const auto want = main_lobe_mask(map, h, w);
    bool same = true;
    for (std::size_t k = 0; k < map.size(); ++k) same = same && (lobe.mask[k] != 0) == (want[k] != 0);
    const double g = intensity_gamma(std::span<const double>(map), lobe);
    const double gw = gamma(map, want);
    const double err = std::abs(g - gw) / std::max(1.0, std::abs(gw));
    r.worst = std::max(r.worst, err);
    r.pass = r.pass && same;
    ++r.cases;
  }
  r.pass = r.pass && r.worst <= r.tol;
  return r;
}

}  // namespace

std::vector<SuiteResult> run_suites(std::uint64_t seed) {
  const Rng root(seed);
  return {matmul_suite<float>(root.split(1), 1e-6, "matmul_f32"),
          matmul_suite<double>(root.split(2), 1e-12, "matmul_f64"),
          conv_suite<float>(root.split(3), 1e-6, "conv2d_f32"),
          conv_suite<double>(root.split(4), 1e-12, "conv2d_f64"),
          similarity_suite(root.split(5)),
          gcn_suite<float>(root.split(6), 1e-6, "gcn_layer_f32"),
          gcn_suite<double>(root.split(7), 1e-12, "gcn_layer_f64"),
          metrics_suite(root.split(8)),
          roi_suite(root.split(9)),
          lobe_suite(root.split(10))};
}

#define SAOT_INSTANTIATE(T)                                                                               \
  template Tensor<double> naive_matmul<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<double> naive_conv2d<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<double> similarity<T>(const Tensor<T>&, const Tensor<T>&, double);                      \
  template std::vector<unsigned char> main_lobe_mask<T>(const std::vector<T>&, std::size_t, std::size_t); \
  template double gamma<T>(const std::vector<T>&, const std::vector<unsigned char>&, double);             \
  template Tensor<double> roi_pool_supersampled<T>(const Tensor<T>&, const Box&, std::size_t, std::size_t, \
                                                   std::size_t);                                          \
  template double normwise_rel<T>(const Tensor<T>&, const Tensor<double>&);

SAOT_INSTANTIATE(float)
SAOT_INSTANTIATE(double)
#undef SAOT_INSTANTIATE

}  // namespace saot::oracle
