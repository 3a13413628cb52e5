#include "saot/association.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "saot/kernels.hpp"

namespace saot {

Variant parse_variant(const std::string& name) {
  if (name == "base") return Variant::Base;
  if (name == "ppfm") return Variant::Ppfm;
  if (name == "pam") return Variant::Pam;
  if (name == "saot") return Variant::Saot;
  if (name == "dw_corr") return Variant::DwCorr;
  if (name == "pg_corr") return Variant::PgCorr;
  throw ValidationError("unknown variant '" + name + "' (expected base|ppfm|pam|saot|dw_corr|pg_corr)");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Base: return "base";
    case Variant::Ppfm: return "ppfm";
    case Variant::Pam: return "pam";
    case Variant::Saot: return "saot";
    case Variant::DwCorr: return "dw_corr";
    case Variant::PgCorr: return "pg_corr";
  }
  return "?";
}

std::vector<double> normalized_saliency(const SaliencySet& sal, std::size_t hx, std::size_t wx, bool* degenerate) {
  std::vector<double> shat(hx * wx, 0.0);
  double mx = -INFINITY;
  for (double v : sal.values) mx = std::max(mx, v);
  const bool bad = sal.values.empty() || !(mx > 0);
  if (degenerate) *degenerate = bad;
  if (bad) return shat;
  for (std::size_t k = 0; k < sal.px.size(); ++k) shat[sal.px[k].row * wx + sal.px[k].col] = sal.values[k] / mx;
  return shat;
}

template <typename T>
Tensor<T> build_node_features(const SimilarityVolume<T>& vol, const Tensor<T>& fs, const std::vector<double>& shat) {
  if (fs.rank() != 3 || fs.dim(0) != vol.hs || fs.dim(1) != vol.ws)
    throw DimensionError("node features: search features do not match the similarity volume");
  if (shat.size() != vol.maps()) throw DimensionError("node features: saliency weights do not match exemplar size");
  const std::size_t n = vol.hs * vol.ws, m = vol.maps(), c = fs.dim(2), d = m + c;
  Tensor<T> fg({n, d});
  for (std::size_t k = 0; k < m; ++k) {
    const auto map = vol.map(k);
    const T sk = static_cast<T>(shat[k]);
    for (std::size_t i = 0; i < n; ++i) fg[i * d + k] = shat[k] == 0.0 ? T{0} : map[i] * sk;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) fg[i * d + m + ch] = fs[i * c + ch];
  return fg;
}

EdgeSet build_edge_set(const std::vector<GridPos>& ps, std::size_t hs, std::size_t ws) {
  EdgeSet c;
  c.nodes = hs * ws;
  auto& e = c.edges;
  auto id = [ws](std::size_t r, std::size_t q) { return static_cast<std::uint32_t>(r * ws + q); };
  for (std::size_t r = 0; r < hs; ++r)
    for (std::size_t q = 0; q < ws; ++q) {
      if (q + 1 < ws) e.emplace_back(id(r, q), id(r, q + 1));
      if (r + 1 < hs) {
        e.emplace_back(id(r, q), id(r + 1, q));
        if (q + 1 < ws) e.emplace_back(id(r, q), id(r + 1, q + 1));
        if (q > 0) e.emplace_back(id(r, q), id(r + 1, q - 1));
      }
    }
  std::set<std::uint32_t> nodes;
  for (const auto& p : ps) {
    if (p.row >= hs || p.col >= ws) throw ContractError("saliency position outside the search grid");
    nodes.insert(id(p.row, p.col));
  }
  const std::vector<std::uint32_t> sal(nodes.begin(), nodes.end());
  for (std::size_t a = 0; a < sal.size(); ++a)
    for (std::size_t b = a + 1; b < sal.size(); ++b) e.emplace_back(sal[a], sal[b]);
  c.saliency_edges = sal.size() * (sal.size() - (sal.empty() ? 0 : 1)) / 2;
  for (auto& [i, j] : e)
    if (i > j) std::swap(i, j);
  std::sort(e.begin(), e.end());
  e.erase(std::unique(e.begin(), e.end()), e.end());
  return c;
}

template <typename T>
Var<T> edge_weights(const Var<T>& fg, const EdgeSet& c, const Var<T>& w1, const Var<T>& b1, const Var<T>& w2,
                    const Var<T>& b2) {
  if (fg.value().rank() != 2 || fg.shape()[0] != c.nodes) throw DimensionError("edge_weights: F_g must be [N, d]");
  if (c.edges.empty()) throw ContractError("edge_weights: empty edge set");
  std::vector<std::size_t> is, js;
  is.reserve(c.edges.size());
  js.reserve(c.edges.size());
  for (const auto& [i, j] : c.edges) {
    is.push_back(i);
    js.push_back(j);
  }
  const Var<T> diff = ad::abs(ad::sub(ad::gather_rows(fg, is), ad::gather_rows(fg, js)));
  const Var<T> h = ad::activate(ad::add_bias(ad::matmul(diff, w1), b1), Activation::Relu);
  const Var<T> z = ad::activate(ad::add_bias(ad::matmul(h, w2), b2), Activation::Sigmoid);
  return ad::reshape(z, {c.edges.size()});
}

template <typename T>
Var<T> normalize_adjacency(const Var<T>& a, const EdgeSet& c) {
  const std::size_t E = c.edges.size(), N = c.nodes;
  if (E > 0 && a.size() != E) throw DimensionError("normalize_adjacency: weight count does not match edge count");
  std::vector<double> deg(N, 1.0);
  for (std::size_t e = 0; e < E; ++e) {
    const double w = a.value()[e];
    if (w < 0) throw ContractError("normalize_adjacency: negative edge weight");
    deg[c.edges[e].first] += w;
    deg[c.edges[e].second] += w;
  }
  std::vector<double> rs(N);
  for (std::size_t i = 0; i < N; ++i) rs[i] = 1.0 / std::sqrt(deg[i]);
  Tensor<T> out({E + N});
  for (std::size_t e = 0; e < E; ++e)
    out[e] = static_cast<T>(a.value()[e] * rs[c.edges[e].first] * rs[c.edges[e].second]);
  for (std::size_t i = 0; i < N; ++i) out[E + i] = static_cast<T>(1.0 / deg[i]);
  if (E == 0) return Var<T>(std::move(out));
  return record_op<T>(std::move(out), {a},
                      [edges = c.edges, av = a.value(), deg, rs, E, N](const Tensor<T>& g,
                                                                         std::vector<Tensor<T>*>& gi) {
                        if (!gi[0]) return;
                        // dL/d deg_k collects every entry that depends on node k's degree.
                        std::vector<double> gdeg(N, 0.0);
                        for (std::size_t e = 0; e < E; ++e) {
                          const auto [i, j] = edges[e];
                          const double v = g[e] * av[e] * rs[i] * rs[j];
                          gdeg[i] += -0.5 * v / deg[i];
                          gdeg[j] += -0.5 * v / deg[j];
                        }
                        for (std::size_t k = 0; k < N; ++k) gdeg[k] += -g[E + k] / (deg[k] * deg[k]);
                        Tensor<T>& d = *gi[0];
                        for (std::size_t e = 0; e < E; ++e) {
                          const auto [i, j] = edges[e];
                          d[e] += static_cast<T>(g[e] * rs[i] * rs[j] + gdeg[i] + gdeg[j]);
                        }
                      });
}

namespace {

template <typename T>
void spmm_raw(const T* vals, const EdgeSet& c, const T* x, std::size_t d, T* y) {
  const std::size_t E = c.edges.size(), N = c.nodes;
  for (std::size_t i = 0; i < N; ++i) {
    const T a = vals[E + i];
    for (std::size_t k = 0; k < d; ++k) y[i * d + k] = a * x[i * d + k];
  }
  for (std::size_t e = 0; e < E; ++e) {
    const auto [i, j] = c.edges[e];
    const T a = vals[e];
    T* yi = y + i * d;
    T* yj = y + j * d;
    const T* xi = x + i * d;
    const T* xj = x + j * d;
    for (std::size_t k = 0; k < d; ++k) {
      yi[k] += a * xj[k];
      yj[k] += a * xi[k];
    }
  }
}

}  // namespace

template <typename T>
Var<T> spmm(const Var<T>& ahat, const EdgeSet& c, const Var<T>& x) {
  const std::size_t E = c.edges.size(), N = c.nodes;
  if (ahat.size() != E + N) throw DimensionError("spmm: packed adjacency has wrong length");
  if (x.value().rank() != 2 || x.shape()[0] != N) throw DimensionError("spmm: X must be [N, d]");
  const std::size_t d = x.shape()[1];
  Tensor<T> y({N, d});
  spmm_raw(ahat.value().data().data(), c, x.value().data().data(), d, y.data().data());
  return record_op<T>(std::move(y), {ahat, x},
                      [c, av = ahat.value(), xv = x.value(), E, N, d](const Tensor<T>& g,
                                                                        std::vector<Tensor<T>*>& gi) {
                        if (gi[0]) {
                          Tensor<T>& da = *gi[0];
                          for (std::size_t e = 0; e < E; ++e) {
                            const auto [i, j] = c.edges[e];
                            T acc{0};
                            for (std::size_t k = 0; k < d; ++k)
                              acc += g[i * d + k] * xv[j * d + k] + g[j * d + k] * xv[i * d + k];
                            da[e] += acc;
                          }
                          for (std::size_t i = 0; i < N; ++i) {
                            T acc{0};
                            for (std::size_t k = 0; k < d; ++k) acc += g[i * d + k] * xv[i * d + k];
                            da[E + i] += acc;
                          }
                        }
                        if (gi[1]) {
                          // Â is symmetric, so the adjoint is another product with Â.
                          std::vector<T> tmp(N * d);
                          spmm_raw(av.data().data(), c, g.data().data(), d, tmp.data());
                          Tensor<T>& dx = *gi[1];
                          for (std::size_t k = 0; k < N * d; ++k) dx[k] += tmp[k];
                        }
                      });
}

template <typename T>
Tensor<T> densify(const Tensor<T>& packed, const EdgeSet& c) {
  const std::size_t E = c.edges.size(), N = c.nodes;
  if (packed.size() != E + N && !(E == 0 && packed.size() == N)) throw DimensionError("densify: wrong packed length");
  Tensor<T> a({N, N});
  for (std::size_t e = 0; e < E; ++e) {
    a.at(c.edges[e].first, c.edges[e].second) = packed[e];
    a.at(c.edges[e].second, c.edges[e].first) = packed[e];
  }
  for (std::size_t i = 0; i < N; ++i) a.at(i, i) = packed[E + i];
  return a;
}

template <typename T>
Var<T> gcn_layer(const Var<T>& x, const Var<T>& ahat, const EdgeSet& c, const std::vector<Var<T>>& thetas,
                 const std::vector<Var<T>>& ws, Activation act) {
  if (thetas.empty() || thetas.size() != ws.size()) throw ContractError("gcn_layer: need one weight per order");
  if (x.value().rank() != 2) throw ContractError("gcn_layer: X must be [N, d]");
  const std::size_t din = x.shape()[1];
  for (std::size_t m = 0; m < thetas.size(); ++m) {
    if (thetas[m].value().rank() != 2 || thetas[m].shape()[0] != din ||
        thetas[m].shape()[1] != thetas[0].shape()[1])
      throw ContractError("gcn_layer: theta " + std::to_string(m + 1) + " has shape " +
                          shape_string(thetas[m].shape()) + ", input dim is " + std::to_string(din));
    if (ws[m].size() != 1) throw ContractError("gcn_layer: order weights must be scalars");
  }
  Var<T> p = x;
  Var<T> acc;
  for (std::size_t m = 0; m < thetas.size(); ++m) {
    p = spmm(ahat, c, p);
    Var<T> term = ad::scale_by(ad::matmul(p, thetas[m]), ws[m]);
    acc = acc.valid() ? ad::add(acc, term) : term;
  }
  return ad::activate(acc, act);
}

void CorrelationConfig::validate() const {
  saliency.validate(exemplar_size, exemplar_size);
  if (gcn_orders < 1) throw ValidationError("gcn orders must be >= 1");
  if (d_e < 1 || d1 < 1 || d2 < 1) throw ValidationError("layer widths must be >= 1");
  if (exemplar_size < 1) throw ValidationError("exemplar size must be >= 1");
}

std::size_t CorrelationConfig::output_channels(std::size_t feature_channels) const {
  return variant == Variant::Base ? feature_channels : d2;
}

template <typename T>
void init_correlation_params(ParamSet<T>& params, const CorrelationConfig& cfg, std::size_t channels, Rng& rng) {
  const std::size_t m = cfg.exemplar_size * cfg.exemplar_size, d0 = m + channels;
  auto he = [&rng](Shape s, std::size_t fan_in) {
    return random_normal<T>(s, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
  };
  switch (cfg.variant) {
    case Variant::Base: break;
    case Variant::Ppfm:
      params.add("ppfm.k1", he({3, 3, d0, cfg.d1}, 9 * d0));
      params.add("ppfm.b1", Tensor<T>({cfg.d1}));
      params.add("ppfm.k2", he({3, 3, cfg.d1, cfg.d2}, 9 * cfg.d1));
      params.add("ppfm.b2", Tensor<T>({cfg.d2}));
      break;
    case Variant::Pam:
    case Variant::Saot: {
      params.add("edge.w1", he({d0, cfg.d_e}, d0));
      params.add("edge.b1", Tensor<T>({cfg.d_e}));
      params.add("edge.w2", he({cfg.d_e, 1}, cfg.d_e));
      // Edges start weak (sigmoid(-2) ~ 0.12) so early propagation stays close to identity.
      params.add("edge.b2", Tensor<T>({1}, T(-2)));
      const std::size_t dims[3] = {d0, cfg.d1, cfg.d2};
      for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t o = 1; o <= cfg.gcn_orders; ++o) {
          const std::string pre = "gcn" + std::to_string(l) + ".";
          params.add(pre + "theta" + std::to_string(o), he({dims[l], dims[l + 1]}, dims[l]));
          params.add(pre + "w" + std::to_string(o), Tensor<T>({1}, T(1.0 / static_cast<double>(cfg.gcn_orders))));
        }
      break;
    }
    case Variant::DwCorr:
    case Variant::PgCorr:
      params.add("proj.k", he({1, 1, channels, cfg.d2}, channels));
      params.add("proj.b", Tensor<T>({cfg.d2}));
      break;
  }
}

namespace {

template <typename T>
Tensor<T> depthwise_xcorr(const Tensor<T>& fx, const Tensor<T>& fs) {
  const std::size_t hx = fx.dim(0), wx = fx.dim(1), C = fx.dim(2), hs = fs.dim(0), ws = fs.dim(1);
  Tensor<T> out({hs, ws, C});
  const long oy = static_cast<long>(hx / 2), ox = static_cast<long>(wx / 2);
  const T norm = T(1.0 / static_cast<double>(hx * wx));
  for (std::size_t p = 0; p < hs; ++p)
    for (std::size_t q = 0; q < ws; ++q)
      for (std::size_t u = 0; u < hx; ++u) {
        const long r = static_cast<long>(p + u) - oy;
        if (r < 0 || r >= static_cast<long>(hs)) continue;
        for (std::size_t v = 0; v < wx; ++v) {
          const long s = static_cast<long>(q + v) - ox;
          if (s < 0 || s >= static_cast<long>(ws)) continue;
          for (std::size_t ch = 0; ch < C; ++ch)
            out.at(p, q, ch) += norm * fx.at(u, v, ch) * fs.at(static_cast<std::size_t>(r), static_cast<std::size_t>(s), ch);
        }
      }
  return out;
}

// Pixel-wise inner-product maps, recombined per channel by the exemplar's own features.
template <typename T>
Tensor<T> pixel_global_corr(const Tensor<T>& fx, const Tensor<T>& fs) {
  const std::size_t m = fx.dim(0) * fx.dim(1), C = fx.dim(2), n = fs.dim(0) * fs.dim(1);
  Tensor<T> maps({m, n});
  kernels::gemm_nt(m, n, C, fx.data().data(), fs.data().data(), maps.data().data(), false);
  Tensor<T> out({fs.dim(0), fs.dim(1), C});
  kernels::gemm_tn(n, C, m, maps.data().data(), fx.data().data(), out.data().data(), false);
  for (auto& v : out.data()) v *= T(1.0 / static_cast<double>(m));
  return out;
}

}  // namespace

template <typename T>
Var<T> correlate(const Tensor<T>& fx, const Tensor<T>& fs, const CorrelationConfig& cfg, const BoundParams<T>& p,
                 CorrelationTrace* trace) {
  if (fx.rank() != 3 || fs.rank() != 3 || fx.dim(2) != fs.dim(2))
    throw DimensionError("correlate: exemplar and search features must be [h,w,c] with equal c");
  const std::size_t hs = fs.dim(0), ws = fs.dim(1), hx = fx.dim(0), wx = fx.dim(1);
  switch (cfg.variant) {
    case Variant::Base: return Var<T>(fs);
    case Variant::DwCorr:
    case Variant::PgCorr: {
      const Tensor<T> raw = cfg.variant == Variant::DwCorr ? depthwise_xcorr(fx, fs) : pixel_global_corr(fx, fs);
      return ad::add_bias(ad::conv2d(Var<T>(raw), p["proj.k"]), p["proj.b"]);
    }
    default: break;
  }

  const auto vol = build_similarity_volume(fx, fs, cfg.saliency.eps);
  const std::size_t m = hx * wx;
  if (cfg.variant == Variant::Ppfm) {
    const Tensor<T> fg = build_node_features(vol, fs, std::vector<double>(m, 1.0));
    Var<T> x = ad::reshape(Var<T>(fg), {hs, ws, fg.dim(1)});
    x = ad::activate(ad::add_bias(ad::conv2d(x, p["ppfm.k1"]), p["ppfm.b1"]), cfg.act0);
    return ad::activate(ad::add_bias(ad::conv2d(x, p["ppfm.k2"]), p["ppfm.b2"]), cfg.act1);
  }

  SaliencyConfig sc = cfg.saliency;
  if (cfg.variant == Variant::Pam) sc.k = m;
  SaliencySet sal = select_saliencies(vol, sc);
  std::vector<double> shat;
  bool degenerate = false;
  if (cfg.variant == Variant::Pam) {
    shat.assign(m, 1.0);
  } else {
    shat = normalized_saliency(sal, hx, wx, &degenerate);
  }
  const Tensor<T> fg = build_node_features(vol, fs, shat);
  const EdgeSet edges = build_edge_set(sal.ps, hs, ws);
  Var<T> x(fg);
  Var<T> ahat;
  if (edges.edges.empty()) {
    Tensor<T> diag({edges.nodes}, T{1});
    ahat = Var<T>(std::move(diag));
  } else {
    const Var<T> a = edge_weights(x, edges, p["edge.w1"], p["edge.b1"], p["edge.w2"], p["edge.b2"]);
    ahat = normalize_adjacency(a, edges);
  }
  for (std::size_t l = 0; l < 2; ++l) {
    std::vector<Var<T>> thetas, wts;
    const std::string pre = "gcn" + std::to_string(l) + ".";
    for (std::size_t o = 1; o <= cfg.gcn_orders; ++o) {
      thetas.push_back(p[pre + "theta" + std::to_string(o)]);
      wts.push_back(p[pre + "w" + std::to_string(o)]);
    }
    x = gcn_layer(x, ahat, edges, thetas, wts, l == 0 ? cfg.act0 : cfg.act1);
  }
  if (trace) {
    trace->saliencies = std::move(sal);
    trace->edges = edges.edges.size();
    trace->degenerate_saliency = degenerate;
  }
  return ad::reshape(x, {hs, ws, cfg.d2});
}

#define SAOT_INSTANTIATE(T)                                                                                   \
  template Tensor<T> build_node_features<T>(const SimilarityVolume<T>&, const Tensor<T>&,                   \
                                            const std::vector<double>&);                                    \
  template Var<T> edge_weights<T>(const Var<T>&, const EdgeSet&, const Var<T>&, const Var<T>&, const Var<T>&, \
                                  const Var<T>&);                                                             \
  template Var<T> normalize_adjacency<T>(const Var<T>&, const EdgeSet&);                                     \
  template Var<T> spmm<T>(const Var<T>&, const EdgeSet&, const Var<T>&);                                     \
  template Tensor<T> densify<T>(const Tensor<T>&, const EdgeSet&);                                           \
  template Var<T> gcn_layer<T>(const Var<T>&, const Var<T>&, const EdgeSet&, const std::vector<Var<T>>&,     \
                               const std::vector<Var<T>>&, Activation);                                     \
  template void init_correlation_params<T>(ParamSet<T>&, const CorrelationConfig&, std::size_t, Rng&);       \
  template Var<T> correlate<T>(const Tensor<T>&, const Tensor<T>&, const CorrelationConfig&,                 \
                               const BoundParams<T>&, CorrelationTrace*);

SAOT_INSTANTIATE(float)
SAOT_INSTANTIATE(double)
#undef SAOT_INSTANTIATE

}  // namespace saot
