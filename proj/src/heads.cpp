#include "saot/heads.hpp"

#include <algorithm>
#include <cmath>

#include "saot/kernels.hpp"

namespace saot {

template <typename T>
void init_head_params(ParamSet<T>& params, std::size_t cin, std::size_t width, Rng& rng) {
  auto he = [&rng](Shape s, std::size_t fan_in) {
    return random_normal<T>(s, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
  };
  for (const char* branch : {"cls", "reg"}) {
    const std::string b = branch;
    const std::size_t out = b == "cls" ? 1 : 4;
    params.add(b + ".k1", he({3, 3, cin, width}, 9 * cin));
    params.add(b + ".b1", Tensor<T>({width}));
    params.add(b + ".k2", he({3, 3, width, width}, 9 * width));
    params.add(b + ".b2", Tensor<T>({width}));
    params.add(b + ".k3", random_normal<T>({1, 1, width, out}, rng, 0.01));
    // offsets start near half a typical target extent
    params.add(b + ".b3", Tensor<T>({out}, b == "cls" ? T{0} : static_cast<T>(std::log(2.5))));
  }
}

namespace {

template <typename T>
Var<T> head_trunk(const Var<T>& x, const BoundParams<T>& p, const std::string& b) {
  if (x.value().rank() != 3) throw DimensionError("head input must be [h, w, d]");
  Var<T> h = ad::activate(ad::add_bias(ad::conv2d(x, p[b + ".k1"]), p[b + ".b1"]), Activation::Relu);
  h = ad::activate(ad::add_bias(ad::conv2d(h, p[b + ".k2"]), p[b + ".b2"]), Activation::Relu);
  return ad::add_bias(ad::conv2d(h, p[b + ".k3"]), p[b + ".b3"]);
}

}  // namespace

template <typename T>
Var<T> cls_head(const Var<T>& corr, const BoundParams<T>& p) {
  const Var<T> z = head_trunk(corr, p, "cls");
  return ad::reshape(ad::activate(z, Activation::Sigmoid), {corr.shape()[0], corr.shape()[1]});
}

template <typename T>
Var<T> reg_head(const Var<T>& corr, const BoundParams<T>& p) {
  return ad::activate(head_trunk(corr, p, "reg"), Activation::Exp);
}

template <typename T>
Tensor<T> fuse_response(const Tensor<T>& p_r, const Tensor<T>& p_o, double beta) {
  if (p_r.shape() != p_o.shape())
    throw DimensionError("fuse_response: " + shape_string(p_r.shape()) + " vs " + shape_string(p_o.shape()));
  if (!(beta >= 0 && beta <= 1)) throw ValidationError("fusion weight must lie in [0, 1]");
  Tensor<T> out(p_r.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(beta * p_r[i] + (1.0 - beta) * p_o[i]);
  return out;
}

template <typename T>
Decoded decode_box(const Tensor<T>& p_cls, const Tensor<T>& offsets) {
  if (p_cls.rank() != 2 || offsets.rank() != 3 || offsets.dim(0) != p_cls.dim(0) || offsets.dim(1) != p_cls.dim(1) ||
      offsets.dim(2) != 4)
    throw DimensionError("decode_box: expects p_cls [h,w] and offsets [h,w,4]");
  std::size_t best = 0;
  for (std::size_t i = 1; i < p_cls.size(); ++i)
    if (p_cls[i] > p_cls[best]) best = i;
  const std::size_t w = p_cls.dim(1);
  Decoded d;
  d.peak = {best / w, best % w};
  d.confidence = p_cls[best];
  const double l = offsets[best * 4], t = offsets[best * 4 + 1], r = offsets[best * 4 + 2],
               b = offsets[best * 4 + 3];
  const double p = static_cast<double>(d.peak.row), q = static_cast<double>(d.peak.col);
  d.box = clamp_box({q - l, p - t, l + r, t + b}, p_cls.dim(0), w);
  return d;
}

namespace {

struct GiouParts {
  double loss = 0;
  double d[4] = {0, 0, 0, 0};  // dL/d(x1, y1, x2, y2) of the prediction
};

GiouParts giou_parts(double x1, double y1, double x2, double y2, const Box& g, double floor) {
  const double g1 = g.x, g2 = g.y, g3 = g.right(), g4 = g.bottom();
  const double iw_raw = std::min(x2, g3) - std::max(x1, g1);
  const double ih_raw = std::min(y2, g4) - std::max(y1, g2);
  const double iw = std::max(0.0, iw_raw), ih = std::max(0.0, ih_raw);
  const double inter = iw * ih;
  const double pw = x2 - x1, ph = y2 - y1;
  const double ap_raw = pw * ph;
  const double ap = std::max(ap_raw, floor);
  const double ag = std::max(g.w * g.h, floor);
  const double u_raw = ap + ag - inter;
  const double u = std::max(u_raw, floor);
  const double cw = std::max(x2, g3) - std::min(x1, g1);
  const double chh = std::max(y2, g4) - std::min(y1, g2);
  const double hull_raw = cw * chh;
  const double hull = std::max(hull_raw, floor);

  GiouParts out;
  out.loss = 2.0 - inter / u - u / hull;
  const double dL_du = (u_raw > floor) ? inter / (u * u) - 1.0 / hull : 0.0;
  const double dL_dI = -1.0 / u - dL_du;
  const double dL_dAp = ap_raw > floor ? dL_du : 0.0;
  const double dL_dH = hull_raw > floor ? u / (hull * hull) : 0.0;
  double* d = out.d;
  if (iw_raw > 0 && ih_raw > 0) {
    if (x1 > g1) d[0] += dL_dI * -ih;
    if (x2 < g3) d[2] += dL_dI * ih;
    if (y1 > g2) d[1] += dL_dI * -iw;
    if (y2 < g4) d[3] += dL_dI * iw;
  }
  d[0] += dL_dAp * -ph;
  d[2] += dL_dAp * ph;
  d[1] += dL_dAp * -pw;
  d[3] += dL_dAp * pw;
  if (x1 < g1) d[0] += dL_dH * -chh;
  if (x2 > g3) d[2] += dL_dH * chh;
  if (y1 < g2) d[1] += dL_dH * -cw;
  if (y2 > g4) d[3] += dL_dH * cw;
  return out;
}

}  // namespace

double giou_loss(const Box& pred, const Box& gt, double area_floor) {
  return giou_parts(pred.x, pred.y, pred.right(), pred.bottom(), gt, area_floor).loss;
}

double giou(const Box& a, const Box& b, double area_floor) { return 1.0 - giou_loss(a, b, area_floor); }

template <typename T>
Var<T> giou_loss_op(const Var<T>& offsets, const std::vector<Location>& positives, const Box& gt, double area_floor) {
  const Tensor<T>& o = offsets.value();
  if (o.rank() != 3 || o.dim(2) != 4) throw DimensionError("giou_loss_op: offsets must be [h, w, 4]");
  if (positives.empty()) throw ContractError("giou_loss_op: no positive locations");
  const std::size_t w = o.dim(1);
  std::vector<GiouParts> parts;
  double total = 0;
  for (const auto& loc : positives) {
    if (loc.row >= o.dim(0) || loc.col >= w) throw ContractError("giou_loss_op: location outside the map");
    const std::size_t base = (loc.row * w + loc.col) * 4;
    const double p = static_cast<double>(loc.row), q = static_cast<double>(loc.col);
    parts.push_back(giou_parts(q - o[base], p - o[base + 1], q + o[base + 2], p + o[base + 3], gt, area_floor));
    total += parts.back().loss;
  }
  const double n = static_cast<double>(positives.size());
  return record_op<T>(Tensor<T>::scalar(static_cast<T>(total / n)), {offsets},
                      [positives, parts = std::move(parts), w, n](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
                        if (!gi[0]) return;
                        Tensor<T>& d = *gi[0];
                        const double s = g[0] / n;
                        for (std::size_t k = 0; k < positives.size(); ++k) {
                          const std::size_t base = (positives[k].row * w + positives[k].col) * 4;
                          const double* dp = parts[k].d;
                          // x1 = q - l, y1 = p - t, x2 = q + r, y2 = p + b
                          d[base] += static_cast<T>(-s * dp[0]);
                          d[base + 1] += static_cast<T>(-s * dp[1]);
                          d[base + 2] += static_cast<T>(s * dp[2]);
                          d[base + 3] += static_cast<T>(s * dp[3]);
                        }
                      });
}

template <typename T>
Var<T> bce_loss(const Var<T>& p, const Tensor<T>& labels, double pos_weight) {
  const Tensor<T>& pv = p.value();
  if (pv.shape() != labels.shape())
    throw DimensionError("bce_loss: " + shape_string(pv.shape()) + " vs " + shape_string(labels.shape()));
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  double total = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(static_cast<double>(pv[i]), lo, hi);
    const double y = labels[i];
    total -= pos_weight * y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  const double n = static_cast<double>(pv.size());
  return record_op<T>(Tensor<T>::scalar(static_cast<T>(total / n)), {p},
                      [pv, labels, pos_weight, n](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
                        if (!gi[0]) return;
                        Tensor<T>& d = *gi[0];
                        for (std::size_t i = 0; i < pv.size(); ++i) {
                          const double q = pv[i];
                          if (q < lo || q > hi) continue;
                          const double y = labels[i];
                          d[i] += static_cast<T>(g[0] / n * (-pos_weight * y / q + (1.0 - y) / (1.0 - q)));
                        }
                      });
}

template <typename T>
Tensor<T> center_labels(std::size_t h, std::size_t w, double cx, double cy, double radius) {
  Tensor<T> y({h, w});
  for (std::size_t p = 0; p < h; ++p)
    for (std::size_t q = 0; q < w; ++q) {
      const double dx = static_cast<double>(q) - cx, dy = static_cast<double>(p) - cy;
      if (dx * dx + dy * dy <= radius * radius) y.at(p, q) = T{1};
    }
  return y;
}

template <typename T>
Tensor<T> gaussian_label(std::size_t h, std::size_t w, double cx, double cy, double sigma) {
  Tensor<T> y({h, w});
  for (std::size_t p = 0; p < h; ++p)
    for (std::size_t q = 0; q < w; ++q) {
      const double dx = static_cast<double>(q) - cx, dy = static_cast<double>(p) - cy;
      y.at(p, q) = static_cast<T>(std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
    }
  return y;
}

void FilterConfig::validate() const {
  if (k < 1 || k % 2 == 0) throw ValidationError("filter size must be odd");
  if (!(lambda > 0)) throw ValidationError("filter lambda must be > 0");
  if (!(eta >= 0 && eta <= 1)) throw ValidationError("filter eta must be in [0,1]");
  if (!(label_sigma > 0)) throw ValidationError("filter label sigma must be > 0");
  if (max_samples < 1) throw ValidationError("filter memory needs at least one sample");
}

namespace {

OnlineFilterState::Sample make_sample(const Tensor<float>& f, const Tensor<float>& label, std::size_t k) {
  if (f.rank() != 3 || label.rank() != 2 || label.dim(0) != f.dim(0) || label.dim(1) != f.dim(1))
    throw DimensionError("online filter: features [h,w,d] and label [h,w] required");
  OnlineFilterState::Sample s;
  s.h = f.dim(0);
  s.w = f.dim(1);
  s.cols.resize(s.h * s.w * k * k * f.dim(2));
  kernels::im2col(f.data().data(), s.h, s.w, f.dim(2), k, k, s.cols.data());
  s.label.assign(label.data().begin(), label.data().end());
  return s;
}

// out = sum_s w_s C_s^T (C_s x) + lambda x
void apply_normal(const OnlineFilterState& st, double lambda, const std::vector<double>& x, std::vector<double>& out) {
  const std::size_t P = x.size();
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> r;
  for (const auto& s : st.memory) {
    const std::size_t n = s.h * s.w;
    r.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = s.cols.data() + i * P;
      double acc = 0;
      for (std::size_t j = 0; j < P; ++j) acc += row[j] * x[j];
      r[i] = acc * s.weight;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (r[i] == 0) continue;
      const float* row = s.cols.data() + i * P;
      for (std::size_t j = 0; j < P; ++j) out[j] += r[i] * row[j];
    }
  }
  for (std::size_t j = 0; j < P; ++j) out[j] += lambda * x[j];
}

std::vector<double> rhs(const OnlineFilterState& st, std::size_t P) {
  std::vector<double> b(P, 0.0);
  for (const auto& s : st.memory)
    for (std::size_t i = 0; i < s.h * s.w; ++i) {
      const double y = s.weight * s.label[i];
      if (y == 0) continue;
      const float* row = s.cols.data() + i * P;
      for (std::size_t j = 0; j < P; ++j) b[j] += y * row[j];
    }
  return b;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

FilterObjective online_filter_objective(const OnlineFilterState& st, const FilterConfig& cfg) {
  const std::size_t P = st.kernel.size();
  FilterObjective o;
  double data = 0;
  for (const auto& s : st.memory)
    for (std::size_t i = 0; i < s.h * s.w; ++i) {
      const float* row = s.cols.data() + i * P;
      double acc = 0;
      for (std::size_t j = 0; j < P; ++j) acc += static_cast<double>(row[j]) * st.kernel[j];
      data += s.weight * (acc - s.label[i]) * (acc - s.label[i]);
    }
  double kk = 0;
  for (float v : st.kernel.data()) kk += static_cast<double>(v) * v;
  o.residual = std::sqrt(data);
  o.objective = data + cfg.lambda * kk;
  return o;
}

void online_filter_solve(OnlineFilterState& st, std::size_t steps, const FilterConfig& cfg,
                         std::vector<FilterObjective>* history) {
  if (st.memory.empty() || steps == 0) return;
  const std::size_t P = st.kernel.size();
  std::vector<double> x(st.kernel.data().begin(), st.kernel.data().end());
  const std::vector<double> b = rhs(st, P);
  std::vector<double> ax(P), r(P), p, ap(P);
  apply_normal(st, cfg.lambda, x, ax);
  for (std::size_t j = 0; j < P; ++j) r[j] = b[j] - ax[j];
  p = r;
  double rr = dot(r, r);
  for (std::size_t it = 0; it < steps && rr > 1e-30; ++it) {
    apply_normal(st, cfg.lambda, p, ap);
    const double pap = dot(p, ap);
    if (!(pap > 0)) break;
    const double alpha = rr / pap;
    for (std::size_t j = 0; j < P; ++j) {
      x[j] += alpha * p[j];
      r[j] -= alpha * ap[j];
    }
    const double rr_new = dot(r, r);
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t j = 0; j < P; ++j) p[j] = r[j] + beta * p[j];
    if (history) {
      for (std::size_t j = 0; j < P; ++j) st.kernel[j] = static_cast<float>(x[j]);
      history->push_back(online_filter_objective(st, cfg));
    }
  }
  for (std::size_t j = 0; j < P; ++j) st.kernel[j] = static_cast<float>(x[j]);
}

void online_filter_init(OnlineFilterState& st, const Tensor<float>& features, const Tensor<float>& label,
                        const FilterConfig& cfg) {
  cfg.validate();
  if (!features.all_finite()) throw NumericError("online filter: non-finite features at initialisation");
  st = OnlineFilterState{};
  st.channels = features.dim(2);
  st.kernel = Tensor<float>({cfg.k, cfg.k, st.channels, 1});
  st.memory.push_back(make_sample(features, label, cfg.k));
  st.memory.back().weight = 1.0;
  st.initialized = true;
  online_filter_solve(st, cfg.init_cg, cfg);
}

bool online_filter_update(OnlineFilterState& st, const Tensor<float>& features, const Tensor<float>& label,
                          const FilterConfig& cfg) {
  if (!st.initialized) throw ContractError("online filter updated before initialisation");
  if (cfg.eta == 0) return true;
  if (!features.all_finite()) {
    ++st.skipped_updates;
    return false;
  }
  if (features.rank() != 3 || features.dim(2) != st.channels)
    throw DimensionError("online filter: feature depth changed");
  for (auto& s : st.memory) s.weight *= 1.0 - cfg.eta;
  st.memory.push_back(make_sample(features, label, cfg.k));
  st.memory.back().weight = cfg.eta;
  while (st.memory.size() > cfg.max_samples) st.memory.pop_front();
  double total = 0;
  for (const auto& s : st.memory) total += s.weight;
  for (auto& s : st.memory) s.weight /= total;
  online_filter_solve(st, cfg.n_cg, cfg);
  return true;
}

Tensor<float> filter_response(const OnlineFilterState& st, const Tensor<float>& features) {
  if (!st.initialized) throw ContractError("filter_response before initialisation");
  const Tensor<float> r = conv2d(features, st.kernel);
  return r.reshaped({features.dim(0), features.dim(1)});
}

#define SAOT_INSTANTIATE(T)                                                                           \
  template void init_head_params<T>(ParamSet<T>&, std::size_t, std::size_t, Rng&);                   \
  template Var<T> cls_head<T>(const Var<T>&, const BoundParams<T>&);                                 \
  template Var<T> reg_head<T>(const Var<T>&, const BoundParams<T>&);                                 \
  template Tensor<T> fuse_response<T>(const Tensor<T>&, const Tensor<T>&, double);                   \
  template Decoded decode_box<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Var<T> giou_loss_op<T>(const Var<T>&, const std::vector<Location>&, const Box&, double); \
  template Var<T> bce_loss<T>(const Var<T>&, const Tensor<T>&, double);                              \
  template Tensor<T> center_labels<T>(std::size_t, std::size_t, double, double, double);             \
  template Tensor<T> gaussian_label<T>(std::size_t, std::size_t, double, double, double);

SAOT_INSTANTIATE(float)
SAOT_INSTANTIATE(double)
#undef SAOT_INSTANTIATE

}  // namespace saot
