#include "saot/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "saot/kernels.hpp"

namespace saot {

template <typename T>
Var<T>::Var(Tensor<T> value) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (!node_) throw ContractError("grad() on empty Var");
  if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
  return node_->grad;
}

template <typename T>
Var<T> GradTape<T>::leaf(Tensor<T> value) {
  Var<T> v(std::move(value));
  v.node_->requires_grad = true;
  v.node_->tape = this;
  v.node_->grad_buffer();
  leaves_.push_back(v);
  return v;
}

template <typename T>
void GradTape<T>::backward(const Var<T>& loss) {
  if (!loss.valid() || loss.size() != 1)
    throw ContractError("backward() needs a single-element loss, got shape " +
                        (loss.valid() ? shape_string(loss.shape()) : std::string("<empty>")));
  if (!std::isfinite(loss.value()[0])) throw NumericError("backward() on non-finite loss");
  if (!loss.requires_grad()) return;
  if (loss.tape() != this) throw ContractError("loss was not recorded on this tape");
  loss.node()->grad_buffer()[0] += T{1};
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

template <typename T>
Var<T> record_op(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn<T> backward) {
  GradTape<T>* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.requires_grad()) continue;
    if (tape && in.tape() != tape) throw ContractError("op mixes variables from different tapes");
    tape = in.tape();
  }
  Var<T> out(std::move(value));
  if (!tape) return out;
  out.node()->requires_grad = true;
  out.node()->tape = tape;
  std::vector<std::shared_ptr<Node<T>>> in_nodes;
  in_nodes.reserve(inputs.size());
  for (const auto& in : inputs) in_nodes.push_back(in.node());
  tape->record([out_node = out.node(), in_nodes = std::move(in_nodes), fn = std::move(backward)]() {
    if (out_node->grad.empty()) return;
    std::vector<Tensor<T>*> grads(in_nodes.size(), nullptr);
    for (std::size_t i = 0; i < in_nodes.size(); ++i)
      if (in_nodes[i]->requires_grad) grads[i] = &in_nodes[i]->grad_buffer();
    fn(out_node->grad, grads);
  });
  return out;
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "exp") return Activation::Exp;
  throw ValidationError("unknown activation '" + name + "'");
}

const char* activation_name(Activation kind) {
  switch (kind) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Exp: return "exp";
  }
  return "?";
}

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
void check_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
}

template <typename T>
void check_conv(const Tensor<T>& x, const Tensor<T>& k) {
  if (x.rank() != 3 || k.rank() != 4)
    throw DimensionError("conv2d expects x[h,w,cin] and k[kh,kw,cin,cout], got " + shape_string(x.shape()) +
                         " and " + shape_string(k.shape()));
  if (k.dim(0) % 2 == 0 || k.dim(1) % 2 == 0) throw ContractError("conv2d kernel extents must be odd");
  if (x.dim(2) != k.dim(2))
    throw DimensionError("conv2d channel mismatch: input " + std::to_string(x.dim(2)) + ", kernel " +
                         std::to_string(k.dim(2)));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_matmul(a, b);
  Tensor<T> out({a.dim(0), b.dim(1)});
  kernels::gemm(a.dim(0), b.dim(1), a.dim(1), a.data().data(), b.data().data(), out.data().data(), false);
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k) {
  check_conv(x, k);
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  const std::size_t patch = kh * kw * cin;
  Tensor<T> out({h, w, cout});
  if (kh == 1 && kw == 1) {
    kernels::gemm(h * w, cout, cin, x.data().data(), k.data().data(), out.data().data(), false);
    return out;
  }
  std::vector<T> cols(h * w * patch);
  kernels::im2col(x.data().data(), h, w, cin, kh, kw, cols.data());
  kernels::gemm(h * w, cout, patch, cols.data(), k.data().data(), out.data().data(), false);
  return out;
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation kind) {
  Tensor<T> y = x;
  switch (kind) {
    case Activation::Identity: break;
    case Activation::Relu:
      for (auto& v : y.data()) v = v > T{0} ? v : T{0};
      break;
    case Activation::Sigmoid:
      for (auto& v : y.data()) v = sigmoid(v);
      break;
    case Activation::Exp:
      for (auto& v : y.data()) v = std::exp(v);
      break;
  }
  return y;
}

namespace ad {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return record_op<T>(std::move(out), {a, b}, [](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    for (auto* d : gi)
      if (d)
        for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return record_op<T>(std::move(out), {a, b}, [](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  auto an = a.node(), bn = b.node();
  return record_op<T>(std::move(out), {a, b}, [an, bn](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bn->value[i];
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * an->value[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  return record_op<T>(std::move(out), {x}, [factor](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
  if (s.size() != 1) throw DimensionError("scale_by expects a single-element scale");
  const T f = s.value()[0];
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= f;
  auto xn = x.node();
  return record_op<T>(std::move(out), {x, s}, [xn, f](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * f;
    if (gi[1]) {
      T acc{0};
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xn->value[i];
      (*gi[1])[0] += acc;
    }
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  const std::size_t d = b.size();
  if (x.shape().back() != d || b.value().rank() != 1)
    throw DimensionError("add_bias: bias " + shape_string(b.shape()) + " vs input " + shape_string(x.shape()));
  Tensor<T> out = x.value();
  const std::size_t rows = out.size() / d;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] += b.value()[j];
  return record_op<T>(std::move(out), {x, b}, [rows, d](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    if (gi[1])
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) (*gi[1])[j] += g[r * d + j];
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = saot::matmul(a.value(), b.value());
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  auto an = a.node(), bn = b.node();
  return record_op<T>(std::move(out), {a, b}, [an, bn, m, k, n](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    if (gi[0]) kernels::gemm_nt(m, k, n, g.data().data(), bn->value.data().data(), gi[0]->data().data(), true);
    if (gi[1]) kernels::gemm_tn(k, n, m, an->value.data().data(), g.data().data(), gi[1]->data().data(), true);
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& k) {
  check_conv(x.value(), k.value());
  const std::size_t h = x.value().dim(0), w = x.value().dim(1), cin = x.value().dim(2);
  const std::size_t kh = k.value().dim(0), kw = k.value().dim(1), cout = k.value().dim(3);
  const std::size_t patch = kh * kw * cin;
  const bool pointwise = kh == 1 && kw == 1;
  auto cols = std::make_shared<std::vector<T>>();
  Tensor<T> out({h, w, cout});
  const T* src = x.value().data().data();
  if (!pointwise) {
    cols->resize(h * w * patch);
    kernels::im2col(src, h, w, cin, kh, kw, cols->data());
    src = cols->data();
  }
  kernels::gemm(h * w, cout, patch, src, k.value().data().data(), out.data().data(), false);
  if (!x.requires_grad() && !k.requires_grad()) return Var<T>(std::move(out));
  auto xn = x.node(), kn = k.node();
  return record_op<T>(std::move(out), {x, k},
                      [=](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
                        const T* patches = pointwise ? xn->value.data().data() : cols->data();
                        if (gi[1])
                          kernels::gemm_tn(patch, cout, h * w, patches, g.data().data(), gi[1]->data().data(), true);
                        if (gi[0]) {
                          if (pointwise) {
                            kernels::gemm_nt(h * w, cin, cout, g.data().data(), kn->value.data().data(),
                                             gi[0]->data().data(), true);
                          } else {
                            std::vector<T> dcols(h * w * patch);
                            kernels::gemm_nt(h * w, patch, cout, g.data().data(), kn->value.data().data(),
                                             dcols.data(), false);
                            kernels::col2im_add(dcols.data(), h, w, cin, kh, kw, gi[0]->data().data());
                          }
                        }
                      });
}

template <typename T>
Var<T> activate(const Var<T>& x, Activation kind) {
  Tensor<T> y = saot::activate(x.value(), kind);
  if (kind == Activation::Identity)
    return record_op<T>(std::move(y), {x}, [](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    });
  auto xn = x.node();
  // The backward closure needs y for sigmoid/exp; keep a copy.
  auto yk = std::make_shared<Tensor<T>>(y);
  return record_op<T>(std::move(y), {x}, [xn, yk, kind](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    Tensor<T>& d = *gi[0];
    const Tensor<T>& yv = *yk;
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (kind) {
        case Activation::Relu: d[i] += xn->value[i] > T{0} ? g[i] : T{0}; break;
        case Activation::Sigmoid: d[i] += g[i] * yv[i] * (T{1} - yv[i]); break;
        case Activation::Exp: d[i] += g[i] * yv[i]; break;
        case Activation::Identity: d[i] += g[i]; break;
      }
    }
  });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v = std::abs(v);
  auto xn = x.node();
  return record_op<T>(std::move(y), {x}, [xn](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xn->value[i];
      (*gi[0])[i] += v > T{0} ? g[i] : (v < T{0} ? -g[i] : T{0});
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return record_op<T>(Tensor<T>::scalar(acc), {x}, [](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    for (auto& v : gi[0]->data()) v += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.size()));
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return record_op<T>(std::move(y), {x}, [](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& rows) {
  if (x.value().rank() != 2) throw DimensionError("gather_rows expects a matrix");
  if (rows.empty()) throw DimensionError("gather_rows with no rows");
  const std::size_t n = x.value().dim(0), d = x.value().dim(1);
  Tensor<T> out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw DimensionError("gather_rows index out of range");
    std::copy_n(x.value().data().begin() + static_cast<std::ptrdiff_t>(rows[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return record_op<T>(std::move(out), {x}, [rows, d](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) (*gi[0])[rows[r] * d + j] += g[r * d + j];
  });
}

template <typename T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin()))
    throw DimensionError("concat_last: " + shape_string(sa) + " vs " + shape_string(sb));
  const std::size_t da = sa.back(), db = sb.back(), rows = a.size() / da;
  Shape so = sa;
  so.back() = da + db;
  Tensor<T> out(so);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data().begin() + static_cast<std::ptrdiff_t>(r * da), da,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * (da + db)));
    std::copy_n(b.value().data().begin() + static_cast<std::ptrdiff_t>(r * db), db,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * (da + db) + da));
  }
  return record_op<T>(std::move(out), {a, b}, [rows, da, db](const Tensor<T>& g, std::vector<Tensor<T>*>& gi) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (gi[0])
        for (std::size_t j = 0; j < da; ++j) (*gi[0])[r * da + j] += g[r * (da + db) + j];
      if (gi[1])
        for (std::size_t j = 0; j < db; ++j) (*gi[1])[r * db + j] += g[r * (da + db) + da + j];
    }
  });
}

}  // namespace ad

#define SAOT_INSTANTIATE(T)                                                                    \
  template class Var<T>;                                                                       \
  template class GradTape<T>;                                                                  \
  template Var<T> record_op<T>(Tensor<T>, const std::vector<Var<T>>&, BackwardFn<T>);          \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> activate<T>(const Tensor<T>&, Activation);                                \
  template Var<T> ad::add<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> ad::sub<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> ad::mul<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> ad::scale<T>(const Var<T>&, T);                                              \
  template Var<T> ad::scale_by<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> ad::add_bias<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> ad::matmul<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> ad::conv2d<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> ad::activate<T>(const Var<T>&, Activation);                                  \
  template Var<T> ad::abs<T>(const Var<T>&);                                                   \
  template Var<T> ad::sum<T>(const Var<T>&);                                                   \
  template Var<T> ad::mean<T>(const Var<T>&);                                                  \
  template Var<T> ad::reshape<T>(const Var<T>&, Shape);                                        \
  template Var<T> ad::gather_rows<T>(const Var<T>&, const std::vector<std::size_t>&);          \
  template Var<T> ad::concat_last<T>(const Var<T>&, const Var<T>&);

SAOT_INSTANTIATE(float)
SAOT_INSTANTIATE(double)
#undef SAOT_INSTANTIATE

}  // namespace saot
