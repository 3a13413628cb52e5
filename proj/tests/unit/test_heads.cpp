#include <cmath>

#include "doctest.h"
#include "fd.hpp"
#include "saot/heads.hpp"

using namespace saot;

namespace {

ParamSet<double> head_params(std::size_t cin, std::size_t width, std::uint64_t seed, bool zero) {
  ParamSet<double> p;
  Rng rng(seed);
  init_head_params(p, cin, width, rng);
  if (zero)
    for (auto& [name, t] : p.entries()) t.fill(0.0);
  return p;
}

double kernel_norm(const OnlineFilterState& st) {
  double s = 0;
  for (float v : st.kernel.data()) s += double(v) * v;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("classification head") {
  Rng rng(41);
  const auto x = random_normal<double>({6, 7, 5}, rng);
  const auto zero = head_params(5, 4, 1, true);
  const auto p0 = cls_head<double>(x, BoundParams<double>(zero, nullptr));
  CHECK(p0.shape() == Shape{6, 7});
  for (double v : p0.value().data()) CHECK(v == 0.5);

  const auto p = head_params(5, 4, 2, false);
  const auto coeff = random_normal<double>({6, 7}, rng);
  std::vector<Tensor<double>> leaves = {x};
  for (const auto& [name, t] : p.entries())
    if (name.rfind("cls.", 0) == 0) leaves.push_back(t);
  auto loss = [&](const std::vector<Var<double>>& v) {
    const std::size_t i = 1;
    // Rebuild the head by hand from the leaves so gradients reach them.
    auto h = ad::activate(ad::add_bias(ad::conv2d(v[0], v[i]), v[i + 1]), Activation::Relu);
    h = ad::activate(ad::add_bias(ad::conv2d(h, v[i + 2]), v[i + 3]), Activation::Relu);
    auto o = ad::activate(ad::add_bias(ad::conv2d(h, v[i + 4]), v[i + 5]), Activation::Sigmoid);
    return ad::sum(ad::mul(ad::reshape(o, {6, 7}), Var<double>(coeff)));
  };
  // The hand-built head must agree with cls_head before it is used as a proxy.
  {
    std::vector<Var<double>> cv(leaves.begin(), leaves.end());
    const auto ref = cls_head<double>(x, BoundParams<double>(p, nullptr)).value();
    double dot = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) dot += ref[i] * coeff[i];
    CHECK(loss(cv).value().item() == doctest::Approx(dot).epsilon(1e-12));
  }
  CHECK(testing::fd_check(leaves, loss, 10, rng).worst <= 1e-4);
}

TEST_CASE("head gradients through the tape") {
  Rng rng(42);
  const auto x0 = random_normal<double>({5, 5, 3}, rng);
  const auto p = head_params(3, 4, 3, false);
  const auto coeff_c = random_normal<double>({5, 5}, rng);
  const auto coeff_r = random_normal<double>({5, 5, 4}, rng, 0.2);

  GradTape<double> tape;
  BoundParams<double> bp(p, &tape);
  auto x = tape.leaf(x0);
  auto total = ad::add(ad::sum(ad::mul(cls_head(x, bp), Var<double>(coeff_c))),
                       ad::sum(ad::mul(reg_head(x, bp), Var<double>(coeff_r))));
  tape.backward(total);
  const auto grads = bp.grads();

  auto eval = [&](const ParamSet<double>& q, const Tensor<double>& xv) {
    BoundParams<double> b(q, nullptr);
    return ad::add(ad::sum(ad::mul(cls_head<double>(xv, b), Var<double>(coeff_c))),
                   ad::sum(ad::mul(reg_head<double>(xv, b), Var<double>(coeff_r))))
        .value()
        .item();
  };
  double worst = 0;
  for (std::size_t e = 0; e < p.size(); ++e)
    for (int k = 0; k < 10; ++k) {
      auto q = p;
      auto& t = q.entries()[e].second;
      const std::size_t i = rng.below(t.size());
      const double keep = t[i];
      t[i] = keep + 1e-5;
      const double up = eval(q, x0);
      t[i] = keep - 1e-5;
      const double dn = eval(q, x0);
      worst = std::max(worst, testing::rel_err(grads[e][i], (up - dn) / 2e-5));
    }
  CHECK(worst <= 1e-4);
}

TEST_CASE("regression head") {
  Rng rng(43);
  const auto x = random_normal<double>({4, 6, 3}, rng);
  const auto zero = head_params(3, 4, 1, true);
  const auto r0 = reg_head<double>(x, BoundParams<double>(zero, nullptr));
  CHECK(r0.shape() == Shape{4, 6, 4});
  for (double v : r0.value().data()) CHECK(v == 1.0);
  const auto p = head_params(3, 4, 5, false);
  for (int n = 0; n < 10; ++n) {
    const auto r = reg_head<double>(random_normal<double>({4, 6, 3}, rng, 3.0), BoundParams<double>(p, nullptr));
    for (double v : r.value().data()) CHECK(v > 0);
  }
}

TEST_CASE("fusion") {
  const Tensor<float> pr({2, 2}, 0.5f), po({2, 2}, 1.0f);
  CHECK(fuse_response(pr, po, 1.0) == pr);
  CHECK(fuse_response(pr, po, 0.0) == po);
  const auto mixed = fuse_response(pr, po, 0.8);
  for (float v : mixed.data()) CHECK(v == doctest::Approx(0.6f));
  CHECK_THROWS_AS(fuse_response(pr, Tensor<float>({2, 3}), 0.5), DimensionError);
  CHECK_THROWS_AS(fuse_response(pr, po, 1.5), ValidationError);
}

TEST_CASE("box decoding") {
  Tensor<float> cls({5, 6}, 0.1f);
  Tensor<float> off({5, 6, 4}, 1.0f);
  cls.at(3, 2) = 0.9f;
  off.at(3, 2, 0) = 1.5f;
  off.at(3, 2, 1) = 0.5f;
  off.at(3, 2, 2) = 2.0f;
  off.at(3, 2, 3) = 1.0f;
  const auto d = decode_box(cls, off);
  CHECK(d.peak == GridPos{3, 2});
  CHECK(d.box == Box{0.5, 2.5, 3.5, 1.5});
  CHECK(d.confidence == doctest::Approx(0.9));

  const auto u = decode_box(Tensor<float>({5, 6}, 0.3f), off);
  CHECK(u.peak == GridPos{0, 0});
  // (0,0) with unit offsets reaches past the grid and is clipped
  CHECK(u.box == Box{-0.5, -0.5, 1.5, 1.5});
}

TEST_CASE("giou") {
  const Box a{0, 0, 2, 2}, b{1, 1, 2, 2};
  CHECK(giou_loss(a, a) == 0.0);
  CHECK(giou_loss(a, b) == doctest::Approx(1 - (1.0 / 7 - 2.0 / 9)).epsilon(1e-14));
  CHECK(giou_loss(a, b) == doctest::Approx(1.0794).epsilon(1e-4));
  CHECK(giou_loss({0, 0, 1, 1}, {1000, 1000, 1, 1}) > 1.9);
  Rng rng(44);
  for (int n = 0; n < 100; ++n) {
    const Box p{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.1, 4), rng.uniform(0.1, 4)};
    const Box q{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.1, 4), rng.uniform(0.1, 4)};
    const double l = giou_loss(p, q);
    CHECK((l >= 0 && l <= 2));
    CHECK(l == doctest::Approx(giou_loss(q, p)).epsilon(1e-12));
  }
}

TEST_CASE("giou loss op") {
  Rng rng(45);
  const auto off = random_uniform<double>({4, 5, 4}, rng, 0.3, 2.5);
  const std::vector<Location> pos = {{1, 1}, {2, 3}, {3, 0}};
  const Box gt{0.7, 0.4, 2.6, 2.2};
  auto loss = [&](const std::vector<Var<double>>& v) { return giou_loss_op(v[0], pos, gt); };
  double ref = 0;
  for (const auto& l : pos) {
    const Box b{double(l.col) - off.at(l.row, l.col, 0), double(l.row) - off.at(l.row, l.col, 1),
                off.at(l.row, l.col, 0) + off.at(l.row, l.col, 2), off.at(l.row, l.col, 1) + off.at(l.row, l.col, 3)};
    ref += giou_loss(b, gt) / 3;
  }
  CHECK(loss({Var<double>(off)}).value().item() == doctest::Approx(ref).epsilon(1e-12));
  CHECK(testing::fd_check({off}, loss, 10, rng).worst <= 1e-4);
  CHECK_THROWS_AS(giou_loss_op<double>(off, {}, gt), ContractError);
}

TEST_CASE("bce") {
  CHECK(bce_loss<double>(Tensor<double>::scalar(0.5), Tensor<double>::scalar(1.0), 1.0).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const Tensor<double> y({2, 2}, {0.0, 1.0, 1.0, 0.0});
  CHECK(bce_loss<double>(y, y, 8.0).value().item() <= 1e-6);
  Rng rng(46);
  const auto p = random_uniform<double>({4, 4}, rng, 0.05, 0.95);
  Tensor<double> lab({4, 4});
  for (auto& v : lab.data()) v = rng.uniform() < 0.3;
  auto loss = [&](const std::vector<Var<double>>& v) { return bce_loss(v[0], lab, 8.0); };
  CHECK(testing::fd_check({p}, loss, 10, rng).worst <= 1e-4);
}

TEST_CASE("labels") {
  const auto c = center_labels<float>(7, 7, 3.0, 3.0, 1.5);
  CHECK(c.at(3, 3) == 1.f);
  CHECK(c.at(4, 4) == 1.f);
  CHECK(c.at(3, 5) == 0.f);
  const auto g = gaussian_label<float>(7, 7, 3.0, 2.0, 2.0);
  CHECK(g.at(2, 3) == 1.f);
  CHECK(g.at(2, 5) == doctest::Approx(std::exp(-4.0 / 8)).epsilon(1e-6));
}

TEST_CASE("online filter") {
  Rng rng(47);
  FilterConfig cfg;
  const auto f = random_normal<float>({10, 10, 4}, rng);
  const auto y = gaussian_label<float>(10, 10, 4.0, 5.0, cfg.label_sigma);

  SUBCASE("eta zero leaves the state alone") {
    OnlineFilterState st;
    online_filter_init(st, f, y, cfg);
    const auto kernel = st.kernel;
    const auto mem = st.memory.size();
    auto c0 = cfg;
    c0.eta = 0;
    CHECK(online_filter_update(st, random_normal<float>({10, 10, 4}, rng), y, c0));
    CHECK(st.kernel == kernel);
    CHECK(st.memory.size() == mem);
  }
  SUBCASE("conjugate gradient reduces the residual monotonically") {
    auto c = cfg;
    c.init_cg = 0;
    OnlineFilterState st;
    online_filter_init(st, f, y, c);
    std::vector<FilterObjective> hist;
    online_filter_solve(st, 25, c, &hist);
    REQUIRE(hist.size() == 25);
    double prev = online_filter_objective(st, c).objective + 1;
    prev = 1e300;
    for (const auto& h : hist) {
      CHECK(h.objective <= prev * (1 + 1e-6));
      prev = h.objective;
    }
    CHECK(hist.back().residual < hist.front().residual);
    for (std::size_t i = 1; i < hist.size(); ++i) CHECK(hist[i].residual <= hist[i - 1].residual * (1 + 1e-4));
  }
  SUBCASE("huge ridge weight drives the kernel to zero") {
    auto c = cfg;
    c.lambda = 1e6;
    OnlineFilterState st;
    online_filter_init(st, f, y, c);
    CHECK(kernel_norm(st) < 1e-3);
  }
  SUBCASE("memory is bounded and weights sum to one") {
    OnlineFilterState st;
    online_filter_init(st, f, y, cfg);
    for (int n = 0; n < 12; ++n) online_filter_update(st, random_normal<float>({10, 10, 4}, rng), y, cfg);
    CHECK(st.memory.size() == cfg.max_samples);
    double w = 0;
    for (const auto& s : st.memory) w += s.weight;
    CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("non-finite features are skipped") {
    OnlineFilterState st;
    online_filter_init(st, f, y, cfg);
    auto bad = f;
    bad[7] = std::nanf("");
    const auto kernel = st.kernel;
    CHECK_FALSE(online_filter_update(st, bad, y, cfg));
    CHECK(st.skipped_updates == 1);
    CHECK(st.kernel == kernel);
  }
  SUBCASE("the filter finds its own training target") {
    OnlineFilterState st;
    online_filter_init(st, f, y, cfg);
    const auto r = filter_response(st, f);
    CHECK(r.shape() == Shape{10, 10});
    std::size_t best = 0;
    for (std::size_t i = 1; i < r.size(); ++i)
      if (r[i] > r[best]) best = i;
    CHECK(best == 5 * 10 + 4);
  }
}
