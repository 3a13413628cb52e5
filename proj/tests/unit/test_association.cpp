#include <cmath>
#include <set>

#include "doctest.h"
#include "fd.hpp"
#include "graphs.hpp"
#include "oracle.hpp"
#include "saot/params.hpp"

using namespace saot;

namespace {

template <typename T>
Tensor<T> identity(std::size_t n) {
  Tensor<T> t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1;
  return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("variant names") {
  for (const char* n : {"base", "ppfm", "pam", "saot", "dw_corr", "pg_corr"})
    CHECK(std::string(variant_name(parse_variant(n))) == n);
  CHECK_THROWS_AS(parse_variant("siamfc"), ValidationError);
}

TEST_CASE("node features") {
  Rng rng(31);
  const auto fx = random_normal<double>({3, 3, 4}, rng);
  const auto fs = random_normal<double>({5, 5, 4}, rng);
  const auto vol = build_similarity_volume(fx, fs);

  SUBCASE("all saliencies equal gives the raw similarity block") {
    SaliencySet sal;
    for (std::size_t i = 0; i < 9; ++i) {
      sal.px.push_back({i / 3, i % 3});
      sal.values.push_back(2.0);
    }
    const auto shat = normalized_saliency(sal, 3, 3);
    for (double s : shat) CHECK(s == 1.0);
    const auto fg = build_node_features(vol, fs, shat);
    CHECK(fg.shape() == Shape{25, 13});
    for (std::size_t n = 0; n < 25; ++n) {
      for (std::size_t m = 0; m < 9; ++m) CHECK(fg.at(n, m) == vol.values[m * 25 + n]);
      for (std::size_t c = 0; c < 4; ++c) CHECK(fg.at(n, 9 + c) == fs[n * 4 + c]);
    }
  }
  SUBCASE("non-salient channels do not depend on S") {
    SaliencySet sal;
    sal.px = {{0, 1}, {2, 2}};
    sal.values = {3.0, 1.5};
    const auto shat = normalized_saliency(sal, 3, 3);
    CHECK(shat[1] == 1.0);
    CHECK(shat[8] == 0.5);
    auto zeroed = vol;
    for (std::size_t m = 0; m < 9; ++m)
      if (shat[m] == 0)
        for (std::size_t n = 0; n < 25; ++n) zeroed.values[m * 25 + n] = rng.normal();
    CHECK(build_node_features(vol, fs, shat) == build_node_features(zeroed, fs, shat));
  }
  SUBCASE("non-positive saliencies are flagged") {
    SaliencySet sal;
    sal.px = {{0, 0}};
    sal.values = {-1.0};
    bool degenerate = false;
    const auto shat = normalized_saliency(sal, 3, 3, &degenerate);
    CHECK(degenerate);
    for (double s : shat) CHECK(s == 0.0);
  }
}

TEST_CASE("edge sets") {
  CHECK(build_edge_set({{0, 0}, {2, 2}}, 3, 3).edges.size() == 21);
  CHECK(build_edge_set({{0, 0}, {2, 2}}, 3, 3).saliency_edges == 1);
  CHECK(build_edge_set({}, 3, 3).edges.size() == 20);
  CHECK(build_edge_set({{0, 0}}, 1, 1).edges.empty());
  const auto same = build_edge_set({{1, 1}, {1, 1}, {1, 1}}, 4, 4);
  CHECK(same.saliency_edges == 0);
  CHECK(same.edges.size() == build_edge_set({}, 4, 4).edges.size());
  // A saliency pair that is also a grid neighbour is stored once.
  CHECK(build_edge_set({{0, 0}, {1, 1}}, 3, 3).edges.size() == 20);

  const auto c = build_edge_set({{0, 0}, {5, 6}, {3, 1}, {5, 6}}, 6, 7);
  std::set<std::pair<std::uint32_t, std::uint32_t>> uniq(c.edges.begin(), c.edges.end());
  CHECK(uniq.size() == c.edges.size());
  CHECK(std::is_sorted(c.edges.begin(), c.edges.end()));
  for (auto [i, j] : c.edges) {
    CHECK(i < j);
    const long di = long(i / 7) - long(j / 7), dj = long(i % 7) - long(j % 7);
    const bool grid = std::abs(di) <= 1 && std::abs(dj) <= 1;
    const bool sal_pair = uniq.count({i, j}) && !grid;
    CHECK((grid || sal_pair));
  }
  CHECK(c.saliency_edges == 3);
}

TEST_CASE("edge weights") {
  Rng rng(32);
  const std::size_t d = 6, de = 5;
  const auto fg = random_normal<double>({9, d}, rng);
  const auto c = build_edge_set({{0, 0}, {2, 2}}, 3, 3);
  SUBCASE("zero parameters give one half") {
    const auto a = edge_weights<double>(fg, c, Tensor<double>({d, de}), Tensor<double>({de}),
                                        Tensor<double>({de, 1}), Tensor<double>({1}));
    for (double v : a.value().data()) CHECK(v == 0.5);
  }
  const auto w1 = random_normal<double>({d, de}, rng), b1 = random_normal<double>({de}, rng);
  const auto w2 = random_normal<double>({de, 1}, rng), b2 = random_normal<double>({1}, rng);
  SUBCASE("equal endpoint features give the zero-input weight") {
    Tensor<double> flat({9, d}, 0.7);
    const auto a = edge_weights<double>(flat, c, w1, b1, w2, b2);
    Tensor<double> zero_in({9, d}, -3.0);
    const auto z = edge_weights<double>(zero_in, c, w1, b1, w2, b2);
    CHECK(a.value() == z.value());
  }
  SUBCASE("symmetric in the endpoints") {
    const auto a = edge_weights<double>(fg, c, w1, b1, w2, b2);
    for (std::size_t e = 0; e < c.edges.size(); ++e) {
      EdgeSet rev;
      rev.nodes = 9;
      rev.edges = {{c.edges[e].second, c.edges[e].first}};
      const auto r = edge_weights<double>(fg, rev, w1, b1, w2, b2);
      CHECK(r.value()[0] == a.value()[e]);
      CHECK((a.value()[e] > 0 && a.value()[e] < 1));
    }
  }
  SUBCASE("gradients") {
    Tensor<double> coeff = random_normal<double>({c.edges.size()}, rng);
    auto loss = [&](const std::vector<Var<double>>& v) {
      return ad::sum(ad::mul(edge_weights(v[0], c, v[1], v[2], v[3], v[4]), Var<double>(coeff)));
    };
    CHECK(testing::fd_check({fg, w1, b1, w2, b2}, loss, 10, rng).worst <= 1e-4);
  }
  EdgeSet empty;
  empty.nodes = 9;
  CHECK_THROWS_AS(edge_weights<double>(fg, empty, w1, b1, w2, b2), ContractError);
}

TEST_CASE("normalized adjacency") {
  Rng rng(33);
  SUBCASE("no edge weight gives the identity") {
    const auto c = build_edge_set({}, 3, 3);
    const auto ahat = normalize_adjacency<double>(Tensor<double>({c.edges.size()}), c);
    CHECK(densify(ahat.value(), c) == identity<double>(9));
  }
  SUBCASE("two nodes joined with weight one") {
    EdgeSet c;
    c.nodes = 2;
    c.edges = {{0, 1}};
    const auto d = densify(normalize_adjacency<double>(Tensor<double>({1}, 1.0), c).value(), c);
    for (double v : d.data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("random graphs: symmetric, exact support, spectral radius at most one") {
    for (int n = 0; n < 20; ++n) {
      const auto c = testing::random_edge_set(3 + rng.below(12), 0.4, rng);
      if (c.edges.empty()) continue;
      const auto a = random_uniform<double>({c.edges.size()}, rng, 0.01, 1.0);
      const auto d = densify(normalize_adjacency<double>(a, c).value(), c);
      Tensor<double> raw({c.nodes, c.nodes});
      for (std::size_t e = 0; e < c.edges.size(); ++e) {
        raw.at(c.edges[e].first, c.edges[e].second) = a[e];
        raw.at(c.edges[e].second, c.edges[e].first) = a[e];
      }
      CHECK(max_abs_diff(d, oracle::normalize_dense(raw)) <= 1e-14);
      for (std::size_t i = 0; i < c.nodes; ++i)
        for (std::size_t j = 0; j < c.nodes; ++j) {
          CHECK(d.at(i, j) == d.at(j, i));
          if (i != j) CHECK((d.at(i, j) != 0) == (raw.at(i, j) != 0));
        }
      CHECK(oracle::spectral_radius(d) <= 1 + 1e-6);
    }
  }
  SUBCASE("gradient through the degrees") {
    const auto c = testing::random_edge_set(7, 0.5, rng);
    const auto a = random_uniform<double>({c.edges.size()}, rng, 0.1, 1.0);
    const auto coeff = random_normal<double>({c.edges.size() + c.nodes}, rng);
    auto loss = [&](const std::vector<Var<double>>& v) {
      return ad::sum(ad::mul(normalize_adjacency(v[0], c), Var<double>(coeff)));
    };
    CHECK(testing::fd_check({a}, loss, 10, rng).worst <= 1e-4);
  }
}

TEST_CASE("gcn layer") {
  Rng rng(34);
  const auto c = testing::random_edge_set(8, 0.4, rng);
  const auto a = random_uniform<double>({c.edges.size()}, rng, 0.05, 1.0);
  const auto ahat = normalize_adjacency<double>(a, c);
  const auto dense = densify(ahat.value(), c);
  const auto x = random_normal<double>({8, 5}, rng);

  SUBCASE("first order with identity weights is the propagation") {
    const auto y = gcn_layer<double>(x, ahat, c, {identity<double>(5)}, {Tensor<double>::scalar(1.0)},
                                     Activation::Identity);
    CHECK(max_abs_diff(y.value(), matmul(dense, x)) <= 1e-12);
  }
  SUBCASE("identity adjacency") {
    EdgeSet none;
    none.nodes = 8;
    const std::vector<Var<double>> th = {random_normal<double>({5, 3}, rng), random_normal<double>({5, 3}, rng)};
    const std::vector<Var<double>> ws = {Tensor<double>::scalar(0.3), Tensor<double>::scalar(-1.2)};
    const auto y = gcn_layer<double>(x, Tensor<double>({8}, 1.0), none, th, ws, Activation::Relu);
    auto ref = matmul(x, th[0].value());
    const auto second = matmul(x, th[1].value());
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = std::max(0.0, 0.3 * ref[i] - 1.2 * second[i]);
    CHECK(max_abs_diff(y.value(), ref) <= 1e-12);
  }
  SUBCASE("third order against dense powers") {
    std::vector<Tensor<double>> thetas;
    std::vector<Var<double>> tv, wv;
    std::vector<double> ws;
    for (int m = 0; m < 3; ++m) {
      thetas.push_back(random_normal<double>({5, 4}, rng));
      tv.emplace_back(thetas.back());
      ws.push_back(rng.normal());
      wv.emplace_back(Tensor<double>::scalar(ws.back()));
    }
    const auto y = gcn_layer<double>(x, ahat, c, tv, wv, Activation::Relu);
    CHECK(max_abs_diff(y.value(), oracle::gcn_dense(x, dense, thetas, ws, true)) <= 1e-5);
  }
  SUBCASE("linear in X without an activation") {
    const std::vector<Var<double>> th = {random_normal<double>({5, 3}, rng), random_normal<double>({5, 3}, rng)};
    const std::vector<Var<double>> ws = {Tensor<double>::scalar(0.5), Tensor<double>::scalar(0.5)};
    const auto x2 = random_normal<double>({8, 5}, rng);
    Tensor<double> mix = x;
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2.0 * x[i] - 0.7 * x2[i];
    const auto y1 = gcn_layer<double>(x, ahat, c, th, ws, Activation::Identity).value();
    const auto y2 = gcn_layer<double>(x2, ahat, c, th, ws, Activation::Identity).value();
    const auto ym = gcn_layer<double>(mix, ahat, c, th, ws, Activation::Identity).value();
    for (std::size_t i = 0; i < ym.size(); ++i) CHECK(ym[i] == doctest::Approx(2.0 * y1[i] - 0.7 * y2[i]).epsilon(1e-5));
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(gcn_layer<double>(x, ahat, c, {random_normal<double>({4, 3}, rng)}, {Tensor<double>::scalar(1.0)},
                                      Activation::Identity),
                    ContractError);
    CHECK_THROWS_AS(gcn_layer<double>(x, ahat, c, {identity<double>(5)}, {}, Activation::Identity), ContractError);
  }
  SUBCASE("gradients in X, Theta, w and the adjacency") {
    const auto coeff = random_normal<double>({8, 3}, rng);
    auto loss = [&](const std::vector<Var<double>>& v) {
      const auto ah = normalize_adjacency(v[0], c);
      return ad::sum(ad::mul(gcn_layer(v[1], ah, c, {v[2], v[3]}, {v[4], v[5]}, Activation::Relu), Var<double>(coeff)));
    };
    const auto r = testing::fd_check({a, x, random_normal<double>({5, 3}, rng), random_normal<double>({5, 3}, rng),
                                      Tensor<double>::scalar(0.8), Tensor<double>::scalar(-0.4)},
                                     loss, 10, rng);
    CHECK(r.worst <= 1e-4);
  }
}

TEST_CASE("permutation equivariance of the graph block") {
  Rng rng(35);
  const std::size_t n = 10, d = 6, de = 4;
  const auto c = testing::random_edge_set(n, 0.35, rng);
  REQUIRE_FALSE(c.edges.empty());
  const auto x = random_normal<double>({n, d}, rng);
  const auto w1 = random_normal<double>({d, de}, rng), b1 = random_normal<double>({de}, rng);
  const auto w2 = random_normal<double>({de, 1}, rng), b2 = random_normal<double>({1}, rng);
  const std::vector<Var<double>> th = {random_normal<double>({d, 3}, rng), random_normal<double>({d, 3}, rng)};
  const std::vector<Var<double>> ws = {Tensor<double>::scalar(0.6), Tensor<double>::scalar(0.4)};
  auto run = [&](const Tensor<double>& feats, const EdgeSet& es) {
    const auto a = edge_weights<double>(feats, es, w1, b1, w2, b2);
    return gcn_layer<double>(feats, normalize_adjacency(a, es), es, th, ws, Activation::Relu).value();
  };
  const auto y = run(x, c);
  const auto perm = testing::random_permutation(n, rng);
  std::vector<std::size_t> src;
  const auto pc = testing::permute_edges(c, perm, src);
  Tensor<double> px({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) px.at(perm[i], k) = x.at(i, k);
  const auto py = run(px, pc);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(py.at(perm[i], k) - y.at(i, k)) <= 1e-6);
}

TEST_CASE("correlation variants") {
  Rng rng(36);
  const std::size_t ch = 8;
  const auto fx = random_normal<float>({8, 8, ch}, rng);
  const auto fs = random_normal<float>({14, 14, ch}, rng);
  for (const char* name : {"base", "ppfm", "pam", "saot", "dw_corr", "pg_corr"}) {
    CorrelationConfig cfg;
    cfg.variant = parse_variant(name);
    cfg.d1 = 12;
    cfg.d2 = 10;
    cfg.d_e = 6;
    ParamSet<float> p;
    Rng init(1);
    init_correlation_params(p, cfg, ch, init);
    CorrelationTrace trace;
    const auto out = correlate(fx, fs, cfg, BoundParams<float>(p, nullptr), &trace);
    CAPTURE(name);
    CHECK(out.shape() == Shape{14, 14, cfg.output_channels(ch)});
    CHECK(out.value().all_finite());
    if (cfg.variant == Variant::Saot) CHECK(trace.saliencies.px.size() == 48);
    if (cfg.variant == Variant::Pam) CHECK(trace.saliencies.px.size() == 64);
    if (cfg.variant == Variant::Base) CHECK(out.value() == fs);
  }
}

// Untrained projections have arbitrary sign, so the readout is the mean
// magnitude over channels.
TEST_CASE("planted exemplar peaks on its plant location") {
  std::size_t hits = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    const std::size_t ch = 16;
    Tensor<float> fs({24, 24, ch});
    for (auto& v : fs.data()) v = static_cast<float>(std::max(0.0, rng.normal(0.0, 0.15)));
    const auto fx = random_uniform<float>({8, 8, ch}, rng, 0.0, 1.0);
    const std::size_t r0 = 2 + rng.below(14), c0 = 2 + rng.below(14);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        for (std::size_t k = 0; k < ch; ++k) fs.at(r0 + i, c0 + j, k) = fx.at(i, j, k);
    CorrelationConfig cfg;
    ParamSet<float> p;
    Rng init(trial);
    init_correlation_params(p, cfg, ch, init);
    const auto out = correlate(fx, fs, cfg, BoundParams<float>(p, nullptr)).value();
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t n = 0; n < 24 * 24; ++n) {
      double s = 0;
      for (std::size_t k = 0; k < cfg.d2; ++k) s += std::abs(out[n * cfg.d2 + k]);
      if (s > best_v) {
        best_v = s;
        best = n;
      }
    }
    // within a 3x3 window of some planted cell
    const std::size_t br = best / 24, bc = best % 24;
    hits += br + 1 >= r0 && br <= r0 + 8 && bc + 1 >= c0 && bc <= c0 + 8;
  }
  CHECK(hits >= 16);
}
