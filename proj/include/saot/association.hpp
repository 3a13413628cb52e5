#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "saot/params.hpp"
#include "saot/saliency.hpp"

namespace saot {

enum class Variant { Base, Ppfm, Pam, Saot, DwCorr, PgCorr };

Variant parse_variant(const std::string& name);
const char* variant_name(Variant v);

// Undirected edges stored once as (i, j) with i < j, sorted, unique.
struct EdgeSet {
  std::size_t nodes = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::size_t saliency_edges = 0;  // pairs contributed by saliencies (before merging with grid edges)
};

// ŝ per exemplar cell: s/max(s) on selected cells, 0 elsewhere. Returns
// all zeros and sets *degenerate when max(s) <= 0.
std::vector<double> normalized_saliency(const SaliencySet& sal, std::size_t hx, std::size_t wx,
                                        bool* degenerate = nullptr);

// F_g [N, hx*wx + c]: similarity channel (u,v) scaled by shat[u*wx+v], then F_s.
template <typename T>
Tensor<T> build_node_features(const SimilarityVolume<T>& vol, const Tensor<T>& fs, const std::vector<double>& shat);

EdgeSet build_edge_set(const std::vector<GridPos>& ps, std::size_t hs, std::size_t ws);

// A_e = sigmoid(phi2(relu(phi1(|v_i - v_j|)))) for each edge; returns [E].
template <typename T>
Var<T> edge_weights(const Var<T>& fg, const EdgeSet& c, const Var<T>& w1, const Var<T>& b1, const Var<T>& w2,
                    const Var<T>& b2);

// Â = D^-1/2 (A + I) D^-1/2 packed as [E + N]: the E off-diagonal values in
// edge order, then the N diagonal values.
template <typename T>
Var<T> normalize_adjacency(const Var<T>& a, const EdgeSet& c);

// Y = Â X for packed Â; X [N, d].
template <typename T>
Var<T> spmm(const Var<T>& ahat, const EdgeSet& c, const Var<T>& x);

// Dense copy of a packed adjacency (tests and small examples only).
template <typename T>
Tensor<T> densify(const Tensor<T>& packed, const EdgeSet& c);

// sigma(sum_m w_m Â^m X Θ_m); thetas[m] is [d_in, d_out], ws[m] single-element.
template <typename T>
Var<T> gcn_layer(const Var<T>& x, const Var<T>& ahat, const EdgeSet& c, const std::vector<Var<T>>& thetas,
                 const std::vector<Var<T>>& ws, Activation act);

struct CorrelationConfig {
  Variant variant = Variant::Saot;
  SaliencyConfig saliency;
  std::size_t gcn_orders = 2;
  std::size_t d_e = 32;
  std::size_t d1 = 64;
  std::size_t d2 = 64;
  Activation act0 = Activation::Relu;
  Activation act1 = Activation::Identity;
  std::size_t exemplar_size = 8;

  void validate() const;
  // Channels of the map handed to the heads.
  std::size_t output_channels(std::size_t feature_channels) const;
};

template <typename T>
void init_correlation_params(ParamSet<T>& params, const CorrelationConfig& cfg, std::size_t channels, Rng& rng);

struct CorrelationTrace {
  SaliencySet saliencies;  // empty for variants without mining
  std::size_t edges = 0;
  bool degenerate_saliency = false;
};

// Full per-variant correlation producing [hs, ws, d] for the heads.
template <typename T>
Var<T> correlate(const Tensor<T>& fx, const Tensor<T>& fs, const CorrelationConfig& cfg, const BoundParams<T>& p,
                 CorrelationTrace* trace = nullptr);

}  // namespace saot
