#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace popusense::hypergraph {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Weighted hypergraph stored edge-major: edge e lists its member vertices
/// in ascending order. Immutable after construction; build through
/// incidence_from_edges() or knn_hyperedges(), which enforce the invariants
/// (non-empty edges, in-range vertices, strictly positive weights).
class Hypergraph {
 public:
  Hypergraph() = default;

  std::size_t num_vertices() const noexcept { return num_vertices_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  const std::vector<std::vector<std::size_t>>& edges() const noexcept { return edges_; }
  const std::vector<double>& edge_weights() const noexcept { return weights_; }

  /// Dense H (num_vertices × num_edges). Test and debugging aid only.
  Matrix dense_incidence() const;

  /// Relabels vertices: vertex v becomes perm[v].
  Hypergraph permuted(const std::vector<std::size_t>& perm) const;

  friend bool operator==(const Hypergraph&, const Hypergraph&) = default;

 private:
  friend Hypergraph incidence_from_edges(std::size_t, const std::vector<std::vector<std::size_t>>&,
                                         const std::vector<double>&);
  std::size_t num_vertices_ = 0;
  std::vector<std::vector<std::size_t>> edges_;
  std::vector<double> weights_;
};

struct DegreePair {
  Vector vertex_degrees;  // Dv[v] = sum_e w[e] H[v,e]
  Vector edge_degrees;    // De[e] = sum_v H[v,e]
};

enum class Activation { linear, relu };

/// One hypergraph convolution layer: theta is d_in × d_out.
struct ConvParams {
  Matrix theta;
  Vector bias;
  Activation activation = Activation::linear;
};

struct ConvGrads {
  Matrix d_x;
  Matrix d_theta;
  Vector d_bias;
};

Hypergraph incidence_from_edges(std::size_t num_vertices,
                                const std::vector<std::vector<std::size_t>>& edges,
                                const std::vector<double>& weights);

/// One hyperedge per vertex: the vertex plus its k nearest neighbours under
/// squared Euclidean distance (ties to the lower index). Identical vertex
/// sets are kept once, in order of first appearance. All weights are 1.
Hypergraph knn_hyperedges(const Matrix& features, std::size_t k);

DegreePair degree_matrices(const Hypergraph& g);

/// Dv^-1/2 H W De^-1 H^T Dv^-1/2 applied to m (rows indexed by vertex).
Matrix propagate(const Hypergraph& g, const DegreePair& deg, const Matrix& m);

/// act( propagate(x) * theta + bias ).
Matrix hgconv(const Matrix& x, const Hypergraph& g, const ConvParams& p);

/// Gradients of <upstream, hgconv(x, g, p)> with respect to x, theta, bias.
ConvGrads hgconv_grad(const Matrix& x, const Hypergraph& g, const ConvParams& p,
                      const Matrix& upstream);

}  // namespace popusense::hypergraph
