#include "popusense/hypergraph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <utility>

#include "popusense/error.hpp"

namespace popusense::hypergraph {

Matrix Hypergraph::dense_incidence() const {
  Matrix h = Matrix::Zero(static_cast<Eigen::Index>(num_vertices_),
                          static_cast<Eigen::Index>(edges_.size()));
  for (std::size_t e = 0; e < edges_.size(); ++e)
    for (auto v : edges_[e]) h(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(e)) = 1.0;
  return h;
}

Hypergraph Hypergraph::permuted(const std::vector<std::size_t>& perm) const {
  if (perm.size() != num_vertices_) throw Error(Errc::ShapeMismatch, "permutation length");
  std::vector<std::vector<std::size_t>> relabeled;
  relabeled.reserve(edges_.size());
  for (const auto& edge : edges_) {
    std::vector<std::size_t> mapped;
    mapped.reserve(edge.size());
    for (auto v : edge) mapped.push_back(perm.at(v));
    relabeled.push_back(std::move(mapped));
  }
  return incidence_from_edges(num_vertices_, relabeled, weights_);
}

Hypergraph incidence_from_edges(std::size_t num_vertices,
                                const std::vector<std::vector<std::size_t>>& edges,
                                const std::vector<double>& weights) {
  if (edges.size() != weights.size())
    throw Error(Errc::ShapeMismatch, "edges and weights differ in length");
  Hypergraph g;
  g.num_vertices_ = num_vertices;
  g.edges_.reserve(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (edges[e].empty()) throw Error(Errc::EmptyEdge, "edge " + std::to_string(e) + " has no vertices");
    if (!(weights[e] > 0.0) || !std::isfinite(weights[e]))
      throw Error(Errc::NonPositiveWeight, "edge " + std::to_string(e));
    std::vector<std::size_t> members(edges[e]);
    for (auto v : members)
      if (v >= num_vertices)
        throw Error(Errc::IndexOutOfRange,
                    "vertex " + std::to_string(v) + " in edge " + std::to_string(e));
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    g.edges_.push_back(std::move(members));
  }
  g.weights_ = weights;
  return g;
}

Hypergraph knn_hyperedges(const Matrix& features, std::size_t k) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (n == 0) throw Error(Errc::EmptyInput, "knn_hyperedges needs at least one vertex");
  if (k >= n)
    throw Error(Errc::KTooLarge, "k=" + std::to_string(k) + " with " + std::to_string(n) + " vertices");

  // Pairwise squared distances, computed once per unordered pair so that
  // d(a,b) and d(b,a) are the same double.
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      double d = 0.0;
      for (Eigen::Index j = 0; j < features.cols(); ++j) {
        const double t = features(static_cast<Eigen::Index>(a), j) - features(static_cast<Eigen::Index>(b), j);
        d += t * t;
      }
      dist[a * n + b] = d;
      dist[b * n + a] = d;
    }

  std::vector<std::vector<std::size_t>> edges;
  std::set<std::vector<std::size_t>> seen;
  std::vector<std::size_t> order(n);
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<std::size_t> edge{v};
    if (k > 0) {
      order.resize(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      order.erase(order.begin() + static_cast<std::ptrdiff_t>(v));
      const double* row = dist.data() + v * n;
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [row](std::size_t a, std::size_t b) {
                          return row[a] < row[b] || (row[a] == row[b] && a < b);
                        });
      edge.insert(edge.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
      std::sort(edge.begin(), edge.end());
    }
    if (seen.insert(edge).second) edges.push_back(std::move(edge));
  }
  return incidence_from_edges(n, edges, std::vector<double>(edges.size(), 1.0));
}

DegreePair degree_matrices(const Hypergraph& g) {
  DegreePair deg;
  deg.vertex_degrees = Vector::Zero(static_cast<Eigen::Index>(g.num_vertices()));
  deg.edge_degrees = Vector::Zero(static_cast<Eigen::Index>(g.num_edges()));
  const auto& edges = g.edges();
  const auto& w = g.edge_weights();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    deg.edge_degrees(static_cast<Eigen::Index>(e)) = static_cast<double>(edges[e].size());
    for (auto v : edges[e]) deg.vertex_degrees(static_cast<Eigen::Index>(v)) += w[e];
  }
  for (Eigen::Index v = 0; v < deg.vertex_degrees.size(); ++v)
    if (deg.vertex_degrees(v) <= 0.0)
      throw Error(Errc::IsolatedVertex, "vertex " + std::to_string(v) + " belongs to no hyperedge");
  return deg;
}

Matrix propagate(const Hypergraph& g, const DegreePair& deg, const Matrix& m) {
  if (static_cast<std::size_t>(m.rows()) != g.num_vertices())
    throw Error(Errc::ShapeMismatch, "feature rows do not match vertex count");
  const Vector inv_sqrt_dv = deg.vertex_degrees.array().rsqrt();
  const Matrix scaled = inv_sqrt_dv.asDiagonal() * m;

  Matrix out = Matrix::Zero(m.rows(), m.cols());
  Eigen::RowVectorXd edge_sum(m.cols());
  const auto& edges = g.edges();
  const auto& w = g.edge_weights();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    edge_sum.setZero();
    for (auto v : edges[e]) edge_sum += scaled.row(static_cast<Eigen::Index>(v));
    edge_sum *= w[e] / deg.edge_degrees(static_cast<Eigen::Index>(e));
    for (auto v : edges[e]) out.row(static_cast<Eigen::Index>(v)) += edge_sum;
  }
  return inv_sqrt_dv.asDiagonal() * out;
}

namespace {

void check_params(const Matrix& x, const ConvParams& p) {
  if (p.theta.rows() != x.cols())
    throw Error(Errc::ShapeMismatch, "theta rows " + std::to_string(p.theta.rows()) +
                                         " vs feature dim " + std::to_string(x.cols()));
  if (p.bias.size() != p.theta.cols()) throw Error(Errc::ShapeMismatch, "bias length");
}

}  // namespace

Matrix hgconv(const Matrix& x, const Hypergraph& g, const ConvParams& p) {
  check_params(x, p);
  const DegreePair deg = degree_matrices(g);
  Matrix pre = propagate(g, deg, x) * p.theta;
  pre.rowwise() += p.bias.transpose();
  if (p.activation == Activation::relu) pre = pre.cwiseMax(0.0);
  return pre;
}

ConvGrads hgconv_grad(const Matrix& x, const Hypergraph& g, const ConvParams& p,
                      const Matrix& upstream) {
  check_params(x, p);
  const DegreePair deg = degree_matrices(g);
  const Matrix ax = propagate(g, deg, x);
  if (upstream.rows() != ax.rows() || upstream.cols() != p.theta.cols())
    throw Error(Errc::ShapeMismatch, "upstream gradient shape");

  Matrix d_pre = upstream;
  if (p.activation == Activation::relu) {
    Matrix pre = ax * p.theta;
    pre.rowwise() += p.bias.transpose();
    d_pre = (pre.array() > 0.0).select(upstream, 0.0);
  }

  ConvGrads grads;
  grads.d_theta = ax.transpose() * d_pre;
  grads.d_bias = d_pre.colwise().sum().transpose();
  // The propagation operator is symmetric.
  grads.d_x = propagate(g, deg, d_pre * p.theta.transpose());
  return grads;
}

}  // namespace popusense::hypergraph
