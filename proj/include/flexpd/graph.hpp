#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flexpd {

enum class TopologyTag { path, ring, k_regular, erdos_renyi, complete, custom };

std::string to_string(TopologyTag tag);

/// Undirected simple connected graph on vertices 0..n-1.
struct Graph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;  // (i, j) with i < j, deduplicated
  TopologyTag tag = TopologyTag::custom;

  int edge_count() const { return static_cast<int>(edges.size()); }
};

/// Parameters for build_topology; k/prob/seed are read only by the families
/// that need them.
struct TopologySpec {
  TopologyTag tag = TopologyTag::ring;
  int k = 4;
  double prob = 0.5;
  std::uint64_t seed = 0;
};

bool is_connected(const Graph& g);
std::vector<int> degrees(const Graph& g);
int max_degree(const Graph& g);

Graph build_path(int n);
Graph build_ring(int n);
Graph build_complete(int n);
/// Ring base plus a random (k-2)-regular overlay; retries with incremented
/// seed until the overlay avoids existing edges. Requires n*k even, k < n.
Graph build_k_regular(int n, int k, std::uint64_t seed);
/// Regenerates with incremented seed until connected (max 1000 attempts).
Graph build_erdos_renyi(int n, double prob, std::uint64_t seed);
Graph build_custom(int n, std::vector<std::pair<int, int>> edges);
Graph build_topology(const TopologySpec& spec, int n);

/// Edge-node incidence matrix: row per edge (i, j), +1 at the lower vertex
/// index, -1 at the higher.
Eigen::MatrixXd incidence_matrix(const Graph& g);

enum class PenaltyVariant { scaled_gram, weighted_laplacian };

/// scaled_gram: beta * A'A. weighted_laplacian: A' diag(w) A with positive
/// edge-indexed weights.
Eigen::MatrixXd penalty_matrix(const Eigen::MatrixXd& A, double beta, PenaltyVariant variant,
                               const std::vector<double>& weights = {});

struct SpectralReport {
  Eigen::VectorXd eigenvalues;  // ascending
  double rho = 0.0;             // largest eigenvalue
  double s = 0.0;               // smallest eigenvalue above tau_null = 1e-9 * rho
  double spectral_gap = 0.0;    // largest minus second largest eigenvalue
};

SpectralReport spectral_constants(const Eigen::MatrixXd& M);

/// W = I - (1/(1+dmax)) * Laplacian; symmetric, doubly stochastic.
Eigen::MatrixXd consensus_matrix(const Graph& g);

struct Network {
  Graph graph;
  Eigen::MatrixXd A;  // edge_count x n incidence
  Eigen::MatrixXd B;  // n x n penalty, symmetric PSD, Null(B) = Null(A)
  double rho_AtA = 0.0;
  double s_AAt = 0.0;
  double rho_B = 0.0;
  int dmax = 0;
};

Network make_network(const Graph& g, double beta,
                     PenaltyVariant variant = PenaltyVariant::scaled_gram,
                     const std::vector<double>& weights = {});
/// Custom penalty matrix; validated against the Network invariants.
Network make_network(const Graph& g, Eigen::MatrixXd B);
/// Rebuild with B = beta * A'A (used when B is coupled to the dual stepsize).
Network with_gram_penalty(const Network& net, double beta);

}  // namespace flexpd
