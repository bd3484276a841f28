#include "flexpd/graph.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <queue>
#include <random>
#include <set>

namespace flexpd {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::set<std::pair<int, int>> edge_set(const std::vector<std::pair<int, int>>& edges) {
  return {edges.begin(), edges.end()};
}

std::pair<int, int> ordered(int i, int j) { return i < j ? std::pair{i, j} : std::pair{j, i}; }

}  // namespace

std::string to_string(TopologyTag tag) {
  switch (tag) {
    case TopologyTag::path: return "path";
    case TopologyTag::ring: return "ring";
    case TopologyTag::k_regular: return "k_regular";
    case TopologyTag::erdos_renyi: return "erdos_renyi";
    case TopologyTag::complete: return "complete";
    case TopologyTag::custom: return "custom";
  }
  return "unknown";
}

bool is_connected(const Graph& g) {
  if (g.n <= 0) return false;
  std::vector<std::vector<int>> adj(g.n);
  for (auto [i, j] : g.edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  std::vector<char> seen(g.n, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    int v = q.front();
    q.pop();
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        q.push(w);
      }
  }
  return count == g.n;
}

std::vector<int> degrees(const Graph& g) {
  std::vector<int> d(g.n, 0);
  for (auto [i, j] : g.edges) {
    ++d[i];
    ++d[j];
  }
  return d;
}

int max_degree(const Graph& g) {
  auto d = degrees(g);
  return d.empty() ? 0 : *std::max_element(d.begin(), d.end());
}

Graph build_path(int n) {
  require(n >= 2, "path: n >= 2 required");
  Graph g{n, {}, TopologyTag::path};
  for (int i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
  return g;
}

Graph build_ring(int n) {
  require(n >= 3, "ring: n >= 3 required");
  Graph g{n, {}, TopologyTag::ring};
  for (int i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
  g.edges.emplace_back(0, n - 1);
  return g;
}

Graph build_complete(int n) {
  require(n >= 2, "complete: n >= 2 required");
  Graph g{n, {}, TopologyTag::complete};
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) g.edges.emplace_back(i, j);
  return g;
}

Graph build_k_regular(int n, int k, std::uint64_t seed) {
  require(n >= 2 && k >= 1 && k < n, "k_regular: need 1 <= k < n");
  require((static_cast<long>(n) * k) % 2 == 0, "k_regular: n*k must be even");
  if (k == n - 1) {
    Graph g = build_complete(n);
    g.tag = TopologyTag::k_regular;
    return g;
  }
  // Ring base guarantees connectivity (k >= 2); the remaining k-2 degrees per
  // vertex come from a random overlay built by stub matching with rejection.
  require(k >= 2 || n == 2, "k_regular: k = 1 is only connected for n = 2");
  if (k == 1) {
    Graph g{n, {{0, 1}}, TopologyTag::k_regular};
    return g;
  }

  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(attempt));
    Graph g = build_ring(n);
    g.tag = TopologyTag::k_regular;
    int extra = k - 2;
    if (extra == 0) return g;

    std::vector<int> stubs;
    stubs.reserve(static_cast<size_t>(n) * extra);
    for (int v = 0; v < n; ++v)
      for (int t = 0; t < extra; ++t) stubs.push_back(v);
    std::shuffle(stubs.begin(), stubs.end(), rng);

    auto existing = edge_set(g.edges);
    bool ok = true;
    for (size_t idx = 0; idx + 1 < stubs.size(); idx += 2) {
      int a = stubs[idx], b = stubs[idx + 1];
      if (a == b || existing.count(ordered(a, b))) {
        ok = false;
        break;
      }
      existing.insert(ordered(a, b));
      g.edges.push_back(ordered(a, b));
    }
    if (!ok) continue;
    auto d = degrees(g);
    if (std::all_of(d.begin(), d.end(), [k](int x) { return x == k; }) && is_connected(g))
      return g;
  }
  throw std::runtime_error("k_regular: no valid graph after max attempts");
}

Graph build_erdos_renyi(int n, double prob, std::uint64_t seed) {
  require(n >= 2, "erdos_renyi: n >= 2 required");
  require(prob > 0.0 && prob <= 1.0, "erdos_renyi: prob in (0, 1] required");
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(attempt));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    Graph g{n, {}, TopologyTag::erdos_renyi};
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (coin(rng) < prob) g.edges.emplace_back(i, j);
    if (is_connected(g)) return g;
  }
  throw std::runtime_error("erdos_renyi: disconnected after max attempts");
}

Graph build_custom(int n, std::vector<std::pair<int, int>> edges) {
  require(n >= 2, "custom: n >= 2 required");
  std::set<std::pair<int, int>> dedup;
  for (auto& [i, j] : edges) {
    require(i != j, "custom: self-loop");
    require(i >= 0 && i < n && j >= 0 && j < n, "custom: vertex out of range");
    dedup.insert(ordered(i, j));
  }
  Graph g{n, {dedup.begin(), dedup.end()}, TopologyTag::custom};
  require(is_connected(g), "custom: graph must be connected");
  return g;
}

Graph build_topology(const TopologySpec& spec, int n) {
  switch (spec.tag) {
    case TopologyTag::path: return build_path(n);
    case TopologyTag::ring: return build_ring(n);
    case TopologyTag::complete: return build_complete(n);
    case TopologyTag::k_regular: return build_k_regular(n, spec.k, spec.seed);
    case TopologyTag::erdos_renyi: return build_erdos_renyi(n, spec.prob, spec.seed);
    case TopologyTag::custom:
      throw std::invalid_argument("build_topology: custom graphs need build_custom");
  }
  throw std::invalid_argument("build_topology: unknown tag");
}

Eigen::MatrixXd incidence_matrix(const Graph& g) {
  require(is_connected(g), "incidence_matrix: graph must be connected");
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(g.edge_count(), g.n);
  for (int l = 0; l < g.edge_count(); ++l) {
    auto [i, j] = g.edges[l];
    A(l, i) = 1.0;
    A(l, j) = -1.0;
  }
  return A;
}

Eigen::MatrixXd penalty_matrix(const Eigen::MatrixXd& A, double beta, PenaltyVariant variant,
                               const std::vector<double>& weights) {
  if (variant == PenaltyVariant::scaled_gram) {
    require(beta > 0.0, "penalty_matrix: beta > 0 required");
    return beta * (A.transpose() * A);
  }
  require(static_cast<long>(weights.size()) == A.rows(),
          "penalty_matrix: one weight per edge required");
  for (double w : weights) require(w > 0.0, "penalty_matrix: weights must be positive");
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(weights.data(), A.rows());
  return A.transpose() * w.asDiagonal() * A;
}

SpectralReport spectral_constants(const Eigen::MatrixXd& M) {
  require(M.rows() == M.cols() && M.rows() > 0, "spectral_constants: square matrix required");
  require(M.allFinite(), "spectral_constants: non-finite entries");
  Eigen::MatrixXd S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.info() != Eigen::Success) throw std::runtime_error("spectral_constants: eigensolver failed");
  SpectralReport rep;
  rep.eigenvalues = es.eigenvalues();
  const long n = rep.eigenvalues.size();
  rep.rho = rep.eigenvalues(n - 1);
  const double tau_null = 1e-9 * std::abs(rep.rho);
  rep.s = 0.0;
  for (long i = 0; i < n; ++i) {
    if (rep.eigenvalues(i) > tau_null) {
      rep.s = rep.eigenvalues(i);
      break;
    }
  }
  rep.spectral_gap = n >= 2 ? rep.rho - rep.eigenvalues(n - 2) : 0.0;
  return rep;
}

Eigen::MatrixXd consensus_matrix(const Graph& g) {
  require(is_connected(g), "consensus_matrix: graph must be connected");
  Eigen::MatrixXd A = incidence_matrix(g);
  Eigen::MatrixXd L = A.transpose() * A;
  int dmax = max_degree(g);
  return Eigen::MatrixXd::Identity(g.n, g.n) - L / (1.0 + dmax);
}

namespace {

Network finish_network(Graph g, Eigen::MatrixXd A, Eigen::MatrixXd B) {
  Network net;
  net.dmax = max_degree(g);
  net.graph = std::move(g);
  net.A = std::move(A);
  net.B = std::move(B);

  const int n = net.graph.n;
  require((net.A * Eigen::VectorXd::Ones(n)).norm() <= 1e-12, "network: A*1 != 0");
  require((net.B - net.B.transpose()).norm() <= 1e-9 * (1.0 + net.B.norm()),
          "network: B must be symmetric");

  SpectralReport repB = spectral_constants(net.B);
  net.rho_B = repB.rho;
  require((net.B * Eigen::VectorXd::Ones(n)).norm() <= 1e-9 * (1.0 + net.rho_B),
          "network: B*1 != 0");
  const double tau_null = 1e-9 * std::abs(repB.rho);
  require(repB.eigenvalues(0) >= -tau_null, "network: B must be positive semidefinite");
  long nulls = 0;
  for (long i = 0; i < repB.eigenvalues.size(); ++i)
    if (std::abs(repB.eigenvalues(i)) <= tau_null) ++nulls;
  require(nulls == 1, "network: Null(B) must equal Null(A) (connected graph, rank n-1)");

  // Topology compatibility: off-diagonal fill only on edges.
  std::set<std::pair<int, int>> edges(net.graph.edges.begin(), net.graph.edges.end());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::abs(net.B(i, j)) > tau_null)
        require(edges.count({i, j}) == 1, "network: B has fill outside the edge set");

  SpectralReport repAtA = spectral_constants(net.A.transpose() * net.A);
  SpectralReport repAAt = spectral_constants(net.A * net.A.transpose());
  net.rho_AtA = repAtA.rho;
  net.s_AAt = repAAt.s;
  require(net.s_AAt > 0.0, "network: s(AA') must be positive for a connected graph");
  return net;
}

}  // namespace

Network make_network(const Graph& g, double beta, PenaltyVariant variant,
                     const std::vector<double>& weights) {
  Eigen::MatrixXd A = incidence_matrix(g);
  Eigen::MatrixXd B = penalty_matrix(A, beta, variant, weights);
  return finish_network(g, std::move(A), std::move(B));
}

Network make_network(const Graph& g, Eigen::MatrixXd B) {
  Eigen::MatrixXd A = incidence_matrix(g);
  require(B.rows() == g.n && B.cols() == g.n, "make_network: B must be n x n");
  return finish_network(g, std::move(A), std::move(B));
}

Network with_gram_penalty(const Network& net, double beta) {
  return make_network(net.graph, beta, PenaltyVariant::scaled_gram);
}

}  // namespace flexpd
