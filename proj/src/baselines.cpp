#include "flexpd/baselines.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace flexpd {

ExtraConfig make_extra_config(const Graph& g, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("make_extra_config: alpha must be positive");
  ExtraConfig cfg;
  cfg.alpha = alpha;
  cfg.W = consensus_matrix(g);
  cfg.W_tilde = 0.5 * (Eigen::MatrixXd::Identity(g.n, g.n) + cfg.W);

  const double row_err = (cfg.W.rowwise().sum() -
                          Eigen::VectorXd::Ones(g.n)).cwiseAbs().maxCoeff();
  const double sym_err = (cfg.W - cfg.W.transpose()).cwiseAbs().maxCoeff();
  if (row_err > 1e-12 || sym_err > 1e-12)
    throw std::invalid_argument("make_extra_config: W is not symmetric doubly stochastic");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cfg.W_tilde);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument("make_extra_config: (I + W)/2 is not positive definite");
  return cfg;
}

ExtraState extra_initial_state(const ExtraConfig& cfg, const Eigen::MatrixXd& x0) {
  if (x0.rows() != cfg.W.rows())
    throw std::invalid_argument("extra_initial_state: x0 row count must equal n");
  ExtraState st;
  st.s.x = x0;
  st.s.lambda = Eigen::MatrixXd::Zero(0, x0.cols());
  st.x_prev = Eigen::MatrixXd::Zero(x0.rows(), x0.cols());
  st.grad_prev = Eigen::MatrixXd::Zero(x0.rows(), x0.cols());
  return st;
}

void extra_step(ExtraState& st, const ExtraConfig& cfg, const ObjectiveSet& obj) {
  const Eigen::MatrixXd grad = obj.grad(st.s.x);
  Eigen::MatrixXd next;
  if (!st.started) {
    next = cfg.W * st.s.x - cfg.alpha * grad;
    st.started = true;
  } else {
    next = (Eigen::MatrixXd::Identity(obj.n(), obj.n()) + cfg.W) * st.s.x -
           cfg.W_tilde * st.x_prev - cfg.alpha * (grad - st.grad_prev);
  }
  st.x_prev = st.s.x;
  st.grad_prev = grad;
  st.s.x = std::move(next);
  st.s.k += 1;
  st.s.grad_evals += obj.n();
  st.s.comm_rounds += 1;
}

MmStepReport mm_step(AlgorithmState& st, const Network& net, const ObjectiveSet& obj,
                     const MmConfig& cfg) {
  if (!(cfg.beta > 0.0)) throw std::invalid_argument("mm_step: beta must be positive");
  const auto [m, L] = obj.constants();
  const Eigen::MatrixXd AtA = net.A.transpose() * net.A;
  const double step = 2.0 / (m + L + cfg.beta * net.rho_AtA);

  // Exact minimization of the augmented Lagrangian
  //   L_a(x) = f(x) + <lambda, Ax> + (beta/2) ||Ax||^2
  // by gradient descent, warm-started from the current primal iterate.
  MmStepReport rep;
  const Eigen::MatrixXd lin = net.A.transpose() * st.lambda;
  Eigen::MatrixXd g(obj.n(), st.x.cols());
  for (long it = 0; it < cfg.inner_max; ++it) {
    g = obj.grad(st.x) + lin + cfg.beta * (AtA * st.x);
    rep.inner_grad_norm = g.norm();
    rep.inner_iters = it;
    st.grad_evals += obj.n();
    if (rep.inner_grad_norm <= cfg.inner_tol) break;
    st.x -= step * g;
    if (it + 1 == cfg.inner_max) rep.hit_cap = true;
  }
  st.lambda += cfg.beta * (net.A * st.x);
  st.comm_rounds += 1;
  st.k += 1;
  return rep;
}

}  // namespace flexpd
