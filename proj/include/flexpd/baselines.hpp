#pragma once

#include "flexpd/core.hpp"

namespace flexpd {

struct ExtraConfig {
  Eigen::MatrixXd W;        // symmetric, doubly stochastic
  Eigen::MatrixXd W_tilde;  // (I + W)/2
  double alpha = 0.0;
};

ExtraConfig make_extra_config(const Graph& g, double alpha);

struct ExtraState {
  AlgorithmState s;          // lambda unused; x is the current iterate
  Eigen::MatrixXd x_prev;    // x^k when s.x = x^{k+1}
  Eigen::MatrixXd grad_prev; // grad f(x^k)
  bool started = false;
};

ExtraState extra_initial_state(const ExtraConfig& cfg, const Eigen::MatrixXd& x0);

/// First step x^1 = W x^0 - alpha grad f(x^0); thereafter
/// x^{k+2} = (I+W) x^{k+1} - W_tilde x^k - alpha (grad f(x^{k+1}) - grad f(x^k)).
/// Counters: grad_evals += n, comm_rounds += 1.
void extra_step(ExtraState& st, const ExtraConfig& cfg, const ObjectiveSet& obj);

struct MmConfig {
  double beta = 1.0;
  double inner_tol = 1e-10;  // gradient-norm tolerance of the inner argmin
  long inner_max = 200000;
};

struct MmStepReport {
  long inner_iters = 0;
  double inner_grad_norm = 0.0;
  bool hit_cap = false;
};

/// Method of multipliers: x <- argmin_x L_a(x, lambda) by gradient descent to
/// inner_tol, then lambda <- lambda + beta A x. Counters: grad_evals +=
/// inner_iters * n, comm_rounds += 1.
MmStepReport mm_step(AlgorithmState& s, const Network& net, const ObjectiveSet& obj,
                     const MmConfig& cfg);

}  // namespace flexpd
