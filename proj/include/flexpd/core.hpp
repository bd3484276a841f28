#pragma once

#include "flexpd/graph.hpp"
#include "flexpd/objective.hpp"
#include "flexpd/stepsize.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace flexpd {

struct AlgorithmState {
  Eigen::MatrixXd x;       // n x p primal
  Eigen::MatrixXd lambda;  // edge_count x p dual
  long k = 0;
  long grad_evals = 0;
  long comm_rounds = 0;
};

/// x0 = 0, lambda0 = 0 (lambda0 = 0 keeps every iterate in col(A)).
AlgorithmState initial_state(const Network& net, int p);
AlgorithmState initial_state(const Network& net, Eigen::MatrixXd x0);

struct DerivedMatrices {
  Eigen::MatrixXd U;  // I - alpha B
  Eigen::MatrixXd C;  // sum_{t=0}^{T-1} (I - alpha B)^t
  Eigen::MatrixXd M;  // C^{-1} (I - alpha B)^T
  Eigen::MatrixXd N;  // (C^{-1} - M) / alpha
};

/// Requires alpha < 1/rho(B); the eigenvalue bounds on M and PSD-ness of N
/// are asserted after construction.
DerivedMatrices derived_matrices(const Network& net, double alpha, int T);

/// T inner sweeps x <- Ux - alpha grad f(x) - alpha A'lambda (fresh gradients
/// and neighbor values), then lambda <- lambda + beta A x.
/// Counters: grad_evals += T*n, comm_rounds += T.
void flexpd_f_step(AlgorithmState& s, const Network& net, const ObjectiveSet& obj, double alpha,
                   double beta, int T);

/// Inner sweeps freeze the penalty term at the outer iterate:
/// x <- x - alpha grad f(x) - alpha A'lambda - alpha B x^k.
/// Counters: grad_evals += T*n, comm_rounds += 1. Requires rho(B) < m.
void flexpd_g_step(AlgorithmState& s, const Network& net, const ObjectiveSet& obj, double alpha,
                   double beta, int T);

/// Inner sweeps freeze the gradient at the outer iterate:
/// x <- Ux - alpha grad f(x^k) - alpha A'lambda.
/// Counters: grad_evals += n, comm_rounds += T. Requires alpha < 1/rho(B).
void flexpd_c_step(AlgorithmState& s, const Network& net, const ObjectiveSet& obj, double alpha,
                   double beta, int T);

/// Compact closed form of the C update: x <- (I-alpha B)^T x - alpha C grad
/// f(x) - alpha C A'lambda; equal to the sweep form up to roundoff.
void flexpd_c_step_compact(AlgorithmState& s, const Network& net, const ObjectiveSet& obj,
                           const DerivedMatrices& dm, double alpha, double beta, int T);

Eigen::MatrixXd dual_step(const Eigen::MatrixXd& lambda, const Eigen::MatrixXd& x_new,
                          const Eigen::MatrixXd& A, double beta);

struct KKTResidual {
  double stationarity = 0.0;  // ||grad f(x) + A'lambda||
  double feasibility = 0.0;   // ||A x||
  double penalty_null = 0.0;  // ||B x||
};

KKTResidual kkt_residual(const AlgorithmState& s, const Network& net, const ObjectiveSet& obj);

struct ReferenceSolution {
  Eigen::MatrixXd x_star;           // n x p (all rows equal)
  Eigen::MatrixXd lambda_star;      // edge_count x p, in col(A)
  Eigen::RowVectorXd consensus;     // 1 x p centralized minimizer
  double grad_norm_achieved = 0.0;  // centralized solve residual
};

/// Centralized gradient descent on sum_i f_i to ||grad|| <= 1e-12 (with a
/// stall guard near the floating point floor); lambda* = -(AA')^+ A grad f(x*).
ReferenceSolution reference_solution(const Network& net, const ObjectiveSet& obj);

/// Variant-matched weight for the Lyapunov function: U (F), c1*I with
/// c1 = 1 + alpha rho(B) (G), or M (C).
Eigen::MatrixXd lyapunov_weight(Variant v, const Network& net, double alpha, int T);

/// ||x - x*||_W^2 + (alpha/beta) ||lambda - lambda*||^2.
double lyapunov(const AlgorithmState& s, const ReferenceSolution& ref, const Eigen::MatrixXd& W,
                double alpha, double beta);
double lyapunov(const AlgorithmState& s, const ReferenceSolution& ref, Variant v,
                const Network& net, double alpha, double beta, int T);

struct StopRule {
  double epsilon = 0.01;      // relative error threshold (needs a reference)
  double rel_tol = 0.0;       // run past epsilon down to this (0 = stop at epsilon)
  double kkt_tol = 0.0;       // stationarity+feasibility stop (0 = disabled)
  long max_iters = 1000000;
};

struct TraceOptions {
  long record_every = 1;  // 0 = only the initial and final rows
  bool record_lyapunov = true;
  bool record_kkt = true;
};

struct RunTraceRow {
  long k = 0;
  double rel_error = 0.0;
  double lyapunov = 0.0;
  long grad_evals = 0;
  long comm_rounds = 0;
  double kkt_stat = 0.0;
  double kkt_feas = 0.0;
};

struct RunTrace {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<RunTraceRow> rows;
  bool diverged = false;
  bool lyapunov_violation = false;  // 10 consecutive increases under certificate stepsizes
  std::string note;
  long iters_to_eps = -1;
  long grad_evals_at_eps = -1;
  long comm_rounds_at_eps = -1;
  long total_iters = 0;
  double final_rel_error = 0.0;
  double final_lyapunov = 0.0;
};

/// Iterate `variant` under the certificate stepsizes until the stop rule
/// triggers. The trace records relative error against `ref` (rel_error of
/// row 0 is 1), the variant-matched Lyapunov value, and the counters.
RunTrace solve(Variant variant, const Network& net, const ObjectiveSet& obj,
               const StepsizeCertificate& cert, const Eigen::MatrixXd& x0, const StopRule& stop,
               const ReferenceSolution* ref = nullptr, const TraceOptions& trace = {});

/// Same loop with raw stepsizes (tuned/sweep runs without a full certificate).
RunTrace solve_raw(Variant variant, const Network& net, const ObjectiveSet& obj, double alpha,
                   double beta, int T, const Eigen::MatrixXd& x0, const StopRule& stop,
                   const ReferenceSolution* ref = nullptr, const TraceOptions& trace = {});

}  // namespace flexpd
