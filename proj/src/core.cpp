#include "flexpd/core.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <sstream>

namespace flexpd {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

constexpr double kDivergenceNorm = 1e12;

}  // namespace

AlgorithmState initial_state(const Network& net, int p) {
  return initial_state(net, Eigen::MatrixXd::Zero(net.graph.n, p));
}

AlgorithmState initial_state(const Network& net, Eigen::MatrixXd x0) {
  require(x0.rows() == net.graph.n, "initial_state: x0 must have one row per agent");
  AlgorithmState s;
  s.lambda = Eigen::MatrixXd::Zero(net.graph.edge_count(), x0.cols());
  s.x = std::move(x0);
  return s;
}

DerivedMatrices derived_matrices(const Network& net, double alpha, int T) {
  require(T >= 1, "derived_matrices: T >= 1 required");
  require(alpha > 0.0 && alpha * net.rho_B < 1.0, "derived_matrices: alpha < 1/rho(B) required");
  const int n = net.graph.n;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);

  DerivedMatrices dm;
  dm.U = I - alpha * net.B;
  Eigen::MatrixXd Upow = I;  // U^t
  dm.C = Eigen::MatrixXd::Zero(n, n);
  for (int t = 0; t < T; ++t) {
    dm.C += Upow;
    Upow = Upow * dm.U;
  }
  // Upow is now U^T. C is symmetric PD for alpha < 1/rho(B).
  Eigen::LDLT<Eigen::MatrixXd> C_fact(dm.C);
  dm.M = C_fact.solve(Upow);
  dm.M = 0.5 * (dm.M + dm.M.transpose()).eval();
  dm.N = (C_fact.solve(I) - dm.M) / alpha;
  dm.N = 0.5 * (dm.N + dm.N.transpose()).eval();

  // Eigenvalue bounds on M and PSD-ness of N.
  const double r = 1.0 - alpha * net.rho_B;
  double denom = 0.0, rp = 1.0;
  for (int t = 0; t < T; ++t) {
    denom += rp;
    rp *= r;
  }
  const double m_low = rp / denom;  // rp == r^T after the loop
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esM(dm.M);
  require(esM.eigenvalues().minCoeff() >= m_low - 1e-10,
          "derived_matrices: eig(M) below the certified lower bound");
  require(esM.eigenvalues().maxCoeff() <= 1.0 / T + 1e-10,
          "derived_matrices: eig(M) above 1/T");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esN(dm.N);
  // Forming N divides solve round-off by alpha, so the PSD tolerance has to
  // absorb eps*n/alpha worth of noise when alpha is very small.
  const double tol_N =
      std::max(1e-10, 64.0 * std::numeric_limits<double>::epsilon() * n / alpha);
  require(esN.eigenvalues().minCoeff() >= -tol_N, "derived_matrices: N must be PSD");
  return dm;
}

void flexpd_f_step(AlgorithmState& s, const Network& net, const ObjectiveSet& obj, double alpha,
                   double beta, int T) {
  require(T >= 1 && alpha > 0.0 && beta > 0.0, "flexpd_f_step: T >= 1, alpha, beta > 0");
  const Eigen::MatrixXd at_lambda = net.A.transpose() * s.lambda;
  for (int t = 0; t < T; ++t)
    s.x -= alpha * (obj.grad(s.x) + net.B * s.x + at_lambda);
  s.lambda += beta * (net.A * s.x);
  ++s.k;
  s.grad_evals += static_cast<long>(T) * net.graph.n;
  s.comm_rounds += T;
}

void flexpd_g_step(AlgorithmState& s, const Network& net, const ObjectiveSet& obj, double alpha,
                   double beta, int T) {
  require(T >= 1 && alpha > 0.0 && beta > 0.0, "flexpd_g_step: T >= 1, alpha, beta > 0");
  require(net.rho_B < obj.m(),
          "flexpd_g_step: rho(B) < m required; scale B down to satisfy it");
  const Eigen::MatrixXd frozen = alpha * (net.B * s.x + net.A.transpose() * s.lambda);
  for (int t = 0; t < T; ++t) s.x -= alpha * obj.grad(s.x) + frozen;
  s.lambda += beta * (net.A * s.x);
  ++s.k;
  s.grad_evals += static_cast<long>(T) * net.graph.n;
  s.comm_rounds += 1;
}

void flexpd_c_step(AlgorithmState& s, const Network& net, const ObjectiveSet& obj, double alpha,
                   double beta, int T) {
  require(T >= 1 && alpha > 0.0 && beta > 0.0, "flexpd_c_step: T >= 1, alpha, beta > 0");
  require(alpha * net.rho_B < 1.0, "flexpd_c_step: alpha < 1/rho(B) required");
  const Eigen::MatrixXd frozen = alpha * (obj.grad(s.x) + net.A.transpose() * s.lambda);
  for (int t = 0; t < T; ++t) s.x -= alpha * (net.B * s.x) + frozen;
  s.lambda += beta * (net.A * s.x);
  ++s.k;
  s.grad_evals += net.graph.n;
  s.comm_rounds += T;
}

void flexpd_c_step_compact(AlgorithmState& s, const Network& net, const ObjectiveSet& obj,
                           const DerivedMatrices& dm, double alpha, double beta, int T) {
  require(T >= 1 && alpha > 0.0 && beta > 0.0, "flexpd_c_step_compact: bad parameters");
  Eigen::MatrixXd Upow = Eigen::MatrixXd::Identity(net.graph.n, net.graph.n);
  for (int t = 0; t < T; ++t) Upow = Upow * dm.U;
  s.x = Upow * s.x - alpha * (dm.C * (obj.grad(s.x) + net.A.transpose() * s.lambda));
  s.lambda += beta * (net.A * s.x);
  ++s.k;
  s.grad_evals += net.graph.n;
  s.comm_rounds += T;
}

Eigen::MatrixXd dual_step(const Eigen::MatrixXd& lambda, const Eigen::MatrixXd& x_new,
                          const Eigen::MatrixXd& A, double beta) {
  require(A.cols() == x_new.rows() && A.rows() == lambda.rows(), "dual_step: shape mismatch");
  return lambda + beta * (A * x_new);
}

KKTResidual kkt_residual(const AlgorithmState& s, const Network& net, const ObjectiveSet& obj) {
  KKTResidual r;
  r.stationarity = (obj.grad(s.x) + net.A.transpose() * s.lambda).norm();
  r.feasibility = (net.A * s.x).norm();
  r.penalty_null = (net.B * s.x).norm();
  return r;
}

ReferenceSolution reference_solution(const Network& net, const ObjectiveSet& obj) {
  const int n = obj.n(), p = obj.p();
  // Centralized solve over the consensus variable y (1 x p).
  const double m_tot = n * obj.m();
  const double L_tot = n * obj.L();
  const double step = 2.0 / (m_tot + L_tot);
  Eigen::RowVectorXd y = Eigen::RowVectorXd::Zero(p);
  Eigen::RowVectorXd best_y = y;
  double best_norm = std::numeric_limits<double>::infinity();
  long stall = 0;
  constexpr long kMaxIters = 20000000;
  constexpr long kStallLimit = 50;
  for (long it = 0; it < kMaxIters; ++it) {
    Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(p);
    for (int i = 0; i < n; ++i) g += obj.grad_agent(i, y);
    const double gn = g.norm();
    if (gn < best_norm) {
      best_norm = gn;
      best_y = y;
      stall = 0;
    } else if (++stall >= kStallLimit) {
      break;  // at the floating point floor for this problem scale
    }
    if (gn <= 1e-12) break;
    y -= step * g;
  }

  ReferenceSolution ref;
  ref.consensus = best_y;
  ref.grad_norm_achieved = best_norm;
  ref.x_star = best_y.replicate(n, 1);

  // lambda* = -(AA')^+ A grad f(x*), which lies in col(A) by construction.
  const Eigen::MatrixXd G = obj.grad(ref.x_star);
  const Eigen::MatrixXd AAt = net.A * net.A.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(AAt);
  const Eigen::VectorXd evals = es.eigenvalues();
  const double cutoff = 1e-12 * evals.maxCoeff();
  Eigen::MatrixXd proj = es.eigenvectors().transpose() * (net.A * G);
  for (long i = 0; i < evals.size(); ++i)
    proj.row(i) = evals(i) > cutoff ? (proj.row(i) / evals(i)).eval()
                                    : Eigen::RowVectorXd::Zero(p).eval();
  ref.lambda_star = -(es.eigenvectors() * proj);
  return ref;
}

Eigen::MatrixXd lyapunov_weight(Variant v, const Network& net, double alpha, int T) {
  const int n = net.graph.n;
  switch (v) {
    case Variant::F:
      return Eigen::MatrixXd::Identity(n, n) - alpha * net.B;
    case Variant::G:
      return (1.0 + alpha * net.rho_B) * Eigen::MatrixXd::Identity(n, n);
    case Variant::C:
      return derived_matrices(net, alpha, T).M;
  }
  throw std::invalid_argument("lyapunov_weight: unknown variant");
}

double lyapunov(const AlgorithmState& s, const ReferenceSolution& ref, const Eigen::MatrixXd& W,
                double alpha, double beta) {
  const Eigen::MatrixXd dx = s.x - ref.x_star;
  const Eigen::MatrixXd dl = s.lambda - ref.lambda_star;
  return (dx.transpose() * W * dx).trace() + (alpha / beta) * dl.squaredNorm();
}

double lyapunov(const AlgorithmState& s, const ReferenceSolution& ref, Variant v,
                const Network& net, double alpha, double beta, int T) {
  return lyapunov(s, ref, lyapunov_weight(v, net, alpha, T), alpha, beta);
}

namespace {

RunTrace run_loop(Variant variant, const Network& net, const ObjectiveSet& obj, double alpha,
                  double beta, int T, const Eigen::MatrixXd& x0, const StopRule& stop,
                  const ReferenceSolution* ref, const TraceOptions& trace, bool certificate_mode,
                  const std::string& cert_text) {
  require(stop.max_iters >= 0, "solve: max_iters >= 0");
  RunTrace out;
  out.metadata.emplace_back("variant", to_string(variant));
  {
    std::ostringstream meta;
    meta.precision(17);
    meta << alpha;
    out.metadata.emplace_back("alpha", meta.str());
    meta.str("");
    meta << beta;
    out.metadata.emplace_back("beta", meta.str());
  }
  out.metadata.emplace_back("T", std::to_string(T));
  out.metadata.emplace_back("certified", certificate_mode ? "true" : "false");
  if (!cert_text.empty()) out.metadata.emplace_back("certificate", cert_text);
  if (ref) {
    std::ostringstream meta;
    meta.precision(17);
    meta << ref->grad_norm_achieved;
    out.metadata.emplace_back("reference_grad_norm", meta.str());
  }

  AlgorithmState s = initial_state(net, x0);
  DerivedMatrices dm;
  Eigen::MatrixXd Upow;
  if (variant == Variant::C) {
    dm = derived_matrices(net, alpha, T);
    Upow = Eigen::MatrixXd::Identity(net.graph.n, net.graph.n);
    for (int t = 0; t < T; ++t) Upow = Upow * dm.U;
  }

  Eigen::MatrixXd W;
  const bool track_lyap = ref != nullptr && trace.record_lyapunov;
  if (track_lyap)
    W = variant == Variant::C ? dm.M : lyapunov_weight(variant, net, alpha, T);

  const double dist0 = ref ? (x0 - ref->x_star).norm() : 0.0;
  double V0 = 0.0, V_prev = 0.0;
  int increase_streak = 0;

  auto rel_error_of = [&](const AlgorithmState& st) {
    if (!ref) return std::numeric_limits<double>::quiet_NaN();
    return dist0 > 0.0 ? (st.x - ref->x_star).norm() / dist0 : 0.0;
  };

  auto record_row = [&](const AlgorithmState& st, double rel, double V) {
    RunTraceRow row;
    row.k = st.k;
    row.rel_error = rel;
    row.lyapunov = V;
    row.grad_evals = st.grad_evals;
    row.comm_rounds = st.comm_rounds;
    if (trace.record_kkt) {
      KKTResidual r = kkt_residual(st, net, obj);
      row.kkt_stat = r.stationarity;
      row.kkt_feas = r.feasibility;
    } else {
      row.kkt_stat = row.kkt_feas = std::numeric_limits<double>::quiet_NaN();
    }
    out.rows.push_back(row);
  };

  double rel = rel_error_of(s);
  if (track_lyap) {
    V0 = lyapunov(s, *ref, W, alpha, beta);
    V_prev = V0;
  }
  record_row(s, rel, track_lyap ? V0 : std::numeric_limits<double>::quiet_NaN());

  const double stop_rel = stop.rel_tol > 0.0 ? std::min(stop.rel_tol, stop.epsilon) : stop.epsilon;
  bool recorded_last = true;
  double V = V0;

  for (long it = 0; it < stop.max_iters; ++it) {
    switch (variant) {
      case Variant::F: flexpd_f_step(s, net, obj, alpha, beta, T); break;
      case Variant::G: flexpd_g_step(s, net, obj, alpha, beta, T); break;
      case Variant::C: {
        // Cached compact form; equal to the sweep form up to roundoff.
        s.x = Upow * s.x - alpha * (dm.C * (obj.grad(s.x) + net.A.transpose() * s.lambda));
        s.lambda += beta * (net.A * s.x);
        ++s.k;
        s.grad_evals += net.graph.n;
        s.comm_rounds += T;
        break;
      }
    }

    if (!s.x.allFinite() || s.x.norm() > kDivergenceNorm) {
      out.diverged = true;
      out.note = "divergence: iterate non-finite or norm above 1e12 at k=" + std::to_string(s.k);
      rel = std::numeric_limits<double>::quiet_NaN();
      V = std::numeric_limits<double>::quiet_NaN();
      break;
    }

    rel = rel_error_of(s);
    if (track_lyap) {
      V = lyapunov(s, *ref, W, alpha, beta);
      if (certificate_mode && V > V_prev && V_prev > 1e-13 * V0) {
        if (++increase_streak >= 10) {
          out.lyapunov_violation = true;
          out.note = "lyapunov increased for 10 consecutive iterations at k=" +
                     std::to_string(s.k);
        }
      } else {
        increase_streak = 0;
      }
      V_prev = V;
    }

    if (ref && out.iters_to_eps < 0 && rel < stop.epsilon) {
      out.iters_to_eps = s.k;
      out.grad_evals_at_eps = s.grad_evals;
      out.comm_rounds_at_eps = s.comm_rounds;
    }

    recorded_last = trace.record_every > 0 && s.k % trace.record_every == 0;
    if (recorded_last)
      record_row(s, rel, track_lyap ? V : std::numeric_limits<double>::quiet_NaN());

    if (out.lyapunov_violation) break;
    if (ref && rel < stop_rel) break;
    if (stop.kkt_tol > 0.0) {
      KKTResidual r = kkt_residual(s, net, obj);
      if (r.stationarity + r.feasibility <= stop.kkt_tol) break;
    }
  }

  if (!recorded_last && !out.rows.empty() && out.rows.back().k != s.k)
    record_row(s, rel, track_lyap ? V : std::numeric_limits<double>::quiet_NaN());

  out.total_iters = s.k;
  out.final_rel_error = rel;
  out.final_lyapunov = track_lyap ? V : std::numeric_limits<double>::quiet_NaN();
  return out;
}

}  // namespace

RunTrace solve(Variant variant, const Network& net, const ObjectiveSet& obj,
               const StepsizeCertificate& cert, const Eigen::MatrixXd& x0, const StopRule& stop,
               const ReferenceSolution* ref, const TraceOptions& trace) {
  require(cert.variant == variant, "solve: certificate variant mismatch");
  return run_loop(variant, net, obj, cert.alpha, cert.beta, cert.T, x0, stop, ref, trace, true,
                  cert.text());
}

RunTrace solve_raw(Variant variant, const Network& net, const ObjectiveSet& obj, double alpha,
                   double beta, int T, const Eigen::MatrixXd& x0, const StopRule& stop,
                   const ReferenceSolution* ref, const TraceOptions& trace) {
  return run_loop(variant, net, obj, alpha, beta, T, x0, stop, ref, trace, false, "");
}

}  // namespace flexpd
