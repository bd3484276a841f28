#include "flexpd/stepsize.hpp"

#include "flexpd/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace flexpd {

namespace {

struct ProblemConsts {
  double m = 0, L = 0;
  double rho_A = 0;   // rho(A'A) = rho(AA')
  double s = 0;       // s(AA')
  double rho_B = 0;
  double lam_B_min = 0;
};

ProblemConsts consts_of(const Network& net, const ObjectiveSet& obj) {
  if (obj.n() != net.graph.n)
    throw std::invalid_argument("certify: objective and network disagree on n");
  ProblemConsts c;
  std::tie(c.m, c.L) = obj.constants();
  c.rho_A = net.rho_AtA;
  c.s = net.s_AAt;
  c.rho_B = net.rho_B;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(net.B);
  c.lam_B_min = es.eigenvalues().minCoeff();
  return c;
}

// Largest root of k2 d^2 - (k2 + k1k3 + k1k4) d + k1k4 = 0: the crossing of
// b1(d) = k1/d (decreasing) and b2(d) = k2/(d/(d-1) k3 + k4) (increasing),
// which maximizes min(b1, b2) over d > 1.
double crossing_d(double k1, double k2, double k3, double k4) {
  const double b = k2 + k1 * k3 + k1 * k4;
  const double disc = b * b - 4.0 * k2 * k1 * k4;
  double d = (b + std::sqrt(std::max(disc, 0.0))) / (2.0 * k2);
  return std::max(d, 1.0 + 1e-9);
}

struct DeltaResult {
  double delta = 0;
  double d = 0, c = 0;  // maximizing free parameters
};

// Proof-of-thm:delta-F upper bounds, maximized over d > 1.
DeltaResult delta_f_at(double alpha, double beta, double eta1, const ProblemConsts& pc,
                       double rho_delta) {
  const double k1 =
      beta * (1.0 - alpha * pc.rho_B - alpha * pc.L * pc.L / eta1) * pc.s /
      ((1.0 + alpha * pc.L) * (1.0 + alpha * pc.L));
  const double k2 = beta * (2.0 * alpha * pc.m - alpha * eta1 - alpha * beta * pc.rho_A);
  const double k3 = alpha * alpha * (rho_delta + pc.L) * (rho_delta + pc.L) / pc.s;
  const double k4 = beta * (1.0 - alpha * pc.rho_B);
  DeltaResult r;
  if (k1 <= 0.0 || k2 <= 0.0 || k4 <= 0.0) return r;
  r.d = crossing_d(k1, k2, k3, k4);
  const double b1 = k1 / r.d;
  const double b2 = k2 / (r.d / (r.d - 1.0) * k3 + k4);
  r.delta = std::min(b1, b2);
  return r;
}

// Proof-of-thm:linconv-C upper bounds, maximized over d > 1.
DeltaResult delta_c_at(double alpha, double beta, double eta4, int T, const ProblemConsts& pc,
                       double rho_delta) {
  double denom = 0.0, rp = 1.0;
  const double rr = 1.0 - alpha * pc.rho_B;
  for (int t = 0; t < T; ++t) {
    denom += rp;
    rp *= rr;
  }
  const double m_low = rp / denom;
  const double inner = 1.0 / T + alpha * pc.L;
  const double k1 = alpha * beta * (m_low - alpha * pc.L * pc.L / eta4) * pc.s / (inner * inner);
  const double k2 = beta * (2.0 * alpha * pc.m - alpha * eta4 - alpha * beta * pc.rho_A);
  const double k3 = alpha * (rho_delta + pc.L) * (rho_delta + pc.L) / pc.s;
  const double k4 = beta / T;
  DeltaResult r;
  if (k1 <= 0.0 || k2 <= 0.0) return r;
  r.d = crossing_d(k1, k2, k3, k4);
  const double b1 = k1 / r.d;
  const double b2 = k2 / (r.d / (r.d - 1.0) * k3 + k4);
  r.delta = std::min(b1, b2);
  return r;
}

// Proof-of-thm:delta-G upper bounds, maximized over dbar, cbar > 1.
DeltaResult delta_g_at(double alpha, double beta, double eta2, double eta3,
                       const ProblemConsts& pc) {
  const double a1 = alpha * beta * pc.s * (1.0 - alpha * pc.L * pc.L / eta2) /
                    ((1.0 + alpha * pc.L) * (1.0 + alpha * pc.L));
  const double a2 = beta * pc.s * (1.0 - pc.rho_B / eta3) / pc.rho_B;
  const double kk =
      beta * (2.0 * pc.m - (eta2 + eta3) - beta * pc.rho_A - pc.rho_B);
  const double ee = (beta * pc.rho_A + pc.L) * (beta * pc.rho_A + pc.L) / pc.s;
  const double ff = beta / alpha * (1.0 + alpha * pc.rho_B);
  DeltaResult r;
  if (a1 <= 0.0 || a2 <= 0.0 || kk <= 0.0) return r;

  // Inner optimum over cbar for fixed u = dbar: crossing of a1/(u v) and
  // kk/(u e v/(v-1) + ff), the larger root of ku v^2 - (ku + a1 u e + a1 f) v
  // + a1 f = 0.
  auto inner = [&](double u, double* v_out) {
    const double qa = kk * u;
    const double qb = kk * u + a1 * u * ee + a1 * ff;
    const double qc = a1 * ff;
    const double disc = qb * qb - 4.0 * qa * qc;
    double v = (qb + std::sqrt(std::max(disc, 0.0))) / (2.0 * qa);
    v = std::max(v, 1.0 + 1e-9);
    if (v_out) *v_out = v;
    const double b1 = a1 / (u * v);
    const double b3 = kk / (u * ee * v / (v - 1.0) + ff);
    return std::min(b1, b3);
  };
  auto b2_of = [&](double u) { return a2 * (u - 1.0) / u; };

  // Outer: crossing of b2 (increasing in u) and inner (decreasing in u).
  double lo = 1e-12, hi = 1e12;  // u - 1 bracket
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    const double u = 1.0 + mid;
    if (inner(u, nullptr) > b2_of(u))
      lo = mid;
    else
      hi = mid;
  }
  r.d = 1.0 + std::sqrt(lo * hi);
  const double h = inner(r.d, &r.c);
  r.delta = std::min(h, b2_of(r.d));
  return r;
}

struct GammaResult {
  double gamma = 1.0;
  double p = 0.0, q = 0.0;
};

// Gamma_F minimized over p > 1: crossing of 1 + p a/(p-1) and p b, the
// larger root of b p^2 - (a+b+1) p + 1 = 0.
GammaResult gamma_f_at(double alpha, double beta, const ProblemConsts& pc) {
  const double a = alpha * beta * pc.rho_A;
  const double rho_U = 1.0 - alpha * pc.lam_B_min;
  const double rho_Uinv = 1.0 / (1.0 - alpha * pc.rho_B);
  const double sb = std::sqrt(rho_U) + alpha * pc.L * std::sqrt(rho_Uinv);
  const double b = sb * sb;
  const double qb = a + b + 1.0;
  double p = (qb + std::sqrt(std::max(qb * qb - 4.0 * b, 0.0))) / (2.0 * b);
  p = std::max(p, 1.0 + 1e-12);
  GammaResult g;
  g.p = p;
  g.gamma = std::max(1.0 + p * a / (p - 1.0), p * b);
  return g;
}

// Gamma_G minimized over pbar, qbar > 1. The inner crossing of terms 2 and 3
// is qbar = 1 + rho(B)/(beta rho(AA')); the outer crossing solves
// w p^2 - (w + 1 + c) p + 1 = 0 with w = (1+alpha L)^2, c = alpha (beta
// rho(AA') + rho(B)).
GammaResult gamma_g_at(double alpha, double beta, const ProblemConsts& pc) {
  const double w = (1.0 + alpha * pc.L) * (1.0 + alpha * pc.L);
  const double q = 1.0 + pc.rho_B / (beta * pc.rho_A);
  const double c = alpha * (beta * pc.rho_A + pc.rho_B);
  const double qb = w + 1.0 + c;
  double p = (qb + std::sqrt(std::max(qb * qb - 4.0 * w, 0.0))) / (2.0 * w);
  p = std::max(p, 1.0 + 1e-12);
  GammaResult g;
  g.p = p;
  g.q = q;
  const double t1 = p * w;
  const double t2 = 1.0 + p * q * alpha * beta * pc.rho_A / (p - 1.0);
  const double t3 = 1.0 + p * q * alpha * pc.rho_B / ((p - 1.0) * (q - 1.0));
  g.gamma = std::max({t1, t2, t3});
  return g;
}

double rho_gram_minus(const Network& net, double beta, const Eigen::MatrixXd& X) {
  // Largest absolute eigenvalue of beta A'A - X (symmetric).
  Eigen::MatrixXd D = beta * (net.A.transpose() * net.A) - X;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (D + D.transpose()));
  return std::max(std::abs(es.eigenvalues().minCoeff()), std::abs(es.eigenvalues().maxCoeff()));
}

double pick_beta(double bound, const CertifyOptions& opts, const char* who) {
  if (opts.fixed_beta) {
    if (!(*opts.fixed_beta > 0.0) || !(*opts.fixed_beta < bound))
      throw CertificateError(std::string(who) + ": fixed beta " +
                             std::to_string(*opts.fixed_beta) +
                             " violates the bound " + std::to_string(bound));
    return *opts.fixed_beta;
  }
  if (!(bound > 0.0)) throw CertificateError(std::string(who) + ": empty beta range");
  return opts.beta_frac * bound;
}

void check_fracs(const CertifyOptions& opts, const char* who) {
  auto in01 = [](double v) { return v > 0.0 && v < 1.0; };
  if (!in01(opts.beta_frac) || !in01(opts.alpha_frac) || !in01(opts.delta_frac))
    throw CertificateError(std::string(who) + ": frac parameters must lie in (0, 1)");
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::F: return "F";
    case Variant::G: return "G";
    case Variant::C: return "C";
  }
  return "?";
}

std::string StepsizeCertificate::text() const {
  std::ostringstream os;
  os.precision(17);
  os << "variant=" << to_string(variant) << "\nalpha=" << alpha << "\nbeta=" << beta
     << "\nT=" << T;
  if (variant == Variant::F) os << "\neta1=" << eta1;
  if (variant == Variant::G) os << "\neta2=" << eta2 << "\neta3=" << eta3;
  if (variant == Variant::C) os << "\neta4=" << eta4;
  os << "\ndelta=" << delta << "\ndelta_tilde=" << delta_tilde << "\ngamma=" << gamma;
  if (gamma_p > 0.0) os << "\ngamma_p=" << gamma_p;
  if (gamma_q > 0.0) os << "\ngamma_q=" << gamma_q;
  os << "\nrate=" << rate;
  for (const auto& [k, v] : bounds_used) os << "\n" << k << "=" << v;
  return os.str();
}

double alpha_bound_c(double L, double eta4, double rho_B, int T) {
  if (!(L > 0.0 && eta4 > 0.0 && rho_B > 0.0 && T >= 1))
    throw std::invalid_argument("alpha_bound_c: positive L, eta4, rho_B and T >= 1 required");
  const double q = L * L / (L * L + eta4 * rho_B);
  return (1.0 - std::pow(q, 1.0 / T)) / rho_B;
}

StepsizeCertificate certify_f(const Network& net, const ObjectiveSet& obj, int T,
                              const CertifyOptions& opts) {
  check_fracs(opts, "certify_f");
  if (T < 1) throw CertificateError("certify_f: T >= 1 required");
  const ProblemConsts pc = consts_of(net, obj);
  const double eta1 = opts.eta1.value_or(pc.m);
  if (!(eta1 > 0.0 && eta1 < 2.0 * pc.m))
    throw CertificateError("certify_f: eta1 must lie in (0, 2m)");

  const double beta_bound = (2.0 * pc.m - eta1) / pc.rho_A;
  const double beta = pick_beta(beta_bound, opts, "certify_f");
  const double rho_delta = rho_gram_minus(net, beta, net.B);
  const double a1 = 1.0 / (pc.L * pc.L / eta1 + pc.rho_B);

  StepsizeCertificate cert;
  cert.variant = Variant::F;
  cert.T = T;
  cert.eta1 = eta1;
  cert.beta = beta;
  cert.bounds_used["beta_bound"] = beta_bound;
  cert.bounds_used["alpha_bound_1"] = a1;
  cert.bounds_used["rho_delta"] = rho_delta;

  double alpha = opts.alpha_frac * a1;
  DeltaResult dr;
  if (T == 1) {
    dr = delta_f_at(alpha, beta, eta1, pc, rho_delta);
    if (!(dr.delta > 0.0)) throw CertificateError("certify_f: empty delta range");
    cert.alpha = alpha;
    cert.delta = dr.delta;
    cert.delta_tilde = dr.delta;
    GammaResult g = gamma_f_at(alpha, beta, pc);
    cert.gamma = g.gamma;
    cert.gamma_p = g.p;
    cert.rate = 1.0 / (1.0 + dr.delta);
    cert.bounds_used["delta_d"] = dr.d;
    return cert;
  }

  // T > 1: alpha bounds 2-3 depend on delta_tilde which depends on alpha;
  // iterate (alpha only decreases) and re-verify at the fixed point.
  double delta_tilde = 0.0, a2 = 0.0, a3 = 0.0;
  for (int it = 0; it < 300; ++it) {
    dr = delta_f_at(alpha, beta, eta1, pc, rho_delta);
    if (!(dr.delta > 0.0)) throw CertificateError("certify_f: empty delta range");
    delta_tilde = opts.delta_frac * dr.delta;
    const double r2 = std::pow(1.0 + delta_tilde, 1.0 / (2.0 * (T - 1))) - 1.0;
    const double r3 = std::pow(1.0 + delta_tilde, 1.0 / (T - 1)) - 1.0;
    a2 = r2 / (pc.L + pc.rho_B * r2);
    a3 = r3 / (beta * pc.rho_A);
    const double next = std::min(alpha, opts.alpha_frac * std::min({a1, a2, a3}));
    if (next <= 0.0 || !std::isfinite(next) || next < 1e-280 * a1)
      throw CertificateError(
          "certify_f: the delta-tilde alpha bounds admit no positive fixed point at T=" +
          std::to_string(T) + " (the bounds shrink faster than alpha); no certificate");
    if (std::abs(next - alpha) <= 1e-15 * alpha) {
      alpha = next;
      break;
    }
    alpha = next;
  }
  dr = delta_f_at(alpha, beta, eta1, pc, rho_delta);
  delta_tilde = opts.delta_frac * dr.delta;
  GammaResult g = gamma_f_at(alpha, beta, pc);

  cert.alpha = alpha;
  cert.delta = dr.delta;
  cert.delta_tilde = delta_tilde;
  cert.gamma = g.gamma;
  cert.gamma_p = g.p;
  cert.rate = std::pow(g.gamma, T - 1) / (1.0 + delta_tilde);
  cert.bounds_used["alpha_bound_2"] = a2;
  cert.bounds_used["alpha_bound_3"] = a3;
  cert.bounds_used["delta_d"] = dr.d;
  if (!(cert.rate < 1.0))
    throw CertificateError(
        "certify_f: Gamma_F^{T-1}/(1+delta_tilde) >= 1; no admissible alpha found for T=" +
        std::to_string(T) + " (rate " + std::to_string(cert.rate) + ")");
  verify_certificate(cert, net, obj);
  return cert;
}

StepsizeCertificate certify_g(const Network& net, const ObjectiveSet& obj, int T,
                              const CertifyOptions& opts) {
  check_fracs(opts, "certify_g");
  if (T < 1) throw CertificateError("certify_g: T >= 1 required");
  const ProblemConsts pc = consts_of(net, obj);
  if (!(pc.rho_B < pc.m))
    throw CertificateError(
        "certify_g: rho(B) >= m; scale B by a positive factor below m/rho(B)");
  const double eta3 = opts.eta3.value_or(pc.m);  // midpoint of (rho(B), 2m - rho(B))
  const double eta2 = opts.eta2.value_or(0.5 * (2.0 * pc.m - pc.rho_B - eta3));
  if (!(eta2 > 0.0) || !(eta3 > pc.rho_B) || !(eta2 + eta3 < 2.0 * pc.m - pc.rho_B))
    throw CertificateError("certify_g: eta2/eta3 outside the admissible set");

  const double beta_bound = (2.0 * pc.m - (eta2 + eta3) - pc.rho_B) / pc.rho_A;
  const double beta = pick_beta(beta_bound, opts, "certify_g");
  const double a1 = eta2 / (pc.L * pc.L);

  StepsizeCertificate cert;
  cert.variant = Variant::G;
  cert.T = T;
  cert.eta2 = eta2;
  cert.eta3 = eta3;
  cert.beta = beta;
  cert.bounds_used["beta_bound"] = beta_bound;
  cert.bounds_used["alpha_bound_1"] = a1;

  double alpha = opts.alpha_frac * a1;
  DeltaResult dr;
  if (T == 1) {
    dr = delta_g_at(alpha, beta, eta2, eta3, pc);
    if (!(dr.delta > 0.0)) throw CertificateError("certify_g: empty delta range");
    cert.alpha = alpha;
    cert.delta = dr.delta;
    cert.delta_tilde = dr.delta;
    GammaResult g = gamma_g_at(alpha, beta, pc);
    cert.gamma = g.gamma;
    cert.gamma_p = g.p;
    cert.gamma_q = g.q;
    cert.rate = 1.0 / (1.0 + dr.delta);
    cert.bounds_used["delta_dbar"] = dr.d;
    cert.bounds_used["delta_cbar"] = dr.c;
    return cert;
  }

  double delta_tilde = 0.0, a2 = 0.0, a3 = 0.0, a4 = 0.0;
  for (int it = 0; it < 300; ++it) {
    dr = delta_g_at(alpha, beta, eta2, eta3, pc);
    if (!(dr.delta > 0.0)) throw CertificateError("certify_g: empty delta range");
    delta_tilde = opts.delta_frac * dr.delta;
    const double r2 = std::pow(1.0 + delta_tilde, 1.0 / (2.0 * (T - 1))) - 1.0;
    const double r3 = std::pow(1.0 + delta_tilde, 1.0 / (T - 1)) - 1.0;
    a2 = r2 / pc.L;
    a3 = r3 / (beta * pc.rho_A);
    a4 = r3 / pc.rho_B;
    const double next = std::min(alpha, opts.alpha_frac * std::min({a1, a2, a3, a4}));
    if (next <= 0.0 || !std::isfinite(next) || next < 1e-280 * a1)
      throw CertificateError(
          "certify_g: the delta-tilde alpha bounds admit no positive fixed point at T=" +
          std::to_string(T) + " (the bounds shrink faster than alpha); no certificate");
    if (std::abs(next - alpha) <= 1e-15 * alpha) {
      alpha = next;
      break;
    }
    alpha = next;
  }
  dr = delta_g_at(alpha, beta, eta2, eta3, pc);
  delta_tilde = opts.delta_frac * dr.delta;
  GammaResult g = gamma_g_at(alpha, beta, pc);

  cert.alpha = alpha;
  cert.delta = dr.delta;
  cert.delta_tilde = delta_tilde;
  cert.gamma = g.gamma;
  cert.gamma_p = g.p;
  cert.gamma_q = g.q;
  cert.rate = std::pow(g.gamma, T - 1) / (1.0 + delta_tilde);
  cert.bounds_used["alpha_bound_2"] = a2;
  cert.bounds_used["alpha_bound_3"] = a3;
  cert.bounds_used["alpha_bound_4"] = a4;
  cert.bounds_used["delta_dbar"] = dr.d;
  cert.bounds_used["delta_cbar"] = dr.c;
  if (!(cert.rate < 1.0))
    throw CertificateError(
        "certify_g: Gamma_G^{T-1}/(1+delta_tilde) >= 1; no admissible alpha found for T=" +
        std::to_string(T) + " (rate " + std::to_string(cert.rate) + ")");
  verify_certificate(cert, net, obj);
  return cert;
}

StepsizeCertificate certify_c(const Network& net, const ObjectiveSet& obj, int T,
                              const CertifyOptions& opts) {
  check_fracs(opts, "certify_c");
  if (T < 1) throw CertificateError("certify_c: T >= 1 required");
  const ProblemConsts pc = consts_of(net, obj);
  const double eta4 = opts.eta4.value_or(pc.m);
  if (!(eta4 > 0.0 && eta4 < 2.0 * pc.m))
    throw CertificateError("certify_c: eta4 must lie in (0, 2m)");

  const double beta_bound = (2.0 * pc.m - eta4) / pc.rho_A;
  const double beta = pick_beta(beta_bound, opts, "certify_c");
  const double a_bound = alpha_bound_c(pc.L, eta4, pc.rho_B, T);
  const double alpha = opts.alpha_frac * a_bound;

  const DerivedMatrices dm = derived_matrices(net, alpha, T);
  const double rho_delta = rho_gram_minus(net, beta, dm.N);
  const DeltaResult dr = delta_c_at(alpha, beta, eta4, T, pc, rho_delta);
  if (!(dr.delta > 0.0)) throw CertificateError("certify_c: empty delta range");

  StepsizeCertificate cert;
  cert.variant = Variant::C;
  cert.T = T;
  cert.eta4 = eta4;
  cert.alpha = alpha;
  cert.beta = beta;
  cert.delta = dr.delta;
  cert.delta_tilde = dr.delta;
  cert.gamma = 1.0;
  cert.rate = 1.0 / (1.0 + dr.delta);
  cert.bounds_used["beta_bound"] = beta_bound;
  cert.bounds_used["alpha_bound"] = a_bound;
  cert.bounds_used["rho_delta"] = rho_delta;
  cert.bounds_used["delta_d"] = dr.d;
  return cert;
}

StepsizeCertificate certify(Variant v, const Network& net, const ObjectiveSet& obj, int T,
                            const CertifyOptions& opts) {
  switch (v) {
    case Variant::F: return certify_f(net, obj, T, opts);
    case Variant::G: return certify_g(net, obj, T, opts);
    case Variant::C: return certify_c(net, obj, T, opts);
  }
  throw std::invalid_argument("certify: unknown variant");
}

std::pair<StepsizeCertificate, Network> certify_coupled(Variant v, const Graph& g,
                                                        const ObjectiveSet& obj, int T,
                                                        const CertifyOptions& opts) {
  check_fracs(opts, "certify_coupled");
  const auto [m, L] = obj.constants();
  const Eigen::MatrixXd A = incidence_matrix(g);
  const double rho_A = spectral_constants(A.transpose() * A).rho;

  double beta = 0.0;
  if (opts.fixed_beta) {
    beta = *opts.fixed_beta;
  } else {
    switch (v) {
      case Variant::F: {
        const double eta1 = opts.eta1.value_or(m);
        beta = opts.beta_frac * (2.0 * m - eta1) / rho_A;
        break;
      }
      case Variant::G: {
        // beta = frac * (2m - (eta2+eta3) - beta rho_A)/rho_A solved for beta.
        if (opts.eta2 && opts.eta3) {
          beta = opts.beta_frac * (2.0 * m - *opts.eta2 - *opts.eta3) /
                 (rho_A * (1.0 + opts.beta_frac));
        } else if (!opts.eta2 && !opts.eta3) {
          // Defaults eta3 = m, eta2 = (m - rho(B))/2 give
          // beta = frac * m / ((2 + frac) rho_A).
          beta = opts.beta_frac * m / ((2.0 + opts.beta_frac) * rho_A);
        } else {
          throw CertificateError(
              "certify_coupled: give both eta2 and eta3 or neither for variant G");
        }
        break;
      }
      case Variant::C: {
        const double eta4 = opts.eta4.value_or(m);
        beta = opts.beta_frac * (2.0 * m - eta4) / rho_A;
        break;
      }
    }
  }
  if (!(beta > 0.0)) throw CertificateError("certify_coupled: empty beta range");

  Network net = make_network(g, beta, PenaltyVariant::scaled_gram);
  CertifyOptions inner = opts;
  inner.fixed_beta = beta;
  StepsizeCertificate cert = certify(v, net, obj, T, inner);
  return {std::move(cert), std::move(net)};
}

void verify_certificate(const StepsizeCertificate& cert, const Network& net,
                        const ObjectiveSet& obj) {
  const ProblemConsts pc = consts_of(net, obj);
  auto fail = [&](const std::string& what) {
    throw CertificateError("verify_certificate(" + to_string(cert.variant) + "): " + what);
  };
  if (!(cert.alpha > 0.0 && cert.beta > 0.0 && cert.T >= 1)) fail("non-positive parameters");

  switch (cert.variant) {
    case Variant::F: {
      if (!(cert.eta1 > 0.0 && cert.eta1 < 2.0 * pc.m)) fail("eta1 outside (0, 2m)");
      if (!(cert.beta < (2.0 * pc.m - cert.eta1) / pc.rho_A)) fail("beta bound violated");
      if (!(cert.alpha < 1.0 / (pc.L * pc.L / cert.eta1 + pc.rho_B)))
        fail("alpha bound 1 violated");
      const double rho_delta = rho_gram_minus(net, cert.beta, net.B);
      const DeltaResult dr = delta_f_at(cert.alpha, cert.beta, cert.eta1, pc, rho_delta);
      if (!(dr.delta > 0.0)) fail("delta not positive");
      if (cert.delta > dr.delta * (1.0 + 1e-9)) fail("recorded delta too large");
      if (cert.T > 1) {
        if (!(cert.delta_tilde < dr.delta)) fail("delta_tilde not below delta");
        const double r2 = std::pow(1.0 + cert.delta_tilde, 1.0 / (2.0 * (cert.T - 1))) - 1.0;
        const double r3 = std::pow(1.0 + cert.delta_tilde, 1.0 / (cert.T - 1)) - 1.0;
        if (!(cert.alpha < r2 / (pc.L + pc.rho_B * r2))) fail("alpha bound 2 violated");
        if (!(cert.alpha < r3 / (cert.beta * pc.rho_A))) fail("alpha bound 3 violated");
        const GammaResult g = gamma_f_at(cert.alpha, cert.beta, pc);
        if (!(std::pow(g.gamma, cert.T - 1) / (1.0 + cert.delta_tilde) < 1.0))
          fail("Gamma_F^{T-1}/(1+delta_tilde) >= 1");
      }
      break;
    }
    case Variant::G: {
      if (!(pc.rho_B < pc.m)) fail("rho(B) >= m");
      if (!(cert.eta2 > 0.0 && cert.eta3 > pc.rho_B &&
            cert.eta2 + cert.eta3 < 2.0 * pc.m - pc.rho_B))
        fail("eta2/eta3 outside the admissible set");
      if (!(cert.beta < (2.0 * pc.m - (cert.eta2 + cert.eta3) - pc.rho_B) / pc.rho_A))
        fail("beta bound violated");
      if (!(cert.alpha < cert.eta2 / (pc.L * pc.L))) fail("alpha bound 1 violated");
      const DeltaResult dr = delta_g_at(cert.alpha, cert.beta, cert.eta2, cert.eta3, pc);
      if (!(dr.delta > 0.0)) fail("delta not positive");
      if (cert.delta > dr.delta * (1.0 + 1e-9)) fail("recorded delta too large");
      if (cert.T > 1) {
        if (!(cert.delta_tilde < dr.delta)) fail("delta_tilde not below delta");
        const double r2 = std::pow(1.0 + cert.delta_tilde, 1.0 / (2.0 * (cert.T - 1))) - 1.0;
        const double r3 = std::pow(1.0 + cert.delta_tilde, 1.0 / (cert.T - 1)) - 1.0;
        if (!(cert.alpha < r2 / pc.L)) fail("alpha bound 2 violated");
        if (!(cert.alpha < r3 / (cert.beta * pc.rho_A))) fail("alpha bound 3 violated");
        if (!(cert.alpha < r3 / pc.rho_B)) fail("alpha bound 4 violated");
        const GammaResult g = gamma_g_at(cert.alpha, cert.beta, pc);
        if (!(std::pow(g.gamma, cert.T - 1) / (1.0 + cert.delta_tilde) < 1.0))
          fail("Gamma_G^{T-1}/(1+delta_tilde) >= 1");
      }
      break;
    }
    case Variant::C: {
      if (!(cert.eta4 > 0.0 && cert.eta4 < 2.0 * pc.m)) fail("eta4 outside (0, 2m)");
      if (!(cert.beta < (2.0 * pc.m - cert.eta4) / pc.rho_A)) fail("beta bound violated");
      if (!(cert.alpha < alpha_bound_c(pc.L, cert.eta4, pc.rho_B, cert.T)))
        fail("alpha bound violated");
      const DerivedMatrices dm = derived_matrices(net, cert.alpha, cert.T);
      const double rho_delta = rho_gram_minus(net, cert.beta, dm.N);
      const DeltaResult dr = delta_c_at(cert.alpha, cert.beta, cert.eta4, cert.T, pc, rho_delta);
      if (!(dr.delta > 0.0)) fail("delta not positive");
      if (cert.delta > dr.delta * (1.0 + 1e-9)) fail("recorded delta too large");
      break;
    }
  }
}

TunedResult tuned_stepsize(Variant v, const Network& net, const ObjectiveSet& obj, int T,
                           const TunedSearch& cfg) {
  if (cfg.budget < 1) throw std::invalid_argument("tuned_stepsize: budget >= 1 required");
  const ReferenceSolution ref = reference_solution(net, obj);
  const Eigen::MatrixXd x0 = Eigen::MatrixXd::Zero(obj.n(), obj.p());
  StopRule stop;
  stop.epsilon = cfg.target_rel;
  stop.max_iters = cfg.max_iters;
  TraceOptions topt;
  topt.record_every = 0;
  topt.record_lyapunov = false;
  topt.record_kkt = false;

  struct Candidate {
    double alpha, beta;
    bool is_cert;
  };
  std::vector<Candidate> cands;
  bool have_cert = false;
  double cert_alpha = 0.0, cert_beta = 0.0;
  try {
    if (cfg.couple_gram) {
      auto [cert, cnet] = certify_coupled(v, net.graph, obj, T);
      cert_alpha = cert.alpha;
      cert_beta = cert.beta;
    } else {
      StepsizeCertificate cert = certify(v, net, obj, T);
      cert_alpha = cert.alpha;
      cert_beta = cert.beta;
    }
    have_cert = true;
    cands.push_back({cert_alpha, cert_beta, true});
  } catch (const CertificateError&) {
    // No certificate for this configuration; random candidates only.
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double la = std::log(cfg.alpha_lo), ha = std::log(cfg.alpha_hi);
  double beta_lo = cfg.beta_lo, beta_hi = cfg.beta_hi;
  if (v == Variant::G && cfg.couple_gram) {
    // With B = beta A'A the G iteration requires rho(B) < m, i.e. beta below
    // m/rho(A'A); restrict the box there or the budget lands on dead draws.
    const double cap = 0.999 * obj.m() / net.rho_AtA;
    beta_hi = std::min(beta_hi, cap);
    beta_lo = std::min(beta_lo, beta_hi / 1e3);
  }
  const double lb = std::log(beta_lo), hb = std::log(beta_hi);

  const double L = obj.constants().second;
  // Cheap stability screen so budget is spent on live candidates: the inner
  // gradient map needs alpha within 2/(L + rho(B)) for F and G, the frozen
  // penalty map needs alpha*rho(B) < 1 for C, and G needs rho(B) < m.
  auto feasible = [&](double alpha, double beta) {
    const double rho_B = cfg.couple_gram ? beta * net.rho_AtA : net.rho_B;
    if (v == Variant::G && !(rho_B < obj.m())) return false;
    if (v == Variant::C) return alpha * rho_B < 1.0;
    return alpha * (L + rho_B) < 2.0;
  };

  TunedResult best;
  long best_iters = std::numeric_limits<long>::max();
  double best_final = std::numeric_limits<double>::infinity();
  bool any_finished = false;
  bool have_best = false;
  auto evaluate = [&](const Candidate& cand) {
    const Network* run_net = &net;
    Network rebuilt;
    if (cfg.couple_gram) {
      rebuilt = with_gram_penalty(net, cand.beta);
      run_net = &rebuilt;
    }
    if (v == Variant::G && !(run_net->rho_B < obj.m())) return;  // Assumption 3
    if (v == Variant::C && !(cand.alpha * run_net->rho_B < 1.0)) return;
    // A candidate only wins by reaching the target no later than the
    // incumbent, so cap its run there once an incumbent exists.
    StopRule capped = stop;
    if (best_iters < capped.max_iters) capped.max_iters = best_iters;
    RunTrace tr = solve_raw(v, *run_net, obj, cand.alpha, cand.beta, T, x0, capped, &ref, topt);
    if (tr.diverged) return;
    any_finished = true;
    const long iters = tr.iters_to_eps >= 0 ? tr.iters_to_eps : std::numeric_limits<long>::max();
    const bool better = iters < best_iters ||
                        (iters == best_iters && tr.final_rel_error < best_final);
    if (better) {
      best_iters = iters;
      best_final = tr.final_rel_error;
      best.alpha = cand.alpha;
      best.beta = cand.beta;
      best.from_certificate = cand.is_cert;
      best.iters_to_target = tr.iters_to_eps;
      have_best = true;
    }
  };

  for (const Candidate& cand : cands) evaluate(cand);  // certificate point, if any
  long draws_left = 200L * cfg.budget;
  auto draw_box = [&]() -> Candidate {
    return {std::exp(la + (ha - la) * unit(rng)), std::exp(lb + (hb - lb) * unit(rng)), false};
  };

  // Exploration: log-uniform draws over the box, screened for stability.
  const int n_explore = std::max(1, cfg.budget / 2);
  for (int done = 0; done < n_explore && draws_left > 0;) {
    --draws_left;
    const Candidate cand = draw_box();
    if (!feasible(cand.alpha, cand.beta)) continue;
    evaluate(cand);
    ++done;
  }

  // Refinement: spend the rest of the budget in rounds of log-space
  // perturbations around the incumbent, halving the radius each round.
  int left = cfg.budget - n_explore;
  constexpr int kRound = 8;
  double ra = (ha - la) / 8.0, rb = (hb - lb) / 8.0;
  while (left > 0 && draws_left > 0) {
    const int batch = std::min(kRound, left);
    for (int done = 0; done < batch && draws_left > 0;) {
      --draws_left;
      Candidate cand;
      if (have_best) {
        cand.alpha = std::clamp(std::exp(std::log(best.alpha) + ra * (2.0 * unit(rng) - 1.0)),
                                cfg.alpha_lo, cfg.alpha_hi);
        cand.beta = std::clamp(std::exp(std::log(best.beta) + rb * (2.0 * unit(rng) - 1.0)),
                               beta_lo, beta_hi);
        cand.is_cert = false;
      } else {
        cand = draw_box();  // nothing usable yet; keep exploring
      }
      if (!feasible(cand.alpha, cand.beta)) continue;
      evaluate(cand);
      ++done;
      --left;
    }
    ra *= 0.5;
    rb *= 0.5;
  }
  if (!any_finished) {
    if (have_cert) {
      best.alpha = cert_alpha;
      best.beta = cert_beta;
      best.from_certificate = true;
      best.iters_to_target = -1;
      return best;
    }
    throw CertificateError("tuned_stepsize: every candidate diverged and no certificate exists");
  }
  return best;
}

}  // namespace flexpd
