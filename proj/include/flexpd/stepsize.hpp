#pragma once

#include "flexpd/graph.hpp"
#include "flexpd/objective.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace flexpd {

enum class Variant { F, G, C };

std::string to_string(Variant v);

struct CertificateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Admissible (alpha, beta, T) with the bounds that produced them and the
/// certified contraction constants.
struct StepsizeCertificate {
  Variant variant = Variant::C;
  double alpha = 0.0;
  double beta = 0.0;
  int T = 1;
  double eta1 = 0.0, eta2 = 0.0, eta3 = 0.0, eta4 = 0.0;  // variant-relevant entries set
  double delta = 0.0;        // contraction constant at (alpha, beta)
  double delta_tilde = 0.0;  // slack behind the T>1 alpha bounds (F, G)
  double gamma = 1.0;        // per-inner-step expansion constant; 1 when T == 1
  double gamma_p = 0.0, gamma_q = 0.0;  // minimizing free parameters of gamma
  double rate = 1.0;                    // certified Lyapunov factor per outer iteration
  std::map<std::string, double> bounds_used;

  /// Human-readable key-value block (embedded in trace metadata).
  std::string text() const;
};

struct CertifyOptions {
  std::optional<double> eta1, eta2, eta3, eta4;
  double beta_frac = 0.9;
  double alpha_frac = 0.9;
  double delta_frac = 0.5;  // delta_tilde = delta_frac * delta
  /// Use this dual stepsize instead of beta_frac * bound; rejected if it
  /// violates the variant's beta bound.
  std::optional<double> fixed_beta;
};

StepsizeCertificate certify_f(const Network& net, const ObjectiveSet& obj, int T,
                              const CertifyOptions& opts = {});
StepsizeCertificate certify_g(const Network& net, const ObjectiveSet& obj, int T,
                              const CertifyOptions& opts = {});
StepsizeCertificate certify_c(const Network& net, const ObjectiveSet& obj, int T,
                              const CertifyOptions& opts = {});
StepsizeCertificate certify(Variant v, const Network& net, const ObjectiveSet& obj, int T,
                            const CertifyOptions& opts = {});

/// Certificate with B coupled to the dual stepsize: beta is computed first,
/// then B = beta * A'A, then alpha. Returns the certificate together with the
/// rebuilt network.
std::pair<StepsizeCertificate, Network> certify_coupled(Variant v, const Graph& g,
                                                        const ObjectiveSet& obj, int T,
                                                        const CertifyOptions& opts = {});

/// Re-evaluates every certificate invariant from scratch; throws
/// CertificateError on any violation.
void verify_certificate(const StepsizeCertificate& cert, const Network& net,
                        const ObjectiveSet& obj);

/// The alpha upper bound of the C-variant theorem, exposed for spot checks
/// and for the beta=T sweep protocol (where beta may sit outside its bound).
double alpha_bound_c(double L, double eta4, double rho_B, int T);

struct TunedSearch {
  int budget = 32;
  std::uint64_t seed = 0;
  double alpha_lo = 1e-4, alpha_hi = 1.0;  // log-uniform
  double beta_lo = 1e-3, beta_hi = 10.0;   // log-uniform
  double target_rel = 1e-4;                // score = iterations to this relative error
  long max_iters = 20000;
  /// Couple B to each sampled beta (B = beta * A'A). When false the
  /// network's B is kept fixed.
  bool couple_gram = true;
};

struct TunedResult {
  double alpha = 0.0, beta = 0.0;
  long iters_to_target = -1;  // -1: target not reached by any candidate
  bool from_certificate = false;
};

/// Random search over (alpha, beta); the certificate pair (when computable)
/// is always in the candidate set. Deterministic per seed.
TunedResult tuned_stepsize(Variant v, const Network& net, const ObjectiveSet& obj, int T,
                           const TunedSearch& cfg);

}  // namespace flexpd
