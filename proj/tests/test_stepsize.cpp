#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "flexpd/core.hpp"
#include "flexpd/stepsize.hpp"

#include <cmath>

using namespace flexpd;

namespace {

ObjectiveSet path3_objective() {
  Eigen::VectorXd c(3);
  c << 1, 2, 3;
  Eigen::MatrixXd b(3, 1);
  b << 1, 2, 4;
  return ObjectiveSet::quadratic(c, b);  // m = 2, L = 6
}

// Runs the variant from a fixed start and checks the certified per-step
// Lyapunov contraction V_{k+1} <= V_k / (1 + delta_tilde) * (1 + slack).
void check_contraction(Variant v, const Network& net, const ObjectiveSet& obj,
                       const StepsizeCertificate& cert, int iters) {
  const ReferenceSolution ref = reference_solution(net, obj);
  AlgorithmState s = initial_state(net, obj.p());
  s.x = Eigen::MatrixXd::Constant(obj.n(), obj.p(), 1.0);
  s.x(0, 0) = -2.0;
  const Eigen::MatrixXd W = lyapunov_weight(v, net, cert.alpha, cert.T);
  double V = lyapunov(s, ref, W, cert.alpha, cert.beta);
  for (int k = 0; k < iters; ++k) {
    switch (v) {
      case Variant::F: flexpd_f_step(s, net, obj, cert.alpha, cert.beta, cert.T); break;
      case Variant::G: flexpd_g_step(s, net, obj, cert.alpha, cert.beta, cert.T); break;
      case Variant::C: flexpd_c_step(s, net, obj, cert.alpha, cert.beta, cert.T); break;
    }
    const double Vn = lyapunov(s, ref, W, cert.alpha, cert.beta);
    if (V > 1e-22) CHECK(Vn <= V / (1.0 + cert.delta_tilde) * (1.0 + 1e-9));
    V = Vn;
  }
}

}  // namespace

TEST_CASE("alpha bound for the C family: exact spot values") {
  // L = 2, eta4 = 2, rho(B) = 3 gives q = 0.4 and bound (1 - 0.4^{1/T})/3
  CHECK(std::abs(alpha_bound_c(2, 2, 3, 1) - 0.2) <= 1e-15);
  CHECK(alpha_bound_c(2, 2, 3, 2) == doctest::Approx(0.12251482265544138).epsilon(1e-14));
  CHECK(alpha_bound_c(2, 2, 3, 3) == doctest::Approx(0.08773123342397422).epsilon(1e-14));
  CHECK(alpha_bound_c(2, 2, 3, 4) == doctest::Approx(0.06824309041098313).epsilon(1e-14));
  CHECK(alpha_bound_c(2, 2, 3, 10) == doctest::Approx(0.029185487814839723).epsilon(1e-14));

  // T * bound is non-decreasing and T * bound * rho(B) approaches -ln(q)
  double prev = 0.0;
  for (int T = 1; T <= 10; ++T) {
    const double scaled = T * alpha_bound_c(2, 2, 3, T);
    CHECK(scaled >= prev - 1e-15);
    prev = scaled;
  }
  const double limit = -std::log(0.4);  // 0.916290731874155
  CHECK(50 * alpha_bound_c(2, 2, 3, 50) * 3.0 ==
        doctest::Approx(limit).epsilon(0.01));  // within 1% at T=50

  CHECK_THROWS_AS(alpha_bound_c(0, 2, 3, 1), std::invalid_argument);
  CHECK_THROWS_AS(alpha_bound_c(2, 2, 3, 0), std::invalid_argument);
}

TEST_CASE("coupled F certificate matches the brute-force frozen values") {
  const ObjectiveSet obj = path3_objective();
  const auto [cert, net] = certify_coupled(Variant::F, build_path(3), obj, 1);
  CHECK(cert.variant == Variant::F);
  CHECK(cert.T == 1);
  CHECK(cert.beta == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(cert.alpha == doctest::Approx(0.045454545454545456).epsilon(1e-14));
  CHECK(cert.eta1 == doctest::Approx(2.0).epsilon(1e-14));
  // delta and gamma were frozen from an independent golden-section search
  CHECK(cert.delta == doctest::Approx(0.008427939587165083).epsilon(1e-9));
  CHECK(cert.gamma == doctest::Approx(1.8305728574641558).epsilon(1e-9));
  CHECK(cert.rate == doctest::Approx(0.991642496943693).epsilon(1e-9));
  CHECK(cert.rate == doctest::Approx(1.0 / (1.0 + cert.delta)).epsilon(1e-14));
  CHECK((net.B - 0.6 * (net.A.transpose() * net.A)).norm() <= 1e-14);
  verify_certificate(cert, net, obj);  // must not throw
}

TEST_CASE("coupled G certificate matches the brute-force frozen values") {
  const ObjectiveSet obj = path3_objective();
  const auto [cert, net] = certify_coupled(Variant::G, build_path(3), obj, 1);
  CHECK(cert.beta == doctest::Approx(0.20689655172413796).epsilon(1e-14));
  CHECK(cert.eta2 == doctest::Approx(0.6896551724137931).epsilon(1e-12));
  CHECK(cert.eta3 == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(cert.alpha == doctest::Approx(0.017241379310344827).epsilon(1e-12));
  CHECK(cert.delta == doctest::Approx(0.00014451131189211535).epsilon(1e-7));
  CHECK(cert.gamma == doctest::Approx(1.3084013188560113).epsilon(1e-9));
  CHECK(cert.rate == doctest::Approx(0.9998555095686097).epsilon(1e-7));
  verify_certificate(cert, net, obj);
}

TEST_CASE("coupled C certificates match the brute-force frozen values") {
  const ObjectiveSet obj = path3_objective();
  struct Expect {
    int T;
    double alpha, delta;
  };
  for (const Expect e : {Expect{1, 0.04545454545454548, 0.001070676998170578},
                         Expect{2, 0.023268705377203828, 0.0010802111138237809},
                         Expect{4, 0.011772955161844735, 0.0010850607165753734}}) {
    const auto [cert, net] = certify_coupled(Variant::C, build_path(3), obj, e.T);
    CHECK(cert.beta == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(cert.alpha == doctest::Approx(e.alpha).epsilon(1e-13));
    CHECK(cert.delta == doctest::Approx(e.delta).epsilon(1e-9));
    CHECK(cert.gamma == 1.0);  // no inner expansion for the C family
    CHECK(cert.rate == doctest::Approx(1.0 / (1.0 + e.delta)).epsilon(1e-9));
    verify_certificate(cert, net, obj);
  }
}

TEST_CASE("certificate text carries the parameters") {
  const ObjectiveSet obj = path3_objective();
  const auto [cert, net] = certify_coupled(Variant::C, build_path(3), obj, 2);
  const std::string text = cert.text();
  CHECK(text.find("variant=C") != std::string::npos);
  CHECK(text.find("alpha=") != std::string::npos);
  CHECK(text.find("beta=") != std::string::npos);
  CHECK(text.find("T=2") != std::string::npos);
  CHECK(text.find("delta=") != std::string::npos);
  CHECK(text.find("rate=") != std::string::npos);
}

TEST_CASE("certified runs contract the Lyapunov function every iteration") {
  const ObjectiveSet obj = path3_objective();
  for (Variant v : {Variant::F, Variant::G, Variant::C}) {
    const auto [cert, net] = certify_coupled(v, build_path(3), obj, 1);
    check_contraction(v, net, obj, cert, 400);
  }
  for (int T : {2, 3, 4}) {
    const auto [cert, net] = certify_coupled(Variant::C, build_path(3), obj, T);
    check_contraction(Variant::C, net, obj, cert, 400);
  }
}

TEST_CASE("contraction also holds on a decoupled penalty") {
  // B fixed independently of beta: scaled Laplacian on a ring
  const Graph g = build_ring(5);
  Eigen::VectorXd c(5);
  c << 1, 1.5, 2, 2.5, 3;
  Eigen::MatrixXd b(5, 1);
  b << 2, -1, 0, 3, 1;
  const ObjectiveSet obj = ObjectiveSet::quadratic(c, b);  // m = 2, L = 6
  const Network net = make_network(g, 0.25);
  CertifyOptions opts;
  for (Variant v : {Variant::F, Variant::G, Variant::C}) {
    const StepsizeCertificate cert = certify(v, net, obj, 1, opts);
    CHECK(cert.delta > 0.0);
    CHECK(cert.rate < 1.0);
    check_contraction(v, net, obj, cert, 300);
  }
}

TEST_CASE("certificate invariants and admissibility checks") {
  const ObjectiveSet obj = path3_objective();
  const Network net = make_network(build_path(3), 0.5);

  // eta ranges are enforced
  CertifyOptions bad;
  bad.eta1 = 4.0;  // = 2m, outside (0, 2m)
  CHECK_THROWS_AS(certify_f(net, obj, 1, bad), CertificateError);
  bad = {};
  bad.eta4 = -1.0;
  CHECK_THROWS_AS(certify_c(net, obj, 1, bad), CertificateError);
  bad = {};
  bad.beta_frac = 1.0;
  CHECK_THROWS_AS(certify_c(net, obj, 1, bad), CertificateError);

  // fixed beta above the admissible bound is rejected: bound = (2m-eta1)/rho_A
  CertifyOptions high;
  high.fixed_beta = 0.7;  // bound at defaults is 2/3
  CHECK_THROWS_AS(certify_f(net, obj, 1, high), CertificateError);
  high.fixed_beta = 0.5;
  CHECK(certify_f(net, obj, 1, high).beta == doctest::Approx(0.5));

  // G needs rho(B) < m
  const Network heavy = make_network(build_path(3), 1.0);  // rho(B) = 3 > m = 2
  CHECK_THROWS_AS(certify_g(heavy, obj, 1, {}), CertificateError);

  // verify_certificate rejects tampered certificates
  auto [cert, cnet] = certify_coupled(Variant::C, build_path(3), obj, 2);
  StepsizeCertificate tampered = cert;
  tampered.alpha = 10.0 * cert.alpha;
  CHECK_THROWS_AS(verify_certificate(tampered, cnet, obj), CertificateError);
  tampered = cert;
  tampered.delta = 10.0 * cert.delta;
  CHECK_THROWS_AS(verify_certificate(tampered, cnet, obj), CertificateError);
}

TEST_CASE("multi-step F and G admit no coupled-penalty certificate") {
  // With B = beta A'A, the inner expansion Gamma - 1 grows like sqrt(alpha)
  // while delta shrinks like alpha, so the T > 1 alpha bounds collapse.
  const ObjectiveSet obj = path3_objective();
  for (int T : {2, 3}) {
    CHECK_THROWS_AS(certify_coupled(Variant::F, build_path(3), obj, T), CertificateError);
    CHECK_THROWS_AS(certify_coupled(Variant::G, build_path(3), obj, T), CertificateError);
  }
  try {
    certify_coupled(Variant::F, build_path(3), obj, 2);
  } catch (const CertificateError& err) {
    CHECK(std::string(err.what()).find("no certificate") != std::string::npos);
  }
}

TEST_CASE("certify dispatch and variant tags are consistent") {
  const ObjectiveSet obj = path3_objective();
  const Network net = make_network(build_path(3), 0.3);
  for (Variant v : {Variant::F, Variant::G, Variant::C}) {
    const StepsizeCertificate cert = certify(v, net, obj, 1, {});
    CHECK(cert.variant == v);
    CHECK(cert.alpha > 0.0);
    CHECK(cert.beta > 0.0);
    CHECK(cert.delta > 0.0);
    CHECK(cert.delta_tilde == doctest::Approx(cert.delta));  // equal at T = 1
  }
  CHECK(to_string(Variant::F) == "F");
  CHECK(to_string(Variant::G) == "G");
  CHECK(to_string(Variant::C) == "C");
}

TEST_CASE("tuned stepsize search: deterministic and at least as fast as certified") {
  Eigen::VectorXd c(5);
  c << 1, 4, 9, 2, 6;
  Eigen::MatrixXd b(5, 1);
  b << 5, -3, 2, 8, 0;
  const ObjectiveSet obj = ObjectiveSet::quadratic(c, b);
  const Graph g = build_ring(5);
  const Network net = make_network(g, 1.0);

  TunedSearch cfg;
  cfg.budget = 24;
  cfg.seed = 3;
  cfg.target_rel = 1e-4;
  cfg.max_iters = 30000;
  const TunedResult r1 = tuned_stepsize(Variant::C, net, obj, 2, cfg);
  const TunedResult r2 = tuned_stepsize(Variant::C, net, obj, 2, cfg);
  CHECK(r1.alpha == r2.alpha);
  CHECK(r1.beta == r2.beta);
  CHECK(r1.iters_to_target == r2.iters_to_target);
  CHECK(r1.iters_to_target > 0);

  // the certificate candidate is always scored, so tuned can only be faster
  const auto [cert, cnet] = certify_coupled(Variant::C, g, obj, 2);
  const ReferenceSolution ref = reference_solution(cnet, obj);
  StopRule stop;
  stop.epsilon = cfg.target_rel;
  stop.max_iters = cfg.max_iters;
  const RunTrace base = solve(Variant::C, cnet, obj, cert,
                              Eigen::MatrixXd::Zero(5, 1), stop, &ref);
  REQUIRE(base.iters_to_eps > 0);
  CHECK(r1.iters_to_target <= base.iters_to_eps);
}

TEST_CASE("certified solve reports certificate metadata and converges") {
  const ObjectiveSet obj = path3_objective();
  const auto [cert, net] = certify_coupled(Variant::C, build_path(3), obj, 3);
  const ReferenceSolution ref = reference_solution(net, obj);
  StopRule stop;
  stop.epsilon = 1e-6;
  stop.max_iters = 100000;
  const RunTrace t =
      solve(Variant::C, net, obj, cert, Eigen::MatrixXd::Zero(3, 1), stop, &ref);
  CHECK(!t.diverged);
  CHECK(!t.lyapunov_violation);
  CHECK(t.final_rel_error < 1e-6);
  bool has_cert = false, certified = false;
  for (const auto& [k, v] : t.metadata) {
    if (k == "certificate") has_cert = !v.empty();
    if (k == "certified") certified = v == "true";
  }
  CHECK(has_cert);
  CHECK(certified);
}
