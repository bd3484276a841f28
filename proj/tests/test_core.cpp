#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "flexpd/baselines.hpp"
#include "flexpd/core.hpp"

#include <cmath>

using namespace flexpd;

namespace {

// Shared fixture: path-3, B = 0.4 A'A, c = [1,2,3], b = [1,2,4].
struct Fixture {
  Network net = make_network(build_path(3), 0.4);
  ObjectiveSet obj = [] {
    Eigen::VectorXd c(3);
    c << 1, 2, 3;
    Eigen::MatrixXd b(3, 1);
    b << 1, 2, 4;
    return ObjectiveSet::quadratic(c, b);
  }();
  Eigen::MatrixXd x0 = [] {
    Eigen::MatrixXd x(3, 1);
    x << 0.5, -1.0, 2.0;
    return x;
  }();
  Eigen::MatrixXd l0 = [] {
    Eigen::MatrixXd l(2, 1);
    l << 0.2, -0.3;
    return l;
  }();

  AlgorithmState state() const {
    AlgorithmState s = initial_state(net, 1);
    s.x = x0;
    s.lambda = l0;
    return s;
  }
};

double find_meta(const RunTrace& t, const std::string& key) {
  for (const auto& [k, v] : t.metadata)
    if (k == key) return std::stod(v);
  FAIL(("metadata key missing: " + key).c_str());
  return 0.0;
}

}  // namespace

TEST_CASE("initial state: zero primal and dual, zero counters") {
  Network net = make_network(build_ring(4), 1.0);
  AlgorithmState s = initial_state(net, 3);
  CHECK(s.x.rows() == 4);
  CHECK(s.x.cols() == 3);
  CHECK(s.lambda.rows() == 4);  // ring-4 has 4 edges
  CHECK(s.x.norm() == 0.0);
  CHECK(s.lambda.norm() == 0.0);
  CHECK(s.k == 0);
  CHECK(s.grad_evals == 0);
  CHECK(s.comm_rounds == 0);
}

TEST_CASE("one F step matches the frozen trajectory (T=2)") {
  Fixture fx;
  AlgorithmState s = fx.state();
  flexpd_f_step(s, fx.net, fx.obj, 0.05, 0.4, 2);
  CHECK(s.x(0, 0) == doctest::Approx(0.5331).epsilon(1e-14));
  CHECK(s.x(1, 0) == doctest::Approx(0.2691000000000001).epsilon(1e-14));
  CHECK(s.x(2, 0) == doctest::Approx(2.8963).epsilon(1e-14));
  CHECK(s.lambda(0, 0) == doctest::Approx(0.3056).epsilon(1e-14));
  CHECK(s.lambda(1, 0) == doctest::Approx(-1.35088).epsilon(1e-14));
  CHECK(s.k == 1);
  CHECK(s.grad_evals == 2 * 3);  // T fresh gradients per agent
  CHECK(s.comm_rounds == 2);     // T neighbor exchanges
}

TEST_CASE("one G step matches the frozen trajectory (T=2)") {
  Fixture fx;
  AlgorithmState s = fx.state();
  flexpd_g_step(s, fx.net, fx.obj, 0.05, 0.4, 2);
  CHECK(s.x(0, 0) == doctest::Approx(0.519).epsilon(1e-14));
  CHECK(s.x(1, 0) == doctest::Approx(0.28700000000000014).epsilon(1e-14));
  CHECK(s.x(2, 0) == doctest::Approx(2.8925).epsilon(1e-14));
  CHECK(s.lambda(0, 0) == doctest::Approx(0.29279999999999995).epsilon(1e-14));
  CHECK(s.lambda(1, 0) == doctest::Approx(-1.3422).epsilon(1e-14));
  CHECK(s.grad_evals == 2 * 3);  // T fresh gradients
  CHECK(s.comm_rounds == 1);     // frozen neighbor term: one exchange
}

TEST_CASE("one C step matches the frozen trajectory (T=2)") {
  Fixture fx;
  AlgorithmState s = fx.state();
  flexpd_c_step(s, fx.net, fx.obj, 0.05, 0.4, 2);
  CHECK(s.x(0, 0) == doctest::Approx(0.5341).epsilon(1e-14));
  CHECK(s.x(1, 0) == doctest::Approx(0.41209999999999997).epsilon(1e-14));
  CHECK(s.x(2, 0) == doctest::Approx(3.0538).epsilon(1e-14));
  CHECK(s.lambda(0, 0) == doctest::Approx(0.24880000000000002).epsilon(1e-14));
  CHECK(s.lambda(1, 0) == doctest::Approx(-1.3566799999999999).epsilon(1e-14));
  CHECK(s.grad_evals == 3);   // one frozen gradient per agent
  CHECK(s.comm_rounds == 2);  // T neighbor exchanges
}

TEST_CASE("the three variants coincide at T=1") {
  Fixture fx;
  for (double alpha : {0.01, 0.05}) {
    AlgorithmState sf = fx.state(), sg = fx.state(), sc = fx.state();
    flexpd_f_step(sf, fx.net, fx.obj, alpha, 0.4, 1);
    flexpd_g_step(sg, fx.net, fx.obj, alpha, 0.4, 1);
    flexpd_c_step(sc, fx.net, fx.obj, alpha, 0.4, 1);
    CHECK((sf.x - sg.x).norm() <= 1e-14 * (1.0 + sf.x.norm()));
    CHECK((sf.x - sc.x).norm() <= 1e-14 * (1.0 + sf.x.norm()));
    CHECK((sf.lambda - sg.lambda).norm() <= 1e-14);
    CHECK((sf.lambda - sc.lambda).norm() <= 1e-14);
  }
}

TEST_CASE("compact C form equals the inner sweep for every T") {
  Fixture fx;
  for (int T : {1, 2, 3, 5, 8}) {
    AlgorithmState sweep = fx.state(), compact = fx.state();
    flexpd_c_step(sweep, fx.net, fx.obj, 0.05, 0.4, T);
    const DerivedMatrices dm = derived_matrices(fx.net, 0.05, T);
    flexpd_c_step_compact(compact, fx.net, fx.obj, dm, 0.05, 0.4, T);
    CHECK((sweep.x - compact.x).norm() <= 1e-12 * (1.0 + sweep.x.norm()));
    CHECK((sweep.lambda - compact.lambda).norm() <= 1e-12 * (1.0 + sweep.lambda.norm()));
    CHECK(compact.grad_evals == sweep.grad_evals);
    CHECK(compact.comm_rounds == sweep.comm_rounds);
  }
}

TEST_CASE("derived matrices: frozen values at alpha=0.1, T=3") {
  Fixture fx;
  const DerivedMatrices dm = derived_matrices(fx.net, 0.1, 3);
  Eigen::MatrixXd M_expect(3, 3);
  M_expect << 0.3074146537704758, 0.02553345388788427, 0.00038522567497328354,
      0.02553345388788427, 0.2822664255575648, 0.02553345388788427, 0.00038522567497328354,
      0.02553345388788427, 0.3074146537704758;
  CHECK((dm.M - M_expect).cwiseAbs().maxCoeff() <= 1e-12);
  // N collapses to B whenever B commutes with U = I - alpha B
  CHECK((dm.N - fx.net.B).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((dm.U - (Eigen::MatrixXd::Identity(3, 3) - 0.1 * fx.net.B)).norm() <= 1e-15);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dm.M);
  CHECK(es.eigenvalues().minCoeff() ==
        doctest::Approx(0.25673297166968057).epsilon(1e-12));
  CHECK(es.eigenvalues().maxCoeff() == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("derived matrices: T=1 degenerates to U and B") {
  Fixture fx;
  const DerivedMatrices dm = derived_matrices(fx.net, 0.07, 1);
  CHECK((dm.C - Eigen::MatrixXd::Identity(3, 3)).norm() <= 1e-15);
  CHECK((dm.M - dm.U).cwiseAbs().maxCoeff() <= 1e-13);
  CHECK((dm.N - fx.net.B).cwiseAbs().maxCoeff() <= 1e-12);
  // alpha >= 1/rho(B) must be rejected
  CHECK_THROWS_AS(derived_matrices(fx.net, 1.0 / fx.net.rho_B, 2), std::invalid_argument);
  CHECK_THROWS_AS(derived_matrices(fx.net, 0.05, 0), std::invalid_argument);
}

TEST_CASE("reference solution: consensus average and dual certificate") {
  Fixture fx;
  const ReferenceSolution ref = reference_solution(fx.net, fx.obj);
  // quadratic consensus optimum: sum(c b)/sum(c) = 17/6 per coordinate
  CHECK(ref.consensus(0) == doctest::Approx(17.0 / 6.0).epsilon(1e-12));
  CHECK((ref.x_star.row(0) - ref.x_star.row(2)).norm() == 0.0);
  CHECK(ref.grad_norm_achieved <= 1e-10);
  CHECK(ref.lambda_star(0, 0) == doctest::Approx(-11.0 / 3.0).epsilon(1e-10));
  CHECK(ref.lambda_star(1, 0) == doctest::Approx(-7.0).epsilon(1e-10));
  // stationarity at the pair (x*, lambda*)
  CHECK((fx.obj.grad(ref.x_star) + fx.net.A.transpose() * ref.lambda_star).norm() <= 1e-10);
}

TEST_CASE("fixed point: no variant moves from the saddle point") {
  Fixture fx;
  const ReferenceSolution ref = reference_solution(fx.net, fx.obj);
  for (int T : {1, 2, 4}) {
    AlgorithmState sf = fx.state(), sg = fx.state(), sc = fx.state();
    sf.x = sg.x = sc.x = ref.x_star;
    sf.lambda = sg.lambda = sc.lambda = ref.lambda_star;
    flexpd_f_step(sf, fx.net, fx.obj, 0.05, 0.4, T);
    flexpd_g_step(sg, fx.net, fx.obj, 0.05, 0.4, T);
    flexpd_c_step(sc, fx.net, fx.obj, 0.05, 0.4, T);
    const double tol = 1e-10 * (1.0 + ref.x_star.norm());
    CHECK((sf.x - ref.x_star).norm() <= tol);
    CHECK((sg.x - ref.x_star).norm() <= tol);
    CHECK((sc.x - ref.x_star).norm() <= tol);
    CHECK((sf.lambda - ref.lambda_star).norm() <= tol);
  }
}

TEST_CASE("dual iterates stay in the column space of A") {
  // ring-4 has a one-dimensional null(A'): span{(1, 1, 1, -1)}
  Network net = make_network(build_ring(4), 0.3);
  Eigen::VectorXd c(4);
  c << 1, 2, 3, 4;
  Eigen::MatrixXd b(4, 1);
  b << 0, 1, -1, 2;
  ObjectiveSet obj = ObjectiveSet::quadratic(c, b);
  Eigen::VectorXd null_dir(4);
  null_dir << 1, 1, 1, -1;
  REQUIRE((net.A.transpose() * null_dir).norm() <= 1e-14);

  AlgorithmState s = initial_state(net, 1);
  s.x = Eigen::MatrixXd::Random(4, 1);
  for (int k = 0; k < 25; ++k) {
    flexpd_f_step(s, net, obj, 0.02, 0.3, 2);
    CHECK(std::abs((null_dir.transpose() * s.lambda)(0, 0)) <= 1e-12);
  }
}

TEST_CASE("dual_step helper matches the in-place update") {
  Fixture fx;
  AlgorithmState s = fx.state();
  const Eigen::MatrixXd expect = fx.l0 + 0.4 * (fx.net.A * fx.x0);
  CHECK((dual_step(fx.l0, fx.x0, fx.net.A, 0.4) - expect).norm() <= 1e-15);
  CHECK_THROWS_AS(dual_step(fx.l0, fx.x0.transpose(), fx.net.A, 0.4), std::invalid_argument);
}

TEST_CASE("KKT residual: frozen values and near-zero at the solution") {
  Fixture fx;
  AlgorithmState s = fx.state();
  const KKTResidual r = kkt_residual(s, fx.net, fx.obj);
  CHECK(r.stationarity == doctest::Approx(17.140011668607464).epsilon(1e-13));
  CHECK(r.feasibility == doctest::Approx(3.3541019662496847).epsilon(1e-13));
  CHECK(r.penalty_null == doctest::Approx(2.244994432064365).epsilon(1e-13));

  const ReferenceSolution ref = reference_solution(fx.net, fx.obj);
  s.x = ref.x_star;
  s.lambda = ref.lambda_star;
  const KKTResidual rstar = kkt_residual(s, fx.net, fx.obj);
  CHECK(rstar.stationarity <= 1e-10);
  CHECK(rstar.feasibility <= 1e-12);
  CHECK(rstar.penalty_null <= 1e-12);
}

TEST_CASE("lyapunov function: frozen value and weight consistency") {
  Fixture fx;
  const ReferenceSolution ref = reference_solution(fx.net, fx.obj);
  AlgorithmState s = fx.state();
  const double V = lyapunov(s, ref, Variant::F, fx.net, 0.05, 0.4, 1);
  CHECK(V == doctest::Approx(28.08847222222222).epsilon(1e-10));
  // variant overload agrees with the explicit weight overload
  const Eigen::MatrixXd W = lyapunov_weight(Variant::F, fx.net, 0.05, 1);
  CHECK(lyapunov(s, ref, W, 0.05, 0.4) == doctest::Approx(V).epsilon(1e-15));
  CHECK((W - (Eigen::MatrixXd::Identity(3, 3) - 0.05 * fx.net.B)).norm() <= 1e-15);

  const Eigen::MatrixXd WG = lyapunov_weight(Variant::G, fx.net, 0.05, 1);
  CHECK((WG - (1.0 + 0.05 * fx.net.rho_B) * Eigen::MatrixXd::Identity(3, 3)).norm() <= 1e-12);
  const Eigen::MatrixXd WC = lyapunov_weight(Variant::C, fx.net, 0.05, 3);
  CHECK((WC - derived_matrices(fx.net, 0.05, 3).M).norm() <= 1e-15);
  // at the reference the value is zero
  s.x = ref.x_star;
  s.lambda = ref.lambda_star;
  CHECK(lyapunov(s, ref, W, 0.05, 0.4) <= 1e-20);
}

TEST_CASE("solve_raw: trace shape, counters, and stopping") {
  Fixture fx;
  const ReferenceSolution ref = reference_solution(fx.net, fx.obj);
  StopRule stop;
  stop.epsilon = 0.01;
  stop.max_iters = 20000;

  const RunTrace t = solve_raw(Variant::C, fx.net, fx.obj, 0.05, 0.4, 2, fx.x0, stop, &ref);
  CHECK(!t.diverged);
  CHECK(!t.lyapunov_violation);
  CHECK(t.iters_to_eps > 0);
  CHECK(t.total_iters == t.iters_to_eps);  // stops at the threshold
  CHECK(t.final_rel_error < 0.01);
  REQUIRE(t.rows.size() >= 2);
  CHECK(t.rows.front().k == 0);
  CHECK(t.rows.front().rel_error == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t.rows.back().k == t.total_iters);
  CHECK(t.rows.back().grad_evals == t.total_iters * 3);      // n per outer step (C)
  CHECK(t.rows.back().comm_rounds == t.total_iters * 2);     // T per outer step
  CHECK(find_meta(t, "alpha") == doctest::Approx(0.05));
  CHECK(find_meta(t, "beta") == doctest::Approx(0.4));
  CHECK(find_meta(t, "T") == doctest::Approx(2.0));

  // determinism: identical reruns give identical traces
  const RunTrace t2 = solve_raw(Variant::C, fx.net, fx.obj, 0.05, 0.4, 2, fx.x0, stop, &ref);
  REQUIRE(t2.rows.size() == t.rows.size());
  for (size_t i = 0; i < t.rows.size(); ++i) {
    CHECK(t2.rows[i].rel_error == t.rows[i].rel_error);
    CHECK(t2.rows[i].lyapunov == t.rows[i].lyapunov);
  }
}

TEST_CASE("solve_raw: rel_tol runs past epsilon; kkt_tol stops without a reference") {
  Fixture fx;
  const ReferenceSolution ref = reference_solution(fx.net, fx.obj);
  StopRule deep;
  deep.epsilon = 0.01;
  deep.rel_tol = 1e-8;
  deep.max_iters = 200000;
  const RunTrace t = solve_raw(Variant::F, fx.net, fx.obj, 0.02, 0.4, 1, fx.x0, deep, &ref);
  CHECK(t.final_rel_error < 1e-8);
  CHECK(t.iters_to_eps > 0);
  CHECK(t.iters_to_eps < t.total_iters);

  StopRule kkt_stop;
  kkt_stop.kkt_tol = 1e-6;
  kkt_stop.max_iters = 200000;
  const RunTrace tk =
      solve_raw(Variant::F, fx.net, fx.obj, 0.02, 0.4, 1, fx.x0, kkt_stop, nullptr);
  CHECK(tk.total_iters < kkt_stop.max_iters);
  CHECK(tk.rows.back().kkt_stat + tk.rows.back().kkt_feas <= 1e-6);
  CHECK(std::isnan(tk.final_rel_error));  // no reference given
}

TEST_CASE("solve_raw: max_iters=0, sparse recording, divergence detection") {
  Fixture fx;
  const ReferenceSolution ref = reference_solution(fx.net, fx.obj);
  StopRule stop;
  stop.max_iters = 0;
  const RunTrace t0 = solve_raw(Variant::C, fx.net, fx.obj, 0.05, 0.4, 1, fx.x0, stop, &ref);
  CHECK(t0.total_iters == 0);
  CHECK(t0.rows.size() == 1);

  StopRule few;
  few.epsilon = 1e-30;  // never reached
  few.max_iters = 100;
  TraceOptions sparse;
  sparse.record_every = 30;
  const RunTrace ts =
      solve_raw(Variant::C, fx.net, fx.obj, 0.05, 0.4, 1, fx.x0, few, &ref, sparse);
  REQUIRE(ts.rows.size() == 5);  // k = 0, 30, 60, 90, 100
  CHECK(ts.rows[1].k == 30);
  CHECK(ts.rows.back().k == 100);

  TraceOptions ends_only;
  ends_only.record_every = 0;
  const RunTrace te =
      solve_raw(Variant::C, fx.net, fx.obj, 0.05, 0.4, 1, fx.x0, few, &ref, ends_only);
  CHECK(te.rows.size() == 2);  // initial and final only

  // F with a huge stepsize blows up and is flagged, not thrown
  StopRule runaway;
  runaway.max_iters = 5000;
  const RunTrace td =
      solve_raw(Variant::F, fx.net, fx.obj, 5.0, 0.4, 1, fx.x0, runaway, &ref);
  CHECK(td.diverged);
  CHECK(td.note.find("divergence") != std::string::npos);
  CHECK(std::isnan(td.final_rel_error));
}

TEST_CASE("counters accumulate per variant across a short run") {
  Fixture fx;
  StopRule stop;
  stop.max_iters = 7;
  stop.epsilon = 1e-30;
  const int T = 3;
  const RunTrace tf = solve_raw(Variant::F, fx.net, fx.obj, 0.01, 0.4, T, fx.x0, stop);
  CHECK(tf.rows.back().grad_evals == 7 * T * 3);
  CHECK(tf.rows.back().comm_rounds == 7 * T);
  const RunTrace tg = solve_raw(Variant::G, fx.net, fx.obj, 0.01, 0.4, T, fx.x0, stop);
  CHECK(tg.rows.back().grad_evals == 7 * T * 3);
  CHECK(tg.rows.back().comm_rounds == 7 * 1);
  const RunTrace tc = solve_raw(Variant::C, fx.net, fx.obj, 0.01, 0.4, T, fx.x0, stop);
  CHECK(tc.rows.back().grad_evals == 7 * 3);
  CHECK(tc.rows.back().comm_rounds == 7 * T);
}
