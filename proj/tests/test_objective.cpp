#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "flexpd/objective.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <string>

using namespace flexpd;

namespace {

const std::string kTinySet =
    "+1 1:0.5 2:-1.0\n"
    "-1 1:-0.25 2:0.75\n"
    "+1 2:1.0\n";

ObjectiveSet tiny_logistic() {
  Dataset ds = parse_libsvm(kTinySet);
  return ObjectiveSet::logistic(ds, {{0, 2}, {1}}, 0.5);
}

}  // namespace

TEST_CASE("libsvm parser: grammar, comments, label normalization") {
  Dataset ds = parse_libsvm("# header comment\n+1 1:0.5 3:2.0\n\n0 2:-1.5 # trailing\n");
  CHECK(ds.p == 3);
  REQUIRE(ds.samples.size() == 2);
  CHECK(ds.samples[0].label == 1.0);
  REQUIRE(ds.samples[0].features.size() == 2);
  CHECK(ds.samples[0].features[0] == std::pair{1, 0.5});
  CHECK(ds.samples[0].features[1] == std::pair{3, 2.0});
  CHECK(ds.samples[1].label == -1.0);  // 0 maps to -1
  REQUIRE(ds.samples[1].features.size() == 1);
  CHECK(ds.samples[1].features[0] == std::pair{2, -1.5});

  // p_hint widens the feature space; too small a hint is an error
  CHECK(parse_libsvm("+1 1:1.0\n", 8).p == 8);
  CHECK_THROWS_WITH_AS(parse_libsvm("+1 5:1.0\n", 3), doctest::Contains("p_hint"),
                       std::runtime_error);
}

TEST_CASE("libsvm parser rejects malformed lines with their line number") {
  CHECK_THROWS_WITH_AS(parse_libsvm("x 1:1.0\n"), doctest::Contains("line 1"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_libsvm("+1 1:1.0\n+1 1:bad\n"), doctest::Contains("line 2"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_libsvm("+1 novalue\n"), doctest::Contains("idx:val"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_libsvm("+1 0:1.0\n"), doctest::Contains("index must be >= 1"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_libsvm("+1 2:1.0 2:3.0\n"), doctest::Contains("duplicate"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_libsvm("+1 3:1.0 2:3.0\n"), doctest::Contains("ascending"),
                       std::runtime_error);
  CHECK_THROWS_AS(parse_libsvm_file("/nonexistent/file.libsvm"), std::runtime_error);
}

TEST_CASE("partition: sizes, coverage, determinism") {
  Dataset ds;
  ds.p = 1;
  ds.samples.resize(768);
  auto parts = partition(ds, 10, 42);
  REQUIRE(parts.size() == 10);
  std::multiset<size_t> sizes;
  std::set<int> seen;
  for (const auto& part : parts) {
    sizes.insert(part.size());
    CHECK(std::is_sorted(part.begin(), part.end()));
    seen.insert(part.begin(), part.end());
  }
  CHECK(seen.size() == 768);  // exact cover
  CHECK(sizes.count(77) == 8);
  CHECK(sizes.count(76) == 2);

  CHECK(partition(ds, 10, 42) == parts);
  CHECK(partition(ds, 10, 43) != parts);
  CHECK_THROWS_AS(partition(ds, 0, 1), std::invalid_argument);
  Dataset small;
  small.samples.resize(3);
  CHECK_THROWS_AS(partition(small, 4, 1), std::invalid_argument);
}

TEST_CASE("quadratic objective: frozen value, gradient, constants") {
  Eigen::VectorXd c(2);
  c << 2.0, 3.0;
  Eigen::MatrixXd b(2, 1);
  b << 1.0, -1.0;
  ObjectiveSet obj = ObjectiveSet::quadratic(c, b);
  CHECK(obj.n() == 2);
  CHECK(obj.p() == 1);
  CHECK(obj.m() == 4.0);
  CHECK(obj.L() == 6.0);

  Eigen::MatrixXd x(2, 1);
  x << 0.5, 2.0;
  CHECK(obj.eval(x) == doctest::Approx(27.5).epsilon(1e-15));
  Eigen::MatrixXd g = obj.grad(x);
  CHECK(g(0, 0) == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK(g(1, 0) == doctest::Approx(18.0).epsilon(1e-15));

  CHECK_THROWS_AS(ObjectiveSet::quadratic(Eigen::VectorXd::Zero(2), b), std::invalid_argument);
  Eigen::VectorXd c3(3);
  c3 << 1, 2, 3;
  CHECK_THROWS_AS(ObjectiveSet::quadratic(c3, b), std::invalid_argument);
}

TEST_CASE("logistic objective: frozen value, gradient, constants") {
  ObjectiveSet obj = tiny_logistic();
  CHECK(obj.n() == 2);
  CHECK(obj.p() == 2);
  CHECK(obj.m() == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(obj.L() == doctest::Approx(0.42773185154477655).epsilon(1e-13));

  Eigen::MatrixXd x(2, 2);
  x << 0.3, -0.2, -0.1, 0.4;
  CHECK(obj.eval(x) == doctest::Approx(0.7709378762595156).epsilon(1e-13));
  Eigen::MatrixXd g = obj.grad(x);
  CHECK(g(0, 0) == doctest::Approx(0.006102929819555).epsilon(1e-11));
  CHECK(g(0, 1) == doctest::Approx(-0.09548385874326933).epsilon(1e-11));
  CHECK(g(1, 0) == doctest::Approx(-0.07337852540172163).epsilon(1e-11));
  CHECK(g(1, 1) == doctest::Approx(0.2451355762051649).epsilon(1e-11));

  Dataset ds = parse_libsvm(kTinySet);
  CHECK_THROWS_AS(ObjectiveSet::logistic(ds, {{0, 2}, {1}}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ObjectiveSet::logistic(ds, {}, 1.0), std::invalid_argument);
}

TEST_CASE("gradients agree with finite differences") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  auto fd_check = [&](const ObjectiveSet& obj) {
    Eigen::MatrixXd x(obj.n(), obj.p());
    for (int i = 0; i < obj.n(); ++i)
      for (int j = 0; j < obj.p(); ++j) x(i, j) = unit(rng);
    const Eigen::MatrixXd g = obj.grad(x);
    const double h = 1e-6;
    for (int i = 0; i < obj.n(); ++i)
      for (int j = 0; j < obj.p(); ++j) {
        Eigen::MatrixXd xp = x, xm = x;
        xp(i, j) += h;
        xm(i, j) -= h;
        const double fd = (obj.eval(xp) - obj.eval(xm)) / (2 * h);
        CHECK(g(i, j) == doctest::Approx(fd).epsilon(1e-6));
      }
  };

  Eigen::VectorXd c(3);
  c << 0.5, 2.0, 7.0;
  Eigen::MatrixXd b(3, 2);
  b << 1, -2, 0.5, 3, -1, 0;
  fd_check(ObjectiveSet::quadratic(c, b));
  fd_check(tiny_logistic());
}

TEST_CASE("strong convexity and smoothness sandwich the gradient map") {
  // m ||x-y||^2 <= <grad f(x) - grad f(y), x - y> <= L ||x-y||^2 per agent
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(-2.0, 2.0);

  auto sandwich = [&](const ObjectiveSet& obj) {
    const auto [m, L] = obj.constants();
    for (int trial = 0; trial < 200; ++trial) {
      Eigen::RowVectorXd x(obj.p()), y(obj.p());
      for (int j = 0; j < obj.p(); ++j) {
        x(j) = unit(rng);
        y(j) = unit(rng);
      }
      const int i = static_cast<int>(rng() % static_cast<std::uint64_t>(obj.n()));
      const double inner = (obj.grad_agent(i, x) - obj.grad_agent(i, y)).dot(x - y);
      const double dist2 = (x - y).squaredNorm();
      CHECK(inner >= m * dist2 - 1e-9 * (1.0 + dist2));
      CHECK(inner <= L * dist2 + 1e-9 * (1.0 + dist2));
    }
  };

  Eigen::VectorXd c(4);
  c << 1.0, 1.5, 2.0, 5.0;
  Eigen::MatrixXd b = Eigen::MatrixXd::Random(4, 3);
  sandwich(ObjectiveSet::quadratic(c, b));
  sandwich(tiny_logistic());
}

TEST_CASE("agent-level and stacked evaluations are consistent") {
  ObjectiveSet obj = tiny_logistic();
  Eigen::MatrixXd x(2, 2);
  x << 1.0, -0.5, 0.25, 2.0;
  double sum = 0.0;
  for (int i = 0; i < obj.n(); ++i) sum += obj.eval_agent(i, x.row(i));
  CHECK(sum == doctest::Approx(obj.eval(x)).epsilon(1e-15));
  Eigen::MatrixXd g = obj.grad(x);
  for (int i = 0; i < obj.n(); ++i)
    CHECK((obj.grad_agent(i, x.row(i)) - g.row(i)).norm() <= 1e-15);

  Eigen::MatrixXd wrong(3, 2);
  CHECK_THROWS_AS(obj.eval(wrong), std::invalid_argument);
  CHECK_THROWS_AS(obj.grad(wrong), std::invalid_argument);
  CHECK_THROWS_AS(obj.quad_c(), std::logic_error);
}
