#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace flexpd {

struct Sample {
  double label = 0.0;                            // -1 or +1 after normalization
  std::vector<std::pair<int, double>> features;  // 1-based ascending indices
};

struct Dataset {
  int p = 0;
  std::vector<Sample> samples;
};

/// LIBSVM text format: "<label> <idx>:<val> ...", '#' starts a comment,
/// 0/1 labels map to -1/+1, empty lines skipped.
Dataset parse_libsvm(std::istream& in, std::optional<int> p_hint = std::nullopt);
Dataset parse_libsvm(const std::string& text, std::optional<int> p_hint = std::nullopt);
Dataset parse_libsvm_file(const std::string& path, std::optional<int> p_hint = std::nullopt);

/// Uniform random partition into n agent sample lists; sizes differ by at
/// most one; deterministic per seed.
std::vector<std::vector<int>> partition(const Dataset& ds, int n, std::uint64_t seed);

enum class ObjectiveKind { quadratic, logistic };

/// n local objectives f_i : R^p -> R, each m-strongly convex with
/// L-Lipschitz gradient. Iterates are n x p matrices, row i owned by agent i.
class ObjectiveSet {
 public:
  /// f_i(x) = c_i * ||x - b_i||^2, c_i > 0. b is n x p.
  static ObjectiveSet quadratic(const Eigen::VectorXd& c, const Eigen::MatrixXd& b);
  /// f_i(x) = (kappa/(2n))||x||^2 + (1/K) sum_{j in part_i} log(1+exp(-v_j u_j'x)),
  /// K = total sample count across agents.
  static ObjectiveSet logistic(const Dataset& ds, const std::vector<std::vector<int>>& parts,
                               double kappa);

  int n() const { return n_; }
  int p() const { return p_; }
  ObjectiveKind kind() const { return kind_; }
  double m() const { return m_; }
  double L() const { return L_; }
  std::pair<double, double> constants() const { return {m_, L_}; }

  double eval(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd grad(const Eigen::MatrixXd& x) const;

  /// Value and gradient of f_i at a single point (1 x p row).
  double eval_agent(int i, const Eigen::RowVectorXd& xi) const;
  Eigen::RowVectorXd grad_agent(int i, const Eigen::RowVectorXd& xi) const;

  const Eigen::VectorXd& quad_c() const;
  const Eigen::MatrixXd& quad_b() const;

 private:
  ObjectiveSet() = default;
  int n_ = 0, p_ = 0;
  ObjectiveKind kind_ = ObjectiveKind::quadratic;
  double m_ = 0.0, L_ = 0.0;
  Eigen::VectorXd c_;
  Eigen::MatrixXd b_;
  std::vector<Eigen::MatrixXd> feats_;   // per agent, K_i x p
  std::vector<Eigen::VectorXd> labels_;  // per agent, K_i
  double kappa_ = 0.0;
  long K_ = 0;
};

inline double eval_f(const ObjectiveSet& obj, const Eigen::MatrixXd& x) { return obj.eval(x); }
inline Eigen::MatrixXd grad(const ObjectiveSet& obj, const Eigen::MatrixXd& x) {
  return obj.grad(x);
}
inline std::pair<double, double> constants(const ObjectiveSet& obj) { return obj.constants(); }

}  // namespace flexpd
