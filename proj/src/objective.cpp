#include "flexpd/objective.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace flexpd {

namespace {

// log(1 + exp(z)) without overflow.
double log1pexp(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// 1 / (1 + exp(-z)) without overflow.
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

[[noreturn]] void parse_fail(long line_no, const std::string& what) {
  throw std::runtime_error("parse_libsvm: line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

Dataset parse_libsvm(std::istream& in, std::optional<int> p_hint) {
  Dataset ds;
  std::string line;
  long line_no = 0;
  int max_idx = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;  // empty line

    Sample s;
    try {
      size_t used = 0;
      s.label = std::stod(tok, &used);
      if (used != tok.size()) parse_fail(line_no, "non-numeric label '" + tok + "'");
    } catch (const std::invalid_argument&) {
      parse_fail(line_no, "non-numeric label '" + tok + "'");
    }
    if (s.label == 0.0) s.label = -1.0;  // 0/1 labels map 0 -> -1
    if (s.label != -1.0 && s.label != 1.0) {
      if (s.label > 0.0)
        s.label = 1.0;
      else
        s.label = -1.0;
    }

    int prev_idx = 0;
    while (ls >> tok) {
      auto colon = tok.find(':');
      if (colon == std::string::npos) parse_fail(line_no, "expected idx:val, got '" + tok + "'");
      int idx = 0;
      double val = 0.0;
      try {
        size_t used = 0;
        idx = std::stoi(tok.substr(0, colon), &used);
        if (used != colon) parse_fail(line_no, "non-numeric index in '" + tok + "'");
        std::string vs = tok.substr(colon + 1);
        val = std::stod(vs, &used);
        if (used != vs.size()) parse_fail(line_no, "non-numeric value in '" + tok + "'");
      } catch (const std::invalid_argument&) {
        parse_fail(line_no, "malformed pair '" + tok + "'");
      } catch (const std::out_of_range&) {
        parse_fail(line_no, "out-of-range number in '" + tok + "'");
      }
      if (idx <= 0) parse_fail(line_no, "index must be >= 1");
      if (idx == prev_idx) parse_fail(line_no, "duplicate index " + std::to_string(idx));
      if (idx < prev_idx) parse_fail(line_no, "indices must be ascending");
      prev_idx = idx;
      max_idx = std::max(max_idx, idx);
      s.features.emplace_back(idx, val);
    }
    ds.samples.push_back(std::move(s));
  }
  ds.p = p_hint.value_or(max_idx);
  if (ds.p < max_idx)
    throw std::runtime_error("parse_libsvm: p_hint smaller than max feature index");
  return ds;
}

Dataset parse_libsvm(const std::string& text, std::optional<int> p_hint) {
  std::istringstream in(text);
  return parse_libsvm(in, p_hint);
}

Dataset parse_libsvm_file(const std::string& path, std::optional<int> p_hint) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_libsvm: cannot open " + path);
  return parse_libsvm(in, p_hint);
}

std::vector<std::vector<int>> partition(const Dataset& ds, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("partition: n >= 1 required");
  const long K = static_cast<long>(ds.samples.size());
  if (n > K) throw std::invalid_argument("partition: more agents than samples");
  std::vector<int> order(K);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> parts(n);
  for (long idx = 0; idx < K; ++idx) parts[idx % n].push_back(order[idx]);
  for (auto& part : parts) std::sort(part.begin(), part.end());
  return parts;
}

ObjectiveSet ObjectiveSet::quadratic(const Eigen::VectorXd& c, const Eigen::MatrixXd& b) {
  if (c.size() != b.rows() || c.size() == 0)
    throw std::invalid_argument("quadratic: c and rows of b must agree");
  if ((c.array() <= 0.0).any()) throw std::invalid_argument("quadratic: c_i > 0 required");
  ObjectiveSet obj;
  obj.kind_ = ObjectiveKind::quadratic;
  obj.n_ = static_cast<int>(c.size());
  obj.p_ = static_cast<int>(b.cols());
  obj.c_ = c;
  obj.b_ = b;
  obj.m_ = 2.0 * c.minCoeff();
  obj.L_ = 2.0 * c.maxCoeff();
  return obj;
}

ObjectiveSet ObjectiveSet::logistic(const Dataset& ds, const std::vector<std::vector<int>>& parts,
                                    double kappa) {
  if (kappa <= 0.0) throw std::invalid_argument("logistic: kappa > 0 required");
  if (parts.empty()) throw std::invalid_argument("logistic: at least one agent");
  ObjectiveSet obj;
  obj.kind_ = ObjectiveKind::logistic;
  obj.n_ = static_cast<int>(parts.size());
  obj.p_ = ds.p;
  obj.kappa_ = kappa;
  obj.K_ = static_cast<long>(ds.samples.size());
  if (obj.K_ == 0) throw std::invalid_argument("logistic: empty dataset");

  double max_gram = 0.0;
  for (const auto& part : parts) {
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(static_cast<long>(part.size()), ds.p);
    Eigen::VectorXd v(static_cast<long>(part.size()));
    for (size_t r = 0; r < part.size(); ++r) {
      const Sample& s = ds.samples.at(static_cast<size_t>(part[r]));
      v(static_cast<long>(r)) = s.label;
      for (auto [idx, val] : s.features) U(static_cast<long>(r), idx - 1) = val;
    }
    if (U.rows() > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(U.transpose() * U);
      max_gram = std::max(max_gram, es.eigenvalues().maxCoeff());
    }
    obj.feats_.push_back(std::move(U));
    obj.labels_.push_back(std::move(v));
  }
  obj.m_ = kappa / obj.n_;
  obj.L_ = kappa / obj.n_ + max_gram / (4.0 * static_cast<double>(obj.K_));
  return obj;
}

double ObjectiveSet::eval_agent(int i, const Eigen::RowVectorXd& xi) const {
  if (kind_ == ObjectiveKind::quadratic) return c_(i) * (xi - b_.row(i)).squaredNorm();
  double reg = 0.5 * (kappa_ / n_) * xi.squaredNorm();
  const Eigen::VectorXd margins = feats_[static_cast<size_t>(i)] * xi.transpose();
  double loss = 0.0;
  for (long j = 0; j < margins.size(); ++j)
    loss += log1pexp(-labels_[static_cast<size_t>(i)](j) * margins(j));
  return reg + loss / static_cast<double>(K_);
}

Eigen::RowVectorXd ObjectiveSet::grad_agent(int i, const Eigen::RowVectorXd& xi) const {
  if (kind_ == ObjectiveKind::quadratic) return 2.0 * c_(i) * (xi - b_.row(i));
  Eigen::RowVectorXd g = (kappa_ / n_) * xi;
  const Eigen::MatrixXd& U = feats_[static_cast<size_t>(i)];
  const Eigen::VectorXd& v = labels_[static_cast<size_t>(i)];
  const Eigen::VectorXd margins = U * xi.transpose();
  Eigen::VectorXd w(margins.size());
  for (long j = 0; j < margins.size(); ++j) w(j) = -v(j) * sigmoid(-v(j) * margins(j));
  g += (w.transpose() * U) / static_cast<double>(K_);
  return g;
}

double ObjectiveSet::eval(const Eigen::MatrixXd& x) const {
  if (x.rows() != n_ || x.cols() != p_) throw std::invalid_argument("eval: x must be n x p");
  if (!x.allFinite()) throw std::invalid_argument("eval: non-finite iterate");
  double total = 0.0;
  for (int i = 0; i < n_; ++i) total += eval_agent(i, x.row(i));
  return total;
}

Eigen::MatrixXd ObjectiveSet::grad(const Eigen::MatrixXd& x) const {
  if (x.rows() != n_ || x.cols() != p_) throw std::invalid_argument("grad: x must be n x p");
  Eigen::MatrixXd g(n_, p_);
  if (kind_ == ObjectiveKind::quadratic) {
    g = 2.0 * (c_.asDiagonal() * (x - b_));
    return g;
  }
  for (int i = 0; i < n_; ++i) g.row(i) = grad_agent(i, x.row(i));
  return g;
}

const Eigen::VectorXd& ObjectiveSet::quad_c() const {
  if (kind_ != ObjectiveKind::quadratic) throw std::logic_error("quad_c: not a quadratic set");
  return c_;
}

const Eigen::MatrixXd& ObjectiveSet::quad_b() const {
  if (kind_ != ObjectiveKind::quadratic) throw std::logic_error("quad_b: not a quadratic set");
  return b_;
}

}  // namespace flexpd
