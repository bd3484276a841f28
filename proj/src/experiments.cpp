#include "flexpd/experiments.hpp"

#include "json.hpp"

#include <atomic>
#include <cctype>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace flexpd {

namespace {

using json = nlohmann::json;

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Independent sub-streams per seed: graph (0), coefficients (1), partition (2).
std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag + 1));
}

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  threads = std::min<std::size_t>(threads, count == 0 ? 1 : count);
  if (threads == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

ObjectiveSet instance_objective(const ProblemSpec& prob, std::uint64_t seed, const Dataset* ds) {
  if (prob.kind == ProblemSpec::Kind::quadratic) {
    std::mt19937_64 rng(sub_seed(seed, 1));
    std::uniform_int_distribution<int> coef(prob.coef_lo, prob.coef_hi);
    std::uniform_int_distribution<int> offs(prob.offset_lo, prob.offset_hi);
    Eigen::VectorXd c(prob.n);
    for (int i = 0; i < prob.n; ++i) c[i] = coef(rng);
    Eigen::MatrixXd b(prob.n, 1);
    for (int i = 0; i < prob.n; ++i) b(i, 0) = offs(rng);
    return ObjectiveSet::quadratic(c, b);
  }
  if (!ds) throw ConfigError("logistic problem requires a dataset");
  return ObjectiveSet::logistic(*ds, partition(*ds, prob.n, sub_seed(seed, 2)), prob.kappa);
}

Graph instance_graph(const TopologySpec& topo, int n, std::uint64_t seed) {
  TopologySpec ts = topo;
  ts.seed = sub_seed(seed, 0);
  return build_topology(ts, n);
}

namespace {

Variant variant_of(Algo a) {
  switch (a) {
    case Algo::F: return Variant::F;
    case Algo::G: return Variant::G;
    case Algo::C: return Variant::C;
    default: throw ConfigError("not a FlexPD variant");
  }
}

void prepend_metadata(RunTrace& tr, std::uint64_t seed, const std::string& label, const Graph& g,
                      const ProblemSpec& prob) {
  std::vector<std::pair<std::string, std::string>> head;
  head.emplace_back("seed", std::to_string(seed));
  head.emplace_back("label", label);
  head.emplace_back("topology", to_string(g.tag));
  head.emplace_back("n", std::to_string(g.n));
  head.emplace_back("edges", std::to_string(g.edge_count()));
  head.emplace_back("problem", prob.kind == ProblemSpec::Kind::quadratic ? "quadratic"
                                                                         : "logistic");
  tr.metadata.insert(tr.metadata.begin(), head.begin(), head.end());
}

/// Shared scaffolding for the EXTRA and MM trace loops; mirrors the FlexPD
/// run loop's row schema and stop semantics (Lyapunov is not tracked).
struct BaselineLoop {
  const Network& net;
  const ObjectiveSet& obj;
  const StopRule& stop;
  const ReferenceSolution* ref;
  const TraceOptions& trace;
  RunTrace out;
  double dist0 = 0.0;
  bool recorded_last = true;
  double rel = std::numeric_limits<double>::quiet_NaN();

  BaselineLoop(const std::string& variant, double alpha, double beta, const Network& net_,
               const ObjectiveSet& obj_, const StopRule& stop_, const ReferenceSolution* ref_,
               const TraceOptions& trace_)
      : net(net_), obj(obj_), stop(stop_), ref(ref_), trace(trace_) {
    out.metadata.emplace_back("variant", variant);
    out.metadata.emplace_back("alpha", fmt17(alpha));
    out.metadata.emplace_back("beta", fmt17(beta));
    out.metadata.emplace_back("T", "1");
    out.metadata.emplace_back("certified", "false");
    if (ref) out.metadata.emplace_back("reference_grad_norm", fmt17(ref->grad_norm_achieved));
  }

  double rel_error_of(const AlgorithmState& st) const {
    if (!ref) return std::numeric_limits<double>::quiet_NaN();
    return dist0 > 0.0 ? (st.x - ref->x_star).norm() / dist0 : 0.0;
  }

  void record_row(const AlgorithmState& st) {
    RunTraceRow row;
    row.k = st.k;
    row.rel_error = rel;
    row.lyapunov = std::numeric_limits<double>::quiet_NaN();
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
  }

  void begin(const AlgorithmState& st) {
    dist0 = ref ? (st.x - ref->x_star).norm() : 0.0;
    rel = rel_error_of(st);
    record_row(st);
  }

  /// Returns true when the outer loop should stop.
  bool after_step(const AlgorithmState& st) {
    if (!st.x.allFinite() || st.x.norm() > 1e12) {
      out.diverged = true;
      out.note = "divergence: iterate non-finite or norm above 1e12 at k=" + std::to_string(st.k);
      rel = std::numeric_limits<double>::quiet_NaN();
      return true;
    }
    rel = rel_error_of(st);
    if (ref && out.iters_to_eps < 0 && rel < stop.epsilon) {
      out.iters_to_eps = st.k;
      out.grad_evals_at_eps = st.grad_evals;
      out.comm_rounds_at_eps = st.comm_rounds;
    }
    recorded_last = trace.record_every > 0 && st.k % trace.record_every == 0;
    if (recorded_last) record_row(st);
    const double stop_rel =
        stop.rel_tol > 0.0 ? std::min(stop.rel_tol, stop.epsilon) : stop.epsilon;
    if (ref && rel < stop_rel) return true;
    if (stop.kkt_tol > 0.0) {
      KKTResidual r = kkt_residual(st, net, obj);
      if (r.stationarity + r.feasibility <= stop.kkt_tol) return true;
    }
    return false;
  }

  RunTrace finish(const AlgorithmState& st) {
    if (!recorded_last && !out.rows.empty() && out.rows.back().k != st.k) record_row(st);
    out.total_iters = st.k;
    out.final_rel_error = rel;
    out.final_lyapunov = std::numeric_limits<double>::quiet_NaN();
    return std::move(out);
  }
};

RunTrace run_extra(const Network& net, const ObjectiveSet& obj, double alpha,
                   const StopRule& stop, const ReferenceSolution* ref,
                   const TraceOptions& trace) {
  const ExtraConfig cfg = make_extra_config(net.graph, alpha);
  ExtraState st = extra_initial_state(cfg, Eigen::MatrixXd::Zero(obj.n(), obj.p()));
  BaselineLoop loop("EXTRA", alpha, 0.0, net, obj, stop, ref, trace);
  loop.begin(st.s);
  for (long it = 0; it < stop.max_iters; ++it) {
    extra_step(st, cfg, obj);
    if (loop.after_step(st.s)) break;
  }
  return loop.finish(st.s);
}

RunTrace run_mm(const Network& net, const ObjectiveSet& obj, const MmConfig& mm,
                const StopRule& stop, const ReferenceSolution* ref, const TraceOptions& trace) {
  AlgorithmState st = initial_state(net, obj.p());
  BaselineLoop loop("MM", 0.0, mm.beta, net, obj, stop, ref, trace);
  loop.begin(st);
  for (long it = 0; it < stop.max_iters; ++it) {
    mm_step(st, net, obj, mm);
    if (loop.after_step(st)) break;
  }
  return loop.finish(st);
}

/// Log-uniform random search over the EXTRA stepsize, scored like
/// tuned_stepsize (iterations to target_rel, ties by final error).
double tune_extra_alpha(const Network& net, const ObjectiveSet& obj, const TunedSearch& cfg,
                        const ReferenceSolution& ref) {
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double lo = std::log(cfg.alpha_lo), hi = std::log(cfg.alpha_hi);
  StopRule stop;
  stop.epsilon = cfg.target_rel;
  stop.max_iters = cfg.max_iters;
  TraceOptions topt;
  topt.record_every = 0;
  topt.record_lyapunov = false;
  topt.record_kkt = false;

  const auto [m, L] = obj.constants();
  std::vector<double> cands{1.0 / L};  // textbook default is always a candidate
  for (int i = 1; i < cfg.budget; ++i) cands.push_back(std::exp(lo + (hi - lo) * unit(rng)));

  double best_alpha = cands.front();
  long best_iters = std::numeric_limits<long>::max();
  double best_final = std::numeric_limits<double>::infinity();
  bool any = false;
  for (double alpha : cands) {
    RunTrace tr = run_extra(net, obj, alpha, stop, &ref, topt);
    if (tr.diverged) continue;
    any = true;
    const long iters =
        tr.iters_to_eps >= 0 ? tr.iters_to_eps : std::numeric_limits<long>::max();
    if (iters < best_iters || (iters == best_iters && tr.final_rel_error < best_final)) {
      best_iters = iters;
      best_final = tr.final_rel_error;
      best_alpha = alpha;
    }
  }
  if (!any) return 1.0 / (m + L);  // conservative fallback
  return best_alpha;
}

/// The sweep-protocol stepsize: try the full certificate at beta = T; when T
/// sits outside the beta bound, fall back to the theorem's alpha formula with
/// the same margin and mark the run uncertified.
struct SweepStep {
  double alpha = 0.0;
  bool certified = false;
  std::optional<StepsizeCertificate> cert;
};

SweepStep sweep_stepsize_c(const Network& net, const ObjectiveSet& obj, int T,
                           const CertifyOptions& opts) {
  SweepStep st;
  CertifyOptions fixed = opts;
  fixed.fixed_beta = static_cast<double>(T);
  try {
    st.cert = certify_c(net, obj, T, fixed);
    st.alpha = st.cert->alpha;
    st.certified = true;
  } catch (const CertificateError&) {
    const auto [m, L] = obj.constants();
    const double eta4 = opts.eta4.value_or(m);
    st.alpha = opts.alpha_frac * alpha_bound_c(L, eta4, net.rho_B, T);
    st.certified = false;
  }
  return st;
}

RunTrace run_variant(const VariantSpec& v, const ExperimentConfig& cfg, const Graph& g,
                     const ObjectiveSet& obj, const Network& base_net,
                     const ReferenceSolution& ref) {
  const Eigen::MatrixXd x0 = Eigen::MatrixXd::Zero(obj.n(), obj.p());
  const auto [m, L] = obj.constants();

  if (v.algo == Algo::EXTRA) {
    double alpha = v.alpha;
    if (v.mode == StepMode::tuned) alpha = tune_extra_alpha(base_net, obj, v.tuned, ref);
    if (v.mode == StepMode::certificate)
      throw ConfigError("EXTRA has no stepsize certificate; use tuned or fixed");
    if (!(alpha > 0.0)) throw ConfigError("EXTRA requires a positive alpha");
    return run_extra(base_net, obj, alpha, cfg.stop, &ref, cfg.trace);
  }
  if (v.algo == Algo::MM) {
    if (v.mode == StepMode::certificate)
      throw ConfigError("MM has no stepsize certificate; use tuned or fixed");
    MmConfig mm = v.mm;
    if (v.mode == StepMode::tuned) {
      // Search over the dual stepsize with the same budget and scoring.
      std::mt19937_64 rng(v.tuned.seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double lo = std::log(v.tuned.beta_lo), hi = std::log(v.tuned.beta_hi);
      StopRule stop;
      stop.epsilon = v.tuned.target_rel;
      stop.max_iters = std::min<long>(v.tuned.max_iters, 200);
      TraceOptions topt;
      topt.record_every = 0;
      topt.record_lyapunov = false;
      topt.record_kkt = false;
      long best_iters = std::numeric_limits<long>::max();
      double best_final = std::numeric_limits<double>::infinity();
      for (int i = 0; i < v.tuned.budget; ++i) {
        MmConfig cand = v.mm;
        cand.beta = std::exp(lo + (hi - lo) * unit(rng));
        RunTrace tr = run_mm(base_net, obj, cand, stop, &ref, topt);
        if (tr.diverged) continue;
        const long iters =
            tr.iters_to_eps >= 0 ? tr.iters_to_eps : std::numeric_limits<long>::max();
        if (iters < best_iters || (iters == best_iters && tr.final_rel_error < best_final)) {
          best_iters = iters;
          best_final = tr.final_rel_error;
          mm = cand;
        }
      }
    }
    return run_mm(base_net, obj, mm, cfg.stop, &ref, cfg.trace);
  }

  const Variant var = variant_of(v.algo);
  switch (cfg.penalty.mode) {
    case PenaltySpec::Mode::coupled: {
      if (v.mode == StepMode::certificate) {
        auto [cert, vnet] = certify_coupled(var, g, obj, v.T, v.cert);
        return solve(var, vnet, obj, cert, x0, cfg.stop, &ref, cfg.trace);
      }
      if (v.mode == StepMode::tuned) {
        TunedSearch ts = v.tuned;
        ts.couple_gram = true;
        const TunedResult res = tuned_stepsize(var, base_net, obj, v.T, ts);
        const Network vnet = with_gram_penalty(base_net, res.beta);
        return solve_raw(var, vnet, obj, res.alpha, res.beta, v.T, x0, cfg.stop, &ref, cfg.trace);
      }
      const Network vnet = with_gram_penalty(base_net, v.beta);
      return solve_raw(var, vnet, obj, v.alpha, v.beta, v.T, x0, cfg.stop, &ref, cfg.trace);
    }
    case PenaltySpec::Mode::beta_equals_T: {
      if (v.mode != StepMode::certificate || var != Variant::C)
        throw ConfigError("beta_equals_T is the FlexPD-C sweep protocol (certificate mode)");
      const Network vnet = with_gram_penalty(base_net, static_cast<double>(v.T));
      const SweepStep st = sweep_stepsize_c(vnet, obj, v.T, v.cert);
      if (st.certified)
        return solve(var, vnet, obj, *st.cert, x0, cfg.stop, &ref, cfg.trace);
      RunTrace tr = solve_raw(var, vnet, obj, st.alpha, static_cast<double>(v.T), v.T, x0,
                              cfg.stop, &ref, cfg.trace);
      tr.note = "beta=T outside the certificate bound; theorem alpha formula used";
      return tr;
    }
    case PenaltySpec::Mode::fixed: {
      if (v.mode == StepMode::certificate) {
        const StepsizeCertificate cert = certify(var, base_net, obj, v.T, v.cert);
        return solve(var, base_net, obj, cert, x0, cfg.stop, &ref, cfg.trace);
      }
      if (v.mode == StepMode::tuned) {
        TunedSearch ts = v.tuned;
        ts.couple_gram = false;
        const TunedResult res = tuned_stepsize(var, base_net, obj, v.T, ts);
        return solve_raw(var, base_net, obj, res.alpha, res.beta, v.T, x0, cfg.stop, &ref,
                         cfg.trace);
      }
      return solve_raw(var, base_net, obj, v.alpha, v.beta, v.T, x0, cfg.stop, &ref, cfg.trace);
    }
  }
  throw ConfigError("unknown penalty mode");
}

std::string sanitize_filename(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return s;
}

const std::string* find_meta(const RunTrace& tr, const std::string& key) {
  for (const auto& [k, v] : tr.metadata)
    if (k == key) return &v;
  return nullptr;
}

}  // namespace

std::string to_string(Algo a) {
  switch (a) {
    case Algo::F: return "F";
    case Algo::G: return "G";
    case Algo::C: return "C";
    case Algo::EXTRA: return "EXTRA";
    case Algo::MM: return "MM";
  }
  return "?";
}

std::string VariantSpec::label() const {
  std::string s = to_string(algo);
  if (algo == Algo::F || algo == Algo::G || algo == Algo::C) s += "_T" + std::to_string(T);
  switch (mode) {
    case StepMode::certificate: s += "_certificate"; break;
    case StepMode::tuned: s += "_tuned"; break;
    case StepMode::fixed: s += "_fixed"; break;
  }
  return s;
}

std::vector<RunTrace> run_experiment(const ExperimentConfig& cfg) {
  if (cfg.variants.empty()) throw ConfigError("no variants configured");
  if (cfg.seeds.empty()) return {};

  Dataset ds;
  const Dataset* ds_ptr = nullptr;
  if (cfg.problem.kind == ProblemSpec::Kind::logistic) {
    ds = parse_libsvm_file(cfg.problem.dataset_path);
    ds_ptr = &ds;
  }

  const std::size_t V = cfg.variants.size();
  std::vector<RunTrace> out(cfg.seeds.size() * V);
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t si) {
    const std::uint64_t seed = cfg.seeds[si];
    const Graph g = instance_graph(cfg.topology, cfg.problem.n, seed);
    const ObjectiveSet obj = instance_objective(cfg.problem, seed, ds_ptr);
    const double base_beta =
        cfg.penalty.mode == PenaltySpec::Mode::fixed ? cfg.penalty.beta : 1.0;
    const Network base_net = make_network(g, base_beta);
    const ReferenceSolution ref = reference_solution(base_net, obj);
    for (std::size_t vi = 0; vi < V; ++vi) {
      const VariantSpec& v = cfg.variants[vi];
      RunTrace tr;
      try {
        tr = run_variant(v, cfg, g, obj, base_net, ref);
      } catch (const CertificateError& e) {
        tr.note = std::string("certificate: ") + e.what();
        tr.total_iters = 0;
        tr.final_rel_error = std::numeric_limits<double>::quiet_NaN();
      }
      prepend_metadata(tr, seed, v.label(), g, cfg.problem);
      out[si * V + vi] = std::move(tr);
    }
  });
  return out;
}

FastQuadC fast_quadratic_c(const Network& net, const ObjectiveSet& obj, double alpha, double beta,
                           int T, double epsilon, const ReferenceSolution& ref, long max_iters) {
  FastQuadC out;
  if (obj.kind() != ObjectiveKind::quadratic || obj.p() != 1) return out;
  const int n = net.graph.n;
  const int e = net.graph.edge_count();
  const int dim = n + e;

  // z = (x, lambda). One outer iteration is the affine map z+ = Phi z + cst:
  //   x+      = (U^T - alpha C D) x - alpha C A' lambda + alpha C D b
  //   lambda+ = lambda + beta A x+
  // with D = 2 diag(c) the quadratic gradient slope.
  const DerivedMatrices dm = derived_matrices(net, alpha, T);
  Eigen::MatrixXd Upow = Eigen::MatrixXd::Identity(n, n);
  for (int t = 0; t < T; ++t) Upow = Upow * dm.U;
  const Eigen::MatrixXd D = 2.0 * obj.quad_c().asDiagonal();
  const Eigen::MatrixXd Px = Upow - alpha * (dm.C * D);
  const Eigen::MatrixXd Pl = -alpha * (dm.C * net.A.transpose());

  Eigen::MatrixXd Phi(dim, dim);
  Phi.topLeftCorner(n, n) = Px;
  Phi.topRightCorner(n, e) = Pl;
  Phi.bottomLeftCorner(e, n) = beta * (net.A * Px);
  Phi.bottomRightCorner(e, e) = Eigen::MatrixXd::Identity(e, e) + beta * (net.A * Pl);

  Eigen::VectorXd zstar(dim);
  zstar.head(n) = ref.x_star.col(0);
  zstar.tail(e) = ref.lambda_star.col(0);
  // Sanity: z* must be a fixed point of the affine map.
  const Eigen::VectorXd cst_x = alpha * (dm.C * (D * obj.quad_b().col(0)));
  Eigen::VectorXd cst(dim);
  cst.head(n) = cst_x;
  cst.tail(e) = beta * (net.A * cst_x);
  const double fp_err = (Phi * zstar + cst - zstar).norm();
  if (fp_err > 1e-7 * (1.0 + zstar.norm())) return out;

  const Eigen::VectorXd w0 = -zstar;  // z0 = 0
  const double dist0 = w0.head(n).norm();
  if (!(dist0 > 0.0)) {
    out.iters_to_eps = 0;
    out.usable = true;
    return out;
  }

  Eigen::EigenSolver<Eigen::MatrixXd> es(Phi);
  if (es.info() != Eigen::Success) return out;
  const Eigen::MatrixXcd P = es.eigenvectors();
  const Eigen::VectorXcd lam = es.eigenvalues();
  const Eigen::VectorXcd coeff = P.fullPivLu().solve(w0.cast<std::complex<double>>());
  // Reconstruction check guards against ill-conditioned eigenvector bases.
  if ((P * coeff - w0.cast<std::complex<double>>()).norm() > 1e-8 * (1.0 + w0.norm()))
    return out;
  const Eigen::MatrixXcd Ptop = P.topRows(n);

  auto rel_at = [&](long k) {
    Eigen::VectorXcd scaled(dim);
    for (int i = 0; i < dim; ++i)
      scaled[i] = coeff[i] * std::pow(lam[i], static_cast<double>(k));
    return (Ptop * scaled).norm() / dist0;
  };

  // Contraction sanity on the modes that matter: any coefficient-carrying
  // mode above |lambda| = 1 means the fast path cannot certify convergence.
  for (int i = 0; i < dim; ++i)
    if (std::abs(lam[i]) > 1.0 + 1e-9 && std::abs(coeff[i]) > 1e-9 * w0.norm()) return out;

  if (rel_at(0) > 1.0 + 1e-6) return out;
  long hi = 1;
  while (rel_at(hi) >= epsilon) {
    if (hi >= max_iters) return out;  // not converged within the budget
    hi = std::min(hi * 2, max_iters);
  }
  long lo = hi / 2;  // rel(lo) >= epsilon (or lo == 0 with rel(0) = 1)
  while (hi - lo > 1) {
    const long mid = lo + (hi - lo) / 2;
    if (rel_at(mid) < epsilon)
      hi = mid;
    else
      lo = mid;
  }

  // rel(k) < eps is not monotone in k: rotating complex mode pairs can dip
  // below eps before the envelope does, and the loop's first crossing is the
  // earliest such k. Scan the tail window exactly (stepping the diagonalized
  // recursion forward is ~dim^2 per step), and probe coarsely below it.
  const long window = 4096;
  long first = hi;
  const long scan_from = std::max<long>(1, hi - window);
  {
    Eigen::VectorXcd v(dim);
    for (int i = 0; i < dim; ++i)
      v[i] = coeff[i] * std::pow(lam[i], static_cast<double>(scan_from));
    for (long k = scan_from; k < first; ++k) {
      if ((Ptop * v).norm() / dist0 < epsilon) {
        first = k;
        break;
      }
      for (int i = 0; i < dim; ++i) v[i] *= lam[i];
    }
  }
  if (scan_from > 1) {
    for (long gi = 0; gi < 512; ++gi) {
      const long k = 1 + (scan_from - 1) * gi / 512;
      if (k < first && rel_at(k) < epsilon) {
        long kk = k;
        int guard = 0;
        while (kk > 1 && ++guard < 8192 && rel_at(kk - 1) < epsilon) --kk;
        first = kk;
        break;
      }
    }
  }
  out.iters_to_eps = first;
  out.usable = true;
  return out;
}

namespace {

SweepSummaryRow sweep_cell(const ExperimentConfig& cfg, const TopologySpec& topo, int n, int T,
                           const Dataset* ds) {
  SweepSummaryRow row;
  row.topology = to_string(topo.tag);
  row.n = n;
  row.T = T;
  row.runs = static_cast<long>(cfg.seeds.size());

  double gap_sum = 0.0;
  double it_sum = 0.0, comm_sum = 0.0, msg_sum = 0.0, grad_sum = 0.0;
  long reached = 0;
  std::mutex mu;
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t si) {
    const std::uint64_t seed = cfg.seeds[si];
    ProblemSpec prob = cfg.problem;
    prob.n = n;
    const Graph g = instance_graph(topo, n, seed);
    const ObjectiveSet obj = instance_objective(prob, seed, ds);
    const Network vnet = make_network(g, static_cast<double>(T));
    const ReferenceSolution ref = reference_solution(vnet, obj);
    const Eigen::MatrixXd x0 = Eigen::MatrixXd::Zero(obj.n(), obj.p());
    CertifyOptions opts;
    const SweepStep st = sweep_stepsize_c(vnet, obj, T, opts);

    long iters = -1;
    const FastQuadC fast = fast_quadratic_c(vnet, obj, st.alpha, static_cast<double>(T), T,
                                            cfg.stop.epsilon, ref, cfg.stop.max_iters);
    if (fast.usable) {
      iters = fast.iters_to_eps;
    } else {
      const RunTrace tr =
          st.certified
              ? solve(Variant::C, vnet, obj, *st.cert, x0, cfg.stop, &ref, cfg.trace)
              : solve_raw(Variant::C, vnet, obj, st.alpha, static_cast<double>(T), T, x0,
                          cfg.stop, &ref, cfg.trace);
      iters = tr.iters_to_eps;
    }
    const double gap = spectral_constants(consensus_matrix(g)).spectral_gap;

    std::lock_guard<std::mutex> lk(mu);
    gap_sum += gap;
    row.all_certified = row.all_certified && st.certified;
    if (iters >= 0) {
      ++reached;
      // FlexPD-C counters per outer iteration: n gradients, T comm rounds.
      it_sum += static_cast<double>(iters);
      comm_sum += static_cast<double>(iters) * T;
      msg_sum += static_cast<double>(iters) * T * 2.0 * g.edge_count();
      grad_sum += static_cast<double>(iters) * g.n;
    }
  });
  row.reached = reached;
  row.spectral_gap = cfg.seeds.empty() ? 0.0 : gap_sum / static_cast<double>(cfg.seeds.size());
  if (reached > 0) {
    row.mean_iters = it_sum / reached;
    row.mean_comm_rounds = comm_sum / reached;
    row.mean_messages = msg_sum / reached;
    row.mean_grad_evals = grad_sum / reached;
  }
  return row;
}

const Dataset* sweep_dataset(const ExperimentConfig& cfg, Dataset& storage) {
  if (cfg.problem.kind != ProblemSpec::Kind::logistic) return nullptr;
  storage = parse_libsvm_file(cfg.problem.dataset_path);
  return &storage;
}

}  // namespace

std::vector<SweepSummaryRow> topology_sweep(const ExperimentConfig& cfg,
                                            const std::vector<TopologySpec>& topologies,
                                            const std::vector<int>& Ts) {
  Dataset ds;
  const Dataset* ds_ptr = sweep_dataset(cfg, ds);
  std::vector<SweepSummaryRow> rows;
  for (const TopologySpec& topo : topologies)
    for (int T : Ts) rows.push_back(sweep_cell(cfg, topo, cfg.problem.n, T, ds_ptr));
  return rows;
}

std::vector<SweepSummaryRow> size_sweep(const ExperimentConfig& cfg, const std::vector<int>& sizes,
                                        const std::vector<int>& Ts) {
  Dataset ds;
  const Dataset* ds_ptr = sweep_dataset(cfg, ds);
  std::vector<SweepSummaryRow> rows;
  for (int n : sizes)
    for (int T : Ts) rows.push_back(sweep_cell(cfg, cfg.topology, n, T, ds_ptr));
  return rows;
}

void emit_csv(const RunTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_csv: cannot open " + path);
  out.precision(17);
  for (const auto& [k, v] : trace.metadata) {
    std::string flat = v;
    for (std::size_t pos = 0; (pos = flat.find('\n', pos)) != std::string::npos; pos += 2)
      flat.replace(pos, 1, "; ");
    out << "# " << k << "=" << flat << "\n";
  }
  if (!trace.note.empty()) out << "# note=" << trace.note << "\n";
  if (trace.diverged) out << "# diverged=true\n";
  if (trace.lyapunov_violation) out << "# lyapunov_violation=true\n";
  out << "k,rel_error,lyapunov,grad_evals,comm_rounds,kkt_stat,kkt_feas\n";
  for (const RunTraceRow& r : trace.rows)
    out << r.k << ',' << r.rel_error << ',' << r.lyapunov << ',' << r.grad_evals << ','
        << r.comm_rounds << ',' << r.kkt_stat << ',' << r.kkt_feas << "\n";
  if (!out) throw std::runtime_error("emit_csv: write failed for " + path);
}

void emit_csv(const std::vector<RunTrace>& traces, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::size_t idx = 0;
  for (const RunTrace& tr : traces) {
    const std::string* seed = find_meta(tr, "seed");
    const std::string* label = find_meta(tr, "label");
    std::string name = "run";
    if (seed) name = "seed" + *seed;
    if (label) name += "_" + sanitize_filename(*label);
    if (!seed && !label) name += std::to_string(idx);
    emit_csv(tr, dir + "/" + name + ".csv");
    ++idx;
  }
}

std::string summary_csv(const std::vector<SweepSummaryRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "topology,n,T,spectral_gap,runs,reached,mean_iters,mean_comm_rounds,mean_messages,"
        "mean_grad_evals,all_certified\n";
  for (const SweepSummaryRow& r : rows)
    os << r.topology << ',' << r.n << ',' << r.T << ',' << r.spectral_gap << ',' << r.runs << ','
       << r.reached << ',' << r.mean_iters << ',' << r.mean_comm_rounds << ',' << r.mean_messages
       << ',' << r.mean_grad_evals << ',' << (r.all_certified ? "true" : "false") << "\n";
  return os.str();
}

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

TopologyTag tag_from(const std::string& s) {
  if (s == "path") return TopologyTag::path;
  if (s == "ring") return TopologyTag::ring;
  if (s == "k_regular") return TopologyTag::k_regular;
  if (s == "erdos_renyi") return TopologyTag::erdos_renyi;
  if (s == "complete") return TopologyTag::complete;
  throw ConfigError("unknown topology tag '" + s + "'");
}

Algo algo_from(const std::string& s) {
  if (s == "F") return Algo::F;
  if (s == "G") return Algo::G;
  if (s == "C") return Algo::C;
  if (s == "EXTRA") return Algo::EXTRA;
  if (s == "MM") return Algo::MM;
  throw ConfigError("unknown algo '" + s + "'");
}

StepMode mode_from(const std::string& s) {
  if (s == "certificate") return StepMode::certificate;
  if (s == "tuned") return StepMode::tuned;
  if (s == "fixed") return StepMode::fixed;
  throw ConfigError("unknown step mode '" + s + "'");
}

}  // namespace

std::vector<std::uint64_t> parse_seed_range(const std::string& s) {
  auto parse_u64 = [&](const std::string& t) -> std::uint64_t {
    std::size_t pos = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(t, &pos);
    } catch (const std::exception&) {
      throw ConfigError("invalid seed '" + t + "'");
    }
    if (pos != t.size()) throw ConfigError("invalid seed '" + t + "'");
    return v;
  };
  const std::size_t dots = s.find("..");
  if (dots == std::string::npos) return {parse_u64(s)};
  const std::uint64_t a = parse_u64(s.substr(0, dots));
  const std::uint64_t b = parse_u64(s.substr(dots + 2));
  if (b < a) throw ConfigError("seed range '" + s + "' is decreasing");
  if (b - a > 1000000) throw ConfigError("seed range '" + s + "' is implausibly large");
  std::vector<std::uint64_t> out;
  out.reserve(b - a + 1);
  for (std::uint64_t v = a; v <= b; ++v) out.push_back(v);
  return out;
}

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;

  if (j.contains("problem")) {
    const json& p = j.at("problem");
    const std::string kind = get_or<std::string>(p, "kind", "quadratic");
    if (kind == "quadratic")
      cfg.problem.kind = ProblemSpec::Kind::quadratic;
    else if (kind == "logistic")
      cfg.problem.kind = ProblemSpec::Kind::logistic;
    else
      throw ConfigError("unknown problem kind '" + kind + "'");
    cfg.problem.n = get_or<int>(p, "n", cfg.problem.n);
    if (p.contains("coef")) {
      const auto c = p.at("coef").get<std::vector<int>>();
      if (c.size() != 2) throw ConfigError("problem.coef must be [lo, hi]");
      cfg.problem.coef_lo = c[0];
      cfg.problem.coef_hi = c[1];
    }
    if (p.contains("offset")) {
      const auto c = p.at("offset").get<std::vector<int>>();
      if (c.size() != 2) throw ConfigError("problem.offset must be [lo, hi]");
      cfg.problem.offset_lo = c[0];
      cfg.problem.offset_hi = c[1];
    }
    cfg.problem.dataset_path = get_or<std::string>(p, "dataset", "");
    cfg.problem.kappa = get_or<double>(p, "kappa", cfg.problem.kappa);
    if (cfg.problem.kind == ProblemSpec::Kind::logistic && cfg.problem.dataset_path.empty())
      throw ConfigError("logistic problem requires problem.dataset");
  }
  if (cfg.problem.n < 2) throw ConfigError("problem.n must be at least 2");
  if (cfg.problem.coef_lo < 1 || cfg.problem.coef_hi < cfg.problem.coef_lo)
    throw ConfigError("problem.coef range must satisfy 1 <= lo <= hi");

  if (j.contains("topology")) {
    const json& t = j.at("topology");
    cfg.topology.tag = tag_from(get_or<std::string>(t, "tag", "ring"));
    cfg.topology.k = get_or<int>(t, "k", cfg.topology.k);
    cfg.topology.prob = get_or<double>(t, "prob", cfg.topology.prob);
  }

  if (j.contains("penalty")) {
    const json& p = j.at("penalty");
    const std::string mode = get_or<std::string>(p, "mode", "coupled");
    if (mode == "coupled")
      cfg.penalty.mode = PenaltySpec::Mode::coupled;
    else if (mode == "beta_equals_T")
      cfg.penalty.mode = PenaltySpec::Mode::beta_equals_T;
    else if (mode == "fixed")
      cfg.penalty.mode = PenaltySpec::Mode::fixed;
    else
      throw ConfigError("unknown penalty mode '" + mode + "'");
    cfg.penalty.beta = get_or<double>(p, "beta", cfg.penalty.beta);
    if (cfg.penalty.mode == PenaltySpec::Mode::fixed && !(cfg.penalty.beta > 0.0))
      throw ConfigError("penalty.beta must be positive");
  }

  if (!j.contains("variants") || !j.at("variants").is_array() || j.at("variants").empty())
    throw ConfigError("config requires a non-empty variants array");
  for (const json& vj : j.at("variants")) {
    VariantSpec v;
    v.algo = algo_from(get_or<std::string>(vj, "algo", "C"));
    v.T = get_or<int>(vj, "T", 1);
    if (v.T < 1) throw ConfigError("variant T must be at least 1");
    v.mode = mode_from(get_or<std::string>(vj, "mode", "certificate"));
    if (vj.contains("eta1")) v.cert.eta1 = vj.at("eta1").get<double>();
    if (vj.contains("eta2")) v.cert.eta2 = vj.at("eta2").get<double>();
    if (vj.contains("eta3")) v.cert.eta3 = vj.at("eta3").get<double>();
    if (vj.contains("eta4")) v.cert.eta4 = vj.at("eta4").get<double>();
    v.cert.beta_frac = get_or<double>(vj, "beta_frac", v.cert.beta_frac);
    v.cert.alpha_frac = get_or<double>(vj, "alpha_frac", v.cert.alpha_frac);
    v.cert.delta_frac = get_or<double>(vj, "delta_frac", v.cert.delta_frac);
    if (vj.contains("cert_beta")) v.cert.fixed_beta = vj.at("cert_beta").get<double>();
    v.tuned.budget = get_or<int>(vj, "budget", v.tuned.budget);
    v.tuned.seed = get_or<std::uint64_t>(vj, "tuned_seed", v.tuned.seed);
    v.tuned.target_rel = get_or<double>(vj, "target_rel", v.tuned.target_rel);
    v.tuned.max_iters = get_or<long>(vj, "tuned_max_iters", v.tuned.max_iters);
    v.tuned.alpha_lo = get_or<double>(vj, "alpha_lo", v.tuned.alpha_lo);
    v.tuned.alpha_hi = get_or<double>(vj, "alpha_hi", v.tuned.alpha_hi);
    v.tuned.beta_lo = get_or<double>(vj, "beta_lo", v.tuned.beta_lo);
    v.tuned.beta_hi = get_or<double>(vj, "beta_hi", v.tuned.beta_hi);
    if (!(v.tuned.alpha_lo > 0.0) || !(v.tuned.alpha_hi >= v.tuned.alpha_lo) ||
        !(v.tuned.beta_lo > 0.0) || !(v.tuned.beta_hi >= v.tuned.beta_lo))
      throw ConfigError("tuned search box must satisfy 0 < lo <= hi for alpha and beta");
    v.alpha = get_or<double>(vj, "alpha", v.alpha);
    v.beta = get_or<double>(vj, "beta", v.beta);
    v.mm.beta = get_or<double>(vj, "mm_beta", v.mm.beta);
    v.mm.inner_tol = get_or<double>(vj, "mm_inner_tol", v.mm.inner_tol);
    v.mm.inner_max = get_or<long>(vj, "mm_inner_max", v.mm.inner_max);
    if ((v.algo == Algo::EXTRA || v.algo == Algo::MM) && v.mode == StepMode::certificate)
      throw ConfigError(to_string(v.algo) + " has no stepsize certificate; use tuned or fixed");
    if (v.mode == StepMode::fixed && v.algo != Algo::MM && !(v.alpha > 0.0))
      throw ConfigError("fixed mode requires a positive alpha");
    cfg.variants.push_back(std::move(v));
  }

  if (j.contains("stop")) {
    const json& s = j.at("stop");
    cfg.stop.epsilon = get_or<double>(s, "epsilon", cfg.stop.epsilon);
    cfg.stop.rel_tol = get_or<double>(s, "rel_tol", cfg.stop.rel_tol);
    cfg.stop.kkt_tol = get_or<double>(s, "kkt_tol", cfg.stop.kkt_tol);
    cfg.stop.max_iters = get_or<long>(s, "max_iters", cfg.stop.max_iters);
    if (!(cfg.stop.epsilon > 0.0)) throw ConfigError("stop.epsilon must be positive");
    if (cfg.stop.max_iters < 0) throw ConfigError("stop.max_iters must be non-negative");
  }

  if (j.contains("trace")) {
    const json& t = j.at("trace");
    cfg.trace.record_every = get_or<long>(t, "record_every", cfg.trace.record_every);
    cfg.trace.record_lyapunov = get_or<bool>(t, "lyapunov", cfg.trace.record_lyapunov);
    cfg.trace.record_kkt = get_or<bool>(t, "kkt", cfg.trace.record_kkt);
    if (cfg.trace.record_every < 0) throw ConfigError("trace.record_every must be >= 0");
  }

  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    if (s.is_string())
      cfg.seeds = parse_seed_range(s.get<std::string>());
    else if (s.is_array())
      cfg.seeds = s.get<std::vector<std::uint64_t>>();
    else
      throw ConfigError("seeds must be a \"a..b\" string or an array");
  } else {
    cfg.seeds = {0};
  }
  cfg.threads = get_or<int>(j, "threads", 0);
  if (cfg.threads < 0) throw ConfigError("threads must be >= 0");
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config_json(os.str());
}

}  // namespace flexpd
