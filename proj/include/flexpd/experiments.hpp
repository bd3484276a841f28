#pragma once

#include "flexpd/baselines.hpp"
#include "flexpd/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace flexpd {

enum class Algo { F, G, C, EXTRA, MM };

std::string to_string(Algo a);

struct ProblemSpec {
  enum class Kind { quadratic, logistic };
  Kind kind = Kind::quadratic;
  int n = 10;
  // quadratic: c_i, b_i random integers from the inclusive ranges below
  int coef_lo = 1, coef_hi = 1000;
  int offset_lo = 1, offset_hi = 100;
  // logistic
  std::string dataset_path;
  double kappa = 1.0;
};

enum class StepMode { certificate, tuned, fixed };

struct VariantSpec {
  Algo algo = Algo::C;
  int T = 1;
  StepMode mode = StepMode::certificate;
  CertifyOptions cert;
  TunedSearch tuned;
  double alpha = 0.0, beta = 0.0;  // fixed mode; alpha doubles as the EXTRA stepsize
  MmConfig mm;
  std::string label() const;
};

struct PenaltySpec {
  enum class Mode {
    coupled,        // B = beta A'A with the variant's dual stepsize
    beta_equals_T,  // beta = T, alpha from the C-variant formula (sweep protocol)
    fixed           // B = beta * A'A with the beta below
  };
  Mode mode = Mode::coupled;
  double beta = 1.0;
};

struct ExperimentConfig {
  ProblemSpec problem;
  TopologySpec topology;
  PenaltySpec penalty;
  std::vector<VariantSpec> variants;
  StopRule stop;
  TraceOptions trace;
  std::vector<std::uint64_t> seeds;
  int threads = 0;  // 0 = hardware concurrency
};

/// Deterministic per-seed problem instancing (sub-streams of `seed` drive the
/// graph, the quadratic coefficients, and the dataset partition).
Graph instance_graph(const TopologySpec& topo, int n, std::uint64_t seed);
ObjectiveSet instance_objective(const ProblemSpec& prob, std::uint64_t seed,
                                const Dataset* ds = nullptr);

/// One trace per (seed, variant), ordered seed-major. The reference solution
/// is computed once per seed and shared across variants. Certificate
/// rejections (e.g. FlexPD-G with rho(B) >= m) mark the trace's note and do
/// not abort other runs.
std::vector<RunTrace> run_experiment(const ExperimentConfig& cfg);

struct SweepSummaryRow {
  std::string topology;
  int n = 0;
  int T = 1;
  double spectral_gap = 0.0;
  long runs = 0;
  long reached = 0;  // runs that hit the epsilon threshold
  double mean_iters = 0.0;
  double mean_comm_rounds = 0.0;
  double mean_messages = 0.0;  // comm_rounds * 2|E| (per-agent message count)
  double mean_grad_evals = 0.0;
  bool all_certified = true;  // beta bound held on every seed
};

/// Fig-2b protocol: fixed n, FlexPD-C across topologies and T values,
/// beta = T, alpha from the theorem formula at each seed.
std::vector<SweepSummaryRow> topology_sweep(const ExperimentConfig& cfg,
                                            const std::vector<TopologySpec>& topologies,
                                            const std::vector<int>& Ts);

/// Fig-2a protocol: 4-regular graphs across network sizes.
std::vector<SweepSummaryRow> size_sweep(const ExperimentConfig& cfg,
                                        const std::vector<int>& sizes,
                                        const std::vector<int>& Ts);

/// Exact linear-recursion evaluation of FlexPD-C on a quadratic objective:
/// the iteration is affine in (x, lambda), so the first iteration with
/// rel_error < epsilon is found from the eigendecomposition of the iteration
/// matrix instead of stepping the loop. Returns usable = false when the
/// decomposition is unreliable (callers fall back to the loop).
struct FastQuadC {
  long iters_to_eps = -1;
  bool usable = false;
};
FastQuadC fast_quadratic_c(const Network& net, const ObjectiveSet& obj, double alpha, double beta,
                           int T, double epsilon, const ReferenceSolution& ref, long max_iters);

void emit_csv(const RunTrace& trace, const std::string& path);
/// One file per trace under dir, named from the trace metadata.
void emit_csv(const std::vector<RunTrace>& traces, const std::string& dir);
std::string summary_csv(const std::vector<SweepSummaryRow>& rows);

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// "a..b" (inclusive) or a single "a".
std::vector<std::uint64_t> parse_seed_range(const std::string& s);

}  // namespace flexpd
