// Command-line front end: run experiments from a JSON config, reproduce the
// topology/size sweeps, or print stepsize certificates.
//
// Exit codes: 0 success, 1 config error (including infeasible certificates),
// 2 divergence or Lyapunov violation in a certificate run, 3 I/O failure.
#include "flexpd/experiments.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using flexpd::ConfigError;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

flexpd::ExperimentConfig config_from(const std::string& path, const std::string& seeds,
                                     int threads) {
  flexpd::ExperimentConfig cfg = flexpd::parse_config_json(slurp(path));
  if (!seeds.empty()) cfg.seeds = flexpd::parse_seed_range(seeds);
  if (threads >= 0) cfg.threads = threads;
  if (cfg.problem.kind == flexpd::ProblemSpec::Kind::logistic &&
      !std::filesystem::exists(cfg.problem.dataset_path))
    throw IoError("dataset file not found: " + cfg.problem.dataset_path);
  return cfg;
}

/// Optional "sweep" block: topologies (tag/k/prob objects), T values, sizes.
struct SweepPlan {
  std::vector<flexpd::TopologySpec> topologies;
  std::vector<int> Ts{1, 2, 3, 4};
  std::vector<int> sizes{5, 10, 15, 20, 25, 30};
};

SweepPlan sweep_plan_from(const std::string& path) {
  using nlohmann::json;
  SweepPlan plan;
  json j;
  try {
    j = json::parse(slurp(path));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.contains("sweep")) return plan;
  const json& s = j.at("sweep");
  try {
    if (s.contains("T")) plan.Ts = s.at("T").get<std::vector<int>>();
    if (s.contains("sizes")) plan.sizes = s.at("sizes").get<std::vector<int>>();
    if (s.contains("topologies")) {
      plan.topologies.clear();
      for (const json& t : s.at("topologies")) {
        flexpd::TopologySpec ts;
        const std::string tag = t.at("tag").get<std::string>();
        if (tag == "path")
          ts.tag = flexpd::TopologyTag::path;
        else if (tag == "ring")
          ts.tag = flexpd::TopologyTag::ring;
        else if (tag == "k_regular")
          ts.tag = flexpd::TopologyTag::k_regular;
        else if (tag == "erdos_renyi")
          ts.tag = flexpd::TopologyTag::erdos_renyi;
        else if (tag == "complete")
          ts.tag = flexpd::TopologyTag::complete;
        else
          throw ConfigError("unknown topology tag '" + tag + "' in sweep block");
        if (t.contains("k")) ts.k = t.at("k").get<int>();
        if (t.contains("prob")) ts.prob = t.at("prob").get<double>();
        plan.topologies.push_back(ts);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sweep block: ") + e.what());
  }
  for (int T : plan.Ts)
    if (T < 1) throw ConfigError("sweep.T entries must be >= 1");
  for (int n : plan.sizes)
    if (n < 2) throw ConfigError("sweep.sizes entries must be >= 2");
  return plan;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

const std::string* meta_of(const flexpd::RunTrace& tr, const std::string& key) {
  for (const auto& [k, v] : tr.metadata)
    if (k == key) return &v;
  return nullptr;
}

int report_runs(const std::vector<flexpd::RunTrace>& traces) {
  int rc = 0;
  for (const auto& tr : traces) {
    const std::string* seed = meta_of(tr, "seed");
    const std::string* label = meta_of(tr, "label");
    const std::string* certified = meta_of(tr, "certified");
    std::cout << "seed=" << (seed ? *seed : "?") << " variant=" << (label ? *label : "?")
              << " iters_to_eps=" << tr.iters_to_eps << " total_iters=" << tr.total_iters
              << " final_rel=" << tr.final_rel_error;
    if (tr.diverged) std::cout << " DIVERGED";
    if (tr.lyapunov_violation) std::cout << " LYAPUNOV_VIOLATION";
    if (!tr.note.empty()) std::cout << " note=\"" << tr.note << "\"";
    std::cout << "\n";
    const bool cert_run = certified && *certified == "true";
    if (cert_run && (tr.diverged || tr.lyapunov_violation)) rc = 2;
  }
  return rc;
}

int cmd_run(const std::string& config, const std::string& out_dir, const std::string& seeds,
            int threads) {
  const flexpd::ExperimentConfig cfg = config_from(config, seeds, threads);
  const std::vector<flexpd::RunTrace> traces = flexpd::run_experiment(cfg);
  if (!out_dir.empty()) flexpd::emit_csv(traces, out_dir);
  return report_runs(traces);
}

int cmd_sweep_topology(const std::string& config, const std::string& out_dir,
                       const std::string& seeds, int threads) {
  const flexpd::ExperimentConfig cfg = config_from(config, seeds, threads);
  SweepPlan plan = sweep_plan_from(config);
  if (plan.topologies.empty()) {
    plan.topologies = {{flexpd::TopologyTag::path},
                       {flexpd::TopologyTag::ring},
                       {flexpd::TopologyTag::k_regular, 4},
                       {flexpd::TopologyTag::erdos_renyi, 4, 0.9178},
                       {flexpd::TopologyTag::complete}};
  }
  const auto rows = flexpd::topology_sweep(cfg, plan.topologies, plan.Ts);
  const std::string csv = flexpd::summary_csv(rows);
  if (out_dir.empty()) {
    std::cout << csv;
  } else {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/summary_topology.csv", csv);
  }
  return 0;
}

int cmd_sweep_size(const std::string& config, const std::string& out_dir,
                   const std::string& seeds, int threads) {
  const flexpd::ExperimentConfig cfg = config_from(config, seeds, threads);
  const SweepPlan plan = sweep_plan_from(config);
  const auto rows = flexpd::size_sweep(cfg, plan.sizes, plan.Ts);
  const std::string csv = flexpd::summary_csv(rows);
  if (out_dir.empty()) {
    std::cout << csv;
  } else {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/summary_size.csv", csv);
  }
  return 0;
}

int cmd_certify(const std::string& config, const std::string& seeds, int threads) {
  const flexpd::ExperimentConfig cfg = config_from(config, seeds, threads);
  const std::uint64_t seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();

  const flexpd::Graph g = flexpd::instance_graph(cfg.topology, cfg.problem.n, seed);

  flexpd::Dataset ds;
  const flexpd::Dataset* ds_ptr = nullptr;
  if (cfg.problem.kind == flexpd::ProblemSpec::Kind::logistic) {
    ds = flexpd::parse_libsvm_file(cfg.problem.dataset_path);
    ds_ptr = &ds;
  }

  bool any = false;
  for (const flexpd::VariantSpec& v : cfg.variants) {
    if (v.algo != flexpd::Algo::F && v.algo != flexpd::Algo::G && v.algo != flexpd::Algo::C) {
      std::cout << "# " << v.label() << ": no certificate defined\n";
      continue;
    }
    const flexpd::Variant var = v.algo == flexpd::Algo::F   ? flexpd::Variant::F
                                : v.algo == flexpd::Algo::G ? flexpd::Variant::G
                                                            : flexpd::Variant::C;
    // Same per-seed instancing as run_experiment.
    flexpd::StepsizeCertificate cert;
    const flexpd::ObjectiveSet obj = flexpd::instance_objective(cfg.problem, seed, ds_ptr);
    switch (cfg.penalty.mode) {
      case flexpd::PenaltySpec::Mode::coupled: {
        auto [c, net] = flexpd::certify_coupled(var, g, obj, v.T, v.cert);
        cert = c;
        break;
      }
      case flexpd::PenaltySpec::Mode::beta_equals_T: {
        flexpd::CertifyOptions opts = v.cert;
        opts.fixed_beta = static_cast<double>(v.T);
        cert = flexpd::certify(var, flexpd::make_network(g, static_cast<double>(v.T)), obj, v.T,
                               opts);
        break;
      }
      case flexpd::PenaltySpec::Mode::fixed: {
        cert = flexpd::certify(var, flexpd::make_network(g, cfg.penalty.beta), obj, v.T, v.cert);
        break;
      }
    }
    std::cout << "# " << v.label() << "\n" << cert.text() << "\n\n";
    any = true;
  }
  if (!any) throw ConfigError("no FlexPD variants in config; nothing to certify");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FlexPD consensus optimization experiments"};
  app.require_subcommand(1);

  std::string config, out_dir, seeds;
  int threads = -1;

  auto add_common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config", config, "JSON config file")->required();
    if (with_out) sub->add_option("--out", out_dir, "output directory for CSV files");
    sub->add_option("--seeds", seeds, "seed range a..b (overrides the config)");
    sub->add_option("--threads", threads, "worker thread count (0 = hardware)");
  };

  CLI::App* run = app.add_subcommand("run", "run the configured variants, one CSV per trace");
  add_common(run, true);
  CLI::App* st = app.add_subcommand("sweep-topology", "FlexPD-C across topologies (beta = T)");
  add_common(st, true);
  CLI::App* ss = app.add_subcommand("sweep-size", "FlexPD-C across network sizes (beta = T)");
  add_common(ss, true);
  CLI::App* ct = app.add_subcommand("certify", "print stepsize certificates for the config");
  add_common(ct, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return cmd_run(config, out_dir, seeds, threads);
    if (st->parsed()) return cmd_sweep_topology(config, out_dir, seeds, threads);
    if (ss->parsed()) return cmd_sweep_size(config, out_dir, seeds, threads);
    if (ct->parsed()) return cmd_certify(config, seeds, threads);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const flexpd::CertificateError& e) {
    std::cerr << "certificate error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    // Library precondition guards (stepsizes, shapes, topology parameters)
    // only trip here on bad configured values, so report them as such.
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
