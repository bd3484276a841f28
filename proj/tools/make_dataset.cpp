// Generates the synthetic binary-classification dataset shipped under data/:
// 768 samples, 8 features scaled to [-1, 1], labels from a fixed linear
// teacher with label noise. LIBSVM text format, deterministic per seed.
//
// Feature columns are deliberately anisotropic (log-spaced scales spanning
// ~1.5 orders of magnitude), share a latent factor, and carry offsets, so the
// data Gram has a spread spectrum like scaled real-world tabular sets do.
#include "CLI11.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <vector>

namespace {

// splitmix64; used directly so the file does not depend on library RNG
// implementation details.
std::uint64_t mix(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double unit(std::uint64_t& state) {  // uniform in [0, 1)
  return static_cast<double>(mix(state) >> 11) * 0x1.0p-53;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic LIBSVM dataset generator"};
  std::string out = "data/diabetes_scale_synth.libsvm";
  int samples = 768, features = 8;
  std::uint64_t seed = 42;
  app.add_option("--out", out, "output path");
  app.add_option("--samples", samples, "sample count")->check(CLI::PositiveNumber);
  app.add_option("--features", features, "feature count")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  std::uint64_t state = seed;
  std::vector<double> scale(features), offset(features), couple(features), teacher(features);
  for (int jf = 0; jf < features; ++jf) {
    // Column scales decay log-linearly to 0.04 of the first column's.
    scale[jf] = features > 1 ? std::pow(0.04, static_cast<double>(jf) / (features - 1)) : 1.0;
    offset[jf] = 0.3 * (2.0 * unit(state) - 1.0);
    couple[jf] = (jf % 2 == 0) ? 0.6 : 0.0;  // even columns load on the latent factor
    // Teacher balanced against the scales so every column carries label signal.
    teacher[jf] = (2.0 * unit(state) - 1.0) / scale[jf];
  }

  std::ofstream os(out);
  if (!os) {
    std::cerr << "cannot open " << out << "\n";
    return 3;
  }
  os << "# synthetic logistic-regression data: " << samples << " samples, " << features
     << " features in [-1, 1], seed " << seed << "\n";
  char buf[64];
  for (int i = 0; i < samples; ++i) {
    std::vector<double> x(features);
    double score = 0.0;
    const double latent = 2.0 * unit(state) - 1.0;
    for (int jf = 0; jf < features; ++jf) {
      const double own = 2.0 * unit(state) - 1.0;
      const double raw =
          scale[jf] * (offset[jf] + 0.7 * ((1.0 - couple[jf]) * own + couple[jf] * latent));
      // Round to 6 decimals so the text file is the exact dataset.
      x[jf] = std::round(raw * 1e6) / 1e6;
      score += teacher[jf] * x[jf];
    }
    // Logistic teacher with moderate noise: flip probability sigma(-4|score|).
    const double flip = 1.0 / (1.0 + std::exp(4.0 * std::abs(score)));
    int label = score >= 0.0 ? 1 : -1;
    if (unit(state) < flip) label = -label;
    os << label;
    for (int jf = 0; jf < features; ++jf) {
      std::snprintf(buf, sizeof buf, "%.6f", x[jf]);
      os << ' ' << (jf + 1) << ':' << buf;
    }
    os << "\n";
  }
  if (!os) {
    std::cerr << "write failed for " << out << "\n";
    return 3;
  }
  return 0;
}
