// Simulate one synthetic city with known coefficients, fit the FE Poisson
// model and print estimates next to the truth. Then turn the estimates into
// effect sizes.
//
//   sample_simulate_and_fit [seed] [n_cells] [n_days]

#include <cstdio>
#include <cstdlib>
#include <string>

#include "blitzeval/effects.hpp"
#include "blitzeval/simkit.hpp"

using namespace blitzeval;

int main(int argc, char** argv) {
  DGPConfig c;
  if (argc > 1) c.seed = std::strtoull(argv[1], nullptr, 10);
  if (argc > 2) c.n_cells = std::atoi(argv[2]);
  if (argc > 3) c.n_days = std::atoi(argv[3]);
  try {
    c.validate();
    auto ds = simulate(c);
    std::vector<int> lags;
    const auto terms = recovery_terms(c, {}, &lags);
    auto fit = fit_synthetic(ds, terms, lags, {});
    std::printf("%zu cells, %d days, %zu rows used, converged %s\n", ds.geometry->grid.size(), c.n_days, fit.n_obs_used,
                fit.converged ? "yes" : "no");
    std::printf("%-14s %10s %10s %10s\n", "term", "truth", "estimate", "cluster se");
    const auto truth = c.truth();
    for (const auto& t : terms) {
      auto it = truth.find(t);
      std::printf("%-14s %10.4f %10.4f %10.4f\n", t.c_str(), it == truth.end() ? 0.0 : it->second, fit.coefficient(t),
                  fit.se(t));
    }
    const double d = fit.coefficient("blitz"), th = fit.coefficient("blitz_sq");
    std::printf("\naverage effect of a blitz: %.2f%%\n", pct_effect(d, th));
    std::printf("spillover per neighbor:    %.3f%%\n", spatial_effect(fit.coefficient("w_blitz"), ds.geometry->weights.avg_neighbor_count));
    try {
      std::printf("optimal duration:          %.2f h\n", optimal_duration(d, th));
    } catch (const NoInteriorMinimum& e) {
      std::printf("optimal duration:          none (%s)\n", e.what());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
