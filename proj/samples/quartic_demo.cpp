// Integrates the quartic example for a few inertia values and prints where
// each run ends up and when it switches between minimum trajectories.

#include "tvopt/certify.hpp"

#include <cstdio>

int main() {
  using namespace tvopt;
  const double b = 5.0;
  const auto p = builtin_quartic(b);
  const auto minima = quartic_trajectories(b);
  for (double alpha : {0.1, 0.3, 0.8}) {
    FlowConfig cfg;
    cfg.alpha = alpha;
    cfg.dt = 1e-3;
    const auto rec = integrate_pode(p, Vec::Constant(1, -2.0), 0.0, 4 * M_PI, cfg);
    const Sample& end = rec.samples.back();
    std::printf("alpha=%.2f  x(4pi)=%+.4f", alpha, end.x[0]);
    for (const auto& h : minima) std::printf("  |x-%s|=%.3f", h.label().c_str(), (end.x - h.h(end.t)).norm());
    std::printf("\n");
    for (const auto& ev : detect_jumps(p, rec, minima))
      std::printf("    jump %s -> %s at t=%.3f pi\n", ev.from.c_str(), ev.to.c_str(), ev.t / M_PI);
  }
  return 0;
}
