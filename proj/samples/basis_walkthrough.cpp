// Evaluates a cubic basis over its grid and prints the values, the partition
// of unity, and the analytic derivatives at a few points.

#include <cstdio>

#include "kantize/grid.hpp"

int main() {
  using namespace kantize;
  const GridSpec grid = build_grid(3, 3, -1.0, 1.0);

  std::printf("knots:");
  for (double t : grid.knots()) std::printf(" %.4f", t);
  std::printf("\n\n%8s", "x");
  for (int k = 0; k < grid.basis_count(); ++k) std::printf("      b%d", k);
  std::printf("     sum\n");

  for (double x = -1.0; x < 1.0; x += 0.25) {
    const BasisVector bv = cox_de_boor(x, grid);
    double sum = 0.0;
    std::printf("%8.3f", x);
    for (double v : bv.values) {
      std::printf(" %7.4f", v);
      sum += v;
    }
    std::printf(" %7.4f\n", sum);
  }

  std::printf("\nderivatives at x = 0.1:");
  for (double d : basis_derivative(0.1, grid)) std::printf(" %8.4f", d);
  std::printf("\n");
  return 0;
}
