// Builds a small random KAN layer, replaces its basis recursion with a
// quantized table, and compares the two forward paths and their costs.

#include <cstdio>
#include <random>

#include "kantize/kantize.hpp"

int main() {
  using namespace kantize;
  const GridSpec grid = build_grid(3, 3, -1.0, 1.0);

  KanLinearLayer layer = KanLinearLayer::zeros(16, 4, grid);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (double& w : layer.coeffs.flat()) w = unit(rng);

  Matrix acts(8, 16);
  for (double& a : acts.flat()) a = unit(rng);

  const int k = 4, h = 8;
  const BsplineLut lut = build_bspline_lut(grid.degree(), k, h);

  const Matrix exact = kan_linear_forward(acts, layer);
  const Matrix tabulated = tabulated_kan_forward(acts, layer, lut, kPassthroughBits);

  double max_diff = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i)
    max_diff = std::max(max_diff, std::abs(exact.flat()[i] - tabulated.flat()[i]));

  std::printf("table: %d bits/interval x %d value bits, %lld accounted bits\n", k, h,
              static_cast<long long>(lut.memory_bits()));
  std::printf("max |exact - tabulated| over %zu outputs: %.6f\n", exact.size(), max_diff);

  const ArchDescriptor arch{"demo", grid.intervals(), grid.degree(),
                            {ArchLayer{ArchLayer::Kind::kLinear, 16, 4}}};
  std::printf("BitOps fp32: %lld, (8,8,3) quantized: %lld, tabulated: %lld\n",
              static_cast<long long>(bitops_kan(arch, 32, 32, 32)),
              static_cast<long long>(bitops_kan(arch, 8, 8, 3)),
              static_cast<long long>(bitops_kan(arch, 8, 8, 3, 1, true)));
  return 0;
}
