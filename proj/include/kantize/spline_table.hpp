#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "kantize/grid.hpp"
#include "kantize/layers.hpp"
#include "kantize/matrix.hpp"
#include "kantize/quant.hpp"

namespace kantize {

/// Replaces every learned activation of one layer with its own sampled
/// table: table (i, j) holds the h-bit quantized values of spline phi_{i,j}
/// at the 2^bits_a input levels. Input levels are derived from the grid
/// bounds (no calibration data); one output scale is shared across the whole
/// layer so lookups can accumulate in the integer domain.
struct SplineTableSet {
  int n_in = 0;        // connection rows (K*K*c_in for conv layers)
  int n_out = 0;
  int bits_a = 0;      // input addressing bits: 2^bits_a entries per table
  int value_bits = 0;  // h
  QuantParams in_qp;
  QuantParams out_qp;
  std::vector<std::uint8_t> values;  // [n_in][n_out][2^bits_a]

  std::int64_t entries_per_table() const { return std::int64_t{1} << bits_a; }
  std::int64_t table_count() const { return static_cast<std::int64_t>(n_in) * n_out; }
  std::int64_t stored_bits() const { return table_count() * entries_per_table() * value_bits; }

  std::uint8_t at(int i, int j, std::int64_t level) const {
    return values[(static_cast<std::size_t>(i) * n_out + j) * entries_per_table() + level];
  }
};

namespace detail {

inline SplineTableSet build_tables(const GridSpec& grid, const Matrix& coeffs, int n_in,
                                   int n_out, int bits_a, int h) {
  if (bits_a < 1 || bits_a > 8)
    throw std::invalid_argument("build_spline_tables: input bits must be in [1,8]");
  if (h < 2 || h > 8)
    throw std::invalid_argument("build_spline_tables: value bits must be in [2,8]");

  SplineTableSet set;
  set.n_in = n_in;
  set.n_out = n_out;
  set.bits_a = bits_a;
  set.value_bits = h;
  set.in_qp = compute_quant_params(grid.domain_lo(), grid.domain_hi(), bits_a);

  const std::int64_t levels = set.entries_per_table();
  const int nb = grid.basis_count();

  // Sample every spline at every input level: phi_{i,j}(x) is the same basis
  // vector dotted with a different coefficient column, so the basis is
  // evaluated once per level and reused across all connections.
  Matrix sampled(static_cast<std::size_t>(n_in) * n_out, levels, 0.0);
  std::vector<double> basis(nb);
  for (std::int64_t m = 0; m < levels; ++m) {
    const double x = dequantize_value(m, set.in_qp);
    basis_at_coord(grid.knot_coord(x), grid, basis);
    for (int i = 0; i < n_in; ++i) {
      for (int j = 0; j < n_out; ++j) {
        double acc = 0.0;
        for (int k = 0; k < nb; ++k)
          acc += basis[static_cast<std::size_t>(k)] *
                 coeffs(static_cast<std::size_t>(i) * nb + k, j);
        sampled(static_cast<std::size_t>(i) * n_out + j, m) = acc;
      }
    }
  }

  RangeCalibrator cal;
  cal.observe(sampled);
  const auto [lo, hi] = zero_spanning(cal.range(true));
  set.out_qp = compute_quant_params(lo, hi, h);

  set.values.resize(sampled.size());
  const auto flat = sampled.flat();
  for (std::size_t idx = 0; idx < flat.size(); ++idx)
    set.values[idx] = static_cast<std::uint8_t>(quantize_value(flat[idx], set.out_qp));
  return set;
}

}  // namespace detail

inline SplineTableSet build_spline_tables(const KanLinearLayer& layer, int bits_a, int h) {
  return detail::build_tables(layer.grid, layer.coeffs, layer.n_in, layer.n_out, bits_a, h);
}

inline SplineTableSet build_spline_tables(const ConvKanLayer& layer, int bits_a, int h) {
  return detail::build_tables(layer.grid, layer.coeffs, layer.patch_size(), layer.c_out,
                              bits_a, h);
}

/// out[m, j] = sum_i dequant(table[i][j][quant(A[m, i])]). The sum runs over
/// raw integer entries with a single dequantization per output, so the hot
/// path performs lookups and additions only.
inline Matrix spline_table_forward(const Matrix& acts, const SplineTableSet& tables) {
  if (static_cast<int>(acts.cols()) != tables.n_in)
    throw std::invalid_argument("spline_table_forward: shape mismatch: got " +
                                std::to_string(acts.cols()) + " inputs, tables expect " +
                                std::to_string(tables.n_in));
  Matrix out(acts.rows(), tables.n_out, 0.0);
  std::vector<std::int64_t> levels(acts.cols());
  for (std::size_t m = 0; m < acts.rows(); ++m) {
    for (std::size_t i = 0; i < acts.cols(); ++i)
      levels[i] = quantize_value(acts(m, i), tables.in_qp);
    for (int j = 0; j < tables.n_out; ++j) {
      std::int64_t acc = 0;
      for (int i = 0; i < tables.n_in; ++i)
        acc += tables.at(i, j, levels[static_cast<std::size_t>(i)]) - tables.out_qp.zero_point;
      out(m, j) = tables.out_qp.scale * static_cast<double>(acc);
    }
  }
  return out;
}

/// Conv layer variant: tables indexed through im2col patches.
inline Tensor3 spline_table_forward(const Tensor3& in, const ConvKanLayer& layer,
                                    const SplineTableSet& tables) {
  const Matrix patches = im2col(in, layer.kernel, layer.stride, layer.padding);
  const Matrix rows = spline_table_forward(patches, tables);
  const int h_out = conv_out_dim(in.height, layer.kernel, layer.stride, layer.padding);
  const int w_out = conv_out_dim(in.width, layer.kernel, layer.stride, layer.padding);
  Tensor3 out(layer.c_out, h_out, w_out);
  for (int c = 0; c < layer.c_out; ++c)
    for (int y = 0; y < h_out; ++y)
      for (int x = 0; x < w_out; ++x)
        out.at(c, y, x) = rows(static_cast<std::size_t>(y) * w_out + x, c);
  return out;
}

}  // namespace kantize
