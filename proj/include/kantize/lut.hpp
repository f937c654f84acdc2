#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "kantize/grid.hpp"
#include "kantize/layers.hpp"
#include "kantize/matrix.hpp"
#include "kantize/quant.hpp"

namespace kantize {

/// Fixed-point addressing of activations: level a sits at
/// x = domain_lo + a * delta/2^k, so knots fall on exact multiples of 2^k and
/// level arithmetic (translation, folding) stays purely integral.
/// Levels cover the interior domain: a in [0, G * 2^k].
struct ActivationLattice {
  int bits_per_interval = 0;  // k
  int intervals = 0;          // G
  int degree = 0;             // P
  double domain_lo = 0.0;
  double step = 0.0;  // delta / 2^k

  static ActivationLattice of(const GridSpec& grid, int k) {
    if (k < 1 || k > 8)
      throw std::invalid_argument("ActivationLattice: bits per interval must be in [1,8]");
    ActivationLattice lat;
    lat.bits_per_interval = k;
    lat.intervals = grid.intervals();
    lat.degree = grid.degree();
    lat.domain_lo = grid.domain_lo();
    lat.step = std::ldexp(grid.delta(), -k);
    return lat;
  }

  std::int64_t max_level() const {
    return static_cast<std::int64_t>(intervals) << bits_per_interval;
  }

  std::int64_t quantize(double x) const {
    const std::int64_t a = std::llround((x - domain_lo) / step);
    return std::min(std::max(a, std::int64_t{0}), max_level());
  }

  double dequantize(std::int64_t a) const { return domain_lo + static_cast<double>(a) * step; }

  /// Exact knot-unit coordinate of level a (a/2^k is dyadic, so this is the
  /// mathematically exact position, free of the dequantize rounding).
  double knot_coord(std::int64_t a) const {
    return degree + std::ldexp(static_cast<double>(a), -bits_per_interval);
  }
};

/// Quantized basis values of the P+1 functions supported at one lattice
/// level. Entry r corresponds to dense basis index support_start + r;
/// `count` may be smaller than P+1 at the right domain edge.
struct QuantizedBasis {
  std::array<std::uint8_t, 16> values{};
  int support_start = 0;
  int count = 0;
};

/// Precomputed half-support table of the canonical degree-P basis function
/// (knots at 0..P+1 in knot units). Stores ceil((P+1)/2) * 2^k + 1 values of
/// h bits sampled every 1/2^k knot units; the final entry holds the peak so
/// symmetry folding never reads past the table. Accounted memory follows the
/// closed form 2^k * ceil((P+1)/2) * h bits, which excludes the peak entry.
struct BsplineLut {
  int degree = 0;           // P
  int bits_per_interval = 0;  // k: entries per knot interval = 2^k
  int value_bits = 0;         // h
  QuantParams value_qp;       // over [0, 1]
  std::vector<std::uint8_t> entries;

  std::int64_t fold_point() const {
    return static_cast<std::int64_t>(degree + 1) << (bits_per_interval - 1);
  }

  std::int64_t support_levels() const {
    return static_cast<std::int64_t>(degree + 1) << bits_per_interval;
  }

  std::int64_t memory_bits() const {
    const std::int64_t half_intervals = (degree + 2) / 2;  // ceil((P+1)/2)
    return (std::int64_t{1} << bits_per_interval) * half_intervals * value_bits;
  }

  /// Table value at an unfolded support offset m in [0, (P+1)*2^k].
  std::uint8_t at_offset(std::int64_t m) const {
    const std::int64_t folded = m > fold_point() ? support_levels() - m : m;
    return entries[static_cast<std::size_t>(folded)];
  }
};

/// Samples the canonical degree-P basis at left-edge lattice points over the
/// stored half-support and quantizes the values to h bits over [0, 1].
/// Offsets past the fold point hold the peak value (they are never read by
/// folded lookups; keeping them at the peak keeps the table monotone).
inline BsplineLut build_bspline_lut(int degree, int k, int h) {
  if (degree < 1) throw std::invalid_argument("build_bspline_lut: degree must be >= 1");
  if (k < 1 || k > 8) throw std::invalid_argument("build_bspline_lut: k must be in [1,8]");
  if (h < 2 || h > 8) throw std::invalid_argument("build_bspline_lut: h must be in [2,8]");

  BsplineLut lut;
  lut.degree = degree;
  lut.bits_per_interval = k;
  lut.value_bits = h;
  lut.value_qp = compute_quant_params(0.0, 1.0, h);

  // Canonical basis: index P of a single-interval grid has knots 0..P+1.
  const GridSpec canon = build_grid(1, degree, 0.0, 1.0);
  std::vector<double> basis(canon.basis_count());

  const std::int64_t half_intervals = (degree + 2) / 2;
  const std::int64_t stored = half_intervals * (std::int64_t{1} << k) + 1;
  const std::int64_t fold = lut.fold_point();
  lut.entries.resize(static_cast<std::size_t>(stored));
  for (std::int64_t m = 0; m < stored; ++m) {
    const std::int64_t pos = std::min(m, fold);
    const double xi = degree + std::ldexp(static_cast<double>(pos), -k);
    basis_at_coord(xi, canon, basis);
    lut.entries[static_cast<std::size_t>(m)] =
        static_cast<std::uint8_t>(quantize_value(basis[degree], lut.value_qp));
  }
  lut.entries[0] = 0;  // support boundary is exactly zero
  return lut;
}

/// Quantized basis values at lattice level a, obtained purely by integer
/// translation and symmetry folding into the canonical table. Matches
/// quantizing the recursion output at the same lattice point bit for bit.
inline QuantizedBasis lut_basis_lookup(std::int64_t a_level, const GridSpec& grid,
                                       const BsplineLut& lut) {
  if (lut.degree != grid.degree())
    throw std::invalid_argument("lut_basis_lookup: table degree does not match grid");
  const int k = lut.bits_per_interval;
  const std::int64_t max_level = static_cast<std::int64_t>(grid.intervals()) << k;
  if (a_level < 0 || a_level > max_level)
    throw std::out_of_range("lut_basis_lookup: lattice level out of range");

  const std::int64_t jj = a_level >> k;
  const std::int64_t frac = a_level - (jj << k);
  const int degree = grid.degree();

  QuantizedBasis qb;
  qb.support_start = static_cast<int>(jj);
  qb.count = 0;
  for (int r = 0; r <= degree; ++r) {
    const std::int64_t i = jj + r;
    if (i >= grid.basis_count()) break;
    const std::int64_t m = (static_cast<std::int64_t>(degree - r) << k) + frac;
    qb.values[static_cast<std::size_t>(r)] = lut.at_offset(m);
    ++qb.count;
  }
  return qb;
}

/// Reference route for the same quantity: run the recursion at the exact
/// lattice coordinate and quantize each supported basis value.
inline QuantizedBasis quantized_basis_reference(std::int64_t a_level, const GridSpec& grid,
                                                const ActivationLattice& lat,
                                                const QuantParams& value_qp) {
  std::vector<double> dense(grid.basis_count());
  const int start = basis_at_coord(lat.knot_coord(a_level), grid, dense);
  QuantizedBasis qb;
  qb.support_start = start;
  qb.count = 0;
  for (int r = 0; r <= grid.degree(); ++r) {
    const int i = start + r;
    if (i >= grid.basis_count()) break;
    qb.values[static_cast<std::size_t>(r)] =
        static_cast<std::uint8_t>(quantize_value(dense[i], value_qp));
    ++qb.count;
  }
  return qb;
}

/// Basis functor backed by the lattice + table: quantize the activation to
/// its lattice level, look up the h-bit values, dequantize into the dense row.
struct LutBasis {
  const GridSpec* grid = nullptr;
  const BsplineLut* lut = nullptr;
  ActivationLattice lattice;

  void operator()(double x, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    const QuantizedBasis qb = lut_basis_lookup(lattice.quantize(x), *grid, *lut);
    for (int r = 0; r < qb.count; ++r)
      out[static_cast<std::size_t>(qb.support_start + r)] =
          dequantize_value(qb.values[static_cast<std::size_t>(r)], lut->value_qp);
  }
};

/// Quantize-then-dequantize recursion at lattice resolution; the reference
/// path that table lookups must reproduce exactly.
struct LatticeQuantBasis {
  const GridSpec* grid = nullptr;
  ActivationLattice lattice;
  QuantParams value_qp;

  void operator()(double x, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    const QuantizedBasis qb =
        quantized_basis_reference(lattice.quantize(x), *grid, lattice, value_qp);
    for (int r = 0; r < qb.count; ++r)
      out[static_cast<std::size_t>(qb.support_start + r)] =
          dequantize_value(qb.values[static_cast<std::size_t>(r)], value_qp);
  }
};

/// Linear KAN forward with lattice-quantized activations, table-backed basis
/// values, and optionally fake-quantized weights.
inline Matrix tabulated_kan_forward(const Matrix& acts, const KanLinearLayer& layer,
                                    const BsplineLut& lut, int bits_w,
                                    OpCounter* ops = nullptr) {
  LutBasis basis{&layer.grid, &lut, ActivationLattice::of(layer.grid, lut.bits_per_interval)};
  if (bits_w == kPassthroughBits) return kan_linear_forward(acts, layer, basis, ops);

  KanLinearLayer quantized = layer;
  if (!layer.coeffs.empty()) {
    RangeCalibrator cal;
    cal.observe(layer.coeffs);
    const auto [lo, hi] = zero_spanning(cal.range(true));
    quantized.coeffs = fake_quant_tensor(layer.coeffs, compute_quant_params(lo, hi, bits_w));
  }
  return kan_linear_forward(acts, quantized, basis, ops);
}

}  // namespace kantize
