#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "kantize/matrix.hpp"

namespace kantize {

/// Dense degree-P basis values at one input, plus the index of the first
/// entry that can be nonzero (at most P+1 entries are).
struct BasisVector {
  std::vector<double> values;
  int support_start = 0;
};

/// Uniform B-spline grid: G interior intervals over [domain_lo, domain_hi],
/// extended by `degree` knots on each side (G + 2P + 1 knots total).
///
/// All basis evaluation happens in knot units: position
/// xi = (x - domain_lo)/delta + P places the knots at integers 0..G+2P.
/// The recursion arithmetic is then independent of the grid's scale and
/// translation, which the table-lookup machinery relies on bit-for-bit.
class GridSpec {
 public:
  GridSpec() = default;

  int degree() const { return degree_; }
  int intervals() const { return intervals_; }
  double domain_lo() const { return lo_; }
  double domain_hi() const { return hi_; }
  double delta() const { return delta_; }
  const std::vector<double>& knots() const { return knots_; }

  /// Number of basis functions spanning the interior domain: G + P.
  int basis_count() const { return intervals_ + degree_; }
  /// Number of degree-0 indicator functions: G + 2P.
  int indicator_count() const { return intervals_ + 2 * degree_; }

  /// Knot-unit coordinate of x (knot i sits at coordinate i).
  double knot_coord(double x) const { return (x - lo_) / delta_ + degree_; }

  /// Largest representable value strictly inside the domain. For degree 0
  /// the right domain edge carries no basis support (indicators are
  /// right-open), so the clamp also steps below it in coordinate space.
  double clamp_to_domain(double x) const {
    const double hi_open = std::nextafter(hi_, lo_);
    x = std::min(std::max(x, lo_), hi_open);
    if (degree_ == 0)
      while (x > lo_ && knot_coord(x) >= static_cast<double>(indicator_count()))
        x = std::nextafter(x, lo_);
    return x;
  }

  /// Reciprocal 1/d of the knot-unit denominator at recursion depth d,
  /// precomputed so each recursion node costs exactly four multiplications.
  double recip(int d) const { return recip_[d]; }

 private:
  friend GridSpec build_grid(int intervals, int degree, double domain_lo, double domain_hi);

  int degree_ = 0;
  int intervals_ = 0;
  double lo_ = 0.0, hi_ = 0.0, delta_ = 0.0;
  std::vector<double> knots_;
  std::vector<double> recip_;
};

inline GridSpec build_grid(int intervals, int degree, double domain_lo, double domain_hi) {
  if (intervals < 1) throw std::invalid_argument("build_grid: intervals must be >= 1");
  if (degree < 0) throw std::invalid_argument("build_grid: degree must be >= 0");
  if (!(domain_hi > domain_lo)) throw std::invalid_argument("build_grid: degenerate domain");

  GridSpec g;
  g.degree_ = degree;
  g.intervals_ = intervals;
  g.lo_ = domain_lo;
  g.hi_ = domain_hi;
  g.delta_ = (domain_hi - domain_lo) / intervals;

  // Anchor both interior endpoints exactly; extension knots extrapolate.
  const int n_knots = intervals + 2 * degree + 1;
  g.knots_.resize(n_knots);
  for (int i = 0; i < n_knots; ++i) {
    const int pos = i - degree;
    g.knots_[i] = pos >= intervals ? domain_hi + (pos - intervals) * g.delta_
                                   : domain_lo + pos * g.delta_;
  }

  g.recip_.resize(degree + 1, 0.0);
  for (int d = 1; d <= degree; ++d) g.recip_[d] = 1.0 / d;
  return g;
}

/// Index j with knots[j] <= x < knots[j+1], or -1 when x lies outside the
/// extended grid (the right edge is exclusive).
inline int locate_interval(double x, const GridSpec& grid) {
  const auto& t = grid.knots();
  if (x < t.front() || x >= t.back()) return -1;
  auto it = std::upper_bound(t.begin(), t.end(), x);
  return static_cast<int>(it - t.begin()) - 1;
}

/// Degree-0 indicators over the G + 2P knot intervals. Exactly one entry is 1
/// when x lies inside the extended grid; all entries are 0 otherwise.
inline std::vector<double> basis_degree0(double x, const GridSpec& grid) {
  std::vector<double> out(grid.indicator_count(), 0.0);
  const int j = locate_interval(x, grid);
  if (j >= 0) out[j] = 1.0;
  return out;
}

namespace detail {

constexpr int kStackSlots = 160;

/// Iterative recursion triangle in knot units. Row 0 holds the G + 2P
/// degree-0 indicators plus one zero padding slot; row d computes entries
/// 0..G+2P-d of degree d, four multiplications per entry. After row P the
/// first G + P entries are the basis values.
inline void triangle(double xi, const GridSpec& grid, std::span<double> buf, OpCounter* ops) {
  const int n0 = grid.indicator_count();
  std::fill(buf.begin(), buf.begin() + n0 + 1, 0.0);
  const double jf = std::floor(xi);
  if (jf >= 0.0 && jf < static_cast<double>(n0)) buf[static_cast<int>(jf)] = 1.0;

  for (int d = 1; d <= grid.degree(); ++d) {
    const double r = grid.recip(d);
    const int top = n0 - d;
    for (int i = 0; i <= top; ++i) {
      const double d1 = xi - i;
      const double d2 = (i + d + 1) - xi;
      buf[i] = (d1 * r) * buf[i] + (d2 * r) * buf[i + 1];
    }
    if (ops) ops->muls += 4ull * static_cast<std::uint64_t>(top + 1);
  }
}

inline int support_start_at(double xi, const GridSpec& grid) {
  const double jf = std::floor(xi);
  if (jf < 0.0 || jf >= static_cast<double>(grid.indicator_count())) return 0;
  const int j = static_cast<int>(jf);
  return std::clamp(j - grid.degree(), 0, grid.basis_count() - 1);
}

}  // namespace detail

/// Degree-P basis values at knot-unit coordinate xi, written to `out`
/// (length G + P). Returns the support start index.
inline int basis_at_coord(double xi, const GridSpec& grid, std::span<double> out,
                          OpCounter* ops = nullptr) {
  const int nb = grid.basis_count();
  if (static_cast<int>(out.size()) != nb)
    throw std::invalid_argument("basis_at_coord: output span has wrong length");

  const int slots = grid.indicator_count() + 1;
  double stack[detail::kStackSlots];
  std::vector<double> heap;
  std::span<double> buf;
  if (slots <= detail::kStackSlots) {
    buf = {stack, static_cast<std::size_t>(slots)};
  } else {
    heap.resize(slots);
    buf = heap;
  }
  detail::triangle(xi, grid, buf, ops);
  std::copy(buf.begin(), buf.begin() + nb, out.begin());
  return detail::support_start_at(xi, grid);
}

/// All degree-P basis values at x. Entries outside the local support are
/// exactly zero; the whole vector is zero when x lies outside the extended
/// grid.
inline BasisVector cox_de_boor(double x, const GridSpec& grid, OpCounter* ops = nullptr) {
  BasisVector bv;
  bv.values.resize(grid.basis_count(), 0.0);
  bv.support_start = basis_at_coord(grid.knot_coord(x), grid, bv.values, ops);
  return bv;
}

/// Analytic derivative of each degree-P basis function at x:
/// d/dx b_i = (b'_i - b'_{i+1}) / delta over the degree-(P-1) values b'.
inline std::vector<double> basis_derivative(double x, const GridSpec& grid) {
  const int degree = grid.degree();
  if (degree < 1) throw std::invalid_argument("basis_derivative: requires degree >= 1");

  const int n0 = grid.indicator_count();
  const int slots = n0 + 1;
  double stack[detail::kStackSlots];
  std::vector<double> heap;
  std::span<double> buf;
  if (slots <= detail::kStackSlots) {
    buf = {stack, static_cast<std::size_t>(slots)};
  } else {
    heap.resize(slots);
    buf = heap;
  }

  // Run the triangle only up to degree P-1; entries 0..G+P are then the
  // degree-(P-1) values feeding the derivative formula.
  const double xi = grid.knot_coord(x);
  std::fill(buf.begin(), buf.begin() + n0 + 1, 0.0);
  const double jf = std::floor(xi);
  if (jf >= 0.0 && jf < static_cast<double>(n0)) buf[static_cast<int>(jf)] = 1.0;
  for (int d = 1; d <= degree - 1; ++d) {
    const double r = grid.recip(d);
    const int top = n0 - d;
    for (int i = 0; i <= top; ++i) {
      const double d1 = xi - i;
      const double d2 = (i + d + 1) - xi;
      buf[i] = (d1 * r) * buf[i] + (d2 * r) * buf[i + 1];
    }
  }

  const int nb = grid.basis_count();
  const double inv_delta = 1.0 / grid.delta();
  std::vector<double> deriv(nb);
  for (int i = 0; i < nb; ++i) deriv[i] = (buf[i] - buf[i + 1]) * inv_delta;
  return deriv;
}

}  // namespace kantize
