#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>

#include "kantize/matrix.hpp"

namespace kantize {

/// Bit-width value meaning "leave this tensor in floating point".
constexpr int kPassthroughBits = 32;

/// Affine mapping between a real range [alpha, beta] and the unsigned
/// integer range [0, 2^bits - 1]: x ~ scale * (q - zero_point).
struct QuantParams {
  double scale = 1.0;
  std::int64_t zero_point = 0;
  int bits = kPassthroughBits;
  std::int64_t q_lo = 0;
  std::int64_t q_hi = 0;

  bool passthrough() const { return bits == kPassthroughBits; }

  static QuantParams identity() { return QuantParams{}; }
};

/// Quantization parameters for [alpha, beta] at the given bit-width.
/// Rounding is half-away-from-zero throughout.
inline QuantParams compute_quant_params(double alpha, double beta, int bits) {
  if (bits == kPassthroughBits) return QuantParams::identity();
  if (bits < 1 || bits > 8)
    throw std::invalid_argument("compute_quant_params: bits must be in [1,8] or 32");
  if (!(beta > alpha))
    throw std::invalid_argument("compute_quant_params: degenerate range");

  QuantParams qp;
  qp.bits = bits;
  qp.q_lo = 0;
  qp.q_hi = (std::int64_t{1} << bits) - 1;
  qp.scale = (beta - alpha) / static_cast<double>(qp.q_hi - qp.q_lo);
  qp.zero_point = std::llround((beta * static_cast<double>(qp.q_lo) -
                                alpha * static_cast<double>(qp.q_hi)) /
                               (beta - alpha));
  return qp;
}

inline std::int64_t quantize_value(double x, const QuantParams& qp) {
  const std::int64_t q = std::llround(x / qp.scale + static_cast<double>(qp.zero_point));
  return std::min(std::max(q, qp.q_lo), qp.q_hi);
}

inline double dequantize_value(std::int64_t q, const QuantParams& qp) {
  return qp.scale * static_cast<double>(q - qp.zero_point);
}

inline double fake_quant_value(double x, const QuantParams& qp) {
  if (qp.passthrough()) return x;
  return dequantize_value(quantize_value(x, qp), qp);
}

inline void fake_quant(std::span<double> values, const QuantParams& qp) {
  if (qp.passthrough()) return;
  for (double& v : values) v = dequantize_value(quantize_value(v, qp), qp);
}

inline Matrix fake_quant_tensor(const Matrix& t, const QuantParams& qp) {
  Matrix out = t;
  fake_quant(out.flat(), qp);
  return out;
}

/// Running min/max fold over a stream of tensors.
class RangeCalibrator {
 public:
  void observe(std::span<const double> values) {
    for (double v : values) {
      if (!seen_) {
        lo_ = hi_ = v;
        seen_ = true;
      } else {
        lo_ = std::min(lo_, v);
        hi_ = std::max(hi_, v);
      }
    }
  }

  void observe(const Matrix& t) { observe(t.flat()); }

  bool empty() const { return !seen_; }

  /// Observed (min, max). A degenerate range (min == max) is an error unless
  /// widen_degenerate is set, in which case it is widened symmetrically.
  std::pair<double, double> range(bool widen_degenerate = false) const {
    if (!seen_) throw std::invalid_argument("calibrate_range: empty stream");
    if (lo_ == hi_) {
      if (!widen_degenerate)
        throw std::invalid_argument("calibrate_range: degenerate range (constant stream)");
      const double pad = std::max(std::abs(lo_), 1.0) *
                         std::numeric_limits<double>::epsilon() * 4.0;
      return {lo_ - pad, hi_ + pad};
    }
    return {lo_, hi_};
  }

 private:
  bool seen_ = false;
  double lo_ = 0.0, hi_ = 0.0;
};

inline std::pair<double, double> calibrate_range(std::span<const Matrix> tensors,
                                                 bool widen_degenerate = false) {
  RangeCalibrator cal;
  for (const auto& t : tensors) cal.observe(t);
  return cal.range(widen_degenerate);
}

/// Extends a calibrated range to include zero, so the zero point always
/// lands inside the integer range and 0.0 is exactly representable.
inline std::pair<double, double> zero_spanning(std::pair<double, double> range) {
  return {std::min(range.first, 0.0), std::max(range.second, 0.0)};
}

/// Per-model quantization choice: one bit-width per tensor role, applied to
/// every layer. Basis outputs are always mapped over [0, 1]; activations use
/// either the grid bounds (no calibration data needed) or per-layer
/// calibrated min/max ranges.
struct QuantConfig {
  int bits_w = kPassthroughBits;
  int bits_a = kPassthroughBits;
  int bits_b = kPassthroughBits;

  enum class ARangePolicy { kGridBounds, kCalibrated };
  ARangePolicy a_range_policy = ARangePolicy::kGridBounds;

  bool all_passthrough() const {
    return bits_w == kPassthroughBits && bits_a == kPassthroughBits &&
           bits_b == kPassthroughBits;
  }
};

}  // namespace kantize
