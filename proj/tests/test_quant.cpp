#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "kantize/grid.hpp"
#include "kantize/lut.hpp"
#include "kantize/quant.hpp"

using namespace kantize;

TEST_CASE("quantization parameters from range endpoints") {
  SECTION("symmetric unit range at 8 bits") {
    const QuantParams qp = compute_quant_params(-1.0, 1.0, 8);
    CHECK(qp.scale == Catch::Approx(2.0 / 255.0).epsilon(1e-12));
    CHECK(qp.zero_point == 128);
    CHECK(qp.q_lo == 0);
    CHECK(qp.q_hi == 255);
  }
  SECTION("identity byte range") {
    const QuantParams qp = compute_quant_params(0.0, 255.0, 8);
    CHECK(qp.scale == 1.0);
    CHECK(qp.zero_point == 0);
  }
  SECTION("two-bit symmetric range") {
    const QuantParams qp = compute_quant_params(-1.0, 1.0, 2);
    CHECK(qp.scale == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(qp.zero_point == 2);
  }
  SECTION("degenerate range is rejected") {
    CHECK_THROWS_AS(compute_quant_params(1.0, 1.0, 8), std::invalid_argument);
    CHECK_THROWS_AS(compute_quant_params(2.0, 1.0, 8), std::invalid_argument);
  }
}

TEST_CASE("quantize and dequantize") {
  const QuantParams qp = compute_quant_params(-1.0, 1.0, 8);

  SECTION("worked example at 0.5") {
    CHECK(quantize_value(0.5, qp) == 192);
    CHECK(dequantize_value(192, qp) == Catch::Approx(128.0 / 255.0).epsilon(1e-12));
  }
  SECTION("range endpoints map to range bounds") {
    // Exact when the zero point needs no rounding.
    const QuantParams exact = compute_quant_params(0.0, 255.0, 8);
    CHECK(quantize_value(0.0, exact) == exact.q_lo);
    CHECK(quantize_value(255.0, exact) == exact.q_hi);
    // A rounded zero point can shift one endpoint by at most one level; the
    // round-trip bound still holds there.
    CHECK(quantize_value(-1.0, qp) <= qp.q_lo + 1);
    CHECK(quantize_value(1.0, qp) == qp.q_hi);
    CHECK(std::abs(-1.0 - dequantize_value(quantize_value(-1.0, qp), qp)) <=
          qp.scale / 2.0 + 1e-12);
  }
  SECTION("values far outside the range clip") {
    CHECK(quantize_value(10.0, qp) == qp.q_hi);
    CHECK(quantize_value(-10.0, qp) == qp.q_lo);
  }
}

TEST_CASE("round trip error is bounded by half a step") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int bits : {2, 3, 4, 8}) {
    const double alpha = -0.7, beta = 1.3;
    const QuantParams qp = compute_quant_params(alpha, beta, bits);
    for (int trial = 0; trial < 2000; ++trial) {
      const double x = alpha + (beta - alpha) * unit(rng);
      const double rt = dequantize_value(quantize_value(x, qp), qp);
      CHECK(std::abs(x - rt) <= qp.scale / 2.0 + 1e-12);
    }
  }
}

TEST_CASE("quantization is monotone") {
  const QuantParams qp = compute_quant_params(-2.0, 3.0, 4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> span(-3.0, 4.0);
  for (int trial = 0; trial < 2000; ++trial) {
    double x = span(rng), y = span(rng);
    if (x > y) std::swap(x, y);
    CHECK(quantize_value(x, qp) <= quantize_value(y, qp));
  }
}

TEST_CASE("range calibration") {
  SECTION("single tensor") {
    RangeCalibrator cal;
    const Matrix t = Matrix::from_rows({{-2.0, 0.0, 3.0}});
    cal.observe(t);
    const auto [lo, hi] = cal.range();
    CHECK(lo == -2.0);
    CHECK(hi == 3.0);
  }
  SECTION("stream of tensors folds the running min and max") {
    RangeCalibrator cal;
    cal.observe(Matrix::from_rows({{0.0, 1.0}}));
    cal.observe(Matrix::from_rows({{-1.0, 0.5}}));
    const auto [lo, hi] = cal.range();
    CHECK(lo == -1.0);
    CHECK(hi == 1.0);
  }
  SECTION("empty stream is an error") {
    RangeCalibrator cal;
    CHECK_THROWS_AS(cal.range(), std::invalid_argument);
  }
  SECTION("constant stream errors unless widening is requested") {
    RangeCalibrator cal;
    cal.observe(Matrix(2, 2, 5.0));
    CHECK_THROWS_AS(cal.range(), std::invalid_argument);
    const auto [lo, hi] = cal.range(true);
    CHECK(lo < 5.0);
    CHECK(hi > 5.0);
  }
}

TEST_CASE("fake quantization") {
  SECTION("passthrough sentinel is the identity") {
    const QuantParams qp = QuantParams::identity();
    Matrix t = Matrix::from_rows({{0.123456, -9.5, 3.25}});
    const Matrix out = fake_quant_tensor(t, qp);
    CHECK(out == t);
  }
  SECTION("idempotent bit for bit") {
    const QuantParams qp = compute_quant_params(-1.0, 1.0, 5);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> span(-1.5, 1.5);
    Matrix t(8, 8);
    for (double& v : t.flat()) v = span(rng);
    const Matrix once = fake_quant_tensor(t, qp);
    const Matrix twice = fake_quant_tensor(once, qp);
    CHECK(once == twice);
  }
  SECTION("max elementwise error over a dense in-range sample is at most half a step") {
    const QuantParams qp = compute_quant_params(-1.0, 1.0, 3);
    double worst = 0.0;
    for (int i = 0; i <= 10000; ++i) {
      const double x = -1.0 + 2.0 * i / 10000.0;
      worst = std::max(worst, std::abs(x - fake_quant_value(x, qp)));
    }
    CHECK(worst <= qp.scale / 2.0 + 1e-12);
  }
}

TEST_CASE("zero-spanning keeps the zero point inside the integer range") {
  // One-sided calibrated ranges would otherwise push the zero point outside.
  const auto [lo, hi] = zero_spanning({10.0, 11.0});
  CHECK(lo == 0.0);
  CHECK(hi == 11.0);
  for (auto range : {std::pair{10.0, 11.0}, {-5.0, -1.0}, {-2.0, 3.0}}) {
    const auto [a, b] = zero_spanning(range);
    const QuantParams qp = compute_quant_params(a, b, 4);
    CHECK(qp.zero_point >= qp.q_lo);
    CHECK(qp.zero_point <= qp.q_hi);
    CHECK(dequantize_value(quantize_value(0.0, qp), qp) == 0.0);
  }
}

TEST_CASE("activation lattice levels align with the knots") {
  const GridSpec g = build_grid(3, 3, -1.0, 1.0);
  for (int k : {1, 4, 8}) {
    const ActivationLattice lat = ActivationLattice::of(g, k);
    CHECK(lat.max_level() == (static_cast<std::int64_t>(3) << k));
    CHECK(lat.step == Catch::Approx(g.delta() / (1 << k)).epsilon(1e-15));
    // every knot-aligned level dequantizes onto its interior knot
    for (int j = 0; j <= 3; ++j) {
      const double x = lat.dequantize(static_cast<std::int64_t>(j) << k);
      CHECK(x == Catch::Approx(g.knots()[3 + j]).margin(1e-12));
    }
    // quantizing a level's dequantized value returns the level
    for (std::int64_t a = 0; a <= lat.max_level(); a += 3)
      CHECK(lat.quantize(lat.dequantize(a)) == a);
  }
}
