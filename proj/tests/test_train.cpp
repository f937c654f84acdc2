#include <catch2/catch_amalgamated.hpp>

#include <limits>
#include <random>

#include "kantize/eval.hpp"
#include "kantize/train.hpp"
#include "oracles.hpp"

using namespace kantize;

namespace {

Model small_linear_model(int d, int classes, std::uint64_t seed, int G = 3, int P = 3) {
  const GridSpec g = build_grid(G, P, -1.0, 1.0);
  Model m;
  m.input_shape = {d};
  m.layers.emplace_back(KanLinearLayer::zeros(d, classes, g));
  init_model(m, seed);
  return m;
}

}  // namespace

TEST_CASE("zero learning rate leaves coefficients untouched") {
  Model model = small_linear_model(4, 3, 1);
  const Matrix before = std::get<KanLinearLayer>(model.layers[0]).coeffs;
  const Dataset ds = synthetic_dataset("blobs", 64, 2, 4, 3);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 2;
  train(model, ds, cfg);
  CHECK(std::get<KanLinearLayer>(model.layers[0]).coeffs == before);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const Dataset ds = synthetic_dataset("moons", 256, 5);
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.epochs = 3;
  cfg.seed = 17;

  Model a = small_linear_model(2, 2, 9);
  Model b = small_linear_model(2, 2, 9);
  const TrainResult ra = train(a, ds, cfg);
  const TrainResult rb = train(b, ds, cfg);
  CHECK(std::get<KanLinearLayer>(a.layers[0]).coeffs ==
        std::get<KanLinearLayer>(b.layers[0]).coeffs);
  CHECK(ra.epoch_losses == rb.epoch_losses);
}

TEST_CASE("coefficient gradients match central finite differences") {
  const GridSpec g = build_grid(3, 3, -1.0, 1.0);
  KanLinearLayer layer = KanLinearLayer::zeros(3, 2, g);
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (double& w : layer.coeffs.flat()) w = unit(rng);

  Matrix acts(4, 3);
  for (double& a : acts.flat()) a = unit(rng) * 0.95;
  std::vector<int> labels = {0, 1, 0, 1};

  auto loss_of = [&](const KanLinearLayer& l) {
    const Matrix logits = kan_linear_forward(acts, l);
    Matrix d;
    return softmax_cross_entropy(logits, labels, d);
  };

  const Matrix logits = kan_linear_forward(acts, layer);
  Matrix d_logits;
  softmax_cross_entropy(logits, labels, d_logits);
  const LayerGrads grads = kan_linear_backward(acts, layer, d_logits);

  std::size_t checked = 0;
  for (std::size_t idx = 0; idx < layer.coeffs.size(); idx += 2) {
    KanLinearLayer bumped = layer;
    const double h = 1e-5;
    bumped.coeffs.flat()[idx] += h;
    const double up = loss_of(bumped);
    bumped.coeffs.flat()[idx] -= 2 * h;
    const double down = loss_of(bumped);
    const double fd = (up - down) / (2 * h);
    const double an = grads.d_coeffs.flat()[idx];
    if (std::abs(fd) > 1e-7) {
      CHECK(an == Catch::Approx(fd).epsilon(1e-4));
      ++checked;
    }
  }
  CHECK(checked > 10);
}

TEST_CASE("input gradients match central finite differences") {
  const GridSpec g = build_grid(3, 3, -1.0, 1.0);
  KanLinearLayer layer = KanLinearLayer::zeros(3, 2, g);
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (double& w : layer.coeffs.flat()) w = unit(rng);

  Matrix acts(2, 3);
  for (double& a : acts.flat()) a = unit(rng) * 0.9;
  std::vector<int> labels = {1, 0};

  auto loss_at = [&](const Matrix& a) {
    const Matrix logits = kan_linear_forward(a, layer);
    Matrix d;
    return softmax_cross_entropy(logits, labels, d);
  };

  const Matrix logits = kan_linear_forward(acts, layer);
  Matrix d_logits;
  softmax_cross_entropy(logits, labels, d_logits);
  const LayerGrads grads = kan_linear_backward(acts, layer, d_logits);

  for (std::size_t m = 0; m < acts.rows(); ++m) {
    for (std::size_t i = 0; i < acts.cols(); ++i) {
      Matrix bumped = acts;
      const double h = 1e-5;
      bumped(m, i) += h;
      const double up = loss_at(bumped);
      bumped(m, i) -= 2 * h;
      const double down = loss_at(bumped);
      const double fd = (up - down) / (2 * h);
      const double an = grads.d_inputs(m, i);
      if (std::abs(fd) > 1e-7)
        CHECK(an == Catch::Approx(fd).epsilon(1e-4));
      else
        CHECK(std::abs(an - fd) < 1e-6);
    }
  }
}

TEST_CASE("conv model gradients move the loss downhill") {
  const GridSpec g = build_grid(3, 2, -1.0, 1.0);
  Model model;
  model.input_shape = {1, 6, 6};
  model.layers.emplace_back(ConvKanLayer::zeros(1, 2, 3, 1, 0, g));
  model.layers.emplace_back(MaxPoolLayer{2});
  model.layers.emplace_back(FlattenLayer{});
  model.layers.emplace_back(KanLinearLayer::zeros(8, 2, g));
  init_model(model, 3);

  Dataset ds;
  ds.n_classes = 2;
  ds.inputs = Matrix(32, 36);
  ds.labels.resize(32);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t i = 0; i < 32; ++i) {
    const int label = static_cast<int>(rng() & 1);
    ds.labels[i] = label;
    for (std::size_t j = 0; j < 36; ++j)
      ds.inputs(i, j) = unit(rng) * 0.3 + (label ? 0.4 : -0.4);
  }

  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.epochs = 20;
  cfg.batch = 8;
  cfg.seed = 1;
  const TrainResult r = train(model, ds, cfg);
  CHECK(r.epoch_losses.back() < r.epoch_losses.front());
  CHECK(evaluate_accuracy(model, ds) >= 0.9);
}

TEST_CASE("a separable problem trains to high accuracy quickly") {
  const Dataset ds = synthetic_dataset("linsep", 600, 21, 4, 3);
  Model model = small_linear_model(4, 3, 2);
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.epochs = 50;
  cfg.batch = 32;
  cfg.seed = 3;
  const TrainResult r = train(model, ds, cfg);
  CHECK(r.epoch_losses.back() < r.epoch_losses.front());
  CHECK(evaluate_accuracy(model, ds) >= 0.95);
}

TEST_CASE("training rejects empty datasets") {
  Model model = small_linear_model(2, 2, 1);
  Dataset empty;
  CHECK_THROWS_AS(train(model, empty, TrainConfig{}), std::invalid_argument);
}

TEST_CASE("divergence to NaN aborts with a diagnostic") {
  Model model = small_linear_model(3, 2, 1);
  std::get<KanLinearLayer>(model.layers[0]).coeffs(0, 0) =
      std::numeric_limits<double>::quiet_NaN();
  const Dataset ds = synthetic_dataset("blobs", 128, 6, 3, 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_WITH(train(model, ds, cfg), Catch::Matchers::ContainsSubstring("NaN"));
}

TEST_CASE("evaluation modes") {
  const Dataset ds = synthetic_dataset("blobs", 200, 13, 3, 4);
  Model model = small_linear_model(3, 4, 5);

  SECTION("constant predictor scores its class share") {
    Model constant = small_linear_model(3, 4, 5);
    auto& lin = std::get<KanLinearLayer>(constant.layers[0]);
    for (double& w : lin.coeffs.flat()) w = 0.0;
    const int nb = lin.grid.basis_count();
    for (int i = 0; i < lin.n_in; ++i)
      for (int k = 0; k < nb; ++k) lin.coeffs(static_cast<std::size_t>(i) * nb + k, 2) = 1.0;

    Dataset single = ds;
    for (auto& l : single.labels) l = 2;
    CHECK(evaluate_accuracy(constant, single) == 1.0);
  }

  SECTION("all-passthrough fake quantization equals fp32") {
    EvalOptions fq;
    fq.mode = EvalMode::kFakeQuant;  // every width left at the 32-bit sentinel
    const double a = evaluate_accuracy(model, ds);
    const double b = evaluate_accuracy(model, ds, fq);
    CHECK(a == b);
  }

  SECTION("table-backed and recursion-backed lattice paths predict identically") {
    const BsplineLut lut = build_bspline_lut(3, 4, 8);
    EvalOptions lut_opts;
    lut_opts.mode = EvalMode::kBsplineLut;
    lut_opts.lut = &lut;

    const auto preds_lut = predict(model, ds.inputs, lut_opts);

    const auto& lin = std::get<KanLinearLayer>(model.layers[0]);
    const ActivationLattice lat = ActivationLattice::of(lin.grid, 4);
    Model reference = model;
    const Matrix ref_logits = kan_linear_forward(
        ds.inputs, lin, LatticeQuantBasis{&lin.grid, lat, lut.value_qp});
    for (std::size_t m = 0; m < ref_logits.rows(); ++m) {
      int best = 0;
      for (std::size_t j = 1; j < ref_logits.cols(); ++j)
        if (ref_logits(m, j) > ref_logits(m, best)) best = static_cast<int>(j);
      CHECK(best == preds_lut[m]);
    }
  }

  SECTION("calibrated activation ranges cover the observed data") {
    const auto ranges = calibrate_activation_ranges(model, ds.inputs);
    REQUIRE(ranges.size() == 1);
    CHECK(ranges[0].first >= -1.0);
    CHECK(ranges[0].second <= 1.0);
    CHECK(ranges[0].first < ranges[0].second);

    EvalOptions cal;
    cal.mode = EvalMode::kFakeQuant;
    cal.qcfg.bits_a = 6;
    cal.qcfg.a_range_policy = QuantConfig::ARangePolicy::kCalibrated;
    cal.a_ranges = ranges;
    const double acc = evaluate_accuracy(model, ds, cal);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);

    // missing ranges are an error under the calibrated policy
    cal.a_ranges.clear();
    CHECK_THROWS_AS(evaluate_accuracy(model, ds, cal), std::invalid_argument);
  }

  SECTION("unknown mode strings are rejected") {
    CHECK_THROWS_AS(eval_mode_from_string("quantum"), std::invalid_argument);
  }
}
