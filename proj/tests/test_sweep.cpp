#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "kantize/sweep.hpp"
#include "kantize/train.hpp"
#include "oracles.hpp"

using namespace kantize;

namespace {

std::string temp_prefix(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("configuration enumeration") {
  SweepSpec spec;
  SECTION("single-component sweep sizes multiply") {
    spec.bits_w_set = {8};
    spec.bits_a_set = {8};
    spec.bits_b_set = {2, 3, 4};
    CHECK(enumerate_configs(spec).size() == 3);
  }
  SECTION("the full cube has 512 entries") {
    spec.bits_w_set = {2, 3, 4, 5, 6, 7, 8, 32};
    spec.bits_a_set = spec.bits_w_set;
    spec.bits_b_set = spec.bits_w_set;
    CHECK(enumerate_configs(spec).size() == 512);
  }
  SECTION("ordering is stable across calls") {
    spec.bits_w_set = {8, 2};
    spec.bits_a_set = {4, 3};
    spec.bits_b_set = {2, 8};
    const auto a = enumerate_configs(spec);
    const auto b = enumerate_configs(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].bits_w == b[i].bits_w);
      CHECK(a[i].bits_a == b[i].bits_a);
      CHECK(a[i].bits_b == b[i].bits_b);
    }
  }
  SECTION("table modes drop unrepresentable widths") {
    spec.modes = {"bspline-lut"};
    spec.bits_w_set = {8};
    spec.bits_a_set = {4, 32};
    spec.bits_b_set = {3, 32};
    CHECK(enumerate_configs(spec).size() == 1);
  }
  SECTION("spline-table mode pins the weight width") {
    spec.modes = {"spline-table"};
    spec.bits_w_set = {2, 4, 8};
    spec.bits_a_set = {4};
    spec.bits_b_set = {6};
    const auto configs = enumerate_configs(spec);
    REQUIRE(configs.size() == 1);
    CHECK(configs[0].bits_w == kPassthroughBits);
  }
  SECTION("empty sets are rejected") {
    spec.bits_w_set.clear();
    CHECK_THROWS_AS(enumerate_configs(spec), std::invalid_argument);
  }
  SECTION("unknown modes are rejected") {
    spec = SweepSpec{};
    spec.modes = {"telepathy"};
    CHECK_THROWS_AS(enumerate_configs(spec), std::invalid_argument);
  }
}

TEST_CASE("pareto front") {
  SECTION("a single point is its own front") {
    const std::vector<double> acc = {0.5}, cost = {10.0};
    CHECK(pareto_front(acc, cost) == std::vector<std::size_t>{0});
  }
  SECTION("dominated points are removed") {
    const std::vector<double> acc = {0.9, 0.8}, cost = {10.0, 20.0};
    CHECK(pareto_front(acc, cost) == std::vector<std::size_t>{0});
  }
  SECTION("exact ties are both kept") {
    const std::vector<double> acc = {0.9, 0.9, 0.5}, cost = {10.0, 10.0, 5.0};
    CHECK(pareto_front(acc, cost) == std::vector<std::size_t>{0, 1, 2});
  }
  SECTION("empty input is an error") {
    CHECK_THROWS_AS(pareto_front(std::vector<double>{}, std::vector<double>{}),
                    std::invalid_argument);
  }
  SECTION("matches the quadratic oracle on random point sets") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + rng() % 100;
      std::vector<double> acc(n), cost(n);
      for (std::size_t i = 0; i < n; ++i) {
        acc[i] = std::round(unit(rng) * 20.0) / 20.0;  // coarse values force ties
        cost[i] = std::round(unit(rng) * 20.0);
      }
      CHECK(pareto_front(acc, cost) == oracle::pareto_brute(acc, cost));
    }
  }
}

TEST_CASE("sweeps produce deterministic reports with recomputable costs") {
  // Small trained model + synthetic data keep this fast.
  const GridSpec g = build_grid(3, 3, -1.0, 1.0);
  Model model;
  model.input_shape = {6};
  model.layers.emplace_back(KanLinearLayer::zeros(6, 3, g));
  init_model(model, 42);
  Dataset ds = synthetic_dataset("linsep", 400, 4, 6, 3);
  TrainConfig tc;
  tc.lr = 0.1;
  tc.epochs = 10;
  train(model, ds, tc);

  SweepSpec spec;
  spec.modes = {"fake-quant", "bspline-lut", "spline-table"};
  spec.bits_w_set = {8, 32};
  spec.bits_a_set = {4, 8, 32};
  spec.bits_b_set = {3, 8, 32};
  spec.subset = 150;
  spec.seed = 11;
  spec.format = "json";
  spec.out_prefix = temp_prefix("kantize_sweep_a");
  spec.jobs = 2;

  const SweepReport report = run_sweep(spec, model, ds, "tiny");

  // fake-quant: 2*3*3; bspline-lut: 2*2*2; spline-table: 2*2
  REQUIRE(report.points.size() == 18 + 8 + 4);

  SECTION("cost columns recompute from the config") {
    const ArchDescriptor arch = arch_of(model, "tiny");
    for (const auto& p : report.points) {
      CHECK(p.fp32_coeff_bits == fp32_coeff_bits(arch));
      if (p.config.mode == "fake-quant") {
        CHECK(p.bitops ==
              bitops_kan(arch, p.config.bits_w, p.config.bits_a, p.config.bits_b, 1, false));
        CHECK(p.lut_mem_bits == 0);
        CHECK(p.spline_mem_bits == 0);
      } else if (p.config.mode == "bspline-lut") {
        CHECK(p.bitops ==
              bitops_kan(arch, p.config.bits_w, p.config.bits_a, p.config.bits_b, 1, true));
        CHECK(p.lut_mem_bits == lut_memory_bits(arch.degree, p.config.bits_a, p.config.bits_b));
        CHECK(p.spline_mem_bits == 0);
      } else {
        CHECK(p.bitops == 0);
        CHECK(p.spline_mem_bits == spline_table_bits(arch, p.config.bits_a, p.config.bits_b));
      }
      CHECK(p.accuracy >= 0.0);
      CHECK(p.accuracy <= 1.0);
    }
  }

  SECTION("the all-sentinel configuration reproduces the fp32 baseline") {
    const double fp32 = evaluate_accuracy(model, take_subset(ds, subset_indices(ds.size(), 150, 11)));
    bool found = false;
    for (const auto& p : report.points) {
      if (p.config.mode == "fake-quant" && p.config.bits_w == 32 && p.config.bits_a == 32 &&
          p.config.bits_b == 32) {
        CHECK(p.accuracy == fp32);
        found = true;
      }
    }
    CHECK(found);
  }

  SECTION("BitOps grow with the basis width at fixed other widths") {
    std::vector<std::pair<int, std::int64_t>> rows;
    for (const auto& p : report.points)
      if (p.config.mode == "fake-quant" && p.config.bits_w == 32 && p.config.bits_a == 32)
        rows.emplace_back(p.config.bits_b, p.bitops);
    std::sort(rows.begin(), rows.end());
    REQUIRE(rows.size() >= 2);
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].second > rows[i - 1].second);
  }

  SECTION("pareto subsets point into the report") {
    const auto brute =
        [&](auto cost_of) {
          std::vector<double> acc, cost;
          for (const auto& p : report.points) {
            acc.push_back(p.accuracy);
            cost.push_back(cost_of(p));
          }
          return oracle::pareto_brute(acc, cost);
        };
    CHECK(report.pareto_bitops ==
          brute([](const ParetoPoint& p) { return static_cast<double>(p.bitops); }));
    for (auto i : report.pareto_bitops) CHECK(i < report.points.size());
  }

  SECTION("reports are byte-identical across reruns") {
    SweepSpec again = spec;
    again.out_prefix = temp_prefix("kantize_sweep_b");
    run_sweep(again, model, ds, "tiny");
    CHECK(slurp(spec.out_prefix + "_points.csv") == slurp(again.out_prefix + "_points.csv"));
    CHECK(slurp(spec.out_prefix + "_pareto.csv") == slurp(again.out_prefix + "_pareto.csv"));
    CHECK(slurp(spec.out_prefix + "_report.json") == slurp(again.out_prefix + "_report.json"));
  }

  SECTION("the CSV schema is frozen") {
    std::ifstream in(spec.out_prefix + "_points.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "model,mode,bw_w,bw_a,bw_b,accuracy,bitops,lut_mem_bits,spline_mem_bits,"
          "fp32_coeff_bits");
  }

  for (const auto& f : report.written_files) std::remove(f.c_str());
}

TEST_CASE("sweep specs load from JSON") {
  const auto j = nlohmann::json::parse(R"({
    "model": "m.kant",
    "dataset": "synthetic:moons:100:1",
    "bw_w": [8, 32],
    "bw_a": [4],
    "bw_b": [3],
    "modes": ["fake-quant"],
    "subset": 50,
    "seed": 3,
    "out": "x",
    "format": "json",
    "jobs": 1
  })");
  const SweepSpec s = sweep_from_json(j);
  CHECK(s.model_path == "m.kant");
  CHECK(s.bits_w_set == std::vector<int>{8, 32});
  CHECK(s.subset == 50);
  CHECK(s.format == "json");
}
