#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "kantize/dataset.hpp"
#include "kantize/sweep.hpp"
#include "oracles.hpp"

using namespace kantize;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("IDX parsing and pixel scaling") {
  const std::string img = temp_path("kantize_test_images.idx");
  const std::string lab = temp_path("kantize_test_labels.idx");

  std::vector<std::vector<std::uint8_t>> images = {
      {0, 255, 128, 64}, {255, 0, 0, 255}, {10, 20, 30, 40}};
  std::vector<std::uint8_t> labels = {3, 9, 0};
  oracle::write_idx_pair(img, lab, images, labels, 2, 2);

  const Dataset ds = load_idx(img, lab, -1.0, 1.0);
  REQUIRE(ds.size() == 3);
  REQUIRE(ds.inputs.cols() == 4);
  CHECK(ds.labels[0] == 3);
  CHECK(ds.labels[1] == 9);
  CHECK(ds.n_classes == 10);

  CHECK(ds.inputs(0, 0) == -1.0);  // pixel 0 lands exactly on the lower bound
  CHECK(ds.inputs(0, 1) == 1.0);   // pixel 255 lands exactly on the upper bound
  CHECK(ds.inputs(0, 2) == Catch::Approx(-1.0 + 128.0 * 2.0 / 255.0).margin(1e-12));

  SECTION("count mismatch is detected") {
    oracle::write_idx_pair(img, lab, images, {1, 2}, 2, 2);
    CHECK_THROWS_WITH(load_idx(img, lab), Catch::Matchers::ContainsSubstring("mismatch"));
  }
  SECTION("bad magic is detected") {
    std::ofstream bad(img, std::ios::binary | std::ios::trunc);
    const char junk[16] = {0};
    bad.write(junk, 16);
    bad.close();
    CHECK_THROWS_WITH(load_idx(img, lab), Catch::Matchers::ContainsSubstring("magic"));
  }
  std::remove(img.c_str());
  std::remove(lab.c_str());
}

TEST_CASE("synthetic datasets") {
  SECTION("same seed gives identical data") {
    const Dataset a = synthetic_dataset("moons", 500, 42);
    const Dataset b = synthetic_dataset("moons", 500, 42);
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
  }
  SECTION("different seeds differ") {
    const Dataset a = synthetic_dataset("moons", 100, 1);
    const Dataset b = synthetic_dataset("moons", 100, 2);
    CHECK(!(a.inputs == b.inputs));
  }
  SECTION("empty request gives an empty dataset") {
    const Dataset ds = synthetic_dataset("blobs", 0, 7, 4, 3);
    CHECK(ds.size() == 0);
  }
  SECTION("all inputs stay inside the domain") {
    for (const char* kind : {"moons", "blobs", "linsep"}) {
      const Dataset ds = synthetic_dataset(kind, 1000, 3, 6, 4);
      for (double v : ds.inputs.flat()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
      }
      for (int label : ds.labels) {
        CHECK(label >= 0);
        CHECK(label < ds.n_classes);
      }
    }
  }
  SECTION("unknown kinds are rejected") {
    CHECK_THROWS_AS(synthetic_dataset("nope", 10, 0), std::invalid_argument);
  }
  SECTION("skip carves disjoint splits out of one problem") {
    const Dataset whole = synthetic_dataset("linsep", 300, 8, 4, 3);
    const Dataset head = synthetic_dataset("linsep", 200, 8, 4, 3, 0);
    const Dataset tail = synthetic_dataset("linsep", 100, 8, 4, 3, 200);
    for (std::size_t i = 0; i < 100; ++i) {
      CHECK(tail.labels[i] == whole.labels[200 + i]);
      for (std::size_t d = 0; d < 4; ++d) CHECK(tail.inputs(i, d) == whole.inputs(200 + i, d));
    }
    CHECK(head.labels[0] == whole.labels[0]);
  }
}

TEST_CASE("subset selection is deterministic and label-preserving") {
  const Dataset ds = synthetic_dataset("blobs", 400, 11, 5, 3);
  const auto idx1 = subset_indices(ds.size(), 100, 9);
  const auto idx2 = subset_indices(ds.size(), 100, 9);
  CHECK(idx1 == idx2);
  const Dataset sub = take_subset(ds, idx1);
  REQUIRE(sub.size() == 100);
  for (std::size_t i = 0; i < sub.size(); ++i) {
    CHECK(sub.labels[i] == ds.labels[idx1[i]]);
    CHECK(sub.inputs(i, 0) == ds.inputs(idx1[i], 0));
  }
}

TEST_CASE("dataset specification strings") {
  const Dataset ds = load_dataset_spec("synthetic:moons:64:5", -1.0, 1.0);
  CHECK(ds.size() == 64);
  CHECK_THROWS(load_dataset_spec("synthetic:moons", -1.0, 1.0));
  CHECK_THROWS(load_dataset_spec("whatever:x", -1.0, 1.0));
  CHECK_THROWS(load_dataset_spec("", -1.0, 1.0));

  const Dataset split = load_dataset_spec("synthetic:linsep:50:8:4:3:200", -1.0, 1.0);
  const Dataset direct = synthetic_dataset("linsep", 50, 8, 4, 3, 200);
  CHECK(split.inputs == direct.inputs);
  CHECK(split.labels == direct.labels);
}

TEST_CASE("real MNIST has the documented shape when present") {
  const char* dir = std::getenv("KANTIZE_DATA_DIR");
  if (!dir) {
    SUCCEED("KANTIZE_DATA_DIR not set; skipping the real-data check");
    return;
  }
  const Dataset ds = load_dataset_spec("mnist-test:" + std::string(dir), -1.0, 1.0);
  CHECK(ds.size() == 10000);
  CHECK(ds.inputs.cols() == 784);
  CHECK(ds.n_classes == 10);
}
