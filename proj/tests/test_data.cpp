#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "modeq/dataset.hpp"

using namespace modeq;
namespace fs = std::filesystem;

namespace {

/// Test oracle: nearest-class-mean linear probe, fitted on the train split
/// and scored on the validation split. Independent of the training stack.
double ncm_probe_accuracy(const MultimodalDataset& d, int modality) {
  const Tensor& x = d.features[modality];
  std::vector<Tensor> means(d.n_classes, Tensor::zeros({x.rows(), 1}));
  std::vector<int> counts(d.n_classes, 0);
  for (int s = 0; s < d.m; ++s) {
    if (d.split[s] != Split::train) continue;
    for (int r = 0; r < x.rows(); ++r) means[d.labels[s]](r, 0) += x(r, s);
    ++counts[d.labels[s]];
  }
  for (int k = 0; k < d.n_classes; ++k) {
    if (counts[k] > 0) means[k] = scale(means[k], 1.0 / counts[k]);
  }
  int hits = 0, total = 0;
  for (int s = 0; s < d.m; ++s) {
    if (d.split[s] != Split::val) continue;
    int best = 0;
    double best_dist = 0.0;
    for (int k = 0; k < d.n_classes; ++k) {
      double dist = 0.0;
      for (int r = 0; r < x.rows(); ++r) {
        const double diff = x(r, s) - means[k](r, 0);
        dist += diff * diff;
      }
      if (k == 0 || dist < best_dist) {
        best = k;
        best_dist = dist;
      }
    }
    if (best == d.labels[s]) ++hits;
    ++total;
  }
  return 100.0 * hits / total;
}

DataGenConfig base_config() {
  DataGenConfig cfg;
  cfg.n_modalities = 2;
  cfg.dims = {24, 24};
  cfg.n_classes = 4;
  cfg.m = 2000;
  cfg.informativeness = {0.5, 0.5};
  cfg.noise = 1.0;
  return cfg;
}

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("modeq_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  std::vector<char> buf(static_cast<std::size_t>(f.tellg()));
  f.seekg(0);
  f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  return buf;
}

}  // namespace

TEST_CASE("uninformative modalities land at chance accuracy", "[data]") {
  DataGenConfig cfg = base_config();
  cfg.informativeness = {0.0, 0.0};
  const MultimodalDataset d = generate(cfg, 21);
  for (int k = 0; k < 2; ++k) {
    const double acc = ncm_probe_accuracy(d, k);
    REQUIRE(acc > 20.0);
    REQUIRE(acc < 30.0);
  }
}

TEST_CASE("generation is a pure function of config and seed", "[data]") {
  const DataGenConfig cfg = base_config();
  const MultimodalDataset a = generate(cfg, 77);
  const MultimodalDataset b = generate(cfg, 77);
  REQUIRE(a == b);

  const auto dir_a = temp_dir("det_a");
  const auto dir_b = temp_dir("det_b");
  save(a, dir_a);
  save(b, dir_b);
  for (const char* name : {"manifest.json", "modality_0.bin", "modality_1.bin",
                           "labels.bin"}) {
    REQUIRE(slurp(dir_a / name) == slurp(dir_b / name));
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("higher informativeness wins the unimodal probe on every seed",
          "[data]") {
  DataGenConfig cfg = base_config();
  cfg.informativeness = {0.9, 0.3};
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const MultimodalDataset d = generate(cfg, seed);
    REQUIRE(ncm_probe_accuracy(d, 0) > ncm_probe_accuracy(d, 1));
  }
}

TEST_CASE("probe accuracy is monotone in informativeness", "[data]") {
  // Non-decreasing across the 5-point grid, up to one inversion, per seed set.
  const double grid[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> mean_acc;
  for (double rho : grid) {
    DataGenConfig cfg = base_config();
    cfg.informativeness = {rho, rho};
    double acc = 0.0;
    for (std::uint64_t seed = 100; seed < 105; ++seed) {
      acc += ncm_probe_accuracy(generate(cfg, seed), 0);
    }
    mean_acc.push_back(acc / 5.0);
  }
  int inversions = 0;
  for (std::size_t i = 1; i < mean_acc.size(); ++i) {
    if (mean_acc[i] < mean_acc[i - 1]) ++inversions;
  }
  REQUIRE(inversions <= 1);
  REQUIRE(mean_acc.back() > mean_acc.front());
}

TEST_CASE("generate validates its configuration", "[data]") {
  DataGenConfig cfg = base_config();
  cfg.dims = {24, 2};  // below n_classes
  REQUIRE_THROWS_AS(generate(cfg, 1), ConfigError);
  cfg = base_config();
  cfg.informativeness = {0.5, 1.5};
  REQUIRE_THROWS_AS(generate(cfg, 1), ConfigError);
}

TEST_CASE("zero drop rate keeps everything present", "[data]") {
  const MultimodalDataset d = generate(base_config(), 3);
  const MissingMask mask = apply_missing(d, 0.0, 5);
  REQUIRE(mask.drop_fraction() == 0.0);
}

TEST_CASE("realized drop fraction tracks the nominal rate", "[data]") {
  DataGenConfig cfg = base_config();
  cfg.n_modalities = 3;
  cfg.dims = {16, 16, 16};
  cfg.informativeness = {0.5, 0.5, 0.5};
  const MultimodalDataset d = generate(cfg, 4);
  const MissingMask mask = apply_missing(d, 0.5, 11);
  REQUIRE(mask.drop_fraction() >= 0.48);
  REQUIRE(mask.drop_fraction() <= 0.52);
}

TEST_CASE("no sample loses every modality", "[data]") {
  DataGenConfig cfg = base_config();
  cfg.n_modalities = 3;
  cfg.dims = {16, 16, 16};
  cfg.informativeness = {0.5, 0.5, 0.5};
  const MultimodalDataset d = generate(cfg, 4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const MissingMask mask = apply_missing(d, 0.5, seed);
    for (int s = 0; s < d.m; ++s) {
      bool any = false;
      for (int k = 0; k < d.n_modalities; ++k) any = any || mask.at(k, s);
      REQUIRE(any);
    }
  }
}

TEST_CASE("apply_missing validates the rate", "[data]") {
  const MultimodalDataset d = generate(base_config(), 3);
  REQUIRE_THROWS_AS(apply_missing(d, 0.7, 1), ConfigError);
  REQUIRE_THROWS_AS(apply_missing(d, -0.1, 1), ConfigError);
}

TEST_CASE("save/load round-trips bit-exactly", "[data]") {
  const MultimodalDataset d = generate(base_config(), 8);
  const auto dir = temp_dir("roundtrip");
  save(d, dir);
  const MultimodalDataset back = load(dir);
  REQUIRE(back == d);
  fs::remove_all(dir);
}

TEST_CASE("manifest inconsistent with blob count is a format error", "[data]") {
  const MultimodalDataset d = generate(base_config(), 8);
  const auto dir = temp_dir("badcount");
  save(d, dir);
  {
    std::ofstream extra(dir / "modality_2.bin", std::ios::binary);
    extra << "junk";
  }
  REQUIRE_THROWS_MATCHES(load(dir), FormatError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("n_modalities")));
  fs::remove_all(dir);
}

TEST_CASE("empty manifest file is a format error, not a crash", "[data]") {
  const auto dir = temp_dir("empty");
  { std::ofstream mf(dir / "manifest.json"); }
  REQUIRE_THROWS_AS(load(dir), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("truncated blob is a format error naming the file", "[data]") {
  const MultimodalDataset d = generate(base_config(), 8);
  const auto dir = temp_dir("shortblob");
  save(d, dir);
  fs::resize_file(dir / "modality_1.bin", 16);
  REQUIRE_THROWS_MATCHES(load(dir), FormatError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("modality_1.bin")));
  fs::remove_all(dir);
}
