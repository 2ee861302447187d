#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "modeq/blobio.hpp"
#include "modeq/errors.hpp"
#include "modeq/rng.hpp"
#include "modeq/tensor.hpp"

namespace modeq {

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

/// Synthetic multimodal classification dataset. Feature matrices are d_i x m
/// with one column per sample; all modalities share the label vector and the
/// split assignment. Immutable after generation.
struct MultimodalDataset {
  int n_modalities = 0;
  std::vector<int> dims;
  int n_classes = 0;
  int m = 0;
  std::vector<Tensor> features;   // per modality, d_i x m
  std::vector<int> labels;        // size m
  std::vector<Split> split;       // size m
  std::vector<double> informativeness;
  std::uint64_t seed = 0;

  std::vector<int> indices_of(Split s) const {
    std::vector<int> out;
    for (int i = 0; i < m; ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  std::vector<int> labels_at(const std::vector<int>& idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
  }

  friend bool operator==(const MultimodalDataset& a, const MultimodalDataset& b) {
    return a.n_modalities == b.n_modalities && a.dims == b.dims &&
           a.n_classes == b.n_classes && a.m == b.m && a.features == b.features &&
           a.labels == b.labels && a.split == b.split &&
           a.informativeness == b.informativeness && a.seed == b.seed;
  }
};

struct DataGenConfig {
  int n_modalities = 2;
  std::vector<int> dims;
  int n_classes = 4;
  int m = 2000;
  std::vector<double> informativeness;
  double noise = 1.0;
  std::array<double, 3> split_fractions{0.7, 0.15, 0.15};
};

/// Deterministic generator: identical (config, seed) yields a bit-identical
/// dataset. Class prototypes are drawn once per modality from the seeded
/// stream; each sample's column is rho * prototype(label) + (1 - rho) * noise.
inline MultimodalDataset generate(const DataGenConfig& cfg, std::uint64_t seed) {
  if (cfg.n_modalities < 1) throw ConfigError("generate: n_modalities must be >= 1");
  if (static_cast<int>(cfg.dims.size()) != cfg.n_modalities) {
    throw ConfigError("generate: dims has " + std::to_string(cfg.dims.size()) +
                      " entries for " + std::to_string(cfg.n_modalities) +
                      " modalities");
  }
  if (static_cast<int>(cfg.informativeness.size()) != cfg.n_modalities) {
    throw ConfigError("generate: informativeness has " +
                      std::to_string(cfg.informativeness.size()) + " entries for " +
                      std::to_string(cfg.n_modalities) + " modalities");
  }
  for (double rho : cfg.informativeness) {
    if (rho < 0.0 || rho > 1.0)
      throw ConfigError("generate: informativeness must lie in [0, 1]");
  }
  for (int d : cfg.dims) {
    if (d < cfg.n_classes) {
      throw ConfigError("generate: modality dimension " + std::to_string(d) +
                        " is below n_classes " + std::to_string(cfg.n_classes));
    }
  }
  if (cfg.noise < 0.0) throw ConfigError("generate: noise must be >= 0");
  if (cfg.m < 3) throw ConfigError("generate: m must be >= 3");

  MultimodalDataset d;
  d.n_modalities = cfg.n_modalities;
  d.dims = cfg.dims;
  d.n_classes = cfg.n_classes;
  d.m = cfg.m;
  d.informativeness = cfg.informativeness;
  d.seed = seed;

  // Round-robin labels keep every contiguous split balanced whenever its
  // size is a multiple of n_classes.
  d.labels.resize(cfg.m);
  for (int s = 0; s < cfg.m; ++s) d.labels[s] = s % cfg.n_classes;

  const int n_train = static_cast<int>(cfg.split_fractions[0] * cfg.m);
  const int n_val = static_cast<int>(cfg.split_fractions[1] * cfg.m);
  const int n_test = cfg.m - n_train - n_val;
  if (n_train <= 0 || n_val <= 0 || n_test <= 0) {
    throw ConfigError("generate: split fractions leave an empty split");
  }
  d.split.assign(cfg.m, Split::test);
  for (int s = 0; s < n_train; ++s) d.split[s] = Split::train;
  for (int s = n_train; s < n_train + n_val; ++s) d.split[s] = Split::val;

  for (int i = 0; i < cfg.n_modalities; ++i) {
    auto rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const Tensor prototypes = normal_tensor({cfg.dims[i], cfg.n_classes}, rng);
    const double rho = cfg.informativeness[i];
    std::normal_distribution<double> dist(0.0, cfg.noise);
    Tensor x({cfg.dims[i], cfg.m});
    for (int s = 0; s < cfg.m; ++s) {
      const int y = d.labels[s];
      for (int r = 0; r < cfg.dims[i]; ++r) {
        x(r, s) = rho * prototypes(r, y) + (1.0 - rho) * dist(rng);
      }
    }
    d.features.push_back(std::move(x));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Missing-modality masks
// ---------------------------------------------------------------------------

/// Boolean presence matrix [n_modalities x m]. Every sample keeps at least
/// one present modality.
struct MissingMask {
  int n_modalities = 0;
  int m = 0;
  std::vector<std::uint8_t> present;  // row-major [n_modalities x m]

  static MissingMask all_present(int n, int m) {
    MissingMask mk;
    mk.n_modalities = n;
    mk.m = m;
    mk.present.assign(static_cast<std::size_t>(n) * m, 1);
    return mk;
  }

  bool at(int modality, int sample) const {
    return present[static_cast<std::size_t>(modality) * m + sample] != 0;
  }

  void set(int modality, int sample, bool v) {
    present[static_cast<std::size_t>(modality) * m + sample] = v ? 1 : 0;
  }

  double drop_fraction() const {
    std::size_t dropped = 0;
    for (auto v : present)
      if (!v) ++dropped;
    return static_cast<double>(dropped) / static_cast<double>(present.size());
  }
};

/// Dropped-cell placement with an exact global budget of round(rate * n * m)
/// cells, scattered uniformly while never emptying a sample's row. The exact
/// budget keeps the realized drop fraction at the nominal rate even at
/// rate 0.5, where per-sample rejection of all-dropped rows would bias the
/// realized rate several points low.
inline MissingMask apply_missing(const MultimodalDataset& d, double rate,
                                 std::uint64_t seed) {
  if (rate < 0.0 || rate > 0.5) {
    throw ConfigError("apply_missing: rate " + std::to_string(rate) +
                      " outside [0, 0.5]");
  }
  MissingMask mask = MissingMask::all_present(d.n_modalities, d.m);
  const std::size_t cells = static_cast<std::size_t>(d.n_modalities) * d.m;
  std::size_t budget = static_cast<std::size_t>(std::llround(rate * cells));
  if (budget == 0) return mask;

  std::vector<std::uint32_t> order(cells);
  std::iota(order.begin(), order.end(), 0u);
  auto rng = make_rng(derive_seed(seed, 0x6d61736bULL));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<int> present_count(d.m, d.n_modalities);
  for (std::uint32_t cell : order) {
    if (budget == 0) break;
    const int sample = static_cast<int>(cell % d.m);
    const int modality = static_cast<int>(cell / d.m);
    if (present_count[sample] <= 1) continue;  // keep >= 1 modality per sample
    mask.set(modality, sample, false);
    --present_count[sample];
    --budget;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Serialization: manifest.json + one little-endian float64 blob per modality
// + labels.bin (little-endian int32). Bit-exact round trip.
// ---------------------------------------------------------------------------

inline void save(const MultimodalDataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  int n_train = 0, n_val = 0, n_test = 0;
  for (Split s : d.split) {
    if (s == Split::train) ++n_train;
    else if (s == Split::val) ++n_val;
    else ++n_test;
  }
  nlohmann::json manifest{
      {"version", 1},
      {"n_modalities", d.n_modalities},
      {"dims", d.dims},
      {"n_classes", d.n_classes},
      {"m", d.m},
      {"splits", {{"train", n_train}, {"val", n_val}, {"test", n_test}}},
      {"informativeness", d.informativeness},
      {"seed", d.seed},
  };
  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << "\n";
  mf.close();

  for (int i = 0; i < d.n_modalities; ++i) {
    detail::write_blob(dir / ("modality_" + std::to_string(i) + ".bin"),
                       d.features[i].data(), d.features[i].size() * sizeof(double));
  }
  std::vector<std::int32_t> labels32(d.labels.begin(), d.labels.end());
  detail::write_blob(dir / "labels.bin", labels32.data(),
                     labels32.size() * sizeof(std::int32_t));
}

inline MultimodalDataset load(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  {
    std::ifstream mf(manifest_path);
    if (!mf) throw FormatError("missing manifest: " + manifest_path.string());
    try {
      manifest = nlohmann::json::parse(mf);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed manifest " + manifest_path.string() + ": " +
                        e.what());
    }
  }
  const auto need = [&](const char* key) -> const nlohmann::json& {
    if (!manifest.contains(key))
      throw FormatError("manifest missing field: " + std::string(key));
    return manifest.at(key);
  };

  MultimodalDataset d;
  try {
    d.n_modalities = need("n_modalities").get<int>();
    d.dims = need("dims").get<std::vector<int>>();
    d.n_classes = need("n_classes").get<int>();
    d.m = need("m").get<int>();
    d.informativeness = need("informativeness").get<std::vector<double>>();
    d.seed = need("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest field has wrong type: " + std::string(e.what()));
  }
  if (d.n_modalities < 1 || static_cast<int>(d.dims.size()) != d.n_modalities) {
    throw FormatError("manifest field dims disagrees with n_modalities");
  }
  if (d.m < 1) throw FormatError("manifest field m must be positive");

  const auto& splits = need("splits");
  int n_train = 0, n_val = 0, n_test = 0;
  try {
    n_train = splits.at("train").get<int>();
    n_val = splits.at("val").get<int>();
    n_test = splits.at("test").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest field splits is malformed: " + std::string(e.what()));
  }
  if (n_train <= 0 || n_val <= 0 || n_test <= 0 || n_train + n_val + n_test != d.m) {
    throw FormatError("manifest field splits does not partition m samples");
  }
  d.split.assign(d.m, Split::test);
  for (int s = 0; s < n_train; ++s) d.split[s] = Split::train;
  for (int s = n_train; s < n_train + n_val; ++s) d.split[s] = Split::val;

  // The modality blob set must match n_modalities exactly.
  int blob_count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("modality_", 0) == 0 && name.size() > 13 &&
        name.substr(name.size() - 4) == ".bin") {
      ++blob_count;
    }
  }
  if (blob_count != d.n_modalities) {
    throw FormatError("manifest field n_modalities=" + std::to_string(d.n_modalities) +
                      " but directory holds " + std::to_string(blob_count) +
                      " modality blobs");
  }

  for (int i = 0; i < d.n_modalities; ++i) {
    const auto path = dir / ("modality_" + std::to_string(i) + ".bin");
    const auto buf = detail::read_blob(path);
    const std::size_t want =
        static_cast<std::size_t>(d.dims[i]) * d.m * sizeof(double);
    if (buf.size() != want) {
      throw FormatError("blob " + path.string() + " holds " +
                        std::to_string(buf.size()) + " bytes, manifest expects " +
                        std::to_string(want));
    }
    Tensor x({d.dims[i], d.m});
    std::memcpy(x.data(), buf.data(), buf.size());
    d.features.push_back(std::move(x));
  }

  const auto lbuf = detail::read_blob(dir / "labels.bin");
  if (lbuf.size() != static_cast<std::size_t>(d.m) * sizeof(std::int32_t)) {
    throw FormatError("labels.bin holds " + std::to_string(lbuf.size()) +
                      " bytes, manifest expects " +
                      std::to_string(d.m * sizeof(std::int32_t)));
  }
  std::vector<std::int32_t> labels32(d.m);
  std::memcpy(labels32.data(), lbuf.data(), lbuf.size());
  d.labels.assign(labels32.begin(), labels32.end());
  check_labels(d.labels, d.n_classes);
  return d;
}

}  // namespace modeq
