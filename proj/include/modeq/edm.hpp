#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "modeq/errors.hpp"

namespace modeq {

/// Accuracy (percent) of every modality subset, keyed by bitmask. Complete
/// tables hold all 2^n subsets including the empty one, whose entry is the
/// majority-class baseline.
class SubsetPerformanceTable {
 public:
  explicit SubsetPerformanceTable(int n_modalities)
      : n_(n_modalities), perf_(std::size_t{1} << n_modalities) {
    if (n_modalities < 1 || n_modalities > 12) {
      throw ConfigError("SubsetPerformanceTable: n_modalities " +
                        std::to_string(n_modalities) + " outside [1, 12]");
    }
  }

  int n_modalities() const { return n_; }
  std::size_t n_subsets() const { return perf_.size(); }

  void set(unsigned mask, double accuracy_percent) {
    perf_.at(mask) = accuracy_percent;
  }

  double at(unsigned mask) const {
    const auto& v = perf_.at(mask);
    if (!v) {
      throw MissingSubsetError("subset performance missing for subset " +
                               subset_str(mask));
    }
    return *v;
  }

  bool complete() const {
    return std::all_of(perf_.begin(), perf_.end(),
                       [](const auto& v) { return v.has_value(); });
  }

  std::string subset_str(unsigned mask) const {
    std::string s = "{";
    bool first = true;
    for (int i = 0; i < n_; ++i) {
      if (mask & (1u << i)) {
        if (!first) s += ", ";
        s += std::to_string(i);
        first = false;
      }
    }
    return s + "}";
  }

 private:
  int n_;
  std::vector<std::optional<double>> perf_;
};

/// Exact Shapley values over the subset table:
///   psi_i = sum over S not containing i of
///           |S|! (n-|S|-1)! / n! * [P(S u {i}) - P(S)].
/// Enumerates all subsets; exact for n <= 12.
inline std::vector<double> shapley(const SubsetPerformanceTable& table) {
  const int n = table.n_modalities();
  std::vector<double> factorial(n + 1, 1.0);
  for (int i = 1; i <= n; ++i) factorial[i] = factorial[i - 1] * i;

  std::vector<double> psi(n, 0.0);
  const unsigned full = (1u << n) - 1u;
  for (int i = 0; i < n; ++i) {
    const unsigned bit = 1u << i;
    for (unsigned s = 0; s <= full; ++s) {
      if (s & bit) continue;
      const int size = std::popcount(s);
      const double weight =
          factorial[size] * factorial[n - size - 1] / factorial[n];
      psi[i] += weight * (table.at(s | bit) - table.at(s));
    }
  }
  return psi;
}

enum class NormalizeMode { share, raw };

/// share: psi_i = n * 100 * psi_raw_i / sum(psi_raw), so a perfectly balanced
/// split maps every modality to 100 (the eta reference). raw: identity.
inline std::vector<double> normalize(const std::vector<double>& psi_raw,
                                     NormalizeMode mode) {
  if (mode == NormalizeMode::raw) return psi_raw;
  const double total = std::accumulate(psi_raw.begin(), psi_raw.end(), 0.0);
  if (total <= 0.0) {
    throw DegenerateContributionError(
        "normalize: total contribution " + std::to_string(total) +
        " is not positive; share normalization undefined");
  }
  std::vector<double> psi(psi_raw.size());
  const double n = static_cast<double>(psi_raw.size());
  for (std::size_t i = 0; i < psi_raw.size(); ++i)
    psi[i] = n * 100.0 * psi_raw[i] / total;
  return psi;
}

struct EdmScore {
  std::vector<double> deviations;  // |eta - psi_i|
  double edm = 0.0;                // sum of deviations
};

inline EdmScore edm_score(const std::vector<double>& psi, double eta = 100.0) {
  EdmScore s;
  s.deviations.reserve(psi.size());
  for (double p : psi) {
    s.deviations.push_back(std::abs(eta - p));
    s.edm += s.deviations.back();
  }
  return s;
}

/// Modalities sorted by contribution deficit eta - psi_i, descending: the
/// weakest modality comes first. Ties break toward the lower index.
inline std::vector<int> priority_order(const std::vector<double>& psi, double eta) {
  std::vector<int> order(psi.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return (eta - psi[a]) > (eta - psi[b]);
  });
  return order;
}

/// Per-epoch contribution diagnostics: raw and normalized Shapley values,
/// deviations from eta, the EDM total and the induced priority order.
struct ContributionReport {
  std::vector<double> psi_raw;
  std::vector<double> psi;
  std::vector<double> deviations;
  double edm = 0.0;
  double eta = 100.0;
  std::vector<int> priority;

  nlohmann::json to_json() const {
    return nlohmann::json{{"psi_raw", psi_raw}, {"psi", psi},
                          {"deviations", deviations}, {"edm", edm},
                          {"eta", eta},           {"priority", priority}};
  }
};

/// Throws DegenerateContributionError when share normalization is undefined;
/// callers keep the previous epoch's order in that case.
inline ContributionReport contribution_report(const SubsetPerformanceTable& table,
                                              NormalizeMode mode,
                                              double eta = 100.0) {
  ContributionReport r;
  r.eta = eta;
  r.psi_raw = shapley(table);
  r.psi = normalize(r.psi_raw, mode);
  const EdmScore s = edm_score(r.psi, eta);
  r.deviations = s.deviations;
  r.edm = s.edm;
  r.priority = priority_order(r.psi, eta);
  return r;
}

}  // namespace modeq
