#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "modeq/errors.hpp"
#include "modeq/rng.hpp"

namespace modeq {

enum class UpdateOrder { weak_to_strong, strong_to_weak };

/// Closed-form two-modality ordering instance. alpha_1/alpha_2 weight the
/// weak and strong loss terms; delta_1 is the memory error after the weak
/// modality trains first, delta_2 the memory error left when the weak
/// modality inherits the strong-first state; epsilon is the strong modality's
/// own residual error.
struct OrderingInstance {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double epsilon = 0.0;

  void validate() const {
    if (alpha1 < 0 || alpha2 < 0 || delta1 < 0 || delta2 < 0 || epsilon < 0) {
      throw ConfigError("OrderingInstance: all fields must be >= 0");
    }
  }
};

/// Approximate fusion loss under a forced update order:
///   weak->strong: alpha1 * delta1 + alpha2 * epsilon   (error absorption)
///   strong->weak: alpha2 * epsilon + alpha1 * delta2   (error amplification)
inline double fusion_loss(const OrderingInstance& in, UpdateOrder order) {
  in.validate();
  return order == UpdateOrder::weak_to_strong
             ? in.alpha1 * in.delta1 + in.alpha2 * in.epsilon
             : in.alpha2 * in.epsilon + in.alpha1 * in.delta2;
}

/// Loss gap between the two orders, algebraically alpha1 * (delta2 - delta1).
/// Computed as the literal loss difference so the identity
/// gap == fusion_loss(strong->weak) - fusion_loss(weak->strong) holds exactly
/// in floating point as well. Positive gap means weak-to-strong attains the
/// lower fusion loss.
inline double gap(const OrderingInstance& in) {
  return fusion_loss(in, UpdateOrder::strong_to_weak) -
         fusion_loss(in, UpdateOrder::weak_to_strong);
}

/// Monte-Carlo illustration of the ordering gap under a capacity gap kappa:
/// delta1 ~ U[0,1], delta2 = delta1 + kappa * U[0,1], epsilon = 0.1 * delta1
/// * U[0,1], alpha1 = U[0, 0.3], alpha2 = 1 - alpha1. Returns the fraction of
/// trials with a strictly positive gap.
inline double monte_carlo_ordering(double kappa, int trials, std::uint64_t seed) {
  if (kappa < 0.0) throw ConfigError("monte_carlo_ordering: kappa must be >= 0");
  if (trials < 1) throw ConfigError("monte_carlo_ordering: trials must be >= 1");
  auto rng = make_rng(derive_seed(seed, 0x7468656fULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int positive = 0;
  for (int i = 0; i < trials; ++i) {
    OrderingInstance in;
    in.delta1 = unit(rng);
    in.delta2 = in.delta1 + kappa * unit(rng);
    in.epsilon = 0.1 * in.delta1 * unit(rng);
    in.alpha1 = 0.3 * unit(rng);
    in.alpha2 = 1.0 - in.alpha1;
    if (gap(in) > 0.0) ++positive;
  }
  return static_cast<double>(positive) / trials;
}

}  // namespace modeq
