#pragma once

// Non-saturating adversarial losses with an input-gradient penalty on real data.

#include <cmath>
#include <functional>

#include "graf/diffcore/var.hpp"

namespace graf::train {

// f(t) = -log(1 + exp(-t)), evaluated as -softplus(-t).
inline double f_objective(double t) { return -(std::max(-t, 0.0) + std::log1p(std::exp(-std::abs(t)))); }

// mean softplus(-D(real)) + mean softplus(D(fake)) + lambda * r1.
template <typename T>
ad::Var<T> loss_discriminator(const ad::Var<T>& logits_real, const ad::Var<T>& logits_fake, const ad::Var<T>& r1, double lambda) {
  const ad::Var<T> adv = ad::mean_all(ad::softplus(-logits_real)) + ad::mean_all(ad::softplus(logits_fake));
  if (lambda == 0) return adv;
  return adv + r1 * static_cast<T>(lambda);
}

// mean softplus(-D(fake)).
template <typename T>
ad::Var<T> loss_generator(const ad::Var<T>& logits_fake) {
  return ad::mean_all(ad::softplus(-logits_fake));
}

// Mean over the batch of |dD/dP|^2 at the given real patches. The result stays on
// the tape (double backward), so it can be differentiated with respect to the
// discriminator parameters. Recording is forced on. Also returns the logits computed along the way.
template <typename T>
struct PenaltyResult {
  ad::Var<T> penalty;
  ad::Var<T> logits;
};

template <typename T>
PenaltyResult<T> r1_penalty(const std::function<ad::Var<T>(const ad::Var<T>&)>& disc, const ad::Tensor<T>& real) {
  if (real.rank() < 1 || real.shape()[0] == 0) throw ad::ShapeError("r1_penalty: empty batch");
  ad::EnableGradGuard recording;  // the input gradient needs a tape even under NoGradGuard
  const ad::Var<T> p(real, true);
  const ad::Var<T> logits = disc(p);
  const ad::Var<T> g = ad::grad(ad::sum_all(logits), {p}, /*create_graph=*/true)[0];
  const T batch = static_cast<T>(real.shape()[0]);
  return {ad::sum_all(ad::square(g)) / batch, logits};
}

}  // namespace graf::train
