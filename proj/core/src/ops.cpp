#include "neurovit/ops.hpp"

namespace neurovit {

void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, const AdamOptions& opt) {
  if (params.size() != grads.size()) throw Error(Errc::ShapeMismatch, "adam: gradient length differs from parameters");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0f);
    state.v.assign(params.size(), 0.0f);
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(static_cast<double>(opt.beta1), static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(static_cast<double>(opt.beta2), static_cast<double>(state.t));
  const float inv_c1 = static_cast<float>(1.0 / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    state.m[i] = opt.beta1 * state.m[i] + (1.0f - opt.beta1) * g;
    state.v[i] = opt.beta2 * state.v[i] + (1.0f - opt.beta2) * g * g;
    const float mhat = state.m[i] * inv_c1;
    const float vhat = state.v[i] * inv_c2;
    params[i] -= opt.lr * (mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * params[i]);
  }
}

}  // namespace neurovit
