#include "milkt/optim.hpp"

#include <cmath>
#include <string>

namespace milkt {

void adam_step(std::span<const NamedTensor> params, std::span<const Matrix* const> grads,
               OptimState& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    require_same_shape(*params[t].value, *grads[t], "adam_step");
    if (!grads[t]->all_finite()) {
      throw NumericError("non-finite gradient in tensor " + params[t].name);
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value->rows(), p.value->cols());
      state.second_moment.emplace_back(p.value->rows(), p.value->cols());
    }
  } else if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter count changed between steps");
  }

  ++state.step_count;
  const double step = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, step);
  const double bc2 = 1.0 - std::pow(state.beta2, step);
  const double decay = state.lr * state.weight_decay;

  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double lr = state.lr;
  const double eps = state.eps;
  const double inv_bc1 = 1.0 / bc1;
  const double inv_bc2 = 1.0 / bc2;
  for (std::size_t t = 0; t < params.size(); ++t) {
    double* __restrict p = params[t].value->data().data();
    const double* __restrict g = grads[t]->data().data();
    double* __restrict m = state.first_moment[t].data().data();
    double* __restrict v = state.second_moment[t].data().data();
    const std::size_t n = params[t].value->size();
    for (std::size_t i = 0; i < n; ++i) {
      p[i] -= decay * p[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] * inv_bc1) / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
}

}  // namespace milkt
