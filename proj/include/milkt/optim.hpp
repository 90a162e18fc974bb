#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "milkt/mil_model.hpp"

namespace milkt {

/// Non-finite value met during optimisation; the message names the tensor.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step_count = 0;
  double lr = 2e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight decay (p -= lr * wd * p) followed by a bias-corrected Adam
/// update. Moments are created on the first call.
void adam_step(std::span<const NamedTensor> params, std::span<const Matrix* const> grads,
               OptimState& state);

}  // namespace milkt
