#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "milkt/matrix.hpp"

namespace milkt {

using ScalarFn = std::function<double(const Matrix&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
Matrix finite_difference_gradient(const ScalarFn& f, const Matrix& x, double h = 1e-5);

/// Central differences at the listed flat indices only.
std::vector<double> finite_difference_at(const ScalarFn& f, const Matrix& x,
                                         std::span<const std::size_t> indices, double h = 1e-5);

/// Central differences at `indices` of `x`, perturbing it in place and calling
/// `f` (which must read `x`). `x` is restored afterwards.
std::vector<double> finite_difference_in_place(const std::function<double()>& f, Matrix& x,
                                               std::span<const std::size_t> indices,
                                               double h = 1e-5);

/// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
/// turning rounding noise into large relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-8);

}  // namespace milkt
