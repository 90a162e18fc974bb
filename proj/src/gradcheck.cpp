#include "milkt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace milkt {

Matrix finite_difference_gradient(const ScalarFn& f, const Matrix& x, double h) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

std::vector<double> finite_difference_at(const ScalarFn& f, const Matrix& x,
                                         std::span<const std::size_t> indices, double h) {
  std::vector<double> out;
  out.reserve(indices.size());
  Matrix probe = x;
  for (std::size_t i : indices) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

std::vector<double> finite_difference_in_place(const std::function<double()>& f, Matrix& x,
                                               std::span<const std::size_t> indices, double h) {
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f();
    x[i] = orig - h;
    const double down = f();
    x[i] = orig;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace milkt
