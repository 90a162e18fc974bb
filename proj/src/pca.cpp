#include <algorithm>
#include <cmath>
#include <string>

#include "milkt/transfer.hpp"

namespace milkt {
namespace {

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Removes the components of v along the first `count` columns of basis.
void orthogonalise(std::vector<double>& v, const Matrix& basis, std::size_t count) {
  for (std::size_t c = 0; c < count; ++c) {
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) d += v[i] * basis(i, c);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * basis(i, c);
  }
}

// First non-zero entry positive, so the direction is unique.
void fix_sign(std::vector<double>& v) {
  for (double x : v) {
    if (std::abs(x) > 1e-12) {
      if (x < 0.0)
        for (double& y : v) y = -y;
      return;
    }
  }
}

}  // namespace

Matrix pca_reduce(const Matrix& fit_data, std::size_t components, std::size_t iterations,
                  double tol) {
  const std::size_t n = fit_data.rows();
  const std::size_t d = fit_data.cols();
  if (components == 0 || components > d) {
    throw ContractError("pca_reduce: components must be in [1, " + std::to_string(d) + "], got " +
                        std::to_string(components));
  }
  if (n < components) {
    throw ContractError("pca_reduce: need at least " + std::to_string(components) +
                        " samples, got " + std::to_string(n));
  }

  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mean[c] += fit_data(r, c);
  for (double& m : mean) m /= static_cast<double>(n);

  Matrix centred(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) centred(r, c) = fit_data(r, c) - mean[c];
  Matrix cov = matmul(centred.transposed(), centred);
  for (auto& v : cov.data()) v /= static_cast<double>(n);

  Matrix basis(d, components);
  std::vector<double> v(d), w(d);
  for (std::size_t k = 0; k < components; ++k) {
    // Deterministic start with a component along every axis.
    for (std::size_t i = 0; i < d; ++i) v[i] = 1.0 + 0.01 * static_cast<double>((i * 7 + k) % 13);
    orthogonalise(v, basis, k);
    double nv = norm(v);
    for (double& x : v) x /= nv;

    double eigenvalue = 0.0;
    for (std::size_t it = 0; it < iterations; ++it) {
      for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += cov(i, j) * v[j];
        w[i] = s;
      }
      orthogonalise(w, basis, k);
      const double nw = norm(w);
      if (nw < 1e-300) break;  // remaining variance is zero; keep current v
      for (double& x : w) x /= nw;
      double delta = 0.0;
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += w[i] * v[i];
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = std::abs(w[i] - (dot < 0 ? -v[i] : v[i]));
        delta = std::max(delta, diff);
      }
      v.swap(w);
      eigenvalue = nw;
      if (delta < tol) break;
    }

    orthogonalise(v, basis, k);
    nv = norm(v);
    if (nv < 1e-12) {
      // Degenerate remainder: fall back to the first axis not yet spanned.
      for (std::size_t axis = 0; axis < d; ++axis) {
        std::fill(v.begin(), v.end(), 0.0);
        v[axis] = 1.0;
        orthogonalise(v, basis, k);
        nv = norm(v);
        if (nv > 1e-6) break;
      }
    }
    for (double& x : v) x /= nv;
    fix_sign(v);
    for (std::size_t i = 0; i < d; ++i) basis(i, k) = v[i];

    // Deflate.
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov(i, j) -= eigenvalue * v[i] * v[j];
  }
  return basis;
}

}  // namespace milkt
