#pragma once

// Brute-force posterior moments for small GP classification problems by
// trapezoidal summation over a lattice in whitened coordinates h = A u with
// A A^T = cov and u ~ N(0, I), which stays accurate when the prior is close to
// degenerate. Independent of the Newton code: it uses only the prior
// covariance and the Bernoulli likelihood.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

struct LatticeMoments {
  Eigen::VectorXd prob_mean;    // E[sigmoid(h_i) | y]
  Eigen::VectorXd latent_mean;  // E[h_i | y]
};

// Posterior h | y with prior N(0, cov) and y_i ~ Bernoulli(sigmoid(h_i)),
// summed over `points` values per axis in [-half_width, half_width].
inline LatticeMoments lattice_posterior(const Eigen::MatrixXd& cov, const Eigen::VectorXi& y, int points = 25,
                                        double half_width = 6.0) {
  const auto n = cov.rows();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::MatrixXd a = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int g = 0; g < points; ++g) grid[static_cast<std::size_t>(g)] = -half_width + 2.0 * half_width * g / (points - 1);
  std::vector<double> log_prior(static_cast<std::size_t>(points));
  for (int g = 0; g < points; ++g) log_prior[static_cast<std::size_t>(g)] = -0.5 * grid[static_cast<std::size_t>(g)] * grid[static_cast<std::size_t>(g)];
  auto log_lik = [&](const Eigen::VectorXd& h) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double log1pe = h[i] > 0 ? h[i] + std::log1p(std::exp(-h[i])) : std::log1p(std::exp(h[i]));
      s += y[i] * h[i] - log1pe;
    }
    return s;
  };

  // First pass finds the largest log density for a stable exponent offset.
  double peak = -INFINITY;
  double z = 0.0;
  Eigen::VectorXd sp = Eigen::VectorXd::Zero(n), sh = Eigen::VectorXd::Zero(n);
  std::vector<int> idx(static_cast<std::size_t>(n), 0);

  for (int pass = 0; pass < 2; ++pass) {
    std::fill(idx.begin(), idx.end(), 0);
    // Depth-first walk keeping A u and the prior term for the fixed prefix.
    std::vector<Eigen::VectorXd> h(static_cast<std::size_t>(n + 1), Eigen::VectorXd::Zero(n));
    std::vector<double> lp(static_cast<std::size_t>(n + 1), 0.0);
    Eigen::Index depth = 0;
    while (depth >= 0) {
      auto& id = idx[static_cast<std::size_t>(depth)];
      if (id == points) {
        id = 0;
        --depth;
        if (depth >= 0) ++idx[static_cast<std::size_t>(depth)];
        continue;
      }
      const auto d = static_cast<std::size_t>(depth);
      h[d + 1] = h[d] + a.col(depth) * grid[static_cast<std::size_t>(id)];
      lp[d + 1] = lp[d] + log_prior[static_cast<std::size_t>(id)];
      if (depth + 1 < n) {
        ++depth;
        continue;
      }
      const auto& hv = h[d + 1];
      const double f = lp[d + 1] + log_lik(hv);
      if (pass == 0) {
        peak = std::max(peak, f);
      } else {
        const double w = std::exp(f - peak);
        z += w;
        for (Eigen::Index i = 0; i < n; ++i) {
          sp[i] += w / (1.0 + std::exp(-hv[i]));
          sh[i] += w * hv[i];
        }
      }
      ++id;
    }
  }
  return {sp / z, sh / z};
}

}  // namespace oracle
