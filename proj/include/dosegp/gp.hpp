#pragma once

// Squared-exponential kernels, jittered Gram matrices, Cholesky solves,
// Gaussian log marginal likelihood and the grid hyperparameter search shared
// by the transition, outcome and compensation GPs.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dosegp/errors.hpp"

namespace dosegp {

struct SEKernelParams {
  Eigen::VectorXd rates;  // one per input dimension
  double precision = 1.0;

  void validate() const {
    if (rates.size() == 0) throw ValidationError("kernel has no rates");
    for (Eigen::Index k = 0; k < rates.size(); ++k) {
      if (!(rates[k] > 0.0) || !std::isfinite(rates[k])) throw ValidationError("kernel rates must be positive and finite");
    }
    if (!(precision > 0.0) || !std::isfinite(precision)) throw ValidationError("kernel precision must be positive");
  }
};

inline double se_kernel(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                        const Eigen::VectorXd& rates) {
  if (x.size() != y.size() || x.size() != rates.size()) {
    throw ValidationError("kernel dimension mismatch: " + std::to_string(x.size()) + ", " + std::to_string(y.size()) +
                          ", " + std::to_string(rates.size()) + " rates");
  }
  double sum = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double d = x[k] - y[k];
    sum += rates[k] * d * d;
  }
  return std::exp(-sum);
}

inline double se_kernel(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                        const SEKernelParams& params) {
  return se_kernel(x, y, params.rates);
}

// k(x, X.row(i)) for every row of X.
inline Eigen::VectorXd kernel_vector(const Eigen::MatrixXd& points, const Eigen::Ref<const Eigen::VectorXd>& x,
                                     const Eigen::VectorXd& rates) {
  if (points.cols() != x.size() || x.size() != rates.size()) throw ValidationError("kernel dimension mismatch");
  Eigen::VectorXd k(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index d = 0; d < x.size(); ++d) {
      const double diff = points(i, d) - x[d];
      sum += rates[d] * diff * diff;
    }
    k[i] = std::exp(-sum);
  }
  return k;
}

// Symmetric positive-definite matrix with its lower Cholesky factor.
class GramMatrix {
 public:
  GramMatrix() = default;

  GramMatrix(Eigen::MatrixXd entries, double jitter) : entries_(std::move(entries)), jitter_(jitter) {
    if (entries_.rows() != entries_.cols() || entries_.rows() == 0) throw ValidationError("Gram matrix must be square");
    factorize();
  }

  std::size_t size() const { return static_cast<std::size_t>(entries_.rows()); }
  const Eigen::MatrixXd& entries() const { return entries_; }
  const Eigen::MatrixXd& factor() const { return lower_; }
  double jitter() const { return jitter_; }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
    if (rhs.rows() != entries_.rows()) {
      throw ValidationError("solve: right-hand side has " + std::to_string(rhs.rows()) + " rows, expected " +
                            std::to_string(entries_.rows()));
    }
    Eigen::MatrixXd y = lower_.triangularView<Eigen::Lower>().solve(rhs);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    return solve(Eigen::MatrixXd(rhs)).col(0);
  }

  // L^{-1} v, so that v' K^{-1} v = |L^{-1} v|^2.
  Eigen::VectorXd half_solve(const Eigen::VectorXd& v) const {
    if (v.size() != entries_.rows()) throw ValidationError("half_solve: dimension mismatch");
    return lower_.triangularView<Eigen::Lower>().solve(v);
  }

  double log_determinant() const { return 2.0 * lower_.diagonal().array().log().sum(); }

 private:
  void factorize() {
    const auto n = entries_.rows();
    const double scale = std::max(1.0, entries_.diagonal().cwiseAbs().maxCoeff());
    const double tol = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(entries_);
    if (llt.info() == Eigen::Success) {
      lower_ = llt.matrixL();
      bool ok = true;
      for (Eigen::Index i = 0; i < n && ok; ++i) ok = lower_(i, i) * lower_(i, i) > tol;
      if (ok) return;
    }
    // Locate the failing pivot with an unblocked pass.
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      double d = entries_(j, j) - l.row(j).head(j).squaredNorm();
      if (!(d > tol)) throw FactorizationError(static_cast<std::size_t>(j), d);
      l(j, j) = std::sqrt(d);
      for (Eigen::Index i = j + 1; i < n; ++i) {
        l(i, j) = (entries_(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
      }
    }
    lower_ = std::move(l);
  }

  Eigen::MatrixXd entries_;
  Eigen::MatrixXd lower_;
  double jitter_ = 0.0;
};

inline Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& points, const Eigen::VectorXd& rates) {
  const auto n = points.rows();
  if (points.cols() != rates.size()) throw ValidationError("kernel dimension mismatch");
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      double sum = 0.0;
      for (Eigen::Index d = 0; d < points.cols(); ++d) {
        const double diff = points(i, d) - points(j, d);
        sum += rates[d] * diff * diff;
      }
      k(i, j) = k(j, i) = std::exp(-sum);
    }
  }
  return k;
}

inline GramMatrix gram(const Eigen::MatrixXd& points, const SEKernelParams& params, double jitter) {
  if (points.rows() < 1) throw ValidationError("Gram matrix needs at least one point");
  if (jitter < 0.0) throw ValidationError("jitter must be nonnegative");
  Eigen::MatrixXd k = kernel_matrix(points, params.rates);
  k.diagonal().array() += jitter;
  return GramMatrix(std::move(k), jitter);
}

inline Eigen::VectorXd solve(const GramMatrix& gm, const Eigen::VectorXd& rhs) { return gm.solve(rhs); }
inline Eigen::MatrixXd solve(const GramMatrix& gm, const Eigen::MatrixXd& rhs) { return gm.solve(rhs); }

// Gaussian log density of the residuals under covariance K / precision.
inline double log_marginal_likelihood(const Eigen::VectorXd& residuals, const GramMatrix& gm, double precision) {
  if (static_cast<std::size_t>(residuals.size()) != gm.size()) {
    throw ValidationError("residual length does not match the Gram matrix");
  }
  const double n = static_cast<double>(residuals.size());
  const double quad = gm.half_solve(residuals).squaredNorm();
  const double log_det_cov = gm.log_determinant() - n * std::log(precision);
  return -0.5 * precision * quad - 0.5 * log_det_cov - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

// ---------------------------------------------------------------------------
// Grid search

struct LogGrid {
  double lo = 1e-2;
  double hi = 1e2;
  std::size_t points = 7;

  std::vector<double> values() const {
    if (points == 0) throw ValidationError("grid has no points");
    if (!(lo > 0.0 && hi >= lo)) throw ValidationError("log grid needs 0 < lo <= hi");
    if (points == 1) return {lo};
    std::vector<double> v(points);
    const double a = std::log10(lo);
    const double b = std::log10(hi);
    for (std::size_t i = 0; i < points; ++i) {
      v[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
    }
    v.front() = lo;
    v.back() = hi;
    return v;
  }
};

struct HyperparameterSearch {
  LogGrid rates{1e-2, 1e2, 7};
  LogGrid precision{1e-1, 1e2, 7};
  // Per-dimension coordinate sweeps after the shared-rate grid.
  bool anisotropic = true;
  std::size_t refine_rounds = 1;
};

struct GridFit {
  SEKernelParams params;
  double objective = -std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;
};

// Objective contract: eval(rates, precisions) returns one optional objective
// per precision candidate (nullopt when that point is infeasible).
//
// Stage 1 sweeps a shared rate against every precision. Stage 2, when
// anisotropic, sweeps each rate coordinate in turn over the rate grid; with
// refine_precision the precision grid is re-swept at each candidate,
// otherwise the stage-1 precision stays fixed. Candidates are visited in grid
// index order and only a strictly better objective replaces the incumbent.
template <class Objective>
GridFit grid_search(std::size_t dims, const HyperparameterSearch& search, Objective&& eval,
                    bool refine_precision = true) {
  if (dims == 0) throw ValidationError("grid search over zero dimensions");
  const auto rate_values = search.rates.values();
  const auto precision_values = search.precision.values();
  GridFit best;
  bool found = false;

  auto consider = [&](const Eigen::VectorXd& rates, const std::vector<double>& precisions) {
    auto results = eval(rates, precisions);
    best.evaluations += precisions.size();
    for (std::size_t p = 0; p < precisions.size(); ++p) {
      if (!results[p]) continue;
      if (!found || *results[p] > best.objective) {
        best.objective = *results[p];
        best.params.rates = rates;
        best.params.precision = precisions[p];
        found = true;
      }
    }
  };

  for (double r : rate_values) consider(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dims), r), precision_values);
  if (!found) throw Error("hyperparameter grid search: every grid point failed to factorize");

  if (search.anisotropic && dims > 1 && rate_values.size() > 1) {
    for (std::size_t round = 0; round < search.refine_rounds; ++round) {
      for (std::size_t k = 0; k < dims; ++k) {
        const Eigen::VectorXd base = best.params.rates;
        const std::vector<double> precisions =
            refine_precision ? precision_values : std::vector<double>{best.params.precision};
        for (double r : rate_values) {
          Eigen::VectorXd trial = base;
          trial[static_cast<Eigen::Index>(k)] = r;
          if (trial == base) continue;  // already the incumbent
          consider(trial, precisions);
        }
      }
    }
  }
  return best;
}

// Regression objective: one factorization per rate vector, every precision
// scored from it.
inline GridFit fit_hyperparams(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                               const HyperparameterSearch& search, double jitter) {
  if (inputs.rows() < 3) throw InsufficientDataError("hyperparameter search needs at least 3 samples");
  if (inputs.rows() != targets.size()) throw ValidationError("inputs and targets differ in length");
  auto eval = [&](const Eigen::VectorXd& rates, const std::vector<double>& precisions) {
    std::vector<std::optional<double>> out(precisions.size());
    try {
      SEKernelParams p{rates, 1.0};
      auto gm = gram(inputs, p, jitter);
      const double n = static_cast<double>(targets.size());
      const double quad = gm.half_solve(targets).squaredNorm();
      const double log_det = gm.log_determinant();
      for (std::size_t i = 0; i < precisions.size(); ++i) {
        const double lam = precisions[i];
        out[i] = -0.5 * lam * quad - 0.5 * (log_det - n * std::log(lam)) - 0.5 * n * std::log(2.0 * std::numbers::pi);
      }
    } catch (const FactorizationError&) {
    }
    return out;
  };
  return grid_search(static_cast<std::size_t>(inputs.cols()), search, eval, true);
}

// Zero-mean GP regression posterior. Used for the transition bias and the
// dose-compensation surface.
struct GpRegression {
  SEKernelParams kernel;
  Eigen::MatrixXd inputs;
  Eigen::VectorXd targets;
  double jitter = 0.0;
  GramMatrix gram_matrix;
  Eigen::VectorXd weights;  // K^{-1} targets

  static GpRegression fit(Eigen::MatrixXd inputs, Eigen::VectorXd targets, SEKernelParams kernel, double jitter) {
    GpRegression gp;
    gp.kernel = std::move(kernel);
    gp.inputs = std::move(inputs);
    gp.targets = std::move(targets);
    gp.jitter = jitter;
    gp.gram_matrix = gram(gp.inputs, gp.kernel, jitter);
    gp.weights = gp.gram_matrix.solve(gp.targets);
    return gp;
  }

  double mean(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return kernel_vector(inputs, x, kernel.rates).dot(weights);
  }

  // Posterior variance (1/lambda)(k(x,x) - k' K^{-1} k), clamped at zero.
  double variance(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const Eigen::VectorXd k = kernel_vector(inputs, x, kernel.rates);
    const double reduction = gram_matrix.half_solve(k).squaredNorm();
    return std::max(0.0, (1.0 - reduction) / kernel.precision);
  }
};

}  // namespace dosegp
