#pragma once

// Binary GP classifiers for LC and RP2 fitted by the Laplace approximation.
// The latent prior is h ~ N(0, K / lambda).

#include <algorithm>
#include <array>
#include <cmath>
#include <future>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dosegp/cohort.hpp"
#include "dosegp/errors.hpp"
#include "dosegp/gp.hpp"

namespace dosegp {

inline double sigmoid(double h) {
  if (h >= 0.0) return 1.0 / (1.0 + std::exp(-h));
  const double e = std::exp(h);
  return e / (1.0 + e);
}

// log(1 + e^h) without overflow.
inline double log1pexp(double h) { return h > 0.0 ? h + std::log1p(std::exp(-h)) : std::log1p(std::exp(h)); }

struct LaplaceOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 100;
  std::size_t max_halvings = 20;
};

struct LaplaceFit {
  Eigen::VectorXd mode;      // H-hat
  Eigen::VectorXd w;         // sigma(h)(1 - sigma(h)) at the mode
  Eigen::MatrixXd b_factor;  // lower Cholesky factor of I + W^1/2 (K/lambda) W^1/2
  double psi = 0.0;
  double log_det_b = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
  std::vector<double> psi_trace;  // Psi after every accepted step

  // Approximate log marginal with the 1/lambda prior on the precision.
  double objective(double precision) const { return psi - 0.5 * log_det_b - std::log(precision); }
};

namespace detail {

inline double bernoulli_loglik(const Eigen::VectorXd& h, const Eigen::VectorXi& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < h.size(); ++i) s += static_cast<double>(y[i]) * h[i] - log1pexp(h[i]);
  return s;
}

}  // namespace detail

// Newton iteration on Psi(h) = sum log p(y|h) - (lambda/2) h' K^{-1} h, kept
// in the a = lambda K^{-1} h parametrisation so no inverse of K is formed.
// `gram_entries` is K including jitter.
inline LaplaceFit laplace_fit(const Eigen::MatrixXd& gram_entries, const Eigen::VectorXi& labels, double precision,
                              const LaplaceOptions& options = {}) {
  const auto n = gram_entries.rows();
  if (n < 1 || gram_entries.cols() != n) throw ValidationError("laplace_fit: Gram matrix must be square and nonempty");
  if (labels.size() != n) throw ValidationError("laplace_fit: labels do not match the Gram matrix");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("laplace_fit: labels must be 0 or 1");
  }
  if (!(precision > 0.0)) throw ValidationError("laplace_fit: precision must be positive");

  const Eigen::MatrixXd c = gram_entries / precision;
  const Eigen::VectorXd y = labels.cast<double>();
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(n);
  auto psi_of = [&](const Eigen::VectorXd& aa, const Eigen::VectorXd& hh) {
    return detail::bernoulli_loglik(hh, labels) - 0.5 * aa.dot(hh);
  };
  auto probs = [](const Eigen::VectorXd& hh) { return hh.unaryExpr([](double v) { return sigmoid(v); }).eval(); };

  LaplaceFit fit;
  double psi = psi_of(a, h);
  fit.psi_trace.push_back(psi);
  Eigen::VectorXd pi = probs(h);
  double grad_norm = ((y - pi) - a).norm();
  std::size_t iter = 0;
  while (grad_norm >= options.tolerance) {
    if (iter == options.max_iterations) {
      throw ConvergenceError("Laplace Newton iteration did not converge in " + std::to_string(options.max_iterations) +
                                 " iterations",
                             grad_norm);
    }
    ++iter;
    const Eigen::VectorXd w = pi.array() * (1.0 - pi.array());
    const Eigen::VectorXd sw = w.array().sqrt();
    Eigen::MatrixXd b = sw.asDiagonal() * c * sw.asDiagonal();
    b.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt(b);
    if (llt.info() != Eigen::Success) throw FactorizationError(0, std::numeric_limits<double>::quiet_NaN());
    const Eigen::VectorXd rhs = w.cwiseProduct(h) + (y - pi);
    const Eigen::VectorXd cb = c * rhs;
    const Eigen::VectorXd a_newton = rhs - sw.cwiseProduct(llt.solve(sw.cwiseProduct(cb)));

    Eigen::VectorXd a_try = a_newton;
    Eigen::VectorXd h_try = c * a_try;
    double psi_try = psi_of(a_try, h_try);
    double step = 1.0;
    std::size_t halvings = 0;
    while (psi_try < psi && halvings < options.max_halvings) {
      step *= 0.5;
      ++halvings;
      a_try = a + step * (a_newton - a);
      h_try = c * a_try;
      psi_try = psi_of(a_try, h_try);
    }
    if (psi_try < psi) break;  // no ascent direction left at working precision
    a = std::move(a_try);
    h = std::move(h_try);
    psi = psi_try;
    fit.psi_trace.push_back(psi);
    pi = probs(h);
    grad_norm = ((y - pi) - a).norm();
  }

  fit.mode = h;
  fit.psi = psi;
  fit.iterations = iter;
  fit.gradient_norm = grad_norm;
  fit.w = pi.array() * (1.0 - pi.array());
  const Eigen::VectorXd sw = fit.w.array().sqrt();
  Eigen::MatrixXd b = sw.asDiagonal() * c * sw.asDiagonal();
  b.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(b);
  fit.b_factor = llt.matrixL();
  fit.log_det_b = 2.0 * fit.b_factor.diagonal().array().log().sum();
  return fit;
}

struct LogitPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

struct OutcomeClassifier {
  SEKernelParams kernel;
  Eigen::MatrixXd inputs;  // n x q, transition-predicted final states
  Eigen::VectorXi labels;
  double jitter = 1e-8;
  GramMatrix gram_matrix;
  LaplaceFit laplace;
  Eigen::VectorXd weights;  // K^{-1} H-hat

  static OutcomeClassifier fit(Eigen::MatrixXd inputs, Eigen::VectorXi labels, SEKernelParams kernel, double jitter,
                               const LaplaceOptions& options = {}) {
    OutcomeClassifier c;
    c.kernel = std::move(kernel);
    c.inputs = std::move(inputs);
    c.labels = std::move(labels);
    c.jitter = jitter;
    c.gram_matrix = gram(c.inputs, c.kernel, jitter);
    c.laplace = laplace_fit(c.gram_matrix.entries(), c.labels, c.kernel.precision, options);
    c.weights = c.gram_matrix.solve(c.laplace.mode);
    return c;
  }

  // lambda K^{-1} + W, kept for diagnostics.
  Eigen::MatrixXd lambda_matrix() const {
    const auto n = static_cast<Eigen::Index>(gram_matrix.size());
    Eigen::MatrixXd m = kernel.precision * gram_matrix.solve(Eigen::MatrixXd(Eigen::MatrixXd::Identity(n, n)));
    m.diagonal() += laplace.w;
    return m;
  }

  // Mean k' K^{-1} H-hat and variance (1/lambda)(1 - k' K^{-1} k). With
  // w_correction the variance is the usual Laplace predictive variance
  // 1/lambda - v'v, v = L_B^{-1} W^1/2 k / lambda.
  LogitPrediction predict(const Eigen::Ref<const Eigen::VectorXd>& x, bool w_correction = false) const {
    const Eigen::VectorXd k = kernel_vector(inputs, x, kernel.rates);
    return predict_from_cross(k, 1.0, w_correction);
  }

  // Shared by predict and the error-in-variable path: `k` is the cross
  // covariance vector and `prior` the query's prior kernel value.
  LogitPrediction predict_from_cross(const Eigen::VectorXd& k, double prior, bool w_correction = false) const {
    LogitPrediction p;
    p.mean = k.dot(weights);
    const double lam = kernel.precision;
    if (w_correction) {
      const Eigen::VectorXd sw = laplace.w.array().sqrt();
      const Eigen::VectorXd v =
          laplace.b_factor.triangularView<Eigen::Lower>().solve(Eigen::VectorXd(sw.cwiseProduct(k) / lam));
      p.variance = prior / lam - v.squaredNorm();
    } else {
      p.variance = (prior - gram_matrix.half_solve(k).squaredNorm()) / lam;
    }
    p.variance = std::clamp(p.variance, 0.0, prior / lam);
    return p;
  }
};

struct EvaluationModel {
  std::array<OutcomeClassifier, kOutcomes> classifiers;
};

inline LogitPrediction predict_logit(const EvaluationModel& model, std::size_t outcome,
                                     const Eigen::Ref<const Eigen::VectorXd>& state, bool w_correction = false) {
  return model.classifiers.at(outcome).predict(state, w_correction);
}

// Stage 1 sweeps a shared rate against every precision; the per-dim rate
// sweeps that follow keep the precision chosen there.
inline GridFit fit_eval_hyperparams(const Eigen::MatrixXd& inputs, const Eigen::VectorXi& labels,
                                    const HyperparameterSearch& search, double jitter,
                                    const LaplaceOptions& options = {}) {
  if (inputs.rows() < 2) throw InsufficientDataError("outcome classifier needs at least 2 samples");
  auto eval = [&](const Eigen::VectorXd& rates, const std::vector<double>& precisions) {
    std::vector<std::optional<double>> out(precisions.size());
    Eigen::MatrixXd k = kernel_matrix(inputs, rates);
    k.diagonal().array() += jitter;
    for (std::size_t i = 0; i < precisions.size(); ++i) {
      try {
        out[i] = laplace_fit(k, labels, precisions[i], options).objective(precisions[i]);
      } catch (const FactorizationError&) {
      } catch (const ConvergenceError&) {
      }
    }
    return out;
  };
  return grid_search(static_cast<std::size_t>(inputs.cols()), search, eval, false);
}

inline EvaluationModel fit_evaluation(const Eigen::MatrixXd& inputs, const std::array<Eigen::VectorXi, kOutcomes>& labels,
                                      const HyperparameterSearch& search, double jitter, bool parallel = true) {
  auto fit_one = [&](std::size_t j) {
    GridFit g = fit_eval_hyperparams(inputs, labels[j], search, jitter);
    return OutcomeClassifier::fit(inputs, labels[j], g.params, jitter);
  };
  EvaluationModel model;
  if (parallel) {
    std::array<std::future<OutcomeClassifier>, kOutcomes> jobs;
    for (std::size_t j = 0; j < kOutcomes; ++j) jobs[j] = std::async(std::launch::async, fit_one, j);
    for (std::size_t j = 0; j < kOutcomes; ++j) model.classifiers[j] = jobs[j].get();
  } else {
    for (std::size_t j = 0; j < kOutcomes; ++j) model.classifiers[j] = fit_one(j);
  }
  return model;
}

// Summed binary cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12].
inline double cross_entropy(const Eigen::VectorXd& probs, const Eigen::VectorXi& labels) {
  if (probs.size() != labels.size()) throw ValidationError("cross_entropy: length mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-12, 1.0 - 1e-12);
    s -= labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return s;
}

}  // namespace dosegp
