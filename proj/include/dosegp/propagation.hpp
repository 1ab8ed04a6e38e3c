#pragma once

// Error-in-variable propagation of the predicted final state into outcome
// logits, the delta method, the terminal reward and Monte-Carlo reward draws.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dosegp/cohort.hpp"
#include "dosegp/errors.hpp"
#include "dosegp/outcome.hpp"
#include "dosegp/transition.hpp"

namespace dosegp {

enum class EivVariant {
  verbatim,  // prod 1/(1+4 b s2) exp(-d^2 / (1/b + 4 s2))
  standard,  // prod (1+2 b s2)^(-1/2) exp(-b d^2 / (1 + 2 b s2))
};

inline const char* to_string(EivVariant v) { return v == EivVariant::verbatim ? "verbatim" : "standard"; }

inline EivVariant eiv_variant_from_string(const std::string& s) {
  if (s == "verbatim") return EivVariant::verbatim;
  if (s == "standard") return EivVariant::standard;
  throw ValidationError("unknown eiv variant '" + s + "'");
}

// Dims with zero input variance contribute exactly the SE term, so the
// all-zero case reproduces se_kernel bit for bit.
inline double eiv_kernel(const Eigen::Ref<const Eigen::VectorXd>& s, const Eigen::Ref<const Eigen::VectorXd>& s2,
                         const Eigen::VectorXd& rates, const Eigen::VectorXd& input_variances,
                         EivVariant variant = EivVariant::verbatim) {
  if (s.size() != s2.size() || s.size() != rates.size() || s.size() != input_variances.size()) {
    throw ValidationError("eiv_kernel dimension mismatch");
  }
  double prefactor = 1.0;
  double sum = 0.0;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    const double d = s[k] - s2[k];
    const double v = input_variances[k];
    const double b = rates[k];
    if (v < 0.0) throw ValidationError("input variance must be nonnegative");
    if (v == 0.0) {
      sum += b * d * d;
    } else if (variant == EivVariant::verbatim) {
      prefactor *= 1.0 / (1.0 + 4.0 * b * v);
      sum += d * d / (1.0 / b + 4.0 * v);
    } else {
      prefactor *= 1.0 / std::sqrt(1.0 + 2.0 * b * v);
      sum += b * d * d / (1.0 + 2.0 * b * v);
    }
  }
  return prefactor * std::exp(-sum);
}

struct PropagationOptions {
  EivVariant variant = EivVariant::verbatim;
  bool w_correction = false;
};

struct OutcomeMoments {
  double logit_mean = 0.0;
  double logit_variance = 0.0;
  double prob_mean = 0.5;
  double prob_variance = 0.0;

  double prob_sd() const { return std::sqrt(prob_variance); }
};

struct OutcomeDistribution {
  std::array<OutcomeMoments, kOutcomes> outcomes;

  const OutcomeMoments& lc() const { return outcomes[0]; }
  const OutcomeMoments& rp2() const { return outcomes[1]; }
};

struct ProbabilityMoments {
  double mean = 0.5;
  double variance = 0.0;
};

inline ProbabilityMoments delta_method(double logit_mean, double logit_variance) {
  if (logit_variance < 0.0) throw ValidationError("logit variance must be nonnegative");
  const double p = sigmoid(logit_mean);
  const double d = p * (1.0 - p);
  return {p, d * d * logit_variance};
}

// Logit moments at an uncertain state: cross covariances from the
// error-in-variable kernel at the query variances, training Gram unchanged.
inline LogitPrediction propagate_logit(const OutcomeClassifier& c, const StatePrediction& state,
                                       const PropagationOptions& options = {}) {
  const auto n = c.inputs.rows();
  Eigen::VectorXd k(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k[i] = eiv_kernel(state.mean, c.inputs.row(i).transpose(), c.kernel.rates, state.variance, options.variant);
  }
  const double prior = eiv_kernel(state.mean, state.mean, c.kernel.rates, state.variance, options.variant);
  return c.predict_from_cross(k, prior, options.w_correction);
}

inline OutcomeDistribution propagate(const StatePrediction& state, const EvaluationModel& model,
                                     const PropagationOptions& options = {}) {
  OutcomeDistribution out;
  for (std::size_t j = 0; j < kOutcomes; ++j) {
    const auto logit = propagate_logit(model.classifiers[j], state, options);
    const auto prob = delta_method(logit.mean, logit.variance);
    out.outcomes[j] = {logit.mean, logit.variance, prob.mean, prob.variance};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reward

struct RewardConstants {
  double scale = 10.0;
  double exponent = 8.0;
  double rp2_reference = 0.57;
  double offset = 3.281;
};

inline double reward(double p_lc, double p_rp2, const RewardConstants& c = {}) {
  if (!(p_lc >= 0.0 && p_lc <= 1.0 && p_rp2 >= 0.0 && p_rp2 <= 1.0)) {
    throw ValidationError("reward: probabilities must lie in [0, 1]");
  }
  const double a = std::pow(1.0 - p_lc, c.exponent);
  const double b = std::pow(p_rp2 / c.rp2_reference, c.exponent);
  return -c.scale * std::pow(a + b, 1.0 / c.exponent) + c.offset;
}

inline double plugin_reward(const OutcomeDistribution& d, const RewardConstants& c = {}) {
  return reward(d.lc().prob_mean, d.rp2().prob_mean, c);
}

struct RewardDistribution {
  std::vector<double> samples;
  double mean = 0.0;
  double std = 0.0;  // n - 1 denominator
  std::uint64_t seed = 0;
  std::size_t sample_count = 0;
};

inline void summarize(RewardDistribution& r) {
  const double n = static_cast<double>(r.samples.size());
  double m = 0.0;
  for (double s : r.samples) m += s;
  m /= n;
  double ss = 0.0;
  for (double s : r.samples) ss += (s - m) * (s - m);
  r.mean = m;
  r.std = r.samples.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  r.sample_count = r.samples.size();
}

// Independent normal draws for LC then RP2 per sample, clamped to [0, 1].
inline RewardDistribution sample_reward(const OutcomeDistribution& dist, std::size_t n, std::uint64_t seed,
                                        const RewardConstants& c = {}) {
  if (n < 2) throw ValidationError("sample_reward needs at least 2 samples");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const double m_lc = dist.lc().prob_mean, sd_lc = dist.lc().prob_sd();
  const double m_rp = dist.rp2().prob_mean, sd_rp = dist.rp2().prob_sd();
  RewardDistribution r;
  r.seed = seed;
  r.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lc = std::clamp(m_lc + sd_lc * z(rng), 0.0, 1.0);
    const double rp = std::clamp(m_rp + sd_rp * z(rng), 0.0, 1.0);
    r.samples.push_back(reward(lc, rp, c));
  }
  summarize(r);
  return r;
}

// ---------------------------------------------------------------------------
// Bundled models: answers "what happens at this dose" in original units.

struct TrainedModels {
  Scaling scaling;
  TransitionModel transition;
  EvaluationModel evaluation;
  PropagationOptions propagation;

  OutcomeDistribution outcome(const Eigen::VectorXd& scaled_state, double dose_gy) const {
    auto next = predict_next_state(transition, scaled_state, scaling.scale_dose(dose_gy));
    return propagate(next, evaluation, propagation);
  }
};

}  // namespace dosegp
