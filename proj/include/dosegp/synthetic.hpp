#pragma once

// Seeded synthetic cohorts with a known transition and outcome model. Used by
// `dosegp simulate`, the acceptance studies and the tests.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dosegp/cohort.hpp"
#include "dosegp/decision.hpp"
#include "dosegp/outcome.hpp"
#include "dosegp/propagation.hpp"

namespace dosegp::synthetic {

inline constexpr std::size_t kActive = 9;

// Latent dims follow the schema order il4 .. lung_geud.
struct World {
  // Dose sensitivity per latent dim; tumor and lung gEUD respond most.
  std::array<double, kActive> dose_effect{0.02, 0.02, -0.02, 0.02, -0.10, 0.03, -0.03, 0.12, 0.10};
  // Original unit = offset + span * latent.
  std::array<double, kActive> offset{1.0, 2.0, 0.5, 100.0, 5.0, 0.01, 0.1, 30.0, 5.0};
  std::array<double, kActive> span{20.0, 15.0, 10.0, 900.0, 120.0, 0.5, 2.0, 60.0, 20.0};
  double linear_gain = 0.5;
  double linear_offset = 0.25;
  double coupling = 0.1;
  double bias_amplitude = 0.15;
  double reference_dose = 2.75;
  double transition_noise = 0.0;

  // Linear part of the transition.
  Eigen::VectorXd linear_step(const Eigen::VectorXd& z, double dose) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(kActive));
    for (std::size_t k = 0; k < kActive; ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      const double next = z[static_cast<Eigen::Index>((k + 1) % kActive)];
      out[i] = linear_gain * z[i] + linear_offset + coupling * (next - 0.5) + dose_effect[k] * (dose - reference_dose);
    }
    return out;
  }

  Eigen::VectorXd bias(const Eigen::VectorXd& z) const {
    return (bias_amplitude * (2.0 * std::numbers::pi * z.array()).sin()).matrix();
  }

  Eigen::VectorXd step(const Eigen::VectorXd& z, double dose) const { return linear_step(z, dose) + bias(z); }

  double logit_lc(const Eigen::VectorXd& z) const { return 8.0 * (z[7] - 0.40) - 3.0 * (z[4] - 0.5); }
  double logit_rp2(const Eigen::VectorXd& z) const { return 8.0 * (z[8] - 0.65); }

  // Reward of the true outcome probabilities after a final dose from z.
  double true_reward(const Eigen::VectorXd& z, double dose, const RewardConstants& c = {}) const {
    const Eigen::VectorXd final_state = step(z, dose);
    return reward(sigmoid(logit_lc(final_state)), sigmoid(logit_rp2(final_state)), c);
  }

  double optimal_dose(const Eigen::VectorXd& z, const DoseGrid& grid) const {
    auto outcome_at = [&](double dose) {
      const Eigen::VectorXd f = step(z, dose);
      OutcomeDistribution d;
      d.outcomes[0].prob_mean = sigmoid(logit_lc(f));
      d.outcomes[1].prob_mean = sigmoid(logit_rp2(f));
      return d;
    };
    return optimize_dose(outcome_at, grid).dose;
  }

  Eigen::VectorXd to_original(const Eigen::VectorXd& z, const Eigen::VectorXd& snps) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(kActive) + snps.size());
    for (std::size_t k = 0; k < kActive; ++k) {
      out[static_cast<Eigen::Index>(k)] = offset[k] + span[k] * z[static_cast<Eigen::Index>(k)];
    }
    out.tail(snps.size()) = snps;
    return out;
  }
};

struct Patient {
  PatientRecord record;
  std::array<Eigen::VectorXd, kStages + 1> latent;  // z_1 .. z_4
  Eigen::VectorXd snps;
};

struct CohortOptions {
  std::size_t patients = 80;
  std::uint64_t seed = 1;
  double dose_min = 1.5;
  double dose_max = 4.5;
};

inline std::vector<Patient> simulate(const World& world, const CohortOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> initial(0.1, 0.9);
  std::uniform_real_distribution<double> dose(options.dose_min, options.dose_max);
  std::uniform_int_distribution<int> genotype(0, 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Patient> out;
  const int width = options.patients < 1000 ? 3 : 6;
  for (std::size_t i = 0; i < options.patients; ++i) {
    Patient p;
    std::string id = std::to_string(i + 1);
    p.record.patient_id = "P" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(id.size()))), '0') + id;
    p.latent[0].resize(static_cast<Eigen::Index>(kActive));
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(kActive); ++k) p.latent[0][k] = initial(rng);
    p.snps.resize(3);
    for (Eigen::Index k = 0; k < 3; ++k) p.snps[k] = genotype(rng);
    for (std::size_t t = 0; t < kStages; ++t) p.record.doses[t] = dose(rng);
    for (std::size_t t = 0; t < kStages; ++t) {
      p.latent[t + 1] = world.step(p.latent[t], p.record.doses[t]);
      if (world.transition_noise > 0.0) {
        for (Eigen::Index k = 0; k < p.latent[t + 1].size(); ++k) p.latent[t + 1][k] += world.transition_noise * noise(rng);
      }
    }
    for (std::size_t t = 0; t < kStages; ++t) p.record.states[t] = world.to_original(p.latent[t], p.snps);
    p.record.outcomes[0] = unit(rng) < sigmoid(world.logit_lc(p.latent[kStages])) ? 1 : 0;
    p.record.outcomes[1] = unit(rng) < sigmoid(world.logit_rp2(p.latent[kStages])) ? 1 : 0;
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<PatientRecord> records(const std::vector<Patient>& patients) {
  std::vector<PatientRecord> out;
  for (const auto& p : patients) out.push_back(p.record);
  return out;
}

}  // namespace dosegp::synthetic
