#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nnrepair/localization.hpp"
#include "nnrepair/model.hpp"
#include "nnrepair/rng.hpp"

namespace nnrepair {

/// eq1 rewards loss reduction on both sets, eq2 on the failed set only.
enum class FitnessVariant { eq1, eq2 };

/// prose: (L + delta) / (L' + delta), which grows as the repaired loss L'
/// shrinks. literal: the inverse ratio (L' + delta) / (L + delta).
enum class LossRatio { prose, literal };

std::string to_string(FitnessVariant v);
std::string to_string(LossRatio r);
FitnessVariant fitness_variant_from_string(const std::string& s);
LossRatio loss_ratio_from_string(const std::string& s);

struct FitnessConfig {
  FitnessVariant variant = FitnessVariant::eq2;
  double alpha = 1.0;   // intact weight
  double beta = 0.25;   // loss-term weight (eq2)
  double delta = 1e-6;
  bool perfect_intact = false;
  LossRatio orientation = LossRatio::prose;

  void validate() const;
};

struct BaseLosses {
  double negatives = 0.0;
  double positives = 0.0;
};

struct FitnessBreakdown {
  std::size_t n_patched = 0;
  std::size_t n_intact = 0;
  std::size_t n_negatives = 0;
  std::size_t n_positives = 0;
  double loss_neg_before = 0.0;
  double loss_neg_after = 0.0;
  double loss_pos_before = 0.0;
  double loss_pos_after = 0.0;
  double raw_fitness = 0.0;
  double gated_fitness = 0.0;
};

BaseLosses base_losses(const Model& model, const Batch& negatives, const Batch& positives);

/// Fills raw and gated fitness from the counts and losses already in `b`.
void score(FitnessBreakdown& b, const FitnessConfig& cfg);

/// Scores a candidate model. Non-finite losses score -infinity.
FitnessBreakdown fitness(const Model& candidate, const Batch& negatives, const Batch& positives,
                         const BaseLosses& base, const FitnessConfig& cfg);

/// Uniform sample without replacement of min(n_pos, |pool|) rows, kept in
/// pool order.
Batch sample_positives(const Batch& pool, std::size_t n_pos, std::uint64_t seed);

struct SwarmConfig {
  std::size_t n_particles = 20;
  std::size_t n_iterations = 100;
  double inertia = 0.7298;
  double c1 = 1.49618;
  double c2 = 1.49618;
  double velocity_clamp = 3.0;  // multiple of the layer weight std
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // fitness evaluations in flight; results do not depend on it

  void validate() const;
};

struct Particle {
  std::vector<double> position;
  std::vector<double> velocity;
  std::vector<double> best_position;
  FitnessBreakdown best;
  bool evaluated = false;
};

struct Swarm {
  std::vector<WeightRef> refs;
  std::vector<Particle> particles;
  std::vector<Rng> streams;  // one per particle
  std::vector<double> original;
  double weight_mean = 0.0;
  double weight_std = 0.0;
};

/// The first ceil(p/2) particles sit on the original weights; the rest are
/// drawn from Normal(mean, std) of the repair layer's weights.
Swarm init_swarm(const LocalizedSet& localized, const Model& model, const SwarmConfig& cfg);

struct TraceRow {
  std::size_t iteration = 0;
  double gbest_fitness = 0.0;
  std::size_t n_patched = 0;
  std::size_t n_intact = 0;
};

struct RepairResult {
  Model model;
  FitnessBreakdown best;
  FitnessBreakdown identity;
  std::vector<double> best_position;
  std::vector<TraceRow> trace;
  bool identity_fallback = false;
  bool no_search_space = false;
};

RepairResult repair(const Model& model, const LocalizedSet& localized, const Batch& negatives,
                    const Batch& positives, const FitnessConfig& fcfg, const SwarmConfig& scfg);

std::string trace_to_csv(const std::vector<TraceRow>& trace);

}  // namespace nnrepair
