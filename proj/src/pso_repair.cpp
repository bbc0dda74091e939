#include "nnrepair/pso_repair.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>
#include <thread>

#include "nnrepair/errors.hpp"
#include "nnrepair/serialize.hpp"

namespace nnrepair {

std::string to_string(FitnessVariant v) { return v == FitnessVariant::eq1 ? "eq1" : "eq2"; }
std::string to_string(LossRatio r) { return r == LossRatio::prose ? "prose" : "literal"; }

FitnessVariant fitness_variant_from_string(const std::string& s) {
  if (s == "eq1" || s == "1") return FitnessVariant::eq1;
  if (s == "eq2" || s == "2") return FitnessVariant::eq2;
  throw Error(fmt::format("unknown fitness variant '{}'", s));
}

LossRatio loss_ratio_from_string(const std::string& s) {
  if (s == "prose") return LossRatio::prose;
  if (s == "literal") return LossRatio::literal;
  throw Error(fmt::format("unknown loss ratio orientation '{}'", s));
}

void FitnessConfig::validate() const {
  if (!(delta > 0.0)) throw Error("fitness delta must be positive");
  if (!(beta >= 0.0)) throw Error("fitness beta must be non-negative");
  if (!(alpha >= 0.0)) throw Error("fitness alpha must be non-negative");
}

void SwarmConfig::validate() const {
  if (n_particles < 2) throw Error("a swarm needs at least 2 particles");
  if (!(velocity_clamp > 0.0)) throw Error("velocity clamp must be positive");
}

BaseLosses base_losses(const Model& model, const Batch& negatives, const Batch& positives) {
  return {loss(model, negatives), loss(model, positives)};
}

void score(FitnessBreakdown& b, const FitnessConfig& cfg) {
  const double neg_inf = -std::numeric_limits<double>::infinity();
  if (!std::isfinite(b.loss_neg_after) || !std::isfinite(b.loss_pos_after)) {
    b.raw_fitness = b.gated_fitness = neg_inf;
    return;
  }
  auto ratio = [&](double before, double after) {
    return cfg.orientation == LossRatio::prose ? (before + cfg.delta) / (after + cfg.delta)
                                               : (after + cfg.delta) / (before + cfg.delta);
  };
  const double patched = static_cast<double>(b.n_patched) / static_cast<double>(b.n_negatives);
  const double intact = static_cast<double>(b.n_intact) / static_cast<double>(b.n_positives);
  double raw = patched + cfg.alpha * intact;
  if (cfg.variant == FitnessVariant::eq1) {
    raw += ratio(b.loss_neg_before, b.loss_neg_after) + ratio(b.loss_pos_before, b.loss_pos_after);
  } else {
    raw += cfg.beta * ratio(b.loss_neg_before, b.loss_neg_after);
  }
  b.raw_fitness = std::isfinite(raw) ? raw : neg_inf;
  b.gated_fitness = cfg.perfect_intact && b.n_intact < b.n_positives ? 0.0 : b.raw_fitness;
}

FitnessBreakdown fitness(const Model& candidate, const Batch& negatives, const Batch& positives,
                         const BaseLosses& base, const FitnessConfig& cfg) {
  if (negatives.empty() || positives.empty()) {
    throw Error("fitness needs non-empty failed and passed sets");
  }
  FitnessBreakdown b;
  b.n_negatives = negatives.size();
  b.n_positives = positives.size();
  b.loss_neg_before = base.negatives;
  b.loss_pos_before = base.positives;

  Matrix pn = forward(candidate, negatives);
  Matrix pp = forward(candidate, positives);
  for (std::size_t s = 0; s < pn.rows(); ++s) b.n_patched += argmax(pn.row(s)) == negatives.labels[s];
  for (std::size_t s = 0; s < pp.rows(); ++s) b.n_intact += argmax(pp.row(s)) == positives.labels[s];
  b.loss_neg_after = loss_from_probabilities(pn, negatives.labels);
  b.loss_pos_after = loss_from_probabilities(pp, positives.labels);
  score(b, cfg);
  return b;
}

Batch sample_positives(const Batch& pool, std::size_t n_pos, std::uint64_t seed) {
  if (pool.empty()) throw Error("cannot sample from an empty positive pool");
  if (n_pos == 0) throw Error("positive sample size must be at least 1");
  std::vector<std::size_t> rows(pool.size());
  std::iota(rows.begin(), rows.end(), 0);
  if (n_pos < rows.size()) {
    Rng rng(derive_seed(seed, 0x9051));
    for (std::size_t k = 0; k < n_pos; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, rows.size() - 1);
      std::swap(rows[k], rows[pick(rng)]);
    }
    rows.resize(n_pos);
    std::ranges::sort(rows);
  }
  return pool.subset(rows);
}

Swarm init_swarm(const LocalizedSet& localized, const Model& model, const SwarmConfig& cfg) {
  cfg.validate();
  if (localized.refs.empty()) throw Error("cannot build a swarm over an empty weight set");
  const std::size_t layer = localized.refs.front().layer;
  for (const auto& r : localized.refs) {
    check_ref(model, r);
    if (r.layer != layer) throw Error("localized weights must share one layer");
  }

  Swarm swarm;
  swarm.refs = localized.refs;
  swarm.original = read_weights(model, swarm.refs);

  const auto& w = model.layer(layer).weights.values();
  const double n = static_cast<double>(w.size());
  swarm.weight_mean = std::accumulate(w.begin(), w.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : w) ss += (v - swarm.weight_mean) * (v - swarm.weight_mean);
  swarm.weight_std = w.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  if (!(swarm.weight_std > 0.0)) {
    swarm.weight_std = std::max(std::abs(swarm.weight_mean), 1.0) * 1e-2;
  }

  const std::size_t dim = swarm.refs.size();
  const std::size_t n_original = (cfg.n_particles + 1) / 2;
  swarm.particles.resize(cfg.n_particles);
  swarm.streams.reserve(cfg.n_particles);
  for (std::size_t k = 0; k < cfg.n_particles; ++k) {
    swarm.streams.emplace_back(derive_seed(cfg.seed, 0x5a12, k));
    auto& p = swarm.particles[k];
    if (k < n_original) {
      p.position = swarm.original;
    } else {
      std::normal_distribution<double> normal(swarm.weight_mean, swarm.weight_std);
      p.position.resize(dim);
      for (double& x : p.position) x = normal(swarm.streams[k]);
    }
    p.velocity.assign(dim, 0.0);
    p.best_position = p.position;
    p.best.raw_fitness = p.best.gated_fitness = -std::numeric_limits<double>::infinity();
  }
  return swarm;
}

namespace {

FitnessBreakdown evaluate_position(const Model& model, const std::vector<WeightRef>& refs,
                                   const std::vector<double>& position, const Batch& negatives,
                                   const Batch& positives, const BaseLosses& base,
                                   const FitnessConfig& cfg) {
  if (!std::ranges::all_of(position, [](double v) { return std::isfinite(v); })) {
    FitnessBreakdown b;
    b.n_negatives = negatives.size();
    b.n_positives = positives.size();
    b.raw_fitness = b.gated_fitness = -std::numeric_limits<double>::infinity();
    return b;
  }
  return fitness(write_weights(model, refs, position), negatives, positives, base, cfg);
}

/// Evaluates every particle's current position. Slot k is written only by
/// the worker owning k, so the results do not depend on the thread count.
std::vector<FitnessBreakdown> evaluate_swarm(const Model& model, const Swarm& swarm,
                                             const Batch& negatives, const Batch& positives,
                                             const BaseLosses& base, const FitnessConfig& cfg,
                                             std::size_t threads) {
  const std::size_t n = swarm.particles.size();
  std::vector<FitnessBreakdown> out(n);
  auto work = [&](std::size_t first) {
    for (std::size_t k = first; k < n; k += std::max<std::size_t>(threads, 1)) {
      out[k] = evaluate_position(model, swarm.refs, swarm.particles[k].position, negatives,
                                 positives, base, cfg);
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(work, t);
  }
  return out;
}

}  // namespace

RepairResult repair(const Model& model, const LocalizedSet& localized, const Batch& negatives,
                    const Batch& positives, const FitnessConfig& fcfg, const SwarmConfig& scfg) {
  fcfg.validate();
  scfg.validate();
  const BaseLosses base = base_losses(model, negatives, positives);

  RepairResult result;
  result.identity = fitness(model, negatives, positives, base, fcfg);
  result.best = result.identity;
  result.model = model;
  if (localized.refs.empty()) {
    result.no_search_space = true;
    result.identity_fallback = true;
    result.trace.push_back({0, result.identity.gated_fitness, result.identity.n_patched,
                            result.identity.n_intact});
    return result;
  }

  Swarm swarm = init_swarm(localized, model, scfg);
  const double vmax = scfg.velocity_clamp * swarm.weight_std;
  const std::size_t dim = swarm.refs.size();

  FitnessBreakdown gbest;
  gbest.raw_fitness = gbest.gated_fitness = -std::numeric_limits<double>::infinity();
  std::vector<double> gbest_position = swarm.original;

  auto absorb = [&](const std::vector<FitnessBreakdown>& scores) {
    for (std::size_t k = 0; k < scores.size(); ++k) {
      auto& p = swarm.particles[k];
      if (!p.evaluated || scores[k].gated_fitness > p.best.gated_fitness) {
        p.best = scores[k];
        p.best_position = p.position;
        p.evaluated = true;
      }
    }
    for (const auto& p : swarm.particles) {
      if (p.best.gated_fitness > gbest.gated_fitness) {
        gbest = p.best;
        gbest_position = p.best_position;
      }
    }
  };

  absorb(evaluate_swarm(model, swarm, negatives, positives, base, fcfg, scfg.threads));
  result.trace.push_back({0, gbest.gated_fitness, gbest.n_patched, gbest.n_intact});

  for (std::size_t it = 1; it <= scfg.n_iterations; ++it) {
    for (std::size_t k = 0; k < swarm.particles.size(); ++k) {
      auto& p = swarm.particles[k];
      auto& rng = swarm.streams[k];
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (std::size_t d = 0; d < dim; ++d) {
        const double r1 = unit(rng);
        const double r2 = unit(rng);
        double v = scfg.inertia * p.velocity[d] +
                   scfg.c1 * r1 * (p.best_position[d] - p.position[d]) +
                   scfg.c2 * r2 * (gbest_position[d] - p.position[d]);
        v = std::clamp(v, -vmax, vmax);
        p.velocity[d] = v;
        p.position[d] += v;
      }
    }
    absorb(evaluate_swarm(model, swarm, negatives, positives, base, fcfg, scfg.threads));
    result.trace.push_back({it, gbest.gated_fitness, gbest.n_patched, gbest.n_intact});
  }

  if (gbest.gated_fitness > result.identity.gated_fitness) {
    result.model = write_weights(model, swarm.refs, gbest_position);
    result.best = gbest;
    result.best_position = gbest_position;
  } else {
    result.identity_fallback = true;
    result.best_position = swarm.original;
  }
  return result;
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::string out = "iteration,gbest_fitness,n_patched,n_intact\n";
  for (const auto& r : trace) {
    out += fmt::format("{},{},{},{}\n", r.iteration, format_double(r.gbest_fitness), r.n_patched,
                       r.n_intact);
  }
  return out;
}

}  // namespace nnrepair
