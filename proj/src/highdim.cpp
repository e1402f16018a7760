#include "rover/highdim.hpp"

#include <algorithm>
#include <set>

namespace rover {

namespace {

void check_pair(const DimPair& p, std::size_t d) {
  if (p.first >= p.second || p.second >= d)
    throw InvalidArgument("pair (" + std::to_string(p.first) + ", " + std::to_string(p.second) +
                          ") is not an ordered pair of distinct dimensions below " + std::to_string(d));
}

DimPair ordered(std::size_t a, std::size_t b) { return a < b ? DimPair{a, b} : DimPair{b, a}; }

/// m distinct draws from pool (partial Fisher-Yates).
std::vector<std::size_t> choose(std::vector<std::size_t> pool, std::size_t m, Rng& rng) {
  for (std::size_t k = 0; k < m; ++k) std::swap(pool[k], pool[k + rng.index(pool.size() - k)]);
  pool.resize(m);
  return pool;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = k;
  return v;
}

}  // namespace

PairStates::PairStates(std::size_t d, double alpha0, double delta0)
    : d_(d), alpha0_(alpha0), delta0_(delta0) {
  if (d < 2) throw InvalidArgument("pair states need d >= 2");
  if (!(alpha0 > 0.0) || !(delta0 > 0.0)) throw InvalidArgument("pair states need alpha0, delta0 > 0");
}

PairState& PairStates::at(const DimPair& p) {
  auto it = states_.find(p);
  if (it != states_.end()) return it->second;
  check_pair(p, d_);
  PairState s;
  s.pair = p;
  s.alpha = alpha0_;
  s.delta = delta0_;
  return states_.emplace(p, std::move(s)).first->second;
}

const PairState* PairStates::find(const DimPair& p) const {
  const auto it = states_.find(p);
  return it == states_.end() ? nullptr : &it->second;
}

PairStates init_pair_states(std::size_t d, double alpha0, double delta0) {
  return PairStates(d, alpha0, delta0);
}

PairStates init_pair_states(std::size_t d, const std::vector<DimPair>& pairs, double alpha0,
                            double delta0) {
  PairStates s(d, alpha0, delta0);
  for (const auto& p : pairs) s.at(p);
  return s;
}

// ---------------------------------------------------------------------------

std::string to_string(PairStrategy s) {
  switch (s) {
    case PairStrategy::all_pairs: return "all_pairs";
    case PairStrategy::uniform_k: return "uniform_k";
    case PairStrategy::per_dimension_l: return "per_dimension_l";
    case PairStrategy::block_l: return "block_l";
  }
  return "all_pairs";
}

PairStrategy parse_pair_strategy(const std::string& name) {
  for (PairStrategy s : {PairStrategy::all_pairs, PairStrategy::uniform_k, PairStrategy::per_dimension_l,
                         PairStrategy::block_l})
    if (to_string(s) == name) return s;
  throw InvalidArgument("unknown pair strategy '" + name + "'");
}

void PairBudget::validate(std::size_t d) const {
  if (d < 2) throw InvalidArgument("pair sampling needs d >= 2");
  switch (strategy) {
    case PairStrategy::all_pairs: return;
    case PairStrategy::uniform_k:
      if (reading == UniformReading::dimensions && (count < 2 || count > d))
        throw InvalidArgument("uniform_k: need 2 <= k <= d dimensions");
      if (reading == UniformReading::pairs && (count < 1 || count > d * (d - 1) / 2))
        throw InvalidArgument("uniform_k: need 1 <= k <= d(d-1)/2 pairs");
      return;
    case PairStrategy::per_dimension_l:
      if (count < 1 || count > d - 1) throw InvalidArgument("per_dimension_l: need 1 <= l <= d - 1");
      return;
    case PairStrategy::block_l: {
      if (count < 1) throw InvalidArgument("block_l: need l >= 1");
      std::vector<char> seen(d, 0);
      for (const auto& b : blocks) {
        if (b.size() < 2) throw InvalidArgument("block_l: every block needs >= 2 indices");
        for (std::size_t i : b) {
          if (i >= d) throw InvalidArgument("block_l: index out of range");
          if (seen[i]) throw InvalidArgument("block_l: blocks overlap at index " + std::to_string(i));
          seen[i] = 1;
        }
      }
      if (std::find(seen.begin(), seen.end(), 0) != seen.end())
        throw InvalidArgument("block_l: blocks do not cover every dimension");
      return;
    }
  }
}

PairBudget PairBudget::default_for(std::size_t d) {
  PairBudget b;
  if (d > 20) {
    b.strategy = PairStrategy::per_dimension_l;
    b.count = 1;
  }
  return b;
}

std::vector<DimPair> sample_pairs(const PairBudget& budget, std::size_t d, Rng& rng) {
  budget.validate(d);
  std::vector<DimPair> out;
  switch (budget.strategy) {
    case PairStrategy::all_pairs:
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) out.emplace_back(i, j);
      return out;
    case PairStrategy::uniform_k: {
      if (budget.reading == UniformReading::dimensions) {
        std::vector<std::size_t> dims = choose(iota(d), budget.count, rng);
        std::sort(dims.begin(), dims.end());
        for (std::size_t a = 0; a < dims.size(); ++a)
          for (std::size_t b = a + 1; b < dims.size(); ++b) out.emplace_back(dims[a], dims[b]);
        return out;
      }
      // Floyd's algorithm over linear pair indices.
      const std::size_t total = d * (d - 1) / 2;
      std::set<std::size_t> picked;
      for (std::size_t j = total - budget.count; j < total; ++j) {
        const std::size_t t = rng.index(j + 1);
        if (!picked.insert(t).second) picked.insert(j);
      }
      for (std::size_t idx : picked) {
        std::size_t i = 0, rem = idx;
        while (rem >= d - 1 - i) rem -= d - 1 - i++;
        out.emplace_back(i, i + 1 + rem);
      }
      return out;
    }
    case PairStrategy::per_dimension_l: {
      std::set<DimPair> set;
      for (std::size_t i = 0; i < d; ++i) {
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < d; ++j)
          if (j != i) others.push_back(j);
        for (std::size_t j : choose(std::move(others), budget.count, rng)) set.insert(ordered(i, j));
      }
      return {set.begin(), set.end()};
    }
    case PairStrategy::block_l: {
      std::set<DimPair> set;
      for (const auto& block : budget.blocks) {
        const std::size_t l = std::min(budget.count, block.size() - 1);
        for (std::size_t i : block) {
          std::vector<std::size_t> others;
          for (std::size_t j : block)
            if (j != i) others.push_back(j);
          for (std::size_t j : choose(std::move(others), l, rng)) set.insert(ordered(i, j));
        }
      }
      return {set.begin(), set.end()};
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(Normalizer n) {
  switch (n) {
    case Normalizer::all_pairs: return "all_pairs";
    case Normalizer::budget: return "budget";
    case Normalizer::per_coordinate: return "per_coordinate";
  }
  return "per_coordinate";
}

Normalizer parse_normalizer(const std::string& name) {
  for (Normalizer n : {Normalizer::all_pairs, Normalizer::budget, Normalizer::per_coordinate})
    if (to_string(n) == name) return n;
  throw InvalidArgument("unknown normalizer '" + name + "'");
}

Vector recombine(const std::vector<PairUpdate>& updates, std::size_t d, Normalizer mode, std::size_t k) {
  if (updates.empty()) throw InvalidArgument("recombine: no pair updates");
  if (d < 2) throw InvalidArgument("recombine: d must be >= 2");
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(d));
  Vector count = Vector::Zero(static_cast<Eigen::Index>(d));
  for (const auto& u : updates) {
    check_pair(u.pair, d);
    if (u.dir2.size() != 2) throw InvalidArgument("recombine: dir2 must have two entries");
    const auto i = static_cast<Eigen::Index>(u.pair.first), j = static_cast<Eigen::Index>(u.pair.second);
    sum[i] += u.alpha * u.dir2[0];
    sum[j] += u.alpha * u.dir2[1];
    count[i] += 1.0;
    count[j] += 1.0;
  }
  switch (mode) {
    case Normalizer::all_pairs: return sum / static_cast<double>(d - 1);
    case Normalizer::budget: {
      if (k == 0) k = updates.size();
      return k == 1 ? sum : Vector(sum / static_cast<double>(k - 1));
    }
    case Normalizer::per_coordinate:
      for (Eigen::Index c = 0; c < sum.size(); ++c)
        if (count[c] > 0.0) sum[c] /= count[c];
      return sum;
  }
  return sum;
}

DirectionFn angle_directions(const AnglePredictor& angle) {
  return [&angle](const SliceField&, const GridSample& grid) { return angle.predict(grid).direction; };
}

// ---------------------------------------------------------------------------

namespace {

/// k in the 1 / (k - 1) normalizer for a sampled set.
std::size_t budget_k(const PairBudget& budget, const std::vector<DimPair>& pairs) {
  if (budget.strategy == PairStrategy::uniform_k && budget.reading == UniformReading::dimensions)
    return budget.count;
  if (budget.strategy == PairStrategy::all_pairs) {
    std::set<std::size_t> dims;
    for (const auto& p : pairs) dims.insert({p.first, p.second});
    return dims.size();
  }
  return pairs.size();
}

}  // namespace

HighDimStepResult highdim_step(const FieldPtr& f, const Vector& theta, PairStates& states,
                               const HighDimConfig& config, const DirectionFn& directions,
                               const ActionFn& policy, Rng& rng, std::size_t step) {
  if (!f) throw InvalidArgument("highdim_step: null field");
  const std::size_t d = f->dim();
  if (d <= 2) throw InvalidArgument("highdim_step: needs d > 2");
  if (static_cast<std::size_t>(theta.size()) != d || states.dim() != d)
    throw InvalidArgument("highdim_step: dimension mismatch");

  HighDimStepResult result;
  const std::vector<DimPair> pairs = sample_pairs(config.budget, d, rng);
  result.pairs_sampled = pairs.size();

  struct Visit {
    DimPair pair;
    GridSample grid;
    Vector dir2;
  };
  std::vector<Visit> visits;
  visits.reserve(pairs.size());
  for (const auto& p : pairs) {
    const PairState* existing = states.find(p);
    const double delta = existing ? existing->delta : states.delta0();
    try {
      const auto slice = slice_field(f, theta, p.first, p.second);
      GridSample grid = grid_sample(*slice, Vector::Zero(2), delta, config.grid_n);
      Vector dir2 = directions(*slice, grid);
      if (dir2.size() != 2 || !dir2.allFinite()) throw ObservationError("non-finite direction", Vector::Zero(2));
      visits.push_back({p, std::move(grid), std::move(dir2)});
    } catch (const ObservationError& e) {
      result.warnings.push_back("pair (" + std::to_string(p.first) + ", " + std::to_string(p.second) +
                                ") skipped: " + e.what());
    }
  }
  result.pairs_used = visits.size();
  if (visits.empty()) {
    result.warnings.push_back("no pair survived; iterate unchanged");
    result.theta = theta;
    result.value = f->value(theta);
    return result;
  }

  std::vector<PairUpdate> updates;
  updates.reserve(visits.size());
  for (const auto& v : visits) {
    const PairState* s = states.find(v.pair);
    updates.push_back({v.pair, s ? s->alpha : states.alpha0(), v.dir2});
  }
  std::vector<DimPair> used;
  for (const auto& v : visits) used.push_back(v.pair);
  result.theta = theta + recombine(updates, d, config.normalizer, budget_k(config.budget, used));
  result.value = f->value(result.theta);

  for (auto& v : visits) {
    PairState& s = states.at(v.pair);
    if (s.last_visit >= 0)
      result.max_staleness = std::max(result.max_staleness, step - static_cast<std::size_t>(s.last_visit));
    s.last_visit = static_cast<std::int64_t>(step);
    ++s.visits;
    if (!config.update_states) continue;
    const NavAction a = policy(v.grid.normalized, s.hidden).clamped();
    s.alpha *= 1.0 + a.d_alpha;
    s.delta *= 1.0 + a.d_delta;
  }
  return result;
}

HighDimRun run_highdim(const FieldPtr& f, const Vector& theta0, const HighDimConfig& config,
                       double alpha0, double delta0, int horizon, const DirectionFn& directions,
                       const ActionFn& policy, Rng& rng) {
  HighDimRun run;
  PairStates states(f->dim(), alpha0, delta0);
  run.theta = theta0;
  run.values.push_back(f->value(theta0));
  for (int t = 0; t < horizon; ++t) {
    HighDimStepResult r =
        highdim_step(f, run.theta, states, config, directions, policy, rng, static_cast<std::size_t>(t));
    run.skipped_pairs += r.pairs_sampled - r.pairs_used;
    run.max_staleness = std::max(run.max_staleness, r.max_staleness);
    if (!std::isfinite(r.value)) break;
    run.theta = std::move(r.theta);
    run.values.push_back(r.value);
  }
  return run;
}

}  // namespace rover
