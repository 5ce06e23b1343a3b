#pragma once

// Corpus generation: randomized topologies of a base case, randomized loads per topology, and
// OPF labels scaled into [0,1].

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metaopf/error.hpp"
#include "metaopf/network.hpp"
#include "metaopf/opf.hpp"
#include "metaopf/parallel.hpp"
#include "metaopf/rng.hpp"
#include "metaopf/scaling.hpp"
#include "metaopf/ybus.hpp"

namespace metaopf {

struct PerturbationConfig {
  int max_removed = 2;           // removal count drawn uniformly from {0..max_removed}
  double impedance_range = 0.3;  // per-branch r, x multiplier in [1-range, 1+range]
  double load_fraction = 0.7;    // each demand drawn from [(1-f) d0, (1+f) d0]
  int retry_budget = 200;        // topology attempts per slot before giving up
};

struct TopologySpec {
  std::string base_case;
  std::vector<int> removed_branches;    // sorted branch indices
  std::vector<double> impedance_scale;  // one multiplier per branch
  std::uint64_t seed = 0;
  int topology_id = 0;
  int attempt = 0;  // which random attempt produced this spec

  bool same_topology(const TopologySpec& o) const {
    return removed_branches == o.removed_branches && impedance_scale == o.impedance_scale;
  }
};

inline Network apply_topology(const Network& base, const TopologySpec& spec) {
  if (spec.impedance_scale.size() != base.branches.size())
    throw InputError("topology spec has " + std::to_string(spec.impedance_scale.size()) + " scales for " +
                     std::to_string(base.branches.size()) + " branches");
  Network net = base;
  net.topology_id = spec.topology_id;
  for (std::size_t b = 0; b < net.branches.size(); ++b) {
    net.branches[b].r *= spec.impedance_scale[b];
    net.branches[b].x *= spec.impedance_scale[b];
  }
  for (int b : spec.removed_branches) {
    if (b < 0 || static_cast<std::size_t>(b) >= net.branches.size()) throw InputError("removed branch out of range");
    net.branches[b].status = BranchStatus::out_of_service;
  }
  return net;
}

/// Draws one candidate spec. Removal sets that disconnect the grid are redrawn; empty when no
/// connected set of the drawn size turned up (small or radial grids).
inline std::optional<TopologySpec> draw_topology(const Network& base, const PerturbationConfig& cfg, std::uint64_t seed,
                                  int topology_id, int attempt) {
  Rng rng(seed, Stream::topology, static_cast<std::uint64_t>(topology_id), static_cast<std::uint64_t>(attempt));
  TopologySpec spec;
  spec.base_case = base.name;
  spec.seed = seed;
  spec.topology_id = topology_id;
  spec.attempt = attempt;

  std::vector<int> candidates;
  for (std::size_t b = 0; b < base.branches.size(); ++b)
    if (base.branches[b].in_service()) candidates.push_back(static_cast<int>(b));
  const int n_remove = cfg.max_removed > 0
                           ? static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_removed) + 1))
                           : 0;
  if (n_remove > 0) {
    for (int draw = 0;; ++draw) {
      if (draw == 1000) return std::nullopt;
      std::vector<int> pick = candidates;
      for (int i = 0; i < n_remove && i < static_cast<int>(pick.size()); ++i) {
        const auto j = static_cast<std::size_t>(i) + rng.below(pick.size() - static_cast<std::size_t>(i));
        std::swap(pick[i], pick[j]);
      }
      pick.resize(std::min<std::size_t>(n_remove, pick.size()));
      Network trial = base;
      for (int b : pick) trial.branches[b].status = BranchStatus::out_of_service;
      if (is_connected(trial)) {
        std::sort(pick.begin(), pick.end());
        spec.removed_branches = pick;
        break;
      }
    }
  }
  spec.impedance_scale.resize(base.branches.size());
  for (auto& s : spec.impedance_scale) s = rng.uniform(1.0 - cfg.impedance_range, 1.0 + cfg.impedance_range);
  return spec;
}

struct TopologyStats {
  int rejected_infeasible = 0;
  int rejected_duplicate = 0;
  int rejected_disconnected = 0;  // attempts whose removal count admits no connected set
};

/// Samples m_total connected topologies whose base-load OPF (with voltage margin lambda) is
/// solvable. Slot m uses attempts 0, 1, ... until one qualifies.
inline std::vector<TopologySpec> sample_topologies(const Network& base, int m_total, const PerturbationConfig& cfg,
                                                   std::uint64_t seed, double lambda = 0.005,
                                                   TopologyStats* stats = nullptr) {
  if (m_total < 1) throw InputError("m_total must be at least 1");
  if (cfg.max_removed < 0 || cfg.impedance_range < 0.0 || cfg.impedance_range >= 1.0)
    throw InputError("invalid perturbation config");
  // Without any randomness every draw equals the base case; distinctness cannot be asked for.
  const bool want_distinct = cfg.max_removed > 0 || cfg.impedance_range > 0.0;
  std::vector<TopologySpec> specs;
  TopologyStats local;
  for (int m = 0; m < m_total; ++m) {
    bool found = false;
    for (int attempt = 0; attempt < cfg.retry_budget && !found; ++attempt) {
      auto drawn = draw_topology(base, cfg, seed, m, attempt);
      if (!drawn) {
        ++local.rejected_disconnected;
        continue;
      }
      TopologySpec spec = std::move(*drawn);
      if (want_distinct && std::any_of(specs.begin(), specs.end(), [&](const auto& s) { return s.same_topology(spec); })) {
        ++local.rejected_duplicate;
        continue;
      }
      const Network net = apply_topology(base, spec);
      const auto y = build_ybus(net);
      const OpfSolution sol = solve_opf(make_opf_problem(net, y, lambda));
      if (sol.status != OpfStatus::optimal) {
        ++local.rejected_infeasible;
        continue;
      }
      specs.push_back(std::move(spec));
      found = true;
    }
    if (!found)
      throw NumericError("found only " + std::to_string(specs.size()) + " of " + std::to_string(m_total) +
                         " feasible connected topologies within the retry budget");
  }
  if (stats) *stats = local;
  return specs;
}

struct LoadSample {
  std::vector<double> p;  // per bus, pu
  std::vector<double> q;
};

inline LoadSample draw_load(const Network& base, double fraction, std::uint64_t seed, int topology_id, int sample_id) {
  Rng rng(seed, Stream::load, static_cast<std::uint64_t>(topology_id), static_cast<std::uint64_t>(sample_id));
  LoadSample s{base.p_demand(), base.q_demand()};
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    s.p[i] *= rng.uniform(1.0 - fraction, 1.0 + fraction);
    s.q[i] *= rng.uniform(1.0 - fraction, 1.0 + fraction);
  }
  return s;
}

inline std::vector<LoadSample> sample_loads(const Network& base, int k, const PerturbationConfig& cfg,
                                            std::uint64_t seed, int topology_id = 0) {
  if (k < 1) throw InputError("k must be at least 1");
  std::vector<LoadSample> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) out.push_back(draw_load(base, cfg.load_fraction, seed, topology_id, i));
  return out;
}

struct OpfSample {
  int sample_id = 0;
  Eigen::VectorXd x;      // [p at load buses; q at load buses]
  Eigen::VectorXd y;      // scaled targets
  Eigen::VectorXd raw_y;  // [P_G non-slack; V_G all]
  double objective = 0.0;
};

inline Eigen::VectorXd load_input(const std::vector<int>& load_buses, const LoadSample& s) {
  const auto n = static_cast<Eigen::Index>(load_buses.size());
  Eigen::VectorXd x(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x[i] = s.p[load_buses[i]];
    x[n + i] = s.q[load_buses[i]];
  }
  return x;
}

inline LoadSample demand_from_input(const Network& net, const std::vector<int>& load_buses,
                                    const Eigen::Ref<const Eigen::VectorXd>& x) {
  const auto n = static_cast<Eigen::Index>(load_buses.size());
  if (x.size() != 2 * n) throw InputError("input vector has the wrong length");
  LoadSample s{std::vector<double>(net.n_bus(), 0.0), std::vector<double>(net.n_bus(), 0.0)};
  for (Eigen::Index i = 0; i < n; ++i) {
    s.p[load_buses[i]] = x[i];
    s.q[load_buses[i]] = x[n + i];
  }
  return s;
}

/// Labels within this distance of a bound are placed exactly on it. The interior-point solver
/// leaves active bounds at a small positive distance; this equals the feasibility tolerance.
inline constexpr double kLabelSnap = 1e-6;

inline double project_label(double v, double lo, double hi) {
  if (v - lo < kLabelSnap) return lo;
  if (hi - v < kLabelSnap) return hi;
  return v;
}

/// Solves the labelled OPF for one load draw; empty when the OPF is not optimal.
inline std::optional<OpfSample> label_sample(const Network& net, const AdmittanceMatrix& ybus,
                                             const std::vector<int>& load_buses, const LoadSample& load,
                                             double lambda, int sample_id) {
  OpfProblem prob{&net, &ybus, load.p, load.q, lambda};
  const OpfSolution sol = solve_opf(prob);
  if (sol.status != OpfStatus::optimal) return std::nullopt;
  Setpoints sp;
  for (std::size_t g : net.non_slack_generators()) {
    const auto& gen = net.generators[g];
    sp.p_gen_nonslack.push_back(project_label(sol.p_gen[g], gen.p_min, gen.p_max));
  }
  for (const auto& gen : net.generators) {
    const auto& b = net.buses[gen.bus];
    sp.v_gen.push_back(project_label(sol.state.v_mag[gen.bus], b.v_min + lambda, b.v_max - lambda));
  }
  OpfSample s;
  s.sample_id = sample_id;
  s.x = load_input(load_buses, load);
  s.raw_y = stack(sp);
  s.y = scale_targets(net, sp);
  s.objective = sol.objective;
  return s;
}

enum class Split { offline, online };

inline const char* to_string(Split s) { return s == Split::offline ? "offline" : "online"; }

struct TaskDataset {
  TopologySpec topology;
  Split split = Split::offline;
  std::vector<OpfSample> samples;
  std::vector<int> train;  // indices into samples
  std::vector<int> test;
  int excluded = 0;  // load draws whose OPF was not optimal
};

struct CorpusConfig {
  std::string case_name;
  int m_total = 20;
  int m_offline = 14;
  int k = 300;                  // samples per offline topology; training pool size online
  int online_test_count = 100;  // extra held-out samples per online topology
  double lambda = 0.005;
  std::uint64_t seed = 7;
  PerturbationConfig perturbation;

  void validate() const {
    if (m_total < 1) throw InputError("m must be at least 1");
    if (m_offline < 1 || m_offline >= m_total) throw InputError("m_offline must satisfy 1 <= m_offline < m");
    if (k < 1) throw InputError("k must be at least 1");
    if (online_test_count < 1) throw InputError("online_test_count must be at least 1");
    if (lambda < 0.0) throw InputError("lambda must be non-negative");
    if (perturbation.load_fraction < 0.0 || perturbation.load_fraction > 1.0)
      throw InputError("load_fraction must lie in [0, 1]");
  }
};

struct Corpus {
  CorpusConfig config;
  Network base;
  std::vector<int> load_buses;
  std::vector<TaskDataset> tasks;
  TopologyStats topology_stats;

  std::vector<const TaskDataset*> with_split(Split s) const {
    std::vector<const TaskDataset*> out;
    for (const auto& t : tasks)
      if (t.split == s) out.push_back(&t);
    return out;
  }
};

/// Fills one task with `needed` optimal samples, drawing loads in sample-id order and skipping
/// draws whose OPF fails. Draws are solved in parallel blocks but accepted in id order.
inline void fill_task(TaskDataset& task, const Network& base, const std::vector<int>& load_buses,
                      const CorpusConfig& cfg, int needed) {
  const Network net = apply_topology(base, task.topology);
  const auto ybus = build_ybus(net);
  const int max_draws = 10 * needed + 100;
  int next_id = 0;
  while (static_cast<int>(task.samples.size()) < needed) {
    const int block = needed - static_cast<int>(task.samples.size());
    if (next_id + block > max_draws)
      throw NumericError("topology " + std::to_string(task.topology.topology_id) + ": too many infeasible load draws");
    std::vector<std::optional<OpfSample>> solved(block);
    parallel_for(static_cast<std::size_t>(block), [&](std::size_t i) {
      const int id = next_id + static_cast<int>(i);
      const LoadSample load = draw_load(base, cfg.perturbation.load_fraction, cfg.seed, task.topology.topology_id, id);
      solved[i] = label_sample(net, ybus, load_buses, load, cfg.lambda, id);
    });
    for (auto& s : solved) {
      if (s)
        task.samples.push_back(std::move(*s));
      else
        ++task.excluded;
    }
    next_id += block;
  }
}

inline Corpus build_corpus(const Network& base, const CorpusConfig& cfg) {
  cfg.validate();
  Corpus c;
  c.config = cfg;
  c.base = base;
  c.load_buses = base.load_buses();
  const auto specs = sample_topologies(base, cfg.m_total, cfg.perturbation, cfg.seed, cfg.lambda, &c.topology_stats);
  for (const auto& spec : specs) {
    TaskDataset task;
    task.topology = spec;
    task.split = spec.topology_id < cfg.m_offline ? Split::offline : Split::online;
    const int needed = cfg.k + (task.split == Split::online ? cfg.online_test_count : 0);
    fill_task(task, base, c.load_buses, cfg, needed);
    for (int i = 0; i < cfg.k; ++i) task.train.push_back(i);
    for (int i = cfg.k; i < needed; ++i) task.test.push_back(i);
    c.tasks.push_back(std::move(task));
  }
  return c;
}

}  // namespace metaopf
