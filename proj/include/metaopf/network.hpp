#pragma once

// In-memory grid model. All quantities are per-unit on base_mva, angles in radians.

#include <cstddef>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "metaopf/error.hpp"

namespace metaopf {

enum class BusKind { slack, pv, pq };

inline const char* to_string(BusKind k) {
  switch (k) {
    case BusKind::slack: return "slack";
    case BusKind::pv: return "pv";
    case BusKind::pq: return "pq";
  }
  return "?";
}

struct Bus {
  int id = 0;
  int file_id = 0;  // bus number as written in the case file
  BusKind kind = BusKind::pq;
  double p_demand = 0.0;
  double q_demand = 0.0;
  double gs = 0.0;
  double bs = 0.0;
  double v_mag_init = 1.0;
  double v_ang_init = 0.0;
  double v_min = 0.9;
  double v_max = 1.1;
};

enum class BranchStatus { in_service, out_of_service };

struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charge = 0.0;
  double tap = 1.0;
  double shift = 0.0;
  BranchStatus status = BranchStatus::in_service;

  bool in_service() const noexcept { return status == BranchStatus::in_service; }
};

struct Generator {
  int bus = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double p_setpoint = 0.0;  // dispatch written in the case file
  double v_setpoint = 1.0;
  double cost_c2 = 0.0;
  double cost_c1 = 0.0;
  double cost_c0 = 0.0;

  double cost(double p) const noexcept { return (cost_c2 * p + cost_c1) * p + cost_c0; }
  double marginal_cost(double p) const noexcept { return 2.0 * cost_c2 * p + cost_c1; }
};

struct Network {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  int topology_id = 0;

  std::size_t n_bus() const noexcept { return buses.size(); }
  std::size_t n_gen() const noexcept { return generators.size(); }

  int slack_bus() const {
    for (const auto& b : buses)
      if (b.kind == BusKind::slack) return b.id;
    throw InputError("network has no slack bus");
  }

  /// The slack generator is the first generator attached to the slack bus.
  std::size_t slack_generator() const {
    const int s = slack_bus();
    for (std::size_t g = 0; g < generators.size(); ++g)
      if (generators[g].bus == s) return g;
    throw InputError("slack bus hosts no generator");
  }

  /// Generator indices in file order with the slack generator removed.
  std::vector<std::size_t> non_slack_generators() const {
    const std::size_t sg = slack_generator();
    std::vector<std::size_t> out;
    out.reserve(generators.size());
    for (std::size_t g = 0; g < generators.size(); ++g)
      if (g != sg) out.push_back(g);
    return out;
  }

  /// Buses whose base demand is nonzero in either P or Q; these make up the predictor input.
  std::vector<int> load_buses() const {
    std::vector<int> out;
    for (const auto& b : buses)
      if (b.p_demand != 0.0 || b.q_demand != 0.0) out.push_back(b.id);
    return out;
  }

  std::vector<double> p_demand() const {
    std::vector<double> out(buses.size());
    for (std::size_t i = 0; i < buses.size(); ++i) out[i] = buses[i].p_demand;
    return out;
  }
  std::vector<double> q_demand() const {
    std::vector<double> out(buses.size());
    for (std::size_t i = 0; i < buses.size(); ++i) out[i] = buses[i].q_demand;
    return out;
  }
};

/// Connected components over in-service branches, as a bus -> component label map.
inline std::vector<int> component_labels(const Network& net) {
  const std::size_t n = net.n_bus();
  std::vector<std::vector<int>> adj(n);
  for (const auto& br : net.branches) {
    if (!br.in_service()) continue;
    adj[br.from_bus].push_back(br.to_bus);
    adj[br.to_bus].push_back(br.from_bus);
  }
  std::vector<int> label(n, -1);
  int next = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (label[s] >= 0) continue;
    std::queue<int> q;
    q.push(static_cast<int>(s));
    label[s] = next;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int v : adj[u])
        if (label[v] < 0) {
          label[v] = next;
          q.push(v);
        }
    }
    ++next;
  }
  return label;
}

inline bool is_connected(const Network& net) {
  if (net.buses.empty()) return true;
  for (int l : component_labels(net))
    if (l != 0) return false;
  return true;
}

/// Checks every structural invariant of a Network; throws InputError on the first violation.
inline void validate(const Network& net) {
  if (net.buses.empty()) throw InputError("network has no buses");
  if (!(net.base_mva > 0.0)) throw InputError("baseMVA must be positive");
  const int n = static_cast<int>(net.n_bus());
  int slack_count = 0;
  for (int i = 0; i < n; ++i) {
    const auto& b = net.buses[i];
    if (b.id != i) throw InputError("bus ids must be contiguous and 0-based");
    if (b.kind == BusKind::slack) ++slack_count;
    if (b.v_min > b.v_max) throw InputError("bus " + std::to_string(b.file_id) + ": Vmin > Vmax");
  }
  if (slack_count == 0) throw InputError("no slack bus");
  if (slack_count > 1) throw InputError("multiple slack buses");
  for (const auto& br : net.branches) {
    if (br.from_bus < 0 || br.from_bus >= n || br.to_bus < 0 || br.to_bus >= n)
      throw InputError("branch references an unknown bus");
    if (br.from_bus == br.to_bus) throw InputError("branch connects a bus to itself");
    if (br.in_service() && br.x == 0.0) throw InputError("in-service branch has zero reactance");
  }
  for (const auto& g : net.generators) {
    if (g.bus < 0 || g.bus >= n) throw InputError("generator references an unknown bus");
    if (!(g.p_min < g.p_max)) throw InputError("generator requires Pmin < Pmax");
    if (g.q_min > g.q_max) throw InputError("generator requires Qmin <= Qmax");
    if (g.cost_c2 < 0.0) throw InputError("generator has negative quadratic cost");
  }
  net.slack_generator();  // throws when the slack bus hosts no generator
  if (!is_connected(net)) throw InputError("in-service branch graph is disconnected");
}

}  // namespace metaopf
