#pragma once

// Canonical JSON form of a Network (see docs/schemas/network.schema.json).

#include <string>

#include <json.hpp>

#include "metaopf/error.hpp"
#include "metaopf/network.hpp"

namespace metaopf {

using json = nlohmann::json;

inline BusKind bus_kind_from_string(const std::string& s) {
  if (s == "slack") return BusKind::slack;
  if (s == "pv") return BusKind::pv;
  if (s == "pq") return BusKind::pq;
  throw InputError("unknown bus kind '" + s + "'");
}

inline json to_json(const Network& net) {
  json buses = json::array();
  for (const auto& b : net.buses)
    buses.push_back({{"id", b.id},
                     {"file_id", b.file_id},
                     {"kind", to_string(b.kind)},
                     {"p_demand", b.p_demand},
                     {"q_demand", b.q_demand},
                     {"gs", b.gs},
                     {"bs", b.bs},
                     {"v_mag_init", b.v_mag_init},
                     {"v_ang_init", b.v_ang_init},
                     {"v_min", b.v_min},
                     {"v_max", b.v_max}});
  json branches = json::array();
  for (const auto& br : net.branches)
    branches.push_back({{"from_bus", br.from_bus},
                        {"to_bus", br.to_bus},
                        {"r", br.r},
                        {"x", br.x},
                        {"b_charge", br.b_charge},
                        {"tap", br.tap},
                        {"shift", br.shift},
                        {"in_service", br.in_service()}});
  json gens = json::array();
  for (const auto& g : net.generators)
    gens.push_back({{"bus", g.bus},
                    {"p_min", g.p_min},
                    {"p_max", g.p_max},
                    {"q_min", g.q_min},
                    {"q_max", g.q_max},
                    {"p_setpoint", g.p_setpoint},
                    {"v_setpoint", g.v_setpoint},
                    {"cost_c2", g.cost_c2},
                    {"cost_c1", g.cost_c1},
                    {"cost_c0", g.cost_c0}});
  return {{"name", net.name},
          {"base_mva", net.base_mva},
          {"topology_id", net.topology_id},
          {"buses", std::move(buses)},
          {"branches", std::move(branches)},
          {"generators", std::move(gens)}};
}

inline Network network_from_json(const json& j) {
  try {
    Network net;
    net.name = j.at("name").get<std::string>();
    net.base_mva = j.at("base_mva").get<double>();
    net.topology_id = j.at("topology_id").get<int>();
    for (const auto& jb : j.at("buses")) {
      Bus b;
      b.id = jb.at("id").get<int>();
      b.file_id = jb.at("file_id").get<int>();
      b.kind = bus_kind_from_string(jb.at("kind").get<std::string>());
      b.p_demand = jb.at("p_demand").get<double>();
      b.q_demand = jb.at("q_demand").get<double>();
      b.gs = jb.at("gs").get<double>();
      b.bs = jb.at("bs").get<double>();
      b.v_mag_init = jb.at("v_mag_init").get<double>();
      b.v_ang_init = jb.at("v_ang_init").get<double>();
      b.v_min = jb.at("v_min").get<double>();
      b.v_max = jb.at("v_max").get<double>();
      net.buses.push_back(b);
    }
    for (const auto& jb : j.at("branches")) {
      Branch br;
      br.from_bus = jb.at("from_bus").get<int>();
      br.to_bus = jb.at("to_bus").get<int>();
      br.r = jb.at("r").get<double>();
      br.x = jb.at("x").get<double>();
      br.b_charge = jb.at("b_charge").get<double>();
      br.tap = jb.at("tap").get<double>();
      br.shift = jb.at("shift").get<double>();
      br.status = jb.at("in_service").get<bool>() ? BranchStatus::in_service : BranchStatus::out_of_service;
      net.branches.push_back(br);
    }
    for (const auto& jg : j.at("generators")) {
      Generator g;
      g.bus = jg.at("bus").get<int>();
      g.p_min = jg.at("p_min").get<double>();
      g.p_max = jg.at("p_max").get<double>();
      g.q_min = jg.at("q_min").get<double>();
      g.q_max = jg.at("q_max").get<double>();
      g.p_setpoint = jg.at("p_setpoint").get<double>();
      g.v_setpoint = jg.at("v_setpoint").get<double>();
      g.cost_c2 = jg.at("cost_c2").get<double>();
      g.cost_c1 = jg.at("cost_c1").get<double>();
      g.cost_c0 = jg.at("cost_c0").get<double>();
      net.generators.push_back(g);
    }
    validate(net);
    return net;
  } catch (const json::exception& e) {
    throw InputError(std::string("network JSON: ") + e.what());
  }
}

}  // namespace metaopf
