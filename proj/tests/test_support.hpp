#pragma once

#include <string>

#include "metaopf/case_parser.hpp"
#include "metaopf/network.hpp"

namespace metaopf::testing {

inline std::string fixture(const std::string& name) { return std::string(METAOPF_FIXTURES) + "/" + name; }

inline std::string fixture_text(const std::string& name) { return read_text_file(fixture(name)); }

/// Two buses joined by one line: slack generator at bus 1, load at bus 2.
inline std::string two_bus_case(double r, double x, double pd_mw, double qd_mvar) {
  return "function mpc = two_bus\n"
         "mpc.baseMVA = 100;\n"
         "mpc.bus = [\n"
         "  1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;\n"
         "  2 1 " + std::to_string(pd_mw) + " " + std::to_string(qd_mvar) + " 0 0 1 1 0 0 1 1.1 0.9;\n"
         "];\n"
         "mpc.gen = [\n"
         "  1 0 0 300 -300 1 100 1 250 0;\n"
         "];\n"
         "mpc.branch = [\n"
         "  1 2 " + std::to_string(r) + " " + std::to_string(x) + " 0 0 0 0 0 0 1 -360 360;\n"
         "];\n"
         "mpc.gencost = [\n"
         "  2 0 0 3 0.01 20 0;\n"
         "];\n";
}

}  // namespace metaopf::testing
