#pragma once

// Affine maps between physical generator set-points and the [0,1] targets the predictor emits.
// Layout of a target vector: [rho for each non-slack generator; sigma for each generator].
// Voltage boxes are always the original (uncalibrated) bus limits.

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "metaopf/error.hpp"
#include "metaopf/network.hpp"

namespace metaopf {

inline std::size_t target_dim(const Network& net) { return 2 * net.n_gen() - 1; }

struct Setpoints {
  std::vector<double> p_gen_nonslack;
  std::vector<double> v_gen;
};

inline Setpoints unscale_outputs(const Network& net, const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (static_cast<std::size_t>(y.size()) != target_dim(net)) throw InputError("target vector has the wrong length");
  Setpoints s;
  const auto nonslack = net.non_slack_generators();
  for (std::size_t k = 0; k < nonslack.size(); ++k) {
    const auto& g = net.generators[nonslack[k]];
    s.p_gen_nonslack.push_back(y[k] * (g.p_max - g.p_min) + g.p_min);
  }
  for (std::size_t g = 0; g < net.n_gen(); ++g) {
    const auto& bus = net.buses[net.generators[g].bus];
    s.v_gen.push_back(y[nonslack.size() + g] * (bus.v_max - bus.v_min) + bus.v_min);
  }
  return s;
}

inline Eigen::VectorXd scale_targets(const Network& net, const Setpoints& s) {
  const auto nonslack = net.non_slack_generators();
  if (s.p_gen_nonslack.size() != nonslack.size() || s.v_gen.size() != net.n_gen())
    throw InputError("set-point vectors have the wrong length");
  Eigen::VectorXd y(target_dim(net));
  for (std::size_t k = 0; k < nonslack.size(); ++k) {
    const auto& g = net.generators[nonslack[k]];
    y[k] = (s.p_gen_nonslack[k] - g.p_min) / (g.p_max - g.p_min);
  }
  for (std::size_t g = 0; g < net.n_gen(); ++g) {
    const auto& bus = net.buses[net.generators[g].bus];
    y[nonslack.size() + g] = (s.v_gen[g] - bus.v_min) / (bus.v_max - bus.v_min);
  }
  return y;
}

/// Physical set-points stacked in target order: [P_G non-slack; V_G all].
inline Eigen::VectorXd stack(const Setpoints& s) {
  Eigen::VectorXd out(s.p_gen_nonslack.size() + s.v_gen.size());
  for (std::size_t k = 0; k < s.p_gen_nonslack.size(); ++k) out[k] = s.p_gen_nonslack[k];
  for (std::size_t k = 0; k < s.v_gen.size(); ++k) out[s.p_gen_nonslack.size() + k] = s.v_gen[k];
  return out;
}

}  // namespace metaopf
