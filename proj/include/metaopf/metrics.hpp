#pragma once

// Accuracy metrics for predicted OPF set-points and feasibility of the recovered operating points.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metaopf/datagen.hpp"
#include "metaopf/error.hpp"
#include "metaopf/mlp.hpp"
#include "metaopf/opf.hpp"
#include "metaopf/parallel.hpp"
#include "metaopf/powerflow.hpp"
#include "metaopf/scaling.hpp"

namespace metaopf {

/// Truth components at or below this magnitude are left out of the relative state error.
inline constexpr double kEta2ZeroTol = 1e-9;

struct Eta2 {
  double value = 1.0;
  int excluded_dims = 0;
};

/// 1 - mean over samples of the mean relative error over (non-zero) truth components.
inline Eta2 eta2(const std::vector<Eigen::VectorXd>& pred, const std::vector<Eigen::VectorXd>& truth) {
  if (pred.size() != truth.size() || pred.empty()) throw InputError("eta2 needs matching, non-empty sample lists");
  Eta2 out;
  double total = 0.0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].size() != truth[s].size()) throw InputError("eta2: dimension mismatch at sample " + std::to_string(s));
    double sum = 0.0;
    int used = 0;
    for (Eigen::Index d = 0; d < truth[s].size(); ++d) {
      if (std::abs(truth[s][d]) <= kEta2ZeroTol) {
        ++out.excluded_dims;
        continue;
      }
      sum += std::abs((pred[s][d] - truth[s][d]) / truth[s][d]);
      ++used;
    }
    if (used == 0) throw InputError("eta2: sample " + std::to_string(s) + " has only zero truth components");
    total += sum / used;
  }
  out.value = 1.0 - total / static_cast<double>(pred.size());
  return out;
}

inline double eta3(const std::vector<double>& pred_cost, const std::vector<double>& true_cost) {
  if (pred_cost.size() != true_cost.size() || pred_cost.empty())
    throw InputError("eta3 needs matching, non-empty cost lists");
  double total = 0.0;
  for (std::size_t s = 0; s < pred_cost.size(); ++s) {
    if (!(true_cost[s] > 0.0)) throw InputError("eta3: non-positive true cost at sample " + std::to_string(s));
    total += std::abs((pred_cost[s] - true_cost[s]) / true_cost[s]);
  }
  return 1.0 - total / static_cast<double>(pred_cost.size());
}

inline double feasibility_rate(const std::vector<bool>& flags) {
  if (flags.empty()) return 0.0;
  std::size_t n = 0;
  for (bool f : flags) n += f;
  return static_cast<double>(n) / static_cast<double>(flags.size());
}

/// Limits (4)-(6) against the original bounds, within the shared 1e-6 pu tolerance.
inline bool state_feasible(const Network& net, const AdmittanceMatrix& ybus, const LoadSample& load, const PfState& st) {
  return audit_operating_point(net, ybus, load.p, load.q, st.gen_p, st.gen_q, st.v_mag, st.v_ang, 0.0).feasible;
}

struct MetricsReport {
  int topology_id = -1;
  int epoch = 0;
  int n_samples = 0;
  double eta1 = 0.0;
  double eta2 = 0.0;
  double eta3 = 0.0;
  double feasibility_rate = 0.0;
  int excluded_dims = 0;
  int failed_power_flows = 0;
};

/// Scores a parameter vector on one task's held-out samples.
class Evaluator {
 public:
  Evaluator(Network net, std::vector<int> load_buses, std::vector<OpfSample> samples, RecoveryOptions recovery = {})
      : net_(std::move(net)),
        ybus_(build_ybus(net_)),
        load_buses_(std::move(load_buses)),
        samples_(std::move(samples)),
        recovery_(recovery) {
    if (samples_.empty()) throw InputError("evaluator needs at least one sample");
    x_.resize(samples_.front().x.size(), static_cast<Eigen::Index>(samples_.size()));
    y_.resize(samples_.front().y.size(), static_cast<Eigen::Index>(samples_.size()));
    for (std::size_t s = 0; s < samples_.size(); ++s) {
      x_.col(static_cast<Eigen::Index>(s)) = samples_[s].x;
      y_.col(static_cast<Eigen::Index>(s)) = samples_[s].y;
    }
  }

  MetricsReport evaluate(const Params& w, const MlpArch& arch) const {
    MetricsReport r;
    r.topology_id = net_.topology_id;
    r.n_samples = static_cast<int>(samples_.size());
    const Eigen::MatrixXd yhat = forward(w, arch, x_);
    r.eta1 = (yhat - y_).squaredNorm() / static_cast<double>(samples_.size());

    const std::size_t n = samples_.size();
    std::vector<Eigen::VectorXd> pred(n), truth(n);
    std::vector<double> cost(n, 0.0);
    std::vector<char> converged(n, 0), feasible(n, 0);
    parallel_for(n, [&](std::size_t s) {
      const Setpoints sp = unscale_outputs(net_, yhat.col(static_cast<Eigen::Index>(s)));
      pred[s] = stack(sp);
      truth[s] = samples_[s].raw_y;
      const LoadSample load = demand_from_input(net_, load_buses_, samples_[s].x);
      try {
        const PfState st = recover_full_state(net_, ybus_, sp.p_gen_nonslack, sp.v_gen, load.p, load.q, recovery_);
        for (std::size_t g = 0; g < net_.n_gen(); ++g) cost[s] += net_.generators[g].cost(st.gen_p[g]);
        converged[s] = 1;
        feasible[s] = state_feasible(net_, ybus_, load, st);
      } catch (const PowerFlowError&) {
      }
    });
    const Eta2 e2 = eta2(pred, truth);
    r.eta2 = e2.value;
    r.excluded_dims = e2.excluded_dims;

    // Samples whose power flow fails have no recovered cost; they are left out of eta3 and
    // counted, and they count as infeasible.
    std::vector<double> pc, tc;
    std::vector<bool> flags;
    for (std::size_t s = 0; s < n; ++s) {
      flags.push_back(feasible[s] != 0);
      if (!converged[s]) {
        ++r.failed_power_flows;
        continue;
      }
      pc.push_back(cost[s]);
      tc.push_back(samples_[s].objective);
    }
    r.eta3 = pc.empty() ? 0.0 : eta3(pc, tc);
    r.feasibility_rate = feasibility_rate(flags);
    return r;
  }

  const Network& network() const { return net_; }
  const Eigen::MatrixXd& inputs() const { return x_; }
  const Eigen::MatrixXd& targets() const { return y_; }

 private:
  Network net_;
  AdmittanceMatrix ybus_;
  std::vector<int> load_buses_;
  std::vector<OpfSample> samples_;
  RecoveryOptions recovery_;
  Eigen::MatrixXd x_, y_;
};

}  // namespace metaopf
