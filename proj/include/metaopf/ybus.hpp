#pragma once

#include <complex>

#include <Eigen/Dense>

#include "metaopf/network.hpp"

namespace metaopf {

using cplx = std::complex<double>;

/// Dense bus admittance matrix Y = G + jB.
struct AdmittanceMatrix {
  Eigen::MatrixXd g;
  Eigen::MatrixXd b;

  Eigen::MatrixXcd complex() const {
    Eigen::MatrixXcd y(g.rows(), g.cols());
    y.real() = g;
    y.imag() = b;
    return y;
  }
  Eigen::Index size() const noexcept { return g.rows(); }
};

/// Two-port admittances of one branch (pi model with off-nominal tap on the from side).
struct BranchAdmittance {
  cplx yff, yft, ytf, ytt;
};

inline BranchAdmittance branch_admittance(const Branch& br) {
  const cplx ys = 1.0 / cplx(br.r, br.x);
  const cplx ytt = ys + cplx(0.0, br.b_charge / 2.0);
  const cplx t = std::polar(br.tap, br.shift);
  return {ytt / std::norm(t), -ys / std::conj(t), -ys / t, ytt};
}

/// Stamps in-service branches and bus shunts. Out-of-service branches contribute nothing.
inline AdmittanceMatrix build_ybus(const Network& net) {
  const Eigen::Index n = static_cast<Eigen::Index>(net.n_bus());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& br : net.branches) {
    if (!br.in_service()) continue;
    const auto a = branch_admittance(br);
    const int f = br.from_bus, t = br.to_bus;
    y(f, f) += a.yff;
    y(f, t) += a.yft;
    y(t, f) += a.ytf;
    y(t, t) += a.ytt;
  }
  for (const auto& bus : net.buses) y(bus.id, bus.id) += cplx(bus.gs, bus.bs);
  return {y.real(), y.imag()};
}

}  // namespace metaopf
