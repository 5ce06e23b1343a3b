#pragma once

// Fully connected predictor: ReLU hidden layers, sigmoid outputs, mean squared loss.
// All weights and biases live in one flat vector; layer l occupies
// [W_l (out x in, column-major) | b_l (out)].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metaopf/error.hpp"
#include "metaopf/rng.hpp"

namespace metaopf {

using Params = Eigen::VectorXd;

struct MlpArch {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 0;

  std::vector<int> widths() const {
    std::vector<int> w{input_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(output_dim);
    return w;
  }
  std::size_t layers() const { return hidden.size() + 1; }
  Eigen::Index param_count() const {
    const auto w = widths();
    Eigen::Index n = 0;
    for (std::size_t l = 1; l < w.size(); ++l) n += static_cast<Eigen::Index>(w[l - 1] + 1) * w[l];
    return n;
  }
  void validate() const {
    for (int w : widths())
      if (w <= 0) throw InputError("layer widths must be positive");
  }
  bool operator==(const MlpArch&) const = default;
};

inline std::string describe(const MlpArch& a) {
  std::string s;
  for (int w : a.widths()) s += (s.empty() ? "" : "-") + std::to_string(w);
  return s;
}

/// Hidden widths used for the three reference systems; other systems fall back to 64-32-16.
inline MlpArch arch_for(int n_bus, int input_dim, int output_dim) {
  MlpArch a{input_dim, {64, 32, 16}, output_dim};
  if (n_bus == 30) a.hidden = {128, 64, 32};
  if (n_bus == 118) a.hidden = {256, 128, 64};
  return a;
}

struct LayerView {
  Eigen::Index w_offset;
  Eigen::Index b_offset;
  int rows;  // fan-out
  int cols;  // fan-in
};

inline std::vector<LayerView> layout(const MlpArch& arch) {
  const auto w = arch.widths();
  std::vector<LayerView> out;
  Eigen::Index off = 0;
  for (std::size_t l = 1; l < w.size(); ++l) {
    LayerView v{off, off + static_cast<Eigen::Index>(w[l]) * w[l - 1], w[l], w[l - 1]};
    off = v.b_offset + w[l];
    out.push_back(v);
  }
  return out;
}

/// Uniform He-style initialization: W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), b = 0.
inline Params init_params(const MlpArch& arch, std::uint64_t key) {
  arch.validate();
  Rng rng(key);
  Params p = Params::Zero(arch.param_count());
  for (const auto& l : layout(arch)) {
    const double a = std::sqrt(6.0 / l.cols);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(l.rows) * l.cols; ++i) p[l.w_offset + i] = rng.uniform(-a, a);
  }
  return p;
}

namespace detail {

inline Eigen::Map<const Eigen::MatrixXd> weights(const Params& p, const LayerView& l) {
  return {p.data() + l.w_offset, l.rows, l.cols};
}
inline Eigen::Map<const Eigen::VectorXd> bias(const Params& p, const LayerView& l) {
  return {p.data() + l.b_offset, l.rows};
}

inline void check_shapes(const Params& p, const MlpArch& arch, Eigen::Index in_rows) {
  if (p.size() != arch.param_count()) throw InputError("parameter vector does not match the architecture");
  if (in_rows != arch.input_dim)
    throw InputError("input has " + std::to_string(in_rows) + " rows, expected " + std::to_string(arch.input_dim));
}

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

}  // namespace detail

/// Batch forward pass; columns of X are samples.
inline Eigen::MatrixXd forward(const Params& p, const MlpArch& arch, const Eigen::MatrixXd& x) {
  detail::check_shapes(p, arch, x.rows());
  const auto lay = layout(arch);
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < lay.size(); ++l) {
    Eigen::MatrixXd z = detail::weights(p, lay[l]) * a;
    z.colwise() += detail::bias(p, lay[l]);
    a = l + 1 < lay.size() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : detail::sigmoid(z);
  }
  return a;
}

inline Eigen::VectorXd forward(const Params& p, const MlpArch& arch, const Eigen::VectorXd& x) {
  return forward(p, arch, Eigen::MatrixXd(x)).col(0);
}

struct LossGrad {
  double loss = 0.0;
  Params grad;
};

namespace detail {

// Columns per block when accumulating a batch gradient; keeps activations cache-resident.
inline constexpr Eigen::Index kBlockCols = 512;

// Adds scale * d/dw sum_k ||y_k - h(x_k)||^2 over the block to grad; returns the block's squared error.
inline double accumulate_block(const Params& p, const std::vector<LayerView>& lay, const Eigen::MatrixXd& x,
                               const Eigen::MatrixXd& y, double scale, Params& grad) {
  std::vector<Eigen::MatrixXd> acts{x};  // activations per layer, input first
  acts.reserve(lay.size() + 1);
  for (std::size_t l = 0; l < lay.size(); ++l) {
    Eigen::MatrixXd z = weights(p, lay[l]) * acts.back();
    z.colwise() += bias(p, lay[l]);
    acts.push_back(l + 1 < lay.size() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : sigmoid(z));
  }
  const Eigen::MatrixXd diff = acts.back() - y;
  const Eigen::MatrixXd& h = acts.back();
  Eigen::MatrixXd dz = (2.0 * scale) * diff.cwiseProduct(h.cwiseProduct((1.0 - h.array()).matrix()));
  for (std::size_t l = lay.size(); l-- > 0;) {
    const auto& v = lay[l];
    Eigen::Map<Eigen::MatrixXd>(grad.data() + v.w_offset, v.rows, v.cols).noalias() += dz * acts[l].transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + v.b_offset, v.rows) += dz.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd da = weights(p, v).transpose() * dz;
    dz = da.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
  }
  return diff.squaredNorm();
}

}  // namespace detail

/// loss = (1/K) sum_k ||y_k - h(x_k)||^2 and its exact gradient.
inline LossGrad loss_and_grad(const Params& p, const MlpArch& arch, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  detail::check_shapes(p, arch, x.rows());
  if (x.cols() == 0) throw InputError("empty batch");
  if (y.rows() != arch.output_dim || y.cols() != x.cols()) throw InputError("target batch has the wrong shape");
  const auto lay = layout(arch);
  const double k = static_cast<double>(x.cols());
  LossGrad out;
  out.grad = Params::Zero(p.size());
  double sq = 0.0;
  if (x.cols() <= detail::kBlockCols) {
    sq = detail::accumulate_block(p, lay, x, y, 1.0 / k, out.grad);
  } else {
    for (Eigen::Index c = 0; c < x.cols(); c += detail::kBlockCols) {
      const Eigen::Index n = std::min(detail::kBlockCols, x.cols() - c);
      sq += detail::accumulate_block(p, lay, x.middleCols(c, n), y.middleCols(c, n), 1.0 / k, out.grad);
    }
  }
  out.loss = sq / k;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
  return out;
}

/// Sign pattern of every hidden pre-activation over a batch. Inside one pattern the network is a
/// smooth function of its parameters.
inline std::vector<bool> activation_pattern(const Params& p, const MlpArch& arch, const Eigen::MatrixXd& x) {
  detail::check_shapes(p, arch, x.rows());
  const auto lay = layout(arch);
  std::vector<bool> out;
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l + 1 < lay.size(); ++l) {
    Eigen::MatrixXd z = detail::weights(p, lay[l]) * a;
    z.colwise() += detail::bias(p, lay[l]);
    for (double v : z.reshaped()) out.push_back(v > 0.0);
    a = z.cwiseMax(0.0);
  }
  return out;
}

inline double loss(const Params& p, const MlpArch& arch, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (y.rows() != arch.output_dim || y.cols() != x.cols()) throw InputError("target batch has the wrong shape");
  if (x.cols() == 0) throw InputError("empty batch");
  return (forward(p, arch, x) - y).squaredNorm() / static_cast<double>(x.cols());
}

}  // namespace metaopf
