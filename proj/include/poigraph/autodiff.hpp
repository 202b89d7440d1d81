#pragma once

// Dense kernels with hand-written reverse-mode gradients, and AdamW.
//
// Matrix products go through Eigen. Every other kernel is an explicit loop
// over rows with a fixed reduction order, so results do not depend on how
// the work is scheduled.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "poigraph/errors.hpp"
#include "poigraph/rng.hpp"

namespace poigraph::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Mode { train, eval };

inline std::string shape_of(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

inline void check_finite([[maybe_unused]] const Matrix& m, [[maybe_unused]] const char* where) {
#ifndef NDEBUG
  if (!m.allFinite()) throw TrainingError(std::string("non-finite values after ") + where);
#endif
}

// ---------------------------------------------------------------------------
// matmul

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + shape_of(a) + " x " + shape_of(b));
  Matrix c = a * b;
  check_finite(c, "matmul");
  return c;
}

struct MatmulGrads {
  Matrix da;
  Matrix db;
};

/// dA = dC * B^T, dB = A^T * dC.
inline MatmulGrads matmul_backward(const Matrix& a, const Matrix& b, const Matrix& dc) {
  if (a.cols() != b.rows() || dc.rows() != a.rows() || dc.cols() != b.cols())
    throw ShapeError("matmul_backward: " + shape_of(a) + " x " + shape_of(b) + " with grad " + shape_of(dc));
  return {dc * b.transpose(), a.transpose() * dc};
}

// ---------------------------------------------------------------------------
// Affine map Y = X W^T + b, with W stored [out x in] and b as [1 x out].

inline Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (x.cols() != w.cols() || b.rows() != 1 || b.cols() != w.rows())
    throw ShapeError("linear: input " + shape_of(x) + ", weight " + shape_of(w) + ", bias " + shape_of(b));
  Matrix y(x.rows(), w.rows());
  y.noalias() = x * w.transpose();
  y.rowwise() += b.row(0);
  check_finite(y, "linear");
  return y;
}

struct LinearGrads {
  Matrix dx;
  Matrix dw;
  Matrix db;
};

inline LinearGrads linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, bool need_dx = true) {
  if (dy.rows() != x.rows() || dy.cols() != w.rows() || x.cols() != w.cols())
    throw ShapeError("linear_backward: input " + shape_of(x) + ", weight " + shape_of(w) + ", grad " + shape_of(dy));
  LinearGrads g;
  g.dw.noalias() = dy.transpose() * x;
  g.db = dy.colwise().sum();
  if (need_dx) g.dx.noalias() = dy * w;
  return g;
}

// ---------------------------------------------------------------------------
// Activations

inline Matrix tanh_act(const Matrix& x) { return x.array().tanh().matrix(); }

/// dX = dY * (1 - Y^2), written in terms of the forward output.
inline Matrix tanh_backward(const Matrix& y, const Matrix& dy) {
  if (y.rows() != dy.rows() || y.cols() != dy.cols()) throw ShapeError("tanh_backward shape mismatch");
  return (dy.array() * (1.0 - y.array().square())).matrix();
}

inline Matrix relu_act(const Matrix& x) { return x.cwiseMax(0.0); }

/// Gradient passes where the forward output was positive.
inline Matrix relu_backward(const Matrix& y, const Matrix& dy) {
  if (y.rows() != dy.rows() || y.cols() != dy.cols()) throw ShapeError("relu_backward shape mismatch");
  return (y.array() > 0.0).select(dy, 0.0);
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted-dropout mask: entries are 0 or 1/(1-rate). Filled row-major.
inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout rate must be in [0, 1)");
  Matrix mask(rows, cols);
  if (rate == 0.0) {
    mask.setOnes();
    return mask;
  }
  const double keep = 1.0 / (1.0 - rate);
  double* p = mask.data();
  for (Eigen::Index i = 0; i < mask.size(); ++i) p[i] = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

/// Applies dropout in train mode; identity (and no RNG use) in eval mode.
/// Returns the mask used (empty in eval mode or at rate 0).
inline Matrix apply_dropout(Matrix& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout rate must be in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return {};
  Matrix mask = dropout_mask(x.rows(), x.cols(), rate, rng);
  x.array() *= mask.array();
  return mask;
}

inline Matrix dropout_backward(const Matrix& mask, Matrix dy) {
  if (mask.size() == 0) return dy;
  dy.array() *= mask.array();
  return dy;
}

// ---------------------------------------------------------------------------
// Loss

inline double mse_loss(const Vector& pred, const Vector& target) {
  if (pred.size() != target.size() || pred.size() == 0)
    throw ShapeError("mse_loss: lengths " + std::to_string(pred.size()) + " and " + std::to_string(target.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - target[i];
    acc += r * r;
  }
  return acc / static_cast<double>(pred.size());
}

inline Vector mse_backward(const Vector& pred, const Vector& target) {
  if (pred.size() != target.size() || pred.size() == 0) throw ShapeError("mse_backward: length mismatch");
  return (2.0 / static_cast<double>(pred.size())) * (pred - target);
}

// ---------------------------------------------------------------------------
// AdamW

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Moment buffers for a fixed, ordered list of parameter tensors.
struct AdamWState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  AdamWState() = default;
  AdamWState(AdamWConfig cfg, const std::vector<const Matrix*>& params) : config(cfg) {
    for (const Matrix* p : params) {
      m.push_back(Matrix::Zero(p->rows(), p->cols()));
      v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
};

/// One AdamW step over all tensors. Weight decay is decoupled: parameters are
/// first scaled by (1 - lr*wd), then moved by the bias-corrected Adam
/// direction. Tensors with `frozen[i]` set are left untouched.
inline void adamw_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads, AdamWState& state,
                       const std::vector<bool>& frozen = {}) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adamw_step: parameter, gradient and state counts differ");
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    if (p.rows() != g.rows() || p.cols() != g.cols() || p.rows() != state.m[i].rows() ||
        p.cols() != state.m[i].cols())
      throw ShapeError("adamw_step: tensor " + std::to_string(i) + " parameter " + shape_of(p) + " vs gradient " +
                       shape_of(g));
    if (!frozen.empty() && frozen[i]) continue;
    double* pp = p.data();
    const double* gp = g.data();
    double* mp = state.m[i].data();
    double* vp = state.v[i].data();
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      pp[k] *= 1.0 - c.lr * c.weight_decay;
      mp[k] = c.beta1 * mp[k] + (1.0 - c.beta1) * gp[k];
      vp[k] = c.beta2 * vp[k] + (1.0 - c.beta2) * gp[k] * gp[k];
      const double m_hat = mp[k] / bc1;
      const double v_hat = vp[k] / bc2;
      pp[k] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

}  // namespace poigraph::nn
