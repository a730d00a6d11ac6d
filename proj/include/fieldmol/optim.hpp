#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <vector>

#include "fieldmol/error.hpp"
#include "fieldmol/mfn.hpp"

namespace fieldmol {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when non-zero
};

/// Bias-corrected Adam over a fixed list of named tensors. The tensor list
/// must have the same layout on every call (it is how state slots are
/// matched). A non-finite gradient rejects the whole step.
template <typename Scalar>
class AdamT {
 public:
  explicit AdamT(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<TensorRefT<Scalar>>& params,
            const std::vector<TensorRefT<Scalar>>& grads, double lr) {
    if (params.size() != grads.size())
      throw std::invalid_argument("adam: params/grads tensor count mismatch");
    if (m_.empty()) {
      for (const auto& t : params) {
        m_.emplace_back(t.size, Scalar(0));
        v_.emplace_back(t.size, Scalar(0));
      }
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (params[k].size != grads[k].size || params[k].size != m_[k].size())
        throw std::invalid_argument("adam: tensor shape mismatch for " + params[k].name);
      for (std::size_t i = 0; i < grads[k].size; ++i)
        if (!std::isfinite(static_cast<double>(grads[k].data[i])))
          throw NumericError("adam: non-finite gradient in " + grads[k].name +
                             ", step rejected");
    }

    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Scalar* th = params[k].data;
      const Scalar* g = grads[k].data;
      Scalar* m = m_[k].data();
      Scalar* v = v_[k].data();
      for (std::size_t i = 0; i < params[k].size; ++i) {
        m[i] = static_cast<Scalar>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i]);
        v[i] = static_cast<Scalar>(cfg_.beta2 * v[i] +
                                   (1.0 - cfg_.beta2) * static_cast<double>(g[i]) * g[i]);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        double update = lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (cfg_.weight_decay != 0.0) update += lr * cfg_.weight_decay * th[i];
        th[i] = static_cast<Scalar>(th[i] - update);
      }
    }
  }

  long long step_count() const { return step_; }
  const std::vector<std::vector<Scalar>>& first_moments() const { return m_; }
  const std::vector<std::vector<Scalar>>& second_moments() const { return v_; }

  void set_state(std::vector<std::vector<Scalar>> m, std::vector<std::vector<Scalar>> v,
                 long long step) {
    m_ = std::move(m);
    v_ = std::move(v);
    step_ = step;
  }

  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<Scalar>> m_;
  std::vector<std::vector<Scalar>> v_;
  long long step_ = 0;
};

using Adam = AdamT<float>;

/// Adam over the rows of a code table. Untouched rows keep their parameters
/// and moments bit-identical; each row carries its own step counter so bias
/// correction stays exact for rarely visited codes.
template <typename Scalar>
class SparseAdamT {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  explicit SparseAdamT(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(Matrix& table, const std::vector<int>& rows, const Matrix& row_grads, double lr) {
    if (m_.size() == 0) {
      m_ = Matrix::Zero(table.rows(), table.cols());
      v_ = Matrix::Zero(table.rows(), table.cols());
      steps_.assign(static_cast<std::size_t>(table.rows()), 0);
    }
    if (m_.rows() != table.rows() || m_.cols() != table.cols())
      throw std::invalid_argument("sparse adam: table shape changed");
    if (static_cast<Eigen::Index>(rows.size()) != row_grads.rows() ||
        row_grads.cols() != table.cols())
      throw std::invalid_argument("sparse adam: gradient shape mismatch");
    for (std::size_t a = 0; a < rows.size(); ++a) {
      if (rows[a] < 0 || rows[a] >= table.rows())
        throw std::out_of_range("sparse adam: row " + std::to_string(rows[a]) + " out of range");
      for (std::size_t b = a + 1; b < rows.size(); ++b)
        if (rows[a] == rows[b])
          throw std::invalid_argument("sparse adam: duplicate row " + std::to_string(rows[a]));
    }
    if (!row_grads.allFinite())
      throw NumericError("sparse adam: non-finite gradient, step rejected");

    for (std::size_t a = 0; a < rows.size(); ++a) {
      const int r = rows[a];
      const long long t = ++steps_[r];
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
      for (Eigen::Index j = 0; j < table.cols(); ++j) {
        const double g = row_grads(static_cast<Eigen::Index>(a), j);
        m_(r, j) = static_cast<Scalar>(cfg_.beta1 * m_(r, j) + (1.0 - cfg_.beta1) * g);
        v_(r, j) = static_cast<Scalar>(cfg_.beta2 * v_(r, j) + (1.0 - cfg_.beta2) * g * g);
        const double mhat = m_(r, j) / bc1;
        const double vhat = v_(r, j) / bc2;
        table(r, j) =
            static_cast<Scalar>(table(r, j) - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  const Matrix& first_moments() const { return m_; }
  const Matrix& second_moments() const { return v_; }
  const std::vector<long long>& row_steps() const { return steps_; }

  void set_state(Matrix m, Matrix v, std::vector<long long> steps) {
    m_ = std::move(m);
    v_ = std::move(v);
    steps_ = std::move(steps);
  }

 private:
  AdamConfig cfg_;
  Matrix m_, v_;
  std::vector<long long> steps_;
};

using SparseAdam = SparseAdamT<float>;

/// shadow <- decay * shadow + (1 - decay) * params, tensor by tensor.
template <typename Scalar>
void ema_update(const std::vector<TensorRefT<Scalar>>& shadow,
                const std::vector<TensorRefT<Scalar>>& params, double decay = 0.9999) {
  if (shadow.size() != params.size())
    throw std::invalid_argument("ema: tensor count mismatch");
  for (std::size_t k = 0; k < shadow.size(); ++k) {
    if (shadow[k].size != params[k].size)
      throw std::invalid_argument("ema: tensor shape mismatch for " + shadow[k].name);
    for (std::size_t i = 0; i < shadow[k].size; ++i)
      shadow[k].data[i] = static_cast<Scalar>(decay * shadow[k].data[i] +
                                              (1.0 - decay) * params[k].data[i]);
  }
}

/// Linear warmup to peak over warmup_iters, then peak * sqrt(warmup/iter).
struct LrSchedule {
  long long warmup_iters = 4000;
  double peak = 3e-4;
};

inline double lr_at(const LrSchedule& s, long long iter) {
  if (iter < 0) throw std::invalid_argument("lr_at: negative iteration");
  if (iter <= s.warmup_iters)
    return s.peak * static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
  return s.peak * std::sqrt(static_cast<double>(s.warmup_iters) / static_cast<double>(iter));
}

struct LbfgsResult {
  Eigen::Vector3d x;
  double value = 0.0;
  int iterations = 0;
  bool warning = false;  // non-finite oracle; x is the unchanged start point
};

/// Oracle returns f(x) and, when grad is non-null, writes the gradient.
using BallOracle = std::function<double(const Eigen::Vector3d&, Eigen::Vector3d* grad)>;

/// Ball-constrained ascent: L-BFGS (history 10) with backtracking line
/// search from unit step, Armijo constant 1e-4, iterates projected back onto
/// the closed ball after each trial. Monotone by guarded acceptance, so the
/// result never scores below f(x0) and never leaves the ball.
inline LbfgsResult lbfgs_maximize(const BallOracle& oracle, const Eigen::Vector3d& x0,
                                  const Eigen::Vector3d& center, double radius,
                                  int max_iters = 50, int history = 10, double step_size = 1.0,
                                  double step_tol = 1e-6) {
  if (radius <= 0) throw std::invalid_argument("lbfgs_maximize: radius must be > 0");

  auto project = [&](const Eigen::Vector3d& x) {
    const Eigen::Vector3d v = x - center;
    const double n = v.norm();
    return n <= radius ? x : Eigen::Vector3d(center + v * (radius / n));
  };

  // Internally minimize phi = -f.
  Eigen::Vector3d x = project(x0);
  Eigen::Vector3d g;
  double fx = oracle(x, &g);
  if (!std::isfinite(fx) || !g.allFinite()) return {x0, fx, 0, true};
  Eigen::Vector3d gphi = -g;

  std::vector<Eigen::Vector3d> s_hist, y_hist;
  LbfgsResult result{x, fx, 0, false};

  for (int iter = 0; iter < max_iters; ++iter) {
    if (gphi.norm() < 1e-12) break;

    // Two-loop recursion.
    Eigen::Vector3d q = gphi;
    const int hist = static_cast<int>(s_hist.size());
    std::vector<double> alpha(hist);
    for (int i = hist - 1; i >= 0; --i) {
      const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
      alpha[i] = rho * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (hist > 0) {
      const double scale =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= scale;
    }
    for (int i = 0; i < hist; ++i) {
      const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
      const double beta = rho * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::Vector3d p = -q;  // descent direction for phi
    if (p.dot(gphi) >= 0) p = -gphi;

    double step = step_size;
    bool accepted = false;
    Eigen::Vector3d x_new;
    Eigen::Vector3d g_new;
    double f_new = 0;
    for (int bt = 0; bt < 30; ++bt) {
      x_new = project(x + step * p);
      f_new = oracle(x_new, &g_new);
      if (std::isfinite(f_new) && g_new.allFinite()) {
        const double phi_decrease = -f_new - (-fx);
        const double armijo = 1e-4 * gphi.dot(x_new - x);
        if (phi_decrease <= std::min(0.0, armijo)) {
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;

    const Eigen::Vector3d s = x_new - x;
    const Eigen::Vector3d y = (-g_new) - gphi;
    if (s.dot(y) > 1e-12) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      if (static_cast<int>(s_hist.size()) > history) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
      }
    }

    x = x_new;
    fx = f_new;
    gphi = -g_new;
    result = {x, fx, iter + 1, false};
    if (s.norm() < step_tol) break;
  }
  return result;
}

}  // namespace fieldmol
