#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace gazesynth {

struct LmOptions {
  double initial_damping = 1e-3;
  double damping_factor = 10.0;
  int max_iterations = 100;
  double relative_tolerance = 1e-10;
};

struct LmSummary {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  /// Cost after every accepted step, starting with the initial cost.
  std::vector<double> cost_history;
  bool converged = false;
};

/// Damped least squares over a problem exposing
///   bool evaluate(const VectorXd& x, VectorXd& r, MatrixXd* J) const;
///   VectorXd plus(const VectorXd& x, const VectorXd& delta) const;
/// Cost is the plain sum of squared residuals. Only steps that lower the cost
/// are accepted, so cost_history is non-increasing.
template <class Problem>
LmSummary levenberg_marquardt(const Problem& problem, Eigen::VectorXd& x,
                              const LmOptions& options = {}) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;

  LmSummary summary;
  VectorXd r;
  MatrixXd J;
  if (!problem.evaluate(x, r, &J)) {
    summary.initial_cost = summary.final_cost = std::numeric_limits<double>::infinity();
    return summary;
  }
  double cost = r.squaredNorm();
  summary.initial_cost = cost;
  summary.cost_history.push_back(cost);

  double lambda = options.initial_damping;
  VectorXd r_new;
  for (int it = 0; it < options.max_iterations; ++it) {
    summary.iterations = it + 1;
    if (cost == 0.0) {
      summary.converged = true;
      break;
    }
    const MatrixXd JtJ = J.transpose() * J;
    const VectorXd g = J.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() <= 1e-300) {
      summary.converged = true;
      break;
    }

    bool accepted = false;
    while (lambda < 1e16) {
      MatrixXd A = JtJ;
      for (Eigen::Index i = 0; i < A.rows(); ++i) {
        A(i, i) += lambda * std::max(JtJ(i, i), 1e-12);
      }
      const VectorXd delta = A.ldlt().solve(-g);
      if (!delta.allFinite()) {
        lambda *= options.damping_factor;
        continue;
      }
      const VectorXd x_new = problem.plus(x, delta);
      if (problem.evaluate(x_new, r_new, nullptr)) {
        const double cost_new = r_new.squaredNorm();
        if (cost_new < cost) {
          const double rel = (cost - cost_new) / cost;
          x = x_new;
          cost = cost_new;
          lambda = std::max(lambda / options.damping_factor, 1e-12);
          problem.evaluate(x, r, &J);
          summary.cost_history.push_back(cost);
          accepted = true;
          if (rel < options.relative_tolerance ||
              delta.norm() <= 1e-15 * (x.norm() + 1e-15)) {
            summary.converged = true;
          }
          break;
        }
      }
      lambda *= options.damping_factor;
    }
    if (!accepted) {
      // No descent direction left at any damping: numerically at a minimum.
      summary.converged = true;
      break;
    }
    if (summary.converged) break;
  }
  summary.final_cost = cost;
  return summary;
}

}  // namespace gazesynth
