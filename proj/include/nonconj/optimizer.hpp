#pragma once

// Polak-Ribiere nonlinear conjugate gradient ascent with a backtracking
// Armijo line search.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "nonconj/error.hpp"
#include "nonconj/numerics.hpp"

namespace nonconj {

struct OptimizerConfig {
  double grad_tol = 1e-6;
  int max_iters = 1000;
  double line_search_shrink = 0.5;
  double armijo_c = 1e-4;
  /// 0 means "use the problem dimension".
  int restart_interval = 0;
};

struct OptimResult {
  Vector argmax;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Raised when no ascent step can be found; carries the best iterate.
class OptimizerStall : public Error {
 public:
  explicit OptimizerStall(OptimResult best)
      : Error(ErrorKind::numerical,
              "optimizer stalled: line search found no ascent (|grad| = " +
                  std::to_string(best.grad_norm) + ")"),
        best_(std::move(best)) {}

  const OptimResult& best() const noexcept { return best_; }

 private:
  OptimResult best_;
};

namespace detail {

inline void validate(const OptimizerConfig& c) {
  if (!(c.grad_tol > 0.0)) throw InputError("optimizer: grad_tol must be positive");
  if (c.max_iters < 1) throw InputError("optimizer: max_iters must be >= 1");
  if (!(c.line_search_shrink > 0.0 && c.line_search_shrink < 1.0)) {
    throw InputError("optimizer: line_search_shrink must lie in (0,1)");
  }
  if (!(c.armijo_c > 0.0 && c.armijo_c < 1.0)) {
    throw InputError("optimizer: armijo_c must lie in (0,1)");
  }
  if (c.restart_interval < 0) throw InputError("optimizer: restart_interval must be >= 0");
}

struct Trial {
  double alpha = 0.0;
  double value = -std::numeric_limits<double>::infinity();
  Vector x;
  Vector grad;
  bool ok = false;
};

// Evaluates the objective, turning numerical failures at trial points into
// rejected steps.
template <class Objective>
bool try_eval(Objective& objective, const Vector& x, double& value, Vector& grad) {
  try {
    value = objective(x, grad);
  } catch (const OverflowError&) {
    return false;
  } catch (const DomainError&) {
    return false;
  }
  return std::isfinite(value) && grad.allFinite();
}

}  // namespace detail

/// Maximizes objective(x, grad) -> value starting from init. When
/// accepted_values is non-null every accepted objective value (starting with
/// the initial one) is appended to it.
template <class Objective>
OptimResult maximize(Objective&& objective, const Vector& init, const OptimizerConfig& config,
                     std::vector<double>* accepted_values = nullptr) {
  detail::validate(config);
  const Index n = init.size();
  const int restart_every =
      config.restart_interval > 0 ? config.restart_interval : static_cast<int>(std::max<Index>(n, 1));
  constexpr int kMaxShrinks = 50;

  Vector x = init;
  Vector g(n);
  double fx = objective(x, g);
  if (!std::isfinite(fx) || !g.allFinite()) {
    throw InputError("optimizer: objective is not finite at the initial point");
  }
  if (accepted_values) accepted_values->push_back(fx);

  Vector d = g;
  int since_restart = 0;
  OptimResult res;
  res.iterations = 0;

  auto snapshot = [&](bool converged) {
    res.argmax = x;
    res.value = fx;
    res.grad_norm = g.norm();
    res.converged = converged;
    return res;
  };

  while (res.iterations < config.max_iters) {
    const double gnorm = g.norm();
    if (gnorm <= config.grad_tol) return snapshot(true);

    double slope = g.dot(d);
    if (!(slope > 0.0)) {
      d = g;
      slope = g.squaredNorm();
      since_restart = 0;
    }

    auto search = [&](const Vector& dir, double dir_slope) {
      detail::Trial best;
      // Armijo sufficient increase, or, once differences fall to rounding
      // level, no loss beyond roundoff together with a smaller gradient.
      const double noise = 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(fx));
      auto accepts = [&](double alpha, double value, const Vector& grad) {
        if (value >= fx + config.armijo_c * alpha * dir_slope) return true;
        return value >= fx - noise && grad.norm() < gnorm;
      };
      auto consider = [&](double alpha) -> detail::Trial {
        detail::Trial t;
        t.alpha = alpha;
        t.x = x + alpha * dir;
        t.grad.resize(n);
        t.ok = detail::try_eval(objective, t.x, t.value, t.grad);
        return t;
      };
      // Maximizer of the quadratic through (0, fx, slope) and (alpha, value).
      auto interpolate = [&](double alpha, double value) {
        const double curvature = (fx + dir_slope * alpha - value) / (alpha * alpha);
        if (!(curvature > 0.0) || !std::isfinite(curvature)) return -1.0;
        return dir_slope / (2.0 * curvature);
      };

      double alpha = 1.0;
      for (int shrink = 0; shrink <= kMaxShrinks; ++shrink) {
        detail::Trial t = consider(alpha);
        if (t.ok && accepts(alpha, t.value, t.grad)) {
          best = std::move(t);
          // Refine towards the line maximum by a secant on the directional
          // derivative; exact on quadratics and free of value cancellation.
          const double end_slope = best.grad.dot(dir);
          double aq = -1.0;
          if (end_slope < dir_slope) aq = best.alpha * dir_slope / (dir_slope - end_slope);
          if (aq > 0.0 && std::abs(aq - best.alpha) > 1e-6 * best.alpha && aq < 100.0 * best.alpha) {
            detail::Trial r = consider(aq);
            const bool better = r.ok && (r.value > best.value ||
                                         (r.value >= best.value - noise && r.grad.norm() < best.grad.norm()));
            if (better && accepts(aq, r.value, r.grad)) best = std::move(r);
          }
          return best;
        }
        double next = config.line_search_shrink * alpha;
        if (t.ok) {
          const double aq = interpolate(alpha, t.value);
          if (aq >= 0.1 * alpha && aq <= config.line_search_shrink * alpha) next = aq;
        }
        alpha = next;
      }
      return best;
    };

    detail::Trial step = search(d, slope);
    if (!step.ok) {
      bool was_gradient = (d - g).norm() == 0.0;
      if (!was_gradient) {
        d = g;
        since_restart = 0;
        step = search(d, g.squaredNorm());
      }
      if (!step.ok) throw OptimizerStall(snapshot(false));
    }

    const Vector g_old = g;
    x = std::move(step.x);
    fx = step.value;
    g = std::move(step.grad);
    if (accepted_values) accepted_values->push_back(fx);
    ++res.iterations;

    ++since_restart;
    double beta = 0.0;
    if (since_restart < restart_every) {
      beta = std::max(0.0, g.dot(g - g_old) / g_old.squaredNorm());
      if (!std::isfinite(beta)) beta = 0.0;
    } else {
      since_restart = 0;
    }
    d = g + beta * d;
  }
  return snapshot(g.norm() <= config.grad_tol);
}

}  // namespace nonconj
