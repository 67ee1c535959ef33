#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "wig/common.hpp"
#include "wig/embeddings.hpp"

namespace wig {

struct SinkhornConfig {
  double epsilon = 0.1;
  std::size_t iterations = 50;
  /// nullopt selects log-domain iterations automatically for epsilon < 0.05.
  std::optional<bool> log_domain;
  /// Scaling-domain denominators below this raise NumericalError.
  double underflow_floor = 1e-300;

  bool uses_log_domain() const { return log_domain.value_or(epsilon < 0.05); }
  void validate() const;
};

/// exp(-C/epsilon) together with its log, shared by every evaluation on the
/// same cost matrix.
class GibbsKernel {
public:
  GibbsKernel(const CostMatrix& cost, double epsilon);

  const Matrix& cost() const { return cost_; }
  const Matrix& kernel() const { return kernel_; }
  const Matrix& log_kernel() const { return log_kernel_; }
  double epsilon() const { return epsilon_; }
  /// Some kernel entries are exactly zero; only log-domain iterations are valid.
  bool underflowed() const { return underflowed_; }
  std::size_t dim() const { return static_cast<std::size_t>(cost_.rows()); }

private:
  Matrix cost_;
  Matrix kernel_;
  Matrix log_kernel_;
  double epsilon_;
  bool underflowed_ = false;
};

struct TransportResult {
  double value = 0.0;           // <pi, C> + eps * sum pi (log pi - 1)
  double transport_cost = 0.0;  // <pi, C>
  Matrix plan;
  double marginal_violation;  // ||pi 1 - mu||_1 + ||pi^T 1 - nu||_1
};

/// Adds 1e-12 to every entry and renormalizes.
Vector smooth_marginal(const Vector& p);

TransportResult sinkhorn_distance(const Vector& mu, const Vector& nu, const CostMatrix& cost,
                                  const SinkhornConfig& cfg);

/// Forward pass record needed for reverse accumulation. Per iteration and
/// topic it holds the scaling vectors (or their logs in log-domain mode).
class BarycenterTape {
public:
  bool empty() const { return kernel_ == nullptr; }

private:
  friend struct BarycenterEngine;

  std::shared_ptr<const GibbsKernel> kernel_;
  bool log_domain_ = false;
  Matrix topics_;   // floored topic columns
  Vector weights_;
  // Index [iteration * K + k].
  std::vector<Vector> b_;     // scaling before the iteration (log in log mode)
  std::vector<Vector> kb_;    // K b
  std::vector<Vector> phi_;   // K^T (t / K b)
  std::vector<Vector> logp_;  // log barycenter after each iteration
  Vector output_;
};

struct BarycenterResult {
  Vector barycenter;
  BarycenterTape tape;
};

struct BarycenterGradient {
  Matrix topics;   // N x K
  Vector weights;  // K
};

/// Entropic barycenter of the columns of `topics` by iterative Bregman
/// projections with a fixed iteration count. The result is renormalized.
Vector sinkhorn_barycenter(const Matrix& topics, const Vector& weights, const CostMatrix& cost,
                           const SinkhornConfig& cfg);

BarycenterResult sinkhorn_barycenter_recorded(const Matrix& topics, const Vector& weights,
                                              std::shared_ptr<const GibbsKernel> kernel, const SinkhornConfig& cfg);

/// Reverse accumulation through the recorded iterations. Exact for the
/// truncated computation, not for the converged limit.
BarycenterGradient barycenter_grad(const BarycenterTape& tape, const Vector& upstream);

BarycenterGradient barycenter_grad(const Matrix& topics, const Vector& weights, const CostMatrix& cost,
                                   const SinkhornConfig& cfg, const Vector& upstream);

}  // namespace wig
