#include "wig/ot.hpp"

#include <cmath>
#include <limits>

namespace wig {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Below log(DBL_MIN) the kernel entry is subnormal or zero.
const double kMinLogKernel = std::log(std::numeric_limits<double>::min());

// out_i = log sum_j exp(M_ij + h_j)
Vector row_logsumexp(const Matrix& m, const Vector& h) {
  const Eigen::Index n = m.rows();
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = kNegInf;
    for (Eigen::Index j = 0; j < m.cols(); ++j) mx = std::max(mx, m(i, j) + h[j]);
    if (mx == kNegInf) {
      out[i] = kNegInf;
      continue;
    }
    double s = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) s += std::exp(m(i, j) + h[j] - mx);
    out[i] = mx + std::log(s);
  }
  return out;
}

// out_j = log sum_i exp(M_ij + h_i)
Vector col_logsumexp(const Matrix& m, const Vector& h) {
  const Eigen::Index n = m.cols();
  Vector out(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double mx = kNegInf;
    for (Eigen::Index i = 0; i < m.rows(); ++i) mx = std::max(mx, m(i, j) + h[i]);
    if (mx == kNegInf) {
      out[j] = kNegInf;
      continue;
    }
    double s = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) s += std::exp(m(i, j) + h[i] - mx);
    out[j] = mx + std::log(s);
  }
  return out;
}

// Scaling-domain denominators below the floor mean the kernel has underflowed;
// the iteration can no longer be trusted.
Vector floored(const Vector& v, double floor) {
  if ((v.array() < floor).any() || !v.allFinite())
    throw NumericalError("sinkhorn: scaling vector underflow; epsilon too small for scaling iterations, enable log_domain");
  return v;
}

void check_square(const CostMatrix& cost) {
  require(cost.data.rows() == cost.data.cols(), "cost matrix must be square");
  require(cost.data.allFinite(), "cost matrix has non-finite entries");
}

}  // namespace

void SinkhornConfig::validate() const {
  require(epsilon > 0.0 && std::isfinite(epsilon), "sinkhorn: epsilon must be > 0");
  require(iterations >= 1, "sinkhorn: iterations must be >= 1");
  require(underflow_floor > 0.0, "sinkhorn: underflow_floor must be > 0");
}

GibbsKernel::GibbsKernel(const CostMatrix& cost, double epsilon) : cost_(cost.data), epsilon_(epsilon) {
  check_square(cost);
  require(epsilon > 0.0, "sinkhorn: epsilon must be > 0");
  log_kernel_ = -cost_ / epsilon;
  kernel_ = log_kernel_.unaryExpr([](double x) { return std::exp(x); });
  underflowed_ = (log_kernel_.array() < kMinLogKernel).any();
}

Vector smooth_marginal(const Vector& p) {
  Vector q = p.array() + 1e-12;
  return q / q.sum();
}

TransportResult sinkhorn_distance(const Vector& mu_in, const Vector& nu_in, const CostMatrix& cost,
                                  const SinkhornConfig& cfg) {
  cfg.validate();
  check_square(cost);
  const Eigen::Index n = cost.data.rows();
  require(mu_in.size() == n && nu_in.size() == n, "sinkhorn_distance: marginal dimension does not match cost matrix");
  require((mu_in.array() >= 0.0).all() && (nu_in.array() >= 0.0).all(), "sinkhorn_distance: marginals must be nonnegative");
  const Vector mu = smooth_marginal(mu_in);
  const Vector nu = smooth_marginal(nu_in);
  const double eps = cfg.epsilon;
  const Matrix& c = cost.data;

  TransportResult res;
  Matrix log_plan(n, n);
  if (cfg.uses_log_domain()) {
    const Matrix g_kernel = -c / eps;
    const Vector log_mu = mu.array().log();
    const Vector log_nu = nu.array().log();
    // Dual potentials divided by epsilon.
    Vector f = Vector::Zero(n);
    Vector g = Vector::Zero(n);
    for (std::size_t l = 0; l < cfg.iterations; ++l) {
      f = log_mu - row_logsumexp(g_kernel, g);
      g = log_nu - col_logsumexp(g_kernel, f);
    }
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) log_plan(i, j) = f[i] + g[j] + g_kernel(i, j);
  } else {
    const Matrix k = (-c / eps).unaryExpr([](double x) { return std::exp(x); });
    if (((-c / eps).array() < kMinLogKernel).any())
      throw NumericalError("sinkhorn_distance: Gibbs kernel underflows at epsilon " + std::to_string(eps) + ", enable log_domain");
    Vector u = Vector::Ones(n);
    Vector v = Vector::Ones(n);
    for (std::size_t l = 0; l < cfg.iterations; ++l) {
      u = mu.cwiseQuotient(floored(k * v, cfg.underflow_floor));
      v = nu.cwiseQuotient(floored(k.transpose() * u, cfg.underflow_floor));
    }
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) log_plan(i, j) = std::log(u[i]) + std::log(v[j]) - c(i, j) / eps;
  }

  res.plan = log_plan.array().exp().matrix();
  double transport = 0.0, entropy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double p = res.plan(i, j);
      if (p <= 0.0) continue;
      transport += p * c(i, j);
      entropy += p * (log_plan(i, j) - 1.0);
    }
  }
  res.transport_cost = transport;
  res.value = transport + eps * entropy;
  res.marginal_violation = (res.plan.rowwise().sum() - mu).lpNorm<1>() + (res.plan.colwise().sum().transpose() - nu).lpNorm<1>();
  if (!std::isfinite(res.value) || !res.plan.allFinite())
    throw NumericalError("sinkhorn_distance: non-finite result; epsilon too small for scaling iterations, enable log_domain");
  return res;
}

// Forward and reverse passes share tape layout, so they live together.
struct BarycenterEngine {
  static BarycenterResult forward(const Matrix& topics, const Vector& weights,
                                  std::shared_ptr<const GibbsKernel> kernel, const SinkhornConfig& cfg, bool record) {
    cfg.validate();
    const auto n = static_cast<Eigen::Index>(kernel->dim());
    const Eigen::Index nk = topics.cols();
    require(topics.rows() == n, "sinkhorn_barycenter: topic length does not match cost matrix");
    require(nk >= 1 && weights.size() == nk, "sinkhorn_barycenter: weights must have one entry per topic");
    require(topics.allFinite() && weights.allFinite(), "sinkhorn_barycenter: non-finite input");
    require(std::abs(kernel->epsilon() - cfg.epsilon) <= 1e-15 * cfg.epsilon, "sinkhorn_barycenter: kernel epsilon mismatch");

    BarycenterResult res;
    BarycenterTape& tape = res.tape;
    const bool log_mode = cfg.uses_log_domain();
    if (!log_mode && kernel->underflowed())
      throw NumericalError("sinkhorn_barycenter: Gibbs kernel underflows at epsilon " + std::to_string(cfg.epsilon) + ", enable log_domain");
    const Matrix t = topics.cwiseMax(cfg.underflow_floor);
    const std::size_t steps = cfg.iterations;
    if (record) {
      tape.b_.reserve(steps * static_cast<std::size_t>(nk));
      tape.kb_.reserve(steps * static_cast<std::size_t>(nk));
      tape.phi_.reserve(steps * static_cast<std::size_t>(nk));
      tape.logp_.reserve(steps);
    }

    std::vector<Vector> b(static_cast<std::size_t>(nk), log_mode ? Vector::Zero(n) : Vector::Ones(n));
    std::vector<Vector> phi(static_cast<std::size_t>(nk));
    Vector logp(n);
    const Matrix log_t = t.array().log().matrix();
    const Matrix& kmat = kernel->kernel();
    const Matrix& lk = kernel->log_kernel();

    for (std::size_t l = 0; l < steps; ++l) {
      logp.setZero();
      for (Eigen::Index k = 0; k < nk; ++k) {
        auto& bk = b[static_cast<std::size_t>(k)];
        Vector kb;
        if (log_mode) {
          kb = row_logsumexp(lk, bk);
          phi[static_cast<std::size_t>(k)] = col_logsumexp(lk, log_t.col(k) - kb);
          logp += weights[k] * phi[static_cast<std::size_t>(k)];
        } else {
          kb = floored(kmat * bk, cfg.underflow_floor);
          phi[static_cast<std::size_t>(k)] = floored(kmat.transpose() * t.col(k).cwiseQuotient(kb), cfg.underflow_floor);
          logp += weights[k] * phi[static_cast<std::size_t>(k)].array().log().matrix();
        }
        if (record) {
          tape.b_.push_back(bk);
          tape.kb_.push_back(std::move(kb));
          tape.phi_.push_back(phi[static_cast<std::size_t>(k)]);
        }
      }
      for (Eigen::Index k = 0; k < nk; ++k) {
        const auto& pk = phi[static_cast<std::size_t>(k)];
        if (log_mode)
          b[static_cast<std::size_t>(k)] = logp - pk;
        else
          b[static_cast<std::size_t>(k)] = logp.array().exp().matrix().cwiseQuotient(pk);
      }
      if (record) tape.logp_.push_back(logp);
    }

    const double mx = logp.maxCoeff();
    Vector out = (logp.array() - mx).exp().matrix();
    out /= out.sum();
    if (!out.allFinite())
      throw NumericalError("sinkhorn_barycenter: non-finite result; epsilon too small for scaling iterations, enable log_domain");
    res.barycenter = out;
    if (record) {
      tape.kernel_ = std::move(kernel);
      tape.log_domain_ = log_mode;
      tape.topics_ = t;
      tape.weights_ = weights;
      tape.output_ = out;
    }
    return res;
  }

  static BarycenterGradient backward(const BarycenterTape& tape, const Vector& upstream) {
    if (tape.empty()) throw ValidationError("barycenter_grad: tape missing (run the barycenter with recording enabled)");
    const Eigen::Index n = tape.topics_.rows();
    const Eigen::Index nk = tape.topics_.cols();
    require(upstream.size() == n, "barycenter_grad: upstream gradient has wrong length");
    const std::size_t steps = tape.logp_.size();
    const Matrix& kmat = tape.kernel_->kernel();
    const Matrix& lk = tape.kernel_->log_kernel();
    const Matrix& t = tape.topics_;
    const Vector& lambda = tape.weights_;

    BarycenterGradient grad{Matrix::Zero(n, nk), Vector::Zero(nk)};
    Matrix q_bar = Matrix::Zero(n, nk);  // gradient w.r.t. log t
    // Renormalization at exit: out = exp(g) / sum exp(g).
    const Vector& out = tape.output_;
    Vector g_bar = out.cwiseProduct(upstream.array().matrix() - Vector::Constant(n, out.dot(upstream)));
    std::vector<Vector> a_bar(static_cast<std::size_t>(nk), Vector::Zero(n));

    for (std::size_t l = steps; l-- > 0;) {
      if (l + 1 < steps) {
        g_bar.setZero();
        for (const auto& ab : a_bar) g_bar += ab;
      } else {
        for (const auto& ab : a_bar) g_bar += ab;
      }
      for (Eigen::Index k = 0; k < nk; ++k) {
        const std::size_t idx = l * static_cast<std::size_t>(nk) + static_cast<std::size_t>(k);
        const Vector& b = tape.b_[idx];
        const Vector& kb = tape.kb_[idx];
        const Vector& phi = tape.phi_[idx];
        Vector& ab = a_bar[static_cast<std::size_t>(k)];

        const Vector f_bar = lambda[k] * g_bar - ab;
        Vector s_bar(n);
        if (tape.log_domain_) {
          grad.weights[k] += g_bar.dot(phi);
          // P_ij = exp(logK_ij + log t_i - s_i - f_j), columns of P sum to 1.
          for (Eigen::Index i = 0; i < n; ++i) {
            double acc = 0.0;
            const double base = std::log(t(i, k)) - kb[i];
            for (Eigen::Index j = 0; j < n; ++j) acc += std::exp(lk(i, j) + base - phi[j]) * f_bar[j];
            q_bar(i, k) += acc;
            s_bar[i] = -acc;
          }
          if (l > 0) {
            // Q_ij = exp(logK_ij + a_j - s_i), rows of Q sum to 1.
            Vector next = Vector::Zero(n);
            for (Eigen::Index i = 0; i < n; ++i) {
              if (s_bar[i] == 0.0) continue;
              for (Eigen::Index j = 0; j < n; ++j) next[j] += s_bar[i] * std::exp(lk(i, j) + b[j] - kb[i]);
            }
            ab = next;
          }
        } else {
          grad.weights[k] += g_bar.dot(phi.array().log().matrix());
          const Vector u = t.col(k).cwiseQuotient(kb);
          const Vector kw = kmat * f_bar.cwiseQuotient(phi);
          const Vector uk = u.cwiseProduct(kw);
          q_bar.col(k) += uk;
          s_bar = -uk;
          if (l > 0) ab = b.cwiseProduct(kmat.transpose() * s_bar.cwiseQuotient(kb));
        }
      }
    }
    grad.topics = q_bar.cwiseQuotient(t);
    return grad;
  }
};

Vector sinkhorn_barycenter(const Matrix& topics, const Vector& weights, const CostMatrix& cost,
                           const SinkhornConfig& cfg) {
  cfg.validate();
  auto kernel = std::make_shared<const GibbsKernel>(cost, cfg.epsilon);
  return BarycenterEngine::forward(topics, weights, std::move(kernel), cfg, false).barycenter;
}

BarycenterResult sinkhorn_barycenter_recorded(const Matrix& topics, const Vector& weights,
                                              std::shared_ptr<const GibbsKernel> kernel, const SinkhornConfig& cfg) {
  require(kernel != nullptr, "sinkhorn_barycenter: null kernel");
  return BarycenterEngine::forward(topics, weights, std::move(kernel), cfg, true);
}

BarycenterGradient barycenter_grad(const BarycenterTape& tape, const Vector& upstream) {
  return BarycenterEngine::backward(tape, upstream);
}

BarycenterGradient barycenter_grad(const Matrix& topics, const Vector& weights, const CostMatrix& cost,
                                   const SinkhornConfig& cfg, const Vector& upstream) {
  cfg.validate();
  auto kernel = std::make_shared<const GibbsKernel>(cost, cfg.epsilon);
  auto res = sinkhorn_barycenter_recorded(topics, weights, std::move(kernel), cfg);
  return barycenter_grad(res.tape, upstream);
}

}  // namespace wig
