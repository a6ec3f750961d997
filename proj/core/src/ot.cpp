#include "attrprompt/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

#include "attrprompt/error.hpp"

namespace attrprompt::ot {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const std::vector<double>& x) {
  double mx = kNegInf;
  for (double v : x) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

void check_finite(const Tensor& t) {
  require(t.all_finite(), ErrorKind::kNumericFailure, "sinkhorn produced a non-finite plan");
}

struct Violation {
  double rows = 0.0;
  double cols = 0.0;
};

Violation marginal_errors(const Tensor& plan, const Marginals& marg) {
  Violation v;
  std::vector<double> col(plan.cols(), 0.0);
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < plan.cols(); ++j) {
      r += plan.at(i, j);
      col[j] += plan.at(i, j);
    }
    v.rows = std::max(v.rows, std::abs(r - marg.mu[i]));
  }
  for (std::size_t j = 0; j < plan.cols(); ++j)
    v.cols = std::max(v.cols, std::abs(col[j] - marg.nu[j]));
  return v;
}

// Both solvers hand back their dual potentials (log u, log v) for the Newton
// refinement.
using Potentials = std::pair<std::vector<double>, std::vector<double>>;

TransportPlan sinkhorn_log(const CostMatrix& c, const Marginals& marg,
                           const SinkhornOptions& opt, Potentials& pot) {
  const std::size_t m = c.rows(), n = c.cols();
  Tensor log_kernel = c.cost;
  for (double& x : log_kernel.data()) x = -x / opt.gamma;
  std::vector<double> log_mu(m), log_nu(n);
  for (std::size_t i = 0; i < m; ++i) log_mu[i] = marg.mu[i] > 0 ? std::log(marg.mu[i]) : kNegInf;
  for (std::size_t j = 0; j < n; ++j) log_nu[j] = marg.nu[j] > 0 ? std::log(marg.nu[j]) : kNegInf;

  std::vector<double> f(m, 0.0), g(n, 0.0), buf;
  TransportPlan out;
  out.gamma = opt.gamma;
  out.log_domain = true;
  out.plan = Tensor::matrix(m, n);

  auto build_plan = [&] {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out.plan.at(i, j) = std::exp(log_kernel.at(i, j) + f[i] + g[j]);
  };

  for (int it = 1; it <= opt.max_iter; ++it) {
    buf.resize(n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) buf[j] = log_kernel.at(i, j) + g[j];
      f[i] = std::isfinite(log_mu[i]) ? log_mu[i] - log_sum_exp(buf) : kNegInf;
    }
    buf.resize(m);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) buf[i] = log_kernel.at(i, j) + f[i];
      g[j] = std::isfinite(log_nu[j]) ? log_nu[j] - log_sum_exp(buf) : kNegInf;
    }
    build_plan();
    check_finite(out.plan);
    out.iterations_used = it;
    if (marginal_errors(out.plan, marg).rows <= opt.tol) break;
  }
  if (out.iterations_used == 0) build_plan();
  const Violation v = marginal_errors(out.plan, marg);
  out.marginal_violation = std::max(v.rows, v.cols);
  pot = {std::move(f), std::move(g)};
  return out;
}

// Returns nullopt when a scaling denominator underflows.
std::optional<TransportPlan> sinkhorn_linear(const CostMatrix& c, const Marginals& marg,
                                             const SinkhornOptions& opt, Potentials& pot) {
  const std::size_t m = c.rows(), n = c.cols();
  Tensor kernel = c.cost;
  for (double& x : kernel.data()) x = std::exp(-x / opt.gamma);
  std::vector<double> u(m, 0.0), v(n, 1.0), kv(m), ktu(n);

  TransportPlan out;
  out.gamma = opt.gamma;
  out.plan = Tensor::matrix(m, n);
  auto build_plan = [&] {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.plan.at(i, j) = u[i] * kernel.at(i, j) * v[j];
  };

  for (int it = 1; it <= opt.max_iter; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      kv[i] = 0.0;
      for (std::size_t j = 0; j < n; ++j) kv[i] += kernel.at(i, j) * v[j];
      if (kv[i] < kScalingUnderflow) return std::nullopt;
      u[i] = marg.mu[i] / kv[i];
    }
    for (std::size_t j = 0; j < n; ++j) {
      ktu[j] = 0.0;
      for (std::size_t i = 0; i < m; ++i) ktu[j] += kernel.at(i, j) * u[i];
      if (ktu[j] < kScalingUnderflow) return std::nullopt;
      v[j] = marg.nu[j] / ktu[j];
    }
    build_plan();
    check_finite(out.plan);
    out.iterations_used = it;
    if (marginal_errors(out.plan, marg).rows <= opt.tol) break;
  }
  if (out.iterations_used == 0) build_plan();
  const Violation viol = marginal_errors(out.plan, marg);
  out.marginal_violation = std::max(viol.rows, viol.cols);
  pot.first.resize(m);
  pot.second.resize(n);
  for (std::size_t i = 0; i < m; ++i) pot.first[i] = std::log(u[i]);
  for (std::size_t j = 0; j < n; ++j) pot.second[j] = std::log(v[j]);
  return out;
}

// Solves a x = b in place by Gaussian elimination with partial pivoting.
// Returns false on a numerically singular matrix.
bool solve_dense(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i * n + k]) > std::abs(a[piv * n + k])) piv = i;
    if (!(std::abs(a[piv * n + k]) > 0.0)) return false;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[piv * n + j]);
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double factor = a[i * n + k] / a[k * n + k];
      if (factor == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a[i * n + j] -= factor * a[k * n + j];
      b[i] -= factor * b[k];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a[k * n + j] * b[j];
    b[k] = s / a[k * n + k];
  }
  return true;
}

// Newton's method on the convex dual
//   phi(f, g) = sum_ij exp(L_ij + f_i + g_j) - mu.f - nu.g,
// whose gradient is the marginal residual and whose Hessian is
// [[diag(T 1), T], [T^T, diag(T^T 1)]]. g_{n-1} is pinned to remove the
// constant-shift null direction; a residual-sized ridge handles the rest. The
// line search backtracks on the residual
// norm: near the optimum phi itself changes by less than its rounding error.
void newton_refine(const Tensor& log_kernel, const Marginals& marg, const SinkhornOptions& opt,
                   std::vector<double>& f, std::vector<double>& g, TransportPlan& out) {
  const std::size_t m = log_kernel.rows(), n = log_kernel.cols(), k = m + n - 1;
  auto plan_at = [&](const std::vector<double>& ff, const std::vector<double>& gg, Tensor& t) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) t.at(i, j) = std::exp(log_kernel.at(i, j) + ff[i] + gg[j]);
  };
  // Full residual (mu - T1, nu - T^T 1); returns its squared norm.
  std::vector<double> row(m), col(n);
  auto residual = [&](const Tensor& t) {
    std::fill(row.begin(), row.end(), 0.0);
    std::fill(col.begin(), col.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        row[i] += t.at(i, j);
        col[j] += t.at(i, j);
      }
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += (marg.mu[i] - row[i]) * (marg.mu[i] - row[i]);
    for (std::size_t j = 0; j < n; ++j) s += (marg.nu[j] - col[j]) * (marg.nu[j] - col[j]);
    return s;
  };

  Tensor t = Tensor::matrix(m, n), trial = t;
  plan_at(f, g, t);
  std::vector<double> hess(k * k), rhs(k), f2(m), g2(n);
  for (int step = 0; step < opt.newton_steps; ++step) {
    const Violation v = marginal_errors(t, marg);
    if (std::max(v.rows, v.cols) <= opt.tol) break;
    const double r0 = residual(t);
    std::fill(hess.begin(), hess.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      hess[i * k + i] = row[i];
      rhs[i] = marg.mu[i] - row[i];
      for (std::size_t j = 0; j + 1 < n; ++j) {
        hess[i * k + m + j] = t.at(i, j);
        hess[(m + j) * k + i] = t.at(i, j);
      }
    }
    for (std::size_t j = 0; j + 1 < n; ++j) {
      hess[(m + j) * k + m + j] = col[j];
      rhs[m + j] = marg.nu[j] - col[j];
    }
    // Blocks of the plan that are coupled only through entries far below the
    // residual leave near-null directions; a ridge of 1e-3 |r| suppresses them
    // and still gives quadratic convergence.
    for (std::size_t d = 0; d < k; ++d) hess[d * k + d] += 1e-3 * std::sqrt(r0);
    if (!solve_dense(hess, rhs, k)) break;

    double step_len = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving, step_len *= 0.5) {
      for (std::size_t i = 0; i < m; ++i) f2[i] = f[i] + step_len * rhs[i];
      for (std::size_t j = 0; j < n; ++j) g2[j] = g[j] + (j + 1 < n ? step_len * rhs[m + j] : 0.0);
      plan_at(f2, g2, trial);
      if (!trial.all_finite()) continue;
      if (residual(trial) < (1.0 - 1e-4 * step_len) * r0) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    f.swap(f2);
    g.swap(g2);
    std::swap(t, trial);
    out.newton_steps_used = step + 1;
  }
  out.plan = t;
}

}  // namespace

Marginals Marginals::uniform(std::size_t m, std::size_t n) {
  require(m > 0 && n > 0, ErrorKind::kInvalidArgument, "marginals need positive sizes");
  return {std::vector<double>(m, 1.0 / static_cast<double>(m)),
          std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

void Marginals::validate(std::size_t m, std::size_t n) const {
  require(mu.size() == m && nu.size() == n, ErrorKind::kInvalidArgument,
          "marginal lengths do not match the cost matrix");
  for (const auto* w : {&mu, &nu}) {
    double s = 0.0;
    for (double x : *w) {
      require(x >= 0.0 && std::isfinite(x), ErrorKind::kInvalidArgument,
              "marginal weights must be finite and nonnegative");
      s += x;
    }
    require(std::abs(s - 1.0) <= 1e-12, ErrorKind::kInvalidArgument,
            "marginal weights must sum to 1");
  }
}

Tensor cosine_similarity_matrix(const Tensor& f, const Tensor& g) {
  require(f.cols() == g.cols(), ErrorKind::kInvalidArgument,
          "attribute vectors have different dimensions");
  return matmul(l2_normalize_rows(f), transpose(l2_normalize_rows(g)));
}

CostMatrix build_cost_matrix(const Tensor& f, const Tensor& g) {
  Tensor c = cosine_similarity_matrix(f, g);
  for (double& x : c.data()) x = 1.0 - x;
  return {std::move(c)};
}

TransportPlan sinkhorn(const CostMatrix& cost, const Marginals& marginals,
                       const SinkhornOptions& options) {
  require(options.gamma > 0.0, ErrorKind::kInvalidArgument, "gamma must be positive");
  require(options.tol > 0.0, ErrorKind::kInvalidArgument, "tol must be positive");
  require(options.max_iter >= 0, ErrorKind::kInvalidArgument, "max_iter must be nonnegative");
  require(options.newton_steps >= 0, ErrorKind::kInvalidArgument, "newton_steps must be nonnegative");
  require(cost.rows() > 0 && cost.cols() > 0, ErrorKind::kInvalidArgument, "empty cost matrix");
  require(cost.cost.all_finite(), ErrorKind::kNumericFailure, "cost matrix is not finite");
  marginals.validate(cost.rows(), cost.cols());

  Potentials pot;
  std::optional<TransportPlan> linear;
  if (options.gamma >= kLogDomainGammaSwitch) linear = sinkhorn_linear(cost, marginals, options, pot);
  TransportPlan plan = linear ? std::move(*linear) : sinkhorn_log(cost, marginals, options, pot);
  if (options.newton_steps <= 0 || plan.marginal_violation <= options.tol) return plan;
  // A zero weight pins its potential at -inf; Newton has nothing to fix there.
  for (const auto* w : {&marginals.mu, &marginals.nu})
    for (double x : *w)
      if (!(x > 0.0)) return plan;
  if (plan.iterations_used == 0) return plan;

  Tensor log_kernel = cost.cost;
  for (double& x : log_kernel.data()) x = -x / options.gamma;
  newton_refine(log_kernel, marginals, options, pot.first, pot.second, plan);
  check_finite(plan.plan);
  const Violation v = marginal_errors(plan.plan, marginals);
  plan.marginal_violation = std::max(v.rows, v.cols);
  return plan;
}

double transport_cost(const Tensor& plan, const CostMatrix& cost) {
  require(plan.rows() == cost.rows() && plan.cols() == cost.cols(),
          ErrorKind::kInvalidArgument, "plan and cost shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < plan.size(); ++i) s += plan[i] * cost.cost[i];
  return s;
}

double plan_entropy(const Tensor& plan) {
  double h = 0.0;
  for (double t : plan.data())
    if (t > 0.0) h -= t * std::log(t);
  return h;
}

AttributeSimilarity attribute_similarity(const Tensor& f, const Tensor& g,
                                         const SinkhornOptions& options,
                                         const std::optional<Marginals>& marginals) {
  AttributeSimilarity out;
  out.similarity = cosine_similarity_matrix(f, g);
  CostMatrix cost{out.similarity};
  for (double& x : cost.cost.data()) x = 1.0 - x;
  out.plan = sinkhorn(cost, marginals.value_or(Marginals::uniform(f.rows(), g.rows())), options);
  for (std::size_t i = 0; i < out.similarity.size(); ++i)
    out.psi += out.similarity[i] * out.plan.plan[i];
  return out;
}

Assignment exact_assignment_oracle(const CostMatrix& cost) {
  const std::size_t m = cost.rows();
  require(m == cost.cols(), ErrorKind::kUnsupported,
          "assignment oracle needs a square cost matrix");
  require(m >= 1 && m <= 8, ErrorKind::kUnsupported,
          "assignment oracle enumerates at most 8! permutations");
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Assignment best{std::numeric_limits<double>::infinity(), perm};
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += cost.cost.at(i, perm[i]);
    s /= static_cast<double>(m);
    if (s < best.cost) best = {s, perm};
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace attrprompt::ot
