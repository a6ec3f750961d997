#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "attrprompt/tensor.hpp"

// Entropic optimal transport between two small sets of embedding vectors.
namespace attrprompt::ot {

// C(m, n) = 1 - cos(f_m, g_n), so every entry lies in [0, 2].
struct CostMatrix {
  Tensor cost;

  std::size_t rows() const { return cost.rows(); }
  std::size_t cols() const { return cost.cols(); }
};

struct Marginals {
  std::vector<double> mu;  // source weights, length M
  std::vector<double> nu;  // target weights, length N

  static Marginals uniform(std::size_t m, std::size_t n);
  // Throws kInvalidArgument unless both are nonnegative, sum to 1 within
  // 1e-12 and match the given lengths.
  void validate(std::size_t m, std::size_t n) const;
};

struct SinkhornOptions {
  double gamma = 0.1;
  int max_iter = 100;
  double tol = 1e-6;
  // Damped Newton steps on the dual potentials, taken only when the sweeps
  // stop above tol. At small gamma the sweeps converge like 1/t once the plan
  // is close to a permutation; a few Newton steps reach the same fixed point.
  int newton_steps = 0;
};

// Below this regularization strength the solver iterates on log-domain dual
// potentials; exp(-2 / gamma) would otherwise underflow.
inline constexpr double kLogDomainGammaSwitch = 0.05;
// A scaling denominator below this triggers the log-domain fallback.
inline constexpr double kScalingUnderflow = 1e-300;

struct TransportPlan {
  Tensor plan;  // M x N, nonnegative
  double gamma = 0.0;
  int iterations_used = 0;
  int newton_steps_used = 0;
  // max(||T 1 - mu||_inf, ||T^T 1 - nu||_inf) at exit.
  double marginal_violation = 0.0;
  bool log_domain = false;

  bool converged(double tol) const { return marginal_violation <= tol; }
};

Tensor cosine_similarity_matrix(const Tensor& f, const Tensor& g);
CostMatrix build_cost_matrix(const Tensor& f, const Tensor& g);

// Sinkhorn scaling T = diag(u) A diag(v), A = exp(-C / gamma), alternating
// u = mu / (A v) and v = nu / (A^T u) from v = 1. Stops once the row marginal
// error is within tol or after max_iter sweeps; a non-converged plan is
// returned with its violation for the caller to judge. NaN raises
// kNumericFailure. Optional Newton refinement keeps the diag(u) A diag(v)
// form.
TransportPlan sinkhorn(const CostMatrix& cost, const Marginals& marginals,
                       const SinkhornOptions& options);

// Frobenius inner product <T, C>.
double transport_cost(const Tensor& plan, const CostMatrix& cost);
inline double transport_cost(const TransportPlan& plan, const CostMatrix& cost) {
  return transport_cost(plan.plan, cost);
}

// -sum T log T with 0 log 0 = 0.
double plan_entropy(const Tensor& plan);

struct AttributeSimilarity {
  double psi = 0.0;
  TransportPlan plan;
  Tensor similarity;  // cosine matrix S, C = 1 - S
};

// psi(F, G) = sum_{m,n} cos(f_m, g_n) T*(m, n) with T* the entropic plan.
// Uniform marginals unless given.
AttributeSimilarity attribute_similarity(const Tensor& f, const Tensor& g,
                                         const SinkhornOptions& options,
                                         const std::optional<Marginals>& marginals = {});

struct Assignment {
  double cost = 0.0;  // (1/M) sum_m C(m, perm[m])
  std::vector<std::size_t> permutation;
};

// Brute force over all M! permutations (M == N <= 8). Ties resolve to the
// lexicographically smallest permutation.
Assignment exact_assignment_oracle(const CostMatrix& cost);

}  // namespace attrprompt::ot
