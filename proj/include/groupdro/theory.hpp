#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "groupdro/dataset.hpp"
#include "groupdro/optimizer.hpp"
#include "groupdro/rng.hpp"

namespace groupdro {

/// Constants of the convergence guarantee: group count, parameter-norm
/// bound, gradient bound, loss bound, and step count.
struct BoundInputs {
  int m = 0;
  double b_theta = 0.0;
  double b_grad = 0.0;
  double b_loss = 0.0;
  long long steps = 0;

  void validate() const {
    if (m < 1 || !(b_theta > 0.0) || !(b_grad > 0.0) || !(b_loss > 0.0) || steps < 1)
      throw std::invalid_argument("bound inputs must all be positive");
  }
};

/// Expected-error bound for the average iterate of the online algorithm:
/// 2m * sqrt(10 * (B_theta^2 B_grad^2 + B_loss^2 log m) / T).
inline double convergence_bound(const BoundInputs& in) {
  in.validate();
  const double inner = in.b_theta * in.b_theta * in.b_grad * in.b_grad +
                       in.b_loss * in.b_loss * std::log(static_cast<double>(in.m));
  return 2.0 * static_cast<double>(in.m) *
         std::sqrt(10.0 * inner / static_cast<double>(in.steps));
}

/// Axis-aligned convex quadratic sum_j a_j (theta_j - c_j)^2.
struct QuadraticLoss {
  std::vector<double> curvature;  // a_j >= 0
  std::vector<double> center;     // c_j

  double value(std::span<const double> theta) const {
    double s = 0.0;
    for (std::size_t j = 0; j < curvature.size(); ++j) {
      const double d = theta[j] - center[j];
      s += curvature[j] * d * d;
    }
    return s;
  }

  void add_grad(std::span<const double> theta, double weight, std::vector<double>& acc) const {
    for (std::size_t j = 0; j < curvature.size(); ++j)
      acc[j] += weight * 2.0 * curvature[j] * (theta[j] - center[j]);
  }
};

/// Analytic per-group convex losses on the box [-h, h]^d, with constants
/// certified in closed form (the quadratics are separable, so the maxima
/// over the box are exact).
class ConvexProblem {
 public:
  ConvexProblem(std::vector<QuadraticLoss> losses, double box_half_width)
      : losses_(std::move(losses)), half_(box_half_width) {
    if (losses_.empty()) throw std::invalid_argument("convex problem needs >= 1 group");
    if (!(half_ > 0.0)) throw std::invalid_argument("box half-width must be positive");
    dim_ = static_cast<int>(losses_.front().curvature.size());
    if (dim_ < 1 || dim_ > 3)
      throw std::invalid_argument("convex problem supports 1 <= d <= 3");
    for (const QuadraticLoss& l : losses_) {
      if (static_cast<int>(l.curvature.size()) != dim_ ||
          static_cast<int>(l.center.size()) != dim_)
        throw std::invalid_argument("inconsistent loss dimensions");
      for (double a : l.curvature)
        if (!(a >= 0.0)) throw std::invalid_argument("curvatures must be >= 0");
    }
  }

  int dim() const { return dim_; }
  int group_count() const { return static_cast<int>(losses_.size()); }
  double box_half_width() const { return half_; }

  double loss(int g, std::span<const double> theta) const { return losses_[g].value(theta); }

  std::vector<double> grad(int g, std::span<const double> theta) const {
    std::vector<double> acc(dim_, 0.0);
    losses_[g].add_grad(theta, 1.0, acc);
    return acc;
  }

  /// max_g loss_g(theta) and the maximizing group (ties toward smaller g).
  std::pair<double, int> worst_loss(std::span<const double> theta) const {
    double best = losses_[0].value(theta);
    int best_g = 0;
    for (int g = 1; g < group_count(); ++g) {
      const double v = losses_[g].value(theta);
      if (v > best) {
        best = v;
        best_g = g;
      }
    }
    return {best, best_g};
  }

  void project_onto_box(std::vector<double>& theta) const {
    for (double& v : theta) v = std::clamp(v, -half_, half_);
  }

  bool inside_box(std::span<const double> theta, double slack = 1e-9) const {
    for (double v : theta)
      if (std::abs(v) > half_ + slack) return false;
    return true;
  }

  /// Certified constants on the box: B_theta = h * sqrt(d) (l2 radius),
  /// B_grad = max_g sup-box ||grad||_2, B_loss = max_g sup-box loss.
  BoundInputs certified_constants(long long steps) const {
    BoundInputs in;
    in.m = group_count();
    in.b_theta = half_ * std::sqrt(static_cast<double>(dim_));
    for (const QuadraticLoss& l : losses_) {
      double value_max = 0.0, grad_sq = 0.0;
      for (int j = 0; j < dim_; ++j) {
        const double far = std::max(std::abs(half_ - l.center[j]), std::abs(-half_ - l.center[j]));
        value_max += l.curvature[j] * far * far;
        grad_sq += 4.0 * l.curvature[j] * l.curvature[j] * far * far;
      }
      in.b_loss = std::max(in.b_loss, value_max);
      in.b_grad = std::max(in.b_grad, std::sqrt(grad_sq));
    }
    in.steps = steps;
    return in;
  }

  // Reference instances used by the verification suites.
  static ConvexProblem symmetric_quadratics() {
    return ConvexProblem({QuadraticLoss{{1.0}, {1.0}}, QuadraticLoss{{1.0}, {-1.0}}}, 2.0);
  }
  static ConvexProblem asymmetric_quadratics() {
    return ConvexProblem({QuadraticLoss{{1.0}, {1.0}}, QuadraticLoss{{4.0}, {-0.5}}}, 2.0);
  }
  static ConvexProblem single_quadratic(double center) {
    return ConvexProblem({QuadraticLoss{{1.0}, {center}}}, 2.0);
  }
  /// The certified instance the convergence experiments run on.
  static ConvexProblem certified_instance() { return asymmetric_quadratics(); }

  static ConvexProblem random_two_group(Rng& rng) {
    auto quad = [&rng]() {
      return QuadraticLoss{{rng.uniform(0.5, 3.0)}, {rng.uniform(-1.5, 1.5)}};
    };
    return ConvexProblem({quad(), quad()}, 2.0);
  }

 private:
  std::vector<QuadraticLoss> losses_;
  double half_;
  int dim_;
};

struct SaddlePoint {
  std::vector<double> theta_star;
  std::vector<double> q_star;  // zeros outside the active groups
  double value = 0.0;
  bool on_boundary = false;
};

namespace detail {

// Gradient entries projected onto the feasible-direction cone of the box:
// coordinates pinned at a bound only count when they point inward-descent.
inline std::vector<double> cone_project(std::span<const double> grad,
                                        std::span<const double> theta, double half,
                                        double edge_eps) {
  std::vector<double> out(grad.size());
  for (std::size_t j = 0; j < grad.size(); ++j) {
    if (theta[j] >= half - edge_eps)  // pinned at the upper bound
      out[j] = std::max(grad[j], 0.0);
    else if (theta[j] <= -half + edge_eps)  // pinned at the lower bound
      out[j] = std::min(grad[j], 0.0);
    else
      out[j] = grad[j];
  }
  return out;
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Solves min ||sum_g q_g v_g||^2 subject to sum q = 1 over the given columns
// via the KKT linear system; returns nullopt when singular or infeasible
// (some q negative beyond tolerance).
inline std::optional<std::vector<double>> solve_simplex_ls(
    const std::vector<std::vector<double>>& columns) {
  const std::size_t k = columns.size();
  const std::size_t n = k + 1;
  std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < columns[i].size(); ++t) dot += columns[i][t] * columns[j][t];
      a[i][j] = 2.0 * dot;
    }
    a[i][k] = 1.0;
    a[k][i] = 1.0;
  }
  a[k][n] = 1.0;
  // Gaussian elimination with partial pivoting.
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-12) return std::nullopt;
    std::swap(a[col], a[pivot]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= n; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> q(k);
  for (std::size_t i = 0; i < k; ++i) {
    q[i] = a[i][n] / a[i][i];
    if (q[i] < -1e-9) return std::nullopt;
    q[i] = std::max(q[i], 0.0);
  }
  double sum = 0.0;
  for (double v : q) sum += v;
  if (sum <= 0.0) return std::nullopt;
  for (double& v : q) v /= sum;
  return q;
}

}  // namespace detail

/// Deterministic reference solver for min over the box of max_g loss_g:
/// shrinking-grid refinement on the (convex) worst-case loss, followed by
/// recovery of a maximizing mixture q* from the active groups.
inline SaddlePoint reference_saddle(const ConvexProblem& problem, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("reference_saddle: tol must be positive");
  const int d = problem.dim();
  const int grid = 33;  // odd, so the previous argmin stays on the next grid
  const double h = problem.box_half_width();
  std::vector<double> lo(d, -h), hi(d, h);
  std::vector<double> best_theta(d, 0.0);

  const double target_spacing = std::min(1e-11, tol);
  for (int round = 0; round < 80; ++round) {
    double best_value = 0.0;
    bool first = true;
    std::vector<int> idx(d, 0);
    std::vector<double> theta(d, 0.0);
    for (;;) {
      for (int j = 0; j < d; ++j)
        theta[j] = lo[j] + (hi[j] - lo[j]) * static_cast<double>(idx[j]) / (grid - 1);
      const double v = problem.worst_loss(theta).first;
      if (first || v < best_value) {
        first = false;
        best_value = v;
        best_theta = theta;
      }
      int j = d - 1;
      while (j >= 0 && ++idx[j] == grid) idx[j--] = 0;
      if (j < 0) break;
    }
    double max_spacing = 0.0;
    for (int j = 0; j < d; ++j) {
      const double spacing = (hi[j] - lo[j]) / (grid - 1);
      max_spacing = std::max(max_spacing, spacing);
      lo[j] = std::max(best_theta[j] - 2.0 * spacing, -h);
      hi[j] = std::min(best_theta[j] + 2.0 * spacing, h);
    }
    if (max_spacing <= target_spacing) break;
  }

  SaddlePoint saddle;
  saddle.theta_star = best_theta;
  saddle.value = problem.worst_loss(best_theta).first;
  const double edge_eps = 1e-8 * h;
  for (double v : best_theta)
    if (std::abs(v) >= h - edge_eps) saddle.on_boundary = true;

  // Active groups at theta*, then the mixture minimizing the projected
  // weighted-gradient norm: exact KKT solves over subsets of the active set,
  // scored by the cone-projected gap.
  const int m = problem.group_count();
  const double active_tol = std::max(1e-6, 1e-6 * std::abs(saddle.value));
  std::vector<int> active;
  for (int g = 0; g < m; ++g)
    if (problem.loss(g, best_theta) >= saddle.value - active_tol) active.push_back(g);

  std::vector<std::vector<double>> grads(active.size());
  for (std::size_t i = 0; i < active.size(); ++i) grads[i] = problem.grad(active[i], best_theta);

  auto gap_of = [&](const std::vector<double>& q_active) {
    std::vector<double> combo(d, 0.0);
    for (std::size_t i = 0; i < active.size(); ++i)
      for (int j = 0; j < d; ++j) combo[j] += q_active[i] * grads[i][j];
    return detail::norm2(detail::cone_project(combo, best_theta, h, edge_eps));
  };

  std::vector<double> best_q(active.size(), 0.0);
  double best_gap = -1.0;
  const std::size_t subsets = std::size_t{1} << active.size();
  for (std::size_t mask = 1; mask < subsets; ++mask) {
    std::vector<std::vector<double>> cols;
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < active.size(); ++i)
      if (mask & (std::size_t{1} << i)) {
        cols.push_back(grads[i]);
        members.push_back(i);
      }
    const auto q_sub = detail::solve_simplex_ls(cols);
    if (!q_sub) continue;
    std::vector<double> q_active(active.size(), 0.0);
    for (std::size_t i = 0; i < members.size(); ++i) q_active[members[i]] = (*q_sub)[i];
    const double gap = gap_of(q_active);
    if (best_gap < 0.0 || gap < best_gap) {
      best_gap = gap;
      best_q = q_active;
    }
  }

  saddle.q_star.assign(m, 0.0);
  for (std::size_t i = 0; i < active.size(); ++i) saddle.q_star[active[i]] = best_q[i];
  return saddle;
}

/// Excess worst-case risk of an iterate: max_g loss_g(theta_bar) minus the
/// reference saddle value.
inline double convergence_error(std::span<const double> theta_bar, const ConvexProblem& problem,
                                double saddle_value) {
  if (!problem.inside_box(theta_bar))
    throw std::invalid_argument("convergence_error: theta_bar outside the box");
  std::vector<double> theta(theta_bar.begin(), theta_bar.end());
  return problem.worst_loss(theta).first - saddle_value;
}

inline double convergence_error(std::span<const double> theta_bar, const ConvexProblem& problem) {
  return convergence_error(theta_bar, problem, reference_saddle(problem, 1e-9).value);
}

struct Prop1Result {
  std::vector<double> q_star;
  double stationarity_gap = 0.0;
  bool on_boundary = false;
};

/// Verifies the convex reweighting equivalence: recovers q* at the saddle
/// and reports ||sum_g q*_g grad loss_g(theta*)|| projected onto the
/// feasible directions of the box.
inline Prop1Result check_prop1(const ConvexProblem& problem, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("check_prop1: tol must be positive");
  const SaddlePoint saddle = reference_saddle(problem, std::min(tol, 1e-9));
  std::vector<double> combo(problem.dim(), 0.0);
  std::vector<double> weighted(problem.dim(), 0.0);
  for (int g = 0; g < problem.group_count(); ++g) {
    const std::vector<double> gr = problem.grad(g, saddle.theta_star);
    for (int j = 0; j < problem.dim(); ++j) combo[j] += saddle.q_star[g] * gr[j];
  }
  const double edge_eps = 1e-8 * problem.box_half_width();
  const std::vector<double> projected =
      detail::cone_project(combo, saddle.theta_star, problem.box_half_width(), edge_eps);
  return Prop1Result{saddle.q_star, detail::norm2(projected), saddle.on_boundary};
}

// ---------------------------------------------------------------------------
// Non-convex counterexample: two piecewise-linear losses on [0, 1] whose
// robust optimum (value 0.6) is unreachable by any fixed reweighting (every
// weighted minimizer has worst-case loss 1.0).

namespace detail {

inline double piecewise_linear(std::span<const double> xs, std::span<const double> ys,
                               double x) {
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (x <= xs[i]) {
      const double t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
      return ys[i - 1] + t * (ys[i] - ys[i - 1]);
    }
  }
  return ys.back();
}

}  // namespace detail

/// The two counterexample losses at theta in [0, 1].
inline std::pair<double, double> counterexample_losses(double theta) {
  if (!(theta >= 0.0 && theta <= 1.0))
    throw std::invalid_argument("counterexample_losses: theta must lie in [0, 1]");
  static constexpr double x1[] = {0.0, 0.2, 0.5, 1.0};
  static constexpr double y1[] = {0.0, 1.0, 0.6, 1.0};
  static constexpr double x2[] = {0.0, 0.5, 0.8, 1.0};
  static constexpr double y2[] = {1.0, 0.6, 1.0, 0.0};
  return {detail::piecewise_linear(x1, y1, theta), detail::piecewise_linear(x2, y2, theta)};
}

struct WeightedSweepCell {
  double w1 = 0.0, w2 = 0.0;
  double minimizer_theta = 0.0;   // first grid minimizer (smallest theta)
  double weighted_value = 0.0;    // weighted loss at the minimizer
  double tie_worst_case_min = 0.0;  // extremes of the worst-case loss over
  double tie_worst_case_max = 0.0;  // all tied grid minimizers
};

struct CounterexampleReport {
  std::vector<WeightedSweepCell> weighted;
  double dro_theta = 0.0;
  double dro_value = 0.0;
};

/// Brute-force sweep: for every weight pair on the grid with w1 >= w2, the
/// minimizer of the weighted loss over the theta grid; plus the robust
/// (minimax) optimum over the same grid.
inline CounterexampleReport counterexample_sweep(int theta_grid_points,
                                                 int weight_grid_points) {
  if (theta_grid_points < 101 || weight_grid_points < 11)
    throw std::invalid_argument("counterexample_sweep: grids must have >= 101 and >= 11 points");
  std::vector<double> thetas(theta_grid_points);
  std::vector<double> l1(theta_grid_points), l2(theta_grid_points);
  for (int i = 0; i < theta_grid_points; ++i) {
    thetas[i] = static_cast<double>(i) / (theta_grid_points - 1);
    const auto [a, b] = counterexample_losses(thetas[i]);
    l1[i] = a;
    l2[i] = b;
  }

  CounterexampleReport report;
  report.weighted.reserve(weight_grid_points);
  for (int j = 0; j < weight_grid_points; ++j) {
    const double w1 = 0.5 + 0.5 * static_cast<double>(j) / (weight_grid_points - 1);
    const double w2 = 1.0 - w1;
    WeightedSweepCell cell;
    cell.w1 = w1;
    cell.w2 = w2;
    double best = 0.0;
    int best_i = -1;
    for (int i = 0; i < theta_grid_points; ++i) {
      const double v = w1 * l1[i] + w2 * l2[i];
      if (best_i < 0 || v < best) {
        best = v;
        best_i = i;
      }
    }
    cell.minimizer_theta = thetas[best_i];
    cell.weighted_value = best;
    bool first_tie = true;
    for (int i = 0; i < theta_grid_points; ++i) {
      const double v = w1 * l1[i] + w2 * l2[i];
      if (std::abs(v - best) > 1e-12) continue;
      const double worst = std::max(l1[i], l2[i]);
      if (first_tie) {
        cell.tie_worst_case_min = cell.tie_worst_case_max = worst;
        first_tie = false;
      } else {
        cell.tie_worst_case_min = std::min(cell.tie_worst_case_min, worst);
        cell.tie_worst_case_max = std::max(cell.tie_worst_case_max, worst);
      }
    }
    report.weighted.push_back(cell);
  }

  double dro_best = 0.0;
  int dro_i = -1;
  for (int i = 0; i < theta_grid_points; ++i) {
    const double v = std::max(l1[i], l2[i]);
    if (dro_i < 0 || v < dro_best) {
      dro_best = v;
      dro_i = i;
    }
  }
  report.dro_theta = thetas[dro_i];
  report.dro_value = dro_best;
  return report;
}

// ---------------------------------------------------------------------------
// Per-example online algorithm on an analytic convex problem, with Euclidean
// projection onto the box after every theta step. This is the configuration
// the convergence guarantee speaks about (no momentum, no minibatching).

struct Alg1Options {
  long long steps = 0;
  double eta_theta = 0.0;
  double eta_q = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::vector<double>> theta0;  // default: the +h box corner
};

/// Step sizes scaled from the certified constants, decaying as 1/sqrt(T).
/// The q constant is larger than theta's so the mixture tracks the moving
/// iterate instead of stalling near uniform (tuned once on the certified
/// instance; the measured rate stays near 1/sqrt(T) across seeds).
inline Alg1Options designed_alg1_options(const ConvexProblem& problem, long long steps,
                                         std::uint64_t seed) {
  const BoundInputs c = problem.certified_constants(steps);
  Alg1Options opt;
  opt.steps = steps;
  opt.seed = seed;
  const double root_t = std::sqrt(static_cast<double>(steps));
  opt.eta_theta = c.b_theta / (c.b_grad * root_t);
  opt.eta_q =
      10.0 * std::sqrt(std::log(static_cast<double>(std::max(c.m, 2)))) / (c.b_loss * root_t);
  return opt;
}

struct Alg1Run {
  std::vector<double> theta_bar;
  std::vector<double> theta_final;
  std::vector<double> q;
};

inline Alg1Run run_alg1(const ConvexProblem& problem, const Alg1Options& opt) {
  if (opt.steps < 1) throw std::invalid_argument("run_alg1: steps must be >= 1");
  const int d = problem.dim();
  const int m = problem.group_count();
  std::vector<double> theta =
      opt.theta0 ? *opt.theta0 : std::vector<double>(d, problem.box_half_width());
  if (static_cast<int>(theta.size()) != d)
    throw std::invalid_argument("run_alg1: theta0 has wrong dimension");
  problem.project_onto_box(theta);

  GroupWeights q = uniform_weights(m);
  Rng rng(opt.seed);
  std::vector<double> theta_bar(d, 0.0);
  for (long long t = 1; t <= opt.steps; ++t) {
    const int g = rng.uniform_int(m);
    const double observed = problem.loss(g, theta);
    q = eg_update(q, g, observed, opt.eta_q, 0.0);
    const double w = q[g];
    std::vector<double> gr = problem.grad(g, theta);
    for (int j = 0; j < d; ++j) theta[j] -= opt.eta_theta * w * gr[j];
    problem.project_onto_box(theta);
    const double inv = 1.0 / static_cast<double>(t);
    for (int j = 0; j < d; ++j) theta_bar[j] += (theta[j] - theta_bar[j]) * inv;
  }
  return Alg1Run{std::move(theta_bar), std::move(theta), q.values()};
}

}  // namespace groupdro
