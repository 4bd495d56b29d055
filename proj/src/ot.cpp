/**
 * Copyright 2026 The subflot Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "subflot/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "subflot/error.hpp"

namespace subflot {

void OtConfig::validate() const {
  if (max_iters < 1) throw OtError("ot.max_iters must be >= 1");
  if (mode == OtMode::sinkhorn) {
    if (!(epsilon_scale > 0.0) || !std::isfinite(epsilon_scale)) {
      throw OtError("ot.epsilon_scale must be > 0");
    }
    if (epsilon && (!(*epsilon > 0.0) || !std::isfinite(*epsilon))) {
      throw OtError("ot.epsilon must be > 0");
    }
  }
  if (!(convergence_tol > 0.0)) throw OtError("ot.convergence_tol must be > 0");
}

Vector uniform_marginal(std::size_t n) {
  return Vector(n, 1.0 / static_cast<double>(n));
}

void check_marginals(const Matrix& cost, const Vector& mu, const Vector& nu) {
  if (cost.rows() != mu.size() || cost.cols() != nu.size()) {
    throw OtError(fmt::format("cost {} does not match marginals of length {} and {}",
                              shape_string(cost), mu.size(), nu.size()));
  }
  if (mu.empty() || nu.empty()) throw OtError("marginals must be non-empty");
  for (const Vector* m : {&mu, &nu}) {
    for (double x : *m) {
      if (!std::isfinite(x) || x < 0.0) throw OtError("marginal entries must be finite and >= 0");
    }
    if (std::abs(sum(*m) - 1.0) > 1e-9) {
      throw OtError(fmt::format("marginal sums to {}, expected 1", sum(*m)));
    }
  }
  if (!all_finite(cost.data())) throw OtError("cost matrix has non-finite entries");
}

double marginal_violation(const Matrix& plan, const Vector& mu, const Vector& nu) {
  double worst = 0.0;
  Vector col(plan.cols(), 0.0);
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    const auto row = plan.row(i);
    worst = std::max(worst, std::abs(sum(row) - mu[i]));
    for (std::size_t j = 0; j < plan.cols(); ++j) col[j] += row[j];
  }
  for (std::size_t j = 0; j < plan.cols(); ++j) worst = std::max(worst, std::abs(col[j] - nu[j]));
  return worst;
}

namespace {

// Transportation simplex on a spanning-tree basis. Nodes 0..n-1 are rows,
// n..n+m-1 are columns; each basic cell is a tree edge.
class TransportationSimplex {
 public:
  TransportationSimplex(const Matrix& cost, const Vector& mu, const Vector& nu)
      : cost_(cost), n_(cost.rows()), m_(cost.cols()), basic_(n_ * m_, false) {
    northwest_corner(mu, nu);
    double max_cost = 0.0;
    for (double c : cost.data()) max_cost = std::max(max_cost, std::abs(c));
    tol_ = 1e-12 * std::max(1.0, max_cost);
  }

  std::size_t solve() {
    const std::size_t cap = 100 * (n_ + m_) * n_ * m_ + 1000;
    for (std::size_t it = 0; it < cap; ++it) {
      build_adjacency();
      compute_potentials();
      const auto entering = find_entering();
      if (!entering) return it;
      pivot(entering->first, entering->second);
    }
    throw OtError("exact OT solver exceeded its pivot budget");
  }

  Matrix plan() const {
    Matrix out(n_, m_);
    for (const auto& cell : basis_) out(cell.row, cell.col) = cell.flow;
    return out;
  }

 private:
  struct Cell {
    std::size_t row;
    std::size_t col;
    double flow;
  };
  struct Edge {
    std::size_t node;
    std::size_t basis_index;
  };

  void northwest_corner(const Vector& mu, const Vector& nu) {
    Vector supply = mu;
    Vector demand = nu;
    std::size_t i = 0;
    std::size_t j = 0;
    while (true) {
      const double x = std::min(supply[i], demand[j]);
      add_basic(i, j, x);
      supply[i] -= x;
      demand[j] -= x;
      if (i == n_ - 1 && j == m_ - 1) break;
      if (i == n_ - 1) {
        ++j;
      } else if (j == m_ - 1) {
        ++i;
      } else if (supply[i] <= demand[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  void add_basic(std::size_t i, std::size_t j, double flow) {
    basis_.push_back({i, j, flow});
    basic_[i * m_ + j] = true;
  }

  void build_adjacency() {
    adjacency_.assign(n_ + m_, {});
    for (std::size_t b = 0; b < basis_.size(); ++b) {
      const std::size_t r = basis_[b].row;
      const std::size_t c = n_ + basis_[b].col;
      adjacency_[r].push_back({c, b});
      adjacency_[c].push_back({r, b});
    }
  }

  void compute_potentials() {
    constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
    potential_.assign(n_ + m_, kUnset);
    potential_[0] = 0.0;
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
      const std::size_t node = stack.back();
      stack.pop_back();
      for (const Edge& e : adjacency_[node]) {
        if (!std::isnan(potential_[e.node])) continue;
        const Cell& cell = basis_[e.basis_index];
        // u_row + v_col = c(row, col)
        potential_[e.node] = cost_(cell.row, cell.col) - potential_[node];
        stack.push_back(e.node);
      }
    }
  }

  // Bland's rule: lowest-index cell with a negative reduced cost.
  std::optional<std::pair<std::size_t, std::size_t>> find_entering() const {
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < m_; ++j) {
        if (basic_[i * m_ + j]) continue;
        const double reduced = cost_(i, j) - potential_[i] - potential_[n_ + j];
        if (reduced < -tol_) return std::make_pair(i, j);
      }
    }
    return std::nullopt;
  }

  // Basis indices on the tree path from column node of `col` back to row `row`,
  // ordered starting at the column end.
  std::vector<std::size_t> tree_path(std::size_t row, std::size_t col) const {
    const std::size_t none = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> parent_edge(n_ + m_, none);
    std::vector<std::size_t> parent_node(n_ + m_, none);
    std::vector<bool> seen(n_ + m_, false);
    std::vector<std::size_t> queue{row};
    seen[row] = true;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const std::size_t node = queue[q];
      for (const Edge& e : adjacency_[node]) {
        if (seen[e.node]) continue;
        seen[e.node] = true;
        parent_edge[e.node] = e.basis_index;
        parent_node[e.node] = node;
        queue.push_back(e.node);
      }
    }
    std::vector<std::size_t> path;
    for (std::size_t node = n_ + col; node != row; node = parent_node[node]) {
      if (parent_edge[node] == none) throw OtError("exact OT basis is not a spanning tree");
      path.push_back(parent_edge[node]);
    }
    return path;
  }

  void pivot(std::size_t row, std::size_t col) {
    const auto path = tree_path(row, col);
    // Entering cell gains flow; path edges alternate starting with a loss.
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leaving = 0;
    std::size_t leaving_key = std::numeric_limits<std::size_t>::max();
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const Cell& cell = basis_[path[k]];
      const std::size_t key = cell.row * m_ + cell.col;
      if (cell.flow < theta || (cell.flow == theta && key < leaving_key)) {
        theta = cell.flow;
        leaving = path[k];
        leaving_key = key;
      }
    }
    for (std::size_t k = 0; k < path.size(); ++k) {
      Cell& cell = basis_[path[k]];
      if (k % 2 == 0) {
        cell.flow -= theta;
      } else {
        cell.flow += theta;
      }
    }
    Cell& out = basis_[leaving];
    basic_[out.row * m_ + out.col] = false;
    out = {row, col, theta};
    basic_[row * m_ + col] = true;
  }

  const Matrix& cost_;
  std::size_t n_;
  std::size_t m_;
  double tol_ = 0.0;
  std::vector<Cell> basis_;
  std::vector<bool> basic_;
  std::vector<std::vector<Edge>> adjacency_;
  std::vector<double> potential_;
};

double log_sum_exp(std::span<const double> v) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

double resolve_epsilon(const Matrix& cost, const OtConfig& cfg) {
  if (cfg.epsilon) return *cfg.epsilon;
  const double mean_cost = cost.empty() ? 0.0 : sum(cost.data()) / static_cast<double>(cost.size());
  // An all-zero cost makes every coupling optimal; any positive strength will do.
  return mean_cost > 0.0 ? cfg.epsilon_scale * mean_cost : cfg.epsilon_scale;
}

}  // namespace

TransportPlan solve_exact(const Matrix& cost, const Vector& mu, const Vector& nu,
                          std::size_t max_cells) {
  check_marginals(cost, mu, nu);
  if (cost.size() > max_cells) {
    throw OtError(fmt::format(
        "exact OT limited to {} cells but cost is {}; use sinkhorn mode for this size",
        max_cells, shape_string(cost)));
  }
  TransportationSimplex simplex(cost, mu, nu);
  const std::size_t pivots = simplex.solve();
  TransportPlan out;
  out.plan = simplex.plan();
  out.row_marginal = mu;
  out.col_marginal = nu;
  out.marginal_violation = marginal_violation(out.plan, mu, nu);
  out.iterations = pivots;
  out.converged = true;
  return out;
}

TransportPlan solve_sinkhorn(const Matrix& cost, const Vector& mu, const Vector& nu,
                             const OtConfig& cfg) {
  check_marginals(cost, mu, nu);
  cfg.validate();
  for (const Vector* m : {&mu, &nu}) {
    if (std::any_of(m->begin(), m->end(), [](double x) { return x <= 0.0; })) {
      throw OtError("sinkhorn requires strictly positive marginals");
    }
  }
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  const double eps = resolve_epsilon(cost, cfg);

  Vector log_mu(n);
  Vector log_nu(m);
  for (std::size_t i = 0; i < n; ++i) log_mu[i] = std::log(mu[i]);
  for (std::size_t j = 0; j < m; ++j) log_nu[j] = std::log(nu[j]);

  Vector f(n, 0.0);
  Vector g(m, 0.0);
  Vector scratch(std::max(n, m));

  TransportPlan out;
  out.converged = false;
  Vector next_f(n);
  std::size_t it = 0;
  while (it < cfg.max_iters) {
    // The row update also measures how far the current (f, g) is from the
    // row marginals: row_sum_i = mu_i * exp((f_i - next_f_i) / eps).
    double row_violation = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) scratch[j] = (g[j] - cost(i, j)) / eps;
      next_f[i] = eps * (log_mu[i] - log_sum_exp({scratch.data(), m}));
      row_violation =
          std::max(row_violation, std::abs(mu[i] * std::exp((f[i] - next_f[i]) / eps) - mu[i]));
    }
    if (it > 0 && row_violation < cfg.convergence_tol) {
      out.converged = true;
      break;
    }
    ++it;
    f.swap(next_f);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) scratch[i] = (f[i] - cost(i, j)) / eps;
      g[j] = eps * (log_nu[j] - log_sum_exp({scratch.data(), n}));
    }
    if (!all_finite(f) || !all_finite(g)) {
      throw OtError(fmt::format(
          "sinkhorn scalings became non-finite at iteration {} (epsilon {:g}); use a larger "
          "epsilon",
          it, eps));
    }
  }

  Matrix plan(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = plan.row(i);
    for (std::size_t j = 0; j < m; ++j) row[j] = std::exp((f[i] + g[j] - cost(i, j)) / eps);
    const double row_sum = sum(row);
    if (!(row_sum > 0.0) || !std::isfinite(row_sum)) {
      throw OtError(fmt::format(
          "sinkhorn row {} carries no mass (epsilon {:g}); use a larger epsilon", i, eps));
    }
    const double scale = mu[i] / row_sum;
    for (double& x : row) x *= scale;
  }
  out.plan = std::move(plan);
  out.row_marginal = mu;
  out.col_marginal = nu;
  out.marginal_violation = marginal_violation(out.plan, mu, nu);
  out.iterations = it;
  return out;
}

TransportPlan solve_ot(const Matrix& cost, const Vector& mu, const Vector& nu,
                       const OtConfig& cfg) {
  if (cfg.mode == OtMode::exact) return solve_exact(cost, mu, nu, cfg.exact_max_cells);
  return solve_sinkhorn(cost, mu, nu, cfg);
}

double transport_cost(const Matrix& cost, const TransportPlan& plan) {
  return frobenius_dot(cost, plan.plan);
}

Matrix column_normalize(const Matrix& plan) {
  Vector col(plan.cols(), 0.0);
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    const auto row = plan.row(i);
    for (std::size_t j = 0; j < plan.cols(); ++j) col[j] += row[j];
  }
  for (std::size_t j = 0; j < plan.cols(); ++j) {
    if (!(col[j] > 0.0)) {
      throw OtError(fmt::format("transport plan column {} receives no mass", j));
    }
  }
  Matrix out(plan.rows(), plan.cols());
  for (std::size_t i = 0; i < plan.rows(); ++i)
    for (std::size_t j = 0; j < plan.cols(); ++j) out(i, j) = plan(i, j) / col[j];
  return out;
}

Matrix column_normalize(const TransportPlan& plan) { return column_normalize(plan.plan); }

Matrix row_normalize(const Matrix& plan) {
  Matrix out(plan.rows(), plan.cols());
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    const auto row = plan.row(i);
    const double row_sum = sum(row);
    if (!(row_sum > 0.0)) {
      throw OtError(fmt::format("transport plan row {} carries no mass", i));
    }
    auto dst = out.row(i);
    for (std::size_t j = 0; j < plan.cols(); ++j) dst[j] = row[j] / row_sum;
  }
  return out;
}

}  // namespace subflot
