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

#pragma once

// Discrete optimal transport between two finite measures.
//
// solve_exact runs the transportation simplex (stepping-stone / MODI) on a
// spanning-tree basis with Bland's rule, so it terminates on degenerate
// instances. solve_sinkhorn runs entropic OT with log-domain scaling.

#include <cstddef>
#include <optional>

#include "subflot/linalg.hpp"

namespace subflot {

enum class OtMode { exact, sinkhorn };

struct OtConfig {
  OtMode mode = OtMode::sinkhorn;
  // Entropic strength relative to the mean cost entry; used when `epsilon` is unset.
  double epsilon_scale = 0.05;
  std::optional<double> epsilon;
  std::size_t max_iters = 2000;
  double convergence_tol = 1e-8;
  // Size guard for the exact solver, in cells of the cost matrix.
  std::size_t exact_max_cells = 64;

  void validate() const;
};

struct TransportPlan {
  Matrix plan;
  Vector row_marginal;
  Vector col_marginal;
  // Largest absolute deviation of a row or column sum from its marginal.
  double marginal_violation = 0.0;
  std::size_t iterations = 0;
  bool converged = true;
};

Vector uniform_marginal(std::size_t n);

/// Throws OtError unless both marginals are nonnegative, finite, sum to 1
/// within 1e-9, and match the cost shape.
void check_marginals(const Matrix& cost, const Vector& mu, const Vector& nu);

TransportPlan solve_exact(const Matrix& cost, const Vector& mu, const Vector& nu,
                          std::size_t max_cells = 64);

TransportPlan solve_sinkhorn(const Matrix& cost, const Vector& mu, const Vector& nu,
                             const OtConfig& cfg);

/// Dispatches on cfg.mode.
TransportPlan solve_ot(const Matrix& cost, const Vector& mu, const Vector& nu,
                       const OtConfig& cfg);

/// <cost, plan>_F
double transport_cost(const Matrix& cost, const TransportPlan& plan);

/// Max absolute row/column marginal deviation of an arbitrary plan matrix.
double marginal_violation(const Matrix& plan, const Vector& mu, const Vector& nu);

/// Divides every column by its sum so each column sums to 1.
Matrix column_normalize(const TransportPlan& plan);
Matrix column_normalize(const Matrix& plan);

/// Divides every row by its sum so each row sums to 1.
Matrix row_normalize(const Matrix& plan);

}  // namespace subflot
