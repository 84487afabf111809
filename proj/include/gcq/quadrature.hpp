#pragma once

#include <optional>
#include <vector>

#include "gcq/polytope.hpp"

namespace gcq {

struct QuadNode {
  Vec x;
  double log_w;
};

// Finer spacing inside the box |x_k - center_k| <= half_width.
struct Refinement {
  Vec center;
  double half_width = 0.0;
  double spacing = 0.0;
};

// Breakpoints where ||A x - c|| = radius along the innermost coordinate, so
// that ball indicators are integrated without a staircase error there.
struct BallSplit {
  Mat A;
  Vec c;
  double radius = 0.0;
};

struct GridSpec {
  int cells = 32;  // coarse cells across the full extent of each coordinate
  std::optional<Refinement> focus;
  std::optional<BallSplit> ball;
  std::size_t max_nodes = 8'000'000;  // NumericalError beyond this

  // Same layout with every spacing halved.
  GridSpec refined() const;
};

/**
 * Nested midpoint rule on a polytope.
 *
 * Coordinate k runs over the exact range left by the Fourier-Motzkin
 * projection once x_0..x_{k-1} are fixed, so nodes never leave P and the
 * boundary is followed exactly in the innermost coordinate.
 */
std::vector<QuadNode> polytope_nodes(const DelzantPolytope& P, const GridSpec& spec);

// log of sum_i exp(log_w_i + log_f_i), accumulated in node order.
double log_integral(const std::vector<QuadNode>& nodes, const std::vector<double>& log_f);

}  // namespace gcq
