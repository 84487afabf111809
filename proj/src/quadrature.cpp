#include "gcq/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gcq {

GridSpec GridSpec::refined() const {
  GridSpec g = *this;
  g.cells *= 2;
  if (g.focus) g.focus->spacing *= 0.5;
  return g;
}

namespace {

void add_ball_crossings(const BallSplit& b, const Vec& x, int k, std::vector<double>& cuts) {
  // ||a t + r||^2 = radius^2 with the last coordinate as t.
  Vec xr = x;
  xr(k) = 0.0;
  Vec r = b.A * xr - b.c;
  Vec a = b.A.col(k);
  double qa = a.squaredNorm(), qb = 2.0 * a.dot(r), qc = r.squaredNorm() - b.radius * b.radius;
  if (qa <= 0.0) return;
  double disc = qb * qb - 4.0 * qa * qc;
  if (disc <= 0.0) return;
  double sq = std::sqrt(disc);
  cuts.push_back((-qb - sq) / (2.0 * qa));
  cuts.push_back((-qb + sq) / (2.0 * qa));
}

}  // namespace

std::vector<QuadNode> polytope_nodes(const DelzantPolytope& P, const GridSpec& spec) {
  const int d = P.dim();
  if (spec.cells < 1) throw std::invalid_argument("grid needs at least one cell");
  BoundSystem bs(P);
  Vec lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
  Vec hi = -lo;
  for (const Vec& v : P.vertices()) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  Vec coarse = (hi - lo) / static_cast<double>(spec.cells);

  std::vector<QuadNode> nodes;
  Vec x(d);
  auto rec = [&](auto&& self, int k, double log_w) -> void {
    auto [a, b] = bs.range(k, x.data());
    // Ranges that collapse to rounding width carry no measure; their nodes
    // would sit on the boundary.
    if (!(b - a > 1e-13 * (1.0 + std::abs(a) + std::abs(b)))) return;
    std::vector<double> cuts{a, b};
    if (spec.focus) {
      cuts.push_back(spec.focus->center(k) - spec.focus->half_width);
      cuts.push_back(spec.focus->center(k) + spec.focus->half_width);
    }
    if (spec.ball && k == d - 1) add_ball_crossings(*spec.ball, x, k, cuts);
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
      double u = std::max(a, cuts[s]), v = std::min(b, cuts[s + 1]);
      if (!(v > u)) continue;
      double h = coarse(k);
      if (spec.focus && std::abs(0.5 * (u + v) - spec.focus->center(k)) <= spec.focus->half_width)
        h = std::min(h, spec.focus->spacing);
      int n = std::max(1, static_cast<int>(std::ceil((v - u) / h - 1e-9)));
      double w = (v - u) / n;
      double lw = log_w + std::log(w);
      for (int i = 0; i < n; ++i) {
        x(k) = u + (i + 0.5) * w;
        if (k + 1 == d) {
          if (nodes.size() >= spec.max_nodes)
            throw NumericalError("quadrature grid exceeds max_nodes", static_cast<double>(nodes.size()));
          nodes.push_back({x, lw});
        }
        else
          self(self, k + 1, lw);
      }
    }
  };
  rec(rec, 0, 0.0);
  return nodes;
}

double log_integral(const std::vector<QuadNode>& nodes, const std::vector<double>& log_f) {
  if (nodes.size() != log_f.size()) throw std::invalid_argument("log_integral size mismatch");
  std::vector<double> terms(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) terms[i] = nodes[i].log_w + log_f[i];
  return log_sum_exp(terms);
}

}  // namespace gcq
