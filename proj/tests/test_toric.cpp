#include <doctest.h>

#include <cmath>
#include <random>

#include "gcq/toric.hpp"

using namespace gcq;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

// Uniform sample strictly inside P by rejection from the vertex box.
Vec random_interior(const DelzantPolytope& P, std::mt19937_64& rng, double margin = 1e-3) {
  Vec lo = Vec::Constant(P.dim(), 1e300), hi = -lo;
  for (const Vec& v : P.vertices()) lo = lo.cwiseMin(v), hi = hi.cwiseMax(v);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    Vec x(P.dim());
    for (int i = 0; i < P.dim(); ++i) x(i) = lo(i) + (hi(i) - lo(i)) * u(rng);
    if (P.support_values(x).minCoeff() > margin) return x;
  }
}

// Central-difference gradient and Hessian.
Vec fd_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec e = Vec::Zero(x.size());
    e(i) = h;
    g(i) = (f(x + e) - f(x - e)) / (2 * h);
  }
  return g;
}

Mat fd_hess(const std::function<Vec(const Vec&)>& g, const Vec& x, double h) {
  Mat H(x.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec e = Vec::Zero(x.size());
    e(i) = h;
    H.col(i) = (g(x + e) - g(x - e)) / (2 * h);
  }
  return H;
}

}  // namespace

TEST_CASE("g_can on the unit interval") {
  auto P = interval(0, 1);
  CHECK(g_can_value(P, v1(0.5)) == doctest::Approx(std::log(0.5) / (4 * kPi)).epsilon(1e-14));
  CHECK(g_can_value(P, v1(0.5)) == doctest::Approx(-0.055157).epsilon(1e-5));
  CHECK(g_can_value(P, v1(0.0)) == 0.0);
  CHECK(g_can_value(P, v1(1.0)) == 0.0);
  CHECK(std::abs(g_can_grad(P, v1(0.5))(0)) < 1e-15);
  CHECK_THROWS_AS(g_can_value(P, v1(1.5)), std::domain_error);
  CHECK_THROWS_AS(g_can_grad(P, v1(0.0)), std::domain_error);
}

TEST_CASE("analytic derivatives match central differences at second order") {
  std::mt19937_64 rng(11);
  std::vector<DelzantPolytope> polys{simplex(2, 2), gc_polytope(3, {1, 1}), product_polytope({simplex(2, 1), interval(0, 2)})};
  Mat A(3, 3);
  A << 2.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 1.5;
  for (const auto& P : polys) {
    int d = P.dim();
    Mat Ad = A.topLeftCorner(d, d);
    SymplecticPotential g(P, 1.7, ConvexDeformation::quadratic(Eigen::MatrixXi::Identity(d, d), Ad));
    for (int trial = 0; trial < 10; ++trial) {
      Vec x = random_interior(P, rng, 0.05);
      auto f = [&](const Vec& y) { return g.value(y); };
      auto gr = [&](const Vec& y) { return g.grad(y); };
      double eg[3], eh[3];
      double h = 1e-3;
      for (int k = 0; k < 3; ++k, h *= 0.5) {
        eg[k] = (fd_grad(f, x, h) - g.grad(x)).norm();
        eh[k] = (fd_hess(gr, x, h) - g.hess(x)).norm();
      }
      // Halving h should cut the error about fourfold.
      CHECK(eg[1] / eg[0] == doctest::Approx(0.25).epsilon(0.2));
      CHECK(eg[2] / eg[1] == doctest::Approx(0.25).epsilon(0.2));
      CHECK(eh[1] / eh[0] == doctest::Approx(0.25).epsilon(0.2));
      CHECK(eh[2] / eh[1] == doctest::Approx(0.25).epsilon(0.2));
      CHECK(g.hess(x).ldlt().vectorD().minCoeff() > 0.0);
    }
  }
}

TEST_CASE("moment to complex examples") {
  auto P = interval(0, 1);
  SymplecticPotential g0(P);
  CVec w = moment_to_complex(g0, {v1(0.5), v1(0.0)});
  CHECK(std::abs(w(0) - cplx(1.0, 0.0)) < 1e-15);

  SymplecticPotential g1(P, 1.0);
  w = moment_to_complex(g1, {v1(0.5), v1(0.0)});
  CHECK(std::abs(w(0) - std::exp(kPi)) < 1e-12 * std::exp(kPi));

  CVec wa = moment_to_complex(g1, {v1(0.3), v1(0.37)});
  CVec wb = moment_to_complex(g1, {v1(0.3), v1(1.37)});
  CHECK(std::abs(wa(0) - wb(0)) < 1e-14 * std::abs(wa(0)));

  auto c = complex_to_moment(g0, CVec::Constant(1, cplx(1.0, 0.0)));
  CHECK(c.x(0) == doctest::Approx(0.5).epsilon(1e-13));
  CHECK(c.theta(0) == 0.0);
  c = complex_to_moment(g0, CVec::Constant(1, cplx(7.5, 0.0)));
  CHECK(c.theta(0) == 0.0);
  CHECK_THROWS(complex_to_moment(g0, CVec::Constant(1, cplx(0.0, 0.0))));
}

TEST_CASE("Legendre round trip") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SymplecticPotential> gs{SymplecticPotential(interval(0, 1)), SymplecticPotential(simplex(2, 3), 2.0),
                                      SymplecticPotential(gc_polytope(3, {1, 1}), 0.5),
                                      SymplecticPotential(gc_polytope(3, {2, 1}))};
  double worst_x = 0.0, worst_t = 0.0;
  for (const auto& g : gs) {
    for (int k = 0; k < 250; ++k) {
      Vec x = random_interior(g.polytope(), rng, 1e-4);
      Vec th(x.size());
      for (Eigen::Index i = 0; i < th.size(); ++i) th(i) = u(rng);
      auto c = complex_to_moment(g, moment_to_complex(g, {x, th}));
      worst_x = std::max(worst_x, (c.x - x).cwiseAbs().maxCoeff());
      for (Eigen::Index i = 0; i < th.size(); ++i) {
        double d = std::abs(c.theta(i) - th(i));
        worst_t = std::max(worst_t, std::min(d, 1.0 - d));
      }
    }
  }
  CHECK(worst_x < 1e-10);
  CHECK(worst_t < 1e-12);
}

TEST_CASE("sections as monomials") {
  auto P = interval(0, 1);
  CHECK(sigma_m_monomial({0}, CVec::Constant(1, cplx(2.0, 1.0))) == cplx(1.0, 0.0));
  CHECK(sigma_m_monomial({1}, CVec::Constant(1, cplx(2.0, 0.0))) == cplx(2.0, 0.0));
  // Homogeneous form on P^1: facets x >= 0, x <= 1 carry exponents m, 1 - m.
  CVec z(2);
  z << cplx(3.0, 0.0), cplx(0.5, 0.5);
  CHECK(std::abs(sigma_m_complex(P, {1}, z) - z(0)) < 1e-15);
  CHECK(std::abs(sigma_m_complex(P, {0}, z) - z(1)) < 1e-15);
  z(0) = 0.0;
  CHECK_THROWS_AS(sigma_m_complex(P, {-1}, z), std::domain_error);
}

TEST_CASE("section density on P^1 against the Fubini-Study norm") {
  auto P = interval(0, 1);
  SymplecticPotential g(P);
  for (double x : {0.1, 0.25, 0.5, 0.8, 0.99}) {
    // |w|^2 = x / (1 - x) on P^1 with g_can; |sigma^0| = 1 / sqrt(1 + |w|^2).
    double w2 = x / (1.0 - x);
    double fs = -0.5 * std::log1p(w2);
    CHECK(section_log_density(g, v1(0.0), v1(x)) == doctest::Approx(fs).epsilon(1e-13));
    CHECK(section_log_density(g, v1(1.0), v1(x)) == doctest::Approx(fs + 0.5 * std::log(w2)).epsilon(1e-13));
  }
  CHECK(std::exp(section_log_density(g, v1(0.0), v1(0.5))) == doctest::Approx(0.70711).epsilon(1e-5));
  CHECK(section_log_density(g, v1(0.0), v1(0.0)) == 0.0);
  CHECK(section_log_density(g, v1(0.0), v1(1.0)) == -std::numeric_limits<double>::infinity());
  CHECK_THROWS(section_log_density(g, v1(0.0), v1(1.2)));
}

TEST_CASE("closed-form density agrees with direct interior evaluation") {
  std::mt19937_64 rng(5);
  SmoothFunction b{[](const Vec& x) { return 0.1 * std::sin(x.sum()); },
                   [](const Vec& x) -> Vec { return Vec::Constant(x.size(), 0.1 * std::cos(x.sum())); },
                   [](const Vec& x) -> Mat { return Mat::Constant(x.size(), x.size(), -0.1 * std::sin(x.sum())); }};
  std::vector<DelzantPolytope> polys{simplex(2, 2), gc_polytope(3, {1, 1}), interval(-1, 2)};
  for (const auto& P : polys) {
    auto pts = lattice_points(P);
    for (double s : {0.0, 1.0, 10.0}) {
      SymplecticPotential g(P, s, std::nullopt, b);
      for (int k = 0; k < 20; ++k) {
        Vec x = random_interior(P, rng, 1e-3);
        const IVec& m = pts[k % pts.size()];
        Vec mv(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) mv(i) = m[i];
        double a = section_log_density(g, mv, x), d = section_log_density_direct(g, mv, x);
        CHECK(std::abs(a - d) < 1e-10 * (1.0 + std::abs(d)));
      }
    }
  }
}

TEST_CASE("density splits into an s-independent part") {
  std::mt19937_64 rng(8);
  auto P = gc_polytope(3, {1, 1});
  Vec m(3);
  m << 1, 1, 0;
  for (int k = 0; k < 50; ++k) {
    Vec x = random_interior(P, rng, 1e-4);
    double ref = 0.0;
    for (double s : {0.0, 1.0, 10.0}) {
      SymplecticPotential g(P, s);
      double v = section_log_density(g, m, x) + 2 * kPi * s * alpha_m(g.deformer(), m, x);
      if (s == 0.0) ref = v;
      CHECK(std::abs(v - ref) < 1e-12);
    }
  }
}

TEST_CASE("alpha_m for the default deformer") {
  auto nu = ConvexDeformation::identity_quadratic(1);
  for (double m : {0.0, 1.0, 2.0})
    for (double x : {0.0, 0.3, 1.7}) {
      CHECK(alpha_m(nu, v1(m), v1(x)) == doctest::Approx(x * x / 2 - m * x).epsilon(1e-15));
    }
  CHECK(alpha_m(nu, v1(2.0), v1(2.0)) == doctest::Approx(-2.0));
}

TEST_CASE("alpha_m grows quadratically away from m") {
  Mat A(2, 2);
  A << 3.0, 1.0, 1.0, 2.0;
  Eigen::MatrixXi iota(2, 3);
  iota << 1, 0, 1, 0, 1, 1;
  auto nu = ConvexDeformation::quadratic(iota, A);
  CHECK(nu.growth_lower() == doctest::Approx(0.5 * (2.5 - std::sqrt(1.25))));
  Vec m(3);
  m << 1, 1, 1;
  double a0 = alpha_m(nu, m, m);
  double tight = 1e300;
  for (double x0 = 0; x0 <= 2.0; x0 += 0.125)
    for (double x1 = 0; x1 <= 2.0; x1 += 0.125)
      for (double x2 = 0; x2 <= 2.0; x2 += 0.125) {
        Vec x(3);
        x << x0, x1, x2;
        double r2 = (nu.image(x) - nu.image(m)).squaredNorm();
        double gap = alpha_m(nu, m, x) - a0;
        CHECK(gap >= nu.growth_lower() * r2 - 1e-12);
        CHECK(gap <= nu.growth_upper() * r2 + 1e-12);
        if (r2 > 0) tight = std::min(tight, gap / r2);
      }
  CHECK(tight == doctest::Approx(nu.growth_lower()).epsilon(1e-2));
}

TEST_CASE("L1 norms against closed-form integrals") {
  QuadratureOptions opt;
  opt.rel_tolerance = 1e-7;
  auto r = l1_norm(SymplecticPotential(interval(0, 1)), {0}, opt);
  CHECK(std::exp(r.log_norm) == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
  CHECK(r.rel_error <= 1e-7);
  // Over the standard triangle sqrt(1 - x - y) integrates to 4/15.
  QuadratureOptions opt2;
  opt2.rel_tolerance = 1e-5;
  r = l1_norm(SymplecticPotential(simplex(2, 1)), {0, 0}, opt2);
  CHECK(std::exp(r.log_norm) == doctest::Approx(4.0 / 15.0).epsilon(3e-5));
  opt2.rel_tolerance = 1e-12;
  opt2.max_refinements = 30;
  CHECK_THROWS_AS(l1_norm(SymplecticPotential(simplex(2, 1)), {0, 0}, opt2), NumericalError);
  // m = 1 on P^1: density sqrt(x); same integral by symmetry.
  r = l1_norm(SymplecticPotential(interval(0, 1)), {1}, opt);
  CHECK(std::exp(r.log_norm) == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
  CHECK_THROWS(l1_norm(SymplecticPotential(interval(0, 1)), {2}));
}

TEST_CASE("symmetric data gives symmetric halves") {
  SymplecticPotential g(interval(-1, 1), 3.0);
  GridSpec spec;
  spec.cells = 64;
  auto nodes = polytope_nodes(g.polytope(), spec);
  std::vector<double> left, right;
  for (const auto& nd : nodes) {
    double v = nd.log_w + section_log_density(g, v1(0.0), nd.x);
    (nd.x(0) < 0 ? left : right).push_back(v);
  }
  CHECK(log_sum_exp(left) == doctest::Approx(log_sum_exp(right)).epsilon(1e-13));
}

TEST_CASE("holonomy and Bohr-Sommerfeld fibers") {
  Vec x(3);
  x << 0.5, 0.25, 2.0;
  CHECK(std::abs(holonomy(x, 0) - cplx(-1.0, 0.0)) < 1e-15);
  CHECK(std::abs(holonomy(x, 1) - cplx(0.0, 1.0)) < 1e-15);
  CHECK(holonomy(x, 2) == cplx(1.0, 0.0));
  CHECK_FALSE(bohr_sommerfeld_test(x));
  CHECK(bohr_sommerfeld_test(Vec::Constant(2, 3.0)));
  CHECK(bohr_sommerfeld_test(Vec::Constant(2, 3.0 + 1e-10)));
  CHECK_FALSE(bohr_sommerfeld_test(Vec::Constant(2, 3.0 + 1e-8)));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int t = 0; t < 200; ++t) {
    Vec y = Vec::Constant(1, u(rng));
    double ex = 2 * kPi * y(0);
    CHECK(std::abs(holonomy(y, 0) - cplx(std::cos(ex), std::sin(ex))) < 1e-12);
    for (int k = -3; k <= 4; ++k)
      CHECK(std::abs(holonomy(y, 0, k) - std::pow(holonomy(y, 0), k)) < 1e-12);
  }
  CHECK_THROWS(holonomy(x, 3));
}
