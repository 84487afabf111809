#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "gcq/lab.hpp"
#include "gcq/rng.hpp"

using namespace gcq;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Independent density for P^1, Delta = [0, 3], m = 1, nu = x^2 / 2:
// sqrt(x) (3 - x) exp(-pi s (x - 1)^2) up to a constant.
double p1_density(double x, double s) { return std::sqrt(x) * (3.0 - x) * std::exp(-kPi * s * (x - 1.0) * (x - 1.0)); }

// Composite Simpson on [a, b] with n (even) panels.
template <class F>
double simpson(F f, double a, double b, int n) {
  double h = (b - a) / n, acc = f(a) + f(b);
  for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

double p1_outside_oracle(double s, double eps) {
  auto f = [s](double x) { return p1_density(x, s); };
  double in = simpson(f, 1.0 - eps, 1.0 + eps, 200000);
  double out = simpson(f, 0.0, 1.0 - eps, 200000) + simpson(f, 1.0 + eps, 3.0, 200000);
  return out / (in + out);
}

SymplecticPotential p1_potential(double s = 0.0) {
  return SymplecticPotential(interval(0, 3), s, ConvexDeformation::identity_quadratic(1));
}

double det_ll(const IMat& M) { return M.cast<double>().determinant(); }

}  // namespace

TEST_CASE("parallel_for writes every slot once") {
  for (int jobs : {1, 2, 4}) {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { hits[i] += static_cast<int>(i % 7); });
    for (std::size_t i = 0; i < hits.size(); ++i) CHECK(hits[i] == static_cast<int>(i % 7));
  }
  CHECK_THROWS_AS(parallel_for(50, 3,
                               [](std::size_t i) {
                                 if (i == 17) throw std::runtime_error("x");
                               }),
                  std::runtime_error);
}

TEST_CASE("line fit") {
  auto f = fit_line({1, 2, 3, 4}, {3, 5, 7, 9});
  CHECK(f.slope == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(f.intercept == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(f.r2 == doctest::Approx(1.0));
  CHECK_THROWS(fit_line({1}, {1}));
  CHECK_THROWS(fit_line({1, 1}, {1, 2}));
}

TEST_CASE("Smith normal form") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> U(-6, 6);
  for (int trial = 0; trial < 200; ++trial) {
    int l = 1 + trial % 3, n = l + (trial / 3) % 3;
    IMat A(l, n);
    for (int i = 0; i < l; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = U(rng);
    SmithForm S = smith_normal_form(A);
    CHECK(S.U * A * S.V == S.D);
    CHECK(std::abs(std::abs(det_ll(S.U)) - 1.0) < 1e-9);
    CHECK(std::abs(std::abs(det_ll(S.V)) - 1.0) < 1e-9);
    for (int i = 0; i < l; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) CHECK(S.D(i, j) == 0);
    for (int i = 0; i < S.rank; ++i) {
      CHECK(S.D(i, i) > 0);
      if (i + 1 < S.rank) CHECK(S.D(i + 1, i + 1) % S.D(i, i) == 0);
    }
    CHECK(S.rank == A.cast<double>().fullPivLu().rank());
    IMat K = kernel_basis(A);
    CHECK(K.cols() == n - S.rank);
    if (K.cols() > 0) CHECK((A * K).isZero());
  }
  IMat two(1, 1);
  two << 2;
  CHECK_FALSE(integer_lift(two, {1}).has_value());
  CHECK(integer_lift(two, {4}).value() == IVec{2});
  CHECK_FALSE(lattice_surjective(two));
}

TEST_CASE("GC embedding for n = 3") {
  for (IVec a : {IVec{1, 1}, IVec{2, 1}, IVec{2, 2}}) {
    GCEmbedding E = gc_embedding(a);
    IMat I = E.iota_star.cast<long long>();
    CHECK(lattice_surjective(I));
    IMat K = kernel_basis(I);
    REQUIRE(K.cols() == 1);
    IVec k(K.data(), K.data() + 4);
    IVec mk = k;
    for (auto& v : mk) v = -v;
    CHECK((k == E.binomial || mk == E.binomial));
    CHECK(std::abs(E.A.cast<double>().determinant()) == 1.0);

    // Torus-fixed points of V_0: coordinate pairs off the binomial q1 q23 = q2 q13.
    std::vector<Vec> images;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if ((i == 0 && j == 2) || (i == 1 && j == 1)) continue;
        Vec x = Vec::Zero(4);
        if (i > 0) x(i - 1) = static_cast<double>(a[0]);
        if (j > 0) x(1 + j) = static_cast<double>(a[1]);
        images.push_back(E.iota_star_of(x));
      }
    auto verts = E.delta_gc.vertices();
    REQUIRE(verts.size() == 7);
    REQUIRE(images.size() == 7);
    for (const Vec& v : verts) {
      Vec c = E.to_c(v);
      bool hit = false;
      for (const Vec& im : images) hit = hit || (im - c).norm() < 1e-12;
      CHECK(hit);
    }
    // Lattice points correspond.
    auto gc_pts = lattice_points(E.delta_gc);
    auto c_pts = lattice_points(E.delta_c);
    CHECK(gc_pts.size() == c_pts.size());
    for (const auto& p : gc_pts) CHECK(E.delta_c.contains(E.to_c(p)));
    for (const auto& p : gc_pts) CHECK((E.from_c(E.to_c(Vec(Eigen::Map<const Eigen::Matrix<long long, -1, 1>>(p.data(), 3).cast<double>()))) - Eigen::Map<const Eigen::Matrix<long long, -1, 1>>(p.data(), 3).cast<double>()).norm() < 1e-14);
  }
  CHECK_THROWS(gc_embedding({1, 1, 1}));
}

TEST_CASE("GC-torus-invariant functions of the torus moment") {
  // lambda_1^1 = lambda_1 - c_1 - c_2 and lambda_1^2 + lambda_2^2 = lambda_1 + lambda_2 - c_2 - c_3
  // hold exactly at t = 1 and are conserved by the flow.
  const IVec a{1, 1};
  GCEmbedding E = gc_embedding(a);
  Family3 fam(a);
  for (std::uint64_t s = 0; s < 10; ++s) {
    CMat V = random_flag(split_seed(41, s), 3);
    GCValue g = gc_map(V, a);
    auto invariants = [&](const FamilyPoint& x) {
      Vec c = E.iota_star_of(torus_moment(x, a));
      return Eigen::Vector2d(2.0 - c(0) - c(1), 3.0 - c(1) - c(2));
    };
    FamilyPoint x = fam.from_flag(V, 1.0).normalized();
    Eigen::Vector2d at1 = invariants(x);
    CHECK(std::abs(at1(0) - g.rows[0][0]) < 1e-12);
    CHECK(std::abs(at1(1) - g.rows[1][0] - g.rows[1][1]) < 1e-12);
    FamilyPoint end = fam.flow(x, 0.9, 1e-2).end;
    CHECK((invariants(end) - at1).norm() < 1e-8);
  }
}

TEST_CASE("subvariety slice") {
  GCEmbedding E = gc_embedding({1, 1});
  Vec c = E.delta_c.barycenter();
  SliceReport rep;
  Vec X = subvariety_slice(E, c, &rep);
  CHECK(rep.iterations <= 20);
  CHECK(rep.residual < 1e-12);
  CHECK((E.iota_star_of(X) - c).norm() < 1e-14);
  CHECK(E.delta_p.contains(X, true));
  Vec k(4);
  k << -1, 0, -1, 1;
  CHECK(std::abs(k.dot(g_can_grad(E.delta_p, X))) < 1e-12);

  // Bracketing oracle: the derivative along the kernel line changes sign once.
  double lo = -1e9, hi = 1e9;
  for (std::size_t j = 0; j < E.delta_p.num_facets(); ++j) {
    double rk = E.delta_p.normals().row(static_cast<Eigen::Index>(j)).dot(k);
    double l0 = E.delta_p.support_value(j, X);
    if (rk > 0) lo = std::max(lo, -l0 / rk);
    if (rk < 0) hi = std::min(hi, -l0 / rk);
  }
  int changes = 0;
  double prev = 0.0, root = 0.0;
  const int N = 2000;
  for (int i = 1; i < N; ++i) {
    double u = lo + (hi - lo) * i / N;
    double d = k.dot(g_can_grad(E.delta_p, X + u * k));
    if (i > 1 && (prev < 0) != (d < 0)) {
      ++changes;
      root = u;
    }
    prev = d;
  }
  CHECK(changes == 1);
  CHECK(std::abs(root) <= (hi - lo) / N + 1e-12);

  // Continuity scan along a lattice direction.
  Vec dir(3);
  dir << 1, 0, 0;
  Vec base = c - 0.2 * dir;
  Vec last = subvariety_slice(E, base);
  const double step = 1e-3;
  for (int i = 1; i <= 400; ++i) {
    Vec cur = subvariety_slice(E, base + i * step * dir);
    CHECK((cur - last).norm() < 10 * step);
    last = cur;
  }
  Vec outside(3);
  outside << -1, 0, 0;
  CHECK_THROWS(subvariety_slice(E, outside));
}

TEST_CASE("points of V_0 from the torus parametrization") {
  GCEmbedding E = gc_embedding({2, 2});
  Family3 fam(E.a);
  Rng rng(9);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int s = 0; s < 50; ++s) {
    Vec c(3), phi(3);
    c << 0.5 + U(rng), 0.5 + U(rng), 0.5 + U(rng);
    if (!E.delta_c.contains(c, true)) continue;
    phi << U(rng), U(rng), U(rng);
    FamilyPoint p = v0_point(E, c, phi);
    Vec X = subvariety_slice(E, c);
    CHECK((torus_moment(p, E.a) - X).norm() < 1e-12);
    CHECK(std::abs(fam.F(p)) < 1e-12);
    CHECK(p.t == cplx(0.0, 0.0));
    // Angles: arg w = 2 pi theta with theta = iota phi.
    Vec theta = E.iota_star.cast<double>().transpose() * phi;
    cplx w2 = p.z1(1) / p.z1(0);
    CHECK(std::abs(std::arg(w2 * std::polar(1.0, -2 * kPi * theta(0)))) < 1e-12);
  }
}

TEST_CASE("sections of two lifts agree on V_0") {
  GCEmbedding E = gc_embedding({2, 2});
  IVec m{1, 1, 1, 0}, m2{0, 1, 0, 1};
  for (int i = 0; i < 3; ++i) {
    long long a = 0, b = 0;
    for (int j = 0; j < 4; ++j) {
      a += E.iota_star(i, j) * m[j];
      b += E.iota_star(i, j) * m2[j];
    }
    CHECK(a == b);
  }
  CHECK(section_equality_on_V(E, m, m, 10, 1) == 0.0);
  CHECK(section_equality_on_V(E, m, m2, 500, 3) < 1e-10);
  CHECK(section_equality_on_V(E, m, {1, 1, 0, 0}, 500, 3) > 1e-2);
  CHECK(section_equality_on_V(E, {1, 1, 1, 0}, {2, 1, 1, 0}, 50, 4) > 1e-2);
  CHECK_THROWS(section_equality_on_V(E, {1, 1, 1}, m2, 1, 1));

  // The density of the ambient section on the slice does not depend on the
  // lift beyond a constant factor.
  for (double s : {0.0, 10.0}) {
    SymplecticPotential g(E.delta_p, s, ConvexDeformation::quadratic(E.iota_star, Mat::Identity(3, 3)));
    Vec mv(4), mv2(4);
    mv << 1, 1, 1, 0;
    mv2 << 0, 1, 0, 1;
    Rng rng(12);
    std::uniform_real_distribution<double> U(0.6, 1.4);
    double ref = 0.0;
    for (int i = 0; i < 100; ++i) {
      Vec c(3);
      c << U(rng), U(rng), U(rng);
      Vec X = subvariety_slice(E, c);
      double d = section_log_density(g, mv, X) - section_log_density(g, mv2, X);
      if (i == 0) ref = d;
      CHECK(std::abs(d - ref) < 1e-10);
    }
  }
}

TEST_CASE("P^1 concentration against an independent quadrature") {
  ConcentrationOptions opt;
  for (double s : {0.0, 5.0, 20.0, 80.0}) {
    auto cell = toric_concentration(p1_potential(s), {1}, opt, {{"one", [](const Vec&) { return 1.0; }}});
    double ref = p1_outside_oracle(s, 0.3);
    CHECK(std::abs(cell.outside_mass / ref - 1.0) < 1e-4);
    CHECK(std::abs(cell.pairings[0] - 1.0) < 1e-6);
    CHECK(cell.outside_mass >= 0.0);
    CHECK(cell.outside_mass <= 1.0);
    CHECK(cell.sup_outside >= 0.0);
  }
}

TEST_CASE("P^1 concentration trend, slope, pairings and bound") {
  ConcentrationOptions opt;
  std::vector<double> grid{0, 5, 10, 20, 40, 80, 160}, tail_s, tail_log;
  double prev_mass = 2.0, prev_sup = kInf;
  for (double s : grid) {
    auto cell = toric_concentration(p1_potential(s), {1}, opt);
    CHECK(cell.outside_mass <= prev_mass);
    prev_mass = cell.outside_mass;
    if (s > 10) CHECK(cell.sup_outside < prev_sup);
    prev_sup = cell.sup_outside;
    CHECK(cell.log_sup_outside <= cell.log_bound);
    CHECK(cell.fitted_r > 0.0);
    if (s >= 20) {
      tail_s.push_back(s);
      tail_log.push_back(cell.log_outside_mass);
    }
    if (s == 0) {
      CHECK(std::isfinite(cell.sup_outside));
      CHECK(cell.sup_outside > 0.0);
    }
  }
  const double target = -kPi * 0.09;  // -2 pi C1 eps^2 with C1 = 1/2
  double slope = fit_line(tail_s, tail_log).slope;
  CHECK(std::abs(slope / target - 1.0) < 0.15);

  auto g200 = p1_potential(200);
  CHECK(std::abs(delta_pairing(g200, {1}, {"x", [](const Vec& x) { return x(0); }}) - 1.0) < 1e-3);
  for (double s : {50.0, 200.0}) {
    double var = delta_pairing(p1_potential(s), {1}, {"sq", [](const Vec& x) { return (x(0) - 1) * (x(0) - 1); }});
    CHECK(std::abs(var * 2 * kPi * s - 1.0) < 0.02);
  }
  CHECK(concentration_sup(p1_potential(10), {1}, opt) == doctest::Approx(toric_concentration(p1_potential(10), {1}, opt).sup_outside));
  ConcentrationOptions wide = opt;
  wide.eps = 10.0;
  CHECK_THROWS_AS(toric_concentration(p1_potential(10), {1}, wide), std::invalid_argument);
  CHECK_THROWS(toric_concentration(p1_potential(10), {4}, opt));
}

TEST_CASE("P^1 x P^1 decay slope") {
  SymplecticPotential g(product_polytope({interval(0, 3), interval(0, 3)}), 0.0,
                        ConvexDeformation::identity_quadratic(2));
  ConcentrationOptions opt;
  opt.grid.cells = 16;
  opt.rel_tolerance = 1e-5;
  opt.outside_tolerance = 1e-3;
  std::vector<double> ss{10, 20, 40}, ls;
  double prev = 2.0;
  for (double s : ss) {
    auto cell = toric_concentration(g.with_s(s), {1, 1}, opt);
    CHECK(cell.outside_mass < prev);
    prev = cell.outside_mass;
    ls.push_back(cell.log_outside_mass);
  }
  CHECK(std::abs(fit_line(ss, ls).slope / (-kPi * 0.09) - 1.0) < 0.15);
}

TEST_CASE("concentration happens exactly at interior lattice points") {
  ConcentrationOptions opt;
  auto g1 = p1_potential();
  std::set<IVec> measured, expected;
  for (const auto& m : lattice_points(interval(0, 3))) {
    if (concentrates(g1, m, 200, opt)) measured.insert(m);
    Vec x(1);
    x << static_cast<double>(m[0]);
    if (interval(0, 3).contains(m, true) && bohr_sommerfeld_test(x)) expected.insert(m);
  }
  CHECK(measured == expected);
  CHECK(expected.size() == 2);

  DelzantPolytope tri = simplex(2, 4);
  SymplecticPotential g2(tri, 0.0, ConvexDeformation::identity_quadratic(2));
  ConcentrationOptions o2;
  o2.grid.cells = 16;
  o2.rel_tolerance = 1e-5;
  o2.outside_tolerance = 1e-3;
  measured.clear();
  expected.clear();
  for (const auto& m : lattice_points(tri)) {
    if (concentrates(g2, m, 60, o2)) measured.insert(m);
    if (tri.contains(m, true)) expected.insert(m);
  }
  CHECK(measured == expected);
  CHECK(expected.size() == 3);
}

TEST_CASE("schedules") {
  Schedule d = default_schedule();
  CHECK(d(0) == 1.0);
  CHECK(d(5) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK_THROWS(d(-1));
  CHECK_THROWS(default_schedule(0));

  auto toy = [](double t) { return t; };
  Schedule a = adaptive_schedule(6, toy);
  CHECK(a(0) == 1.0);
  REQUIRE(a.knots.size() == 7);
  for (std::size_t k = 1; k < a.knots.size(); ++k) {
    CHECK(a.knot_met[k]);
    CHECK(a.knots[k] <= 1.0 / (static_cast<double>(k) + 2));
  }
  double prev = 2.0;
  for (double s = 0; s <= 10; s += 0.125) {
    CHECK(a(s) <= prev);
    CHECK(d(s) <= prev + 1.0);
    prev = a(s);
  }
  CHECK(a(3) == doctest::Approx(a.knots[3]));

  Schedule never = adaptive_schedule(3, [](double) { return 1.0; }, 1e-2);
  for (std::size_t k = 1; k < never.knots.size(); ++k) {
    CHECK_FALSE(never.knot_met[k]);
    CHECK(never.knots[k] >= 1e-2);
  }

  GCEmbedding E = gc_embedding({2, 2});
  auto disc = v0_flow_discrepancy(E, 5, 3, 1e-2);
  CHECK(disc(0.01) < disc(0.1));
  CHECK(disc(0.1) < disc(0.5));
  Schedule real = adaptive_schedule(4, disc);
  for (std::size_t k = 1; k < real.knots.size(); ++k) {
    CHECK(real.knot_met[k]);
    CHECK(real.knots[k] <= real.knots[k - 1]);
  }
}

TEST_CASE("flow diagnostics") {
  GCEmbedding E = gc_embedding({1, 1});
  Family3 fam(E.a);
  Vec c = E.delta_c.barycenter(), phi(3);
  phi << 0.3, 0.1, 0.7;
  FamilyPoint x0 = v0_point(E, c, phi);
  double prev = kInf;
  for (double t : {0.4, 0.2, 0.1, 0.05}) {
    FamilyPoint xt = fam.flow(x0, -t, 1e-3).end;
    double d = phi_approx_distance(fam, xt, 1e-3);
    CHECK(std::abs(d - projective_distance(xt, x0)) < 1e-9);
    CHECK(d < prev);
    prev = d;
  }
  FamilyPoint z = x0;
  z.t = cplx(0.1, 0.1);
  CHECK_THROWS(phi_approx_distance(fam, z, 1e-3));

  auto coarse = gc_vs_torus_moment_check({1, 1}, 0.1, 20, 11, 1e-2);
  auto fine = gc_vs_torus_moment_check({1, 1}, 0.02, 20, 11, 1e-2);
  CHECK(coarse.failures == 0);
  CHECK(fine.failures == 0);
  CHECK(fine.max_discrepancy < coarse.max_discrepancy);
  auto par = gc_vs_torus_moment_check({1, 1}, 0.02, 20, 11, 1e-2, 3);
  CHECK(par.discrepancies == fine.discrepancies);
  CHECK_THROWS(gc_vs_torus_moment_check({1, 1}, 0.5, 2, 1, 1e-2));
}

TEST_CASE("combined experiment at reduced resolution") {
  CombinedConfig cfg;
  cfg.s_grid = {0, 10, 20};
  cfg.angles = 1;
  cfg.cells = 4;
  cfg.resolution = 0.5;
  cfg.focus_spacing = 0.2;
  auto rep = combined_experiment(cfg);
  REQUIRE(rep.cells.size() == 3);
  CHECK(rep.c_m == IVec{1, 1, 1});
  GCEmbedding E = gc_embedding(cfg.a);
  CHECK(E.delta_p.contains(rep.lift));
  for (int i = 0; i < 3; ++i) {
    long long v = 0;
    for (int j = 0; j < 4; ++j) v += E.iota_star(i, j) * rep.lift[j];
    CHECK(v == rep.c_m[i]);
  }
  CHECK(rep.strictly_decreasing);
  CHECK(rep.cells[0].t == 1.0);
  CHECK(rep.cells[0].outside_mass > 0.5);
  // At s = 0 the flowed report stays close to the unflowed baseline.
  CHECK(std::abs(rep.cells[0].outside_mass / rep.cells[0].toric_outside_mass - 1.0) < 0.02);
  for (const auto& c : rep.cells) {
    CHECK(std::abs(c.pairing_one - 1.0) < 1e-12);
    CHECK(c.failed_flows == 0);
    CHECK(c.transport_norm_drift < 1e-12);
    CHECK(c.outside_mass <= 3.0 * c.toric_outside_mass);
  }
  for (int k = 0; k < 3; ++k) CHECK(std::abs(rep.cells[2].pairing_c[k] - 1.0) < 0.05);

  CombinedConfig bad = cfg;
  bad.s_grid = {0, 5, 5};
  CHECK_THROWS(combined_experiment(bad));
  bad = cfg;
  bad.eps = 0;
  CHECK_THROWS(combined_experiment(bad));
  bad = cfg;
  bad.m = {4, 4, 2};
  CHECK_THROWS(combined_experiment(bad));
  bad = cfg;
  bad.schedule.kind = Schedule::Kind::Adaptive;
  bad.schedule.knots = {0.5, 0.25};
  CHECK_THROWS(combined_experiment(bad));
}
