#include "gcq/lab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <thread>

#include "gcq/rng.hpp"

namespace gcq {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vec to_vec(const IVec& v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = static_cast<double>(v[i]);
  return out;
}

// Relative change between two log-quantities, Richardson-scaled for a
// second-order rule.
double richardson(double prev, double cur) {
  if (prev == cur) return 0.0;
  if (!std::isfinite(prev) || !std::isfinite(cur)) return kInf;
  return std::abs(std::expm1(prev - cur)) / 3.0;
}

double dist_to_boundary(const DelzantPolytope& P, const Vec& x) {
  Vec l = P.support_values(x);
  double d = kInf;
  for (Eigen::Index j = 0; j < l.size(); ++j) d = std::min(d, l(j) / P.normals().row(j).norm());
  return d;
}

}  // namespace

// ---------------------------------------------------------------- threads

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// ------------------------------------------------------- toric concentration

namespace {

struct Level {
  std::vector<QuadNode> nodes;
  std::vector<double> lf;
  std::vector<char> outside;
  double log_total = 0.0;
  double log_outside = -kInf;
};

Level evaluate_level(const SymplecticPotential& g, const Vec& m, const Mat& Ad, const Vec& c, double eps,
                     const GridSpec& spec) {
  Level L;
  L.nodes = polytope_nodes(g.polytope(), spec);
  L.lf.resize(L.nodes.size());
  L.outside.resize(L.nodes.size());
  std::vector<double> out_terms;
  for (std::size_t i = 0; i < L.nodes.size(); ++i) {
    L.lf[i] = section_log_density(g, m, L.nodes[i].x);
    L.outside[i] = (Ad * L.nodes[i].x - c).norm() > eps;
    if (L.outside[i]) out_terms.push_back(L.nodes[i].log_w + L.lf[i]);
  }
  if (out_terms.empty()) throw std::invalid_argument("empty outside region");
  L.log_total = log_integral(L.nodes, L.lf);
  L.log_outside = log_sum_exp(out_terms);
  return L;
}

// Log of the analytic sup bound at cube half-width r, or +inf when the cube
// leaves the interior.
double log_sup_bound(const SymplecticPotential& g, const Vec& m, double eps, double r, double iota_norm) {
  const DelzantPolytope& P = g.polytope();
  const int d = P.dim();
  const ConvexDeformation& nu = g.deformer();
  double lmin = kInf;
  for (int mask = 0; mask < (1 << d); ++mask) {
    Vec v = m;
    for (int k = 0; k < d; ++k) v(k) += (mask >> k & 1) ? r : -r;
    if (!P.contains(v, true)) return kInf;
    lmin = std::min(lmin, log_varsigma(g, m, v));
  }
  double lsup = log_varsigma(g, m, m);
  return lsup - lmin - d * std::log(2.0 * r) -
         2.0 * kPi * g.s() * (nu.growth_lower() * eps * eps - nu.growth_upper() * iota_norm * iota_norm * d * r * r);
}

}  // namespace

ConcentrationCell toric_concentration(const SymplecticPotential& g, const IVec& m, const ConcentrationOptions& opt,
                                      const std::vector<TestFunction>& phis) {
  const DelzantPolytope& P = g.polytope();
  if (static_cast<int>(m.size()) != P.dim() || !P.contains(m)) throw std::invalid_argument("m is not a lattice point of the polytope");
  if (!(opt.eps > 0.0)) throw std::invalid_argument("eps must be positive");
  const Vec mv = to_vec(m);
  const ConvexDeformation& nu = g.deformer();
  const Mat& Ad = nu.iota_star_d();
  const Vec c = Ad * mv;
  const double C1 = nu.growth_lower();
  Eigen::JacobiSVD<Mat> svd(Ad);
  const double iota_norm = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);

  GridSpec spec = opt.grid;
  spec.ball = BallSplit{Ad, c, opt.eps};
  if (opt.auto_focus && g.s() > 0.0 && C1 > 0.0) {
    double sig = 1.0 / std::sqrt(4.0 * kPi * g.s() * C1);
    double decay = 1.0 / (4.0 * kPi * g.s() * C1 * opt.eps);
    double stretch = smin > 0.0 ? 1.0 / smin : 1.0;
    spec.focus = Refinement{mv, stretch * (opt.eps + 12.0 * decay), std::min(sig, decay) / 4.0};
  }

  Level cur = evaluate_level(g, mv, Ad, c, opt.eps, spec);
  double rel = kInf, rel_out = kInf;
  for (int r = 0; r < opt.max_refinements; ++r) {
    spec = spec.refined();
    Level next = evaluate_level(g, mv, Ad, c, opt.eps, spec);
    rel = richardson(cur.log_total, next.log_total);
    rel_out = richardson(cur.log_outside, next.log_outside);
    cur = std::move(next);
    if (rel <= opt.rel_tolerance && rel_out <= opt.outside_tolerance) break;
  }
  if (!(rel <= opt.rel_tolerance && rel_out <= opt.outside_tolerance))
    throw NumericalError("concentration quadrature did not reach tolerance", std::max(rel, rel_out));

  ConcentrationCell cell;
  cell.m = m;
  cell.s = g.s();
  cell.log_norm = cur.log_total;
  cell.log_outside_mass = cur.log_outside - cur.log_total;
  cell.outside_mass = std::exp(cell.log_outside_mass);
  cell.rel_error = std::max(rel, rel_out);
  cell.nodes = cur.nodes.size();
  cell.log_sup_outside = -kInf;
  for (std::size_t i = 0; i < cur.nodes.size(); ++i)
    if (cur.outside[i]) cell.log_sup_outside = std::max(cell.log_sup_outside, cur.lf[i] - cur.log_total);
  cell.sup_outside = std::exp(cell.log_sup_outside);

  cell.pairings.assign(phis.size(), 0.0);
  for (std::size_t i = 0; i < cur.nodes.size(); ++i) {
    double w = std::exp(cur.nodes[i].log_w + cur.lf[i] - cur.log_total);
    for (std::size_t k = 0; k < phis.size(); ++k) cell.pairings[k] += w * phis[k].f(cur.nodes[i].x);
  }

  // Largest cube around m inside the interior.
  double r_max = kInf;
  for (std::size_t j = 0; j < P.num_facets(); ++j)
    r_max = std::min(r_max, P.support_value(j, mv) / P.normals().row(static_cast<Eigen::Index>(j)).lpNorm<1>());
  cell.log_bound = kInf;
  if (r_max > 0.0) {
    const int N = 400;
    for (int k = 1; k < N; ++k) {
      double r = r_max * k / N;
      double b = log_sup_bound(g, mv, opt.eps, r, iota_norm);
      if (b < cell.log_bound) {
        cell.log_bound = b;
        cell.fitted_r = r;
      }
    }
  }
  return cell;
}

double concentration_sup(const SymplecticPotential& g, const IVec& m, const ConcentrationOptions& opt) {
  return toric_concentration(g, m, opt).sup_outside;
}

double delta_pairing(const SymplecticPotential& g, const IVec& m, const TestFunction& phi,
                     const ConcentrationOptions& opt) {
  return toric_concentration(g, m, opt, {phi}).pairings[0];
}

SlopeFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line needs two or more points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line needs distinct x");
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy == 0.0 ? 1.0 : sxy * sxy / (sxx * syy);
  return f;
}

bool concentrates(const SymplecticPotential& g, const IVec& m, double s_large, const ConcentrationOptions& opt) {
  const DelzantPolytope& P = g.polytope();
  const int d = P.dim();
  std::vector<TestFunction> phis;
  phis.push_back({"boundary", [&P, &opt](const Vec& x) { return dist_to_boundary(P, x) < opt.eps ? 1.0 : 0.0; }});
  for (int k = 0; k < d; ++k) phis.push_back({"x", [k](const Vec& x) { return x(k); }});
  auto cell = toric_concentration(g.with_s(s_large), m, opt, phis);
  Vec mean(d);
  for (int k = 0; k < d; ++k) mean(k) = cell.pairings[1 + k];
  return cell.outside_mass < 1e-3 && cell.pairings[0] < 1e-3 && (mean - to_vec(m)).norm() < opt.eps;
}

// ----------------------------------------------------------- lattice tools

SmithForm smith_normal_form(const IMat& A) {
  const Eigen::Index l = A.rows(), n = A.cols();
  SmithForm S;
  S.D = A;
  S.U = IMat::Identity(l, l);
  S.V = IMat::Identity(n, n);
  IMat& D = S.D;
  const Eigen::Index steps = std::min(l, n);
  Eigen::Index t = 0;
  for (; t < steps; ++t) {
    for (;;) {
      Eigen::Index pi = -1, pj = -1;
      long long best = 0;
      for (Eigen::Index i = t; i < l; ++i)
        for (Eigen::Index j = t; j < n; ++j)
          if (D(i, j) != 0 && (pi < 0 || std::llabs(D(i, j)) < best)) {
            best = std::llabs(D(i, j));
            pi = i;
            pj = j;
          }
      if (pi < 0) {
        S.rank = static_cast<int>(t);
        return S;
      }
      D.row(t).swap(D.row(pi));
      S.U.row(t).swap(S.U.row(pi));
      D.col(t).swap(D.col(pj));
      S.V.col(t).swap(S.V.col(pj));
      bool clean = true;
      for (Eigen::Index i = t + 1; i < l; ++i) {
        long long q = D(i, t) / D(t, t);
        if (q != 0) {
          D.row(i) -= q * D.row(t);
          S.U.row(i) -= q * S.U.row(t);
        }
        if (D(i, t) != 0) clean = false;
      }
      for (Eigen::Index j = t + 1; j < n; ++j) {
        long long q = D(t, j) / D(t, t);
        if (q != 0) {
          D.col(j) -= q * D.col(t);
          S.V.col(j) -= q * S.V.col(t);
        }
        if (D(t, j) != 0) clean = false;
      }
      if (!clean) continue;
      // Divisibility of the remaining block by the pivot.
      Eigen::Index bad = -1;
      for (Eigen::Index i = t + 1; i < l && bad < 0; ++i)
        for (Eigen::Index j = t + 1; j < n; ++j)
          if (D(i, j) % D(t, t) != 0) {
            bad = i;
            break;
          }
      if (bad < 0) break;
      D.row(t) += D.row(bad);
      S.U.row(t) += S.U.row(bad);
    }
    if (D(t, t) < 0) {
      D.row(t) *= -1;
      S.U.row(t) *= -1;
    }
  }
  S.rank = static_cast<int>(t);
  return S;
}

IMat kernel_basis(const IMat& A) {
  SmithForm S = smith_normal_form(A);
  return S.V.rightCols(A.cols() - S.rank);
}

std::optional<IVec> integer_lift(const IMat& A, const IVec& c) {
  if (static_cast<Eigen::Index>(c.size()) != A.rows()) throw std::invalid_argument("integer_lift size mismatch");
  SmithForm S = smith_normal_form(A);
  Eigen::Matrix<long long, Eigen::Dynamic, 1> cv(A.rows());
  for (std::size_t i = 0; i < c.size(); ++i) cv(static_cast<Eigen::Index>(i)) = c[i];
  Eigen::Matrix<long long, Eigen::Dynamic, 1> u = S.U * cv, y = Eigen::Matrix<long long, Eigen::Dynamic, 1>::Zero(A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    if (i < S.rank) {
      if (u(i) % S.D(i, i) != 0) return std::nullopt;
      y(i) = u(i) / S.D(i, i);
    } else if (u(i) != 0) {
      return std::nullopt;
    }
  }
  Eigen::Matrix<long long, Eigen::Dynamic, 1> x = S.V * y;
  return IVec(x.data(), x.data() + x.size());
}

bool lattice_surjective(const IMat& A) {
  SmithForm S = smith_normal_form(A);
  if (S.rank != A.rows()) return false;
  for (int i = 0; i < S.rank; ++i)
    if (S.D(i, i) != 1) return false;
  return true;
}

// --------------------------------------------------- GC torus inside T_P

Vec GCEmbedding::to_c(const Vec& lambda) const { return A.cast<double>() * lambda + to_vec(b); }

Vec GCEmbedding::from_c(const Vec& c) const { return A.cast<double>().lu().solve(c - to_vec(b)); }

IVec GCEmbedding::to_c(const IVec& lambda) const {
  IVec out(3, 0);
  for (int i = 0; i < 3; ++i) {
    out[i] = b[i];
    for (int j = 0; j < 3; ++j) out[i] += A(i, j) * lambda[j];
  }
  return out;
}

Vec GCEmbedding::iota_star_of(const Vec& x) const { return iota_star.cast<double>() * x; }

GCEmbedding gc_embedding(const IVec& a) {
  if (a.size() != 2) throw std::invalid_argument("the GC embedding is implemented for n = 3");
  if (a[0] < 1 || a[1] < 1) throw std::invalid_argument("a must be positive");
  // Characters of T_P on x = (x_q2, x_q3, x_q13, x_q23) restricted to the
  // subtorus fixing q_1 q_23 = q_2 q_13.
  Eigen::MatrixXi iota(3, 4), A(3, 3);
  iota << 1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1, 1;
  A << -1, 1, 0, 0, -1, 0, 0, 0, -1;
  IVec b{0, a[0] + a[1], a[1]};
  DelzantPolytope gc = gc_polytope(3, a);
  DelzantPolytope dc = affine_image(gc, A, b, {"c_1", "c_2", "c_3"});
  GCEmbedding E{a, iota, {-1, 0, -1, 1}, A, b, pluecker_polytope(3, a), gc, dc,
                smith_normal_form(iota.cast<long long>()), nullptr};
  E.g0 = std::make_shared<const SymplecticPotential>(E.delta_p);
  return E;
}

Vec torus_moment(const FamilyPoint& x, const IVec& a) {
  if (a.size() != 2) throw std::invalid_argument("torus_moment is implemented for n = 3");
  const double n1 = x.z1.squaredNorm(), n2 = x.z2.squaredNorm();
  if (!(n1 > 0.0) || !(n2 > 0.0)) throw std::invalid_argument("zero homogeneous coordinates");
  Vec m(4);
  m << a[0] * std::norm(x.z1(1)) / n1, a[0] * std::norm(x.z1(2)) / n1, a[1] * std::norm(x.z2(1)) / n2,
      a[1] * std::norm(x.z2(2)) / n2;
  return m;
}

Vec subvariety_slice(const GCEmbedding& E, const Vec& c, SliceReport* report) {
  if (!E.delta_c.contains(c, false, 1e-12)) throw std::invalid_argument("slice point lies outside i(Delta_GC)");
  const IMat& U = E.snf.U;
  const IMat& V = E.snf.V;
  if (E.snf.rank != 3 || V.cols() - E.snf.rank != 1) throw std::logic_error("slice needs a one-dimensional kernel");
  // Particular solution in the adapted basis, plus u times the kernel vector.
  Vec y = Vec::Zero(4);
  Vec uc = U.cast<double>() * c;
  for (int i = 0; i < 3; ++i) y(i) = uc(i) / static_cast<double>(E.snf.D(i, i));
  const Vec X0 = V.cast<double>() * y;
  const Vec k = V.col(3).cast<double>();
  const DelzantPolytope& P = E.delta_p;

  double lo = -kInf, hi = kInf;
  for (std::size_t j = 0; j < P.num_facets(); ++j) {
    double rk = P.normals().row(static_cast<Eigen::Index>(j)).dot(k);
    double l0 = P.support_value(j, X0);
    if (rk > 0) lo = std::max(lo, -l0 / rk);
    else if (rk < 0) hi = std::min(hi, -l0 / rk);
    else if (l0 <= 0) throw std::invalid_argument("slice fiber misses the interior");
  }
  if (!(hi > lo)) throw std::invalid_argument("slice fiber misses the interior");

  auto deriv = [&](double u, double* second) {
    Vec x = X0 + u * k;
    if (second) *second = k.dot(g_can_hess(P, x) * k);
    return k.dot(g_can_grad(P, x));
  };
  // Bracketed Newton on the strictly increasing derivative.
  double a = lo, b = hi, u = 0.5 * (lo + hi);
  int it = 0;
  double res = kInf;
  for (; it < 100; ++it) {
    double h2 = 0.0;
    double f = deriv(u, &h2);
    res = std::abs(f);
    if (res < 1e-13) break;
    if (f > 0) b = u;
    else a = u;
    double un = u - f / h2;
    if (!(un > a && un < b)) un = 0.5 * (a + b);
    if (un == u) break;
    u = un;
  }
  if (report) {
    report->iterations = it;
    report->residual = res;
  }
  if (!(res < 1e-12)) throw NumericalError("subvariety slice did not converge", res);
  return X0 + u * k;
}

namespace {

FamilyPoint v0_from_slice(const GCEmbedding& E, const Vec& X, const Vec& phi) {
  Vec theta = E.iota_star.cast<double>().transpose() * phi;
  CVec w = moment_to_complex(*E.g0, {X, theta});
  FamilyPoint p;
  p.z1 << 1.0, w(0), w(1);
  p.z2 << 1.0, w(2), w(3);
  p.t = 0.0;
  return p.normalized();
}

// Uniform Dirichlet weights over the vertices of Delta_c.
Vec random_interior_c(const GCEmbedding& E, const std::vector<Vec>& verts, Rng& rng) {
  std::exponential_distribution<double> ex(1.0);
  Vec c = Vec::Zero(3);
  double tot = 0.0;
  for (const Vec& v : verts) {
    double w = ex(rng);
    c += w * v;
    tot += w;
  }
  c /= tot;
  if (!E.delta_c.contains(c, true)) throw std::logic_error("sampled point is not interior");
  return c;
}

Vec random_angles(Rng& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Vec phi(3);
  for (int i = 0; i < 3; ++i) phi(i) = U(rng);
  return phi;
}

}  // namespace

FamilyPoint v0_point(const GCEmbedding& E, const Vec& c, const Vec& phi) {
  return v0_from_slice(E, subvariety_slice(E, c), phi);
}

double section_equality_on_V(const GCEmbedding& E, const IVec& m, const IVec& m2, int samples, std::uint64_t seed) {
  if (m.size() != 4 || m2.size() != 4) throw std::invalid_argument("lifts live in Z^4");
  if (m == m2) return 0.0;
  const Family3 fam(E.a);
  const auto verts = E.delta_c.vertices();
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    Rng rng(split_seed(seed, static_cast<std::uint64_t>(s)));
    Vec c = random_interior_c(E, verts, rng);
    FamilyPoint p = v0_point(E, c, random_angles(rng));
    double scale = p.z1.cwiseAbs().maxCoeff() * p.z2.cwiseAbs().maxCoeff();
    double res = std::abs(fam.F(p)) / (scale * scale);
    if (res > 1e-10) throw NumericalError("sample point is off V_0", res);
    CVec w(4);
    w << p.z1(1) / p.z1(0), p.z1(2) / p.z1(0), p.z2(1) / p.z2(0), p.z2(2) / p.z2(0);
    cplx s1 = sigma_m_monomial(m, w), s2 = sigma_m_monomial(m2, w);
    worst = std::max(worst, std::abs(s1 - s2) / std::max(1.0, std::abs(s1)));
  }
  return worst;
}

// ---------------------------------------------------------------- schedules

double Schedule::operator()(double s) const {
  if (s < 0.0) throw std::invalid_argument("schedule needs s >= 0");
  if (kind == Kind::Default || knots.empty()) return std::exp(-s / rate);
  const double K = static_cast<double>(knots.size() - 1);
  if (s >= K) return knots.back() * std::exp(-(s - K) / rate);
  const auto k = static_cast<std::size_t>(std::floor(s));
  const double f = s - static_cast<double>(k);
  return std::exp((1.0 - f) * std::log(knots[k]) + f * std::log(knots[k + 1]));
}

Schedule default_schedule(double rate) {
  if (!(rate > 0.0)) throw std::invalid_argument("schedule rate must be positive");
  Schedule s;
  s.rate = rate;
  return s;
}

Schedule adaptive_schedule(double s_max, const std::function<double(double)>& discrepancy, double t_min,
                           double rate) {
  Schedule S = default_schedule(rate);
  S.kind = Schedule::Kind::Adaptive;
  const int K = static_cast<int>(std::ceil(s_max));
  S.knots = {1.0};
  S.knot_met = {true};
  for (int k = 1; k <= K; ++k) {
    double t = std::min(S.knots.back(), std::exp(-k / rate));
    const double target = 1.0 / (k + 2);
    double d = discrepancy(t);
    while (!(d <= target) && t / 2 >= t_min) {
      t /= 2;
      d = discrepancy(t);
    }
    S.knots.push_back(t);
    S.knot_met.push_back(d <= target);
  }
  return S;
}

// ------------------------------------------------------ flow diagnostics

std::function<double(double)> v0_flow_discrepancy(const GCEmbedding& E, int samples, std::uint64_t seed,
                                                  double h) {
  std::vector<FamilyPoint> pts;
  const auto verts = E.delta_c.vertices();
  for (int s = 0; s < samples; ++s) {
    Rng rng(split_seed(seed, static_cast<std::uint64_t>(s)));
    Vec c = random_interior_c(E, verts, rng);
    pts.push_back(v0_point(E, c, random_angles(rng)));
  }
  auto fam = std::make_shared<Family3>(E.a);
  return [pts, fam, h](double t) {
    double worst = 0.0;
    for (const auto& p : pts) {
      try {
        worst = std::max(worst, projective_distance(p, fam->flow(p, -t, h).end));
      } catch (const NumericalError&) {
        return kInf;
      }
    }
    return worst;
  };
}

double phi_approx_distance(const Family3& fam, const FamilyPoint& x, double h) {
  if (std::abs(x.t.imag()) > 1e-14) throw std::invalid_argument("phi_approx_distance needs real t");
  FamilyPoint end = fam.flow(x, x.t.real(), h).end;
  return projective_distance(x.normalized(), end);
}

MomentCheck gc_vs_torus_moment_check(const IVec& a, double t_small, int samples, std::uint64_t seed, double h,
                                     int jobs) {
  if (!(t_small > 0.0 && t_small <= 0.2)) throw std::invalid_argument("t_small must lie in (0, 0.2]");
  const GCEmbedding E = gc_embedding(a);
  const Family3 fam(a);
  MomentCheck out;
  out.t_small = t_small;
  out.discrepancies.assign(static_cast<std::size_t>(samples), kInf);
  parallel_for(static_cast<std::size_t>(samples), jobs, [&](std::size_t k) {
    CMat V = random_flag(split_seed(seed, k), 3);
    Vec lam = gc_map(V, a).coordinates();
    FamilyPoint x = fam.from_flag(V, 1.0);
    try {
      FamilyPoint end = fam.flow(x, 1.0 - t_small, h).end;
      out.discrepancies[k] = (E.to_c(lam) - E.iota_star_of(torus_moment(end, a))).norm();
    } catch (const NumericalError&) {
    }
  });
  for (double d : out.discrepancies) {
    if (std::isfinite(d)) out.max_discrepancy = std::max(out.max_discrepancy, d);
    else ++out.failures;
  }
  return out;
}

// ------------------------------------------------------ combined experiment

CombinedReport combined_experiment(const CombinedConfig& cfg) {
  if (cfg.s_grid.empty()) throw std::invalid_argument("empty s-grid");
  for (std::size_t i = 0; i < cfg.s_grid.size(); ++i) {
    if (cfg.s_grid[i] < 0.0) throw std::invalid_argument("s-grid must be nonnegative");
    if (i > 0 && !(cfg.s_grid[i] > cfg.s_grid[i - 1])) throw std::invalid_argument("s-grid must be increasing");
  }
  if (!(cfg.eps > 0.0)) throw std::invalid_argument("eps must be positive");
  if (cfg.schedule(0.0) != 1.0) throw std::invalid_argument("schedule must satisfy t(0) = 1");
  if (cfg.angles < 1 || cfg.cells < 1 || !(cfg.h > 0.0)) throw std::invalid_argument("bad resolution settings");

  const GCEmbedding E = gc_embedding(cfg.a);
  if (cfg.m.size() != 3 || !E.delta_gc.contains(cfg.m, true))
    throw std::invalid_argument("m must be an interior GC lattice point");
  CombinedReport rep;
  rep.c_m = E.to_c(cfg.m);
  auto lift = integer_lift(E.iota_star.cast<long long>(), rep.c_m);
  if (!lift) throw std::logic_error("iota^* is not surjective on lattices");
  rep.lift = *lift;
  // Any lattice lift inside Delta_P gives the same density on V_0; prefer one.
  {
    IVec l = rep.lift;
    for (int shift = -8; shift <= 8; ++shift) {
      IVec cand(4);
      for (int i = 0; i < 4; ++i) cand[i] = rep.lift[i] + shift * E.binomial[i];
      if (E.delta_p.contains(cand)) {
        l = cand;
        break;
      }
    }
    rep.lift = l;
  }
  const Vec mt = to_vec(rep.lift);
  const Vec cm = to_vec(rep.c_m);

  const Mat numat = cfg.nu_matrix.size() ? cfg.nu_matrix : Mat::Identity(3, 3);
  const ConvexDeformation nu = ConvexDeformation::quadratic(E.iota_star, numat);
  const double C1 = nu.growth_lower();
  const Family3 fam(cfg.a);

  // Angle samples: a shifted K^3 grid on the GC torus.
  std::vector<Vec> angles;
  {
    Rng rng(split_seed(cfg.seed, 0));
    Vec shift = random_angles(rng);
    const int K = cfg.angles;
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j)
        for (int k = 0; k < K; ++k) {
          Vec phi(3);
          phi << (i + shift(0)) / K, (j + shift(1)) / K, (k + shift(2)) / K;
          angles.push_back(phi);
        }
  }
  const double log_na = std::log(static_cast<double>(angles.size()));

  for (double s : cfg.s_grid) {
    CombinedCell cell;
    cell.s = s;
    cell.t = cfg.schedule(s);
    const SymplecticPotential gs(E.delta_p, s, nu);

    // Integration runs over Delta_c = i(Delta_GC); i is unimodular, so the
    // Liouville measure is unchanged.
    GridSpec spec;
    spec.cells = cfg.cells;
    spec.ball = BallSplit{Mat::Identity(3, 3), cm, cfg.eps};
    Refinement focus{cm, cfg.focus_half_width, cfg.focus_spacing};
    if (s > 0.0) {
      double sig = 1.0 / std::sqrt(4.0 * kPi * s * C1);
      double decay = 1.0 / (4.0 * kPi * s * C1 * cfg.eps);
      focus.half_width = std::max(cfg.focus_half_width, cfg.eps + 4.0 * decay);
      focus.spacing = std::min(cfg.focus_spacing, std::min(sig, decay) / cfg.resolution);
    }
    spec.focus = focus;
    auto nodes = polytope_nodes(E.delta_c, spec);
    cell.nodes = nodes.size();

    std::vector<double> lf(nodes.size()), lf0(nodes.size());
    std::vector<int> failed(nodes.size(), 0);
    std::vector<double> drift(nodes.size(), 0.0);
    parallel_for(nodes.size(), cfg.jobs, [&](std::size_t i) {
      Vec X = subvariety_slice(E, nodes[i].x);
      lf0[i] = section_log_density(gs, mt, X);
      if (cell.t == 0.0) {
        lf[i] = lf0[i];
        return;
      }
      std::vector<double> terms;
      for (std::size_t q = 0; q < angles.size(); ++q) {
        FamilyPoint x0 = v0_from_slice(E, X, angles[q]);
        try {
          if (i < 10 && q == 0) {
            // Bundle-frame spot check along the same flow.
            auto traj = fam.trajectory(x0, -cell.t, cfg.h);
            std::vector<std::vector<CVec>> path;
            for (const auto& p : traj) path.push_back(factors(p));
            BundleElement e = make_bundle_element(path.front(), cfg.a, 1.0);
            drift[i] = std::abs(bundle_norm(parallel_transport(e, path)) - 1.0);
            terms.push_back(section_log_density(gs, mt, torus_moment(traj.back(), cfg.a)));
          } else {
            terms.push_back(section_log_density(gs, mt, torus_moment(fam.flow(x0, -cell.t, cfg.h).end, cfg.a)));
          }
        } catch (const NumericalError&) {
          terms.push_back(lf0[i]);
          ++failed[i];
        }
      }
      lf[i] = log_sum_exp(terms) - log_na;
    });

    std::vector<double> out_t, out_t0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      cell.failed_flows += failed[i];
      cell.transport_norm_drift = std::max(cell.transport_norm_drift, drift[i]);
      if ((nodes[i].x - cm).norm() > cfg.eps) {
        out_t.push_back(nodes[i].log_w + lf[i]);
        out_t0.push_back(nodes[i].log_w + lf0[i]);
      }
    }
    if (out_t.empty()) throw std::invalid_argument("empty outside region");
    cell.log_norm = log_integral(nodes, lf);
    cell.outside_mass = std::exp(log_sum_exp(out_t) - cell.log_norm);
    cell.toric_outside_mass = std::exp(log_sum_exp(out_t0) - log_integral(nodes, lf0));
    cell.pairing_c.assign(3, 0.0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      double w = std::exp(nodes[i].log_w + lf[i] - cell.log_norm);
      cell.pairing_one += w;
      for (int k = 0; k < 3; ++k) cell.pairing_c[static_cast<std::size_t>(k)] += w * nodes[i].x(k);
    }
    rep.cells.push_back(cell);
  }
  rep.strictly_decreasing = true;
  for (std::size_t i = 1; i < rep.cells.size(); ++i)
    if (!(rep.cells[i].outside_mass < rep.cells[i - 1].outside_mass)) rep.strictly_decreasing = false;
  return rep;
}

}  // namespace gcq
