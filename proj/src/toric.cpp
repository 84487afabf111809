#include "gcq/toric.hpp"

#include <cmath>
#include <limits>

namespace gcq {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Support values clamped at zero; throws if x is outside P beyond rounding.
Vec checked_support(const DelzantPolytope& P, const Vec& x) {
  Vec l = P.support_values(x);
  double scale = 1.0 + x.cwiseAbs().maxCoeff();
  for (Eigen::Index j = 0; j < l.size(); ++j) {
    if (l(j) < -1e-12 * scale) throw std::domain_error("point outside the polytope");
    if (l(j) < 0.0) l(j) = 0.0;
  }
  return l;
}

Vec interior_support(const DelzantPolytope& P, const Vec& x) {
  Vec l = P.support_values(x);
  for (Eigen::Index j = 0; j < l.size(); ++j)
    if (!(l(j) > 0.0)) throw std::domain_error("point not in the interior of the polytope");
  return l;
}

}  // namespace

ConvexDeformation::ConvexDeformation(Eigen::MatrixXi iota_star, SmoothFunction nu, double hess_min,
                                     double hess_max, std::string kind, Mat matrix)
    : iota_star_(std::move(iota_star)),
      iota_d_(iota_star_.cast<double>()),
      nu_(std::move(nu)),
      hess_min_(hess_min),
      hess_max_(hess_max),
      kind_(std::move(kind)),
      matrix_(std::move(matrix)) {
  if (!(hess_min_ > 0.0) || hess_max_ < hess_min_) throw std::invalid_argument("nu must be strictly convex");
}

ConvexDeformation ConvexDeformation::quadratic(const Eigen::MatrixXi& iota_star, const Mat& A) {
  const Eigen::Index l = iota_star.rows();
  if (A.rows() != l || A.cols() != l) throw std::invalid_argument("quadratic deformer: matrix size mismatch");
  Mat S = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  SmoothFunction f{[S](const Vec& p) { return 0.5 * p.dot(S * p); }, [S](const Vec& p) -> Vec { return S * p; },
                   [S](const Vec&) -> Mat { return S; }};
  return ConvexDeformation(iota_star, f, lo, hi, "quadratic", S);
}

ConvexDeformation ConvexDeformation::identity_quadratic(int n) {
  return quadratic(Eigen::MatrixXi::Identity(n, n), Mat::Identity(n, n));
}

double ConvexDeformation::value(const Vec& x) const { return nu_.value(iota_d_ * x); }
Vec ConvexDeformation::grad(const Vec& x) const { return iota_d_.transpose() * nu_.grad(iota_d_ * x); }
Mat ConvexDeformation::hess(const Vec& x) const {
  return iota_d_.transpose() * nu_.hess(iota_d_ * x) * iota_d_;
}

SymplecticPotential::SymplecticPotential(DelzantPolytope P, double s, std::optional<ConvexDeformation> deformer,
                                         std::optional<SmoothFunction> base_correction)
    : P_(std::move(P)),
      s_(s),
      deformer_(deformer ? *deformer : ConvexDeformation::identity_quadratic(P_.dim())),
      base_(std::move(base_correction)),
      center_(P_.barycenter()) {
  if (!(s_ >= 0.0)) throw std::invalid_argument("s must be nonnegative");
  if (deformer_.source_dim() != P_.dim()) throw std::invalid_argument("deformer dimension mismatch");
}

SymplecticPotential SymplecticPotential::with_s(double s) const {
  SymplecticPotential g = *this;
  if (!(s >= 0.0)) throw std::invalid_argument("s must be nonnegative");
  g.s_ = s;
  return g;
}

double g_can_value(const DelzantPolytope& P, const Vec& x) {
  Vec l = checked_support(P, x);
  double v = 0.0;
  for (Eigen::Index j = 0; j < l.size(); ++j)
    if (l(j) > 0.0) v += l(j) * std::log(l(j));
  return v / (4.0 * kPi);
}

Vec g_can_grad(const DelzantPolytope& P, const Vec& x) {
  Vec l = interior_support(P, x);
  Vec c = (l.array().log() + 1.0).matrix();
  return P.normals().transpose() * c / (4.0 * kPi);
}

Mat g_can_hess(const DelzantPolytope& P, const Vec& x) {
  Vec l = interior_support(P, x);
  const Mat& R = P.normals();
  return R.transpose() * l.cwiseInverse().asDiagonal() * R / (4.0 * kPi);
}

double SymplecticPotential::value(const Vec& x) const {
  double v = g_can_value(P_, x) + s_ * deformer_.value(x);
  if (base_) v += base_->value(x);
  return v;
}

Vec SymplecticPotential::grad(const Vec& x) const {
  Vec g = g_can_grad(P_, x) + s_ * deformer_.grad(x);
  if (base_) g += base_->grad(x);
  return g;
}

Mat SymplecticPotential::hess(const Vec& x) const {
  Mat H = g_can_hess(P_, x) + s_ * deformer_.hess(x);
  if (base_) H += base_->hess(x);
  return H;
}

double SymplecticPotential::base_log_term(const Vec& x, const Vec& m) const {
  if (!base_) return 0.0;
  return 2.0 * kPi * (base_->value(x) - (x - m).dot(base_->grad(x)));
}

Vec moment_to_log_modulus(const SymplecticPotential& g, const Vec& x) { return g.grad(x); }

CVec moment_to_complex(const SymplecticPotential& g, const SymplecticCoord& c) {
  if (c.theta.size() != c.x.size()) throw std::invalid_argument("angle/action dimension mismatch");
  Vec y = g.grad(c.x);
  CVec w(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double th = c.theta(i) - std::floor(c.theta(i));
    w(i) = std::polar(std::exp(2.0 * kPi * y(i)), 2.0 * kPi * th);
  }
  return w;
}

Vec solve_gradient(const SymplecticPotential& g, const Vec& y, const NewtonOptions& opt, NewtonReport* report) {
  const DelzantPolytope& P = g.polytope();
  if (y.size() != P.dim()) throw std::invalid_argument("dimension mismatch");
  if (!y.allFinite()) throw std::domain_error("target outside the gradient range");
  const double tol = opt.tolerance * (1.0 + y.cwiseAbs().maxCoeff());
  Vec x = g.center();
  Vec r = g.grad(x) - y;
  double rn = r.norm();
  int it = 0;
  for (; it < opt.max_iterations && rn > tol; ++it) {
    Vec d = g.hess(x).ldlt().solve(-r);
    double a = 1.0;
    // Stay strictly inside, then backtrack on the residual norm.
    while (!P.contains(x + a * d, true) && a > 1e-300) a *= 0.5;
    Vec xn = x + a * d;
    Vec rnew = g.grad(xn) - y;
    while (rnew.norm() > (1.0 - 1e-4 * a) * rn && a > 1e-14) {
      a *= 0.5;
      xn = x + a * d;
      rnew = g.grad(xn) - y;
    }
    if (rnew.norm() >= rn) break;
    x = xn;
    r = rnew;
    rn = r.norm();
  }
  if (report) {
    report->iterations = it;
    report->residual = rn;
  }
  if (!(rn <= tol)) throw NumericalError("Newton solve of grad g = y did not converge", rn);
  return x;
}

SymplecticCoord complex_to_moment(const SymplecticPotential& g, const CVec& w, const NewtonOptions& opt,
                                  NewtonReport* report) {
  Vec y(w.size()), th(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w(i) == cplx(0.0, 0.0)) throw std::domain_error("coordinate must be nonzero");
    y(i) = std::log(std::abs(w(i))) / (2.0 * kPi);
    double t = std::arg(w(i)) / (2.0 * kPi);
    th(i) = t < 0.0 ? t + 1.0 : t;
    if (th(i) >= 1.0) th(i) -= 1.0;
  }
  return {solve_gradient(g, y, opt, report), th};
}

namespace {
cplx int_power(cplx z, long long e) {
  if (e < 0) {
    if (z == cplx(0.0, 0.0)) throw std::domain_error("negative exponent at a zero coordinate");
    return 1.0 / int_power(z, -e);
  }
  cplx r(1.0, 0.0);
  for (long long k = 0; k < e; ++k) r *= z;
  return r;
}
}  // namespace

cplx sigma_m_complex(const DelzantPolytope& P, const IVec& m, const CVec& z) {
  if (z.size() != static_cast<Eigen::Index>(P.num_facets())) throw std::invalid_argument("one coordinate per facet");
  cplx v(1.0, 0.0);
  for (std::size_t j = 0; j < P.num_facets(); ++j) v *= int_power(z(j), P.support_value(j, m));
  return v;
}

cplx sigma_m_monomial(const IVec& m, const CVec& w) {
  if (static_cast<Eigen::Index>(m.size()) != w.size()) throw std::invalid_argument("dimension mismatch");
  cplx v(1.0, 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) v *= int_power(w(i), m[i]);
  return v;
}

double alpha_m(const ConvexDeformation& nu, const Vec& m, const Vec& x) {
  return (x - m).dot(nu.grad(x)) - nu.value(x);
}

double log_varsigma(const SymplecticPotential& g, const Vec& m, const Vec& x) {
  const DelzantPolytope& P = g.polytope();
  Vec lx = checked_support(P, x);
  Vec lm = P.support_values(m);
  double v = 0.0;
  for (Eigen::Index j = 0; j < lx.size(); ++j) {
    if (lm(j) > 0.0) {
      if (lx(j) == 0.0) return kNegInf;
      v += 0.5 * (lm(j) * std::log(lx(j)) + lm(j) - lx(j));
    } else {
      v += 0.5 * (lm(j) - lx(j));
    }
  }
  return v + g.base_log_term(x, m);
}

double section_log_density(const SymplecticPotential& g, const Vec& m, const Vec& x) {
  double v = log_varsigma(g, m, x);
  if (v == kNegInf || g.s() == 0.0) return v;
  return v - 2.0 * kPi * g.s() * alpha_m(g.deformer(), m, x);
}

double section_log_density_direct(const SymplecticPotential& g, const Vec& m, const Vec& x) {
  return 2.0 * kPi * (g.value(x) - (x - m).dot(g.grad(x)));
}

L1Norm l1_norm(const SymplecticPotential& g, const IVec& m, const QuadratureOptions& opt) {
  Vec mv(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) mv(i) = static_cast<double>(m[i]);
  if (!g.polytope().contains(m)) throw std::invalid_argument("m is not a lattice point of the polytope");
  auto eval = [&](const GridSpec& spec, std::size_t& count) {
    auto nodes = polytope_nodes(g.polytope(), spec);
    std::vector<double> lf(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) lf[i] = section_log_density(g, mv, nodes[i].x);
    count = nodes.size();
    return log_integral(nodes, lf);
  };
  GridSpec spec = opt.grid;
  std::size_t count = 0;
  double prev = eval(spec, count);
  for (int r = 0; r < opt.max_refinements; ++r) {
    spec = spec.refined();
    double cur = eval(spec, count);
    double rel = std::abs(std::expm1(prev - cur)) / 3.0;
    if (rel <= opt.rel_tolerance) return {cur, rel, spec.cells, count};
    prev = cur;
  }
  throw NumericalError("L1 norm quadrature did not reach tolerance", 0.0);
}

cplx holonomy(const Vec& x, int i) { return holonomy(x, i, 1); }

cplx holonomy(const Vec& x, int i, int k) {
  if (i < 0 || i >= x.size()) throw std::out_of_range("loop direction out of range");
  double f = x(i) - std::nearbyint(x(i));
  double phase = 2.0 * kPi * f * k;
  return {std::cos(phase), std::sin(phase)};
}

bool bohr_sommerfeld_test(const Vec& x, double tol) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (std::abs(x(i) - std::nearbyint(x(i))) > tol) return false;
  return true;
}

}  // namespace gcq
