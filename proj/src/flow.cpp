#include "gcq/flow.hpp"

#include <cmath>

#include "gcq/flag.hpp"

namespace gcq {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, 14>;

void put(R14& x, int k, cplx v) {
  x(2 * k) = v.real();
  x(2 * k + 1) = v.imag();
}
cplx get(const R14& x, int k) { return {x(2 * k), x(2 * k + 1)}; }

// Rows for Re and Im of sum_k alpha_k v_k over complex slots k0..k0+size.
void linear_rows(RowMat& A, int row, int k0, const Eigen::VectorXcd& alpha) {
  for (Eigen::Index k = 0; k < alpha.size(); ++k) {
    int c = 2 * (k0 + static_cast<int>(k));
    A(row, c) = alpha(k).real();
    A(row, c + 1) = -alpha(k).imag();
    A(row + 1, c) = alpha(k).imag();
    A(row + 1, c + 1) = alpha(k).real();
  }
}

double fs_distance(const CVec& a, const CVec& b) {
  CVec u = a / a.norm(), v = b / b.norm();
  cplx c = u.dot(v);
  double s = (v - c * u).norm();
  return std::atan2(s, std::abs(c));
}

cplx unit_phase_power(cplx c, long long k) {
  double ac = std::abs(c);
  if (!(ac > 1e-12)) throw NumericalError("geodesic segment through an antipodal pair", ac);
  return std::polar(1.0, std::arg(c) * static_cast<double>(k));
}

}  // namespace

R14 FamilyPoint::to_real() const {
  R14 x;
  for (int k = 0; k < 3; ++k) put(x, k, z1(k));
  for (int k = 0; k < 3; ++k) put(x, 3 + k, z2(k));
  put(x, 6, t);
  return x;
}

FamilyPoint FamilyPoint::from_real(const R14& x) {
  FamilyPoint p;
  for (int k = 0; k < 3; ++k) p.z1(k) = get(x, k);
  for (int k = 0; k < 3; ++k) p.z2(k) = get(x, 3 + k);
  p.t = get(x, 6);
  return p;
}

FamilyPoint FamilyPoint::normalized() const {
  double n1 = z1.norm(), n2 = z2.norm();
  if (!(n1 > 0.0) || !(n2 > 0.0)) throw std::domain_error("zero homogeneous coordinates");
  return {z1 / n1, z2 / n2, t};
}

std::vector<CVec> factors(const FamilyPoint& x) { return {CVec(x.z1), CVec(x.z2)}; }

double projective_distance(const FamilyPoint& x, const FamilyPoint& y) {
  return fs_distance(x.z1, y.z1) + fs_distance(x.z2, y.z2);
}

Family3::Family3(IVec a, double metric_scale) : a_(std::move(a)), scale_(metric_scale) {
  if (a_.size() != 2 || a_[0] < 1 || a_[1] < 1) throw std::invalid_argument("n = 3 family needs a = (a1, a2) > 0");
  if (!(scale_ > 0.0)) throw std::invalid_argument("metric scale must be positive");
  for (int i = 0; i < 6; ++i) w_(i) = scale_ * static_cast<double>(a_[0]) / kPi;
  for (int i = 6; i < 12; ++i) w_(i) = scale_ * static_cast<double>(a_[1]) / kPi;
  w_(12) = w_(13) = scale_;
}

cplx Family3::F(const FamilyPoint& x) const {
  return x.z1(0) * x.z2(2) - x.z1(1) * x.z2(1) + x.t * x.z1(2) * x.z2(0);
}

void Family3::dF(const FamilyPoint& x, C3& d1, C3& d2, cplx& dt) const {
  d1 << x.z2(2), -x.z2(1), x.t * x.z2(0);
  d2 << x.t * x.z1(2), -x.z1(1), x.z1(0);
  dt = x.z1(2) * x.z2(0);
}

FamilyPoint Family3::from_flag(const CMat& V, cplx t) const {
  if (V.rows() != 3) throw std::invalid_argument("n = 3 family needs a 3 x 3 flag");
  auto q = deformed_pluecker(V, t);
  FamilyPoint p;
  p.z1 << q.at({1}), q.at({2}), q.at({3});
  p.z2 << q.at({1, 2}), q.at({1, 3}), q.at({2, 3});
  p.t = t;
  return p.normalized();
}

RowMat Family3::constraints(const FamilyPoint& x, bool fiber) const {
  RowMat A = RowMat::Zero(fiber ? 8 : 6, 14);
  linear_rows(A, 0, 0, x.z1.conjugate());
  linear_rows(A, 2, 3, x.z2.conjugate());
  C3 d1, d2;
  cplx dt;
  dF(x, d1, d2, dt);
  Eigen::VectorXcd all(7);
  all << d1, d2, dt;
  linear_rows(A, 4, 0, all);
  if (fiber) {
    A(6, 12) = 1.0;
    A(7, 13) = 1.0;
  }
  return A;
}

TangentFrame Family3::tangent_space(const FamilyPoint& x0, bool fiber) const {
  FamilyPoint x = x0.normalized();
  RowMat A = constraints(x, fiber);
  R14 isw = w_.cwiseSqrt().cwiseInverse();
  RowMat At = A * isw.asDiagonal();
  Eigen::JacobiSVD<Mat> svd(At, Eigen::ComputeFullV);
  TangentFrame fr;
  fr.base = x;
  fr.min_singular_value = svd.singularValues().minCoeff();
  if (!(fr.min_singular_value > 1e-10))
    throw NumericalError("tangent space rank drop at a near-singular point", fr.min_singular_value);
  const Mat& Vm = svd.matrixV();
  for (Eigen::Index k = A.rows(); k < 14; ++k) fr.vectors.push_back(isw.cwiseProduct(Vm.col(k)));
  return fr;
}

R14 Family3::project(const FamilyPoint& x, const R14& v, bool fiber) const {
  RowMat A = constraints(x, fiber);
  R14 sw = w_.cwiseSqrt(), isw = sw.cwiseInverse();
  RowMat At = A * isw.asDiagonal();
  R14 y = sw.cwiseProduct(v);
  Vec lam = (At * At.transpose()).ldlt().solve(At * y);
  y -= At.transpose() * lam;
  return isw.cwiseProduct(y);
}

double Family3::metric(const R14& u, const R14& v) const { return u.dot(w_.cwiseProduct(v)); }

double Family3::omega(const R14& u, const R14& v) const {
  // -Im(u conj(v)) = u_re v_im - u_im v_re per complex slot.
  double s = 0.0;
  for (int k = 0; k < 6; ++k) s += w_(2 * k) * (u(2 * k) * v(2 * k + 1) - u(2 * k + 1) * v(2 * k));
  return s;
}

R14 Family3::grad_ham_field(const FamilyPoint& x) const {
  RowMat A = constraints(x, false);
  R14 isw = w_.cwiseSqrt().cwiseInverse();
  RowMat At = A * isw.asDiagonal();
  R14 b = R14::Zero();
  b(12) = isw(12);
  Eigen::Matrix<double, 6, 6> M = At * At.transpose();
  Eigen::Matrix<double, 6, 1> lam = M.ldlt().solve(At * b);
  R14 pb = b - At.transpose() * lam;
  double nn = pb.squaredNorm();
  if (!(std::sqrt(nn) > regularity_guard)) throw NumericalError("gradient of Re f below guard", std::sqrt(nn));
  return -isw.cwiseProduct(pb) / nn;
}

R14 Family3::lifted_field(const R14& xr) const {
  FamilyPoint x = FamilyPoint::from_real(xr);
  double n1 = x.z1.norm(), n2 = x.z2.norm();
  R14 z = grad_ham_field(x.normalized());
  z.segment<6>(0) *= n1;
  z.segment<6>(6) *= n2;
  return z;
}

R14 Family3::field_jvp(const R14& x, const R14& u) const {
  double nu = u.norm();
  if (nu == 0.0) return R14::Zero();
  R14 d = u / nu;
  double eps = 1e-6 * (1.0 + x.norm());
  return (lifted_field(x + eps * d) - lifted_field(x - eps * d)) * (nu / (2.0 * eps));
}

FamilyPoint Family3::retract(const FamilyPoint& x0, RetractionReport* report) const {
  FamilyPoint y = x0.normalized();
  const double w1 = w_(0), w2 = w_(6);
  cplx f = F(y);
  int it = 0;
  for (; it < retraction_max_iterations && std::abs(f) > 1e-15; ++it) {
    C3 d1, d2;
    cplx dt;
    dF(y, d1, d2, dt);
    double den = d1.squaredNorm() / w1 + d2.squaredNorm() / w2;
    if (!(den > 0.0)) throw NumericalError("retraction at a singular point", std::abs(f));
    FamilyPoint c = y;
    c.z1 -= (f / (w1 * den)) * d1.conjugate();
    c.z2 -= (f / (w2 * den)) * d2.conjugate();
    c = c.normalized();
    cplx fc = F(c);
    if (!(std::abs(fc) < std::abs(f))) break;
    y = c;
    f = fc;
  }
  if (report) {
    report->iterations = it;
    report->residual = std::abs(f);
  }
  if (!(std::abs(f) <= retraction_tolerance)) throw NumericalError("retraction failed", std::abs(f));
  return y;
}

FamilyPoint Family3::step(const FamilyPoint& x, double h) const {
  R14 y = x.to_real();
  R14 k1 = lifted_field(y);
  R14 k2 = lifted_field(y + 0.5 * h * k1);
  R14 k3 = lifted_field(y + 0.5 * h * k2);
  R14 k4 = lifted_field(y + h * k3);
  y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  return retract(FamilyPoint::from_real(y));
}

namespace {
int step_count(double tau, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step must be positive");
  return std::max(1, static_cast<int>(std::ceil(std::abs(tau) / h - 1e-9)));
}
}  // namespace

FlowResult Family3::flow(const FamilyPoint& x0, double tau, double h, bool keep_log) const {
  FlowResult r;
  r.end = x0.normalized();
  if (tau == 0.0) return r;
  const int N = step_count(tau, h);
  const double hh = tau / N;
  const cplx t0 = x0.t;
  for (int k = 1; k <= N; ++k) {
    r.end = step(r.end, hh);
    StepLog s;
    s.step = k;
    s.t = r.end.t;
    s.residual = std::abs(F(r.end));
    s.f_deviation = std::abs(r.end.t - (t0 - tau * static_cast<double>(k) / N));
    R14 z = grad_ham_field(r.end);
    s.z_re_f = z(12);
    s.z_im_f = z(13);
    r.max_residual = std::max(r.max_residual, s.residual);
    r.max_f_deviation = std::max(r.max_f_deviation, s.f_deviation);
    r.max_z_re_dev = std::max(r.max_z_re_dev, std::abs(s.z_re_f + 1.0));
    r.max_z_im = std::max(r.max_z_im, std::abs(s.z_im_f));
    if (keep_log) r.log.push_back(s);
  }
  r.steps = N;
  return r;
}

std::vector<FamilyPoint> Family3::trajectory(const FamilyPoint& x0, double tau, double h) const {
  std::vector<FamilyPoint> out{x0.normalized()};
  if (tau == 0.0) return out;
  const int N = step_count(tau, h);
  for (int k = 0; k < N; ++k) out.push_back(step(out.back(), tau / N));
  return out;
}

FrameTransport Family3::transport_frame(const FamilyPoint& x0, const std::vector<R14>& frame, double tau,
                                        double h) const {
  FamilyPoint x = x0.normalized();
  std::vector<R14> u;
  for (const R14& v : frame) u.push_back(project(x, v, true));
  const std::size_t m = u.size();
  Mat om0(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) om0(i, j) = omega(u[i], u[j]);
  FrameTransport out;
  if (tau != 0.0) {
    const int N = step_count(tau, h);
    const double hh = tau / N;
    for (int k = 0; k < N; ++k) {
      FamilyPoint xn = step(x, hh);
      R14 xr = x.to_real(), xnr = xn.to_real();
      for (auto& v : u) {
        R14 a = field_jvp(xr, v);
        R14 b = field_jvp(xnr, v + hh * a);
        v = project(xn, v + 0.5 * hh * (a + b), true);
      }
      x = xn;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j)
          out.max_pairing_drift = std::max(out.max_pairing_drift, std::abs(omega(u[i], u[j]) - om0(i, j)));
    }
  }
  out.frame.base = x;
  out.frame.vectors = u;
  return out;
}

BundleElement make_bundle_element(const std::vector<CVec>& base, const IVec& a, cplx unitary_value) {
  if (base.size() != a.size()) throw std::invalid_argument("one weight per projective factor");
  BundleElement e;
  e.a = a;
  cplx frame(1.0, 0.0);
  for (std::size_t l = 0; l < base.size(); ++l) {
    CVec z = base[l] / base[l].norm();
    Eigen::Index j;
    z.cwiseAbs().maxCoeff(&j);
    e.chart.push_back(static_cast<int>(j));
    for (long long k = 0; k < a[l]; ++k) frame *= z(j);
    e.base.push_back(z);
  }
  e.value = unitary_value / frame;
  return e;
}

namespace {
// Holomorphic frame value against the unit representatives of base.
cplx chart_frame(const BundleElement& e, const std::vector<CVec>& base) {
  cplx frame(1.0, 0.0);
  for (std::size_t l = 0; l < base.size(); ++l) {
    cplx zj = base[l](e.chart[l]) / base[l].norm();
    if (!(std::abs(zj) > 1e-8)) throw NumericalError("chart coordinate vanishes along the path", std::abs(zj));
    for (long long k = 0; k < e.a[l]; ++k) frame *= zj;
  }
  return frame;
}
}  // namespace

double bundle_norm(const BundleElement& e) { return std::abs(e.value * chart_frame(e, e.base)); }

BundleElement parallel_transport(const BundleElement& e, const std::vector<std::vector<CVec>>& path) {
  if (path.empty()) return e;
  for (std::size_t l = 0; l < e.base.size(); ++l)
    if (fs_distance(path.front()[l], e.base[l]) > 1e-10) throw std::invalid_argument("path does not start at the base");
  cplx v = e.value * chart_frame(e, path.front());
  for (std::size_t k = 0; k + 1 < path.size(); ++k)
    for (std::size_t l = 0; l < e.base.size(); ++l) {
      cplx c = path[k][l].dot(path[k + 1][l]);
      v *= unit_phase_power(c, e.a[l]);
    }
  BundleElement out = e;
  out.base.clear();
  for (const CVec& z : path.back()) out.base.push_back(z / z.norm());
  out.value = v / chart_frame(out, out.base);
  return out;
}

cplx loop_holonomy(const std::vector<std::vector<CVec>>& loop, const IVec& a) {
  cplx h(1.0, 0.0);
  const std::size_t N = loop.size();
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t l = 0; l < a.size(); ++l) {
      cplx c = loop[k][l].dot(loop[(k + 1) % N][l]);
      h *= unit_phase_power(c, a[l]);
    }
  return h;
}

}  // namespace gcq
