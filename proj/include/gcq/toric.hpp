#pragma once

#include <functional>
#include <optional>
#include <string>

#include "gcq/polytope.hpp"
#include "gcq/quadrature.hpp"

namespace gcq {

// Value, gradient and Hessian callbacks of a smooth function.
struct SmoothFunction {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
  std::function<Mat(const Vec&)> hess;
};

/**
 * The term nu(iota^* x): a strictly convex nu on the image of iota^*.
 *
 * iota^* is an integer l x n matrix (identity when there is no subtorus).
 * For the quadratic kind nu(p) = p^T A p / 2 the Hessian bounds are exact;
 * otherwise they must be supplied.
 */
class ConvexDeformation {
 public:
  ConvexDeformation(Eigen::MatrixXi iota_star, SmoothFunction nu, double hess_min, double hess_max,
                    std::string kind = "custom", Mat matrix = {});
  static ConvexDeformation quadratic(const Eigen::MatrixXi& iota_star, const Mat& A);
  static ConvexDeformation identity_quadratic(int n);

  const Eigen::MatrixXi& iota_star() const { return iota_star_; }
  const Mat& iota_star_d() const { return iota_d_; }
  const std::string& kind() const { return kind_; }
  const Mat& matrix() const { return matrix_; }
  int source_dim() const { return static_cast<int>(iota_star_.cols()); }
  int image_dim() const { return static_cast<int>(iota_star_.rows()); }

  // nu on the image side.
  double nu(const Vec& p) const { return nu_.value(p); }
  Vec nu_grad(const Vec& p) const { return nu_.grad(p); }
  Mat nu_hess(const Vec& p) const { return nu_.hess(p); }

  // nu o iota^* on the source side.
  double value(const Vec& x) const;
  Vec grad(const Vec& x) const;
  Mat hess(const Vec& x) const;

  Vec image(const Vec& x) const { return iota_d_ * x; }

  double hess_min() const { return hess_min_; }
  double hess_max() const { return hess_max_; }
  // Sharp constants of c_lo |u|^2 <= alpha - alpha(center) <= c_hi |u|^2.
  double growth_lower() const { return 0.5 * hess_min_; }
  double growth_upper() const { return 0.5 * hess_max_; }

 private:
  Eigen::MatrixXi iota_star_;
  Mat iota_d_;
  SmoothFunction nu_;
  double hess_min_, hess_max_;
  std::string kind_;
  Mat matrix_;
};

/**
 * g_s = g_can + base_correction + s * nu(iota^* x) on a Delzant polytope.
 *
 * The linear part of g_can is taken to be zero.
 */
class SymplecticPotential {
 public:
  explicit SymplecticPotential(DelzantPolytope P, double s = 0.0, std::optional<ConvexDeformation> deformer = {},
                               std::optional<SmoothFunction> base_correction = {});

  const DelzantPolytope& polytope() const { return P_; }
  double s() const { return s_; }
  const ConvexDeformation& deformer() const { return deformer_; }
  bool has_base_correction() const { return base_.has_value(); }
  const Vec& center() const { return center_; }
  int dim() const { return P_.dim(); }

  // Same potential with a different s.
  SymplecticPotential with_s(double s) const;

  double value(const Vec& x) const;
  Vec grad(const Vec& x) const;
  Mat hess(const Vec& x) const;

  // 2pi [b - <x - m, grad b>] for the base correction b (0 without one).
  double base_log_term(const Vec& x, const Vec& m) const;

 private:
  DelzantPolytope P_;
  double s_;
  ConvexDeformation deformer_;
  std::optional<SmoothFunction> base_;
  Vec center_;
};

double g_can_value(const DelzantPolytope& P, const Vec& x);
Vec g_can_grad(const DelzantPolytope& P, const Vec& x);
Mat g_can_hess(const DelzantPolytope& P, const Vec& x);

struct SymplecticCoord {
  Vec x;
  Vec theta;
};

// w_i = exp(2 pi (dg/dx_i + i theta_i)).
CVec moment_to_complex(const SymplecticPotential& g, const SymplecticCoord& c);
// log|w_i| / 2 pi = dg/dx_i; the overflow-free half of the forward map.
Vec moment_to_log_modulus(const SymplecticPotential& g, const Vec& x);

struct NewtonOptions {
  int max_iterations = 100;
  double tolerance = 1e-12;
};
struct NewtonReport {
  int iterations = 0;
  double residual = 0.0;
};

// Solve grad g(x) = y by damped Newton from the barycenter.
Vec solve_gradient(const SymplecticPotential& g, const Vec& y, const NewtonOptions& opt = {},
                   NewtonReport* report = nullptr);
SymplecticCoord complex_to_moment(const SymplecticPotential& g, const CVec& w, const NewtonOptions& opt = {},
                                  NewtonReport* report = nullptr);

// prod_j z_j^{l_j(m)} on homogeneous coordinates (one per facet).
cplx sigma_m_complex(const DelzantPolytope& P, const IVec& m, const CVec& z);
// prod_i w_i^{m_i} relative to the trivialization over the open orbit.
cplx sigma_m_monomial(const IVec& m, const CVec& w);

// alpha_m(x) = <x - m, grad(nu o iota^*)(x)> - nu(iota^* x).
double alpha_m(const ConvexDeformation& nu, const Vec& m, const Vec& x);
// log |varsigma^m|(x): the s-independent part of the section density.
double log_varsigma(const SymplecticPotential& g, const Vec& m, const Vec& x);
// log |chi_s^* sigma^m|(x) = 2pi [g_s - <x - m, grad g_s>] in closed form.
double section_log_density(const SymplecticPotential& g, const Vec& m, const Vec& x);
// Same quantity evaluated naively from value and gradient (interior only).
double section_log_density_direct(const SymplecticPotential& g, const Vec& m, const Vec& x);

struct QuadratureOptions {
  GridSpec grid;
  double rel_tolerance = 1e-6;
  int max_refinements = 12;
};
struct L1Norm {
  double log_norm = 0.0;
  double rel_error = 0.0;  // Richardson estimate from the last two levels
  int cells = 0;
  std::size_t nodes = 0;
};
// log of the L1 norm with the angle volume normalized to 1.
L1Norm l1_norm(const SymplecticPotential& g, const IVec& m, const QuadratureOptions& opt = {});

// exp(2 pi i x_i) around the theta_i circle, and its k-fold loop.
cplx holonomy(const Vec& x, int i);
cplx holonomy(const Vec& x, int i, int k);
bool bohr_sommerfeld_test(const Vec& x, double tol = 1e-9);

}  // namespace gcq
