#pragma once

#include <vector>

#include "gcq/common.hpp"

namespace gcq {

using R14 = Eigen::Matrix<double, 14, 1>;
using C3 = Eigen::Vector3cd;

/**
 * Point of the n = 3 family q_1 q_23 - q_2 q_13 + t q_3 q_12 = 0 in
 * P^2 x P^2 x C.  z1 = (q_1, q_2, q_3), z2 = (q_12, q_13, q_23).
 */
struct FamilyPoint {
  C3 z1 = C3::Zero();
  C3 z2 = C3::Zero();
  cplx t = 0.0;

  // Re/Im interleaved over (z1, z2, t).
  R14 to_real() const;
  static FamilyPoint from_real(const R14& x);
  // Each factor scaled to unit norm.
  FamilyPoint normalized() const;
};

// Fubini-Study distance summed over the two factors.
double projective_distance(const FamilyPoint& x, const FamilyPoint& y);

struct TangentFrame {
  FamilyPoint base;
  std::vector<R14> vectors;
  double min_singular_value = 0.0;  // of the whitened constraint matrix
};

struct RetractionReport {
  int iterations = 0;
  double residual = 0.0;
};

struct StepLog {
  int step = 0;
  cplx t;
  double residual = 0.0;      // |F| after retraction
  double f_deviation = 0.0;   // |t - (t_start - elapsed)|
  double z_re_f = 0.0;        // Z(Re f) at the new point
  double z_im_f = 0.0;        // Z(Im f) at the new point
};

struct FlowResult {
  FamilyPoint end;
  int steps = 0;
  double max_residual = 0.0;
  double max_f_deviation = 0.0;
  double max_z_re_dev = 0.0;  // max |Z(Re f) + 1|
  double max_z_im = 0.0;      // max |Z(Im f)|
  std::vector<StepLog> log;   // filled when requested
};

struct FrameTransport {
  TangentFrame frame;
  double max_pairing_drift = 0.0;  // entrywise, over the whole path
};

/**
 * The family with ambient metric sum_l (a_l / pi) FS_l + |dt|^2, all scaled
 * by metric_scale.  Tangent vectors at a point are horizontal lifts: complex
 * orthogonal to z_l in each factor.
 */
class Family3 {
 public:
  explicit Family3(IVec a = {1, 1}, double metric_scale = 1.0);

  const IVec& a() const { return a_; }
  double metric_scale() const { return scale_; }
  const R14& weights() const { return w_; }

  cplx F(const FamilyPoint& x) const;
  // dF/dz1, dF/dz2, dF/dt.
  void dF(const FamilyPoint& x, C3& d1, C3& d2, cplx& dt) const;

  // Point of V_t from a flag through its deformed Plücker coordinates.
  FamilyPoint from_flag(const CMat& V, cplx t) const;

  // Real constraint rows: horizontality (4), dF (2), and v_t = 0 (2) when fiber.
  Eigen::Matrix<double, Eigen::Dynamic, 14> constraints(const FamilyPoint& x, bool fiber) const;

  TangentFrame tangent_space(const FamilyPoint& x, bool fiber = false) const;
  // G-orthogonal projection onto the (fiber) tangent space at a unit point.
  R14 project(const FamilyPoint& x, const R14& v, bool fiber) const;

  double metric(const R14& u, const R14& v) const;
  // -Im h(u, v) over the projective factors.
  double omega(const R14& u, const R14& v) const;

  // Z = -grad(Re t) / |grad(Re t)|^2 at a unit point.
  R14 grad_ham_field(const FamilyPoint& x) const;
  // Equivariant extension to non-unit representatives.
  R14 lifted_field(const R14& x) const;
  // Linearization of the lifted field along u, by central differences.
  R14 field_jvp(const R14& x, const R14& u) const;

  FamilyPoint retract(const FamilyPoint& x, RetractionReport* report = nullptr) const;
  // One RK4 step of size h along Z (h < 0 flows backwards), then retraction.
  FamilyPoint step(const FamilyPoint& x, double h) const;

  // Flow by tau (Re t decreases by tau) with about |tau| / h steps.
  FlowResult flow(const FamilyPoint& x, double tau, double h, bool keep_log = false) const;
  // Same trajectory, returning every point (start included).
  std::vector<FamilyPoint> trajectory(const FamilyPoint& x, double tau, double h) const;

  // Heun transport of fiber vectors by the linearized flow, re-projected each step.
  FrameTransport transport_frame(const FamilyPoint& x, const std::vector<R14>& frame, double tau,
                                 double h) const;

  double regularity_guard = 1e-8;
  double retraction_tolerance = 1e-12;
  int retraction_max_iterations = 20;

 private:
  IVec a_;
  double scale_;
  R14 w_;
};

// Element of O(a_1, a_2, ...) over a product of projective spaces, stored
// relative to the holomorphic frame prod_l (z_l[chart_l])^{a_l}.
struct BundleElement {
  IVec a;
  std::vector<CVec> base;
  std::vector<int> chart;
  cplx value = 0.0;
};

// Element whose value against the unit-representative frame is unitary_value.
BundleElement make_bundle_element(const std::vector<CVec>& base, const IVec& a, cplx unitary_value);
// Fiber norm from the Hermitian metric.
double bundle_norm(const BundleElement& e);
// Parallel transport along the piecewise geodesic through the given points;
// path.front() must be the base of e.
BundleElement parallel_transport(const BundleElement& e, const std::vector<std::vector<CVec>>& path);
// Holonomy of the closed polygon through the given points.
cplx loop_holonomy(const std::vector<std::vector<CVec>>& loop, const IVec& a);

std::vector<CVec> factors(const FamilyPoint& x);

}  // namespace gcq
