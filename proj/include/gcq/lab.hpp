#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gcq/flag.hpp"
#include "gcq/flow.hpp"
#include "gcq/polytope.hpp"
#include "gcq/toric.hpp"

namespace gcq {

// ---------------------------------------------------------------- threads

// Calls fn(i) for i in [0, n) on up to jobs threads; jobs <= 1 runs inline.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// ------------------------------------------------------- toric concentration

struct TestFunction {
  std::string name;
  std::function<double(const Vec&)> f;
};

struct ConcentrationOptions {
  double eps = 0.3;
  GridSpec grid;                  // base grid; a focus window is added per s
  double rel_tolerance = 1e-6;    // on the total mass
  double outside_tolerance = 1e-4;  // on the outside mass
  int max_refinements = 8;
  bool auto_focus = true;
};

struct ConcentrationCell {
  IVec m;
  double s = 0.0;
  double log_norm = 0.0;
  double outside_mass = 0.0;
  double log_outside_mass = 0.0;
  double sup_outside = 0.0;       // max of the normalized density outside the ball
  double log_sup_outside = 0.0;
  double log_bound = 0.0;         // analytic bound at the fitted radius
  double fitted_r = 0.0;
  std::vector<double> pairings;   // one per test function
  double rel_error = 0.0;
  std::size_t nodes = 0;
};

// Normalized density |sigma^m_s| / ||sigma^m_s||_1 analysed outside the
// eps-ball around iota^* m.
ConcentrationCell toric_concentration(const SymplecticPotential& g, const IVec& m, const ConcentrationOptions& opt,
                                      const std::vector<TestFunction>& phis = {});
double concentration_sup(const SymplecticPotential& g, const IVec& m, const ConcentrationOptions& opt);
double delta_pairing(const SymplecticPotential& g, const IVec& m, const TestFunction& phi,
                     const ConcentrationOptions& opt = {});

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
SlopeFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Measured at s_large: the outside mass and the mass within eps of the
// boundary both fall below 1e-3, and the mean of x lies within eps of m.
bool concentrates(const SymplecticPotential& g, const IVec& m, double s_large, const ConcentrationOptions& opt);

// ----------------------------------------------------------- lattice tools

struct SmithForm {
  IMat U, D, V;  // U * A * V = D, U and V unimodular
  int rank = 0;
};
SmithForm smith_normal_form(const IMat& A);
// Integer basis of ker A (columns).
IMat kernel_basis(const IMat& A);
// Integer x with A x = c, if one exists.
std::optional<IVec> integer_lift(const IMat& A, const IVec& c);
// A maps Z^n onto Z^l.
bool lattice_surjective(const IMat& A);

// --------------------------------------------------- GC torus inside T_P

/**
 * The n = 3 Gelfand-Cetlin torus inside the torus of P^2 x P^2.
 *
 * Coordinates on Delta_P are x = (x_q2, x_q3, x_q13, x_q23); iota^* maps them
 * to c-coordinates on the GC side, and i(lambda) = A lambda + b sends GC
 * coordinates (lambda_1^1, lambda_2^1, lambda_2^2) to c-coordinates.
 */
struct GCEmbedding {
  IVec a;
  Eigen::MatrixXi iota_star;   // 3 x 4
  IVec binomial;               // generator of ker iota^*
  Eigen::MatrixXi A;           // 3 x 3, unimodular
  IVec b;
  DelzantPolytope delta_p;     // Delta_P
  DelzantPolytope delta_gc;    // Delta_GC
  DelzantPolytope delta_c;     // i(Delta_GC)
  SmithForm snf;               // of iota^*; V's columns are the adapted basis p'
  std::shared_ptr<const SymplecticPotential> g0;  // g_can on Delta_P

  Vec to_c(const Vec& lambda) const;
  Vec from_c(const Vec& c) const;
  IVec to_c(const IVec& lambda) const;
  Vec iota_star_of(const Vec& x) const;
};

GCEmbedding gc_embedding(const IVec& a);

// Moment map of the ambient torus at a point of the family.
Vec torus_moment(const FamilyPoint& x, const IVec& a);

struct SliceReport {
  int iterations = 0;
  double residual = 0.0;
};

// Point of Delta_P over c (in c-coordinates) on the real locus of V_0:
// iota^* x = c and grad g_0 orthogonal to ker iota^*.
Vec subvariety_slice(const GCEmbedding& E, const Vec& c, SliceReport* report = nullptr);

// Point of V_0 over c with GC angles phi (theta = iota phi on T_P).
FamilyPoint v0_point(const GCEmbedding& E, const Vec& c, const Vec& phi);

// max |sigma^m - sigma^m'| / max(1, |sigma^m|) over V_0 points sampled from
// the torus parametrization; throws if a sample is off V_0 by more than 1e-10.
double section_equality_on_V(const GCEmbedding& E, const IVec& m, const IVec& m2, int samples, std::uint64_t seed);

// ---------------------------------------------------------------- schedules

struct Schedule {
  enum class Kind { Default, Adaptive } kind = Kind::Default;
  double rate = 5.0;              // t = exp(-s / rate) for the default policy
  // Adaptive policy: knots t_k at integer s = k.
  std::vector<double> knots;
  std::vector<bool> knot_met;

  double operator()(double s) const;
};

Schedule default_schedule(double rate = 5.0);
// Halve t on each window [k, k+1] until discrepancy(t) <= 1 / (k + 2),
// starting from min(t_{k-1}, default(k)); knots below t_min are reported unmet.
Schedule adaptive_schedule(double s_max, const std::function<double(double)>& discrepancy, double t_min = 1e-8,
                           double rate = 5.0);

// ------------------------------------------------------ flow diagnostics

// t -> max projective distance between sampled V_0 points and their flows to
// V_t; the default discrepancy of the adaptive schedule.
std::function<double(double)> v0_flow_discrepancy(const GCEmbedding& E, int samples, std::uint64_t seed,
                                                  double h);

// Distance in P between x in V_t and its image under the flow to t = 0.
double phi_approx_distance(const Family3& fam, const FamilyPoint& x, double h);

struct MomentCheck {
  double t_small = 0.0;
  double max_discrepancy = 0.0;
  std::vector<double> discrepancies;
  int failures = 0;
};
// Flows random flags from t = 1 to t_small and compares i(gc_map) at the
// start with iota^* of the torus moment at the end.
MomentCheck gc_vs_torus_moment_check(const IVec& a, double t_small, int samples, std::uint64_t seed, double h,
                                     int jobs = 1);

// ------------------------------------------------------ combined experiment

struct CombinedConfig {
  IVec a{2, 2};
  IVec m{2, 3, 1};            // GC lattice point (lambda_1^1, lambda_2^1, lambda_2^2)
  Mat nu_matrix;              // nu(c) = c^T A c / 2 on T_GC moment coordinates; empty means identity
  std::vector<double> s_grid{0, 5, 10, 20, 40};
  double eps = 0.3;
  Schedule schedule = default_schedule();
  int cells = 6;              // coarse cells per coordinate of Delta_c
  double focus_half_width = 0.6;
  double focus_spacing = 0.1;   // upper bound on the spacing around i(m)
  double resolution = 1.5;      // nodes per min(Gaussian width, tail decay length)
  int angles = 2;             // angle samples per GC circle
  double h = 1e-2;            // flow step
  int jobs = 1;
  std::uint64_t seed = 1;
};

struct CombinedCell {
  double s = 0.0;
  double t = 0.0;
  double log_norm = 0.0;
  double outside_mass = 0.0;
  double toric_outside_mass = 0.0;  // same s, no flow (t = 0)
  double pairing_one = 0.0;
  std::vector<double> pairing_c;    // <c_k, tau>
  int failed_flows = 0;
  double transport_norm_drift = 0.0;  // bundle-frame spot check, <= 10 points
  std::size_t nodes = 0;
};

struct CombinedReport {
  std::vector<CombinedCell> cells;
  IVec c_m;                          // i(m)
  IVec lift;                        // lift of i(m) to Z^4 used for the ambient section
  bool strictly_decreasing = false;
};

CombinedReport combined_experiment(const CombinedConfig& cfg);

}  // namespace gcq
