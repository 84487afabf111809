#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gcq/common.hpp"

namespace gcq {

/** One half-space <p, normal> + offset >= 0 with a primitive integer normal. */
struct Facet {
  IVec normal;
  long long offset = 0;
};

enum class DelzantCheck { Verify, Skip };

/**
 * Facet-presented lattice polytope {p : <p, r_j> + lambda_j >= 0 for all j}.
 *
 * Construction validates primitivity, boundedness and a nonempty interior.
 * The vertex unimodularity test is run when requested; for Gelfand-Cetlin
 * polytopes it is skipped (they have non-simple vertices) and the reason is
 * kept in delzant_note().
 */
class DelzantPolytope {
 public:
  DelzantPolytope(int dim, std::vector<Facet> facets, std::vector<std::string> labels = {},
                  DelzantCheck check = DelzantCheck::Verify, std::string skip_reason = {});

  int dim() const { return dim_; }
  std::size_t num_facets() const { return facets_.size(); }
  const std::vector<Facet>& facets() const { return facets_; }
  const std::vector<std::string>& labels() const { return labels_; }
  bool delzant_verified() const { return delzant_verified_; }
  const std::string& delzant_note() const { return delzant_note_; }

  // Facet normals as rows, offsets as a vector.
  const Mat& normals() const { return normals_; }
  const Vec& offsets() const { return offsets_; }

  // l_j(p) = <p, r_j> + lambda_j, j zero-based.
  double support_value(std::size_t j, const Vec& p) const;
  long long support_value(std::size_t j, const IVec& p) const;
  Vec support_values(const Vec& p) const;

  bool contains(const Vec& p, bool strict = false, double tol = 0.0) const;
  bool contains(const IVec& p, bool strict = false) const;

  // A strictly interior point (recursive midpoints of the projected ranges).
  Vec interior_point() const;

  // Vertices (exact rational enumeration, returned as doubles), sorted.
  std::vector<Vec> vertices() const;

  // Average of the vertices.
  Vec barycenter() const;

 private:
  int dim_;
  std::vector<Facet> facets_;
  std::vector<std::string> labels_;
  bool delzant_verified_ = false;
  std::string delzant_note_;
  Mat normals_;
  Vec offsets_;
};

// Exact result of the vertex unimodularity test.
struct DelzantReport {
  bool simple = true;
  bool unimodular = true;
  std::size_t vertices = 0;
  std::string message;
  bool ok() const { return simple && unimodular; }
};
DelzantReport check_delzant(const DelzantPolytope& P);

// Sorted integer points of P.
std::vector<IVec> lattice_points(const DelzantPolytope& P);

// lambda_i = a_i + ... + a_{n-1}, lambda_n = 0.
IVec weight_from_a(const IVec& a);

DelzantPolytope gc_polytope(int n, const IVec& a);
// Row-major (l, j) index of GC variable lambda_l^j, 1 <= j <= l <= n-1.
int gc_index(int l, int j);
std::string gc_label(int l, int j);

long long weyl_dim(const IVec& lambda);

DelzantPolytope interval(long long lo, long long hi);
// a * standard k-simplex: x_i >= 0, a - sum x_i >= 0.
DelzantPolytope simplex(int k, long long a, const std::string& prefix = "x");
DelzantPolytope product_polytope(const std::vector<DelzantPolytope>& Ps);
// Moment polytope of prod_l P(wedge^l C^n) with O(a_l): prod_l a_l * simplex.
DelzantPolytope pluecker_polytope(int n, const IVec& a);

// {c : A^{-1}(c - b) in P} for unimodular integer A.
DelzantPolytope affine_image(const DelzantPolytope& P, const Eigen::MatrixXi& A, const IVec& b,
                             std::vector<std::string> labels = {});

/**
 * Fourier-Motzkin projections of a polytope onto its leading coordinates.
 *
 * level(k) holds inequalities in x_0..x_k whose x_k coefficient is nonzero;
 * range(k, prefix) gives the admissible interval for x_k once x_0..x_{k-1}
 * are fixed.
 */
class BoundSystem {
 public:
  struct Row {
    Vec coeff;  // length k+1
    double offset;
  };
  explicit BoundSystem(const DelzantPolytope& P);
  int dim() const { return static_cast<int>(levels_.size()); }
  std::pair<double, double> range(int k, const double* prefix) const;
  const std::vector<Row>& level(int k) const { return levels_[k]; }

 private:
  std::vector<std::vector<Row>> levels_;
};

}  // namespace gcq
