#pragma once

#include <map>
#include <vector>

#include "gcq/common.hpp"

namespace gcq {

using IndexSet = std::vector<int>;  // increasing, 1-based
using IMat = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

// Plücker (or deformed Plücker) coordinates; level l holds the l-subsets.
struct PlueckerCoords {
  int n = 0;
  std::vector<std::map<IndexSet, cplx>> levels;  // levels[l - 1]

  const cplx& at(const IndexSet& I) const;
  std::size_t size(int l) const { return levels.at(l - 1).size(); }
};

// "13" for {1,3}.
std::string index_string(const IndexSet& I);
IndexSet parse_index(const std::string& s);
// All increasing l-subsets of {1..n} in lexicographic order.
std::vector<IndexSet> subsets(int n, int l);

// omega_ij = 3^(i-j-1) for i > j, else 0.
IMat weight_matrix(int n);

PlueckerCoords pluecker(const CMat& V);
// q_I(V,t) with integer t-exponents per Leibniz term; exact at t = 0 and
// bitwise equal to pluecker(V) at t = 1.
PlueckerCoords deformed_pluecker(const CMat& V, cplx t);

// q_1 q_23 - q_2 q_13 + t q_3 q_12 for n = 3.
cplx pluecker_relation_residual(const PlueckerCoords& q, cplx t);

// H = sum_l a_l P_l with P_l the projection onto the first l columns of V.
CMat moment_matrix(const CMat& V, const IVec& a);

// Triangular array of GC values; rows[l-1] has l entries, descending.
struct GCValue {
  std::vector<std::vector<double>> rows;  // l = 1..n
  // Rows 1..n-1 in row-major order (the coordinates of the GC polytope).
  Vec coordinates() const;
};

GCValue gc_map(const CMat& V, const IVec& a);
// Descending eigenvalues of the upper-left l x l blocks of a Hermitian H.
GCValue gc_values(const CMat& H);

// Standard complex Gaussian entries; resampled while |det| < 1e-6.
CMat random_flag(std::uint64_t seed, int n);

// Throws std::invalid_argument when |det V| <= 1e-12 or V is not square.
void check_flag(const CMat& V);

}  // namespace gcq
